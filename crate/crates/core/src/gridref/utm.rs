//! WGS-84 transverse Mercator (UTM) projection using the sixth-order Krüger
//! series, accurate to well below a millimetre inside a zone.

use crate::error::{Error, Result};

const A: f64 = 6_378_137.0;
const F: f64 = 1.0 / 298.257_223_563;
const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

pub const MIN_LAT: f64 = -80.0;
pub const MAX_LAT: f64 = 84.0;

/// A UTM coordinate. `north` selects the false northing convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Utm {
    pub zone: u8,
    pub north: bool,
    pub easting: f64,
    pub northing: f64,
}

struct Series {
    e: f64,
    rect_a: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

fn series() -> Series {
    let n = F / (2.0 - F);
    let (n2, n3, n4, n5, n6) = (n * n, n.powi(3), n.powi(4), n.powi(5), n.powi(6));
    let rect_a = A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    let alpha = [
        n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0
            + 7891.0 * n6 / 37800.0,
        13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0
            - 1_983_433.0 * n6 / 1_935_360.0,
        61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0 + 167_603.0 * n6 / 181_440.0,
        49561.0 * n4 / 161_280.0 - 179.0 * n5 / 168.0 + 6_601_661.0 * n6 / 7_257_600.0,
        34729.0 * n5 / 80640.0 - 3_418_889.0 * n6 / 1_995_840.0,
        212_378_941.0 * n6 / 319_334_400.0,
    ];
    let beta = [
        n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0
            + 96199.0 * n6 / 604_800.0,
        n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0 - 1_118_711.0 * n6 / 3_870_720.0,
        17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
        4397.0 * n4 / 161_280.0 - 11.0 * n5 / 504.0 - 830_251.0 * n6 / 7_257_600.0,
        4583.0 * n5 / 161_280.0 - 108_847.0 * n6 / 3_991_680.0,
        20_648_693.0 * n6 / 638_668_800.0,
    ];
    Series { e: 2.0 * n.sqrt() / (1.0 + n), rect_a, alpha, beta }
}

/// Standard UTM zone for a position, including the Norway and Svalbard
/// exceptions.
pub fn zone_for(lat: f64, lon: f64) -> u8 {
    let lon = if lon >= 180.0 { lon - 360.0 } else { lon };
    let mut zone = ((lon + 180.0) / 6.0).floor() as i32 + 1;
    if (56.0..64.0).contains(&lat) && (3.0..12.0).contains(&lon) {
        zone = 32;
    }
    if (72.0..=84.0).contains(&lat) && lon >= 0.0 && lon < 42.0 {
        zone = if lon < 9.0 {
            31
        } else if lon < 21.0 {
            33
        } else if lon < 33.0 {
            35
        } else {
            37
        };
    }
    zone.clamp(1, 60) as u8
}

pub fn central_meridian(zone: u8) -> f64 {
    zone as f64 * 6.0 - 183.0
}

fn check_latlon(lat: f64, lon: f64) -> Result<()> {
    if !lat.is_finite() || !lon.is_finite() || lat.abs() > 90.0 || lon.abs() > 180.0 {
        return Err(Error::OutOfRange(format!("({lat}, {lon}) is not a valid position")));
    }
    if !(MIN_LAT..=MAX_LAT).contains(&lat) {
        return Err(Error::OutOfRange(format!("latitude {lat} is outside the UTM range")));
    }
    Ok(())
}

/// Projects into the standard zone for the position.
pub fn to_utm(lat: f64, lon: f64) -> Result<Utm> {
    check_latlon(lat, lon)?;
    Ok(to_utm_in_zone(lat, lon, zone_for(lat, lon), lat >= 0.0))
}

/// Projects into an explicit zone and hemisphere convention (used to keep a
/// whole lattice in one coordinate frame).
pub fn to_utm_in_zone(lat: f64, lon: f64, zone: u8, north: bool) -> Utm {
    let s = series();
    let phi = lat.to_radians();
    let mut dlon = lon - central_meridian(zone);
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let lam = dlon.to_radians();
    let sin_phi = phi.sin();
    let t = (sin_phi.atanh() - s.e * (s.e * sin_phi).atanh()).sinh();
    let xi_p = t.atan2(lam.cos());
    let eta_p = (lam.sin() / (1.0 + t * t).sqrt()).atanh();
    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    let northing = K0 * s.rect_a * xi + if north { 0.0 } else { FALSE_NORTHING_SOUTH };
    Utm { zone, north, easting: FALSE_EASTING + K0 * s.rect_a * eta, northing }
}

pub fn to_latlon(utm: &Utm) -> (f64, f64) {
    let s = series();
    let y = utm.northing - if utm.north { 0.0 } else { FALSE_NORTHING_SOUTH };
    let xi = y / (K0 * s.rect_a);
    let eta = (utm.easting - FALSE_EASTING) / (K0 * s.rect_a);
    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let tau_p = xi_p.sin() / (eta_p.sinh().powi(2) + xi_p.cos().powi(2)).sqrt();
    let lam = eta_p.sinh().atan2(xi_p.cos());
    // Newton iteration for tau = tan(phi)
    let e2 = s.e * s.e;
    let mut tau = tau_p;
    for _ in 0..10 {
        let sigma = (s.e * (s.e * tau / (1.0 + tau * tau).sqrt()).atanh()).sinh();
        let tau_i = tau * (1.0 + sigma * sigma).sqrt() - sigma * (1.0 + tau * tau).sqrt();
        let d = (tau_p - tau_i) / (1.0 + tau_i * tau_i).sqrt() * (1.0 + (1.0 - e2) * tau * tau)
            / ((1.0 - e2) * (1.0 + tau * tau).sqrt());
        tau += d;
        if d.abs() < 1e-14 {
            break;
        }
    }
    (tau.atan().to_degrees(), central_meridian(utm.zone) + lam.to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zones() {
        assert_eq!(zone_for(0.0, -180.0), 1);
        assert_eq!(zone_for(0.0, 179.9), 60);
        assert_eq!(zone_for(-27.5, 153.0), 56);
        assert_eq!(zone_for(60.0, 5.0), 32);
        assert_eq!(zone_for(78.0, 15.0), 33);
        assert_eq!(zone_for(51.5, -0.12), 30);
    }

    #[test]
    fn central_meridian_maps_to_false_easting() {
        let u = to_utm(45.0, 9.0).unwrap();
        assert_eq!(u.zone, 32);
        assert!((u.easting - 500_000.0).abs() < 1e-6);
        // meridian arc length to 45 deg times k0
        assert!((u.northing - 4_982_950.4).abs() < 0.1, "{}", u.northing);
    }

    #[test]
    fn equator_on_central_meridian() {
        let u = to_utm(0.0, 3.0).unwrap();
        assert!((u.easting - 500_000.0).abs() < 1e-6);
        assert!(u.northing.abs() < 1e-6);
    }

    #[test]
    fn round_trip_is_sub_millimetre() {
        for &(lat, lon) in &[(-27.6, 152.95), (33.3, 44.4), (-79.5, -60.0), (83.9, 10.0), (0.1, -0.1)] {
            let u = to_utm(lat, lon).unwrap();
            let (la, lo) = to_latlon(&u);
            assert!((la - lat).abs() < 1e-9 && (lo - lon).abs() < 1e-9, "{lat},{lon}");
        }
    }

    #[test]
    fn rejects_polar() {
        assert!(to_utm(85.0, 0.0).is_err());
        assert!(to_utm(-80.5, 0.0).is_err());
        assert!(to_utm(10.0, 181.0).is_err());
    }
}
