use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::utm::{self, Utm};
use crate::error::{Error, Result};

const BANDS: &[u8] = b"CDEFGHJKLMNPQRSTUVWX";
const COLUMN_SETS: [&[u8]; 3] = [b"ABCDEFGH", b"JKLMNPQR", b"STUVWXYZ"];
const ROWS: &[u8] = b"ABCDEFGHJKLMNPQRSTUV";
const SQUARE: f64 = 100_000.0;
const ROW_CYCLE: f64 = 2_000_000.0;

/// Size of a grid square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Precision {
    M1,
    M10,
    M100,
}

impl Precision {
    pub fn meters(self) -> u32 {
        match self {
            Precision::M1 => 1,
            Precision::M10 => 10,
            Precision::M100 => 100,
        }
    }

    pub fn from_meters(m: u32) -> Result<Self> {
        match m {
            1 => Ok(Precision::M1),
            10 => Ok(Precision::M10),
            100 => Ok(Precision::M100),
            _ => Err(Error::InvalidInput(format!("MGRS precision must be 1, 10 or 100 m, got {m}"))),
        }
    }

    fn digits(self) -> usize {
        match self {
            Precision::M1 => 5,
            Precision::M10 => 4,
            Precision::M100 => 3,
        }
    }

    fn from_digits(d: usize) -> Option<Self> {
        match d {
            5 => Some(Precision::M1),
            4 => Some(Precision::M10),
            3 => Some(Precision::M100),
            _ => None,
        }
    }
}

/// A square of the Military Grid Reference System, e.g. `56JNP0123465432`.
///
/// `easting` and `northing` count whole squares of `precision` inside the
/// 100 km square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MgrsIndex {
    pub zone: u8,
    pub band: char,
    pub square: [char; 2],
    pub easting: u32,
    pub northing: u32,
    pub precision: Precision,
}

fn band_letter(lat: f64) -> char {
    let i = (((lat + 80.0) / 8.0).floor() as i64).clamp(0, 19) as usize;
    BANDS[i] as char
}

fn band_south_lat(band: char) -> Option<f64> {
    BANDS.iter().position(|&b| b as char == band).map(|i| -80.0 + 8.0 * i as f64)
}

fn is_north(band: char) -> bool {
    band >= 'N'
}

impl MgrsIndex {
    /// Truncates a UTM position to its square at `precision`.
    pub fn from_utm(u: &Utm, band: char, precision: Precision) -> Self {
        let col = ((u.easting / SQUARE).floor() as i64).clamp(1, 8) as usize;
        let set = COLUMN_SETS[(u.zone as usize - 1) % 3];
        let row_offset = if u.zone % 2 == 0 { 5 } else { 0 };
        let row = ((u.northing / SQUARE).floor() as i64).rem_euclid(20) as usize;
        let p = precision.meters() as f64;
        let within_e = u.easting.rem_euclid(SQUARE);
        let within_n = u.northing.rem_euclid(SQUARE);
        let max = (SQUARE / p) as u32 - 1;
        MgrsIndex {
            zone: u.zone,
            band,
            square: [set[col - 1] as char, ROWS[(row + row_offset) % 20] as char],
            easting: ((within_e / p).floor() as u32).min(max),
            northing: ((within_n / p).floor() as u32).min(max),
            precision,
        }
    }

    /// UTM coordinates of the south-west corner plus `(fe, fn)` of a square.
    fn utm_at(&self, fe: f64, fnorth: f64) -> Result<Utm> {
        let bad = || Error::MalformedMgrs(self.to_string());
        if !(1..=60).contains(&self.zone) {
            return Err(bad());
        }
        let south_lat = band_south_lat(self.band).ok_or_else(bad)?;
        let set = COLUMN_SETS[(self.zone as usize - 1) % 3];
        let col = set.iter().position(|&c| c as char == self.square[0]).ok_or_else(bad)? + 1;
        let row_offset = if self.zone % 2 == 0 { 5 } else { 0 };
        let row_letter = ROWS.iter().position(|&c| c as char == self.square[1]).ok_or_else(bad)?;
        let row = (row_letter + 20 - row_offset) % 20;
        let p = self.precision.meters() as f64;
        let easting = col as f64 * SQUARE + (self.easting as f64 + fe) * p;
        let in_cycle = row as f64 * SQUARE + (self.northing as f64 + fnorth) * p;

        // Pick the 2000 km cycle that puts the point inside its band: the
        // lowest northing along the band's southern parallel within the zone.
        let north = is_north(self.band);
        let cm = utm::central_meridian(self.zone);
        let min_northing = [-4.5, 0.0, 4.5]
            .iter()
            .map(|d| utm::to_utm_in_zone(south_lat, cm + d, self.zone, north).northing)
            .fold(f64::INFINITY, f64::min)
            - 1_000.0;
        let cycles = ((min_northing - in_cycle) / ROW_CYCLE).ceil().max(0.0);
        Ok(Utm { zone: self.zone, north, easting, northing: in_cycle + cycles * ROW_CYCLE })
    }

    /// UTM coordinates of the square's centre.
    pub fn center_utm(&self) -> Result<Utm> {
        self.utm_at(0.5, 0.5)
    }

    /// UTM coordinates of the square's south-west corner.
    pub fn corner_utm(&self) -> Result<Utm> {
        self.utm_at(0.0, 0.0)
    }
}

impl fmt::Display for MgrsIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.precision.digits();
        write!(
            f,
            "{}{}{}{}{:0w$}{:0w$}",
            self.zone, self.band, self.square[0], self.square[1], self.easting, self.northing
        )
    }
}

impl FromStr for MgrsIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::MalformedMgrs(s.to_string());
        let clean: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_uppercase();
        let zone_len = clean.chars().take_while(|c| c.is_ascii_digit()).count();
        if zone_len == 0 || zone_len > 2 {
            return Err(bad());
        }
        let zone: u8 = clean[..zone_len].parse().map_err(|_| bad())?;
        if !(1..=60).contains(&zone) {
            return Err(bad());
        }
        let rest: Vec<char> = clean[zone_len..].chars().collect();
        if rest.len() < 3 {
            return Err(bad());
        }
        let band = rest[0];
        if band_south_lat(band).is_none() {
            return Err(bad());
        }
        let square = [rest[1], rest[2]];
        let digits: String = rest[3..].iter().collect();
        if !digits.chars().all(|c| c.is_ascii_digit()) || digits.len() % 2 != 0 {
            return Err(bad());
        }
        let precision = Precision::from_digits(digits.len() / 2).ok_or_else(bad)?;
        let half = digits.len() / 2;
        let idx = MgrsIndex {
            zone,
            band,
            square,
            easting: digits[..half].parse().map_err(|_| bad())?,
            northing: digits[half..].parse().map_err(|_| bad())?,
            precision,
        };
        // validates the letters
        idx.corner_utm()?;
        Ok(idx)
    }
}

impl Serialize for MgrsIndex {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MgrsIndex {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// WGS-84 position to the MGRS square containing it.
pub fn latlon_to_mgrs(lat: f64, lon: f64, precision: Precision) -> Result<MgrsIndex> {
    let u = utm::to_utm(lat, lon)?;
    Ok(MgrsIndex::from_utm(&u, band_letter(lat), precision))
}

/// Centre of an MGRS square as (lat, lon).
pub fn mgrs_to_latlon(idx: &MgrsIndex) -> Result<(f64, f64)> {
    Ok(utm::to_latlon(&idx.center_utm()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_format_round_trip() {
        for s in ["56JNP0123465432", "4QFJ1234567890", "31NAA660021", "18SUJ230065"] {
            let idx: MgrsIndex = s.parse().unwrap();
            assert_eq!(idx.to_string(), s);
        }
    }

    #[test]
    fn parse_rejects_malformed() {
        for s in ["", "56", "61JNP0000", "56JNP012", "56INP0000", "56JNP00a0", "56JZZ0000"] {
            assert!(s.parse::<MgrsIndex>().is_err(), "{s}");
        }
    }

    #[test]
    fn nearby_points_share_a_cell() {
        let a = latlon_to_mgrs(-27.612345, 152.951234, Precision::M10).unwrap();
        let corner = a.corner_utm().unwrap();
        // points 3 m and 4 m inside the south-west corner of the cell
        let (lat1, lon1) = utm::to_latlon(&Utm { easting: corner.easting + 3.0, northing: corner.northing + 3.0, ..corner });
        let (lat2, lon2) = utm::to_latlon(&Utm { easting: corner.easting + 4.0, northing: corner.northing + 3.5, ..corner });
        assert_eq!(latlon_to_mgrs(lat1, lon1, Precision::M10).unwrap(), a);
        assert_eq!(latlon_to_mgrs(lat2, lon2, Precision::M10).unwrap(), a);
    }

    #[test]
    fn southern_hemisphere_cycle_resolution() {
        for &(lat, lon) in &[(-27.6, 152.95), (-33.86, 151.21), (-45.9, 170.5), (-79.0, 20.0), (-0.5, 10.0)] {
            let idx = latlon_to_mgrs(lat, lon, Precision::M1).unwrap();
            let (la, lo) = mgrs_to_latlon(&idx).unwrap();
            assert!((la - lat).abs() < 1e-4 && (lo - lon).abs() < 1e-4, "{idx}");
        }
    }
}
