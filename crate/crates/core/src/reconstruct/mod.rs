//! Recovering a complete noise profile from sparse lattice samples.
//!
//! Four methods are available: a least-squares plane ([`linear`]), nearest
//! neighbour under a fitted anisotropic metric ([`nni`]), Gaussian-process
//! interpolation ([`gp`]) and l1 minimisation in the DCT domain ([`l1`]).

pub mod gp;
pub mod l1;
pub mod linear;
pub mod nni;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridref::{Lattice, NoiseProfile};

pub use gp::{GpConfig, GpModel};
pub use l1::L1Config;
pub use linear::LinearModel;
pub use nni::NniMetric;

/// One observation: spatial cell `g`, temporal cell `t`, level `x` in dBA.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub g: usize,
    pub t: usize,
    pub x: f64,
}

/// Observations on a lattice, kept sorted by vector index.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    lattice: Lattice,
    entries: Vec<Sample>,
}

impl SampleSet {
    /// Validates indices, values and uniqueness. The set may be empty (an
    /// empty campaign); the reconstruction methods reject that case.
    pub fn new(lattice: Lattice, mut entries: Vec<Sample>) -> Result<Self> {
        for s in &entries {
            if s.g >= lattice.n_s || s.t >= lattice.n_t {
                return Err(Error::OutOfRange(format!("cell ({}, {}) outside {}x{} lattice", s.g, s.t, lattice.n_s, lattice.n_t)));
            }
            if !s.x.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite level at ({}, {})", s.g, s.t)));
            }
        }
        entries.sort_by_key(|s| lattice.index(s.g, s.t));
        if let Some(w) = entries.windows(2).find(|w| w[0].g == w[1].g && w[0].t == w[1].t) {
            return Err(Error::InvalidInput(format!("duplicate sample at ({}, {})", w[0].g, w[0].t)));
        }
        Ok(SampleSet { lattice, entries })
    }

    /// The defined cells of a profile.
    pub fn from_profile(profile: &NoiseProfile) -> Self {
        let lattice = profile.lattice().clone();
        let entries = profile
            .cells()
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                c.map(|x| {
                    let (g, t) = lattice.cell(i);
                    Sample { g, t, x }
                })
            })
            .collect();
        SampleSet { lattice, entries }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn entries(&self) -> &[Sample] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn missing_fraction(&self) -> f64 {
        1.0 - self.entries.len() as f64 / self.lattice.len() as f64
    }

    /// Sparse profile with only the observed cells defined.
    pub fn to_profile(&self) -> NoiseProfile {
        let mut p = NoiseProfile::empty(self.lattice.clone());
        for s in &self.entries {
            p.set(s.g, s.t, Some(s.x));
        }
        p
    }

    /// Observed flag per cell in vector order.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.lattice.len()];
        for s in &self.entries {
            m[self.lattice.index(s.g, s.t)] = true;
        }
        m
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.entries {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `g,t,x` rows (0-based cell indices).
    pub fn read_csv<R: std::io::Read>(input: R, lattice: Lattice) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<Sample>, _>>()?;
        SampleSet::new(lattice, entries)
    }

    fn require(&self, needed: usize) -> Result<()> {
        if self.entries.len() < needed {
            return Err(Error::InsufficientSamples { needed, got: self.entries.len() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    L1,
    Li,
    Nni,
    Gpi,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::L1, Method::Li, Method::Nni, Method::Gpi];

    pub fn name(self) -> &'static str {
        match self {
            Method::L1 => "l1",
            Method::Li => "li",
            Method::Nni => "nni",
            Method::Gpi => "gpi",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Method::L1),
            "li" | "linear" => Ok(Method::Li),
            "nni" | "nn" => Ok(Method::Nni),
            "gpi" | "gp" => Ok(Method::Gpi),
            _ => Err(Error::InvalidInput(format!("unknown method {s:?} (expected l1, li, nni or gpi)"))),
        }
    }
}

/// Solver and model details reported with a reconstruction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<NniMetric>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primal_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    pub profile: NoiseProfile,
    pub method: Method,
    /// Posterior standard deviation per cell (GPI only).
    pub std: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    #[serde(default)]
    pub l1: L1Config,
    #[serde(default)]
    pub gp: GpConfig,
}

/// Runs one method with its default fitting procedure.
pub fn reconstruct(samples: &SampleSet, method: Method, config: &ReconConfig) -> Result<ReconResult> {
    match method {
        Method::L1 => l1::l1_dct(samples, &config.l1),
        Method::Li => linear::linear_fit_predict(samples),
        Method::Nni => {
            samples.require(1)?;
            if samples.len() < nni::MIN_FIT_SAMPLES {
                let mut r = nni::nni_predict(samples, &NniMetric::isotropic())?;
                r.diagnostics.notes.push(format!("fewer than {} samples, isotropic metric used", nni::MIN_FIT_SAMPLES));
                Ok(r)
            } else {
                let m = nni::nni_fit(samples)?;
                nni::nni_predict(samples, &m)
            }
        }
        Method::Gpi => gp::gp_fit_predict(samples, &config.gp),
    }
}

/// Root-mean-square difference over all cells.
pub fn rms_error(recon: &NoiseProfile, truth: &NoiseProfile) -> Result<f64> {
    if !recon.lattice().same_shape(truth.lattice()) {
        return Err(Error::LatticeMismatch);
    }
    let a = recon.dense()?;
    let b = truth.dense()?;
    let ss: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Fills the unobserved cells of `samples` from `fill(vector_index)`.
pub(crate) fn complete_profile(samples: &SampleSet, mut fill: impl FnMut(usize) -> f64) -> Result<NoiseProfile> {
    let lattice = samples.lattice().clone();
    let mut cells: Vec<Option<f64>> = vec![None; lattice.len()];
    for s in samples.entries() {
        cells[lattice.index(s.g, s.t)] = Some(s.x);
    }
    for (i, c) in cells.iter_mut().enumerate() {
        if c.is_none() {
            *c = Some(fill(i));
        }
    }
    NoiseProfile::devectorize(lattice, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_s: usize, n_t: usize) -> Lattice {
        Lattice::abstract_grid(n_s, n_t)
    }

    #[test]
    fn sample_set_validation() {
        let l = grid(3, 2);
        assert!(SampleSet::new(l.clone(), vec![Sample { g: 3, t: 0, x: 1.0 }]).is_err());
        assert!(SampleSet::new(l.clone(), vec![Sample { g: 0, t: 0, x: f64::NAN }]).is_err());
        let dup = vec![Sample { g: 1, t: 1, x: 1.0 }, Sample { g: 1, t: 1, x: 2.0 }];
        assert!(SampleSet::new(l.clone(), dup).is_err());
        let s = SampleSet::new(l, vec![Sample { g: 0, t: 1, x: 1.0 }, Sample { g: 2, t: 0, x: 2.0 }]).unwrap();
        assert_eq!(s.entries()[0], Sample { g: 2, t: 0, x: 2.0 });
        assert_eq!(s.mask(), vec![false, false, true, true, false, false]);
    }

    #[test]
    fn rms_error_examples() {
        let l = grid(2, 2);
        let truth = NoiseProfile::from_dense(l.clone(), vec![60.0, 61.0, 62.0, 63.0]).unwrap();
        assert_eq!(rms_error(&truth, &truth).unwrap(), 0.0);
        let shifted = NoiseProfile::from_dense(l.clone(), vec![63.0, 64.0, 65.0, 66.0]).unwrap();
        assert!((rms_error(&shifted, &truth).unwrap() - 3.0).abs() < 1e-12);
        let other = NoiseProfile::from_dense(l, vec![61.0, 61.0, 60.0, 63.0]).unwrap();
        // diffs 1, 0, -2, 0
        assert!((rms_error(&other, &truth).unwrap() - (5.0f64 / 4.0).sqrt()).abs() < 1e-12);
        let wrong = NoiseProfile::from_dense(grid(4, 1), vec![0.0; 4]).unwrap();
        assert!(matches!(rms_error(&wrong, &truth), Err(Error::LatticeMismatch)));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("kriging".parse::<Method>().is_err());
    }

    #[test]
    fn every_method_is_identity_without_missing_cells() {
        let l = grid(4, 3);
        let values: Vec<f64> = (0..12).map(|i| 60.0 + ((i * 7) % 5) as f64).collect();
        let truth = NoiseProfile::from_dense(l, values).unwrap();
        let samples = SampleSet::from_profile(&truth);
        for m in Method::ALL {
            let r = reconstruct(&samples, m, &ReconConfig::default()).unwrap();
            assert!(rms_error(&r.profile, &truth).unwrap() < 1e-6, "{m}");
        }
    }

    #[test]
    fn samples_csv_round_trip() {
        let l = grid(3, 3);
        let s = SampleSet::new(l.clone(), vec![Sample { g: 1, t: 2, x: 61.5 }, Sample { g: 0, t: 0, x: 60.0 }]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("g,t,x\n0,0,60.0\n"));
        assert_eq!(SampleSet::read_csv(&buf[..], l).unwrap(), s);
    }
}
