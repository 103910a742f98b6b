//! Plane fit `x = a g + b t + c` by ordinary least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{complete_profile, Diagnostics, Method, ReconResult, SampleSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub uses_g: bool,
    pub uses_t: bool,
    /// RMS of the fit residual over the samples.
    pub residual: f64,
}

impl LinearModel {
    pub fn predict(&self, g: usize, t: usize) -> f64 {
        self.a * g as f64 + self.b * t as f64 + self.c
    }
}

fn design(samples: &SampleSet, uses_g: bool, uses_t: bool) -> DMatrix<f64> {
    let cols = 1 + uses_g as usize + uses_t as usize;
    let e = samples.entries();
    DMatrix::from_fn(e.len(), cols, |i, j| {
        let mut col = j;
        if uses_g {
            if col == 0 {
                return e[i].g as f64;
            }
            col -= 1;
        }
        if uses_t && col == 0 {
            return e[i].t as f64;
        }
        1.0
    })
}

fn full_rank(m: &DMatrix<f64>) -> bool {
    if m.nrows() < m.ncols() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    max > 0.0 && sv.min() > max * 1e-10 * m.nrows() as f64
}

/// Least-squares plane through the samples. A rank-deficient design drops
/// the `t` term, then the `g` term, then both.
pub fn linear_fit(samples: &SampleSet) -> Result<(LinearModel, Vec<String>)> {
    samples.require(1)?;
    let mut notes = Vec::new();
    let y = DVector::from_iterator(samples.len(), samples.entries().iter().map(|s| s.x));
    for (uses_g, uses_t) in [(true, true), (true, false), (false, true), (false, false)] {
        let x = design(samples, uses_g, uses_t);
        if !full_rank(&x) {
            notes.push(format!("design with g={uses_g}, t={uses_t} is rank deficient"));
            continue;
        }
        let coef = x
            .clone()
            .svd(true, true)
            .solve(&y, 0.0)
            .map_err(|e| Error::Degenerate(e.to_string()))?;
        let mut it = coef.iter().copied();
        let a = if uses_g { it.next().unwrap() } else { 0.0 };
        let b = if uses_t { it.next().unwrap() } else { 0.0 };
        let c = it.next().unwrap();
        let resid = &x * &coef - &y;
        let residual = (resid.norm_squared() / samples.len() as f64).sqrt();
        return Ok((LinearModel { a, b, c, uses_g, uses_t, residual }, notes));
    }
    Err(Error::Degenerate("no usable linear model".into()))
}

/// Fills every missing cell from the fitted plane; observed cells keep their
/// values.
pub fn linear_fit_predict(samples: &SampleSet) -> Result<ReconResult> {
    let (model, notes) = linear_fit(samples)?;
    let lattice = samples.lattice().clone();
    let profile = complete_profile(samples, |i| {
        let (g, t) = lattice.cell(i);
        model.predict(g, t)
    })?;
    Ok(ReconResult {
        profile,
        method: Method::Li,
        std: None,
        diagnostics: Diagnostics { linear: Some(model), notes, ..Default::default() },
    })
}
