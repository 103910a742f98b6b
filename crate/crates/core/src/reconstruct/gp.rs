//! Gaussian-process interpolation with a squared-exponential kernel.
//!
//! Hyperparameters maximise the log marginal likelihood (Nelder-Mead over
//! log parameters, several starts). Fitting uses at most
//! `max_fit_samples` contiguous samples; prediction is exact up to
//! `exact_limit` samples and otherwise conditions each cell on its
//! `neighbors` nearest samples in kernel-scaled distance.

use std::collections::BinaryHeap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{Diagnostics, Method, ReconResult, SampleSet};
use crate::error::{Error, Result};
use crate::gridref::NoiseProfile;

const JITTERS: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub max_fit_samples: usize,
    pub exact_limit: usize,
    pub neighbors: usize,
    pub max_evals: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { max_fit_samples: 160, exact_limit: 512, neighbors: 64, max_evals: 160 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    /// Constant prior mean (sample mean).
    pub mean: f64,
    pub length_g: f64,
    pub length_t: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Negative log marginal likelihood on the fitting subset.
    pub nll: f64,
    pub fit_samples: usize,
}

impl GpModel {
    #[inline]
    pub fn kernel(&self, dg: f64, dt: f64) -> f64 {
        self.signal_var
            * (-0.5 * (dg * dg / (self.length_g * self.length_g) + dt * dt / (self.length_t * self.length_t))).exp()
    }

    fn scaled_dist2(&self, dg: f64, dt: f64) -> f64 {
        dg * dg / (self.length_g * self.length_g) + dt * dt / (self.length_t * self.length_t)
    }
}

type Point = (f64, f64);

fn covariance(model: &GpModel, pts: &[Point], jitter: f64) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = model.kernel(pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
        if i == j {
            k + model.noise_var + jitter
        } else {
            k
        }
    })
}

/// Cholesky of the noisy covariance with escalating diagonal jitter.
fn factor(model: &GpModel, pts: &[Point]) -> Result<Cholesky<f64, Dyn>> {
    for j in JITTERS {
        if let Some(c) = Cholesky::new(covariance(model, pts, j * model.signal_var)) {
            if j > 0.0 {
                log::debug!("covariance needed jitter {j:e}");
            }
            return Ok(c);
        }
    }
    Err(Error::NotPositiveDefinite(JITTERS[JITTERS.len() - 1]))
}

fn neg_log_likelihood(model: &GpModel, pts: &[Point], y: &DVector<f64>) -> Result<f64> {
    let chol = factor(model, pts)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(0.5 * y.dot(&alpha) + log_det + 0.5 * pts.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Minimises `f` from `x0` with the Nelder-Mead simplex method.
pub(crate) fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= 1e-8 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < worst.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    for j in 0..n {
                        p.0[j] = x0[j] + 0.5 * (p.0[j] - x0[j]);
                    }
                    p.1 = eval(&p.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Fits the kernel hyperparameters by maximum marginal likelihood.
pub fn gp_fit(samples: &SampleSet, cfg: &GpConfig) -> Result<GpModel> {
    samples.require(2)?;
    let e = samples.entries();
    let n = e.len();
    let mean = e.iter().map(|s| s.x).sum::<f64>() / n as f64;
    let var = (e.iter().map(|s| (s.x - mean).powi(2)).sum::<f64>() / n as f64).max(1e-6);

    // a contiguous run keeps the local sample density of the full set
    let m = n.min(cfg.max_fit_samples.max(2));
    let start = (n - m) / 2;
    let subset = &e[start..start + m];
    let pts: Vec<Point> = subset.iter().map(|s| (s.g as f64, s.t as f64)).collect();
    let y = DVector::from_iterator(m, subset.iter().map(|s| s.x - mean));

    let l = samples.lattice();
    let bounds = [
        (0.05f64.ln(), (10.0 * l.n_s as f64).max(1.0).ln()),
        (0.05f64.ln(), (10.0 * l.n_t as f64).max(1.0).ln()),
        ((1e-4 * var).ln(), (100.0 * var).ln()),
        ((1e-6 * var).ln(), (10.0 * var).ln()),
    ];
    let clamp = |p: &[f64]| -> [f64; 4] {
        let mut q = [0.0; 4];
        for i in 0..4 {
            q[i] = p[i].clamp(bounds[i].0, bounds[i].1);
        }
        q
    };
    let model_of = |q: [f64; 4], nll: f64| GpModel {
        mean,
        length_g: q[0].exp(),
        length_t: q[1].exp(),
        signal_var: q[2].exp(),
        noise_var: q[3].exp(),
        nll,
        fit_samples: m,
    };
    let mut objective = |p: &[f64]| -> f64 {
        let q = clamp(p);
        let outside: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
        match neg_log_likelihood(&model_of(q, 0.0), &pts, &y) {
            Ok(v) => v + 1e3 * outside,
            Err(_) => f64::INFINITY,
        }
    };
    let starts = [
        [1.0f64.ln(), 1.0f64.ln(), var.ln(), (0.1 * var).ln()],
        [((l.n_s as f64) / 3.0).max(1.0).ln(), ((l.n_t as f64) / 10.0).max(1.0).ln(), var.ln(), (0.01 * var).ln()],
        [0.5f64.ln(), 3.0f64.ln(), (0.5 * var).ln(), (0.3 * var).ln()],
    ];
    let mut best: Option<([f64; 4], f64)> = None;
    for s in starts {
        let (x, v) = nelder_mead(&mut objective, &clamp(&s), 0.7, cfg.max_evals);
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((clamp(&x), v));
        }
    }
    let (q, v) = best.expect("at least one start");
    if !v.is_finite() {
        return Err(Error::NotPositiveDefinite(JITTERS[JITTERS.len() - 1]));
    }
    Ok(model_of(q, v))
}

/// Posterior mean and standard deviation of the latent level at every cell.
pub fn gp_posterior(samples: &SampleSet, model: &GpModel, cfg: &GpConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    samples.require(1)?;
    let l = samples.lattice();
    let e = samples.entries();
    let mut mean = vec![0.0; l.len()];
    let mut std = vec![0.0; l.len()];
    if e.len() <= cfg.exact_limit {
        let pts: Vec<Point> = e.iter().map(|s| (s.g as f64, s.t as f64)).collect();
        let cond = Conditioner::new(model, samples, pts.iter().enumerate().map(|(i, _)| i).collect())?;
        for i in 0..l.len() {
            let (g, t) = l.cell(i);
            let (m, s) = cond.predict(model, samples, g, t);
            mean[i] = m;
            std[i] = s;
        }
    } else {
        let rows = row_starts(samples);
        let mut cached: Option<Conditioner> = None;
        for i in 0..l.len() {
            let (g, t) = l.cell(i);
            let nb = neighbours(samples, model, &rows, g, t, cfg.neighbors);
            if cached.as_ref().is_none_or(|c| c.idx != nb) {
                cached = Some(Conditioner::new(model, samples, nb)?);
            }
            let (m, s) = cached.as_ref().unwrap().predict(model, samples, g, t);
            mean[i] = m;
            std[i] = s;
        }
    }
    Ok((mean, std))
}

/// A factored covariance over a fixed subset of samples.
struct Conditioner {
    idx: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl Conditioner {
    fn new(model: &GpModel, samples: &SampleSet, idx: Vec<usize>) -> Result<Self> {
        let e = samples.entries();
        let pts: Vec<Point> = idx.iter().map(|&i| (e[i].g as f64, e[i].t as f64)).collect();
        let chol = factor(model, &pts)?;
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| e[i].x - model.mean));
        let alpha = chol.solve(&y);
        Ok(Conditioner { idx, chol, alpha })
    }

    fn predict(&self, model: &GpModel, samples: &SampleSet, g: usize, t: usize) -> (f64, f64) {
        let e = samples.entries();
        let k = DVector::from_iterator(
            self.idx.len(),
            self.idx.iter().map(|&i| model.kernel(e[i].g as f64 - g as f64, e[i].t as f64 - t as f64)),
        );
        let mean = model.mean + k.dot(&self.alpha);
        let mut v = k;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let var = (model.signal_var - v.norm_squared()).max(0.0);
        (mean, var.sqrt())
    }
}

/// First entry of each time row in the (vector-ordered) sample list.
fn row_starts(samples: &SampleSet) -> Vec<usize> {
    let n_t = samples.lattice().n_t;
    let mut starts = vec![0; n_t + 1];
    for s in samples.entries() {
        starts[s.t + 1] += 1;
    }
    for t in 0..n_t {
        starts[t + 1] += starts[t];
    }
    starts
}

#[derive(PartialEq, PartialOrd)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// The `k` samples closest to `(g, t)` in kernel-scaled distance, sorted by
/// sample index.
fn neighbours(samples: &SampleSet, model: &GpModel, rows: &[usize], g: usize, t: usize, k: usize) -> Vec<usize> {
    let e = samples.entries();
    let n_t = rows.len() - 1;
    let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
    for dt in 0..n_t {
        let row_bound = model.scaled_dist2(0.0, dt as f64);
        if heap.len() == k && heap.peek().is_some_and(|c| row_bound > c.0) {
            break;
        }
        for row in [t.checked_sub(dt), (dt > 0).then_some(t + dt).filter(|&r| r < n_t)].into_iter().flatten() {
            for (i, s) in e.iter().enumerate().take(rows[row + 1]).skip(rows[row]) {
                let d = model.scaled_dist2(s.g as f64 - g as f64, s.t as f64 - t as f64);
                let c = Cand(d, i);
                if heap.len() < k {
                    heap.push(c);
                } else if heap.peek().is_some_and(|top| c < *top) {
                    heap.pop();
                    heap.push(c);
                }
            }
        }
        if t < dt && t + dt >= n_t {
            break;
        }
    }
    let mut idx: Vec<usize> = heap.into_iter().map(|c| c.1).collect();
    idx.sort_unstable();
    idx
}

/// Posterior mean at unobserved cells; observed cells keep their values.
pub fn gp_predict(samples: &SampleSet, model: &GpModel, cfg: &GpConfig) -> Result<ReconResult> {
    let (mean, std) = gp_posterior(samples, model, cfg)?;
    let mask = samples.mask();
    let lattice = samples.lattice().clone();
    let mut cells: Vec<Option<f64>> = mean.into_iter().map(Some).collect();
    for s in samples.entries() {
        cells[lattice.index(s.g, s.t)] = Some(s.x);
    }
    let mut notes = Vec::new();
    if samples.len() > cfg.exact_limit {
        notes.push(format!("local conditioning on {} nearest samples", cfg.neighbors));
    }
    debug_assert_eq!(mask.len(), cells.len());
    Ok(ReconResult {
        profile: NoiseProfile::devectorize(lattice, cells)?,
        method: Method::Gpi,
        std: Some(std),
        diagnostics: Diagnostics { gp: Some(*model), notes, ..Default::default() },
    })
}

pub fn gp_fit_predict(samples: &SampleSet, cfg: &GpConfig) -> Result<ReconResult> {
    let model = gp_fit(samples, cfg)?;
    gp_predict(samples, &model, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridref::Lattice;
    use crate::reconstruct::Sample;

    fn set(n_s: usize, n_t: usize, cells: &[(usize, usize, f64)]) -> SampleSet {
        SampleSet::new(
            Lattice::abstract_grid(n_s, n_t),
            cells.iter().map(|&(g, t, x)| Sample { g, t, x }).collect(),
        )
        .unwrap()
    }

    fn model(lg: f64, lt: f64, sf2: f64, sn2: f64) -> GpModel {
        GpModel { mean: 60.0, length_g: lg, length_t: lt, signal_var: sf2, noise_var: sn2, nll: 0.0, fit_samples: 0 }
    }

    #[test]
    fn matches_dense_conditional_gaussian() {
        let s = set(1, 12, &[(0, 0, 61.0), (0, 2, 63.5), (0, 5, 58.0), (0, 7, 60.5), (0, 11, 66.0)]);
        let m = model(1.0, 2.3, 4.0, 0.2);
        let (mean, std) = gp_posterior(&s, &m, &GpConfig::default()).unwrap();
        // oracle: explicit inverse of the covariance
        let ts: Vec<f64> = s.entries().iter().map(|e| e.t as f64).collect();
        let kern = |a: f64, b: f64| 4.0 * (-0.5 * (a - b).powi(2) / 2.3f64.powi(2)).exp();
        let sigma = DMatrix::from_fn(5, 5, |i, j| kern(ts[i], ts[j]) + if i == j { 0.2 } else { 0.0 });
        let inv = sigma.try_inverse().unwrap();
        let y = DVector::from_iterator(5, s.entries().iter().map(|e| e.x - 60.0));
        for t in 0..12 {
            let k = DVector::from_iterator(5, ts.iter().map(|&ti| kern(ti, t as f64)));
            let mu = 60.0 + (k.transpose() * &inv * &y)[0];
            let var = 4.0 - (k.transpose() * &inv * &k)[0];
            assert!((mean[t] - mu).abs() < 1e-6, "mean at {t}");
            assert!((std[t] - var.sqrt()).abs() < 1e-6, "std at {t}");
        }
    }

    #[test]
    fn far_cell_returns_prior() {
        let s = set(1, 200, &[(0, 0, 70.0), (0, 1, 72.0)]);
        let m = model(1.0, 1.0, 9.0, 0.1);
        let (mean, std) = gp_posterior(&s, &m, &GpConfig::default()).unwrap();
        assert!((mean[199] - 60.0).abs() < 1e-12);
        assert!((std[199] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn interpolates_with_vanishing_noise() {
        let s = set(3, 3, &[(0, 0, 62.0), (2, 1, 58.0), (1, 2, 65.0)]);
        let m = model(1.0, 1.0, 4.0, 1e-10);
        let (mean, _) = gp_posterior(&s, &m, &GpConfig::default()).unwrap();
        for e in s.entries() {
            assert!((mean[e.t * 3 + e.g] - e.x).abs() < 1e-6);
        }
    }

    #[test]
    fn local_matches_exact_when_neighbourhood_covers_everything() {
        let cells: Vec<_> = (0..40).map(|i| (i % 4, i / 4 * 2, 60.0 + (i as f64 * 1.3).sin() * 4.0)).collect();
        let s = set(4, 20, &cells);
        let m = model(1.5, 2.0, 5.0, 0.3);
        let exact = gp_posterior(&s, &m, &GpConfig::default()).unwrap();
        let local_cfg = GpConfig { exact_limit: 10, neighbors: 40, ..Default::default() };
        let local = gp_posterior(&s, &m, &local_cfg).unwrap();
        for i in 0..80 {
            assert!((exact.0[i] - local.0[i]).abs() < 1e-9);
            assert!((exact.1[i] - local.1[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_recovers_a_smooth_field() {
        let cells: Vec<_> = (0..6)
            .flat_map(|g| (0..30).map(move |t| (g, t)))
            .filter(|(g, t)| (g + 2 * t) % 3 != 0)
            .map(|(g, t)| (g, t, 60.0 + 3.0 * (t as f64 / 4.0).sin() + 0.5 * g as f64))
            .collect();
        let s = set(6, 30, &cells);
        let r = gp_fit_predict(&s, &GpConfig::default()).unwrap();
        let m = r.diagnostics.gp.unwrap();
        assert!(m.length_t > 1.0, "{m:?}");
        for g in 0..6 {
            for t in 0..30 {
                let want = 60.0 + 3.0 * (t as f64 / 4.0).sin() + 0.5 * g as f64;
                assert!((r.profile.get(g, t).unwrap() - want).abs() < 0.5);
            }
        }
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let (x, v) = nelder_mead(&mut f, &[0.0, 0.0], 1.0, 500);
        assert!(v < 1e-8 && (x[0] - 1.0).abs() < 1e-3 && (x[1] + 2.0).abs() < 1e-3);
    }
}
