//! Basis pursuit in the DCT domain:
//!
//! ```text
//! min ||v||_1  subject to  ||P Psi v - x_obs||_2 <= eps
//! ```
//!
//! where `P` selects the observed cells. Solved by ADMM on the splitting
//! `v = z`, alternating a projection onto the constraint set with
//! soft-thresholding. Because the rows of `P Psi` are orthonormal the
//! projection has a closed form and needs only two fast transforms.

use serde::{Deserialize, Serialize};

use super::{Diagnostics, Method, ReconResult, SampleSet};
use crate::basis::{Transform, TransformBasis, TransformKind};
use crate::error::Result;
use crate::gridref::NoiseProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L1Config {
    /// Constraint radius relative to `||x_obs||_2`.
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Relative primal and dual residual tolerance.
    pub tol: f64,
    pub kind: TransformKind,
    /// Initial penalty; by default derived from the data scale.
    pub rho: Option<f64>,
}

impl Default for L1Config {
    fn default() -> Self {
        L1Config { eps_rel: 1e-6, max_iter: 10_000, tol: 1e-8, kind: TransformKind::Dct, rho: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Solution {
    pub coefficients: Vec<f64>,
    pub signal: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub constraint_residual: f64,
    pub eps: f64,
    pub converged: bool,
}

const RELAXATION: f64 = 1.6;
const ADAPT_EVERY: usize = 50;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

struct Operator {
    plan: Box<dyn Transform + Send>,
    observed: Vec<usize>,
    full: Vec<f64>,
    coef: Vec<f64>,
}

impl Operator {
    /// `out = P Psi v`
    fn apply(&mut self, v: &[f64], out: &mut [f64]) {
        self.plan.inverse_into(v, &mut self.full);
        for (o, &i) in out.iter_mut().zip(&self.observed) {
            *o = self.full[i];
        }
    }

    /// `out = Psi^T P^T r`
    fn adjoint(&mut self, r: &[f64], out: &mut [f64]) {
        self.full.iter_mut().for_each(|x| *x = 0.0);
        for (&ri, &i) in r.iter().zip(&self.observed) {
            self.full[i] = ri;
        }
        self.plan.forward_into(&self.full, out);
    }

    /// Projects `w` onto `{v : ||P Psi v - b|| <= eps}` in place.
    fn project(&mut self, w: &mut [f64], b: &[f64], eps: f64, resid: &mut [f64]) {
        self.apply(w, resid);
        for (r, bi) in resid.iter_mut().zip(b) {
            *r -= bi;
        }
        let rn = norm(resid);
        if rn <= eps {
            return;
        }
        let scale = 1.0 - eps / rn;
        resid.iter_mut().for_each(|r| *r *= scale);
        let mut corr = std::mem::take(&mut self.coef);
        self.adjoint(resid, &mut corr);
        for (wi, c) in w.iter_mut().zip(&corr) {
            *wi -= c;
        }
        self.coef = corr;
    }
}

fn soft(x: f64, k: f64) -> f64 {
    if x > k {
        x - k
    } else if x < -k {
        x + k
    } else {
        0.0
    }
}

/// Solves the basis pursuit program for observations `b` at vector indices
/// `observed` of a length `basis.len()` signal.
pub fn basis_pursuit(basis: TransformBasis, observed: &[usize], b: &[f64], cfg: &L1Config) -> L1Solution {
    let n = basis.len();
    let m = observed.len();
    let mut op = Operator { plan: basis.plan(), observed: observed.to_vec(), full: vec![0.0; n], coef: vec![0.0; n] };
    let eps = cfg.eps_rel * norm(b);

    // least-norm feasible point as the start
    let mut v = vec![0.0; n];
    op.adjoint(b, &mut v);
    let mut z = v.clone();
    let mut u = vec![0.0; n];
    let mut z_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut resid = vec![0.0; m];
    let scale = v.iter().map(|a| a.abs()).sum::<f64>() / n.max(1) as f64;
    let mut rho = cfg.rho.unwrap_or(if scale > 0.0 { 1.0 / scale } else { 1.0 });

    let (mut iterations, mut r_norm, mut s_norm, mut converged) = (0, f64::INFINITY, f64::INFINITY, false);
    for it in 1..=cfg.max_iter {
        iterations = it;
        for i in 0..n {
            w[i] = z[i] - u[i];
        }
        op.project(&mut w, b, eps, &mut resid);
        std::mem::swap(&mut v, &mut w);
        std::mem::swap(&mut z, &mut z_prev);
        let k = 1.0 / rho;
        let (mut rr, mut ss, mut vv, mut zz, mut uu) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let relaxed = RELAXATION * v[i] + (1.0 - RELAXATION) * z_prev[i];
            z[i] = soft(relaxed + u[i], k);
            u[i] += relaxed - z[i];
            rr += (v[i] - z[i]) * (v[i] - z[i]);
            ss += (z[i] - z_prev[i]) * (z[i] - z_prev[i]);
            vv += v[i] * v[i];
            zz += z[i] * z[i];
            uu += u[i] * u[i];
        }
        r_norm = rr.sqrt();
        s_norm = rho * ss.sqrt();
        let eps_pri = cfg.tol * vv.max(zz).sqrt().max(f64::MIN_POSITIVE);
        let eps_dual = cfg.tol * (rho * uu.sqrt()).max(f64::MIN_POSITIVE);
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }
        // residual balancing; u is the scaled dual and rescales with rho
        if it % ADAPT_EVERY == 0 {
            if r_norm > 10.0 * s_norm {
                rho *= 2.0;
                u.iter_mut().for_each(|x| *x *= 0.5);
            } else if s_norm > 10.0 * r_norm {
                rho *= 0.5;
                u.iter_mut().for_each(|x| *x *= 2.0);
            }
        }
    }

    let mut signal = vec![0.0; n];
    op.plan.inverse_into(&v, &mut signal);
    let constraint_residual = observed.iter().zip(b).map(|(&i, bi)| (signal[i] - bi).powi(2)).sum::<f64>().sqrt();
    L1Solution {
        coefficients: v,
        signal,
        iterations,
        primal_residual: r_norm,
        dual_residual: s_norm,
        constraint_residual,
        eps,
        converged,
    }
}

/// l1 reconstruction of a sample set. Observed cells are copied through.
pub fn l1_dct(samples: &SampleSet, cfg: &L1Config) -> Result<ReconResult> {
    samples.require(1)?;
    let lattice = samples.lattice().clone();
    let observed: Vec<usize> = samples.entries().iter().map(|s| lattice.index(s.g, s.t)).collect();
    let b: Vec<f64> = samples.entries().iter().map(|s| s.x).collect();
    let sol = basis_pursuit(TransformBasis::new(lattice.n_s, lattice.n_t, cfg.kind), &observed, &b, cfg);
    if !sol.converged {
        log::warn!(
            "l1 solver stopped after {} iterations (primal {:.3e}, dual {:.3e})",
            sol.iterations,
            sol.primal_residual,
            sol.dual_residual
        );
    }
    let mut cells: Vec<Option<f64>> = sol.signal.iter().copied().map(Some).collect();
    for (&i, &x) in observed.iter().zip(&b) {
        cells[i] = Some(x);
    }
    let diagnostics = Diagnostics {
        iterations: Some(sol.iterations),
        primal_residual: Some(sol.primal_residual),
        dual_residual: Some(sol.dual_residual),
        constraint_residual: Some(sol.constraint_residual),
        converged: Some(sol.converged),
        ..Default::default()
    };
    Ok(ReconResult { profile: NoiseProfile::devectorize(lattice, cells)?, method: Method::L1, std: None, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Dct;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sparse_signal(n: usize, s: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; n];
        for i in sample(rng, n, s) {
            v[i] = if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(1.0..3.0);
        }
        let x = Dct::new(n).inverse(&v).unwrap();
        (v, x)
    }

    #[test]
    fn full_observation_reproduces_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(50.0..70.0)).collect();
        let obs: Vec<usize> = (0..64).collect();
        let sol = basis_pursuit(TransformBasis::new(64, 1, TransformKind::Dct), &obs, &x, &L1Config::default());
        assert!(sol.constraint_residual <= sol.eps * (1.0 + 1e-9));
        let samples = SampleSet::from_profile(
            &NoiseProfile::from_dense(crate::gridref::Lattice::abstract_grid(64, 1), x.clone()).unwrap(),
        );
        let r = l1_dct(&samples, &L1Config::default()).unwrap();
        assert_eq!(r.profile.dense().unwrap(), x);
    }

    #[test]
    fn recovers_sparse_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 256;
        let (v, x) = sparse_signal(n, 6, &mut rng);
        let mut obs: Vec<usize> = sample(&mut rng, n, 80).into_vec();
        obs.sort_unstable();
        let b: Vec<f64> = obs.iter().map(|&i| x[i]).collect();
        let sol = basis_pursuit(TransformBasis::new(n, 1, TransformKind::Dct), &obs, &b, &L1Config::default());
        let err = norm(&sol.coefficients.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&v);
        assert!(sol.converged);
        assert!(err < 1e-5, "{err}");
        assert!(sol.constraint_residual <= sol.eps * (1.0 + 1e-9) + 1e-12);
    }

    /// Exhaustive basis pursuit for tiny problems: an optimal vertex of the
    /// l1 program has at most `m` nonzeros, so solving every `m`-column
    /// subsystem and keeping the smallest-norm solution is exact.
    fn brute_force_l1(psi_bar: &[Vec<f64>], b: &[f64]) -> f64 {
        let m = b.len();
        let n = psi_bar[0].len();
        let mut best = f64::INFINITY;
        let mut cols: Vec<usize> = (0..m).collect();
        loop {
            let a = nalgebra::DMatrix::from_fn(m, m, |i, j| psi_bar[i][cols[j]]);
            if let Some(inv) = a.clone().try_inverse() {
                let sol = inv * nalgebra::DVector::from_column_slice(b);
                if (&a * &sol - nalgebra::DVector::from_column_slice(b)).norm() < 1e-9 {
                    best = best.min(sol.iter().map(|c| c.abs()).sum());
                }
            }
            // next combination
            let mut i = m;
            while i > 0 && cols[i - 1] == n - m + i - 1 {
                i -= 1;
            }
            if i == 0 {
                return best;
            }
            cols[i - 1] += 1;
            for j in i..m {
                cols[j] = cols[j - 1] + 1;
            }
        }
    }

    #[test]
    fn objective_matches_exhaustive_solver() {
        let n = 12;
        let psi = crate::basis::dct_matrix(n);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut obs: Vec<usize> = sample(&mut rng, n, 6).into_vec();
            obs.sort_unstable();
            let b: Vec<f64> = obs.iter().map(|&i| x[i]).collect();
            let psi_bar: Vec<Vec<f64>> = obs.iter().map(|&i| psi[i * n..(i + 1) * n].to_vec()).collect();
            let oracle = brute_force_l1(&psi_bar, &b);
            let cfg = L1Config { eps_rel: 1e-9, max_iter: 200_000, ..Default::default() };
            let sol = basis_pursuit(TransformBasis::new(n, 1, TransformKind::Dct), &obs, &b, &cfg);
            let got: f64 = sol.coefficients.iter().map(|c| c.abs()).sum();
            assert!((got - oracle).abs() < 1e-5 * oracle.max(1.0), "seed {seed}: {got} vs {oracle} it {} conv {}", sol.iterations, sol.converged);
        }
    }

    #[test]
    fn respects_iteration_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..128).map(|_| rng.random_range(50.0..70.0)).collect();
        let obs: Vec<usize> = (0..128).step_by(3).collect();
        let b: Vec<f64> = obs.iter().map(|&i| x[i]).collect();
        let cfg = L1Config { max_iter: 5, ..Default::default() };
        let sol = basis_pursuit(TransformBasis::new(128, 1, TransformKind::Dct), &obs, &b, &cfg);
        assert_eq!(sol.iterations, 5);
        assert!(!sol.converged);
    }
}
