//! Orthonormal DCT machinery and compressibility analysis of noise profiles.
//!
//! The synthesis operator `Psi` has the DCT-II basis vectors as columns, so
//! `forward` computes `v = Psi^T x` and `inverse` computes `x = Psi v`. Both
//! run in O(N log N) through one real-input FFT of length N.

use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridref::NoiseProfile;

/// Which transform the profile vector is expressed in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// One DCT over the whole vectorized profile.
    #[default]
    Dct,
    /// Separable DCT over space and time of the `n_s x n_t` lattice.
    Dct2d,
}

/// An orthonormal transform of a fixed length.
pub trait Transform {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `out = Psi^T x`
    fn forward_into(&mut self, x: &[f64], out: &mut [f64]);

    /// `out = Psi v`
    fn inverse_into(&mut self, v: &[f64], out: &mut [f64]);

    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    fn inverse(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), v.len())?;
        let mut out = vec![0.0; v.len()];
        self.inverse_into(v, &mut out);
        Ok(out)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Fast orthonormal DCT-II of length `n` (and its inverse, DCT-III).
#[derive(Clone)]
pub struct Dct {
    n: usize,
    fft: Arc<dyn RealToComplex<f64>>,
    ifft: Arc<dyn ComplexToReal<f64>>,
    // e^{-i pi k / 2n}, k = 0..=n/2
    twiddle: Vec<Complex64>,
    // orthonormal scale per coefficient
    scale: Vec<f64>,
    real: Vec<f64>,
    spec: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for Dct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dct").field("n", &self.n).finish()
    }
}

impl Dct {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "DCT length must be positive");
        let mut planner = RealFftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let scratch_len = fft.get_scratch_len().max(ifft.get_scratch_len());
        let twiddle = (0..=n / 2)
            .map(|k| Complex64::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2 * n) as f64))
            .collect();
        let scale = (0..n).map(|k| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() }).collect();
        Dct {
            n,
            scale,
            real: fft.make_input_vec(),
            spec: fft.make_output_vec(),
            scratch: vec![Complex64::default(); scratch_len],
            fft,
            ifft,
            twiddle,
        }
    }

}

// The DCT of x is the real part of a twiddled FFT of x reordered as
// evens ascending then odds descending. That reordered sequence is real, so
// half the spectrum suffices; bins above n/2 are conjugates.
impl Transform for Dct {
    fn len(&self) -> usize {
        self.n
    }

    fn forward_into(&mut self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let half = n.div_ceil(2);
        for i in 0..half {
            self.real[i] = x[2 * i];
        }
        for i in 0..n / 2 {
            self.real[n - 1 - i] = x[2 * i + 1];
        }
        self.fft
            .process_with_scratch(&mut self.real, &mut self.spec, &mut self.scratch)
            .expect("buffer lengths from the plan");
        let h = n / 2;
        for k in 0..=h {
            out[k] = (self.twiddle[k] * self.spec[k]).re * self.scale[k];
        }
        // Y[k] = conj(Y[n-k]) and e^{-i pi k/2n} = -i e^{+i pi (n-k)/2n}
        for k in h + 1..n {
            let y = self.spec[n - k].conj();
            let tw = Complex64::new(0.0, -1.0) * self.twiddle[n - k].conj();
            out[k] = (tw * y).re * self.scale[k];
        }
    }

    fn inverse_into(&mut self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let h = n / 2;
        for k in 0..=h {
            let c = v[k] / self.scale[k];
            let c_mirror = if k == 0 { 0.0 } else { v[n - k] / self.scale[n - k] };
            self.spec[k] = self.twiddle[k].conj() * Complex64::new(c, -c_mirror);
        }
        // DC and (for even n) Nyquist are real by construction; drop rounding
        self.spec[0].im = 0.0;
        if n % 2 == 0 {
            self.spec[h].im = 0.0;
        }
        self.ifft
            .process_with_scratch(&mut self.spec, &mut self.real, &mut self.scratch)
            .expect("buffer lengths from the plan");
        let inv_n = 1.0 / n as f64;
        let half = n.div_ceil(2);
        for i in 0..half {
            out[2 * i] = self.real[i] * inv_n;
        }
        for i in 0..n / 2 {
            out[2 * i + 1] = self.real[n - 1 - i] * inv_n;
        }
    }
}

/// Separable DCT over a lattice stored space-fastest (`index = t * n_s + g`).
#[derive(Clone, Debug)]
pub struct Dct2d {
    n_s: usize,
    n_t: usize,
    space: Dct,
    time: Dct,
    col_in: Vec<f64>,
    col_out: Vec<f64>,
    tmp: Vec<f64>,
}

impl Dct2d {
    pub fn new(n_s: usize, n_t: usize) -> Self {
        Dct2d {
            n_s,
            n_t,
            space: Dct::new(n_s),
            time: Dct::new(n_t),
            col_in: vec![0.0; n_t],
            col_out: vec![0.0; n_t],
            tmp: vec![0.0; n_s * n_t],
        }
    }

    fn separable(&mut self, x: &[f64], out: &mut [f64], forward: bool) {
        let (n_s, n_t) = (self.n_s, self.n_t);
        for t in 0..n_t {
            let row = &x[t * n_s..(t + 1) * n_s];
            let dst = &mut self.tmp[t * n_s..(t + 1) * n_s];
            if forward {
                self.space.forward_into(row, dst);
            } else {
                self.space.inverse_into(row, dst);
            }
        }
        for g in 0..n_s {
            for t in 0..n_t {
                self.col_in[t] = self.tmp[t * n_s + g];
            }
            if forward {
                self.time.forward_into(&self.col_in, &mut self.col_out);
            } else {
                self.time.inverse_into(&self.col_in, &mut self.col_out);
            }
            for t in 0..n_t {
                out[t * n_s + g] = self.col_out[t];
            }
        }
    }
}

impl Transform for Dct2d {
    fn len(&self) -> usize {
        self.n_s * self.n_t
    }

    fn forward_into(&mut self, x: &[f64], out: &mut [f64]) {
        self.separable(x, out, true);
    }

    fn inverse_into(&mut self, v: &[f64], out: &mut [f64]) {
        self.separable(v, out, false);
    }
}

/// A transform of a given shape; `plan` builds the fast implementation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformBasis {
    pub n_s: usize,
    pub n_t: usize,
    pub kind: TransformKind,
}

impl TransformBasis {
    pub fn new(n_s: usize, n_t: usize, kind: TransformKind) -> Self {
        TransformBasis { n_s, n_t, kind }
    }

    pub fn len(&self) -> usize {
        self.n_s * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plan(&self) -> Box<dyn Transform + Send> {
        match self.kind {
            TransformKind::Dct => Box::new(Dct::new(self.len())),
            TransformKind::Dct2d => Box::new(Dct2d::new(self.n_s, self.n_t)),
        }
    }
}

/// Dense orthonormal DCT-II synthesis matrix, row-major, `psi[i * n + k]` is
/// entry (i, k): sample i of basis vector k. Only meant for small `n`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut psi = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            psi[i * n + k] =
                s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    psi
}

fn rms(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    (values.map(|v| v * v).sum::<f64>() / n as f64).sqrt()
}

/// Coefficient indices ordered by descending magnitude; ties keep index order.
fn ranked(coeffs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| coeffs[b].abs().total_cmp(&coeffs[a].abs()).then(a.cmp(&b)));
    order
}

/// Keeps the `k` largest-magnitude DCT coefficients of `x` and returns the
/// approximation together with its RMS error.
pub fn top_k_approx(x: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    if k > x.len() {
        return Err(Error::InvalidInput(format!("k = {k} exceeds length {}", x.len())));
    }
    let mut dct = Dct::new(x.len());
    let coeffs = dct.forward(x)?;
    let mut kept = vec![0.0; x.len()];
    for &i in ranked(&coeffs).iter().take(k) {
        kept[i] = coeffs[i];
    }
    let approx = dct.inverse(&kept)?;
    let err = rms(approx.iter().zip(x).map(|(a, b)| a - b), x.len());
    Ok((approx, err))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressibilityPoint {
    pub target_db: f64,
    pub coefficients: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressibilityReport {
    pub n: usize,
    pub kind: TransformKind,
    pub fractions: Vec<CompressibilityPoint>,
    pub sorted_coefficient_magnitudes: Vec<f64>,
}

impl CompressibilityReport {
    /// Fraction for an exact target, if it was requested.
    pub fn fraction_for(&self, target_db: f64) -> Option<f64> {
        self.fractions.iter().find(|p| p.target_db == target_db).map(|p| p.fraction)
    }
}

/// Smallest share of coefficients that approximates `profile` within each
/// RMS error target (dBA).
pub fn compressibility(
    profile: &NoiseProfile,
    targets: &[f64],
    kind: TransformKind,
) -> Result<CompressibilityReport> {
    let x = profile.dense()?;
    let lattice = profile.lattice();
    let mut plan = TransformBasis::new(lattice.n_s, lattice.n_t, kind).plan();
    let coeffs = plan.forward(&x)?;
    let n = x.len();
    let mut mags: Vec<f64> = coeffs.iter().map(|c| c.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    // tail[k]: energy of everything not in the k largest coefficients
    let mut tail = vec![0.0; n + 1];
    for k in (0..n).rev() {
        tail[k] = tail[k + 1] + mags[k] * mags[k];
    }
    let error_at = |k: usize| (tail[k] / n as f64).sqrt();
    let mut fractions = Vec::with_capacity(targets.len());
    for &target in targets {
        // error_at is non-increasing in k; find the first k meeting the target
        let (mut lo, mut hi) = (0usize, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if error_at(mid) <= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        fractions.push(CompressibilityPoint {
            target_db: target,
            coefficients: lo,
            fraction: lo as f64 / n as f64,
        });
    }
    Ok(CompressibilityReport { n, kind, fractions, sorted_coefficient_magnitudes: mags })
}
