//! Nearest-neighbour interpolation under `dist = sqrt(a dg^2 + b dt^2)`.

use serde::{Deserialize, Serialize};

use super::{complete_profile, Diagnostics, Method, ReconResult, SampleSet};
use crate::error::{Error, Result};

pub const MIN_FIT_SAMPLES: usize = 4;

/// Candidate ratios a/b: 25 points log-spaced over [1e-3, 1e3].
pub fn ratio_grid() -> Vec<f64> {
    (0..=24).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NniMetric {
    pub a: f64,
    pub b: f64,
}

impl NniMetric {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!("metric weights must be non-negative with a + b > 0, got ({a}, {b})")));
        }
        Ok(NniMetric { a, b })
    }

    /// `a + b = 1` with `a / b = ratio`.
    pub fn from_ratio(ratio: f64) -> Self {
        NniMetric { a: ratio / (1.0 + ratio), b: 1.0 / (1.0 + ratio) }
    }

    pub fn isotropic() -> Self {
        NniMetric { a: 0.5, b: 0.5 }
    }

    pub fn dist2(&self, dg: f64, dt: f64) -> f64 {
        self.a * dg * dg + self.b * dt * dt
    }
}

const NONE: u32 = u32::MAX;

/// Per time row, the nearest sample at or left/right of each cell.
pub(crate) struct RowIndex {
    n_s: usize,
    n_t: usize,
    left: Vec<u32>,
    right: Vec<u32>,
}

impl RowIndex {
    pub(crate) fn new(samples: &SampleSet) -> Self {
        let l = samples.lattice();
        let (n_s, n_t) = (l.n_s, l.n_t);
        let mut at = vec![NONE; l.len()];
        for (i, s) in samples.entries().iter().enumerate() {
            at[l.index(s.g, s.t)] = i as u32;
        }
        let mut left = vec![NONE; l.len()];
        let mut right = vec![NONE; l.len()];
        for t in 0..n_t {
            let row = t * n_s;
            let mut last = NONE;
            for g in 0..n_s {
                if at[row + g] != NONE {
                    last = at[row + g];
                }
                left[row + g] = last;
            }
            last = NONE;
            for g in (0..n_s).rev() {
                if at[row + g] != NONE {
                    last = at[row + g];
                }
                right[row + g] = last;
            }
        }
        RowIndex { n_s, n_t, left, right }
    }

    /// Index of the nearest sample to `(g, t)`, skipping sample `skip`.
    /// Equal distances go to the lower sample index.
    pub(crate) fn nearest(&self, samples: &SampleSet, m: &NniMetric, g: usize, t: usize, skip: Option<usize>) -> Option<usize> {
        let e = samples.entries();
        let skip = skip.map(|s| s as u32).unwrap_or(NONE);
        let mut best: Option<(f64, u32)> = None;
        let consider = |idx: u32, dt: usize, best: &mut Option<(f64, u32)>| {
            if idx == NONE || idx == skip {
                return;
            }
            let s = &e[idx as usize];
            let d = m.dist2(s.g as f64 - g as f64, dt as f64);
            match best {
                Some((bd, bi)) if d > *bd || (d == *bd && idx > *bi) => {}
                _ => *best = Some((d, idx)),
            }
        };
        for dt in 0..self.n_t {
            if let Some((bd, _)) = best {
                if m.b * (dt * dt) as f64 > bd {
                    break;
                }
            }
            let rows: &[Option<usize>] = &[t.checked_sub(dt), if dt > 0 { Some(t + dt).filter(|&r| r < self.n_t) } else { None }];
            for row in rows.iter().flatten() {
                let base = row * self.n_s;
                let mut l = self.left[base + g];
                if l == skip && l != NONE {
                    l = if g > 0 { self.left[base + g - 1] } else { NONE };
                }
                let mut r = self.right[base + g];
                if r == skip && r != NONE {
                    r = if g + 1 < self.n_s { self.right[base + g + 1] } else { NONE };
                }
                consider(l, dt, &mut best);
                consider(r, dt, &mut best);
            }
            if t < dt && t + dt >= self.n_t {
                break;
            }
        }
        best.map(|(_, i)| i as usize)
    }
}

/// Leave-one-out RMS error of the nearest-neighbour predictor.
pub fn loo_rms(samples: &SampleSet, m: &NniMetric) -> f64 {
    let index = RowIndex::new(samples);
    loo_rms_with(samples, &index, m)
}

fn loo_rms_with(samples: &SampleSet, index: &RowIndex, m: &NniMetric) -> f64 {
    let e = samples.entries();
    let ss: f64 = e
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let j = index.nearest(samples, m, s.g, s.t, Some(i)).expect("at least two samples");
            (s.x - e[j].x).powi(2)
        })
        .sum();
    (ss / e.len() as f64).sqrt()
}

/// Picks the metric on [`ratio_grid`] with the lowest leave-one-out error.
/// Among equal errors the most anisotropic ratio wins, then the smaller one.
pub fn nni_fit(samples: &SampleSet) -> Result<NniMetric> {
    samples.require(MIN_FIT_SAMPLES)?;
    let l = samples.lattice();
    let e = samples.entries();
    if e.iter().all(|s| s.g == e[0].g && s.t == e[0].t) || l.len() < 2 {
        return Err(Error::Degenerate("all samples in one cell".into()));
    }
    let index = RowIndex::new(samples);
    let mut best: Option<(f64, f64)> = None;
    for r in ratio_grid() {
        let err = loo_rms_with(samples, &index, &NniMetric::from_ratio(r));
        let better = match best {
            None => true,
            Some((be, br)) => {
                err < be || (err == be && (r.ln().abs() > br.ln().abs() || (r.ln().abs() == br.ln().abs() && r < br)))
            }
        };
        if better {
            best = Some((err, r));
        }
    }
    let (err, r) = best.expect("grid is not empty");
    log::debug!("nni metric a/b = {r:.4}, loo rms {err:.4}");
    Ok(NniMetric::from_ratio(r))
}

/// Assigns each missing cell the value of its nearest sample.
pub fn nni_predict(samples: &SampleSet, m: &NniMetric) -> Result<ReconResult> {
    samples.require(1)?;
    let index = RowIndex::new(samples);
    let lattice = samples.lattice().clone();
    let e = samples.entries();
    let profile = complete_profile(samples, |i| {
        let (g, t) = lattice.cell(i);
        e[index.nearest(samples, m, g, t, None).expect("non-empty sample set")].x
    })?;
    Ok(ReconResult {
        profile,
        method: Method::Nni,
        std: None,
        diagnostics: Diagnostics { metric: Some(*m), ..Default::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridref::Lattice;
    use crate::reconstruct::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(n_s: usize, n_t: usize, cells: &[(usize, usize, f64)]) -> SampleSet {
        SampleSet::new(
            Lattice::abstract_grid(n_s, n_t),
            cells.iter().map(|&(g, t, x)| Sample { g, t, x }).collect(),
        )
        .unwrap()
    }

    fn brute_nearest(s: &SampleSet, m: &NniMetric, g: usize, t: usize, skip: Option<usize>) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, e) in s.entries().iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            let d = m.dist2(e.g as f64 - g as f64, e.t as f64 - t as f64);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    #[test]
    fn single_sample_gives_constant_profile() {
        let r = nni_predict(&set(3, 3, &[(1, 1, 58.0)]), &NniMetric::isotropic()).unwrap();
        assert!(r.profile.dense().unwrap().iter().all(|&v| v == 58.0));
    }

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        // (0,1) is one step from both (0,0) [index 0] and (0,2) [index 2 after sorting]
        let s = set(1, 3, &[(0, 2, 70.0), (0, 0, 50.0)]);
        let r = nni_predict(&s, &NniMetric::isotropic()).unwrap();
        assert_eq!(r.profile.get(0, 1), Some(50.0));
    }

    #[test]
    fn corner_samples_match_voronoi() {
        let s = set(3, 3, &[(0, 0, 1.0), (2, 0, 2.0), (0, 2, 3.0), (2, 2, 4.0)]);
        let m = NniMetric::isotropic();
        let r = nni_predict(&s, &m).unwrap();
        for g in 0..3 {
            for t in 0..3 {
                let want = s.entries()[brute_nearest(&s, &m, g, t, None)].x;
                assert_eq!(r.profile.get(g, t), Some(want));
            }
        }
        // centre is equidistant from all four corners
        assert_eq!(r.profile.get(1, 1), Some(1.0));
    }

    #[test]
    fn row_search_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let (n_s, n_t) = (1 + trial % 7, 3 + trial * 3);
            let mut cells = Vec::new();
            for g in 0..n_s {
                for t in 0..n_t {
                    if rng.random::<f64>() < 0.3 {
                        cells.push((g, t, rng.random::<f64>()));
                    }
                }
            }
            if cells.len() < 2 {
                continue;
            }
            let s = set(n_s, n_t, &cells);
            let idx = RowIndex::new(&s);
            for r in ratio_grid() {
                let m = NniMetric::from_ratio(r);
                for g in 0..n_s {
                    for t in 0..n_t {
                        assert_eq!(idx.nearest(&s, &m, g, t, None), Some(brute_nearest(&s, &m, g, t, None)));
                    }
                }
                for (i, e) in s.entries().iter().enumerate() {
                    assert_eq!(idx.nearest(&s, &m, e.g, e.t, Some(i)), Some(brute_nearest(&s, &m, e.g, e.t, Some(i))));
                }
            }
        }
    }

    fn observed(n_s: usize, n_t: usize, f: impl Fn(usize, usize) -> f64) -> SampleSet {
        let mut cells = Vec::new();
        for g in 0..n_s {
            for t in 0..n_t {
                if (g * 7 + t * 3) % 4 != 0 {
                    cells.push((g, t, f(g, t)));
                }
            }
        }
        set(n_s, n_t, &cells)
    }

    #[test]
    fn time_only_variation_selects_time_dominant_metric() {
        let s = observed(6, 20, |_, t| 60.0 + (t as f64 * 0.9).sin() * 5.0);
        let m = nni_fit(&s).unwrap();
        assert!((m.a / m.b - 1e-3).abs() < 1e-9, "{m:?}");
    }

    #[test]
    fn space_only_variation_selects_space_dominant_metric() {
        let s = observed(6, 20, |g, _| 60.0 + g as f64 * 2.0);
        let m = nni_fit(&s).unwrap();
        assert!((m.a / m.b - 1e3).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn fitted_metric_is_the_grid_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = observed(8, 8, |_, _| 0.0);
        let s = set(8, 8, &s.entries().iter().map(|e| (e.g, e.t, rng.random::<f64>() * 10.0)).collect::<Vec<_>>());
        let m = nni_fit(&s).unwrap();
        let best = ratio_grid().into_iter().map(|r| loo_rms(&s, &NniMetric::from_ratio(r))).fold(f64::INFINITY, f64::min);
        assert_eq!(loo_rms(&s, &m), best);
    }

    #[test]
    fn too_few_samples() {
        assert!(nni_fit(&set(3, 3, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0)])).is_err());
    }
}
