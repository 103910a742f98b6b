//! Synthetic ground truth and crowdsourced sampling campaigns.
//!
//! Pedestrians walk a one-dimensional road following a three-state Markov
//! chain (forward, stationary, backward) with speeds uniform in
//! `[v_min, v_max]`. Every visited lattice cell is contributed with
//! probability `p`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::{compressibility, TransformBasis, TransformKind};
use crate::error::{Error, Result};
use crate::gridref::{Lattice, NoiseProfile};
use crate::reconstruct::{Sample, SampleSet};

/// How closely `synth_profile` must land on its target fraction.
pub const FRACTION_TOLERANCE: f64 = 0.02;

fn default_target_db() -> f64 {
    1.0
}

/// Shape of a synthetic noise profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub n_s: usize,
    pub n_t: usize,
    /// Share of DCT coefficients needed to approximate the profile within
    /// `target_db` RMS.
    pub rho: f64,
    pub mean: f64,
    pub std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_target_db")]
    pub target_db: f64,
}

impl ProfileSpec {
    pub fn new(n_s: usize, n_t: usize, rho: f64, mean: f64, std: f64, seed: u64) -> Self {
        ProfileSpec { n_s, n_t, rho, mean, std, seed, target_db: 1.0 }
    }

    /// The four reference profiles: (mean, std, coefficient fraction).
    pub const REFERENCE_ROWS: [(f64, f64, f64); 4] =
        [(63.05, 3.15, 0.2283), (65.40, 3.68, 0.3015), (70.48, 5.43, 0.3733), (73.22, 6.79, 0.4391)];

    /// A spec mirroring reference row `row` (0-based) on an `n_s x n_t` grid.
    pub fn reference(row: usize, n_s: usize, n_t: usize, seed: u64) -> Self {
        let (mean, std, rho) = Self::REFERENCE_ROWS[row];
        ProfileSpec::new(n_s, n_t, rho, mean, std, seed)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_s * self.n_t;
        if n == 0 {
            return Err(Error::InvalidInput("profile needs at least one cell".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidInput(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.std >= 0.0) || !self.mean.is_finite() || !(self.target_db > 0.0) {
            return Err(Error::InvalidInput("std must be >= 0, mean finite, target positive".into()));
        }
        if self.rho * (n as f64) < 1.0 - 1e-9 {
            return Err(Error::Infeasible(format!("rho * N = {} is below one coefficient", self.rho * n as f64)));
        }
        Ok(())
    }
}

/// Energy beyond the first `keep` terms of `r^-alpha`, r = 1..=m, relative to
/// the total.
fn tail_share(alpha: f64, m: usize, keep: usize) -> f64 {
    let mut total = 0.0;
    let mut tail = 0.0;
    for r in 1..=m {
        let e = (r as f64).powf(-2.0 * alpha);
        total += e;
        if r > keep {
            tail += e;
        }
    }
    tail / total
}

/// Generates a profile whose DCT coefficient magnitudes decay as a power law
/// `c_r ~ r^-alpha` over the AC ranks. The exponent is solved so that keeping
/// the DC term plus the `ceil(rho N) - 1` largest AC terms leaves exactly the
/// target RMS error; positions and signs of the AC terms are random.
pub fn synth_profile(spec: &ProfileSpec) -> Result<NoiseProfile> {
    spec.validate()?;
    let n = spec.n_s * spec.n_t;
    let lattice = Lattice::abstract_grid(spec.n_s, spec.n_t);
    let k = ((spec.rho * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let ac_energy = n as f64 * spec.std * spec.std;
    let allowed = n as f64 * spec.target_db * spec.target_db;

    if ac_energy <= allowed || n == 1 {
        // any such profile is approximated by its mean alone
        if k > 1 && spec.std > 0.0 {
            return Err(Error::Infeasible(format!(
                "std {} is within the {} dB target, so the fraction is 1/N, not {}",
                spec.std, spec.target_db, spec.rho
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut coef = vec![0.0; n];
        coef[0] = spec.mean * (n as f64).sqrt();
        if n > 1 && spec.std > 0.0 {
            // spread the AC energy evenly
            let c = (ac_energy / (n - 1) as f64).sqrt();
            for v in coef.iter_mut().skip(1) {
                *v = if rng.random::<bool>() { c } else { -c };
            }
        }
        let x = TransformBasis::new(spec.n_s, spec.n_t, TransformKind::Dct).plan().inverse(&coef)?;
        return NoiseProfile::from_dense(lattice, x);
    }

    let m = n - 1;
    // just below the target so rounding cannot push the error over it
    let want = allowed * (1.0 - 1e-6) / ac_energy;
    if k > m || tail_share(0.0, m, k - 1) < want {
        return Err(Error::Infeasible(format!(
            "cannot need {k} of {n} coefficients for {} dB with std {}",
            spec.target_db, spec.std
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while tail_share(hi, m, k - 1) > want {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Infeasible("decay exponent diverged".into()));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tail_share(mid, m, k - 1) > want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = hi;
    let raw: Vec<f64> = (1..=m).map(|r| (r as f64).powf(-alpha)).collect();
    let norm = (ac_energy / raw.iter().map(|c| c * c).sum::<f64>()).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let positions = sample(&mut rng, m, m);
    let mut coef = vec![0.0; n];
    coef[0] = spec.mean * (n as f64).sqrt();
    for (c, pos) in raw.iter().zip(positions.iter()) {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        coef[pos + 1] = sign * c * norm;
    }
    let x = TransformBasis::new(spec.n_s, spec.n_t, TransformKind::Dct).plan().inverse(&coef)?;
    let profile = NoiseProfile::from_dense(lattice, x)?;

    let report = compressibility(&profile, &[spec.target_db], TransformKind::Dct)?;
    let got = report.fractions[0].fraction;
    if (got - spec.rho).abs() > FRACTION_TOLERANCE {
        return Err(Error::Infeasible(format!("generated fraction {got:.4} misses target {:.4}", spec.rho)));
    }
    log::debug!("synth profile alpha {alpha:.4}, fraction {got:.4}");
    Ok(profile)
}

/// Walking state of the Markov chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Stationary,
    Backward,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Forward, Direction::Stationary, Direction::Backward];

    pub fn index(self) -> usize {
        self as usize
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Stationary => 0.0,
            Direction::Backward => -1.0,
        }
    }

    fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
            Direction::Stationary => Direction::Stationary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityParams {
    /// Row-stochastic matrix over (forward, stationary, backward).
    pub transition: [[f64; 3]; 3],
    pub v_min: f64,
    pub v_max: f64,
    /// Step period in seconds.
    pub step_s: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            transition: [[0.7, 0.2, 0.1], [0.15, 0.7, 0.15], [0.1, 0.2, 0.7]],
            v_min: 0.0,
            v_max: 1.31,
            step_s: 1.0,
        }
    }
}

impl MobilityParams {
    pub fn validate(&self) -> Result<()> {
        for row in &self.transition {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("transition row {row:?} is not a distribution")));
            }
        }
        if !(0.0 <= self.v_min && self.v_min <= self.v_max) || !self.v_max.is_finite() {
            return Err(Error::InvalidInput("speeds must satisfy 0 <= v_min <= v_max".into()));
        }
        if !(self.step_s > 0.0) {
            return Err(Error::InvalidInput("step period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Distance along the road in metres.
    pub position: f64,
    pub direction: Direction,
}

/// One transition: draw the next direction, move, reflect at the road ends.
pub fn step_agent<R: Rng + ?Sized>(state: AgentState, params: &MobilityParams, road_len: f64, rng: &mut R) -> AgentState {
    let row = &params.transition[state.direction.index()];
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut direction = Direction::Backward;
    for (d, p) in Direction::ALL.iter().zip(row) {
        acc += p;
        if u < acc {
            direction = *d;
            break;
        }
    }
    let speed = if params.v_max > params.v_min { rng.random_range(params.v_min..=params.v_max) } else { params.v_min };
    let mut position = state.position + direction.sign() * speed * params.step_s;
    // a step is never longer than the road, so one reflection suffices
    if position > road_len {
        position = (2.0 * road_len - position).max(0.0);
        direction = direction.reversed();
    } else if position < 0.0 {
        position = (-position).min(road_len);
        direction = direction.reversed();
    }
    AgentState { position, direction }
}

/// Stationary distribution of a 3-state chain.
pub fn stationary_distribution(p: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut pi = [1.0 / 3.0; 3];
    for _ in 0..100_000 {
        let mut next = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                next[j] += pi[i] * p[i][j];
            }
        }
        let diff: f64 = (0..3).map(|i| (next[i] - pi[i]).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub positions: Vec<f64>,
    /// Visited cells `W` as (g, t).
    pub visited: Vec<(usize, usize)>,
    /// Contributed cells, a subset of `visited`.
    pub contributed: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct Campaign {
    pub samples: SampleSet,
    pub traces: Vec<AgentTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub n_agents: usize,
    pub contribute_prob: f64,
    pub seed: u64,
    /// Standard deviation of additive sensor noise (dB); none by default.
    #[serde(default)]
    pub noise_db: Option<f64>,
}

/// Spatial cell (0-based) holding road position `d`: cell `i` (1-based)
/// covers `((i-1) omega, i omega]`, position 0 belongs to the first cell.
pub fn cell_of_position(d: f64, omega: f64, n_s: usize) -> usize {
    let one_based = (d / omega).ceil().max(1.0) as usize;
    one_based.min(n_s) - 1
}

fn agent_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64 + 1);
    rng
}

/// Simulates `n_agents` walkers for one step per temporal cell. Each agent has
/// its own random stream derived from the seed. The sample value of a
/// contributed cell is the ground truth (plus optional sensor noise).
pub fn run_campaign(truth: &NoiseProfile, params: &MobilityParams, cfg: &CampaignConfig) -> Result<Campaign> {
    params.validate()?;
    if !(0.0..=1.0).contains(&cfg.contribute_prob) {
        return Err(Error::InvalidInput(format!("contribution probability {} not in [0, 1]", cfg.contribute_prob)));
    }
    let lattice = truth.lattice();
    let road = lattice.n_s as f64 * lattice.omega;
    if params.v_max * params.step_s > road {
        return Err(Error::InvalidInput("one step may not exceed the road length".into()));
    }
    let noise = match cfg.noise_db {
        Some(s) if s > 0.0 => Some(Normal::new(0.0, s).map_err(|e| Error::InvalidInput(e.to_string()))?),
        _ => None,
    };
    let mut taken: Vec<Option<f64>> = vec![None; lattice.len()];
    let mut traces = Vec::with_capacity(cfg.n_agents);
    for agent in 0..cfg.n_agents {
        let mut rng = agent_rng(cfg.seed, agent);
        let mut state = AgentState {
            position: rng.random_range(0.0..=road),
            direction: Direction::ALL[rng.random_range(0..3)],
        };
        let mut trace = AgentTrace::default();
        for t in 0..lattice.n_t {
            if t > 0 {
                state = step_agent(state, params, road, &mut rng);
            }
            let g = cell_of_position(state.position, lattice.omega, lattice.n_s);
            trace.positions.push(state.position);
            trace.visited.push((g, t));
            let contribute = rng.random::<f64>() < cfg.contribute_prob;
            let jitter = noise.map(|n| n.sample(&mut rng)).unwrap_or(0.0);
            if contribute {
                trace.contributed.push((g, t));
                let idx = lattice.index(g, t);
                if taken[idx].is_none() {
                    let x = truth.get(g, t).ok_or(Error::UndefinedCells)?;
                    taken[idx] = Some(x + jitter);
                }
            }
        }
        traces.push(trace);
    }
    let entries = taken
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            v.map(|x| {
                let (g, t) = lattice.cell(i);
                Sample { g, t, x }
            })
        })
        .collect();
    Ok(Campaign { samples: SampleSet::new(lattice.clone(), entries)?, traces })
}

/// Number of observed cells for a missing fraction: `ceil((1 - f) N)`.
pub fn observed_count(n: usize, missing_frac: f64) -> usize {
    (((1.0 - missing_frac) * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Observes a uniformly random subset of `ceil((1 - f) N)` cells.
pub fn mask_uniform(profile: &NoiseProfile, missing_frac: f64, seed: u64) -> Result<SampleSet> {
    if !(0.0..1.0).contains(&missing_frac) {
        return Err(Error::InvalidInput(format!("missing fraction {missing_frac} not in [0, 1)")));
    }
    let lattice = profile.lattice();
    let n = lattice.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, observed_count(n, missing_frac)).into_vec();
    idx.sort_unstable();
    let entries = idx
        .into_iter()
        .map(|i| {
            let (g, t) = lattice.cell(i);
            profile.get(g, t).map(|x| Sample { g, t, x }).ok_or(Error::UndefinedCells)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(lattice.clone(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_profile_for_single_coefficient() {
        let spec = ProfileSpec::new(4, 5, 1.0 / 20.0, 61.0, 0.0, 3);
        let p = synth_profile(&spec).unwrap();
        assert!(p.dense().unwrap().iter().all(|v| (v - 61.0).abs() < 1e-9));
    }

    #[test]
    fn infeasible_specs() {
        assert!(synth_profile(&ProfileSpec::new(10, 10, 0.001, 60.0, 3.0, 0)).is_err());
        assert!(synth_profile(&ProfileSpec::new(10, 10, 0.5, 60.0, 0.5, 0)).is_err());
        assert!(synth_profile(&ProfileSpec::new(10, 10, 0.0, 60.0, 3.0, 0)).is_err());
    }

    #[test]
    fn reference_rows_hit_mean_std_and_fraction() {
        for row in 0..4 {
            let spec = ProfileSpec::reference(row, 6, 200, 11);
            let p = synth_profile(&spec).unwrap();
            let (mean, std) = p.mean_std().unwrap();
            assert!((mean - spec.mean).abs() < 1e-9);
            assert!((std - spec.std).abs() < 1e-9);
            let f = compressibility(&p, &[1.0], TransformKind::Dct).unwrap().fractions[0].fraction;
            assert!((f - spec.rho).abs() <= 0.005, "row {row}: {f}");
        }
    }

    #[test]
    fn same_seed_same_profile() {
        let spec = ProfileSpec::reference(0, 6, 50, 7);
        assert_eq!(synth_profile(&spec).unwrap(), synth_profile(&spec).unwrap());
        let other = ProfileSpec { seed: 8, ..spec };
        assert_ne!(synth_profile(&ProfileSpec::reference(0, 6, 50, 7)).unwrap(), synth_profile(&other).unwrap());
    }

    #[test]
    fn identity_chain_walks_forward() {
        let params = MobilityParams { transition: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = AgentState { position: 0.0, direction: Direction::Forward };
        for _ in 0..100 {
            let next = step_agent(s, &params, 1e6, &mut rng);
            assert!(next.position >= s.position);
            assert!(next.position - s.position <= params.v_max * params.step_s);
            s = next;
        }
    }

    #[test]
    fn stationary_chain_stays_put() {
        let params = MobilityParams { transition: [[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = AgentState { position: 12.5, direction: Direction::Stationary };
        for _ in 0..100 {
            s = step_agent(s, &params, 60.0, &mut rng);
            assert_eq!(s.position, 12.5);
        }
    }

    #[test]
    fn reflection_keeps_walker_on_road() {
        let params = MobilityParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = AgentState { position: 0.5, direction: Direction::Backward };
        for _ in 0..10_000 {
            let next = step_agent(s, &params, 5.0, &mut rng);
            assert!((0.0..=5.0).contains(&next.position));
            assert!((next.position - s.position).abs() <= params.v_max * params.step_s + 1e-12);
            s = next;
        }
    }

    #[test]
    fn default_stationary_distribution() {
        let pi = stationary_distribution(&MobilityParams::default().transition);
        assert!((pi[0] - 0.3).abs() < 1e-9 && (pi[1] - 0.4).abs() < 1e-9 && (pi[2] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn cell_boundaries() {
        assert_eq!(cell_of_position(0.0, 10.0, 6), 0);
        assert_eq!(cell_of_position(10.0, 10.0, 6), 0);
        assert_eq!(cell_of_position(10.01, 10.0, 6), 1);
        assert_eq!(cell_of_position(60.0, 10.0, 6), 5);
    }

    #[test]
    fn campaign_edge_probabilities() {
        let truth = synth_profile(&ProfileSpec::reference(0, 6, 100, 1)).unwrap();
        let params = MobilityParams::default();
        let none = run_campaign(&truth, &params, &CampaignConfig { n_agents: 5, contribute_prob: 0.0, seed: 1, noise_db: None }).unwrap();
        assert!(none.samples.is_empty());
        let all = run_campaign(&truth, &params, &CampaignConfig { n_agents: 200, contribute_prob: 1.0, seed: 1, noise_db: None }).unwrap();
        assert_eq!(all.samples.len(), truth.lattice().len());
        for e in all.samples.entries() {
            assert_eq!(Some(e.x), truth.get(e.g, e.t));
        }
        for tr in &all.traces {
            assert_eq!(tr.visited, tr.contributed);
        }
    }

    #[test]
    fn campaign_is_reproducible() {
        let truth = synth_profile(&ProfileSpec::reference(1, 6, 100, 2)).unwrap();
        let cfg = CampaignConfig { n_agents: 5, contribute_prob: 0.6, seed: 42, noise_db: None };
        let a = run_campaign(&truth, &MobilityParams::default(), &cfg).unwrap();
        let b = run_campaign(&truth, &MobilityParams::default(), &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.traces, b.traces);
    }

    #[test]
    fn mask_counts_and_determinism() {
        let truth = synth_profile(&ProfileSpec::new(10, 10, 0.3, 60.0, 3.0, 0)).unwrap();
        assert_eq!(mask_uniform(&truth, 0.0, 1).unwrap().len(), 100);
        assert_eq!(mask_uniform(&truth, 0.9, 1).unwrap().len(), 10);
        assert_eq!(mask_uniform(&truth, 0.7, 1).unwrap().len(), 30);
        assert_eq!(mask_uniform(&truth, 0.5, 9).unwrap(), mask_uniform(&truth, 0.5, 9).unwrap());
        assert!(mask_uniform(&truth, 1.0, 1).is_err());
    }
}
