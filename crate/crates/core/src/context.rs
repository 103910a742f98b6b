//! Phone-carrying context from accelerometer z-axis windows and proximity
//! triggers. Only hand-held windows open the recording gate.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::acoustics::LeqReading;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_THRESHOLD: u32 = 10;
pub const DEFAULT_DELTA_S: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextLabel {
    Hand,
    PocketOrBag,
}

/// Label of a span of a sensor stream. `Unknown` marks gaps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamLabel {
    Hand,
    PocketOrBag,
    Unknown,
}

impl From<ContextLabel> for StreamLabel {
    fn from(l: ContextLabel) -> Self {
        match l {
            ContextLabel::Hand => StreamLabel::Hand,
            ContextLabel::PocketOrBag => StreamLabel::PocketOrBag,
        }
    }
}

impl std::fmt::Display for StreamLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StreamLabel::Hand => "hand",
            StreamLabel::PocketOrBag => "pocket_or_bag",
            StreamLabel::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub start: f64,
    pub z_axis: Vec<f64>,
    pub prox_triggers: u32,
    pub delta_s: u32,
}

impl SensorWindow {
    pub fn new(start: f64, z_axis: Vec<f64>, prox_triggers: u32, delta_s: u32) -> Result<Self> {
        let w = SensorWindow { start, z_axis, prox_triggers, delta_s };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_axis.is_empty() {
            return Err(Error::InvalidInput("sensor window has no accelerometer readings".into()));
        }
        if self.z_axis.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidInput("non-finite accelerometer reading".into()));
        }
        check_delta(self.delta_s)
    }

    pub fn end(&self) -> f64 {
        self.start + self.delta_s as f64
    }
}

fn check_delta(delta_s: u32) -> Result<()> {
    if delta_s != 30 && delta_s != 60 {
        return Err(Error::InvalidInput(format!("window length {delta_s} s must be 30 or 60")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[default]
    Mean,
    Median,
    P75,
}

/// Percentile with linear interpolation between order statistics (position
/// `p (n - 1)` in the sorted data).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("percentile of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub fn accel_feature(w: &SensorWindow, kind: FeatureKind) -> Result<f64> {
    if w.z_axis.is_empty() {
        return Err(Error::InvalidInput("sensor window has no accelerometer readings".into()));
    }
    match kind {
        FeatureKind::Mean => Ok(w.z_axis.iter().sum::<f64>() / w.z_axis.len() as f64),
        FeatureKind::Median => percentile(&w.z_axis, 0.5),
        FeatureKind::P75 => percentile(&w.z_axis, 0.75),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub training: Vec<(f64, ContextLabel)>,
    pub k: usize,
    pub feature_kind: FeatureKind,
}

impl KnnModel {
    pub fn new(training: Vec<(f64, ContextLabel)>, k: usize, feature_kind: FeatureKind) -> Result<Self> {
        let m = KnnModel { training, k, feature_kind };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(Error::InvalidInput(format!("k = {} must be odd and positive", self.k)));
        }
        if self.k > self.training.len() {
            return Err(Error::InsufficientSamples { needed: self.k, got: self.training.len() });
        }
        if self.training.iter().any(|(f, _)| !f.is_finite()) {
            return Err(Error::InvalidInput("non-finite training feature".into()));
        }
        Ok(())
    }

    /// Builds a model from labelled windows.
    pub fn fit(data: &[(SensorWindow, ContextLabel)], k: usize, feature_kind: FeatureKind) -> Result<Self> {
        let training =
            data.iter().map(|(w, l)| Ok((accel_feature(w, feature_kind)?, *l))).collect::<Result<Vec<_>>>()?;
        Self::new(training, k, feature_kind)
    }
}

fn vote<'a>(training: impl Iterator<Item = (usize, &'a (f64, ContextLabel))>, k: usize, feature: f64) -> ContextLabel {
    let mut d: Vec<(f64, usize, ContextLabel)> = training.map(|(i, &(f, l))| ((f - feature).abs(), i, l)).collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    let hand = d[..k].iter().filter(|x| x.2 == ContextLabel::Hand).count();
    if 2 * hand > k {
        ContextLabel::Hand
    } else {
        ContextLabel::PocketOrBag
    }
}

/// Majority label of the `k` nearest training features. Distance ties go to
/// the lower training index.
pub fn knn_classify(model: &KnnModel, feature: f64) -> ContextLabel {
    vote(model.training.iter().enumerate(), model.k, feature)
}

/// Proximity override: enough triggers force `Hand`; otherwise the
/// accelerometer label stands.
pub fn fuse(knn_label: ContextLabel, prox_triggers: u32, threshold: u32) -> ContextLabel {
    if prox_triggers >= threshold {
        ContextLabel::Hand
    } else {
        knn_label
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LooConfig {
    pub k: usize,
    pub feature_kind: FeatureKind,
    /// Proximity threshold; `None` classifies on the accelerometer alone.
    pub threshold: Option<u32>,
}

impl Default for LooConfig {
    fn default() -> Self {
        LooConfig { k: DEFAULT_K, feature_kind: FeatureKind::Mean, threshold: Some(DEFAULT_THRESHOLD) }
    }
}

/// Leave-one-out accuracy in percent.
pub fn loo_accuracy(dataset: &[(SensorWindow, ContextLabel)], cfg: &LooConfig) -> Result<f64> {
    if cfg.k == 0 || cfg.k % 2 == 0 {
        return Err(Error::InvalidInput(format!("k = {} must be odd and positive", cfg.k)));
    }
    if dataset.len() < (cfg.k + 1).max(2) {
        return Err(Error::InsufficientSamples { needed: (cfg.k + 1).max(2), got: dataset.len() });
    }
    let training = dataset
        .iter()
        .map(|(w, l)| Ok((accel_feature(w, cfg.feature_kind)?, *l)))
        .collect::<Result<Vec<_>>>()?;
    let correct = dataset
        .iter()
        .enumerate()
        .filter(|(i, (w, truth))| {
            let others = training.iter().enumerate().filter(|(j, _)| j != i);
            let mut label = vote(others, cfg.k, training[*i].0);
            if let Some(th) = cfg.threshold {
                label = fuse(label, w.prox_triggers, th);
            }
            label == *truth
        })
        .count();
    Ok(100.0 * correct as f64 / dataset.len() as f64)
}

/// Everything needed to label a sensor stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextModel {
    pub training: Vec<(f64, ContextLabel)>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub feature_kind: FeatureKind,
    #[serde(default = "default_threshold")]
    pub threshold: u32,
    #[serde(default = "default_delta")]
    pub delta_s: u32,
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_threshold() -> u32 {
    DEFAULT_THRESHOLD
}
fn default_delta() -> u32 {
    DEFAULT_DELTA_S
}

impl ContextModel {
    pub fn fit(data: &[(SensorWindow, ContextLabel)], k: usize, feature_kind: FeatureKind) -> Result<Self> {
        let knn = KnnModel::fit(data, k, feature_kind)?;
        let delta_s = data.first().map_or(DEFAULT_DELTA_S, |(w, _)| w.delta_s);
        Ok(ContextModel { training: knn.training, k, feature_kind, threshold: DEFAULT_THRESHOLD, delta_s })
    }

    pub fn knn(&self) -> Result<KnnModel> {
        KnnModel::new(self.training.clone(), self.k, self.feature_kind)
    }

    pub fn validate(&self) -> Result<()> {
        self.knn()?;
        check_delta(self.delta_s)?;
        if self.threshold == 0 {
            return Err(Error::InvalidInput("proximity threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ContextModel = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        m.validate()?;
        Ok(m)
    }

    pub fn label(&self, w: &SensorWindow) -> Result<ContextLabel> {
        let knn = self.knn()?;
        Ok(fuse(knn_classify(&knn, accel_feature(w, self.feature_kind)?), w.prox_triggers, self.threshold))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: f64,
    pub len_s: f64,
    pub label: StreamLabel,
}

impl LabeledSpan {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.len_s
    }
}

/// Labels consecutive windows. Missing time between windows becomes an
/// `Unknown` span. Windows must be ordered and non-overlapping.
pub fn detect_switch(windows: &[SensorWindow], model: &ContextModel) -> Result<Vec<LabeledSpan>> {
    model.validate()?;
    let knn = model.knn()?;
    let mut out = Vec::with_capacity(windows.len());
    let mut prev_end: Option<f64> = None;
    for w in windows {
        w.validate()?;
        if let Some(end) = prev_end {
            if w.start < end - 1e-9 {
                return Err(Error::InvalidInput(format!("window at {} overlaps the previous one", w.start)));
            }
            if w.start > end + 1e-9 {
                out.push(LabeledSpan { start: end, len_s: w.start - end, label: StreamLabel::Unknown });
            }
        }
        let label = fuse(knn_classify(&knn, accel_feature(w, model.feature_kind)?), w.prox_triggers, model.threshold);
        out.push(LabeledSpan { start: w.start, len_s: w.delta_s as f64, label: label.into() });
        prev_end = Some(w.end());
    }
    Ok(out)
}

/// Recording gate driven by the latest stream label; open only on `Hand`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordingGate {
    latest: StreamLabel,
}

impl Default for RecordingGate {
    fn default() -> Self {
        RecordingGate { latest: StreamLabel::Unknown }
    }
}

impl RecordingGate {
    pub fn observe(&mut self, label: StreamLabel) {
        self.latest = label;
    }

    pub fn is_open(&self) -> bool {
        self.latest == StreamLabel::Hand
    }
}

/// Keeps readings whose timestamp falls in a hand-held span; readings outside
/// every span are dropped.
pub fn gate(spans: &[LabeledSpan], readings: &[LeqReading]) -> Vec<LeqReading> {
    let mut g = RecordingGate::default();
    readings
        .iter()
        .filter(|r| {
            g.observe(spans.iter().find(|s| s.contains(r.timestamp)).map_or(StreamLabel::Unknown, |s| s.label));
            g.is_open()
        })
        .copied()
        .collect()
}

/// One row of a raw sensor trace. `prox_state` is 1 for near, 0 for far;
/// the CSV also accepts `near`/`far` and `true`/`false`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub z: f64,
    #[serde(deserialize_with = "prox_state")]
    pub prox_state: u8,
}

fn prox_state<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<u8, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "near" | "true" => Ok(1),
        "0" | "far" | "false" => Ok(0),
        other => Err(serde::de::Error::custom(format!("proximity state {other:?} is not near/far or 1/0"))),
    }
}

pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(input).deserialize() {
        let row: TraceRow = r?;
        if !row.t.is_finite() || !row.z.is_finite() || row.prox_state > 1 {
            return Err(Error::InvalidInput(format!("bad trace row {row:?}")));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Cuts a time-ordered trace into `delta_s`-second windows aligned to the
/// first row. A trigger is a far-to-near transition, counted in the window of
/// the row where "near" appears. Windows with no rows are left out, so they
/// show up as gaps.
pub fn windows_from_trace(rows: &[TraceRow], delta_s: u32) -> Result<Vec<SensorWindow>> {
    check_delta(delta_s)?;
    if rows.windows(2).any(|p| p[1].t < p[0].t) {
        return Err(Error::InvalidInput("trace rows are not time-ordered".into()));
    }
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let t0 = first.t;
    let d = delta_s as f64;
    let mut out: Vec<SensorWindow> = Vec::new();
    let mut prev_state: Option<u8> = None;
    for r in rows {
        let idx = ((r.t - t0) / d).floor();
        let start = t0 + idx * d;
        if out.last().is_none_or(|w| w.start != start) {
            out.push(SensorWindow { start, z_axis: Vec::new(), prox_triggers: 0, delta_s });
        }
        let w = out.last_mut().expect("window pushed above");
        w.z_axis.push(r.z);
        if prev_state == Some(0) && r.prox_state == 1 {
            w.prox_triggers += 1;
        }
        prev_state = Some(r.prox_state);
    }
    Ok(out)
}

/// Class-conditional distributions of the synthetic two-cluster dataset.
/// Each window draws its own z level around the class mean, then per-second
/// readings scatter around that level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub hand_mean: f64,
    pub hand_within_sd: f64,
    pub pocket_mean: f64,
    pub pocket_within_sd: f64,
    pub between_sd: f64,
    /// Share of hand windows with active screen use.
    pub hand_active_prob: f64,
    pub hand_active_triggers: f64,
    pub hand_idle_triggers: f64,
    pub pocket_triggers: f64,
    pub delta_s: u32,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            hand_mean: 7.0,
            hand_within_sd: 4.0,
            pocket_mean: 5.0,
            pocket_within_sd: 6.0,
            between_sd: 0.8,
            hand_active_prob: 0.6,
            hand_active_triggers: 14.0,
            hand_idle_triggers: 2.0,
            pocket_triggers: 1.0,
            delta_s: DEFAULT_DELTA_S,
        }
    }
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    Poisson::new(lambda).expect("positive rate").sample(rng) as u32
}

pub fn synth_window<R: Rng + ?Sized>(spec: &ClusterSpec, label: ContextLabel, start: f64, rng: &mut R) -> SensorWindow {
    let (mean, within) = match label {
        ContextLabel::Hand => (spec.hand_mean, spec.hand_within_sd),
        ContextLabel::PocketOrBag => (spec.pocket_mean, spec.pocket_within_sd),
    };
    let level = Normal::new(mean, spec.between_sd).expect("finite sd").sample(rng);
    let noise = Normal::new(0.0, within).expect("finite sd");
    let z_axis = (0..spec.delta_s).map(|_| level + noise.sample(rng)).collect();
    let prox_triggers = match label {
        ContextLabel::Hand if rng.random_bool(spec.hand_active_prob) => poisson(spec.hand_active_triggers, rng),
        ContextLabel::Hand => poisson(spec.hand_idle_triggers, rng),
        ContextLabel::PocketOrBag => poisson(spec.pocket_triggers, rng),
    };
    SensorWindow { start, z_axis, prox_triggers, delta_s: spec.delta_s }
}

/// `n_per_class` windows of each context, interleaved.
pub fn synth_dataset<R: Rng + ?Sized>(
    spec: &ClusterSpec,
    n_per_class: usize,
    rng: &mut R,
) -> Vec<(SensorWindow, ContextLabel)> {
    let d = spec.delta_s as f64;
    (0..2 * n_per_class)
        .map(|i| {
            let label = if i % 2 == 0 { ContextLabel::Hand } else { ContextLabel::PocketOrBag };
            (synth_window(spec, label, i as f64 * d, rng), label)
        })
        .collect()
}
