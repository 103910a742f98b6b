//! A-weighting, equivalent continuous sound level and in-situ calibration.

mod calibration;
pub mod wav;

pub use calibration::{
    estimate_offset, generate_calibration_tone, CalibrationOffset, CalibrationRecord,
    TONE_SEGMENTS, TONE_SEGMENT_S, TONE_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate the default A-weighting coefficients were designed for.
pub const DESIGN_RATE_HZ: u32 = 16_000;

/// Feedforward coefficients b_0..b_10 of the tenth-order A-weighting filter.
pub const A_WEIGHT_B: [f64; 11] = [
    0.9299, -2.1889, 0.7541, 1.3229, -0.7728, 0.1025, -0.2398, -0.0098, 0.1154, -0.0103, -0.0033,
];

/// Feedback coefficients a_1..a_10 (a_0 is implicitly 1). They enter the
/// recurrence with a plus sign on past outputs.
pub const A_WEIGHT_A: [f64; 10] = [
    2.1856, -0.7403, -1.0831, 0.6863, -0.2274, 0.2507, -0.0058, -0.0821, 0.0153, 0.0004,
];

/// Mean power below which a reading is reported as silence.
pub const SILENCE_POWER: f64 = 1e-12;

/// Level reported (before the offset) for silent intervals.
pub const SILENCE_FLOOR_DB: f64 = -120.0;

/// A block of mono audio samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PcmFrame {
    samples: Vec<f64>,
    sample_rate: u32,
    start_time: f64,
}

impl PcmFrame {
    /// Builds a frame of raw microphone samples in `[-1, 1]`.
    pub fn new(samples: Vec<f64>, sample_rate: u32, start_time: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("frame has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(Error::InvalidInput(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(PcmFrame { samples, sample_rate, start_time })
    }

    /// Builds a frame of already-processed samples. A-weighted output can
    /// exceed full scale where the filter has gain, so no amplitude check is
    /// applied here.
    pub fn from_weighted(samples: Vec<f64>, sample_rate: u32, start_time: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("frame has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        Ok(PcmFrame { samples, sample_rate, start_time })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Splits the frame into consecutive chunks of `interval_s` seconds. A
    /// trailing partial chunk is kept only if `keep_partial` is set.
    pub fn chunks(&self, interval_s: f64, keep_partial: bool) -> Vec<PcmFrame> {
        let step = (interval_s * self.sample_rate as f64).round().max(1.0) as usize;
        self.samples
            .chunks(step)
            .enumerate()
            .filter(|(_, c)| keep_partial || c.len() == step)
            .map(|(i, c)| PcmFrame {
                samples: c.to_vec(),
                sample_rate: self.sample_rate,
                start_time: self.start_time + (i * step) as f64 / self.sample_rate as f64,
            })
            .collect()
    }
}

/// Tenth-order IIR filter approximating the A-weighting curve.
///
/// Implements `y[n] = sum_l b_l x[n-l] + sum_l a_l y[n-l]` and keeps the last
/// ten inputs and outputs so that consecutive frames of one stream filter
/// seamlessly. State is per stream; use one filter per audio source.
#[derive(Clone, Debug)]
pub struct AWeightFilter {
    b: [f64; 11],
    a: [f64; 10],
    design_rate: u32,
    // Most recent first.
    x_hist: [f64; 10],
    y_hist: [f64; 10],
}

impl Default for AWeightFilter {
    fn default() -> Self {
        AWeightFilter::with_coefficients(A_WEIGHT_B, A_WEIGHT_A, DESIGN_RATE_HZ)
    }
}

impl AWeightFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_coefficients(b: [f64; 11], a: [f64; 10], design_rate: u32) -> Self {
        AWeightFilter { b, a, design_rate, x_hist: [0.0; 10], y_hist: [0.0; 10] }
    }

    pub fn design_rate(&self) -> u32 {
        self.design_rate
    }

    pub fn feedforward(&self) -> &[f64; 11] {
        &self.b
    }

    pub fn feedback(&self) -> &[f64; 10] {
        &self.a
    }

    pub fn reset(&mut self) {
        self.x_hist = [0.0; 10];
        self.y_hist = [0.0; 10];
    }

    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        let mut y = self.b[0] * x;
        for l in 0..10 {
            y += self.b[l + 1] * self.x_hist[l] + self.a[l] * self.y_hist[l];
        }
        self.x_hist.copy_within(0..9, 1);
        self.x_hist[0] = x;
        self.y_hist.copy_within(0..9, 1);
        self.y_hist[0] = y;
        y
    }

    /// Filters a frame, carrying state across calls.
    pub fn apply(&mut self, frame: &PcmFrame) -> Result<PcmFrame> {
        if frame.sample_rate != self.design_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.design_rate,
                actual: frame.sample_rate,
            });
        }
        let out = frame.samples.iter().map(|&x| self.process_sample(x)).collect();
        PcmFrame::from_weighted(out, frame.sample_rate, frame.start_time)
    }

    /// Complex frequency response at `freq_hz`, as (re, im).
    pub fn response(&self, freq_hz: f64) -> (f64, f64) {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.design_rate as f64;
        let (mut nr, mut ni) = (0.0, 0.0);
        for (l, b) in self.b.iter().enumerate() {
            nr += b * (w * l as f64).cos();
            ni -= b * (w * l as f64).sin();
        }
        let (mut dr, mut di) = (1.0, 0.0);
        for (l, a) in self.a.iter().enumerate() {
            let k = (l + 1) as f64;
            dr -= a * (w * k).cos();
            di += a * (w * k).sin();
        }
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }

    /// Magnitude response in dB.
    pub fn response_db(&self, freq_hz: f64) -> f64 {
        let (re, im) = self.response(freq_hz);
        10.0 * (re * re + im * im).log10()
    }
}

/// Passes `frame` through `filter`. Rejects frames at any rate other than the
/// filter's design rate.
pub fn a_weight(frame: &PcmFrame, filter: &mut AWeightFilter) -> Result<PcmFrame> {
    filter.apply(frame)
}

/// Analytic A-weighting gain in dB (IEC 61672 pole/zero form, normalized to 0
/// dB at 1 kHz).
pub fn iec_a_weighting_db(freq_hz: f64) -> f64 {
    let f2 = freq_hz * freq_hz;
    let c1 = 20.598_997_f64.powi(2);
    let c2 = 107.652_65_f64.powi(2);
    let c3 = 737.862_23_f64.powi(2);
    let c4 = 12_194.217_f64.powi(2);
    let ra = c4 * f2 * f2 / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4));
    20.0 * ra.log10() + 2.0
}

/// One equivalent continuous level over an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeqReading {
    pub timestamp: f64,
    pub laeq: f64,
    pub interval_t: f64,
    pub mean_power: f64,
    pub silent: bool,
}

impl LeqReading {
    pub fn from_power(mean_power: f64, interval_t: f64, delta: f64, timestamp: f64) -> Self {
        let silent = mean_power < SILENCE_POWER;
        let laeq = if silent { SILENCE_FLOOR_DB + delta } else { 10.0 * mean_power.log10() + delta };
        LeqReading { timestamp, laeq, interval_t, mean_power, silent }
    }

    /// Reading of an uncalibrated device that reported `level` dB.
    pub fn from_level(level: f64, interval_t: f64, timestamp: f64) -> Self {
        Self::from_power(10f64.powf(level / 10.0), interval_t, 0.0, timestamp)
    }

    /// Level without any calibration offset.
    pub fn raw_level(&self) -> f64 {
        if self.silent {
            SILENCE_FLOOR_DB
        } else {
            10.0 * self.mean_power.log10()
        }
    }

    /// Duration-weighted pooling of several readings into one level.
    pub fn pool(readings: &[LeqReading], delta: f64) -> Option<LeqReading> {
        let total: f64 = readings.iter().map(|r| r.interval_t).sum();
        if readings.is_empty() || total <= 0.0 {
            return None;
        }
        let power = readings.iter().map(|r| r.mean_power * r.interval_t).sum::<f64>() / total;
        Some(Self::from_power(power, total, delta, readings[0].timestamp))
    }
}

/// Equivalent level of an A-weighted frame: `10 log10(mean(v_A^2)) + delta`.
pub fn leq(weighted: &PcmFrame, delta: f64) -> LeqReading {
    let power = weighted.samples.iter().map(|v| v * v).sum::<f64>() / weighted.len() as f64;
    LeqReading::from_power(power, weighted.duration(), delta, weighted.start_time)
}

/// A-weights a raw stream and reports one reading per `interval_s` seconds.
#[derive(Clone, Debug)]
pub struct LeqMeter {
    filter: AWeightFilter,
    pub delta: f64,
    pub interval_s: f64,
}

impl LeqMeter {
    pub fn new(delta: f64) -> Self {
        LeqMeter { filter: AWeightFilter::default(), delta, interval_s: 1.0 }
    }

    pub fn with_filter(filter: AWeightFilter, delta: f64, interval_s: f64) -> Self {
        LeqMeter { filter, delta, interval_s }
    }

    /// Readings for every complete interval in `frame`.
    pub fn measure(&mut self, frame: &PcmFrame) -> Result<Vec<LeqReading>> {
        let weighted = self.filter.apply(frame)?;
        Ok(weighted.chunks(self.interval_s, false).iter().map(|c| leq(c, self.delta)).collect())
    }
}

/// Writes readings as `timestamp,laeq_dba,interval_s` CSV lines.
pub fn write_leq_csv<W: std::io::Write>(out: W, readings: &[LeqReading]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "laeq_dba", "interval_s"])?;
    for r in readings {
        w.write_record([r.timestamp.to_string(), r.laeq.to_string(), r.interval_t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
