use std::f64::consts::PI;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{LeqReading, PcmFrame};
use crate::error::{Error, Result};

pub const TONE_VERSION: &str = "1khz-5x60s-v1";
pub const TONE_SEGMENTS: usize = 5;
/// Each segment is this long: half tone, half silence.
pub const TONE_SEGMENT_S: usize = 60;
const TONE_FREQ_HZ: f64 = 1000.0;
const TONE_STEP: f64 = 0.2;
/// Calibrations whose per-second differences spread more than this are rejected.
const MAX_DIFF_STD_DB: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOffset {
    pub delta: f64,
    pub estimated_at: f64,
    pub tone_version: String,
}

/// Persisted calibration: `{device_id, delta, estimated_at, tone_version}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub device_id: String,
    #[serde(flatten)]
    pub offset: CalibrationOffset,
}

/// Five one-minute segments: 30 s of a 1 kHz sine at amplitude 0.2·m
/// followed by 30 s of silence, for m = 1..5.
pub fn generate_calibration_tone(sample_rate: u32) -> Result<PcmFrame> {
    if sample_rate < 8_000 {
        return Err(Error::InvalidInput(format!(
            "calibration tone needs at least 8 kHz, got {sample_rate} Hz"
        )));
    }
    let rate = sample_rate as usize;
    let seg = TONE_SEGMENT_S * rate;
    let half = seg / 2;
    let mut samples = vec![0.0; TONE_SEGMENTS * seg];
    for m in 0..TONE_SEGMENTS {
        let amp = TONE_STEP * (m + 1) as f64;
        for i in 0..half {
            let n = m * seg + i;
            samples[n] = amp * (2.0 * PI * TONE_FREQ_HZ * n as f64 / rate as f64).sin();
        }
    }
    PcmFrame::new(samples, sample_rate, 0.0)
}

/// Mean of `reference - recorded` over aligned, non-silent seconds.
///
/// Recorded readings are compared by their raw level so that any offset
/// already applied to them does not leak into the estimate.
pub fn estimate_offset(recorded: &[LeqReading], reference: &[f64]) -> Result<CalibrationOffset> {
    if recorded.len() != reference.len() {
        return Err(Error::LengthMismatch { expected: reference.len(), actual: recorded.len() });
    }
    let diffs: Vec<f64> = recorded
        .iter()
        .zip(reference)
        .filter(|(r, _)| !r.silent)
        .map(|(r, reference)| reference - r.raw_level())
        .collect();
    if diffs.is_empty() {
        return Err(Error::Calibration("no aligned tone seconds".into()));
    }
    let n = diffs.len() as f64;
    let delta = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - delta).powi(2)).sum::<f64>() / n;
    if var.sqrt() > MAX_DIFF_STD_DB {
        return Err(Error::Calibration(format!(
            "per-second differences spread {:.2} dB (limit {MAX_DIFF_STD_DB} dB)",
            var.sqrt()
        )));
    }
    let estimated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    Ok(CalibrationOffset { delta, estimated_at, tone_version: TONE_VERSION.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak_around(frame: &PcmFrame, t: f64) -> f64 {
        let rate = frame.sample_rate() as f64;
        let start = (t * rate) as usize;
        frame.samples()[start..start + 64].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn tone_layout() {
        let tone = generate_calibration_tone(8_000).unwrap();
        assert_eq!(tone.duration(), 300.0);
        assert!((peak_around(&tone, 15.0) - 0.2).abs() < 1e-9);
        assert_eq!(peak_around(&tone, 45.0), 0.0);
        assert!((peak_around(&tone, 255.0) - 1.0).abs() < 1e-9);
        assert!((peak_around(&tone, 135.0) - 0.6).abs() < 1e-9);
    }

    #[test]
    fn tone_rejects_low_rates() {
        assert!(generate_calibration_tone(4_000).is_err());
    }

    fn readings(levels: &[f64]) -> Vec<LeqReading> {
        levels.iter().enumerate().map(|(i, &l)| LeqReading::from_level(l, 1.0, i as f64)).collect()
    }

    #[test]
    fn offset_examples() {
        let reference = [60.0, 66.0, 72.0];
        let same = estimate_offset(&readings(&reference), &reference).unwrap();
        assert!(same.delta.abs() < 1e-12);

        let shifted: Vec<f64> = reference.iter().map(|r| r - 12.0).collect();
        assert!((estimate_offset(&readings(&shifted), &reference).unwrap().delta - 12.0).abs() < 1e-12);

        let d = estimate_offset(&readings(&[58.0, 63.0, 70.0]), &reference).unwrap().delta;
        assert!((d - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn offset_skips_silence_and_rejects_empty() {
        let mut r = readings(&[50.0, 50.0]);
        r.push(LeqReading::from_power(0.0, 1.0, 0.0, 2.0));
        let d = estimate_offset(&r, &[60.0, 60.0, 0.0]).unwrap();
        assert!((d.delta - 10.0).abs() < 1e-12);
        assert!(estimate_offset(&[], &[]).is_err());
    }

    #[test]
    fn offset_rejects_divergent_runs() {
        let err = estimate_offset(&readings(&[40.0, 80.0]), &[60.0, 60.0]).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
    }

    #[test]
    fn record_json_shape() {
        let rec = CalibrationRecord {
            device_id: "n97-01".into(),
            offset: CalibrationOffset { delta: 3.5, estimated_at: 10.0, tone_version: TONE_VERSION.into() },
        };
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        for key in ["device_id", "delta", "estimated_at", "tone_version"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
