//! Threshold speech detector on the median spectrogram amplitude below 4 kHz.
//!
//! Voiced windows are dropped before level aggregation, so the detector errs
//! towards `Voiced` on ties.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::acoustics::PcmFrame;
use crate::error::{Error, Result};

pub const FFT_LEN: usize = 1024;
pub const HOP: usize = FFT_LEN / 2;
pub const MAX_FREQ_HZ: f64 = 4000.0;
/// Detector cadence in seconds.
pub const WINDOW_S: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralFeature {
    pub median_amp_0_4k: f64,
    pub window_start: f64,
    pub window_len: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeechLabel {
    Voiced,
    NoiseOnly,
}

impl SpeechLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeechLabel::Voiced => "voiced",
            SpeechLabel::NoiseOnly => "noise",
        }
    }
}

impl std::fmt::Display for SpeechLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    }
}

/// Median magnitude over all time-frequency bins at or below 4 kHz of a
/// Hann-windowed STFT (1024 samples, 50% overlap). A trailing remainder shorter
/// than one hop past the last full window is ignored.
pub fn spectral_median(frame: &PcmFrame) -> Result<SpectralFeature> {
    let x = frame.samples();
    if x.len() < FFT_LEN {
        return Err(Error::InvalidInput(format!(
            "frame of {} samples is shorter than one {FFT_LEN}-sample FFT window",
            x.len()
        )));
    }
    let sr = frame.sample_rate() as f64;
    let bins = ((MAX_FREQ_HZ * FFT_LEN as f64 / sr).floor() as usize).min(FFT_LEN / 2) + 1;
    let hann: Vec<f64> = (0..FFT_LEN).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / FFT_LEN as f64).cos()).collect();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(FFT_LEN);
    let mut scratch = fft.make_scratch_vec();
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let n_frames = (x.len() - FFT_LEN) / HOP + 1;
    let mut mags = Vec::with_capacity(n_frames * bins);
    for f in 0..n_frames {
        let seg = &x[f * HOP..f * HOP + FFT_LEN];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&hann) {
            *b = s * w;
        }
        fft.process_with_scratch(&mut buf, &mut spec, &mut scratch).expect("buffer lengths from the plan");
        mags.extend(spec[..bins].iter().map(|c| c.norm()));
    }
    Ok(SpectralFeature {
        median_amp_0_4k: median(&mut mags),
        window_start: frame.start_time(),
        window_len: frame.duration(),
    })
}

/// Features for consecutive `window_s`-second windows. A trailing partial
/// window is kept if it holds at least one second of audio.
pub fn window_features(frame: &PcmFrame, window_s: f64) -> Result<Vec<SpectralFeature>> {
    if !(window_s > 0.0) {
        return Err(Error::InvalidInput("window length must be positive".into()));
    }
    frame
        .chunks(window_s, true)
        .iter()
        .filter(|c| c.duration() >= 1.0 || c.start_time() == frame.start_time())
        .map(spectral_median)
        .collect()
}

/// How a threshold is placed given the training features of both classes.
pub trait ThresholdRule {
    fn name(&self) -> &'static str;
    fn theta(&self, voiced: &[f64], noise: &[f64]) -> f64;
}

/// Midpoint of the two class means.
#[derive(Clone, Copy, Debug, Default)]
pub struct Midpoint;

impl ThresholdRule for Midpoint {
    fn name(&self) -> &'static str {
        "midpoint"
    }

    fn theta(&self, voiced: &[f64], noise: &[f64]) -> f64 {
        0.5 * (mean(voiced) + mean(noise))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingCounts {
    pub voiced: usize,
    pub noise: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechThreshold {
    pub theta: f64,
    pub trained_on: TrainingCounts,
    #[serde(default = "default_rule")]
    pub rule: String,
}

fn default_rule() -> String {
    "midpoint".into()
}

impl SpeechThreshold {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::InvalidInput(format!("threshold {theta} must be finite and non-negative")));
        }
        Ok(SpeechThreshold { theta, trained_on: TrainingCounts { voiced: 0, noise: 0 }, rule: default_rule() })
    }
}

pub fn train_threshold(voiced: &[SpectralFeature], noise: &[SpectralFeature]) -> Result<SpeechThreshold> {
    train_threshold_with(&Midpoint, voiced, noise)
}

/// Fits a threshold with `rule`. Fails when either class is empty, when the
/// threshold does not fall strictly between the class means, or when it
/// misclassifies more than half of either training class.
pub fn train_threshold_with<R: ThresholdRule + ?Sized>(
    rule: &R,
    voiced: &[SpectralFeature],
    noise: &[SpectralFeature],
) -> Result<SpeechThreshold> {
    if voiced.is_empty() || noise.is_empty() {
        return Err(Error::Untrainable("both classes need at least one window".into()));
    }
    let v: Vec<f64> = voiced.iter().map(|f| f.median_amp_0_4k).collect();
    let n: Vec<f64> = noise.iter().map(|f| f.median_amp_0_4k).collect();
    if v.iter().chain(&n).any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput("features must be finite and non-negative".into()));
    }
    let theta = rule.theta(&v, &n);
    let (mv, mn) = (mean(&v), mean(&n));
    if !(mn < theta && theta < mv) {
        return Err(Error::Untrainable(format!(
            "threshold {theta} not strictly between noise mean {mn} and voiced mean {mv}"
        )));
    }
    let missed = v.iter().filter(|&&x| x < theta).count();
    let false_alarms = n.iter().filter(|&&x| x >= theta).count();
    if 2 * missed > v.len() || 2 * false_alarms > n.len() {
        return Err(Error::Untrainable(format!(
            "classes overlap: {missed}/{} voiced and {false_alarms}/{} noise windows misclassified",
            v.len(),
            n.len()
        )));
    }
    Ok(SpeechThreshold {
        theta,
        trained_on: TrainingCounts { voiced: v.len(), noise: n.len() },
        rule: rule.name().into(),
    })
}

pub fn classify(feature: &SpectralFeature, th: &SpeechThreshold) -> SpeechLabel {
    if feature.median_amp_0_4k >= th.theta {
        SpeechLabel::Voiced
    } else {
        SpeechLabel::NoiseOnly
    }
}

/// Per-window labels of a recording.
pub fn detect(frame: &PcmFrame, th: &SpeechThreshold, window_s: f64) -> Result<Vec<(SpectralFeature, SpeechLabel)>> {
    Ok(window_features(frame, window_s)?.into_iter().map(|f| (f, classify(&f, th))).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        self.true_pos as f64 / (self.true_pos + self.false_pos).max(1) as f64
    }

    pub fn recall(&self) -> f64 {
        self.true_pos as f64 / (self.true_pos + self.false_neg).max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.true_pos + self.false_pos + self.true_neg + self.false_neg;
        (self.true_pos + self.true_neg) as f64 / total.max(1) as f64
    }
}

/// Confusion matrix with `Voiced` as the positive class.
pub fn evaluate(th: &SpeechThreshold, voiced: &[SpectralFeature], noise: &[SpectralFeature]) -> Confusion {
    let mut c = Confusion::default();
    for f in voiced {
        match classify(f, th) {
            SpeechLabel::Voiced => c.true_pos += 1,
            SpeechLabel::NoiseOnly => c.false_neg += 1,
        }
    }
    for f in noise {
        match classify(f, th) {
            SpeechLabel::Voiced => c.false_pos += 1,
            SpeechLabel::NoiseOnly => c.true_neg += 1,
        }
    }
    c
}

/// Pink noise from white Gaussian noise (Paul Kellet's refined filter).
pub fn pink_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let pink = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            pink * 0.11
        })
        .collect()
}

/// Parameters of the synthetic voiced/unvoiced corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub sample_rate: u32,
    pub window_s: f64,
    /// Pink-noise RMS range in full-scale units; drawn log-uniformly per window.
    pub noise_rms: (f64, f64),
    /// Voice RMS relative to the window's noise RMS, in dB; drawn uniformly.
    pub voice_snr_db: (f64, f64),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { sample_rate: 16_000, window_s: WINDOW_S, noise_rms: (0.025, 0.035), voice_snr_db: (6.0, 12.0) }
    }
}

/// Harmonic voice-like signal: fundamental in 100-300 Hz with a slow sine
/// vibrato, harmonics up to 4 kHz with 1/h roll-off, and a syllable-rate sine
/// envelope. Harmonics come from powers of the fundamental's unit phasor.
fn voice<R: Rng + ?Sized>(len: usize, sr: f64, rms: f64, rng: &mut R) -> Vec<f64> {
    let f0: f64 = rng.random_range(100.0..300.0);
    let vib_rate: f64 = rng.random_range(3.0..7.0);
    let vib_depth = 0.05 * f0;
    let syl_rate: f64 = rng.random_range(2.0..5.0);
    let n_harm = ((MAX_FREQ_HZ / (f0 + vib_depth)).floor() as usize).max(1);
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64 / sr;
        let f = f0 + vib_depth * (2.0 * PI * vib_rate * t).sin();
        phase = (phase + 2.0 * PI * f / sr) % (2.0 * PI);
        let z = Complex64::from_polar(1.0, phase);
        let mut zh = z;
        let mut s = 0.0;
        for h in 1..=n_harm {
            s += zh.im / h as f64;
            zh *= z;
        }
        let env = 0.5 * (1.0 + (2.0 * PI * syl_rate * t).sin());
        out.push(s * env);
    }
    let cur = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    let k = if cur > 0.0 { rms / cur } else { 0.0 };
    out.iter_mut().for_each(|v| *v *= k);
    out
}

/// One synthetic window of traffic-like pink noise, with voice added when
/// `voiced` is set. Samples are clipped to full scale.
pub fn synth_window<R: Rng + ?Sized>(spec: &CorpusSpec, voiced: bool, start: f64, rng: &mut R) -> Result<PcmFrame> {
    let sr = spec.sample_rate as f64;
    let len = (spec.window_s * sr).round() as usize;
    let (lo, hi) = spec.noise_rms;
    let noise_rms = (rng.random_range(lo.ln()..=hi.ln())).exp();
    let mut x = pink_noise(len, rng);
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= noise_rms / cur);
    if voiced {
        let snr: f64 = rng.random_range(spec.voice_snr_db.0..=spec.voice_snr_db.1);
        let v = voice(len, sr, noise_rms * 10f64.powf(snr / 20.0), rng);
        x.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
    }
    x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    PcmFrame::new(x, spec.sample_rate, start)
}

/// Features of `n` voiced and `n` noise-only windows.
pub fn synth_corpus<R: Rng + ?Sized>(
    spec: &CorpusSpec,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<SpectralFeature>, Vec<SpectralFeature>)> {
    let mut voiced = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for i in 0..n {
        let t = 2.0 * i as f64 * spec.window_s;
        voiced.push(spectral_median(&synth_window(spec, true, t, rng)?)?);
        noise.push(spectral_median(&synth_window(spec, false, t + spec.window_s, rng)?)?);
    }
    Ok((voiced, noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feat(x: f64) -> SpectralFeature {
        SpectralFeature { median_amp_0_4k: x, window_start: 0.0, window_len: 60.0 }
    }

    fn sine(freq: f64, amp: f64, secs: f64) -> PcmFrame {
        let sr = 16_000;
        let n = (secs * sr as f64) as usize;
        let x = (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect();
        PcmFrame::new(x, sr, 0.0).unwrap()
    }

    #[test]
    fn silence_has_zero_median() {
        let f = spectral_median(&PcmFrame::new(vec![0.0; 16_000], 16_000, 0.0).unwrap()).unwrap();
        assert_eq!(f.median_amp_0_4k, 0.0);
    }

    #[test]
    fn short_frame_is_rejected() {
        assert!(spectral_median(&PcmFrame::new(vec![0.0; FFT_LEN - 1], 16_000, 0.0).unwrap()).is_err());
        assert!(spectral_median(&PcmFrame::new(vec![0.0; FFT_LEN], 16_000, 0.0).unwrap()).is_ok());
    }

    #[test]
    fn median_scales_with_amplitude() {
        let a = spectral_median(&sine(2000.0, 0.8, 2.0)).unwrap().median_amp_0_4k;
        let b = spectral_median(&sine(2000.0, 0.4, 2.0)).unwrap().median_amp_0_4k;
        assert!(a > 0.0);
        assert!((b / a - 0.5).abs() < 1e-9, "{}", b / a);
    }

    /// Direct DFT of every frame, kept bins chosen by frequency, median by
    /// full sort.
    #[test]
    fn matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sr = 8000;
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let frame = PcmFrame::new(x.clone(), sr, 0.0).unwrap();
        let got = spectral_median(&frame).unwrap().median_amp_0_4k;
        let mut mags = Vec::new();
        let mut start = 0;
        while start + 1024 <= x.len() {
            for k in 0..1024 {
                if k as f64 * sr as f64 / 1024.0 > 4000.0 {
                    continue;
                }
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &s) in x[start..start + 1024].iter().enumerate() {
                    let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / 1024.0).cos();
                    let ang = -2.0 * PI * (k * i) as f64 / 1024.0;
                    re += s * w * ang.cos();
                    im += s * w * ang.sin();
                }
                mags.push(re.hypot(im));
            }
            start += 512;
        }
        mags.sort_by(f64::total_cmp);
        let n = mags.len();
        let want = if n % 2 == 1 { mags[n / 2] } else { 0.5 * (mags[n / 2 - 1] + mags[n / 2]) };
        assert_eq!(n, 4 * 513);
        assert!((got - want).abs() < 1e-9 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn voiced_window_has_larger_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = CorpusSpec { window_s: 5.0, noise_rms: (0.03, 0.03), ..Default::default() };
        let v = spectral_median(&synth_window(&spec, true, 0.0, &mut rng).unwrap()).unwrap();
        let n = spectral_median(&synth_window(&spec, false, 0.0, &mut rng).unwrap()).unwrap();
        assert!(v.median_amp_0_4k > n.median_amp_0_4k);
    }

    #[test]
    fn midpoint_threshold() {
        let th = train_threshold(&[feat(10.0)], &[feat(2.0)]).unwrap();
        assert_eq!(th.theta, 6.0);
        assert_eq!(th.trained_on, TrainingCounts { voiced: 1, noise: 1 });
        assert!(matches!(train_threshold(&[feat(3.0)], &[feat(3.0)]), Err(Error::Untrainable(_))));
        assert!(matches!(train_threshold(&[], &[feat(3.0)]), Err(Error::Untrainable(_))));
        // means separate but most voiced windows fall below the midpoint
        let voiced = [feat(1.0), feat(1.0), feat(1.0), feat(40.0)];
        assert!(matches!(train_threshold(&voiced, &[feat(0.5)]), Err(Error::Untrainable(_))));
    }

    #[test]
    fn boundary_goes_to_voiced() {
        let th = SpeechThreshold::new(6.0).unwrap();
        assert_eq!(classify(&feat(6.0), &th), SpeechLabel::Voiced);
        assert_eq!(classify(&feat(12.0), &th), SpeechLabel::Voiced);
        assert_eq!(classify(&feat(0.0), &th), SpeechLabel::NoiseOnly);
    }

    #[test]
    fn windows_follow_cadence() {
        let frame = sine(440.0, 0.1, 130.0);
        let feats = window_features(&frame, WINDOW_S).unwrap();
        let starts: Vec<f64> = feats.iter().map(|f| f.window_start).collect();
        assert_eq!(starts, vec![0.0, 60.0, 120.0]);
        assert_eq!(feats[2].window_len, 10.0);
    }

    #[test]
    fn pink_noise_spectrum_falls_off() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = pink_noise(1 << 16, &mut rng);
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(x.len());
        let mut input = x.clone();
        let mut buf = fft.make_output_vec();
        fft.process(&mut input, &mut buf).unwrap();
        let band = |lo: usize, hi: usize| buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>();
        // equal energy per octave
        let low = band(100, 200);
        let high = band(1000, 2000);
        assert!((low / high).log10().abs() < 0.3, "{}", low / high);
    }
}
