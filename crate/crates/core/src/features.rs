//! Log-mel feature extraction.
//!
//! Framing uses center padding: the signal is reflect-padded by `n_fft / 2`
//! on both sides, so a waveform of `N` samples yields
//! `T = 1 + floor(N / hop)` frames.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Mel power is clamped to this value before the log.
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { sample_rate: 16000, n_fft: 1024, hop: 256, n_mels: 80, fmin: 80.0, fmax: 7600.0, log_floor: 1e-10 }
    }
}

impl FeatureConfig {
    pub fn frame_shift_ms(&self) -> f64 {
        self.hop as f64 * 1000.0 / self.sample_rate as f64
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for `n` samples under center padding.
    pub fn frame_count(&self, n: usize) -> usize {
        1 + n / self.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || self.n_mels == 0 {
            return Err(Error::Config("n_fft, hop and n_mels must be positive".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "mel band [{}, {}] must lie within [0, {}]",
                self.fmin,
                self.fmax,
                self.sample_rate / 2
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Log-mel energies, `(T, D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelFeatures {
    pub frames: Mat,
    pub frame_shift_ms: f64,
    pub sample_rate: u32,
}

impl MelFeatures {
    pub fn new(frames: Mat, frame_shift_ms: f64, sample_rate: u32) -> Result<Self> {
        if frames.rows == 0 {
            return Err(Error::Validation("mel features need at least one frame".into()));
        }
        if !frames.all_finite() {
            return Err(Error::Validation("mel features contain non-finite values".into()));
        }
        Ok(Self { frames, frame_shift_ms, sample_rate })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows
    }

    pub fn dim(&self) -> usize {
        self.frames.cols
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `(n_mels, n_bins)`, each filter normalised
/// to unit area in Hz.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Mat {
    let n_bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins).map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64).collect();
    let mut fb = Mat::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (r - l);
        for (k, &f) in bin_hz.iter().enumerate() {
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb.set(m, k, w * norm);
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i.min(n - 1)]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n.saturating_sub(2 + i)]);
    }
    out
}

/// Centered short-time Fourier analysis shared by feature extraction and
/// spectrogram inversion.
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    /// Complex spectra, one `n_fft / 2 + 1` vector per frame.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let padded = reflect_pad(x, self.n_fft / 2);
        let frames = 1 + x.len() / self.hop;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        (0..frames)
            .map(|t| {
                let start = t * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    let s = padded.get(start + i).copied().unwrap_or(0.0);
                    *b = Complex::new(s * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..self.n_fft / 2 + 1].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`]; returns
    /// `(frames - 1) * hop` samples.
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let t = spectra.len();
        let pad = self.n_fft / 2;
        let total = (t.saturating_sub(1)) * self.hop + self.n_fft;
        let mut out = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (f, spec) in spectra.iter().enumerate() {
            for k in 0..self.n_fft {
                buf[k] = if k <= self.n_fft / 2 { spec[k] } else { spec[self.n_fft - k].conj() };
            }
            self.inverse.process(&mut buf);
            let start = f * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                out[start + i] += buf[i].re / self.n_fft as f64 * w;
                norm[start + i] += w * w;
            }
        }
        let len = t.saturating_sub(1) * self.hop;
        (0..len)
            .map(|i| {
                let j = i + pad;
                if norm[j] > 1e-8 {
                    out[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Log-mel spectrogram of `wav` under `cfg`.
pub fn extract_mel(wav: &Waveform, cfg: &FeatureConfig) -> Result<MelFeatures> {
    cfg.validate()?;
    if wav.samples.is_empty() {
        return Err(Error::Audio("empty waveform".into()));
    }
    if wav.samples.len() < cfg.n_fft {
        return Err(Error::Audio(format!(
            "waveform of {} samples is shorter than one {}-sample analysis window",
            wav.samples.len(),
            cfg.n_fft
        )));
    }
    let samples = if wav.sample_rate == cfg.sample_rate {
        std::borrow::Cow::Borrowed(&wav.samples)
    } else {
        std::borrow::Cow::Owned(wav.resampled(cfg.sample_rate).samples)
    };
    let fb = mel_filterbank(cfg);
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let spectra = stft.analyze(&samples);
    let mut frames = Mat::zeros(spectra.len(), cfg.n_mels);
    for (t, spec) in spectra.iter().enumerate() {
        let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
        for m in 0..cfg.n_mels {
            let e: f64 = fb.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            frames.set(t, m, e.max(cfg.log_floor).ln());
        }
    }
    MelFeatures::new(frames, cfg.frame_shift_ms(), cfg.sample_rate)
}

/// Per-dimension mean / standard deviation used to normalise model targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a MelFeatures>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for mel in mels {
            if sum.is_empty() {
                sum = vec![0.0; mel.dim()];
                sq = vec![0.0; mel.dim()];
            }
            if mel.dim() != sum.len() {
                return Err(Error::Shape(format!("mel dimension {} vs {}", mel.dim(), sum.len())));
            }
            for r in 0..mel.num_frames() {
                for (d, &v) in mel.frames.row(r).iter().enumerate() {
                    sum[d] += v;
                    sq[d] += v * v;
                }
            }
            n += mel.num_frames();
        }
        if n == 0 {
            return Err(Error::Validation("cannot fit normalizer on an empty corpus".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| (s / nf - m * m).max(0.0).sqrt().max(1e-3)).collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, frames: &Mat) -> Mat {
        let mut out = frames.clone();
        for r in 0..out.rows {
            for (d, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.std[d];
            }
        }
        out
    }

    pub fn denormalize(&self, frames: &Mat) -> Mat {
        let mut out = frames.clone();
        for r in 0..out.rows {
            for (d, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[d] + self.mean[d];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, n: usize, sr: u32) -> Waveform {
        Waveform::new(
            (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()).collect(),
            sr,
        )
    }

    #[test]
    fn one_second_sine_frame_count() {
        let cfg = FeatureConfig::default();
        let mel = extract_mel(&sine(440.0, 16000, 16000), &cfg).unwrap();
        // 1 + floor(16000 / 256)
        assert_eq!(mel.num_frames(), 63);
        assert_eq!(mel.dim(), 80);
        assert!((mel.frame_shift_ms - 16.0).abs() < 1e-12);
    }

    #[test]
    fn silence_sits_at_the_floor() {
        let cfg = FeatureConfig::default();
        let mel = extract_mel(&Waveform::new(vec![0.0; 4000], 16000), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(mel.frames.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_is_rejected() {
        let cfg = FeatureConfig::default();
        assert!(extract_mel(&Waveform::new(vec![0.1; 1000], 16000), &cfg).is_err());
        assert!(extract_mel(&Waveform::new(vec![], 16000), &cfg).is_err());
    }

    #[test]
    fn sine_energy_peaks_near_its_frequency() {
        let cfg = FeatureConfig::default();
        let mel = extract_mel(&sine(1000.0, 8000, 16000), &cfg).unwrap();
        let row = mel.frames.row(10);
        let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(cfg.fmax);
        let centre = mel_to_hz(lo + (hi - lo) * (argmax + 1) as f64 / (cfg.n_mels + 1) as f64);
        assert!((centre - 1000.0).abs() < 120.0, "peak filter centre {centre}");
    }

    #[test]
    fn stft_round_trip_reconstructs_interior() {
        let stft = Stft::new(256, 64);
        let x: Vec<f64> = (0..2048).map(|i| ((i as f64) * 0.031).sin() + 0.3 * ((i as f64) * 0.17).cos()).collect();
        let y = stft.synthesize(&stft.analyze(&x));
        assert_eq!(y.len(), 2048);
        for i in 200..1800 {
            assert!((x[i] - y[i]).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn frame_count_matches_arithmetic(n in 1024usize..6000, hop in prop::sample::select(vec![128usize, 256, 200])) {
            let cfg = FeatureConfig { hop, n_mels: 20, ..FeatureConfig::default() };
            let wav = Waveform::new((0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect(), 16000);
            let mel = extract_mel(&wav, &cfg).unwrap();
            // center padding: padded length n + n_fft, frames 1 + floor((n + n_fft - n_fft) / hop)
            prop_assert_eq!(mel.num_frames(), 1 + n / hop);
            let again = extract_mel(&wav, &cfg).unwrap();
            prop_assert_eq!(mel, again);
        }
    }
}
