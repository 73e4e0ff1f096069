//! Griffin-Lim reconstruction of waveforms from log-mel frames.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::{mel_filterbank, FeatureConfig, MelFeatures, Stft};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderConfig {
    pub iterations: usize,
    /// Multiplicative updates of the non-negative mel inversion.
    pub inversion_iterations: usize,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self { iterations: 32, inversion_iterations: 30 }
    }
}

/// Non-negative linear power spectra whose mel projection approximates
/// `exp(log_mel)`.
pub fn invert_mel(log_mel: &Mat, fb: &Mat, iterations: usize) -> Mat {
    let target = log_mel.map(f64::exp);
    // fbᵀ·target as the starting point, refined by multiplicative updates
    let numer = target.matmul(fb);
    let col_mass: Vec<f64> = (0..fb.cols).map(|k| (0..fb.rows).map(|m| fb.get(m, k)).sum()).collect();
    let mut p = Mat::from_vec(
        numer.rows,
        numer.cols,
        numer.data.iter().enumerate().map(|(i, v)| v / col_mass[i % numer.cols].max(1e-12)).collect(),
    );
    for _ in 0..iterations {
        let approx = p.matmul_t(fb);
        let denom = approx.matmul(fb);
        for i in 0..p.data.len() {
            p.data[i] *= numer.data[i] / denom.data[i].max(1e-300);
        }
    }
    p
}

/// Waveform of `(T − 1) · hop` samples. Phase starts at zero, so the result
/// is a deterministic function of the input.
pub fn griffin_lim(mel: &MelFeatures, feat: &FeatureConfig, cfg: &VocoderConfig) -> Result<Waveform> {
    feat.validate()?;
    if mel.dim() != feat.n_mels {
        return Err(Error::Shape(format!("mel dimension {} vs config {}", mel.dim(), feat.n_mels)));
    }
    if mel.num_frames() < 2 {
        return Err(Error::InvalidArgument("vocoding needs at least two frames".into()));
    }
    let fb = mel_filterbank(feat);
    let power = invert_mel(&mel.frames, &fb, cfg.inversion_iterations);
    let mag: Vec<Vec<f64>> = (0..power.rows).map(|t| power.row(t).iter().map(|p| p.max(0.0).sqrt()).collect()).collect();
    let stft = Stft::new(feat.n_fft, feat.hop);
    let mut spectra: Vec<Vec<Complex<f64>>> =
        mag.iter().map(|row| row.iter().map(|&a| Complex::new(a, 0.0)).collect()).collect();
    let mut signal = stft.synthesize(&spectra);
    for _ in 0..cfg.iterations {
        let est = stft.analyze(&signal);
        for (t, row) in spectra.iter_mut().enumerate() {
            for (k, c) in row.iter_mut().enumerate() {
                let e = est[t][k];
                let n = e.norm();
                *c = if n > 1e-12 { e * (mag[t][k] / n) } else { Complex::new(mag[t][k], 0.0) };
            }
        }
        signal = stft.synthesize(&spectra);
    }
    let peak = signal.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        signal.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(Waveform::new(signal, feat.sample_rate))
}
