use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    /// Analysis window in samples; frames advance by `hop`, centred like the
    /// mel frames.
    pub window: usize,
    pub hop: usize,
    /// Minimum normalised autocorrelation peak of a voiced frame.
    pub voicing_threshold: f64,
    /// Minimum frame RMS of a voiced frame.
    pub min_rms: f64,
    /// Compare log-F0 instead of Hz.
    pub log_scale: bool,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self { fmin: 60.0, fmax: 400.0, window: 1024, hop: 256, voicing_threshold: 0.5, min_rms: 1e-3, log_scale: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    /// Hz; 0 on unvoiced frames.
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v).count()
    }
}

fn normalized_autocorr(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        xy += x[i] * x[i + lag];
        xx += x[i] * x[i];
        yy += x[i + lag] * x[i + lag];
    }
    if xx <= 0.0 || yy <= 0.0 {
        0.0
    } else {
        xy / (xx * yy).sqrt()
    }
}

/// Autocorrelation pitch tracker, one value per `hop` samples with frame `t`
/// centred on sample `t · hop`.
pub fn extract_f0(wav: &Waveform, cfg: &PitchConfig) -> Result<F0Track> {
    if !(cfg.fmin > 0.0 && cfg.fmin < cfg.fmax) {
        return Err(Error::InvalidArgument(format!("need 0 < fmin < fmax, got {} and {}", cfg.fmin, cfg.fmax)));
    }
    let sr = wav.sample_rate as f64;
    if sr < 2.0 * cfg.fmax {
        return Err(Error::InvalidArgument(format!("sample rate {sr} is below twice fmax {}", cfg.fmax)));
    }
    if cfg.hop == 0 || wav.samples.is_empty() {
        return Err(Error::InvalidArgument("empty waveform or zero hop".into()));
    }
    let min_lag = (sr / cfg.fmax).floor().max(1.0) as usize;
    let max_lag = (sr / cfg.fmin).ceil() as usize;
    if cfg.window <= max_lag + 1 {
        return Err(Error::InvalidArgument(format!("window {} too short for fmin {}", cfg.window, cfg.fmin)));
    }
    let half = cfg.window / 2;
    let frames = 1 + wav.samples.len() / cfg.hop;
    let mut f0 = vec![0.0; frames];
    let mut voiced = vec![false; frames];
    let mut buf = vec![0.0; cfg.window];
    for t in 0..frames {
        for (i, b) in buf.iter_mut().enumerate() {
            let k = (t * cfg.hop + i) as isize - half as isize;
            *b = if k >= 0 { wav.samples.get(k as usize).copied().unwrap_or(0.0) } else { 0.0 };
        }
        let mean = buf.iter().sum::<f64>() / buf.len() as f64;
        buf.iter_mut().for_each(|v| *v -= mean);
        let rms = (buf.iter().map(|v| v * v).sum::<f64>() / buf.len() as f64).sqrt();
        if rms < cfg.min_rms {
            continue;
        }
        let r: Vec<f64> = (0..=max_lag + 1).map(|l| if l + 1 < min_lag { 0.0 } else { normalized_autocorr(&buf, l) }).collect();
        let best = (min_lag..=max_lag).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.voicing_threshold {
            continue;
        }
        // earliest local peak close to the global one, which avoids
        // picking a multiple of the period
        let lag = (min_lag..=max_lag)
            .find(|&l| r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1])
            .unwrap_or(min_lag);
        let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        f0[t] = sr / (lag as f64 + shift);
        voiced[t] = true;
    }
    Ok(F0Track { f0, voiced })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Rmse {
    /// `None` when no aligned frame pair is voiced in both tracks.
    pub rmse: Option<f64>,
    pub voiced_pairs: usize,
}

/// RMSE over alignment-path pairs voiced in both tracks.
pub fn f0_rmse(reference: &F0Track, converted: &F0Track, path: &[(usize, usize)], log_scale: bool) -> Result<F0Rmse> {
    let mut sum = 0.0;
    let mut n = 0;
    for &(i, j) in path {
        let (Some(&vr), Some(&vc)) = (reference.voiced.get(i), converted.voiced.get(j)) else {
            return Err(Error::Shape(format!("path pair ({i}, {j}) outside the F0 tracks")));
        };
        if vr && vc {
            let (a, b) = (reference.f0[i], converted.f0[j]);
            let d = if log_scale { a.ln() - b.ln() } else { a - b };
            sum += d * d;
            n += 1;
        }
    }
    Ok(F0Rmse { rmse: (n > 0).then(|| (sum / n as f64).sqrt()), voiced_pairs: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(f: f64, secs: f64) -> Waveform {
        let n = (16000.0 * secs) as usize;
        Waveform::new((0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin()).collect(), 16000)
    }

    #[test]
    fn tracks_a_sine() {
        let tr = extract_f0(&sine(220.0, 1.0), &PitchConfig::default()).unwrap();
        assert!(tr.voiced_count() > tr.len() / 2);
        for (f, v) in tr.f0.iter().zip(&tr.voiced) {
            if *v {
                assert!((f - 220.0).abs() < 2.0, "{f}");
            }
        }
    }

    #[test]
    fn silence_and_noise_are_unvoiced() {
        let cfg = PitchConfig::default();
        let tr = extract_f0(&Waveform::new(vec![0.0; 16000], 16000), &cfg).unwrap();
        assert_eq!(tr.voiced_count(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = Waveform::new((0..16000).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16000);
        let tr = extract_f0(&noise, &cfg).unwrap();
        assert!(tr.voiced_count() * 10 <= tr.len());
    }

    #[test]
    fn rejects_low_rates() {
        let cfg = PitchConfig { fmax: 400.0, ..Default::default() };
        assert!(extract_f0(&Waveform::new(vec![0.0; 4000], 700), &cfg).is_err());
    }

    #[test]
    fn rmse_on_both_voiced_pairs() {
        let a = F0Track { f0: vec![100.0, 0.0, 120.0, 130.0], voiced: vec![true, false, true, true] };
        let b = F0Track { f0: vec![110.0, 0.0, 130.0, 0.0], voiced: vec![true, false, true, false] };
        let path = [(0, 0), (1, 1), (2, 2), (3, 3)];
        let r = f0_rmse(&a, &b, &path, false).unwrap();
        assert_eq!(r.voiced_pairs, 2);
        assert!((r.rmse.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(f0_rmse(&a, &a, &path, false).unwrap().rmse, Some(0.0));
        let none = F0Track { f0: vec![0.0; 4], voiced: vec![false; 4] };
        assert_eq!(f0_rmse(&a, &none, &path, false).unwrap(), F0Rmse { rmse: None, voiced_pairs: 0 });
        assert!(f0_rmse(&a, &b, &[(9, 0)], false).is_err());
    }
}
