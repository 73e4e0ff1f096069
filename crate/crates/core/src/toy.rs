//! Synthetic multispeaker corpora for tests, demos and smoke runs.
//!
//! Each character is rendered as a harmonic tone whose spectral envelope has
//! two character-specific formants; spaces are near-silent pauses. Speakers
//! differ in pitch, vocal-tract scaling of the formants and spectral tilt.
//! Per-utterance prosody varies pitch contour and segment durations.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, Waveform};
use crate::data::{write_manifest, Utterance, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{extract_mel, FeatureConfig};

pub const ALPHABET: &str = "abcdefgh";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpeaker {
    pub id: String,
    pub f0: f64,
    pub formant_scale: f64,
    pub tilt: f64,
}

/// A deterministic family of well-separated voices.
pub fn speakers(n: usize) -> Vec<ToySpeaker> {
    (0..n)
        .map(|i| ToySpeaker {
            id: format!("spk{i}"),
            f0: 100.0 + 45.0 * i as f64,
            formant_scale: 0.85 + 0.1 * (i % 4) as f64,
            tilt: 0.93 - 0.05 * (i % 3) as f64,
        })
        .collect()
}

/// Random text of 2–3 words over [`ALPHABET`].
pub fn random_text(rng: &mut impl Rng) -> String {
    let letters: Vec<char> = ALPHABET.chars().collect();
    let words = rng.gen_range(2..=3);
    (0..words)
        .map(|_| {
            let n = rng.gen_range(2..=4);
            (0..n).map(|_| letters[rng.gen_range(0..letters.len())]).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn formants(c: char) -> (f64, f64) {
    let i = ALPHABET.find(c).unwrap_or(0) as f64;
    (300.0 + 85.0 * i, 950.0 + 230.0 * ((i as usize * 3) % 7) as f64)
}

/// Renders `text` for `speaker`; `prosody_seed` controls the pitch contour
/// and durations.
pub fn render(text: &str, speaker: &ToySpeaker, prosody_seed: u64, cfg: &FeatureConfig) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(prosody_seed);
    let sr = cfg.sample_rate as f64;
    let accent = rng.gen_range(-0.15..0.15);
    let declination = rng.gen_range(0.0..0.2);
    let chars: Vec<char> = text.chars().collect();
    let mut samples = Vec::new();
    let mut phase = 0.0;
    let total = chars.len().max(1) as f64;
    for (ci, &c) in chars.iter().enumerate() {
        let frames = rng.gen_range(2..=4);
        let n = frames * cfg.hop;
        if c == ' ' {
            samples.extend((0..n).map(|_| rng.gen_range(-1.0..1.0) * 1e-3));
            continue;
        }
        let (f1, f2) = formants(c);
        let (f1, f2) = (f1 * speaker.formant_scale, f2 * speaker.formant_scale);
        let pos = ci as f64 / total;
        let f0 = speaker.f0 * (1.0 + accent * (PI * pos).sin() - declination * pos);
        let nh = ((sr / 2.0 - 200.0) / f0).floor() as usize;
        let amps: Vec<f64> = (1..=nh)
            .map(|k| {
                let f = k as f64 * f0;
                let env = (-((f - f1) / 180.0).powi(2)).exp() + 0.7 * (-((f - f2) / 250.0).powi(2)).exp() + 0.03;
                env * speaker.tilt.powi(k as i32)
            })
            .collect();
        let norm: f64 = amps.iter().sum::<f64>().max(1e-9);
        for _ in 0..n {
            phase += 2.0 * PI * f0 / sr;
            let s: f64 = amps.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * phase).sin()).sum();
            samples.push(0.3 * s / norm);
        }
    }
    while samples.len() < cfg.n_fft {
        samples.push(0.0);
    }
    Waveform::new(samples, cfg.sample_rate)
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub record: UtteranceRecord,
    pub wav: Waveform,
}

/// `per_speaker` utterances for each speaker. With `shared_texts`, the i-th
/// utterance of every speaker reads the same text.
pub fn corpus(
    spks: &[ToySpeaker],
    per_speaker: usize,
    shared_texts: bool,
    seed: u64,
    prefix: &str,
    cfg: &FeatureConfig,
) -> Vec<ToyUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared: Vec<String> = (0..per_speaker).map(|_| random_text(&mut rng)).collect();
    let mut out = Vec::new();
    for spk in spks {
        for i in 0..per_speaker {
            let text = if shared_texts { shared[i].clone() } else { random_text(&mut rng) };
            let id = format!("{prefix}_{}_{i:03}", spk.id);
            let wav = render(&text, spk, rng.gen(), cfg);
            out.push(ToyUtterance {
                record: UtteranceRecord {
                    utterance_id: id.clone(),
                    audio_path: format!("wav/{id}.wav"),
                    transcript: text,
                    speaker_id: spk.id.clone(),
                    language: "en".into(),
                },
                wav,
            });
        }
    }
    out
}

/// Features for in-memory use, skipping the filesystem.
pub fn featurize(utts: &[ToyUtterance], cfg: &FeatureConfig) -> Result<Vec<Utterance>> {
    utts.iter()
        .map(|u| Ok(Utterance { record: u.record.clone(), mel: extract_mel(&u.wav, cfg)? }))
        .collect()
}

/// Writes wavs under `dir/wav/` and a manifest at `dir/<name>.jsonl`.
pub fn write_corpus(dir: &Path, name: &str, utts: &[ToyUtterance]) -> Result<()> {
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    for u in utts {
        write_wav(&dir.join(&u.record.audio_path), &u.wav)?;
    }
    let records: Vec<UtteranceRecord> = utts.iter().map(|u| u.record.clone()).collect();
    write_manifest(&dir.join(format!("{name}.jsonl")), &records)
}

/// Sizes of a generated toy experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub pretrain_speakers: usize,
    pub per_speaker: usize,
    pub target_utterances: usize,
    pub eval_utterances: usize,
    pub seed: u64,
    pub features: FeatureConfig,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        Self {
            pretrain_speakers: 4,
            per_speaker: 10,
            target_utterances: 10,
            eval_utterances: 5,
            seed: 0,
            features: FeatureConfig { n_mels: 40, ..Default::default() },
        }
    }
}

/// Writes `tts`, `target`, `source` and `reference` manifests plus a
/// desk-scale `experiment.toml` under `dir`, and returns the config path.
/// The source speaker is unseen in pretraining; `reference` holds the
/// target speaker reading each source sentence under the same utterance id.
pub fn write_experiment(dir: &Path, spec: &ToyExperiment) -> Result<std::path::PathBuf> {
    let fc = &spec.features;
    let all = speakers(spec.pretrain_speakers + 2);
    let (pre, target, source) = (&all[..spec.pretrain_speakers], &all[spec.pretrain_speakers], &all[spec.pretrain_speakers + 1]);
    write_corpus(dir, "tts", &corpus(pre, spec.per_speaker, false, spec.seed, "tts", fc))?;
    write_corpus(dir, "target", &corpus(std::slice::from_ref(target), spec.target_utterances, false, spec.seed + 1, "trg", fc))?;
    let src = corpus(std::slice::from_ref(source), spec.eval_utterances, false, spec.seed + 2, "eval", fc);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed + 3);
    let reference: Vec<ToyUtterance> = src
        .iter()
        .map(|u| {
            let mut record = u.record.clone();
            record.speaker_id = target.id.clone();
            record.audio_path = format!("wav/ref_{}.wav", record.utterance_id);
            ToyUtterance { wav: render(&record.transcript, target, rng.gen(), fc), record }
        })
        .collect();
    write_corpus(dir, "source", &src)?;
    write_corpus(dir, "reference", &reference)?;
    let config = format!(
        r#"seed = {seed}
output_root = "runs"

[features]
n_mels = {n_mels}

[data]
tts = "tts.jsonl"
target = "target.jsonl"
source_eval = "source.jsonl"
reference = "reference.jsonl"

[model.tts]
hidden = 64

[model.gst]
style_dim = 32
query_dim = 32
channels = 32

[training]
batch_size = 8

[training.budgets]
pretrain_steps = 600
finetune_steps = 150
tp_pretrain_steps = 200
"#,
        seed = spec.seed,
        n_mels = fc.n_mels
    );
    let path = dir.join("experiment.toml");
    fs::write(&path, config).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic_and_long_enough() {
        let cfg = FeatureConfig::default();
        let spk = &speakers(2)[1];
        let a = render("ab cd", spk, 4, &cfg);
        assert_eq!(a, render("ab cd", spk, 4, &cfg));
        assert!(a.samples.len() >= cfg.n_fft);
        assert!(a.samples.iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn shared_texts_align_across_speakers() {
        let cfg = FeatureConfig::default();
        let c = corpus(&speakers(2), 3, true, 1, "x", &cfg);
        assert_eq!(c.len(), 6);
        for i in 0..3 {
            assert_eq!(c[i].record.transcript, c[i + 3].record.transcript);
            assert_ne!(c[i].record.speaker_id, c[i + 3].record.speaker_id);
        }
    }
}
