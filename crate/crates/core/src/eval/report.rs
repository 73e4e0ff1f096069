use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Mat;

use super::cepstrum::{mcd, mel_cepstrum, DEFAULT_ORDER};
use super::pitch::{extract_f0, f0_rmse, PitchConfig};
use super::text::{error_rate, ErrorUnit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub cepstral_order: usize,
    pub pitch: PitchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cepstral_order: DEFAULT_ORDER, pitch: PitchConfig::default() }
    }
}

/// One reference/converted pair. Mels are natural-log mel frames.
pub struct EvalPair<'a> {
    pub utterance_id: &'a str,
    pub reference_mel: &'a Mat,
    pub reference_wav: &'a Waveform,
    pub reference_text: &'a str,
    pub converted_mel: &'a Mat,
    pub converted_wav: &'a Waveform,
    /// Transcript of the converted speech, when one is available.
    pub hypothesis: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub utterance_id: String,
    pub mcd_db: f64,
    pub f0_rmse: Option<f64>,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub path_len: usize,
    pub reference_frames: usize,
    pub converted_frames: usize,
    pub voiced_pairs: usize,
    pub reference_voiced: usize,
    pub converted_voiced: usize,
}

pub fn evaluate_pair(pair: &EvalPair, cfg: &EvalConfig) -> Result<UtteranceMetrics> {
    let rc = mel_cepstrum(pair.reference_mel, cfg.cepstral_order)?;
    let cc = mel_cepstrum(pair.converted_mel, cfg.cepstral_order)?;
    let m = mcd(&rc, &cc)?;
    let rf = extract_f0(pair.reference_wav, &cfg.pitch)?;
    let cf = extract_f0(pair.converted_wav, &cfg.pitch)?;
    // waveform-derived tracks may differ from the mel by a frame at the end
    let path: Vec<(usize, usize)> =
        m.alignment.path.iter().map(|&(i, j)| (i.min(rf.len() - 1), j.min(cf.len() - 1))).collect();
    let f0 = f0_rmse(&rf, &cf, &path, cfg.pitch.log_scale)?;
    let (cer, wer) = match pair.hypothesis {
        Some(h) => (
            Some(error_rate(h, pair.reference_text, ErrorUnit::Character)?),
            Some(error_rate(h, pair.reference_text, ErrorUnit::Word)?),
        ),
        None => (None, None),
    };
    Ok(UtteranceMetrics {
        utterance_id: pair.utterance_id.to_string(),
        mcd_db: m.db,
        f0_rmse: f0.rmse,
        cer,
        wer,
        path_len: m.alignment.path.len(),
        reference_frames: pair.reference_mel.rows,
        converted_frames: pair.converted_mel.rows,
        voiced_pairs: f0.voiced_pairs,
        reference_voiced: rf.voiced_count(),
        converted_voiced: cf.voiced_count(),
    })
}

pub fn evaluate_pairs(pairs: &[EvalPair], cfg: &EvalConfig) -> Vec<Result<UtteranceMetrics>> {
    pairs.par_iter().map(|p| evaluate_pair(p, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeans {
    pub mcd_db: f64,
    /// Mean over utterances with a defined value; `None` when there are none.
    pub f0_rmse: Option<f64>,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub utterances: usize,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub utterances: Vec<UtteranceMetrics>,
    pub means: CorpusMeans,
    /// Utterances that could not be scored, with the reason.
    pub missing: Vec<(String, String)>,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(utterances: Vec<UtteranceMetrics>, missing: Vec<(String, String)>, config_hash: &str, seed: u64) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Validation("no utterance could be scored".into()));
        }
        let means = CorpusMeans {
            mcd_db: utterances.iter().map(|u| u.mcd_db).sum::<f64>() / utterances.len() as f64,
            f0_rmse: mean_of(utterances.iter().map(|u| u.f0_rmse)),
            cer: mean_of(utterances.iter().map(|u| u.cer)),
            wer: mean_of(utterances.iter().map(|u| u.wer)),
            utterances: utterances.len(),
        };
        Ok(Self { utterances, means, missing, config_hash: config_hash.to_string(), seed })
    }

    /// Human-readable table with columns MCD, F0RMSE, CER, WER.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>, scale: f64| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", x * scale));
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>10} {:>12} {:>8} {:>8}", "utterance", "MCD [dB]", "F0RMSE [Hz]", "CER [%]", "WER [%]");
        for u in &self.utterances {
            let _ = writeln!(
                s,
                "{:<24} {:>10} {:>12} {:>8} {:>8}",
                u.utterance_id,
                fmt(Some(u.mcd_db), 1.0),
                fmt(u.f0_rmse, 1.0),
                fmt(u.cer, 100.0),
                fmt(u.wer, 100.0)
            );
        }
        let m = &self.means;
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>12} {:>8} {:>8}",
            format!("mean ({})", m.utterances),
            fmt(Some(m.mcd_db), 1.0),
            fmt(m.f0_rmse, 1.0),
            fmt(m.cer, 100.0),
            fmt(m.wer, 100.0)
        );
        let _ = writeln!(s, "\nMCD is mel-cepstral (internal): cosine-transform cepstra of log-mel frames, orders 1..24.");
        for (id, why) in &self.missing {
            let _ = writeln!(s, "missing {id}: {why}");
        }
        let _ = writeln!(s, "config {} seed {}", self.config_hash, self.seed);
        s
    }

    /// Writes `report.txt`, `report.json` and `metrics.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("report.txt", self.table())?;
        put("report.json", serde_json::to_string_pretty(self)?)?;
        let mut lines = String::new();
        for u in &self.utterances {
            lines += &serde_json::to_string(u)?;
            lines.push('\n');
        }
        put("metrics.jsonl", lines)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Ground-truth target renditions exist: minimise MCD.
    ParallelReference,
    /// Minimise CER.
    NoReference,
}

/// Index of the best candidate; equal scores favour the later candidate.
pub fn select_model(candidates: &[CorpusMeans], mode: SelectionMode) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("model selection over an empty list".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let score = match mode {
            SelectionMode::ParallelReference => c.mcd_db,
            SelectionMode::NoReference => {
                c.cer.ok_or_else(|| Error::Validation(format!("candidate {i} has no CER")))?
            }
        };
        if score.is_nan() {
            return Err(Error::Validation(format!("candidate {i} has an undefined score")));
        }
        if best.map_or(true, |(_, b)| score <= b) {
            best = Some((i, score));
        }
    }
    Ok(best.expect("non-empty").0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn means(mcd: f64, cer: f64) -> CorpusMeans {
        CorpusMeans { mcd_db: mcd, f0_rmse: None, cer: Some(cer), wer: None, utterances: 1 }
    }

    #[test]
    fn selection_rule() {
        let c = [means(6.5, 0.2), means(6.4, 0.3)];
        assert_eq!(select_model(&c[..1], SelectionMode::ParallelReference).unwrap(), 0);
        assert_eq!(select_model(&c, SelectionMode::ParallelReference).unwrap(), 1);
        assert_eq!(select_model(&c, SelectionMode::NoReference).unwrap(), 0);
        let tie = [means(6.4, 0.1), means(6.4, 0.1), means(7.0, 0.5)];
        assert_eq!(select_model(&tie, SelectionMode::ParallelReference).unwrap(), 1);
        assert_eq!(select_model(&tie, SelectionMode::NoReference).unwrap(), 1);
        assert!(select_model(&[], SelectionMode::NoReference).is_err());
    }

    #[test]
    fn means_are_arithmetic() {
        let u = |id: &str, mcd: f64, f0: Option<f64>| UtteranceMetrics {
            utterance_id: id.into(),
            mcd_db: mcd,
            f0_rmse: f0,
            cer: Some(0.5),
            wer: None,
            path_len: 1,
            reference_frames: 1,
            converted_frames: 1,
            voiced_pairs: 0,
            reference_voiced: 0,
            converted_voiced: 0,
        };
        let r = MetricReport::new(vec![u("a", 2.0, Some(4.0)), u("b", 4.0, None)], vec![], "h", 1).unwrap();
        assert_eq!(r.means.mcd_db, 3.0);
        assert_eq!(r.means.f0_rmse, Some(4.0));
        assert_eq!(r.means.wer, None);
        let t = r.table();
        let header = t.lines().next().unwrap();
        let pos: Vec<usize> = ["MCD", "F0RMSE", "CER", "WER"].iter().map(|c| header.find(c).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}
