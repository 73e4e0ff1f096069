//! Corpus manifests and experiment dataset roles.
//!
//! A manifest is a JSON-lines file, one [`UtteranceRecord`] per line. Relative
//! `audio_path`s resolve against the manifest's own directory.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::features::{extract_mel, FeatureConfig, MelFeatures};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub audio_path: String,
    #[serde(default)]
    pub transcript: String,
    pub speaker_id: String,
    #[serde(default = "default_language")]
    pub language: String,
}

fn default_language() -> String {
    "en".to_string()
}

impl UtteranceRecord {
    pub fn resolve_audio(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetRole {
    /// Recognizer training corpus; trains the frame codebook.
    AsrCorpus,
    /// Multispeaker synthesizer pretraining corpus.
    TtsPretrainCorpus,
    /// Single-speaker target fine-tuning corpus.
    TargetFinetuneCorpus,
    SourceEval,
}

impl DatasetRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetRole::AsrCorpus => "asr-corpus",
            DatasetRole::TtsPretrainCorpus => "tts-pretrain-corpus",
            DatasetRole::TargetFinetuneCorpus => "target-finetune-corpus",
            DatasetRole::SourceEval => "source-eval",
        }
    }
}

/// Loaded manifest with the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<UtteranceRecord>,
}

pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.utterance_id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{}: duplicate utterance_id {:?}",
                path.display(),
                i + 1,
                rec.utterance_id
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest_with_base(path: &Path) -> Result<Manifest> {
    let records = load_manifest(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { base_dir, records })
}

pub fn write_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// A record with its extracted features.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub record: UtteranceRecord,
    pub mel: MelFeatures,
}

impl Utterance {
    pub fn id(&self) -> &str {
        &self.record.utterance_id
    }

    pub fn speaker(&self) -> &str {
        &self.record.speaker_id
    }
}

/// Reads audio and extracts features for every record, in parallel.
pub fn load_utterances(manifest: &Manifest, cfg: &FeatureConfig) -> Result<Vec<Utterance>> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let wav = read_wav(&rec.resolve_audio(&manifest.base_dir))?;
            let mel = extract_mel(&wav, cfg)?;
            Ok(Utterance { record: rec.clone(), mel })
        })
        .collect()
}

pub fn speakers_of(utts: &[Utterance]) -> BTreeSet<String> {
    utts.iter().map(|u| u.speaker().to_string()).collect()
}

/// The corpora of one experiment, validated against their roles.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub asr: Vec<Utterance>,
    pub tts: Vec<Utterance>,
    pub target: Vec<Utterance>,
    pub source_eval: Vec<Utterance>,
    pub target_speaker: String,
}

impl ExperimentData {
    pub fn role(&self, role: DatasetRole) -> &[Utterance] {
        match role {
            DatasetRole::AsrCorpus => &self.asr,
            DatasetRole::TtsPretrainCorpus => &self.tts,
            DatasetRole::TargetFinetuneCorpus => &self.target,
            DatasetRole::SourceEval => &self.source_eval,
        }
    }

    /// Corpus the frame codebook is trained on: the recognizer corpus when
    /// one is given, the pretraining corpus otherwise.
    pub fn codebook_corpus(&self) -> &[Utterance] {
        if self.asr.is_empty() {
            &self.tts
        } else {
            &self.asr
        }
    }
}

/// Checks a single-speaker target set and returns its speaker.
pub fn validate_target(target: &[Utterance]) -> Result<String> {
    let speakers = speakers_of(target);
    match speakers.len() {
        0 => Err(Error::Validation("target fine-tuning corpus is empty".into())),
        1 => Ok(speakers.into_iter().next().unwrap()),
        n => Err(Error::Validation(format!(
            "target fine-tuning corpus must hold one speaker, found {n}: {speakers:?}"
        ))),
    }
}

/// Assigns role-tagged corpora to an experiment. Each role appears at most
/// once; the pretraining corpus must be non-empty and the target corpus
/// single-speaker.
pub fn split_roles(corpora: Vec<(DatasetRole, Vec<Utterance>)>) -> Result<ExperimentData> {
    let mut seen = HashSet::new();
    let mut data = ExperimentData {
        asr: Vec::new(),
        tts: Vec::new(),
        target: Vec::new(),
        source_eval: Vec::new(),
        target_speaker: String::new(),
    };
    for (role, utts) in corpora {
        if !seen.insert(role) {
            return Err(Error::Validation(format!("role {} assigned twice", role.as_str())));
        }
        match role {
            DatasetRole::AsrCorpus => data.asr = utts,
            DatasetRole::TtsPretrainCorpus => data.tts = utts,
            DatasetRole::TargetFinetuneCorpus => data.target = utts,
            DatasetRole::SourceEval => data.source_eval = utts,
        }
    }
    if data.tts.is_empty() {
        return Err(Error::Validation("pretraining corpus is empty".into()));
    }
    data.target_speaker = validate_target(&data.target)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use proptest::prelude::*;

    fn rec(id: &str, spk: &str) -> UtteranceRecord {
        UtteranceRecord {
            utterance_id: id.into(),
            audio_path: format!("{id}.wav"),
            transcript: "hello".into(),
            speaker_id: spk.into(),
            language: "en".into(),
        }
    }

    fn utt(id: &str, spk: &str) -> Utterance {
        Utterance { record: rec(id, spk), mel: MelFeatures::new(Mat::zeros(3, 4), 16.0, 16000).unwrap() }
    }

    #[test]
    fn three_line_manifest_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = vec![rec("a", "s1"), rec("b", "s1"), rec("c", "s2")];
        write_manifest(&p, &recs).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), recs);
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &[rec("utt_001", "s"), rec("utt_001", "s")]).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let good = serde_json::to_string(&rec("a", "s")).unwrap();
        fs::write(&p, format!("{good}\n{{not json}}\n")).unwrap();
        match load_manifest(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_roles_checks_target_and_pretrain() {
        let target: Vec<_> = (0..70).map(|i| utt(&format!("t{i}"), "TEF1")).collect();
        let tts = vec![utt("p0", "a"), utt("p1", "b")];
        let data = split_roles(vec![
            (DatasetRole::TtsPretrainCorpus, tts.clone()),
            (DatasetRole::TargetFinetuneCorpus, target),
        ])
        .unwrap();
        assert_eq!(data.target_speaker, "TEF1");
        assert_eq!(data.role(DatasetRole::TargetFinetuneCorpus).len(), 70);

        let mixed = vec![utt("t0", "x"), utt("t1", "y")];
        assert!(split_roles(vec![
            (DatasetRole::TtsPretrainCorpus, tts.clone()),
            (DatasetRole::TargetFinetuneCorpus, mixed),
        ])
        .is_err());

        assert!(split_roles(vec![
            (DatasetRole::TtsPretrainCorpus, vec![]),
            (DatasetRole::TargetFinetuneCorpus, vec![utt("t0", "x")]),
        ])
        .is_err());
    }

    proptest! {
        #[test]
        fn manifest_round_trip(rows in prop::collection::vec(("[a-z0-9_]{1,8}", "[ a-z]{0,12}", "[A-Z]{2,4}"), 0..12)) {
            let mut seen = HashSet::new();
            let recs: Vec<UtteranceRecord> = rows
                .into_iter()
                .filter(|(id, _, _)| seen.insert(id.clone()))
                .map(|(id, text, spk)| UtteranceRecord {
                    audio_path: format!("wav/{id}.wav"),
                    utterance_id: id,
                    transcript: text,
                    speaker_id: spk,
                    language: "en".into(),
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.jsonl");
            write_manifest(&p, &recs).unwrap();
            prop_assert_eq!(load_manifest(&p).unwrap(), recs);
        }
    }
}
