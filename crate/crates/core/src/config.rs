//! Experiment configuration: one TOML file covering features, data, model,
//! stages, conversion, evaluation and visualisation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_manifest_with_base, load_utterances, split_roles, DatasetRole, ExperimentData, Utterance};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::features::FeatureConfig;
use crate::model::ModelConfig;
use crate::pipelines::{ConvertConfig, PipelineConfig, TrainConfig};
use crate::recognizer::{train_codebook, Charset, ContentKind, KMeansConfig, Recognizer};
use crate::vocoder::VocoderConfig;

/// Environment variable that replaces `output_root`; nothing else is read
/// from the environment.
pub const OUTPUT_ROOT_ENV: &str = "PVC_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    #[default]
    Text,
    FrameCode,
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Representation::Text),
            "frame-code" => Ok(Representation::FrameCode),
            other => Err(Error::InvalidArgument(format!("unknown representation {other:?} (expected text or frame-code)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    pub representation: Representation,
    pub codebook_size: usize,
    pub kmeans_iterations: usize,
    /// Symbol substitution rate of the oracle text recognizer.
    pub noise_rate: f64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self { representation: Representation::Text, codebook_size: 32, kmeans_iterations: 100, noise_rate: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Recognizer corpus; the pretraining corpus trains the codebook when absent.
    pub asr: Option<PathBuf>,
    pub tts: PathBuf,
    pub target: PathBuf,
    pub source_eval: Option<PathBuf>,
    /// Target-speaker renditions of the evaluation sentences, matched to
    /// converted utterances by `utterance_id`.
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConversionConfig {
    #[serde(flatten)]
    pub limits: ConvertConfig,
    pub write_wav: bool,
    pub vocoder: VocoderConfig,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self { limits: ConvertConfig::default(), write_wav: true, vocoder: VocoderConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizConfig {
    pub method: String,
    pub perplexity: f64,
    pub iterations: usize,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self { method: "tsne".into(), perplexity: 5.0, iterations: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    pub output_root: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub features: FeatureConfig,
    pub data: DataConfig,
    pub recognizer: RecognizerConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub convert: ConversionConfig,
    pub eval: EvalConfig,
    pub viz: VizConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_root: PathBuf::from("runs"),
            workers: 0,
            features: FeatureConfig::default(),
            data: DataConfig::default(),
            recognizer: RecognizerConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            convert: ConversionConfig::default(),
            eval: EvalConfig::default(),
            viz: VizConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        if self.data.tts.as_os_str().is_empty() || self.data.target.as_os_str().is_empty() {
            return Err(Error::Config("data.tts and data.target are required".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".into()));
        }
        let b = &self.training.budgets;
        if !(b.lr > 0.0 && b.finetune_lr_scale > 0.0 && b.tp_lr_scale > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.recognizer.representation == Representation::FrameCode && self.recognizer.codebook_size < 2 {
            return Err(Error::Config("recognizer.codebook_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.recognizer.noise_rate) {
            return Err(Error::Config("recognizer.noise_rate must lie in [0, 1]".into()));
        }
        if !(self.convert.limits.max_frames_ratio > 0.0) || self.convert.limits.max_frames_cap == 0 {
            return Err(Error::Config("conversion frame limits must be positive".into()));
        }
        if self.eval.cepstral_order == 0 || self.eval.cepstral_order >= self.features.n_mels {
            return Err(Error::Config("eval.cepstral_order must lie in 1..n_mels".into()));
        }
        if !["pca", "tsne"].contains(&self.viz.method.as_str()) {
            return Err(Error::Config(format!("viz.method {:?} must be pca or tsne", self.viz.method)));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `output_root`, unless the environment overrides it.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.resolve(&self.output_root),
        }
    }

    /// SHA-256 over every setting that affects results; the output location
    /// and worker count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_root = PathBuf::new();
        c.workers = 0;
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            model: self.model.clone(),
            train: self.training.clone(),
            seed: self.seed,
            config_hash: self.hash(),
        }
    }

    fn load_role(&self, path: &Path) -> Result<Vec<Utterance>> {
        let manifest = load_manifest_with_base(&self.resolve(path))?;
        load_utterances(&manifest, &self.features)
    }

    /// Loads and validates every configured corpus.
    pub fn load_data(&self) -> Result<ExperimentData> {
        let mut roles = vec![
            (DatasetRole::TtsPretrainCorpus, self.load_role(&self.data.tts)?),
            (DatasetRole::TargetFinetuneCorpus, self.load_role(&self.data.target)?),
        ];
        if let Some(p) = &self.data.asr {
            roles.push((DatasetRole::AsrCorpus, self.load_role(p)?));
        }
        if let Some(p) = &self.data.source_eval {
            roles.push((DatasetRole::SourceEval, self.load_role(p)?));
        }
        split_roles(roles)
    }
}

/// Recognizer for `data`: a charset over every transcript, or a codebook
/// trained on the recognizer corpus.
pub fn build_recognizer(data: &ExperimentData, cfg: &RecognizerConfig, seed: u64) -> Result<Recognizer> {
    match cfg.representation {
        Representation::Text => {
            let all = [&data.asr, &data.tts, &data.target, &data.source_eval];
            let charset = Charset::from_transcripts(all.iter().flat_map(|c| c.iter()).map(|u| u.record.transcript.as_str()));
            if charset.is_empty() {
                return Err(Error::Validation("no transcripts to build a character set from".into()));
            }
            Ok(Recognizer::Text { charset, noise_rate: cfg.noise_rate, noise_seed: seed })
        }
        Representation::FrameCode => {
            let corpus = data.codebook_corpus();
            let mels: Vec<_> = corpus.iter().map(|u| &u.mel).collect();
            let id = if data.asr.is_empty() { "tts" } else { "asr" };
            let codebook = train_codebook(
                &mels,
                cfg.codebook_size,
                seed,
                id,
                &KMeansConfig { max_iter: cfg.kmeans_iterations },
            )?;
            Ok(Recognizer::FrameCode { codebook })
        }
    }
}

pub fn representation_of(r: &Recognizer) -> Representation {
    match r.kind() {
        ContentKind::Text => Representation::Text,
        ContentKind::FrameCode => Representation::FrameCode,
    }
}
