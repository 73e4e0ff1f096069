use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetRole;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::AdamState;

use super::plan::{LossKind, StageKind, Strategy};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub l1: f64,
    pub stop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub kind: StageKind,
    pub strategy: Strategy,
    pub stage_index: usize,
    pub corpus: DatasetRole,
    pub loss: LossKind,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
    pub steps: usize,
    pub lr: f64,
    pub freeze_refenc: bool,
    /// Teacher-forced L1 over the stage corpus before and after the stage.
    pub initial_l1: f64,
    pub final_l1: f64,
    pub epochs: Vec<EpochLog>,
    /// Mean `‖TP(Y) − RefEnc(X)‖₁` over the stage corpus, logged at the start
    /// and after every epoch of stages that train the text predictor.
    #[serde(default)]
    pub style_distance: Vec<f64>,
    /// Silhouette-by-speaker of reference-encoder embeddings on the stage
    /// corpus after the stage, when defined.
    #[serde(default)]
    pub speaker_separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: Strategy,
    pub stages: Vec<StageRecord>,
    pub step_count: u64,
    pub seed: u64,
    pub config_hash: String,
    pub freeze_refenc: bool,
}

impl Provenance {
    pub fn last_stage(&self) -> Option<StageKind> {
        self.stages.last().map(|s| s.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Model,
    /// Set once a target fine-tuning stage has run.
    pub target_speaker: Option<String>,
    pub optimizer: AdamState,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string(self)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: format version {} (expected {FORMAT_VERSION})",
                path.display(),
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}
