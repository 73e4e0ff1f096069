use serde::{Deserialize, Serialize};

use crate::data::DatasetRole;
use crate::error::{Error, Result};
use crate::params::{
    group_matches, ALL_GROUPS, GROUP_GST_ATTENTION, GROUP_GST_REFENC, GROUP_GST_TOKENS, GROUP_TP, GROUP_TTS_DECODER,
    GROUP_TTS_ENCODER, GROUP_TTS_SPEAKERS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Baseline,
    Spt,
    Ttp,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Spt => "spt",
            Strategy::Ttp => "ttp",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "spt" => Ok(Strategy::Spt),
            "ttp" => Ok(Strategy::Ttp),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?} (expected baseline, spt or ttp)"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Reconstruction with the style from the reference encoder.
    Gst,
    /// Reconstruction with the style from the text predictor.
    Tp,
    /// Reconstruction with a zero style (baseline).
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    PretrainBaseline,
    FinetuneBaseline,
    PretrainGstTts,
    FinetuneSpt,
    PretrainTp,
    FinetuneTtp,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::PretrainBaseline => "pretrain-baseline",
            StageKind::FinetuneBaseline => "finetune-baseline",
            StageKind::PretrainGstTts => "pretrain-gst-tts",
            StageKind::FinetuneSpt => "finetune-spt",
            StageKind::PretrainTp => "pretrain-tp",
            StageKind::FinetuneTtp => "finetune-ttp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    pub corpus: DatasetRole,
    pub loss: LossKind,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
    pub steps: usize,
    pub lr: f64,
}

impl StageSpec {
    pub fn is_trainable(&self, group: &str) -> bool {
        self.trainable.iter().any(|g| g == group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub strategy: Strategy,
    pub stages: Vec<StageSpec>,
    pub freeze_refenc: bool,
}

/// Step budgets and learning rates for the stages of every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageBudgets {
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub tp_pretrain_steps: usize,
    pub lr: f64,
    /// Fine-tuning learning rate as a fraction of `lr`.
    pub finetune_lr_scale: f64,
    /// Learning rate of text-predictor pretraining as a fraction of `lr`.
    pub tp_lr_scale: f64,
}

impl Default for StageBudgets {
    fn default() -> Self {
        Self {
            pretrain_steps: 2000,
            finetune_steps: 300,
            tp_pretrain_steps: 600,
            lr: 3e-3,
            finetune_lr_scale: 0.1,
            tp_lr_scale: 1.0,
        }
    }
}

fn split(trainable: &[&str]) -> (Vec<String>, Vec<String>) {
    let t: Vec<String> = ALL_GROUPS.iter().filter(|g| trainable.contains(g)).map(|g| g.to_string()).collect();
    let f: Vec<String> = ALL_GROUPS.iter().filter(|g| !trainable.contains(g)).map(|g| g.to_string()).collect();
    (t, f)
}

const TTS: [&str; 3] = [GROUP_TTS_ENCODER, GROUP_TTS_DECODER, GROUP_TTS_SPEAKERS];
const GST: [&str; 3] = [GROUP_GST_TOKENS, GROUP_GST_REFENC, GROUP_GST_ATTENTION];

fn stage(kind: StageKind, corpus: DatasetRole, loss: LossKind, trainable: &[&str], steps: usize, lr: f64) -> StageSpec {
    let (trainable, frozen) = split(trainable);
    StageSpec { kind, corpus, loss, trainable, frozen, steps, lr }
}

pub fn stage_for(kind: StageKind, freeze_refenc: bool, b: &StageBudgets) -> StageSpec {
    let ft_lr = b.lr * b.finetune_lr_scale;
    let tts_gst: Vec<&str> = TTS.iter().chain(GST.iter()).copied().collect();
    let tts_tp: Vec<&str> = TTS.iter().copied().chain([GROUP_TP]).collect();
    use DatasetRole::*;
    match kind {
        StageKind::PretrainBaseline => stage(kind, TtsPretrainCorpus, LossKind::Plain, &TTS, b.pretrain_steps, b.lr),
        StageKind::FinetuneBaseline => stage(kind, TargetFinetuneCorpus, LossKind::Plain, &TTS, b.finetune_steps, ft_lr),
        StageKind::PretrainGstTts => stage(kind, TtsPretrainCorpus, LossKind::Gst, &tts_gst, b.pretrain_steps, b.lr),
        StageKind::FinetuneSpt => {
            let groups: &[&str] = if freeze_refenc { &TTS } else { &tts_gst };
            stage(kind, TargetFinetuneCorpus, LossKind::Gst, groups, b.finetune_steps, ft_lr)
        }
        StageKind::PretrainTp => {
            stage(kind, TtsPretrainCorpus, LossKind::Tp, &[GROUP_TP], b.tp_pretrain_steps, b.lr * b.tp_lr_scale)
        }
        StageKind::FinetuneTtp => stage(kind, TargetFinetuneCorpus, LossKind::Tp, &tts_tp, b.finetune_steps, ft_lr),
    }
}

pub fn build_plan(strategy: Strategy, freeze_refenc: bool, budgets: &StageBudgets) -> StagePlan {
    let kinds: &[StageKind] = match strategy {
        Strategy::Baseline => &[StageKind::PretrainBaseline, StageKind::FinetuneBaseline],
        Strategy::Spt => &[StageKind::PretrainGstTts, StageKind::FinetuneSpt],
        Strategy::Ttp => &[StageKind::PretrainGstTts, StageKind::PretrainTp, StageKind::FinetuneTtp],
    };
    StagePlan {
        strategy,
        stages: kinds.iter().map(|&k| stage_for(k, freeze_refenc, budgets)).collect(),
        freeze_refenc: freeze_refenc && strategy == Strategy::Spt,
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        let expected = match self.strategy {
            Strategy::Baseline | Strategy::Spt => 2,
            Strategy::Ttp => 3,
        };
        if self.stages.len() != expected {
            return Err(Error::Validation(format!(
                "{} plan needs {expected} stages, has {}",
                self.strategy,
                self.stages.len()
            )));
        }
        if self.freeze_refenc && self.strategy != Strategy::Spt {
            return Err(Error::Validation("freeze_refenc applies to spt only".into()));
        }
        for s in &self.stages {
            for g in ALL_GROUPS {
                let t = s.trainable.iter().filter(|x| *x == g).count();
                let f = s.frozen.iter().filter(|x| *x == g).count();
                if t + f != 1 {
                    return Err(Error::Validation(format!(
                        "stage {}: group {g} must be exactly one of trainable/frozen",
                        s.kind.as_str()
                    )));
                }
            }
            if s.trainable.iter().chain(&s.frozen).any(|g| !ALL_GROUPS.contains(&g.as_str())) {
                return Err(Error::Validation(format!("stage {}: unknown parameter group", s.kind.as_str())));
            }
        }
        Ok(())
    }
}

/// Whether `name`'s group is trainable in `spec`.
pub fn trainable_param(spec: &StageSpec, name: &str) -> bool {
    let g = crate::params::group_of(name);
    spec.trainable.iter().any(|p| group_matches(p, g))
}
