//! Stage ledgers for the baseline, SPT and TTP systems and the three
//! conversion procedures.

pub mod checkpoint;
pub mod convert;
pub mod plan;
pub mod train;

pub use checkpoint::{Checkpoint, EpochLog, Provenance, StageRecord};
pub use convert::{convert, ConversionTrace, ConvertConfig, StyleSource};
pub use plan::{build_plan, stage_for, LossKind, StageBudgets, StageKind, StagePlan, StageSpec, Strategy};
pub use train::{
    finetune_baseline, finetune_spt, finetune_ttp, pretrain_baseline, pretrain_gst_tts, pretrain_tp, run_stage,
    PipelineConfig, TrainConfig,
};
