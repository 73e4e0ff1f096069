//! Stage execution for the baseline, SPT and TTP training ledgers.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{speakers_of, validate_target, Utterance};
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::model::{Model, ModelConfig};
use crate::params::{AdamConfig, AdamState, GROUP_TP};
use crate::recognizer::Recognizer;
use crate::synthesizer::{loss_and_grads, StyleMode, TrainExample};
use crate::viz::silhouette;

use super::checkpoint::{Checkpoint, EpochLog, Provenance, StageRecord, FORMAT_VERSION};
use super::plan::{stage_for, trainable_param, LossKind, StageBudgets, StageKind, StageSpec, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub budgets: StageBudgets,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { budgets: StageBudgets::default(), batch_size: 8, warmup_steps: 50, grad_clip: 1.0 }
    }
}

/// Everything a stage needs besides data and the incoming checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub config_hash: String,
}

impl PipelineConfig {
    pub fn new(model: ModelConfig, train: TrainConfig, seed: u64) -> Self {
        Self { model, train, seed, config_hash: String::new() }
    }
}

fn style_mode(spec: &StageSpec) -> StyleMode {
    match spec.loss {
        LossKind::Gst => StyleMode::RefEnc,
        LossKind::Plain => StyleMode::Zero,
        // gradients stop at the encoder states when the predictor trains alone
        LossKind::Tp => StyleMode::Tp { stop_gradient: spec.trainable.iter().all(|g| g == GROUP_TP) },
    }
}

fn stage_seed(seed: u64, kind: StageKind) -> u64 {
    let salt = match kind {
        StageKind::PretrainBaseline => 0x11,
        StageKind::FinetuneBaseline => 0x12,
        StageKind::PretrainGstTts => 0x21,
        StageKind::FinetuneSpt => 0x22,
        StageKind::PretrainTp => 0x31,
        StageKind::FinetuneTtp => 0x32,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

/// Teacher-forced L1 over a set of examples.
pub fn corpus_l1(model: &Model, examples: &[TrainExample], mode: StyleMode) -> Result<f64> {
    let (loss, _) = loss_and_grads(examples, &model.params, mode, &crate::params::no_params, &model.config.loss)?;
    Ok(loss.l1)
}

/// Mean `‖TP(Y) − RefEnc(X)‖₁` over `utts`.
pub fn style_distance(model: &Model, utts: &[Utterance]) -> Result<f64> {
    let d: Vec<f64> = utts
        .par_iter()
        .map(|u| {
            let r = model.ref_enc(&u.mel)?;
            let p = model.predict_style(&model.recognize(u)?)?;
            Ok(r.vector.iter().zip(&p.vector).map(|(a, b)| (a - b).abs()).sum())
        })
        .collect::<Result<_>>()?;
    Ok(d.iter().sum::<f64>() / d.len().max(1) as f64)
}

/// Silhouette-by-speaker of reference-encoder embeddings, when at least two
/// speakers have two utterances each.
pub fn refenc_speaker_separation(model: &Model, utts: &[Utterance]) -> Result<Option<f64>> {
    if !model.has_gst() {
        return Ok(None);
    }
    let speakers = speakers_of(utts);
    let ok = speakers.len() >= 2
        && speakers.iter().all(|s| utts.iter().filter(|u| u.speaker() == s).count() >= 2);
    if !ok {
        return Ok(None);
    }
    let rows: Vec<Vec<f64>> = utts.par_iter().map(|u| Ok(model.ref_enc(&u.mel)?.vector)).collect::<Result<_>>()?;
    let labels: Vec<String> = utts.iter().map(|u| u.speaker().to_string()).collect();
    Ok(Some(silhouette(&rows, &labels)?))
}

/// Runs one stage on `corpus`, training exactly the groups `spec` marks
/// trainable. Parameters of frozen groups never enter the optimizer and
/// are never differentiated.
pub fn run_stage(
    mut ckpt: Checkpoint,
    corpus: &[Utterance],
    spec: &StageSpec,
    strategy: Strategy,
    freeze_refenc: bool,
    cfg: &PipelineConfig,
) -> Result<Checkpoint> {
    if corpus.is_empty() {
        return Err(Error::Validation(format!("stage {} has an empty corpus", spec.kind.as_str())));
    }
    let examples = ckpt.model.examples(corpus)?;
    let mode = style_mode(spec);
    let trainable = |name: &str| trainable_param(spec, name);
    let tracks_tp = spec.is_trainable(GROUP_TP) && ckpt.model.has_gst();

    let initial_l1 = corpus_l1(&ckpt.model, &examples, mode)?;
    let mut style_dist = Vec::new();
    if tracks_tp {
        style_dist.push(style_distance(&ckpt.model, corpus)?);
    }
    info!("{}: {} utterances, initial L1 {initial_l1:.4}", spec.kind.as_str(), corpus.len());

    let adam_cfg = AdamConfig { lr: spec.lr, warmup_steps: cfg.train.warmup_steps, grad_clip: cfg.train.grad_clip, ..Default::default() };
    let mut adam = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, spec.kind));
    let batch = cfg.train.batch_size.clamp(1, examples.len());
    let steps_per_epoch = examples.len().div_ceil(batch);
    let mut order: Vec<usize> = Vec::new();
    let mut epochs = Vec::new();
    let (mut acc_l1, mut acc_stop, mut acc_n) = (0.0, 0.0, 0usize);

    for step in 0..spec.steps {
        let pos = step % steps_per_epoch;
        if pos == 0 {
            order = (0..examples.len()).collect();
            order.shuffle(&mut rng);
        }
        let idx = &order[pos * batch..((pos + 1) * batch).min(order.len())];
        let mb: Vec<TrainExample> = idx.iter().map(|&i| examples[i].clone()).collect();
        let (loss, grads) = loss_and_grads(&mb, &ckpt.model.params, mode, &trainable, &ckpt.model.config.loss)?;
        debug_assert!(grads.keys().all(|n| trainable(n)));
        adam.step(&adam_cfg, &mut ckpt.model.params, &grads);
        acc_l1 += loss.l1;
        acc_stop += loss.stop;
        acc_n += 1;
        if pos + 1 == steps_per_epoch || step + 1 == spec.steps {
            let log = EpochLog { epoch: epochs.len(), step: step + 1, l1: acc_l1 / acc_n as f64, stop: acc_stop / acc_n as f64 };
            if epochs.len() % 50 == 0 {
                info!("{} epoch {} step {}: L1 {:.4} stop {:.4}", spec.kind.as_str(), log.epoch, log.step, log.l1, log.stop);
            }
            epochs.push(log);
            (acc_l1, acc_stop, acc_n) = (0.0, 0.0, 0);
            if tracks_tp {
                style_dist.push(style_distance(&ckpt.model, corpus)?);
            }
        }
    }

    let final_l1 = corpus_l1(&ckpt.model, &examples, mode)?;
    info!("{}: final L1 {final_l1:.4}", spec.kind.as_str());
    let speaker_separation = refenc_speaker_separation(&ckpt.model, corpus)?;
    let stage_index = ckpt.provenance.stages.len();
    ckpt.provenance.stages.push(StageRecord {
        kind: spec.kind,
        strategy,
        stage_index,
        corpus: spec.corpus,
        loss: spec.loss,
        trainable: spec.trainable.clone(),
        frozen: spec.frozen.clone(),
        steps: spec.steps,
        lr: spec.lr,
        freeze_refenc,
        initial_l1,
        final_l1,
        epochs,
        style_distance: style_dist,
        speaker_separation,
    });
    ckpt.provenance.strategy = strategy;
    ckpt.provenance.step_count += spec.steps as u64;
    ckpt.optimizer = adam;
    Ok(ckpt)
}

fn fresh_checkpoint(
    d_tts: &[Utterance],
    recognizer: Recognizer,
    with_gst: bool,
    strategy: Strategy,
    cfg: &PipelineConfig,
) -> Result<Checkpoint> {
    if d_tts.is_empty() {
        return Err(Error::Validation("pretraining corpus is empty".into()));
    }
    let speakers: Vec<String> = speakers_of(d_tts).into_iter().collect();
    if speakers.len() < 2 {
        warn!("pretraining corpus has a single speaker; a multispeaker corpus is expected");
    }
    let normalizer = Normalizer::fit(d_tts.iter().map(|u| &u.mel))?;
    let model = Model::init(cfg.model.clone(), recognizer, normalizer, speakers, with_gst, cfg.seed)?;
    Ok(Checkpoint {
        format_version: FORMAT_VERSION,
        model,
        target_speaker: None,
        optimizer: AdamState::default(),
        provenance: Provenance {
            strategy,
            stages: Vec::new(),
            step_count: 0,
            seed: cfg.seed,
            config_hash: cfg.config_hash.clone(),
            freeze_refenc: false,
        },
    })
}

/// Stage 1 of SPT and TTP: synthesizer and style tokens trained jointly on
/// the multispeaker corpus with the reference-encoder loss.
pub fn pretrain_gst_tts(
    d_tts: &[Utterance],
    recognizer: Recognizer,
    strategy: Strategy,
    cfg: &PipelineConfig,
) -> Result<Checkpoint> {
    if strategy == Strategy::Baseline {
        return Err(Error::InvalidArgument("the baseline has no style-token stage".into()));
    }
    let ckpt = fresh_checkpoint(d_tts, recognizer, true, strategy, cfg)?;
    let spec = stage_for(StageKind::PretrainGstTts, false, &cfg.train.budgets);
    run_stage(ckpt, d_tts, &spec, strategy, false, cfg)
}

fn prepare_target(ckpt: &mut Checkpoint, d_trg: &[Utterance]) -> Result<()> {
    let target = validate_target(d_trg)?;
    ckpt.model.ensure_speaker(&target);
    ckpt.target_speaker = Some(target);
    Ok(())
}

/// Stage 2 of SPT: reference-encoder loss on the target speaker, optionally
/// with every `gst.*` group frozen.
pub fn finetune_spt(d_trg: &[Utterance], mut ckpt: Checkpoint, freeze_refenc: bool, cfg: &PipelineConfig) -> Result<Checkpoint> {
    if !ckpt.model.has_gst() {
        return Err(Error::Checkpoint("fine-tuning SPT needs a checkpoint with gst.* groups".into()));
    }
    prepare_target(&mut ckpt, d_trg)?;
    ckpt.provenance.freeze_refenc = freeze_refenc;
    let spec = stage_for(StageKind::FinetuneSpt, freeze_refenc, &cfg.train.budgets);
    run_stage(ckpt, d_trg, &spec, Strategy::Spt, freeze_refenc, cfg)
}

/// Stage 2 of TTP: the text predictor alone, trained through the frozen
/// synthesizer on the multispeaker corpus.
pub fn pretrain_tp(d_tts: &[Utterance], mut ckpt: Checkpoint, cfg: &PipelineConfig) -> Result<Checkpoint> {
    if ckpt.provenance.last_stage() != Some(StageKind::PretrainGstTts) || !ckpt.model.has_gst() {
        return Err(Error::Checkpoint("text-predictor pretraining needs a pretrained GST-TTS checkpoint".into()));
    }
    ckpt.model.attach_tp(cfg.seed.wrapping_add(0x7470));
    let spec = stage_for(StageKind::PretrainTp, false, &cfg.train.budgets);
    run_stage(ckpt, d_tts, &spec, Strategy::Ttp, false, cfg)
}

/// Stage 3 of TTP: predictor and synthesizer fine-tuned on the target.
pub fn finetune_ttp(d_trg: &[Utterance], mut ckpt: Checkpoint, cfg: &PipelineConfig) -> Result<Checkpoint> {
    if !ckpt.model.has_tp() || ckpt.provenance.last_stage() != Some(StageKind::PretrainTp) {
        return Err(Error::Checkpoint("TTP fine-tuning needs a checkpoint from text-predictor pretraining".into()));
    }
    prepare_target(&mut ckpt, d_trg)?;
    let spec = stage_for(StageKind::FinetuneTtp, false, &cfg.train.budgets);
    run_stage(ckpt, d_trg, &spec, Strategy::Ttp, false, cfg)
}

pub fn pretrain_baseline(d_tts: &[Utterance], recognizer: Recognizer, cfg: &PipelineConfig) -> Result<Checkpoint> {
    let ckpt = fresh_checkpoint(d_tts, recognizer, false, Strategy::Baseline, cfg)?;
    let spec = stage_for(StageKind::PretrainBaseline, false, &cfg.train.budgets);
    run_stage(ckpt, d_tts, &spec, Strategy::Baseline, false, cfg)
}

pub fn finetune_baseline(d_trg: &[Utterance], mut ckpt: Checkpoint, cfg: &PipelineConfig) -> Result<Checkpoint> {
    if ckpt.provenance.last_stage() != Some(StageKind::PretrainBaseline) {
        return Err(Error::Checkpoint("baseline fine-tuning needs a pretrained baseline checkpoint".into()));
    }
    prepare_target(&mut ckpt, d_trg)?;
    let spec = stage_for(StageKind::FinetuneBaseline, false, &cfg.train.budgets);
    run_stage(ckpt, d_trg, &spec, Strategy::Baseline, false, cfg)
}
