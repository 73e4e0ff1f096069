//! End-to-end runs over files: training with per-stage resumption, batch
//! conversion, evaluation and embedding visualisation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, Waveform};
use crate::config::{build_recognizer, ExperimentConfig};
use crate::data::{load_manifest_with_base, Utterance, UtteranceRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate_pair, EvalPair, MetricReport};
use crate::features::{extract_mel, MelFeatures};
use crate::pipelines::{
    build_plan, convert, finetune_baseline, finetune_spt, finetune_ttp, pretrain_baseline, pretrain_gst_tts,
    pretrain_tp, Checkpoint, ConversionTrace, StageKind, Strategy,
};
use crate::viz::{collect_embeddings, coordinates_csv, project_2d, scatter_svg, silhouette, EmbeddingMode, Projection};
use crate::vocoder::griffin_lim;

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Directory of one strategy's run under the output root.
pub fn run_dir(root: &Path, strategy: Strategy, freeze_refenc: bool) -> PathBuf {
    let name = if freeze_refenc && strategy == Strategy::Spt { "spt-frozen".to_string() } else { strategy.to_string() };
    root.join(name)
}

pub fn stage_checkpoint_path(run: &Path, index: usize, kind: StageKind) -> PathBuf {
    run.join("checkpoints").join(format!("stage-{index}-{}.json", kind.as_str()))
}

pub fn final_checkpoint_path(run: &Path) -> PathBuf {
    run.join("checkpoints").join("final.json")
}

fn resumable(path: &Path, index: usize, kind: StageKind, hash: &str, freeze: bool) -> Option<Checkpoint> {
    let ckpt = Checkpoint::load(path).ok()?;
    let p = &ckpt.provenance;
    let ok = p.config_hash == hash
        && p.stages.len() == index + 1
        && p.stages[index].kind == kind
        && p.stages.iter().all(|s| s.freeze_refenc == freeze);
    ok.then_some(ckpt)
}

/// Runs every stage of `strategy`, writing one checkpoint per stage boundary.
/// Stages whose checkpoint already exists for the same configuration are
/// loaded instead of retrained.
pub fn train(cfg: &ExperimentConfig, strategy: Strategy, freeze_refenc: bool, run: &Path) -> Result<Checkpoint> {
    cfg.validate()?;
    let plan = build_plan(strategy, freeze_refenc, &cfg.training.budgets);
    plan.validate()?;
    if freeze_refenc && strategy != Strategy::Spt {
        warn!("--freeze-refenc only applies to spt; ignored for {strategy}");
    }
    let freeze = plan.freeze_refenc;
    let hash = cfg.hash();
    write_text(&run.join("config.toml"), &cfg.to_toml()?)?;
    write_json(&run.join("plan.json"), &plan)?;

    let data = cfg.load_data()?;
    let pcfg = cfg.pipeline();
    let mut ckpt: Option<Checkpoint> = None;
    for (i, spec) in plan.stages.iter().enumerate() {
        let path = stage_checkpoint_path(run, i, spec.kind);
        if let Some(done) = resumable(&path, i, spec.kind, &hash, freeze) {
            info!("stage {i} ({}) already complete, resuming from {}", spec.kind.as_str(), path.display());
            ckpt = Some(done);
            continue;
        }
        let prev = ckpt.take();
        let need = |c: Option<Checkpoint>| c.ok_or_else(|| Error::Checkpoint("stage has no input checkpoint".into()));
        let next = match spec.kind {
            StageKind::PretrainBaseline => {
                pretrain_baseline(&data.tts, build_recognizer(&data, &cfg.recognizer, cfg.seed)?, &pcfg)?
            }
            StageKind::PretrainGstTts => {
                pretrain_gst_tts(&data.tts, build_recognizer(&data, &cfg.recognizer, cfg.seed)?, strategy, &pcfg)?
            }
            StageKind::FinetuneBaseline => finetune_baseline(&data.target, need(prev)?, &pcfg)?,
            StageKind::FinetuneSpt => finetune_spt(&data.target, need(prev)?, freeze, &pcfg)?,
            StageKind::PretrainTp => pretrain_tp(&data.tts, need(prev)?, &pcfg)?,
            StageKind::FinetuneTtp => finetune_ttp(&data.target, need(prev)?, &pcfg)?,
        };
        next.save(&path)?;
        write_json(
            &run.join("logs").join(format!("stage-{i}-{}.json", spec.kind.as_str())),
            next.provenance.stages.last().expect("stage recorded"),
        )?;
        ckpt = Some(next);
    }
    let ckpt = ckpt.expect("plans have stages");
    ckpt.save(&final_checkpoint_path(run))?;
    Ok(ckpt)
}

/// A converted utterance as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertedMel {
    pub utterance_id: String,
    pub strategy: Strategy,
    pub mel: MelFeatures,
    pub truncated: bool,
    pub config_hash: String,
    pub seed: u64,
}

pub fn converted_mel_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.mel.json"))
}

pub fn converted_wav_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.wav"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionSummary {
    pub strategy: Strategy,
    pub converted: Vec<String>,
    pub truncated: Vec<String>,
    /// Utterances that failed, with the reason; the rest of the corpus is
    /// still converted.
    pub failures: Vec<(String, String)>,
    pub config_hash: String,
    pub seed: u64,
}

fn convert_one(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    strategy: Strategy,
    rec: &UtteranceRecord,
    base: &Path,
    out: &Path,
) -> Result<ConversionTrace> {
    let wav = read_wav(&rec.resolve_audio(base))?;
    let source = Utterance { record: rec.clone(), mel: extract_mel(&wav, &cfg.features)? };
    let (synth, trace) = convert(strategy, &source, ckpt, &cfg.convert.limits)?;
    let artifact = ConvertedMel {
        utterance_id: rec.utterance_id.clone(),
        strategy,
        mel: synth.mel.clone(),
        truncated: synth.truncated,
        config_hash: ckpt.provenance.config_hash.clone(),
        seed: ckpt.provenance.seed,
    };
    write_json(&converted_mel_path(out, &rec.utterance_id), &artifact)?;
    if cfg.convert.write_wav && synth.mel.num_frames() >= 2 {
        let audio = griffin_lim(&synth.mel, &cfg.features, &cfg.convert.vocoder)?;
        write_wav(&converted_wav_path(out, &rec.utterance_id), &audio)?;
    }
    Ok(trace)
}

/// Converts every utterance of `manifest`, in parallel. Per-utterance
/// failures are recorded and do not stop the run.
pub fn convert_corpus(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    strategy: Strategy,
    manifest: &Path,
    out: &Path,
) -> Result<ConversionSummary> {
    if ckpt.provenance.strategy != strategy {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained for {}, conversion requested {strategy}",
            ckpt.provenance.strategy
        )));
    }
    let m = load_manifest_with_base(manifest)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results: Vec<Result<ConversionTrace>> =
        m.records.par_iter().map(|r| convert_one(cfg, ckpt, strategy, r, &m.base_dir, out)).collect();
    let mut traces = String::new();
    let mut summary = ConversionSummary {
        strategy,
        converted: Vec::new(),
        truncated: Vec::new(),
        failures: Vec::new(),
        config_hash: ckpt.provenance.config_hash.clone(),
        seed: ckpt.provenance.seed,
    };
    for (rec, res) in m.records.iter().zip(results) {
        match res {
            Ok(trace) => {
                if trace.truncated {
                    summary.truncated.push(trace.utterance_id.clone());
                }
                summary.converted.push(trace.utterance_id.clone());
                traces += &serde_json::to_string(&trace)?;
                traces.push('\n');
            }
            Err(e) => {
                warn!("{}: {e}", rec.utterance_id);
                summary.failures.push((rec.utterance_id.clone(), e.to_string()));
            }
        }
    }
    write_text(&out.join("traces.jsonl"), &traces)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// `utterance_id` → hypothesis transcript, from a JSON-lines file of
/// `{"utterance_id": ..., "text": ...}` objects.
pub fn load_hypotheses(path: &Path) -> Result<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct Line {
        utterance_id: String,
        text: String,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Line = serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok((v.utterance_id, v.text))
        })
        .collect()
}

fn trace_hypotheses(dir: &Path) -> BTreeMap<String, String> {
    let Ok(text) = fs::read_to_string(dir.join("traces.jsonl")) else { return BTreeMap::new() };
    text.lines()
        .filter_map(|l| serde_json::from_str::<ConversionTrace>(l).ok())
        .filter_map(|t| t.hypothesis.map(|h| (t.utterance_id, h)))
        .collect()
}

/// Scores converted outputs in `converted` against the reference renditions
/// of `reference`, matched by utterance id. Hypothesis transcripts come from
/// `hypotheses` when given, otherwise from the conversion traces.
pub fn evaluate_converted(
    cfg: &ExperimentConfig,
    converted: &Path,
    reference: &Path,
    hypotheses: Option<&Path>,
) -> Result<MetricReport> {
    let m = load_manifest_with_base(reference)?;
    let hyps = match hypotheses {
        Some(p) => load_hypotheses(p)?,
        None => trace_hypotheses(converted),
    };
    let present: Vec<&UtteranceRecord> =
        m.records.iter().filter(|r| converted_mel_path(converted, &r.utterance_id).exists()).collect();
    if present.is_empty() {
        return Err(Error::Validation(format!(
            "no converted output in {} matches an utterance of {}",
            converted.display(),
            reference.display()
        )));
    }
    let results: Vec<Result<_>> = present
        .par_iter()
        .map(|r| {
            let conv: ConvertedMel = read_json(&converted_mel_path(converted, &r.utterance_id))?;
            let ref_wav = read_wav(&r.resolve_audio(&m.base_dir))?;
            let ref_mel = extract_mel(&ref_wav, &cfg.features)?;
            let wav_path = converted_wav_path(converted, &r.utterance_id);
            let conv_wav: Waveform =
                if wav_path.exists() { read_wav(&wav_path)? } else { griffin_lim(&conv.mel, &cfg.features, &cfg.convert.vocoder)? };
            evaluate_pair(
                &EvalPair {
                    utterance_id: &r.utterance_id,
                    reference_mel: &ref_mel.frames,
                    reference_wav: &ref_wav,
                    reference_text: &r.transcript,
                    converted_mel: &conv.mel.frames,
                    converted_wav: &conv_wav,
                    hypothesis: hyps.get(&r.utterance_id).map(String::as_str),
                },
                &cfg.eval,
            )
        })
        .collect();
    let mut scored = Vec::new();
    let mut missing: Vec<(String, String)> = m
        .records
        .iter()
        .filter(|r| !converted_mel_path(converted, &r.utterance_id).exists())
        .map(|r| (r.utterance_id.clone(), "no converted output".to_string()))
        .collect();
    for (r, res) in present.iter().zip(results) {
        match res {
            Ok(u) => scored.push(u),
            Err(e) => missing.push((r.utterance_id.clone(), e.to_string())),
        }
    }
    MetricReport::new(scored, missing, &cfg.hash(), cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizSummary {
    pub mode: EmbeddingMode,
    pub method: Projection,
    pub utterances: usize,
    /// Silhouette-by-speaker in the embedding space, when defined.
    pub silhouette: Option<f64>,
    /// The same score on the 2-D coordinates.
    pub silhouette_2d: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

pub fn projection_of(cfg: &ExperimentConfig) -> Projection {
    if cfg.viz.method == "pca" {
        Projection::Pca
    } else {
        Projection::Tsne { perplexity: cfg.viz.perplexity, iterations: cfg.viz.iterations }
    }
}

/// Writes `embeddings.json`, `coordinates.csv`, `plot.svg` and
/// `summary.json` under `out`.
pub fn visualize(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    manifest: &Path,
    mode: EmbeddingMode,
    out: &Path,
) -> Result<VizSummary> {
    let m = load_manifest_with_base(manifest)?;
    let utts = crate::data::load_utterances(&m, &cfg.features)?;
    let set = collect_embeddings(&ckpt.model, &utts, mode)?;
    let method = projection_of(cfg);
    let points = project_2d(&set.rows, method, cfg.seed)?;
    let score = silhouette(&set.rows, &set.labels).ok();
    let pts: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let score_2d = silhouette(&pts, &set.labels).ok();
    let title = format!(
        "{} embeddings, {} utterances, silhouette {}",
        match mode {
            EmbeddingMode::RefEnc => "reference-encoder",
            EmbeddingMode::Tp => "text-predicted",
        },
        set.rows.len(),
        score.map_or_else(|| "n/a".to_string(), |s| format!("{s:.3}"))
    );
    write_json(&out.join("embeddings.json"), &set)?;
    write_text(&out.join("coordinates.csv"), &coordinates_csv(&set, &points))?;
    write_text(&out.join("plot.svg"), &scatter_svg(&points, &set.labels, &title))?;
    let summary = VizSummary {
        mode,
        method,
        utterances: set.rows.len(),
        silhouette: score,
        silhouette_2d: score_2d,
        config_hash: ckpt.provenance.config_hash.clone(),
        seed: cfg.seed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
