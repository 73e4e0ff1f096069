//! Speaker- and style-conditioned attention synthesizer.
//!
//! Encoder: symbol embedding plus sinusoidal positions, one width-3
//! convolution with tanh. The style vector is projected to the hidden size
//! and added to every encoder state.
//!
//! Decoder, one frame per step: a tanh prenet over the previous frame, frame
//! position and speaker vector form a query; a causal self-attention layer
//! mixes in the decoded history; single-head content attention over the
//! fused encoder states gives a context vector; a tanh output layer predicts
//! the mel frame and a stop logit. Every decoder row depends only on frames
//! before it, so teacher-forced training and step-by-step inference compute
//! the same function.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Pad, Var};
use crate::error::{Error, Result};
use crate::features::MelFeatures;
use crate::gst::{self, StyleEmbedding};
use crate::params::{accumulate_grads, dense_init, no_params, normal_init, Binder, ParamStore};
use crate::recognizer::ContentSequence;
use crate::tensor::{sinusoid_table, Mat};
use crate::tp;

pub const EMBEDDING: &str = "tts.encoder.embedding";
pub const ENC_CONV_W: &str = "tts.encoder.conv.w";
pub const ENC_CONV_B: &str = "tts.encoder.conv.b";
pub const STYLE_PROJ: &str = "tts.encoder.style_proj.w";
pub const SPEAKER_TABLE: &str = "tts.speaker_table.weight";
pub const PRENET_W: &str = "tts.decoder.prenet.w";
pub const PRENET_B: &str = "tts.decoder.prenet.b";
pub const QUERY_W: &str = "tts.decoder.query.w";
pub const QUERY_B: &str = "tts.decoder.query.b";
pub const POS_W: &str = "tts.decoder.pos.w";
pub const SPEAKER_PROJ: &str = "tts.decoder.speaker_proj.w";
pub const SELF_Q: &str = "tts.decoder.self_q.w";
pub const SELF_K: &str = "tts.decoder.self_k.w";
pub const SELF_V: &str = "tts.decoder.self_v.w";
pub const ATTN_Q: &str = "tts.decoder.attn_q.w";
pub const ATTN_K: &str = "tts.decoder.attn_k.w";
pub const OUT_W: &str = "tts.decoder.out.w";
pub const OUT_B: &str = "tts.decoder.out.b";
pub const MEL_W: &str = "tts.decoder.mel.w";
pub const MEL_B: &str = "tts.decoder.mel.b";
pub const STOP_W: &str = "tts.decoder.stop.w";
pub const STOP_B: &str = "tts.decoder.stop.b";

const MASKED: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtsConfig {
    pub hidden: usize,
    pub speaker_dim: usize,
    pub attention_dim: usize,
    pub position_dim: usize,
}

impl Default for TtsConfig {
    fn default() -> Self {
        Self { hidden: 64, speaker_dim: 16, attention_dim: 32, position_dim: 16 }
    }
}

/// Weights of the auxiliary stop-token term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub stop_weight: f64,
    pub stop_pos_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { stop_weight: 0.1, stop_pos_weight: 5.0 }
    }
}

pub fn init_params(
    store: &mut ParamStore,
    cfg: &TtsConfig,
    vocabulary: usize,
    mel_dim: usize,
    style_dim: usize,
    num_speakers: usize,
    rng: &mut impl Rng,
) {
    let (h, a) = (cfg.hidden, cfg.attention_dim);
    store.insert(EMBEDDING, normal_init(rng, vocabulary, h, 1.0));
    store.insert(ENC_CONV_W, dense_init(rng, 3 * h, h));
    store.insert(ENC_CONV_B, Mat::zeros(1, h));
    store.insert(STYLE_PROJ, dense_init(rng, style_dim, h));
    store.insert(SPEAKER_TABLE, normal_init(rng, num_speakers, cfg.speaker_dim, 1.0));
    store.insert(PRENET_W, dense_init(rng, mel_dim, h));
    store.insert(PRENET_B, Mat::zeros(1, h));
    store.insert(QUERY_W, dense_init(rng, h, h));
    store.insert(QUERY_B, Mat::zeros(1, h));
    store.insert(POS_W, dense_init(rng, cfg.position_dim, h));
    store.insert(SPEAKER_PROJ, dense_init(rng, cfg.speaker_dim, h));
    store.insert(SELF_Q, dense_init(rng, h, a));
    store.insert(SELF_K, dense_init(rng, h, a));
    store.insert(SELF_V, dense_init(rng, h, h));
    store.insert(ATTN_Q, dense_init(rng, h, a));
    store.insert(ATTN_K, dense_init(rng, h, a));
    store.insert(OUT_W, dense_init(rng, 2 * h, h));
    store.insert(OUT_B, Mat::zeros(1, h));
    store.insert(MEL_W, dense_init(rng, h, mel_dim));
    store.insert(MEL_B, Mat::zeros(1, mel_dim));
    store.insert(STOP_W, dense_init(rng, h, 1));
    store.insert(STOP_B, Mat::zeros(1, 1));
}

fn require(params: &ParamStore, name: &str) -> Result<()> {
    if params.contains(name) {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("parameter {name} missing")))
    }
}

pub fn vocabulary_size(params: &ParamStore) -> Result<usize> {
    require(params, EMBEDDING)?;
    Ok(params.get(EMBEDDING).unwrap().rows)
}

pub fn mel_dim(params: &ParamStore) -> Result<usize> {
    require(params, MEL_W)?;
    Ok(params.get(MEL_W).unwrap().cols)
}

pub fn style_dim(params: &ParamStore) -> Result<usize> {
    require(params, STYLE_PROJ)?;
    Ok(params.get(STYLE_PROJ).unwrap().rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
    pub speaker_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub states: Mat,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.states.rows
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Model-space (normalised) frames.
    pub mel: MelFeatures,
    pub stop_probabilities: Vec<f64>,
    /// `(T, L)`, row-stochastic.
    pub attention: Mat,
    /// Decoding hit `max_frames` before the stop token fired.
    pub truncated: bool,
}

fn check_symbols(symbols: &[usize], vocabulary: usize) -> Result<()> {
    match symbols.iter().find(|&&s| s >= vocabulary) {
        Some(&s) => Err(Error::OutOfVocabulary { symbol: s, vocabulary }),
        None => Ok(()),
    }
}

/// `(L, H)` unfused encoder states.
pub fn encode_graph(g: &mut Graph, b: &mut Binder, symbols: &[usize]) -> Var {
    let emb = b.get(g, EMBEDDING);
    let h = g.value(emb).cols;
    let x = g.gather_rows(emb, symbols);
    let pe = g.constant(sinusoid_table(symbols.len(), h));
    let x = g.add(x, pe);
    let (w, bias) = (b.get(g, ENC_CONV_W), b.get(g, ENC_CONV_B));
    gst::conv3(g, x, w, bias, Pad::Zero)
}

/// Adds the projected style vector to every encoder state.
pub fn fuse_style_graph(g: &mut Graph, b: &mut Binder, states: Var, style: Var) -> Var {
    let proj = b.get(g, STYLE_PROJ);
    let s = g.matmul(style, proj);
    g.add_row(states, s)
}

pub struct DecoderVars {
    pub mel: Var,
    pub stop_logits: Var,
    pub attention: Var,
}

/// Teacher-forcing decoder input: a zero "go" frame followed by `target`
/// shifted down one row.
pub fn previous_frames(target: &Mat) -> Mat {
    let mut prev = Mat::zeros(target.rows, target.cols);
    for r in 1..target.rows {
        prev.row_mut(r).copy_from_slice(target.row(r - 1));
    }
    prev
}

fn causal_mask(t: usize) -> Mat {
    let mut m = Mat::zeros(t, t);
    for i in 0..t {
        for j in i + 1..t {
            m.set(i, j, MASKED);
        }
    }
    m
}

pub fn decode_graph(g: &mut Graph, b: &mut Binder, fused: Var, speaker: Var, prev: &Mat) -> DecoderVars {
    let t = prev.rows;
    let prev = g.constant(prev.clone());
    let (pw, pb) = (b.get(g, PRENET_W), b.get(g, PRENET_B));
    let p = g.matmul(prev, pw);
    let p = g.add_row(p, pb);
    let p = g.tanh(p);

    let pos_w = b.get(g, POS_W);
    let pos = g.constant(sinusoid_table(t, g.value(pos_w).rows));
    let (qw, qb, sp) = (b.get(g, QUERY_W), b.get(g, QUERY_B), b.get(g, SPEAKER_PROJ));
    let q = g.matmul(p, qw);
    let pos = g.matmul(pos, pos_w);
    let q = g.add(q, pos);
    let spk = g.matmul(speaker, sp);
    let q = g.add_row(q, spk);
    let q = g.add_row(q, qb);
    let h = g.tanh(q);

    let (sq, sk, sv) = (b.get(g, SELF_Q), b.get(g, SELF_K), b.get(g, SELF_V));
    let a = g.value(sq).cols as f64;
    let qs = g.matmul(h, sq);
    let ks = g.matmul(h, sk);
    let scores = g.matmul_t(qs, ks);
    let scores = g.scale(scores, 1.0 / a.sqrt());
    let mask = g.constant(causal_mask(t));
    let scores = g.add(scores, mask);
    let weights = g.softmax_rows(scores);
    let vs = g.matmul(h, sv);
    let mixed = g.matmul(weights, vs);
    let h2 = g.add(h, mixed);

    let (aq, ak) = (b.get(g, ATTN_Q), b.get(g, ATTN_K));
    let qc = g.matmul(h2, aq);
    let kc = g.matmul(fused, ak);
    let scores = g.matmul_t(qc, kc);
    let scores = g.scale(scores, 1.0 / a.sqrt());
    let attention = g.softmax_rows(scores);
    let ctx = g.matmul(attention, fused);

    let cat = g.concat_cols(&[h2, ctx]);
    let (ow, ob) = (b.get(g, OUT_W), b.get(g, OUT_B));
    let o = g.matmul(cat, ow);
    let o = g.add_row(o, ob);
    let o = g.tanh(o);
    let (mw, mb) = (b.get(g, MEL_W), b.get(g, MEL_B));
    let mel = g.matmul(o, mw);
    let mel = g.add_row(mel, mb);
    let (stw, stb) = (b.get(g, STOP_W), b.get(g, STOP_B));
    let stop = g.matmul(o, stw);
    let stop_logits = g.add_row(stop, stb);
    DecoderVars { mel, stop_logits, attention }
}

pub fn encode_content(y: &ContentSequence, params: &ParamStore) -> Result<EncoderStates> {
    let vocab = vocabulary_size(params)?;
    check_symbols(&y.symbols, vocab)?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty content sequence".into()));
    }
    let mut g = Graph::new();
    let mut b = Binder::new(params, &no_params);
    let s = encode_graph(&mut g, &mut b, &y.symbols);
    Ok(EncoderStates { states: g.value(s).clone() })
}

pub fn speaker_embedding(params: &ParamStore, index: usize, speaker_id: &str) -> Result<SpeakerEmbedding> {
    require(params, SPEAKER_TABLE)?;
    let table = params.get(SPEAKER_TABLE).unwrap();
    if index >= table.rows {
        return Err(Error::InvalidArgument(format!("speaker index {index} outside table of {}", table.rows)));
    }
    Ok(SpeakerEmbedding { vector: table.row(index).to_vec(), speaker_id: speaker_id.to_string() })
}

/// Autoregressive decoding until the stop probability exceeds 0.5 or
/// `max_frames` frames have been produced.
pub fn synthesize(
    y: &ContentSequence,
    s: &SpeakerEmbedding,
    style: &StyleEmbedding,
    params: &ParamStore,
    max_frames: usize,
) -> Result<SynthOutput> {
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty content sequence".into()));
    }
    if max_frames == 0 {
        return Err(Error::InvalidArgument("max_frames must be positive".into()));
    }
    let e = style_dim(params)?;
    if style.dim() != e {
        return Err(Error::Shape(format!("style vector of {} vs expected {e}", style.dim())));
    }
    let d = mel_dim(params)?;
    let states = encode_content(y, params)?;

    let mut g = Graph::new();
    let mut b = Binder::new(params, &no_params);
    let st = g.constant(states.states);
    let sv = g.constant(Mat::row_vector(&style.vector));
    let fused = fuse_style_graph(&mut g, &mut b, st, sv);
    let fused = g.value(fused).clone();
    let speaker = Mat::row_vector(&s.vector);

    let mut frames: Vec<Vec<f64>> = Vec::new();
    let mut stops = Vec::new();
    let mut attention_rows = Vec::new();
    let mut truncated = true;
    while frames.len() < max_frames {
        let t = frames.len();
        let mut prev = Mat::zeros(t + 1, d);
        for (r, f) in frames.iter().enumerate() {
            prev.row_mut(r + 1).copy_from_slice(f);
        }
        let mut g = Graph::new();
        let mut b = Binder::new(params, &no_params);
        let fv = g.constant(fused.clone());
        let sp = g.constant(speaker.clone());
        let out = decode_graph(&mut g, &mut b, fv, sp, &prev);
        frames.push(g.value(out.mel).row(t).to_vec());
        attention_rows.push(g.value(out.attention).row(t).to_vec());
        let z = g.value(out.stop_logits).get(t, 0);
        let p = 1.0 / (1.0 + (-z).exp());
        stops.push(p);
        if p > 0.5 {
            truncated = false;
            break;
        }
    }
    if truncated {
        log::warn!("decoding truncated at {max_frames} frames");
    }
    Ok(SynthOutput {
        mel: MelFeatures::new(Mat::from_rows(&frames), 0.0, 0)?,
        stop_probabilities: stops,
        attention: Mat::from_rows(&attention_rows),
        truncated,
    })
}

/// One utterance for teacher-forced training. `target` is model-space and
/// doubles as the reference input of the style encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub target: Mat,
    pub content: ContentSequence,
    pub speaker: usize,
}

/// Where the style vector of a training pass comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleMode {
    /// No prosody pathway; the baseline system.
    Zero,
    /// `RefEnc(X)`.
    RefEnc,
    /// `TP(Y)`; with `stop_gradient` nothing outside the predictor is
    /// differentiated.
    Tp { stop_gradient: bool },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean absolute error per mel element.
    pub l1: f64,
    /// Mean stop-token cross-entropy per frame.
    pub stop: f64,
    /// `l1 + stop_weight · stop`.
    pub total: f64,
}

pub struct ExampleVars {
    pub l1: Var,
    pub stop: Var,
    pub mel: Var,
    pub style: Var,
}

pub fn stop_targets(t: usize) -> Mat {
    let mut m = Mat::zeros(t, 1);
    m.set(t - 1, 0, 1.0);
    m
}

/// Teacher-forced forward pass of one example.
pub fn example_graph(
    g: &mut Graph,
    b: &mut Binder,
    ex: &TrainExample,
    mode: StyleMode,
    loss: &LossConfig,
) -> ExampleVars {
    let states = encode_graph(g, b, &ex.content.symbols);
    let proj = b.get(g, STYLE_PROJ);
    let e = g.value(proj).rows;
    let style = match mode {
        StyleMode::Zero => g.constant(Mat::zeros(1, e)),
        StyleMode::RefEnc => {
            let x = g.constant(ex.target.clone());
            gst::ref_enc_graph(g, b, x).1
        }
        StyleMode::Tp { stop_gradient } => {
            let input = if stop_gradient { g.detach(states) } else { states };
            tp::predict_style_graph(g, b, input).1
        }
    };
    let fused = fuse_style_graph(g, b, states, style);
    let table = b.get(g, SPEAKER_TABLE);
    let speaker = g.gather_rows(table, &[ex.speaker]);
    let out = decode_graph(g, b, fused, speaker, &previous_frames(&ex.target));
    let l1 = g.l1_mean(out.mel, &ex.target);
    let stop = g.bce_logits(out.stop_logits, &stop_targets(ex.target.rows), loss.stop_pos_weight);
    ExampleVars { l1, stop, mel: out.mel, style }
}

fn check_batch(batch: &[TrainExample], params: &ParamStore, mode: StyleMode) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let d = mel_dim(params)?;
    let vocab = vocabulary_size(params)?;
    require(params, SPEAKER_TABLE)?;
    let speakers = params.get(SPEAKER_TABLE).unwrap().rows;
    for ex in batch {
        if ex.target.cols != d || ex.target.rows == 0 {
            return Err(Error::Shape(format!("target {:?} vs mel dimension {d}", ex.target.shape())));
        }
        if ex.content.is_empty() {
            return Err(Error::InvalidArgument("empty content sequence".into()));
        }
        check_symbols(&ex.content.symbols, vocab)?;
        if ex.speaker >= speakers {
            return Err(Error::InvalidArgument(format!("speaker {} outside table of {speakers}", ex.speaker)));
        }
    }
    match mode {
        StyleMode::RefEnc => require(params, gst::TOKENS),
        StyleMode::Tp { .. } => tp::check_params(params),
        StyleMode::Zero => Ok(()),
    }
}

/// Batch loss and gradients for every parameter accepted by `trainable`.
/// Examples run in parallel; their contributions are summed in batch order,
/// so the result does not depend on thread scheduling.
pub fn loss_and_grads(
    batch: &[TrainExample],
    params: &ParamStore,
    mode: StyleMode,
    trainable: &(dyn Fn(&str) -> bool + Sync),
    loss: &LossConfig,
) -> Result<(LossBreakdown, BTreeMap<String, Mat>)> {
    check_batch(batch, params, mode)?;
    let elems: usize = batch.iter().map(|e| e.target.len()).sum();
    let frames: usize = batch.iter().map(|e| e.target.rows).sum();
    let parts: Vec<(f64, f64, BTreeMap<String, Mat>)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new();
            let mut b = Binder::new(params, trainable);
            let v = example_graph(&mut g, &mut b, ex, mode, loss);
            let wl = ex.target.len() as f64 / elems as f64;
            let ws = ex.target.rows as f64 / frames as f64;
            let l1 = g.scale(v.l1, wl);
            let st = g.scale(v.stop, ws * loss.stop_weight);
            let total = g.add(l1, st);
            let (l1v, stv) = (g.scalar(v.l1) * wl, g.scalar(v.stop) * ws);
            let mut grads = g.backward(total);
            (l1v, stv, b.collect(&mut grads))
        })
        .collect();
    let mut out = LossBreakdown::default();
    let mut grads = BTreeMap::new();
    for (l1, stop, gr) in parts {
        out.l1 += l1;
        out.stop += stop;
        accumulate_grads(&mut grads, gr);
    }
    out.total = out.l1 + loss.stop_weight * out.stop;
    Ok((out, grads))
}

fn batch_loss(batch: &[TrainExample], params: &ParamStore, mode: StyleMode, loss: &LossConfig) -> Result<LossBreakdown> {
    loss_and_grads(batch, params, mode, &no_params, loss).map(|(l, _)| l)
}

/// Teacher-forced reconstruction loss with the style taken from each
/// target utterance through the reference encoder.
pub fn gst_loss(batch: &[TrainExample], params: &ParamStore, loss: &LossConfig) -> Result<LossBreakdown> {
    batch_loss(batch, params, StyleMode::RefEnc, loss)
}

/// Same loss form with the style predicted from content.
pub fn tp_loss(
    batch: &[TrainExample],
    params: &ParamStore,
    stop_gradient: bool,
    loss: &LossConfig,
) -> Result<LossBreakdown> {
    batch_loss(batch, params, StyleMode::Tp { stop_gradient }, loss)
}

/// Baseline loss: no prosody pathway, zero style.
pub fn baseline_loss(batch: &[TrainExample], params: &ParamStore, loss: &LossConfig) -> Result<LossBreakdown> {
    batch_loss(batch, params, StyleMode::Zero, loss)
}

/// Teacher-forced predictions, model-space, one per example.
pub fn teacher_forced_predictions(batch: &[TrainExample], params: &ParamStore, mode: StyleMode) -> Result<Vec<Mat>> {
    check_batch(batch, params, mode)?;
    Ok(batch
        .iter()
        .map(|ex| {
            let mut g = Graph::new();
            let mut b = Binder::new(params, &no_params);
            let v = example_graph(&mut g, &mut b, ex, mode, &LossConfig::default());
            g.value(v.mel).clone()
        })
        .collect())
}

/// Mean absolute error per element over a batch of prediction/target pairs.
pub fn l1_per_element(predictions: &[Mat], targets: &[Mat]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Shape("prediction and target batches differ".into()));
    }
    let mut g = Graph::new();
    let total: usize = targets.iter().map(Mat::len).sum();
    let mut acc = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let pv = g.constant(p.clone());
        let l = g.l1_mean(pv, t);
        acc += g.scalar(l) * t.len() as f64 / total as f64;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recognizer::ContentKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = TtsConfig { hidden: 8, speaker_dim: 3, attention_dim: 4, position_dim: 4 };
        init_params(&mut store, &cfg, 6, 5, 4, 2, &mut rng);
        store
    }

    fn seq(s: &[usize]) -> ContentSequence {
        ContentSequence::new(ContentKind::Text, s.to_vec(), 6).unwrap()
    }

    #[test]
    fn encoder_contracts() {
        let p = tiny();
        let a = encode_content(&seq(&[0, 1, 2, 3, 4, 5, 0]), &p).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a, encode_content(&seq(&[0, 1, 2, 3, 4, 5, 0]), &p).unwrap());
        let b = encode_content(&seq(&[0, 1, 2, 4, 4, 5, 0]), &p).unwrap();
        assert_ne!(a.states, b.states);
        let bad = ContentSequence { kind: ContentKind::Text, symbols: vec![9], vocabulary_size: 10 };
        assert!(matches!(encode_content(&bad, &p), Err(Error::OutOfVocabulary { .. })));
    }

    #[test]
    fn zero_style_synthesis_is_valid_and_deterministic() {
        let p = tiny();
        let s = speaker_embedding(&p, 1, "b").unwrap();
        let y = seq(&[1, 2, 3]);
        let a = synthesize(&y, &s, &StyleEmbedding::zeros(4), &p, 12).unwrap();
        let b = synthesize(&y, &s, &StyleEmbedding::zeros(4), &p, 12).unwrap();
        assert_eq!(a, b);
        assert!(a.mel.frames.all_finite());
        assert_eq!(a.mel.num_frames(), a.stop_probabilities.len());
        for r in 0..a.attention.rows {
            assert!((a.attention.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(a.stop_probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn free_running_rows_match_teacher_forcing_on_own_output() {
        let p = tiny();
        let y = seq(&[1, 2, 3, 0]);
        let out = synthesize(&y, &speaker_embedding(&p, 0, "a").unwrap(), &StyleEmbedding::zeros(4), &p, 9).unwrap();
        let ex = TrainExample { target: out.mel.frames.clone(), content: y, speaker: 0 };
        let tf = teacher_forced_predictions(&[ex], &p, StyleMode::Zero).unwrap();
        assert_eq!(tf[0], out.mel.frames);
    }

    #[test]
    fn l1_term_arithmetic() {
        let t = Mat::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        assert_eq!(l1_per_element(&[t.clone()], &[t.clone()]).unwrap(), 0.0);
        let shifted = t.map(|v| v + 0.5);
        assert!((l1_per_element(&[shifted], &[t.clone()]).unwrap() - 0.5).abs() < 1e-15);
        assert!(l1_per_element(&[Mat::zeros(1, 2)], &[t]).is_err());
    }

    #[test]
    fn loss_errors() {
        let p = tiny();
        assert!(gst_loss(&[], &p, &LossConfig::default()).is_err());
        let ex = TrainExample { target: Mat::zeros(3, 4), content: seq(&[1]), speaker: 0 };
        assert!(matches!(baseline_loss(&[ex], &p, &LossConfig::default()), Err(Error::Shape(_))));
        let ex = TrainExample { target: Mat::zeros(3, 5), content: seq(&[1]), speaker: 0 };
        // no gst.* / tp.* parameters in this store
        assert!(gst_loss(&[ex.clone()], &p, &LossConfig::default()).is_err());
        assert!(tp_loss(&[ex], &p, true, &LossConfig::default()).is_err());
    }
}
