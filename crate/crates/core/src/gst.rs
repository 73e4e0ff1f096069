//! Global style tokens.
//!
//! The reference encoder summarises a mel sequence into a fixed-length query:
//! two width-3 convolutions over time (edge padded), mean pooling over frames
//! and a tanh projection. Single-head style attention turns the query into a
//! softmax distribution over the token bank; the style embedding is the
//! weighted sum of the token rows, so it always lies in their convex hull.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Pad, Var};
use crate::error::{Error, Result};
use crate::features::MelFeatures;
use crate::params::{dense_init, no_params, normal_init, Binder, ParamStore};
use crate::tensor::Mat;

pub const TOKENS: &str = "gst.tokens";
pub const CONV1_W: &str = "gst.refenc.conv1.w";
pub const CONV1_B: &str = "gst.refenc.conv1.b";
pub const CONV2_W: &str = "gst.refenc.conv2.w";
pub const CONV2_B: &str = "gst.refenc.conv2.b";
pub const PROJ_W: &str = "gst.refenc.proj.w";
pub const PROJ_B: &str = "gst.refenc.proj.b";
pub const QUERY_W: &str = "gst.attention.query.w";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GstConfig {
    pub num_tokens: usize,
    pub style_dim: usize,
    pub query_dim: usize,
    pub channels: usize,
}

impl Default for GstConfig {
    fn default() -> Self {
        Self { num_tokens: 10, style_dim: 128, query_dim: 128, channels: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTokenBank {
    pub tokens: Mat,
}

impl StyleTokenBank {
    pub fn from_params(params: &ParamStore) -> Result<Self> {
        let tokens = params
            .get(TOKENS)
            .ok_or_else(|| Error::Checkpoint("token bank gst.tokens missing".into()))?
            .clone();
        Ok(Self { tokens })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.rows
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols
    }
}

/// Prosody vector fed to the synthesizer. `weights` is present when the
/// vector came out of style attention (or a weights-mode predictor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding {
    pub vector: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl StyleEmbedding {
    pub fn zeros(dim: usize) -> Self {
        Self { vector: vec![0.0; dim], weights: None }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// `‖vector − weightsᵀ·tokens‖∞`, `None` without weights.
    pub fn hull_residual(&self, bank: &StyleTokenBank) -> Option<f64> {
        let w = self.weights.as_ref()?;
        let mut worst: f64 = 0.0;
        for e in 0..bank.dim() {
            let combo: f64 = w.iter().enumerate().map(|(k, wk)| wk * bank.tokens.get(k, e)).sum();
            worst = worst.max((combo - self.vector[e]).abs());
        }
        Some(worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceQuery {
    pub vector: Vec<f64>,
}

pub fn init_params(store: &mut ParamStore, cfg: &GstConfig, mel_dim: usize, rng: &mut impl Rng) {
    let c = cfg.channels;
    store.insert(CONV1_W, dense_init(rng, 3 * mel_dim, c));
    store.insert(CONV1_B, Mat::zeros(1, c));
    store.insert(CONV2_W, dense_init(rng, 3 * c, c));
    store.insert(CONV2_B, Mat::zeros(1, c));
    store.insert(PROJ_W, dense_init(rng, c, cfg.query_dim));
    store.insert(PROJ_B, Mat::zeros(1, cfg.query_dim));
    store.insert(QUERY_W, dense_init(rng, cfg.query_dim, cfg.style_dim));
    store.insert(TOKENS, normal_init(rng, cfg.num_tokens, cfg.style_dim, 1.0));
}

/// Width-3 temporal convolution with edge padding, then tanh.
pub(crate) fn conv3(g: &mut Graph, x: Var, w: Var, b: Var, pad: Pad) -> Var {
    let prev = g.shift_rows(x, 1, pad);
    let next = g.shift_rows(x, -1, pad);
    let cat = g.concat_cols(&[prev, x, next]);
    let y = g.matmul(cat, w);
    let y = g.add_row(y, b);
    g.tanh(y)
}

/// `(T, D)` mel → `(1, Q)` query.
pub fn reference_encode_graph(g: &mut Graph, b: &mut Binder, mel: Var) -> Var {
    let (w1, b1) = (b.get(g, CONV1_W), b.get(g, CONV1_B));
    let h = conv3(g, mel, w1, b1, Pad::Edge);
    let (w2, b2) = (b.get(g, CONV2_W), b.get(g, CONV2_B));
    let h = conv3(g, h, w2, b2, Pad::Edge);
    let pooled = g.mean_rows(h);
    let (pw, pb) = (b.get(g, PROJ_W), b.get(g, PROJ_B));
    let q = g.matmul(pooled, pw);
    let q = g.add_row(q, pb);
    g.tanh(q)
}

/// `(1, Q)` query → (`(1, K)` weights, `(1, E)` embedding).
pub fn style_attend_graph(g: &mut Graph, b: &mut Binder, query: Var) -> (Var, Var) {
    let wq = b.get(g, QUERY_W);
    let tokens = b.get(g, TOKENS);
    let e = g.value(tokens).cols as f64;
    let q = g.matmul(query, wq);
    let scores = g.matmul_t(q, tokens);
    let scores = g.scale(scores, 1.0 / e.sqrt());
    let weights = g.softmax_rows(scores);
    let vector = g.matmul(weights, tokens);
    (weights, vector)
}

pub fn ref_enc_graph(g: &mut Graph, b: &mut Binder, mel: Var) -> (Var, Var) {
    let q = reference_encode_graph(g, b, mel);
    style_attend_graph(g, b, q)
}

fn check_params(params: &ParamStore) -> Result<()> {
    for name in [TOKENS, CONV1_W, CONV1_B, CONV2_W, CONV2_B, PROJ_W, PROJ_B, QUERY_W] {
        if !params.contains(name) {
            return Err(Error::Checkpoint(format!("parameter {name} missing")));
        }
    }
    Ok(())
}

pub fn reference_encode(mel: &MelFeatures, params: &ParamStore) -> Result<ReferenceQuery> {
    check_params(params)?;
    if mel.num_frames() == 0 {
        return Err(Error::InvalidArgument("empty reference mel".into()));
    }
    let expected = params.get(CONV1_W).unwrap().rows / 3;
    if mel.dim() != expected {
        return Err(Error::Shape(format!("reference mel dimension {} vs encoder input {expected}", mel.dim())));
    }
    let mut g = Graph::new();
    let mut b = Binder::new(params, &no_params);
    let x = g.constant(mel.frames.clone());
    let q = reference_encode_graph(&mut g, &mut b, x);
    Ok(ReferenceQuery { vector: g.value(q).data.clone() })
}

pub fn style_attend(query: &ReferenceQuery, bank: &StyleTokenBank, params: &ParamStore) -> Result<StyleEmbedding> {
    let wq = params.get(QUERY_W).ok_or_else(|| Error::Checkpoint(format!("parameter {QUERY_W} missing")))?;
    if wq.rows != query.vector.len() || wq.cols != bank.dim() {
        return Err(Error::Shape(format!(
            "query {} / token dim {} vs attention {}x{}",
            query.vector.len(),
            bank.dim(),
            wq.rows,
            wq.cols
        )));
    }
    let mut g = Graph::new();
    let q = g.constant(Mat::row_vector(&query.vector));
    let wq = g.constant(wq.clone());
    let tokens = g.constant(bank.tokens.clone());
    let proj = g.matmul(q, wq);
    let scores = g.matmul_t(proj, tokens);
    let scores = g.scale(scores, 1.0 / (bank.dim() as f64).sqrt());
    let weights = g.softmax_rows(scores);
    let vector = g.matmul(weights, tokens);
    Ok(StyleEmbedding { vector: g.value(vector).data.clone(), weights: Some(g.value(weights).data.clone()) })
}

/// `style_attend(reference_encode(mel))`.
pub fn ref_enc(mel: &MelFeatures, params: &ParamStore) -> Result<StyleEmbedding> {
    let q = reference_encode(mel, params)?;
    let bank = StyleTokenBank::from_params(params)?;
    style_attend(&q, &bank, params)
}
