//! Text prediction of the style embedding.
//!
//! Mean-pools encoder states and runs a two-layer perceptron. In embedding
//! mode the output is the style vector itself; in weights mode it is a
//! softmax over the token bank and the style vector is the matching convex
//! combination of tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::gst::{StyleEmbedding, TOKENS};
use crate::params::{dense_init, no_params, Binder, ParamStore};
use crate::synthesizer::EncoderStates;
use crate::tensor::Mat;

pub const L1_W: &str = "tp.net.l1.w";
pub const L1_B: &str = "tp.net.l1.b";
pub const L2_W: &str = "tp.net.l2.w";
pub const L2_B: &str = "tp.net.l2.b";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionTarget {
    #[default]
    Embedding,
    Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpConfig {
    pub hidden: usize,
    pub target: PredictionTarget,
}

impl Default for TpConfig {
    fn default() -> Self {
        Self { hidden: 64, target: PredictionTarget::Embedding }
    }
}

/// Adds `tp.*` parameters sized for the encoder and token bank in `store`.
pub fn init_params(store: &mut ParamStore, cfg: &TpConfig, encoder_dim: usize, style_dim: usize, num_tokens: usize, rng: &mut impl Rng) {
    let out = match cfg.target {
        PredictionTarget::Embedding => style_dim,
        PredictionTarget::Weights => num_tokens,
    };
    store.insert(L1_W, dense_init(rng, encoder_dim, cfg.hidden));
    store.insert(L1_B, Mat::zeros(1, cfg.hidden));
    // small output layer: predictions start near the origin of style space
    store.insert(L2_W, dense_init(rng, cfg.hidden, out).scale(0.1));
    store.insert(L2_B, Mat::zeros(1, out));
}

pub fn check_params(params: &ParamStore) -> Result<()> {
    for name in [L1_W, L1_B, L2_W, L2_B] {
        if !params.contains(name) {
            return Err(Error::Checkpoint(format!("text predictor parameter {name} missing")));
        }
    }
    Ok(())
}

/// Weights mode is recognised by the output width differing from the style
/// dimension the synthesizer expects.
pub fn target_of(params: &ParamStore) -> Result<PredictionTarget> {
    check_params(params)?;
    let out = params.get(L2_W).unwrap().cols;
    let style = crate::synthesizer::style_dim(params)?;
    let weights_mode = params.get(TOKENS).map(|t| t.rows == out && out != style).unwrap_or(false);
    Ok(if weights_mode { PredictionTarget::Weights } else { PredictionTarget::Embedding })
}

/// `(L, H)` states → (optional `(1, K)` weights, `(1, E)` embedding).
pub fn predict_style_graph(g: &mut Graph, b: &mut Binder, states: Var) -> (Option<Var>, Var) {
    let pooled = g.mean_rows(states);
    let (w1, b1) = (b.get(g, L1_W), b.get(g, L1_B));
    let h = g.matmul(pooled, w1);
    let h = g.add_row(h, b1);
    let h = g.tanh(h);
    let (w2, b2) = (b.get(g, L2_W), b.get(g, L2_B));
    let o = g.matmul(h, w2);
    let o = g.add_row(o, b2);
    let style = b.get(g, crate::synthesizer::STYLE_PROJ);
    let e = g.value(style).rows;
    if g.value(o).cols == e {
        (None, o)
    } else {
        let weights = g.softmax_rows(o);
        let tokens = b.get(g, TOKENS);
        let v = g.matmul(weights, tokens);
        (Some(weights), v)
    }
}

pub fn predict_style(states: &EncoderStates, params: &ParamStore) -> Result<StyleEmbedding> {
    check_params(params)?;
    if states.is_empty() {
        return Err(Error::InvalidArgument("empty encoder states".into()));
    }
    let expected = params.get(L1_W).unwrap().rows;
    if states.states.cols != expected {
        return Err(Error::Shape(format!("encoder width {} vs predictor input {expected}", states.states.cols)));
    }
    if target_of(params)? == PredictionTarget::Weights && !params.contains(TOKENS) {
        return Err(Error::Checkpoint("weights-mode predictor needs gst.tokens".into()));
    }
    let mut g = Graph::new();
    let mut b = Binder::new(params, &no_params);
    let s = g.constant(states.states.clone());
    let (w, v) = predict_style_graph(&mut g, &mut b, s);
    Ok(StyleEmbedding { vector: g.value(v).data.clone(), weights: w.map(|w| g.value(w).data.clone()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gst::{self, GstConfig, StyleTokenBank};
    use crate::synthesizer::{self, TtsConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(target: PredictionTarget, k: usize) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = ParamStore::new();
        let tts = TtsConfig { hidden: 8, speaker_dim: 2, attention_dim: 4, position_dim: 4 };
        synthesizer::init_params(&mut s, &tts, 5, 4, 6, 1, &mut rng);
        gst::init_params(&mut s, &GstConfig { num_tokens: k, style_dim: 6, query_dim: 4, channels: 3 }, 4, &mut rng);
        init_params(&mut s, &TpConfig { hidden: 5, target }, 8, 6, k, &mut rng);
        s
    }

    fn states(rng: &mut ChaCha8Rng, l: usize) -> EncoderStates {
        EncoderStates { states: Mat::from_vec(l, 8, (0..l * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()) }
    }

    #[test]
    fn weights_mode_single_token_is_that_token() {
        let p = store(PredictionTarget::Weights, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = predict_style(&states(&mut rng, 4), &p).unwrap();
        assert_eq!(s.weights.as_deref(), Some(&[1.0][..]));
        assert_eq!(s.vector, p.get(TOKENS).unwrap().data);
    }

    #[test]
    fn embedding_mode_is_deterministic_and_weightless() {
        let p = store(PredictionTarget::Embedding, 3);
        assert_eq!(target_of(&p).unwrap(), PredictionTarget::Embedding);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = states(&mut rng, 6);
        let a = predict_style(&st, &p).unwrap();
        assert_eq!(a, predict_style(&st, &p).unwrap());
        assert!(a.weights.is_none());
        assert_eq!(a.dim(), 6);
    }

    #[test]
    fn weights_mode_satisfies_hull_invariants() {
        let p = store(PredictionTarget::Weights, 4);
        let bank = StyleTokenBank::from_params(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for l in 1..40 {
            let s = predict_style(&states(&mut rng, l), &p).unwrap();
            let w = s.weights.as_ref().unwrap();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(s.hull_residual(&bank).unwrap() < 1e-6);
        }
    }

    #[test]
    fn empty_states_rejected() {
        let p = store(PredictionTarget::Embedding, 3);
        assert!(predict_style(&EncoderStates { states: Mat::zeros(0, 8) }, &p).is_err());
        let mut bare = p.clone();
        bare.remove_group("tp.*");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(predict_style(&states(&mut rng, 2), &bare).is_err());
    }
}
