//! Named parameter storage, group bookkeeping and the Adam optimizer.
//!
//! Parameter names are dotted paths. The first two components form the
//! parameter group (`tts.encoder`, `gst.refenc`, `tp.net`, ...); stage plans
//! freeze and unfreeze whole groups, so group names are part of the
//! checkpoint format.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Var};
use crate::tensor::Mat;

pub const GROUP_TTS_ENCODER: &str = "tts.encoder";
pub const GROUP_TTS_DECODER: &str = "tts.decoder";
pub const GROUP_TTS_SPEAKERS: &str = "tts.speaker_table";
pub const GROUP_GST_TOKENS: &str = "gst.tokens";
pub const GROUP_GST_REFENC: &str = "gst.refenc";
pub const GROUP_GST_ATTENTION: &str = "gst.attention";
pub const GROUP_TP: &str = "tp.net";

pub const ALL_GROUPS: [&str; 7] = [
    GROUP_TTS_ENCODER,
    GROUP_TTS_DECODER,
    GROUP_TTS_SPEAKERS,
    GROUP_GST_TOKENS,
    GROUP_GST_REFENC,
    GROUP_GST_ATTENTION,
    GROUP_TP,
];

pub fn group_of(name: &str) -> &str {
    match name.match_indices('.').nth(1) {
        Some((i, _)) => &name[..i],
        None => name,
    }
}

/// True when `group` matches `pattern`, where a trailing `.*` matches any
/// group with that prefix (`gst.*`).
pub fn group_matches(pattern: &str, group: &str) -> bool {
    match pattern.strip_suffix(".*") {
        Some(prefix) => group.split('.').next() == Some(prefix),
        None => pattern == group,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.params.keys().map(|n| group_of(n).to_string()).collect()
    }

    pub fn has_group_prefix(&self, pattern: &str) -> bool {
        self.params.keys().any(|n| group_matches(pattern, group_of(n)))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Mat::len).sum()
    }

    /// Sub-store with every parameter whose group matches `pattern`.
    pub fn group_subset(&self, pattern: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(n, _)| group_matches(pattern, group_of(n)))
                .map(|(n, m)| (n.clone(), m.clone()))
                .collect(),
        }
    }

    pub fn remove_group(&mut self, pattern: &str) {
        self.params.retain(|n, _| !group_matches(pattern, group_of(n)));
    }

    /// Largest absolute elementwise difference over the parameters both
    /// stores share; `f64::INFINITY` when the name sets differ.
    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        if self.params.len() != other.params.len() || self.params.keys().ne(other.params.keys()) {
            return f64::INFINITY;
        }
        self.params
            .iter()
            .map(|(n, m)| {
                let o = &other.params[n];
                if o.shape() != m.shape() {
                    f64::INFINITY
                } else {
                    m.max_abs_diff(o)
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Fresh parameter, `N(0, scale²)` entries.
pub fn normal_init(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect(),
    )
}

/// Glorot-style scaling for a `(fan_in, fan_out)` weight.
pub fn dense_init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Mat {
    normal_init(rng, fan_in, fan_out, (1.0 / fan_in as f64).sqrt())
}

/// Maps parameter names to tape leaves for one forward pass.
///
/// Parameters accepted by `trainable` become gradient-carrying leaves; the
/// rest enter the graph as constants, so no gradient can reach them.
pub struct Binder<'a> {
    store: &'a ParamStore,
    trainable: &'a dyn Fn(&str) -> bool,
    bound: HashMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: &'a dyn Fn(&str) -> bool) -> Self {
        Self { store, trainable, bound: HashMap::new() }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"))
            .clone();
        let v = if (self.trainable)(name) { g.param(value) } else { g.constant(value) };
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Gradients for every bound trainable parameter that received one.
    pub fn collect(&self, grads: &mut Gradients) -> BTreeMap<String, Mat> {
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if let Some(gm) = grads.take(v) {
                out.insert(name.clone(), gm);
            }
        }
        out
    }
}

pub fn no_params(_: &str) -> bool {
    false
}

pub fn all_params(_: &str) -> bool {
    true
}

/// Sum `src` into `dst`, name by name.
pub fn accumulate_grads(dst: &mut BTreeMap<String, Mat>, src: BTreeMap<String, Mat>) {
    for (n, g) in src {
        match dst.get_mut(&n) {
            Some(d) => d.add_assign(&g),
            None => {
                dst.insert(n, g);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps: 50, grad_clip: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Mat>,
    pub v: BTreeMap<String, Mat>,
}

impl AdamState {
    /// One update of every parameter present in `grads`. Parameters without a
    /// gradient are left untouched, moment state included.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut ParamStore, grads: &BTreeMap<String, Mat>) {
        self.step += 1;
        let t = self.step as f64;
        let warm = if cfg.warmup_steps == 0 { 1.0 } else { (t / cfg.warmup_steps as f64).min(1.0) };
        let lr = cfg.lr * warm;

        let norm: f64 = grads.values().flat_map(|g| g.data.iter()).map(|v| v * v).sum::<f64>().sqrt();
        let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };

        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Mat::zeros(p.rows, p.cols));
            let v = self.v.entry(name.clone()).or_insert_with(|| Mat::zeros(p.rows, p.cols));
            for i in 0..p.data.len() {
                let gi = g.data[i] * clip;
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
}
