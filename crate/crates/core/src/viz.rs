//! Style-embedding analysis: collection, 2-D projection and a quantitative
//! speaker-clusterness score.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    RefEnc,
    Tp,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refenc" | "ref-enc" => Ok(EmbeddingMode::RefEnc),
            "tp" => Ok(EmbeddingMode::Tp),
            other => Err(Error::InvalidArgument(format!("unknown embedding mode {other:?} (expected refenc or tp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub mode: EmbeddingMode,
    pub utterance_ids: Vec<String>,
    pub labels: Vec<String>,
    /// One row per utterance.
    pub rows: Vec<Vec<f64>>,
}

pub fn collect_embeddings(model: &Model, utts: &[Utterance], mode: EmbeddingMode) -> Result<EmbeddingSet> {
    match mode {
        EmbeddingMode::RefEnc if !model.has_gst() => {
            return Err(Error::Checkpoint("checkpoint has no reference encoder".into()))
        }
        EmbeddingMode::Tp if !model.has_tp() => return Err(Error::Checkpoint("checkpoint has no text predictor".into())),
        _ => {}
    }
    let rows = utts
        .par_iter()
        .map(|u| {
            let e = match mode {
                EmbeddingMode::RefEnc => model.ref_enc(&u.mel)?,
                EmbeddingMode::Tp => model.predict_style(&model.recognize(u)?)?,
            };
            Ok(e.vector)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingSet {
        mode,
        utterance_ids: utts.iter().map(|u| u.id().to_string()).collect(),
        labels: utts.iter().map(|u| u.speaker().to_string()).collect(),
        rows,
    })
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("embedding rows must be non-empty and of equal length".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite embedding value".into()));
    }
    Ok(d)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient under Euclidean distance. A point whose
/// intra- and nearest inter-cluster distances are both zero scores 0.
pub fn silhouette(rows: &[Vec<f64>], labels: &[String]) -> Result<f64> {
    check_rows(rows)?;
    if rows.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", rows.len(), labels.len())));
    }
    let mut clusters: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    if clusters.len() < 2 || clusters.values().any(|c| c.len() < 2) {
        return Err(Error::InvalidArgument("silhouette needs at least two labels with two points each".into()));
    }
    let scores: Vec<f64> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i].as_str();
            let mut a = 0.0;
            let mut b = f64::INFINITY;
            for (l, members) in &clusters {
                let total: f64 = members.iter().filter(|&&j| j != i).map(|&j| dist(&rows[i], &rows[j])).sum();
                if *l == own {
                    a = total / (members.len() - 1) as f64;
                } else {
                    b = b.min(total / members.len() as f64);
                }
            }
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Projection {
    Pca,
    Tsne { perplexity: f64, iterations: usize },
}

impl Projection {
    pub fn tsne() -> Self {
        Projection::Tsne { perplexity: 5.0, iterations: 1000 }
    }
}

pub fn project_2d(rows: &[Vec<f64>], method: Projection, seed: u64) -> Result<Vec<[f64; 2]>> {
    check_rows(rows)?;
    if rows.len() < 3 {
        return Err(Error::InvalidArgument(format!("projection needs at least 3 points, got {}", rows.len())));
    }
    match method {
        Projection::Pca => Ok(pca(rows)),
        Projection::Tsne { perplexity, iterations } => tsne(rows, perplexity, iterations, seed),
    }
}

/// Principal axes in decreasing variance order, each signed so its largest
/// component is positive.
pub fn principal_axes(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, k| rows[i][k] - mean[k]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axes = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    (values, axes)
}

fn pca(rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let (_, axes) = principal_axes(rows);
    let proj = |r: &[f64], axis: Option<&Vec<f64>>| {
        axis.map_or(0.0, |a| r.iter().zip(&mean).zip(a).map(|((x, m), w)| (x - m) * w).sum())
    };
    rows.iter().map(|r| [proj(r, axes.first()), proj(r, axes.get(1))]).collect()
}

/// Row-conditional affinities whose entropy matches `ln(perplexity)`.
fn affinities(d2: &[Vec<f64>], perplexity: f64) -> Vec<Vec<f64>> {
    let n = d2.len();
    let target = perplexity.ln();
    (0..n)
        .map(|i| {
            let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
            let mut p = vec![0.0; n];
            for _ in 0..200 {
                let dmin = (0..n).filter(|&j| j != i).map(|j| d2[i][j]).fold(f64::INFINITY, f64::min);
                let mut sum = 0.0;
                for j in 0..n {
                    p[j] = if j == i { 0.0 } else { (-(d2[i][j] - dmin) * beta).exp() };
                    sum += p[j];
                }
                let mut h = 0.0;
                for v in p.iter_mut() {
                    *v /= sum;
                    if *v > 1e-300 {
                        h -= *v * v.ln();
                    }
                }
                if (h - target).abs() < 1e-10 {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            p
        })
        .collect()
}

/// Exact t-SNE; the perplexity is lowered to `(n − 1) / 3` on small sets.
fn tsne(rows: &[Vec<f64>], perplexity: f64, iterations: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    if !(perplexity > 0.0) {
        return Err(Error::InvalidArgument("perplexity must be positive".into()));
    }
    let n = rows.len();
    let perp = perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let d2: Vec<Vec<f64>> = rows.iter().map(|a| rows.iter().map(|b| dist(a, b).powi(2)).collect()).collect();
    let cond = affinities(&d2, perp);
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    let lr = 100.0;
    for it in 0..iterations {
        let exaggeration = if it < 250 { 12.0 } else { 1.0 };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let mut num = vec![vec![0.0; n]; n];
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dy = [y[i][0] - y[j][0], y[i][1] - y[j][1]];
                    num[i][j] = 1.0 / (1.0 + dy[0] * dy[0] + dy[1] * dy[1]);
                    z += num[i][j];
                }
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i != j {
                    let q = (num[i][j] / z).max(1e-12);
                    let w = 4.0 * (exaggeration * p[i][j] - q) * num[i][j];
                    grad[0] += w * (y[i][0] - y[j][0]);
                    grad[1] += w * (y[i][1] - y[j][1]);
                }
            }
            for k in 0..2 {
                gains[i][k] = if (grad[k] > 0.0) != (vel[i][k] > 0.0) { gains[i][k] + 0.2 } else { (gains[i][k] * 0.8).max(0.01) };
                vel[i][k] = momentum * vel[i][k] - lr * gains[i][k] * grad[k];
            }
        }
        for i in 0..n {
            y[i][0] += vel[i][0];
            y[i][1] += vel[i][1];
        }
        let c = [y.iter().map(|v| v[0]).sum::<f64>() / n as f64, y.iter().map(|v| v[1]).sum::<f64>() / n as f64];
        y.iter_mut().for_each(|v| {
            v[0] -= c[0];
            v[1] -= c[1];
        });
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("t-SNE diverged".into()));
    }
    Ok(y)
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Static scatter plot, one dot per point coloured by label.
pub fn scatter_svg(points: &[[f64; 2]], labels: &[String], title: &str) -> String {
    let (w, h, m) = (640.0, 480.0, 40.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let sx = if x1 > x0 { (w - 2.0 * m - 120.0) / (x1 - x0) } else { 0.0 };
    let sy = if y1 > y0 { (h - 2.0 * m) / (y1 - y0) } else { 0.0 };
    let mut names: Vec<&String> = labels.iter().collect();
    names.sort();
    names.dedup();
    let colour = |l: &String| PALETTE[names.iter().position(|n| *n == l).unwrap_or(0) % PALETTE.len()];

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(title)
    );
    for (p, l) in points.iter().zip(labels) {
        let cx = m + (p[0] - x0) * sx;
        let cy = h - m - (p[1] - y0) * sy;
        svg += &format!("<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{}\"><title>{}</title></circle>\n", colour(l), escape(l));
    }
    for (i, l) in names.iter().enumerate() {
        let y = m + 16.0 * i as f64;
        svg += &format!(
            "<circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            w - 110.0,
            colour(l),
            w - 100.0,
            y + 4.0,
            escape(l)
        );
    }
    svg + "</svg>\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `utterance_id,speaker,x,y` lines with a header.
pub fn coordinates_csv(set: &EmbeddingSet, points: &[[f64; 2]]) -> String {
    let mut out = String::from("utterance_id,speaker,x,y\n");
    for ((id, l), p) in set.utterance_ids.iter().zip(&set.labels).zip(points) {
        out += &format!("{id},{l},{:?},{:?}\n", p[0], p[1]);
    }
    out
}
