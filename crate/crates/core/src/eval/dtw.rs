use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `(reference frame, converted frame)` pairs from `(0, 0)` to the two
    /// last frames.
    pub path: Vec<(usize, usize)>,
    /// Sum of local distances along the path.
    pub cost: f64,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Dynamic time warping under Euclidean frame distance with unit-weight
/// horizontal, vertical and diagonal steps. Equal-cost predecessors are
/// resolved diagonal first, then reference-advancing, then converted-advancing.
pub fn dtw(a: &Mat, b: &Mat) -> Result<Alignment> {
    if a.rows == 0 || b.rows == 0 {
        return Err(Error::InvalidArgument("alignment of an empty sequence".into()));
    }
    if a.cols != b.cols {
        return Err(Error::Shape(format!("frame dimensions {} and {} differ", a.cols, b.cols)));
    }
    let (n, m) = (a.rows, b.rows);
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let d = euclidean(a.row(i), b.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[at(i, j)] = best + d;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
        let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
        let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment { path, cost: acc[at(n - 1, m - 1)] })
}

/// Monotone, unit-step and anchored at both corners.
pub fn is_valid_path(path: &[(usize, usize)], n: usize, m: usize) -> bool {
    if path.first() != Some(&(0, 0)) || path.last() != Some(&(n - 1, m - 1)) {
        return false;
    }
    path.windows(2).all(|w| {
        let (di, dj) = (w[1].0 as isize - w[0].0 as isize, w[1].1 as isize - w[0].1 as isize);
        matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
    })
}
