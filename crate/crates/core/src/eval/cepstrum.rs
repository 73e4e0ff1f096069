use std::f64::consts::{LN_10, PI};

use crate::error::{Error, Result};
use crate::tensor::Mat;

use super::dtw::{dtw, Alignment};

pub const DEFAULT_ORDER: usize = 24;

/// Orthonormal DCT-II basis rows `1..=order` for `dim`-point frames.
fn dct_basis(dim: usize, order: usize) -> Mat {
    let mut b = Mat::zeros(dim, order);
    let scale = (2.0 / dim as f64).sqrt();
    for n in 0..dim {
        for k in 1..=order {
            b.set(n, k - 1, scale * (PI * k as f64 * (n as f64 + 0.5) / dim as f64).cos());
        }
    }
    b
}

/// Cepstra of natural-log mel frames, `(T, order)`, energy term excluded.
pub fn mel_cepstrum(log_mel: &Mat, order: usize) -> Result<Mat> {
    if log_mel.rows == 0 || log_mel.cols == 0 {
        return Err(Error::InvalidArgument("cepstrum of an empty spectrogram".into()));
    }
    if order == 0 || order >= log_mel.cols {
        return Err(Error::InvalidArgument(format!(
            "cepstral order must lie in 1..{} for {}-band frames",
            log_mel.cols, log_mel.cols
        )));
    }
    Ok(log_mel.matmul(&dct_basis(log_mel.cols, order)))
}

/// `10 / ln 10 · √2`, dB per unit of cepstral Euclidean distance.
pub const MCD_SCALE: f64 = 10.0 / LN_10 * std::f64::consts::SQRT_2;

pub fn frame_distortion(a: &[f64], b: &[f64]) -> f64 {
    10.0 / LN_10 * (2.0 * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mcd {
    pub db: f64,
    pub alignment: Alignment,
}

/// Mel-cepstral distortion averaged over the DTW path.
pub fn mcd(reference: &Mat, converted: &Mat) -> Result<Mcd> {
    if reference.cols != converted.cols {
        return Err(Error::Shape(format!("cepstral orders {} and {} differ", reference.cols, converted.cols)));
    }
    let alignment = dtw(reference, converted)?;
    let total: f64 = alignment.path.iter().map(|&(i, j)| frame_distortion(reference.row(i), converted.row(j))).sum();
    Ok(Mcd { db: total / alignment.path.len() as f64, alignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_direct_cosine_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frame: Vec<f64> = (0..40).map(|_| rng.gen_range(-20.0..5.0)).collect();
        let c = mel_cepstrum(&Mat::row_vector(&frame), 24).unwrap();
        for k in 1..=24 {
            let mut s = 0.0;
            for (n, x) in frame.iter().enumerate() {
                s += x * (PI * k as f64 * (2 * n + 1) as f64 / 80.0).cos();
            }
            s *= (2.0f64 / 40.0).sqrt();
            assert!((c.get(0, k - 1) - s).abs() < 1e-8);
        }
    }

    #[test]
    fn flat_spectrum_has_no_shape() {
        let c = mel_cepstrum(&Mat::filled(3, 80, -4.2), 24).unwrap();
        assert!(c.data.iter().all(|v| v.abs() < 1e-10));
        assert!(mel_cepstrum(&Mat::zeros(0, 80), 24).is_err());
        assert!(mel_cepstrum(&Mat::zeros(2, 10), 24).is_err());
    }

    #[test]
    fn unit_offset_gives_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Mat::from_vec(6, 24, (0..144).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut b = a.clone();
        for t in 0..6 {
            b.set(t, 0, a.get(t, 0) + 1.0);
        }
        let m = mcd(&a, &b).unwrap();
        assert!((m.db - 6.141_851_463_7).abs() < 1e-6, "{}", m.db);
        assert!((MCD_SCALE - m.db).abs() < 1e-12);
    }

    #[test]
    fn duplicated_frames_cost_nothing() {
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0], vec![5.0, 5.0]]);
        let dup = Mat::from_rows(&[a.row(0).to_vec(), a.row(0).to_vec(), a.row(1).to_vec(), a.row(1).to_vec(), a.row(2).to_vec(), a.row(2).to_vec()]);
        let m = mcd(&a, &dup).unwrap();
        assert_eq!(m.db, 0.0);
        assert_eq!(m.alignment.path, vec![(0, 0), (0, 1), (1, 2), (1, 3), (2, 4), (2, 5)]);
        assert_eq!(mcd(&a, &a).unwrap().db, 0.0);
    }

    #[test]
    fn grows_with_perturbation_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Mat::from_vec(5, 24, (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let dir: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = 0.0;
        for step in 1..8 {
            let eps = 0.01 * step as f64;
            let b = Mat::from_vec(5, 24, a.data.iter().zip(&dir).map(|(x, d)| x + eps * d).collect());
            let v = mcd(&a, &b).unwrap().db;
            assert!(v > last);
            last = v;
        }
    }
}
