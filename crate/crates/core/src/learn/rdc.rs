//! Randomized dependence coefficient (RDC).
//!
//! Each column is mapped through its empirical copula, augmented with a
//! constant coordinate, projected with random Gaussian coefficients and passed
//! through `sin`. The coefficient is the largest canonical correlation between
//! the two feature blocks. Canonical correlations are computed from
//! orthonormal bases of the centred feature blocks (thin SVD with rank
//! truncation), which stays stable when the sine features are nearly collinear.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-9;

/// Empirical copula: `rank / n`, ties sharing their maximum rank.
pub fn copula(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && column[idx[end]] == column[idx[start]] {
            end += 1;
        }
        let rank = end as f64 / n as f64;
        for &i in &idx[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

/// Orthonormal basis of one column's centred random sine features, or `None`
/// when the column is constant.
#[derive(Debug, Clone)]
pub struct RdcBasis(Option<DMatrix<f64>>);

impl RdcBasis {
    pub fn new(column: &[f64], num_features: usize, scale: f64, seed: u64) -> Self {
        let n = column.len();
        let u = copula(column);
        if u.iter().all(|&v| v == u[0]) || num_features == 0 {
            return RdcBasis(None);
        }
        let mut rng = seed::rng(seed);
        // Projection coefficients for the copula value and the constant coordinate.
        let proj: Vec<(f64, f64)> = (0..num_features)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                (scale * a, scale * b)
            })
            .collect();
        let mut feats = DMatrix::<f64>::from_fn(n, num_features, |i, j| {
            let (a, b) = proj[j];
            (a * u[i] + b).sin()
        });
        for mut col in feats.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let svd = feats.svd(true, false);
        let max_sv = svd.singular_values.max();
        if max_sv.is_nan() || max_sv <= 0.0 {
            return RdcBasis(None);
        }
        let u_mat = svd.u.expect("requested U");
        let keep: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > RANK_TOL * max_sv)
            .map(|(i, _)| i)
            .collect();
        RdcBasis(Some(u_mat.select_columns(&keep)))
    }

    pub fn is_degenerate(&self) -> bool {
        self.0.is_none()
    }
}

/// Largest canonical correlation between two bases, clamped to `[0, 1]`.
pub fn canonical_correlation(a: &RdcBasis, b: &RdcBasis) -> f64 {
    match (&a.0, &b.0) {
        (Some(ua), Some(ub)) => {
            let cross = ua.transpose() * ub;
            cross.singular_values().max().clamp(0.0, 1.0)
        }
        _ => 0.0,
    }
}

/// RDC between two equal-length columns. A constant column yields 0.
pub fn rdc_dependence(
    x: &[f64],
    y: &[f64],
    num_features: usize,
    scale: f64,
    seed: u64,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "RDC columns differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Input(format!("RDC needs at least 3 samples, got {}", x.len())));
    }
    let bx = RdcBasis::new(x, num_features, scale, seed::derive(seed, &[0]));
    let by = RdcBasis::new(y, num_features, scale, seed::derive(seed, &[1]));
    Ok(canonical_correlation(&bx, &by))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const K: usize = 20;
    const S: f64 = 1.0 / 6.0;

    fn uniforms(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn copula_ranks_with_ties() {
        assert_eq!(copula(&[3.0, 1.0, 2.0, 2.0]), vec![1.0, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn identical_columns_are_dependent() {
        let x = uniforms(500, 1);
        let r = rdc_dependence(&x, &x, K, S, 7).unwrap();
        assert!(r > 0.95, "{r}");
    }

    #[test]
    fn independent_columns_score_low() {
        let x = uniforms(2000, 2);
        let y = uniforms(2000, 3);
        let r = rdc_dependence(&x, &y, K, S, 7).unwrap();
        assert!(r < 0.2, "{r}");
    }

    #[test]
    fn nonlinear_dependence_is_detected() {
        let x = uniforms(1000, 4);
        let y: Vec<f64> = x.iter().map(|v| (v - 0.5) * (v - 0.5)).collect();
        let r = rdc_dependence(&x, &y, K, S, 7).unwrap();
        assert!(r > 0.9, "{r}");
    }

    #[test]
    fn constant_column_is_zero() {
        let x = uniforms(100, 5);
        let c = vec![2.0; 100];
        assert_eq!(rdc_dependence(&c, &x, K, S, 7).unwrap(), 0.0);
    }

    #[test]
    fn errors_on_bad_lengths() {
        assert!(rdc_dependence(&[1.0, 2.0], &[1.0, 2.0], K, S, 0).is_err());
        assert!(rdc_dependence(&[1.0, 2.0, 3.0], &[1.0, 2.0], K, S, 0).is_err());
    }

    #[test]
    fn deterministic_and_in_range() {
        let x = uniforms(300, 6);
        let y: Vec<f64> = x.iter().zip(uniforms(300, 9)).map(|(a, b)| a + 0.3 * b).collect();
        let a = rdc_dependence(&x, &y, K, S, 11).unwrap();
        let b = rdc_dependence(&x, &y, K, S, 11).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }
}
