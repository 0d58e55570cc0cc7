use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank-`r` truncation of a singular value decomposition `M ≈ W·diag(s)·Vᵀ`.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub left_vectors: Mat<f64>,
    pub singular_values: Vec<f64>,
    pub right_vectors: Mat<f64>,
    /// Rank actually kept after clamping to the numerical rank.
    pub rank: usize,
    pub requested_rank: usize,
}

impl TruncatedSvd {
    /// `W·diag(s)·Vᵀ`.
    pub fn reconstruct(&self) -> Mat<f64> {
        let mut ws = self.left_vectors.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            for v in ws.col_mut(j).iter_mut() {
                *v *= s;
            }
        }
        &ws * self.right_vectors.transpose()
    }

    pub fn was_clamped(&self) -> bool {
        self.rank < self.requested_rank
    }
}

/// Ranks and regularization for one identification run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub procrustes_rank: usize,
    pub pod_rank: usize,
    #[serde(default)]
    pub regularization: f64,
}

impl TruncationConfig {
    pub fn new(procrustes_rank: usize, pod_rank: usize, regularization: f64) -> Self {
        Self {
            procrustes_rank,
            pod_rank,
            regularization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.procrustes_rank == 0 || self.pod_rank == 0 {
            return Err(Error::config("ranks must be positive"));
        }
        if !(self.regularization >= 0.0) || !self.regularization.is_finite() {
            return Err(Error::Domain(format!(
                "regularization must be finite and nonnegative, got {}",
                self.regularization
            )));
        }
        Ok(())
    }
}

/// Singular values at or below this level are treated as exact zeros.
///
/// `max(nrows, ncols) · σ_max · 2⁻⁵²`.
pub fn numerical_zero_threshold(nrows: usize, ncols: usize, sigma_max: f64) -> f64 {
    nrows.max(ncols) as f64 * sigma_max * f64::EPSILON
}

/// Number of leading singular values above `threshold` (input sorted descending).
pub(crate) fn effective_rank(singular_values: &[f64], threshold: f64) -> usize {
    singular_values
        .iter()
        .take_while(|&&s| s > threshold)
        .count()
}

/// Top-`r` singular triplets of `m`, clamped to its numerical rank.
pub fn truncated_svd(m: MatRef<'_, f64>, r: usize) -> Result<TruncatedSvd> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::dim("cannot decompose an empty matrix"));
    }
    if r == 0 {
        return Err(Error::config("truncation rank must be positive"));
    }
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let threshold = numerical_zero_threshold(m.nrows(), m.ncols(), s[0]);
    let rank = r.min(effective_rank(&s, threshold));
    if rank < r {
        log::debug!("truncated_svd: requested rank {r} clamped to {rank}");
    }
    Ok(TruncatedSvd {
        left_vectors: svd.U().subcols(0, rank).to_owned(),
        singular_values: s[..rank].to_vec(),
        right_vectors: svd.V().subcols(0, rank).to_owned(),
        rank,
        requested_rank: r,
    })
}

/// Elementwise `σ / (σ² + λ²)`.
///
/// With `λ = 0`, entries at or below `zero_threshold` map to 0 instead of
/// blowing up.
pub fn regularize_singular_values(s: &[f64], lambda: f64, zero_threshold: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!(
            "regularization must be nonnegative, got {lambda}"
        )));
    }
    s.iter()
        .map(|&sigma| {
            if !(sigma >= 0.0) {
                return Err(Error::Domain(format!("negative singular value {sigma}")));
            }
            if lambda == 0.0 {
                Ok(if sigma > zero_threshold {
                    1.0 / sigma
                } else {
                    0.0
                })
            } else {
                Ok(sigma / (sigma * sigma + lambda * lambda))
            }
        })
        .collect()
}
