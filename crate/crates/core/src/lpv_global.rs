//! Global DMD-LPV identification from a single scheduled trajectory.

use faer::Mat;

use crate::error::{Error, Result};
use crate::excitation::SnapshotDataset;
use crate::features::{fill_feature_rows, FeatureSource, SchedulingBasis};
use crate::model::{LpvModel, ModelKind};
use crate::numerics::{ProcrustesFactors, ProcrustesTruncation, TruncationConfig};

/// Factored global regression `Y ≈ [W_A W_B]·[X_P; U_P]`.
///
/// Factoring once and truncating many times is what makes rank sweeps cheap:
/// every `(r_pr, r_pod, λ)` reuses the same decomposition.
#[derive(Clone, Debug)]
pub struct GlobalProblem {
    factors: ProcrustesFactors,
    n_states: usize,
    n_inputs: usize,
    basis_x: SchedulingBasis,
    basis_u: SchedulingBasis,
    data_scale: f64,
}

impl GlobalProblem {
    pub fn new(
        ds: &SnapshotDataset,
        basis_x: &SchedulingBasis,
        basis_u: &SchedulingBasis,
    ) -> Result<Self> {
        let src = FeatureSource::new(ds, basis_x, basis_u)?;
        let n_in = src.x_rows() + src.u_rows();
        log::debug!(
            "factoring global regression: {} regressor rows, {} outputs, {} samples",
            n_in,
            ds.n_states(),
            ds.len()
        );
        let factors =
            ProcrustesFactors::from_row_blocks(n_in, ds.n_states(), ds.len(), |start, block| {
                fill_feature_rows(&src, start, block);
                Ok(())
            })?;
        Ok(Self {
            factors,
            n_states: ds.n_states(),
            n_inputs: ds.n_inputs(),
            basis_x: basis_x.clone(),
            basis_u: basis_u.clone(),
            data_scale: ds.state_scale(),
        })
    }

    pub fn factors(&self) -> &ProcrustesFactors {
        &self.factors
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn basis_x(&self) -> &SchedulingBasis {
        &self.basis_x
    }

    pub fn basis_u(&self) -> &SchedulingBasis {
        &self.basis_u
    }

    /// Number of regressor rows, `N_φ·n_s + N_ψ·n_u`.
    pub fn regressor_rows(&self) -> usize {
        self.factors.n_inputs()
    }

    pub fn effective_rank(&self) -> usize {
        self.factors.effective_rank()
    }

    /// Reduced weights with the rank-`r_pr` Procrustes solution projected on
    /// the rank-`r_pod` POD basis of `Y`.
    pub fn fit(&self, cfg: &TruncationConfig) -> Result<LpvModel> {
        let (model, _) = self.fit_with_factors(cfg, ModelKind::Global)?;
        Ok(model)
    }

    pub(crate) fn fit_with_factors(
        &self,
        cfg: &TruncationConfig,
        kind: ModelKind,
    ) -> Result<(LpvModel, ProcrustesTruncation)> {
        cfg.validate()?;
        if cfg.pod_rank > cfg.procrustes_rank {
            return Err(Error::config(format!(
                "POD rank {} exceeds Procrustes rank {}",
                cfg.pod_rank, cfg.procrustes_rank
            )));
        }
        let trunc = self
            .factors
            .truncate(cfg.procrustes_rank, cfg.regularization)?;
        let w_yr = self.factors.output_basis(cfg.pod_rank)?;
        let r = w_yr.ncols();
        let ns = self.n_states;
        let nx = self.basis_x.len();
        // S = W_yrᵀ·Y·V_r·Σ_reg, shared by both weight blocks
        let s = w_yr.transpose() * trunc.scaled_outputs();
        let left = trunc.left.as_ref();
        let mut w_a = Mat::<f64>::zeros(r, nx * r);
        for i in 0..nx {
            let blk = &s * left.subrows(i * ns, ns).transpose() * &w_yr;
            w_a.as_mut().subcols_mut(i * r, r).copy_from(&blk);
        }
        let u_rows = self.regressor_rows() - nx * ns;
        let w_b = &s * left.subrows(nx * ns, u_rows).transpose();
        let mut model = LpvModel::new(
            kind,
            w_a,
            w_b,
            Some(w_yr),
            self.basis_x.clone(),
            self.basis_u.clone(),
        )?;
        model.truncation = Some(TruncationConfig {
            procrustes_rank: trunc.rank,
            pod_rank: r,
            regularization: cfg.regularization,
        });
        model.data_scale = self.data_scale;
        Ok((model, trunc))
    }

    /// Full-space weights `[W_A W_B]` at Procrustes rank `rank`
    /// (`None` = effective rank, the least-squares solution).
    pub fn fit_full(&self, rank: Option<usize>, lambda: f64) -> Result<LpvModel> {
        let rank = rank.unwrap_or_else(|| self.effective_rank().max(1));
        let g = self.factors.solve(rank, lambda)?;
        let split = self.basis_x.len() * self.n_states;
        let w_a = g.subcols(0, split).to_owned();
        let w_b = g.subcols(split, g.ncols() - split).to_owned();
        let mut model = LpvModel::new(
            ModelKind::FullLeastSquares,
            w_a,
            w_b,
            None,
            self.basis_x.clone(),
            self.basis_u.clone(),
        )?;
        model.truncation = Some(TruncationConfig {
            procrustes_rank: rank.min(self.effective_rank()),
            pod_rank: self.n_states,
            regularization: lambda,
        });
        model.data_scale = self.data_scale;
        Ok(model)
    }
}

pub fn fit_global(
    ds: &SnapshotDataset,
    basis_x: &SchedulingBasis,
    basis_u: &SchedulingBasis,
    cfg: &TruncationConfig,
) -> Result<LpvModel> {
    GlobalProblem::new(ds, basis_x, basis_u)?.fit(cfg)
}

/// Least-squares LPV baseline at the effective rank of the regressor.
pub fn fit_full_least_squares(
    ds: &SnapshotDataset,
    basis_x: &SchedulingBasis,
    basis_u: &SchedulingBasis,
    lambda: f64,
) -> Result<LpvModel> {
    GlobalProblem::new(ds, basis_x, basis_u)?.fit_full(None, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::basis_under_1p;

    fn toy_dataset(n: usize) -> SnapshotDataset {
        // 2-state LPV with A(p) = A0 + p·A1, B constant, pseudo-random data
        let mut x = Mat::<f64>::zeros(2, n);
        let mut y = Mat::<f64>::zeros(2, n);
        let u = Mat::from_fn(1, n, |_, k| ((k * 37) % 11) as f64 / 11.0 - 0.4);
        let p = Mat::from_fn(1, n, |_, k| ((k * 13) % 7) as f64 / 7.0);
        for k in 0..n {
            x[(0, k)] = ((k * 17) % 19) as f64 / 19.0 - 0.5;
            x[(1, k)] = ((k * 29) % 23) as f64 / 23.0 - 0.5;
            let pk = p[(0, k)];
            y[(0, k)] = (0.5 + 0.2 * pk) * x[(0, k)] + 0.1 * x[(1, k)] + u[(0, k)];
            y[(1, k)] = -0.3 * pk * x[(0, k)] + 0.8 * x[(1, k)];
        }
        SnapshotDataset::new(x, u, y, p, 1.0).unwrap()
    }

    #[test]
    fn full_fit_recovers_generator() {
        let ds = toy_dataset(60);
        let b = basis_under_1p();
        let m = fit_full_least_squares(&ds, &b, &b, 0.0).unwrap();
        let (a, bm) = m.frozen_at(&[0.5]).unwrap();
        assert!((a[(0, 0)] - 0.6).abs() < 1e-10);
        assert!((a[(1, 0)] + 0.15).abs() < 1e-10);
        assert!((bm[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pod_rank_above_procrustes_rank_rejected() {
        let ds = toy_dataset(30);
        let b = basis_under_1p();
        let r = fit_global(&ds, &b, &b, &TruncationConfig::new(1, 2, 0.0));
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
