//! DMD with control for frozen-parameter (LTI) data.

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};
use crate::excitation::SnapshotDataset;
use crate::features::SchedulingBasis;
use crate::lpv_global::GlobalProblem;
use crate::model::{LpvModel, ModelKind};
use crate::numerics::{ProcrustesTruncation, TruncationConfig};

/// Reduced pair `(Ã, B̃)` on the POD basis `W_yr`, together with the
/// Procrustes factors needed to recover full-space modes.
#[derive(Clone, Debug)]
pub struct ReducedLti {
    model: LpvModel,
    factors: ProcrustesTruncation,
    n_states: usize,
}

#[derive(Clone, Debug)]
pub struct DynamicMode {
    pub eigenvalue: c64,
    pub reduced_eigvec: Vec<c64>,
    pub full_mode: Vec<c64>,
}

/// Rank-limited DMDc fit. `P` must be constant (or absent); it does not
/// enter the model.
pub fn fit_dmdc(ds: &SnapshotDataset, cfg: &TruncationConfig) -> Result<ReducedLti> {
    if !ds.is_frozen() {
        return Err(Error::config("DMDc needs frozen-parameter data"));
    }
    let basis = SchedulingBasis::constant(ds.n_params());
    let problem = GlobalProblem::new(ds, &basis, &basis)?;
    let (model, factors) = problem.fit_with_factors(cfg, ModelKind::Dmdc)?;
    Ok(ReducedLti {
        model,
        factors,
        n_states: ds.n_states(),
    })
}

impl ReducedLti {
    pub fn a_tilde(&self) -> MatRef<'_, f64> {
        self.model.w_a.as_ref()
    }

    pub fn b_tilde(&self) -> MatRef<'_, f64> {
        self.model.w_b.as_ref()
    }

    pub fn pod_transform(&self) -> MatRef<'_, f64> {
        self.model
            .pod_transform
            .as_ref()
            .expect("DMDc models are always reduced")
            .as_ref()
    }

    pub fn truncation(&self) -> TruncationConfig {
        self.model.truncation.expect("set by the fit")
    }

    pub fn model(&self) -> &LpvModel {
        &self.model
    }

    pub fn into_model(self) -> LpvModel {
        self.model
    }

    /// Retained `(W_r, Σ_reg, Y·V_r)`.
    pub fn factors(&self) -> &ProcrustesTruncation {
        &self.factors
    }

    /// `Y·V_r·Σ_reg·W_{r,1}ᵀ·W_yr`, which maps reduced eigenvectors to modes.
    fn mode_operator(&self) -> Mat<f64> {
        let w1 = self.factors.left.as_ref().subrows(0, self.n_states);
        self.factors.scaled_outputs() * w1.transpose() * self.pod_transform()
    }

    /// The `k` eigenpairs of `Ã` with the largest magnitude, lifted to
    /// full-space modes `φ = (1/λ)·Y·V_r·Σ_reg·W_{r,1}ᵀ·W_yr·ω`.
    pub fn recover_modes(&self, k: usize) -> Result<Vec<DynamicMode>> {
        let evd = self
            .a_tilde()
            .eigen()
            .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let vals: Vec<c64> = evd.S().column_vector().iter().copied().collect();
        let vecs = evd.U();
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[b].norm().total_cmp(&vals[a].norm()));
        let smax = vals
            .get(order.first().copied().unwrap_or(0))
            .map_or(0.0, |v| v.norm());
        let tiny = smax * vals.len() as f64 * f64::EPSILON;
        let op = self.mode_operator();
        let mut modes = Vec::with_capacity(k);
        for &j in &order {
            if modes.len() == k {
                break;
            }
            let lambda = vals[j];
            if lambda.norm() <= tiny {
                log::info!("skipping zero eigenvalue of the reduced operator");
                continue;
            }
            let omega: Vec<c64> = vecs.col(j).iter().copied().collect();
            let full_mode = (0..op.nrows())
                .map(|i| {
                    let mut acc = c64::new(0.0, 0.0);
                    for (c, w) in omega.iter().enumerate() {
                        acc += w * op[(i, c)];
                    }
                    acc / lambda
                })
                .collect();
            modes.push(DynamicMode {
                eigenvalue: lambda,
                reduced_eigvec: omega,
                full_mode,
            });
        }
        Ok(modes)
    }

    /// Reduced trajectory `z[k+1] = Ã z[k] + B̃ u[k]` and its lift `W_yr·z`.
    pub fn predict(&self, z0: &[f64], u: MatRef<'_, f64>) -> Result<(Mat<f64>, Mat<f64>)> {
        let r = self.a_tilde().nrows();
        if z0.len() != r || u.nrows() != self.b_tilde().ncols() {
            return Err(Error::dim("initial state or inputs do not match the model"));
        }
        let mut z = Mat::<f64>::zeros(r, u.ncols() + 1);
        for (i, &v) in z0.iter().enumerate() {
            z[(i, 0)] = v;
        }
        for k in 0..u.ncols() {
            let next = self.a_tilde() * z.col(k) + self.b_tilde() * u.col(k);
            z.col_mut(k + 1).copy_from(&next);
        }
        let lifted = self.pod_transform() * &z;
        Ok((z, lifted))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system_has_unit_eigenvalues() {
        let n = 40;
        let x = Mat::from_fn(2, n, |i, k| {
            (((k + 3) * (i + 5) * 7919) % 101) as f64 / 50.0 - 1.0
        });
        let u = Mat::from_fn(1, n, |_, k| ((k * 31) % 17) as f64 / 17.0);
        let y = x.clone();
        let p = Mat::<f64>::zeros(1, n);
        let ds = SnapshotDataset::new(x, u, y, p, 1.0).unwrap();
        let fit = fit_dmdc(&ds, &TruncationConfig::new(3, 2, 0.0)).unwrap();
        for m in fit.recover_modes(2).unwrap() {
            assert!((m.eigenvalue - c64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn scheduled_data_rejected() {
        let p = Mat::from_fn(1, 3, |_, k| k as f64);
        let ds = SnapshotDataset::new(Mat::zeros(1, 3), Mat::zeros(1, 3), Mat::zeros(1, 3), p, 1.0)
            .unwrap();
        assert!(fit_dmdc(&ds, &TruncationConfig::new(1, 1, 0.0)).is_err());
    }

    #[test]
    fn scalar_prediction() {
        // x+ = 0.5x + u learned from data, then iterated
        let n = 20;
        let x = Mat::from_fn(1, n, |_, k| (k % 5) as f64 - 2.0);
        let u = Mat::from_fn(1, n, |_, k| ((k * 3) % 7) as f64);
        let y = Mat::from_fn(1, n, |_, k| 0.5 * x[(0, k)] + u[(0, k)]);
        let ds = SnapshotDataset::new(x, u, y, Mat::zeros(0, n), 1.0).unwrap();
        let fit = fit_dmdc(&ds, &TruncationConfig::new(2, 1, 0.0)).unwrap();
        let w = fit.pod_transform()[(0, 0)];
        let z0 = [0.0];
        let (_, lifted) = fit
            .predict(&z0, Mat::from_fn(1, 3, |_, _| 1.0).as_ref())
            .unwrap();
        let got: Vec<f64> = lifted.row(0).iter().copied().collect();
        for (g, e) in got.iter().zip([0.0, 1.0, 1.5, 1.75]) {
            assert!((g - e).abs() < 1e-10, "{got:?} (w = {w})");
        }
    }
}
