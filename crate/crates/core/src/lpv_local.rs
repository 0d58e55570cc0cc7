//! Local DMD-LPV identification from frozen-parameter experiments.
//!
//! One LTI model is identified per frozen value `θ_i`, either in full
//! coordinates and then projected, or directly on POD-projected data. The
//! reduced LPV weights are then regressed from the collection:
//! `Ã(i) = Σ_j φ_j(θ_i)·Ã_j` for every `i`, solved entrywise as
//! `T = C·Φ` with `Φ[j, i] = φ_j(θ_i)`, which is the horizontal stacking
//! `[Ã(1) … Ã(n)] = W̃_A·[φ(θ_1)⊗I … φ(θ_n)⊗I]` without forming the
//! Kronecker blocks.

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{LocalDatasetBundle, SnapshotDataset};
use crate::features::SchedulingBasis;
use crate::model::{LpvModel, ModelKind};
use crate::numerics::{numerical_zero_threshold, ProcrustesFactors, RowStackQr, TruncationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LtiSpace {
    Full,
    Latent,
}

#[derive(Clone, Debug)]
pub struct LtiEntry {
    pub theta: Vec<f64>,
    pub a: Mat<f64>,
    pub b: Mat<f64>,
}

/// Frozen-parameter LTI models sharing one POD basis.
#[derive(Clone, Debug)]
pub struct LtiCollection {
    pub space: LtiSpace,
    pub entries: Vec<LtiEntry>,
    pub pod_transform: Mat<f64>,
}

impl LtiCollection {
    /// Latent pairs `(W_yrᵀ·A_i·W_yr, W_yrᵀ·B_i)`; latent entries are returned as is.
    pub fn projected(&self) -> Vec<(Mat<f64>, Mat<f64>)> {
        let w = &self.pod_transform;
        self.entries
            .iter()
            .map(|e| match self.space {
                LtiSpace::Full => (w.transpose() * &e.a * w, w.transpose() * &e.b),
                LtiSpace::Latent => (e.a.clone(), e.b.clone()),
            })
            .collect()
    }
}

/// Leading `r` left singular vectors of `[Y_1 Y_2 … Y_n]`.
pub fn pod_from_bundle(bundle: &LocalDatasetBundle, r: usize) -> Result<Mat<f64>> {
    if r == 0 {
        return Err(Error::config("POD rank must be positive"));
    }
    let ns = bundle.n_states();
    let mut qr = RowStackQr::new(ns);
    let block = qr.preferred_block_rows();
    let mut total = 0;
    for e in &bundle.entries {
        let y = e.dataset.y.as_ref();
        let mut start = 0;
        while start < y.ncols() {
            let len = block.min(y.ncols() - start);
            qr.push_block(y.subcols(start, len).transpose())?;
            start += len;
        }
        total += y.ncols();
    }
    let rt = qr.finish().transpose().to_owned();
    let svd = rt
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let thr = numerical_zero_threshold(ns, total, s.first().copied().unwrap_or(0.0));
    let kept = r.min(s.iter().take_while(|&&v| v > thr).count());
    if kept == 0 {
        return Err(Error::Numerical(
            "bundle outputs are identically zero".into(),
        ));
    }
    if kept < r {
        log::warn!("POD rank {r} clamped to numerical rank {kept} of the bundle outputs");
    }
    Ok(svd.U().subcols(0, kept).to_owned())
}

fn stack_rows(top: MatRef<'_, f64>, bottom: MatRef<'_, f64>) -> Mat<f64> {
    let t = top.nrows();
    Mat::from_fn(t + bottom.nrows(), top.ncols(), |i, j| {
        if i < t {
            top[(i, j)]
        } else {
            bottom[(i - t, j)]
        }
    })
}

// least-squares [A B] from Y ≈ A·X + B·U at the effective rank
fn identify_lti(
    x: MatRef<'_, f64>,
    u: MatRef<'_, f64>,
    y: MatRef<'_, f64>,
    lambda: f64,
    theta: &[f64],
) -> Result<(Mat<f64>, Mat<f64>)> {
    let f = stack_rows(x, u);
    let factors = ProcrustesFactors::from_matrices(y, f.as_ref())?;
    let eff = factors.effective_rank();
    if eff < f.nrows() {
        log::warn!(
            "frozen system θ = {theta:?} is not persistently excited: regressor rank {eff} of {}",
            f.nrows()
        );
    }
    let g = factors.solve(eff.max(1), lambda)?;
    let nx = x.nrows();
    Ok((
        g.subcols(0, nx).to_owned(),
        g.subcols(nx, u.nrows()).to_owned(),
    ))
}

fn fit_collection(
    bundle: &LocalDatasetBundle,
    w_yr: Mat<f64>,
    space: LtiSpace,
    lambda: f64,
) -> Result<LtiCollection> {
    let entries = bundle
        .entries
        .par_iter()
        .map(|e| {
            let ds: &SnapshotDataset = &e.dataset;
            let (a, b) = match space {
                LtiSpace::Full => identify_lti(
                    ds.x.as_ref(),
                    ds.u.as_ref(),
                    ds.y.as_ref(),
                    lambda,
                    &e.theta,
                )?,
                LtiSpace::Latent => {
                    let z = w_yr.transpose() * &ds.x;
                    let zn = w_yr.transpose() * &ds.y;
                    identify_lti(z.as_ref(), ds.u.as_ref(), zn.as_ref(), lambda, &e.theta)?
                }
            };
            Ok(LtiEntry {
                theta: e.theta.clone(),
                a,
                b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LtiCollection {
        space,
        entries,
        pod_transform: w_yr,
    })
}

/// Solves `Mᵢ = Σ_j coeff_j(θ_i)·W_j` for the blocks `W_j`, concatenated
/// horizontally in basis order.
fn regress_blocks(
    targets: &[Mat<f64>],
    thetas: &[Vec<f64>],
    basis: &SchedulingBasis,
    rank: usize,
    lambda: f64,
) -> Result<Mat<f64>> {
    let (rows, cols) = (targets[0].nrows(), targets[0].ncols());
    let n = targets.len();
    let mut phi = Mat::<f64>::zeros(basis.len(), n);
    for (i, th) in thetas.iter().enumerate() {
        for (j, v) in basis.eval(th)?.into_iter().enumerate() {
            phi[(j, i)] = v;
        }
    }
    // column i = vec(Mᵢ), column-major
    let t = Mat::from_fn(rows * cols, n, |k, i| targets[i][(k % rows, k / rows)]);
    let factors = ProcrustesFactors::from_matrices(t.as_ref(), phi.as_ref())?;
    if factors.effective_rank() < basis.len() {
        log::warn!(
            "{} frozen points determine only {} of {} scheduling features",
            n,
            factors.effective_rank(),
            basis.len()
        );
    }
    let c = factors.solve(rank, lambda)?;
    Ok(Mat::from_fn(rows, cols * basis.len(), |a, col| {
        let (j, b) = (col / cols, col % cols);
        c[(b * rows + a, j)]
    }))
}

fn assemble_model(
    bundle: &LocalDatasetBundle,
    coll: &LtiCollection,
    basis_x: &SchedulingBasis,
    basis_u: &SchedulingBasis,
    rank: usize,
    lambda: f64,
    kind: ModelKind,
) -> Result<LpvModel> {
    let thetas: Vec<Vec<f64>> = coll.entries.iter().map(|e| e.theta.clone()).collect();
    let (a_list, b_list): (Vec<_>, Vec<_>) = coll.projected().into_iter().unzip();
    let w_a = regress_blocks(&a_list, &thetas, basis_x, rank, lambda)?;
    let w_b = regress_blocks(&b_list, &thetas, basis_u, rank, lambda)?;
    let mut model = LpvModel::new(
        kind,
        w_a,
        w_b,
        Some(coll.pod_transform.clone()),
        basis_x.clone(),
        basis_u.clone(),
    )?;
    let r = coll.pod_transform.ncols();
    model.truncation = Some(TruncationConfig::new(r, r, lambda));
    model.data_scale = bundle
        .entries
        .iter()
        .map(|e| e.dataset.state_scale())
        .fold(0.0, f64::max);
    Ok(model)
}

fn check_bundle(
    bundle: &LocalDatasetBundle,
    basis_x: &SchedulingBasis,
    basis_u: &SchedulingBasis,
) -> Result<()> {
    for e in &bundle.entries {
        if e.theta.len() != basis_x.n_params() || e.theta.len() != basis_u.n_params() {
            return Err(Error::dim(format!(
                "frozen value {:?} does not match the bases' {} parameters",
                e.theta,
                basis_x.n_params()
            )));
        }
    }
    Ok(())
}

/// Full-space LTI per frozen value, projected onto the shared rank-`r` POD
/// basis, then regressed onto the scheduling bases.
pub fn fit_local_fullspace(
    bundle: &LocalDatasetBundle,
    basis_x: &SchedulingBasis,
    basis_u: &SchedulingBasis,
    r: usize,
    lambda: f64,
) -> Result<(LtiCollection, LpvModel)> {
    check_bundle(bundle, basis_x, basis_u)?;
    let w_yr = pod_from_bundle(bundle, r)?;
    let coll = fit_collection(bundle, w_yr, LtiSpace::Full, lambda)?;
    let model = assemble_model(
        bundle,
        &coll,
        basis_x,
        basis_u,
        r,
        lambda,
        ModelKind::LocalFull,
    )?;
    Ok((coll, model))
}

/// Like [`fit_local_fullspace`] but each LTI is identified on the projected
/// data `(W_yrᵀX_i, U_i, W_yrᵀY_i)`; no full-space matrix is ever formed.
pub fn fit_local_latent(
    bundle: &LocalDatasetBundle,
    basis_x: &SchedulingBasis,
    basis_u: &SchedulingBasis,
    r: usize,
    lambda: f64,
) -> Result<(LtiCollection, LpvModel)> {
    check_bundle(bundle, basis_x, basis_u)?;
    let w_yr = pod_from_bundle(bundle, r)?;
    let coll = fit_collection(bundle, w_yr, LtiSpace::Latent, lambda)?;
    let model = assemble_model(
        bundle,
        &coll,
        basis_x,
        basis_u,
        r,
        lambda,
        ModelKind::LocalLatent,
    )?;
    Ok((coll, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::LocalEntry;

    fn frozen_dataset(theta: f64, n: usize) -> SnapshotDataset {
        let x = Mat::from_fn(2, n, |i, k| {
            (((k + 1) * (i + 3) * 7919) % 97) as f64 / 48.0 - 1.0
        });
        let u = Mat::from_fn(1, n, |_, k| ((k * 31) % 13) as f64 / 13.0);
        let y = Mat::from_fn(2, n, |i, k| {
            if i == 0 {
                (0.5 + theta) * x[(0, k)] + 0.2 * x[(1, k)] + u[(0, k)]
            } else {
                -0.1 * x[(0, k)] + 0.7 * x[(1, k)]
            }
        });
        let p = Mat::from_fn(1, n, |_, _| theta);
        SnapshotDataset::new(x, u, y, p, 1.0).unwrap()
    }

    fn bundle(thetas: &[f64]) -> LocalDatasetBundle {
        LocalDatasetBundle::new(
            thetas
                .iter()
                .map(|&t| LocalEntry {
                    theta: vec![t],
                    dataset: frozen_dataset(t, 30),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn affine_family_recovered() {
        let b = bundle(&[0.0, 0.25, 0.5]);
        let basis = SchedulingBasis::univariate(1);
        for fit in [fit_local_fullspace, fit_local_latent] {
            let (_, m) = fit(&b, &basis, &basis, 2, 0.0).unwrap();
            let (wa, _) = m.lifted_weights();
            // A_1 block (p coefficient) is e1·e1ᵀ
            assert!((wa[(0, 2)] - 1.0).abs() < 1e-10);
            assert!(wa[(1, 3)].abs() < 1e-10);
        }
    }

    #[test]
    fn single_point_constant_basis() {
        let b = bundle(&[0.3]);
        let c = SchedulingBasis::constant(1);
        let (coll, m) = fit_local_latent(&b, &c, &c, 2, 0.0).unwrap();
        assert!((&m.w_a - &coll.entries[0].a).norm_l2() < 1e-12);
    }
}
