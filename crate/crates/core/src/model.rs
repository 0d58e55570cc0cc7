//! Identified LPV models and their simulation.
//!
//! One type covers every fitted model: `x[k+1] = W_A(φ(θ)⊗x) + W_B(ψ(θ)⊗u)`
//! in full coordinates, or the same map on `z = W_yrᵀx` when a POD
//! transform is present. LTI models are the constant-basis special case.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SchedulingBasis;
use crate::numerics::TruncationConfig;

/// Instability threshold relative to the training data scale.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dmdc,
    Global,
    FullLeastSquares,
    LocalFull,
    LocalLatent,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Dmdc => "dmdc",
            ModelKind::Global => "global",
            ModelKind::FullLeastSquares => "full-least-squares",
            ModelKind::LocalFull => "local-full",
            ModelKind::LocalLatent => "local-latent",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "dmdc" => ModelKind::Dmdc,
            "global" => ModelKind::Global,
            "full-least-squares" | "full" => ModelKind::FullLeastSquares,
            "local-full" => ModelKind::LocalFull,
            "local-latent" => ModelKind::LocalLatent,
            other => return Err(Error::config(format!("unknown model kind '{other}'"))),
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug)]
pub struct LpvModel {
    pub kind: ModelKind,
    /// `r × (N_φ·r)`, blocks `(Ã_0 Ã_1 …)` in basis order.
    pub w_a: Mat<f64>,
    /// `r × (N_ψ·n_u)`.
    pub w_b: Mat<f64>,
    /// `W_yr` (`n_s × r`); `None` for full-space models.
    pub pod_transform: Option<Mat<f64>>,
    pub basis_x: SchedulingBasis,
    pub basis_u: SchedulingBasis,
    pub truncation: Option<TruncationConfig>,
    /// Largest absolute training state value.
    pub data_scale: f64,
}

/// Result of a free-run simulation.
#[derive(Clone, Debug)]
pub struct FreeRun {
    /// Full-space states, `n_s × (steps + 1)` or fewer if the run diverged.
    pub states: Mat<f64>,
    /// Step at which the state left the admissible range.
    pub diverged_at: Option<usize>,
}

impl LpvModel {
    pub fn new(
        kind: ModelKind,
        w_a: Mat<f64>,
        w_b: Mat<f64>,
        pod_transform: Option<Mat<f64>>,
        basis_x: SchedulingBasis,
        basis_u: SchedulingBasis,
    ) -> Result<Self> {
        let r = w_a.nrows();
        if w_a.ncols() != basis_x.len() * r {
            return Err(Error::dim(format!(
                "W_A is {}×{} but the state basis has {} features",
                r,
                w_a.ncols(),
                basis_x.len()
            )));
        }
        if w_b.nrows() != r || w_b.ncols() % basis_u.len() != 0 {
            return Err(Error::dim(format!(
                "W_B is {}×{}, incompatible with {} latent states and {} input features",
                w_b.nrows(),
                w_b.ncols(),
                r,
                basis_u.len()
            )));
        }
        if let Some(w) = &pod_transform {
            if w.ncols() != r {
                return Err(Error::dim(format!(
                    "POD transform has {} columns but the model has {} latent states",
                    w.ncols(),
                    r
                )));
            }
        }
        if basis_x.n_params() != basis_u.n_params() {
            return Err(Error::dim(
                "state and input bases disagree on the parameter count",
            ));
        }
        Ok(Self {
            kind,
            w_a,
            w_b,
            pod_transform,
            basis_x,
            basis_u,
            truncation: None,
            data_scale: 0.0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.w_a.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.pod_transform
            .as_ref()
            .map_or(self.latent_dim(), |w| w.nrows())
    }

    pub fn n_inputs(&self) -> usize {
        self.w_b.ncols() / self.basis_u.len()
    }

    pub fn n_params(&self) -> usize {
        self.basis_x.n_params()
    }

    pub fn is_reduced(&self) -> bool {
        self.pod_transform.is_some()
    }

    pub fn a_block(&self, i: usize) -> MatRef<'_, f64> {
        let r = self.latent_dim();
        self.w_a.as_ref().subcols(i * r, r)
    }

    pub fn b_block(&self, i: usize) -> MatRef<'_, f64> {
        let nu = self.n_inputs();
        self.w_b.as_ref().subcols(i * nu, nu)
    }

    /// Latent `(A(θ), B(θ)) = (Σ φᵢ(θ)Ãᵢ, Σ ψᵢ(θ)B̃ᵢ)`.
    pub fn frozen_at(&self, theta: &[f64]) -> Result<(Mat<f64>, Mat<f64>)> {
        let phi = self.basis_x.eval(theta)?;
        let psi = self.basis_u.eval(theta)?;
        let mut a = Mat::<f64>::zeros(self.latent_dim(), self.latent_dim());
        for (i, &c) in phi.iter().enumerate() {
            a += faer::Scale(c) * self.a_block(i);
        }
        let mut b = Mat::<f64>::zeros(self.latent_dim(), self.n_inputs());
        for (i, &c) in psi.iter().enumerate() {
            b += faer::Scale(c) * self.b_block(i);
        }
        Ok((a, b))
    }

    /// `z = W_yrᵀx` (identity for full-space models).
    pub fn encode(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        match &self.pod_transform {
            Some(w) => w.transpose() * x,
            None => x.to_owned(),
        }
    }

    /// `x = W_yr·z`.
    pub fn decode(&self, z: MatRef<'_, f64>) -> Mat<f64> {
        match &self.pod_transform {
            Some(w) => w * z,
            None => z.to_owned(),
        }
    }

    /// One latent step for every column of `(z, u, p)`.
    pub fn advance(
        &self,
        z: MatRef<'_, f64>,
        u: MatRef<'_, f64>,
        p: MatRef<'_, f64>,
    ) -> Result<Mat<f64>> {
        let n = z.ncols();
        if z.nrows() != self.latent_dim()
            || u.nrows() != self.n_inputs()
            || u.ncols() != n
            || p.ncols() != n
        {
            return Err(Error::dim(format!(
                "advance got z {}×{}, u {}×{}, p {}×{} for a model with r = {}, n_u = {}",
                z.nrows(),
                z.ncols(),
                u.nrows(),
                u.ncols(),
                p.nrows(),
                p.ncols(),
                self.latent_dim(),
                self.n_inputs()
            )));
        }
        let phi = self.basis_x.eval_columns(p)?;
        let psi = self.basis_u.eval_columns(p)?;
        let mut out = Mat::<f64>::zeros(self.latent_dim(), n);
        accumulate_scaled(&mut out, self.w_a.as_ref(), z, phi.as_ref());
        accumulate_scaled(&mut out, self.w_b.as_ref(), u, psi.as_ref());
        Ok(out)
    }

    /// Teacher-forced full-space prediction of `Y` from `(X, U, P)`.
    pub fn predict_next(
        &self,
        x: MatRef<'_, f64>,
        u: MatRef<'_, f64>,
        p: MatRef<'_, f64>,
    ) -> Result<Mat<f64>> {
        if x.nrows() != self.n_states() {
            return Err(Error::dim(format!(
                "model has {} states, data has {}",
                self.n_states(),
                x.nrows()
            )));
        }
        let z = self.encode(x);
        let next = self.advance(z.as_ref(), u, p)?;
        Ok(self.decode(next.as_ref()))
    }

    /// Free-run simulation from `x0` under `(u, p)`, halted once
    /// `‖x‖_∞ > threshold` or a non-finite value appears.
    pub fn simulate(
        &self,
        x0: &[f64],
        u: MatRef<'_, f64>,
        p: MatRef<'_, f64>,
        threshold: f64,
    ) -> Result<FreeRun> {
        if x0.len() != self.n_states() {
            return Err(Error::dim(format!(
                "initial state has {} entries, model has {} states",
                x0.len(),
                self.n_states()
            )));
        }
        if u.ncols() != p.ncols() || u.nrows() != self.n_inputs() || p.nrows() != self.n_params() {
            return Err(Error::dim(
                "input and parameter trajectories do not conform",
            ));
        }
        let steps = u.ncols();
        let ns = self.n_states();
        let mut states = Mat::<f64>::zeros(ns, steps + 1);
        for (i, &v) in x0.iter().enumerate() {
            states[(i, 0)] = v;
        }
        let x0m = Mat::from_fn(ns, 1, |i, _| x0[i]);
        let mut z = self.encode(x0m.as_ref());
        for k in 0..steps {
            let next = self.advance(z.as_ref(), u.subcols(k, 1), p.subcols(k, 1))?;
            let x = self.decode(next.as_ref());
            let bad = x
                .col(0)
                .iter()
                .any(|v| !v.is_finite() || v.abs() > threshold);
            if bad {
                log::info!("free run left the admissible range at step {}", k + 1);
                return Ok(FreeRun {
                    states: states.subcols(0, k + 1).to_owned(),
                    diverged_at: Some(k + 1),
                });
            }
            states.as_mut().subcols_mut(k + 1, 1).copy_from(&x);
            z = next;
        }
        Ok(FreeRun {
            states,
            diverged_at: None,
        })
    }

    /// `DIVERGENCE_FACTOR · data_scale`, or infinity if no scale is known.
    pub fn divergence_threshold(&self) -> f64 {
        if self.data_scale > 0.0 {
            DIVERGENCE_FACTOR * self.data_scale
        } else {
            f64::INFINITY
        }
    }

    /// Full-space weights `W_yr·Ãᵢ·W_yrᵀ` and `W_yr·B̃ᵢ`.
    pub fn lifted_weights(&self) -> (Mat<f64>, Mat<f64>) {
        let Some(w) = &self.pod_transform else {
            return (self.w_a.clone(), self.w_b.clone());
        };
        let ns = w.nrows();
        let p = self.basis_x.len();
        let mut wa = Mat::<f64>::zeros(ns, p * ns);
        for i in 0..p {
            let blk = w * self.a_block(i) * w.transpose();
            wa.as_mut().subcols_mut(i * ns, ns).copy_from(&blk);
        }
        (wa, w * &self.w_b)
    }
}

// out += Σᵢ (Wᵢ·v) ∘ coeffᵢ, with Wᵢ the i-th column block of `w` and the
// coefficient row scaling columns
fn accumulate_scaled(
    out: &mut Mat<f64>,
    w: MatRef<'_, f64>,
    v: MatRef<'_, f64>,
    coeff: MatRef<'_, f64>,
) {
    let q = v.nrows();
    if q == 0 {
        return;
    }
    for i in 0..coeff.nrows() {
        let prod = w.subcols(i * q, q) * v;
        for k in 0..v.ncols() {
            let c = coeff[(i, k)];
            if c == 0.0 {
                continue;
            }
            for (o, &t) in out.col_mut(k).iter_mut().zip(prod.col(k).iter()) {
                *o += c * t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{basis_exact_1p, SchedulingBasis};
    use crate::numerics::kron_vec;

    fn scalar_model(a: f64, b: f64) -> LpvModel {
        LpvModel::new(
            ModelKind::Dmdc,
            Mat::from_fn(1, 1, |_, _| a),
            Mat::from_fn(1, 1, |_, _| b),
            None,
            SchedulingBasis::constant(1),
            SchedulingBasis::constant(1),
        )
        .unwrap()
    }

    #[test]
    fn geometric_recursion() {
        let m = scalar_model(0.5, 1.0);
        let u = Mat::from_fn(1, 4, |_, _| 1.0);
        let p = Mat::<f64>::zeros(1, 4);
        let run = m
            .simulate(&[0.0], u.as_ref(), p.as_ref(), f64::INFINITY)
            .unwrap();
        let got: Vec<f64> = run.states.row(0).iter().copied().collect();
        assert_eq!(got, vec![0.0, 1.0, 1.5, 1.75, 1.875]);
    }

    #[test]
    fn zero_weights_hold_nothing() {
        let m = scalar_model(0.0, 0.0);
        let u = Mat::from_fn(1, 3, |_, k| k as f64);
        let p = Mat::<f64>::zeros(1, 3);
        let run = m
            .simulate(&[2.0], u.as_ref(), p.as_ref(), f64::INFINITY)
            .unwrap();
        assert_eq!(run.states[(0, 0)], 2.0);
        assert!(run.states.row(0).iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_is_flagged() {
        let m = scalar_model(10.0, 0.0);
        let u = Mat::<f64>::zeros(1, 20);
        let p = Mat::<f64>::zeros(1, 20);
        let run = m.simulate(&[1.0], u.as_ref(), p.as_ref(), 1e3).unwrap();
        assert_eq!(run.diverged_at, Some(4));
        assert_eq!(run.states.ncols(), 4);
    }

    #[test]
    fn block_contraction_matches_kronecker() {
        let b = basis_exact_1p();
        let r = 3;
        let w_a = Mat::from_fn(r, 4 * r, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1 - 0.2);
        let w_b = Mat::from_fn(r, 4, |i, j| (i + j) as f64 * 0.05);
        let m = LpvModel::new(
            ModelKind::Global,
            w_a.clone(),
            w_b,
            None,
            b.clone(),
            b.clone(),
        )
        .unwrap();
        let z = [0.3, -1.2, 0.7];
        let theta = [0.6];
        let phi = b.eval(&theta).unwrap();
        let feat = kron_vec(&phi, &z);
        let dense = &w_a * Mat::from_fn(feat.len(), 1, |i, _| feat[i]);
        let (a, _) = m.frozen_at(&theta).unwrap();
        let blockwise = &a * Mat::from_fn(r, 1, |i, _| z[i]);
        assert!((&dense - &blockwise).norm_l2() < 1e-12);
    }
}
