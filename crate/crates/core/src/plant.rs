//! Parametric advection–diffusion plant on the unit interval.
//!
//! `∂T/∂t = k(θ)·∂²T/∂x² − w·∂T/∂x` with `T(0, t) = u(t)` and `∂T/∂x(1, t) = 0`,
//! discretized by central differences on `n = ⌈1/h⌉ − 1` interior points and
//! integrated with classic RK4. Input and parameters are held constant over
//! every sample interval.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diffusion gain `k(θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GainFunction {
    /// `k(p) = c₀ + c₁p + c₂p² + …` in one parameter.
    Polynomial1p { coefficients: Vec<f64> },
    /// `k(p₁, p₂) = p₁p₂ / (p₁ + p₂ + 1)²`.
    Rational2p,
    /// Sum of monomials `c·θ₁^e₁⋯θₙ^eₙ` over `n_params` parameters.
    Custom {
        n_params: usize,
        terms: Vec<GainTerm>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainTerm {
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

/// What to do when a parameter leaves `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainPolicy {
    #[default]
    Strict,
    Warn,
}

impl Default for GainFunction {
    fn default() -> Self {
        Self::cubic()
    }
}

impl GainFunction {
    /// `0.1 + 0.05p + 0.01p² + 0.03p³`.
    pub fn cubic() -> Self {
        GainFunction::Polynomial1p {
            coefficients: vec![0.1, 0.05, 0.01, 0.03],
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            GainFunction::Polynomial1p { .. } => 1,
            GainFunction::Rational2p => 2,
            GainFunction::Custom { n_params, .. } => *n_params,
        }
    }

    fn value(&self, theta: &[f64]) -> f64 {
        match self {
            GainFunction::Polynomial1p { coefficients } => coefficients
                .iter()
                .rev()
                .fold(0.0, |acc, &c| acc * theta[0] + c),
            GainFunction::Rational2p => {
                let (p1, p2) = (theta[0], theta[1]);
                let d = p1 + p2 + 1.0;
                p1 * p2 / (d * d)
            }
            GainFunction::Custom { terms, .. } => terms
                .iter()
                .map(|t| {
                    t.coefficient
                        * t.exponents
                            .iter()
                            .zip(theta)
                            .map(|(&e, &x)| x.powi(e as i32))
                            .product::<f64>()
                })
                .sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GainFunction::Polynomial1p { coefficients } if coefficients.is_empty() => Err(
                Error::config("polynomial gain needs at least one coefficient"),
            ),
            GainFunction::Custom { n_params, terms } => {
                if *n_params == 0 {
                    return Err(Error::config("custom gain needs at least one parameter"));
                }
                if terms.iter().any(|t| t.exponents.len() != *n_params) {
                    return Err(Error::config(
                        "custom gain term exponent count must equal n_params",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Evaluates `k(θ)`; coordinates outside `[0, 1]` are rejected or logged
/// according to `policy`.
pub fn eval_gain(gain: &GainFunction, theta: &[f64], policy: DomainPolicy) -> Result<f64> {
    if theta.len() != gain.n_params() {
        return Err(Error::dim(format!(
            "gain expects {} parameters, got {}",
            gain.n_params(),
            theta.len()
        )));
    }
    if let Some(bad) = theta.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        let msg = format!("parameter value {bad} outside [0, 1]");
        match policy {
            DomainPolicy::Strict => return Err(Error::Domain(msg)),
            DomainPolicy::Warn => log::warn!("{msg}"),
        }
    }
    let k = gain.value(theta);
    if !(k >= 0.0) {
        return Err(Error::Domain(format!(
            "diffusion gain k({theta:?}) = {k} is negative"
        )));
    }
    Ok(k)
}

/// Finite-difference model of the plant.
#[derive(Clone, Debug)]
pub struct DiffusionPlant {
    h: f64,
    n_states: usize,
    advection: f64,
    gain: GainFunction,
    d1: Mat<f64>,
    d2: Mat<f64>,
    dt: f64,
    sample_time: f64,
    substeps: usize,
    policy: DomainPolicy,
}

/// Simulated run: `states` has one more column than there are inputs.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Mat<f64>,
    pub inputs: Vec<f64>,
    pub params: Mat<f64>,
    pub sample_time: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.states.nrows()
    }
}

/// `⌈1/h⌉ − 1`, treating `1/h` within rounding of an integer as that integer.
pub fn grid_size(h: f64) -> usize {
    let q = 1.0 / h;
    let nearest = q.round();
    let cells = if (q - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        q.ceil()
    };
    (cells as usize).saturating_sub(1)
}

/// First-difference stencil: rows `(−1, 0, 1)`, first row `(0, 1)`, last
/// row `(…, −1, 1)` from the Neumann closure `T_{n+1} = T_n`.
fn first_difference(n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| {
        if i == n - 1 {
            match j {
                _ if j + 1 == i => -1.0,
                _ if j == i => 1.0,
                _ => 0.0,
            }
        } else if j == i + 1 {
            1.0
        } else if j + 1 == i {
            -1.0
        } else {
            0.0
        }
    })
}

/// Second-difference stencil: rows `(1, −2, 1)`, last row `(…, 1, −1)`.
fn second_difference(n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| {
        if j == i {
            if i == n - 1 {
                -1.0
            } else {
                -2.0
            }
        } else if j == i + 1 || j + 1 == i {
            1.0
        } else {
            0.0
        }
    })
}

/// Assembles the finite-difference plant.
pub fn build_plant(
    h: f64,
    advection: f64,
    gain: GainFunction,
    dt: f64,
    sample_time: f64,
) -> Result<DiffusionPlant> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::config(format!(
            "grid spacing h = {h} must lie in (0, 1)"
        )));
    }
    if !(dt > 0.0 && sample_time > 0.0) || dt > sample_time * (1.0 + 1e-12) {
        return Err(Error::config(format!(
            "need 0 < dt <= sample_time, got dt = {dt}, sample_time = {sample_time}"
        )));
    }
    let ratio = sample_time / dt;
    let substeps = ratio.round();
    if (ratio - substeps).abs() > 1e-6 * substeps {
        return Err(Error::config(format!(
            "dt = {dt} does not divide sample_time = {sample_time}"
        )));
    }
    gain.validate()?;
    let n_states = grid_size(h);
    if n_states < 2 {
        return Err(Error::config(format!(
            "h = {h} leaves {n_states} grid states, need at least 2"
        )));
    }
    Ok(DiffusionPlant {
        h,
        n_states,
        advection,
        gain,
        d1: first_difference(n_states),
        d2: second_difference(n_states),
        dt,
        sample_time,
        substeps: substeps as usize,
        policy: DomainPolicy::Strict,
    })
}

impl DiffusionPlant {
    pub fn with_domain_policy(mut self, policy: DomainPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_params(&self) -> usize {
        self.gain.n_params()
    }

    pub fn advection(&self) -> f64 {
        self.advection
    }

    pub fn gain(&self) -> &GainFunction {
        &self.gain
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn d1(&self) -> MatRef<'_, f64> {
        self.d1.as_ref()
    }

    pub fn d2(&self) -> MatRef<'_, f64> {
        self.d2.as_ref()
    }

    pub fn gain_at(&self, theta: &[f64]) -> Result<f64> {
        eval_gain(&self.gain, theta, self.policy)
    }

    /// `A₀ = −(w/2h)·D₁`.
    pub fn a0(&self) -> Mat<f64> {
        let s = -self.advection / (2.0 * self.h);
        Mat::from_fn(self.n_states, self.n_states, |i, j| s * self.d1[(i, j)])
    }

    /// `A(θ) = (k(θ)/h²)·D₂`.
    pub fn a_theta(&self, theta: &[f64]) -> Result<Mat<f64>> {
        let s = self.gain_at(theta)? / (self.h * self.h);
        Ok(Mat::from_fn(self.n_states, self.n_states, |i, j| {
            s * self.d2[(i, j)]
        }))
    }

    /// `B₀ = (w/2h)·e₁`.
    pub fn b0(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n_states];
        b[0] = self.advection / (2.0 * self.h);
        b
    }

    /// `B(θ) = (k(θ)/h²)·e₁`.
    pub fn b_theta(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.n_states];
        b[0] = self.gain_at(theta)? / (self.h * self.h);
        Ok(b)
    }

    /// Grid index nearest to the physical coordinate `x` (grid points sit at
    /// `x = h, 2h, …, n·h`).
    pub fn probe_index(&self, x: f64) -> usize {
        let idx = (x / self.h).round() - 1.0;
        idx.clamp(0.0, (self.n_states - 1) as f64) as usize
    }

    pub fn grid_position(&self, index: usize) -> f64 {
        (index + 1) as f64 * self.h
    }

    /// `(A₀ + A(θ))·T + (B₀ + B(θ))·u`.
    pub fn rhs(&self, state: &[f64], u: f64, theta: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.n_states {
            return Err(Error::dim(format!(
                "state has {} entries, plant has {} states",
                state.len(),
                self.n_states
            )));
        }
        let k = self.gain_at(theta)?;
        let mut out = vec![0.0; self.n_states];
        self.rhs_into(k, state, u, &mut out);
        Ok(out)
    }

    // Tridiagonal evaluation of the stencil rows.
    fn rhs_into(&self, k: f64, t: &[f64], u: f64, out: &mut [f64]) {
        let n = self.n_states;
        let c = k / (self.h * self.h);
        let a = self.advection / (2.0 * self.h);
        for i in 0..n - 1 {
            let left = if i == 0 { u } else { t[i - 1] };
            let right = t[i + 1];
            out[i] = c * (right - 2.0 * t[i] + left) - a * (right - left);
        }
        let d = t[n - 1] - t[n - 2];
        out[n - 1] = -c * d - a * d;
    }

    fn rk4_sample(&self, k: f64, u: f64, x: &mut [f64], scratch: &mut Rk4Scratch) {
        let dt = self.dt;
        let Rk4Scratch {
            k1,
            k2,
            k3,
            k4,
            tmp,
        } = scratch;
        for _ in 0..self.substeps {
            self.rhs_into(k, x, u, k1);
            for ((t, &xi), &d) in tmp.iter_mut().zip(x.iter()).zip(k1.iter()) {
                *t = xi + 0.5 * dt * d;
            }
            self.rhs_into(k, tmp, u, k2);
            for ((t, &xi), &d) in tmp.iter_mut().zip(x.iter()).zip(k2.iter()) {
                *t = xi + 0.5 * dt * d;
            }
            self.rhs_into(k, tmp, u, k3);
            for ((t, &xi), &d) in tmp.iter_mut().zip(x.iter()).zip(k3.iter()) {
                *t = xi + dt * d;
            }
            self.rhs_into(k, tmp, u, k4);
            for i in 0..x.len() {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }

    /// Advances one sample interval from `state` with `u` and `θ` held.
    pub fn step(&self, state: &[f64], u: f64, theta: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.n_states {
            return Err(Error::dim("state length does not match the plant"));
        }
        let k = self.gain_at(theta)?;
        let mut x = state.to_vec();
        let mut scratch = Rk4Scratch::new(self.n_states);
        self.rk4_sample(k, u, &mut x, &mut scratch);
        Ok(x)
    }

    /// Exact one-sample transition `x⁺ = A_d·x + B_d·u` for frozen `θ`.
    pub fn discrete_pair(&self, theta: &[f64]) -> Result<(Mat<f64>, Vec<f64>)> {
        let n = self.n_states;
        let k = self.gain_at(theta)?;
        let mut scratch = Rk4Scratch::new(n);
        let mut ad = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            let mut x = vec![0.0; n];
            x[j] = 1.0;
            self.rk4_sample(k, 0.0, &mut x, &mut scratch);
            for i in 0..n {
                ad[(i, j)] = x[i];
            }
        }
        let mut bd = vec![0.0; n];
        self.rk4_sample(k, 1.0, &mut bd, &mut scratch);
        Ok((ad, bd))
    }

    /// Simulates from `x0` under sample-held inputs and parameters.
    ///
    /// `params` is `n_params × inputs.len()`; column `k` is the parameter
    /// vector for sample `k`.
    pub fn simulate(
        &self,
        x0: &[f64],
        inputs: &[f64],
        params: MatRef<'_, f64>,
    ) -> Result<Trajectory> {
        let n = self.n_states;
        if x0.len() != n {
            return Err(Error::dim(format!(
                "x0 has {} entries, plant has {n} states",
                x0.len()
            )));
        }
        if params.nrows() != self.n_params() || params.ncols() != inputs.len() {
            return Err(Error::dim(format!(
                "params must be {}×{}, got {}×{}",
                self.n_params(),
                inputs.len(),
                params.nrows(),
                params.ncols()
            )));
        }
        let steps = inputs.len();
        let mut states = Mat::<f64>::zeros(n, steps + 1);
        let mut x = x0.to_vec();
        states
            .col_mut(0)
            .iter_mut()
            .zip(&x)
            .for_each(|(d, &s)| *d = s);
        let mut scratch = Rk4Scratch::new(n);
        let mut theta = vec![0.0; self.n_params()];
        let mut cached: Option<(Vec<f64>, f64)> = None;
        for step in 0..steps {
            for (t, &p) in theta.iter_mut().zip(params.col(step).iter()) {
                *t = p;
            }
            let k = match &cached {
                Some((th, k)) if *th == theta => *k,
                _ => {
                    let k = self.gain_at(&theta)?;
                    cached = Some((theta.clone(), k));
                    k
                }
            };
            self.rk4_sample(k, inputs[step], &mut x, &mut scratch);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    context: format!(" (plant simulation, θ = {theta:?})"),
                });
            }
            states
                .col_mut(step + 1)
                .iter_mut()
                .zip(&x)
                .for_each(|(d, &s)| *d = s);
        }
        Ok(Trajectory {
            states,
            inputs: inputs.to_vec(),
            params: params.to_owned(),
            sample_time: self.sample_time,
        })
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn plant() -> DiffusionPlant {
        build_plant(0.02, 0.1, GainFunction::cubic(), 1e-3, 1e-3).unwrap()
    }

    #[test]
    fn gain_values() {
        let g = GainFunction::cubic();
        assert_abs_diff_eq!(
            eval_gain(&g, &[0.0], DomainPolicy::Strict).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            eval_gain(&g, &[1.0], DomainPolicy::Strict).unwrap(),
            0.19,
            epsilon = 1e-15
        );
        let r = GainFunction::Rational2p;
        assert_eq!(
            eval_gain(&r, &[0.0, 0.7], DomainPolicy::Strict).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            eval_gain(&r, &[1.0, 1.0], DomainPolicy::Strict).unwrap(),
            1.0 / 9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gain_domain_policy() {
        let g = GainFunction::cubic();
        assert!(matches!(
            eval_gain(&g, &[1.5], DomainPolicy::Strict),
            Err(Error::Domain(_))
        ));
        assert!(eval_gain(&g, &[1.5], DomainPolicy::Warn).is_ok());
        assert!(matches!(
            eval_gain(&g, &[0.5, 0.5], DomainPolicy::Strict),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn custom_gain_matches_polynomial() {
        let custom = GainFunction::Custom {
            n_params: 1,
            terms: [0.1, 0.05, 0.01, 0.03]
                .iter()
                .enumerate()
                .map(|(e, &c)| GainTerm {
                    coefficient: c,
                    exponents: vec![e as u32],
                })
                .collect(),
        };
        for p in [0.0, 0.3, 0.77, 1.0] {
            let a = eval_gain(&custom, &[p], DomainPolicy::Strict).unwrap();
            let b = eval_gain(&GainFunction::cubic(), &[p], DomainPolicy::Strict).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(grid_size(0.02), 49);
        assert_eq!(grid_size(0.01), 99);
        assert_eq!(grid_size(0.005), 199);
        assert_eq!(grid_size(0.3), 3);
        assert!(matches!(
            build_plant(0.6, 0.1, GainFunction::cubic(), 1e-3, 1e-3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stencil_rows() {
        let p = plant();
        let n = p.n_states();
        let d2 = p.d2();
        assert_eq!((d2[(0, 0)], d2[(0, 1)], d2[(0, 2)]), (-2.0, 1.0, 0.0));
        assert_eq!((d2[(n - 1, n - 2)], d2[(n - 1, n - 1)]), (1.0, -1.0));
        let d1 = p.d1();
        assert_eq!((d1[(0, 0)], d1[(0, 1)]), (0.0, 1.0));
        assert_eq!((d1[(5, 4)], d1[(5, 5)], d1[(5, 6)]), (-1.0, 0.0, 1.0));
        assert_eq!((d1[(n - 1, n - 2)], d1[(n - 1, n - 1)]), (-1.0, 1.0));
    }

    #[test]
    fn rhs_matches_dense_assembly() {
        let p = plant();
        let n = p.n_states();
        let theta = [0.37];
        let t: Vec<f64> = (0..n)
            .map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64)
            .collect();
        let u = 1.3;
        let a = &p.a0() + &p.a_theta(&theta).unwrap();
        let b0 = p.b0();
        let bt = p.b_theta(&theta).unwrap();
        let fast = p.rhs(&t, u, &theta).unwrap();
        for i in 0..n {
            let dense: f64 = (0..n).map(|j| a[(i, j)] * t[j]).sum::<f64>() + (b0[i] + bt[i]) * u;
            assert_abs_diff_eq!(fast[i], dense, epsilon = 1e-9 * dense.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_state_is_steady() {
        let p = plant();
        let t = vec![2.5; p.n_states()];
        for theta in [0.0, 0.4, 1.0] {
            let d = p.rhs(&t, 2.5, &[theta]).unwrap();
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
        let zero = p.rhs(&vec![0.0; p.n_states()], 0.0, &[0.5]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_stencil_by_hand() {
        let p = plant();
        let n = p.n_states();
        let mut t = vec![0.0; n];
        t[10] = 1.0;
        let theta = [0.5];
        let k = p.gain_at(&theta).unwrap();
        let (h, w) = (p.h(), p.advection());
        let d = p.rhs(&t, 0.0, &theta).unwrap();
        // row 9 sees T_{i+1} = 1, row 11 sees T_{i-1} = 1
        assert_abs_diff_eq!(d[10], -2.0 * k / (h * h), epsilon = 1e-9);
        assert_abs_diff_eq!(d[9], k / (h * h) - w / (2.0 * h), epsilon = 1e-9);
        assert_abs_diff_eq!(d[11], k / (h * h) + w / (2.0 * h), epsilon = 1e-9);
        assert_eq!(d[12], 0.0);
    }

    #[test]
    fn zero_input_zero_trajectory() {
        let p = plant();
        let params = Mat::from_fn(1, 50, |_, _| 0.3);
        let tr = p
            .simulate(&vec![0.0; p.n_states()], &[0.0; 50], params.as_ref())
            .unwrap();
        assert_eq!(tr.states.norm_l2(), 0.0);
        assert_eq!(tr.states.ncols(), 51);
    }

    #[test]
    fn probe_index_maps_to_nearest_point() {
        let p = plant();
        assert_eq!(p.probe_index(0.98), 48);
        assert_eq!(p.probe_index(0.02), 0);
        assert_eq!(p.probe_index(0.5), 24);
        assert_abs_diff_eq!(p.grid_position(48), 0.98, epsilon = 1e-12);
    }

    #[test]
    fn dt_must_divide_sample_time() {
        assert!(build_plant(0.02, 0.1, GainFunction::cubic(), 3e-3, 1e-2).is_err());
        let p = build_plant(0.01, 0.1, GainFunction::Rational2p, 2.5e-4, 1e-2).unwrap();
        assert_eq!(p.substeps(), 40);
    }
}
