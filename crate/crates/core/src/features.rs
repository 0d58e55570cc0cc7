//! Scheduling bases and Kronecker feature matrices.
//!
//! Feature counts include the constant: the cubic basis `{1, p, p², p³}`
//! has four features. Monomials are kept in graded-lexicographic order, which
//! fixes the block layout `W_A = (A_0 A_1 … )` of every weight matrix.

use std::fmt;

use faer::{Mat, MatMut, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::SnapshotDataset;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct SchedulingBasis {
    n_params: usize,
    monomials: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisRepr {
    n_params: usize,
    monomials: Vec<Vec<u32>>,
}

impl TryFrom<BasisRepr> for SchedulingBasis {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        SchedulingBasis::new(r.n_params, r.monomials)
    }
}

impl From<SchedulingBasis> for BasisRepr {
    fn from(b: SchedulingBasis) -> Self {
        BasisRepr {
            n_params: b.n_params,
            monomials: b.monomials,
        }
    }
}

impl SchedulingBasis {
    /// Validates the constant-first, duplicate-free exponent list.
    pub fn new(n_params: usize, monomials: Vec<Vec<u32>>) -> Result<Self> {
        if monomials.is_empty() {
            return Err(Error::config("basis needs at least the constant"));
        }
        if let Some(m) = monomials.iter().find(|m| m.len() != n_params) {
            return Err(Error::config(format!(
                "exponent tuple {m:?} does not have {n_params} entries"
            )));
        }
        if monomials[0].iter().any(|&e| e != 0) {
            return Err(Error::config("first basis entry must be the constant"));
        }
        for (i, m) in monomials.iter().enumerate() {
            if monomials[..i].contains(m) {
                return Err(Error::config(format!("duplicate monomial {m:?}")));
            }
        }
        Ok(Self {
            n_params,
            monomials,
        })
    }

    /// `φ = [1]`; turns every LPV fit into its LTI counterpart.
    pub fn constant(n_params: usize) -> Self {
        Self {
            n_params,
            monomials: vec![vec![0; n_params]],
        }
    }

    /// `{1, p, …, p^degree}` for a single parameter.
    pub fn univariate(degree: u32) -> Self {
        basis_total_degree(1, degree)
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Number of features including the constant.
    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    pub fn max_degree(&self) -> u32 {
        self.monomials
            .iter()
            .map(|m| m.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(theta, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::dim(format!(
                "basis expects {} parameters, got {}",
                self.n_params,
                theta.len()
            )));
        }
        for (o, m) in out.iter_mut().zip(&self.monomials) {
            *o = m
                .iter()
                .zip(theta)
                .fold(1.0, |acc, (&e, &t)| acc * t.powi(e as i32));
        }
        Ok(())
    }

    /// `P[:, k] = φ(θ[:, k])` for a parameter trajectory.
    pub fn eval_columns(&self, params: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if params.nrows() != self.n_params {
            return Err(Error::dim(format!(
                "basis expects {} parameter rows, got {}",
                self.n_params,
                params.nrows()
            )));
        }
        let mut out = Mat::zeros(self.len(), params.ncols());
        let mut theta = vec![0.0; self.n_params];
        let mut phi = vec![0.0; self.len()];
        for k in 0..params.ncols() {
            for (t, &v) in theta.iter_mut().zip(params.col(k).iter()) {
                *t = v;
            }
            self.eval_into(&theta, &mut phi)?;
            for (i, &v) in phi.iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        Ok(out)
    }
}

impl fmt::Display for SchedulingBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .monomials
            .iter()
            .map(|m| {
                let parts: Vec<String> = m
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| {
                        let var = if self.n_params == 1 {
                            "p".to_string()
                        } else {
                            format!("p{}", i + 1)
                        };
                        if e == 1 {
                            var
                        } else {
                            format!("{var}^{e}")
                        }
                    })
                    .collect();
                if parts.is_empty() {
                    "1".into()
                } else {
                    parts.join("*")
                }
            })
            .collect();
        write!(f, "{{{}}}", terms.join(", "))
    }
}

/// `{1, p, p², p³}`, matching the cubic plant gain.
pub fn basis_exact_1p() -> SchedulingBasis {
    SchedulingBasis::univariate(3)
}

/// `{1, p, p²}`.
pub fn basis_under_1p() -> SchedulingBasis {
    SchedulingBasis::univariate(2)
}

/// `{1, p, p², p³, p⁴}`.
pub fn basis_over_1p() -> SchedulingBasis {
    SchedulingBasis::univariate(4)
}

/// All monomials of total degree ≤ `degree`, graded-lex, constant first.
pub fn basis_total_degree(n_params: usize, degree: u32) -> SchedulingBasis {
    let mut monomials = Vec::new();
    for d in 0..=degree {
        let mut current = vec![0u32; n_params];
        push_compositions(&mut monomials, &mut current, 0, d);
    }
    SchedulingBasis {
        n_params,
        monomials,
    }
}

// exponents of fixed total degree, first coordinate descending
fn push_compositions(out: &mut Vec<Vec<u32>>, current: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 >= current.len() {
        if let Some(last) = current.last_mut() {
            *last = remaining;
            out.push(current.to_vec());
        } else if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_compositions(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

pub fn eval_basis(basis: &SchedulingBasis, theta: &[f64]) -> Result<Vec<f64>> {
    basis.eval(theta)
}

/// Named presets accepted by configs and the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    #[default]
    Exact,
    Under,
    Over,
    Constant {
        n_params: usize,
    },
    TotalDegree {
        n_params: usize,
        degree: u32,
    },
    Custom {
        basis: SchedulingBasis,
    },
}

impl BasisSpec {
    pub fn build(&self) -> SchedulingBasis {
        match self {
            BasisSpec::Exact => basis_exact_1p(),
            BasisSpec::Under => basis_under_1p(),
            BasisSpec::Over => basis_over_1p(),
            BasisSpec::Constant { n_params } => SchedulingBasis::constant(*n_params),
            BasisSpec::TotalDegree { n_params, degree } => basis_total_degree(*n_params, *degree),
            BasisSpec::Custom { basis } => basis.clone(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            BasisSpec::Exact => "exact".into(),
            BasisSpec::Under => "under".into(),
            BasisSpec::Over => "over".into(),
            BasisSpec::Constant { .. } => "constant".into(),
            BasisSpec::TotalDegree { degree, .. } => format!("degree-{degree}"),
            BasisSpec::Custom { .. } => "custom".into(),
        }
    }
}

/// Dense feature matrices of one dataset.
///
/// Only needed by small problems and tests; the fits stream the same rows
/// through [`fill_feature_rows`] instead.
#[derive(Clone, Debug)]
pub struct FeatureMatrices {
    pub p_x: Mat<f64>,
    pub p_u: Mat<f64>,
    pub x_p: Mat<f64>,
    pub u_p: Mat<f64>,
}

pub fn assemble_features(
    ds: &SnapshotDataset,
    basis_x: &SchedulingBasis,
    basis_u: &SchedulingBasis,
) -> Result<FeatureMatrices> {
    let p_x = basis_x.eval_columns(ds.p.as_ref())?;
    let p_u = basis_u.eval_columns(ds.p.as_ref())?;
    let x_p = kron_columns(p_x.as_ref(), ds.x.as_ref());
    let u_p = kron_columns(p_u.as_ref(), ds.u.as_ref());
    Ok(FeatureMatrices { p_x, p_u, x_p, u_p })
}

/// Column-wise Kronecker (Khatri–Rao) product: column `k` is `a[:,k] ⊗ b[:,k]`.
pub fn kron_columns(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let q = b.nrows();
    Mat::from_fn(a.nrows() * q, a.ncols(), |i, k| {
        a[(i / q, k)] * b[(i % q, k)]
    })
}

/// Evaluated bases of a dataset, shared by every fit on it.
#[derive(Clone, Debug)]
pub struct FeatureSource<'a> {
    pub dataset: &'a SnapshotDataset,
    pub p_x: Mat<f64>,
    pub p_u: Mat<f64>,
}

impl<'a> FeatureSource<'a> {
    pub fn new(
        dataset: &'a SnapshotDataset,
        basis_x: &SchedulingBasis,
        basis_u: &SchedulingBasis,
    ) -> Result<Self> {
        if basis_x.n_params() != dataset.n_params() || basis_u.n_params() != dataset.n_params() {
            return Err(Error::dim(format!(
                "bases expect {}/{} parameters but the dataset has {}",
                basis_x.n_params(),
                basis_u.n_params(),
                dataset.n_params()
            )));
        }
        Ok(Self {
            dataset,
            p_x: basis_x.eval_columns(dataset.p.as_ref())?,
            p_u: basis_u.eval_columns(dataset.p.as_ref())?,
        })
    }

    pub fn x_rows(&self) -> usize {
        self.p_x.nrows() * self.dataset.n_states()
    }

    pub fn u_rows(&self) -> usize {
        self.p_u.nrows() * self.dataset.n_inputs()
    }
}

/// Writes samples `start..start + block.nrows()` as rows
/// `[X_P[:,k]ᵀ U_P[:,k]ᵀ Y[:,k]ᵀ]`, the transposed layout consumed by
/// streaming Procrustes factorization.
pub fn fill_feature_rows(src: &FeatureSource<'_>, start: usize, mut block: MatMut<'_, f64>) {
    let ds = src.dataset;
    let (ns, nu) = (ds.n_states(), ds.n_inputs());
    let (fx, fu) = (src.p_x.nrows(), src.p_u.nrows());
    let u_off = fx * ns;
    let y_off = u_off + fu * nu;
    for r in 0..block.nrows() {
        let k = start + r;
        for i in 0..fx {
            let phi = src.p_x[(i, k)];
            for s in 0..ns {
                block[(r, i * ns + s)] = phi * ds.x[(s, k)];
            }
        }
        for i in 0..fu {
            let psi = src.p_u[(i, k)];
            for s in 0..nu {
                block[(r, u_off + i * nu + s)] = psi * ds.u[(s, k)];
            }
        }
        for s in 0..ns {
            block[(r, y_off + s)] = ds.y[(s, k)];
        }
    }
}
