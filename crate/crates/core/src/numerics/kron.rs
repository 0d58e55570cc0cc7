use faer::{Mat, MatRef};

/// Kronecker product of two vectors: block `i` of the result is `a[i] * b`.
pub fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        out.extend(b.iter().map(|&bj| ai * bj));
    }
    out
}

/// Dense Kronecker product of two matrices.
///
/// Only meant for small operands; the fitting code never forms `I ⊗ T`
/// style products explicitly.
pub fn kron_mat(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let (p, q) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * p, a.ncols() * q, |i, j| {
        a[(i / p, j / q)] * b[(i % p, j % q)]
    })
}
