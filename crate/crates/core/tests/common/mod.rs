//! Reference implementations used as test oracles. They avoid the crate's
//! SVD route on purpose: dense normal equations, Gaussian elimination and
//! explicit simulation loops.
#![allow(dead_code)]

use dmdlpv::excitation::SnapshotDataset;
use faer::Mat;

/// SplitMix64 stream for test data.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[-1, 1)`.
    pub fn sym(&mut self) -> f64 {
        2.0 * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64) - 1.0
    }

    pub fn mat(&mut self, r: usize, c: usize) -> Mat<f64> {
        Mat::from_fn(r, c, |_, _| self.sym())
    }
}

/// Solves `M·X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(m: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let n = m.nrows();
    assert_eq!(m.ncols(), n);
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)]).collect())
        .collect();
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..b.ncols()).map(|j| b[(i, j)]).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        x.swap(col, piv);
        let d = a[col][col];
        assert!(d != 0.0, "singular system in oracle");
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[i][col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[i][j] -= f * a[col][j];
            }
            for j in 0..x[i].len() {
                x[i][j] -= f * x[col][j];
            }
        }
    }
    Mat::from_fn(n, b.ncols(), |i, j| x[i][j] / a[i][i])
}

/// `G = Y·Fᵀ·(F·Fᵀ + λ²·I)⁻¹` from the normal equations.
pub fn tikhonov_oracle(y: &Mat<f64>, f: &Mat<f64>, lambda: f64) -> Mat<f64> {
    let n = f.nrows();
    let mut gram = f * f.transpose();
    for i in 0..n {
        gram[(i, i)] += lambda * lambda;
    }
    // G·gram = Y·Fᵀ  ⇔  gram·Gᵀ = F·Yᵀ (gram symmetric)
    let rhs = f * y.transpose();
    gauss_solve(&gram, &rhs).transpose().to_owned()
}

pub fn rel_fro(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_l2() / b.norm_l2()
}

/// Simulates `x⁺ = A·x + B·u` and returns the snapshot dataset.
pub fn lti_dataset(a: &Mat<f64>, b: &Mat<f64>, x0: &[f64], u: &Mat<f64>) -> SnapshotDataset {
    let n = a.nrows();
    let steps = u.ncols();
    let mut states = Mat::<f64>::zeros(n, steps + 1);
    for (i, v) in x0.iter().enumerate() {
        states[(i, 0)] = *v;
    }
    for k in 0..steps {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[(i, j)] * states[(j, k)];
            }
            for j in 0..u.nrows() {
                acc += b[(i, j)] * u[(j, k)];
            }
            states[(i, k + 1)] = acc;
        }
    }
    SnapshotDataset::new(
        states.subcols(0, steps).to_owned(),
        u.clone(),
        states.subcols(1, steps).to_owned(),
        Mat::<f64>::zeros(1, steps),
        1.0,
    )
    .unwrap()
}

/// `A = S·diag(λ)·S⁻¹` with a well-conditioned random `S`.
pub fn lti_with_spectrum(eigs: &[f64], rng: &mut TestRng) -> Mat<f64> {
    let n = eigs.len();
    let mut s = rng.mat(n, n);
    for i in 0..n {
        s[(i, i)] += 3.0;
    }
    let sd = Mat::from_fn(n, n, |i, j| s[(i, j)] * eigs[j]);
    // A·S = S·D  ⇔  Sᵀ·Aᵀ = (S·D)ᵀ
    gauss_solve(&s.transpose().to_owned(), &sd.transpose().to_owned())
        .transpose()
        .to_owned()
}
