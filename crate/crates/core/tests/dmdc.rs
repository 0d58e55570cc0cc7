mod common;

use common::{lti_dataset, lti_with_spectrum, TestRng};
use dmdlpv::dmdc::fit_dmdc;
use dmdlpv::numerics::TruncationConfig;
use faer::{c64, Mat};

fn complex_residual(a: &Mat<f64>, lambda: c64, phi: &[c64]) -> f64 {
    let n = a.nrows();
    let mut res = 0.0;
    let mut norm = 0.0;
    for i in 0..n {
        let mut acc = c64::new(0.0, 0.0);
        for j in 0..n {
            acc += phi[j] * a[(i, j)];
        }
        res += (acc - lambda * phi[i]).norm().powi(2);
        norm += phi[i].norm().powi(2);
    }
    (res / norm).sqrt()
}

#[test]
fn diagonal_system_eigenvalues() {
    let mut rng = TestRng::new(1);
    let a = Mat::from_fn(2, 2, |i, j| if i == j { [0.9, 0.5][i] } else { 0.0 });
    let b = Mat::from_fn(2, 1, |i, _| [1.0, -0.5][i]);
    let u = rng.mat(1, 300);
    let ds = lti_dataset(&a, &b, &[1.0, -1.0], &u);
    let fit = fit_dmdc(&ds, &TruncationConfig::new(3, 2, 0.0)).unwrap();
    let modes = fit.recover_modes(2).unwrap();
    assert!((modes[0].eigenvalue - c64::new(0.9, 0.0)).norm() <= 1e-8);
    assert!((modes[1].eigenvalue - c64::new(0.5, 0.0)).norm() <= 1e-8);
}

#[test]
fn ten_state_spectrum_and_modes_recovered() {
    let mut rng = TestRng::new(77);
    let eigs = [0.97, 0.93, 0.88, 0.8, 0.71, 0.6, 0.45, 0.3, -0.2, 0.1];
    let a = lti_with_spectrum(&eigs, &mut rng);
    let b = rng.mat(10, 1);
    let u = rng.mat(1, 2000);
    let x0: Vec<f64> = (0..10).map(|_| rng.sym()).collect();
    let ds = lti_dataset(&a, &b, &x0, &u);
    let fit = fit_dmdc(&ds, &TruncationConfig::new(11, 10, 0.0)).unwrap();
    let modes = fit.recover_modes(5).unwrap();
    for (m, want) in modes.iter().zip(eigs) {
        assert!(
            (m.eigenvalue - c64::new(want, 0.0)).norm() <= 1e-6,
            "{:?} vs {want}",
            m.eigenvalue
        );
        assert!(complex_residual(&a, m.eigenvalue, &m.full_mode) <= 1e-6);
    }
}

#[test]
fn full_pod_rank_is_similar_to_least_squares_operator() {
    let mut rng = TestRng::new(12);
    let eigs = [0.9, 0.7, 0.5, 0.2];
    let a = lti_with_spectrum(&eigs, &mut rng);
    let b = rng.mat(4, 2);
    let u = rng.mat(2, 400);
    let ds = lti_dataset(&a, &b, &[0.3, -0.2, 0.1, 0.5], &u);
    let fit = fit_dmdc(&ds, &TruncationConfig::new(6, 4, 0.0)).unwrap();
    let mut got: Vec<f64> = fit
        .recover_modes(4)
        .unwrap()
        .iter()
        .map(|m| m.eigenvalue.re)
        .collect();
    got.sort_by(|x, y| y.total_cmp(x));
    for (g, w) in got.iter().zip(eigs) {
        assert!((g - w).abs() <= 1e-8);
    }
    // Ã = W_yrᵀ·A·W_yr when the basis spans the data
    let w = fit.pod_transform().to_owned();
    let projected = w.transpose() * &a * &w;
    assert!((&projected - fit.a_tilde()).norm_l2() <= 1e-8);
}

#[test]
fn reduced_prediction_tracks_truth() {
    let mut rng = TestRng::new(30);
    let a = lti_with_spectrum(&[0.95, 0.6, 0.3], &mut rng);
    let b = rng.mat(3, 1);
    let u = rng.mat(1, 200);
    let ds = lti_dataset(&a, &b, &[0.0; 3], &u);
    let fit = fit_dmdc(&ds, &TruncationConfig::new(4, 3, 0.0)).unwrap();
    let (_, lifted) = fit.predict(&[0.0; 3], u.as_ref()).unwrap();
    let err = (lifted.subcols(1, 200) - &ds.y).norm_max();
    assert!(err <= 1e-9, "prediction error {err:e}");
}
