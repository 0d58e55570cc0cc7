mod common;

use common::TestRng;
use dmdlpv::evaluation::one_step_mse;
use dmdlpv::excitation::{
    build_global_dataset, build_local_bundle, AprbsConfig, LocalDatasetBundle,
};
use dmdlpv::features::{basis_exact_1p, basis_over_1p, kron_columns, SchedulingBasis};
use dmdlpv::lpv_global::GlobalProblem;
use dmdlpv::lpv_local::{fit_local_fullspace, fit_local_latent, pod_from_bundle};
use dmdlpv::model::{LpvModel, ModelKind};
use dmdlpv::numerics::{kron_vec, TruncationConfig};
use dmdlpv::plant::{build_plant, DiffusionPlant, GainFunction};
use faer::Mat;
use proptest::prelude::*;

fn plant() -> DiffusionPlant {
    build_plant(0.02, 0.1, GainFunction::cubic(), 1e-3, 1e-3).unwrap()
}

fn small_dataset(plant: &DiffusionPlant) -> dmdlpv::excitation::SnapshotDataset {
    let horizon = 6000;
    let u = AprbsConfig::new([0.0, 4.0], 300, horizon, 1);
    let p = AprbsConfig::new([0.0, 1.0], 300, horizon, 2);
    build_global_dataset(plant, &u, &[p], &vec![0.0; plant.n_states()]).unwrap()
}

/// Snapshots of `x⁺ = Σ φ_i(p)·A_i·x + Σ φ_i(p)·B_i·u` for random blocks.
fn synthetic_lpv(
    rng: &mut TestRng,
    basis: &SchedulingBasis,
    n: usize,
    samples: usize,
) -> (
    Vec<Mat<f64>>,
    Vec<Mat<f64>>,
    dmdlpv::excitation::SnapshotDataset,
) {
    let blocks_a: Vec<Mat<f64>> = (0..basis.len())
        .map(|_| faer::Scale(0.3 / n as f64) * rng.mat(n, n))
        .collect();
    let blocks_b: Vec<Mat<f64>> = (0..basis.len()).map(|_| rng.mat(n, 1)).collect();
    let mut x = Mat::<f64>::zeros(n, samples + 1);
    let u = rng.mat(1, samples);
    let p = Mat::from_fn(1, samples, |_, _| 0.5 + 0.5 * rng.sym());
    for k in 0..samples {
        let phi = basis.eval(&[p[(0, k)]]).unwrap();
        let mut next = Mat::<f64>::zeros(n, 1);
        for (i, f) in phi.iter().enumerate() {
            next += faer::Scale(*f)
                * (&blocks_a[i] * x.col(k).as_mat() + &blocks_b[i] * u.col(k).as_mat());
        }
        x.col_mut(k + 1).copy_from(next.col(0));
    }
    let ds = dmdlpv::excitation::SnapshotDataset::new(
        x.subcols(0, samples).to_owned(),
        u,
        x.subcols(1, samples).to_owned(),
        p,
        1.0,
    )
    .unwrap();
    (blocks_a, blocks_b, ds)
}

#[test]
fn representable_system_is_one_step_exact() {
    let mut rng = TestRng::new(42);
    let basis = basis_exact_1p();
    let (blocks_a, blocks_b, ds) = synthetic_lpv(&mut rng, &basis, 6, 400);
    let model = GlobalProblem::new(&ds, &basis, &basis)
        .unwrap()
        .fit_full(None, 0.0)
        .unwrap();
    let mse = one_step_mse(&model, &ds).unwrap().mse;
    assert!(mse <= 1e-24, "one-step MSE {mse:e}");
    for i in 0..basis.len() {
        assert!(
            (model.a_block(i) - &blocks_a[i]).norm_max() <= 1e-9,
            "A block {i}"
        );
        assert!(
            (model.b_block(i) - &blocks_b[i]).norm_max() <= 1e-9,
            "B block {i}"
        );
    }
    // a richer basis still contains the true model
    let over = basis_over_1p();
    let model = GlobalProblem::new(&ds, &over, &over)
        .unwrap()
        .fit_full(None, 0.0)
        .unwrap();
    assert!(one_step_mse(&model, &ds).unwrap().mse <= 1e-24);
}

#[test]
fn plant_fit_residual_is_small_but_structural() {
    // RK4 makes A_d(θ) polynomial of higher degree than the gain, so the
    // cubic basis leaves a small residual that the richer basis reduces.
    let plant = plant();
    let ds = small_dataset(&plant);
    let fit = |b: SchedulingBasis| {
        let m = GlobalProblem::new(&ds, &b, &b)
            .unwrap()
            .fit_full(None, 0.0)
            .unwrap();
        one_step_mse(&m, &ds).unwrap().mse
    };
    let exact = fit(basis_exact_1p());
    let over = fit(basis_over_1p());
    assert!(exact <= 1e-10, "{exact:e}");
    assert!(over < exact, "{over:e} vs {exact:e}");
}

#[test]
fn rank_sweep_error_decreases() {
    let plant = plant();
    let ds = small_dataset(&plant);
    let basis = basis_exact_1p();
    let problem = GlobalProblem::new(&ds, &basis, &basis).unwrap();
    let mut last = f64::INFINITY;
    for r in [5, 10, 20, 30] {
        let m = problem
            .fit(&TruncationConfig::new(r, r.min(49), 0.0))
            .unwrap();
        let mse = one_step_mse(&m, &ds).unwrap().mse;
        assert!(mse < last, "rank {r}: {mse:e} ≥ {last:e}");
        last = mse;
    }
}

#[test]
fn constant_basis_global_fit_is_dmdc() {
    let plant = plant();
    let horizon = 3000;
    let u = dmdlpv::excitation::aprbs(&AprbsConfig::new([0.0, 4.0], 100, horizon, 4)).unwrap();
    let p = Mat::from_fn(1, horizon, |_, _| 0.5);
    let traj = plant.simulate(&vec![0.0; 49], &u, p.as_ref()).unwrap();
    let ds = dmdlpv::excitation::SnapshotDataset::from_trajectory(&traj);
    let cfg = TruncationConfig::new(12, 8, 0.01);
    let basis = SchedulingBasis::constant(1);
    let global = GlobalProblem::new(&ds, &basis, &basis)
        .unwrap()
        .fit(&cfg)
        .unwrap();
    let dmdc = dmdlpv::dmdc::fit_dmdc(&ds, &cfg).unwrap();
    assert!((global.w_a.as_ref() - dmdc.a_tilde()).norm_max() <= 1e-14);
    assert!((global.w_b.as_ref() - dmdc.b_tilde()).norm_max() <= 1e-14);
    assert_eq!(dmdc.model().kind, ModelKind::Dmdc);
}

fn small_bundle(plant: &DiffusionPlant) -> LocalDatasetBundle {
    let input = AprbsConfig::new([0.0, 4.0], 100, 1500, 3);
    let grid: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
    build_local_bundle(plant, &grid, &input, 1500).unwrap()
}

#[test]
fn local_pod_ignores_system_order() {
    let plant = plant();
    let bundle = small_bundle(&plant);
    let mut reversed = bundle.entries.clone();
    reversed.reverse();
    let reversed = LocalDatasetBundle::new(reversed).unwrap();
    let a = pod_from_bundle(&bundle, 8).unwrap();
    let b = pod_from_bundle(&reversed, 8).unwrap();
    let pa = &a * a.transpose();
    let pb = &b * b.transpose();
    assert!((&pa - &pb).norm_max() <= 1e-10);
}

#[test]
fn local_variants_agree_at_moderate_rank() {
    let plant = plant();
    let bundle = small_bundle(&plant);
    let ds = small_dataset(&plant);
    let basis = basis_exact_1p();
    let (_, full) = fit_local_fullspace(&bundle, &basis, &basis, 5, 0.0).unwrap();
    let (_, latent) = fit_local_latent(&bundle, &basis, &basis, 5, 0.0).unwrap();
    let a = one_step_mse(&full, &ds).unwrap().mse;
    let b = one_step_mse(&latent, &ds).unwrap().mse;
    assert!((a - b).abs() <= 0.05 * a.min(b), "{a:e} vs {b:e}");
}

fn random_model(rng: &mut TestRng, r: usize, basis: SchedulingBasis) -> LpvModel {
    let nphi = basis.len();
    LpvModel::new(
        ModelKind::Global,
        rng.mat(r, nphi * r),
        rng.mat(r, nphi),
        None,
        basis.clone(),
        basis,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `W̃_A·(φ ⊗ z) = Σ φ_i·Ã_i·z`.
    #[test]
    fn block_layout_mixed_product(seed in any::<u64>(), r in 1usize..7, theta in 0.0f64..1.0) {
        let mut rng = TestRng::new(seed);
        let basis = basis_over_1p();
        let model = random_model(&mut rng, r, basis.clone());
        let z: Vec<f64> = (0..r).map(|_| rng.sym()).collect();
        let phi = basis.eval(&[theta]).unwrap();
        let lifted = kron_vec(&phi, &z);
        let mut via_kron = vec![0.0; r];
        for i in 0..r {
            for (j, l) in lifted.iter().enumerate() {
                via_kron[i] += model.w_a[(i, j)] * l;
            }
        }
        let mut via_blocks = vec![0.0; r];
        for (k, f) in phi.iter().enumerate() {
            let blk = model.a_block(k);
            for i in 0..r {
                for j in 0..r {
                    via_blocks[i] += f * blk[(i, j)] * z[j];
                }
            }
        }
        let zm = Mat::from_fn(r, 1, |i, _| z[i]);
        let um = Mat::<f64>::zeros(1, 1);
        let pm = Mat::from_fn(1, 1, |_, _| theta);
        let adv = model.advance(zm.as_ref(), um.as_ref(), pm.as_ref()).unwrap();
        for i in 0..r {
            prop_assert!((via_kron[i] - via_blocks[i]).abs() <= 1e-12);
            prop_assert!((adv[(i, 0)] - via_blocks[i]).abs() <= 1e-12);
        }
    }

    /// Column-wise Kronecker products keep the basis-major row order.
    #[test]
    fn kron_columns_match_vector_kron(seed in any::<u64>(), cols in 1usize..5) {
        let mut rng = TestRng::new(seed);
        let a = rng.mat(3, cols);
        let b = rng.mat(4, cols);
        let k = kron_columns(a.as_ref(), b.as_ref());
        for c in 0..cols {
            let av: Vec<f64> = a.col(c).iter().copied().collect();
            let bv: Vec<f64> = b.col(c).iter().copied().collect();
            let want = kron_vec(&av, &bv);
            for (i, w) in want.iter().enumerate() {
                prop_assert!((k[(i, c)] - w).abs() <= 1e-15);
            }
        }
    }
}
