mod common;

use dmdlpv::plant::{build_plant, grid_size, GainFunction};
use faer::Mat;

fn reference_plant() -> dmdlpv::plant::DiffusionPlant {
    build_plant(0.02, 0.1, GainFunction::cubic(), 1e-3, 1e-3).unwrap()
}

#[test]
fn grid_sizes() {
    assert_eq!(grid_size(0.02), 49);
    assert_eq!(grid_size(0.01), 99);
    assert_eq!(reference_plant().n_states(), 49);
}

#[test]
fn constant_input_settles_to_uniform_temperature() {
    let plant = reference_plant();
    let steps = 80_000;
    let u = vec![2.5; steps];
    let p = Mat::from_fn(1, steps, |_, _| 1.0);
    let traj = plant
        .simulate(&vec![0.0; plant.n_states()], &u, p.as_ref())
        .unwrap();
    let worst = traj
        .states
        .col(steps)
        .iter()
        .map(|t| (t - 2.5).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "max deviation from steady state {worst:e}");
}

#[test]
fn frozen_parameter_superposition() {
    let plant = reference_plant();
    let mut rng = common::TestRng::new(4);
    let n = plant.n_states();
    let steps = 500;
    let xa: Vec<f64> = (0..n).map(|_| rng.sym()).collect();
    let xb: Vec<f64> = (0..n).map(|_| rng.sym()).collect();
    let ua: Vec<f64> = (0..steps).map(|_| 4.0 * rng.sym()).collect();
    let ub: Vec<f64> = (0..steps).map(|_| 4.0 * rng.sym()).collect();
    let p = Mat::from_fn(1, steps, |_, _| 0.37);
    let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
    let ta = plant.simulate(&xa, &ua, p.as_ref()).unwrap();
    let tb = plant.simulate(&xb, &ub, p.as_ref()).unwrap();
    let tab = plant
        .simulate(&sum(&xa, &xb), &sum(&ua, &ub), p.as_ref())
        .unwrap();
    let err = (&tab.states - (&ta.states + &tb.states)).norm_max();
    assert!(err <= 1e-10, "superposition error {err:e}");
}

#[test]
fn discrete_pair_reproduces_one_sample() {
    let plant = build_plant(0.02, 0.1, GainFunction::cubic(), 2.5e-4, 1e-3).unwrap();
    let mut rng = common::TestRng::new(8);
    let x: Vec<f64> = (0..plant.n_states()).map(|_| rng.sym()).collect();
    let theta = [0.6];
    let (ad, bd) = plant.discrete_pair(&theta).unwrap();
    let next = plant.step(&x, 1.3, &theta).unwrap();
    for i in 0..plant.n_states() {
        let mut v = 1.3 * bd[i];
        for j in 0..plant.n_states() {
            v += ad[(i, j)] * x[j];
        }
        assert!((v - next[i]).abs() <= 1e-12, "row {i}");
    }
}

#[test]
fn rational_gain_plant_needs_two_parameters() {
    let plant = build_plant(0.01, 0.1, GainFunction::Rational2p, 2.5e-4, 0.01).unwrap();
    assert_eq!(plant.n_states(), 99);
    assert_eq!(plant.n_params(), 2);
    assert!(plant.step(&vec![0.0; 99], 1.0, &[0.5]).is_err());
}
