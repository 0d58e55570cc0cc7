//! APRBS excitation and snapshot-dataset assembly.
//!
//! Random levels come from PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`) created
//! with `Pcg64::new(seed as u128, PCG_STREAM)`; each level is
//! `low + (high − low)·(next_u64 >> 11)·2⁻⁵³`. Per-system seeds of a local
//! bundle are `master + (i + 1)·0x9E3779B97F4A7C15` (wrapping).

use faer::Mat;
use rand_core::Rng;
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{DiffusionPlant, Trajectory};

/// PCG reference default stream constant.
pub const PCG_STREAM: u128 = 0x0a02_bdbf_7bb3_c0a7_ac28_fa16_a64a_bf96;
pub const GENERATOR_NAME: &str = "pcg64-xsl-rr-128/64";
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AprbsConfig {
    pub low: f64,
    pub high: f64,
    /// Samples per level (the minimum step size).
    pub hold_steps: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl AprbsConfig {
    pub fn new(range: [f64; 2], hold_steps: usize, horizon: usize, seed: u64) -> Self {
        Self {
            low: range[0],
            high: range[1],
            hold_steps,
            horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // a degenerate range gives a constant signal, used for frozen runs
        if !(self.low <= self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(Error::config(format!(
                "APRBS range [{}, {}] is invalid",
                self.low, self.high
            )));
        }
        if self.hold_steps == 0 || self.horizon == 0 {
            return Err(Error::config("APRBS hold and horizon must be positive"));
        }
        if self.hold_steps > self.horizon {
            return Err(Error::config(format!(
                "APRBS hold {} exceeds horizon {}",
                self.hold_steps, self.horizon
            )));
        }
        Ok(())
    }
}

/// Uniform `[0, 1)` from the top 53 bits.
fn unit_interval(rng: &mut Pcg64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn derive_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add((index as u64 + 1).wrapping_mul(SEED_STRIDE))
}

/// Piecewise-constant random stair signal; the last segment is truncated to
/// fit the horizon.
pub fn aprbs(config: &AprbsConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = Pcg64::new(config.seed as u128, PCG_STREAM);
    let span = config.high - config.low;
    let mut out = Vec::with_capacity(config.horizon);
    while out.len() < config.horizon {
        let level = config.low + span * unit_interval(&mut rng);
        let len = config.hold_steps.min(config.horizon - out.len());
        out.extend(std::iter::repeat_n(level, len));
    }
    Ok(out)
}

/// How a dataset was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    pub input: Option<AprbsConfig>,
    #[serde(default)]
    pub params: Vec<AprbsConfig>,
    pub frozen_theta: Option<Vec<f64>>,
}

/// Time-aligned snapshot matrices: `Y[:, k]` is the state one sample after
/// `X[:, k]` under `U[:, k]` and `P[:, k]`.
#[derive(Clone, Debug)]
pub struct SnapshotDataset {
    pub x: Mat<f64>,
    pub u: Mat<f64>,
    pub y: Mat<f64>,
    pub p: Mat<f64>,
    pub sample_time: f64,
    pub provenance: Provenance,
}

impl SnapshotDataset {
    pub fn new(
        x: Mat<f64>,
        u: Mat<f64>,
        y: Mat<f64>,
        p: Mat<f64>,
        sample_time: f64,
    ) -> Result<Self> {
        let n = x.ncols();
        if u.ncols() != n || y.ncols() != n || p.ncols() != n {
            return Err(Error::dim(format!(
                "snapshot column counts differ: X {}, U {}, Y {}, P {}",
                n,
                u.ncols(),
                y.ncols(),
                p.ncols()
            )));
        }
        if y.nrows() != x.nrows() {
            return Err(Error::dim("X and Y must have the same number of rows"));
        }
        Ok(Self {
            x,
            u,
            y,
            p,
            sample_time,
            provenance: Provenance::default(),
        })
    }

    /// Shifts a trajectory by one sample.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let n = traj.len();
        Self {
            x: traj.states.subcols(0, n).to_owned(),
            u: Mat::from_fn(1, n, |_, k| traj.inputs[k]),
            y: traj.states.subcols(1, n).to_owned(),
            p: traj.params.clone(),
            sample_time: traj.sample_time,
            provenance: Provenance::default(),
        }
    }

    /// Inverse of [`Self::from_trajectory`]; fails unless every `Y` column
    /// is the next `X` column and there is a single input.
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let n = self.len();
        if n == 0 || self.n_inputs() != 1 {
            return Err(Error::dim(
                "only non-empty single-input datasets form a trajectory",
            ));
        }
        if (1..n).any(|k| self.x.col(k) != self.y.col(k - 1)) {
            return Err(Error::dim(
                "dataset columns are not consecutive samples of one run",
            ));
        }
        let ns = self.n_states();
        Ok(Trajectory {
            states: Mat::from_fn(ns, n + 1, |i, k| {
                if k < n {
                    self.x[(i, k)]
                } else {
                    self.y[(i, n - 1)]
                }
            }),
            inputs: self.u.row(0).iter().copied().collect(),
            params: self.p.clone(),
            sample_time: self.sample_time,
        })
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn n_states(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.p.nrows()
    }

    /// Largest absolute state value, the scale used by divergence checks.
    pub fn state_scale(&self) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..self.len() {
            for (&a, &b) in self.x.col(j).iter().zip(self.y.col(j).iter()) {
                m = m.max(a.abs()).max(b.abs());
            }
        }
        m
    }

    /// Columns `start..start + len` as a new dataset.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            x: self.x.subcols(start, len).to_owned(),
            u: self.u.subcols(start, len).to_owned(),
            y: self.y.subcols(start, len).to_owned(),
            p: self.p.subcols(start, len).to_owned(),
            sample_time: self.sample_time,
            provenance: self.provenance.clone(),
        }
    }

    /// Whether every column of `P` equals the first.
    pub fn is_frozen(&self) -> bool {
        if self.is_empty() {
            return true;
        }
        let first = self.p.col(0);
        (1..self.len()).all(|j| self.p.col(j) == first)
    }
}

/// Simulates the plant under joint APRBS excitation from `x0`.
pub fn build_global_dataset(
    plant: &DiffusionPlant,
    input: &AprbsConfig,
    params: &[AprbsConfig],
    x0: &[f64],
) -> Result<SnapshotDataset> {
    if params.len() != plant.n_params() {
        return Err(Error::config(format!(
            "plant has {} parameters but {} parameter excitations were given",
            plant.n_params(),
            params.len()
        )));
    }
    if let Some(cfg) = params.iter().find(|c| c.horizon != input.horizon) {
        return Err(Error::config(format!(
            "parameter horizon {} differs from input horizon {}",
            cfg.horizon, input.horizon
        )));
    }
    let u = aprbs(input)?;
    let p_signals = params.iter().map(aprbs).collect::<Result<Vec<_>>>()?;
    let p = Mat::from_fn(params.len(), input.horizon, |i, k| p_signals[i][k]);
    let traj = plant.simulate(x0, &u, p.as_ref())?;
    let mut ds = SnapshotDataset::from_trajectory(&traj);
    ds.provenance = Provenance {
        generator: GENERATOR_NAME.into(),
        input: Some(input.clone()),
        params: params.to_vec(),
        frozen_theta: None,
    };
    Ok(ds)
}

/// Frozen-parameter datasets for local identification.
#[derive(Clone, Debug)]
pub struct LocalDatasetBundle {
    pub entries: Vec<LocalEntry>,
}

#[derive(Clone, Debug)]
pub struct LocalEntry {
    pub theta: Vec<f64>,
    pub dataset: SnapshotDataset,
}

impl LocalDatasetBundle {
    pub fn new(entries: Vec<LocalEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config(
                "local bundle needs at least one frozen system",
            ));
        }
        let n_s = entries[0].dataset.n_states();
        if entries.iter().any(|e| e.dataset.n_states() != n_s) {
            return Err(Error::dim(
                "bundle datasets disagree on the state dimension",
            ));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.entries[0].dataset.n_states()
    }

    pub fn n_inputs(&self) -> usize {
        self.entries[0].dataset.n_inputs()
    }
}

/// One frozen-`θ` simulation per entry of `p_values`, each from rest with its
/// own input seed derived from `input.seed`.
pub fn build_local_bundle(
    plant: &DiffusionPlant,
    p_values: &[Vec<f64>],
    input: &AprbsConfig,
    horizon_per_system: usize,
) -> Result<LocalDatasetBundle> {
    if p_values.is_empty() {
        return Err(Error::config("no frozen parameter values given"));
    }
    let entries = p_values
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            if theta.len() != plant.n_params() {
                return Err(Error::dim(format!(
                    "frozen value {theta:?} has wrong length for a {}-parameter plant",
                    plant.n_params()
                )));
            }
            let cfg = AprbsConfig {
                horizon: horizon_per_system,
                seed: derive_seed(input.seed, i),
                ..input.clone()
            };
            let u = aprbs(&cfg)?;
            let p = Mat::from_fn(theta.len(), horizon_per_system, |r, _| theta[r]);
            let traj = plant
                .simulate(&vec![0.0; plant.n_states()], &u, p.as_ref())
                .map_err(|e| match e {
                    Error::Diverged { step, .. } => Error::Diverged {
                        step,
                        context: format!(" (frozen θ = {theta:?})"),
                    },
                    other => other,
                })?;
            let mut dataset = SnapshotDataset::from_trajectory(&traj);
            dataset.provenance = Provenance {
                generator: GENERATOR_NAME.into(),
                input: Some(cfg),
                params: Vec::new(),
                frozen_theta: Some(theta.clone()),
            };
            Ok(LocalEntry {
                theta: theta.clone(),
                dataset,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LocalDatasetBundle::new(entries)
}

/// `{0, 1/(n−1), …, 1}` as one-parameter frozen values.
pub fn uniform_grid(points: usize) -> Vec<Vec<f64>> {
    match points {
        0 => Vec::new(),
        1 => vec![vec![0.0]],
        _ => (0..points)
            .map(|i| vec![i as f64 / (points - 1) as f64])
            .collect(),
    }
}

/// Stacked regressor `[X; U]` of a dataset, for excitation checks.
pub fn stacked_regressor(ds: &SnapshotDataset) -> Mat<f64> {
    let (ns, nu) = (ds.n_states(), ds.n_inputs());
    Mat::from_fn(ns + nu, ds.len(), |i, j| {
        if i < ns {
            ds.x[(i, j)]
        } else {
            ds.u[(i - ns, j)]
        }
    })
}
