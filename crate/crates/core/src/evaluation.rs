//! One-step and free-run scoring, rank sweeps and their CSV reports.

use std::io::{Read, Write};

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::SnapshotDataset;
use crate::model::LpvModel;
use crate::plant::Trajectory;

/// Columns scored per batch in teacher-forced evaluation.
const BATCH: usize = 8192;

/// Squared-error statistics against a reference.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// `(1/(N·n_s))·ΣΣ(y − ŷ)²`.
    pub mse: f64,
    pub per_state_mse: Vec<f64>,
    pub samples: usize,
    pub diverged_at: Option<usize>,
    pub probe: Option<ProbeSeries>,
}

impl EvalReport {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Model and reference at one grid point over time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeSeries {
    pub index: usize,
    pub time: Vec<f64>,
    pub model: Vec<f64>,
    pub truth: Vec<f64>,
}

impl ProbeSeries {
    /// Root-mean-square model error.
    pub fn rms_error(&self) -> f64 {
        let n = self.model.len().max(1) as f64;
        (self
            .model
            .iter()
            .zip(&self.truth)
            .map(|(m, t)| (m - t).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }

    /// RMS deviation of the reference from its own mean.
    pub fn truth_spread(&self) -> f64 {
        let n = self.truth.len().max(1) as f64;
        let mean = self.truth.iter().sum::<f64>() / n;
        (self.truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "truth", "model"])?;
        for ((t, y), m) in self.time.iter().zip(&self.truth).zip(&self.model) {
            wr.write_record([fmt_f64(*t), fmt_f64(*y), fmt_f64(*m)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Accumulates `Σ (a − b)²` per row.
fn add_squared_errors(acc: &mut [f64], a: MatRef<'_, f64>, b: MatRef<'_, f64>) {
    for j in 0..a.ncols() {
        for (i, (x, y)) in a.col(j).iter().zip(b.col(j).iter()).enumerate() {
            acc[i] += (x - y).powi(2);
        }
    }
}

fn finish_report(acc: Vec<f64>, samples: usize) -> EvalReport {
    let ns = acc.len();
    let per_state_mse: Vec<f64> = acc.iter().map(|s| s / samples.max(1) as f64).collect();
    let mse = acc.iter().sum::<f64>() / (samples.max(1) * ns.max(1)) as f64;
    EvalReport {
        mse,
        per_state_mse,
        samples,
        diverged_at: None,
        probe: None,
    }
}

/// Mean squared error between two equally shaped matrices.
pub fn mse(truth: MatRef<'_, f64>, model: MatRef<'_, f64>) -> Result<EvalReport> {
    if truth.nrows() != model.nrows() || truth.ncols() != model.ncols() {
        return Err(Error::dim("compared matrices differ in shape"));
    }
    let mut acc = vec![0.0; truth.nrows()];
    add_squared_errors(&mut acc, truth, model);
    Ok(finish_report(acc, truth.ncols()))
}

/// Teacher-forced prediction error: every step starts from the measured
/// state (projected for reduced models) and is compared after lifting.
pub fn one_step_mse(model: &LpvModel, ds: &SnapshotDataset) -> Result<EvalReport> {
    let mut acc = vec![0.0; ds.n_states()];
    let mut start = 0;
    while start < ds.len() {
        let len = BATCH.min(ds.len() - start);
        let pred = model.predict_next(
            ds.x.as_ref().subcols(start, len),
            ds.u.as_ref().subcols(start, len),
            ds.p.as_ref().subcols(start, len),
        )?;
        add_squared_errors(&mut acc, ds.y.as_ref().subcols(start, len), pred.as_ref());
        start += len;
    }
    Ok(finish_report(acc, ds.len()))
}

/// Simulates `model` from the reference's initial state only and compares
/// the states (columns 1..) with the reference trajectory.
///
/// A diverged run is scored over the samples before the divergence.
pub fn free_run(model: &LpvModel, truth: &Trajectory, probe_index: usize) -> Result<EvalReport> {
    let x0: Vec<f64> = truth.states.col(0).iter().copied().collect();
    let u = Mat::from_fn(1, truth.len(), |_, k| truth.inputs[k]);
    let run = model.simulate(
        &x0,
        u.as_ref(),
        truth.params.as_ref(),
        model.divergence_threshold(),
    )?;
    let steps = run.states.ncols() - 1;
    let mut report = if steps == 0 {
        finish_report(vec![0.0; model.n_states()], 0)
    } else {
        mse(
            truth.states.as_ref().subcols(1, steps),
            run.states.as_ref().subcols(1, steps),
        )?
    };
    report.diverged_at = run.diverged_at;
    if probe_index >= truth.n_states() {
        return Err(Error::dim(format!(
            "probe index {probe_index} is outside the grid"
        )));
    }
    let kept = steps + 1;
    report.probe = Some(ProbeSeries {
        index: probe_index,
        time: (0..kept).map(|k| k as f64 * truth.sample_time).collect(),
        model: (0..kept).map(|k| run.states[(probe_index, k)]).collect(),
        truth: (0..kept).map(|k| truth.states[(probe_index, k)]).collect(),
    });
    Ok(report)
}

/// One point of a sweep, as written to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank_pr: usize,
    pub rank_pod: usize,
    pub basis: String,
    pub mse: f64,
    pub diverged: bool,
    #[serde(default)]
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub model_kind: String,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn mse_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mse).collect()
    }

    /// Whether MSE strictly decreases along the rows.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mse < w[0].mse)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["rank_pr", "rank_pod", "basis", "mse", "diverged", "error"])?;
        for r in &self.rows {
            wr.write_record([
                r.rank_pr.to_string(),
                r.rank_pod.to_string(),
                r.basis.clone(),
                fmt_f64(r.mse),
                r.diverged.to_string(),
                r.error.clone(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, model_kind: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRow>, _>>()?;
        Ok(Self {
            model_kind: model_kind.to_string(),
            rows,
        })
    }
}

/// A rank point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankPoint {
    pub procrustes: usize,
    pub pod: usize,
}

/// Fits and scores every rank point; failures are recorded in the row and
/// the sweep continues. Points run in parallel and come back in input order.
pub fn run_rank_sweep<F>(
    model_kind: &str,
    basis_name: &str,
    points: &[RankPoint],
    fit_and_score: F,
) -> Result<SweepResult>
where
    F: Fn(RankPoint) -> Result<EvalReport> + Sync,
{
    if points
        .windows(2)
        .any(|w| (w[1].procrustes, w[1].pod) <= (w[0].procrustes, w[0].pod))
    {
        return Err(Error::config("sweep ranks must be strictly increasing"));
    }
    let rows = points
        .par_iter()
        .map(|&pt| match fit_and_score(pt) {
            Ok(rep) => SweepRow {
                rank_pr: pt.procrustes,
                rank_pod: pt.pod,
                basis: basis_name.to_string(),
                mse: rep.mse,
                diverged: rep.diverged(),
                error: String::new(),
            },
            Err(e) => {
                log::warn!("sweep point {pt:?} failed: {e}");
                SweepRow {
                    rank_pr: pt.procrustes,
                    rank_pod: pt.pod,
                    basis: basis_name.to_string(),
                    mse: f64::NAN,
                    diverged: false,
                    error: e.to_string(),
                }
            }
        })
        .collect();
    Ok(SweepResult {
        model_kind: model_kind.to_string(),
        rows,
    })
}
