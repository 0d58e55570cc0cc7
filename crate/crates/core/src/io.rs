//! File containers for datasets and models, plus trajectory CSV.
//!
//! A container is the 8-byte magic `DMDLPV\0\x01`, a little-endian `u64`
//! header length, a JSON header and then the matrices listed in the header's
//! `matrices` array, each stored column-major as little-endian `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluation::fmt_f64;
use crate::excitation::{LocalDatasetBundle, LocalEntry, Provenance, SnapshotDataset};
use crate::features::SchedulingBasis;
use crate::model::{LpvModel, ModelKind};
use crate::numerics::TruncationConfig;
use crate::plant::Trajectory;

pub const MAGIC: &[u8; 8] = b"DMDLPV\0\x01";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MatrixEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Writes `header` (which must be a JSON object) and the named matrices.
pub fn write_container<W: Write>(
    mut w: W,
    header: &Value,
    matrices: &[(&str, MatRef<'_, f64>)],
) -> Result<()> {
    let mut header = header.clone();
    let obj = header
        .as_object_mut()
        .ok_or_else(|| Error::Format("container header must be an object".into()))?;
    let entries: Vec<MatrixEntry> = matrices
        .iter()
        .map(|(name, m)| MatrixEntry {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
        })
        .collect();
    obj.insert("matrices".into(), serde_json::to_value(&entries)?);
    let text = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(&text)?;
    let mut buf = Vec::new();
    for (_, m) in matrices {
        for j in 0..m.ncols() {
            buf.clear();
            for &v in m.col(j).iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(Value, BTreeMap<String, Mat<f64>>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dmdlpv container (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let header: Value = serde_json::from_slice(&text)?;
    let entries: Vec<MatrixEntry> = serde_json::from_value(
        header
            .get("matrices")
            .cloned()
            .ok_or_else(|| Error::Format("header lists no matrices".into()))?,
    )?;
    let mut out = BTreeMap::new();
    let mut col = Vec::new();
    for e in entries {
        let mut m = Mat::<f64>::zeros(e.rows, e.cols);
        col.resize(e.rows * 8, 0u8);
        for j in 0..e.cols {
            r.read_exact(&mut col)?;
            for (i, chunk) in col.chunks_exact(8).enumerate() {
                m[(i, j)] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        out.insert(e.name, m);
    }
    Ok((header, out))
}

fn take(mats: &mut BTreeMap<String, Mat<f64>>, name: &str) -> Result<Mat<f64>> {
    mats.remove(name)
        .ok_or_else(|| Error::Format(format!("container is missing matrix '{name}'")))
}

fn field<T: serde::de::DeserializeOwned>(header: &Value, key: &str) -> Result<T> {
    let v = header
        .get(key)
        .cloned()
        .ok_or_else(|| Error::Format(format!("header is missing '{key}'")))?;
    Ok(serde_json::from_value(v)?)
}

fn expect_kind(header: &Value, kind: &str) -> Result<()> {
    let found: String = field(header, "container")?;
    if found != kind {
        return Err(Error::Format(format!(
            "expected a {kind} container, found {found}"
        )));
    }
    Ok(())
}

pub fn write_dataset<W: Write>(w: W, ds: &SnapshotDataset) -> Result<()> {
    let header = serde_json::json!({
        "container": "dataset",
        "n_states": ds.n_states(),
        "n_inputs": ds.n_inputs(),
        "n_params": ds.n_params(),
        "samples": ds.len(),
        "sample_time": ds.sample_time,
        "provenance": ds.provenance,
    });
    write_container(
        w,
        &header,
        &[
            ("x", ds.x.as_ref()),
            ("u", ds.u.as_ref()),
            ("y", ds.y.as_ref()),
            ("p", ds.p.as_ref()),
        ],
    )
}

pub fn read_dataset<R: Read>(r: R) -> Result<SnapshotDataset> {
    let (header, mut mats) = read_container(r)?;
    expect_kind(&header, "dataset")?;
    let mut ds = SnapshotDataset::new(
        take(&mut mats, "x")?,
        take(&mut mats, "u")?,
        take(&mut mats, "y")?,
        take(&mut mats, "p")?,
        field(&header, "sample_time")?,
    )?;
    ds.provenance = field(&header, "provenance")?;
    Ok(ds)
}

pub fn write_bundle<W: Write>(w: W, bundle: &LocalDatasetBundle) -> Result<()> {
    #[derive(Serialize)]
    struct Meta<'a> {
        theta: &'a [f64],
        sample_time: f64,
        provenance: &'a Provenance,
    }
    let meta: Vec<Meta<'_>> = bundle
        .entries
        .iter()
        .map(|e| Meta {
            theta: &e.theta,
            sample_time: e.dataset.sample_time,
            provenance: &e.dataset.provenance,
        })
        .collect();
    let header = serde_json::json!({
        "container": "bundle",
        "n_states": bundle.n_states(),
        "systems": meta,
    });
    let names: Vec<[String; 4]> = (0..bundle.len())
        .map(|i| {
            [
                format!("x{i}"),
                format!("u{i}"),
                format!("y{i}"),
                format!("p{i}"),
            ]
        })
        .collect();
    let mut mats = Vec::new();
    for (e, n) in bundle.entries.iter().zip(&names) {
        let d = &e.dataset;
        mats.push((n[0].as_str(), d.x.as_ref()));
        mats.push((n[1].as_str(), d.u.as_ref()));
        mats.push((n[2].as_str(), d.y.as_ref()));
        mats.push((n[3].as_str(), d.p.as_ref()));
    }
    write_container(w, &header, &mats)
}

pub fn read_bundle<R: Read>(r: R) -> Result<LocalDatasetBundle> {
    #[derive(Deserialize)]
    struct Meta {
        theta: Vec<f64>,
        sample_time: f64,
        provenance: Provenance,
    }
    let (header, mut mats) = read_container(r)?;
    expect_kind(&header, "bundle")?;
    let meta: Vec<Meta> = field(&header, "systems")?;
    let mut entries = Vec::with_capacity(meta.len());
    for (i, m) in meta.into_iter().enumerate() {
        let mut dataset = SnapshotDataset::new(
            take(&mut mats, &format!("x{i}"))?,
            take(&mut mats, &format!("u{i}"))?,
            take(&mut mats, &format!("y{i}"))?,
            take(&mut mats, &format!("p{i}"))?,
            m.sample_time,
        )?;
        dataset.provenance = m.provenance;
        entries.push(LocalEntry {
            theta: m.theta,
            dataset,
        });
    }
    LocalDatasetBundle::new(entries)
}

pub fn write_model<W: Write>(w: W, model: &LpvModel) -> Result<()> {
    let header = serde_json::json!({
        "container": "model",
        "kind": model.kind,
        "n_states": model.n_states(),
        "latent_dim": model.latent_dim(),
        "n_inputs": model.n_inputs(),
        "basis_x": model.basis_x,
        "basis_u": model.basis_u,
        "truncation": model.truncation,
        "data_scale": model.data_scale,
    });
    let mut mats = vec![("w_a", model.w_a.as_ref()), ("w_b", model.w_b.as_ref())];
    if let Some(w) = &model.pod_transform {
        mats.push(("pod_transform", w.as_ref()));
    }
    write_container(w, &header, &mats)
}

pub fn read_model<R: Read>(r: R) -> Result<LpvModel> {
    let (header, mut mats) = read_container(r)?;
    expect_kind(&header, "model")?;
    let kind: ModelKind = field(&header, "kind")?;
    let basis_x: SchedulingBasis = field(&header, "basis_x")?;
    let basis_u: SchedulingBasis = field(&header, "basis_u")?;
    let pod = mats.remove("pod_transform");
    let mut model = LpvModel::new(
        kind,
        take(&mut mats, "w_a")?,
        take(&mut mats, "w_b")?,
        pod,
        basis_x,
        basis_u,
    )?;
    model.truncation = field::<Option<TruncationConfig>>(&header, "truncation")?;
    model.data_scale = field(&header, "data_scale")?;
    Ok(model)
}

/// Reads just the JSON header of any container.
pub fn read_header<R: Read>(mut r: R) -> Result<Value> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dmdlpv container (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut text = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut text)?;
    Ok(serde_json::from_slice(&text)?)
}

pub fn save<P: AsRef<Path>>(path: P, f: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
    f(BufWriter::new(File::create(path)?))
}

pub fn load<P: AsRef<Path>, T>(path: P, f: impl FnOnce(BufReader<File>) -> Result<T>) -> Result<T> {
    f(BufReader::new(File::open(path)?))
}

/// Columns `t, u, p1…, T_1…T_n`; one row per recorded state, the last row
/// has empty input and parameter fields.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let np = traj.params.nrows();
    let ns = traj.n_states();
    let mut head = vec!["t".to_string(), "u".to_string()];
    head.extend((1..=np).map(|i| format!("p{i}")));
    head.extend((1..=ns).map(|i| format!("T_{i}")));
    wr.write_record(&head)?;
    for k in 0..=traj.len() {
        let mut row = Vec::with_capacity(head.len());
        row.push(fmt_f64(k as f64 * traj.sample_time));
        if k < traj.len() {
            row.push(fmt_f64(traj.inputs[k]));
            row.extend((0..np).map(|i| fmt_f64(traj.params[(i, k)])));
        } else {
            row.extend(std::iter::repeat_n(String::new(), np + 1));
        }
        row.extend((0..ns).map(|i| fmt_f64(traj.states[(i, k)])));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(r);
    let head = rd.headers()?.clone();
    let np = head.iter().filter(|h| h.starts_with('p')).count();
    let ns = head.iter().filter(|h| h.starts_with("T_")).count();
    if head.len() != 2 + np + ns || head.get(0) != Some("t") || head.get(1) != Some("u") {
        return Err(Error::Format("unexpected trajectory CSV header".into()));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("bad number '{s}': {e}")))
    };
    let mut times = Vec::new();
    let mut inputs = Vec::new();
    let mut params: Vec<Vec<f64>> = Vec::new();
    let mut states: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        times.push(parse(&rec[0])?);
        if !rec[1].is_empty() {
            inputs.push(parse(&rec[1])?);
            params.push((0..np).map(|i| parse(&rec[2 + i])).collect::<Result<_>>()?);
        }
        states.push(
            (0..ns)
                .map(|i| parse(&rec[2 + np + i]))
                .collect::<Result<_>>()?,
        );
    }
    if states.len() != inputs.len() + 1 {
        return Err(Error::Format(
            "trajectory needs exactly one more state row than input rows".into(),
        ));
    }
    let sample_time = if times.len() > 1 {
        times[1] - times[0]
    } else {
        0.0
    };
    Ok(Trajectory {
        states: Mat::from_fn(ns, states.len(), |i, k| states[k][i]),
        params: Mat::from_fn(np, inputs.len(), |i, k| params[k][i]),
        inputs,
        sample_time,
    })
}
