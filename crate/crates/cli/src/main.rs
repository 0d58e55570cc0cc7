//! `dmdlpv`: generate datasets, train and evaluate LPV models, and rerun the
//! reference experiments.
//!
//! Exit status: 0 success, 2 invalid configuration or usage, 3 numerical or
//! dimension failure, 4 divergence, 5 file or format error, 6 a reproduction
//! check failed under `--strict`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmdlpv::evaluation::{fmt_f64, free_run, one_step_mse, EvalReport};
use dmdlpv::excitation::{LocalDatasetBundle, SnapshotDataset};
use dmdlpv::experiment::{reproduce, train, ExperimentConfig, Target};
use dmdlpv::io;
use dmdlpv::model::{LpvModel, ModelKind};
use dmdlpv::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_FILE: u8 = 5;
const EXIT_CHECK: u8 = 6;

#[derive(Parser)]
#[command(
    name = "dmdlpv",
    version,
    about = "Reduced-order LPV identification with DMD"
)]
struct Cli {
    /// Worker threads for sweeps and per-system fits (default: all cores).
    #[arg(long, global = true, env = "DMDLPV_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Single-parameter polynomial gain, 49 states.
    Exp1,
    /// Two-parameter rational gain, 99 states.
    Exp2,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; missing keys take the preset's values.
    #[arg(long, short)]
    config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "exp1", conflicts_with = "config")]
    preset: Preset,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::file(path, e))?;
                Ok(ExperimentConfig::from_toml_str(&text)?)
            }
            None => Ok(match self.preset {
                Preset::Exp1 => ExperimentConfig::default(),
                Preset::Exp2 => ExperimentConfig::rational_gain(),
            }),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    OneStep,
    FreeRun,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant and write a dataset container.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output file (relative paths resolve against DMDLPV_OUT_DIR).
        #[arg(long, short)]
        out: PathBuf,
        /// Frozen-parameter bundle for local identification instead.
        #[arg(long)]
        local: bool,
        /// Also export the scheduled run as trajectory CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fit a model to a dataset (or bundle, for local kinds).
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides `fit.kind`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        procrustes_rank: Option<usize>,
        #[arg(long)]
        pod_rank: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score a model one step ahead or in free run.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "one-step")]
        mode: EvalMode,
        /// Dataset for one-step scoring; trajectory CSV or dataset for free
        /// runs. Free runs default to the config's held-out test signal.
        #[arg(long, short)]
        data: Option<PathBuf>,
        /// Directory for the report CSVs.
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Rerun a reference experiment and write its CSV bundle.
    Reproduce {
        /// table1, pod-sweep, local-tables, sim-test, exp2 or all.
        target: String,
        /// Config file; defaults to the target's own preset.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
        /// Exit with status 6 when a check fails.
        #[arg(long)]
        strict: bool,
    },
    /// Describe a container file, or print a preset config.
    Info {
        file: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn file(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_FILE,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Dimension(_) | Error::Domain(_) | Error::Numerical(_) => EXIT_NUMERIC,
            Error::Diverged { .. } => EXIT_DIVERGED,
            Error::Format(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_FILE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Relative paths resolve against `DMDLPV_OUT_DIR` when it is set.
fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os("DMDLPV_OUT_DIR") {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::file(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Failure::file(path, e))
}

fn container_kind(path: &Path) -> Result<String, Failure> {
    let header = io::load(path, io::read_header)?;
    Ok(header
        .get("container")
        .and_then(|v| v.as_str())
        .unwrap_or("unknown")
        .to_string())
}

fn gen_data(
    cfg: &ExperimentConfig,
    out: &Path,
    local: bool,
    csv: Option<&Path>,
) -> Result<(), Failure> {
    let plant = cfg.build_plant()?;
    let out = output_path(out);
    if local {
        let bundle = cfg.local_bundle(&plant)?;
        io::save(&out, |w| io::write_bundle(w, &bundle))?;
        println!(
            "wrote {}: {} frozen systems, n_s = {}, {} samples each, master seed {}",
            out.display(),
            bundle.len(),
            bundle.n_states(),
            cfg.local.horizon,
            cfg.local.seed
        );
        return Ok(());
    }
    let ds = cfg.global_dataset(&plant)?;
    io::save(&out, |w| io::write_dataset(w, &ds))?;
    println!(
        "wrote {}: N = {}, n_s = {}, n_u = {}, n_p = {}",
        out.display(),
        ds.len(),
        ds.n_states(),
        ds.n_inputs(),
        ds.n_params()
    );
    println!(
        "provenance: {}",
        serde_json::to_string(&ds.provenance).map_err(Error::from)?
    );
    if let Some(path) = csv {
        let path = output_path(path);
        let traj = ds.to_trajectory()?;
        io::save(&path, |w| io::write_trajectory_csv(w, &traj))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Mean one-step MSE over the systems of a bundle.
fn bundle_mse(model: &LpvModel, bundle: &LocalDatasetBundle) -> Result<f64, Failure> {
    let mut total = 0.0;
    for e in &bundle.entries {
        total += one_step_mse(model, &e.dataset)?.mse;
    }
    Ok(total / bundle.len().max(1) as f64)
}

fn train_cmd(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<(), Failure> {
    let model = match container_kind(data)?.as_str() {
        "bundle" => {
            let bundle = io::load(data, io::read_bundle)?;
            let model = train(cfg, None, Some(&bundle))?;
            println!("training MSE {}", fmt_f64(bundle_mse(&model, &bundle)?));
            model
        }
        "dataset" => {
            let ds = io::load(data, io::read_dataset)?;
            let model = train(cfg, Some(&ds), None)?;
            println!("training MSE {}", fmt_f64(one_step_mse(&model, &ds)?.mse));
            model
        }
        other => return Err(Error::Format(format!("cannot train on a {other} container")).into()),
    };
    let out = output_path(out);
    io::save(&out, |w| io::write_model(w, &model))?;
    println!(
        "wrote {} ({} model, latent dimension {})",
        out.display(),
        model.kind,
        model.latent_dim()
    );
    Ok(())
}

fn report_csv(rep: &EvalReport) -> String {
    let mut s = String::from("samples,mse,diverged_at");
    for i in 1..=rep.per_state_mse.len() {
        s.push_str(&format!(",mse_T_{i}"));
    }
    s.push('\n');
    s.push_str(&format!(
        "{},{},{}",
        rep.samples,
        fmt_f64(rep.mse),
        rep.diverged_at.map(|k| k.to_string()).unwrap_or_default()
    ));
    for v in &rep.per_state_mse {
        s.push(',');
        s.push_str(&fmt_f64(*v));
    }
    s.push('\n');
    s
}

fn load_dataset_like(path: &Path) -> Result<SnapshotDataset, Failure> {
    if path.extension().is_some_and(|e| e == "csv") {
        let traj = io::load(path, io::read_trajectory_csv)?;
        return Ok(SnapshotDataset::from_trajectory(&traj));
    }
    Ok(io::load(path, io::read_dataset)?)
}

fn eval_cmd(
    cfg: &ExperimentConfig,
    model: &Path,
    mode: EvalMode,
    data: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let model = io::load(model, io::read_model)?;
    let dir = output_path(out);
    let config_echo = cfg.to_toml_string()?;
    let rep = match mode {
        EvalMode::OneStep => {
            let path =
                data.ok_or_else(|| Error::Config("one-step evaluation needs --data".into()))?;
            let ds = load_dataset_like(path)?;
            one_step_mse(&model, &ds)?
        }
        EvalMode::FreeRun => {
            let plant = cfg.build_plant()?;
            let truth = match data {
                Some(path) => load_dataset_like(path)?.to_trajectory()?,
                None => cfg.test_trajectory(&plant)?,
            };
            if truth.n_states() != plant.n_states() {
                return Err(Error::Dimension(
                    "reference trajectory does not match the configured plant".into(),
                )
                .into());
            }
            let rep = free_run(&model, &truth, plant.probe_index(cfg.eval.probe_x))?;
            if let Some(probe) = &rep.probe {
                let mut buf = Vec::new();
                probe.write_csv(&mut buf)?;
                write_file(&dir.join("probe.csv"), &String::from_utf8_lossy(&buf))?;
            }
            rep
        }
    };
    write_file(&dir.join("report.csv"), &report_csv(&rep))?;
    write_file(&dir.join("config.toml"), &config_echo)?;
    println!("MSE {} over {} samples", fmt_f64(rep.mse), rep.samples);
    if let Some(step) = rep.diverged_at {
        return Err(Failure {
            code: EXIT_DIVERGED,
            message: format!("model diverged at step {step}"),
        });
    }
    Ok(())
}

fn reproduce_cmd(
    target: &str,
    config: Option<&Path>,
    out: &Path,
    strict: bool,
) -> Result<(), Failure> {
    let targets: Vec<Target> = if target == "all" {
        Target::ALL.to_vec()
    } else {
        vec![target.parse()?]
    };
    let base = output_path(out);
    let mut all_passed = true;
    for t in targets {
        let cfg = match config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::file(path, e))?;
                ExperimentConfig::from_toml_str(&text)?
            }
            None => t.default_config(),
        };
        let bundle = reproduce(t, &cfg)?;
        let dir = base.join(t.name());
        for (name, contents) in &bundle.files {
            write_file(&dir.join(name), contents)?;
        }
        print!("{}", bundle.summary());
        all_passed &= bundle.passed();
    }
    if strict && !all_passed {
        return Err(Failure {
            code: EXIT_CHECK,
            message: "reproduction checks failed".into(),
        });
    }
    Ok(())
}

fn info_cmd(file: Option<&Path>, preset: Option<Preset>) -> Result<(), Failure> {
    if let Some(path) = file {
        let header = io::load(path, io::read_header)?;
        println!(
            "{}",
            serde_json::to_string_pretty(&header).map_err(Error::from)?
        );
        return Ok(());
    }
    let cfg = match preset {
        Some(Preset::Exp2) => ExperimentConfig::rational_gain(),
        _ => ExperimentConfig::default(),
    };
    print!("{}", cfg.to_toml_string()?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenData {
            config,
            out,
            local,
            csv,
        } => gen_data(&config.load()?, &out, local, csv.as_deref()),
        Command::Train {
            config,
            data,
            out,
            kind,
            procrustes_rank,
            pod_rank,
            lambda,
        } => {
            let mut cfg = config.load()?;
            if let Some(k) = kind {
                cfg.fit.kind = ModelKind::from_tag(&k)?;
            }
            if let Some(r) = procrustes_rank {
                cfg.fit.procrustes_rank = r;
            }
            if let Some(r) = pod_rank {
                cfg.fit.pod_rank = r;
            }
            if let Some(l) = lambda {
                cfg.fit.regularization = l;
            }
            cfg.validate()?;
            train_cmd(&cfg, &data, &out)
        }
        Command::Eval {
            config,
            model,
            mode,
            data,
            out,
        } => eval_cmd(&config.load()?, &model, mode, data.as_deref(), &out),
        Command::Reproduce {
            target,
            config,
            out,
            strict,
        } => reproduce_cmd(&target, config.as_deref(), &out, strict),
        Command::Info { file, preset } => info_cmd(file.as_deref(), preset),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
