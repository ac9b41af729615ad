//! Command-line front end: dataset generation, training, evaluation,
//! sweeps, and gradient verification.
//!
//! Every command is a pure function of (config file, flags, seed): reruns
//! write byte-identical artifacts, and each artifact gets a manifest
//! recording the resolved config, the root seed, and output digests.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage/config error,
//! 3 numerical error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    eval_mse, sweep_randomization, taps_per_round, write_report_json, write_sweep_csv, AngleUnit,
    MseReport, DEFAULT_ROUNDS,
};
use crate::learn::{
    gradient_check_with_fault, init_model, load_model, save_model, train_with_split, LabelledSet,
    Task, TrainConfig,
};
use crate::representations::RepKind;
use crate::scenarios::{
    generate_dataset, read_dataset, to_labelled_set, PseudoRealEnv, RoundsReport,
};

/// Passing threshold for `gradcheck`.
pub const GRADCHECK_THRESHOLD: f64 = 1e-5;
/// Finite-difference step for `gradcheck`.
pub const GRADCHECK_EPSILON: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "tacsim",
    version,
    about = "Soft-body tactile sensor simulator and learning harness"
)]
struct Cli {
    /// TOML config file; falls back to $TACSIM_CONFIG, then defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Cap on parallel worker threads (outputs do not depend on this).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled tap dataset (JSONL plus manifest).
    Gen(GenArgs),
    /// Train a model on a dataset (checkpoint, history CSV, manifest).
    Train(TrainArgs),
    /// Evaluate a checkpoint on probe rounds or a held-out dataset.
    Eval(EvalArgs),
    /// Run the randomization-factor sweep defined by the config file.
    Sweep(SweepArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s {
        "task1" => Ok(Task::RimAngle),
        "task2" => Ok(Task::EdgeOffset),
        "task3" => Ok(Task::PoleOffset),
        "joint" => Ok(Task::SimToSim),
        other => other.parse().map_err(|e: Error| e.to_string()),
    }
}

fn parse_rep(s: &str) -> std::result::Result<RepKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_angle_unit(s: &str) -> std::result::Result<AngleUnit, String> {
    match s {
        "radians" => Ok(AngleUnit::Radians),
        "degrees" => Ok(AngleUnit::Degrees),
        other => Err(format!("unknown angle unit '{other}' (radians or degrees)")),
    }
}

#[derive(Args)]
struct GenArgs {
    /// Task: task1/rim_angle, task2/edge_offset, task3/pole_offset, joint.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Episodes (joint task) or samples to generate.
    #[arg(long)]
    n: Option<usize>,
    /// Randomization factor r; multipliers are drawn from [1-r, 1+r].
    #[arg(long)]
    factor: Option<f64>,
    /// Representation: pin_positions, threshold, weighted_average.
    #[arg(long, value_parser = parse_rep)]
    rep: Option<RepKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSONL path.
    #[arg(long, default_value = "dataset.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSONL produced by `gen`).
    dataset: PathBuf,
    /// Expected task; rejected if the dataset disagrees.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Expected representation; rejected if the dataset disagrees.
    #[arg(long, value_parser = parse_rep)]
    rep: Option<RepKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path; the history CSV lands next to it.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    model: PathBuf,
    /// "pseudo-real" probe rounds or a held-out "dataset".
    #[arg(long, default_value = "pseudo-real")]
    env: String,
    /// Probe rounds (pseudo-real only).
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    rounds: usize,
    /// Held-out dataset path (dataset env only).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Probe environment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Unit for rim-angle errors: radians or degrees.
    #[arg(long, default_value = "radians", value_parser = parse_angle_unit)]
    angle_unit: AngleUnit,
    /// Metrics JSON path.
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep CSV path; the summary JSON lands next to it.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Task head to check.
    #[arg(long, default_value = "pole_offset", value_parser = parse_task)]
    task: Task,
    /// Input representation sizing the first layer.
    #[arg(long, default_value = "pin_positions", value_parser = parse_rep)]
    rep: RepKind,
    #[arg(long, default_value_t = GRADCHECK_EPSILON)]
    epsilon: f64,
    /// Corrupt this parameter's analytic gradient (negative control).
    #[arg(long)]
    inject_fault: Option<usize>,
}

/// Parses and runs a full command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(jobs) = cli.jobs {
        // Only the first global pool wins; worker count never changes output.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    let config = match FileConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(&config, args),
        Command::Train(args) => cmd_train(&config, args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(&config, args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct ArtifactDigest {
    file: String,
    sha256: String,
}

/// Reproducibility record written next to every artifact.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    root_seed: u64,
    config: serde_json::Value,
    artifacts: Vec<ArtifactDigest>,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn json_value<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    serde_json::to_value(value).map_err(|e| Error::Parse {
        path: "<manifest config>".to_string(),
        message: e.to_string(),
    })
}

/// Writes `<primary>.manifest.json` digesting every artifact.
fn write_manifest(
    command: &'static str,
    root_seed: u64,
    config: serde_json::Value,
    primary: &Path,
    artifacts: &[&Path],
) -> Result<PathBuf> {
    let mut digests = Vec::with_capacity(artifacts.len());
    for path in artifacts {
        digests.push(ArtifactDigest {
            file: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            sha256: sha256_hex(path)?,
        });
    }
    let manifest = RunManifest {
        tool: "tacsim",
        version: env!("CARGO_PKG_VERSION"),
        command,
        root_seed,
        config,
        artifacts: digests,
    };
    let path = PathBuf::from(format!("{}.manifest.json", primary.display()));
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

fn cmd_gen(config: &FileConfig, args: GenArgs) -> Result<i32> {
    let mut spec = config.gen_spec();
    if let Some(task) = args.task {
        spec.task = task;
    }
    if let Some(n) = args.n {
        spec.count = n;
    }
    if let Some(factor) = args.factor {
        spec.randomization.factor = factor;
    }
    if let Some(rep) = args.rep {
        spec.rep_kind = rep;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let written = generate_dataset(&spec, &args.out)?;
    write_manifest("gen", spec.seed, json_value(&spec)?, &args.out, &[&args.out])?;
    println!("wrote {written} samples to {}", args.out.display());
    Ok(0)
}

/// Training metadata stored in the manifest: everything but the data bytes,
/// which the dataset digest covers.
#[derive(Serialize)]
struct TrainSnapshot {
    task: Task,
    rep: RepKind,
    train: TrainConfig,
    dataset_sha256: String,
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

fn render_history(history: &crate::learn::TrainHistory) -> String {
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for (epoch, train_loss) in history.train_loss.iter().enumerate() {
        let val = history
            .val_loss
            .get(epoch)
            .map(|v| v.to_string())
            .unwrap_or_default();
        csv.push_str(&format!("{epoch},{train_loss},{val}\n"));
    }
    csv
}

fn cmd_train(config: &FileConfig, args: TrainArgs) -> Result<i32> {
    let samples = read_dataset(&args.dataset)?;
    let task = samples[0].task;
    let rep = samples[0].rep_kind;
    if let Some(expected) = args.task {
        if expected != task {
            return Err(Error::Config(format!(
                "dataset holds {task} samples, not {expected}"
            )));
        }
    }
    if let Some(expected) = args.rep {
        if expected != rep {
            return Err(Error::Config(format!(
                "dataset holds {} representations, not {}",
                rep.as_str(),
                expected.as_str()
            )));
        }
    }
    let set = to_labelled_set(&samples)?;

    let mut train_cfg = config.train.clone();
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    let mut model = init_model(rep.standard_len(), task, train_cfg.seed)?;
    let history = train_with_split(&mut model, &set, &train_cfg)?;

    save_model(&model, rep, &args.out)?;
    let hist = history_path(&args.out);
    fs::write(&hist, render_history(&history))
        .map_err(|e| Error::io(hist.display().to_string(), e))?;
    let snapshot = TrainSnapshot {
        task,
        rep,
        train: train_cfg.clone(),
        dataset_sha256: sha256_hex(&args.dataset)?,
    };
    write_manifest(
        "train",
        train_cfg.seed,
        json_value(&snapshot)?,
        &args.out,
        &[&args.out, &hist],
    )?;

    let last = history.train_loss.last().copied().unwrap_or(f64::NAN);
    match history.val_loss.last() {
        Some(val) => println!(
            "trained {} epochs: train loss {last}, val loss {val}",
            history.train_loss.len()
        ),
        None => println!("trained {} epochs: train loss {last}", history.train_loss.len()),
    }
    Ok(0)
}

#[derive(Serialize)]
struct ProbeMetrics {
    kind: &'static str,
    task: Task,
    representation: RepKind,
    rounds: usize,
    taps_per_round: usize,
    angle_unit: AngleUnit,
    env_seed: u64,
    #[serde(flatten)]
    report: RoundsReport,
}

#[derive(Serialize)]
struct DatasetMetrics {
    kind: &'static str,
    task: Task,
    representation: RepKind,
    samples: usize,
    #[serde(flatten)]
    report: MseReport,
}

fn write_metrics<T: Serialize>(metrics: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(metrics).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let (model, rep) = load_model(&args.model)?;
    match args.env.as_str() {
        "pseudo-real" => {
            if args.rounds == 0 {
                return Err(Error::Config("--rounds must be positive".into()));
            }
            let env = PseudoRealEnv::new(args.seed);
            let task = model.task();
            let mut report = crate::scenarios::pseudo_real_rounds(
                &env,
                &model,
                task,
                rep,
                args.rounds,
                taps_per_round(task),
            )?;
            if task == Task::RimAngle && args.angle_unit == AngleUnit::Degrees {
                let scale = 180.0 / std::f64::consts::PI;
                for m in &mut report.per_round_mae {
                    *m *= scale;
                }
                report.mae *= scale;
                report.std_dev *= scale;
            }
            println!("MAE {} (std {}) over {} rounds", report.mae, report.std_dev, args.rounds);
            let metrics = ProbeMetrics {
                kind: "probe_rounds",
                task,
                representation: rep,
                rounds: args.rounds,
                taps_per_round: taps_per_round(task),
                angle_unit: args.angle_unit,
                env_seed: args.seed,
                report,
            };
            write_metrics(&metrics, &args.out)?;
            write_manifest("eval", args.seed, json_value(&metrics)?, &args.out, &[&args.out])?;
            Ok(0)
        }
        "dataset" => {
            let data = args.data.ok_or_else(|| {
                Error::Config("--env dataset requires --data <JSONL>".into())
            })?;
            let samples = read_dataset(&data)?;
            if samples[0].task != model.task() || samples[0].rep_kind != rep {
                return Err(Error::Config(format!(
                    "dataset holds {}/{} but the model expects {}/{}",
                    samples[0].task,
                    samples[0].rep_kind.as_str(),
                    model.task(),
                    rep.as_str()
                )));
            }
            let set = to_labelled_set(&samples)?;
            let report = eval_mse(&model, &set)?;
            println!("pooled MSE {} over {} samples", report.pooled, set.len());
            let metrics = DatasetMetrics {
                kind: "dataset_mse",
                task: model.task(),
                representation: rep,
                samples: set.len(),
                report,
            };
            write_metrics(&metrics, &args.out)?;
            write_manifest("eval", args.seed, json_value(&metrics)?, &args.out, &[&args.out])?;
            Ok(0)
        }
        other => Err(Error::Config(format!(
            "unknown environment '{other}' (pseudo-real or dataset)"
        ))),
    }
}

fn cmd_sweep(config: &FileConfig, args: SweepArgs) -> Result<i32> {
    let sweep = config.sweep_config();
    let report = sweep_randomization(&sweep)?;
    write_sweep_csv(&report, &args.out)?;
    let summary = args.out.with_extension("json");
    write_report_json(&report, &summary)?;
    write_manifest(
        "sweep",
        sweep.env_seed,
        json_value(&sweep)?,
        &args.out,
        &[&args.out, &summary],
    )?;
    let failed: usize = report
        .cells
        .iter()
        .flat_map(|c| &c.per_seed)
        .filter(|o| o.error.is_some())
        .count();
    println!(
        "swept {} cells ({} seed runs failed) into {}",
        report.cells.len(),
        failed,
        args.out.display()
    );
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let width = args.rep.standard_len();
    let model = init_model(width, args.task, args.seed)?;
    // A small random probe batch exercises every head component.
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let rows = 4;
    let inputs: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..args.task.label_len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let set = LabelledSet::from_rows(&inputs, &targets)?;
    let report = gradient_check_with_fault(&model, &set, args.epsilon, args.seed, args.inject_fault)?;
    println!(
        "checked {} of {} parameters: max relative error {:e} at parameter {}",
        report.params_checked,
        model.param_count(),
        report.max_rel_err,
        report.worst_param
    );
    if report.max_rel_err < GRADCHECK_THRESHOLD {
        println!("gradient check passed (threshold {GRADCHECK_THRESHOLD:e})");
        Ok(0)
    } else {
        println!(
            "gradient check FAILED: parameter {} relative error {:e} exceeds {GRADCHECK_THRESHOLD:e}",
            report.worst_param, report.max_rel_err
        );
        Ok(1)
    }
}
