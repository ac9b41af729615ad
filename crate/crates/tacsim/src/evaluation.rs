//! Evaluation protocol: grouped MSE on labelled datasets, round-based MAE
//! against the stand-in environment, and the randomization-factor sweep that
//! trains one model per (representation, factor, seed) cell.
//!
//! Every artifact is a pure function of its config and seeds, so reruns are
//! byte-identical; wall-clock time is kept in memory only and never
//! serialised.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{eval_loss, init_model, predict_batch, train_with_split, LabelledSet, Task, TrainConfig};
use crate::representations::RepKind;
use crate::scenarios::{
    derive_seed, generate_samples, pseudo_real_rounds, to_labelled_set, GenSpec, Predictor,
    PseudoRealEnv, RandomizationSpec, RoundsReport, SimSettings,
};

/// Rounds in the probe protocol.
pub const DEFAULT_ROUNDS: usize = 10;
/// Probe taps per round on the rim-angle grid.
pub const RIM_PROBE_TAPS: usize = 12;
/// Probe taps per round for the offset tasks.
pub const TASK_PROBE_TAPS: usize = 10;
/// Stream constant separating test-set seeds from training seeds.
const TEST_SEED_STREAM: u64 = 0x7E57_5E7;

/// Probe taps per round for a task's standard evaluation.
pub fn taps_per_round(task: Task) -> usize {
    match task {
        Task::RimAngle => RIM_PROBE_TAPS,
        _ => TASK_PROBE_TAPS,
    }
}

/// How rim-angle errors are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

/// Named slice of the target vector with its own MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMse {
    pub name: String,
    pub components: usize,
    pub mse: f64,
}

/// Pooled and per-group MSE; the pooled value equals the component-count
/// weighted mean of the groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub pooled: f64,
    pub groups: Vec<GroupMse>,
}

/// Contiguous target groups of a task's label layout.
pub fn target_groups(task: Task) -> Vec<(&'static str, std::ops::Range<usize>)> {
    match task {
        Task::SimToSim => vec![
            ("position", 0..2),
            ("rotation", 2..5),
            ("identity", 5..8),
        ],
        Task::RimAngle => vec![("angle", 0..1)],
        Task::EdgeOffset => vec![("offset", 0..1)],
        Task::PoleOffset => vec![("offset", 0..2)],
    }
}

/// Mean squared error split by target group, plus the pooled value.
pub fn eval_mse(model: &crate::learn::MlpModel, set: &LabelledSet) -> Result<MseReport> {
    if set.len() == 0 {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let predictions = predict_batch(model, set)?;
    let targets = set.targets();
    let n = set.len() as f64;
    let mut groups = Vec::new();
    let mut sse_total = 0.0;
    let mut components_total = 0;
    for (name, range) in target_groups(model.task()) {
        let mut sse = 0.0;
        for row in 0..set.len() {
            for c in range.clone() {
                let d = predictions[[row, c]] - targets[[row, c]];
                sse += d * d;
            }
        }
        let components = range.len();
        sse_total += sse;
        components_total += components;
        groups.push(GroupMse {
            name: name.to_string(),
            components,
            mse: sse / (n * components as f64),
        });
    }
    Ok(MseReport {
        pooled: sse_total / (n * components_total as f64),
        groups,
    })
}

/// Runs the standard probe protocol (10 rounds, task-specific tap counts)
/// and reports MAE with its round-level standard deviation. Rim-angle
/// errors are wrapped angle distances, converted to the requested unit.
pub fn eval_rounds_mae(
    env: &PseudoRealEnv,
    predictor: &dyn Predictor,
    task: Task,
    rep_kind: RepKind,
    unit: AngleUnit,
) -> Result<RoundsReport> {
    let mut report = pseudo_real_rounds(
        env,
        predictor,
        task,
        rep_kind,
        DEFAULT_ROUNDS,
        taps_per_round(task),
    )?;
    if task == Task::RimAngle && unit == AngleUnit::Degrees {
        let scale = 180.0 / PI;
        for m in &mut report.per_round_mae {
            *m *= scale;
        }
        report.mae *= scale;
        report.std_dev *= scale;
    }
    Ok(report)
}

/// Full sweep definition; this and the seed list determine every output bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub task: Task,
    pub representations: Vec<RepKind>,
    pub factors: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Training episodes (joint task) or samples (others) per cell.
    pub count: usize,
    /// Dynamics the randomization multipliers scale.
    pub baseline: crate::dynamics::DynamicsParams,
    /// Independent multiplier per parameter, or one shared draw.
    pub per_parameter: bool,
    /// Pin noise applied to generated training data.
    pub noise_sigma: f64,
    /// Randomization factor of the held-out joint-task test set.
    pub test_factor: f64,
    /// Episodes in the held-out joint-task test set.
    pub test_count: usize,
    /// Probe environment seed, shared across cells so they are paired.
    pub env_seed: u64,
    pub train: TrainConfig,
    pub sim: SimSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            task: Task::EdgeOffset,
            representations: RepKind::ALL.to_vec(),
            factors: vec![0.0, 0.2, 0.4, 0.6],
            seeds: vec![0, 1, 2, 3, 4],
            count: 1000,
            baseline: crate::dynamics::DynamicsParams::default(),
            per_parameter: true,
            noise_sigma: crate::scenarios::DEFAULT_ENV_SIGMA,
            test_factor: 0.5,
            test_count: 200,
            env_seed: 1_000_003,
            train: TrainConfig::default(),
            sim: SimSettings::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.representations.is_empty() || self.factors.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "sweep needs at least one representation, factor, and seed".into(),
            ));
        }
        for &f in &self.factors {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "sweep factor must lie in [0, 1], got {f}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.test_factor) {
            return Err(Error::Config(format!(
                "test factor must lie in [0, 1], got {}",
                self.test_factor
            )));
        }
        if self.count == 0 || (self.task == Task::SimToSim && self.test_count == 0) {
            return Err(Error::Config("sweep sample counts must be positive".into()));
        }
        self.baseline.validate()?;
        self.train.validate()?;
        self.sim.validate()
    }

    /// The metric each cell reports.
    pub fn metric(&self) -> &'static str {
        match self.task {
            Task::SimToSim => "pooled_mse",
            _ => "mae",
        }
    }
}

/// One seed's outcome within a cell: a value, or the error that replaced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub value: Option<f64>,
    /// Round-level standard deviation (probe protocol only).
    pub round_std: Option<f64>,
    pub error: Option<String>,
}

/// Aggregated (representation, factor) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub representation: RepKind,
    pub factor: f64,
    pub per_seed: Vec<SeedOutcome>,
    /// Mean over seeds that produced a value.
    pub mean: Option<f64>,
    /// Sample standard deviation over those seeds.
    pub std_dev: Option<f64>,
}

/// Sweep results; serialises without the wall-clock so artifacts depend on
/// nothing but config and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub metric: String,
    pub train_count: usize,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellStat>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Mean and sample standard deviation of the successful values.
pub fn aggregate(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    if ok.is_empty() {
        return (None, None);
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let std = if ok.len() < 2 {
        None
    } else {
        let var =
            ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (ok.len() - 1) as f64;
        Some(var.sqrt())
    };
    (Some(mean), std)
}

/// Trains and scores one (representation, factor, seed) cell.
fn run_cell(
    config: &SweepConfig,
    rep: RepKind,
    factor: f64,
    seed: u64,
) -> Result<(f64, Option<f64>)> {
    let gen = GenSpec {
        task: config.task,
        rep_kind: rep,
        count: config.count,
        randomization: RandomizationSpec {
            baseline: config.baseline,
            factor,
            per_parameter: config.per_parameter,
        },
        noise_sigma: config.noise_sigma,
        seed,
        sim: config.sim.clone(),
    };
    let samples = generate_samples(&gen)?;
    let set = to_labelled_set(&samples)?;
    let mut model = init_model(rep.standard_len(), config.task, seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    train_with_split(&mut model, &set, &train_cfg)?;

    match config.task {
        Task::SimToSim => {
            // One fixed benchmark set shared by every cell: training seeds
            // then differ only in data draw and initialization, so per-seed
            // spread measures training stochasticity rather than test-set
            // luck. Derived from env_seed to stay clear of training streams.
            let test = GenSpec {
                randomization: RandomizationSpec {
                    baseline: config.baseline,
                    factor: config.test_factor,
                    per_parameter: config.per_parameter,
                },
                count: config.test_count,
                seed: derive_seed(config.env_seed, TEST_SEED_STREAM),
                ..gen
            };
            let test_set = to_labelled_set(&generate_samples(&test)?)?;
            Ok((eval_loss(&model, &test_set)?, None))
        }
        task => {
            let env = PseudoRealEnv::new(config.env_seed);
            let report = eval_rounds_mae(&env, &model, task, rep, AngleUnit::Radians)?;
            Ok((report.mae, Some(report.std_dev)))
        }
    }
}

/// Runs every cell of the sweep in parallel. Training failures mark their
/// seed's outcome instead of aborting; cells are sorted by key before the
/// report is assembled.
pub fn sweep_randomization(config: &SweepConfig) -> Result<EvalReport> {
    config.validate()?;
    let started = Instant::now();

    let mut keys: Vec<(RepKind, f64)> = Vec::new();
    for &rep in &config.representations {
        for &factor in &config.factors {
            keys.push((rep, factor));
        }
    }
    keys.sort_by(|a, b| {
        a.0.as_str()
            .cmp(b.0.as_str())
            .then(a.1.partial_cmp(&b.1).expect("validated factors"))
    });
    keys.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);

    let jobs: Vec<(RepKind, f64, u64)> = keys
        .iter()
        .flat_map(|&(rep, factor)| config.seeds.iter().map(move |&s| (rep, factor, s)))
        .collect();
    let outcomes: Vec<SeedOutcome> = jobs
        .into_par_iter()
        .map(|(rep, factor, seed)| match run_cell(config, rep, factor, seed) {
            Ok((value, round_std)) => SeedOutcome {
                seed,
                value: Some(value),
                round_std,
                error: None,
            },
            Err(e) => SeedOutcome {
                seed,
                value: None,
                round_std: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let cells = keys
        .iter()
        .zip(outcomes.chunks(config.seeds.len()))
        .map(|(&(representation, factor), per_seed)| {
            let values: Vec<Option<f64>> = per_seed.iter().map(|o| o.value).collect();
            let (mean, std_dev) = aggregate(&values);
            CellStat {
                representation,
                factor,
                per_seed: per_seed.to_vec(),
                mean,
                std_dev,
            }
        })
        .collect();

    Ok(EvalReport {
        task: config.task,
        metric: config.metric().to_string(),
        train_count: config.count,
        seeds: config.seeds.clone(),
        cells,
        wall_clock: started.elapsed(),
    })
}

/// Renders the long-format CSV: one row per seed value (plus its round
/// spread), `failed` rows for errored seeds, and `_mean`/`_std` rows with an
/// empty seed column for each cell's aggregate.
pub fn render_sweep_csv(report: &EvalReport) -> String {
    let mut out = String::from("task,representation,factor,seed,metric,value\n");
    for cell in &report.cells {
        let head = format!("{},{},{}", report.task, cell.representation.as_str(), cell.factor);
        for outcome in &cell.per_seed {
            match outcome.value {
                Some(v) => {
                    out.push_str(&format!("{head},{},{},{}\n", outcome.seed, report.metric, v));
                    if let Some(rs) = outcome.round_std {
                        out.push_str(&format!("{head},{},round_std,{}\n", outcome.seed, rs));
                    }
                }
                None => out.push_str(&format!("{head},{},failed,nan\n", outcome.seed)),
            }
        }
        if let Some(mean) = cell.mean {
            out.push_str(&format!("{head},,{}_mean,{}\n", report.metric, mean));
        }
        if let Some(std) = cell.std_dev {
            out.push_str(&format!("{head},,{}_std,{}\n", report.metric, std));
        }
    }
    out
}

/// Writes the sweep CSV.
pub fn write_sweep_csv(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, render_sweep_csv(report))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the summary JSON mirror of the report.
pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}
