//! Tap scenarios: randomized dynamics, task geometry, seeded dataset
//! generation, and a hidden-parameter environment that stands in for a
//! physical sensor during transfer evaluation.
//!
//! Every episode derives its own seed from the root seed and episode index,
//! so generation parallelises freely and any sample can be regenerated
//! bit-exactly from its recorded metadata.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{Pose, RigidShape};
use crate::dynamics::{simulate_tap, DynamicsParams, TactileFrame};
use crate::error::{Error, Result};
use crate::learn::{LabelledSet, MlpModel, Task};
use crate::mesh::{generate_tip_mesh, TipMesh, DEFAULT_RINGS, DEFAULT_TIP_RADIUS};
use crate::representations::{encode_noisy, RepKind};

/// Deepest press below first touch, in mm.
pub const MAX_PRESS_DEPTH: f64 = 2.0;
/// Integration steps per recorded depth stage. A deliberate middle ground:
/// long enough that imprints carry the contact geometry (very short rollouts
/// leave the pins barely displaced), short enough that frames stay mildly
/// transient, so the recorded layouts still depend on the stiffness and
/// damping parameters we randomize. Fully settled frames are almost invariant
/// to those parameters and training on them generalizes no better.
pub const STEPS_PER_DEPTH: usize = 25;
/// Depth stages for single-tap task samples (the deepest frame is kept).
pub const TASK_DEPTH_STAGES: usize = 5;
/// Lateral offset range (± mm) for contact positions and edge/pole targets.
pub const OFFSET_RANGE: f64 = 5.0;
/// Per-axis rotation range (± degrees) for the joint task.
pub const ROTATION_RANGE_DEG: f64 = 30.0;
/// Number of distinct training angles on the rim-angle grid.
pub const RIM_ANGLE_GRID: usize = 1000;
/// Outer (rim) radius of the tapped ring, mm.
pub const RIM_RADIUS: f64 = 20.0;
/// Inner radius of the tapped ring, mm.
pub const RIM_INNER_RADIUS: f64 = 10.0;
/// Radial placement perturbation (± mm) for rim-angle training taps.
pub const RIM_PERTURBATION: f64 = 0.5;
/// Pole radius, mm.
pub const POLE_RADIUS: f64 = 2.5;
/// Hidden-parameter multiplier of the default stand-in environment: inside
/// the r=0.4 training range but outside r=0.2.
pub const DEFAULT_ENV_MULTIPLIER: f64 = 1.3;
/// Pin-position noise applied by the stand-in environment.
pub const DEFAULT_ENV_SIGMA: f64 = 1e-2;

/// Uniform multiplicative randomization of the three contact parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationSpec {
    pub baseline: DynamicsParams,
    /// Half-width r of the multiplier interval `[1-r, 1+r]`.
    pub factor: f64,
    /// Independent multiplier per parameter, or one shared draw.
    pub per_parameter: bool,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        RandomizationSpec {
            baseline: DynamicsParams::default(),
            factor: 0.0,
            per_parameter: true,
        }
    }
}

impl RandomizationSpec {
    pub fn with_factor(factor: f64) -> Self {
        RandomizationSpec {
            factor,
            ..RandomizationSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        if !(0.0..=1.0).contains(&self.factor) {
            return Err(Error::Config(format!(
                "randomization factor must lie in [0, 1], got {}",
                self.factor
            )));
        }
        Ok(())
    }
}

/// Draws multipliers in `[1-r, 1+r]` for `f_push`, `f_pull`, `damping` (in
/// that order); `tau` and `dt` pass through. Damping is clamped to `[0, 1]`.
pub fn randomize_params<R: Rng + ?Sized>(
    spec: &RandomizationSpec,
    rng: &mut R,
) -> Result<DynamicsParams> {
    spec.validate()?;
    let r = spec.factor;
    let draw = |rng: &mut R| rng.random_range(1.0 - r..=1.0 + r);
    let (m_push, m_pull, m_damp) = if spec.per_parameter {
        (draw(rng), draw(rng), draw(rng))
    } else {
        let m = draw(rng);
        (m, m, m)
    };
    Ok(DynamicsParams {
        f_push: spec.baseline.f_push * m_push,
        f_pull: spec.baseline.f_pull * m_pull,
        damping: (spec.baseline.damping * m_damp).clamp(0.0, 1.0),
        tau: spec.baseline.tau,
        dt: spec.baseline.dt,
    })
}

/// Mesh/tap resolution knobs shared by generation and evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub rings: usize,
    pub tip_radius: f64,
    pub max_press: f64,
    pub steps_per_depth: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            rings: DEFAULT_RINGS,
            tip_radius: DEFAULT_TIP_RADIUS,
            max_press: MAX_PRESS_DEPTH,
            steps_per_depth: STEPS_PER_DEPTH,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if self.rings == 0 || !(self.tip_radius > 0.0) {
            return Err(Error::Config("mesh needs rings >= 1 and a positive tip radius".into()));
        }
        if !(self.max_press > 0.0) || self.steps_per_depth == 0 {
            return Err(Error::Config(
                "tap needs a positive press depth and at least one step per stage".into(),
            ));
        }
        Ok(())
    }

    pub fn mesh(&self) -> TipMesh {
        generate_tip_mesh(self.rings, self.tip_radius)
    }
}

/// Evenly spaced press depths ending at `max_press`.
pub fn depth_profile(stages: usize, max_press: f64) -> Vec<f64> {
    (1..=stages)
        .map(|k| max_press * k as f64 / stages as f64)
        .collect()
}

/// The latent ground truth behind one episode, drawn before any simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    /// Joint task: object identity, per-axis rotation (deg), lateral object
    /// position (mm), and the number of recorded frames.
    Joint {
        object: usize,
        rotation: [f64; 3],
        position: [f64; 2],
        frames: usize,
    },
    /// Rim tap at a polar angle (radians) with a radial placement shift (mm).
    Rim { angle: f64, radius_shift: f64 },
    /// Straight edge passing at a lateral offset (mm) from the sensor centre.
    Edge { offset: f64 },
    /// Pole tip at a planar offset (mm) from the sensor centre.
    Pole { offset: [f64; 2] },
}

/// Objects of the joint task; the index is the identity label.
pub fn joint_object(index: usize) -> RigidShape {
    match index {
        0 => RigidShape::Cylinder {
            radius: 10.0,
            height: 20.0,
        },
        1 => RigidShape::Cuboid {
            half_extents: [10.0, 10.0, 10.0],
        },
        2 => RigidShape::Plane,
        _ => panic!("object index out of range"),
    }
}

/// Number of distinct joint-task objects.
pub const JOINT_OBJECT_COUNT: usize = 3;

/// Draws an episode's latent; this is the first use of the episode stream.
///
/// Draw order — joint: object, rotation x/y/z, position x/y, frame count;
/// rim: grid index, radius shift; edge: offset; pole: offset x/y.
pub fn draw_latent<R: Rng + ?Sized>(task: Task, rng: &mut R) -> Latent {
    match task {
        Task::SimToSim => {
            let object = rng.random_range(0..JOINT_OBJECT_COUNT);
            let mut rotation = [0.0; 3];
            for r in &mut rotation {
                *r = rng.random_range(-ROTATION_RANGE_DEG..=ROTATION_RANGE_DEG);
            }
            let mut position = [0.0; 2];
            for p in &mut position {
                *p = rng.random_range(-OFFSET_RANGE..=OFFSET_RANGE);
            }
            let frames = rng.random_range(3..=5);
            Latent::Joint {
                object,
                rotation,
                position,
                frames,
            }
        }
        Task::RimAngle => {
            let index = rng.random_range(0..RIM_ANGLE_GRID);
            let angle = TAU * index as f64 / RIM_ANGLE_GRID as f64;
            let radius_shift = rng.random_range(-RIM_PERTURBATION..=RIM_PERTURBATION);
            Latent::Rim {
                angle,
                radius_shift,
            }
        }
        Task::EdgeOffset => Latent::Edge {
            offset: rng.random_range(-OFFSET_RANGE..=OFFSET_RANGE),
        },
        Task::PoleOffset => {
            let mut offset = [0.0; 2];
            for p in &mut offset {
                *p = rng.random_range(-OFFSET_RANGE..=OFFSET_RANGE);
            }
            Latent::Pole { offset }
        }
    }
}

/// Head-space label for a latent: angles scale to `[0,1)`, positions and
/// rotations to `[-1,1]`, identity one-hot.
pub fn latent_label(latent: &Latent) -> Vec<f64> {
    match latent {
        Latent::Joint {
            object,
            rotation,
            position,
            ..
        } => {
            let mut label = Vec::with_capacity(8);
            label.extend(position.iter().map(|p| p / OFFSET_RANGE));
            label.extend(rotation.iter().map(|r| r / ROTATION_RANGE_DEG));
            let mut one_hot = [0.0; JOINT_OBJECT_COUNT];
            one_hot[*object] = 1.0;
            label.extend(one_hot);
            label
        }
        Latent::Rim { angle, .. } => vec![angle / TAU],
        Latent::Edge { offset } => vec![offset / OFFSET_RANGE],
        Latent::Pole { offset } => offset.iter().map(|p| p / OFFSET_RANGE).collect(),
    }
}

/// Shape and pose realizing a latent under the downward-facing sensor.
pub fn tap_geometry(latent: &Latent) -> (RigidShape, Pose) {
    match latent {
        Latent::Joint {
            object,
            rotation,
            position,
            ..
        } => {
            let shape = joint_object(*object);
            // Drop the object so its unrotated top surface sits at z = 0.
            let z = match shape {
                RigidShape::Cylinder { height, .. } => -0.5 * height,
                RigidShape::Cuboid { half_extents } => -half_extents[2],
                _ => 0.0,
            };
            (
                shape,
                Pose::new([position[0], position[1], z], *rotation),
            )
        }
        Latent::Rim {
            angle,
            radius_shift,
        } => {
            // Place the rim point at the sensor axis; the ring body points
            // back toward -angle, which makes the full angle identifiable.
            let rho = RIM_RADIUS + radius_shift;
            (
                RigidShape::Disc {
                    inner_radius: RIM_INNER_RADIUS,
                    outer_radius: RIM_RADIUS,
                },
                Pose::from_translation(-rho * angle.cos(), -rho * angle.sin(), 0.0),
            )
        }
        Latent::Edge { offset } => (
            RigidShape::HalfPlaneEdge,
            Pose::from_translation(*offset, 0.0, 0.0),
        ),
        Latent::Pole { offset } => (
            RigidShape::Pole {
                radius: POLE_RADIUS,
            },
            Pose::from_translation(offset[0], offset[1], 0.0),
        ),
    }
}

/// Runs the tap a latent describes and returns its recorded frames.
fn tap_frames(
    mesh: &TipMesh,
    latent: &Latent,
    params: &DynamicsParams,
    sim: &SimSettings,
) -> Result<Vec<TactileFrame>> {
    let stages = match latent {
        Latent::Joint { frames, .. } => *frames,
        _ => TASK_DEPTH_STAGES,
    };
    let (shape, pose) = tap_geometry(latent);
    simulate_tap(
        mesh,
        &shape,
        &pose,
        params,
        &depth_profile(stages, sim.max_press),
        sim.steps_per_depth,
    )
}

/// The recorded parameter draw (the fixed `tau`/`dt` are config, not data).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDraw {
    pub f_push: f64,
    pub f_pull: f64,
    pub damping: f64,
}

impl ParamDraw {
    pub fn of(params: &DynamicsParams) -> Self {
        ParamDraw {
            f_push: params.f_push,
            f_pull: params.f_pull,
            damping: params.damping,
        }
    }
}

/// One dataset row: a representation with its label and enough metadata
/// (task, episode seed, parameter draw) to regenerate it bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub task: Task,
    pub episode: usize,
    pub step: usize,
    pub rep_kind: RepKind,
    pub rep: Vec<f64>,
    pub label: Vec<f64>,
    pub params: ParamDraw,
    pub seed: u64,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.rep.len() != self.rep_kind.standard_len() {
            return Err(Error::SchemaMismatch(format!(
                "{} representation should have {} values, found {}",
                self.rep_kind.as_str(),
                self.rep_kind.standard_len(),
                self.rep.len()
            )));
        }
        if self.label.len() != self.task.label_len() {
            return Err(Error::SchemaMismatch(format!(
                "{} label should have {} values, found {}",
                self.task,
                self.task.label_len(),
                self.label.len()
            )));
        }
        if self
            .rep
            .iter()
            .chain(self.label.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::SchemaMismatch(
                "non-finite sample values".into(),
            ));
        }
        Ok(())
    }
}

/// Everything `generate_dataset` needs; serialised into run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub task: Task,
    pub rep_kind: RepKind,
    /// Episodes for the joint task (3–5 samples each), samples otherwise.
    pub count: usize,
    pub randomization: RandomizationSpec,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub sim: SimSettings,
}

impl GenSpec {
    pub fn new(task: Task, rep_kind: RepKind, count: usize, seed: u64) -> Self {
        GenSpec {
            task,
            rep_kind,
            count,
            randomization: RandomizationSpec::default(),
            noise_sigma: 0.0,
            seed,
            sim: SimSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        self.randomization.validate()?;
        self.sim.validate()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable per-episode seed; part of the dataset format.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(root.wrapping_add(splitmix64(index.wrapping_add(1))))
}

/// Simulates a drawn latent and packages one sample per recorded frame
/// (joint task) or the deepest frame only (single-target tasks).
fn realize_samples(
    spec: &GenSpec,
    mesh: &TipMesh,
    episode: usize,
    episode_seed: u64,
    latent: &Latent,
    params: &DynamicsParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    let frames = tap_frames(mesh, latent, params, &spec.sim)?;
    let rest = TactileFrame::new(mesh.rest_pin_projection(), 0);
    let label = latent_label(latent);
    let draw = ParamDraw::of(params);
    let kept: Vec<(usize, &TactileFrame)> = match latent {
        Latent::Joint { .. } => frames.iter().enumerate().collect(),
        _ => vec![(frames.len() - 1, frames.last().expect("non-empty profile"))],
    };
    let mut samples = Vec::with_capacity(kept.len());
    for (step, frame) in kept {
        let rep = encode_noisy(spec.rep_kind, frame, &rest, spec.noise_sigma, rng)?;
        samples.push(Sample {
            task: spec.task,
            episode,
            step,
            rep_kind: spec.rep_kind,
            rep: rep.into_values(),
            label: label.clone(),
            params: draw,
            seed: episode_seed,
        });
    }
    Ok(samples)
}

/// Generates one self-seeded episode. The stream order is: latent draw,
/// parameter multipliers, then per-frame pin noise; the joint task redraws
/// its pose once if the tap misses before giving up.
pub fn gen_episode(spec: &GenSpec, mesh: &TipMesh, episode: usize) -> Result<Vec<Sample>> {
    let episode_seed = derive_seed(spec.seed, episode as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let mut latent = draw_latent(spec.task, &mut rng);
    let params = randomize_params(&spec.randomization, &mut rng)?;
    if matches!(spec.task, Task::SimToSim) {
        // A wild pose can miss the object entirely; resample once.
        if let Err(Error::NoTouch { .. }) = tap_frames(mesh, &latent, &params, &spec.sim) {
            latent = draw_latent(spec.task, &mut rng);
        }
    }
    realize_samples(spec, mesh, episode, episode_seed, &latent, &params, &mut rng)
}

/// Generates all episodes (parallel, order-stable) and returns the samples.
pub fn generate_samples(spec: &GenSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mesh = spec.sim.mesh();
    let per_episode: Vec<Result<Vec<Sample>>> = (0..spec.count)
        .into_par_iter()
        .map(|i| gen_episode(spec, &mesh, i))
        .collect();
    let mut samples = Vec::new();
    for episode in per_episode {
        samples.extend(episode?);
    }
    Ok(samples)
}

/// Writes samples as JSON Lines.
pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    for sample in samples {
        let line = serde_json::to_string(sample).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Generates and writes a dataset, returning the number of lines.
pub fn generate_dataset(spec: &GenSpec, path: &Path) -> Result<usize> {
    let samples = generate_samples(spec)?;
    write_dataset(&samples, path)?;
    Ok(samples.len())
}

/// Reads and validates a JSONL dataset.
pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: format!("line {}: {}", lineno + 1, e),
        })?;
        sample.validate()?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: "dataset contains no samples".into(),
        });
    }
    Ok(samples)
}

/// Converts homogeneous samples into a training set (reps × labels).
pub fn to_labelled_set(samples: &[Sample]) -> Result<LabelledSet> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to train on".into()));
    }
    let task = samples[0].task;
    let rep_kind = samples[0].rep_kind;
    for s in samples {
        if s.task != task || s.rep_kind != rep_kind {
            return Err(Error::SchemaMismatch(format!(
                "mixed dataset: expected {task}/{}, found {}/{}",
                rep_kind.as_str(),
                s.task,
                s.rep_kind.as_str()
            )));
        }
        s.validate()?;
    }
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.rep.clone()).collect();
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.label.clone()).collect();
    LabelledSet::from_rows(&inputs, &targets)
}

/// A simulator with parameters the training side never sees, standing in for
/// a physical sensor. Probe taps get evaluation-side pin noise.
#[derive(Debug, Clone)]
pub struct PseudoRealEnv {
    hidden: DynamicsParams,
    noise_sigma: f64,
    seed: u64,
    sim: SimSettings,
}

impl PseudoRealEnv {
    /// Default stand-in: every randomised parameter scaled by 1.3, pin noise
    /// sigma 1e-2.
    pub fn new(seed: u64) -> Self {
        let base = DynamicsParams::default();
        let hidden = DynamicsParams {
            f_push: base.f_push * DEFAULT_ENV_MULTIPLIER,
            f_pull: base.f_pull * DEFAULT_ENV_MULTIPLIER,
            damping: (base.damping * DEFAULT_ENV_MULTIPLIER).clamp(0.0, 1.0),
            ..base
        };
        PseudoRealEnv {
            hidden,
            noise_sigma: DEFAULT_ENV_SIGMA,
            seed,
            sim: SimSettings::default(),
        }
    }

    /// Custom hidden dynamics, for tests and sweeps.
    pub fn with_hidden(hidden: DynamicsParams, noise_sigma: f64, seed: u64) -> Result<Self> {
        hidden.validate()?;
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        Ok(PseudoRealEnv {
            hidden,
            noise_sigma,
            seed,
            sim: SimSettings::default(),
        })
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Anything that maps a representation vector to a prediction.
pub trait Predictor {
    fn predict(&self, rep: &[f64]) -> Result<Vec<f64>>;
}

impl Predictor for MlpModel {
    fn predict(&self, rep: &[f64]) -> Result<Vec<f64>> {
        self.forward(rep)
    }
}

/// Test-only lookup predictor: returns the label recorded for a
/// representation, keyed by exact bit pattern.
pub struct LabelLookup {
    map: HashMap<Vec<u64>, Vec<f64>>,
}

impl LabelLookup {
    pub fn from_taps(rounds: &[Vec<(Vec<f64>, Vec<f64>)>]) -> Self {
        let mut map = HashMap::new();
        for round in rounds {
            for (rep, label) in round {
                map.insert(rep.iter().map(|v| v.to_bits()).collect(), label.clone());
            }
        }
        LabelLookup { map }
    }
}

impl Predictor for LabelLookup {
    fn predict(&self, rep: &[f64]) -> Result<Vec<f64>> {
        let key: Vec<u64> = rep.iter().map(|v| v.to_bits()).collect();
        self.map
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::SchemaMismatch("unknown representation".into()))
    }
}

/// Probe-tap latents for one round. Rim angles probe the fixed test grid
/// `{2πi/taps}` with no radial perturbation; edge and pole offsets draw
/// uniformly from the task range.
fn probe_latent<R: Rng + ?Sized>(task: Task, tap: usize, taps_per_round: usize, rng: &mut R) -> Result<Latent> {
    match task {
        Task::RimAngle => Ok(Latent::Rim {
            angle: TAU * tap as f64 / taps_per_round as f64,
            radius_shift: 0.0,
        }),
        Task::EdgeOffset => Ok(Latent::Edge {
            offset: rng.random_range(-OFFSET_RANGE..=OFFSET_RANGE),
        }),
        Task::PoleOffset => {
            let mut offset = [0.0; 2];
            for p in &mut offset {
                *p = rng.random_range(-OFFSET_RANGE..=OFFSET_RANGE);
            }
            Ok(Latent::Pole { offset })
        }
        Task::SimToSim => Err(Error::Config(
            "the joint task is evaluated on datasets, not probe rounds".into(),
        )),
    }
}

/// Generates the probe taps for every round: `(representation, label)` pairs
/// against the hidden dynamics, with evaluation-side pin noise.
pub fn pseudo_real_taps(
    env: &PseudoRealEnv,
    task: Task,
    rep_kind: RepKind,
    rounds: usize,
    taps_per_round: usize,
) -> Result<Vec<Vec<(Vec<f64>, Vec<f64>)>>> {
    if rounds == 0 || taps_per_round == 0 {
        return Err(Error::Config(
            "probe evaluation needs at least one round and one tap".into(),
        ));
    }
    env.sim.validate()?;
    let mesh = env.sim.mesh();
    let rest = TactileFrame::new(mesh.rest_pin_projection(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
    let mut all = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut round = Vec::with_capacity(taps_per_round);
        for tap in 0..taps_per_round {
            let latent = probe_latent(task, tap, taps_per_round, &mut rng)?;
            let frames = tap_frames(&mesh, &latent, &env.hidden, &env.sim)?;
            let frame = frames.last().expect("non-empty profile");
            let rep = encode_noisy(rep_kind, frame, &rest, env.noise_sigma, &mut rng)?;
            round.push((rep.into_values(), latent_label(&latent)));
        }
        all.push(round);
    }
    Ok(all)
}

/// Physical-unit absolute error of one prediction: wrapped angle distance in
/// radians for rim angles, mm otherwise (Euclidean for the pole).
pub fn absolute_error(task: Task, prediction: &[f64], label: &[f64]) -> Result<f64> {
    if prediction.len() != task.label_len() || label.len() != task.label_len() {
        return Err(Error::LengthMismatch {
            context: "prediction/label",
            expected: task.label_len(),
            actual: prediction.len().max(label.len()),
        });
    }
    match task {
        Task::RimAngle => {
            let d = ((prediction[0] - label[0]) * TAU).abs() % TAU;
            Ok(d.min(TAU - d))
        }
        Task::EdgeOffset => Ok((prediction[0] - label[0]).abs() * OFFSET_RANGE),
        Task::PoleOffset => {
            let dx = (prediction[0] - label[0]) * OFFSET_RANGE;
            let dy = (prediction[1] - label[1]) * OFFSET_RANGE;
            Ok(dx.hypot(dy))
        }
        Task::SimToSim => Err(Error::Config(
            "the joint task reports MSE, not a scalar absolute error".into(),
        )),
    }
}

/// Round-level absolute-error statistics from [`pseudo_real_rounds`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundsReport {
    pub per_round_mae: Vec<f64>,
    /// Mean of the per-round MAEs.
    pub mae: f64,
    /// Sample standard deviation (n-1) of the per-round MAEs.
    pub std_dev: f64,
}

/// Runs the probe protocol and scores a predictor against the hidden
/// environment: `rounds` rounds of `taps_per_round` taps each.
pub fn pseudo_real_rounds(
    env: &PseudoRealEnv,
    predictor: &dyn Predictor,
    task: Task,
    rep_kind: RepKind,
    rounds: usize,
    taps_per_round: usize,
) -> Result<RoundsReport> {
    let taps = pseudo_real_taps(env, task, rep_kind, rounds, taps_per_round)?;
    let mut per_round_mae = Vec::with_capacity(rounds);
    for round in &taps {
        let mut total = 0.0;
        for (rep, label) in round {
            let prediction = predictor.predict(rep)?;
            if prediction.len() != task.label_len() {
                return Err(Error::LengthMismatch {
                    context: "prediction",
                    expected: task.label_len(),
                    actual: prediction.len(),
                });
            }
            total += absolute_error(task, &prediction, label)?;
        }
        per_round_mae.push(total / round.len() as f64);
    }
    let mae = per_round_mae.iter().sum::<f64>() / per_round_mae.len() as f64;
    let std_dev = if per_round_mae.len() < 2 {
        0.0
    } else {
        let var = per_round_mae
            .iter()
            .map(|m| (m - mae) * (m - mae))
            .sum::<f64>()
            / (per_round_mae.len() - 1) as f64;
        var.sqrt()
    };
    Ok(RoundsReport {
        per_round_mae,
        mae,
        std_dev,
    })
}
