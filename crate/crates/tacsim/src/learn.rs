//! Dense prediction networks: seeded initialization, exact gradients,
//! mini-batch training, and finite-difference gradient verification.
//!
//! The standard architecture is four ReLU hidden layers of width 500 between
//! a representation input and a task-specific head. Toy shapes for tests and
//! experiments go through [`MlpModel::with_widths`].

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use ndarray::{azip, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::representations::RepKind;

/// Width of every hidden layer in the standard architecture.
pub const HIDDEN_WIDTH: usize = 500;
/// Number of hidden layers in the standard architecture.
pub const HIDDEN_LAYERS: usize = 4;
/// Mini-batch losses above this value abort training as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Checkpoint schema version written by [`save_model`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// Nets with at most this many parameters are finite-difference checked
/// exhaustively; larger nets use a seeded random subset.
const GRADCHECK_EXHAUSTIVE: usize = 10_000;
/// Subset size used when a net is too large for an exhaustive check.
const GRADCHECK_SUBSET: usize = 1000;
/// Denominator floor for finite-difference relative errors. Gradients below
/// this magnitude are compared with absolute tolerance `floor * threshold`,
/// which keeps rounding noise in the difference quotient from dominating.
const GRADCHECK_FLOOR: f64 = 1e-4;

/// Rows processed per forward pass when evaluating whole sets.
const EVAL_CHUNK: usize = 512;

/// Pose head width for the joint regression/classification task.
const POSE_OUTPUTS: usize = 2 + 3; // planar contact position + rotation angles
/// Number of object classes in the joint task.
const CLASS_OUTPUTS: usize = 3;

/// Prediction targets a network can be trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Joint contact-pose regression plus three-way object classification.
    SimToSim,
    /// Angular position around a circular rim, scaled to `[0, 1)`.
    RimAngle,
    /// Lateral offset from a straight edge, scaled to `[-1, 1]`.
    EdgeOffset,
    /// Planar offset from a vertical pole, scaled to `[-1, 1]^2`.
    PoleOffset,
}

/// Head nonlinearity applied to the final affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadKind {
    /// Bounded regression in `(-1, 1)` per component.
    Tanh,
    /// Bounded regression in `(0, 1)`.
    Sigmoid,
    /// Five linear pose outputs followed by a softmax over three classes.
    PoseClass,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::SimToSim,
        Task::RimAngle,
        Task::EdgeOffset,
        Task::PoleOffset,
    ];

    /// Number of target components (equals the network output width).
    pub fn output_len(self) -> usize {
        match self {
            Task::SimToSim => POSE_OUTPUTS + CLASS_OUTPUTS,
            Task::RimAngle | Task::EdgeOffset => 1,
            Task::PoleOffset => 2,
        }
    }

    /// Alias for [`Task::output_len`]: labels and outputs share a schema.
    pub fn label_len(self) -> usize {
        self.output_len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SimToSim => "sim_to_sim",
            Task::RimAngle => "rim_angle",
            Task::EdgeOffset => "edge_offset",
            Task::PoleOffset => "pole_offset",
        }
    }

    fn head(self) -> HeadKind {
        match self {
            Task::SimToSim => HeadKind::PoseClass,
            Task::RimAngle => HeadKind::Sigmoid,
            Task::EdgeOffset | Task::PoleOffset => HeadKind::Tanh,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task '{s}'")))
    }
}

/// Fully connected network with ReLU hidden layers and a task head.
///
/// Weights for layer `l` have shape `(widths[l], widths[l+1])` and are stored
/// row-major; flat parameter indexing (see [`MlpModel::param`]) walks layer 0
/// weights, layer 0 biases, layer 1 weights, and so on.
#[derive(Debug, Clone)]
pub struct MlpModel {
    task: Task,
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

fn validate_widths(task: Task, widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config(
            "network needs at least an input and an output layer".into(),
        ));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Config("zero-width network layer".into()));
    }
    if *widths.last().unwrap() != task.output_len() {
        return Err(Error::Config(format!(
            "output width {} does not match task {} (expects {})",
            widths.last().unwrap(),
            task,
            task.output_len()
        )));
    }
    Ok(())
}

/// Builds the standard architecture for a representation of `input_width`.
///
/// The width must match one of the known representation encodings; weights
/// draw from the uniform Glorot range `±sqrt(6 / (fan_in + fan_out))` with a
/// seeded generator and biases start at zero.
pub fn init_model(input_width: usize, task: Task, seed: u64) -> Result<MlpModel> {
    let known = RepKind::ALL.map(|k| k.standard_len());
    if !known.contains(&input_width) {
        return Err(Error::Config(format!(
            "input width {input_width} does not match any representation (expected one of {known:?})"
        )));
    }
    let mut widths = vec![input_width];
    widths.extend(std::iter::repeat(HIDDEN_WIDTH).take(HIDDEN_LAYERS));
    widths.push(task.output_len());
    MlpModel::with_widths(task, &widths, seed)
}

impl MlpModel {
    /// Builds a seeded Glorot-initialized net with arbitrary layer widths.
    pub fn with_widths(task: Task, widths: &[usize], seed: u64) -> Result<Self> {
        validate_widths(task, widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (nin, nout) = (pair[0], pair[1]);
            let bound = (6.0 / (nin + nout) as f64).sqrt();
            let data: Vec<f64> = (0..nin * nout)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            weights.push(Array2::from_shape_vec((nin, nout), data).expect("sized above"));
            biases.push(Array1::zeros(nout));
        }
        Ok(MlpModel {
            task,
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    /// All-zero weights and biases; useful as a neutral fixture.
    pub fn zeroed(task: Task, widths: &[usize]) -> Result<Self> {
        let mut model = MlpModel::with_widths(task, widths, 0)?;
        for w in &mut model.weights {
            w.fill(0.0);
        }
        Ok(model)
    }

    fn from_parts(
        task: Task,
        widths: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        validate_widths(task, &widths)?;
        for (l, pair) in widths.windows(2).enumerate() {
            if weights[l].dim() != (pair[0], pair[1]) || biases[l].len() != pair[1] {
                return Err(Error::SchemaMismatch(format!(
                    "layer {l} parameter shapes do not match widths {widths:?}"
                )));
            }
            if weights[l].iter().chain(biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(Error::SchemaMismatch(format!(
                    "layer {l} contains non-finite parameters"
                )));
            }
        }
        Ok(MlpModel {
            task,
            widths,
            weights,
            biases,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_len(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Replaces one layer's parameters; shapes must match the declared widths.
    pub fn set_layer(&mut self, layer: usize, weights: Array2<f64>, biases: Array1<f64>) -> Result<()> {
        if layer >= self.layers() {
            return Err(Error::Config(format!(
                "layer {layer} out of range for {} layers",
                self.layers()
            )));
        }
        let expect = (self.widths[layer], self.widths[layer + 1]);
        if weights.dim() != expect || biases.len() != expect.1 {
            return Err(Error::Config(format!(
                "layer {layer} expects weights {expect:?}, got {:?} with {} biases",
                weights.dim(),
                biases.len()
            )));
        }
        self.weights[layer] = weights.as_standard_layout().to_owned();
        self.biases[layer] = biases;
        Ok(())
    }

    pub fn layer_weights(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn layer_biases(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for l in 0..self.layers() {
            let nw = self.widths[l] * self.widths[l + 1];
            if index < nw {
                return (l, false, index);
            }
            index -= nw;
            if index < self.widths[l + 1] {
                return (l, true, index);
            }
            index -= self.widths[l + 1];
        }
        panic!("parameter index out of range");
    }

    /// Reads the parameter at a flat index.
    pub fn param(&self, index: usize) -> f64 {
        let (l, is_bias, off) = self.locate(index);
        if is_bias {
            self.biases[l][off]
        } else {
            let cols = self.widths[l + 1];
            self.weights[l][[off / cols, off % cols]]
        }
    }

    /// Writes the parameter at a flat index.
    pub fn set_param(&mut self, index: usize, value: f64) {
        let (l, is_bias, off) = self.locate(index);
        if is_bias {
            self.biases[l][off] = value;
        } else {
            let cols = self.widths[l + 1];
            self.weights[l][[off / cols, off % cols]] = value;
        }
    }

    fn apply_head(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.task.head() {
            HeadKind::Tanh => z.mapv(f64::tanh),
            HeadKind::Sigmoid => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            HeadKind::PoseClass => {
                let mut out = z.clone();
                for mut row in out.slice_mut(s![.., POSE_OUTPUTS..]).rows_mut() {
                    // Stable softmax: shift by the row max before exponentiating.
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|v| (v - m).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                out
            }
        }
    }

    fn head_backward(&self, dy: Array2<f64>, out: &Array2<f64>) -> Array2<f64> {
        match self.task.head() {
            HeadKind::Tanh => dy * &out.mapv(|a| 1.0 - a * a),
            HeadKind::Sigmoid => dy * &out.mapv(|a| a * (1.0 - a)),
            HeadKind::PoseClass => {
                // Pose components are linear; the class block routes through
                // the softmax Jacobian s_i * (g_i - sum_j g_j s_j).
                let mut dz = dy;
                let probs = out.slice(s![.., POSE_OUTPUTS..]).to_owned();
                for (mut g, s_row) in dz
                    .slice_mut(s![.., POSE_OUTPUTS..])
                    .rows_mut()
                    .into_iter()
                    .zip(probs.rows())
                {
                    let dot: f64 = g.iter().zip(s_row.iter()).map(|(gi, si)| gi * si).sum();
                    for (gi, &si) in g.iter_mut().zip(s_row.iter()) {
                        *gi = si * (*gi - dot);
                    }
                }
                dz
            }
        }
    }

    /// Runs all layers on a batch, returning pre-activations and activations
    /// (`acts[0]` is the input, `acts.last()` the head output).
    fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
        if input.ncols() != self.input_width() {
            return Err(Error::LengthMismatch {
                context: "network input",
                expected: self.input_width(),
                actual: input.ncols(),
            });
        }
        check_finite(input, 0)?;
        let mut zs = Vec::with_capacity(self.layers());
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers() + 1);
        acts.push(input.to_owned());
        for l in 0..self.layers() {
            let z = acts[l].dot(&self.weights[l]) + &self.biases[l];
            check_finite(z.view(), l + 1)?;
            let a = if l + 1 < self.layers() {
                z.mapv(|v| v.max(0.0))
            } else {
                self.apply_head(&z)
            };
            zs.push(z);
            acts.push(a);
        }
        Ok((zs, acts))
    }

    /// Evaluates one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row shape matches data");
        let (_, acts) = self.forward_batch(x.view())?;
        Ok(acts.last().unwrap().row(0).to_vec())
    }
}

/// Layer activations must stay finite; `layer` 0 is the input itself.
fn check_finite(values: ArrayView2<'_, f64>, layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivations { layer })
    }
}

/// Loss gradients laid out like the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    /// Reads the gradient at a flat parameter index (same order as the model).
    /// Matrix products can come back in either memory order, so indexing goes
    /// through logical (row, column) coordinates rather than a raw slice.
    pub fn param(&self, mut index: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let nw = w.len();
            if index < nw {
                return w[[index / w.ncols(), index % w.ncols()]];
            }
            index -= nw;
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }
}

/// Mean squared error pooled over every output component.
pub fn loss(outputs: &[f64], targets: &[f64], task: Task) -> Result<f64> {
    let k = task.output_len();
    if outputs.len() != k {
        return Err(Error::LengthMismatch {
            context: "loss outputs",
            expected: k,
            actual: outputs.len(),
        });
    }
    if targets.len() != k {
        return Err(Error::LengthMismatch {
            context: "loss targets",
            expected: k,
            actual: targets.len(),
        });
    }
    let sse: f64 = outputs
        .iter()
        .zip(targets)
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    Ok(sse / k as f64)
}

/// Computes the pooled-MSE batch loss and its exact parameter gradients.
///
/// ReLU uses subgradient 0 at the kink, matching the forward pass; non-finite
/// activations abort with the offending layer index.
pub fn backward(model: &MlpModel, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<(f64, Gradients)> {
    if targets.ncols() != model.output_len() {
        return Err(Error::LengthMismatch {
            context: "batch targets",
            expected: model.output_len(),
            actual: targets.ncols(),
        });
    }
    if inputs.nrows() != targets.nrows() {
        return Err(Error::LengthMismatch {
            context: "batch rows",
            expected: inputs.nrows(),
            actual: targets.nrows(),
        });
    }
    if inputs.nrows() == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let (zs, acts) = model.forward_batch(inputs)?;
    let out = acts.last().unwrap();
    let scale = (inputs.nrows() * model.output_len()) as f64;
    let diff = out - &targets;
    let batch_loss = diff.iter().map(|d| d * d).sum::<f64>() / scale;
    let dy = diff * (2.0 / scale);

    let mut dz = model.head_backward(dy, out);
    let mut grads_w: Vec<Array2<f64>> = Vec::with_capacity(model.layers());
    let mut grads_b: Vec<Array1<f64>> = Vec::with_capacity(model.layers());
    for l in (0..model.layers()).rev() {
        grads_w.push(acts[l].t().dot(&dz));
        grads_b.push(dz.sum_axis(Axis(0)));
        if l > 0 {
            let mut da = dz.dot(&model.weights[l].t());
            azip!((d in &mut da, &z in &zs[l - 1]) if z <= 0.0 { *d = 0.0 });
            dz = da;
        }
    }
    grads_w.reverse();
    grads_b.reverse();
    Ok((
        batch_loss,
        Gradients {
            weights: grads_w,
            biases: grads_b,
        },
    ))
}

/// Representation rows paired with prediction targets.
#[derive(Debug, Clone)]
pub struct LabelledSet {
    inputs: Array2<f64>,
    targets: Array2<f64>,
}

impl LabelledSet {
    pub fn from_arrays(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Config("empty labelled set".into()));
        }
        if inputs.nrows() != targets.nrows() {
            return Err(Error::LengthMismatch {
                context: "labelled set rows",
                expected: inputs.nrows(),
                actual: targets.nrows(),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite values in labelled set".into()));
        }
        Ok(LabelledSet {
            inputs: inputs.as_standard_layout().to_owned(),
            targets: targets.as_standard_layout().to_owned(),
        })
    }

    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                context: "labelled set rows",
                expected: inputs.len().max(1),
                actual: targets.len(),
            });
        }
        let iw = inputs[0].len();
        let tw = targets[0].len();
        let mut xi = Vec::with_capacity(inputs.len() * iw);
        let mut ti = Vec::with_capacity(targets.len() * tw);
        for (x, t) in inputs.iter().zip(targets) {
            if x.len() != iw {
                return Err(Error::LengthMismatch {
                    context: "labelled set input row",
                    expected: iw,
                    actual: x.len(),
                });
            }
            if t.len() != tw {
                return Err(Error::LengthMismatch {
                    context: "labelled set target row",
                    expected: tw,
                    actual: t.len(),
                });
            }
            xi.extend_from_slice(x);
            ti.extend_from_slice(t);
        }
        LabelledSet::from_arrays(
            Array2::from_shape_vec((inputs.len(), iw), xi).expect("sized above"),
            Array2::from_shape_vec((targets.len(), tw), ti).expect("sized above"),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_width(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn target_width(&self) -> usize {
        self.targets.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.targets.view()
    }

    /// Copies out the rows selected by `order`.
    pub fn subset(&self, order: &[usize]) -> Result<LabelledSet> {
        if order.iter().any(|&i| i >= self.len()) {
            return Err(Error::Config("subset index out of range".into()));
        }
        LabelledSet::from_arrays(
            gather_rows(&self.inputs, order),
            gather_rows(&self.targets, order),
        )
    }
}

fn gather_rows(src: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((order.len(), src.ncols()));
    for (r, &i) in order.iter().enumerate() {
        out.row_mut(r).assign(&src.row(i));
    }
    out
}

/// Content-addressed row order: rows sort by the digest of their bytes, so
/// training is invariant to how the caller happened to order the set.
fn canonical_order(set: &LabelledSet) -> Vec<usize> {
    let mut keyed: Vec<([u8; 32], usize)> = (0..set.len())
        .map(|i| {
            let mut h = Sha256::new();
            for v in set.inputs.row(i) {
                h.update(v.to_bits().to_le_bytes());
            }
            for v in set.targets.row(i) {
                h.update(v.to_bits().to_le_bytes());
            }
            (h.finalize().into(), i)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Mini-batch gradient-descent settings.
///
/// On unit-scale inputs the defaults are stable for step sizes in roughly
/// `1e-4..=1e-2`; larger steps risk divergence on deep ReLU stacks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub step_size: f64,
    pub epochs: usize,
    /// Seed for the per-epoch shuffle stream.
    pub seed: u64,
    /// Early-stopping patience in epochs; `0` disables early stopping.
    pub patience: usize,
    /// Fraction of data callers should hold out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            step_size: 1e-3,
            epochs: 200,
            seed: 0,
            patience: 0,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!(
                "step size must be finite and positive, got {}",
                self.step_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch loss traces from [`train`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean of mini-batch losses, each measured before its update.
    pub train_loss: Vec<f64>,
    /// Full validation loss after each epoch (empty without a validation set).
    pub val_loss: Vec<f64>,
    /// Epoch whose weights the returned model carries.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains in place with plain mini-batch gradient descent.
///
/// Rows are first put in canonical content order, then reshuffled each epoch
/// from the seeded stream, so identical data yields identical weights no
/// matter how the caller ordered it. With `patience > 0` a validation set is
/// required; the model is left at its best-validation snapshot.
pub fn train(
    model: &mut MlpModel,
    train_set: &LabelledSet,
    val_set: Option<&LabelledSet>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_set.input_width() != model.input_width() {
        return Err(Error::LengthMismatch {
            context: "training inputs",
            expected: model.input_width(),
            actual: train_set.input_width(),
        });
    }
    if train_set.target_width() != model.output_len() {
        return Err(Error::LengthMismatch {
            context: "training targets",
            expected: model.output_len(),
            actual: train_set.target_width(),
        });
    }
    if let Some(val) = val_set {
        if val.input_width() != model.input_width() || val.target_width() != model.output_len() {
            return Err(Error::LengthMismatch {
                context: "validation set widths",
                expected: model.input_width(),
                actual: val.input_width(),
            });
        }
    }
    if config.patience > 0 && val_set.is_none() {
        return Err(Error::Config(
            "early stopping requires a validation set".into(),
        ));
    }

    let order = canonical_order(train_set);
    let inputs = gather_rows(&train_set.inputs, &order);
    let targets = gather_rows(&train_set.targets, &order);
    let n = inputs.nrows();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut index: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Vec<Array2<f64>>, Vec<Array1<f64>>)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        index.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for chunk in index.chunks(config.batch_size) {
            let xb = gather_rows(&inputs, chunk);
            let tb = gather_rows(&targets, chunk);
            let (batch_loss, grads) = backward(model, xb.view(), tb.view())?;
            if !batch_loss.is_finite() || batch_loss > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            weighted_loss += batch_loss * chunk.len() as f64;
            for l in 0..model.layers() {
                model.weights[l].scaled_add(-config.step_size, &grads.weights[l]);
                model.biases[l].scaled_add(-config.step_size, &grads.biases[l]);
            }
        }
        history.train_loss.push(weighted_loss / n as f64);

        if let Some(val) = val_set {
            let vl = eval_loss(model, val)?;
            history.val_loss.push(vl);
            if config.patience > 0 {
                let improved = best.as_ref().is_none_or(|(b, ..)| vl < *b);
                if improved {
                    best = Some((vl, epoch, model.weights.clone(), model.biases.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.patience {
                        history.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }

    if let Some((_, epoch, w, b)) = best {
        model.weights = w;
        model.biases = b;
        history.best_epoch = epoch;
    } else {
        history.best_epoch = history.train_loss.len().saturating_sub(1);
    }
    Ok(history)
}

/// Trains after carving off `config.validation_fraction` of the rows as a
/// validation set. The split shuffles the canonical content order with its
/// own seeded stream, so it is deterministic in (data, seed) and independent
/// of the caller's row order. A fraction of zero trains on everything.
pub fn train_with_split(
    model: &mut MlpModel,
    set: &LabelledSet,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if config.validation_fraction == 0.0 {
        return train(model, set, None, config);
    }
    let mut order = canonical_order(set);
    // Decorrelated from the epoch-shuffle stream, which also starts at seed.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x56A1_1DA7E);
    order.shuffle(&mut rng);
    let n_val = ((set.len() as f64 * config.validation_fraction).round() as usize)
        .clamp(1, set.len() - 1);
    let val = set.subset(&order[..n_val])?;
    let rest = set.subset(&order[n_val..])?;
    train(model, &rest, Some(&val), config)
}

/// Pooled MSE of the model over a whole set.
pub fn eval_loss(model: &MlpModel, set: &LabelledSet) -> Result<f64> {
    let mut sse = 0.0;
    for (xc, tc) in set
        .inputs
        .axis_chunks_iter(Axis(0), EVAL_CHUNK)
        .zip(set.targets.axis_chunks_iter(Axis(0), EVAL_CHUNK))
    {
        let (_, acts) = model.forward_batch(xc)?;
        let out = acts.last().unwrap();
        sse += out
            .iter()
            .zip(tc.iter())
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>();
    }
    Ok(sse / (set.len() * set.target_width()) as f64)
}

/// Model outputs for every row of a set.
pub fn predict_batch(model: &MlpModel, set: &LabelledSet) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((set.len(), model.output_len()));
    let mut row = 0;
    for xc in set.inputs.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        let (_, acts) = model.forward_batch(xc)?;
        let y = acts.last().unwrap();
        out.slice_mut(s![row..row + y.nrows(), ..]).assign(y);
        row += y.nrows();
    }
    Ok(out)
}

/// Worst analytic/finite-difference disagreement found by [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the parameter with the worst disagreement.
    pub worst_param: usize,
    pub params_checked: usize,
}

/// Compares analytic gradients against central finite differences and reports
/// the worst relative error with its parameter index.
///
/// Nets with more than 10^4 parameters are probed on a seeded 1000-parameter
/// subset; smaller nets are checked exhaustively. Relative error floors at
/// [`GRADCHECK_FLOOR`] so that rounding noise on near-zero gradients does not
/// register as disagreement.
pub fn gradient_check(
    model: &MlpModel,
    set: &LabelledSet,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    gradient_check_with_fault(model, set, epsilon, seed, None)
}

/// [`gradient_check`] with an optional deliberate corruption of one analytic
/// gradient — a negative control proving the checker catches wrong gradients.
pub fn gradient_check_with_fault(
    model: &MlpModel,
    set: &LabelledSet,
    epsilon: f64,
    seed: u64,
    fault: Option<usize>,
) -> Result<GradCheckReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference epsilon must be positive, got {epsilon}"
        )));
    }
    let (_, grads) = backward(model, set.inputs(), set.targets())?;
    let count = model.param_count();
    let mut chosen: Vec<usize> = if count <= GRADCHECK_EXHAUSTIVE {
        (0..count).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, count, GRADCHECK_SUBSET).into_vec()
    };
    if let Some(f) = fault {
        if f >= count {
            return Err(Error::Config(format!(
                "fault index {f} out of range for {count} parameters"
            )));
        }
        if !chosen.contains(&f) {
            chosen.push(f);
        }
    }

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: chosen.first().copied().unwrap_or(0),
        params_checked: chosen.len(),
    };
    for i in chosen {
        let theta = probe.param(i);
        probe.set_param(i, theta + epsilon);
        let above = eval_loss(&probe, set)?;
        probe.set_param(i, theta - epsilon);
        let below = eval_loss(&probe, set)?;
        probe.set_param(i, theta);
        let numeric = (above - below) / (2.0 * epsilon);
        let mut analytic = grads.param(i);
        if fault == Some(i) {
            analytic += 1.0 + analytic.abs();
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = i;
        }
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    task: Task,
    rep_kind: RepKind,
    widths: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Writes a versioned JSON checkpoint (weights row-major per layer).
pub fn save_model(model: &MlpModel, rep_kind: RepKind, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        task: model.task,
        rep_kind,
        widths: model.widths.clone(),
        weights: model
            .weights
            .iter()
            .map(|w| w.iter().copied().collect())
            .collect(),
        biases: model.biases.iter().map(|b| b.to_vec()).collect(),
    };
    let out = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::to_writer(BufWriter::new(out), &file).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Loads a checkpoint written by [`save_model`], validating shapes.
pub fn load_model(path: &Path) -> Result<(MlpModel, RepKind)> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ck: CheckpointFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    let layers = ck.widths.len().saturating_sub(1);
    if ck.weights.len() != layers || ck.biases.len() != layers {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint declares {} widths but {} weight and {} bias layers",
            ck.widths.len(),
            ck.weights.len(),
            ck.biases.len()
        )));
    }
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for (l, pair) in ck.widths.windows(2).enumerate() {
        let (nin, nout) = (pair[0], pair[1]);
        if ck.weights[l].len() != nin * nout {
            return Err(Error::SchemaMismatch(format!(
                "layer {l} expects {} weights, found {}",
                nin * nout,
                ck.weights[l].len()
            )));
        }
        weights.push(
            Array2::from_shape_vec((nin, nout), ck.weights[l].clone()).expect("checked above"),
        );
        biases.push(Array1::from_vec(ck.biases[l].clone()));
    }
    let model = MlpModel::from_parts(ck.task, ck.widths, weights, biases)?;
    Ok((model, ck.rep_kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn random_targets(rng: &mut ChaCha8Rng, n: usize, task: Task) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| match task {
                Task::RimAngle => vec![rng.random_range(0.0..1.0)],
                Task::EdgeOffset => vec![rng.random_range(-1.0..1.0)],
                Task::PoleOffset => (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                Task::SimToSim => {
                    let mut t: Vec<f64> = (0..POSE_OUTPUTS)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect();
                    let mut class = vec![0.0; CLASS_OUTPUTS];
                    class[rng.random_range(0..CLASS_OUTPUTS)] = 1.0;
                    t.extend(class);
                    t
                }
            })
            .collect()
    }

    fn random_set(seed: u64, n: usize, width: usize, task: Task) -> LabelledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_inputs(&mut rng, n, width);
        let t = random_targets(&mut rng, n, task);
        LabelledSet::from_rows(&x, &t).unwrap()
    }

    #[test]
    fn task_names_round_trip_and_widths_match() {
        for task in Task::ALL {
            assert_eq!(task.as_str().parse::<Task>().unwrap(), task);
            assert_eq!(task.label_len(), task.output_len());
        }
        assert_eq!(Task::SimToSim.output_len(), 8);
        assert_eq!(Task::RimAngle.output_len(), 1);
        assert_eq!(Task::EdgeOffset.output_len(), 1);
        assert_eq!(Task::PoleOffset.output_len(), 2);
        assert!("frobnicate".parse::<Task>().is_err());
    }

    #[test]
    fn init_draws_stay_in_glorot_bounds_with_zero_biases() {
        let model = init_model(182, Task::RimAngle, 7).unwrap();
        assert_eq!(model.widths(), &[182, 500, 500, 500, 500, 1]);
        // Middle layer: bound sqrt(6/1000), uniform std bound/sqrt(3).
        let bound = (6.0f64 / 1000.0).sqrt();
        let w = model.layer_weights(1);
        assert!(w.iter().all(|v| v.abs() <= bound));
        let mean = w.sum() / w.len() as f64;
        let stderr = bound / 3.0f64.sqrt() / (w.len() as f64).sqrt();
        assert!(
            mean.abs() < 3.0 * stderr,
            "layer mean {mean} outside 3 standard errors {}",
            3.0 * stderr
        );
        for l in 0..5 {
            assert!(model.layer_biases(l).iter().all(|&b| b == 0.0));
        }
        let other = init_model(182, Task::RimAngle, 8).unwrap();
        assert_ne!(
            model.layer_weights(0).as_slice().unwrap(),
            other.layer_weights(0).as_slice().unwrap()
        );
    }

    #[test]
    fn init_rejects_unknown_input_widths_and_bad_shapes() {
        assert!(matches!(
            init_model(64, Task::RimAngle, 0),
            Err(Error::Config(_))
        ));
        for width in [182, 91, 3] {
            assert!(init_model(width, Task::PoleOffset, 0).is_ok());
        }
        assert!(MlpModel::with_widths(Task::RimAngle, &[5], 0).is_err());
        assert!(MlpModel::with_widths(Task::RimAngle, &[5, 0, 1], 0).is_err());
        // Output width must match the task head.
        assert!(MlpModel::with_widths(Task::PoleOffset, &[5, 4, 1], 0).is_err());
    }

    #[test]
    fn forward_matches_hand_rollout_through_relu_and_tanh() {
        let mut model = MlpModel::zeroed(Task::EdgeOffset, &[2, 2, 1]).unwrap();
        model
            .set_layer(0, array![[1.0, -1.0], [0.5, 2.0]], array![0.1, -0.2])
            .unwrap();
        model
            .set_layer(1, array![[2.0], [-1.0]], array![0.05])
            .unwrap();

        // z1 = [0.6, 0.3] (both active); z2 = 1.2 - 0.3 + 0.05 = 0.95.
        let out = model.forward(&[0.3, 0.4]).unwrap();
        assert_relative_eq!(out[0], 0.95f64.tanh(), max_relative = 1e-12);

        // First hidden unit goes inactive: z1 = [-0.2, 0.6] -> a1 = [0, 0.6].
        let out = model.forward(&[-0.4, 0.2]).unwrap();
        assert_relative_eq!(out[0], (-0.55f64).tanh(), max_relative = 1e-12);
    }

    #[test]
    fn neutral_weights_give_neutral_head_outputs() {
        let tanh = MlpModel::zeroed(Task::PoleOffset, &[3, 4, 4, 2]).unwrap();
        assert_eq!(tanh.forward(&[0.3, -0.9, 2.0]).unwrap(), vec![0.0, 0.0]);

        let sigmoid = MlpModel::zeroed(Task::RimAngle, &[3, 4, 1]).unwrap();
        assert_eq!(sigmoid.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5]);

        let joint = MlpModel::zeroed(Task::SimToSim, &[3, 4, 8]).unwrap();
        let out = joint.forward(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(&out[..POSE_OUTPUTS], &[0.0; POSE_OUTPUTS]);
        for &p in &out[POSE_OUTPUTS..] {
            assert_eq!(p, 1.0 / 3.0);
        }
    }

    #[test]
    fn class_block_stays_on_probability_simplex() {
        let model = MlpModel::with_widths(Task::SimToSim, &[5, 16, 16, 16, 16, 8], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let out = model.forward(&x).unwrap();
            let class = &out[POSE_OUTPUTS..];
            assert!(class.iter().all(|&p| p >= 0.0));
            let sum: f64 = class.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "class sum {sum}");
        }
    }

    #[test]
    fn loss_pools_over_all_components() {
        let v = loss(&[1.0, 0.0], &[0.0, 0.0], Task::PoleOffset).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(loss(&[0.3], &[0.3], Task::RimAngle).unwrap(), 0.0);
        assert!(loss(&[1.0], &[0.0, 0.0], Task::PoleOffset).is_err());
        assert!(loss(&[1.0, 0.0], &[0.0], Task::PoleOffset).is_err());
    }

    #[test]
    fn zero_residual_means_exactly_zero_gradients() {
        let model = MlpModel::zeroed(Task::EdgeOffset, &[3, 4, 4, 4, 4, 1]).unwrap();
        let inputs = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64 * 0.25);
        let targets = Array2::zeros((5, 1));
        let (l, grads) = backward(&model, inputs.view(), targets.view()).unwrap();
        assert_eq!(l, 0.0);
        for g in grads.weights.iter() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
        for g in grads.biases.iter() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_scale_linearly_with_the_residual() {
        let model = MlpModel::with_widths(Task::PoleOffset, &[3, 8, 8, 2], 5).unwrap();
        let x = array![[0.2, -0.7, 0.4], [0.9, 0.1, -0.5]];
        let (_, acts) = model.forward_batch(x.view()).unwrap();
        let y = acts.last().unwrap().clone();

        let t1 = &y - 0.25;
        let t2 = &y - 0.5;
        let (l1, g1) = backward(&model, x.view(), t1.view()).unwrap();
        let (l2, g2) = backward(&model, x.view(), t2.view()).unwrap();
        assert_relative_eq!(l2, 4.0 * l1, max_relative = 1e-12);
        for (a, b) in g1.weights.iter().zip(g2.weights.iter()) {
            for (va, vb) in a.iter().zip(b.iter()) {
                assert_relative_eq!(*vb, 2.0 * va, max_relative = 1e-11, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn duplicating_a_batch_leaves_gradients_unchanged() {
        let model = MlpModel::with_widths(Task::RimAngle, &[4, 8, 8, 1], 9).unwrap();
        let set = random_set(21, 6, 4, Task::RimAngle);
        let doubled_rows: Vec<usize> = (0..6).chain(0..6).collect();
        let doubled = set.subset(&doubled_rows).unwrap();

        let (l1, g1) = backward(&model, set.inputs(), set.targets()).unwrap();
        let (l2, g2) = backward(&model, doubled.inputs(), doubled.targets()).unwrap();
        assert_relative_eq!(l1, l2, max_relative = 1e-12);
        for (a, b) in g1.weights.iter().zip(g2.weights.iter()) {
            for (va, vb) in a.iter().zip(b.iter()) {
                assert_relative_eq!(*va, *vb, max_relative = 1e-11, epsilon = 1e-15);
            }
        }
    }

    fn three_param_fixture() -> (MlpModel, LabelledSet) {
        let mut model = MlpModel::zeroed(Task::EdgeOffset, &[2, 1]).unwrap();
        model
            .set_layer(0, array![[0.3], [-0.7]], array![0.1])
            .unwrap();
        let set = LabelledSet::from_rows(&[vec![0.5, 0.25]], &[vec![0.2]]).unwrap();
        (model, set)
    }

    #[test]
    fn finite_differences_agree_on_a_three_parameter_net() {
        let (model, set) = three_param_fixture();
        assert_eq!(model.param_count(), 3);
        let report = gradient_check(&model, &set, 1e-6, 0).unwrap();
        assert!(report.max_rel_err < 1e-9, "relative error {}", report.max_rel_err);
        assert_eq!(report.params_checked, 3);
    }

    #[test]
    fn finite_differences_agree_on_standard_nets() {
        // Width-1 heads (edge, rim) propagate unit-stride deltas that flip
        // matrix products into column-major order; every task must pass.
        for (seed, task) in Task::ALL.into_iter().enumerate() {
            let seed = seed as u64;
            let model = init_model(182, task, seed).unwrap();
            let set = random_set(seed + 100, 1, 182, task);
            let report = gradient_check(&model, &set, 1e-6, seed).unwrap();
            assert!(
                report.max_rel_err < 1e-5,
                "{task:?}: relative error {}",
                report.max_rel_err
            );
            assert!(report.worst_param < model.param_count());
        }
    }

    #[test]
    fn coarse_epsilon_degrades_the_check() {
        let (model, set) = three_param_fixture();
        let fine = gradient_check(&model, &set, 1e-6, 0).unwrap().max_rel_err;
        let coarse = gradient_check(&model, &set, 0.1, 0).unwrap().max_rel_err;
        assert!(
            coarse > fine,
            "expected coarse {coarse} to exceed fine {fine}"
        );
        assert!(gradient_check(&model, &set, 0.0, 0).is_err());
        assert!(gradient_check(&model, &set, -1.0, 0).is_err());
    }

    #[test]
    fn inactive_relu_unit_has_zero_gradient_both_ways() {
        let mut model = MlpModel::zeroed(Task::EdgeOffset, &[1, 2, 1]).unwrap();
        // Unit 0 sees 0.3 - 5.0 < 0 and stays inactive under ±1e-6 nudges.
        model
            .set_layer(0, array![[1.0, 1.0]], array![-5.0, 0.5])
            .unwrap();
        model
            .set_layer(1, array![[2.0], [1.0]], array![0.0])
            .unwrap();
        let set = LabelledSet::from_rows(&[vec![0.3]], &[vec![0.4]]).unwrap();

        let (_, grads) = backward(&model, set.inputs(), set.targets()).unwrap();
        assert_eq!(grads.weights[0][(0, 0)], 0.0);
        assert_eq!(grads.biases[0][0], 0.0);

        // Numeric side: nudging the dead unit's weight cannot move the loss.
        let mut probe = model.clone();
        probe.set_param(0, probe.param(0) + 1e-6);
        let above = eval_loss(&probe, &set).unwrap();
        probe.set_param(0, probe.param(0) - 2e-6);
        let below = eval_loss(&probe, &set).unwrap();
        assert_eq!(above, below);

        let report = gradient_check(&model, &set, 1e-6, 0).unwrap();
        assert!(report.max_rel_err < 1e-9, "relative error {}", report.max_rel_err);
    }

    #[test]
    fn injected_gradient_faults_are_caught_at_their_index() {
        let (model, set) = three_param_fixture();
        let report = gradient_check_with_fault(&model, &set, 1e-6, 0, Some(1)).unwrap();
        assert!(report.max_rel_err > 0.5, "fault missed: {}", report.max_rel_err);
        assert_eq!(report.worst_param, 1);
        assert!(gradient_check_with_fault(&model, &set, 1e-6, 0, Some(99)).is_err());
    }

    fn linear_fixture(n: usize, seed: u64) -> LabelledSet {
        // Ground truth y = A x with outputs well inside the tanh range.
        let a = [[0.15, -0.2, 0.1, 0.05], [-0.1, 0.25, 0.2, -0.15]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = random_inputs(&mut rng, n, 4);
        let ts: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                a.iter()
                    .map(|row| row.iter().zip(x).map(|(c, v)| c * v).sum())
                    .collect()
            })
            .collect();
        LabelledSet::from_rows(&xs, &ts).unwrap()
    }

    #[test]
    fn fits_a_linear_map_to_small_error() {
        let set = linear_fixture(200, 42);
        let mut model = MlpModel::with_widths(Task::PoleOffset, &[4, 32, 32, 32, 32, 2], 1).unwrap();
        let config = TrainConfig {
            batch_size: 32,
            step_size: 2e-2,
            epochs: 500,
            seed: 7,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &set, None, &config).unwrap();
        let final_loss = *history.train_loss.last().unwrap();
        assert!(final_loss < 1e-3, "final training loss {final_loss}");
        assert_eq!(history.train_loss.len(), 500);
    }

    #[test]
    fn stable_step_sizes_decrease_loss_over_early_epochs() {
        let set = linear_fixture(64, 3);
        for step in [1e-4, 1e-3, 1e-2] {
            let mut model =
                MlpModel::with_widths(Task::PoleOffset, &[4, 16, 16, 16, 16, 2], 2).unwrap();
            let config = TrainConfig {
                batch_size: 64, // full batch: descent should be monotone
                step_size: step,
                epochs: 10,
                seed: 0,
                ..TrainConfig::default()
            };
            let history = train(&mut model, &set, None, &config).unwrap();
            for w in history.train_loss.windows(2) {
                assert!(
                    w[1] <= w[0],
                    "step {step}: loss rose from {} to {}",
                    w[0],
                    w[1]
                );
            }
            assert!(history.train_loss[9] < history.train_loss[0]);
        }
    }

    #[test]
    fn zero_patience_runs_every_epoch() {
        let set = linear_fixture(32, 9);
        let mut model = MlpModel::with_widths(Task::PoleOffset, &[4, 8, 2], 0).unwrap();
        let config = TrainConfig {
            epochs: 37,
            patience: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &set, Some(&set), &config).unwrap();
        assert_eq!(history.train_loss.len(), 37);
        assert_eq!(history.val_loss.len(), 37);
        assert_eq!(history.best_epoch, 36);
        assert!(!history.stopped_early);
    }

    #[test]
    fn early_stopping_returns_the_best_validation_snapshot() {
        // Validation follows a different map than training, so validation
        // loss bottoms out and climbs while training keeps descending.
        let train_set = linear_fixture(96, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xs = random_inputs(&mut rng, 48, 4);
        let ts: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.3 * x[1], -0.3 * x[0]]).collect();
        let val_set = LabelledSet::from_rows(&xs, &ts).unwrap();

        let mut model = MlpModel::with_widths(Task::PoleOffset, &[4, 16, 16, 16, 16, 2], 4).unwrap();
        let config = TrainConfig {
            batch_size: 32,
            step_size: 2e-2,
            epochs: 400,
            seed: 1,
            patience: 10,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_set, Some(&val_set), &config).unwrap();
        assert!(history.stopped_early, "validation never deteriorated");
        assert!(history.val_loss.len() < 400);

        let best = history
            .val_loss
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(history.val_loss[history.best_epoch], best);
        // The returned weights reproduce the best validation loss bit-exactly.
        assert_eq!(eval_loss(&model, &val_set).unwrap(), best);
    }

    #[test]
    fn patience_without_validation_set_is_rejected() {
        let set = linear_fixture(16, 0);
        let mut model = MlpModel::with_widths(Task::PoleOffset, &[4, 8, 2], 0).unwrap();
        let config = TrainConfig {
            patience: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut model, &set, None, &config),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_training_carves_a_deterministic_validation_set() {
        let set = linear_fixture(40, 3);
        let config = TrainConfig {
            epochs: 8,
            patience: 4,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let mut a = MlpModel::with_widths(Task::PoleOffset, &[4, 8, 2], 1).unwrap();
        let history = train_with_split(&mut a, &set, &config).unwrap();
        assert!(!history.val_loss.is_empty(), "no validation trace");

        // Same data in reverse row order trains to bit-identical weights.
        let reversed: Vec<usize> = (0..set.len()).rev().collect();
        let shuffled = set.subset(&reversed).unwrap();
        let mut b = MlpModel::with_widths(Task::PoleOffset, &[4, 8, 2], 1).unwrap();
        let history_b = train_with_split(&mut b, &shuffled, &config).unwrap();
        assert_eq!(history.val_loss, history_b.val_loss);
        for l in 0..a.layers() {
            assert_eq!(a.layer_weights(l), b.layer_weights(l));
        }

        // Fraction zero falls back to plain training on every row.
        let plain = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut c = MlpModel::with_widths(Task::PoleOffset, &[4, 8, 2], 1).unwrap();
        let h = train_with_split(&mut c, &set, &plain).unwrap();
        assert!(h.val_loss.is_empty());
    }

    #[test]
    fn runaway_steps_report_divergence_with_the_epoch() {
        // Unbounded pose outputs let the loss blow past the divergence limit.
        let set = random_set(13, 32, 3, Task::SimToSim);
        let mut model = MlpModel::with_widths(Task::SimToSim, &[3, 16, 16, 16, 16, 8], 0).unwrap();
        let config = TrainConfig {
            batch_size: 16, // two batches: the second sees the first's blow-up
            step_size: 1e9,
            epochs: 5,
            ..TrainConfig::default()
        };
        match train(&mut model, &set, None, &config) {
            Err(Error::Divergence { epoch, loss }) => {
                assert_eq!(epoch, 0);
                assert!(loss > DIVERGENCE_LIMIT);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_bitwise_reproducible_per_seed() {
        let set = linear_fixture(80, 17);
        let config = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let mut a = MlpModel::with_widths(Task::PoleOffset, &[4, 16, 16, 2], 6).unwrap();
        let mut b = a.clone();
        let ha = train(&mut a, &set, None, &config).unwrap();
        let hb = train(&mut b, &set, None, &config).unwrap();
        assert_eq!(ha.train_loss, hb.train_loss);
        for l in 0..3 {
            assert_eq!(
                a.layer_weights(l).as_slice().unwrap(),
                b.layer_weights(l).as_slice().unwrap()
            );
        }

        let mut c = MlpModel::with_widths(Task::PoleOffset, &[4, 16, 16, 2], 6).unwrap();
        let other = TrainConfig {
            seed: config.seed + 1,
            ..config.clone()
        };
        train(&mut c, &set, None, &other).unwrap();
        assert_ne!(
            a.layer_weights(0).as_slice().unwrap(),
            c.layer_weights(0).as_slice().unwrap()
        );
    }

    #[test]
    fn caller_row_order_does_not_affect_training() {
        let set = linear_fixture(60, 23);
        let mut reversed_rows: Vec<usize> = (0..60).collect();
        reversed_rows.reverse();
        let reversed = set.subset(&reversed_rows).unwrap();

        let config = TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        };
        let mut a = MlpModel::with_widths(Task::PoleOffset, &[4, 16, 16, 2], 8).unwrap();
        let mut b = a.clone();
        let ha = train(&mut a, &set, None, &config).unwrap();
        let hb = train(&mut b, &reversed, None, &config).unwrap();
        assert_eq!(ha.train_loss, hb.train_loss);
        for l in 0..3 {
            assert_eq!(
                a.layer_weights(l).as_slice().unwrap(),
                b.layer_weights(l).as_slice().unwrap()
            );
        }
    }

    #[test]
    fn eval_loss_matches_per_row_computation() {
        let model = MlpModel::with_widths(Task::PoleOffset, &[4, 8, 8, 2], 12).unwrap();
        let set = random_set(31, 9, 4, Task::PoleOffset);
        let pooled = eval_loss(&model, &set).unwrap();
        let mut manual = 0.0;
        for i in 0..set.len() {
            let out = model.forward(&set.inputs().row(i).to_vec()).unwrap();
            manual += loss(&out, &set.targets().row(i).to_vec(), Task::PoleOffset).unwrap();
        }
        assert_relative_eq!(pooled, manual / 9.0, max_relative = 1e-12);

        let preds = predict_batch(&model, &set).unwrap();
        assert_eq!(preds.dim(), (9, 2));
        let first = model.forward(&set.inputs().row(0).to_vec()).unwrap();
        assert_eq!(preds.row(0).to_vec(), first);
    }

    #[test]
    fn checkpoints_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = init_model(91, Task::EdgeOffset, 3).unwrap();
        save_model(&model, RepKind::Threshold, &path).unwrap();

        let (loaded, rep) = load_model(&path).unwrap();
        assert_eq!(rep, RepKind::Threshold);
        assert_eq!(loaded.task(), Task::EdgeOffset);
        assert_eq!(loaded.widths(), model.widths());
        for l in 0..5 {
            assert_eq!(
                loaded.layer_weights(l).as_slice().unwrap(),
                model.layer_weights(l).as_slice().unwrap()
            );
        }

        // Same inputs, same outputs after the round trip.
        let x: Vec<f64> = (0..91).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(model.forward(&x).unwrap(), loaded.forward(&x).unwrap());

        let text = std::fs::read_to_string(&path).unwrap();
        let bad_version = text.replace("\"version\":1", "\"version\":99");
        std::fs::write(&path, bad_version).unwrap();
        assert!(matches!(load_model(&path), Err(Error::SchemaMismatch(_))));

        std::fs::write(&path, "{\"not\":\"a checkpoint\"}").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Parse { .. })));

        assert!(matches!(
            load_model(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn truncated_checkpoint_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = MlpModel::with_widths(Task::RimAngle, &[3, 4, 1], 0).unwrap();
        save_model(&model, RepKind::WeightedAverage, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut ck: serde_json::Value = serde_json::from_str(&text).unwrap();
        ck["weights"][0].as_array_mut().unwrap().pop();
        std::fs::write(&path, serde_json::to_string(&ck).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn forward_validates_input_shape_and_finiteness() {
        let model = MlpModel::with_widths(Task::RimAngle, &[3, 4, 1], 0).unwrap();
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            model.forward(&[1.0, f64::NAN, 0.0]),
            Err(Error::NonFiniteActivations { layer: 0 })
        ));
        let mut poisoned = model.clone();
        poisoned
            .set_layer(0, Array2::from_elem((3, 4), f64::INFINITY), Array1::zeros(4))
            .unwrap();
        assert!(matches!(
            poisoned.forward(&[1.0, 1.0, 1.0]),
            Err(Error::NonFiniteActivations { layer: 1 })
        ));
    }

    proptest! {
        #[test]
        fn head_outputs_stay_in_range(seed in 0u64..500, task_pick in 0usize..4) {
            let task = Task::ALL[task_pick];
            let widths = [6, 12, 12, task.output_len()];
            let model = MlpModel::with_widths(task, &widths, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = model.forward(&x).unwrap();
            match task {
                Task::RimAngle => prop_assert!(out[0] > 0.0 && out[0] < 1.0),
                Task::EdgeOffset | Task::PoleOffset => {
                    prop_assert!(out.iter().all(|v| v.abs() < 1.0));
                }
                Task::SimToSim => {
                    let class = &out[POSE_OUTPUTS..];
                    prop_assert!(class.iter().all(|&p| p >= 0.0));
                    let sum: f64 = class.iter().sum();
                    prop_assert!((sum - 1.0).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn pooled_loss_is_a_symmetric_nonnegative_form(
            a0 in -2.0f64..2.0, a1 in -2.0f64..2.0,
            b0 in -2.0f64..2.0, b1 in -2.0f64..2.0,
        ) {
            let a = [a0, a1];
            let b = [b0, b1];
            let fwd = loss(&a, &b, Task::PoleOffset).unwrap();
            let rev = loss(&b, &a, Task::PoleOffset).unwrap();
            prop_assert_eq!(fwd, rev);
            prop_assert!(fwd >= 0.0);
            prop_assert_eq!(loss(&a, &a, Task::PoleOffset).unwrap(), 0.0);
        }
    }

    /// Calibration helper, not part of the suite: reports per-epoch wall time
    /// for the standard architecture so training budgets can be set.
    #[test]
    #[ignore]
    fn bench_standard_training_epoch() {
        let set = random_set(0, 4000, 182, Task::SimToSim);
        let mut model = init_model(182, Task::SimToSim, 0).unwrap();
        let config = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let start = std::time::Instant::now();
        train(&mut model, &set, None, &config).unwrap();
        let per_epoch = start.elapsed().as_secs_f64() / 3.0;
        println!("standard net: {per_epoch:.3} s/epoch at batch 64, n=4000");
    }
}
