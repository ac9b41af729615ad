//! Python bindings for the tacsim core: mesh construction, tap simulation,
//! pin encodings, dataset generation, and the MLP train/eval loop. Values
//! cross the boundary as plain lists and tuples so the module has no
//! dependencies beyond the interpreter itself.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tacsim::collision::{Pose, RigidShape};
use tacsim::dynamics::{self, DynamicsParams, TactileFrame};
use tacsim::evaluation::AngleUnit;
use tacsim::learn::{
    self, LabelledSet, MlpModel, Task, TrainConfig,
};
use tacsim::mesh::TipMesh;
use tacsim::representations::{self, RepKind};
use tacsim::scenarios::{
    self, GenSpec, PseudoRealEnv, RandomizationSpec, SimSettings,
};

fn py_err(e: tacsim::Error) -> PyErr {
    match e {
        tacsim::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_task(name: &str) -> PyResult<Task> {
    match name {
        "task1" => Ok(Task::RimAngle),
        "task2" => Ok(Task::EdgeOffset),
        "task3" => Ok(Task::PoleOffset),
        "joint" => Ok(Task::SimToSim),
        other => other.parse().map_err(py_err),
    }
}

fn parse_rep(name: &str) -> PyResult<RepKind> {
    name.parse().map_err(py_err)
}

fn parse_angle_unit(name: &str) -> PyResult<AngleUnit> {
    match name {
        "radians" => Ok(AngleUnit::Radians),
        "degrees" => Ok(AngleUnit::Degrees),
        other => Err(PyValueError::new_err(format!(
            "unknown angle unit '{other}' (radians or degrees)"
        ))),
    }
}

fn frame_to_pins(frame: &TactileFrame) -> Vec<(f64, f64)> {
    frame.pins().iter().map(|p| (p.x, p.y)).collect()
}

fn pins_to_frame(pins: Vec<(f64, f64)>, step: usize) -> TactileFrame {
    TactileFrame::new(
        pins.into_iter()
            .map(|(x, y)| nalgebra::Vector2::new(x, y))
            .collect(),
        step,
    )
}

fn params_from_opts(
    f_push: Option<f64>,
    f_pull: Option<f64>,
    damping: Option<f64>,
    tau: Option<f64>,
    dt: Option<f64>,
) -> DynamicsParams {
    let d = DynamicsParams::default();
    DynamicsParams {
        f_push: f_push.unwrap_or(d.f_push),
        f_pull: f_pull.unwrap_or(d.f_pull),
        damping: damping.unwrap_or(d.damping),
        tau: tau.unwrap_or(d.tau),
        dt: dt.unwrap_or(d.dt),
    }
}

/// Hemispherical tip mesh with its observed pin layout.
#[pyclass(frozen)]
struct Mesh {
    inner: TipMesh,
}

#[pymethods]
impl Mesh {
    #[new]
    #[pyo3(signature = (rings=6, tip_radius=20.0))]
    fn new(rings: usize, tip_radius: f64) -> PyResult<Self> {
        if rings == 0 {
            return Err(PyValueError::new_err("rings must be at least 1"));
        }
        if !(tip_radius.is_finite() && tip_radius > 0.0) {
            return Err(PyValueError::new_err("tip_radius must be positive"));
        }
        Ok(Mesh {
            inner: tacsim::mesh::generate_tip_mesh(rings, tip_radius),
        })
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn pin_count(&self) -> usize {
        self.inner.pin_count()
    }

    #[getter]
    fn tip_radius(&self) -> f64 {
        self.inner.tip_radius()
    }

    /// Undeformed pin positions projected into the image plane.
    fn rest_pins(&self) -> Vec<(f64, f64)> {
        self.inner
            .rest_pin_projection()
            .iter()
            .map(|p| (p.x, p.y))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(vertices={}, pins={}, tip_radius={})",
            self.inner.vertex_count(),
            self.inner.pin_count(),
            self.inner.tip_radius()
        )
    }
}

/// Rigid object a tap presses the sensor against.
#[pyclass(frozen)]
struct Shape {
    inner: RigidShape,
}

#[pymethods]
impl Shape {
    #[staticmethod]
    fn plane() -> Self {
        Shape {
            inner: RigidShape::Plane,
        }
    }

    #[staticmethod]
    fn cuboid(hx: f64, hy: f64, hz: f64) -> PyResult<Self> {
        let inner = RigidShape::Cuboid {
            half_extents: [hx, hy, hz],
        };
        inner.validate().map_err(py_err)?;
        Ok(Shape { inner })
    }

    #[staticmethod]
    fn cylinder(radius: f64, height: f64) -> PyResult<Self> {
        let inner = RigidShape::Cylinder { radius, height };
        inner.validate().map_err(py_err)?;
        Ok(Shape { inner })
    }

    #[staticmethod]
    fn pole(radius: f64) -> PyResult<Self> {
        let inner = RigidShape::Pole { radius };
        inner.validate().map_err(py_err)?;
        Ok(Shape { inner })
    }

    #[staticmethod]
    fn disc(inner_radius: f64, outer_radius: f64) -> PyResult<Self> {
        let inner = RigidShape::Disc {
            inner_radius,
            outer_radius,
        };
        inner.validate().map_err(py_err)?;
        Ok(Shape { inner })
    }

    #[staticmethod]
    fn half_plane_edge() -> Self {
        Shape {
            inner: RigidShape::HalfPlaneEdge,
        }
    }

    fn __repr__(&self) -> String {
        format!("Shape({:?})", self.inner)
    }
}

/// Sensor height at which the mesh first touches the posed shape.
#[pyfunction]
#[pyo3(signature = (mesh, shape, position=(0.0, 0.0, 0.0), rotation_deg=(0.0, 0.0, 0.0)))]
fn touch_height(
    mesh: &Mesh,
    shape: &Shape,
    position: (f64, f64, f64),
    rotation_deg: (f64, f64, f64),
) -> PyResult<f64> {
    let pose = Pose::new(
        [position.0, position.1, position.2],
        [rotation_deg.0, rotation_deg.1, rotation_deg.2],
    );
    dynamics::find_touch_height(&mesh.inner, &shape.inner, &pose).map_err(py_err)
}

/// Presses the sensor onto a shape through a profile of depths (mm past
/// first contact) and returns the observed pin positions after each stage.
#[pyfunction]
#[pyo3(signature = (mesh, shape, depths, position=(0.0, 0.0, 0.0), rotation_deg=(0.0, 0.0, 0.0),
                    steps_per_depth=scenarios::STEPS_PER_DEPTH,
                    f_push=None, f_pull=None, damping=None, tau=None, dt=None))]
#[allow(clippy::too_many_arguments)]
fn simulate_tap(
    mesh: &Mesh,
    shape: &Shape,
    depths: Vec<f64>,
    position: (f64, f64, f64),
    rotation_deg: (f64, f64, f64),
    steps_per_depth: usize,
    f_push: Option<f64>,
    f_pull: Option<f64>,
    damping: Option<f64>,
    tau: Option<f64>,
    dt: Option<f64>,
) -> PyResult<Vec<Vec<(f64, f64)>>> {
    let pose = Pose::new(
        [position.0, position.1, position.2],
        [rotation_deg.0, rotation_deg.1, rotation_deg.2],
    );
    let params = params_from_opts(f_push, f_pull, damping, tau, dt);
    let frames = dynamics::simulate_tap(
        &mesh.inner,
        &shape.inner,
        &pose,
        &params,
        &depths,
        steps_per_depth,
    )
    .map_err(py_err)?;
    Ok(frames.iter().map(frame_to_pins).collect())
}

/// Encodes observed pins against their rest layout. `kind` is one of
/// "pin_positions", "threshold", or "weighted_average".
#[pyfunction]
fn encode(kind: &str, pins: Vec<(f64, f64)>, rest: Vec<(f64, f64)>) -> PyResult<Vec<f64>> {
    let kind = parse_rep(kind)?;
    let frame = pins_to_frame(pins, 0);
    let rest = pins_to_frame(rest, 0);
    representations::encode(kind, &frame, &rest)
        .map(|r| r.values().to_vec())
        .map_err(py_err)
}

/// Generates a labelled dataset: `count` episodes (joint task) or samples.
/// Returns `(inputs, labels)` as nested lists.
#[pyfunction]
#[pyo3(signature = (task, rep, count, factor=0.0, noise_sigma=scenarios::DEFAULT_ENV_SIGMA,
                    seed=0, per_parameter=true))]
fn generate_dataset(
    task: &str,
    rep: &str,
    count: usize,
    factor: f64,
    noise_sigma: f64,
    seed: u64,
    per_parameter: bool,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let spec = GenSpec {
        task: parse_task(task)?,
        rep_kind: parse_rep(rep)?,
        count,
        randomization: RandomizationSpec {
            baseline: DynamicsParams::default(),
            factor,
            per_parameter,
        },
        noise_sigma,
        seed,
        sim: SimSettings::default(),
    };
    let samples = scenarios::generate_samples(&spec).map_err(py_err)?;
    Ok(samples
        .into_iter()
        .map(|s| (s.rep, s.label))
        .unzip())
}

fn labelled_set(inputs: Vec<Vec<f64>>, labels: Vec<Vec<f64>>) -> PyResult<LabelledSet> {
    LabelledSet::from_rows(&inputs, &labels).map_err(py_err)
}

/// Four-hidden-layer ReLU MLP with a task-specific head.
#[pyclass]
struct Model {
    inner: MlpModel,
    rep: RepKind,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (rep, task, seed=0))]
    fn new(rep: &str, task: &str, seed: u64) -> PyResult<Self> {
        let rep = parse_rep(rep)?;
        let task = parse_task(task)?;
        let inner = learn::init_model(rep.standard_len(), task, seed).map_err(py_err)?;
        Ok(Model { inner, rep })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, rep) = learn::load_model(&path).map_err(py_err)?;
        Ok(Model { inner, rep })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        learn::save_model(&self.inner, self.rep, &path).map_err(py_err)
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task().as_str().to_string()
    }

    #[getter]
    fn rep(&self) -> String {
        self.rep.as_str().to_string()
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.inner.input_width()
    }

    /// Mini-batch SGD on (inputs, labels); returns per-epoch training and
    /// validation losses.
    #[pyo3(signature = (inputs, labels, *, epochs=200, step_size=1e-3, batch_size=64,
                        seed=0, validation_fraction=0.0, patience=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<Vec<f64>>,
        epochs: usize,
        step_size: f64,
        batch_size: usize,
        seed: u64,
        validation_fraction: f64,
        patience: usize,
    ) -> PyResult<Py<pyo3::types::PyDict>> {
        let set = labelled_set(inputs, labels)?;
        let config = TrainConfig {
            batch_size,
            step_size,
            epochs,
            seed,
            patience,
            validation_fraction,
        };
        let history =
            learn::train_with_split(&mut self.inner, &set, &config).map_err(py_err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("train_loss", history.train_loss)?;
        out.set_item("val_loss", history.val_loss)?;
        out.set_item("best_epoch", history.best_epoch)?;
        out.set_item("stopped_early", history.stopped_early)?;
        Ok(out.unbind())
    }

    fn predict(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&input).map_err(py_err)
    }

    /// Mean squared error pooled over output components.
    fn mse(&self, inputs: Vec<Vec<f64>>, labels: Vec<Vec<f64>>) -> PyResult<f64> {
        let set = labelled_set(inputs, labels)?;
        learn::eval_loss(&self.inner, &set).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(task={}, rep={}, params={})",
            self.inner.task().as_str(),
            self.rep.as_str(),
            self.inner.param_count()
        )
    }
}

/// Probes a trained model against the hidden-parameter environment and
/// returns `(mae, std, per_round)` over the standard probe rounds.
#[pyfunction]
#[pyo3(signature = (model, env_seed=0, angle_unit="radians"))]
fn pseudo_real_mae(
    model: &Model,
    env_seed: u64,
    angle_unit: &str,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let unit = parse_angle_unit(angle_unit)?;
    let env = PseudoRealEnv::new(env_seed);
    let report =
        tacsim::evaluation::eval_rounds_mae(&env, &model.inner, model.inner.task(), model.rep, unit)
            .map_err(py_err)?;
    Ok((report.mae, report.std_dev, report.per_round_mae))
}

/// Central-difference verification of backprop gradients; returns
/// `(max_rel_err, worst_param, params_checked)`.
#[pyfunction]
#[pyo3(signature = (model, inputs, labels, epsilon=1e-6, seed=0))]
fn gradient_check(
    model: &Model,
    inputs: Vec<Vec<f64>>,
    labels: Vec<Vec<f64>>,
    epsilon: f64,
    seed: u64,
) -> PyResult<(f64, usize, usize)> {
    let set = labelled_set(inputs, labels)?;
    let report = learn::gradient_check(&model.inner, &set, epsilon, seed).map_err(py_err)?;
    Ok((report.max_rel_err, report.worst_param, report.params_checked))
}

#[pymodule]
fn tacsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Shape>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(touch_height, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_tap, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_real_mae, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add("STANDARD_PIN_COUNT", representations::STANDARD_PIN_COUNT)?;
    m.add("TASKS", vec!["rim_angle", "edge_offset", "pole_offset", "sim_to_sim"])?;
    m.add(
        "REPRESENTATIONS",
        vec!["pin_positions", "threshold", "weighted_average"],
    )?;
    Ok(())
}
