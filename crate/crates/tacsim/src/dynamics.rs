//! Membrane deformation model.
//!
//! The dome surface is treated as a set of point vertices moving in the 2D
//! image plane. Vertices in contact with the object are position-constrained
//! at their resolved contact points; free vertices feel
//!
//! - a pushing force from every contact point, falling off with distance as
//!   a blend of inverse-square and inverse-linear terms, and
//! - a linear pulling force back toward their rest position,
//!
//! integrated explicitly with velocity damping. Positions advance with the
//! pre-update velocity, then velocities absorb the force impulse and damping.
//!
//! All positions are millimetres in the sensor image plane; vertex mass is
//! one, so forces are accelerations.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::collision::{detect_contacts, min_clearance, ContactSet, Pose, RigidShape};
use crate::error::{Error, Result};
use crate::mesh::{image_projection, TipMesh};

/// Physics constants. `f_push`, `f_pull` and `damping` are the randomised
/// parameters; `tau` and `dt` stay fixed across experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    pub f_push: f64,
    pub f_pull: f64,
    pub damping: f64,
    pub tau: f64,
    pub dt: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            f_push: 50.0,
            f_pull: 40.0,
            damping: 0.15,
            tau: 0.5,
            dt: 0.01,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.f_push, self.f_pull, self.damping, self.tau, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("dynamics params must be finite".into()));
        }
        if self.f_push < 0.0 || self.f_pull < 0.0 || self.tau < 0.0 {
            return Err(Error::Config(
                "f_push, f_pull and tau must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::Config(format!(
                "damping must lie in [0, 1], got {}",
                self.damping
            )));
        }
        if self.dt <= 0.0 {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

const COINCIDENT_EPS: f64 = 1e-9;
const POSITION_BOUND: f64 = 1e6;

/// Pushing force exerted by a contact point at `p_c` on a free vertex at
/// `p_i`: magnitude `f_push/(1+d²) + τ·f_push/(1+d)` along the unit vector
/// from the contact to the vertex.
pub fn pushing_force(
    p_i: &Vector2<f64>,
    p_c: &Vector2<f64>,
    params: &DynamicsParams,
) -> Result<Vector2<f64>> {
    let d_vec = p_i - p_c;
    let d = d_vec.norm();
    if d < COINCIDENT_EPS {
        return Err(Error::CoincidentPoints { distance: d });
    }
    let magnitude = params.f_push / (1.0 + d * d) + params.tau * params.f_push / (1.0 + d);
    Ok(d_vec * (magnitude / d))
}

/// Linear restoring force toward the rest position.
pub fn pulling_force(
    p_i: &Vector2<f64>,
    rest_i: &Vector2<f64>,
    params: &DynamicsParams,
) -> Vector2<f64> {
    (rest_i - p_i) * params.f_pull
}

/// Positions, velocities and rest layout of every mesh vertex in the image
/// plane, plus which vertices are currently pinned by contact.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneState {
    rest: Vec<Vector2<f64>>,
    pos: Vec<Vector2<f64>>,
    vel: Vec<Vector2<f64>>,
    constrained: Vec<bool>,
    steps_taken: usize,
}

impl MembraneState {
    pub fn new(rest: Vec<Vector2<f64>>) -> Self {
        let n = rest.len();
        MembraneState {
            pos: rest.clone(),
            vel: vec![Vector2::zeros(); n],
            constrained: vec![false; n],
            rest,
            steps_taken: 0,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.rest.len()
    }

    pub fn positions(&self) -> &[Vector2<f64>] {
        &self.pos
    }

    pub fn velocities(&self) -> &[Vector2<f64>] {
        &self.vel
    }

    pub fn rest_positions(&self) -> &[Vector2<f64>] {
        &self.rest
    }

    pub fn is_constrained(&self, vertex: usize) -> bool {
        self.constrained[vertex]
    }

    pub fn contact_count(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Pin the contacted vertices at their resolved contact points with zero
    /// velocity; vertices that left the contact set are released, keeping
    /// their current position but with velocity reset to zero.
    pub fn apply_contacts(&mut self, contacts: &ContactSet) {
        let mut now = vec![false; self.rest.len()];
        for (&i, point) in contacts.indices().iter().zip(contacts.points()) {
            assert!(i < self.rest.len(), "contact index {i} out of range");
            now[i] = true;
            self.pos[i] = *point;
            self.vel[i] = Vector2::zeros();
        }
        for i in 0..self.rest.len() {
            if self.constrained[i] && !now[i] {
                self.vel[i] = Vector2::zeros();
            }
        }
        self.constrained = now;
    }

    /// Release every contact (end of tap), zeroing released velocities.
    pub fn clear_contacts(&mut self) {
        self.apply_contacts(&ContactSet::empty());
    }

    /// Largest vertex distance from rest, mm.
    pub fn max_displacement(&self) -> f64 {
        self.pos
            .iter()
            .zip(&self.rest)
            .map(|(p, r)| (p - r).norm())
            .fold(0.0, f64::max)
    }

    /// Snapshot of the observed pins for this mesh's pin set.
    pub fn pin_frame(&self, mesh: &TipMesh) -> TactileFrame {
        let pins = mesh.pin_indices().iter().map(|&i| self.pos[i]).collect();
        TactileFrame::new(pins, self.steps_taken)
    }
}

/// Membrane at rest for the given mesh: every vertex projected to the image
/// plane, zero velocity, no contacts.
pub fn init_membrane(mesh: &TipMesh) -> MembraneState {
    MembraneState::new(mesh.vertices().iter().map(image_projection).collect())
}

/// One explicit integration step over the free vertices.
///
/// Order matters and follows the model definition exactly: the force
/// impulse Δv is computed from current positions, positions advance with
/// the pre-update velocity, and velocities become `(1−d)(v + Δv)`.
pub fn integrate_step(state: &mut MembraneState, params: &DynamicsParams) -> Result<()> {
    let n = state.rest.len();
    let mut dv = vec![Vector2::zeros(); n];
    for i in 0..n {
        if state.constrained[i] {
            continue;
        }
        let mut force = pulling_force(&state.pos[i], &state.rest[i], params);
        for c in 0..n {
            if !state.constrained[c] {
                continue;
            }
            force += pushing_force(&state.pos[i], &state.pos[c], params)?;
        }
        dv[i] = force * params.dt;
    }
    state.steps_taken += 1;
    for i in 0..n {
        if state.constrained[i] {
            continue;
        }
        state.pos[i] += state.vel[i] * params.dt;
        state.vel[i] = (state.vel[i] + dv[i]) * (1.0 - params.damping);
        let ok = state.pos[i].iter().chain(state.vel[i].iter()).all(|v| v.is_finite())
            && state.pos[i].norm() < POSITION_BOUND;
        if !ok {
            return Err(Error::NumericalInstability {
                step: state.steps_taken,
            });
        }
    }
    Ok(())
}

/// Outcome of [`relax`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxReport {
    pub steps: usize,
    pub converged: bool,
    pub final_max_displacement: f64,
}

/// Integrate until every vertex is within `tol` mm of rest, or `max_steps`
/// elapse. Contacts are left as-is; release them first to relax to rest.
pub fn relax(
    state: &mut MembraneState,
    params: &DynamicsParams,
    max_steps: usize,
    tol: f64,
) -> Result<RelaxReport> {
    for step in 0..max_steps {
        let d = state.max_displacement();
        if d < tol {
            return Ok(RelaxReport {
                steps: step,
                converged: true,
                final_max_displacement: d,
            });
        }
        integrate_step(state, params)?;
    }
    let d = state.max_displacement();
    Ok(RelaxReport {
        steps: max_steps,
        converged: d < tol,
        final_max_displacement: d,
    })
}

/// Ordered 2D pin positions observed at one recorded instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    pins: Vec<Vector2<f64>>,
    step: usize,
}

impl TactileFrame {
    pub fn new(pins: Vec<Vector2<f64>>, step: usize) -> Self {
        TactileFrame { pins, step }
    }

    pub fn pins(&self) -> &[Vector2<f64>] {
        &self.pins
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn pin_count(&self) -> usize {
        self.pins.len()
    }
}

/// Canonical tap pose: sensor centred on the world z-axis at `height`,
/// dome pointing straight down (the sensor frame is rotated 180° about x,
/// so sensor (x, y, z) maps to world (x, −y, height − z)).
pub fn sensor_pose(height: f64) -> Pose {
    Pose::new([0.0, 0.0, height], [180.0, 0.0, 0.0])
}

/// Downward travel allowed when searching for first touch, mm.
pub const TOUCH_SEARCH_TRAVEL: f64 = 400.0;

/// Sensor height at which the dome first touches the posed shape.
///
/// Scans the canonical tap pose downward from well above the scene until a
/// vertex penetrates, then bisects the last 1 mm bracket to 1e-9 mm.
pub fn find_touch_height(mesh: &TipMesh, shape: &RigidShape, shape_pose: &Pose) -> Result<f64> {
    let clearance = |h: f64| min_clearance(mesh, &sensor_pose(h), shape, shape_pose);
    let start = mesh.tip_radius() + TOUCH_SEARCH_TRAVEL * 0.5;
    if clearance(start) <= 0.0 {
        return Err(Error::NoTouch {
            bracket: TOUCH_SEARCH_TRAVEL,
        });
    }
    let mut hi = start;
    let mut lo = None;
    for step in 1..=(TOUCH_SEARCH_TRAVEL as usize) {
        let h = start - step as f64;
        if clearance(h) < 0.0 {
            lo = Some(h);
            break;
        }
        hi = h;
    }
    let Some(mut lo) = lo else {
        return Err(Error::NoTouch {
            bracket: TOUCH_SEARCH_TRAVEL,
        });
    };
    while hi - lo > 1e-9 {
        let mid = 0.5 * (hi + lo);
        if clearance(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (hi + lo))
}

/// Simulate one tap: lower the sensor along its axis to each press depth in
/// `depth_profile` (mm past first touch; negative values hover above),
/// re-detect contacts, integrate `steps_per_depth` steps, and record one
/// pin frame per depth.
pub fn simulate_tap(
    mesh: &TipMesh,
    shape: &RigidShape,
    shape_pose: &Pose,
    params: &DynamicsParams,
    depth_profile: &[f64],
    steps_per_depth: usize,
) -> Result<Vec<TactileFrame>> {
    if depth_profile.is_empty() {
        return Err(Error::Config("depth profile must be non-empty".into()));
    }
    if steps_per_depth == 0 {
        return Err(Error::Config("steps_per_depth must be at least 1".into()));
    }
    params.validate()?;
    shape.validate()?;
    shape_pose.validate()?;
    let touch = find_touch_height(mesh, shape, shape_pose)?;
    let mut state = init_membrane(mesh);
    let mut frames = Vec::with_capacity(depth_profile.len());
    for &depth in depth_profile {
        let pose = sensor_pose(touch - depth);
        let contacts = detect_contacts(mesh, &pose, shape, shape_pose)?;
        state.apply_contacts(&contacts);
        for _ in 0..steps_per_depth {
            integrate_step(&mut state, params)?;
        }
        frames.push(state.pin_frame(mesh));
    }
    Ok(frames)
}
