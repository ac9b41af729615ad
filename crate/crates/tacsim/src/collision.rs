//! Rigid-shape contact detection for the sensor tip.
//!
//! Every evaluation object is a primitive with an exact signed distance
//! function, so contact is a per-vertex SDF query: vertices with negative
//! distance are in contact, and each is resolved to the nearest surface
//! point by walking along the SDF gradient. Resolved points are reported
//! in the sensor's 2D image plane.

use nalgebra::{IsometryMatrix3, Point3, Rotation3, Translation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TipMesh;

/// Rigid collision primitive, dimensions in mm, described in its local
/// frame with +z up:
///
/// - `Plane`: half-space `z <= 0`, surface normal +z.
/// - `Cuboid`: box centred at the origin with the given half-extents.
/// - `Cylinder`: capped cylinder centred at the origin, axis z.
/// - `Pole`: semi-infinite cylinder `z <= 0` with a flat top at `z = 0`.
/// - `Disc`: semi-infinite annular tube `inner <= radius <= outer, z <= 0`;
///   its flat rim at `z = 0` is the tapping surface.
/// - `HalfPlaneEdge`: quarter-space `x <= 0, z <= 0`; the top face ends in
///   a straight edge along the y-axis at `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RigidShape {
    Plane,
    Cuboid { half_extents: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Pole { radius: f64 },
    Disc { inner_radius: f64, outer_radius: f64 },
    HalfPlaneEdge,
}

impl RigidShape {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RigidShape::Plane | RigidShape::HalfPlaneEdge => true,
            RigidShape::Cuboid { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            RigidShape::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
            RigidShape::Pole { radius } => radius > 0.0,
            RigidShape::Disc {
                inner_radius,
                outer_radius,
            } => inner_radius > 0.0 && outer_radius > inner_radius,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid shape dimensions: {self:?}")))
        }
    }

    /// Signed distance from a point in the shape's local frame.
    fn local_sdf(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            RigidShape::Plane => p.z,
            RigidShape::Cuboid { half_extents } => {
                let d = Vector3::new(
                    p.x.abs() - half_extents[0],
                    p.y.abs() - half_extents[1],
                    p.z.abs() - half_extents[2],
                );
                let outside = Vector3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm();
                outside + d.x.max(d.y).max(d.z).min(0.0)
            }
            RigidShape::Cylinder { radius, height } => {
                corner_sdf(p.xy().norm() - radius, p.z.abs() - 0.5 * height)
            }
            RigidShape::Pole { radius } => corner_sdf(p.xy().norm() - radius, p.z),
            RigidShape::Disc {
                inner_radius,
                outer_radius,
            } => {
                let rho = p.xy().norm();
                corner_sdf((inner_radius - rho).max(rho - outer_radius), p.z)
            }
            RigidShape::HalfPlaneEdge => corner_sdf(p.x, p.z),
        }
    }
}

/// Exact signed distance for the 2D region `{a <= 0, b <= 0}` extruded
/// along the remaining axis.
fn corner_sdf(a: f64, b: f64) -> f64 {
    let outside = (a.max(0.0).powi(2) + b.max(0.0).powi(2)).sqrt();
    outside + a.max(b).min(0.0)
}

/// Rigid-body pose: translation in mm plus intrinsic x-y-z Euler angles in
/// degrees (rotate about body x, then the rotated y, then the rotated z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub translation: [f64; 3],
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            translation: [0.0; 3],
            rotation_deg: [0.0; 3],
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            translation: [x, y, z],
            rotation_deg: [0.0; 3],
        }
    }

    pub fn new(translation: [f64; 3], rotation_deg: [f64; 3]) -> Self {
        Pose {
            translation,
            rotation_deg,
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        let [a, b, c] = self.rotation_deg.map(f64::to_radians);
        Rotation3::from_axis_angle(&Vector3::x_axis(), a)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), b)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), c)
    }

    pub fn to_isometry(&self) -> IsometryMatrix3<f64> {
        IsometryMatrix3::from_parts(
            Translation3::new(
                self.translation[0],
                self.translation[1],
                self.translation[2],
            ),
            self.rotation(),
        )
    }

    /// Recover a pose from an isometry (intrinsic x-y-z Euler extraction).
    pub fn from_isometry(iso: &IsometryMatrix3<f64>) -> Self {
        let m = iso.rotation.matrix();
        // R = Rx(a)·Ry(b)·Rz(c) has R[(0,2)] = sin b.
        let b = m[(0, 2)].clamp(-1.0, 1.0).asin();
        let (a, c) = if m[(0, 2)].abs() < 1.0 - 1e-12 {
            (
                (-m[(1, 2)]).atan2(m[(2, 2)]),
                (-m[(0, 1)]).atan2(m[(0, 0)]),
            )
        } else {
            // Gimbal lock: fold the z rotation into x.
            (m[(1, 0)].atan2(m[(1, 1)]), 0.0)
        };
        Pose {
            translation: [iso.translation.x, iso.translation.y, iso.translation.z],
            rotation_deg: [a.to_degrees(), b.to_degrees(), c.to_degrees()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .translation
            .iter()
            .chain(self.rotation_deg.iter())
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config("pose has non-finite components".into()))
        }
    }
}

/// Signed distance from world point `p` to the posed shape, mm.
/// Negative inside, positive outside, zero on the surface.
pub fn signed_distance(shape: &RigidShape, pose: &Pose, p: &Vector3<f64>) -> f64 {
    signed_distance_iso(shape, &pose.to_isometry(), p)
}

fn signed_distance_iso(shape: &RigidShape, iso: &IsometryMatrix3<f64>, p: &Vector3<f64>) -> f64 {
    let local = iso.inverse_transform_point(&Point3::from(*p));
    shape.local_sdf(&local.coords)
}

const PROJECT_MAX_ITERS: usize = 20;
const PROJECT_TOL: f64 = 1e-6;
const GRAD_STEP: f64 = 1e-5;

/// Nearest-surface projection: walk along the SDF gradient until the
/// surface is reached (|sdf| < 1e-6 mm) or the iteration budget runs out.
fn project_to_surface(
    shape: &RigidShape,
    iso: &IsometryMatrix3<f64>,
    p: &Vector3<f64>,
) -> Vector3<f64> {
    let mut q = *p;
    for _ in 0..PROJECT_MAX_ITERS {
        let d = signed_distance_iso(shape, iso, &q);
        if d.abs() < PROJECT_TOL {
            break;
        }
        let mut grad = Vector3::zeros();
        for axis in 0..3 {
            let mut hi = q;
            let mut lo = q;
            hi[axis] += GRAD_STEP;
            lo[axis] -= GRAD_STEP;
            grad[axis] = (signed_distance_iso(shape, iso, &hi)
                - signed_distance_iso(shape, iso, &lo))
                / (2.0 * GRAD_STEP);
        }
        let norm = grad.norm();
        if norm < 1e-12 {
            break;
        }
        q -= grad * (d / norm);
    }
    q
}

/// Vertices of the posed sensor mesh that penetrate the posed shape,
/// together with their nearest-surface positions in the sensor image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    contact_indices: Vec<usize>,
    contact_points: Vec<Vector2<f64>>,
}

impl ContactSet {
    pub fn empty() -> Self {
        ContactSet {
            contact_indices: Vec::new(),
            contact_points: Vec::new(),
        }
    }

    pub fn new(contact_indices: Vec<usize>, contact_points: Vec<Vector2<f64>>) -> Self {
        assert_eq!(contact_indices.len(), contact_points.len());
        ContactSet {
            contact_indices,
            contact_points,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.contact_indices
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.contact_points
    }

    pub fn len(&self) -> usize {
        self.contact_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contact_indices.is_empty()
    }

    pub fn contains(&self, vertex: usize) -> bool {
        self.contact_indices.contains(&vertex)
    }
}

/// Smallest signed distance from any posed-mesh vertex to the posed shape.
/// Positive means full clearance, negative means some vertex penetrates.
pub fn min_clearance(
    mesh: &TipMesh,
    sensor_pose: &Pose,
    shape: &RigidShape,
    shape_pose: &Pose,
) -> f64 {
    let sensor_iso = sensor_pose.to_isometry();
    let shape_iso = shape_pose.to_isometry();
    mesh.vertices()
        .iter()
        .map(|v| {
            let world = sensor_iso.transform_point(&Point3::from(*v)).coords;
            signed_distance_iso(shape, &shape_iso, &world)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Detect which mesh vertices penetrate the shape and resolve each to the
/// nearest surface point, expressed in the sensor image plane (mm).
///
/// Fails with [`Error::DegenerateContact`] when more than half of the
/// vertices penetrate (the sensor was driven implausibly deep).
pub fn detect_contacts(
    mesh: &TipMesh,
    sensor_pose: &Pose,
    shape: &RigidShape,
    shape_pose: &Pose,
) -> Result<ContactSet> {
    let sensor_iso = sensor_pose.to_isometry();
    let shape_iso = shape_pose.to_isometry();
    let mut indices = Vec::new();
    let mut points = Vec::new();
    for (i, v) in mesh.vertices().iter().enumerate() {
        let world = sensor_iso.transform_point(&Point3::from(*v)).coords;
        if signed_distance_iso(shape, &shape_iso, &world) < 0.0 {
            let surface = project_to_surface(shape, &shape_iso, &world);
            let in_sensor = sensor_iso.inverse_transform_point(&Point3::from(surface));
            indices.push(i);
            points.push(Vector2::new(in_sensor.x, in_sensor.y));
        }
    }
    if 2 * indices.len() > mesh.vertex_count() {
        return Err(Error::DegenerateContact {
            contacts: indices.len(),
            vertices: mesh.vertex_count(),
        });
    }
    Ok(ContactSet::new(indices, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_tip_mesh;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sensor_above(height: f64) -> Pose {
        // Dome pointing down: sensor +z maps to world -z.
        Pose::new([0.0, 0.0, height], [180.0, 0.0, 0.0])
    }

    #[test]
    fn plane_distance_is_height() {
        let d = signed_distance(
            &RigidShape::Plane,
            &Pose::identity(),
            &Vector3::new(0.0, 0.0, 1.0),
        );
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_three_four_five_point_on_surface() {
        let shape = RigidShape::Cylinder {
            radius: 5.0,
            height: 10.0,
        };
        let d = signed_distance(&shape, &Pose::identity(), &Vector3::new(3.0, 4.0, 0.0));
        assert!(d.abs() < 1e-12);
    }

    /// Brute-force nearest distance to a densely sampled cuboid surface.
    fn cuboid_surface_distance(he: [f64; 3], p: Vector3<f64>) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=n {
                let u = -1.0 + 2.0 * i as f64 / n as f64;
                let v = -1.0 + 2.0 * j as f64 / n as f64;
                for (q, sign) in [(0usize, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)]
                {
                    let mut s = Vector3::zeros();
                    match q {
                        0 => {
                            s.x = sign * he[0];
                            s.y = u * he[1];
                            s.z = v * he[2];
                        }
                        1 => {
                            s.x = u * he[0];
                            s.y = sign * he[1];
                            s.z = v * he[2];
                        }
                        _ => {
                            s.x = u * he[0];
                            s.y = v * he[1];
                            s.z = sign * he[2];
                        }
                    }
                    best = best.min((p - s).norm());
                }
            }
        }
        best
    }

    #[test]
    fn cuboid_distance_matches_brute_force_surface_search() {
        let he = [1.0, 1.0, 1.0];
        let shape = RigidShape::Cuboid { half_extents: he };
        let d = signed_distance(&shape, &Pose::identity(), &Vector3::new(2.0, 0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);

        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let p = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let sdf = signed_distance(&shape, &Pose::identity(), &p);
            let brute = cuboid_surface_distance(he, p);
            assert!(
                (sdf.abs() - brute).abs() < 1e-2,
                "p={p:?} sdf={sdf} brute={brute}"
            );
        }
    }

    #[test]
    fn pole_and_disc_and_edge_sdf_signs() {
        let pole = RigidShape::Pole { radius: 2.0 };
        let id = Pose::identity();
        assert!(signed_distance(&pole, &id, &Vector3::new(0.0, 0.0, -1.0)) < 0.0);
        assert!(signed_distance(&pole, &id, &Vector3::new(0.0, 0.0, 1.0)) > 0.0);
        assert!(signed_distance(&pole, &id, &Vector3::new(3.0, 0.0, -5.0)) > 0.0);
        // Above the rim: nearest point is the rim circle.
        let d = signed_distance(&pole, &id, &Vector3::new(3.0, 0.0, 1.0));
        assert!((d - (1.0f64 + 1.0).sqrt()).abs() < 1e-12);

        let disc = RigidShape::Disc {
            inner_radius: 1.0,
            outer_radius: 2.0,
        };
        assert!(signed_distance(&disc, &id, &Vector3::new(1.5, 0.0, -0.5)) < 0.0);
        assert!(signed_distance(&disc, &id, &Vector3::new(0.0, 0.0, -0.5)) > 0.0);
        assert!(signed_distance(&disc, &id, &Vector3::new(1.5, 0.0, 0.5)) > 0.0);

        let edge = RigidShape::HalfPlaneEdge;
        assert!(signed_distance(&edge, &id, &Vector3::new(-1.0, 0.0, -1.0)) < 0.0);
        assert!(signed_distance(&edge, &id, &Vector3::new(1.0, 0.0, -1.0)) > 0.0);
        assert!(signed_distance(&edge, &id, &Vector3::new(-1.0, 5.0, 1.0)) > 0.0);
        // Diagonal from the edge line.
        let d = signed_distance(&edge, &id, &Vector3::new(3.0, -2.0, 4.0));
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn no_contact_with_clearance() {
        let mesh = generate_tip_mesh(6, 20.0);
        // Dome apex reaches z = h - 20; plane surface at z = 0.
        let contacts = detect_contacts(
            &mesh,
            &sensor_above(30.0),
            &RigidShape::Plane,
            &Pose::identity(),
        )
        .unwrap();
        assert!(contacts.is_empty());
    }

    #[test]
    fn plane_press_contacts_match_per_vertex_test() {
        let mesh = generate_tip_mesh(6, 20.0);
        let sensor = sensor_above(19.0); // apex 1 mm below the surface
        let contacts = detect_contacts(&mesh, &sensor, &RigidShape::Plane, &Pose::identity())
            .unwrap();
        // Brute force: vertex world z below 0.
        let iso = sensor.to_isometry();
        let expect: Vec<usize> = mesh
            .vertices()
            .iter()
            .enumerate()
            .filter(|(_, v)| iso.transform_point(&Point3::from(**v)).z < 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(contacts.indices(), expect.as_slice());
        assert!(!contacts.is_empty());
    }

    #[test]
    fn centred_pole_tap_contacts_central_pin() {
        let mesh = generate_tip_mesh(6, 20.0);
        let sensor = sensor_above(19.5); // apex 0.5 mm into the pole top
        let contacts = detect_contacts(
            &mesh,
            &sensor,
            &RigidShape::Pole { radius: 1.0 },
            &Pose::identity(),
        )
        .unwrap();
        assert!(contacts.contains(0));
    }

    #[test]
    fn resolved_points_lie_on_surface() {
        let mesh = generate_tip_mesh(6, 20.0);
        let shape = RigidShape::Cylinder {
            radius: 15.0,
            height: 30.0,
        };
        let shape_pose = Pose::new([1.0, -2.0, -15.0], [10.0, -5.0, 30.0]);
        let sensor = sensor_above(18.0);
        let contacts = detect_contacts(&mesh, &sensor, &shape, &shape_pose).unwrap();
        assert!(!contacts.is_empty());
        // Re-embed each image point at the resolved surface height by
        // re-running the projection from the vertex, in world space.
        let sensor_iso = sensor.to_isometry();
        let shape_iso = shape_pose.to_isometry();
        for &i in contacts.indices() {
            let world = sensor_iso
                .transform_point(&Point3::from(mesh.vertices()[i]))
                .coords;
            let surface = project_to_surface(&shape, &shape_iso, &world);
            let d = signed_distance(&shape, &shape_pose, &surface);
            assert!(d.abs() < 1e-5, "vertex {i}: residual sdf {d}");
        }
    }

    #[test]
    fn invariant_under_common_rigid_transform() {
        let mesh = generate_tip_mesh(6, 20.0);
        let shape = RigidShape::Cuboid {
            half_extents: [15.0, 15.0, 15.0],
        };
        let shape_pose = Pose::new([0.5, 1.0, -15.0], [5.0, 15.0, -20.0]);
        let sensor = sensor_above(18.5);
        let base = detect_contacts(&mesh, &sensor, &shape, &shape_pose).unwrap();

        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..5 {
            let t = Pose::new(
                [
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ],
                [
                    rng.random_range(-90.0..90.0),
                    rng.random_range(-90.0..90.0),
                    rng.random_range(-90.0..90.0),
                ],
            );
            let iso = t.to_isometry();
            let sensor_t = Pose::from_isometry(&(iso * sensor.to_isometry()));
            let shape_t = Pose::from_isometry(&(iso * shape_pose.to_isometry()));
            let moved = detect_contacts(&mesh, &sensor_t, &shape, &shape_t).unwrap();
            assert_eq!(moved.indices(), base.indices());
            for (a, b) in moved.points().iter().zip(base.points()) {
                assert!((a - b).norm() < 1e-6, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn deeper_press_never_removes_contacts_on_convex_shapes() {
        let mesh = generate_tip_mesh(6, 20.0);
        for shape in [
            RigidShape::Plane,
            RigidShape::Cuboid {
                half_extents: [25.0, 25.0, 10.0],
            },
        ] {
            let pose = match shape {
                RigidShape::Cuboid { .. } => Pose::from_translation(0.0, 0.0, -10.0),
                _ => Pose::identity(),
            };
            let mut prev: Vec<usize> = Vec::new();
            for step in 0..6 {
                let depth = 0.5 * step as f64;
                let contacts =
                    detect_contacts(&mesh, &sensor_above(20.0 - depth), &shape, &pose).unwrap();
                for i in &prev {
                    assert!(contacts.indices().contains(i), "lost contact {i} at {depth}");
                }
                prev = contacts.indices().to_vec();
            }
        }
    }

    #[test]
    fn implausibly_deep_press_is_degenerate() {
        let mesh = generate_tip_mesh(6, 20.0);
        let err = detect_contacts(
            &mesh,
            &sensor_above(2.0),
            &RigidShape::Plane,
            &Pose::identity(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateContact { .. }));
    }

    #[test]
    fn euler_round_trip_through_isometry() {
        let pose = Pose::new([1.0, -2.0, 3.0], [25.0, -40.0, 110.0]);
        let back = Pose::from_isometry(&pose.to_isometry());
        for i in 0..3 {
            assert!((pose.translation[i] - back.translation[i]).abs() < 1e-12);
            assert!((pose.rotation_deg[i] - back.rotation_deg[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let pose = Pose::new([0.0; 3], [33.0, -71.0, 145.0]);
        let r = pose.rotation();
        let i = r.matrix().transpose() * r.matrix();
        for row in 0..3 {
            for col in 0..3 {
                let expect = if row == col { 1.0 } else { 0.0 };
                assert!((i[(row, col)] - expect).abs() < 1e-9);
            }
        }
    }
}
