//! Procedural sensor-tip geometry.
//!
//! The tip is a spherical dome carrying pins in concentric hexagonal rings:
//! one central vertex plus ring `k` holding `6k` vertices, evenly spaced in
//! azimuth. Ring `k` sits at polar angle `k/(rings+1)` of the dome extent,
//! so the outermost ring never reaches the dome rim. All rings except the
//! outermost are observed pins; the outermost ring exists in the mesh (its
//! vertices take part in contact and deformation) but is not reported in
//! tactile frames.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polar extent of the dome, radians. Ring `k` of `n` lies at
/// `k/(n+1)` of this angle from the sensor axis.
pub const DOME_POLAR_EXTENT: f64 = std::f64::consts::FRAC_PI_3;

/// Default ring count; yields 127 vertices and 91 observed pins.
pub const DEFAULT_RINGS: usize = 6;

/// Default dome radius in millimetres.
pub const DEFAULT_TIP_RADIUS: f64 = 20.0;

/// Rest geometry of the sensor tip.
///
/// Coordinates are in the sensor frame: origin at the dome's centre of
/// curvature, z-axis along the sensor axis pointing away from the camera
/// toward the contact surface. Every vertex lies on the sphere of radius
/// `tip_radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct TipMesh {
    vertices: Vec<Vector3<f64>>,
    pin_indices: Vec<usize>,
    tip_radius: f64,
}

#[derive(Serialize, Deserialize)]
struct MeshDoc {
    tip_radius: f64,
    vertices: Vec<[f64; 3]>,
    pin_indices: Vec<usize>,
}

impl TipMesh {
    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn pin_indices(&self) -> &[usize] {
        &self.pin_indices
    }

    pub fn tip_radius(&self) -> f64 {
        self.tip_radius
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn pin_count(&self) -> usize {
        self.pin_indices.len()
    }

    /// Rest positions of the observed pins projected to the image plane, in mm.
    pub fn rest_pin_projection(&self) -> Vec<Vector2<f64>> {
        self.pin_indices
            .iter()
            .map(|&i| image_projection(&self.vertices[i]))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = MeshDoc {
            tip_radius: self.tip_radius,
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            pin_indices: self.pin_indices.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("mesh serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MeshDoc = serde_json::from_str(s).map_err(|e| Error::Parse {
            path: "<mesh json>".into(),
            message: e.to_string(),
        })?;
        if doc.tip_radius <= 0.0 {
            return Err(Error::Config("tip_radius must be > 0".into()));
        }
        let n = doc.vertices.len();
        let mut seen = vec![false; n];
        for &p in &doc.pin_indices {
            if p >= n {
                return Err(Error::Config(format!("pin index {p} out of range {n}")));
            }
            if seen[p] {
                return Err(Error::Config(format!("duplicate pin index {p}")));
            }
            seen[p] = true;
        }
        Ok(TipMesh {
            vertices: doc
                .vertices
                .iter()
                .map(|&[x, y, z]| Vector3::new(x, y, z))
                .collect(),
            pin_indices: doc.pin_indices,
            tip_radius: doc.tip_radius,
        })
    }
}

impl Default for TipMesh {
    fn default() -> Self {
        generate_tip_mesh(DEFAULT_RINGS, DEFAULT_TIP_RADIUS)
    }
}

/// Build the dome mesh: 1 central vertex plus `6k` vertices on ring `k`,
/// all at distance `tip_radius` from the origin. Observed pins are the
/// vertices of rings `0..rings`; with `rings = 0` the single central
/// vertex is the only pin.
pub fn generate_tip_mesh(rings: usize, tip_radius: f64) -> TipMesh {
    assert!(tip_radius > 0.0, "tip_radius must be > 0");
    let mut vertices = Vec::with_capacity(1 + 3 * rings * (rings + 1));
    vertices.push(Vector3::new(0.0, 0.0, tip_radius));
    for k in 1..=rings {
        let polar = DOME_POLAR_EXTENT * k as f64 / (rings + 1) as f64;
        let (sin_p, cos_p) = polar.sin_cos();
        let count = 6 * k;
        for j in 0..count {
            let azimuth = std::f64::consts::TAU * j as f64 / count as f64;
            let (sin_a, cos_a) = azimuth.sin_cos();
            vertices.push(Vector3::new(
                tip_radius * sin_p * cos_a,
                tip_radius * sin_p * sin_a,
                tip_radius * cos_p,
            ));
        }
    }
    let observed = if rings == 0 {
        1
    } else {
        1 + 3 * (rings - 1) * rings // rings 0..rings-1, outermost unobserved
    };
    TipMesh {
        vertices,
        pin_indices: (0..observed).collect(),
        tip_radius,
    }
}

/// Orthographic camera-view projection: drop the axial coordinate.
pub fn image_projection(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_rings_gives_127_vertices_and_91_pins() {
        let mesh = generate_tip_mesh(6, 20.0);
        assert_eq!(mesh.vertex_count(), 127); // 1+6+12+18+24+30+36
        assert_eq!(mesh.pin_count(), 91); // 1+6+12+18+24+30
    }

    #[test]
    fn zero_rings_degenerates_to_single_pin() {
        let mesh = generate_tip_mesh(0, 20.0);
        assert_eq!(mesh.vertex_count(), 1);
        assert_eq!(mesh.pin_indices(), &[0]);
    }

    #[test]
    fn ring_k_has_6k_vertices() {
        // Brute-force count by polar angle.
        let rings = 6;
        let mesh = generate_tip_mesh(rings, 20.0);
        for k in 1..=rings {
            let polar = DOME_POLAR_EXTENT * k as f64 / (rings + 1) as f64;
            let z = 20.0 * polar.cos();
            let count = mesh
                .vertices()
                .iter()
                .filter(|v| (v.z - z).abs() < 1e-9)
                .count();
            assert_eq!(count, 6 * k, "ring {k}");
        }
    }

    #[test]
    fn all_vertices_on_dome_surface() {
        let mesh = generate_tip_mesh(6, 20.0);
        for v in mesh.vertices() {
            assert!((v.norm() - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn central_pin_projects_to_origin() {
        let mesh = TipMesh::default();
        let p = image_projection(&mesh.vertices()[mesh.pin_indices()[0]]);
        assert_eq!(p, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn sixfold_rotational_symmetry() {
        let mesh = generate_tip_mesh(6, 20.0);
        let angle = std::f64::consts::FRAC_PI_3;
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
        for v in mesh.vertices() {
            let r = rot * v;
            let nearest = mesh
                .vertices()
                .iter()
                .map(|u| (u - r).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-9, "rotated vertex {r:?} not in vertex set");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_tip_mesh(6, 20.0);
        let b = generate_tip_mesh(6, 20.0);
        assert_eq!(a, b);
        for (u, v) in a.vertices().iter().zip(b.vertices()) {
            assert_eq!(u.x.to_bits(), v.x.to_bits());
            assert_eq!(u.y.to_bits(), v.y.to_bits());
            assert_eq!(u.z.to_bits(), v.z.to_bits());
        }
    }

    #[test]
    fn projection_drops_axial_coordinate() {
        assert_eq!(
            image_projection(&Vector3::new(0.0, 0.0, 5.0)),
            Vector2::new(0.0, 0.0)
        );
        assert_eq!(
            image_projection(&Vector3::new(1.5, -2.0, 4.2)),
            Vector2::new(1.5, -2.0)
        );
    }

    #[test]
    fn json_round_trip() {
        let mesh = TipMesh::default();
        let json = mesh.to_json();
        let back = TipMesh::from_json(&json).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn json_rejects_bad_pin_indices() {
        let doc = r#"{"tip_radius": 20.0, "vertices": [[0,0,20]], "pin_indices": [3]}"#;
        assert!(TipMesh::from_json(doc).is_err());
        let doc = r#"{"tip_radius": 20.0, "vertices": [[0,0,20],[1,0,19]], "pin_indices": [0,0]}"#;
        assert!(TipMesh::from_json(doc).is_err());
    }
}
