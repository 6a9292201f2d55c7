//! Contact data model, the axis-weighted contact metric and the equivalent
//! environment stiffness of a contact set.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `‖n‖ = 1` for contact normals.
pub const UNIT_TOL: f64 = 1e-9;

/// One generated contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    /// World position (m).
    pub position: Vector3<f64>,
    /// Unit normal pointing from the environment into the body.
    pub normal: Vector3<f64>,
    /// Penetration depth (m), non-negative.
    pub depth: f64,
    /// Stiffness scale in `[0, 1]`; 1 means unscaled.
    pub scale: f64,
}

impl ContactPoint {
    pub fn new(position: Vector3<f64>, normal: Vector3<f64>, depth: f64) -> Self {
        Self {
            position,
            normal,
            depth,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.normal.norm();
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::invalid(format!("contact normal has norm {norm}")));
        }
        if !(self.depth >= 0.0) || !self.depth.is_finite() {
            return Err(Error::invalid(format!("contact depth {} < 0", self.depth)));
        }
        if !(0.0..=1.0).contains(&self.scale) {
            return Err(Error::invalid(format!("contact scale {} outside [0, 1]", self.scale)));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("contact position is not finite"));
        }
        Ok(())
    }

    /// The clustering feature `[n, p]`.
    pub fn feature(&self) -> [f64; 6] {
        let (n, p) = (self.normal, self.position);
        [n.x, n.y, n.z, p.x, p.y, p.z]
    }
}

/// Ordered contacts sharing one material.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub points: Vec<ContactPoint>,
    /// Contact stiffness K (N/m), shared by every point.
    pub stiffness: f64,
    /// Per-contact normal damping b (N·s/m).
    pub damping: f64,
}

impl ContactSet {
    pub fn new(stiffness: f64, damping: f64) -> Self {
        Self {
            points: Vec::new(),
            stiffness,
            damping,
        }
    }

    pub fn with_points(points: Vec<ContactPoint>, stiffness: f64, damping: f64) -> Self {
        Self {
            points,
            stiffness,
            damping,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) || !self.stiffness.is_finite() {
            return Err(Error::invalid(format!("stiffness {} must be > 0", self.stiffness)));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(Error::invalid(format!("damping {} must be >= 0", self.damping)));
        }
        for (i, p) in self.points.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::invalid(format!("point {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let doc: ContactSetDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let set = Self::from(doc);
        set.validate()?;
        Ok(set)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ContactSetDoc::from(self)).expect("contact set serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::trajectory::write_atomic(path.as_ref(), self.to_json_string().as_bytes())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactSetDoc {
    stiffness: f64,
    #[serde(default)]
    damping: f64,
    points: Vec<ContactPointDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactPointDoc {
    p: [f64; 3],
    n: [f64; 3],
    depth: f64,
    #[serde(default = "one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

impl From<ContactSetDoc> for ContactSet {
    fn from(doc: ContactSetDoc) -> Self {
        let points = doc
            .points
            .into_iter()
            .map(|p| ContactPoint {
                position: Vector3::from(p.p),
                normal: Vector3::from(p.n),
                depth: p.depth,
                scale: p.scale,
            })
            .collect();
        ContactSet::with_points(points, doc.stiffness, doc.damping)
    }
}

impl From<&ContactSet> for ContactSetDoc {
    fn from(set: &ContactSet) -> Self {
        ContactSetDoc {
            stiffness: set.stiffness,
            damping: set.damping,
            points: set
                .points
                .iter()
                .map(|p| ContactPointDoc {
                    p: p.position.into(),
                    n: p.normal.into(),
                    depth: p.depth,
                    scale: p.scale,
                })
                .collect(),
        }
    }
}

/// Symmetric positive semi-definite 3×3 stiffness (N/m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessMatrix(pub Matrix3<f64>);

impl StiffnessMatrix {
    pub fn zero() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn diagonal(&self) -> Vector3<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0 - self.0.transpose()).abs().max() <= tol
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigenvalues().min()
    }
}

/// `‖n_b − n_a‖² + c·‖p_b − p_a‖²`.
pub fn axis_distance(a: &ContactPoint, b: &ContactPoint, c: f64) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::invalid(format!("position weight c = {c} must be >= 0")));
    }
    Ok(feature_distance(&a.feature(), &b.feature(), c))
}

/// Axis-weighted distance on `[n, p]` features. `c` is assumed valid.
#[inline]
pub(crate) fn feature_distance(a: &[f64; 6], b: &[f64; 6], c: f64) -> f64 {
    let dn = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2);
    let dp = (b[3] - a[3]).powi(2) + (b[4] - a[4]).powi(2) + (b[5] - a[5]).powi(2);
    dn + c * dp
}

/// `K · Σ s_i n_i n_iᵀ`; the zero matrix for an empty set.
pub fn equivalent_stiffness(set: &ContactSet) -> StiffnessMatrix {
    let mut sum = Matrix3::zeros();
    for p in &set.points {
        sum += p.normal * p.normal.transpose() * p.scale;
    }
    StiffnessMatrix(sum * set.stiffness)
}

/// Diagonal of [`equivalent_stiffness`] without building the full matrix.
///
/// Uses the same per-axis summation as the bound check in
/// [`crate::stiffness_qp::solve_scaling`], so the two agree bit for bit.
pub fn net_stiffness_diagonal(set: &ContactSet) -> Vector3<f64> {
    let mut acc = Vector3::zeros();
    for p in &set.points {
        acc += axis_stiffness_vector(p) * p.scale;
    }
    acc * set.stiffness
}

/// `c = diag(n nᵀ) = (n_x², n_y², n_z²)`.
pub fn axis_stiffness_vector(p: &ContactPoint) -> Vector3<f64> {
    p.normal.component_mul(&p.normal)
}
