//! Sample-point narrow phase between one dynamic body and a static
//! environment built from convex pieces.

use std::f64::consts::TAU;

use nalgebra::{Isometry3, Matrix3, Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactPoint, ContactSet};
use crate::error::{Error, Result};

pub type Pose = Isometry3<f64>;

const NORMAL_TOL: f64 = 1e-9;
const GEOM_TOL: f64 = 1e-12;

/// `{x : n·x ≤ d}` with unit outward normal `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Halfspace {
    #[serde(rename = "n")]
    pub normal: Vector3<f64>,
    #[serde(rename = "d")]
    pub offset: f64,
}

impl Halfspace {
    /// Normalizes `normal` and rescales `offset` to match.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Self {
        let len = normal.norm();
        Self {
            normal: normal / len,
            offset: offset / len,
        }
    }

    /// Halfspace bounded by the plane through `point` with outward `normal`.
    pub fn through(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        Self {
            normal: n,
            offset: n.dot(&point),
        }
    }

    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.offset - self.normal.dot(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexPiece {
    pub id: u32,
    pub halfspaces: Vec<Halfspace>,
    /// Set for slabs and halfspaces that do not enclose a bounded region.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbounded: bool,
}

impl ConvexPiece {
    pub fn new(id: u32, halfspaces: Vec<Halfspace>) -> Self {
        Self {
            id,
            halfspaces,
            unbounded: false,
        }
    }

    /// Single halfspace `n·x ≤ d`.
    pub fn slab(id: u32, normal: Vector3<f64>, offset: f64) -> Self {
        Self {
            id,
            halfspaces: vec![Halfspace::new(normal, offset)],
            unbounded: true,
        }
    }

    /// Axis-aligned box `[min, max]`; faces ordered +z, −z, +x, −x, +y, −y.
    pub fn cuboid(id: u32, min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self::new(
            id,
            vec![
                Halfspace::new(Vector3::z(), max.z),
                Halfspace::new(-Vector3::z(), -min.z),
                Halfspace::new(Vector3::x(), max.x),
                Halfspace::new(-Vector3::x(), -min.x),
                Halfspace::new(Vector3::y(), max.y),
                Halfspace::new(-Vector3::y(), -min.y),
            ],
        )
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        let halfspaces = self
            .halfspaces
            .iter()
            .map(|h| {
                let n = pose.rotation * h.normal;
                Halfspace {
                    normal: n,
                    offset: h.offset + n.dot(&pose.translation.vector),
                }
            })
            .collect();
        Self {
            id: self.id,
            halfspaces,
            unbounded: self.unbounded,
        }
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.halfspaces.iter().all(|h| h.normal.dot(x) <= h.offset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.halfspaces.is_empty() {
            return Err(Error::invalid(format!("piece {} has no halfspaces", self.id)));
        }
        for h in &self.halfspaces {
            if (h.normal.norm() - 1.0).abs() > NORMAL_TOL || !h.offset.is_finite() {
                return Err(Error::invalid(format!(
                    "piece {} has a non-unit normal {:?}",
                    self.id, h.normal
                )));
            }
        }
        if self.unbounded {
            return Ok(());
        }
        if !self.is_bounded() {
            return Err(Error::invalid(format!(
                "piece {} is unbounded but not flagged",
                self.id
            )));
        }
        if self.vertices().is_empty() {
            return Err(Error::invalid(format!("piece {} is empty", self.id)));
        }
        Ok(())
    }

    /// True when the recession cone `{r : n_i·r ≤ 0}` is `{0}`.
    fn is_bounded(&self) -> bool {
        let normals: Vec<Vector3<f64>> = self.halfspaces.iter().map(|h| h.normal).collect();
        if normals.len() < 4 {
            return false;
        }
        let mut independent = false;
        for (a, na) in normals.iter().enumerate() {
            for nb in &normals[a + 1..] {
                let r = na.cross(nb);
                if r.norm() < 1e-9 {
                    continue;
                }
                independent = true;
                for ray in [r, -r] {
                    if normals.iter().all(|n| n.dot(&ray) <= GEOM_TOL) {
                        return false;
                    }
                }
            }
        }
        independent
    }

    /// Corners of a bounded piece, from all feasible triple intersections.
    pub fn vertices(&self) -> Vec<Vector3<f64>> {
        let hs = &self.halfspaces;
        let mut out: Vec<Vector3<f64>> = Vec::new();
        for a in 0..hs.len() {
            for b in a + 1..hs.len() {
                for c in b + 1..hs.len() {
                    let m = Matrix3::from_rows(&[
                        hs[a].normal.transpose(),
                        hs[b].normal.transpose(),
                        hs[c].normal.transpose(),
                    ]);
                    let Some(inv) = m.try_inverse() else { continue };
                    let x = inv * Vector3::new(hs[a].offset, hs[b].offset, hs[c].offset);
                    let scale = x.norm().max(1.0);
                    if hs.iter().all(|h| h.normal.dot(&x) <= h.offset + 1e-9 * scale)
                        && !out.iter().any(|v| (v - x).norm() <= 1e-9 * scale)
                    {
                        out.push(x);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicShape {
    Box {
        half_extents: Vector3<f64>,
    },
    Cylinder {
        radius: f64,
        half_height: f64,
        rim_samples: usize,
    },
}

impl DynamicShape {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DynamicShape::Box { half_extents } => {
                if half_extents.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::invalid(format!("box half-extents {half_extents:?}")));
                }
            }
            DynamicShape::Cylinder {
                radius,
                half_height,
                rim_samples,
            } => {
                if !(radius > 0.0) || !(half_height > 0.0) {
                    return Err(Error::invalid("cylinder dimensions must be > 0"));
                }
                if rim_samples < 8 {
                    return Err(Error::invalid(format!("rim_samples {rim_samples} < 8")));
                }
            }
        }
        Ok(())
    }

    /// Body-frame sample points.
    pub fn local_points(&self) -> Vec<Vector3<f64>> {
        match *self {
            DynamicShape::Box { half_extents: h } => (0..8)
                .map(|i| {
                    let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
                    let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
                    let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
                    Vector3::new(sx * h.x, sy * h.y, sz * h.z)
                })
                .collect(),
            DynamicShape::Cylinder {
                radius,
                half_height,
                rim_samples,
            } => {
                let mut pts = Vec::with_capacity(2 * rim_samples + 2);
                for z in [-half_height, half_height] {
                    for k in 0..rim_samples {
                        let phi = TAU * k as f64 / rim_samples as f64;
                        pts.push(Vector3::new(radius * phi.cos(), radius * phi.sin(), z));
                    }
                }
                pts.push(Vector3::new(0.0, 0.0, -half_height));
                pts.push(Vector3::new(0.0, 0.0, half_height));
                pts
            }
        }
    }

    /// Body-frame inertia of a solid of the given mass.
    pub fn inertia(&self, mass: f64) -> Matrix3<f64> {
        match *self {
            DynamicShape::Box { half_extents: h } => {
                let (x, y, z) = ((2.0 * h.x).powi(2), (2.0 * h.y).powi(2), (2.0 * h.z).powi(2));
                Matrix3::from_diagonal(&Vector3::new(y + z, x + z, x + y)) * (mass / 12.0)
            }
            DynamicShape::Cylinder {
                radius, half_height, ..
            } => {
                let len2 = (2.0 * half_height).powi(2);
                let side = mass * (3.0 * radius * radius + len2) / 12.0;
                Matrix3::from_diagonal(&Vector3::new(side, side, 0.5 * mass * radius * radius))
            }
        }
    }
}

pub fn sample_points(shape: &DynamicShape, pose: &Pose) -> Vec<Vector3<f64>> {
    shape
        .local_points()
        .into_iter()
        .map(|p| (pose * Point3::from(p)).coords)
        .collect()
}

/// Depth and outward normal of the shallowest exit face, if `point` lies
/// inside `piece`.
pub fn point_vs_piece(point: &Vector3<f64>, piece: &ConvexPiece) -> Option<(f64, Unit<Vector3<f64>>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for h in &piece.halfspaces {
        let dist = h.signed_distance(point);
        if dist < 0.0 {
            return None;
        }
        if best.map_or(true, |(d, _)| dist < d) {
            best = Some((dist, h.normal));
        }
    }
    best.map(|(d, n)| (d, Unit::new_normalize(n)))
}

pub fn generate_contacts(
    shape: &DynamicShape,
    pose: &Pose,
    pieces: &[ConvexPiece],
    stiffness: f64,
    damping: f64,
) -> ContactSet {
    let samples = sample_points(shape, pose);
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by_key(|&i| pieces[i].id);
    let mut set = ContactSet::new(stiffness, damping);
    for &pi in &order {
        for x in &samples {
            if let Some((depth, normal)) = point_vs_piece(x, &pieces[pi]) {
                if depth > 0.0 {
                    set.points.push(ContactPoint::new(*x, normal.into_inner(), depth));
                }
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, UnitQuaternion};
    use proptest::prelude::*;

    fn unit_box() -> DynamicShape {
        DynamicShape::Box {
            half_extents: Vector3::repeat(0.5),
        }
    }

    #[test]
    fn box_vertices_at_identity() {
        let pts = sample_points(&unit_box(), &Pose::identity());
        assert_eq!(pts.len(), 8);
        for p in &pts {
            assert!(p.iter().all(|v| v.abs() == 0.5));
        }
        let mut uniq = pts.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
    }

    #[test]
    fn cylinder_samples() {
        let shape = DynamicShape::Cylinder {
            radius: 1.0,
            half_height: 1.0,
            rim_samples: 8,
        };
        let pts = sample_points(&shape, &Pose::identity());
        assert_eq!(pts.len(), 18);
        for p in &pts {
            assert!((p.z.abs() - 1.0).abs() < 1e-15);
        }
        for p in &pts[..16] {
            assert!((p.xy().norm() - 1.0).abs() < 1e-12);
        }
        assert!(shape.validate().is_ok());
        let bad = DynamicShape::Cylinder {
            radius: 1.0,
            half_height: 1.0,
            rim_samples: 7,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rotated_box_same_point_set() {
        let rot = Pose::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
        );
        let a = sample_points(&unit_box(), &Pose::identity());
        let b = sample_points(&unit_box(), &rot);
        for p in &b {
            assert!(a.iter().any(|q| (p - q).norm() < 1e-12));
        }
    }

    #[test]
    fn point_vs_piece_examples() {
        let slab = ConvexPiece::slab(0, Vector3::z(), 0.0);
        assert!(point_vs_piece(&Vector3::new(0.0, 0.0, 0.1), &slab).is_none());
        let (d, n) = point_vs_piece(&Vector3::new(0.0, 0.0, -0.002), &slab).unwrap();
        assert!((d - 0.002).abs() < 1e-15);
        assert_eq!(n.into_inner(), Vector3::z());

        let cube = ConvexPiece::cuboid(1, Vector3::repeat(-0.5), Vector3::repeat(0.5));
        let (d, n) = point_vs_piece(&Vector3::zeros(), &cube).unwrap();
        assert_eq!(d, 0.5);
        assert_eq!(n.into_inner(), cube.halfspaces[0].normal);
    }

    #[test]
    fn generate_contacts_examples() {
        let shape = DynamicShape::Box {
            half_extents: Vector3::repeat(0.05),
        };
        let slab = ConvexPiece::slab(0, Vector3::z(), 0.0);
        let hover = Pose::translation(0.0, 0.0, 0.06);
        assert!(generate_contacts(&shape, &hover, &[slab.clone()], 1e4, 0.0).is_empty());

        let rest = Pose::translation(0.0, 0.0, 0.049);
        let set = generate_contacts(&shape, &rest, &[slab], 1e4, 0.0);
        assert_eq!(set.len(), 4);
        for p in &set.points {
            assert_eq!(p.normal, Vector3::z());
            assert!((p.depth - 0.001).abs() < 1e-12);
        }

        // Two strips meeting at x = 0, listed out of id order.
        let strips = [
            ConvexPiece::cuboid(7, Vector3::new(0.0, -1.0, -1.0), Vector3::new(1.0, 1.0, 0.0)),
            ConvexPiece::cuboid(3, Vector3::new(-1.0, -1.0, -1.0), Vector3::new(0.0, 1.0, 0.0)),
        ];
        let set = generate_contacts(&shape, &rest, &strips, 1e4, 0.0);
        assert_eq!(set.len(), 4);
        assert!(set.points[..2].iter().all(|p| p.position.x < 0.0));
        assert!(set.points[2..].iter().all(|p| p.position.x > 0.0));
    }

    #[test]
    fn validation() {
        let cube = ConvexPiece::cuboid(0, Vector3::zeros(), Vector3::repeat(1.0));
        assert!(cube.validate().is_ok());
        assert_eq!(cube.vertices().len(), 8);
        let mut open = cube.clone();
        open.halfspaces.pop();
        assert!(open.validate().is_err());
        open.unbounded = true;
        assert!(open.validate().is_ok());
        let empty = ConvexPiece::cuboid(0, Vector3::repeat(1.0), Vector3::zeros());
        assert!(empty.validate().is_err());
        assert!(ConvexPiece::slab(0, Vector3::z(), 0.0).validate().is_ok());
    }

    #[test]
    fn piece_json() {
        let text = r#"{"id": 2, "halfspaces": [{"n": [0, 0, 1], "d": 0.5}], "unbounded": true}"#;
        let piece: ConvexPiece = serde_json::from_str(text).unwrap();
        assert_eq!(piece, ConvexPiece::slab(2, Vector3::z(), 0.5));
        let bad = r#"{"id": 2, "halfspaces": [], "colour": 1}"#;
        assert!(serde_json::from_str::<ConvexPiece>(bad).is_err());
    }

    proptest! {
        #[test]
        fn translation_invariance(
            shift in prop::array::uniform3(-5.0f64..5.0),
            pos in prop::array::uniform3(-0.2f64..0.2),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -0.5f64..0.5,
        ) {
            let shift = Vector3::from(shift);
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let shape = DynamicShape::Box { half_extents: Vector3::new(0.1, 0.08, 0.05) };
            let pose = Pose::from_parts(
                Translation3::from(Vector3::from(pos)),
                UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle),
            );
            let pieces = vec![
                ConvexPiece::cuboid(0, Vector3::new(-1.0, -1.0, -1.0), Vector3::new(0.0, 1.0, 0.0)),
                ConvexPiece::cuboid(1, Vector3::new(-0.05, -1.0, -1.0), Vector3::new(1.0, 1.0, 0.01)),
            ];
            let moved: Vec<ConvexPiece> = pieces
                .iter()
                .map(|p| p.transformed(&Pose::translation(shift.x, shift.y, shift.z)))
                .collect();
            let a = generate_contacts(&shape, &pose, &pieces, 1.0, 0.0);
            let b = generate_contacts(&shape, &(Pose::translation(shift.x, shift.y, shift.z) * pose), &moved, 1.0, 0.0);
            // Membership can flip only for points within rounding of a face.
            prop_assume!(a.len() == b.len());
            for (p, q) in a.points.iter().zip(&b.points) {
                prop_assert!((p.depth - q.depth).abs() < 1e-9);
                prop_assert!((p.normal - q.normal).norm() < 1e-12);
                prop_assert!((q.position - p.position - shift).norm() < 1e-9);
                prop_assert!(p.depth > 0.0);
            }
            prop_assert!(a.len() <= 8 * pieces.len());
        }
    }
}
