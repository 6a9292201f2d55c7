//! JSON scene configuration with dotted-path overrides.

use std::path::Path;

use nalgebra::{Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::collision::{ConvexPiece, DynamicShape, Halfspace, Pose};
use crate::control::ControllerGains;
use crate::dynamics::{BodyState, FrictionParams, Material, SimConfig};
use crate::error::{Error, Result};
use crate::reducer::ReductionConfig;
use crate::scenarios::{
    default_incline_friction, shipped_force_gains, DoublePinScene, FlatForceScene, InclineScene, InclineStrips,
};
use crate::stiffness_qp::StiffnessBound;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub scene: SceneSpec,
    #[serde(default)]
    pub sim: SimSpec,
    pub material: MaterialSpec,
    #[serde(default)]
    pub friction: Option<FrictionParams>,
    #[serde(default)]
    pub reduction: Toggle<ReductionSpec>,
    #[serde(default)]
    pub stiffness_bound: Toggle<BoundSpec>,
    #[serde(default)]
    pub controller: Option<ControllerGains>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    Incline(InclineSpec),
    FlatForce(FlatForceScene),
    DoublePin(DoublePinScene),
    Custom(CustomSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclineSpec {
    pub incline_strips: InclineStrips,
    #[serde(default = "box_half")]
    pub half_extent: f64,
    #[serde(default = "unit_mass")]
    pub mass: f64,
    #[serde(default = "incline_start")]
    pub start: f64,
}

fn box_half() -> f64 {
    0.05
}
fn unit_mass() -> f64 {
    1.0
}
fn incline_start() -> f64 {
    0.06
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub shape: DynamicShape,
    #[serde(default = "unit_mass")]
    pub mass: f64,
    pub position: Vector3<f64>,
    #[serde(default)]
    pub rotation: Option<AxisAngle>,
    #[serde(default)]
    pub linear_velocity: Option<Vector3<f64>>,
    pub pieces: Vec<PieceSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisAngle {
    pub axis: Vector3<f64>,
    pub angle_deg: f64,
}

impl AxisAngle {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        if self.axis.norm() == 0.0 {
            return UnitQuaternion::identity();
        }
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(self.axis), self.angle_deg.to_radians())
    }
}

/// A convex piece, optionally repeated `copies` times with consecutive ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub id: u32,
    pub halfspaces: Vec<Halfspace>,
    #[serde(default)]
    pub unbounded: bool,
    #[serde(default = "one_copy")]
    pub copies: u32,
}

fn one_copy() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_gravity")]
    pub gravity: Vector3<f64>,
    #[serde(default = "one_step")]
    pub record_every: usize,
}

fn default_dt() -> f64 {
    1e-4
}
fn default_duration() -> f64 {
    3.0
}
fn default_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}
fn one_step() -> usize {
    1
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            duration: default_duration(),
            gravity: default_gravity(),
            record_every: one_step(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub stiffness: f64,
    /// Defaults to critical damping of one of four contacts.
    #[serde(default)]
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disabled {
    Disabled,
}

/// Either the string `"disabled"` or the settings object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Toggle<T> {
    Off(Disabled),
    On(T),
}

impl<T> Default for Toggle<T> {
    fn default() -> Self {
        Toggle::Off(Disabled::Disabled)
    }
}

impl<T> Toggle<T> {
    pub fn enabled(&self) -> Option<&T> {
        match self {
            Toggle::On(t) => Some(t),
            Toggle::Off(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSpec {
    pub k: usize,
    /// Defaults to `1/L²` with `L` the body's bounding diagonal.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
}

/// `{"k_max": 2e5}`, `{"k_max": {"factor": 2}}` or `{"factor": 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    KMax { k_max: KMaxValue },
    Factor { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KMaxValue {
    Absolute(f64),
    Factor { factor: f64 },
}

impl BoundSpec {
    pub fn bound(&self) -> StiffnessBound {
        match *self {
            BoundSpec::KMax { k_max: KMaxValue::Absolute(k) } => StiffnessBound::Absolute(k),
            BoundSpec::KMax { k_max: KMaxValue::Factor { factor } } | BoundSpec::Factor { factor } => {
                StiffnessBound::Factor(factor)
            }
        }
    }
}

/// Everything needed to run one configured scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Incline {
        scene: InclineScene,
        sim: SimConfig,
    },
    FlatForce {
        scene: FlatForceScene,
        gains: ControllerGains,
        stiffness: f64,
        bound: Option<StiffnessBound>,
    },
    DoublePin {
        scene: DoublePinScene,
    },
    Custom {
        shape: DynamicShape,
        initial: BodyState,
        pieces: Vec<ConvexPiece>,
        sim: SimConfig,
    },
}

impl SceneConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        serde_path_to_error::deserialize(value).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Read `path`, apply `key.path=value` overrides, and validate.
    pub fn load(path: &Path, overrides: &[String]) -> Result<(Self, Value)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut value: Value = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg = Self::from_value(value.clone())?;
        cfg.build()?;
        Ok((cfg, value))
    }

    fn reduction(&self, body_diagonal: f64) -> Option<ReductionConfig> {
        self.reduction.enabled().map(|r| {
            let mut cfg = match r.c {
                Some(c) => ReductionConfig::new(r.k, c),
                None => ReductionConfig::for_scene_diagonal(r.k, body_diagonal),
            };
            if let Some(m) = r.max_iters {
                cfg.max_iters = m;
            }
            if let Some(t) = r.tol {
                cfg.tol = t;
            }
            cfg
        })
    }

    fn sim_config(&self, mass: f64, friction: FrictionParams, body_diagonal: f64) -> SimConfig {
        let material = match self.material.damping {
            Some(b) => Material {
                stiffness: self.material.stiffness,
                damping: b,
            },
            None => Material::critically_damped(self.material.stiffness, mass),
        };
        SimConfig {
            dt: self.sim.dt,
            gravity: self.sim.gravity,
            material,
            friction,
            duration: self.sim.duration,
            reduction: self.reduction(body_diagonal),
            stiffness_bound: self.stiffness_bound.enabled().map(BoundSpec::bound),
            record_every: self.sim.record_every,
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        let exp = match &self.scene {
            SceneSpec::Incline(desc) => {
                desc.incline_strips.validate()?;
                let scene = InclineScene {
                    strips: desc.incline_strips,
                    half_extent: desc.half_extent,
                    mass: desc.mass,
                    start: desc.start,
                };
                let friction = self.friction.unwrap_or_else(default_incline_friction);
                let sim = self.sim_config(desc.mass, friction, 2.0 * 3f64.sqrt() * desc.half_extent);
                sim.validate()?;
                Experiment::Incline { scene, sim }
            }
            SceneSpec::FlatForce(scene) => {
                scene.validate()?;
                let gains = self.controller.unwrap_or_else(shipped_force_gains);
                Experiment::FlatForce {
                    scene: scene.clone(),
                    gains,
                    stiffness: self.material.stiffness,
                    bound: self.stiffness_bound.enabled().map(BoundSpec::bound),
                }
            }
            SceneSpec::DoublePin(scene) => Experiment::DoublePin { scene: *scene },
            SceneSpec::Custom(desc) => {
                desc.shape.validate()?;
                let rotation = desc.rotation.map_or_else(UnitQuaternion::identity, |r| r.rotation());
                let pose = Pose::from_parts(Translation3::from(desc.position), rotation);
                let mut initial = BodyState::at_rest(&desc.shape, desc.mass, pose);
                if let Some(v) = desc.linear_velocity {
                    initial.linear_velocity = v;
                }
                let pieces = expand_pieces(&desc.pieces);
                for p in &pieces {
                    p.validate()?;
                }
                let diag = body_diagonal(&desc.shape);
                let sim = self.sim_config(desc.mass, self.friction.unwrap_or_else(FrictionParams::frictionless), diag);
                sim.validate()?;
                initial.validate()?;
                Experiment::Custom {
                    shape: desc.shape,
                    initial,
                    pieces,
                    sim,
                }
            }
        };
        Ok(exp)
    }
}

pub fn body_diagonal(shape: &DynamicShape) -> f64 {
    match *shape {
        DynamicShape::Box { half_extents } => 2.0 * half_extents.norm(),
        DynamicShape::Cylinder { radius, half_height, .. } => 2.0 * (radius * radius + half_height * half_height).sqrt(),
    }
}

pub fn expand_pieces(specs: &[PieceSpec]) -> Vec<ConvexPiece> {
    let mut out = Vec::new();
    for s in specs {
        for k in 0..s.copies {
            out.push(ConvexPiece {
                id: s.id + k,
                halfspaces: s.halfspaces.iter().map(|h| Halfspace::new(h.normal, h.offset)).collect(),
                unbounded: s.unbounded,
            });
        }
    }
    out
}

/// Set `a.b.c=value` in `root`. The value is parsed as JSON when possible
/// and taken as a string otherwise; missing or non-object intermediates
/// become objects.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override `{assignment}` is not key.path=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid(format!("override path `{path}` has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    if !node.is_object() {
        *node = Value::Object(Default::default());
    }
    node.as_object_mut()
        .expect("object")
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
