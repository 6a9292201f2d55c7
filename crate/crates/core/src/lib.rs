//! Rigid-body penalty contact with contact reduction and bounded net stiffness.
//!
//! The per-step pipeline is
//!
//! 1. [`collision::generate_contacts`] samples the dynamic shape against a set
//!    of convex pieces and emits one contact per penetrating (sample, piece)
//!    pair.
//! 2. [`reducer::reduce`] clusters those contacts with deterministic k-means
//!    under the axis-weighted metric and replaces each cluster by one
//!    representative.
//! 3. [`stiffness_qp::solve_scaling`] picks per-contact stiffness scales so the
//!    per-axis net stiffness stays below `K_max` while changing the scales as
//!    little as possible.
//! 4. [`dynamics::step`] turns the scaled contacts into spring/damper and
//!    Coulomb friction forces and advances the body with semi-implicit Euler.
//!
//! [`control`] holds the computed-torque plant and the parallel
//! position/force controller, [`scenarios`] the validation scenes built on
//! top of both, and [`config`] the JSON scene description used by the CLI.

pub mod collision;
pub mod config;
pub mod contact;
pub mod control;
pub mod dynamics;
mod error;
pub mod reducer;
pub mod scenarios;
pub mod stiffness_qp;
pub mod trajectory;

pub use collision::{ConvexPiece, DynamicShape, Halfspace, Pose};
pub use contact::{ContactPoint, ContactSet, StiffnessMatrix};
pub use dynamics::{BodyState, FrictionParams, Material, SimConfig, StepDiagnostics};
pub use error::{Error, Result};
pub use reducer::{ClusterAssignment, ReductionConfig};
pub use stiffness_qp::{Axis, ScalingProblem, ScalingSolution, StiffnessBound};
pub use trajectory::Trajectory;

pub use nalgebra::{Matrix3, UnitQuaternion, Vector3};
