//! Scenes shared by the criterion benches.

use contactkit::collision::generate_contacts;
use contactkit::{
    BodyState, ContactSet, ConvexPiece, DynamicShape, FrictionParams, Material, Pose, ReductionConfig, SimConfig,
    StiffnessBound, Vector3,
};

pub const STIFFNESS: f64 = 1e5;
pub const DAMPING: f64 = 20.0;
pub const HALF: f64 = 0.05;

pub fn cube() -> DynamicShape {
    DynamicShape::Box {
        half_extents: Vector3::repeat(HALF),
    }
}

/// `copies` identical 0.6 m plates with their top face at z = 0.
pub fn plate_stack(copies: u32) -> Vec<ConvexPiece> {
    let plate = ConvexPiece::cuboid(0, Vector3::new(-0.3, -0.3, -0.05), Vector3::new(0.3, 0.3, 0.0));
    (0..copies)
        .map(|id| ConvexPiece { id, ..plate.clone() })
        .collect()
}

/// The cube sunk 1 mm into the stack and sliding along x.
pub fn sliding_cube() -> BodyState {
    let mut s = BodyState::at_rest(&cube(), 1.0, Pose::translation(0.0, 0.0, HALF - 1e-3));
    s.linear_velocity = Vector3::new(0.1, 0.0, 0.0);
    s
}

/// Raw contacts of [`sliding_cube`] against `copies` plates, four per plate.
pub fn raw_contacts(copies: u32) -> ContactSet {
    generate_contacts(&cube(), &sliding_cube().pose(), &plate_stack(copies), STIFFNESS, DAMPING)
}

pub fn reduction(k: usize) -> ReductionConfig {
    ReductionConfig::for_scene_diagonal(k, 2.0 * HALF * 3f64.sqrt())
}

pub fn baseline_sim() -> SimConfig {
    SimConfig::new(
        Material {
            stiffness: STIFFNESS,
            damping: DAMPING,
        },
        FrictionParams {
            mu_s: 0.5,
            mu_k: 0.4,
            stick_velocity: 1e-3,
        },
        0.05,
    )
}

pub fn proposed_sim(k: usize) -> SimConfig {
    SimConfig {
        reduction: Some(reduction(k)),
        stiffness_bound: Some(StiffnessBound::Factor(2.0)),
        ..baseline_sim()
    }
}
