//! Validation scenes: the sliding box on a decomposed incline, the flat
//! force-regulation scene, the double-pin contact census and the insertion
//! reward.

use std::time::Instant;

use nalgebra::{Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::collision::{generate_contacts, ConvexPiece, DynamicShape, Halfspace, Pose};
use crate::control::{ControllerGains, InnerGains, JointPlant, ParallelController};
use crate::dynamics::{contact_wrench, response_contacts, run, BodyState, FrictionParams, Material, SimConfig};
use crate::error::{Error, Result};
use crate::reducer::ReductionConfig;
use crate::stiffness_qp::StiffnessBound;
use crate::trajectory::{Trajectory, TrajectorySample};

pub const GRAVITY: f64 = 9.81;

/// Along-slope position and speed of a block sliding with kinetic friction.
pub fn incline_analytic(theta: f64, mu_k: f64, g: f64, x0: f64, t: f64) -> Result<(f64, f64)> {
    if theta.tan() <= mu_k {
        return Err(Error::NoSlide {
            tan_angle: theta.tan(),
            mu_k,
        });
    }
    let a = g * (theta.sin() - mu_k * theta.cos());
    Ok((x0 + 0.5 * a * t * t, a * t))
}

/// Layout of the layered strip decomposition of the incline surface.
///
/// The ramp descends along +x from the origin. Its surface is split into
/// windows of `strip_length` along the slope and two lanes across it; each
/// (window, lane) cell is covered by a stack of identical pieces whose
/// multiplicity grows downhill, so the contact count rises as the box
/// slides. Window ends are shallow chamfers rather than vertical faces,
/// which hands support from one window to the next without a sideways
/// normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclineStrips {
    pub count: usize,
    pub angle_deg: f64,
    #[serde(default = "default_strip_length")]
    pub strip_length: f64,
    #[serde(default = "default_ramp_length")]
    pub ramp_length: f64,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
    /// Window `j` receives stack weight `(j + 1)^growth`.
    #[serde(default = "default_growth")]
    pub growth: f64,
}

fn default_strip_length() -> f64 {
    0.25
}
fn default_ramp_length() -> f64 {
    1.0
}
fn default_lane_width() -> f64 {
    0.1
}
fn default_growth() -> f64 {
    1.0
}

const CHAMFER_SLOPE: f64 = 0.1;
const PIECE_THICKNESS: f64 = 0.05;

impl InclineStrips {
    pub fn new(count: usize, angle_deg: f64) -> Self {
        Self {
            count,
            angle_deg,
            strip_length: default_strip_length(),
            ramp_length: default_ramp_length(),
            lane_width: default_lane_width(),
            growth: default_growth(),
        }
    }

    pub fn angle(&self) -> f64 {
        self.angle_deg.to_radians()
    }

    /// Downhill unit vector along the surface.
    pub fn downhill(&self) -> Vector3<f64> {
        let t = self.angle();
        Vector3::new(t.cos(), 0.0, -t.sin())
    }

    /// Outward surface normal.
    pub fn normal(&self) -> Vector3<f64> {
        let t = self.angle();
        Vector3::new(t.sin(), 0.0, t.cos())
    }

    /// World point at slope coordinates (along, across, height).
    pub fn world(&self, u: f64, y: f64, w: f64) -> Vector3<f64> {
        self.downhill() * u + Vector3::y() * y + self.normal() * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("incline_strips.count must be >= 1"));
        }
        if !(self.angle_deg > 0.0 && self.angle_deg < 90.0) {
            return Err(Error::invalid("incline_strips.angle_deg must be in (0, 90)"));
        }
        if !(self.strip_length > 0.0 && self.ramp_length > 0.0 && self.lane_width > 0.0) {
            return Err(Error::invalid("incline_strips lengths must be > 0"));
        }
        Ok(())
    }

    /// Pieces per lane in each window, non-decreasing downhill.
    pub fn multiplicities(&self) -> Vec<usize> {
        let per_lane = self.count / 2;
        if per_lane == 0 {
            return Vec::new();
        }
        let windows = ((self.ramp_length / self.strip_length).round() as usize).clamp(1, per_lane);
        let extra = per_lane - windows;
        let weights: Vec<f64> = (0..windows).map(|j| ((j + 1) as f64).powf(self.growth)).collect();
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| extra as f64 * w / total).collect();
        let mut m: Vec<usize> = quotas.iter().map(|q| 1 + q.floor() as usize).collect();
        let mut left = per_lane - m.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..windows).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.partial_cmp(&ra).unwrap().then(b.cmp(&a))
        });
        for &j in &order {
            if left == 0 {
                break;
            }
            m[j] += 1;
            left -= 1;
        }
        m.sort_unstable();
        m
    }

    fn slope_piece(&self, id: u32, faces: &[(f64, f64, f64, f64)]) -> ConvexPiece {
        let halfspaces = faces
            .iter()
            .map(|&(a, b, c, d)| {
                let n = self.downhill() * a + Vector3::y() * b + self.normal() * c;
                Halfspace::new(n, d)
            })
            .collect();
        ConvexPiece::new(id, halfspaces)
    }

    /// The decomposition as convex pieces with ids `0..count`.
    pub fn pieces(&self) -> Vec<ConvexPiece> {
        let (l, lw, h, g) = (self.ramp_length, self.lane_width, PIECE_THICKNESS, CHAMFER_SLOPE);
        let mut out = Vec::with_capacity(self.count);
        let full = |id: u32| {
            self.slope_piece(
                id,
                &[
                    (0.0, 0.0, 1.0, 0.0),
                    (0.0, 0.0, -1.0, h),
                    (1.0, 0.0, 0.0, l),
                    (-1.0, 0.0, 0.0, 0.0),
                    (0.0, 1.0, 0.0, lw),
                    (0.0, -1.0, 0.0, lw),
                ],
            )
        };
        let m = self.multiplicities();
        let width = if m.is_empty() { l } else { l / m.len() as f64 };
        for (j, &mult) in m.iter().enumerate() {
            let (a, b) = (j as f64 * width, (j + 1) as f64 * width);
            for (y0, y1) in [(-lw, 0.0), (0.0, lw)] {
                for _ in 0..mult {
                    let id = out.len() as u32;
                    out.push(self.slope_piece(
                        id,
                        &[
                            (0.0, 0.0, 1.0, 0.0),
                            // w ≤ γ (u − a) and w ≤ γ (b − u)
                            (-g, 0.0, 1.0, -g * a),
                            (g, 0.0, 1.0, g * b),
                            (0.0, 0.0, -1.0, h),
                            (0.0, 1.0, 0.0, y1),
                            (0.0, -1.0, 0.0, -y0),
                        ],
                    ));
                }
            }
        }
        if self.count % 2 == 1 {
            let id = out.len() as u32;
            out.push(full(id));
        }
        out
    }

    /// Horizontal ground at the foot of the ramp.
    pub fn ground(&self, id: u32) -> ConvexPiece {
        let foot = self.world(self.ramp_length, 0.0, 0.0);
        ConvexPiece::slab(id, Vector3::z(), foot.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclineScene {
    pub strips: InclineStrips,
    pub half_extent: f64,
    pub mass: f64,
    /// Initial along-slope coordinate of the box center.
    pub start: f64,
}

impl InclineScene {
    pub fn new(strip_count: usize) -> Self {
        Self {
            strips: InclineStrips::new(strip_count, 30.0),
            half_extent: 0.05,
            mass: 1.0,
            start: 0.06,
        }
    }

    pub fn shape(&self) -> DynamicShape {
        DynamicShape::Box {
            half_extents: Vector3::repeat(self.half_extent),
        }
    }

    pub fn pieces(&self) -> Vec<ConvexPiece> {
        let mut p = self.strips.pieces();
        let id = p.len() as u32;
        p.push(self.strips.ground(id));
        p
    }

    /// Box flush with the surface, just touching it.
    pub fn initial_state(&self) -> BodyState {
        self.state_at(self.start)
    }

    pub fn state_at(&self, u: f64) -> BodyState {
        let center = self.strips.world(u, 0.0, self.half_extent);
        let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), self.strips.angle());
        BodyState::at_rest(&self.shape(), self.mass, Pose::from_parts(Translation3::from(center), rot))
    }

    /// Along-slope coordinate of the box's leading edge.
    pub fn leading_edge(&self, position: &Vector3<f64>) -> f64 {
        position.dot(&self.strips.downhill()) + self.half_extent
    }

    /// The leading edge has reached the foot of the ramp.
    pub fn reached_ground(&self, position: &Vector3<f64>) -> bool {
        self.leading_edge(position) >= self.strips.ramp_length
    }

    /// Default simulation: K = 1e5, critical damping, 3 s at dt = 1e-4.
    /// With `scaling`, contacts are reduced to 10 and bounded at 2K.
    pub fn sim_config(&self, friction: FrictionParams, scaling: bool) -> SimConfig {
        let mut cfg = SimConfig::new(Material::critically_damped(1e5, self.mass), friction, 3.0);
        if scaling {
            cfg.reduction = Some(ReductionConfig::for_scene_diagonal(10, 2.0 * 3f64.sqrt() * self.half_extent));
            cfg.stiffness_bound = Some(StiffnessBound::Factor(2.0));
        }
        cfg
    }
}

pub fn default_incline_friction() -> FrictionParams {
    FrictionParams {
        mu_s: 0.35,
        mu_k: 0.3,
        stick_velocity: 1e-3,
    }
}

/// Structured outcome of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub scene: String,
    pub scaling: bool,
    pub rms_dev_m: Option<f64>,
    pub reached_ground: Option<bool>,
    pub settled: Option<bool>,
    pub diverged: bool,
    pub runtime_s: f64,
    pub steps: usize,
    pub max_raw_contacts: usize,
    pub max_net_stiffness: [f64; 3],
    pub k_max: Option<f64>,
    #[serde(default)]
    pub details: serde_json::Value,
}

/// Compare the box-center height with the analytic slide until the box
/// reaches the foot of the ramp (or the run ends).
/// Mechanical energy gain, as a fraction of `m g descent`, beyond which an
/// incline run counts as numerically unstable. The scene is passive, so
/// any real gain comes from the integrator.
pub const ENERGY_RUNAWAY_FRACTION: f64 = 0.05;

pub fn run_incline_experiment(
    name: &str,
    scene: &InclineScene,
    sim: &SimConfig,
) -> Result<(ExperimentReport, Trajectory)> {
    scene.strips.validate()?;
    let started = Instant::now();
    let traj = run(&scene.initial_state(), &scene.shape(), &scene.pieces(), sim)?;
    let runtime_s = started.elapsed().as_secs_f64();

    let theta = scene.strips.angle();
    let g = -sim.gravity.z;
    let z0 = scene.initial_state().position.z;
    let descent = (scene.strips.ramp_length - scene.half_extent - scene.start) * theta.sin();
    let reach = traj.samples.iter().position(|s| scene.reached_ground(&s.position()));
    let sliding = &traj.samples[..reach.map_or(traj.samples.len(), |i| i + 1)];

    let mut sq = 0.0;
    for s in sliding {
        let (u, _) = incline_analytic(theta, sim.friction.mu_k, g, 0.0, s.t)?;
        let z_ref = z0 - u * theta.sin();
        sq += (s.pz - z_ref).powi(2);
    }
    let rms = if sliding.is_empty() { f64::NAN } else { (sq / sliding.len() as f64).sqrt() };

    let inertia = scene.shape().inertia(scene.mass);
    let energy = |s: &TrajectorySample| {
        let w = s.orientation().inverse() * Vector3::new(s.wx, s.wy, s.wz);
        0.5 * scene.mass * s.velocity().norm_squared() + 0.5 * w.dot(&(inertia * w)) + scene.mass * g * s.pz
    };
    let e0 = traj.samples.first().map_or(0.0, energy);
    let energy_gain = traj.samples.iter().map(|s| energy(s) - e0).fold(0.0, f64::max);
    let energy_runaway = energy_gain > ENERGY_RUNAWAY_FRACTION * scene.mass * g * descent;

    let down = scene.strips.downhill();
    let last = traj.last();
    let (final_speed, analytic_speed) = match last {
        Some(s) => (s.velocity().dot(&down), incline_analytic(theta, sim.friction.mu_k, g, 0.0, s.t)?.1),
        None => (0.0, 0.0),
    };
    let report = ExperimentReport {
        name: name.to_string(),
        scene: "incline".into(),
        scaling: sim.stiffness_bound.is_some(),
        rms_dev_m: Some(rms),
        reached_ground: Some(reach.is_some()),
        settled: None,
        diverged: traj.diverged(),
        runtime_s,
        steps: traj.steps,
        max_raw_contacts: traj.max_raw_contacts,
        max_net_stiffness: traj.max_net_stiffness.into(),
        k_max: sim.k_max(),
        details: json!({
            "strip_count": scene.strips.count,
            "descent_m": descent,
            "rms_fraction_of_descent": rms / descent,
            "reach_time_s": reach.map(|i| traj.samples[i].t),
            "diverged_at_step": traj.diverged_at,
            "final_along_slope_speed": final_speed,
            "analytic_speed_at_end": analytic_speed,
            "speed_ratio": final_speed / analytic_speed,
            "energy_gain_j": energy_gain,
            "energy_runaway": energy_runaway,
        }),
    };
    Ok((report, traj))
}

/// Peg pressed onto a flat surface by the parallel controller.
///
/// The peg is a box tilted by `tilt_deg` about x and the surface is tilted
/// by the same angle, so all bottom vertices sit flush. A second piece over
/// half of the face adds two more contacts for the 6-contact variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatForceScene {
    pub contacts: usize,
    #[serde(default = "one_degree")]
    pub tilt_deg: f64,
    #[serde(default = "default_peg_half")]
    pub half_extent: f64,
    /// `(f_d, duration)` phases.
    #[serde(default = "default_schedule")]
    pub schedule: Vec<(f64, f64)>,
}

fn one_degree() -> f64 {
    1.0
}
fn default_peg_half() -> f64 {
    0.02
}
fn default_schedule() -> Vec<(f64, f64)> {
    vec![(5.0, 2.0), (30.0, 3.0)]
}

/// Gains found with [`crate::control::find_split_gains`] for a per-contact
/// stiffness of 1e4 N/m: stable at 4 contacts, unstable at 6.
pub fn shipped_force_gains() -> ControllerGains {
    ControllerGains {
        kp_f: 5e-5,
        ki_f: SHIPPED_KI,
        f_limit: 1e3,
        inner: InnerGains::critically_damped(80.0),
        force_axes: [false, false, true, false, false, false],
        dt: 2e-3,
    }
}

pub const SHIPPED_KI: f64 = 9.26e-3;
pub const FORCE_CONTACT_STIFFNESS: f64 = 1e4;

impl FlatForceScene {
    pub fn new(contacts: usize) -> Self {
        Self {
            contacts,
            tilt_deg: one_degree(),
            half_extent: default_peg_half(),
            schedule: default_schedule(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.contacts != 4 && self.contacts != 6 {
            return Err(Error::invalid(format!("flat force scene supports 4 or 6 contacts, got {}", self.contacts)));
        }
        if self.schedule.is_empty() || self.schedule.iter().any(|&(_, d)| !(d > 0.0)) {
            return Err(Error::invalid("force schedule needs phases with duration > 0"));
        }
        Ok(())
    }

    fn tilt(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.tilt_deg.to_radians())
    }

    pub fn shape(&self) -> DynamicShape {
        DynamicShape::Box {
            half_extents: Vector3::repeat(self.half_extent),
        }
    }

    pub fn pieces(&self) -> Vec<ConvexPiece> {
        let frame = Pose::from_parts(Translation3::identity(), self.tilt());
        let r = 5.0 * self.half_extent;
        let mut out = vec![ConvexPiece::cuboid(0, Vector3::new(-r, -r, -r), Vector3::new(r, r, 0.0)).transformed(&frame)];
        if self.contacts == 6 {
            out.push(ConvexPiece::cuboid(1, Vector3::new(-r, 0.0, -r), Vector3::new(r, r, 0.0)).transformed(&frame));
        }
        out
    }

    /// Peg pose for push depth `q` (m) along world −z from first touch.
    pub fn pose(&self, q: f64) -> Pose {
        let touch = self.half_extent / self.tilt_deg.to_radians().cos();
        Pose::from_parts(Translation3::new(0.0, 0.0, touch - q), self.tilt())
    }

    pub fn contact_count(&self, q: f64) -> usize {
        generate_contacts(&self.shape(), &self.pose(q), &self.pieces(), 1.0, 0.0).len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePhase {
    pub f_d: f64,
    pub settled: bool,
    pub final_force: f64,
    /// Largest `|f − f_d| / f_d` over the last 0.5 s of the phase.
    pub band_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceRun {
    pub report: ExperimentReport,
    pub trajectory: Trajectory,
    /// `(t, f_d, f)` per step.
    pub forces: Vec<(f64, f64, f64)>,
}

/// Settle window at the end of each phase.
pub const SETTLE_WINDOW_S: f64 = 0.5;

/// Regulate the contact force through the configured schedule. With
/// `k_max`, contacts are bounded before the force is computed.
pub fn run_force_experiment(
    name: &str,
    scene: &FlatForceScene,
    gains: &ControllerGains,
    stiffness: f64,
    k_max: Option<StiffnessBound>,
) -> Result<ForceRun> {
    scene.validate()?;
    let started = Instant::now();
    let dt = gains.dt;
    let shape = scene.shape();
    let pieces = scene.pieces();
    let mut sim = SimConfig::new(Material { stiffness, damping: 0.0 }, FrictionParams::frictionless(), 1.0);
    sim.dt = dt;
    sim.stiffness_bound = k_max;

    let mut plant = JointPlant::new(1, gains.inner, dt);
    let mut ctrl = ParallelController::new(gains);
    let mut pose = Vector6::zeros();
    let mut forces = Vec::new();
    let mut traj = Trajectory::default();
    let mut t = 0.0;
    let mut step_index = 0usize;
    let mut phase_bounds = Vec::new();
    for &(f_d, duration) in &scene.schedule {
        let steps = (duration / dt).round() as usize;
        let first = forces.len();
        for _ in 0..steps {
            let body = BodyState::at_rest(&shape, 1.0, scene.pose(plant.q[0]));
            let (contacts, diag) = response_contacts(&body, &shape, &pieces, &sim)?;
            let (wrench, _) = contact_wrench(&body, &contacts, &sim.friction);
            let f = wrench.z;
            forces.push((t, f_d, f));

            let mut f_d6 = Vector6::zeros();
            let mut f_m6 = Vector6::zeros();
            f_d6[2] = f_d;
            f_m6[2] = f;
            pose = ctrl.parallel_step(&pose, &Vector6::zeros(), &f_d6, &f_m6, dt);
            plant.computed_torque_step(&[pose[2]], &[0.0], &[0.0], &[0.0]);
            t = (step_index + 1) as f64 * dt;
            step_index += 1;

            traj.steps += 1;
            traj.max_raw_contacts = traj.max_raw_contacts.max(diag.n_raw);
            traj.max_net_stiffness = traj.max_net_stiffness.sup(&diag.net_stiffness);
            let p = scene.pose(plant.q[0]);
            let q = p.rotation.coords;
            traj.samples.push(TrajectorySample {
                t,
                px: 0.0,
                py: 0.0,
                pz: p.translation.z,
                vx: 0.0,
                vy: 0.0,
                vz: -plant.qd[0],
                qw: q.w,
                qx: q.x,
                qy: q.y,
                qz: q.z,
                wx: 0.0,
                wy: 0.0,
                wz: 0.0,
                n_raw: diag.n_raw,
                n_reduced: diag.n_reduced,
                ke_xx: diag.net_stiffness.x,
                ke_yy: diag.net_stiffness.y,
                ke_zz: diag.net_stiffness.z,
                t_collide_us: diag.times.collide_us,
                t_reduce_us: diag.times.reduce_us,
                t_qp_us: diag.times.qp_us,
                t_response_us: 0.0,
            });
        }
        phase_bounds.push((first, forces.len(), f_d));
    }
    let runtime_s = started.elapsed().as_secs_f64();

    let window = (SETTLE_WINDOW_S / dt).round() as usize;
    let phases: Vec<ForcePhase> = phase_bounds
        .iter()
        .map(|&(a, b, f_d)| {
            let tail = &forces[b.saturating_sub(window).max(a)..b];
            let band_error = tail.iter().map(|(_, _, f)| (f - f_d).abs() / f_d.abs()).fold(0.0, f64::max);
            ForcePhase {
                f_d,
                settled: band_error <= 0.1,
                final_force: forces[b - 1].2,
                band_error,
            }
        })
        .collect();
    let settled = phases.iter().all(|p| p.settled);
    let growth = error_growth(&forces, &phase_bounds);

    let report = ExperimentReport {
        name: name.to_string(),
        scene: "flat_force".into(),
        scaling: k_max.is_some(),
        rms_dev_m: None,
        reached_ground: None,
        settled: Some(settled),
        diverged: false,
        runtime_s,
        steps: traj.steps,
        max_raw_contacts: traj.max_raw_contacts,
        max_net_stiffness: traj.max_net_stiffness.into(),
        k_max: k_max.map(|b| b.k_max(stiffness)),
        details: json!({
            "contacts": scene.contacts,
            "phases": phases,
            "unstable": growth.unstable,
            "initial_error": growth.initial_error,
            "envelope_windows": growth.windows,
            "kp_f": gains.kp_f,
            "ki_f": gains.ki_f,
            "margin_raw": gains.margin(scene.contacts as f64 * stiffness),
        }),
    };
    Ok(ForceRun {
        report,
        trajectory: traj,
        forces,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrowth {
    /// `|f_d − f|` at the start of the last phase.
    pub initial_error: f64,
    /// Max `|f_d − f|` over four consecutive windows spanning the final third.
    pub windows: Vec<f64>,
    pub unstable: bool,
}

/// The force-error envelope over the final third of the episode has grown
/// beyond the error the last setpoint step introduced and is not shrinking.
pub fn error_growth(forces: &[(f64, f64, f64)], phases: &[(usize, usize, f64)]) -> ErrorGrowth {
    let n = forces.len();
    let Some(&(start, _, f_d)) = phases.last() else {
        return ErrorGrowth { initial_error: 0.0, windows: Vec::new(), unstable: false };
    };
    let initial_error = (f_d - forces[start].2).abs();
    let third = &forces[2 * n / 3..];
    let chunk = (third.len() / 4).max(1);
    let windows: Vec<f64> = third
        .chunks(chunk)
        .take(4)
        .map(|c| c.iter().map(|(_, fd, f)| (fd - f).abs()).fold(0.0, f64::max))
        .collect();
    let first = windows.first().copied().unwrap_or(0.0);
    let last = windows.last().copied().unwrap_or(0.0);
    let unstable = last > initial_error && last >= 0.95 * first && last > 0.1 * f_d.abs();
    ErrorGrowth {
        initial_error,
        windows,
        unstable,
    }
}

/// `r = (z − z₀)/D − 1 + r_f` with `r_f = −2` when any measured force
/// component exceeds its upper limit.
pub fn reward(z: f64, z0: f64, depth: f64, f_meas: &[f64; 6], f_upper: &[f64; 6]) -> Result<f64> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("insertion depth {depth} must be > 0")));
    }
    let over = f_meas.iter().zip(f_upper).any(|(f, u)| f - u > 0.0);
    Ok((z - z0) / depth - 1.0 + if over { -2.0 } else { 0.0 })
}

/// Two parallel pins over a plate with a rectangular slot under each pin.
///
/// Slots are narrower than the pin along x and slightly wider along y, so
/// an aligned pin rests its two x-extreme rim samples on the plate and a
/// small tilt about x brings one more rim sample per pin onto the slot side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoublePinScene {
    #[serde(default = "pin_radius")]
    pub pin_radius: f64,
    #[serde(default = "pin_half_height")]
    pub pin_half_height: f64,
    #[serde(default = "pin_spacing")]
    pub pin_spacing: f64,
    #[serde(default = "rim_samples")]
    pub rim_samples: usize,
    #[serde(default = "slot_x")]
    pub slot_half_x: f64,
    #[serde(default = "slot_y")]
    pub slot_half_y: f64,
}

fn pin_radius() -> f64 {
    0.005
}
fn pin_half_height() -> f64 {
    0.02
}
fn pin_spacing() -> f64 {
    0.03
}
fn rim_samples() -> usize {
    8
}
fn slot_x() -> f64 {
    0.0045
}
fn slot_y() -> f64 {
    0.0052
}

impl Default for DoublePinScene {
    fn default() -> Self {
        Self {
            pin_radius: pin_radius(),
            pin_half_height: pin_half_height(),
            pin_spacing: pin_spacing(),
            rim_samples: rim_samples(),
            slot_half_x: slot_x(),
            slot_half_y: slot_y(),
        }
    }
}

/// Named pin-cluster pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinPose {
    pub name: &'static str,
    pub pose: Pose,
}

impl DoublePinScene {
    pub fn pin_shape(&self) -> DynamicShape {
        DynamicShape::Cylinder {
            radius: self.pin_radius,
            half_height: self.pin_half_height,
            rim_samples: self.rim_samples,
        }
    }

    fn pin_offsets(&self) -> [Vector3<f64>; 2] {
        [Vector3::new(-self.pin_spacing, 0.0, 0.0), Vector3::new(self.pin_spacing, 0.0, 0.0)]
    }

    /// Four plate blocks around each slot; the plate top is `z = 0`.
    pub fn pieces(&self) -> Vec<ConvexPiece> {
        let (wx, wy) = (self.slot_half_x, self.slot_half_y);
        let margin = 0.015;
        let (top, bottom) = (0.0, -0.01);
        let mut out = Vec::new();
        for c in self.pin_offsets() {
            let blocks = [
                (Vector3::new(c.x - wx - margin, -wy - margin, bottom), Vector3::new(c.x - wx, wy + margin, top)),
                (Vector3::new(c.x + wx, -wy - margin, bottom), Vector3::new(c.x + wx + margin, wy + margin, top)),
                (Vector3::new(c.x - wx, wy, bottom), Vector3::new(c.x + wx, wy + margin, top)),
                (Vector3::new(c.x - wx, -wy - margin, bottom), Vector3::new(c.x + wx, -wy, top)),
            ];
            for (lo, hi) in blocks {
                let id = out.len() as u32;
                out.push(ConvexPiece::cuboid(id, lo, hi));
            }
        }
        out
    }

    /// Cluster pose with the pin bottoms `insertion` below the plate top,
    /// tilted by `tilt_deg` about x around the pin centers.
    pub fn cluster_pose(&self, insertion: f64, tilt_deg: f64) -> Pose {
        Pose::from_parts(
            Translation3::new(0.0, 0.0, self.pin_half_height - insertion),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), tilt_deg.to_radians()),
        )
    }

    pub fn scripted_poses(&self) -> Vec<PinPose> {
        vec![
            PinPose { name: "separated", pose: self.cluster_pose(-0.01, 0.0) },
            PinPose { name: "aligned_touching_above", pose: self.cluster_pose(-1e-4, 0.0) },
            PinPose { name: "aligned_partial_insertion", pose: self.cluster_pose(1e-3, 0.0) },
            PinPose { name: "tilted_plus_1deg", pose: self.cluster_pose(1e-3, 1.0) },
            PinPose { name: "tilted_minus_1deg", pose: self.cluster_pose(1e-3, -1.0) },
            PinPose { name: "tilted_plus_1deg_deep", pose: self.cluster_pose(2e-3, 1.0) },
        ]
    }

    pub fn contact_count(&self, pose: &Pose) -> usize {
        let pieces = self.pieces();
        self.pin_offsets()
            .iter()
            .map(|off| {
                let pin = pose * Pose::translation(off.x, off.y, off.z);
                generate_contacts(&self.pin_shape(), &pin, &pieces, 1.0, 0.0).len()
            })
            .sum()
    }
}

/// Contact count for each scripted pose of the double-pin scene.
pub fn count_peg_contact_configs(scene: &DoublePinScene, poses: &[PinPose]) -> Vec<(String, usize)> {
    poses
        .iter()
        .map(|p| (p.name.to_string(), scene.contact_count(&p.pose)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn analytic_examples() {
        let theta = 30f64.to_radians();
        let (_, v) = incline_analytic(theta, 0.3, 9.81, 0.0, 1.0).unwrap();
        assert_eq!(v, 9.81 * (theta.sin() - 0.3 * theta.cos()));
        assert!((v - 2.3563).abs() < 1e-4, "{v}");
        let (_, v) = incline_analytic(PI / 2.0, 0.0, 9.81, 0.0, 1.0).unwrap();
        assert!((v - 9.81).abs() < 1e-12);
        assert_eq!(incline_analytic(0.5, 0.1, 9.81, 0.25, 0.0).unwrap(), (0.25, 0.0));
        assert!(matches!(incline_analytic(0.1, 0.3, 9.81, 0.0, 1.0), Err(Error::NoSlide { .. })));
    }

    #[test]
    fn reward_examples() {
        let ok = [0.0; 6];
        let lim = [10.0; 6];
        assert_eq!(reward(0.5, 0.5, 0.25, &ok, &lim).unwrap(), -1.0);
        assert_eq!(reward(0.75, 0.5, 0.25, &ok, &lim).unwrap(), 0.0);
        let mut over = ok;
        over[4] = 10.5;
        assert_eq!(reward(1.5, 1.0, 1.0, &over, &lim).unwrap(), -2.5);
        assert!(reward(0.0, 0.0, 0.0, &ok, &lim).is_err());
    }

    #[test]
    fn strip_multiplicities() {
        for count in [1usize, 2, 7, 40, 64, 65, 512] {
            let s = InclineStrips::new(count, 30.0);
            let m = s.multiplicities();
            assert_eq!(2 * m.iter().sum::<usize>() + count % 2, count);
            assert!(m.windows(2).all(|w| w[0] <= w[1]));
            let pieces = s.pieces();
            assert_eq!(pieces.len(), count);
            for p in &pieces {
                p.validate().unwrap();
            }
        }
    }

    #[test]
    fn incline_counts_grow_and_stay_capped() {
        for count in [1usize, 64, 512] {
            let scene = InclineScene::new(count);
            let pieces = scene.pieces();
            let m = scene.strips.multiplicities();
            let width = scene.strips.ramp_length / m.len().max(1) as f64;
            let mut prev = 0;
            // Box centers where no vertex is near a window boundary, sunk 1e-5.
            let mut u = scene.start;
            while u + scene.half_extent < scene.strips.ramp_length {
                let mut s = scene.state_at(u);
                s.position -= scene.strips.normal() * 1e-5;
                let near = [u - scene.half_extent, u + scene.half_extent]
                    .iter()
                    .any(|v| ((v / width).round() * width - v).abs() < 1e-3);
                let n = generate_contacts(&scene.shape(), &s.pose(), &pieces, 1.0, 0.0).len();
                if !near {
                    assert!(n <= count.max(4), "count={count} u={u} n={n}");
                    assert!(n >= prev, "count={count} u={u} n={n} prev={prev}");
                    prev = n;
                }
                if !near {
                    for p in generate_contacts(&scene.shape(), &s.pose(), &pieces, 1.0, 0.0).points {
                        assert!((p.normal - scene.strips.normal()).norm() < 1e-9);
                    }
                }
                u += 0.0037;
            }
            if count == 1 {
                assert_eq!(prev, 4);
            }
        }
    }

    #[test]
    fn flat_force_contact_counts() {
        for n in [4, 6] {
            let scene = FlatForceScene::new(n);
            assert_eq!(scene.contact_count(-1e-4), 0);
            assert_eq!(scene.contact_count(1e-4), n);
            let body = BodyState::at_rest(&scene.shape(), 1.0, scene.pose(1e-4));
            let set = generate_contacts(&scene.shape(), &body.pose(), &scene.pieces(), 1.0, 0.0);
            for p in &set.points {
                assert!((p.depth - set.points[0].depth).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn double_pin_counts() {
        let scene = DoublePinScene::default();
        let counts = count_peg_contact_configs(&scene, &scene.scripted_poses());
        let get = |name: &str| counts.iter().find(|(n, _)| n == name).unwrap().1;
        assert_eq!(get("separated"), 0);
        assert_eq!(get("aligned_partial_insertion"), 4);
        assert_eq!(get("tilted_plus_1deg"), 6);
        assert_eq!(get("tilted_minus_1deg"), 6);
        for p in scene.pieces() {
            p.validate().unwrap();
        }
    }

    #[test]
    fn shipped_gains_split() {
        let g = shipped_force_gains();
        let k = FORCE_CONTACT_STIFFNESS;
        assert!(g.margin(4.0 * k) < 1.0);
        assert!(g.margin(6.0 * k) > 1.0);
    }
}
