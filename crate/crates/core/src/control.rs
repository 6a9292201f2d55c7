//! Computed-torque joint plant, PI force loop and the parallel
//! position/force controller.

use nalgebra::{Matrix3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Independent second-order joints under computed-torque control with exact
/// model compensation.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPlant {
    pub inertia: Vec<f64>,
    pub stiffness: Vec<f64>,
    pub damping: Vec<f64>,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub dt: f64,
}

impl JointPlant {
    pub fn new(n: usize, gains: InnerGains, dt: f64) -> Self {
        Self {
            inertia: vec![gains.m; n],
            stiffness: vec![gains.k; n],
            damping: vec![gains.d; n],
            q: vec![0.0; n],
            qd: vec![0.0; n],
            dt,
        }
    }

    pub fn n_joints(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_joints();
        for len in [self.inertia.len(), self.stiffness.len(), self.damping.len(), self.qd.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, got: len });
            }
        }
        if self.inertia.iter().chain(&self.stiffness).any(|v| !(*v > 0.0))
            || self.damping.iter().any(|v| !(*v >= 0.0))
            || !(self.dt > 0.0)
        {
            return Err(Error::invalid("plant needs M, K > 0, D >= 0 and dt > 0"));
        }
        Ok(())
    }

    /// Apply the computed torque
    /// `τ = M(q̈_d + D(q̇_d − q̇) + K(q_d − q)) + τ_ext`
    /// to `M q̈ = τ − τ_ext`. The position advances first and the velocity
    /// update sees the new position.
    pub fn computed_torque_step(&mut self, q_d: &[f64], qd_d: &[f64], qdd_d: &[f64], tau_ext: &[f64]) {
        let dt = self.dt;
        for i in 0..self.n_joints() {
            self.q[i] += dt * self.qd[i];
            let m = self.inertia[i];
            let tau = m
                * (qdd_d[i]
                    + self.damping[i] * (qd_d[i] - self.qd[i])
                    + self.stiffness[i] * (q_d[i] - self.q[i]))
                + tau_ext[i];
            self.qd[i] += dt * (tau - tau_ext[i]) / m;
        }
    }
}

/// Inner position-loop gains and the joint inertia.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerGains {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "M", default = "unit_mass")]
    pub m: f64,
}

fn unit_mass() -> f64 {
    1.0
}

impl InnerGains {
    pub fn critically_damped(omega: f64) -> Self {
        Self {
            k: omega * omega,
            d: 2.0 * omega,
            m: 1.0,
        }
    }
}

/// Closed-form solution of `ë + D ė + K e = 0`.
pub fn second_order_error(e0: f64, v0: f64, k: f64, d: f64, t: f64) -> f64 {
    let disc = d * d - 4.0 * k;
    let scale = 1e-12 * d * d.max(1.0);
    if disc.abs() <= scale {
        let w = d / 2.0;
        (e0 + (v0 + w * e0) * t) * (-w * t).exp()
    } else if disc > 0.0 {
        let s = disc.sqrt();
        let (r1, r2) = ((-d + s) / 2.0, (-d - s) / 2.0);
        let c2 = (v0 - r1 * e0) / (r2 - r1);
        let c1 = e0 - c2;
        c1 * (r1 * t).exp() + c2 * (r2 * t).exp()
    } else {
        let wd = (-disc).sqrt() / 2.0;
        let sigma = d / 2.0;
        (-sigma * t).exp() * (e0 * (wd * t).cos() + (v0 + sigma * e0) / wd * (wd * t).sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceLoopState {
    pub kp: f64,
    pub ki: f64,
    /// Clamp on `|integrator|` (N·s).
    pub f_limit: f64,
    pub integrator: f64,
}

impl ForceLoopState {
    pub fn new(kp: f64, ki: f64, f_limit: f64) -> Self {
        Self {
            kp,
            ki,
            f_limit,
            integrator: 0.0,
        }
    }

    /// `u_f = k_p e + k_i ∫e dt` with `e = f_d − f`, returning the position
    /// offset and the advanced state.
    pub fn force_pi_step(&self, f_d: f64, f_meas: f64, dt: f64) -> (f64, Self) {
        let e = f_d - f_meas;
        let integrator = (self.integrator + e * dt).clamp(-self.f_limit, self.f_limit);
        let u = self.kp * e + self.ki * integrator;
        (u, Self { integrator, ..*self })
    }
}

/// Parallel composition of a feedforward velocity integrator and per-axis
/// PI force loops on a 6-vector pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelController {
    pub force_axes: [bool; 6],
    pub loops: [ForceLoopState; 6],
    /// Force-loop offset currently included in the commanded pose.
    pub offset: Vector6<f64>,
}

impl ParallelController {
    pub fn new(gains: &ControllerGains) -> Self {
        let lp = ForceLoopState::new(gains.kp_f, gains.ki_f, gains.f_limit);
        Self {
            force_axes: gains.force_axes,
            loops: [lp; 6],
            offset: Vector6::zeros(),
        }
    }

    /// `pose + v_d·dt + Δu_f`, with `Δu_f` nonzero only on force axes.
    pub fn parallel_step(
        &mut self,
        pose: &Vector6<f64>,
        v_d: &Vector6<f64>,
        f_d: &Vector6<f64>,
        f_meas: &Vector6<f64>,
        dt: f64,
    ) -> Vector6<f64> {
        let mut next = pose + v_d * dt;
        for i in 0..6 {
            if !self.force_axes[i] {
                continue;
            }
            let (u, state) = self.loops[i].force_pi_step(f_d[i], f_meas[i], dt);
            self.loops[i] = state;
            next[i] += u - self.offset[i];
            self.offset[i] = u;
        }
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub kp_f: f64,
    pub ki_f: f64,
    #[serde(default = "default_f_limit")]
    pub f_limit: f64,
    pub inner: InnerGains,
    #[serde(default = "z_only")]
    pub force_axes: [bool; 6],
    pub dt: f64,
}

fn default_f_limit() -> f64 {
    1e3
}

fn z_only() -> [bool; 6] {
    [false, false, true, false, false, false]
}

impl ControllerGains {
    pub fn margin(&self, k_e: f64) -> f64 {
        stability_margin(k_e, self.kp_f, self.ki_f, &self.inner, self.dt)
    }
}

/// Discrete closed-loop transition on `(x, ẋ, I)` for one force axis
/// against the spring `f = K_e x` with `f_d = 0`. One step is
///
/// ```text
/// I' = I + dt (f_d − K_e x)
/// x_c = k_p (f_d − K_e x) + k_i I'
/// x' = x + dt ẋ
/// ẋ' = ẋ + dt (K (x_c − x') − D ẋ)
/// ```
pub fn closed_loop_matrix(k_e: f64, kp: f64, ki: f64, inner: &InnerGains, dt: f64) -> Matrix3<f64> {
    let (k, d) = (inner.k, inner.d);
    let xc_x = -kp * k_e - ki * dt * k_e;
    Matrix3::new(
        1.0,
        dt,
        0.0,
        dt * k * (xc_x - 1.0),
        1.0 - dt * dt * k - dt * d,
        dt * k * ki,
        -dt * k_e,
        0.0,
        1.0,
    )
}

/// Spectral radius of [`closed_loop_matrix`]; below 1 means stable.
pub fn stability_margin(k_e: f64, kp: f64, ki: f64, inner: &InnerGains, dt: f64) -> f64 {
    closed_loop_matrix(k_e, kp, ki, inner, dt)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Integral gain on a log grid maximizing `min(1 − ρ(K_stable), ρ(K_unstable) − 1)`,
/// or `None` when no grid point separates the two stiffnesses.
pub fn find_split_gains(
    k_stable: f64,
    k_unstable: f64,
    kp: f64,
    inner: &InnerGains,
    dt: f64,
    ki_range: (f64, f64),
    samples: usize,
) -> Option<(f64, f64, f64)> {
    let (lo, hi) = (ki_range.0.ln(), ki_range.1.ln());
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..samples {
        let ki = (lo + (hi - lo) * i as f64 / (samples - 1).max(1) as f64).exp();
        let r_s = stability_margin(k_stable, kp, ki, inner, dt);
        let r_u = stability_margin(k_unstable, kp, ki, inner, dt);
        let score = (1.0 - r_s).min(r_u - 1.0);
        if score > 0.0 && best.map_or(true, |b| score > b.0) {
            best = Some((score, ki, r_s, r_u));
        }
    }
    best.map(|(_, ki, r_s, r_u)| (ki, r_s, r_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plant_at_equilibrium_stays() {
        let mut p = JointPlant::new(3, InnerGains::critically_damped(100.0), 1e-3);
        p.q = vec![0.1, -0.2, 0.3];
        let before = p.clone();
        p.computed_torque_step(&[0.1, -0.2, 0.3], &[0.0; 3], &[0.0; 3], &[5.0, -1.0, 0.0]);
        assert_eq!(p, before);
    }

    fn step_response(k: f64, dt: f64, tau_ext: f64) -> (Vec<f64>, Vec<f64>) {
        let g = InnerGains::critically_damped(k.sqrt());
        let mut p = JointPlant::new(1, g, dt);
        let n = (1.0 / dt) as usize;
        let mut sim = Vec::with_capacity(n);
        let mut exact = Vec::with_capacity(n);
        for i in 1..=n {
            p.computed_torque_step(&[1.0], &[0.0], &[0.0], &[tau_ext]);
            sim.push(1.0 - p.q[0]);
            exact.push(second_order_error(1.0, 0.0, g.k, g.d, i as f64 * dt));
        }
        (sim, exact)
    }

    #[test]
    fn critically_damped_step_matches_closed_form() {
        for k in [1e2, 1e3, 1e4] {
            let (sim, exact) = step_response(k, 1e-3, 0.0);
            let rms = (sim.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sim.len() as f64).sqrt();
            assert!(rms <= 0.01, "K={k} rms={rms}");
            assert!(sim.windows(2).all(|w| w[1] <= w[0] + 1e-15), "overshoot at K={k}");
            assert!(sim.iter().all(|&e| e >= -1e-12));
        }
    }

    #[test]
    fn external_torque_is_cancelled() {
        let (a, _) = step_response(1e3, 1e-3, 0.0);
        let (b, _) = step_response(1e3, 1e-3, 42.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(b.last().unwrap().abs() < 1e-9);
    }

    #[test]
    fn second_order_cases() {
        assert_eq!(second_order_error(1.0, 0.0, 4.0, 4.0, 0.0), 1.0);
        let t = 0.3;
        let crit = second_order_error(1.0, 0.0, 4.0, 4.0, t);
        assert!((crit - (1.0 + 2.0 * t) * (-2.0 * t).exp()).abs() < 1e-15);
        let under = second_order_error(1.0, 0.0, 4.0, 0.0, t);
        assert!((under - (2.0 * t).cos()).abs() < 1e-15);
        let over = second_order_error(1.0, 0.0, 2.0, 3.0, t);
        assert!((over - (2.0 * (-t).exp() - (-2.0 * t).exp())).abs() < 1e-15);
    }

    #[test]
    fn force_pi_examples() {
        let lp = ForceLoopState::new(0.3, 0.2, 10.0);
        assert_eq!(lp.force_pi_step(4.0, 4.0, 1e-3).0, 0.0);
        let p_only = ForceLoopState::new(1e-4, 0.0, 10.0);
        assert!((p_only.force_pi_step(10.0, 0.0, 1e-3).0 - 1e-3).abs() < 1e-18);

        let mut lp = ForceLoopState::new(0.0, 1.0, 0.05);
        let mut outs = Vec::new();
        for _ in 0..100 {
            let (u, next) = lp.force_pi_step(1.0, 0.0, 1e-3);
            outs.push(u);
            lp = next;
        }
        assert!((outs[9] - 0.01).abs() < 1e-12);
        assert!((outs[29] - 0.03).abs() < 1e-12);
        assert_eq!(*outs.last().unwrap(), 0.05);
        assert_eq!(lp.integrator, 0.05);
    }

    fn gains() -> ControllerGains {
        ControllerGains {
            kp_f: 1e-4,
            ki_f: 1e-2,
            f_limit: 10.0,
            inner: InnerGains::critically_damped(40.0),
            force_axes: [true, false, true, false, false, true],
            dt: 1e-3,
        }
    }

    #[test]
    fn parallel_examples() {
        let mut c = ParallelController::new(&gains());
        let pose = Vector6::new(0.1, 0.2, 0.3, 0.0, 0.0, 0.0);
        let out = c.parallel_step(&pose, &Vector6::zeros(), &Vector6::zeros(), &Vector6::zeros(), 1e-3);
        assert_eq!(out, pose);

        let mut c = ParallelController::new(&gains());
        let mut p = Vector6::zeros();
        let v = Vector6::new(0.01, 0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..1000 {
            p = c.parallel_step(&p, &v, &Vector6::zeros(), &Vector6::zeros(), 1e-3);
        }
        assert!((p[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_contact_stiffness_is_stable() {
        for w in [5.0, 40.0, 200.0] {
            let r = stability_margin(0.0, 1e-4, 1e-2, &InnerGains::critically_damped(w), 1e-3);
            assert!(r < 1.0 + 1e-12, "w={w} r={r}");
        }
    }

    #[test]
    fn radius_non_decreasing_in_stiffness() {
        let g = gains();
        let mut prev = 0.0;
        for i in 1..200 {
            let r = g.margin(i as f64 * 1e3);
            assert!(r >= prev - 1e-9, "K_e={} r={r} prev={prev}", i as f64 * 1e3);
            prev = r;
        }
    }

    #[test]
    fn split_exists() {
        let inner = InnerGains::critically_damped(80.0);
        let (ki, r4, r6) = find_split_gains(4e4, 6e4, 5e-5, &inner, 2e-3, (1e-4, 1e-1), 400).unwrap();
        assert!(r4 < 1.0 && r6 > 1.0, "ki={ki} r4={r4} r6={r6}");
    }

    /// Linear time-domain closed loop matching [`closed_loop_matrix`] with
    /// the plant and force loop types; returns the force error per step.
    fn simulate(k_e: f64, kp: f64, ki: f64, inner: InnerGains, dt: f64, steps: usize) -> Vec<f64> {
        let mut plant = JointPlant::new(1, inner, dt);
        let mut lp = ForceLoopState::new(kp, ki, f64::INFINITY);
        let f_d = 1.0;
        let mut errors = Vec::with_capacity(steps);
        for _ in 0..steps {
            let f = k_e * plant.q[0];
            errors.push(f_d - f);
            let (u, next) = lp.force_pi_step(f_d, f, dt);
            lp = next;
            plant.computed_torque_step(&[u], &[0.0], &[0.0], &[0.0]);
        }
        errors
    }

    fn envelope(e: &[f64]) -> f64 {
        e.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn margin_agrees_with_time_domain(
            log_ke in 2.0f64..5.5,
            log_kp in -7.0f64..-3.0,
            log_ki in -4.0f64..-0.5,
            w in 10.0f64..120.0,
            dt_ms in 0.5f64..3.0,
        ) {
            let (ke, kp, ki, dt) = (10f64.powf(log_ke), 10f64.powf(log_kp), 10f64.powf(log_ki), dt_ms * 1e-3);
            let inner = InnerGains::critically_damped(w);
            let r = stability_margin(ke, kp, ki, &inner, dt);
            prop_assume!(r < 0.99 || r > 1.01);
            // Enough steps for the dominant mode to change by a factor of 1e3.
            let steps = ((3.0 * 10f64.ln()) / (r.ln().abs())).ceil() as usize + 50;
            prop_assume!(steps < 200_000);
            let e = simulate(ke, kp, ki, inner, dt, steps);
            let (head, tail) = (envelope(&e[..50]), envelope(&e[steps - 50..]));
            if r < 0.99 {
                prop_assert!(tail < head, "r={r} head={head} tail={tail}");
            } else {
                prop_assert!(tail > head, "r={r} head={head} tail={tail}");
            }
        }

        #[test]
        fn parallel_is_additive(
            pose in prop::array::uniform6(-1.0f64..1.0),
            v in prop::array::uniform6(-0.1f64..0.1),
            fd in prop::array::uniform6(-50.0f64..50.0),
            fm in prop::array::uniform6(-50.0f64..50.0),
        ) {
            let (pose, v, fd, fm) = (Vector6::from(pose), Vector6::from(v), Vector6::from(fd), Vector6::from(fm));
            let dt = 1e-3;
            let both = ParallelController::new(&gains()).parallel_step(&pose, &v, &fd, &fm, dt);
            let vel = ParallelController::new(&gains()).parallel_step(&pose, &v, &fd, &fd, dt);
            let force = ParallelController::new(&gains()).parallel_step(&pose, &Vector6::zeros(), &fd, &fm, dt);
            prop_assert!((both - (vel + force - pose)).amax() <= 1e-12);
        }
    }
}
