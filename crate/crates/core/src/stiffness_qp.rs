//! Per-contact stiffness scaling that bounds the per-axis net stiffness.
//!
//! Solves
//!
//! ```text
//! min  Σ (s_i − 1)²
//! s.t. K · Σ_i s_i c_ij ≤ K_max     j ∈ {x, y, z}
//!      0 ≤ s_i ≤ 1
//! ```
//!
//! with `c_i = diag(n_i n_iᵀ)`. The Hessian is the identity, so every
//! equality-constrained subproblem is a projection with at most three
//! multipliers; a primal active-set method handles the rest.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{axis_stiffness_vector, ContactSet};
use crate::error::{Error, Result};

mod oracle;
pub use oracle::oracle_solve;

/// Required KKT accuracy of a returned solution.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// How `K_max` is derived from the contact stiffness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StiffnessBound {
    /// Absolute bound in N/m.
    Absolute(f64),
    /// `K_max = factor · K`.
    Factor(f64),
}

impl StiffnessBound {
    pub fn k_max(&self, stiffness: f64) -> f64 {
        match *self {
            StiffnessBound::Absolute(k) => k,
            StiffnessBound::Factor(f) => f * stiffness,
        }
    }
}

impl Default for StiffnessBound {
    fn default() -> Self {
        StiffnessBound::Factor(2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingProblem {
    pub c_vectors: Vec<Vector3<f64>>,
    pub stiffness: f64,
    pub k_max: f64,
}

impl ScalingProblem {
    pub fn from_contacts(set: &ContactSet, k_max: f64) -> Self {
        Self {
            c_vectors: set.points.iter().map(axis_stiffness_vector).collect(),
            stiffness: set.stiffness,
            k_max,
        }
    }

    pub fn len(&self) -> usize {
        self.c_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_vectors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) || !self.stiffness.is_finite() {
            return Err(Error::invalid(format!("stiffness {} must be > 0", self.stiffness)));
        }
        if !(self.k_max > 0.0) || !self.k_max.is_finite() {
            return Err(Error::invalid(format!("k_max {} must be > 0", self.k_max)));
        }
        for (i, c) in self.c_vectors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) || (c.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("c-vector {i} = {c:?} is not a unit split")));
            }
        }
        Ok(())
    }

    /// `K · Σ s_i c_i`, summed in contact order.
    pub fn net_stiffness(&self, scales: &[f64]) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (c, &s) in self.c_vectors.iter().zip(scales) {
            acc += c * s;
        }
        acc * self.stiffness
    }

    /// Max KKT violation of `scales` with axis multipliers `lambda` (given in
    /// the normalized units `c·s ≤ K_max/K`).
    pub fn kkt_residual(&self, scales: &[f64], lambda: &Vector3<f64>) -> f64 {
        let ratio = self.k_max / self.stiffness;
        let mut worst: f64 = 0.0;
        let mut load = Vector3::zeros();
        for (c, &s) in self.c_vectors.iter().zip(scales) {
            load += c * s;
            worst = worst.max((-s).max(s - 1.0));
            // Stationarity with the bound multipliers eliminated: the scale
            // must equal the clamped unconstrained value.
            let target = (1.0 - c.dot(lambda)).clamp(0.0, 1.0);
            worst = worst.max((s - target).abs());
        }
        for j in 0..3 {
            let slack = ratio - load[j];
            worst = worst.max((-slack).max(0.0) / ratio.max(1.0));
            worst = worst.max((-lambda[j]).max(0.0));
            worst = worst.max((lambda[j] * slack).abs());
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSolution {
    pub scales: Vec<f64>,
    /// `Σ (s_i − 1)²`.
    pub objective: f64,
    /// Axes whose net-stiffness bound is active.
    pub active_axes: Vec<Axis>,
    /// Contacts whose scale sits on the lower bound `s_i = 0`.
    pub active_bounds: Vec<usize>,
    /// Axis multipliers in normalized units (per unit of `K_max/K`).
    pub multipliers: Vector3<f64>,
    pub kkt_residual: f64,
}

impl ScalingSolution {
    fn empty() -> Self {
        Self {
            scales: Vec::new(),
            objective: 0.0,
            active_axes: Vec::new(),
            active_bounds: Vec::new(),
            multipliers: Vector3::zeros(),
            kkt_residual: 0.0,
        }
    }

    pub(crate) fn finish(problem: &ScalingProblem, scales: Vec<f64>, multipliers: Vector3<f64>) -> Self {
        let objective = scales.iter().map(|s| (s - 1.0).powi(2)).sum();
        let net = problem.net_stiffness(&scales);
        let active_axes = Axis::ALL
            .into_iter()
            .filter(|a| net[a.index()] >= problem.k_max * (1.0 - 1e-9))
            .collect();
        let active_bounds = scales
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0)
            .map(|(i, _)| i)
            .collect();
        let kkt_residual = problem.kkt_residual(&scales, &multipliers);
        Self {
            scales,
            objective,
            active_axes,
            active_bounds,
            multipliers,
            kkt_residual,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Constraint identifiers in the working set.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Constraint {
    Axis(usize),
    Lower(usize),
    Upper(usize),
}

const STEP_EPS: f64 = 1e-14;

/// Primal active-set solve, started from the largest uniform scaling of the
/// unconstrained optimum `s = 1` that satisfies every axis bound.
pub fn solve_scaling(problem: &ScalingProblem) -> Result<ScalingSolution> {
    problem.validate()?;
    let n = problem.len();
    if n == 0 {
        return Ok(ScalingSolution::empty());
    }
    let ratio = problem.k_max / problem.stiffness;
    let rows: [Vec<f64>; 3] =
        std::array::from_fn(|j| problem.c_vectors.iter().map(|c| c[j]).collect());
    let row_sum = |j: usize, s: &[f64]| -> f64 { rows[j].iter().zip(s).map(|(a, b)| a * b).sum() };

    // Warm start.
    let ones = vec![1.0; n];
    let mut t: f64 = 1.0;
    for j in 0..3 {
        let load = row_sum(j, &ones);
        if load > ratio {
            t = t.min(ratio / load);
        }
    }
    let mut s = vec![t; n];
    let mut status = vec![Bound::Free; n];
    let mut axes: Vec<usize> = Vec::new();
    if t == 1.0 {
        status.fill(Bound::Upper);
    } else {
        // One tight axis is enough to start; others join when they block.
        let tight = (0..3)
            .filter(|&j| row_sum(j, &ones) > ratio)
            .min_by(|&a, &b| {
                (ratio / row_sum(a, &ones))
                    .partial_cmp(&(ratio / row_sum(b, &ones)))
                    .unwrap()
            })
            .unwrap();
        axes.push(tight);
    }

    let max_iter = 20 * (n + 3) + 100;
    let mut lambda = Vector3::zeros();
    for _ in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Bound::Free).collect();
        let (step, lam) = eqp_step(&rows, &axes, &free, &s);
        lambda = lam;

        let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step_norm <= 1e-13 {
            // Multipliers of the working set; drop the most negative.
            let mut worst: Option<(Constraint, f64)> = None;
            let mut consider = |c: Constraint, v: f64| {
                if v < -1e-12 && worst.map_or(true, |(_, w)| v < w) {
                    worst = Some((c, v));
                }
            };
            for &j in &axes {
                consider(Constraint::Axis(j), lambda[j]);
            }
            for i in 0..n {
                let a_lambda: f64 = (0..3).map(|j| rows[j][i] * lambda[j]).sum();
                match status[i] {
                    Bound::Lower => consider(Constraint::Lower(i), a_lambda - 1.0),
                    Bound::Upper => consider(Constraint::Upper(i), -a_lambda),
                    Bound::Free => {}
                }
            }
            match worst {
                None => break,
                Some((Constraint::Axis(j), _)) => axes.retain(|&a| a != j),
                Some((Constraint::Lower(i) | Constraint::Upper(i), _)) => status[i] = Bound::Free,
            }
            continue;
        }

        // Ratio test over constraints outside the working set.
        let mut alpha = 1.0;
        let mut blocking = None;
        for j in 0..3 {
            if axes.contains(&j) {
                continue;
            }
            let rate: f64 = rows[j].iter().zip(&step).map(|(a, p)| a * p).sum();
            if rate > STEP_EPS {
                let room = (ratio - row_sum(j, &s)).max(0.0);
                let a = room / rate;
                if a < alpha {
                    alpha = a;
                    blocking = Some(Constraint::Axis(j));
                }
            }
        }
        for &i in &free {
            let p = step[i];
            if p < -STEP_EPS {
                let a = s[i] / -p;
                if a < alpha {
                    alpha = a;
                    blocking = Some(Constraint::Lower(i));
                }
            } else if p > STEP_EPS {
                let a = (1.0 - s[i]) / p;
                if a < alpha {
                    alpha = a;
                    blocking = Some(Constraint::Upper(i));
                }
            }
        }
        for &i in &free {
            s[i] += alpha * step[i];
        }
        match blocking {
            Some(Constraint::Axis(j)) => axes.push(j),
            Some(Constraint::Lower(i)) => {
                s[i] = 0.0;
                status[i] = Bound::Lower;
            }
            Some(Constraint::Upper(i)) => {
                s[i] = 1.0;
                status[i] = Bound::Upper;
            }
            None => {}
        }
    }

    for v in &mut s {
        *v = v.clamp(0.0, 1.0);
    }
    enforce_bound(problem, &mut s);
    Ok(ScalingSolution::finish(problem, s, lambda))
}

/// Solve the equality-constrained projection for the current working set.
///
/// Returns the step on the free variables (zero elsewhere) and the axis
/// multipliers of the working set at the projected point.
fn eqp_step(rows: &[Vec<f64>; 3], axes: &[usize], free: &[usize], s: &[f64]) -> (Vec<f64>, Vector3<f64>) {
    let n = s.len();
    let mut step = vec![0.0; n];
    let mut lambda = Vector3::zeros();
    // Unconstrained direction toward 1 on the free variables.
    let g: Vec<f64> = free.iter().map(|&i| 1.0 - s[i]).collect();
    if !axes.is_empty() {
        let m = axes.len();
        let a = DMatrix::from_fn(m, free.len(), |r, c| rows[axes[r]][free[c]]);
        let gram = &a * a.transpose();
        let rhs = &a * DVector::from_column_slice(&g);
        if let Some(sol) = gram.clone().cholesky().map(|ch| ch.solve(&rhs)).or_else(|| gram.lu().solve(&rhs)) {
            for (r, &j) in axes.iter().enumerate() {
                lambda[j] = sol[r];
            }
        }
    }
    for (k, &i) in free.iter().enumerate() {
        let a_lambda: f64 = axes.iter().map(|&j| rows[j][i] * lambda[j]).sum();
        step[i] = g[k] - a_lambda;
    }
    (step, lambda)
}

/// Shave scales on any axis whose computed net stiffness exceeds `K_max`
/// by rounding, so the bound holds for the exact sums reported downstream.
fn enforce_bound(problem: &ScalingProblem, s: &mut [f64]) {
    for _ in 0..8 {
        let net = problem.net_stiffness(s);
        let mut ok = true;
        for j in 0..3 {
            if net[j] > problem.k_max {
                ok = false;
                let shrink = problem.k_max / net[j] * (1.0 - 4.0 * f64::EPSILON);
                for (v, c) in s.iter_mut().zip(&problem.c_vectors) {
                    if c[j] > 0.0 {
                        *v *= shrink;
                    }
                }
            }
        }
        if ok {
            break;
        }
    }
}

/// Copy of `set` with each point's scale replaced by the solution.
pub fn apply_scaling(set: &ContactSet, solution: &ScalingSolution) -> Result<ContactSet> {
    if solution.scales.len() != set.len() {
        return Err(Error::LengthMismatch {
            expected: set.len(),
            got: solution.scales.len(),
        });
    }
    let mut out = set.clone();
    for (p, &s) in out.points.iter_mut().zip(&solution.scales) {
        p.scale = s;
    }
    Ok(out)
}

/// Solve and apply in one go.
pub fn bound_stiffness(set: &ContactSet, k_max: f64) -> Result<(ContactSet, ScalingSolution)> {
    let solution = solve_scaling(&ScalingProblem::from_contacts(set, k_max))?;
    Ok((apply_scaling(set, &solution)?, solution))
}
