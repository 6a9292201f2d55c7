//! Exhaustive reference solver for small scaling problems.
//!
//! Every optimum of a convex QP is the solution of the equality problem
//! obtained by fixing its active set, so enumerating all active sets
//! (axis subsets times per-contact status) and keeping the best feasible
//! candidate gives the global minimum.

use nalgebra::{DMatrix, DVector, Vector3};

use super::{ScalingProblem, ScalingSolution};
use crate::error::{Error, Result};

pub const ORACLE_MAX_CONTACTS: usize = 6;

pub fn oracle_solve(problem: &ScalingProblem) -> Result<ScalingSolution> {
    problem.validate()?;
    let n = problem.len();
    if n > ORACLE_MAX_CONTACTS {
        return Err(Error::OracleTooLarge(n));
    }
    let k = problem.stiffness;
    let rows: Vec<Vector3<f64>> = problem.c_vectors.iter().map(|c| c * k).collect();
    let feas_tol = 1e-9 * problem.k_max.max(1.0);

    let mut best: Option<(f64, Vec<f64>, Vector3<f64>)> = None;
    let combos = 3usize.pow(n as u32);
    for axis_mask in 0u8..8 {
        let axes: Vec<usize> = (0..3).filter(|j| axis_mask & (1 << j) != 0).collect();
        for code in 0..combos {
            // status: 0 = free, 1 = fixed at 0, 2 = fixed at 1
            let mut status = vec![0u8; n];
            let mut c = code;
            for st in status.iter_mut() {
                *st = (c % 3) as u8;
                c /= 3;
            }
            let Some((s, mu)) = candidate(&rows, problem.k_max, &axes, &status) else {
                continue;
            };
            if s.iter().any(|&v| v < -1e-12 || v > 1.0 + 1e-12) {
                continue;
            }
            let mut load = Vector3::zeros();
            for (r, &v) in rows.iter().zip(&s) {
                load += r * v;
            }
            if load.iter().any(|&l| l > problem.k_max + feas_tol) {
                continue;
            }
            let obj: f64 = s.iter().map(|v| (v - 1.0).powi(2)).sum();
            if best.as_ref().map_or(true, |(b, _, _)| obj < *b - 1e-15) {
                best = Some((obj, s, mu));
            }
        }
    }
    let (_, scales, mu) = best.expect("s = 0 is always feasible");
    let scales: Vec<f64> = scales.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    // Report multipliers in the solver's normalized units.
    Ok(ScalingSolution::finish(problem, scales, mu * k))
}

fn candidate(
    rows: &[Vector3<f64>],
    k_max: f64,
    axes: &[usize],
    status: &[u8],
) -> Option<(Vec<f64>, Vector3<f64>)> {
    let n = rows.len();
    let mut s: Vec<f64> = status
        .iter()
        .map(|&st| match st {
            1 => 0.0,
            _ => 1.0,
        })
        .collect();
    let mut mu = Vector3::zeros();
    if !axes.is_empty() {
        let m = axes.len();
        // Free: s_i = 1 − Σ_k a_ik μ_k. Substituting into each active axis
        // equation gives a linear system for μ.
        let mut g = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::from_element(m, k_max);
        for (r, &j) in axes.iter().enumerate() {
            for i in 0..n {
                let a_ij = rows[i][j];
                match status[i] {
                    0 => {
                        b[r] -= a_ij;
                        for (q, &kk) in axes.iter().enumerate() {
                            g[(r, q)] -= a_ij * rows[i][kk];
                        }
                    }
                    2 => b[r] -= a_ij,
                    _ => {}
                }
            }
        }
        let scale = g.amax();
        if scale == 0.0 {
            return None;
        }
        let lu = g.lu();
        let det = lu.determinant();
        if det.abs() <= 1e-12 * scale.powi(m as i32) {
            return None;
        }
        let sol = lu.solve(&b)?;
        for (r, &j) in axes.iter().enumerate() {
            mu[j] = sol[r];
        }
    }
    for i in 0..n {
        if status[i] == 0 {
            s[i] = 1.0 - axes.iter().map(|&j| rows[i][j] * mu[j]).sum::<f64>();
        }
    }
    Some((s, mu))
}
