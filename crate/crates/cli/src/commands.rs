//! `simulate` and `reduce`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context as _;
use contactkit::config::{Experiment, SceneConfig};
use contactkit::contact::net_stiffness_diagonal;
use contactkit::dynamics::run as run_dynamics;
use contactkit::reducer::reduce;
use contactkit::scenarios::{
    count_peg_contact_configs, run_force_experiment, run_incline_experiment, ExperimentReport,
};
use contactkit::stiffness_qp::bound_stiffness;
use contactkit::trajectory::write_atomic;
use contactkit::{ContactSet, ReductionConfig, StiffnessBound, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Files written by one `simulate` run.
#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub report: ExperimentReport,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
    /// Force log of flat-force scenes.
    pub forces_path: Option<PathBuf>,
}

impl SimulateOutput {
    pub fn summary(&self) -> String {
        let r = &self.report;
        let mut s = format!("{} ({}): {} steps in {:.3} s", r.name, r.scene, r.steps, r.runtime_s);
        if let Some(rms) = r.rms_dev_m {
            s += &format!(", rms {rms:.3e} m");
        }
        if let Some(g) = r.reached_ground {
            s += &format!(", reached ground {g}");
        }
        if let Some(settled) = r.settled {
            s += &format!(", settled {settled}");
        }
        if r.diverged {
            s += ", diverged";
        }
        s += &format!("\ntrajectory: {}\nreport: {}", self.csv_path.display(), self.report_path.display());
        if let Some(f) = &self.forces_path {
            s += &format!("\nforces: {}", f.display());
        }
        s
    }
}

fn out_file(out_dir: &Path, name: &str, suffix: &str) -> PathBuf {
    out_dir.join(format!("{name}{suffix}"))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

/// Load `config` with `overrides`, run it, and write
/// `<name>.csv` and `<name>.report.json` into `out_dir`.
pub fn simulate(config: &Path, overrides: &[String], out_dir: &Path) -> anyhow::Result<SimulateOutput> {
    let (cfg, resolved) =
        SceneConfig::load(config, overrides).with_context(|| format!("loading config {}", config.display()))?;
    create_dir(out_dir)?;
    let csv_path = out_file(out_dir, &cfg.name, ".csv");
    let mut forces_path = None;

    let (report, traj) = match cfg.build()? {
        Experiment::Incline { scene, sim } => run_incline_experiment(&cfg.name, &scene, &sim)?,
        Experiment::FlatForce {
            scene,
            gains,
            stiffness,
            bound,
        } => {
            let run = run_force_experiment(&cfg.name, &scene, &gains, stiffness, bound)?;
            let path = out_file(out_dir, &cfg.name, ".forces.csv");
            write_atomic(&path, &forces_csv(&run.forces)?)?;
            forces_path = Some(path);
            (run.report, run.trajectory)
        }
        Experiment::DoublePin { scene } => {
            let started = Instant::now();
            let counts = count_peg_contact_configs(&scene, &scene.scripted_poses());
            let report = ExperimentReport {
                name: cfg.name.clone(),
                scene: "double_pin".into(),
                scaling: false,
                rms_dev_m: None,
                reached_ground: None,
                settled: None,
                diverged: false,
                runtime_s: started.elapsed().as_secs_f64(),
                steps: 0,
                max_raw_contacts: counts.iter().map(|c| c.1).max().unwrap_or(0),
                max_net_stiffness: [0.0; 3],
                k_max: None,
                details: json!({ "counts": counts.iter().map(|(n, c)| json!({"pose": n, "contacts": c})).collect::<Vec<_>>() }),
            };
            write_atomic(&csv_path, &counts_csv(&counts)?)?;
            return finish(report, resolved, overrides, out_dir, csv_path, None);
        }
        Experiment::Custom {
            shape,
            initial,
            pieces,
            sim,
        } => {
            let started = Instant::now();
            let traj = run_dynamics(&initial, &shape, &pieces, &sim)?;
            let report = ExperimentReport {
                name: cfg.name.clone(),
                scene: "custom".into(),
                scaling: sim.stiffness_bound.is_some(),
                rms_dev_m: None,
                reached_ground: None,
                settled: None,
                diverged: traj.diverged(),
                runtime_s: started.elapsed().as_secs_f64(),
                steps: traj.steps,
                max_raw_contacts: traj.max_raw_contacts,
                max_net_stiffness: traj.max_net_stiffness.into(),
                k_max: sim.k_max(),
                details: json!({
                    "diverged_at_step": traj.diverged_at,
                    "mean_times_us": traj.mean_times,
                }),
            };
            (report, traj)
        }
    };
    traj.write_csv(&csv_path)?;
    finish(report, resolved, overrides, out_dir, csv_path, forces_path)
}

fn finish(
    report: ExperimentReport,
    resolved: Value,
    overrides: &[String],
    out_dir: &Path,
    csv_path: PathBuf,
    forces_path: Option<PathBuf>,
) -> anyhow::Result<SimulateOutput> {
    let report_path = out_file(out_dir, &report.name, ".report.json");
    let doc = json!({
        "report": report,
        "trajectory_csv": csv_path,
        "forces_csv": forces_path,
        "overrides": overrides,
        "config": resolved,
    });
    write_atomic(&report_path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    Ok(SimulateOutput {
        report,
        report_path,
        csv_path,
        forces_path,
    })
}

fn forces_csv(forces: &[(f64, f64, f64)]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "f_desired", "f_measured"])?;
    for (t, f_d, f) in forces {
        w.write_record([format!("{t:?}"), format!("{f_d:?}"), format!("{f:?}")])?;
    }
    Ok(w.into_inner()?)
}

fn counts_csv(counts: &[(String, usize)]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pose", "contacts"])?;
    for (name, c) in counts {
        w.write_record([name.clone(), c.to_string()])?;
    }
    Ok(w.into_inner()?)
}

pub fn bound_from_args(k_max: Option<f64>, factor: Option<f64>) -> StiffnessBound {
    match (k_max, factor) {
        (Some(k), _) => StiffnessBound::Absolute(k),
        (None, Some(f)) => StiffnessBound::Factor(f),
        (None, None) => StiffnessBound::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceDiagnostics {
    pub input_count: usize,
    pub output_count: usize,
    pub k: usize,
    pub c: f64,
    pub stiffness: f64,
    pub k_max: f64,
    pub net_stiffness_before: [f64; 3],
    pub net_stiffness_after: [f64; 3],
    pub qp_objective: f64,
    pub active_axes: Vec<String>,
    pub scales: Vec<f64>,
}

/// Cluster `set` to at most `k` contacts and bound the result.
pub fn reduce_contacts(
    set: &ContactSet,
    k: usize,
    c: Option<f64>,
    bound: StiffnessBound,
) -> contactkit::Result<(ContactSet, ReduceDiagnostics)> {
    set.validate()?;
    let cfg = match c {
        Some(c) => ReductionConfig::new(k, c),
        None => match position_diagonal(set) {
            d if d > 0.0 => ReductionConfig::for_scene_diagonal(k, d),
            _ => ReductionConfig::new(k, 0.0),
        },
    };
    let k_max = bound.k_max(set.stiffness);
    let reduced = reduce(set, &cfg)?;
    let (out, objective, active, scales) = if reduced.is_empty() {
        (reduced, 0.0, Vec::new(), Vec::new())
    } else {
        let (out, sol) = bound_stiffness(&reduced, k_max)?;
        let active = sol.active_axes.iter().map(|a| format!("{a:?}").to_lowercase()).collect();
        (out, sol.objective, active, sol.scales)
    };
    let diagnostics = ReduceDiagnostics {
        input_count: set.len(),
        output_count: out.len(),
        k,
        c: cfg.c,
        stiffness: set.stiffness,
        k_max,
        net_stiffness_before: net_stiffness_diagonal(set).into(),
        net_stiffness_after: net_stiffness_diagonal(&out).into(),
        qp_objective: objective,
        active_axes: active,
        scales,
    };
    Ok((out, diagnostics))
}

fn position_diagonal(set: &ContactSet) -> f64 {
    let Some(first) = set.points.first() else {
        return 0.0;
    };
    let (mut lo, mut hi) = (first.position, first.position);
    for p in &set.points {
        lo = lo.inf(&p.position);
        hi = hi.sup(&p.position);
    }
    (hi - lo).norm()
}

#[derive(Debug, Clone)]
pub struct ReduceOutput {
    pub output: PathBuf,
    pub diagnostics_path: PathBuf,
    pub diagnostics: ReduceDiagnostics,
}

/// Read a contact set document, reduce it, and write
/// `<stem>.reduced.json` plus `<stem>.diagnostics.json`.
pub fn reduce_file(
    input: &Path,
    k: usize,
    c: Option<f64>,
    bound: StiffnessBound,
    out_dir: &Path,
) -> anyhow::Result<ReduceOutput> {
    let set = ContactSet::read(input).with_context(|| format!("reading contacts {}", input.display()))?;
    let (out, diagnostics) = reduce_contacts(&set, k, c, bound)?;
    create_dir(out_dir)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("contacts");
    let output = out_file(out_dir, stem, ".reduced.json");
    let diagnostics_path = out_file(out_dir, stem, ".diagnostics.json");
    out.write(&output)?;
    write_atomic(&diagnostics_path, serde_json::to_string_pretty(&diagnostics)?.as_bytes())?;
    Ok(ReduceOutput {
        output,
        diagnostics_path,
        diagnostics,
    })
}

/// Trajectory columns that do not depend on wall-clock timing.
pub fn same_motion(a: &Trajectory, b: &Trajectory) -> bool {
    a.samples.len() == b.samples.len()
        && a.diverged_at == b.diverged_at
        && a.samples.iter().zip(&b.samples).all(|(x, y)| bits(x) == bits(y))
}

fn bits(s: &contactkit::trajectory::TrajectorySample) -> Vec<u64> {
    [
        s.t, s.px, s.py, s.pz, s.vx, s.vy, s.vz, s.qw, s.qx, s.qy, s.qz, s.wx, s.wy, s.wz, s.ke_xx, s.ke_yy, s.ke_zz,
    ]
    .iter()
    .map(|v| v.to_bits())
    .chain([s.n_raw as u64, s.n_reduced as u64])
    .collect()
}

impl fmt::Display for ReduceDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> {} contacts, net stiffness {:?} -> {:?} (K_max {}), objective {:.6}",
            self.input_count,
            self.output_count,
            self.net_stiffness_before,
            self.net_stiffness_after,
            self.k_max,
            self.qp_objective
        )
    }
}
