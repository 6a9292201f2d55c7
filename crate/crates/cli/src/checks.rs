//! Acceptance criteria 1–9, each reduced to one pass/fail line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{bail, Context as _};
use contactkit::config::{Experiment, SceneConfig};
use contactkit::contact::equivalent_stiffness;
use contactkit::control::{second_order_error, InnerGains, JointPlant};
use contactkit::reducer::kmeans_cluster;
use contactkit::scenarios::{
    count_peg_contact_configs, run_force_experiment, run_incline_experiment, reward, ExperimentReport, ForceRun,
};
use contactkit::stiffness_qp::{oracle_solve, solve_scaling};
use contactkit::trajectory::TrajectorySample;
use contactkit::{ContactPoint, ContactSet, ReductionConfig, ScalingProblem, StiffnessBound, Trajectory, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{bench_scene, DynamicsScene};
use crate::commands::{reduce_contacts, simulate};

const SEED: u64 = 0x5eed_c0de;

/// Where the checks find configs, write artifacts and, for the
/// cross-process determinism check, the `contactkit` binary.
#[derive(Debug, Clone)]
pub struct Context {
    pub configs: PathBuf,
    pub out_dir: PathBuf,
    pub exe: Option<PathBuf>,
}

impl Context {
    fn config(&self, name: &str) -> PathBuf {
        self.configs.join(format!("{name}.json"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {}. {}: {}", self.id, self.title, self.detail)
    }
}

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "QP correctness",
        2 => "Stiffness bound invariant",
        3 => "Incline accuracy",
        4 => "Granularity independence",
        5 => "Force-loop stability split",
        6 => "Speed trend",
        7 => "Clustering determinism and contract",
        8 => "Controller analytics",
        9 => "Contact-configuration count",
        _ => "unknown criterion",
    }
}

/// Run the listed criteria. A check that errors counts as a failure and
/// its error becomes the detail.
pub fn run_criteria(ids: &[u8], ctx: &Context) -> anyhow::Result<Vec<CheckResult>> {
    ids.iter()
        .map(|&id| {
            let outcome = match id {
                1 => qp_oracle(1000),
                2 => stiffness_bound(ctx),
                3 => incline_accuracy(ctx),
                4 => granularity(ctx),
                5 => force_split(ctx),
                6 => speed_trend(ctx, 3),
                7 => clustering(ctx, 10_000),
                8 => controller_analytics(),
                9 => contact_configs(ctx),
                _ => bail!("no criterion {id}"),
            };
            let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e:#}")));
            Ok(CheckResult {
                id,
                title: title(id),
                pass,
                detail,
            })
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Criterion 1: active-set solver against the enumeration oracle.
pub fn qp_oracle(problems: usize) -> anyhow::Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let started = Instant::now();
    let (mut max_dev, mut max_violation) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..problems {
        let n = rng.random_range(1..=5usize);
        let k = 10f64.powf(rng.random_range(2.0..=6.0));
        let k_max = rng.random_range(0.1..=3.0) * n as f64 * k;
        let points = (0..n)
            .map(|_| ContactPoint::new(Vector3::zeros(), random_unit(&mut rng), 1e-3))
            .collect();
        let problem = ScalingProblem::from_contacts(&ContactSet::with_points(points, k, 0.0), k_max);
        let main = solve_scaling(&problem)?;
        let oracle = oracle_solve(&problem)?;
        for (a, b) in main.scales.iter().zip(&oracle.scales) {
            max_dev = max_dev.max((a - b).abs());
        }
        let net = problem.net_stiffness(&main.scales);
        max_violation = max_violation.max((net.max() - k_max) / k_max);
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = max_dev <= 1e-6 && max_violation <= 1e-9 && secs < 5.0;
    Ok((
        pass,
        format!(
            "{problems} problems, max |oracle - main| = {max_dev:.3e}, worst bound excess {:.3e}·K_max, {secs:.2} s",
            max_violation.max(0.0)
        ),
    ))
}

/// Criterion 2: every shipped scene with bounding enabled, checked row by
/// row from its written CSV.
pub fn stiffness_bound(ctx: &Context) -> anyhow::Result<(bool, String)> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&ctx.configs)
        .with_context(|| format!("listing {}", ctx.configs.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let out_dir = ctx.out_dir.join("stiffness_bound");
    let mut checked = Vec::new();
    let mut pass = true;
    for path in entries {
        let (cfg, _) = SceneConfig::load(&path, &[])?;
        if cfg.stiffness_bound.enabled().is_none() || matches!(cfg.build()?, Experiment::DoublePin { .. }) {
            continue;
        }
        let out = simulate(&path, &[], &out_dir)?;
        let k_max = out.report.k_max.context("bounded scene without k_max")?;
        let rows = Trajectory::read_csv(&out.csv_path)?;
        let worst = rows.iter().map(|r| r.net_stiffness().max()).fold(0.0, f64::max);
        let ok = !rows.is_empty() && rows.iter().all(|r| r.net_stiffness().iter().all(|&k| k <= k_max + 1e-9));
        pass &= ok;
        checked.push(format!("{} ({} rows, max {worst} <= {k_max}: {ok})", cfg.name, rows.len()));
    }
    pass &= !checked.is_empty();
    Ok((pass, checked.join("; ")))
}

fn incline_run(ctx: &Context, overrides: &[&str]) -> anyhow::Result<(ExperimentReport, Trajectory)> {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let (cfg, _) = SceneConfig::load(&ctx.config("incline"), &overrides)?;
    match cfg.build()? {
        Experiment::Incline { scene, sim } => Ok(run_incline_experiment(&cfg.name, &scene, &sim)?),
        _ => bail!("incline.json is not an incline scene"),
    }
}

const BASELINE: [&str; 2] = ["reduction=disabled", "stiffness_bound=disabled"];

fn detail_f64(r: &ExperimentReport, key: &str) -> f64 {
    r.details[key].as_f64().unwrap_or(f64::NAN)
}

/// The unscaled run counts as failing to reach the ground when its state
/// went non-finite, when it gained mechanical energy (numerical
/// instability of a passive scene), or when it stopped on the ramp.
pub fn baseline_failed(r: &ExperimentReport) -> bool {
    let runaway = r.details["energy_runaway"].as_bool().unwrap_or(false);
    let stuck = r.reached_ground == Some(false) && detail_f64(r, "speed_ratio").abs() < 0.01;
    r.diverged || runaway || stuck
}

fn incline_row(label: &str, r: &ExperimentReport) -> String {
    format!(
        "{label}: rms {:.2}% of descent, reached {}, reach t {}, energy gain {:.3} J, diverged {}, {:.2} s",
        100.0 * detail_f64(r, "rms_fraction_of_descent"),
        r.reached_ground.unwrap_or(false),
        r.details["reach_time_s"],
        detail_f64(r, "energy_gain_j"),
        r.diverged,
        r.runtime_s
    )
}

/// Criterion 3: the Fig. 3 outcome pair at 512 strips.
pub fn incline_accuracy(ctx: &Context) -> anyhow::Result<(bool, String)> {
    let (scaled, _) = incline_run(ctx, &[])?;
    let (base, _) = incline_run(ctx, &BASELINE)?;
    let scaled_ok = detail_f64(&scaled, "rms_fraction_of_descent") <= 0.05
        && scaled.reached_ground == Some(true)
        && !scaled.diverged
        && scaled.runtime_s < 60.0;
    let base_ok = baseline_failed(&base) && base.runtime_s < 60.0;
    Ok((
        scaled_ok && base_ok,
        format!("{} | {}", incline_row("scaled", &scaled), incline_row("unscaled", &base)),
    ))
}

/// RMS distance between body-center positions sampled at the same times.
pub fn position_rms(a: &[TrajectorySample], b: &[TrajectorySample]) -> f64 {
    let n = a.len().min(b.len());
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x.position() - y.position()).norm_squared()).sum();
    (sq / n.max(1) as f64).sqrt()
}

/// Criterion 4: scaled 64- and 512-strip incline trajectories, compared
/// over the sliding phase (until the first of the two reaches the foot).
pub fn granularity(ctx: &Context) -> anyhow::Result<(bool, String)> {
    let (fine_report, fine) = incline_run(ctx, &[])?;
    let (coarse_report, coarse) = incline_run(ctx, &["scene.incline_strips.count=64"])?;
    let same_clock = fine.samples.len() == coarse.samples.len()
        && fine.samples.iter().zip(&coarse.samples).all(|(a, b)| a.t == b.t);
    let reach = detail_f64(&fine_report, "reach_time_s").min(detail_f64(&coarse_report, "reach_time_s"));
    let end = fine.samples.iter().take_while(|s| s.t <= reach).count();
    let rms = position_rms(&fine.samples[..end], &coarse.samples[..end]);
    let whole = position_rms(&fine.samples, &coarse.samples);
    Ok((
        same_clock && end > 0 && rms <= 1e-3,
        format!(
            "64 vs 512 strips: center-position RMS {rms:.3e} m over the {end} samples up to t = {reach} s ({whole:.3e} m including the slide out on the ground)"
        ),
    ))
}

fn force_run(ctx: &Context, name: &str) -> anyhow::Result<(ForceRun, f64)> {
    let (cfg, _) = SceneConfig::load(&ctx.config(name), &[])?;
    match cfg.build()? {
        Experiment::FlatForce {
            scene,
            gains,
            stiffness,
            bound,
        } => {
            let margin = gains.margin(scene.contacts as f64 * stiffness);
            Ok((run_force_experiment(&cfg.name, &scene, &gains, stiffness, bound)?, margin))
        }
        _ => bail!("{name}.json is not a flat-force scene"),
    }
}

fn force_row(run: &ForceRun, margin: f64) -> String {
    let r = &run.report;
    let finals: Vec<String> = r.details["phases"]
        .as_array()
        .map(|ps| ps.iter().map(|p| format!("{:.2}", p["final_force"].as_f64().unwrap_or(f64::NAN))).collect())
        .unwrap_or_default();
    format!(
        "{} (radius {margin:.4}): settled {}, unstable {}, final forces [{}] N",
        r.name,
        r.settled.unwrap_or(false),
        r.details["unstable"],
        finals.join(", ")
    )
}

/// Criterion 5: the Fig. 7 split with the shipped gains.
pub fn force_split(ctx: &Context) -> anyhow::Result<(bool, String)> {
    let (four, r4) = force_run(ctx, "flat_force_4")?;
    let (six, r6) = force_run(ctx, "flat_force_6")?;
    let (six_scaled, _) = force_run(ctx, "flat_force_6_scaled")?;
    let unstable = |r: &ForceRun| r.report.details["unstable"].as_bool().unwrap_or(false);
    let pass = r4 < 1.0
        && r6 > 1.0
        && four.report.settled == Some(true)
        && unstable(&six)
        && six_scaled.report.settled == Some(true)
        && !unstable(&six_scaled);
    Ok((
        pass,
        [force_row(&four, r4), force_row(&six, r6), force_row(&six_scaled, r6)].join(" | "),
    ))
}

/// Criterion 6: bench trend on the plate stack.
pub fn speed_trend(ctx: &Context, repeats: usize) -> anyhow::Result<(bool, String)> {
    let (cfg, _) = SceneConfig::load(&ctx.config("bench_plates"), &[])?;
    let scene = DynamicsScene::from_config(&cfg)?;
    let k = scene.proposed().reduction.map_or(0, |r| r.k);
    let report = bench_scene(&scene, repeats, 1)?;
    let (b, p) = (&report.baseline, &report.proposed);
    let pass = b.mean_raw_contacts >= 200.0
        && k == 10
        && p.response_us < b.response_us
        && report.overhead_us < 0.2 * report.response_saving_us;
    Ok((
        pass,
        format!(
            "{:.0} raw contacts, k = {k}: response {:.3} -> {:.3} us/step, reduce+QP {:.3} us/step = {:.0}% of the {:.3} us saving (limit 20%)",
            b.mean_raw_contacts,
            b.response_us,
            p.response_us,
            report.overhead_us,
            100.0 * report.overhead_fraction(),
            report.response_saving_us
        ),
    ))
}

/// Random contact set around a few base normals, like a manifold from
/// several faces.
pub fn random_contact_set(rng: &mut ChaCha8Rng, n: usize) -> ContactSet {
    let bases: Vec<Vector3<f64>> = (0..rng.random_range(1..=3)).map(|_| random_unit(rng)).collect();
    let points = (0..n)
        .map(|_| {
            let base = bases[rng.random_range(0..bases.len())];
            let normal = (base + random_unit(rng) * rng.random_range(0.0..0.2)).normalize();
            let p = Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            ContactPoint::new(p, normal, rng.random_range(0.0..1e-3))
        })
        .collect();
    ContactSet::with_points(points, 1e4, 10.0)
}

/// Criterion 7: reducer contract over `sets` random sets, plus byte
/// equality of `contactkit reduce` output across processes.
pub fn clustering(ctx: &Context, sets: usize) -> anyhow::Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let (mut size_bad, mut rerun_bad, mut objective_bad) = (0usize, 0usize, 0usize);
    let bound = StiffnessBound::Factor(2.0);
    let mut samples = Vec::new();
    for i in 0..sets {
        let n = rng.random_range(1..=80usize);
        let k = rng.random_range(1..=12usize);
        let set = random_contact_set(&mut rng, n);
        let (a, _) = reduce_contacts(&set, k, None, bound)?;
        let (b, _) = reduce_contacts(&set, k, None, bound)?;
        if a.len() != n.min(k) {
            size_bad += 1;
        }
        if a.to_json_string() != b.to_json_string() {
            rerun_bad += 1;
        }
        if n >= k {
            let assign = kmeans_cluster(&set, &ReductionConfig::new(k, 100.0))?;
            let h = &assign.objective_history;
            let scale = h.first().copied().unwrap_or(0.0).max(1e-300);
            if h.windows(2).any(|w| w[1] > w[0] + 1e-12 * scale) {
                objective_bad += 1;
            }
        }
        if i < 20 {
            samples.push((set, k, a.to_json_string()));
        }
    }

    let cross = match &ctx.exe {
        Some(exe) => cross_process(exe, &ctx.out_dir.join("determinism"), &samples)?,
        None => bail!("no contactkit binary for the cross-process check"),
    };
    let pass = size_bad == 0 && rerun_bad == 0 && objective_bad == 0 && cross == 0;
    Ok((
        pass,
        format!(
            "{sets} sets: size mismatches {size_bad}, rerun mismatches {rerun_bad}, objective increases {objective_bad}; {} sets x 2 processes: byte mismatches {cross}",
            samples.len()
        ),
    ))
}

fn cross_process(exe: &Path, dir: &Path, samples: &[(ContactSet, usize, String)]) -> anyhow::Result<usize> {
    std::fs::create_dir_all(dir)?;
    let mut mismatches = 0;
    for (i, (set, k, in_process)) in samples.iter().enumerate() {
        let input = dir.join(format!("set{i}.json"));
        set.write(&input)?;
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.join(format!("run{run}"));
            let status = Command::new(exe)
                .args(["reduce", "--k", &k.to_string(), "--factor", "2", "--out-dir"])
                .arg(&out)
                .arg(&input)
                .output()
                .with_context(|| format!("spawning {}", exe.display()))?;
            if !status.status.success() {
                bail!("reduce failed: {}", String::from_utf8_lossy(&status.stderr));
            }
            outputs.push(std::fs::read_to_string(out.join(format!("set{i}.reduced.json")))?);
        }
        if outputs[0] != outputs[1] || &outputs[0] != in_process {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Criterion 8: computed-torque closed form, reward table, stiffness range.
pub fn controller_analytics() -> anyhow::Result<(bool, String)> {
    let dt = 1e-3;
    let mut worst_rms = 0.0f64;
    for k in [1e2f64, 1e3, 1e4] {
        let gains = InnerGains::critically_damped(k.sqrt());
        let mut plant = JointPlant::new(1, gains, dt);
        let steps = (2.0 / dt) as usize;
        let mut sq = 0.0;
        for i in 1..=steps {
            plant.computed_torque_step(&[1.0], &[0.0], &[0.0], &[0.0]);
            let exact = second_order_error(1.0, 0.0, gains.k, gains.d, i as f64 * dt);
            sq += (1.0 - plant.q[0] - exact).powi(2);
        }
        worst_rms = worst_rms.max((sq / steps as f64).sqrt());
    }

    let (z0, depth) = (0.5, 0.25);
    let limits = [10.0; 6];
    let within = [1.0; 6];
    let mut over = within;
    over[2] = 11.0;
    let rewards = [
        reward(z0, z0, depth, &within, &limits)?,
        reward(z0 + depth, z0, depth, &within, &limits)?,
        reward(z0 + depth / 2.0, z0, depth, &over, &limits)?,
    ];
    let reward_ok = rewards == [-1.0, 0.0, -2.5];

    let (n, k) = (8usize, 1e4);
    let kzz = |s: f64| {
        let points = (0..n)
            .map(|i| ContactPoint::new(Vector3::new(0.01 * i as f64, 0.0, 0.0), Vector3::z(), 1e-4).with_scale(s))
            .collect();
        equivalent_stiffness(&ContactSet::with_points(points, k, 0.0)).0
    };
    let (lo, hi) = (kzz(0.0), kzz(1.0));
    let target = 0.37 * n as f64 * k;
    let mid = kzz(target / (n as f64 * k));
    let range_ok = lo.iter().all(|&v| v == 0.0)
        && hi[(2, 2)] == n as f64 * k
        && (mid[(2, 2)] - target).abs() <= 1e-9 * target
        && hi[(0, 0)] == 0.0
        && hi[(1, 1)] == 0.0;

    let pass = worst_rms <= 0.01 && reward_ok && range_ok;
    Ok((
        pass,
        format!(
            "step-response RMS error {worst_rms:.2e} of the step (limit 1e-2); rewards {rewards:?}; K_zz extremes [{}, {}] for {n} contacts, {target} reachable: {range_ok}",
            lo[(2, 2)], hi[(2, 2)]
        ),
    ))
}

/// Criterion 9: double-pin contact counts.
pub fn contact_configs(ctx: &Context) -> anyhow::Result<(bool, String)> {
    let (cfg, _) = SceneConfig::load(&ctx.config("double_pin"), &[])?;
    let Experiment::DoublePin { scene } = cfg.build()? else {
        bail!("double_pin.json is not a double-pin scene");
    };
    let counts = count_peg_contact_configs(&scene, &scene.scripted_poses());
    let max = counts.iter().map(|c| c.1).max().unwrap_or(0);
    let aligned = counts.iter().find(|c| c.0 == "aligned_partial_insertion").map(|c| c.1);
    let table: Vec<String> = counts.iter().map(|(n, c)| format!("{n}={c}")).collect();
    Ok((max >= 6 && aligned == Some(4), format!("max {max}; {}", table.join(", "))))
}
