//! Baseline vs. reduced timing of one scene, in the layout of a per-phase
//! timing table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use contactkit::config::{body_diagonal, Experiment, SceneConfig};
use contactkit::dynamics::run;
use contactkit::trajectory::write_atomic;
use contactkit::{BodyState, ConvexPiece, DynamicShape, ReductionConfig, SimConfig, Trajectory};
use serde::{Deserialize, Serialize};

use crate::commands::same_motion;

/// The pieces of a scene that [`run`] integrates.
#[derive(Debug, Clone)]
pub struct DynamicsScene {
    pub name: String,
    pub initial: BodyState,
    pub shape: DynamicShape,
    pub pieces: Vec<ConvexPiece>,
    pub sim: SimConfig,
}

impl DynamicsScene {
    pub fn from_config(cfg: &SceneConfig) -> anyhow::Result<Self> {
        let (initial, shape, pieces, sim) = match cfg.build()? {
            Experiment::Incline { scene, sim } => (scene.initial_state(), scene.shape(), scene.pieces(), sim),
            Experiment::Custom {
                shape,
                initial,
                pieces,
                sim,
            } => (initial, shape, pieces, sim),
            _ => bail!("bench needs an incline or custom scene, `{}` is neither", cfg.name),
        };
        Ok(Self {
            name: cfg.name.clone(),
            initial,
            shape,
            pieces,
            sim,
        })
    }

    /// No reduction and no bound.
    pub fn baseline(&self) -> SimConfig {
        SimConfig {
            reduction: None,
            stiffness_bound: None,
            ..self.sim.clone()
        }
    }

    /// The configured reduction and bound, defaulting to k = 10 and 2K.
    pub fn proposed(&self) -> SimConfig {
        SimConfig {
            reduction: Some(
                self.sim
                    .reduction
                    .unwrap_or_else(|| ReductionConfig::for_scene_diagonal(10, body_diagonal(&self.shape))),
            ),
            stiffness_bound: Some(self.sim.stiffness_bound.unwrap_or_default()),
            ..self.sim.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub variant: String,
    pub repeats: usize,
    pub steps: usize,
    pub mean_raw_contacts: f64,
    pub mean_reduced_contacts: f64,
    pub collide_us: f64,
    pub reduce_us: f64,
    pub qp_us: f64,
    pub response_us: f64,
    /// Every repeat produced the same motion bit for bit.
    pub deterministic: bool,
}

impl VariantStats {
    pub fn overhead_us(&self) -> f64 {
        self.reduce_us + self.qp_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub baseline: VariantStats,
    pub proposed: VariantStats,
    /// Baseline minus proposed mean response time per step.
    pub response_saving_us: f64,
    /// Mean reduction + QP time per step of the proposed variant.
    pub overhead_us: f64,
}

impl BenchReport {
    /// Overhead as a fraction of the response-time saving; infinite when
    /// there is no saving.
    pub fn overhead_fraction(&self) -> f64 {
        if self.response_saving_us > 0.0 {
            self.overhead_us / self.response_saving_us
        } else {
            f64::INFINITY
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>9} {:>14} {:>14} {:>14}",
            "variant", "raw", "reduced", "collision_us", "reduce+qp_us", "response_us"
        );
        for v in [&self.baseline, &self.proposed] {
            let _ = writeln!(
                s,
                "{:<10} {:>9.1} {:>9.1} {:>14.3} {:>14.3} {:>14.3}",
                v.variant,
                v.mean_raw_contacts,
                v.mean_reduced_contacts,
                v.collide_us,
                v.overhead_us(),
                v.response_us
            );
        }
        let _ = writeln!(
            s,
            "response saving {:.3} us/step, overhead {:.3} us/step ({:.1}% of saving)",
            self.response_saving_us,
            self.overhead_us,
            100.0 * self.overhead_fraction()
        );
        s
    }
}

/// Run `sim` `repeats` times spread over `jobs` threads. Results come back
/// in repeat order.
pub fn repeat_runs(scene: &DynamicsScene, sim: &SimConfig, repeats: usize, jobs: usize) -> anyhow::Result<Vec<Trajectory>> {
    let jobs = jobs.clamp(1, repeats.max(1));
    let per_worker: Vec<anyhow::Result<Vec<(usize, Trajectory)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                s.spawn(move || {
                    (w..repeats)
                        .step_by(jobs)
                        .map(|i| Ok((i, run(&scene.initial, &scene.shape, &scene.pieces, sim)?)))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let mut all = Vec::with_capacity(repeats);
    for w in per_worker {
        all.extend(w?);
    }
    all.sort_by_key(|(i, _)| *i);
    Ok(all.into_iter().map(|(_, t)| t).collect())
}

pub fn variant_stats(variant: &str, runs: &[Trajectory]) -> VariantStats {
    let n = runs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&Trajectory) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let per_sample = |t: &Trajectory, f: &dyn Fn(&contactkit::trajectory::TrajectorySample) -> usize| {
        t.samples.iter().map(|s| f(s) as f64).sum::<f64>() / t.samples.len().max(1) as f64
    };
    VariantStats {
        variant: variant.to_string(),
        repeats: runs.len(),
        steps: runs.first().map_or(0, |t| t.steps),
        mean_raw_contacts: mean(&|t| per_sample(t, &|s| s.n_raw)),
        mean_reduced_contacts: mean(&|t| per_sample(t, &|s| s.n_reduced)),
        collide_us: mean(&|t| t.mean_times.collide_us),
        reduce_us: mean(&|t| t.mean_times.reduce_us),
        qp_us: mean(&|t| t.mean_times.qp_us),
        response_us: mean(&|t| t.mean_times.response_us),
        deterministic: runs.windows(2).all(|w| same_motion(&w[0], &w[1])),
    }
}

pub fn bench_scene(scene: &DynamicsScene, repeats: usize, jobs: usize) -> anyhow::Result<BenchReport> {
    if repeats == 0 {
        bail!("repeats must be >= 1");
    }
    let baseline = variant_stats("baseline", &repeat_runs(scene, &scene.baseline(), repeats, jobs)?);
    let proposed = variant_stats("proposed", &repeat_runs(scene, &scene.proposed(), repeats, jobs)?);
    Ok(BenchReport {
        name: scene.name.clone(),
        response_saving_us: baseline.response_us - proposed.response_us,
        overhead_us: proposed.overhead_us(),
        baseline,
        proposed,
    })
}

pub fn bench_config(config: &Path, overrides: &[String], repeats: usize, jobs: usize) -> anyhow::Result<BenchReport> {
    let (cfg, _) =
        SceneConfig::load(config, overrides).with_context(|| format!("loading config {}", config.display()))?;
    bench_scene(&DynamicsScene::from_config(&cfg)?, repeats, jobs)
}

pub fn write_report(report: &BenchReport, out_dir: &Path) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    let path = out_dir.join(format!("{}.bench.json", report.name));
    write_atomic(&path, serde_json::to_string_pretty(report)?.as_bytes())?;
    Ok(path)
}

