use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contactkit::collision::generate_contacts;
use contactkit::contact::net_stiffness_diagonal;
use contactkit::trajectory::{CSV_COLUMNS, TrajectorySample};
use contactkit::{ContactPoint, ContactSet, ConvexPiece, DynamicShape, Pose, Trajectory, Vector3};
use contactkit_cli::bench::{repeat_runs, DynamicsScene};
use contactkit_cli::commands::same_motion;
use serde_json::Value;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn contactkit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contactkit"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn contactkit")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn incline() -> String {
    configs().join("incline.json").to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = contactkit(
        &["simulate", &incline(), "--set", "sim.duration=0.05", "--set", "stiffness_bound.factor=2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let csv = std::fs::read_to_string(dir.path().join("incline.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 1 + 500);

    let report = read_json(&dir.path().join("incline.report.json"));
    assert_eq!(report["report"]["scaling"], true);
    assert_eq!(report["report"]["k_max"], 2e5);
    assert_eq!(report["config"]["sim"]["duration"], 0.05);
    assert_eq!(report["overrides"][0], "sim.duration=0.05");
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with("incline."))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn embedded_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = contactkit(&["simulate", &incline(), "--set", "sim.duration=0.03"], &first);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&first.join("incline.report.json"));
    let replay = dir.path().join("replay.json");
    std::fs::write(&replay, serde_json::to_string(&report["config"]).unwrap()).unwrap();

    let second = dir.path().join("second");
    let o = contactkit(&["simulate", replay.to_str().unwrap()], &second);
    assert!(o.status.success(), "{}", stderr(&o));
    let load = |p: PathBuf| Trajectory {
        samples: Trajectory::read_csv(&p).unwrap(),
        ..Trajectory::default()
    };
    assert!(same_motion(&load(first.join("incline.csv")), &load(second.join("incline.csv"))));
}

#[test]
fn baseline_overrides_disable_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let o = contactkit(
        &[
            "simulate",
            &incline(),
            "--set",
            "sim.duration=0.02",
            "--set",
            "reduction=disabled",
            "--set",
            "stiffness_bound=disabled",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&dir.path().join("incline.report.json"));
    assert_eq!(report["report"]["scaling"], false);
    assert!(report["report"]["k_max"].is_null());
    let rows: Vec<TrajectorySample> = Trajectory::read_csv(&dir.path().join("incline.csv")).unwrap();
    assert!(rows.iter().all(|r| r.n_raw == r.n_reduced));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = contactkit(&["simulate", "no/such/scene.json"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no/such/scene.json"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = contactkit(&["simulate", &incline(), "--set", "sim.step_count=3"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("sim") && err.contains("step_count"), "{err}");
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = contactkit(&["simulate", &incline(), "--set", "sim.duration=0.01"], &blocker.join("out"));
    assert!(!o.status.success());
}

#[test]
fn force_scene_writes_force_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("flat_force_4.json");
    let o = contactkit(&["simulate", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let forces = std::fs::read_to_string(dir.path().join("flat_force_4.forces.csv")).unwrap();
    assert_eq!(forces.lines().next().unwrap(), "t,f_desired,f_measured");
    assert_eq!(forces.lines().count(), 1 + 2500);
    let report = read_json(&dir.path().join("flat_force_4.report.json"));
    assert_eq!(report["report"]["settled"], true);
}

#[test]
fn double_pin_writes_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("double_pin.json");
    let o = contactkit(&["simulate", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let counts = std::fs::read_to_string(dir.path().join("double_pin.csv")).unwrap();
    assert!(counts.contains("aligned_partial_insertion,4"), "{counts}");
}

fn stacked_contacts(layers: u32) -> ContactSet {
    let shape = DynamicShape::Box {
        half_extents: Vector3::repeat(0.05),
    };
    let pieces: Vec<ConvexPiece> = (0..layers).map(|i| ConvexPiece::slab(i, Vector3::z(), 0.0)).collect();
    generate_contacts(&shape, &Pose::translation(0.0, 0.0, 0.049), &pieces, 1e5, 50.0)
}

#[test]
fn reduce_bounds_a_large_set() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("big.json");
    let set = stacked_contacts(128);
    assert_eq!(set.len(), 512);
    set.write(&input).unwrap();

    let o = contactkit(&["reduce", input.to_str().unwrap(), "--k", "10", "--factor", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = ContactSet::read(dir.path().join("big.reduced.json")).unwrap();
    assert_eq!(out.len(), 10);
    let net = net_stiffness_diagonal(&out);
    assert!(net.iter().all(|&k| k <= 2e5), "{net:?}");

    let diag = read_json(&dir.path().join("big.diagnostics.json"));
    assert_eq!(diag["input_count"], 512);
    assert_eq!(diag["output_count"], 10);
    assert_eq!(diag["net_stiffness_before"][2], 512.0 * 1e5);
    assert!(diag["qp_objective"].as_f64().unwrap() > 0.0);
}

fn small_set() -> ContactSet {
    let points = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0]]
        .iter()
        .map(|p| ContactPoint::new(Vector3::from(*p), Vector3::z(), 1e-3))
        .collect();
    ContactSet::with_points(points, 1e4, 0.0)
}

#[test]
fn reduce_passes_small_sets_through() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("small.json");
    small_set().write(&input).unwrap();

    let o = contactkit(&["reduce", input.to_str().unwrap(), "--k", "10", "--factor", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = ContactSet::read(dir.path().join("small.reduced.json")).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.points.iter().all(|p| (p.scale - 2.0 / 3.0).abs() < 1e-9));

    let o = contactkit(&["reduce", input.to_str().unwrap(), "--k", "10", "--k-max", "1e300"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = ContactSet::read(dir.path().join("small.reduced.json")).unwrap();
    assert!(out.points.iter().all(|p| p.scale == 1.0));
}

#[test]
fn reduce_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.json");
    std::fs::write(&input, r#"{"stiffness": 1e4, "points": [{"p": [0,0,0], "normal": [0,0,1], "depth": 0}]}"#).unwrap();
    let o = contactkit(&["reduce", input.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("normal"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = contactkit(&["validate", "everything"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("everything"));
}

#[test]
fn validate_qp_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = contactkit(&["validate", "qp-oracle"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}{}", stderr(&o));
    assert!(stdout.starts_with("[PASS] 1. QP correctness: 1000 problems"), "{stdout}");
}

#[test]
fn bench_repeats_share_one_trajectory() {
    let (cfg, _) = contactkit::config::SceneConfig::load(
        &configs().join("bench_plates.json"),
        &["sim.duration=0.02".to_string()],
    )
    .unwrap();
    let scene = DynamicsScene::from_config(&cfg).unwrap();
    for sim in [scene.baseline(), scene.proposed()] {
        let one = repeat_runs(&scene, &sim, 1, 1).unwrap();
        let many = repeat_runs(&scene, &sim, 4, 3).unwrap();
        assert_eq!(many.len(), 4);
        assert!(many.iter().all(|t| same_motion(t, &one[0])));
    }
}

#[test]
fn bench_prints_the_phase_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("bench_plates.json");
    let o = contactkit(
        &["bench", cfg.to_str().unwrap(), "--repeats", "2", "--jobs", "2", "--set", "sim.duration=0.01"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("collision_us") && stdout.contains("reduce+qp_us") && stdout.contains("response_us"));
    let report = read_json(&dir.path().join("bench_plates.bench.json"));
    assert_eq!(report["baseline"]["deterministic"], true);
    let reduced = report["proposed"]["mean_reduced_contacts"].as_f64().unwrap();
    assert!(reduced > 9.0 && reduced <= 10.0, "{reduced}");
    assert!(report["baseline"]["mean_raw_contacts"].as_f64().unwrap() > 200.0);
}
