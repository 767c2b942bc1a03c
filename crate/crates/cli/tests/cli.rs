//! End-to-end tests of the `delta-ilc` binary: artifact layout, determinism
//! and failure modes of each subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_delta-ilc")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("delta_ilc_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn delta-ilc")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn freq_map_writes_csv_and_is_deterministic() {
    let dir = tmp_dir("freqmap");
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    let args = |out: &Path| {
        vec![
            "--out".to_string(),
            out.to_str().unwrap().to_string(),
            "--set".into(),
            "workspace.nx=4".into(),
            "--set".into(),
            "workspace.ny=4".into(),
            "--set".into(),
            "workspace.z_planes=[-0.9,-0.8]".into(),
            "freq-map".into(),
        ]
    };
    for out in [&out_a, &out_b] {
        let result = Command::new(bin()).args(args(out)).output().unwrap();
        assert!(
            result.status.success(),
            "{}",
            String::from_utf8_lossy(&result.stderr)
        );
        let stdout = String::from_utf8_lossy(&result.stdout);
        assert!(stdout.contains("f1 in ["), "summary missing: {stdout}");
    }
    let csv_a = read(&out_a.join("freq_map.csv"));
    assert!(csv_a.starts_with("x,y,z,f1_hz\n"));
    let rows: Vec<&str> = csv_a.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert!(!rows.is_empty());

    // Reported min/max bracket exactly the data written.
    let freqs: Vec<f64> = rows
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    let min = freqs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = freqs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(min > 0.0 && max >= min);

    // Byte-identical rerun.
    assert_eq!(csv_a, read(&out_b.join("freq_map.csv")));
}

#[test]
fn design_shaper_surface_consistent() {
    let dir = tmp_dir("design");
    let result = run_cli(&[
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "shaper.design.grid=0.2",
        "design-shaper",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );

    let surface = read(&dir.join("j_surface.csv"));
    let rows: Vec<&str> = surface.lines().skip(1).filter(|l| !l.is_empty()).collect();
    // Grid 0.2 on [16,24] x [0,1]: 41 x 6 points.
    assert_eq!(rows.len(), 41 * 6);

    // The spec file's design pair must be the surface argmin.
    let spec = read(&dir.join("shaper_spec.toml"));
    let field = |name: &str| -> f64 {
        spec.lines()
            .find(|l| l.starts_with(name))
            .and_then(|l| l.split('=').nth(1))
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or_else(|| panic!("missing {name} in spec: {spec}"))
    };
    let (f_n, k_t) = (field("f_n_hz"), field("k_t"));
    let mut best: Option<(f64, f64, f64)> = None;
    for row in rows {
        let cols: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        if best.is_none() || cols[4] < best.unwrap().2 {
            best = Some((cols[0], cols[1], cols[4]));
        }
    }
    let (bf, bk, _) = best.unwrap();
    assert!((bf - f_n).abs() < 1e-9 && (bk - k_t).abs() < 1e-9);
}

fn small_run_args(out: &Path) -> Vec<String> {
    vec![
        "--out".into(),
        out.to_str().unwrap().to_string(),
        "--set".into(),
        "sim.iterations=2".into(),
        "--set".into(),
        "trajectory.cycle_time=1.0".into(),
        "--set".into(),
        "trajectory.side=0.1".into(),
        "run".into(),
    ]
}

#[test]
fn run_emits_artifacts_and_reproduces() {
    let dir = tmp_dir("run");
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let result = Command::new(bin())
            .args(small_run_args(out))
            .output()
            .unwrap();
        assert!(
            result.status.success(),
            "{}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    assert!(out_a.join("manifest.toml").exists());
    for name in [
        "summary.csv",
        "reference.csv",
        "traces_first_iteration.csv",
        "traces_last_iteration.csv",
        "bcef.csv",
        "residual.csv",
    ] {
        assert!(out_a.join(name).exists(), "{name} missing");
        assert_eq!(
            read(&out_a.join(name)),
            read(&out_b.join(name)),
            "{name} not reproducible"
        );
    }
    // Manifests match apart from the differing output directory itself.
    let normalize = |s: String| -> String {
        s.lines()
            .filter(|l| !l.starts_with("dir = "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        normalize(read(&out_a.join("manifest.toml"))),
        normalize(read(&out_b.join("manifest.toml")))
    );
    let summary = read(&out_a.join("summary.csv"));
    let rows: Vec<&str> = summary.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 2, "one summary row per iteration");
    // Header carries per-joint maxima and velocity-error norms.
    assert!(summary.starts_with("iteration,e1_max,e2_max,e3_max,edot1_norm"));
}

#[test]
fn run_checkpoints_memory_when_asked() {
    let dir = tmp_dir("ckpt");
    let mut args = small_run_args(&dir);
    args.insert(args.len() - 1, "--set".into());
    args.insert(args.len() - 1, "sim.checkpoint_memory=true".into());
    let result = Command::new(bin()).args(&args).output().unwrap();
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(dir.join("memory_iter000.csv").exists());
    assert!(dir.join("memory_iter001.csv").exists());
}

#[test]
fn infeasible_velocity_bound_fails_nonzero() {
    let dir = tmp_dir("abort");
    let result = run_cli(&[
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "sim.iterations=2",
        "--set",
        "sim.theta_dot_max=0.05",
        "run",
    ]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("infeasible"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[robot]\nl1 = 0.4\nmystery = 2\n").unwrap();
    let result = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "freq-map",
    ]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("mystery"), "stderr: {stderr}");
}

#[test]
fn compare_runs_controllers_on_identical_plant() {
    let dir = tmp_dir("compare");
    let result = run_cli(&[
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "sim.iterations=2",
        "--set",
        "trajectory.cycle_time=1.0",
        "--set",
        "trajectory.side=0.1",
        "--set",
        "compare.controllers=[\"amcilc\",\"pidilc\",\"afc\"]",
        "compare",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let csv = read(&dir.join("compare.csv"));
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 3 * 2);
    // AFC rows are identical across iterations (no iteration learning).
    let afc: Vec<&str> = rows
        .iter()
        .filter(|r| r.starts_with("afc,"))
        .copied()
        .collect();
    let tail = |row: &str| row.splitn(3, ',').nth(2).unwrap().to_string();
    assert_eq!(tail(afc[0]), tail(afc[1]));
}

#[test]
fn sample_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tmp_dir("samples");

    let freq = run_cli(&[
        "--config",
        configs.join("freq_map.toml").to_str().unwrap(),
        "--out",
        dir.join("map").to_str().unwrap(),
        "--set",
        "workspace.nx=5",
        "--set",
        "workspace.ny=5",
        "freq-map",
    ]);
    assert!(freq.status.success(), "{}", String::from_utf8_lossy(&freq.stderr));

    let square = run_cli(&[
        "--config",
        configs.join("square_is_amcilc.toml").to_str().unwrap(),
        "--out",
        dir.join("sq").to_str().unwrap(),
        "--set",
        "sim.iterations=2",
        "run",
    ]);
    assert!(square.status.success(), "{}", String::from_utf8_lossy(&square.stderr));

    let bfly = run_cli(&[
        "--config",
        configs.join("butterfly_compare.toml").to_str().unwrap(),
        "--out",
        dir.join("bf").to_str().unwrap(),
        "--set",
        "sim.iterations=1",
        "compare",
    ]);
    assert!(bfly.status.success(), "{}", String::from_utf8_lossy(&bfly.stderr));
}

#[test]
fn flag_overrides_beat_config_file() {
    let dir = tmp_dir("override");
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, "[sim]\nseed = 7\niterations = 5\n").unwrap();
    let result = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "123",
        "--set",
        "sim.iterations=1",
        "--set",
        "trajectory.cycle_time=1.0",
        "--set",
        "trajectory.side=0.1",
        "run",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let manifest = read(&dir.join("manifest.toml"));
    assert!(manifest.contains("seed = 123"), "{manifest}");
    assert!(manifest.contains("iterations = 1"), "{manifest}");
}
