use std::path::Path;
use std::process::{Command, Output};

use kpplab_cli::RunManifest;

fn kpplab(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kpplab"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::read(&dir.join("manifest.json")).unwrap()
}

#[test]
fn zero_data_are_extinct_at_time_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kpplab(&["simulate", "--out", out.to_str().unwrap(), "--set", "ic=zero"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(out.join("replicas.csv")).unwrap();
    let fields: Vec<&str> = rows.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[2], "0");
    assert_eq!(manifest(&out).status, "pass");
}

#[test]
fn every_output_file_is_in_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kpplab(
        &["couple", "--out", out.to_str().unwrap(), "--set", "coupling=theta", "--set", "thetas=[2, 5]", "--set", "replicas=3", "--set", "snapshot_times=[0.5, 1.0]"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let mut on_disk: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = m.artifacts.iter().map(|a| a.path.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for a in &m.artifacts {
        let bytes = std::fs::read(out.join(&a.path)).unwrap();
        assert_eq!(kpplab_cli::manifest::sha256_hex(&bytes), a.sha256);
    }
}

#[test]
fn reruns_and_thread_counts_give_identical_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for (i, jobs) in ["1", "1", "2"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let o = kpplab(
            &["couple", "--out", out.to_str().unwrap(), "--jobs", jobs, "--seed", "17", "--set", "coupling=two_independent", "--set", "replicas=4", "--set", "t_end=0.5"],
            &[],
        );
        assert_eq!(code(&o), 0);
        hashes.push(manifest(&out).artifacts);
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0], hashes[2]);
}

#[test]
fn speed_sweep_writes_one_row_per_theta() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("speed");
    let o = kpplab(&["speed", "--out", out.to_str().unwrap(), "--set", "thetas=[3, 4, 5, 6]", "--set", "t_end=1", "--set", "replicas=20"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let table = std::fs::read_to_string(out.join("speed_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "theta,T,replicas,N_cap,B_hat,stderr,bound_2sqrt_theta");
    assert_eq!(table.lines().count(), 5);
    let p = kpplab(&["plot", "--manifest", out.join("manifest.json").to_str().unwrap(), "--kind", "speed"], &[]);
    assert_eq!(code(&p), 0);
    let dat = std::fs::read_to_string(out.join("plot_speed.dat")).unwrap();
    assert!(dat.contains("# B_hat") && dat.contains("# 2*sqrt(theta)"));
    assert!(manifest(&out).artifact("plot_speed.svg").is_some());
}

#[test]
fn empty_sweep_gives_empty_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = kpplab(&["sweep", "--out", out.to_str().unwrap(), "--set", "replicas=10"], &[]);
    assert_eq!(code(&o), 0);
    let p = kpplab(&["plot", "--manifest", out.join("manifest.json").to_str().unwrap(), "--kind", "sweep"], &[]);
    assert_eq!(code(&p), 0);
    assert_eq!(std::fs::read(out.join("plot_sweep.dat")).unwrap().len(), 0);
}

#[test]
fn deterministic_marker_plot_is_finite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("det");
    assert_eq!(code(&kpplab(&["simulate", "--out", out.to_str().unwrap(), "--set", "noise_amp=0", "--set", "t_end=2"], &[])), 0);
    let p = kpplab(&["plot", "--manifest", out.join("manifest.json").to_str().unwrap(), "--kind", "markers"], &[]);
    assert_eq!(code(&p), 0);
    let dat = std::fs::read_to_string(out.join("plot_markers.dat")).unwrap();
    let rows: Vec<&str> = dat.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
    assert_eq!(rows.len(), 1001);
    for r in rows {
        assert!(r.split(' ').all(|v| v.parse::<f64>().unwrap().is_finite()), "{r}");
    }
}

#[test]
fn plotting_a_missing_artifact_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    assert_eq!(code(&kpplab(&["simulate", "--out", out.to_str().unwrap(), "--set", "t_end=0.1"], &[])), 0);
    let p = kpplab(&["plot", "--manifest", out.join("manifest.json").to_str().unwrap(), "--kind", "zscores"], &[]);
    assert_eq!(code(&p), 1);
    std::fs::remove_file(out.join("trajectory.csv")).unwrap();
    let p = kpplab(&["plot", "--manifest", out.join("manifest.json").to_str().unwrap(), "--kind", "markers"], &[]);
    assert_ne!(code(&p), 0);
}

#[test]
fn config_errors_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = kpplab(&["simulate", "--out", out.to_str().unwrap(), "--set", "thetta=3"], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("thetta"));
    let o = kpplab(&["speed", "--out", out.to_str().unwrap(), "--set", "replicas=1"], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicas"));
    let o = kpplab(&["simulate", "--out", out.to_str().unwrap()], &[("KPPLAB_BOGUS", "1")]);
    assert_eq!(code(&o), 1);
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "schema_version = 1\nkind = \"speed\"\n").unwrap();
    let o = kpplab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    std::fs::write(&cfg, "schema_version = 2\n").unwrap();
    let o = kpplab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&kpplab(&["frobnicate"], &[])), 1);
}

#[test]
fn precedence_is_file_then_env_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "schema_version = 1\nseed = 1\ntheta = 1.5\nt_end = 0.1\ndx = 0.2\ndt = 0.01\n").unwrap();
    let out = tmp.path().join("p");
    let o = kpplab(
        &["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"],
        &[("KPPLAB_SEED", "2"), ("KPPLAB_THETA", "2.5")],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m.config.seed, 3);
    assert_eq!(m.config.theta, 2.5);
    assert_eq!(m.config.dx, 0.2);
}

#[test]
fn runtime_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    // θ·dt beyond the stability guard
    let o = kpplab(&["simulate", "--out", out.to_str().unwrap(), "--set", "theta=1000"], &[]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed 0"));
}
