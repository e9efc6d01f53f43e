use std::fs;
use std::path::{Path, PathBuf};

use kalman_mpc::experiment::read_metrics;
use kalman_mpc::main_with_args;
use kalman_mpc::output::read_pgm;

fn write_config(dir: &Path, body: &str) -> (PathBuf, PathBuf) {
    let out = dir.join("out");
    let path = dir.join("experiment.toml");
    fs::write(&path, format!("output_dir = {:?}\n{body}", out.display().to_string())).unwrap();
    (path, out)
}

fn invoke(args: &[&str]) -> i32 {
    let mut full = vec!["kalman-mpc", "--quiet"];
    full.extend_from_slice(args);
    main_with_args(full)
}

#[test]
fn zero_steps_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = write_config(dir.path(), "kind = \"burgers_boundary\"\nsteps = 0\n[burgers]\ngrid_n = 16\n");
    assert_eq!(invoke(&["run", cfg.to_str().unwrap()]), 0);
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap(), "step,rmse,control_norm,wall_ms\n");
    assert!(out.join("summary.json").exists());
}

#[test]
fn rerun_is_byte_identical_and_seed_override_matters() {
    let dir = tempfile::tempdir().unwrap();
    let body = "kind = \"burgers_boundary\"\nsteps = 2\n[burgers]\ngrid_n = 16\n[controller]\nensemble = 20\n";
    let (cfg, out) = write_config(dir.path(), body);
    let cfg = cfg.to_str().unwrap();
    let mut runs = Vec::new();
    for seed in ["1", "1", "2"] {
        assert_eq!(invoke(&["run", cfg, "--seed", seed]), 0);
        runs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert_ne!(runs[0], runs[2]);
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2]);
    assert!(rows.iter().all(|r| r.3 == 0.0));
}

#[test]
fn snapshots_round_trip_through_scale_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = write_config(
        dir.path(),
        "kind = \"burgers_boundary\"\nsteps = 3\nsnapshot_stride = 2\n[burgers]\ngrid_n = 16\n[controller]\nensemble = 20\n",
    );
    assert_eq!(invoke(&["run", cfg.to_str().unwrap()]), 0);
    let snaps = out.join("snapshots");
    let scale = fs::read_to_string(snaps.join("scale.csv")).unwrap();
    let mut lines = scale.lines();
    assert_eq!(lines.next(), Some("step,channel,min,max"));
    let entries: Vec<(String, String, f64, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    // initial field, step 1 (stride hit) and step 3 (last), two channels each
    let steps: Vec<&str> = entries.iter().map(|e| e.0.as_str()).collect();
    assert_eq!(steps, ["0", "0", "1", "1", "3", "3"]);
    for (step, channel, min, max) in &entries {
        let img = read_pgm(&snaps.join(format!("{channel}_{step}.pgm")), *min, *max).unwrap();
        assert_eq!(img.shape(), (16, 16));
        assert!(img.min() >= *min - 1e-12 && img.max() <= *max + 1e-12);
        assert!((img.max() - max).abs() <= (max - min) / 255.0);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(invoke(&["run", missing.to_str().unwrap()]), 2);
    assert_eq!(invoke(&["frobnicate"]), 2);

    let (cfg, _) = write_config(dir.path(), "kind = \"burgers_boundary\"\nsteps = 1\nbogus = 3\n");
    assert_eq!(invoke(&["run", cfg.to_str().unwrap()]), 2);

    let (cfg, _) = write_config(dir.path(), "kind = \"scaling_table\"\n");
    assert_eq!(invoke(&["run", cfg.to_str().unwrap()]), 2);

    // grid below the stepper's minimum fails while wiring the experiment
    let (cfg, _) = write_config(dir.path(), "kind = \"burgers_boundary\"\nsteps = 1\n[burgers]\ngrid_n = 4\n");
    assert_eq!(invoke(&["run", cfg.to_str().unwrap()]), 1);
}

#[test]
fn out_override_redirects_files() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = write_config(dir.path(), "kind = \"linear_oracle\"\nsteps = 3\n[linear]\nensembles = [20, 40]\nseeds = 2\n");
    let other = dir.path().join("elsewhere");
    assert_eq!(invoke(&["run", cfg.to_str().unwrap(), "--out", other.to_str().unwrap()]), 0);
    assert!(!out.exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(other.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["first_control_relative_error"].as_array().unwrap().len(), 2);
    assert!(summary["error_slope"].is_number());
    assert_eq!(read_metrics(&other.join("metrics.csv")).unwrap().len(), 3);
}

#[test]
fn scaling_table_marks_outage_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = write_config(
        dir.path(),
        "kind = \"scaling_table\"\nsteps = 1\n[controller]\nensemble = 10\n[scaling]\ngrids = [8, 16]\nbudget_bytes = 10000000\n",
    );
    assert_eq!(invoke(&["compare", cfg.to_str().unwrap()]), 0);
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let outage: Vec<&str> = csv.lines().filter(|l| l.ends_with("memory_outage")).collect();
    assert_eq!(outage.len(), 1);
    assert!(outage[0].starts_with("vector_enks,,0,16,,,"));
    assert!(csv.lines().any(|l| l.starts_with("kalman_mpc,n=10,0,16,1,")));
}
