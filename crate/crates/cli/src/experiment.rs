//! Wiring of plant, model and controller for each experiment kind.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use inferential_control::baselines::{
    matrix_form_bytes, matrix_form_entries, relative_error, run_it_mpc, run_vector_closed_loop, vector_form_bytes,
    vector_form_entries, CovarianceEntries, ItMpcConfig, LinearProblem,
};
use inferential_control::controller::{run_closed_loop_with, ClosedLoopTrace};
use inferential_control::dynamics::{make_initial_field, BurgersConfig, BurgersDynamics, MatrixDynamics};
use inferential_control::{Error, NoiseStreams};
use log::info;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BaselineMethod, ExperimentConfig, ExperimentKind};
use crate::output::{metric_rows, write_csv, write_json, write_metrics, write_snapshots};
use crate::CliError;

/// Relative slack allowed when counting controls inside the bound.
pub const CONSTRAINT_SLACK: f64 = 0.01;

/// Executes a closed-loop or oracle experiment and returns its summary.
pub fn run(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    if cfg.kind.is_comparison() {
        return Err(CliError::Parse(format!("{:?} experiments run through `compare`", cfg.kind)));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let summary = match cfg.kind {
        ExperimentKind::LinearOracle => run_linear_oracle(cfg)?,
        _ => run_burgers(cfg)?,
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Runs the Kalman-MPC against a baseline or across grid sizes.
pub fn compare(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    if !cfg.kind.is_comparison() {
        return Err(CliError::Parse(format!("{:?} experiments run through `run`", cfg.kind)));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let (rows, summary) = match cfg.kind {
        ExperimentKind::BaselineCompare => baseline_compare(cfg)?,
        _ => scaling_table(cfg)?,
    };
    write_csv(&cfg.output_dir.join("compare.csv"), &COMPARE_HEADER, &rows)?;
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn config_echo(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    Ok(serde_json::to_value(cfg)?)
}

fn burgers_task(cfg: &ExperimentConfig, grid_n: usize) -> Result<(BurgersConfig, Arc<dyn MatrixDynamics>), CliError> {
    let burgers = cfg.burgers_config(grid_n);
    let model: Arc<dyn MatrixDynamics> = Arc::new(BurgersDynamics::new(burgers.clone())?);
    Ok((burgers, model))
}

fn run_burgers(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let (burgers, model) = burgers_task(cfg, cfg.burgers.grid_n)?;
    let weights = cfg.burgers_weights(&burgers)?;
    let ccfg = cfg.controller_config(weights, cfg.seed)?;
    let x0 = make_initial_field(&burgers, cfg.initial_seed());
    info!("{:?}: {} steps on a {}x{} grid", cfg.kind, cfg.steps, burgers.grid_n, burgers.grid_n);
    let trace = run_closed_loop_with(
        model.as_ref(),
        model.clone(),
        &ccfg,
        cfg.steps,
        x0.packed(),
        Some(cfg.snapshot_stride),
    )?;
    write_metrics(&cfg.output_dir.join("metrics.csv"), &metric_rows(&trace, cfg.record_wall_time))?;
    write_snapshots(&cfg.output_dir.join("snapshots"), &trace)?;

    let mut summary = json!({
        "kind": cfg.kind,
        "seed": cfg.seed,
        "steps": trace.len(),
        "initial_rmse": trace.initial_rmse,
        "final_rmse": trace.final_rmse(),
        "jitter_events": trace.steps.iter().map(|s| s.jitter_events).sum::<usize>(),
        "max_abs_control": trace.steps.iter().map(|s| s.control.amax()).fold(0.0, f64::max),
    });
    if let Some(k) = &cfg.constraint {
        let within = trace
            .steps
            .iter()
            .filter(|s| s.control.amax() <= k.u_max * (1.0 + CONSTRAINT_SLACK))
            .count();
        summary["constraint_compliance"] = json!(if trace.is_empty() {
            1.0
        } else {
            within as f64 / trace.len() as f64
        });
    }
    summary["config"] = config_echo(cfg)?;
    Ok(summary)
}

/// Least-squares slope of `log10 err` against `log10 n`.
pub fn log_log_slope(sizes: &[usize], errors: &[f64]) -> Option<f64> {
    if sizes.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).log10()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log10()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn run_linear_oracle(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let lin = &cfg.linear;
    let problem = LinearProblem::random(lin.n, lin.l, lin.m, lin.problem_seed)?;
    let exact = problem.exact(lin.horizon)?;
    let mut errors = Vec::with_capacity(lin.ensembles.len());
    for &n_members in &lin.ensembles {
        let mut total = 0.0;
        for s in 0..lin.seeds as u64 {
            let streams = NoiseStreams::new(cfg.seed + s);
            let smoothed = problem.smoothed(lin.horizon, n_members, &streams)?;
            total += relative_error(&smoothed[1].u, &exact[1].u);
        }
        errors.push(total / lin.seeds as f64);
        info!("linear oracle: N = {n_members}, mean first-control error {:.4}", errors.last().unwrap());
    }

    let model: Arc<dyn MatrixDynamics> = Arc::new(problem.model.clone());
    let ccfg = cfg.controller_config(problem.weights.clone(), cfg.seed)?;
    let trace = run_closed_loop_with(model.as_ref(), model.clone(), &ccfg, cfg.steps, &problem.x0, None)?;
    write_metrics(&cfg.output_dir.join("metrics.csv"), &metric_rows(&trace, cfg.record_wall_time))?;

    Ok(json!({
        "kind": cfg.kind,
        "seed": cfg.seed,
        "steps": trace.len(),
        "initial_rmse": trace.initial_rmse,
        "final_rmse": trace.final_rmse(),
        "exact_first_control": exact[1].u.as_slice(),
        "ensembles": lin.ensembles,
        "first_control_relative_error": errors,
        "error_slope": log_log_slope(&lin.ensembles, &errors),
        "config": config_echo(cfg)?,
    }))
}

pub const COMPARE_HEADER: [&str; 11] = [
    "method",
    "variant",
    "seed",
    "grid",
    "step",
    "rmse",
    "obs_entries",
    "cross_entries",
    "peak_bytes",
    "wall_ms",
    "status",
];

/// One line of `compare.csv`: a step of one run, or a run that could not
/// start (`step` and `rmse` empty).
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub method: &'static str,
    pub variant: String,
    pub seed: u64,
    pub grid: usize,
    pub step: Option<usize>,
    pub rmse: Option<f64>,
    pub obs_entries: u64,
    pub cross_entries: u64,
    pub peak_bytes: u64,
    pub wall_ms: f64,
    pub status: &'static str,
}

struct RunInfo<'a> {
    method: &'static str,
    variant: String,
    seed: u64,
    grid: usize,
    entries: CovarianceEntries,
    peak_bytes: u64,
    record_wall_time: bool,
    trace: &'a ClosedLoopTrace,
}

fn series_rows(info: RunInfo<'_>) -> Vec<CompareRow> {
    let wall_ms = if info.record_wall_time {
        info.trace.steps.iter().map(|s| s.wall_seconds).sum::<f64>() * 1e3
    } else {
        0.0
    };
    let series = std::iter::once((0, info.trace.initial_rmse))
        .chain(info.trace.steps.iter().map(|s| (s.step + 1, s.rmse)));
    series
        .map(|(step, rmse)| CompareRow {
            method: info.method,
            variant: info.variant.clone(),
            seed: info.seed,
            grid: info.grid,
            step: Some(step),
            rmse: Some(rmse),
            obs_entries: info.entries.obs,
            cross_entries: info.entries.cross,
            peak_bytes: info.peak_bytes,
            wall_ms,
            status: "ok",
        })
        .collect()
}

fn outage_row(method: &'static str, seed: u64, grid: usize, entries: CovarianceEntries, peak_bytes: u64) -> CompareRow {
    CompareRow {
        method,
        variant: String::new(),
        seed,
        grid,
        step: None,
        rmse: None,
        obs_entries: entries.obs,
        cross_entries: entries.cross,
        peak_bytes,
        wall_ms: 0.0,
        status: "memory_outage",
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

fn it_mpc_bytes(cfg: &ItMpcConfig, l: usize, m: usize, n: usize) -> u64 {
    let per_rollout = cfg.horizon * l * m + n * m;
    8 * (cfg.rollouts * per_rollout) as u64
}

fn baseline_compare(cfg: &ExperimentConfig) -> Result<(Vec<CompareRow>, Value), CliError> {
    let grid = cfg.burgers.grid_n;
    let (burgers, model) = burgers_task(cfg, grid)?;
    let weights = cfg.burgers_weights(&burgers)?;
    let (n, m) = burgers.state_shape();
    let (l, _) = burgers.control_shape();
    let h = cfg.controller.horizon;
    let big_n = cfg.controller.ensemble;
    let kalman_entries = matrix_form_entries(n, l, h);
    let kalman_bytes = matrix_form_bytes(n, l, m, h, big_n);
    let seeds: Vec<u64> = (0..cfg.baseline.seeds as u64).map(|s| cfg.seed + s).collect();

    let mut rows = Vec::new();
    let mut kalman_final = Vec::new();
    let mut baseline_final: Vec<(String, Vec<f64>)> = Vec::new();
    let kalman_variant = format!("n={big_n}");
    for &seed in &seeds {
        let x0 = make_initial_field(&burgers, cfg.burgers.initial_seed.unwrap_or(seed));
        let ccfg = cfg.controller_config(weights.clone(), seed)?;
        info!("baseline compare: Kalman-MPC, seed {seed}");
        let trace = run_closed_loop_with(model.as_ref(), model.clone(), &ccfg, cfg.steps, x0.packed(), None)?;
        kalman_final.push(trace.final_rmse());
        rows.extend(series_rows(RunInfo {
            method: "kalman_mpc",
            variant: kalman_variant.clone(),
            seed,
            grid,
            entries: kalman_entries,
            peak_bytes: kalman_bytes,
            record_wall_time: cfg.record_wall_time,
            trace: &trace,
        }));

        match cfg.baseline.method {
            BaselineMethod::ItMpc => {
                for (i, &temperature) in cfg.baseline.temperatures.iter().enumerate() {
                    let it = ItMpcConfig {
                        rollouts: cfg.baseline.rollouts,
                        temperature,
                        noise_cov: DMatrix::identity(l, l) * cfg.baseline.noise_var,
                        horizon: h,
                    };
                    let variant = format!("temperature={temperature}");
                    info!("baseline compare: IT-MPC {variant}, seed {seed}");
                    let trace = run_it_mpc(model.as_ref(), model.as_ref(), &weights, &it, cfg.steps, x0.packed(), seed, None)?;
                    if baseline_final.len() <= i {
                        baseline_final.push((variant.clone(), Vec::new()));
                    }
                    baseline_final[i].1.push(trace.final_rmse());
                    rows.extend(series_rows(RunInfo {
                        method: "it_mpc",
                        variant,
                        seed,
                        grid,
                        entries: CovarianceEntries { obs: 0, cross: 0 },
                        peak_bytes: it_mpc_bytes(&it, l, m, n),
                        record_wall_time: cfg.record_wall_time,
                        trace: &trace,
                    }));
                }
            }
            BaselineMethod::VectorEnks => {
                let entries = vector_form_entries(n, l, m, h);
                let bytes = vector_form_bytes(n, l, m, h, big_n);
                if baseline_final.is_empty() {
                    baseline_final.push((kalman_variant.clone(), Vec::new()));
                }
                info!("baseline compare: vector EnKS, seed {seed}");
                match run_vector_closed_loop(model.as_ref(), model.clone(), &ccfg, cfg.steps, x0.packed(), None) {
                    Ok(trace) => {
                        baseline_final[0].1.push(trace.final_rmse());
                        rows.extend(series_rows(RunInfo {
                            method: "vector_enks",
                            variant: kalman_variant.clone(),
                            seed,
                            grid,
                            entries,
                            peak_bytes: bytes,
                            record_wall_time: cfg.record_wall_time,
                            trace: &trace,
                        }));
                    }
                    Err(Error::MemoryBudget { .. }) => rows.push(outage_row("vector_enks", seed, grid, entries, bytes)),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }

    let kalman_median = median(&mut kalman_final.clone());
    let baselines: Vec<Value> = baseline_final
        .iter()
        .map(|(variant, finals)| {
            json!({
                "variant": variant,
                "final_rmse": finals,
                "median_final_rmse": if finals.is_empty() { None } else { Some(median(&mut finals.clone())) },
            })
        })
        .collect();
    let best = baseline_final
        .iter()
        .filter(|(_, f)| !f.is_empty())
        .map(|(v, f)| (v.clone(), median(&mut f.clone())))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let summary = json!({
        "kind": cfg.kind,
        "seed": cfg.seed,
        "seeds": seeds,
        "steps": cfg.steps,
        "kalman_mpc": { "variant": kalman_variant, "final_rmse": kalman_final, "median_final_rmse": kalman_median },
        "baseline_method": cfg.baseline.method,
        "baseline": baselines,
        "best_baseline": best.as_ref().map(|b| json!({ "variant": b.0, "median_final_rmse": b.1 })),
        "kalman_better": best.map(|b| kalman_median < b.1),
        "config": config_echo(cfg)?,
    });
    Ok((rows, summary))
}

fn scaling_table(cfg: &ExperimentConfig) -> Result<(Vec<CompareRow>, Value), CliError> {
    let h = cfg.controller.horizon;
    let big_n = cfg.controller.ensemble;
    let budget = cfg.scaling.budget_bytes;
    let mut rows = Vec::new();
    let mut grids = Vec::new();
    for &grid in &cfg.scaling.grids {
        let (burgers, model) = burgers_task(cfg, grid)?;
        let (n, m) = burgers.state_shape();
        let (l, _) = burgers.control_shape();
        let mat = matrix_form_entries(n, l, h);
        let vec = vector_form_entries(n, l, m, h);
        let mat_bytes = matrix_form_bytes(n, l, m, h, big_n);
        let vec_bytes = vector_form_bytes(n, l, m, h, big_n);
        let ccfg = cfg.controller_config(cfg.burgers_weights(&burgers)?, cfg.seed)?;
        let x0 = make_initial_field(&burgers, cfg.initial_seed());

        let matrix_status = if mat_bytes > budget {
            rows.push(outage_row("kalman_mpc", cfg.seed, grid, mat, mat_bytes));
            "memory_outage"
        } else {
            info!("scaling table: matrix form, grid {grid}");
            let trace = run_closed_loop_with(model.as_ref(), model.clone(), &ccfg, cfg.steps, x0.packed(), None)?;
            rows.extend(series_rows(RunInfo {
                method: "kalman_mpc",
                variant: format!("n={big_n}"),
                seed: cfg.seed,
                grid,
                entries: mat,
                peak_bytes: mat_bytes,
                record_wall_time: cfg.record_wall_time,
                trace: &trace,
            }));
            "ok"
        };
        info!("scaling table: vector form, grid {grid}");
        let vector_status =
            match run_vector_closed_loop(model.as_ref(), model.clone(), &ccfg, cfg.steps, x0.packed(), Some(budget)) {
                Ok(trace) => {
                    rows.extend(series_rows(RunInfo {
                        method: "vector_enks",
                        variant: format!("n={big_n}"),
                        seed: cfg.seed,
                        grid,
                        entries: vec,
                        peak_bytes: vec_bytes,
                        record_wall_time: cfg.record_wall_time,
                        trace: &trace,
                    }));
                    "ok"
                }
                Err(Error::MemoryBudget { .. }) => {
                    rows.push(outage_row("vector_enks", cfg.seed, grid, vec, vec_bytes));
                    "memory_outage"
                }
                Err(e) => return Err(e.into()),
            };
        let m2 = (m * m) as u64;
        grids.push(json!({
            "grid": grid,
            "m": m,
            "matrix_entries": { "obs": mat.obs, "cross": mat.cross },
            "vector_entries": { "obs": vec.obs, "cross": vec.cross },
            "ratio_is_m_squared": vec.obs == mat.obs * m2 && vec.cross == mat.cross * m2,
            "matrix_bytes": mat_bytes,
            "vector_bytes": vec_bytes,
            "matrix_status": matrix_status,
            "vector_status": vector_status,
        }));
    }
    let summary = json!({
        "kind": cfg.kind,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "budget_bytes": budget,
        "grids": grids,
        "config": config_echo(cfg)?,
    });
    Ok((rows, summary))
}

/// Reads `metrics.csv` back as `(step, rmse, control_norm, wall_ms)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<(usize, f64, f64, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
