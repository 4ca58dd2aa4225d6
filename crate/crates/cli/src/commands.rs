use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::Serialize;

use ktmpc::controller::{solve_steady_nonlinear, solve_steady_offline, GridSpec};
use ktmpc::koopman::{
    fit_edmd, prediction_error, read_trajectories_csv, write_trajectories_csv, Lifting, LiftingSpec,
};
use ktmpc::scenario::{PolytopeSpec, Prepared};
use ktmpc::{run_closed_loop, tracking_metrics, DVector, Error, Plant, Scenario, SimLog, TrackingMetrics, Zonotope};

use crate::{ExampleArg, PlantArg};

/// Problems with the command line itself (as opposed to library errors).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(
            Error::Dimension(_)
            | Error::InvalidParameter(_)
            | Error::Malformed(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::EmptyData
            | Error::EmptyLog,
        ) => 2,
        Some(
            Error::Underdetermined { .. }
            | Error::RankDeficient { .. }
            | Error::NotStabilizing(_)
            | Error::NoConvergence(_),
        ) => 3,
        Some(Error::EmptyTightenedSet { .. }) => 4,
        Some(Error::InfeasibleAtStep { .. } | Error::Infeasible) => 5,
        _ => 1,
    }
}

fn plant_of(p: PlantArg) -> Plant {
    match p {
        PlantArg::NumericalExample => Plant::numerical_example(),
        PlantArg::Unicycle => Plant::unicycle(),
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load(path: &Path) -> Result<(Scenario, Prepared)> {
    let scenario = Scenario::load(path)?;
    let prepared = scenario.prepare(&base_dir(path))?;
    Ok((scenario, prepared))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn fit(
    data: &Path,
    lifting: &Path,
    out: &Path,
    ridge: f64,
    plant: Option<PlantArg>,
    holdout: f64,
) -> Result<u8> {
    if !(0.0..1.0).contains(&holdout) {
        bail!(UsageError("--holdout must lie in [0, 1)".into()));
    }
    let data = read_trajectories_csv(data)?;
    let text = std::fs::read_to_string(lifting).map_err(|e| Error::Io {
        path: lifting.display().to_string(),
        source: e,
    })?;
    let lifting: Lifting = serde_json::from_str(&text).map_err(Error::from)?;
    let n_x = data.state_dim().ok_or(Error::EmptyData)?;
    let spec = LiftingSpec::new(n_x, lifting)?;
    let (train, test) = data.split(holdout);
    let mut model = fit_edmd(&train, &spec, ridge)?;
    if let Some(p) = plant {
        model = model.with_output_matrix(&plant_of(p).output_matrix())?;
    }
    model.save(out)?;
    let (eval, label) = if test.trajectories.is_empty() {
        (&train, "training")
    } else {
        (&test, "held-out")
    };
    println!(
        "fitted n_z = {} on {} transitions; {label} trajectories: {}",
        model.n_z(),
        train.transition_count(),
        eval.trajectories.len()
    );
    for horizon in [1, 10] {
        match prediction_error(&model, eval, horizon) {
            Ok(e) => println!("{horizon}-step mean prediction error: {e:.3e}"),
            Err(_) => println!("{horizon}-step mean prediction error: n/a (trajectories too short)"),
        }
    }
    println!("model written to {}", out.display());
    Ok(0)
}

pub fn tighten(scenario: &Path, out: &Path) -> Result<u8> {
    let (_, prepared) = load(scenario)?;
    let schedule = prepared.tighten()?;
    std::fs::write(out, schedule.to_json()? + "\n").map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    println!(
        "horizon {}, gain spectral radius {:.6}; schedule written to {}",
        schedule.horizon(),
        prepared.gain.spectral_radius,
        out.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct RunReport {
    seed: u64,
    stream: u64,
    status: &'static str,
    infeasible_step: Option<usize>,
    steps: usize,
    waypoints_reached: Vec<usize>,
    metrics: Option<TrackingMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
}

fn parse_range(text: &str) -> Result<std::ops::Range<u64>> {
    let bad = || UsageError(format!("--seeds expects a..b or a..=b, got {text:?}"));
    let (a, b, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = text.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad().into());
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b + 1 } else { b };
    if end <= a {
        return Err(bad().into());
    }
    Ok(a..end)
}

fn run_one(
    scenario: &Scenario,
    prepared: &Prepared,
    seed: u64,
    stream: u64,
    dir: &Path,
    deterministic: bool,
) -> Result<RunReport> {
    let started = Instant::now();
    let mut controller = prepared.controller()?;
    let mut options = prepared.options.clone();
    options.seed = seed;
    options.stream = stream;
    let (log, status, infeasible_step): (SimLog, _, _) =
        match run_closed_loop(&prepared.plant, &mut controller, &scenario.reference, &options) {
            Ok(log) => (log, "ok", None),
            Err(Error::InfeasibleAtStep { step, log }) => (*log, "infeasible", Some(step)),
            Err(e) => return Err(e.into()),
        };
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    log.save_csv(dir.join("log.csv"))?;
    log.save_diagnostics_csv(dir.join("diagnostics.csv"))?;
    let report = RunReport {
        seed,
        stream,
        status,
        infeasible_step,
        steps: log.len(),
        waypoints_reached: log.waypoints_reached.clone(),
        metrics: tracking_metrics(&log, scenario.settle_window).ok(),
        runtime_s: (!deterministic).then(|| started.elapsed().as_secs_f64()),
        generated_at: (!deterministic).then(|| chrono::Utc::now().to_rfc3339()),
    };
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

fn summarize(r: &RunReport) -> String {
    let err = r
        .metrics
        .as_ref()
        .map_or("n/a".to_string(), |m| format!("{:.3e}", m.final_error));
    match r.infeasible_step {
        Some(k) => format!("stream {}: infeasible at step {k} (final_error {err})", r.stream),
        None => format!("stream {}: ok, {} steps, final_error {err}", r.stream, r.steps),
    }
}

pub fn simulate(
    scenario_path: &Path,
    seed: Option<u64>,
    seeds: Option<&str>,
    out: Option<PathBuf>,
    deterministic: bool,
) -> Result<u8> {
    let streams = seeds.map(parse_range).transpose()?;
    let (scenario, prepared) = load(scenario_path)?;
    let dir = out
        .or_else(|| scenario.output_dir.as_ref().map(|d| base_dir(scenario_path).join(d)))
        .unwrap_or_else(|| PathBuf::from("ktmpc_out"));
    let seed = seed.unwrap_or(scenario.seed);
    let reports = match streams {
        None => vec![run_one(&scenario, &prepared, seed, 0, &dir, deterministic)?],
        Some(range) => {
            let reports = range
                .into_par_iter()
                .map(|s| run_one(&scenario, &prepared, seed, s, &dir.join(format!("run_{s}")), deterministic))
                .collect::<Result<Vec<_>>>()?;
            write_json(&dir.join("summary.json"), &reports)?;
            reports
        }
    };
    for r in &reports {
        println!("{}", summarize(r));
    }
    println!("output written to {}", dir.display());
    Ok(if reports.iter().any(|r| r.infeasible_step.is_some()) {
        5
    } else {
        0
    })
}

/// Grid over the scenario's box constraints, or `None` when the constraints
/// are not boxes or the grid would be too large to search.
fn default_grid(scenario: &Scenario) -> Option<GridSpec> {
    const STATE_POINTS: usize = 101;
    const INPUT_POINTS: usize = 61;
    const MAX_WORK: f64 = 5e7;
    let (PolytopeSpec::Box { lower: xl, upper: xu }, PolytopeSpec::Box { lower: ul, upper: uu }) =
        (&scenario.constraints.state, &scenario.constraints.input)
    else {
        return None;
    };
    let work = (STATE_POINTS as f64).powi(xl.len() as i32) * (INPUT_POINTS as f64).powi(ul.len() as i32);
    (work <= MAX_WORK).then(|| GridSpec {
        state_lower: xl.clone(),
        state_upper: xu.clone(),
        state_points: vec![STATE_POINTS; xl.len()],
        input_lower: ul.clone(),
        input_upper: uu.clone(),
        input_points: vec![INPUT_POINTS; ul.len()],
        fixed_point_tol: 1e-9,
    })
}

pub fn steady(scenario_path: &Path, y_t: &[f64]) -> Result<u8> {
    let (scenario, prepared) = load(scenario_path)?;
    if y_t.len() != prepared.plant.output_dim() {
        bail!(UsageError(format!(
            "--yt has {} entries, the plant has {} outputs",
            y_t.len(),
            prepared.plant.output_dim()
        )));
    }
    let y_t = DVector::from_column_slice(y_t);
    let schedule = prepared.tighten()?;
    let s = prepared.config.s;
    let lifted = solve_steady_offline(&prepared.model, &schedule, &y_t, s)?;
    println!("lifted-model target: y_s = {}, u_s = {}, offset cost {:.6e}", fmt_vec(&lifted.y_s), fmt_vec(&lifted.u_s), lifted.offset_cost);
    let Some(grid) = scenario.grid.clone().or_else(|| default_grid(&scenario)) else {
        println!("plant target: skipped (no grid given and no default grid for these constraints)");
        return Ok(0);
    };
    match solve_steady_nonlinear(
        &prepared.plant,
        &prepared.state_constraints,
        &prepared.input_constraints,
        &y_t,
        s,
        &grid,
    ) {
        Ok(t) => {
            println!(
                "plant target:        y_s = {}, u_s = {}, offset cost {:.6e}",
                fmt_vec(&t.y_sr),
                fmt_vec(&t.u_sr),
                t.offset_cost
            );
            println!("output gap: {:.6e}", (&lifted.y_s - &t.y_sr).amax());
        }
        Err(Error::NoFixedPoint) => println!("plant target: no fixed point on the grid"),
        Err(e) => return Err(e.into()),
    }
    Ok(0)
}

pub fn generate(
    plant: PlantArg,
    n_traj: usize,
    traj_len: usize,
    state_box: (&[f64], &[f64]),
    input_box: (&[f64], &[f64]),
    seed: u64,
    out: &Path,
) -> Result<u8> {
    let to_box = |(lo, hi): (&[f64], &[f64]), name: &str| -> Result<Zonotope> {
        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| l > h) {
            bail!(UsageError(format!("invalid {name} box")));
        }
        let c = DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)));
        let r = DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)));
        Ok(Zonotope::axis_box(c, &r))
    };
    let data = ktmpc::generate_training_data(
        &plant_of(plant),
        n_traj,
        traj_len,
        &to_box(input_box, "input")?,
        &to_box(state_box, "state")?,
        seed,
    )?;
    write_trajectories_csv(&data, out)?;
    println!("{} transitions written to {}", data.transition_count(), out.display());
    Ok(0)
}

pub fn example(name: ExampleArg, out: Option<&Path>) -> Result<u8> {
    let scenario = match name {
        ExampleArg::A1 => Scenario::numerical_nominal(100),
        ExampleArg::A2 => Scenario::numerical_disturbed(100),
        ExampleArg::Unicycle => Scenario::unicycle_square(),
    };
    let text = scenario.to_json()?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::Io {
            path: p.display().to_string(),
            source: e,
        })?,
        None => println!("{text}"),
    }
    Ok(0)
}
