//! Closed-loop simulation of the benchmark plants.

mod log;
mod plant;
mod reference;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{
    diagnostics, segment_inequality_check, shifted_candidate, solve_steady_offline, KtmpcController, SteadyTarget,
};
use crate::error::{Error, Result};
use crate::koopman::{DisturbanceModel, KoopmanModel, Trajectory, TrajectoryData};
use crate::sets::Zonotope;

pub use log::{tracking_metrics, SimLog, StepRecord, TrackingMetrics};
pub use plant::Plant;
pub use reference::ReferenceSchedule;
use reference::ReferenceTracker;

/// What the controller is given as its initial lifted state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// `psi(x(k))` of the measured state; the plant is re-lifted from the
    /// same measurement, so `v` enters the next transition.
    #[default]
    Relift,
    /// The plant's lifted state `z(k)` (numerical example only; the unicycle
    /// always falls back to [`Feedback::Relift`]).
    LiftedState,
}

/// Plant state: the measured `x` and, for plants simulated in lifted
/// coordinates, the lifted state that generated it.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub lifted: Option<DVector<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub steps: usize,
    pub seed: u64,
    /// RNG stream, so runs sharing a master seed draw independent samples.
    pub stream: u64,
    pub initial_state: DVector<f64>,
    /// Sets the injected `w`, `v` are drawn from; `None` for a nominal run.
    pub disturbances: Option<DisturbanceModel>,
    pub feedback: Feedback,
    pub sigma_samples: Vec<f64>,
}

impl SimOptions {
    pub fn new(initial_state: DVector<f64>, steps: usize) -> Self {
        Self {
            steps,
            seed: 0,
            stream: 0,
            initial_state,
            disturbances: None,
            feedback: Feedback::default(),
            sigma_samples: (1..10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

/// One transition. The numerical example is propagated through its exact
/// lifted model `z+ = A z + B u + w` and measured as `x = C_x z+ + v`. The
/// lifted state is taken from `state.lifted` when present and from
/// `psi(x)` otherwise. The unicycle ignores `w` and `v`.
pub fn step_plant(
    plant: &Plant,
    state: &PlantState,
    u: &DVector<f64>,
    w: Option<&DVector<f64>>,
    v: Option<&DVector<f64>>,
) -> Result<(PlantState, DVector<f64>)> {
    crate::linalg::check_len(u, plant.input_dim(), "u")?;
    match plant {
        Plant::NumericalExample { .. } => {
            let model = plant.exact_model()?;
            let z = match &state.lifted {
                Some(z) => z.clone(),
                None => model.lift(&state.x)?,
            };
            let mut z_next = model.predict(&z, u)?;
            if let Some(w) = w {
                z_next += w;
            }
            let mut x = model.c_x() * &z_next;
            if let Some(v) = v {
                x += v;
            }
            let y = plant.output(&x);
            let lifted = state.lifted.as_ref().map(|_| z_next);
            Ok((PlantState { x, lifted }, y))
        }
        Plant::Unicycle { .. } => {
            let x = plant.step(&state.x, u);
            let y = plant.output(&x);
            Ok((PlantState { x, lifted: None }, y))
        }
    }
}

fn nan_vec(n: usize) -> DVector<f64> {
    DVector::from_element(n, f64::NAN)
}

fn min_entry(v: &DVector<f64>) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Runs the receding-horizon loop for `options.steps` steps (or until the
/// last waypoint is reached).
///
/// On an infeasible problem the run halts with
/// [`Error::InfeasibleAtStep`], whose log ends with the failing step.
pub fn run_closed_loop(
    plant: &Plant,
    controller: &mut KtmpcController,
    refs: &ReferenceSchedule,
    options: &SimOptions,
) -> Result<SimLog> {
    plant.validate()?;
    let model: KoopmanModel = controller.model().clone();
    let config = controller.config().clone();
    let schedule = controller.schedule().clone();
    if model.n_x() != plant.state_dim() || model.n_u() != plant.input_dim() || model.n_y() != plant.output_dim() {
        return Err(Error::dim("model does not match the plant"));
    }
    refs.validate(plant.output_dim())?;
    crate::linalg::check_len(&options.initial_state, plant.state_dim(), "initial state")?;
    if let Some(d) = &options.disturbances {
        if matches!(plant, Plant::Unicycle { .. }) {
            return Err(Error::InvalidParameter("the unicycle takes no injected disturbance".into()));
        }
        if d.w.dim() != model.n_z() || d.v.dim() != model.n_x() {
            return Err(Error::dim("injected disturbance sets do not match the model"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(options.stream);
    let lifted_plant = matches!(plant, Plant::NumericalExample { .. }) && options.feedback == Feedback::LiftedState;
    let mut state = PlantState {
        x: options.initial_state.clone(),
        lifted: if lifted_plant {
            Some(plant.exact_model()?.lift(&options.initial_state)?)
        } else {
            None
        },
    };
    controller.reset();
    let mut tracker = ReferenceTracker::new(refs);
    let mut log = SimLog {
        waypoint_count: match refs {
            ReferenceSchedule::Waypoint { points, .. } => points.len(),
            ReferenceSchedule::Timed { .. } => 0,
        },
        ..SimLog::default()
    };
    let mut offline: Option<(DVector<f64>, SteadyTarget)> = None;
    let (n_x, n_u, n_z) = (model.n_x(), model.n_u(), model.n_z());

    for k in 0..options.steps {
        let y = plant.output(&state.x);
        let Some(y_t) = tracker.update(k, &y) else {
            break;
        };
        let z = match &state.lifted {
            Some(z) => z.clone(),
            None => model.lift(&state.x)?,
        };
        if offline.as_ref().is_none_or(|(yt, _)| *yt != y_t) {
            offline = Some((y_t.clone(), solve_steady_offline(&model, &schedule, &y_t, config.s)?));
        }
        let target = &offline.as_ref().expect("set above").1;
        let candidate = controller
            .previous()
            .map(|prev| shifted_candidate(prev, &model, &config, &schedule, &z, &y_t));
        let state_margin = min_entry(&schedule.state_constraints.margins(&state.x));

        let (u, sol) = match controller.step_lifted(&z, &y_t) {
            Ok(out) => out,
            Err(Error::Infeasible) => {
                log.records.push(StepRecord {
                    k,
                    x: state.x.clone(),
                    z,
                    u: nan_vec(n_u),
                    y,
                    y_t,
                    y_s: nan_vec(model.n_y()),
                    u_s: nan_vec(n_u),
                    y_sr: target.y_s.clone(),
                    j_n: f64::NAN,
                    v1: f64::NAN,
                    v2: f64::NAN,
                    feasible: false,
                    margin_min: candidate.as_ref().map_or(f64::NAN, |c| c.min_margin),
                    terminal_gap: candidate.as_ref().map_or(f64::NAN, |c| c.terminal_gap),
                    state_margin,
                    input_margin: f64::NAN,
                    w: nan_vec(n_z),
                    v: nan_vec(n_x),
                    segment_ok: false,
                    qp_iterations: 0,
                    kkt_max: f64::NAN,
                });
                log.waypoints_reached = tracker.reached.clone();
                return Err(Error::InfeasibleAtStep {
                    step: k,
                    log: Box::new(log),
                });
            }
            Err(e) => return Err(e),
        };

        let diag = diagnostics(&sol, target, &config);
        let segment_ok = segment_inequality_check(&sol.target.y_s, &target.y_s, &y_t, config.s, &options.sigma_samples);
        let (w, v) = match &options.disturbances {
            Some(d) => (d.w.sample(&mut rng), d.v.sample(&mut rng)),
            None => (DVector::zeros(n_z), DVector::zeros(n_x)),
        };
        let (next, _) = step_plant(plant, &state, &u, Some(&w), Some(&v))?;

        log.records.push(StepRecord {
            k,
            x: state.x.clone(),
            z,
            u: u.clone(),
            y,
            y_t,
            y_s: sol.target.y_s.clone(),
            u_s: sol.target.u_s.clone(),
            y_sr: target.y_s.clone(),
            j_n: sol.total_cost,
            v1: diag.v1,
            v2: diag.v2,
            feasible: true,
            margin_min: candidate.as_ref().map_or(f64::NAN, |c| c.min_margin),
            terminal_gap: candidate.as_ref().map_or(f64::NAN, |c| c.terminal_gap),
            state_margin,
            input_margin: min_entry(&schedule.input_constraints.margins(&u)),
            w,
            v,
            segment_ok,
            qp_iterations: sol.iterations,
            kkt_max: sol.kkt.max(),
        });
        state = next;
    }
    // A waypoint reached exactly at the end of the run still counts.
    if log.waypoint_count > 0 {
        let _ = tracker.update(options.steps, &plant.output(&state.x));
    }
    log.waypoints_reached = tracker.reached.clone();
    Ok(log)
}

/// `n_traj` open-loop trajectories of `traj_len` transitions with initial
/// states uniform in `state_box` and inputs uniform in `input_box`.
pub fn generate_training_data(
    plant: &Plant,
    n_traj: usize,
    traj_len: usize,
    input_box: &Zonotope,
    state_box: &Zonotope,
    seed: u64,
) -> Result<TrajectoryData> {
    plant.validate()?;
    if input_box.dim() != plant.input_dim() || state_box.dim() != plant.state_dim() {
        return Err(Error::dim("sampling boxes do not match the plant"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectories = (0..n_traj)
        .map(|_| {
            let mut states = vec![state_box.sample(&mut rng)];
            let mut inputs = Vec::with_capacity(traj_len);
            for k in 0..traj_len {
                let u = input_box.sample(&mut rng);
                states.push(plant.step(&states[k], &u));
                inputs.push(u);
            }
            Trajectory { states, inputs }
        })
        .collect();
    TrajectoryData::new(trajectories)
}
