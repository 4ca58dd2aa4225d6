//! Tracking model predictive control on lifted (Koopman) linear models.
//!
//! The crate is organised bottom-up:
//!
//! * [`koopman`] lifts states, fits the lifted predictor `z+ = A z + B u` from
//!   trajectory data and estimates the bounded model-error sets.
//! * [`sets`] holds the H-polytope / zonotope algebra used to tighten the
//!   state and input constraints along the horizon.
//! * [`gain`] synthesises the stabilising tube gain.
//! * [`qp`] is a dense convex QP solver with KKT certification.
//! * [`controller`] builds and solves the tracking MPC problem, the offline
//!   steady-target problems and the Lyapunov / feasibility diagnostics.
//! * [`sim`] runs the benchmark plants in closed loop.
//! * [`scenario`] ties all of the above into a single JSON document.

#![allow(clippy::too_many_arguments)]

pub mod controller;
pub mod error;
pub mod gain;
pub mod koopman;
pub mod linalg;
pub mod qp;
pub mod scenario;
pub mod sets;
pub mod sim;

pub use controller::{
    diagnostics, segment_inequality_check, shifted_candidate, solve_steady_nonlinear,
    solve_steady_offline, solve_step, CandidateReport, GridSpec, KtmpcConfig, KtmpcController, KtmpcSolution,
    LyapunovDiag, NonlinearSteady, SteadyTarget, TrackingQp,
};
pub use error::{Error, Result, SetKind};
pub use gain::{dlqr, spectral_radius, GainResult};
pub use koopman::{
    estimate_disturbance_sets, fit_edmd, DisturbanceModel, Feature, KoopmanModel, Lifting,
    LiftingSpec, Trajectory, TrajectoryData,
};
pub use qp::{KktResiduals, WarmStart, QpSettings, QpSolution, QpStatus, QuadraticProgram};
pub use scenario::{Prepared, Scenario};
pub use sets::{tighten_constraints, HPolytope, TighteningSchedule, Zonotope};
pub use sim::{
    generate_training_data, run_closed_loop, step_plant, tracking_metrics, Feedback, Plant,
    PlantState, ReferenceSchedule, SimLog, SimOptions, StepRecord, TrackingMetrics,
};

pub use nalgebra::{DMatrix, DVector};
