use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{KtmpcConfig, KtmpcSolution, SteadyTarget};
use crate::koopman::KoopmanModel;
use crate::linalg::weighted_sq;
use crate::sets::TighteningSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDiag {
    /// Stage cost about the optimal artificial target.
    pub v1: f64,
    /// `J_N* - J~_eq*`
    pub v2: f64,
    pub j_eq_tilde: f64,
}

pub fn diagnostics(solution: &KtmpcSolution, offline: &SteadyTarget, config: &KtmpcConfig) -> LyapunovDiag {
    LyapunovDiag {
        v1: solution.stage_cost(config),
        v2: solution.total_cost - offline.offset_cost,
        j_eq_tilde: offline.offset_cost,
    }
}

/// Candidate trajectories built from the previous optimum.
pub(super) struct Shifted {
    pub u_bar: Vec<DVector<f64>>,
    pub z_bar: Vec<DVector<f64>>,
    pub z_s: DVector<f64>,
    pub u_s: DVector<f64>,
}

/// `u(j; k+1) = K (z(j; k+1) - z*(j+1; k)) + u*(j+1; k)` for `j < N-1`, the
/// last input is `u_s*(k)`, and `z(.; k+1)` is rolled out from `z_next`.
pub(super) fn shift(prev: &KtmpcSolution, model: &KoopmanModel, config: &KtmpcConfig, z_next: &DVector<f64>) -> Shifted {
    let n = prev.horizon();
    let mut z_bar = vec![z_next.clone()];
    let mut u_bar = Vec::with_capacity(n);
    for j in 0..n {
        let u = if j + 1 < n {
            &config.k * (&z_bar[j] - &prev.z_bar[j + 1]) + &prev.u_bar[j + 1]
        } else {
            prev.target.u_s.clone()
        };
        z_bar.push(model.a() * &z_bar[j] + model.b() * &u);
        u_bar.push(u);
    }
    Shifted {
        u_bar,
        z_bar,
        z_s: prev.target.z_s.clone(),
        u_s: prev.target.u_s.clone(),
    }
}

/// Feasibility report of the shifted candidate against every inequality of
/// the tracking problem. The terminal equality is reported separately as
/// `terminal_gap`: it is met exactly only when the error has died out over
/// the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateReport {
    pub u_bar: Vec<DVector<f64>>,
    pub z_bar: Vec<DVector<f64>>,
    pub z_s: DVector<f64>,
    pub u_s: DVector<f64>,
    /// Slack of `C_x z(j)` in `X~(j)`, `j = 0..N-1`.
    pub state_margins: Vec<DVector<f64>>,
    /// Slack of `u(j)` in `U~(j)`, `j = 0..N-1`.
    pub input_margins: Vec<DVector<f64>>,
    /// Slack of `(C_x z_s, u_s)` in `X~(N) x U~(N)`.
    pub steady_margins: DVector<f64>,
    /// Smallest entry over all margins above.
    pub min_margin: f64,
    /// `|z(N) - z_s|_inf`
    pub terminal_gap: f64,
    /// Candidate cost for the new reference.
    pub cost: f64,
}

impl CandidateReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.min_margin >= -tol
    }
}

pub fn shifted_candidate(
    prev: &KtmpcSolution,
    model: &KoopmanModel,
    config: &KtmpcConfig,
    schedule: &TighteningSchedule,
    z_next: &DVector<f64>,
    y_t: &DVector<f64>,
) -> CandidateReport {
    let c = shift(prev, model, config, z_next);
    let n = prev.horizon();
    let state_margins: Vec<_> = (0..n)
        .map(|j| schedule.state_sets[j].margins(&(model.c_x() * &c.z_bar[j])))
        .collect();
    let input_margins: Vec<_> = (0..n)
        .map(|j| schedule.input_sets[j].margins(&c.u_bar[j]))
        .collect();
    let xs = schedule.state_sets[n].margins(&(model.c_x() * &c.z_s));
    let us = schedule.input_sets[n].margins(&c.u_s);
    let steady_margins = DVector::from_iterator(xs.len() + us.len(), xs.iter().chain(us.iter()).copied());
    let min_margin = state_margins
        .iter()
        .chain(input_margins.iter())
        .chain(std::iter::once(&steady_margins))
        .flat_map(|m| m.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let terminal_gap = (&c.z_bar[n] - &c.z_s).amax();
    let stage: f64 = (0..n)
        .map(|j| weighted_sq(&c.z_bar[j], &c.z_s, &config.q) + weighted_sq(&c.u_bar[j], &c.u_s, &config.r))
        .sum();
    let y_s = model.c_y() * &c.z_s;
    let cost = stage + config.s * (&y_s - y_t).norm_squared();
    CandidateReport {
        u_bar: c.u_bar,
        z_bar: c.z_bar,
        z_s: c.z_s,
        u_s: c.u_s,
        state_margins,
        input_margins,
        steady_margins,
        min_margin,
        terminal_gap,
        cost,
    }
}

/// Convexity inequality on the segment from the controller's steady output
/// `y_s*` towards the best reachable output `y~_sr`: for every sampled
/// `sigma`, with `y_s = sigma y~_sr + (1 - sigma) y_s*`,
/// `s|y_s - y_t|^2 - s|y_s* - y_t|^2 <= -s (2 sigma - sigma^2) |y_s* - y~_sr|^2 + 1e-9`.
pub fn segment_inequality_check(
    y_s_star: &DVector<f64>,
    y_sr_tilde: &DVector<f64>,
    y_t: &DVector<f64>,
    s: f64,
    sigma_samples: &[f64],
) -> bool {
    let base = s * (y_s_star - y_t).norm_squared();
    let gap = (y_s_star - y_sr_tilde).norm_squared();
    sigma_samples.iter().all(|&sigma| {
        let y_s = y_sr_tilde * sigma + y_s_star * (1.0 - sigma);
        let lhs = s * (&y_s - y_t).norm_squared() - base;
        let rhs = -s * (2.0 * sigma - sigma * sigma) * gap;
        lhs <= rhs + 1e-9
    })
}
