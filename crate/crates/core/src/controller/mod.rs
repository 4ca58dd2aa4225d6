//! Tracking MPC on the lifted model with an artificial steady target.
//!
//! Decision vector layout: `[u(0..N-1); z(1..N); z_s; u_s]`. The initial
//! lifted state `z(0)` is data, `y_s = C_y z_s` is substituted.

mod diag;
mod steady;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::linalg::{check_square, is_spd, weighted_sq};
use crate::qp::{self, KktResiduals, QpSettings, QpStatus, QuadraticProgram, WarmStart};
use crate::sets::TighteningSchedule;

pub use diag::{
    diagnostics, segment_inequality_check, shifted_candidate, CandidateReport, LyapunovDiag,
};
pub use steady::{solve_steady_nonlinear, solve_steady_offline, GridSpec, NonlinearSteady};

#[derive(Clone, Debug, PartialEq)]
pub struct KtmpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Offset weight, `S = s I`.
    pub s: f64,
    /// Tube gain, `u = K z`.
    pub k: DMatrix<f64>,
    pub qp: QpSettings,
}

impl KtmpcConfig {
    pub fn new(horizon: usize, q: DMatrix<f64>, r: DMatrix<f64>, s: f64, k: DMatrix<f64>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if !is_spd(&q) {
            return Err(Error::InvalidParameter("Q must be symmetric positive definite".into()));
        }
        if !is_spd(&r) {
            return Err(Error::InvalidParameter("R must be symmetric positive definite".into()));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter("s must be positive".into()));
        }
        if k.shape() != (r.nrows(), q.nrows()) {
            return Err(Error::dim(format!(
                "K is {:?}, expected {}x{}",
                k.shape(),
                r.nrows(),
                q.nrows()
            )));
        }
        Ok(Self {
            horizon,
            q,
            r,
            s,
            k,
            qp: QpSettings::default(),
        })
    }

    fn check_against(&self, model: &KoopmanModel, schedule: &TighteningSchedule) -> Result<()> {
        check_square(&self.q, model.n_z(), "Q")?;
        check_square(&self.r, model.n_u(), "R")?;
        if schedule.horizon() != self.horizon {
            return Err(Error::dim(format!(
                "schedule horizon {} differs from N = {}",
                schedule.horizon(),
                self.horizon
            )));
        }
        if schedule.state_constraints.dim() != model.n_x() || schedule.input_constraints.dim() != model.n_u() {
            return Err(Error::dim("schedule does not match the model dimensions"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyTarget {
    #[serde(with = "crate::linalg::serde_vector")]
    pub z_s: DVector<f64>,
    #[serde(with = "crate::linalg::serde_vector")]
    pub u_s: DVector<f64>,
    #[serde(with = "crate::linalg::serde_vector")]
    pub y_s: DVector<f64>,
    /// `s |y_s - y_t|^2`
    pub offset_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KtmpcSolution {
    /// `u(0..N-1)`
    pub u_bar: Vec<DVector<f64>>,
    /// `z(0..N)`
    pub z_bar: Vec<DVector<f64>>,
    pub target: SteadyTarget,
    /// `J_N*`, recomputed from the trajectories.
    pub total_cost: f64,
    pub qp_status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

impl KtmpcSolution {
    pub fn horizon(&self) -> usize {
        self.u_bar.len()
    }

    /// Stage part of the cost, `sum |z(j) - z_s|_Q^2 + |u(j) - u_s|_R^2`.
    pub fn stage_cost(&self, config: &KtmpcConfig) -> f64 {
        (0..self.horizon())
            .map(|j| {
                weighted_sq(&self.z_bar[j], &self.target.z_s, &config.q)
                    + weighted_sq(&self.u_bar[j], &self.target.u_s, &config.r)
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    n_z: usize,
    n_u: usize,
    horizon: usize,
}

impl Layout {
    fn u(&self, j: usize) -> usize {
        j * self.n_u
    }
    /// Column of `z(j)` for `j >= 1`.
    fn z(&self, j: usize) -> usize {
        self.horizon * self.n_u + (j - 1) * self.n_z
    }
    fn z_s(&self) -> usize {
        self.horizon * (self.n_u + self.n_z)
    }
    fn u_s(&self) -> usize {
        self.z_s() + self.n_z
    }
    fn dim(&self) -> usize {
        self.u_s() + self.n_u
    }
}

/// Accumulates `|M x - c|_W^2` terms into `1/2 x^T P x + q^T x + const`.
struct CostBuilder {
    p: DMatrix<f64>,
    q: DVector<f64>,
    constant: f64,
}

impl CostBuilder {
    fn new(d: usize) -> Self {
        Self {
            p: DMatrix::zeros(d, d),
            q: DVector::zeros(d),
            constant: 0.0,
        }
    }

    /// `M x = sum_k coeff_k x[col_k..]`.
    fn add(&mut self, blocks: &[(usize, &DMatrix<f64>)], c: &DVector<f64>, w: &DMatrix<f64>) {
        let rows = c.len();
        let mut m = DMatrix::zeros(rows, self.q.len());
        for (col, coeff) in blocks {
            let mut view = m.view_mut((0, *col), (rows, coeff.ncols()));
            view += *coeff;
        }
        let wm = w * &m;
        self.p += (m.transpose() * &wm) * 2.0;
        self.q -= wm.transpose() * c * 2.0;
        self.constant += c.dot(&(w * c));
    }
}

/// The tracking problem for one initial lifted state and reference.
#[derive(Clone, Debug)]
pub struct TrackingQp {
    pub qp: QuadraticProgram,
    /// Constant dropped from the QP objective.
    pub constant: f64,
    /// Row-wise slack of `C_x z(0)` in `X~(0)`; negative entries make the
    /// problem infeasible before any optimization.
    pub initial_margins: DVector<f64>,
    layout: Layout,
    z0: DVector<f64>,
    y_t: DVector<f64>,
}

impl TrackingQp {
    /// Lifts the measured state and builds the QP.
    pub fn build(
        model: &KoopmanModel,
        config: &KtmpcConfig,
        schedule: &TighteningSchedule,
        x_k: &DVector<f64>,
        y_t: &DVector<f64>,
    ) -> Result<Self> {
        let z0 = model.lift(x_k)?;
        Self::build_lifted(model, config, schedule, &z0, y_t)
    }

    pub fn build_lifted(
        model: &KoopmanModel,
        config: &KtmpcConfig,
        schedule: &TighteningSchedule,
        z0: &DVector<f64>,
        y_t: &DVector<f64>,
    ) -> Result<Self> {
        config.check_against(model, schedule)?;
        crate::linalg::check_len(z0, model.n_z(), "z(0)")?;
        crate::linalg::check_len(y_t, model.n_y(), "y_t")?;
        let (n_z, n_u, n) = (model.n_z(), model.n_u(), config.horizon);
        let lay = Layout {
            n_z,
            n_u,
            horizon: n,
        };
        let d = lay.dim();
        let (a, b, c_x, c_y) = (model.a(), model.b(), model.c_x(), model.c_y());
        let eye_z = DMatrix::<f64>::identity(n_z, n_z);
        let eye_u = DMatrix::<f64>::identity(n_u, n_u);
        let neg_eye_z = -&eye_z;
        let neg_eye_u = -&eye_u;

        let mut cost = CostBuilder::new(d);
        cost.add(&[(lay.z_s(), c_y)], y_t, &(DMatrix::identity(y_t.len(), y_t.len()) * config.s));
        // j = 0: z(0) is data
        cost.add(&[(lay.z_s(), &neg_eye_z)], &(-z0), &config.q);
        cost.add(&[(lay.u(0), &eye_u), (lay.u_s(), &neg_eye_u)], &DVector::zeros(n_u), &config.r);
        for j in 1..n {
            cost.add(&[(lay.z(j), &eye_z), (lay.z_s(), &neg_eye_z)], &DVector::zeros(n_z), &config.q);
            cost.add(&[(lay.u(j), &eye_u), (lay.u_s(), &neg_eye_u)], &DVector::zeros(n_u), &config.r);
        }

        // Equalities: dynamics, steady state, terminal.
        let m_eq = (n + 2) * n_z;
        let mut a_eq = DMatrix::zeros(m_eq, d);
        let mut b_eq = DVector::zeros(m_eq);
        for j in 0..n {
            let r0 = j * n_z;
            a_eq.view_mut((r0, lay.z(j + 1)), (n_z, n_z)).copy_from(&eye_z);
            a_eq.view_mut((r0, lay.u(j)), (n_z, n_u)).copy_from(&(-b));
            if j == 0 {
                b_eq.rows_mut(r0, n_z).copy_from(&(a * z0));
            } else {
                a_eq.view_mut((r0, lay.z(j)), (n_z, n_z)).copy_from(&(-a));
            }
        }
        let r0 = n * n_z;
        a_eq.view_mut((r0, lay.z_s()), (n_z, n_z)).copy_from(&(a - &eye_z));
        a_eq.view_mut((r0, lay.u_s()), (n_z, n_u)).copy_from(b);
        let r0 = (n + 1) * n_z;
        a_eq.view_mut((r0, lay.z(n)), (n_z, n_z)).copy_from(&eye_z);
        a_eq.view_mut((r0, lay.z_s()), (n_z, n_z)).copy_from(&neg_eye_z);

        // Inequalities: u(j) in U~(j) for j < N, C_x z(j) in X~(j) for
        // 1 <= j < N, and the steady pair in X~(N) x U~(N).
        let mut rows: Vec<(usize, DMatrix<f64>, DVector<f64>)> = Vec::new();
        for j in 0..n {
            let u_set = &schedule.input_sets[j];
            rows.push((lay.u(j), u_set.normals().clone(), u_set.offsets().clone()));
            if j >= 1 {
                let x_set = &schedule.state_sets[j];
                rows.push((lay.z(j), x_set.normals() * c_x, x_set.offsets().clone()));
            }
        }
        let x_n = &schedule.state_sets[n];
        rows.push((lay.z_s(), x_n.normals() * c_x, x_n.offsets().clone()));
        let u_n = &schedule.input_sets[n];
        rows.push((lay.u_s(), u_n.normals().clone(), u_n.offsets().clone()));
        let m_in: usize = rows.iter().map(|r| r.1.nrows()).sum();
        let mut a_in = DMatrix::zeros(m_in, d);
        let mut b_in = DVector::zeros(m_in);
        let mut r0 = 0;
        for (col, h, off) in &rows {
            a_in.view_mut((r0, *col), h.shape()).copy_from(h);
            b_in.rows_mut(r0, off.len()).copy_from(off);
            r0 += h.nrows();
        }

        let x_0 = &schedule.state_sets[0];
        let initial_margins = x_0.margins(&(c_x * z0));
        let qp = QuadraticProgram::new(cost.p, cost.q, a_eq, b_eq, a_in, b_in)?;
        Ok(Self {
            qp,
            constant: cost.constant,
            initial_margins,
            layout: lay,
            z0: z0.clone(),
            y_t: y_t.clone(),
        })
    }

    pub fn decision_dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn initial_state_feasible(&self) -> bool {
        self.initial_margins.iter().all(|&m| m >= -crate::sets::CONTAINS_TOL)
    }

    /// Packs trajectories into a decision vector (used for warm starts).
    pub fn pack(&self, u_bar: &[DVector<f64>], z_bar: &[DVector<f64>], z_s: &DVector<f64>, u_s: &DVector<f64>) -> DVector<f64> {
        let lay = self.layout;
        let mut x = DVector::zeros(lay.dim());
        for j in 0..lay.horizon {
            x.rows_mut(lay.u(j), lay.n_u).copy_from(&u_bar[j]);
            x.rows_mut(lay.z(j + 1), lay.n_z).copy_from(&z_bar[j + 1]);
        }
        x.rows_mut(lay.z_s(), lay.n_z).copy_from(z_s);
        x.rows_mut(lay.u_s(), lay.n_u).copy_from(u_s);
        x
    }

    fn unpack(&self, x: &DVector<f64>, model: &KoopmanModel, config: &KtmpcConfig) -> KtmpcSolution {
        let lay = self.layout;
        let u_bar: Vec<_> = (0..lay.horizon)
            .map(|j| x.rows(lay.u(j), lay.n_u).into_owned())
            .collect();
        let mut z_bar = vec![self.z0.clone()];
        z_bar.extend((1..=lay.horizon).map(|j| x.rows(lay.z(j), lay.n_z).into_owned()));
        let z_s = x.rows(lay.z_s(), lay.n_z).into_owned();
        let u_s = x.rows(lay.u_s(), lay.n_u).into_owned();
        let y_s = model.c_y() * &z_s;
        let d = &y_s - &self.y_t;
        let target = SteadyTarget {
            offset_cost: config.s * d.dot(&d),
            z_s,
            u_s,
            y_s,
        };
        let mut sol = KtmpcSolution {
            u_bar,
            z_bar,
            target,
            total_cost: 0.0,
            qp_status: QpStatus::Optimal,
            kkt: KktResiduals::default(),
            iterations: 0,
        };
        sol.total_cost = sol.stage_cost(config) + sol.target.offset_cost;
        sol
    }
}

/// Builds and solves the tracking problem for the measured state `x_k`.
/// Returns `u_k = u*(0)` and the full solution.
pub fn solve_step(
    model: &KoopmanModel,
    config: &KtmpcConfig,
    schedule: &TighteningSchedule,
    x_k: &DVector<f64>,
    y_t: &DVector<f64>,
    warm_start: Option<&KtmpcSolution>,
) -> Result<(DVector<f64>, KtmpcSolution)> {
    let z0 = model.lift(x_k)?;
    solve_step_lifted(model, config, schedule, &z0, y_t, warm_start)
}

/// As [`solve_step`] but for a given initial lifted state.
pub fn solve_step_lifted(
    model: &KoopmanModel,
    config: &KtmpcConfig,
    schedule: &TighteningSchedule,
    z0: &DVector<f64>,
    y_t: &DVector<f64>,
    warm_start: Option<&KtmpcSolution>,
) -> Result<(DVector<f64>, KtmpcSolution)> {
    let tqp = TrackingQp::build_lifted(model, config, schedule, z0, y_t)?;
    if !tqp.initial_state_feasible() {
        return Err(Error::Infeasible);
    }
    let warm = warm_start
        .filter(|prev| prev.horizon() == config.horizon)
        .map(|prev| {
            let cand = diag::shift(prev, model, config, z0);
            WarmStart {
                x: Some(tqp.pack(&cand.u_bar, &cand.z_bar, &cand.z_s, &cand.u_s)),
                nu: None,
                lambda: None,
            }
        });
    let res = qp::solve_warm(&tqp.qp, &config.qp, warm.as_ref())?;
    match res.status {
        QpStatus::Optimal => {}
        QpStatus::PrimalInfeasible => return Err(Error::Infeasible),
        QpStatus::MaxIterations => return Err(Error::SolverMaxIterations(res.iterations)),
    }
    let mut sol = tqp.unpack(&res.x, model, config);
    sol.qp_status = res.status;
    sol.kkt = res.kkt;
    sol.iterations = res.iterations;
    Ok((sol.u_bar[0].clone(), sol))
}

/// Receding-horizon controller holding the previous solution for warm
/// starting. One instance serves one closed loop.
#[derive(Clone, Debug)]
pub struct KtmpcController {
    model: KoopmanModel,
    config: KtmpcConfig,
    schedule: TighteningSchedule,
    previous: Option<KtmpcSolution>,
}

impl KtmpcController {
    pub fn new(model: KoopmanModel, config: KtmpcConfig, schedule: TighteningSchedule) -> Result<Self> {
        config.check_against(&model, &schedule)?;
        Ok(Self {
            model,
            config,
            schedule,
            previous: None,
        })
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }
    pub fn config(&self) -> &KtmpcConfig {
        &self.config
    }
    pub fn schedule(&self) -> &TighteningSchedule {
        &self.schedule
    }
    pub fn previous(&self) -> Option<&KtmpcSolution> {
        self.previous.as_ref()
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn step(&mut self, x_k: &DVector<f64>, y_t: &DVector<f64>) -> Result<(DVector<f64>, KtmpcSolution)> {
        let z0 = self.model.lift(x_k)?;
        self.step_lifted(&z0, y_t)
    }

    pub fn step_lifted(&mut self, z0: &DVector<f64>, y_t: &DVector<f64>) -> Result<(DVector<f64>, KtmpcSolution)> {
        let out = solve_step_lifted(
            &self.model,
            &self.config,
            &self.schedule,
            z0,
            y_t,
            self.previous.as_ref(),
        )?;
        self.previous = Some(out.1.clone());
        Ok(out)
    }

    /// Offline steady target for the current schedule.
    pub fn steady_target(&self, y_t: &DVector<f64>) -> Result<SteadyTarget> {
        solve_steady_offline(&self.model, &self.schedule, y_t, self.config.s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::DisturbanceModel;
    use crate::sets::{tighten_constraints, HPolytope};
    use crate::sim::Plant;

    fn example() -> (KoopmanModel, KtmpcConfig, TighteningSchedule) {
        let model = Plant::numerical_example().exact_model().unwrap();
        let n = 10;
        let g = crate::gain::dlqr(
            model.a(),
            model.b(),
            &DMatrix::identity(3, 3),
            &DMatrix::identity(1, 1),
            1e-12,
            10_000,
        )
        .unwrap();
        let cfg = KtmpcConfig::new(n, DMatrix::identity(3, 3), DMatrix::identity(1, 1), 10.0, g.k.clone()).unwrap();
        let x = HPolytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]).unwrap();
        let u = HPolytope::from_box(&[-3.0], &[3.0]).unwrap();
        let sched = tighten_constraints(
            &x,
            &u,
            &DisturbanceModel::zero(3, 2),
            model.a(),
            model.b(),
            &g.k,
            model.c_x(),
            n,
        )
        .unwrap();
        (model, cfg, sched)
    }

    #[test]
    fn dimensions_for_unit_horizon() {
        let (model, mut cfg, _) = example();
        cfg.horizon = 1;
        let x = HPolytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]).unwrap();
        let u = HPolytope::from_box(&[-3.0], &[3.0]).unwrap();
        let sched = tighten_constraints(&x, &u, &DisturbanceModel::zero(3, 2), model.a(), model.b(), &cfg.k, model.c_x(), 1).unwrap();
        let t = TrackingQp::build(&model, &cfg, &sched, &DVector::from_vec(vec![0.5, 0.2]), &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(t.decision_dim(), 8);
        assert_eq!(t.qp.a_eq().nrows(), 9);
        // zero disturbance: inequality offsets are the raw bounds
        assert!(t.qp.b_in().iter().all(|&b| b == 3.0 || b == 5.0));
    }

    #[test]
    fn steady_start_is_a_fixed_point() {
        let (model, cfg, sched) = example();
        let (u, sol) = solve_step(&model, &cfg, &sched, &DVector::from_vec(vec![0.0, 1.0]), &DVector::from_vec(vec![1.0]), None).unwrap();
        assert!((u[0] + 1.0).abs() < 1e-7);
        assert!(sol.total_cost.abs() < 1e-10);
        assert!(sol.u_bar.iter().all(|u| (u[0] + 1.0).abs() < 1e-7));
        let (u, sol) = solve_step(&model, &cfg, &sched, &DVector::zeros(2), &DVector::zeros(1), None).unwrap();
        assert!(u[0].abs() < 1e-8 && sol.total_cost.abs() < 1e-12);
    }

    #[test]
    fn solution_invariants() {
        let (model, cfg, sched) = example();
        let (_, sol) = solve_step(&model, &cfg, &sched, &DVector::from_vec(vec![0.7, -0.4]), &DVector::from_vec(vec![2.0]), None).unwrap();
        for j in 0..cfg.horizon {
            let pred = model.predict(&sol.z_bar[j], &sol.u_bar[j]).unwrap();
            assert!((pred - &sol.z_bar[j + 1]).amax() <= 1e-7);
            assert!(sched.input_sets[j].contains(&sol.u_bar[j]));
            assert!(sched.state_sets[j].contains(&(model.c_x() * &sol.z_bar[j])));
        }
        assert!((&sol.z_bar[cfg.horizon] - &sol.target.z_s).amax() <= 1e-7);
        let ss = &sol.target;
        assert!((model.predict(&ss.z_s, &ss.u_s).unwrap() - &ss.z_s).amax() <= 1e-7);
    }

    #[test]
    fn far_initial_state_is_infeasible() {
        let (model, cfg, sched) = example();
        let r = solve_step(&model, &cfg, &sched, &DVector::from_vec(vec![0.0, 40.0]), &DVector::from_vec(vec![1.0]), None);
        assert!(matches!(r, Err(Error::Infeasible)));
    }

    #[test]
    fn hessian_is_psd_for_random_weights() {
        use rand::{Rng, SeedableRng};
        let (model, _, sched) = example();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let l = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let q = &l * l.transpose() + DMatrix::identity(3, 3) * 0.1;
            let r = DMatrix::from_element(1, 1, rng.random_range(0.1..5.0));
            let cfg = KtmpcConfig::new(10, q, r, rng.random_range(0.1..100.0), DMatrix::from_row_slice(1, 3, &[0.0, -1.6, 3.0])).unwrap();
            let t = TrackingQp::build(&model, &cfg, &sched, &DVector::from_vec(vec![0.3, 0.1]), &DVector::from_vec(vec![1.0])).unwrap();
            assert!(crate::linalg::min_eigenvalue(t.qp.p()) > -1e-9 * t.qp.p().amax());
        }
    }
}
