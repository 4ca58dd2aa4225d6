//! Dense convex QP solver.
//!
//! Solves `min 1/2 x^T P x + q^T x  s.t.  A_eq x = b_eq, A_in x <= b_in` with
//! an operator-splitting (ADMM) phase that also yields primal infeasibility
//! certificates, followed by an active-set polishing phase that solves the
//! reduced KKT system exactly. Only polished points are reported `Optimal`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `|P x + q + A_eq^T nu + A_in^T lambda|_inf`
    pub stationarity: f64,
    /// `|A_eq x - b_eq|_inf`
    pub primal_eq: f64,
    /// `max(0, max_i (A_in x - b_in)_i)`
    pub primal_in: f64,
    /// `max_i |lambda_i (b_in - A_in x)_i|`, also covering `max(0, -min lambda)`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_in)
            .max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    /// Multipliers of the equality rows.
    pub nu: DVector<f64>,
    /// Multipliers of the inequality rows (nonnegative at optimality).
    pub lambda: DVector<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSettings {
    /// KKT residual bound certified at `Optimal`.
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Relative tolerance of the infeasibility certificate.
    pub infeasibility_tol: f64,
    pub max_polish_rounds: usize,
    /// ADMM iterations after which the interior-point fallback is tried.
    pub fallback_after: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            infeasibility_tol: 1e-6,
            max_polish_rounds: 40,
            fallback_after: 2_000,
        }
    }
}

/// Optional initial primal/dual point. Correctness never depends on it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmStart {
    pub x: Option<DVector<f64>>,
    pub nu: Option<DVector<f64>>,
    pub lambda: Option<DVector<f64>>,
}

impl QuadraticProgram {
    /// Validates dimensions and finiteness; `P` is symmetrized.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self> {
        let d = q.len();
        if p.shape() != (d, d) {
            return Err(Error::dim(format!("P is {:?}, expected {d}x{d}", p.shape())));
        }
        if a_eq.ncols() != d || a_eq.nrows() != b_eq.len() {
            return Err(Error::dim("A_eq/b_eq do not match the variable count"));
        }
        if a_in.ncols() != d || a_in.nrows() != b_in.len() {
            return Err(Error::dim("A_in/b_in do not match the variable count"));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !(finite(p.as_slice())
            && finite(q.as_slice())
            && finite(a_eq.as_slice())
            && finite(b_eq.as_slice())
            && finite(a_in.as_slice())
            && finite(b_in.as_slice()))
        {
            return Err(Error::InvalidParameter("non-finite QP data".into()));
        }
        Ok(Self {
            p: symmetrize(&p),
            q,
            a_eq,
            b_eq,
            a_in,
            b_in,
        })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }
    pub fn a_eq(&self) -> &DMatrix<f64> {
        &self.a_eq
    }
    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }
    pub fn a_in(&self) -> &DMatrix<f64> {
        &self.a_in
    }
    pub fn b_in(&self) -> &DVector<f64> {
        &self.b_in
    }
    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn kkt_residuals(
        &self,
        x: &DVector<f64>,
        nu: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> KktResiduals {
        let grad = &self.p * x + &self.q + self.a_eq.transpose() * nu + self.a_in.transpose() * lambda;
        let slack = &self.b_in - &self.a_in * x;
        let primal_eq = (&self.a_eq * x - &self.b_eq).amax();
        let primal_in = slack.iter().fold(0.0_f64, |acc, s| acc.max(-s));
        let complementarity = lambda
            .iter()
            .zip(slack.iter())
            .fold(0.0_f64, |acc, (l, s)| acc.max((l * s).abs()).max(-l));
        KktResiduals {
            stationarity: grad.amax(),
            primal_eq,
            primal_in,
            complementarity,
        }
    }

    /// Rejects `P` with an eigenvalue below `-1e-10 * max(1, |P|_max)`.
    fn check_convex(&self) -> Result<()> {
        let d = self.n_vars();
        if d == 0 {
            return Ok(());
        }
        let eps = 1e-10 * self.p.amax().max(1.0);
        let shifted = &self.p + DMatrix::identity(d, d) * eps;
        if shifted.cholesky().is_some() {
            return Ok(());
        }
        Err(Error::NonConvex(crate::linalg::min_eigenvalue(&self.p)))
    }
}

pub fn solve(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    solve_warm(qp, settings, None)
}

pub fn solve_warm(
    qp: &QuadraticProgram,
    settings: &QpSettings,
    warm: Option<&WarmStart>,
) -> Result<QpSolution> {
    if !(settings.tol > 0.0 && settings.rho > 0.0 && settings.sigma > 0.0)
        || !(0.0 < settings.alpha && settings.alpha < 2.0)
    {
        return Err(Error::InvalidParameter("invalid QP settings".into()));
    }
    qp.check_convex()?;
    Admm::new(qp, settings, warm)?.run()
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const ADAPT_EVERY: usize = 25;
const CHECK_INFEASIBLE_EVERY: usize = 10;

/// ADMM state on the scaled problem. Rows of `[A_eq; A_in]` are normalized to
/// unit max-norm and the cost is divided by `cost_scale`.
struct Admm<'a> {
    qp: &'a QuadraticProgram,
    settings: &'a QpSettings,
    n: usize,
    m_eq: usize,
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    row_scale: DVector<f64>,
    cost_scale: f64,
    rho: f64,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

impl<'a> Admm<'a> {
    fn new(qp: &'a QuadraticProgram, settings: &'a QpSettings, warm: Option<&WarmStart>) -> Result<Self> {
        let n = qp.n_vars();
        let m_eq = qp.a_eq.nrows();
        let m = m_eq + qp.a_in.nrows();
        let mut a = DMatrix::zeros(m, n);
        a.rows_mut(0, m_eq).copy_from(&qp.a_eq);
        a.rows_mut(m_eq, m - m_eq).copy_from(&qp.a_in);
        let mut b = DVector::zeros(m);
        b.rows_mut(0, m_eq).copy_from(&qp.b_eq);
        b.rows_mut(m_eq, m - m_eq).copy_from(&qp.b_in);

        let mut row_scale = DVector::from_element(m, 1.0);
        for i in 0..m {
            let r = a.row(i).amax();
            if r > 0.0 {
                row_scale[i] = 1.0 / r;
            }
            let s = row_scale[i];
            a.row_mut(i).scale_mut(s);
            b[i] *= s;
        }
        let cost_scale = qp.p.amax().max(qp.q.amax()).max(1.0);
        let p = &qp.p / cost_scale;
        let q = &qp.q / cost_scale;
        let upper = b.clone();
        let mut lower = b;
        for i in m_eq..m {
            lower[i] = f64::NEG_INFINITY;
        }

        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(m);
        if let Some(w) = warm {
            if let Some(wx) = &w.x {
                if wx.len() == n {
                    x.copy_from(wx);
                }
            }
            // lambda = E y / c  =>  y = c lambda / E
            if let Some(nu) = &w.nu {
                if nu.len() == m_eq {
                    for i in 0..m_eq {
                        y[i] = nu[i] / cost_scale / row_scale[i];
                    }
                }
            }
            if let Some(lam) = &w.lambda {
                if lam.len() == m - m_eq {
                    for i in 0..lam.len() {
                        y[m_eq + i] = lam[i] / cost_scale / row_scale[m_eq + i];
                    }
                }
            }
        }
        let z = project(&(&a * &x), &lower, &upper);
        Ok(Self {
            qp,
            settings,
            n,
            m_eq,
            p,
            q,
            a,
            lower,
            upper,
            row_scale,
            cost_scale,
            rho: settings.rho,
            x,
            z,
            y,
        })
    }

    fn rho_vec(&self) -> DVector<f64> {
        DVector::from_fn(self.a.nrows(), |i, _| {
            if i < self.m_eq {
                self.rho * RHO_EQ_SCALE
            } else {
                self.rho
            }
        })
    }

    fn factor(&self, rho_vec: &DVector<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
        let mut m = self.p.clone();
        for i in 0..self.n {
            m[(i, i)] += self.settings.sigma;
        }
        let ra = DMatrix::from_fn(self.a.nrows(), self.n, |i, j| rho_vec[i] * self.a[(i, j)]);
        m += self.a.transpose() * ra;
        symmetrize(&m)
            .cholesky()
            .expect("P + sigma I + A^T R A is positive definite")
    }

    fn run(mut self) -> Result<QpSolution> {
        let s = self.settings;
        let mut rho_vec = self.rho_vec();
        let mut chol = self.factor(&rho_vec);
        // ADMM accuracy at which a polish attempt is made; tightened on failure.
        let mut polish_eps = 1e-5;
        let mut last_candidate: Option<QpSolution> = None;
        let mut fallback_tried = false;

        for iter in 1..=s.max_iter {
            let y_prev = self.y.clone();
            let rhs = &self.x * s.sigma - &self.q
                + self.a.transpose() * (rho_vec.component_mul(&self.z) - &self.y);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = &self.a * &x_tilde;
            let x_next = &x_tilde * s.alpha + &self.x * (1.0 - s.alpha);
            let z_relaxed = &z_tilde * s.alpha + &self.z * (1.0 - s.alpha);
            let z_next = project(
                &(&z_relaxed + self.y.component_div(&rho_vec)),
                &self.lower,
                &self.upper,
            );
            self.y += rho_vec.component_mul(&(&z_relaxed - &z_next));
            self.x = x_next;
            self.z = z_next;

            if iter % CHECK_INFEASIBLE_EVERY == 0 && self.certifies_infeasible(&(&self.y - &y_prev)) {
                return Ok(self.infeasible_solution(iter));
            }
            if iter == s.fallback_after && !fallback_tried {
                fallback_tried = true;
                if let Some(sol) = self.fallback(&mut last_candidate) {
                    return Ok(sol);
                }
            }

            let ax = &self.a * &self.x;
            let r_prim = (&ax - &self.z).amax();
            let px = &self.p * &self.x;
            let aty = self.a.transpose() * &self.y;
            let r_dual = (&px + &self.q + &aty).amax();
            let prim_scale = ax.amax().max(self.z.amax());
            let dual_scale = px.amax().max(aty.amax()).max(self.q.amax());

            let done = iter == s.max_iter;
            if done
                || (r_prim <= polish_eps * (1.0 + prim_scale) && r_dual <= polish_eps * (1.0 + dual_scale))
            {
                if let Some(sol) = self.polish(iter) {
                    if sol.status == QpStatus::Optimal {
                        return Ok(sol);
                    }
                    last_candidate = Some(sol);
                }
                polish_eps *= 0.01;
                if polish_eps < 1e-13 {
                    polish_eps = 1e-13;
                }
            }

            if iter % ADAPT_EVERY == 0 {
                let num = r_prim / (1e-30 + prim_scale);
                let den = r_dual / (1e-30 + dual_scale);
                if num > 0.0 && den > 0.0 {
                    let ratio = (num / den).sqrt();
                    if !(0.2..=5.0).contains(&ratio) {
                        self.rho = (self.rho * ratio).clamp(RHO_MIN, RHO_MAX);
                        rho_vec = self.rho_vec();
                        chol = self.factor(&rho_vec);
                    }
                }
            }
        }

        if !fallback_tried {
            if let Some(sol) = self.fallback(&mut last_candidate) {
                return Ok(sol);
            }
        }
        Ok(last_candidate.unwrap_or_else(|| {
            let (nu, lambda) = self.unscaled_duals();
            let x = self.x.clone();
            QpSolution {
                objective: self.qp.objective(&x),
                kkt: self.qp.kkt_residuals(&x, &nu, &lambda),
                x,
                status: QpStatus::MaxIterations,
                nu,
                lambda,
                iterations: s.max_iter,
            }
        }))
    }

    /// Interior-point solve followed by polishing; keeps the best
    /// uncertified candidate in `best`.
    fn fallback(&self, best: &mut Option<QpSolution>) -> Option<QpSolution> {
        let s = self.settings;
        let (x, nu, lambda, active) = interior_point(self.qp, s.tol)?;
        let kkt = self.qp.kkt_residuals(&x, &nu, &lambda);
        let direct = QpSolution {
            objective: self.qp.objective(&x),
            status: if kkt.max() <= s.tol {
                QpStatus::Optimal
            } else {
                QpStatus::MaxIterations
            },
            kkt,
            x,
            nu,
            lambda,
            iterations: s.fallback_after.min(s.max_iter),
        };
        for sol in [polish(self.qp, s, active, direct.iterations), Some(direct)].into_iter().flatten() {
            if sol.status == QpStatus::Optimal {
                return Some(sol);
            }
            if best.as_ref().is_none_or(|c| sol.kkt.max() < c.kkt.max()) {
                *best = Some(sol);
            }
        }
        None
    }

    fn unscaled_duals(&self) -> (DVector<f64>, DVector<f64>) {
        let m = self.a.nrows();
        let lam = DVector::from_fn(m, |i, _| self.y[i] * self.row_scale[i] * self.cost_scale);
        (
            lam.rows(0, self.m_eq).into_owned(),
            lam.rows(self.m_eq, m - self.m_eq).map(|v| v.max(0.0)),
        )
    }

    /// `dy` certifies infeasibility when `A^T dy ~ 0` and
    /// `u^T max(dy, 0) + l^T min(dy, 0) < 0`.
    fn certifies_infeasible(&self, dy: &DVector<f64>) -> bool {
        let norm = dy.amax();
        if norm <= 1e-30 {
            return false;
        }
        let eps = self.settings.infeasibility_tol;
        if (self.a.transpose() * dy).amax() > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let d = dy[i];
            if d > 0.0 {
                support += self.upper[i] * d;
            } else if d < 0.0 {
                if self.lower[i].is_finite() {
                    support += self.lower[i] * d;
                } else if d < -eps * norm {
                    return false;
                }
            }
        }
        support < -eps * norm
    }

    fn infeasible_solution(&self, iter: usize) -> QpSolution {
        let (nu, lambda) = self.unscaled_duals();
        let x = self.x.clone();
        QpSolution {
            objective: self.qp.objective(&x),
            kkt: self.qp.kkt_residuals(&x, &nu, &lambda),
            x,
            status: QpStatus::PrimalInfeasible,
            nu,
            lambda,
            iterations: iter,
        }
    }

    /// Guesses the active inequality set from the ADMM iterate.
    fn polish(&self, iter: usize) -> Option<QpSolution> {
        let active: Vec<bool> = (0..self.qp.a_in.nrows())
            .map(|i| {
                let k = self.m_eq + i;
                self.upper[k] - self.z[k] < self.y[k]
            })
            .collect();
        polish(self.qp, self.settings, active, iter)
    }
}

/// Corrects an active-set guess by solving reduced KKT systems on the
/// original (unscaled) data: violated rows are added, the most negative
/// multiplier is dropped, and a revisited set ends the search.
fn polish(qp: &QuadraticProgram, settings: &QpSettings, mut active: Vec<bool>, iter: usize) -> Option<QpSolution> {
    let m_in = qp.a_in.nrows();
    let tol = settings.tol;
    let mut best: Option<QpSolution> = None;
    let mut seen: Vec<Vec<bool>> = Vec::new();

    for _ in 0..settings.max_polish_rounds {
        if seen.contains(&active) {
            break;
        }
        seen.push(active.clone());
        let (x, nu, lambda) = reduced_kkt(qp, &active)?;
        let kkt = qp.kkt_residuals(&x, &nu, &lambda);
        let sol = QpSolution {
            objective: qp.objective(&x),
            status: if kkt.max() <= tol {
                QpStatus::Optimal
            } else {
                QpStatus::MaxIterations
            },
            kkt,
            x,
            nu,
            lambda,
            iterations: iter,
        };
        if sol.status == QpStatus::Optimal {
            return Some(sol);
        }

        let slack = &qp.b_in - &qp.a_in * &sol.x;
        let violated: Vec<usize> = (0..m_in)
            .filter(|&i| !active[i] && slack[i] < -0.5 * tol)
            .collect();
        let worst_multiplier = (0..m_in)
            .filter(|&i| active[i])
            .min_by(|&i, &j| sol.lambda[i].total_cmp(&sol.lambda[j]))
            .filter(|&i| sol.lambda[i] < -0.5 * tol);
        let better = best.as_ref().is_none_or(|b| sol.kkt.max() < b.kkt.max());
        if better {
            best = Some(sol);
        }
        if !violated.is_empty() {
            for i in violated {
                active[i] = true;
            }
        } else if let Some(i) = worst_multiplier {
            active[i] = false;
        } else {
            // Residuals are limited by conditioning, not by the active set.
            break;
        }
    }
    best
}

const IPM_MAX_ITER: usize = 200;
const REFINE_MIN: usize = 25;
const REFINE_MAX: usize = 500;

/// `(x, nu, lambda, active)`.
type IpmPoint = (DVector<f64>, DVector<f64>, DVector<f64>, Vec<bool>);

/// Mehrotra predictor-corrector interior-point method on the row- and
/// cost-scaled problem, used when ADMM stalls. Returns the unscaled primal-dual
/// point and an active-set guess.
fn interior_point(qp: &QuadraticProgram, tol: f64) -> Option<IpmPoint> {
    let n = qp.n_vars();
    let (m_eq, m_in) = (qp.a_eq.nrows(), qp.a_in.nrows());
    let cost_scale = qp.p.amax().max(qp.q.amax()).max(1.0);
    let p = &qp.p / cost_scale;
    let q = &qp.q / cost_scale;
    let row_norm = |a: &DMatrix<f64>, b: &DVector<f64>| {
        let mut a = a.clone();
        let mut b = b.clone();
        let mut scale = DVector::from_element(a.nrows(), 1.0);
        for i in 0..a.nrows() {
            let r = a.row(i).amax();
            if r > 0.0 {
                a.row_mut(i).scale_mut(1.0 / r);
                b[i] /= r;
                scale[i] = 1.0 / r;
            }
        }
        (a, b, scale)
    };
    let (a_eq, b_eq, e_eq) = row_norm(&qp.a_eq, &qp.b_eq);
    let (a_in, b_in, e_in) = row_norm(&qp.a_in, &qp.b_in);
    let delta = 1e-10;

    let mut x = DVector::zeros(n);
    let mut nu = DVector::zeros(m_eq);
    let mut s = (&b_in - &a_in * &x).map(|v| v.max(1.0));
    let mut lam = DVector::from_element(m_in, 1.0);
    let scale = 1.0 + q.amax().max(b_eq.amax()).max(b_in.amax());

    for _ in 0..IPM_MAX_ITER {
        let r_d = &p * &x + &q + a_eq.transpose() * &nu + a_in.transpose() * &lam;
        let r_eq = &a_eq * &x - &b_eq;
        let r_in = &a_in * &x + &s - &b_in;
        let mu = if m_in > 0 { s.dot(&lam) / m_in as f64 } else { 0.0 };
        let res = r_d.amax().max(r_eq.amax()).max(r_in.amax());
        let unscaled = (nu.component_mul(&e_eq) * cost_scale, lam.component_mul(&e_in) * cost_scale);
        if qp.kkt_residuals(&x, &unscaled.0, &unscaled.1).max() <= 0.1 * tol
            || (res <= 1e-14 * scale && mu <= 1e-16 * scale)
        {
            break;
        }
        let w = lam.component_div(&s);
        let mut kkt = DMatrix::zeros(n + m_eq, n + m_eq);
        let h = &p + a_in.transpose() * DMatrix::from_diagonal(&w) * &a_in;
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((n, 0), (m_eq, n)).copy_from(&a_eq);
        kkt.view_mut((0, n), (n, m_eq)).copy_from(&a_eq.transpose());
        for i in 0..n + m_eq {
            kkt[(i, i)] += if i < n { delta } else { -delta };
        }
        let lu = kkt.lu();
        let direction = |r_c: &DVector<f64>| -> Option<[DVector<f64>; 4]> {
            let c_over_s = r_c.component_div(&s);
            let mut rhs = DVector::zeros(n + m_eq);
            rhs.rows_mut(0, n)
                .copy_from(&(-&r_d - a_in.transpose() * (w.component_mul(&r_in) - &c_over_s)));
            rhs.rows_mut(n, m_eq).copy_from(&(-&r_eq));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dnu = sol.rows(n, m_eq).into_owned();
            let dlam = w.component_mul(&(&a_in * &dx + &r_in)) - &c_over_s;
            let ds = -(r_c + s.component_mul(&dlam)).component_div(&lam);
            Some([dx, dnu, dlam, ds])
        };
        let max_step = |v: &DVector<f64>, dv: &DVector<f64>| {
            (0..v.len())
                .filter(|&i| dv[i] < 0.0)
                .map(|i| -v[i] / dv[i])
                .fold(1.0_f64, f64::min)
        };
        let [_, _, dlam_a, ds_a] = direction(&s.component_mul(&lam))?;
        let alpha_a = max_step(&s, &ds_a).min(max_step(&lam, &dlam_a));
        let mu_aff = if m_in > 0 {
            (&s + &ds_a * alpha_a).dot(&(&lam + &dlam_a * alpha_a)) / m_in as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };
        let r_c = s.component_mul(&lam) + ds_a.component_mul(&dlam_a) - DVector::from_element(m_in, sigma * mu);
        let [dx, dnu, dlam, ds] = direction(&r_c)?;
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dlam))).min(1.0);
        x += &dx * alpha;
        nu += &dnu * alpha;
        lam += &dlam * alpha;
        s += &ds * alpha;
        s.apply(|v| *v = v.max(1e-300));
        lam.apply(|v| *v = v.max(1e-300));
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    let active = (0..m_in).map(|i| lam[i] > s[i]).collect();
    let nu = nu.component_mul(&e_eq) * cost_scale;
    let lam = lam.component_mul(&e_in) * cost_scale;
    Some((x, nu, lam, active))
}

fn project(v: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(lower[i]).min(upper[i]))
}

/// Solves `min 1/2 x^T P x + q^T x` subject to the equality rows and the
/// inequality rows flagged active, all as equalities. The quasi-definite
/// regularized KKT matrix is factored once and iterative refinement is run
/// against the unregularized system.
fn reduced_kkt(
    qp: &QuadraticProgram,
    active: &[bool],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = qp.n_vars();
    let m_eq = qp.a_eq.nrows();
    let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let m = m_eq + idx.len();
    let dim = n + m;
    let scale = qp.p.amax().max(1.0);
    let delta = 1e-9 * scale;

    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    for r in 0..m {
        let (row, b) = if r < m_eq {
            (qp.a_eq.row(r), qp.b_eq[r])
        } else {
            let i = idx[r - m_eq];
            (qp.a_in.row(i), qp.b_in[i])
        };
        for j in 0..n {
            kkt[(n + r, j)] = row[j];
            kkt[(j, n + r)] = row[j];
        }
        rhs[n + r] = b;
    }
    let mut reg = kkt.clone();
    for i in 0..dim {
        reg[(i, i)] += if i < n { delta } else { -delta };
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    let mut last = f64::INFINITY;
    for it in 0..REFINE_MAX {
        let res = &rhs - &kkt * &sol;
        let r = res.amax();
        if r <= 1e-15 * (1.0 + rhs.amax()) || (it >= REFINE_MIN && r > 0.9 * last) {
            break;
        }
        last = r;
        let corr = lu.solve(&res)?;
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let nu = sol.rows(n, m_eq).into_owned();
    let mut lambda = DVector::zeros(active.len());
    for (k, &i) in idx.iter().enumerate() {
        lambda[i] = sol[n + m_eq + k];
    }
    Some((x, nu, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, xs)
    }
    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }
    fn none(d: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, d), DVector::zeros(0))
    }

    #[test]
    fn projection_example() {
        let (ae, be) = none(1);
        let qp = QuadraticProgram::new(m(1, 1, &[2.0]), v(&[0.0]), ae, be, m(1, 1, &[-1.0]), v(&[-1.0])).unwrap();
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-9);
        assert!((sol.lambda[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn equality_example() {
        let (ai, bi) = none(2);
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2) * 2.0,
            v(&[-2.0, -2.0]),
            m(1, 2, &[1.0, 1.0]),
            v(&[1.0]),
            ai,
            bi,
        )
        .unwrap();
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - v(&[0.5, 0.5])).amax() < 1e-9);
        assert!(sol.kkt.max() <= 1e-8);
    }

    #[test]
    fn infeasible_fixtures() {
        let (ae, be) = none(1);
        let qp = QuadraticProgram::new(m(1, 1, &[1.0]), v(&[0.0]), ae, be, m(2, 1, &[1.0, -1.0]), v(&[0.0, -1.0])).unwrap();
        assert_eq!(solve(&qp, &QpSettings::default()).unwrap().status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn rejects_nonconvex_and_bad_shapes() {
        let (ae, be) = none(2);
        let (ai, bi) = none(2);
        let qp = QuadraticProgram::new(m(2, 2, &[1.0, 0.0, 0.0, -1.0]), v(&[0.0, 0.0]), ae, be, ai, bi).unwrap();
        assert!(matches!(solve(&qp, &QpSettings::default()), Err(Error::NonConvex(l)) if (l + 1.0).abs() < 1e-12));
        let (ae, be) = none(2);
        assert!(QuadraticProgram::new(m(1, 1, &[1.0]), v(&[0.0, 0.0]), ae, be, DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
    }

    #[test]
    fn lp_like_and_degenerate() {
        // zero Hessian, bounded by a box: min x0 + x1 on [-1,1]^2 with a
        // redundant copy of one bound.
        let (ae, be) = none(2);
        let a_in = m(5, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0]);
        let qp = QuadraticProgram::new(DMatrix::zeros(2, 2), v(&[1.0, 1.0]), ae, be, a_in, v(&[1.0, 1.0, 1.0, 1.0, 1.0])).unwrap();
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - v(&[-1.0, -1.0])).amax() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let (ae, be) = none(3);
        let qp = QuadraticProgram::new(
            m(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 3.0]),
            v(&[1.0, -2.0, 0.3]),
            ae,
            be,
            m(2, 3, &[1.0, 1.0, 1.0, -1.0, 0.0, 2.0]),
            v(&[0.5, 0.2]),
        )
        .unwrap();
        let a = solve(&qp, &QpSettings::default()).unwrap();
        let b = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(a, b);
        let w = WarmStart { x: Some(a.x.clone()), nu: None, lambda: Some(a.lambda.clone()) };
        let c = solve_warm(&qp, &QpSettings::default(), Some(&w)).unwrap();
        assert_eq!(c.status, QpStatus::Optimal);
        assert!((&c.x - &a.x).amax() < 1e-8);
    }

    #[test]
    fn interior_point_fallback_on_degenerate_rows() {
        // x <= 1 three times over, with a scaled copy: LICQ fails at x = 1.
        let (ae, be) = none(1);
        let qp = QuadraticProgram::new(
            m(1, 1, &[2.0]),
            v(&[-4.0]),
            ae,
            be,
            m(3, 1, &[1.0, 1.0, 2.0]),
            v(&[1.0, 1.0, 2.0]),
        )
        .unwrap();
        let settings = QpSettings {
            max_iter: 3,
            fallback_after: 1,
            ..QpSettings::default()
        };
        let sol = solve(&qp, &settings).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        // Multipliers are not unique, their weighted sum is.
        let total = sol.lambda[0] + sol.lambda[1] + 2.0 * sol.lambda[2];
        assert!((total - 2.0).abs() < 1e-7);
    }

    #[test]
    fn interior_point_matches_admm() {
        let qp = QuadraticProgram::new(
            m(2, 2, &[4.0, 1.0, 1.0, 2.0]),
            v(&[1.0, 1.0]),
            m(1, 2, &[1.0, 1.0]),
            v(&[1.0]),
            m(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            v(&[0.0, 0.0]),
        )
        .unwrap();
        let a = solve(&qp, &QpSettings::default()).unwrap();
        let b = solve(
            &qp,
            &QpSettings {
                max_iter: 1,
                fallback_after: 1,
                ..QpSettings::default()
            },
        )
        .unwrap();
        assert_eq!(b.status, QpStatus::Optimal);
        assert!((&a.x - &b.x).amax() < 1e-8);
        assert!((a.x[0] - 0.25).abs() < 1e-8 && (a.x[1] - 0.75).abs() < 1e-8);
    }
}
