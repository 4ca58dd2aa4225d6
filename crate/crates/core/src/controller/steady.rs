use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SteadyTarget;
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::qp::{self, QpSettings, QpStatus, QuadraticProgram};
use crate::sets::{HPolytope, TighteningSchedule};
use crate::sim::Plant;

/// Best reachable steady target of the lifted model:
/// `min s |C_y z_s - y_t|^2  s.t.  z_s = A z_s + B u_s, C_x z_s in X~(N), u_s in U~(N)`.
pub fn solve_steady_offline(
    model: &KoopmanModel,
    schedule: &TighteningSchedule,
    y_t: &DVector<f64>,
    s: f64,
) -> Result<SteadyTarget> {
    crate::linalg::check_len(y_t, model.n_y(), "y_t")?;
    if s.is_nan() || s <= 0.0 {
        return Err(Error::InvalidParameter("s must be positive".into()));
    }
    let (n_z, n_u) = (model.n_z(), model.n_u());
    let d = n_z + n_u;
    let c_y = model.c_y();

    let mut p = DMatrix::zeros(d, d);
    p.view_mut((0, 0), (n_z, n_z))
        .copy_from(&(c_y.transpose() * c_y * (2.0 * s)));
    let mut q = DVector::zeros(d);
    q.rows_mut(0, n_z).copy_from(&(c_y.transpose() * y_t * (-2.0 * s)));

    let mut a_eq = DMatrix::zeros(n_z, d);
    a_eq.view_mut((0, 0), (n_z, n_z))
        .copy_from(&(model.a() - DMatrix::identity(n_z, n_z)));
    a_eq.view_mut((0, n_z), (n_z, n_u)).copy_from(model.b());

    let x_n = schedule.state_sets.last().ok_or(Error::EmptyLog)?;
    let u_n = schedule.input_sets.last().ok_or(Error::EmptyLog)?;
    let hx = x_n.normals() * model.c_x();
    let (mx, mu) = (hx.nrows(), u_n.n_constraints());
    let mut a_in = DMatrix::zeros(mx + mu, d);
    a_in.view_mut((0, 0), (mx, n_z)).copy_from(&hx);
    a_in.view_mut((mx, n_z), (mu, n_u)).copy_from(u_n.normals());
    let mut b_in = DVector::zeros(mx + mu);
    b_in.rows_mut(0, mx).copy_from(x_n.offsets());
    b_in.rows_mut(mx, mu).copy_from(u_n.offsets());

    let prog = QuadraticProgram::new(p, q, a_eq, DVector::zeros(n_z), a_in, b_in)?;
    let sol = qp::solve(&prog, &QpSettings::default())?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::PrimalInfeasible => return Err(Error::Infeasible),
        QpStatus::MaxIterations => return Err(Error::SolverMaxIterations(sol.iterations)),
    }
    let z_s = sol.x.rows(0, n_z).into_owned();
    let u_s = sol.x.rows(n_z, n_u).into_owned();
    let y_s = c_y * &z_s;
    let diff = &y_s - y_t;
    Ok(SteadyTarget {
        offset_cost: s * diff.dot(&diff),
        z_s,
        u_s,
        y_s,
    })
}

/// Tensor grid over boxes in state and input space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub state_points: Vec<usize>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub input_points: Vec<usize>,
    /// Fixed-point tolerance on `|f(x, u) - x|_inf`.
    pub fixed_point_tol: f64,
}

impl GridSpec {
    fn axes(lower: &[f64], upper: &[f64], points: &[usize]) -> Result<Vec<Vec<f64>>> {
        if lower.len() != upper.len() || lower.len() != points.len() {
            return Err(Error::dim("grid bounds and point counts differ in length"));
        }
        Ok((0..lower.len())
            .map(|i| match points[i] {
                0 => Vec::new(),
                1 => vec![0.5 * (lower[i] + upper[i])],
                n => (0..n)
                    .map(|k| lower[i] + (upper[i] - lower[i]) * k as f64 / (n - 1) as f64)
                    .collect(),
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearSteady {
    #[serde(with = "crate::linalg::serde_vector")]
    pub x_sr: DVector<f64>,
    #[serde(with = "crate::linalg::serde_vector")]
    pub u_sr: DVector<f64>,
    #[serde(with = "crate::linalg::serde_vector")]
    pub y_sr: DVector<f64>,
    /// `s |y_sr - y_t|^2`
    pub offset_cost: f64,
}

fn for_each_point(axes: &[Vec<f64>], mut f: impl FnMut(&[f64])) {
    if axes.iter().any(|a| a.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; axes.len()];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        f(&point);
        let mut k = 0;
        loop {
            if k == axes.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                point[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            point[k] = axes[k][0];
            k += 1;
        }
    }
}

/// Brute-force search of the plant's fixed points `f(x, u) = x` with
/// `x in X`, `u in U`, minimizing `s |C x - y_t|^2`. Ties keep the first grid
/// point in lexicographic order.
pub fn solve_steady_nonlinear(
    plant: &Plant,
    state_set: &HPolytope,
    input_set: &HPolytope,
    y_t: &DVector<f64>,
    s: f64,
    grid: &GridSpec,
) -> Result<NonlinearSteady> {
    let c = plant.output_matrix();
    crate::linalg::check_len(y_t, c.nrows(), "y_t")?;
    if state_set.dim() != plant.state_dim() || input_set.dim() != plant.input_dim() {
        return Err(Error::dim("constraint sets do not match the plant"));
    }
    let xs = GridSpec::axes(&grid.state_lower, &grid.state_upper, &grid.state_points)?;
    let us = GridSpec::axes(&grid.input_lower, &grid.input_upper, &grid.input_points)?;
    if xs.len() != plant.state_dim() || us.len() != plant.input_dim() {
        return Err(Error::dim("grid does not match the plant dimensions"));
    }
    let feasible_inputs: Vec<DVector<f64>> = {
        let mut v = Vec::new();
        for_each_point(&us, |u| {
            let u = DVector::from_column_slice(u);
            if input_set.contains(&u) {
                v.push(u);
            }
        });
        v
    };

    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    for_each_point(&xs, |x| {
        let x = DVector::from_column_slice(x);
        if !state_set.contains(&x) {
            return;
        }
        let y = &c * &x;
        let cost = s * (&y - y_t).norm_squared();
        if best.as_ref().is_some_and(|b| cost >= b.0) {
            return;
        }
        for u in &feasible_inputs {
            if (plant.step(&x, u) - &x).amax() <= grid.fixed_point_tol {
                best = Some((cost, x.clone(), u.clone()));
                break;
            }
        }
    });
    let (offset_cost, x_sr, u_sr) = best.ok_or(Error::NoFixedPoint)?;
    Ok(NonlinearSteady {
        y_sr: &c * &x_sr,
        offset_cost,
        x_sr,
        u_sr,
    })
}
