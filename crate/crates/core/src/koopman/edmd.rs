use nalgebra::{DMatrix, DVector};

use super::{DisturbanceModel, KoopmanModel, LiftingSpec, TrajectoryData};
use crate::error::{Error, Result};
use crate::sets::Zonotope;

pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Relative pivot threshold below which the regression is treated as rank
/// deficient.
const RANK_TOL: f64 = 1e-11;

/// Least-squares fit of `psi(x+) ~ A psi(x) + B u` over every transition,
/// with Tikhonov penalty `ridge * (|A|_F^2 + |B|_F^2)`.
///
/// The stacked regression is solved through a Householder QR of the data
/// matrix (augmented with `sqrt(ridge) I` rows), not the normal equations.
/// The returned model has `C_y = C_x`; use
/// [`KoopmanModel::with_output_matrix`] to set the plant output.
pub fn fit_edmd(data: &TrajectoryData, lifting: &LiftingSpec, ridge: f64) -> Result<KoopmanModel> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter("ridge must be a finite non-negative number".into()));
    }
    data.validate()?;
    let (Some(n_x), Some(n_u)) = (data.state_dim(), data.input_dim()) else {
        return Err(Error::EmptyData);
    };
    if n_x != lifting.state_dim() {
        return Err(Error::dim(format!(
            "data has {n_x} states, lifting expects {}",
            lifting.state_dim()
        )));
    }
    let n_z = lifting.lifted_dim();
    let d = n_z + n_u;
    let m = data.transition_count();
    if ridge == 0.0 && m < d {
        return Err(Error::Underdetermined {
            transitions: m,
            unknowns: d,
        });
    }

    let extra = if ridge > 0.0 { d } else { 0 };
    let mut regressors = DMatrix::<f64>::zeros(m + extra, d);
    let mut targets = DMatrix::<f64>::zeros(m + extra, n_z);
    let mut buf = vec![0.0; n_z];
    for (row, (x, u, x_next)) in data.transitions().enumerate() {
        lifting.lift_into(x.as_slice(), &mut buf);
        for (j, v) in buf.iter().chain(u.iter()).enumerate() {
            regressors[(row, j)] = *v;
        }
        lifting.lift_into(x_next.as_slice(), &mut buf);
        for (j, v) in buf.iter().enumerate() {
            targets[(row, j)] = *v;
        }
    }
    let sqrt_ridge = ridge.sqrt();
    for j in 0..extra {
        regressors[(m + j, j)] = sqrt_ridge;
    }

    let qr = regressors.qr();
    let r = qr.r();
    let pivot_max = (0..d).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..d)
        .filter(|&i| r[(i, i)].abs() > RANK_TOL * pivot_max.max(f64::MIN_POSITIVE))
        .count();
    if rank < d {
        return Err(Error::RankDeficient { rank, unknowns: d });
    }
    qr.q_tr_mul(&mut targets);
    let rhs = targets.rows(0, d).into_owned();
    let theta = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient { rank, unknowns: d })?;
    // theta is d x n_z: rows [A^T; B^T]
    let a = theta.rows(0, n_z).transpose();
    let b = theta.rows(n_z, n_u).transpose();
    let identity = DMatrix::identity(n_x, n_x);
    KoopmanModel::new(a, b, &identity, lifting.clone())
}

/// Sample-based box estimate of the lifted disturbance `w` and decoder error
/// `v` over all recorded transitions.
///
/// Each set is the axis-aligned box spanned by the componentwise residual
/// extremes (centered at their midpoint) with generators scaled by
/// `inflation`. If the origin falls outside that box the half-widths are
/// enlarged until it is covered, so the tightening recursion stays nested.
pub fn estimate_disturbance_sets(
    model: &KoopmanModel,
    data: &TrajectoryData,
    inflation: f64,
) -> Result<DisturbanceModel> {
    if !(inflation >= 1.0 && inflation.is_finite()) {
        return Err(Error::InvalidParameter("inflation must be >= 1".into()));
    }
    if data.transition_count() == 0 {
        return Err(Error::EmptyData);
    }
    data.validate()?;
    let n_z = model.n_z();
    let n_x = model.n_x();
    let mut w_lo = DVector::from_element(n_z, f64::INFINITY);
    let mut w_hi = DVector::from_element(n_z, f64::NEG_INFINITY);
    let mut v_lo = DVector::from_element(n_x, f64::INFINITY);
    let mut v_hi = DVector::from_element(n_x, f64::NEG_INFINITY);

    let track = |lo: &mut DVector<f64>, hi: &mut DVector<f64>, r: &DVector<f64>| {
        for i in 0..r.len() {
            lo[i] = lo[i].min(r[i]);
            hi[i] = hi[i].max(r[i]);
        }
    };

    for traj in &data.trajectories {
        let lifted: Vec<DVector<f64>> = traj
            .states
            .iter()
            .map(|x| model.lift(x))
            .collect::<Result<_>>()?;
        for (k, u) in traj.inputs.iter().enumerate() {
            let w = &lifted[k + 1] - model.predict(&lifted[k], u)?;
            track(&mut w_lo, &mut w_hi, &w);
        }
        for (x, z) in traj.states.iter().zip(&lifted) {
            let v = x - model.decode(z)?;
            track(&mut v_lo, &mut v_hi, &v);
        }
    }

    Ok(DisturbanceModel {
        w: residual_box(&w_lo, &w_hi, inflation),
        v: residual_box(&v_lo, &v_hi, inflation),
    })
}

fn residual_box(lo: &DVector<f64>, hi: &DVector<f64>, inflation: f64) -> Zonotope {
    let center = (lo + hi) * 0.5;
    let half = DVector::from_fn(lo.len(), |i, _| {
        let h = 0.5 * (hi[i] - lo[i]) * inflation;
        h.max(center[i].abs())
    });
    Zonotope::axis_box(center, &half)
}

/// Mean decoded-state error of `horizon`-step open-loop predictions started
/// from the first state of every trajectory long enough. `horizon = 1` uses
/// every transition.
pub fn prediction_error(model: &KoopmanModel, data: &TrajectoryData, horizon: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for traj in &data.trajectories {
        if traj.inputs.len() < horizon || horizon == 0 {
            continue;
        }
        let starts: Vec<usize> = if horizon == 1 {
            (0..traj.inputs.len()).collect()
        } else {
            vec![0]
        };
        for s in starts {
            let mut z = model.lift(&traj.states[s])?;
            for u in &traj.inputs[s..s + horizon] {
                z = model.predict(&z, u)?;
            }
            total += (model.decode(&z)? - &traj.states[s + horizon]).norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyData);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{Lifting, Trajectory};

    fn lifting() -> LiftingSpec {
        LiftingSpec::new(
            2,
            Lifting::Explicit {
                exponents: vec![vec![2, 0]],
                features: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_data_with_ridge_gives_zero_model() {
        let traj = Trajectory {
            states: vec![DVector::zeros(2); 6],
            inputs: vec![DVector::zeros(1); 5],
        };
        let data = TrajectoryData::new(vec![traj]).unwrap();
        let model = fit_edmd(&data, &lifting(), 1e-3).unwrap();
        assert!(model.a().iter().all(|&v| v == 0.0));
        assert!(model.b().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_transitions_are_underdetermined() {
        let traj = Trajectory {
            states: vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![0.5, 1.0]),
                DVector::from_vec(vec![0.2, 0.3]),
            ],
            inputs: vec![DVector::from_vec(vec![1.0]); 2],
        };
        let data = TrajectoryData::new(vec![traj]).unwrap();
        assert!(matches!(
            fit_edmd(&data, &lifting(), 0.0),
            Err(Error::Underdetermined { transitions: 2, unknowns: 4 })
        ));
    }

    #[test]
    fn collinear_data_is_rank_deficient() {
        // x1 = 0 throughout, so the x1 and x1^2 regressors vanish.
        let states: Vec<_> = (0..12)
            .map(|k| DVector::from_vec(vec![0.0, k as f64 * 0.1]))
            .collect();
        let inputs: Vec<_> = (0..11).map(|k| DVector::from_vec(vec![(k as f64).sin()])).collect();
        let data = TrajectoryData::new(vec![Trajectory { states, inputs }]).unwrap();
        assert!(matches!(
            fit_edmd(&data, &lifting(), 0.0),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn empty_data_rejected() {
        let model = fit_edmd(
            &TrajectoryData::new(vec![Trajectory {
                states: (0..8).map(|k| DVector::from_vec(vec![k as f64, 1.0 / (1.0 + k as f64)])).collect(),
                inputs: (0..7).map(|k| DVector::from_vec(vec![(k as f64).cos()])).collect(),
            }])
            .unwrap(),
            &lifting(),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            estimate_disturbance_sets(&model, &TrajectoryData::default(), 1.0),
            Err(Error::EmptyData)
        ));
        assert!(fit_edmd(&TrajectoryData::default(), &lifting(), 0.0).is_err());
    }
}
