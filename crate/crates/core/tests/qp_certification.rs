use ktmpc::qp::{solve, QpSettings, QpStatus, QuadraticProgram};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random convex QP that is feasible (contains `x0`) and bounded (box rows).
fn random_qp(rng: &mut ChaCha8Rng) -> (QuadraticProgram, DVector<f64>, DMatrix<f64>) {
    let d = rng.random_range(1..=12);
    let rank = rng.random_range(0..=d);
    let l = DMatrix::from_fn(d, rank, |_, _| rng.random_range(-2.0..2.0));
    let p = &l * l.transpose();
    let q = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
    let x0 = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let m_eq = rng.random_range(0..d.min(4));
    let a_eq = DMatrix::from_fn(m_eq, d, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let m_rand = rng.random_range(0..=2 * d);
    let m_in = m_rand + 2 * d;
    let mut a_in = DMatrix::zeros(m_in, d);
    let mut b_in = DVector::zeros(m_in);
    for i in 0..m_rand {
        for j in 0..d {
            a_in[(i, j)] = rng.random_range(-1.0..1.0);
        }
        // a quarter of the random rows pass exactly through x0
        let slack = if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.0..2.0) };
        b_in[i] = a_in.row(i).dot(&x0.transpose()) + slack;
    }
    for j in 0..d {
        a_in[(m_rand + 2 * j, j)] = 1.0;
        b_in[m_rand + 2 * j] = 10.0;
        a_in[(m_rand + 2 * j + 1, j)] = -1.0;
        b_in[m_rand + 2 * j + 1] = 10.0;
    }
    // projector onto the null space of A_eq
    let null = if m_eq == 0 {
        DMatrix::identity(d, d)
    } else {
        DMatrix::identity(d, d) - a_eq.clone().pseudo_inverse(1e-12).unwrap() * &a_eq
    };
    (
        QuadraticProgram::new(p, q, a_eq, b_eq, a_in, b_in).unwrap(),
        x0,
        null,
    )
}

fn feasible_points(
    qp: &QuadraticProgram,
    x0: &DVector<f64>,
    null: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| {
            let t = DVector::from_fn(null.ncols(), |_, _| rng.random_range(-4.0..4.0));
            let dir = null * t;
            let mut step = 1.0;
            loop {
                let x = x0 + &dir * step;
                if (qp.a_in() * &x - qp.b_in()).max() <= 0.0 {
                    break x;
                }
                step *= 0.5;
                if step < 1e-12 {
                    break x0.clone();
                }
            }
        })
        .collect()
}

#[test]
fn random_qps_are_certified_and_beat_feasible_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let settings = QpSettings::default();
    let mut worst = 0.0_f64;
    for case in 0..500 {
        let (qp, x0, null) = random_qp(&mut rng);
        let sol = solve(&qp, &settings).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}: {:?}", sol.kkt);
        assert!(sol.kkt.max() <= 1e-8, "case {case}: {:?}", sol.kkt);
        worst = worst.max(sol.kkt.max());
        for x in feasible_points(&qp, &x0, &null, &mut rng, 100) {
            assert!(sol.objective <= qp.objective(&x) + 1e-6, "case {case}");
        }
        let again = solve(&qp, &settings).unwrap();
        assert_eq!(again, sol, "case {case}: not deterministic");
    }
    eprintln!("worst KKT residual over 500 QPs: {worst:e}");
}

#[test]
fn certified_infeasible_fixtures() {
    let s = QpSettings::default();
    let none = |d| (DMatrix::<f64>::zeros(0, d), DVector::<f64>::zeros(0));

    // x <= 0 and x >= 1
    let (ae, be) = none(1);
    let qp = QuadraticProgram::new(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        ae,
        be,
        DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
        DVector::from_vec(vec![0.0, -1.0]),
    )
    .unwrap();
    assert_eq!(solve(&qp, &s).unwrap().status, QpStatus::PrimalInfeasible);

    // x1 + x2 = 1 with x <= 0
    let qp = QuadraticProgram::new(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_vec(vec![1.0]),
        DMatrix::identity(2, 2),
        DVector::zeros(2),
    )
    .unwrap();
    assert_eq!(solve(&qp, &s).unwrap().status, QpStatus::PrimalInfeasible);

    // x1 + x2 = 1 and x1 + x2 = 2
    let (ai, bi) = none(2);
    let qp = QuadraticProgram::new(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        DVector::from_vec(vec![1.0, 2.0]),
        ai,
        bi,
    )
    .unwrap();
    assert_eq!(solve(&qp, &s).unwrap().status, QpStatus::PrimalInfeasible);
}
