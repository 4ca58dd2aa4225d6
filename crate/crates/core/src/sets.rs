//! H-polytopes, zonotopes and the recursive constraint tightening built from
//! them. Pontryagin differences are exact: each halfspace offset shrinks by
//! the support function of the subtracted zonotope.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SetKind};
use crate::gain::{spectral_radius, SCHUR_MARGIN};
use crate::linalg::{serde_matrix, serde_vector};
use crate::qp::{self, QpSettings, QpStatus, QuadraticProgram};

/// Absolute tolerance for point membership and emptiness.
pub const CONTAINS_TOL: f64 = 1e-9;

/// `{x : normals x <= offsets}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeDoc", into = "PolytopeDoc")]
pub struct HPolytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeDoc {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl TryFrom<PolytopeDoc> for HPolytope {
    type Error = Error;
    fn try_from(doc: PolytopeDoc) -> Result<Self> {
        let normals = crate::linalg::from_rows(&doc.normals, None)?;
        HPolytope::new(normals, DVector::from_vec(doc.offsets))
    }
}

impl From<HPolytope> for PolytopeDoc {
    fn from(p: HPolytope) -> Self {
        PolytopeDoc {
            normals: crate::linalg::to_rows(&p.normals),
            offsets: p.offsets.as_slice().to_vec(),
        }
    }
}

impl HPolytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(Error::dim(format!(
                "{} normals for {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        if normals.ncols() == 0 {
            return Err(Error::dim("polytope in zero dimensions"));
        }
        for i in 0..normals.nrows() {
            if normals.row(i).amax() == 0.0 {
                return Err(Error::InvalidParameter(format!("normal {i} is zero")));
            }
        }
        if normals.iter().chain(offsets.iter()).any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter("NaN in polytope".into()));
        }
        Ok(Self { normals, offsets })
    }

    /// Validated constraint set: must be nonempty and bounded.
    pub fn constraint_set(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        let p = Self::new(normals, offsets)?;
        if p.is_empty()? {
            return Err(Error::InvalidParameter("constraint set is empty".into()));
        }
        if !p.is_bounded()? {
            return Err(Error::InvalidParameter("constraint set is unbounded".into()));
        }
        Ok(p)
    }

    /// `lower <= x <= upper`, rows ordered `+e_0, -e_0, +e_1, -e_1, ...`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::dim("box bounds of different or zero length"));
        }
        let n = lower.len();
        let mut normals = DMatrix::zeros(2 * n, n);
        let mut offsets = DVector::zeros(2 * n);
        for i in 0..n {
            normals[(2 * i, i)] = 1.0;
            offsets[2 * i] = upper[i];
            normals[(2 * i + 1, i)] = -1.0;
            offsets[2 * i + 1] = -lower[i];
        }
        Self::new(normals, offsets)
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }
    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }
    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }
    pub fn n_constraints(&self) -> usize {
        self.normals.nrows()
    }

    /// Per-row slack `b - A x` (negative means violated).
    pub fn margins(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offsets - &self.normals * x
    }

    pub fn contains_tol(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && self.margins(x).iter().all(|&m| m >= -tol)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_tol(x, CONTAINS_TOL)
    }

    /// Emptiness by the phase-one program
    /// `min s^2/2  s.t.  a_i^T x / |a_i| - s <= b_i / |a_i|, s >= 0`.
    pub fn is_empty(&self) -> Result<bool> {
        let (m, n) = self.normals.shape();
        let d = n + 1;
        let mut a_in = DMatrix::zeros(m + 1, d);
        let mut b_in = DVector::zeros(m + 1);
        for i in 0..m {
            let scale = self.normals.row(i).norm();
            for j in 0..n {
                a_in[(i, j)] = self.normals[(i, j)] / scale;
            }
            a_in[(i, n)] = -1.0;
            b_in[i] = self.offsets[i] / scale;
        }
        a_in[(m, n)] = -1.0;
        let mut p = DMatrix::zeros(d, d);
        p[(n, n)] = 1.0;
        let prog = QuadraticProgram::new(
            p,
            DVector::zeros(d),
            DMatrix::zeros(0, d),
            DVector::zeros(0),
            a_in,
            b_in,
        )?;
        let sol = qp::solve(&prog, &QpSettings::default())?;
        match sol.status {
            QpStatus::Optimal => Ok(sol.x[n] > CONTAINS_TOL),
            // The phase-one program is always feasible.
            QpStatus::PrimalInfeasible | QpStatus::MaxIterations => {
                Err(Error::SolverMaxIterations(sol.iterations))
            }
        }
    }

    /// Bounded iff every `+-e_i` is a conic combination of the normals
    /// (checked by nonnegative least squares).
    pub fn is_bounded(&self) -> Result<bool> {
        let (m, n) = self.normals.shape();
        let at = self.normals.transpose();
        let p = at.transpose() * &at;
        let a_in = -DMatrix::<f64>::identity(m, m);
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut e = DVector::zeros(n);
                e[i] = sign;
                let q = -(at.transpose() * &e);
                let prog = QuadraticProgram::new(
                    p.clone(),
                    q,
                    DMatrix::zeros(0, m),
                    DVector::zeros(0),
                    a_in.clone(),
                    DVector::zeros(m),
                )?;
                let sol = qp::solve(&prog, &QpSettings::default())?;
                if sol.status != QpStatus::Optimal {
                    return Err(Error::SolverMaxIterations(sol.iterations));
                }
                if (&at * &sol.x - &e).amax() > 1e-7 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// `{c + G xi : |xi|_inf <= 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ZonotopeDoc", into = "ZonotopeDoc")]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ZonotopeDoc {
    #[serde(with = "serde_vector")]
    center: DVector<f64>,
    #[serde(with = "serde_matrix")]
    generators: DMatrix<f64>,
}

impl TryFrom<ZonotopeDoc> for Zonotope {
    type Error = Error;
    fn try_from(doc: ZonotopeDoc) -> Result<Self> {
        let n = doc.center.len();
        // An empty generator list carries no row information.
        let generators = if doc.generators.nrows() == 0 {
            DMatrix::zeros(n, 0)
        } else {
            doc.generators
        };
        Zonotope::new(doc.center, generators)
    }
}

impl From<Zonotope> for ZonotopeDoc {
    fn from(z: Zonotope) -> Self {
        ZonotopeDoc {
            center: z.center,
            generators: z.generators,
        }
    }
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        if generators.nrows() != center.len() {
            return Err(Error::dim(format!(
                "generators have {} rows for a center of length {}",
                generators.nrows(),
                center.len()
            )));
        }
        if center.iter().chain(generators.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite zonotope entry".into()));
        }
        Ok(Self { center, generators })
    }

    pub fn point(center: DVector<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            generators: DMatrix::zeros(n, 0),
        }
    }

    /// Axis-aligned box with the given half-widths.
    pub fn axis_box(center: DVector<f64>, half_widths: &DVector<f64>) -> Self {
        Self {
            generators: DMatrix::from_diagonal(half_widths),
            center,
        }
    }

    /// `{x : |x_i| <= h}` in `n` dimensions.
    pub fn cube(n: usize, half_width: f64) -> Self {
        Self::axis_box(DVector::zeros(n), &DVector::from_element(n, half_width))
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }
    pub fn dim(&self) -> usize {
        self.center.len()
    }
    pub fn order(&self) -> usize {
        self.generators.ncols()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            center: self.center.clone(),
            generators: &self.generators * factor,
        }
    }

    /// `max_{x in Z} a^T x = a^T c + sum_i |a^T g_i|`.
    pub fn support(&self, direction: &DVector<f64>) -> f64 {
        let proj = direction.transpose() * &self.generators;
        direction.dot(&self.center) + proj.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Componentwise half-widths of the interval hull.
    pub fn radius(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            self.generators.row(i).iter().map(|v| v.abs()).sum()
        })
    }

    pub fn contains_origin(&self) -> bool {
        // Exact for boxes; for general zonotopes decided through the QP.
        let r = self.radius();
        let is_box = (0..self.order()).all(|j| {
            self.generators
                .column(j)
                .iter()
                .filter(|v| **v != 0.0)
                .count()
                <= 1
        });
        if is_box {
            return (0..self.dim()).all(|i| self.center[i].abs() <= r[i] + CONTAINS_TOL);
        }
        // min |xi|^2 s.t. G xi = -c, -1 <= xi <= 1
        let g = self.order();
        let mut a_in = DMatrix::zeros(2 * g, g);
        for j in 0..g {
            a_in[(2 * j, j)] = 1.0;
            a_in[(2 * j + 1, j)] = -1.0;
        }
        let prog = QuadraticProgram::new(
            DMatrix::identity(g, g),
            DVector::zeros(g),
            self.generators.clone(),
            -self.center.clone(),
            a_in,
            DVector::from_element(2 * g, 1.0),
        );
        match prog.and_then(|p| qp::solve(&p, &QpSettings::default())) {
            Ok(sol) => sol.status == QpStatus::Optimal,
            Err(_) => false,
        }
    }

    /// `c + G xi` with `xi` uniform on `[-1, 1]^g`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.order(), |_, _| rng.random_range(-1.0..=1.0));
        &self.center + &self.generators * xi
    }

    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope> {
        if self.dim() != other.dim() {
            return Err(Error::dim("Minkowski sum of zonotopes in different dimensions"));
        }
        let (n, g1, g2) = (self.dim(), self.order(), other.order());
        let mut generators = DMatrix::zeros(n, g1 + g2);
        generators.columns_mut(0, g1).copy_from(&self.generators);
        generators.columns_mut(g1, g2).copy_from(&other.generators);
        Ok(Zonotope {
            center: &self.center + &other.center,
            generators,
        })
    }

    pub fn linear_map(&self, m: &DMatrix<f64>) -> Result<Zonotope> {
        if m.ncols() != self.dim() {
            return Err(Error::dim("linear map width differs from zonotope dimension"));
        }
        Ok(Zonotope {
            center: m * &self.center,
            generators: m * &self.generators,
        })
    }

    /// Drops zero generators and merges axis-parallel ones into a single
    /// generator per axis. Exact (the set is unchanged).
    pub fn reduce_axis_aligned(&self) -> Zonotope {
        let n = self.dim();
        let mut axis = DVector::<f64>::zeros(n);
        let mut rest: Vec<DVector<f64>> = Vec::new();
        for j in 0..self.order() {
            let g = self.generators.column(j);
            let nz: Vec<usize> = (0..n).filter(|&i| g[i] != 0.0).collect();
            match nz.as_slice() {
                [] => {}
                [i] => axis[*i] += g[*i].abs(),
                _ => rest.push(g.into_owned()),
            }
        }
        let axes: Vec<usize> = (0..n).filter(|&i| axis[i] != 0.0).collect();
        let mut generators = DMatrix::zeros(n, axes.len() + rest.len());
        for (k, &i) in axes.iter().enumerate() {
            generators[(i, k)] = axis[i];
        }
        for (k, g) in rest.iter().enumerate() {
            generators.set_column(axes.len() + k, g);
        }
        Zonotope {
            center: self.center.clone(),
            generators,
        }
    }
}

pub fn support(z: &Zonotope, direction: &DVector<f64>) -> f64 {
    z.support(direction)
}

pub fn minkowski_sum(a: &Zonotope, b: &Zonotope) -> Result<Zonotope> {
    a.minkowski_sum(b)
}

pub fn linear_map(m: &DMatrix<f64>, z: &Zonotope) -> Result<Zonotope> {
    z.linear_map(m)
}

/// `P - Z = {x : x + z in P for all z in Z}`: same normals, offsets reduced
/// by the support of `Z`. The result may be empty.
pub fn pontryagin_diff(p: &HPolytope, z: &Zonotope) -> Result<HPolytope> {
    if p.dim() != z.dim() {
        return Err(Error::dim("Pontryagin difference in different dimensions"));
    }
    let offsets = DVector::from_fn(p.n_constraints(), |i, _| {
        let a = p.normals.row(i).transpose();
        p.offsets[i] - z.support(&a)
    });
    Ok(HPolytope {
        normals: p.normals.clone(),
        offsets,
    })
}

/// Tightened constraint sequence for the tube controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TighteningSchedule {
    /// Untightened `X` and `U`.
    pub state_constraints: HPolytope,
    pub input_constraints: HPolytope,
    /// `X~(0..=N)`.
    pub state_sets: Vec<HPolytope>,
    /// `U~(0..=N)`.
    pub input_sets: Vec<HPolytope>,
    /// `R(1..=N)`, the accumulated lifted error sets.
    pub error_sets: Vec<Zonotope>,
}

impl TighteningSchedule {
    pub fn horizon(&self) -> usize {
        self.state_sets.len() - 1
    }

    /// Rowwise nestedness `X~(j+1) <= X~(j)`, `U~(j+1) <= U~(j)`.
    pub fn is_nested(&self) -> bool {
        let nested = |sets: &[HPolytope]| {
            sets.windows(2).all(|w| {
                w[0].normals == w[1].normals
                    && w[1]
                        .offsets
                        .iter()
                        .zip(w[0].offsets.iter())
                        .all(|(b1, b0)| b1 <= b0)
            })
        };
        nested(&self.state_sets) && nested(&self.input_sets)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `X~(0) = X - V`, `U~(0) = U` and for `j = 1..=N`
/// `X~(j) = X - (C_x R(j) + V)`, `U~(j) = U - K R(j)` with
/// `R(j) = R(j-1) + (A+BK)^(j-1) W`.
///
/// Fails with [`Error::EmptyTightenedSet`] naming the first empty set.
pub fn tighten_constraints(
    state_constraints: &HPolytope,
    input_constraints: &HPolytope,
    disturbances: &crate::koopman::DisturbanceModel,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    c_x: &DMatrix<f64>,
    horizon: usize,
) -> Result<TighteningSchedule> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let n_z = a.nrows();
    if b.nrows() != n_z || k.shape() != (b.ncols(), n_z) || c_x.ncols() != n_z {
        return Err(Error::dim("inconsistent A, B, K, C_x"));
    }
    if disturbances.w.dim() != n_z || disturbances.v.dim() != c_x.nrows() {
        return Err(Error::dim("disturbance sets do not match the model"));
    }
    if state_constraints.dim() != c_x.nrows() || input_constraints.dim() != b.ncols() {
        return Err(Error::dim("constraint sets do not match the model"));
    }
    let a_k = a + b * k;
    let rho = spectral_radius(&a_k, 1e-10)?;
    if rho >= 1.0 - SCHUR_MARGIN {
        return Err(Error::NotStabilizing(rho));
    }

    let v = disturbances.v.reduce_axis_aligned();
    let mut state_sets = vec![pontryagin_diff(state_constraints, &v)?];
    let mut input_sets = vec![input_constraints.clone()];
    let mut error_sets = Vec::with_capacity(horizon);

    let mut propagated = disturbances.w.clone();
    let mut accumulated = Zonotope::point(DVector::zeros(n_z));
    for _ in 1..=horizon {
        accumulated = accumulated.minkowski_sum(&propagated)?;
        let state_err = accumulated.linear_map(c_x)?.minkowski_sum(&v)?;
        state_sets.push(pontryagin_diff(state_constraints, &state_err)?);
        input_sets.push(pontryagin_diff(input_constraints, &accumulated.linear_map(k)?)?);
        error_sets.push(accumulated.clone());
        propagated = propagated.linear_map(&a_k)?;
    }

    for j in 0..=horizon {
        if state_sets[j].is_empty()? {
            return Err(Error::EmptyTightenedSet {
                index: j,
                which: SetKind::State,
            });
        }
        if input_sets[j].is_empty()? {
            return Err(Error::EmptyTightenedSet {
                index: j,
                which: SetKind::Input,
            });
        }
    }

    Ok(TighteningSchedule {
        state_constraints: state_constraints.clone(),
        input_constraints: input_constraints.clone(),
        state_sets,
        input_sets,
        error_sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::DisturbanceModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn unit_square() -> HPolytope {
        HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn support_examples() {
        let unit = Zonotope::cube(2, 1.0);
        assert_eq!(unit.support(&v(&[1.0, 1.0])), 2.0);
        let single = Zonotope::point(v(&[0.5, -2.0]));
        assert_eq!(single.support(&v(&[3.0, 1.0])), -0.5);
        let z = Zonotope::new(
            v(&[0.3, -0.1]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 0.7]),
        )
        .unwrap();
        let a = v(&[0.4, -1.3]);
        let gens: f64 = (a.transpose() * z.generators()).iter().map(|x| x.abs()).sum();
        assert!((z.support(&(-&a)) - (-a.dot(z.center()) + gens)).abs() < 1e-15);
    }

    #[test]
    fn minkowski_examples() {
        let a = Zonotope::cube(1, 1.0);
        let b = Zonotope::cube(1, 0.2);
        let s = a.minkowski_sum(&b).unwrap();
        assert!((s.support(&v(&[1.0])) - 1.2).abs() < 1e-15);
        assert!((s.support(&v(&[-1.0])) - 1.2).abs() < 1e-15);
        let zero = Zonotope::point(DVector::zeros(1));
        assert_eq!(a.minkowski_sum(&zero).unwrap(), a);
        let w = Zonotope::cube(3, 0.2);
        let reduced = w.minkowski_sum(&w).unwrap().reduce_axis_aligned();
        assert_eq!(reduced.order(), 3);
        assert!((reduced.generators() - DMatrix::from_diagonal_element(3, 3, 0.4)).amax() < 1e-15);
        assert!(a.minkowski_sum(&w).is_err());
    }

    #[test]
    fn linear_map_examples() {
        let c_x = crate::linalg::selector(2, 3);
        let w = Zonotope::cube(3, 0.2);
        let proj = w.linear_map(&c_x).unwrap().reduce_axis_aligned();
        assert_eq!(proj, Zonotope::cube(2, 0.2));
        let zero = w.linear_map(&DMatrix::zeros(2, 3)).unwrap().reduce_axis_aligned();
        assert_eq!(zero, Zonotope::point(DVector::zeros(2)));
        let doubled = w.linear_map(&(DMatrix::identity(3, 3) * 2.0)).unwrap();
        assert_eq!(doubled.generators(), &(w.generators() * 2.0));
    }

    #[test]
    fn pontryagin_examples() {
        let d = pontryagin_diff(
            &unit_square(),
            &Zonotope::axis_box(DVector::zeros(2), &v(&[0.2, 0.1])),
        )
        .unwrap();
        let expect = HPolytope::from_box(&[-0.8, -0.9], &[0.8, 0.9]).unwrap();
        assert!((d.offsets() - expect.offsets()).amax() < 1e-15);
        let same = pontryagin_diff(&unit_square(), &Zonotope::point(DVector::zeros(2))).unwrap();
        assert_eq!(same, unit_square());
        let small = HPolytope::from_box(&[-0.1], &[0.1]).unwrap();
        let empty = pontryagin_diff(&small, &Zonotope::cube(1, 0.2)).unwrap();
        assert!((empty.offsets() - v(&[-0.1, -0.1])).amax() < 1e-15);
        assert!(empty.is_empty().unwrap());
    }

    #[test]
    fn emptiness_examples() {
        assert!(!HPolytope::from_box(&[-0.8, -0.8], &[0.8, 0.8]).unwrap().is_empty().unwrap());
        let disjoint = HPolytope::new(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), v(&[-1.0, -1.0])).unwrap();
        assert!(disjoint.is_empty().unwrap());
        let degenerate = HPolytope::new(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), v(&[0.0, 0.0])).unwrap();
        assert!(!degenerate.is_empty().unwrap());
        // a thin but nonempty sliver far from the origin
        let sliver = HPolytope::from_box(&[100.0, 5.0], &[100.0 + 1e-6, 5.0]).unwrap();
        assert!(!sliver.is_empty().unwrap());
    }

    #[test]
    fn contains_and_sample() {
        let sq = unit_square();
        assert!(sq.contains(&v(&[0.0, 0.0])));
        assert!(!sq.contains(&v(&[1.0 + 2.0 * CONTAINS_TOL, 0.0])));
        assert!(sq.contains(&v(&[1.0 + 0.5 * CONTAINS_TOL, 0.0])));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Zonotope::point(v(&[1.0, 2.0]));
        assert_eq!(p.sample(&mut rng), v(&[1.0, 2.0]));
        let z = Zonotope::cube(2, 0.3);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = z.sample(&mut r1);
            assert_eq!(s, z.sample(&mut r2));
            assert!(s.amax() <= 0.3);
        }
    }

    #[test]
    fn boundedness() {
        assert!(unit_square().is_bounded().unwrap());
        let half = HPolytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[1.0])).unwrap();
        assert!(!half.is_bounded().unwrap());
        let simplex = HPolytope::new(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            v(&[0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(simplex.is_bounded().unwrap());
        assert!(HPolytope::constraint_set(half.normals().clone(), half.offsets().clone()).is_err());
        assert!(HPolytope::new(DMatrix::zeros(1, 2), v(&[1.0])).is_err());
    }

    #[test]
    fn origin_containment() {
        assert!(Zonotope::cube(3, 0.2).contains_origin());
        assert!(!Zonotope::axis_box(v(&[1.0]), &v(&[0.5])).contains_origin());
        let skew = Zonotope::new(v(&[1.0, 1.0]), DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        assert!(skew.contains_origin());
        let skew = Zonotope::new(v(&[1.0, 0.0]), DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        assert!(!skew.contains_origin());
    }

    fn example_system() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (l, m) = (-0.1, 2.0);
        let a = DMatrix::from_row_slice(3, 3, &[l, 0.0, 0.0, 0.0, m, l * l - m, 0.0, 0.0, l * l]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let g = crate::gain::dlqr(
            &a,
            &b,
            &DMatrix::identity(3, 3),
            &DMatrix::identity(1, 1),
            1e-12,
            10_000,
        )
        .unwrap();
        (a, b, g.k)
    }

    #[test]
    fn tightening_examples() {
        let (a, b, k) = example_system();
        let c_x = crate::linalg::selector(2, 3);
        let x = HPolytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]).unwrap();
        let u = HPolytope::from_box(&[-3.0], &[3.0]).unwrap();
        let d = DisturbanceModel::new(Zonotope::cube(3, 0.2), Zonotope::cube(2, 0.1)).unwrap();
        let sched = tighten_constraints(&x, &u, &d, &a, &b, &k, &c_x, 10).unwrap();
        assert_eq!(sched.horizon(), 10);
        assert_eq!(sched.error_sets.len(), 10);
        assert!((sched.state_sets[0].offsets() - DVector::from_element(4, 4.9)).amax() < 1e-12);
        assert!((sched.state_sets[1].offsets() - DVector::from_element(4, 4.7)).amax() < 1e-12);
        assert_eq!(sched.input_sets[0], u);
        assert!(sched.is_nested());

        let zero = DisturbanceModel::zero(3, 2);
        let sched = tighten_constraints(&x, &u, &zero, &a, &b, &k, &c_x, 5).unwrap();
        assert!(sched.state_sets.iter().all(|s| *s == x));
        assert!(sched.input_sets.iter().all(|s| *s == u));
    }

    #[test]
    fn tightening_detects_empty_sets() {
        let (a, b, k) = example_system();
        let c_x = crate::linalg::selector(2, 3);
        let x = HPolytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]).unwrap();
        let u = HPolytope::from_box(&[-3.0], &[3.0]).unwrap();
        let d = DisturbanceModel::new(Zonotope::cube(3, 10.0), Zonotope::cube(2, 0.1)).unwrap();
        let err = tighten_constraints(&x, &u, &d, &a, &b, &k, &c_x, 10).unwrap_err();
        assert!(matches!(err, Error::EmptyTightenedSet { .. }), "{err}");
        // An unstable "gain" is rejected up front.
        let zero_k = DMatrix::zeros(1, 3);
        let d = DisturbanceModel::zero(3, 2);
        assert!(matches!(
            tighten_constraints(&x, &u, &d, &a, &b, &zero_k, &c_x, 3),
            Err(Error::NotStabilizing(_))
        ));
    }

    #[test]
    fn serde_shapes() {
        let z = Zonotope::cube(2, 0.5);
        let s = serde_json::to_string(&z).unwrap();
        assert_eq!(s, r#"{"center":[0.0,0.0],"generators":[[0.5,0.0],[0.0,0.5]]}"#);
        assert_eq!(serde_json::from_str::<Zonotope>(&s).unwrap(), z);
        let p = Zonotope::point(v(&[1.0, 2.0]));
        let back: Zonotope = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let back: Zonotope = serde_json::from_str(r#"{"center":[1.0,2.0],"generators":[]}"#).unwrap();
        assert_eq!(back, p);
        let h = unit_square();
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.starts_with(r#"{"normals":[[1.0,0.0],[-1.0,0.0]"#));
        assert_eq!(serde_json::from_str::<HPolytope>(&s).unwrap(), h);
    }
}
