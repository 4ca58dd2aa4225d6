//! Lifted linear predictor `z+ = A z + B u`, `x = C_x z`, `y = C_y z`.

mod edmd;
mod io;
mod lifting;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, from_rows, to_rows};
use crate::sets::Zonotope;

pub use edmd::{estimate_disturbance_sets, fit_edmd, prediction_error, DEFAULT_RIDGE};
pub use io::{read_trajectories_csv, write_trajectories_csv};
pub use lifting::{Feature, Lifting, LiftingSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c_x: DMatrix<f64>,
    c_y: DMatrix<f64>,
    lifting: LiftingSpec,
}

impl KoopmanModel {
    /// Model with the identity-augmented decoder `C_x = [I, 0]` and
    /// `C_y = C C_x` for the plant output matrix `C`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        output_matrix: &DMatrix<f64>,
        lifting: LiftingSpec,
    ) -> Result<Self> {
        let n_x = lifting.state_dim();
        let c_x = linalg::selector(n_x, lifting.lifted_dim());
        if output_matrix.ncols() != n_x {
            return Err(Error::dim(format!(
                "output matrix has {} columns for {n_x} states",
                output_matrix.ncols()
            )));
        }
        let c_y = output_matrix * &c_x;
        Self::from_parts(a, b, c_x, c_y, lifting)
    }

    pub fn from_parts(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c_x: DMatrix<f64>,
        c_y: DMatrix<f64>,
        lifting: LiftingSpec,
    ) -> Result<Self> {
        let n_z = lifting.lifted_dim();
        let n_x = lifting.state_dim();
        linalg::check_square(&a, n_z, "A")?;
        if b.nrows() != n_z || b.ncols() == 0 {
            return Err(Error::dim(format!("B is {}x{}", b.nrows(), b.ncols())));
        }
        if c_x.shape() != (n_x, n_z) {
            return Err(Error::dim(format!("C_x is {:?}", c_x.shape())));
        }
        if c_y.ncols() != n_z || c_y.nrows() == 0 {
            return Err(Error::dim(format!("C_y is {:?}", c_y.shape())));
        }
        let all = [&a, &b, &c_x, &c_y];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("non-finite model entry".into()));
        }
        Ok(Self {
            a,
            b,
            c_x,
            c_y,
            lifting,
        })
    }

    /// Replaces `C_y` by `C C_x`.
    pub fn with_output_matrix(self, output_matrix: &DMatrix<f64>) -> Result<Self> {
        if output_matrix.ncols() != self.n_x() {
            return Err(Error::dim("output matrix width differs from n_x"));
        }
        let c_y = output_matrix * &self.c_x;
        Self::from_parts(self.a, self.b, self.c_x, c_y, self.lifting)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c_x(&self) -> &DMatrix<f64> {
        &self.c_x
    }
    pub fn c_y(&self) -> &DMatrix<f64> {
        &self.c_y
    }
    pub fn lifting(&self) -> &LiftingSpec {
        &self.lifting
    }
    pub fn n_x(&self) -> usize {
        self.c_x.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c_y.nrows()
    }
    pub fn n_z(&self) -> usize {
        self.a.nrows()
    }

    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.lifting.lift(x)
    }

    pub fn predict(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(z, self.n_z(), "z")?;
        linalg::check_len(u, self.n_u(), "u")?;
        Ok(&self.a * z + &self.b * u)
    }

    pub fn decode(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(z, self.n_z(), "z")?;
        Ok(&self.c_x * z)
    }

    pub fn output(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(z, self.n_z(), "z")?;
        Ok(&self.c_y * z)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            n_x: self.n_x(),
            n_u: self.n_u(),
            n_y: self.n_y(),
            n_z: self.n_z(),
            lifting: self.lifting.lifting().clone(),
            a: to_rows(&self.a),
            b: to_rows(&self.b),
            c_x: to_rows(&self.c_x),
            c_y: to_rows(&self.c_y),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        let lifting = LiftingSpec::new(doc.n_x, doc.lifting)?;
        if lifting.lifted_dim() != doc.n_z {
            return Err(Error::dim(format!(
                "lifting produces {} coordinates, document declares n_z = {}",
                lifting.lifted_dim(),
                doc.n_z
            )));
        }
        let model = Self::from_parts(
            from_rows(&doc.a, Some(doc.n_z))?,
            from_rows(&doc.b, Some(doc.n_u))?,
            from_rows(&doc.c_x, Some(doc.n_z))?,
            from_rows(&doc.c_y, Some(doc.n_z))?,
            lifting,
        )?;
        if model.n_u() != doc.n_u || model.n_y() != doc.n_y {
            return Err(Error::dim("declared n_u / n_y disagree with matrices"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    n_x: usize,
    n_u: usize,
    n_y: usize,
    n_z: usize,
    lifting: Lifting,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C_x")]
    c_x: Vec<Vec<f64>>,
    #[serde(rename = "C_y")]
    c_y: Vec<Vec<f64>>,
}

/// One recorded trajectory: `states.len() == inputs.len() + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryData {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryData {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let data = Self { trajectories };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let (Some(n_x), Some(n_u)) = (self.state_dim(), self.input_dim()) else {
            return Ok(());
        };
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.states.len() != t.inputs.len() + 1 {
                return Err(Error::dim(format!(
                    "trajectory {i}: {} states for {} inputs",
                    t.states.len(),
                    t.inputs.len()
                )));
            }
            if t.states.iter().any(|x| x.len() != n_x) || t.inputs.iter().any(|u| u.len() != n_u)
            {
                return Err(Error::dim(format!("trajectory {i}: inconsistent vector sizes")));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.trajectories
            .iter()
            .find_map(|t| t.states.first())
            .map(|x| x.len())
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.trajectories
            .iter()
            .find_map(|t| t.inputs.first())
            .map(|u| u.len())
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.inputs.len()).sum()
    }

    /// Iterates `(x_k, u_k, x_{k+1})` in trajectory order.
    pub fn transitions(
        &self,
    ) -> impl Iterator<Item = (&DVector<f64>, &DVector<f64>, &DVector<f64>)> + '_ {
        self.trajectories.iter().flat_map(|t| {
            t.inputs
                .iter()
                .enumerate()
                .map(move |(k, u)| (&t.states[k], u, &t.states[k + 1]))
        })
    }

    /// Splits off the last `fraction` of trajectories (at least one when
    /// there are two or more) as a held-out set.
    pub fn split(&self, fraction: f64) -> (TrajectoryData, TrajectoryData) {
        let n = self.trajectories.len();
        let mut held = ((n as f64) * fraction).round() as usize;
        if n >= 2 {
            held = held.clamp(1, n - 1);
        } else {
            held = 0;
        }
        let (train, test) = self.trajectories.split_at(n - held);
        (
            TrajectoryData {
                trajectories: train.to_vec(),
            },
            TrajectoryData {
                trajectories: test.to_vec(),
            },
        )
    }
}

/// Bounded model-error sets: `w` acts on the lifted state, `v` on the decoded
/// state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    pub w: Zonotope,
    pub v: Zonotope,
}

impl DisturbanceModel {
    pub fn new(w: Zonotope, v: Zonotope) -> Result<Self> {
        for (name, z) in [("W", &w), ("V", &v)] {
            if !z.contains_origin() {
                return Err(Error::InvalidParameter(format!(
                    "disturbance set {name} must contain the origin"
                )));
            }
        }
        Ok(Self { w, v })
    }

    pub fn zero(n_z: usize, n_x: usize) -> Self {
        Self {
            w: Zonotope::point(DVector::zeros(n_z)),
            v: Zonotope::point(DVector::zeros(n_x)),
        }
    }

    /// Same sets with every generator multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w: self.w.scaled(factor),
            v: self.v.scaled(factor),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_model() -> KoopmanModel {
        let (l, m) = (-0.1, 2.0);
        let a = DMatrix::from_row_slice(3, 3, &[l, 0.0, 0.0, 0.0, m, l * l - m, 0.0, 0.0, l * l]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let lifting = LiftingSpec::new(
            2,
            Lifting::Explicit {
                exponents: vec![vec![2, 0]],
                features: vec![],
            },
        )
        .unwrap();
        KoopmanModel::new(a, b, &DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), lifting).unwrap()
    }

    #[test]
    fn predict_examples() {
        let model = example_model();
        let z = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let u = DVector::from_vec(vec![-1.0]);
        assert_eq!(model.predict(&z, &u).unwrap(), z);
        let z = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let u0 = DVector::zeros(1);
        assert_eq!(model.predict(&z, &u0).unwrap().as_slice(), &[-0.1, 0.0, 0.0]);
        assert_eq!(
            model.predict(&DVector::zeros(3), &u0).unwrap(),
            DVector::zeros(3)
        );
        assert!(model.predict(&DVector::zeros(2), &u0).is_err());
    }

    #[test]
    fn decode_and_output() {
        let model = example_model();
        let z = DVector::from_vec(vec![2.0, 3.0, 4.0]);
        assert_eq!(model.decode(&z).unwrap().as_slice(), &[2.0, 3.0]);
        assert_eq!(model.output(&DVector::from_vec(vec![0.0, 1.0, 0.0])).unwrap()[0], 1.0);
        assert_eq!(model.output(&DVector::zeros(3)).unwrap()[0], 0.0);
        let x = DVector::from_vec(vec![-0.7, 1.3]);
        assert_eq!(model.decode(&model.lift(&x).unwrap()).unwrap(), x);
        assert!(model.decode(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn output_matches_c_times_decode() {
        let model = example_model();
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        for i in 0..20 {
            let t = i as f64 * 0.37;
            let z = DVector::from_vec(vec![t.sin(), (2.0 * t).cos(), t - 3.0]);
            let lhs = model.output(&z).unwrap();
            let rhs = &c * model.decode(&z).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let model = example_model();
        let mut a = model.a().clone();
        a[(0, 1)] = 0.1 + 0.2;
        a[(2, 0)] = 1.0 / 3.0;
        let model = KoopmanModel::from_parts(
            a,
            model.b().clone(),
            model.c_x().clone(),
            model.c_y().clone(),
            model.lifting().clone(),
        )
        .unwrap();
        let text = model.to_json().unwrap();
        assert!(text.contains("\"C_x\""));
        let back = KoopmanModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        for (x, y) in back.a().iter().zip(model.a().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn json_rejects_inconsistent_dimensions() {
        let text = example_model().to_json().unwrap().replace("\"n_z\": 3", "\"n_z\": 4");
        assert!(KoopmanModel::from_json(&text).is_err());
    }
}
