use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{Feature, KoopmanModel, Lifting, LiftingSpec};

/// Benchmark plants with closed-form dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    /// `x1+ = lambda x1`, `x2+ = mu x2 + (lambda^2 - mu) x1^2 + u`, `y = x2`.
    NumericalExample { lambda: f64, mu: f64 },
    /// Kinematic unicycle, explicit Euler with step `dt`; `y = (p_x, p_y)`.
    Unicycle { dt: f64 },
}

impl Plant {
    pub fn numerical_example() -> Self {
        Plant::NumericalExample {
            lambda: -0.1,
            mu: 2.0,
        }
    }

    pub fn unicycle() -> Self {
        Plant::Unicycle { dt: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Plant::NumericalExample { lambda, mu } if lambda.is_finite() && mu.is_finite() => Ok(()),
            Plant::Unicycle { dt } if dt > 0.0 && dt.is_finite() => Ok(()),
            _ => Err(Error::InvalidParameter(format!("invalid plant parameters {self:?}"))),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::NumericalExample { .. } => 2,
            Plant::Unicycle { .. } => 3,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::NumericalExample { .. } => 1,
            Plant::Unicycle { .. } => 2,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_matrix().nrows()
    }

    pub fn output_matrix(&self) -> DMatrix<f64> {
        match self {
            Plant::NumericalExample { .. } => DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            Plant::Unicycle { .. } => DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        }
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        self.output_matrix() * x
    }

    /// Nominal (disturbance-free) transition.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match *self {
            Plant::NumericalExample { lambda, mu } => DVector::from_vec(vec![
                lambda * x[0],
                mu * x[1] + (lambda * lambda - mu) * x[0] * x[0] + u[0],
            ]),
            Plant::Unicycle { dt } => DVector::from_vec(vec![
                x[0] + dt * u[0] * x[2].cos(),
                x[1] + dt * u[0] * x[2].sin(),
                x[2] + dt * u[1],
            ]),
        }
    }

    /// Default dictionary: `(x1, x2, x1^2)` for the numerical example, and
    /// all monomials up to degree two of `(p_x, p_y, sin th, cos th)` for the
    /// unicycle.
    pub fn default_lifting(&self) -> LiftingSpec {
        let lifting = match self {
            Plant::NumericalExample { .. } => Lifting::Explicit {
                exponents: vec![vec![2, 0]],
                features: Vec::new(),
            },
            Plant::Unicycle { .. } => Lifting::Polynomial {
                max_degree: 2,
                features: vec![
                    Feature::Identity(0),
                    Feature::Identity(1),
                    Feature::Sin(2),
                    Feature::Cos(2),
                ],
            },
        };
        LiftingSpec::new(self.state_dim(), lifting).expect("default lifting is valid")
    }

    /// The numerical example is exactly linear in `(x1, x2, x1^2)`.
    pub fn exact_model(&self) -> Result<KoopmanModel> {
        match *self {
            Plant::NumericalExample { lambda, mu } => {
                let a = DMatrix::from_row_slice(
                    3,
                    3,
                    &[lambda, 0.0, 0.0, 0.0, mu, lambda * lambda - mu, 0.0, 0.0, lambda * lambda],
                );
                let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
                KoopmanModel::new(a, b, &self.output_matrix(), self.default_lifting())
            }
            Plant::Unicycle { .. } => Err(Error::InvalidParameter(
                "the unicycle has no exact finite lifting; fit a model instead".into(),
            )),
        }
    }
}
