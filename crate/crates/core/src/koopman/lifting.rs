//! Identity-augmented lifting functions `psi(x) = [x, phi(x)]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar pre-feature of the raw state that monomials are built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Identity(usize),
    Sin(usize),
    Cos(usize),
}

impl Feature {
    fn index(self) -> usize {
        match self {
            Feature::Identity(i) | Feature::Sin(i) | Feature::Cos(i) => i,
        }
    }

    fn eval(self, x: &[f64]) -> f64 {
        match self {
            Feature::Identity(i) => x[i],
            Feature::Sin(i) => x[i].sin(),
            Feature::Cos(i) => x[i].cos(),
        }
    }
}

/// Dictionary used for the `phi` part of the lifting.
///
/// Monomials are taken over the pre-feature vector (the raw state when
/// `features` is empty). Degree-one monomials of identity features are
/// dropped since they already appear verbatim in the first `n_x` slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Lifting {
    Polynomial {
        max_degree: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        features: Vec<Feature>,
    },
    Rbf {
        centers: Vec<Vec<f64>>,
        width: f64,
    },
    Explicit {
        exponents: Vec<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        features: Vec<Feature>,
    },
}

/// A monomial as sparse (feature index, power) pairs.
type Monomial = Vec<(usize, u32)>;

#[derive(Clone, Debug, PartialEq)]
enum Terms {
    Monomials {
        features: Vec<Feature>,
        monomials: Vec<Monomial>,
    },
    Rbf {
        centers: Vec<DVector<f64>>,
        inv_width_sq: f64,
    },
}

/// Validated lifting with its evaluation plan.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftingSpec {
    state_dim: usize,
    lifting: Lifting,
    terms: Terms,
}

impl LiftingSpec {
    pub fn new(state_dim: usize, lifting: Lifting) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        let terms = match &lifting {
            Lifting::Polynomial {
                max_degree,
                features,
            } => {
                if *max_degree < 1 {
                    return Err(Error::InvalidParameter("max_degree must be >= 1".into()));
                }
                let features = resolve_features(state_dim, features)?;
                let mut monomials = Vec::new();
                for degree in 1..=*max_degree as u32 {
                    graded_monomials(features.len(), degree, &mut monomials);
                }
                monomials.retain(|m| !is_raw_coordinate(&features, m));
                Terms::Monomials {
                    features,
                    monomials,
                }
            }
            Lifting::Explicit {
                exponents,
                features,
            } => {
                let features = resolve_features(state_dim, features)?;
                let mut monomials = Vec::with_capacity(exponents.len());
                for e in exponents {
                    if e.len() != features.len() {
                        return Err(Error::dim(format!(
                            "exponent vector of length {} for {} features",
                            e.len(),
                            features.len()
                        )));
                    }
                    let m: Monomial = e
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0)
                        .map(|(i, &p)| (i, p))
                        .collect();
                    if m.is_empty() {
                        return Err(Error::InvalidParameter(
                            "constant monomial in explicit lifting".into(),
                        ));
                    }
                    if is_raw_coordinate(&features, &m) {
                        return Err(Error::InvalidParameter(
                            "explicit monomial duplicates a raw state coordinate".into(),
                        ));
                    }
                    monomials.push(m);
                }
                Terms::Monomials {
                    features,
                    monomials,
                }
            }
            Lifting::Rbf { centers, width } => {
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(Error::InvalidParameter("rbf width must be positive".into()));
                }
                if let Some(c) = centers.iter().find(|c| c.len() != state_dim) {
                    return Err(Error::dim(format!(
                        "rbf center of length {} for state dimension {state_dim}",
                        c.len()
                    )));
                }
                Terms::Rbf {
                    centers: centers.iter().map(|c| DVector::from_column_slice(c)).collect(),
                    inv_width_sq: 1.0 / (width * width),
                }
            }
        };
        Ok(Self {
            state_dim,
            lifting,
            terms,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn lifted_dim(&self) -> usize {
        self.state_dim
            + match &self.terms {
                Terms::Monomials { monomials, .. } => monomials.len(),
                Terms::Rbf { centers, .. } => centers.len(),
            }
    }

    pub fn lifting(&self) -> &Lifting {
        &self.lifting
    }

    /// Writes `psi(x)` into `out` (length `lifted_dim`).
    pub fn lift_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.state_dim;
        out[..n].copy_from_slice(x);
        match &self.terms {
            Terms::Monomials {
                features,
                monomials,
            } => {
                let base: Vec<f64> = features.iter().map(|f| f.eval(x)).collect();
                for (slot, m) in out[n..].iter_mut().zip(monomials) {
                    *slot = m.iter().map(|&(i, p)| base[i].powi(p as i32)).product();
                }
            }
            Terms::Rbf {
                centers,
                inv_width_sq,
            } => {
                for (slot, c) in out[n..].iter_mut().zip(centers) {
                    let d2: f64 = c.iter().zip(x).map(|(ci, xi)| (xi - ci).powi(2)).sum();
                    *slot = (-d2 * inv_width_sq).exp();
                }
            }
        }
    }

    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::dim(format!(
                "state of length {} for lifting over {} states",
                x.len(),
                self.state_dim
            )));
        }
        let mut out = DVector::zeros(self.lifted_dim());
        self.lift_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }
}

fn resolve_features(state_dim: usize, features: &[Feature]) -> Result<Vec<Feature>> {
    if features.is_empty() {
        return Ok((0..state_dim).map(Feature::Identity).collect());
    }
    if let Some(f) = features.iter().find(|f| f.index() >= state_dim) {
        return Err(Error::dim(format!(
            "feature {f:?} out of range for state dimension {state_dim}"
        )));
    }
    Ok(features.to_vec())
}

fn is_raw_coordinate(features: &[Feature], m: &Monomial) -> bool {
    matches!(m.as_slice(), [(i, 1)] if matches!(features[*i], Feature::Identity(_)))
}

/// Appends all monomials of exactly `degree` over `m` variables in graded
/// lexicographic order (x0^d first).
fn graded_monomials(m: usize, degree: u32, out: &mut Vec<Monomial>) {
    fn rec(var: usize, m: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        if var == m - 1 {
            cur[var] = left;
            out.push(
                cur.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(i, &p)| (i, p))
                    .collect(),
            );
            return;
        }
        for p in (0..=left).rev() {
            cur[var] = p;
            rec(var + 1, m, left - p, cur, out);
        }
        cur[var] = 0;
    }
    if m == 0 {
        return;
    }
    let mut cur = vec![0; m];
    rec(0, m, degree, &mut cur, out);
}
