//! Single-document scenario description and its assembly into a ready
//! controller, schedule and simulation options.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{GridSpec, KtmpcConfig, KtmpcController};
use crate::error::{Error, Result};
use crate::gain::{dlqr, GainResult};
use crate::koopman::{
    estimate_disturbance_sets, fit_edmd, read_trajectories_csv, DisturbanceModel, KoopmanModel, Lifting, LiftingSpec,
    TrajectoryData, DEFAULT_RIDGE,
};
use crate::linalg::from_rows;
use crate::sets::{tighten_constraints, HPolytope, TighteningSchedule, Zonotope};
use crate::sim::{generate_training_data, Feedback, Plant, ReferenceSchedule, SimOptions};

/// Polytope given either as a box or in halfspace form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolytopeSpec {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Halfspaces(HPolytope),
}

impl PolytopeSpec {
    pub fn build(&self) -> Result<HPolytope> {
        let p = match self {
            PolytopeSpec::Box { lower, upper } => {
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(Error::InvalidParameter("box with lower > upper".into()));
                }
                HPolytope::from_box(lower, upper)?
            }
            PolytopeSpec::Halfspaces(p) => p.clone(),
        };
        HPolytope::constraint_set(p.normals().clone(), p.offsets().clone())
    }
}

/// Zonotope given either as a symmetric box or by center and generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZonotopeSpec {
    Box {
        half_widths: Vec<f64>,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    Generators(Zonotope),
}

impl ZonotopeSpec {
    pub fn build(&self) -> Result<Zonotope> {
        match self {
            ZonotopeSpec::Box { half_widths, center } => {
                if half_widths.iter().any(|h| h.is_nan() || *h < 0.0) {
                    return Err(Error::InvalidParameter("half widths must be non-negative".into()));
                }
                let c = center.clone().unwrap_or_else(|| vec![0.0; half_widths.len()]);
                if c.len() != half_widths.len() {
                    return Err(Error::dim("box center and half widths differ in length"));
                }
                Zonotope::new(
                    DVector::from_vec(c),
                    DMatrix::from_diagonal(&DVector::from_column_slice(half_widths)),
                )
            }
            ZonotopeSpec::Generators(z) => Ok(z.clone()),
        }
    }
}

/// Weight matrix as `c I`, a diagonal, or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl WeightSpec {
    pub fn build(&self, n: usize, name: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            WeightSpec::Scalar(c) => DMatrix::identity(n, n) * *c,
            WeightSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::dim(format!("{name} diagonal has {} entries, expected {n}", d.len())));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            WeightSpec::Full(rows) => {
                let m = from_rows(rows, Some(n))?;
                crate::linalg::check_square(&m, n, name)?;
                m
            }
        };
        Ok(m)
    }
}

fn identity_weight() -> WeightSpec {
    WeightSpec::Scalar(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrSpec {
    #[serde(rename = "Qk", default = "identity_weight")]
    pub q_k: WeightSpec,
    #[serde(rename = "Rk", default = "identity_weight")]
    pub r_k: WeightSpec,
}

impl Default for LqrSpec {
    fn default() -> Self {
        Self {
            q_k: identity_weight(),
            r_k: identity_weight(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Q", default = "identity_weight")]
    pub q: WeightSpec,
    #[serde(rename = "R", default = "identity_weight")]
    pub r: WeightSpec,
    pub s: f64,
    #[serde(default)]
    pub lqr: LqrSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpec {
    fn zonotope(&self) -> Result<Zonotope> {
        if self.lower.len() != self.upper.len() || self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidParameter("invalid sampling box".into()));
        }
        let c = DVector::from_iterator(self.lower.len(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)));
        let h = DVector::from_iterator(self.lower.len(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)));
        Ok(Zonotope::axis_box(c, &h))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub n_traj: usize,
    pub traj_len: usize,
    pub state_box: BoxSpec,
    pub input_box: BoxSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSpec {
    Path(PathBuf),
    Generate(GenerateSpec),
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Exact lifted model of the numerical example.
    Exact,
    /// Model JSON written by `fit`.
    File { path: PathBuf },
    /// EDMD fit on recorded or generated trajectories.
    Fit {
        data: DataSpec,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
}

fn default_true() -> bool {
    true
}

fn default_inflation() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DisturbanceSpec {
    None,
    /// Declared `W` (lifted) and `V` (state) sets; optionally injected into
    /// the numerical example.
    Declared {
        w: ZonotopeSpec,
        v: ZonotopeSpec,
        #[serde(default = "default_true")]
        inject: bool,
    },
    /// Residual boxes over the fitting data.
    Estimate {
        #[serde(default = "default_inflation")]
        inflation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub state: PolytopeSpec,
    pub input: PolytopeSpec,
}

fn default_scale() -> f64 {
    1.0
}

fn default_settle() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub plant: Plant,
    /// Lifting for fitted models; defaults to the plant's dictionary.
    #[serde(default)]
    pub lifting: Option<Lifting>,
    pub model: ModelSpec,
    pub disturbance: DisturbanceSpec,
    /// Amplitude of injected disturbances relative to the declared sets.
    #[serde(default = "default_scale")]
    pub injection_scale: f64,
    #[serde(default)]
    pub feedback: Feedback,
    pub constraints: ConstraintSpec,
    pub controller: ControllerSpec,
    pub reference: ReferenceSchedule,
    pub initial_state: Vec<f64>,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_settle")]
    pub settle_window: usize,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Everything needed to run a scenario.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub plant: Plant,
    pub model: KoopmanModel,
    pub training_data: Option<TrajectoryData>,
    /// Sets the constraints are tightened against.
    pub disturbances: DisturbanceModel,
    pub gain: GainResult,
    pub config: KtmpcConfig,
    pub state_constraints: HPolytope,
    pub input_constraints: HPolytope,
    pub options: SimOptions,
}

impl Prepared {
    pub fn tighten(&self) -> Result<TighteningSchedule> {
        tighten_constraints(
            &self.state_constraints,
            &self.input_constraints,
            &self.disturbances,
            self.model.a(),
            self.model.b(),
            &self.gain.k,
            self.model.c_x(),
            self.config.horizon,
        )
    }

    pub fn controller(&self) -> Result<KtmpcController> {
        KtmpcController::new(self.model.clone(), self.config.clone(), self.tighten()?)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn lifting_spec(&self) -> Result<LiftingSpec> {
        match &self.lifting {
            Some(l) => LiftingSpec::new(self.plant.state_dim(), l.clone()),
            None => Ok(self.plant.default_lifting()),
        }
    }

    /// Checks paths and cross-field dimensions without any numerics beyond
    /// set validation.
    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        self.plant.validate()?;
        let (n_x, n_u, n_y) = (self.plant.state_dim(), self.plant.input_dim(), self.plant.output_dim());
        let lifting = self.lifting_spec()?;
        match &self.model {
            ModelSpec::Exact => {
                if self.lifting.is_some() {
                    return Err(Error::InvalidParameter("the exact model fixes its own lifting".into()));
                }
                self.plant.exact_model()?;
            }
            ModelSpec::File { path } => {
                let p = resolve(base_dir, path);
                if !p.exists() {
                    return Err(Error::io(&p, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
            }
            ModelSpec::Fit { data, ridge } => {
                if ridge.is_nan() || *ridge < 0.0 {
                    return Err(Error::InvalidParameter("ridge must be non-negative".into()));
                }
                match data {
                    DataSpec::Path(path) => {
                        let p = resolve(base_dir, path);
                        if !p.exists() {
                            return Err(Error::io(&p, std::io::Error::from(std::io::ErrorKind::NotFound)));
                        }
                    }
                    DataSpec::Generate(g) => {
                        if g.state_box.lower.len() != n_x || g.input_box.lower.len() != n_u {
                            return Err(Error::dim("sampling boxes do not match the plant"));
                        }
                    }
                }
            }
        }
        if let DisturbanceSpec::Declared { w, v, .. } = &self.disturbance {
            if w.build()?.dim() != lifting.lifted_dim() || v.build()?.dim() != n_x {
                return Err(Error::dim("declared W must live in the lifted space and V in the state space"));
            }
        }
        if let DisturbanceSpec::Estimate { .. } = &self.disturbance {
            if matches!(self.model, ModelSpec::Exact | ModelSpec::File { .. }) {
                return Err(Error::InvalidParameter("estimated disturbances need fitting data".into()));
            }
        }
        if !(self.injection_scale >= 0.0 && self.injection_scale.is_finite()) {
            return Err(Error::InvalidParameter("injection scale must be non-negative".into()));
        }
        if self.constraints.state.build()?.dim() != n_x || self.constraints.input.build()?.dim() != n_u {
            return Err(Error::dim("constraint sets do not match the plant"));
        }
        self.reference.validate(n_y)?;
        if self.initial_state.len() != n_x {
            return Err(Error::dim("initial state does not match the plant"));
        }
        if self.controller.horizon == 0 {
            return Err(Error::InvalidParameter("N must be >= 1".into()));
        }
        Ok(())
    }

    fn training_data(&self, base_dir: &Path) -> Result<Option<TrajectoryData>> {
        match &self.model {
            ModelSpec::Fit { data, .. } => Ok(Some(match data {
                DataSpec::Path(p) => read_trajectories_csv(resolve(base_dir, p))?,
                DataSpec::Generate(g) => generate_training_data(
                    &self.plant,
                    g.n_traj,
                    g.traj_len,
                    &g.input_box.zonotope()?,
                    &g.state_box.zonotope()?,
                    g.seed,
                )?,
            })),
            _ => Ok(None),
        }
    }

    /// Builds the model, disturbance sets, gain and controller settings.
    /// Relative paths are resolved against `base_dir`.
    pub fn prepare(&self, base_dir: &Path) -> Result<Prepared> {
        self.validate(base_dir)?;
        let data = self.training_data(base_dir)?;
        let model = match &self.model {
            ModelSpec::Exact => self.plant.exact_model()?,
            ModelSpec::File { path } => KoopmanModel::load(resolve(base_dir, path))?,
            ModelSpec::Fit { ridge, .. } => {
                let d = data.as_ref().expect("fit has data");
                fit_edmd(d, &self.lifting_spec()?, *ridge)?.with_output_matrix(&self.plant.output_matrix())?
            }
        };
        if model.n_x() != self.plant.state_dim() || model.n_u() != self.plant.input_dim() || model.n_y() != self.plant.output_dim() {
            return Err(Error::dim("model does not match the plant"));
        }
        let (n_z, n_x) = (model.n_z(), model.n_x());
        let (disturbances, injected) = match &self.disturbance {
            DisturbanceSpec::None => (DisturbanceModel::zero(n_z, n_x), None),
            DisturbanceSpec::Declared { w, v, inject } => {
                let d = DisturbanceModel::new(w.build()?, v.build()?)?;
                if d.w.dim() != n_z {
                    return Err(Error::dim("declared W does not match the lifted dimension"));
                }
                let inj = (*inject && matches!(self.plant, Plant::NumericalExample { .. }))
                    .then(|| d.scaled(self.injection_scale));
                (d, inj)
            }
            DisturbanceSpec::Estimate { inflation } => (
                estimate_disturbance_sets(&model, data.as_ref().expect("checked in validate"), *inflation)?,
                None,
            ),
        };
        let c = &self.controller;
        let n_u = model.n_u();
        let gain = dlqr(
            model.a(),
            model.b(),
            &c.lqr.q_k.build(n_z, "Qk")?,
            &c.lqr.r_k.build(n_u, "Rk")?,
            1e-12,
            100_000,
        )?;
        let config = KtmpcConfig::new(c.horizon, c.q.build(n_z, "Q")?, c.r.build(n_u, "R")?, c.s, gain.k.clone())?;
        let mut options = SimOptions::new(DVector::from_column_slice(&self.initial_state), self.steps);
        options.seed = self.seed;
        options.disturbances = injected;
        options.feedback = self.feedback;
        Ok(Prepared {
            plant: self.plant.clone(),
            model,
            training_data: data,
            disturbances,
            gain,
            config,
            state_constraints: self.constraints.state.build()?,
            input_constraints: self.constraints.input.build()?,
            options,
        })
    }

    /// Scenario A1: numerical example, exact model, no disturbance,
    /// references 1, -1, 2 held for `steps_per_segment` steps each.
    pub fn numerical_nominal(steps_per_segment: usize) -> Self {
        Scenario {
            plant: Plant::numerical_example(),
            lifting: None,
            model: ModelSpec::Exact,
            disturbance: DisturbanceSpec::None,
            injection_scale: 1.0,
            feedback: Feedback::Relift,
            constraints: ConstraintSpec {
                state: PolytopeSpec::Box {
                    lower: vec![-5.0, -5.0],
                    upper: vec![5.0, 5.0],
                },
                input: PolytopeSpec::Box {
                    lower: vec![-3.0],
                    upper: vec![3.0],
                },
            },
            controller: ControllerSpec {
                horizon: 10,
                q: WeightSpec::Scalar(1.0),
                r: WeightSpec::Scalar(1.0),
                s: 100.0,
                lqr: LqrSpec::default(),
            },
            reference: ReferenceSchedule::piecewise(&[vec![1.0], vec![-1.0], vec![2.0]], steps_per_segment),
            initial_state: vec![0.5, 0.0],
            steps: 3 * steps_per_segment,
            seed: 0,
            settle_window: 20,
            grid: None,
            output_dir: None,
        }
    }

    /// Scenario A2: A1 with `w` in the 0.2-box and `v` in the 0.1-box.
    pub fn numerical_disturbed(steps_per_segment: usize) -> Self {
        let mut s = Self::numerical_nominal(steps_per_segment);
        s.disturbance = DisturbanceSpec::Declared {
            w: ZonotopeSpec::Box {
                half_widths: vec![0.2; 3],
                center: None,
            },
            v: ZonotopeSpec::Box {
                half_widths: vec![0.1; 2],
                center: None,
            },
            inject: true,
        };
        s
    }

    /// Unicycle square course: EDMD model from 2000 generated trajectories,
    /// six waypoints on a 2 m square, 0.35 m switch radius.
    pub fn unicycle_square() -> Self {
        Scenario {
            plant: Plant::unicycle(),
            lifting: None,
            model: ModelSpec::Fit {
                data: DataSpec::Generate(GenerateSpec {
                    n_traj: 2000,
                    traj_len: 10,
                    state_box: BoxSpec {
                        lower: vec![-1.0, -1.0, -PI],
                        upper: vec![3.0, 3.0, PI],
                    },
                    input_box: BoxSpec {
                        lower: vec![0.0, -2.0],
                        upper: vec![1.0, 2.0],
                    },
                    seed: 7,
                }),
                ridge: DEFAULT_RIDGE,
            },
            disturbance: DisturbanceSpec::None,
            injection_scale: 1.0,
            feedback: Feedback::Relift,
            constraints: ConstraintSpec {
                state: PolytopeSpec::Box {
                    lower: vec![-5.0, -5.0, -4.0 * PI],
                    upper: vec![5.0, 5.0, 4.0 * PI],
                },
                input: PolytopeSpec::Box {
                    lower: vec![0.0, -2.0],
                    upper: vec![1.0, 2.0],
                },
            },
            controller: ControllerSpec {
                horizon: 10,
                q: WeightSpec::Scalar(1.0),
                r: WeightSpec::Scalar(0.1),
                s: 100.0,
                lqr: LqrSpec::default(),
            },
            reference: ReferenceSchedule::Waypoint {
                points: vec![
                    vec![1.0, 0.0],
                    vec![2.0, 0.0],
                    vec![2.0, 1.0],
                    vec![2.0, 2.0],
                    vec![0.0, 2.0],
                    vec![0.0, 0.0],
                ],
                switch_radius: 0.35,
            },
            initial_state: vec![0.0, 0.0, 0.0],
            steps: 2400,
            seed: 0,
            settle_window: 20,
            grid: None,
            output_dir: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_round_trip_and_prepare() {
        for s in [Scenario::numerical_nominal(100), Scenario::numerical_disturbed(100)] {
            let text = s.to_json().unwrap();
            let back = Scenario::from_json(&text).unwrap();
            assert_eq!(back, s);
            let p = back.prepare(Path::new(".")).unwrap();
            let sched = p.tighten().unwrap();
            assert!(sched.is_nested());
        }
    }

    #[test]
    fn shorthand_forms() {
        let w: WeightSpec = serde_json::from_str("2.0").unwrap();
        assert_eq!(w.build(2, "Q").unwrap(), DMatrix::identity(2, 2) * 2.0);
        let w: WeightSpec = serde_json::from_str("[1.0, 3.0]").unwrap();
        assert_eq!(w.build(2, "Q").unwrap()[(1, 1)], 3.0);
        assert!(w.build(3, "Q").is_err());
        let w: WeightSpec = serde_json::from_str("[[1.0, 0.0], [0.0, 2.0]]").unwrap();
        assert_eq!(w.build(2, "Q").unwrap()[(1, 1)], 2.0);
        let z: ZonotopeSpec = serde_json::from_str(r#"{"half_widths": [0.2, 0.2]}"#).unwrap();
        assert_eq!(z.build().unwrap(), Zonotope::cube(2, 0.2));
        let z: ZonotopeSpec = serde_json::from_str(r#"{"center": [0.0], "generators": [[0.5, 0.1]]}"#).unwrap();
        assert_eq!(z.build().unwrap().order(), 2);
        let p: PolytopeSpec = serde_json::from_str(r#"{"normals": [[1.0], [-1.0]], "offsets": [1.0, 2.0]}"#).unwrap();
        assert!(p.build().unwrap().contains(&DVector::from_vec(vec![-2.0])));
        let p: PolytopeSpec = serde_json::from_str(r#"{"normals": [[1.0]], "offsets": [1.0]}"#).unwrap();
        assert!(p.build().is_err());
    }

    #[test]
    fn dimension_errors_are_caught_before_numerics() {
        let mut s = Scenario::numerical_nominal(10);
        s.initial_state = vec![0.0];
        assert!(matches!(s.validate(Path::new(".")), Err(Error::Dimension(_))));
        let mut s = Scenario::numerical_nominal(10);
        s.model = ModelSpec::File {
            path: PathBuf::from("definitely/missing.json"),
        };
        let err = s.validate(Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("definitely/missing.json"));
    }
}
