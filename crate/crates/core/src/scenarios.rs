//! Built-in example systems and the JSON scenario document format.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equilibria::SearchGrid;
use crate::error::{Error, Result};
use crate::model::{
    CertificatePair, ComparisonFunction, ComparisonKind, ControlSystem, DynamicsModel, Quadratic, ScalarCertificate, State,
};
use crate::modified::{sontag_nominal, transform, NominalController, TransformedModel};
use crate::sampling::{Grid, SampleConfig, SearchBox};
use crate::sim::{ClosedLoop, ControllerMode};

pub const BUILTIN: &[&str] = &[
    "example1",
    "example2",
    "example3",
    "example5",
    "example6",
    "example5-noobstacle",
    "zero-dynamics",
];

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: ControlSystem,
    pub nominal: Option<NominalController>,
    /// Inverse of a class-K γ1 with `γ1(‖x‖) ≤ γ(V(x))`.
    pub gamma1_inverse: Option<ComparisonFunction>,
    /// Known supremum of `L_fV / ‖L_gV‖²`.
    pub v_bar: Option<f64>,
    pub p_defaults: Vec<f64>,
    pub starts: Vec<State>,
    pub bounds: SearchBox,
    pub grid_points: usize,
}

/// `k` points evenly spaced on a circle of radius `r`, starting on the
/// positive first axis.
pub fn ring(k: usize, r: f64) -> Vec<State> {
    (0..k)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / k as f64;
            dvector![r * th.cos(), r * th.sin()]
        })
        .collect()
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn certs(&self) -> &CertificatePair {
        &self.system.certs
    }

    pub fn grid(&self) -> Grid {
        Grid::uniform(self.bounds.clone(), self.grid_points).expect("scenario grid validated at load")
    }

    pub fn search_grid(&self) -> SearchGrid {
        SearchGrid::new(self.grid())
    }

    /// Verification sample over the scenario box.
    pub fn sampling(&self, samples: usize, seed: u64) -> SampleConfig {
        SampleConfig::new(self.bounds.clone(), samples, seed)
    }

    /// The nominal controller, falling back to Sontag's formula.
    pub fn nominal_or_sontag(&self) -> Result<NominalController> {
        match &self.nominal {
            Some(n) => Ok(n.clone()),
            None => sontag_nominal(&self.system.model, &self.system.certs, &self.sampling(10_000, 0)),
        }
    }

    pub fn transformed(&self) -> Result<TransformedModel> {
        Ok(transform(&self.system.model, self.nominal_or_sontag()?))
    }

    /// The closed loop `ẋ = f′ + g·u′` seen by the modified QP.
    pub fn transformed_system(&self) -> Result<ControlSystem> {
        Ok(self.transformed()?.system(&self.system.certs))
    }

    pub fn closed_loop(&self, mode: ControllerMode) -> Result<ClosedLoop> {
        Ok(match mode {
            ControllerMode::Original => ClosedLoop::Original(self.system.clone()),
            ControllerMode::Modified => ClosedLoop::Modified {
                transformed: self.transformed()?,
                certs: self.system.certs.clone(),
            },
        })
    }
}

fn identity_map(n: usize) -> impl Fn(&State) -> DMatrix<f64> + Send + Sync {
    move |_| DMatrix::identity(n, n)
}

fn linear_drift(a: DMatrix<f64>) -> impl Fn(&State) -> DVector<f64> + Send + Sync {
    move |x| &a * x
}

fn half_norm_clf() -> ScalarCertificate {
    ScalarCertificate::from_quadratic(Quadratic::form(DMatrix::identity(2, 2) * 0.5).unwrap())
}

/// `‖x − (0,4)‖² − 4`.
fn disc_cbf() -> ScalarCertificate {
    ScalarCertificate::from_quadratic(Quadratic::new(DMatrix::identity(2, 2), dvector![0.0, -8.0], 12.0).unwrap())
}

fn constant_cbf(c: f64) -> ScalarCertificate {
    ScalarCertificate::from_quadratic(Quadratic::new(DMatrix::zeros(2, 2), DVector::zeros(2), c).unwrap())
}

fn pair(clf: ScalarCertificate, gamma: f64, cbf: ScalarCertificate, alpha: f64) -> CertificatePair {
    CertificatePair::new(
        clf,
        ComparisonFunction::linear(ComparisonKind::ClassK, gamma).unwrap(),
        cbf,
        ComparisonFunction::linear(ComparisonKind::ExtendedClassK, alpha).unwrap(),
    )
    .unwrap()
}

fn sqrt_two_s() -> ComparisonFunction {
    ComparisonFunction::custom(ComparisonKind::ClassK, |s| (2.0 * s).sqrt())
}

fn single_integrator(name: &str, sign: f64, cbf: ScalarCertificate, p: Vec<f64>) -> Scenario {
    let model = DynamicsModel::new(2, 2, linear_drift(DMatrix::identity(2, 2) * sign), identity_map(2)).unwrap();
    Scenario {
        name: name.into(),
        system: ControlSystem::new(model, pair(half_norm_clf(), 1.0, cbf, 1.0)),
        nominal: None,
        gamma1_inverse: None,
        v_bar: None,
        p_defaults: p,
        starts: ring(16, 6.0),
        bounds: SearchBox::symmetric(2, 8.0).unwrap(),
        grid_points: 321,
    }
}

fn example2_like(name: &str) -> Scenario {
    let model = DynamicsModel::new(
        2,
        1,
        linear_drift(dmatrix![0.0, 1.0; 1.0, 0.0]),
        |_| dmatrix![0.0; 1.0],
    )
    .unwrap();
    let clf = ScalarCertificate::from_quadratic(Quadratic::form(dmatrix![0.625, 0.25; 0.25, 0.5]).unwrap());
    let cbf = ScalarCertificate::from_quadratic(
        Quadratic::new(dmatrix![-0.1, -0.075; -0.075, -0.1], DVector::zeros(2), 4.9).unwrap(),
    );
    Scenario {
        name: name.into(),
        system: ControlSystem::new(model, pair(clf, 3.0 / 7.0, cbf, 1.0)),
        nominal: None,
        gamma1_inverse: None,
        v_bar: None,
        p_defaults: vec![0.1, 1.0, 10.0],
        starts: ring(16, 6.0),
        bounds: SearchBox::symmetric(2, 10.0).unwrap(),
        grid_points: 401,
    }
}

fn builtin(name: &str) -> Option<Scenario> {
    let s = match name {
        "example1" => single_integrator(name, -1.0, disc_cbf(), vec![1.0, 10.0, 100.0]),
        "example2" => example2_like(name),
        "example3" => Scenario {
            gamma1_inverse: Some(sqrt_two_s()),
            v_bar: Some(1.0),
            ..single_integrator(name, 1.0, disc_cbf(), vec![1.0, 10.0, 100.0])
        },
        "example5" | "example5-noobstacle" => {
            let cbf = if name == "example5" { disc_cbf() } else { constant_cbf(1.0) };
            Scenario {
                nominal: Some(NominalController::linear(DMatrix::identity(2, 2) * -2.0)),
                gamma1_inverse: Some(sqrt_two_s()),
                v_bar: Some(1.0),
                ..single_integrator(name, 1.0, cbf, vec![0.1, 1.0, 10.0])
            }
        }
        "example6" => Scenario {
            nominal: Some(NominalController::linear(dmatrix![-2.0, -1.0])),
            ..example2_like(name)
        },
        "zero-dynamics" => {
            let model = DynamicsModel::new(2, 2, |_| DVector::zeros(2), |_| DMatrix::zeros(2, 2)).unwrap();
            Scenario {
                system: ControlSystem::new(model, pair(half_norm_clf(), 1.0, constant_cbf(1.0), 1.0)),
                p_defaults: vec![1.0],
                ..single_integrator(name, 0.0, constant_cbf(1.0), vec![1.0])
            }
        }
        _ => return None,
    };
    Some(s)
}

/// A built-in scenario by name, or a scenario document at the given path.
pub fn load(name_or_path: &str) -> Result<Scenario> {
    if let Some(s) = builtin(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MalformedDocument(format!("{}: {e}", path.display())))?;
        return from_document(&text);
    }
    Err(Error::UnknownScenario(name_or_path.into()))
}

/// One monomial `coeff · Π xᵢ^powersᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

fn eval_poly(terms: &[Term], x: &State) -> f64 {
    terms
        .iter()
        .map(|t| t.coeff * t.powers.iter().zip(x.iter()).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DriftSpec {
    /// `f(x) = A x`, row-major.
    Linear(Vec<Vec<f64>>),
    /// One term list per state component.
    Polynomial(Vec<Vec<Term>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InputMapSpec {
    Constant(Vec<Vec<f64>>),
    /// Row-major `n × m` array of term lists.
    Polynomial(Vec<Vec<Vec<Term>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormSpec {
    /// `V(x) = xᵀ P x`.
    pub quadratic: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub quadratic: Vec<Vec<f64>>,
    #[serde(default)]
    pub linear: Option<Vec<f64>>,
    #[serde(default)]
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub drift: DriftSpec,
    pub input_map: InputMapSpec,
    #[serde(rename = "V")]
    pub v: FormSpec,
    pub gamma: LinearSpec,
    pub h: QuadraticSpec,
    pub alpha: LinearSpec,
    #[serde(default)]
    pub u_nom: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub p_defaults: Vec<f64>,
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub grid: Option<usize>,
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::MalformedDocument(format!("{what} must be {r}×{c}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::MalformedDocument(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn check_terms<'a>(terms: impl Iterator<Item = &'a Term>, n: usize, what: &str) -> Result<()> {
    for t in terms {
        if t.powers.len() != n || !t.coeff.is_finite() {
            return Err(Error::MalformedDocument(format!(
                "{what}: each term needs a finite coeff and {n} powers"
            )));
        }
    }
    Ok(())
}

pub fn from_document(text: &str) -> Result<Scenario> {
    let doc: ScenarioDocument = serde_json::from_str(text).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    build_document(doc)
}

pub fn build_document(doc: ScenarioDocument) -> Result<Scenario> {
    let (n, m) = (doc.n, doc.m);
    if n == 0 || m == 0 {
        return Err(Error::MalformedDocument("n and m must be positive".into()));
    }

    let model = {
        let f: Box<dyn Fn(&State) -> DVector<f64> + Send + Sync> = match &doc.drift {
            DriftSpec::Linear(a) => Box::new(linear_drift(matrix(a, n, n, "drift")?)),
            DriftSpec::Polynomial(rows) => {
                if rows.len() != n {
                    return Err(Error::MalformedDocument(format!("drift needs {n} components")));
                }
                check_terms(rows.iter().flatten(), n, "drift")?;
                let rows = rows.clone();
                Box::new(move |x| DVector::from_iterator(rows.len(), rows.iter().map(|t| eval_poly(t, x))))
            }
        };
        let g: Box<dyn Fn(&State) -> DMatrix<f64> + Send + Sync> = match &doc.input_map {
            InputMapSpec::Constant(rows) => {
                let g = matrix(rows, n, m, "input_map")?;
                Box::new(move |_| g.clone())
            }
            InputMapSpec::Polynomial(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::MalformedDocument(format!("input_map must be {n}×{m}")));
                }
                check_terms(rows.iter().flatten().flatten(), n, "input_map")?;
                let rows = rows.clone();
                Box::new(move |x| DMatrix::from_fn(n, m, |i, j| eval_poly(&rows[i][j], x)))
            }
        };
        DynamicsModel::new(n, m, f, g)?
    };

    let clf = Quadratic::form(matrix(&doc.v.quadratic, n, n, "V")?)?;
    let linear = match &doc.h.linear {
        Some(b) if b.len() == n => DVector::from_column_slice(b),
        Some(_) => return Err(Error::MalformedDocument(format!("h.linear needs {n} entries"))),
        None => DVector::zeros(n),
    };
    let cbf = Quadratic::new(matrix(&doc.h.quadratic, n, n, "h")?, linear, doc.h.constant)?;
    let certs = CertificatePair::new(
        ScalarCertificate::from_quadratic(clf),
        ComparisonFunction::linear(ComparisonKind::ClassK, doc.gamma.linear)?,
        ScalarCertificate::from_quadratic(cbf),
        ComparisonFunction::linear(ComparisonKind::ExtendedClassK, doc.alpha.linear)?,
    )?;
    certs.check_origin(n)?;

    let nominal = match &doc.u_nom {
        Some(k) => Some(NominalController::linear(matrix(k, m, n, "u_nom")?)),
        None => None,
    };

    if doc.bounds.len() != n {
        return Err(Error::MalformedDocument(format!("box needs {n} intervals")));
    }
    let bounds = SearchBox::new(
        doc.bounds.iter().map(|b| b[0]).collect(),
        doc.bounds.iter().map(|b| b[1]).collect(),
    )
    .map_err(|e| Error::MalformedDocument(e.to_string()))?;

    if let Some(p) = doc.p_defaults.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::MalformedDocument(format!("p_defaults must be positive, got {p}")));
    }
    let mut starts = Vec::with_capacity(doc.starts.len());
    for s in &doc.starts {
        if s.len() != n || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedDocument(format!("each start needs {n} finite coordinates")));
        }
        starts.push(DVector::from_column_slice(s));
    }

    let grid_points = doc.grid.unwrap_or(201);
    Grid::uniform(bounds.clone(), grid_points).map_err(|e| Error::MalformedDocument(e.to_string()))?;

    Ok(Scenario {
        name: doc.name,
        system: ControlSystem::new(model, certs),
        nominal,
        gamma1_inverse: None,
        v_bar: None,
        p_defaults: if doc.p_defaults.is_empty() { vec![1.0] } else { doc.p_defaults },
        starts,
        bounds,
        grid_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_constants() {
        let s = load("example1").unwrap();
        let c = s.certs();
        assert_eq!(c.cbf.value(&dvector![0.0, 4.0]), -4.0);
        assert_eq!(c.cbf.value(&dvector![0.0, 6.0]), 0.0);
        assert_eq!(c.clf.value(&dvector![1.0, 0.0]), 0.5);
    }

    #[test]
    fn example2_constants() {
        let s = load("example2").unwrap();
        assert!(s.certs().cbf.value(&dvector![7.0, 0.0]).abs() < 1e-12);
        assert!((s.certs().gamma.eval(7.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn example6_transformed_drift() {
        let s = load("example6").unwrap();
        let t = s.transformed().unwrap();
        assert_eq!(t.model.drift(&dvector![1.0, 0.0]).unwrap(), dvector![0.0, -1.0]);
    }

    #[test]
    fn every_builtin_passes_origin_check() {
        for name in BUILTIN {
            let s = load(name).unwrap();
            s.certs().check_origin(s.state_dim()).unwrap();
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(load("example4"), Err(Error::UnknownScenario(_))));
    }
}
