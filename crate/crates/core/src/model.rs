//! Control-affine systems `ẋ = f(x) + g(x)u`, the certificate functions
//! attached to them, and the Lie-derivative data every solver consumes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type State = DVector<f64>;
pub type ControlInput = DVector<f64>;

type VectorField = Arc<dyn Fn(&State) -> DVector<f64> + Send + Sync>;
type MatrixField = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;
type ScalarField = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
type RealMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

fn check_state(x: &State, n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::Config(format!(
            "state has dimension {}, system expects {n}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!("non-finite state {:?}", x.as_slice())));
    }
    Ok(())
}

/// Drift `f` and input matrix `g` of a control-affine system.
#[derive(Clone)]
pub struct DynamicsModel {
    n: usize,
    m: usize,
    drift: VectorField,
    input_map: MatrixField,
}

impl DynamicsModel {
    pub fn new<F, G>(n: usize, m: usize, drift: F, input_map: G) -> Result<Self>
    where
        F: Fn(&State) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if n == 0 || m == 0 {
            return Err(Error::Config(format!("dimensions must be positive (n={n}, m={m})")));
        }
        Ok(Self {
            n,
            m,
            drift: Arc::new(drift),
            input_map: Arc::new(input_map),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn drift(&self, x: &State) -> Result<DVector<f64>> {
        check_state(x, self.n)?;
        let f = (self.drift)(x);
        if f.len() != self.n {
            return Err(Error::Config(format!("drift returned {} entries, expected {}", f.len(), self.n)));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite drift at {:?}", x.as_slice())));
        }
        Ok(f)
    }

    pub fn input_map(&self, x: &State) -> Result<DMatrix<f64>> {
        check_state(x, self.n)?;
        let g = (self.input_map)(x);
        if g.shape() != (self.n, self.m) {
            return Err(Error::Config(format!(
                "input map returned {:?}, expected ({}, {})",
                g.shape(),
                self.n,
                self.m
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite input map at {:?}", x.as_slice())));
        }
        Ok(g)
    }

    /// `f(x) + g(x)u`.
    pub fn vector_field(&self, x: &State, u: &ControlInput) -> Result<DVector<f64>> {
        if u.len() != self.m {
            return Err(Error::Config(format!("input has dimension {}, expected {}", u.len(), self.m)));
        }
        Ok(self.drift(x)? + self.input_map(x)? * u)
    }

    /// Same input map, drift replaced.
    pub(crate) fn with_drift(&self, drift: VectorField) -> Self {
        Self {
            n: self.n,
            m: self.m,
            drift,
            input_map: Arc::clone(&self.input_map),
        }
    }
}

impl fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsModel").field("n", &self.n).field("m", &self.m).finish()
    }
}

/// `xᵀQx + bᵀx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn new(q: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || linear.len() != n {
            return Err(Error::Config(format!(
                "quadratic form shapes disagree: Q {:?}, b {}",
                q.shape(),
                linear.len()
            )));
        }
        // Only the symmetric part contributes to the value.
        let q = (&q + q.transpose()) * 0.5;
        Ok(Self { q, linear, constant })
    }

    pub fn form(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        Self::new(q, DVector::zeros(n), 0.0)
    }

    pub fn value(&self, x: &State) -> f64 {
        x.dot(&(&self.q * x)) + self.linear.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &State) -> DVector<f64> {
        &self.q * x * 2.0 + &self.linear
    }

    /// True when there is no linear or constant term.
    pub fn is_pure_form(&self) -> bool {
        self.constant == 0.0 && self.linear.iter().all(|&b| b == 0.0)
    }
}

/// A scalar function with its analytic gradient (`V` or `h`).
#[derive(Clone)]
pub struct ScalarCertificate {
    value: ScalarField,
    gradient: VectorField,
    quadratic: Option<Quadratic>,
}

impl ScalarCertificate {
    pub fn new<V, G>(value: V, gradient: G) -> Self
    where
        V: Fn(&State) -> f64 + Send + Sync + 'static,
        G: Fn(&State) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            quadratic: None,
        }
    }

    pub fn from_quadratic(quadratic: Quadratic) -> Self {
        let qv = quadratic.clone();
        let qg = quadratic.clone();
        Self {
            value: Arc::new(move |x| qv.value(x)),
            gradient: Arc::new(move |x| qg.gradient(x)),
            quadratic: Some(quadratic),
        }
    }

    pub fn value(&self, x: &State) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &State) -> DVector<f64> {
        (self.gradient)(x)
    }

    /// The quadratic this certificate was built from, if any.
    pub fn quadratic(&self) -> Option<&Quadratic> {
        self.quadratic.as_ref()
    }
}

impl fmt::Debug for ScalarCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarCertificate").field("quadratic", &self.quadratic).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonKind {
    /// Defined on `[0, ∞)`.
    ClassK,
    /// Defined on all of ℝ.
    ExtendedClassK,
}

#[derive(Clone)]
enum Shape {
    Linear(f64),
    Custom(RealMap),
}

/// Strictly increasing scalar map vanishing at zero (γ or α).
#[derive(Clone)]
pub struct ComparisonFunction {
    kind: ComparisonKind,
    shape: Shape,
}

impl ComparisonFunction {
    pub fn linear(kind: ComparisonKind, slope: f64) -> Result<Self> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(Error::Config(format!("comparison function slope must be positive, got {slope}")));
        }
        Ok(Self {
            kind,
            shape: Shape::Linear(slope),
        })
    }

    /// A user-supplied evaluator. Monotonicity is the caller's contract.
    pub fn custom<F>(kind: ComparisonKind, eval: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind,
            shape: Shape::Custom(Arc::new(eval)),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match &self.shape {
            Shape::Linear(k) => k * s,
            Shape::Custom(f) => f(s),
        }
    }

    pub fn kind(&self) -> ComparisonKind {
        self.kind
    }

    pub fn slope(&self) -> Option<f64> {
        match self.shape {
            Shape::Linear(k) => Some(k),
            Shape::Custom(_) => None,
        }
    }
}

impl fmt::Debug for ComparisonFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.shape {
            Shape::Linear(k) => write!(f, "{:?}(linear {k})", self.kind),
            Shape::Custom(_) => write!(f, "{:?}(custom)", self.kind),
        }
    }
}

/// CLF `V` with rate γ and CBF `h` with rate α.
#[derive(Debug, Clone)]
pub struct CertificatePair {
    pub clf: ScalarCertificate,
    pub gamma: ComparisonFunction,
    pub cbf: ScalarCertificate,
    pub alpha: ComparisonFunction,
}

impl CertificatePair {
    pub fn new(
        clf: ScalarCertificate,
        gamma: ComparisonFunction,
        cbf: ScalarCertificate,
        alpha: ComparisonFunction,
    ) -> Result<Self> {
        if gamma.kind() != ComparisonKind::ClassK {
            return Err(Error::Config("γ must be a class-K function".into()));
        }
        if alpha.kind() != ComparisonKind::ExtendedClassK {
            return Err(Error::Config("α must be an extended class-K function".into()));
        }
        Ok(Self { clf, gamma, cbf, alpha })
    }

    /// `V(0) = 0` and `h(0) > 0`: the origin is the CLF minimum and lies
    /// in the interior of the safety set.
    pub fn check_origin(&self, n: usize) -> Result<()> {
        let origin = State::zeros(n);
        let v0 = self.clf.value(&origin);
        if !(v0.abs() <= 1e-12) {
            return Err(Error::CertificateSanity(format!("V(0) = {v0}, expected 0")));
        }
        let h0 = self.cbf.value(&origin);
        if !(h0 > 0.0) {
            return Err(Error::CertificateSanity(format!("h(0) = {h0}, origin must be interior to the safety set")));
        }
        Ok(())
    }
}

/// A dynamics model together with its certificates.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub model: DynamicsModel,
    pub certs: CertificatePair,
}

impl ControlSystem {
    pub fn new(model: DynamicsModel, certs: CertificatePair) -> Self {
        Self { model, certs }
    }

    pub fn lie_data(&self, x: &State) -> Result<LieData> {
        lie_data(&self.model, &self.certs, x)
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }
}

/// Lie derivatives and constraint offsets at a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct LieData {
    pub lf_v: f64,
    pub lg_v: DVector<f64>,
    pub f_v: f64,
    pub lf_h: f64,
    pub lg_h: DVector<f64>,
    pub f_h: f64,
    pub v: f64,
    pub h: f64,
}

impl LieData {
    /// Assembles the record; `F_V` and `F_h` are formed from the parts given.
    pub fn assemble(
        lf_v: f64,
        lg_v: DVector<f64>,
        lf_h: f64,
        lg_h: DVector<f64>,
        v: f64,
        h: f64,
        gamma: &ComparisonFunction,
        alpha: &ComparisonFunction,
    ) -> Self {
        Self {
            f_v: lf_v + gamma.eval(v),
            f_h: lf_h + alpha.eval(h),
            lf_v,
            lg_v,
            lf_h,
            lg_h,
            v,
            h,
        }
    }

    fn is_finite(&self) -> bool {
        [self.lf_v, self.f_v, self.lf_h, self.f_h, self.v, self.h]
            .iter()
            .chain(self.lg_v.iter())
            .chain(self.lg_h.iter())
            .all(|v| v.is_finite())
    }
}

pub fn lie_data(model: &DynamicsModel, certs: &CertificatePair, x: &State) -> Result<LieData> {
    let n = model.state_dim();
    let f = model.drift(x)?;
    let g = model.input_map(x)?;
    let grad_v = certs.clf.gradient(x);
    let grad_h = certs.cbf.gradient(x);
    if grad_v.len() != n || grad_h.len() != n {
        return Err(Error::Config(format!(
            "certificate gradients have dimensions ({}, {}), expected {n}",
            grad_v.len(),
            grad_h.len()
        )));
    }
    let lie = LieData::assemble(
        grad_v.dot(&f),
        g.tr_mul(&grad_v),
        grad_h.dot(&f),
        g.tr_mul(&grad_h),
        certs.clf.value(x),
        certs.cbf.value(x),
        &certs.gamma,
        &certs.alpha,
    );
    if !lie.is_finite() {
        return Err(Error::NumericDomain(format!("non-finite Lie data at {:?}", x.as_slice())));
    }
    Ok(lie)
}
