//! The modified filter: a CLF-compatible nominal controller is folded into
//! the drift and the QP only solves for a correction `u′`, so the applied
//! input is `u_nom + u′`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{lie_data, CertificatePair, ControlInput, ControlSystem, DynamicsModel, State};
use crate::newton::{refine, NewtonConfig};
use crate::qp::{classify_region, solve, QpSolution, RegionTag, Weight};
use crate::sampling::{SampleConfig, SearchBox};

type Feedback = Arc<dyn Fn(&State) -> ControlInput + Send + Sync>;

/// Tolerance on `L_fV + L_gV·u_nom + γ(V) ≤ 0`.
pub const CLF_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    UserSupplied,
    Sontag,
}

#[derive(Clone)]
pub struct NominalController {
    eval: Feedback,
    pub provenance: Provenance,
}

impl NominalController {
    pub fn new<F>(eval: F) -> Self
    where
        F: Fn(&State) -> ControlInput + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            provenance: Provenance::UserSupplied,
        }
    }

    /// `u = K x`.
    pub fn linear(gain: DMatrix<f64>) -> Self {
        Self::new(move |x| &gain * x)
    }

    pub fn eval(&self, x: &State) -> ControlInput {
        (self.eval)(x)
    }
}

impl fmt::Debug for NominalController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NominalController").field("provenance", &self.provenance).finish()
    }
}

/// Largest value of `L_fV + L_gV·u_nom + γ(V)` over the sample.
pub fn verify_nominal(
    model: &DynamicsModel,
    certs: &CertificatePair,
    nominal: &NominalController,
    sampling: &SampleConfig,
) -> Result<()> {
    let worst = sampling
        .draw()
        .into_par_iter()
        .map(|x| {
            let lie = lie_data(model, certs, &x)?;
            let u = nominal.eval(&x);
            if u.len() != model.input_dim() {
                return Err(Error::Config(format!(
                    "nominal controller returned {} inputs, expected {}",
                    u.len(),
                    model.input_dim()
                )));
            }
            Ok((lie.f_v + lie.lg_v.dot(&u), x))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match worst {
        Some((v, x)) if v > CLF_TOL => Err(Error::rejected(&x, v)),
        _ => Ok(()),
    }
}

/// Sontag's universal formula for `V`, accepted only if it passes
/// [`verify_nominal`] on the sample.
pub fn sontag_nominal(model: &DynamicsModel, certs: &CertificatePair, sampling: &SampleConfig) -> Result<NominalController> {
    let (m, c) = (model.clone(), certs.clone());
    let dim = model.input_dim();
    let nominal = NominalController {
        eval: Arc::new(move |x| {
            let Ok(lie) = lie_data(&m, &c, x) else {
                return DVector::from_element(dim, f64::NAN);
            };
            let b2 = lie.lg_v.norm_squared();
            if b2.sqrt() <= 1e-9 {
                return DVector::zeros(dim);
            }
            let a = lie.lf_v;
            &lie.lg_v * (-(a + (a * a + b2 * b2).sqrt()) / b2)
        }),
        provenance: Provenance::Sontag,
    };
    verify_nominal(model, certs, &nominal, sampling)?;
    Ok(nominal)
}

/// The base model with `f′ = f + g·u_nom` as its drift.
#[derive(Debug, Clone)]
pub struct TransformedModel {
    pub base: DynamicsModel,
    pub nominal: NominalController,
    pub model: DynamicsModel,
}

pub fn transform(model: &DynamicsModel, nominal: NominalController) -> TransformedModel {
    let base = model.clone();
    let nom = nominal.clone();
    let n = model.state_dim();
    let drift = Arc::new(move |x: &State| {
        base.vector_field(x, &nom.eval(x))
            .unwrap_or_else(|_| DVector::from_element(n, f64::NAN))
    });
    TransformedModel {
        base: model.clone(),
        nominal,
        model: model.with_drift(drift),
    }
}

impl TransformedModel {
    pub fn system(&self, certs: &CertificatePair) -> ControlSystem {
        ControlSystem::new(self.model.clone(), certs.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredControl {
    pub u: ControlInput,
    pub nominal: ControlInput,
    /// The QP in the virtual input `u′`.
    pub correction: QpSolution,
}

pub fn filtered_control(tmodel: &TransformedModel, certs: &CertificatePair, p: Weight, x: &State) -> Result<FilteredControl> {
    let lie = lie_data(&tmodel.model, certs, x)?;
    let correction = solve(&lie, p)?;
    let nominal = tmodel.nominal.eval(x);
    Ok(FilteredControl {
        u: &nominal + &correction.u_star,
        nominal,
        correction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    /// Smallest `‖L_gh‖` seen, after local refinement.
    pub min_lgh_norm: f64,
    pub min_lgh_at: State,
    /// `L_gh` bounded away from zero.
    pub condition_i: bool,
    /// A point of `{F_h = 0, L_gh = 0}`, if one was found.
    pub m_witness: Option<State>,
    /// The set `{F_h = 0, L_gh = 0}` appears empty.
    pub condition_ii: bool,
    pub samples: usize,
}

const LIPSCHITZ_SEEDS: usize = 32;
const LIPSCHITZ_TOL: f64 = 1e-6;

fn lowest(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx.truncate(k);
    idx
}

/// Sampled evidence for the two sufficient conditions under which the
/// filtered input is locally Lipschitz. Advisory only.
pub fn lipschitz_precondition(system: &ControlSystem, sampling: &SampleConfig) -> Result<LipschitzReport> {
    let states = sampling.draw();
    let lies: Vec<Option<(f64, f64)>> = states
        .par_iter()
        .map(|x| system.lie_data(x).ok().map(|l| (l.lg_h.norm(), l.f_h)))
        .collect();
    let lgh: Vec<f64> = lies.iter().map(|l| l.map_or(f64::INFINITY, |v| v.0)).collect();
    let joint: Vec<f64> = lies
        .iter()
        .map(|l| l.map_or(f64::INFINITY, |(g, f)| g * g + f * f))
        .collect();

    let cfg = NewtonConfig {
        tolerance: 1e-14,
        ..NewtonConfig::default()
    };
    let lgh_map = |x: &State| system.lie_data(x).map(|l| l.lg_h);
    let joint_map = |x: &State| {
        system.lie_data(x).map(|l| {
            let mut r = DVector::zeros(l.lg_h.len() + 1);
            r[0] = l.f_h;
            r.rows_mut(1, l.lg_h.len()).copy_from(&l.lg_h);
            r
        })
    };

    let mut min_lgh = (f64::INFINITY, State::zeros(system.state_dim()));
    for i in lowest(&lgh, LIPSCHITZ_SEEDS) {
        if lgh[i] < min_lgh.0 {
            min_lgh = (lgh[i], states[i].clone());
        }
        if let Some(out) = refine(lgh_map, &states[i], &cfg, None) {
            if out.residual_norm < min_lgh.0 {
                min_lgh = (out.residual_norm, out.x);
            }
        }
    }

    let mut witness = None;
    for i in lowest(&joint, LIPSCHITZ_SEEDS) {
        let Some(out) = refine(joint_map, &states[i], &cfg, None) else { continue };
        let Ok(l) = system.lie_data(&out.x) else { continue };
        if l.f_h.abs() <= LIPSCHITZ_TOL && l.lg_h.norm() <= LIPSCHITZ_TOL {
            witness = Some(out.x);
            break;
        }
    }

    Ok(LipschitzReport {
        condition_i: min_lgh.0 > LIPSCHITZ_TOL,
        min_lgh_norm: min_lgh.0,
        min_lgh_at: min_lgh.1,
        condition_ii: witness.is_none(),
        m_witness: witness,
        samples: states.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaConfig {
    pub bounds: SearchBox,
    /// Accepted samples per tested level.
    pub samples: usize,
    pub seed: u64,
    /// Bisection stops when the bracket is this fraction of its upper end.
    pub rel_tol: f64,
}

impl RoaConfig {
    pub fn new(bounds: SearchBox, seed: u64) -> Self {
        Self {
            bounds,
            samples: 10_000,
            seed,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaEstimate {
    pub eta: f64,
    /// Radius of `{V ≤ η}` when `V = c‖x‖²`.
    pub sampled_radius: Option<f64>,
    pub sample_count: usize,
    pub levels_tested: usize,
}

/// Box enclosing `{V ≤ a}`.
fn level_box(system: &ControlSystem, bounds: &SearchBox, a: f64) -> Result<SearchBox> {
    let Some(q) = system.certs.clf.quadratic().filter(|q| q.is_pure_form()) else {
        return Ok(bounds.clone());
    };
    let inv = q
        .q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::EstimateUnavailable("CLF form is singular".into()))?;
    let half: Vec<f64> = (0..inv.nrows()).map(|i| (a * inv[(i, i)]).sqrt()).collect();
    if half.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::EstimateUnavailable("CLF sub-level sets are unbounded".into()));
    }
    SearchBox::new(half.iter().map(|h| -h).collect(), half)
}

/// Whether any of `samples` points of `{V ≤ a}` lies in the doubly active
/// region.
fn level_hits(system: &ControlSystem, p: Weight, cfg: &RoaConfig, a: f64, seed: u64) -> Result<(bool, usize)> {
    let bbox = level_box(system, &cfg.bounds, a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_draws = cfg.samples.saturating_mul(200).max(1000);
    let mut accepted = Vec::with_capacity(cfg.samples);
    let mut draws = 0;
    while accepted.len() < cfg.samples {
        if draws >= max_draws {
            return Err(Error::EstimateUnavailable(format!(
                "only {} of {} samples landed in {{V ≤ {a}}}",
                accepted.len(),
                cfg.samples
            )));
        }
        draws += 1;
        let x = bbox.sample(&mut rng);
        if system.certs.clf.value(&x) <= a {
            accepted.push(x);
        }
    }
    let hit = accepted.par_iter().any(|x| match system.lie_data(x) {
        Ok(lie) => !matches!(classify_region(&lie, p), Ok(tag) if tag != RegionTag::ClfOnCbfOn2),
        Err(_) => true,
    });
    Ok((hit, accepted.len()))
}

/// Largest sub-level set of `V` that avoids the region where both
/// constraints are active, found by bisection on the level.
pub fn estimate_roa(system: &ControlSystem, p: Weight, cfg: &RoaConfig) -> Result<RoaEstimate> {
    if cfg.samples == 0 {
        return Err(Error::EstimateUnavailable("no samples requested".into()));
    }
    let a_max = cfg
        .bounds
        .corners()
        .iter()
        .map(|c| system.certs.clf.value(c))
        .fold(0.0, f64::max);
    if !(a_max > 0.0 && a_max.is_finite()) {
        return Err(Error::EstimateUnavailable(format!("V is not positive on the box (max {a_max})")));
    }

    let mut levels = 0;
    let mut count = 0;
    let mut next_seed = || {
        levels += 1;
        cfg.seed.wrapping_add(levels as u64)
    };

    let (hit, used) = level_hits(system, p, cfg, a_max, next_seed())?;
    count += used;
    let (mut lo, mut hi) = (0.0, a_max);
    if hit {
        while hi - lo > cfg.rel_tol * hi {
            let mid = 0.5 * (lo + hi);
            let (hit, used) = level_hits(system, p, cfg, mid, next_seed())?;
            count += used;
            if hit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    } else {
        lo = a_max;
    }
    if lo <= 0.0 {
        return Err(Error::EstimateUnavailable("every tested level meets the doubly active region".into()));
    }

    let sampled_radius = system.certs.clf.quadratic().and_then(|q| {
        let c = q.q[(0, 0)];
        let n = q.q.nrows();
        let isotropic = q.is_pure_form() && c > 0.0 && (&q.q - DMatrix::identity(n, n) * c).amax() <= 1e-12 * c;
        isotropic.then(|| (lo / c).sqrt())
    });
    Ok(RoaEstimate {
        eta: lo,
        sampled_radius,
        sample_count: count,
        levels_tested: levels,
    })
}
