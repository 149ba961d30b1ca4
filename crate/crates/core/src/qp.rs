//! Exact piecewise solution of the CLF-CBF quadratic program
//!
//! ```text
//!   min  ½‖u‖² + ½pδ²
//!   s.t. F_V + L_gV·u ≤ δ        (CLF)
//!        F_h + L_gh·u ≥ 0        (CBF)
//! ```
//!
//! The state space splits into six regions according to which constraints
//! are active and whether `L_gh` vanishes. Each region has a closed-form
//! minimiser and multipliers; [`classify_region`] picks the region and
//! [`solve`] evaluates its branch.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlInput, LieData};

/// Slack applied to non-strict region inequalities.
pub const REGION_SLACK: f64 = 1e-10;
/// `‖L_gh‖` at or below this is treated as zero.
pub const LGH_ZERO: f64 = 1e-7;
/// Smallest admissible determinant of the two-multiplier system.
pub const DET_FLOOR: f64 = 1e-14;

/// Slack penalty `p > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Weight(f64);

impl Weight {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_finite() && p > 0.0 {
            Ok(Self(p))
        } else {
            Err(Error::Config(format!("QP weight must be positive and finite, got {p}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn inverse(self) -> f64 {
        1.0 / self.0
    }
}

impl TryFrom<f64> for Weight {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<Weight> for f64 {
    fn from(w: Weight) -> f64 {
        w.0
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which constraints are active, and for an active CBF whether `L_gh`
/// vanishes (`On1`) or not (`On2`). Declaration order is the tie-break
/// precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionTag {
    ClfOffCbfOff,
    ClfOffCbfOn1,
    ClfOffCbfOn2,
    ClfOnCbfOff,
    ClfOnCbfOn1,
    ClfOnCbfOn2,
}

impl RegionTag {
    pub const ALL: [RegionTag; 6] = [
        RegionTag::ClfOffCbfOff,
        RegionTag::ClfOffCbfOn1,
        RegionTag::ClfOffCbfOn2,
        RegionTag::ClfOnCbfOff,
        RegionTag::ClfOnCbfOn1,
        RegionTag::ClfOnCbfOn2,
    ];

    pub fn clf_active(self) -> bool {
        matches!(self, RegionTag::ClfOnCbfOff | RegionTag::ClfOnCbfOn1 | RegionTag::ClfOnCbfOn2)
    }

    pub fn cbf_active(self) -> bool {
        !matches!(self, RegionTag::ClfOffCbfOff | RegionTag::ClfOnCbfOff)
    }

    pub fn from_activity(clf_active: bool, cbf_active: bool, lgh_vanishes: bool) -> Self {
        match (clf_active, cbf_active, lgh_vanishes) {
            (false, false, _) => RegionTag::ClfOffCbfOff,
            (false, true, true) => RegionTag::ClfOffCbfOn1,
            (false, true, false) => RegionTag::ClfOffCbfOn2,
            (true, false, _) => RegionTag::ClfOnCbfOff,
            (true, true, true) => RegionTag::ClfOnCbfOn1,
            (true, true, false) => RegionTag::ClfOnCbfOn2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RegionTag::ClfOffCbfOff => "ClfOff-CbfOff",
            RegionTag::ClfOffCbfOn1 => "ClfOff-CbfOn1",
            RegionTag::ClfOffCbfOn2 => "ClfOff-CbfOn2",
            RegionTag::ClfOnCbfOff => "ClfOn-CbfOff",
            RegionTag::ClfOnCbfOn1 => "ClfOn-CbfOn1",
            RegionTag::ClfOnCbfOn2 => "ClfOn-CbfOn2",
        }
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RegionTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RegionTag::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown region tag `{s}`")))
    }
}

/// Optimal input, slack and multipliers at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u_star: ControlInput,
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub region: RegionTag,
    pub lie: LieData,
}

impl QpSolution {
    /// `F_V + L_gV·u − δ`; non-positive when the CLF row is satisfied.
    pub fn clf_residual(&self) -> f64 {
        self.lie.f_v + self.lie.lg_v.dot(&self.u_star) - self.delta
    }

    /// `F_h + L_gh·u`; non-negative when the CBF row is satisfied.
    pub fn cbf_residual(&self) -> f64 {
        self.lie.f_h + self.lie.lg_h.dot(&self.u_star)
    }

    /// `u + λ1·L_gVᵀ − λ2·L_ghᵀ`, zero at a KKT point.
    pub fn stationarity(&self) -> DVector<f64> {
        &self.u_star + &self.lie.lg_v * self.lambda1 - &self.lie.lg_h * self.lambda2
    }

    pub fn objective(&self, p: Weight) -> f64 {
        0.5 * self.u_star.norm_squared() + 0.5 * p.value() * self.delta * self.delta
    }
}

/// Inner products shared by every branch.
struct Gram {
    /// `L_gV·L_gVᵀ`
    a: f64,
    /// `L_gV·L_ghᵀ`
    b: f64,
    /// `L_gh·L_ghᵀ`
    c: f64,
    r: f64,
}

impl Gram {
    fn new(lie: &LieData, p: Weight) -> Self {
        Self {
            a: lie.lg_v.norm_squared(),
            b: lie.lg_v.dot(&lie.lg_h),
            c: lie.lg_h.norm_squared(),
            r: p.inverse(),
        }
    }

    /// Numerator of λ1 when both constraints are active.
    fn lambda1_numerator(&self, lie: &LieData) -> f64 {
        lie.f_v * self.c - lie.f_h * self.b
    }

    /// Numerator of λ2 when both constraints are active.
    fn lambda2_numerator(&self, lie: &LieData) -> f64 {
        lie.f_v * self.b - lie.f_h * (self.r + self.a)
    }
}

/// `‖x‖²‖y‖² − (x·y)²` via the Lagrange identity, which is exactly
/// non-negative in floating point.
fn gram_defect(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let w = x[i] * y[j] - x[j] * y[i];
            acc += w * w;
        }
    }
    acc
}

pub fn classify_region(lie: &LieData, p: Weight) -> Result<RegionTag> {
    let gram = Gram::new(lie, p);
    let (fv, fh) = (lie.f_v, lie.f_h);
    let lgh_zero = lie.lg_h.norm() <= LGH_ZERO;
    let eps = REGION_SLACK;
    let l1 = gram.lambda1_numerator(lie);
    let l2 = gram.lambda2_numerator(lie);

    let tag = if fv < 0.0 && fh > 0.0 {
        RegionTag::ClfOffCbfOff
    } else if fv < 0.0 && fh.abs() <= eps && lgh_zero {
        RegionTag::ClfOffCbfOn1
    } else if !lgh_zero && fh <= eps && l1 < 0.0 {
        RegionTag::ClfOffCbfOn2
    } else if fv >= -eps && l2 < 0.0 {
        RegionTag::ClfOnCbfOff
    } else if fv >= -eps && fh.abs() <= eps && lgh_zero {
        RegionTag::ClfOnCbfOn1
    } else if !lgh_zero && l1 >= -eps && l2 >= -eps {
        RegionTag::ClfOnCbfOn2
    } else {
        return Err(Error::InternalInconsistency(format!(
            "no QP region matches (F_V={fv:e}, F_h={fh:e}, ‖L_gh‖={:e}); \
             the CBF condition fails at this state",
            lie.lg_h.norm()
        )));
    };
    Ok(tag)
}

pub fn solve(lie: &LieData, p: Weight) -> Result<QpSolution> {
    let region = classify_region(lie, p)?;
    let gram = Gram::new(lie, p);
    let m = lie.lg_v.len();

    let (u_star, lambda1, lambda2) = match region {
        RegionTag::ClfOffCbfOff | RegionTag::ClfOffCbfOn1 => (DVector::zeros(m), 0.0, 0.0),
        RegionTag::ClfOffCbfOn2 => {
            let lambda2 = (-lie.f_h).max(0.0) / gram.c;
            (&lie.lg_h * lambda2, 0.0, lambda2)
        }
        RegionTag::ClfOnCbfOff | RegionTag::ClfOnCbfOn1 => {
            let lambda1 = lie.f_v.max(0.0) / (gram.r + gram.a);
            (&lie.lg_v * -lambda1, lambda1, 0.0)
        }
        RegionTag::ClfOnCbfOn2 => {
            let det = gram.c * gram.r + gram_defect(&lie.lg_v, &lie.lg_h);
            if det.abs() < DET_FLOOR {
                return Err(Error::InternalInconsistency(format!(
                    "multiplier system singular (Δ={det:e}) with ‖L_gh‖={:e}",
                    lie.lg_h.norm()
                )));
            }
            let mut lambda1 = gram.lambda1_numerator(lie).max(0.0) / det;
            let mut lambda2 = gram.lambda2_numerator(lie).max(0.0) / det;
            let mut u = &lie.lg_h * lambda2 - &lie.lg_v * lambda1;
            if lambda1 > 0.0 && lambda2 > 0.0 {
                // u cancels large multiples of L_gV and L_gh; one refinement
                // step on the active rows removes most of the rounding
                let r1 = lie.f_v + lie.lg_v.dot(&u) - lambda1 / p.value();
                let r2 = lie.f_h + lie.lg_h.dot(&u);
                let d1 = (gram.c * r1 - gram.b * r2) / det;
                let d2 = (gram.b * r1 - (gram.r + gram.a) * r2) / det;
                if lambda1 + d1 > 0.0 && lambda2 + d2 > 0.0 {
                    u += &lie.lg_h * d2 - &lie.lg_v * d1;
                    lambda1 += d1;
                    lambda2 += d2;
                }
            }
            (u, lambda1, lambda2)
        }
    };

    Ok(QpSolution {
        u_star,
        delta: lambda1 / p.value(),
        lambda1,
        lambda2,
        region,
        lie: lie.clone(),
    })
}
