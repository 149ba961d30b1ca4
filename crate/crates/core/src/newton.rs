//! Damped Gauss-Newton on a residual map with a finite-difference Jacobian.
//!
//! The step is the minimum-norm least-squares solution, so square,
//! rank-deficient and rectangular residuals are all handled.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::State;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub fd_step: f64,
    pub max_iterations: usize,
    /// Stop once the residual norm is at or below this.
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            fd_step: 1e-6,
            max_iterations: 50,
            tolerance: 1e-12,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: State,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn jacobian<F>(f: &F, x: &State, r: &DVector<f64>, h: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&State) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(r.len(), n);
    for j in 0..n {
        let step = h * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let (rp, rm) = match (f(&xp), f(&xm)) {
            (Ok(a), Ok(b)) => (a, b),
            // one-sided fallback at the edge of the domain
            (Ok(a), Err(_)) => (a, r.clone()),
            (Err(_), Ok(b)) => (r.clone(), b),
            _ => return None,
        };
        let width = if xp[j] - xm[j] > 1.5 * step { 2.0 * step } else { step };
        jac.set_column(j, &((rp - rm) / width));
    }
    Some(jac)
}

/// Refines `x0` towards a zero of `f`. `project`, when given, is applied to
/// every trial point.
pub fn refine<F>(
    f: F,
    x0: &State,
    cfg: &NewtonConfig,
    project: Option<&dyn Fn(&State) -> State>,
) -> Option<NewtonOutcome>
where
    F: Fn(&State) -> Result<DVector<f64>>,
{
    let mut x = match project {
        Some(proj) => proj(x0),
        None => x0.clone(),
    };
    let mut r = f(&x).ok()?;
    let mut norm = r.norm();
    let mut iterations = 0;

    while iterations < cfg.max_iterations && norm > cfg.tolerance {
        iterations += 1;
        let Some(jac) = jacobian(&f, &x, &r, cfg.fd_step) else { break };
        let svd = jac.svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
        let Ok(dx) = svd.solve(&(-&r), cutoff) else { break };

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let mut trial = &x + &dx * scale;
            if let Some(proj) = project {
                trial = proj(&trial);
            }
            if let Ok(rt) = f(&trial) {
                let nt = rt.norm();
                if nt < norm {
                    x = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Some(NewtonOutcome {
        x,
        residual_norm: norm,
        iterations,
    })
}
