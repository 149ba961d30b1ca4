//! Brute-force reference solver for the same two-constraint QP.
//!
//! Every activity pattern of the two constraints is solved as an
//! equality-constrained least-norm problem in `z = (u, δ)` by direct linear
//! algebra, then filtered by primal and dual feasibility. It shares no code
//! path with [`crate::qp`] beyond the [`LieData`] input.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::model::LieData;
use crate::qp::{QpSolution, RegionTag, Weight, LGH_ZERO};

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ActiveSetCandidate {
    pub clf_active: bool,
    pub cbf_active: bool,
    pub u: DVector<f64>,
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub feasible: bool,
    pub objective: f64,
}

/// Constraint rows in the form `G z ≤ w`.
struct Constraints {
    g: DMatrix<f64>,
    w: DVector<f64>,
}

impl Constraints {
    fn new(lie: &LieData) -> Self {
        let m = lie.lg_v.len();
        let mut g = DMatrix::zeros(2, m + 1);
        for j in 0..m {
            g[(0, j)] = lie.lg_v[j];
            g[(1, j)] = -lie.lg_h[j];
        }
        g[(0, m)] = -1.0;
        Self {
            g,
            w: DVector::from_vec(vec![-lie.f_v, lie.f_h]),
        }
    }
}

fn candidate(lie: &LieData, p: Weight, rows: &[usize]) -> ActiveSetCandidate {
    let m = lie.lg_v.len();
    let cons = Constraints::new(lie);
    let mut h_inv = DVector::from_element(m + 1, 1.0);
    h_inv[m] = p.inverse();

    let mut mu = [0.0_f64; 2];
    let mut consistent = true;
    let mut z = DVector::zeros(m + 1);

    if !rows.is_empty() {
        let k = rows.len();
        let gs = DMatrix::from_fn(k, m + 1, |i, j| cons.g[(rows[i], j)]);
        let ws = DVector::from_fn(k, |i, _| cons.w[rows[i]]);
        // M = G_S H⁻¹ G_Sᵀ,  M μ = −w_S
        let scaled = DMatrix::from_fn(k, m + 1, |i, j| gs[(i, j)] * h_inv[j]);
        let gram = &scaled * gs.transpose();
        let svd = SVD::new(gram.clone(), true, true);
        let smax = svd.singular_values.max();
        let cutoff = 1e-12 * smax.max(1.0);
        let mu_s = svd
            .solve(&(-&ws), cutoff)
            .unwrap_or_else(|_| DVector::zeros(k));
        let scale = 1.0 + ws.amax() + gram.amax() * mu_s.amax();
        consistent = (&gram * &mu_s + &ws).amax() <= 1e-9 * scale;

        let mut mu_s = mu_s;
        // A row of G_S that is identically zero leaves its multiplier free;
        // shift along the null direction until every multiplier is
        // non-negative, trying zero first.
        if let Some(v_t) = svd.v_t.as_ref() {
            let null: Vec<DVector<f64>> = (0..k)
                .filter(|&i| svd.singular_values[i] <= cutoff)
                .map(|i| v_t.row(i).transpose())
                .collect();
            if let Some(dir) = null.first() {
                let mut ts = vec![0.0];
                ts.extend((0..k).filter(|&i| dir[i].abs() > 1e-12).map(|i| -mu_s[i] / dir[i]));
                if let Some(t) = ts
                    .into_iter()
                    .find(|&t| (0..k).all(|i| mu_s[i] + t * dir[i] >= -FEAS_TOL))
                {
                    mu_s += dir * t;
                }
            }
        }
        for (i, &r) in rows.iter().enumerate() {
            mu[r] = mu_s[i];
        }
        let gt_mu = gs.transpose() * &mu_s;
        z = DVector::from_fn(m + 1, |j, _| -h_inv[j] * gt_mu[j]);
    }

    let gz = &cons.g * &z;
    let primal_ok = (0..2).all(|i| {
        let tol = FEAS_TOL * (1.0 + cons.w[i].abs() + cons.g.row(i).norm() * z.norm());
        gz[i] <= cons.w[i] + tol
    });
    let dual_ok = mu.iter().all(|&l| l >= -FEAS_TOL);

    let u = z.rows(0, m).into_owned();
    let delta = z[m];
    let objective = 0.5 * u.norm_squared() + 0.5 * p.value() * delta * delta;
    ActiveSetCandidate {
        clf_active: rows.contains(&0),
        cbf_active: rows.contains(&1),
        u,
        delta,
        lambda1: mu[0],
        lambda2: mu[1],
        feasible: consistent && primal_ok && dual_ok,
        objective,
    }
}

/// All four activity patterns: none, CBF only, CLF only, both.
pub fn enumerate_candidates(lie: &LieData, p: Weight) -> Vec<ActiveSetCandidate> {
    [&[][..], &[1][..], &[0][..], &[0, 1][..]]
        .iter()
        .map(|rows| candidate(lie, p, rows))
        .collect()
}

pub fn solve_oracle(lie: &LieData, p: Weight) -> Result<QpSolution> {
    let best = enumerate_candidates(lie, p)
        .into_iter()
        .filter(|c| c.feasible)
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "no activity pattern is feasible (F_V={:e}, F_h={:e}, ‖L_gh‖={:e})",
                lie.f_v,
                lie.f_h,
                lie.lg_h.norm()
            ))
        })?;
    let lgh_vanishes = lie.lg_h.norm() <= LGH_ZERO;
    Ok(QpSolution {
        region: RegionTag::from_activity(best.clf_active, best.cbf_active, lgh_vanishes),
        u_star: best.u,
        delta: best.delta,
        lambda1: best.lambda1,
        lambda2: best.lambda2,
        lie: lie.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn lie(lf_v: f64, lg_v: DVector<f64>, v: f64, lf_h: f64, lg_h: DVector<f64>, h: f64) -> LieData {
        LieData {
            f_v: lf_v + v,
            f_h: lf_h + h,
            lf_v,
            lg_v,
            lf_h,
            lg_h,
            v,
            h,
        }
    }

    fn w(p: f64) -> Weight {
        Weight::new(p).unwrap()
    }

    #[test]
    fn origin() {
        let l = lie(0.0, dvector![0.0, 0.0], 0.0, 0.0, dvector![0.0, -8.0], 12.0);
        let s = solve_oracle(&l, w(1.0)).unwrap();
        assert!(s.u_star.amax() < 1e-15);
        assert!(s.delta.abs() < 1e-15);
    }

    #[test]
    fn example3_unit_x() {
        let l = lie(1.0, dvector![1.0, 0.0], 0.5, 2.0, dvector![2.0, -8.0], 13.0);
        let s = solve_oracle(&l, w(1.0)).unwrap();
        assert!((s.u_star - dvector![-0.75, 0.0]).amax() < 1e-12);
        assert!((s.delta - 0.75).abs() < 1e-12);
        assert_eq!(s.region, RegionTag::ClfOnCbfOff);
    }

    #[test]
    fn example1_boundary_point() {
        let l = lie(-36.0, dvector![0.0, 6.0], 18.0, -24.0, dvector![0.0, 4.0], 0.0);
        let s = solve_oracle(&l, w(1.0)).unwrap();
        assert!((s.u_star - dvector![0.0, 6.0]).amax() < 1e-9);
        assert!((s.lambda1 - 18.0).abs() < 1e-9);
        assert!((s.lambda2 - 28.5).abs() < 1e-9);
        assert_eq!(s.region, RegionTag::ClfOnCbfOn2);
    }

    #[test]
    fn degenerate_both_active_with_vanishing_lgh() {
        // F_h = 0 and L_gh = 0: the CBF row is the identity 0 ≤ 0.
        let l = lie(1.0, dvector![2.0], 0.5, 0.0, dvector![0.0], 0.0);
        let cands = enumerate_candidates(&l, w(1.0));
        let both = &cands[3];
        assert!(both.feasible);
        assert!(both.lambda2 >= 0.0);
        let s = solve_oracle(&l, w(1.0)).unwrap();
        assert!((s.u_star[0] + 2.0 * 1.5 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_when_cbf_condition_fails() {
        let l = lie(-1.0, dvector![1.0, 0.0], 0.5, 0.0, dvector![0.0, 0.0], -4.0);
        assert!(matches!(solve_oracle(&l, w(1.0)), Err(Error::Infeasible(_))));
    }
}
