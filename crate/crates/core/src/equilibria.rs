//! Closed-loop equilibria of the filtered system: location, classification,
//! and the p-dependent existence, confinement and persistence checks.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComparisonFunction, ControlSystem, State};
use crate::newton::{refine, NewtonConfig};
use crate::qp::{solve, QpSolution, RegionTag, Weight, LGH_ZERO};
use crate::sampling::{Grid, SampleConfig};

/// Residual norm accepted as a root.
pub const ROOT_TOL: f64 = 1e-6;
/// Distance under which two roots are the same.
pub const DEDUP_RADIUS: f64 = 1e-4;
/// `|h|` below which a root is on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-6;
const ORIGIN_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub grid: Grid,
    /// Residual norm a refined root must reach.
    pub refine_tol: f64,
    /// Largest residual norm at a grid node that still seeds Newton.
    pub seed_threshold: f64,
}

impl SearchGrid {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            refine_tol: 1e-9,
            seed_threshold: 1e-1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EquilibriumKind {
    Origin,
    Interior,
    /// On the boundary with `L_gh = 0`.
    Boundary1,
    /// On the boundary with `L_gh ≠ 0`.
    Boundary2,
}

impl EquilibriumKind {
    pub fn label(self) -> &'static str {
        match self {
            EquilibriumKind::Origin => "origin",
            EquilibriumKind::Interior => "interior",
            EquilibriumKind::Boundary1 => "boundary1",
            EquilibriumKind::Boundary2 => "boundary2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub location: State,
    pub kind: EquilibriumKind,
    pub residual_norm: f64,
    pub region: RegionTag,
    pub p: Weight,
    pub h: f64,
    pub solution: QpSolution,
}

#[derive(Debug, Clone, Default)]
pub struct EquilibriumSearch {
    pub roots: Vec<EquilibriumReport>,
    /// Seeds from which no refinement converged.
    pub unresolved: Vec<State>,
    /// Converged roots outside the safety set.
    pub anomalies: Vec<EquilibriumReport>,
}

impl EquilibriumSearch {
    pub fn count(&self, kind: EquilibriumKind) -> usize {
        self.roots.iter().filter(|r| r.kind == kind).count()
    }

    pub fn of_kind(&self, kind: EquilibriumKind) -> impl Iterator<Item = &EquilibriumReport> {
        self.roots.iter().filter(move |r| r.kind == kind)
    }
}

/// `f(x) + g(x)u*(x)`.
pub fn closed_loop_residual(system: &ControlSystem, p: Weight, x: &State) -> Result<DVector<f64>> {
    let sol = solve(&system.lie_data(x)?, p)?;
    system.model.vector_field(x, &sol.u_star)
}

fn grid_norms<F>(grid: &Grid, f: &F) -> Vec<f64>
where
    F: Fn(&State) -> Result<DVector<f64>> + Sync,
{
    (0..grid.len())
        .into_par_iter()
        .map(|i| f(&grid.node(i)).map(|r| r.norm()).unwrap_or(f64::INFINITY))
        .collect()
}

/// Nodes with value at most `threshold` and no smaller neighbour.
fn local_minima(grid: &Grid, values: &[f64], threshold: f64, mask: Option<&[bool]>) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| {
            let inside = mask.map_or(true, |m| m[i]);
            inside
                && values[i] <= threshold
                && grid
                    .neighbours(i)
                    .into_iter()
                    .filter(|&j| mask.map_or(true, |m| m[j]))
                    .all(|j| values[i] <= values[j])
        })
        .collect()
}

fn dedup_sorted(mut points: Vec<(State, f64)>) -> Vec<(State, f64)> {
    points.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<(State, f64)> = Vec::new();
    for (x, r) in points {
        match kept.iter_mut().find(|(k, _)| (k - &x).norm() <= DEDUP_RADIUS) {
            Some(existing) => {
                if r < existing.1 {
                    *existing = (x, r);
                }
            }
            None => kept.push((x, r)),
        }
    }
    kept
}

/// Moves `x` onto `h = 0` along `∇h`.
fn project_to_boundary(system: &ControlSystem, x: &State) -> State {
    let mut y = x.clone();
    for _ in 0..50 {
        let h = system.certs.cbf.value(&y);
        if h.abs() <= 1e-14 {
            break;
        }
        let g = system.certs.cbf.gradient(&y);
        let gg = g.norm_squared();
        if !(gg > 1e-24) || !h.is_finite() {
            break;
        }
        y -= g * (h / gg);
    }
    y
}

/// Classifies an exact root. Roots outside the safety set are returned as
/// `Err` so that callers can file them as anomalies.
pub fn classify_root(
    system: &ControlSystem,
    p: Weight,
    x: &State,
    residual_norm: f64,
) -> Result<std::result::Result<EquilibriumReport, EquilibriumReport>> {
    let lie = system.lie_data(x)?;
    let solution = solve(&lie, p)?;
    let h = lie.h;
    let kind = if x.norm() <= ORIGIN_RADIUS {
        EquilibriumKind::Origin
    } else if h.abs() <= BOUNDARY_TOL {
        if lie.lg_h.norm() <= LGH_ZERO {
            EquilibriumKind::Boundary1
        } else {
            EquilibriumKind::Boundary2
        }
    } else {
        EquilibriumKind::Interior
    };
    let report = EquilibriumReport {
        location: x.clone(),
        kind,
        residual_norm,
        region: solution.region,
        p,
        h,
        solution,
    };
    Ok(if h < -BOUNDARY_TOL { Err(report) } else { Ok(report) })
}

/// Grid-seeded search for zeros of the closed-loop field.
///
/// Seeds are grid nodes whose residual is a local minimum below the seed
/// threshold, plus the origin. Each is refined without constraint first
/// and, failing that, on the manifold `h = 0`. Nodes straddling the
/// boundary seed a separate constrained search.
pub fn find_equilibria(system: &ControlSystem, p: Weight, search: &SearchGrid) -> Result<EquilibriumSearch> {
    let n = system.state_dim();
    if search.grid.bounds.dim() != n {
        return Err(Error::Config(format!(
            "search grid has dimension {}, system has {n}",
            search.grid.bounds.dim()
        )));
    }
    let grid = &search.grid;
    let residual = |x: &State| closed_loop_residual(system, p, x);
    let norms = grid_norms(grid, &residual);

    // (seed, boundary-only, counts as unresolved on failure)
    let mut seeds: Vec<(State, bool, bool)> = local_minima(grid, &norms, search.seed_threshold, None)
        .into_iter()
        .map(|i| (grid.node(i), false, true))
        .collect();
    seeds.push((State::zeros(n), false, true));

    // Boundary band: nodes in C with a neighbour outside.
    let hvals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| system.certs.cbf.value(&grid.node(i)))
        .collect();
    let band: Vec<bool> = (0..grid.len())
        .map(|i| hvals[i] >= 0.0 && grid.neighbours(i).into_iter().any(|j| hvals[j] < 0.0))
        .collect();
    // Along the band the residual varies faster, so seed more generously
    // but only hold the strict seeds to account.
    seeds.extend(
        local_minima(grid, &norms, 10.0 * search.seed_threshold, Some(&band))
            .into_iter()
            .map(|i| (grid.node(i), true, norms[i] <= search.seed_threshold)),
    );

    let cfg = NewtonConfig {
        tolerance: search.refine_tol,
        ..NewtonConfig::default()
    };
    let project = |x: &State| project_to_boundary(system, x);
    let outcomes: Vec<(State, bool, Option<(State, f64)>)> = seeds
        .par_iter()
        .map(|(seed, on_boundary, strict)| {
            let mut best: Option<(State, f64)> = None;
            if !on_boundary {
                if let Some(out) = refine(residual, seed, &cfg, None) {
                    best = Some((out.x, out.residual_norm));
                }
            }
            let converged = best.as_ref().is_some_and(|b| b.1 <= ROOT_TOL);
            if !converged && (*on_boundary || system.certs.cbf.value(seed).abs() < 1.0) {
                if let Some(out) = refine(residual, seed, &cfg, Some(&project)) {
                    if best.as_ref().map_or(true, |b| out.residual_norm < b.1) {
                        best = Some((out.x, out.residual_norm));
                    }
                }
            }
            (seed.clone(), *strict, best.filter(|b| b.1 <= ROOT_TOL))
        })
        .collect();

    let mut found = Vec::new();
    let mut unresolved = Vec::new();
    for (seed, strict, outcome) in outcomes {
        match outcome {
            Some(root) => found.push(root),
            None if strict => unresolved.push(seed),
            None => {}
        }
    }

    let mut result = EquilibriumSearch {
        unresolved,
        ..Default::default()
    };
    for (x, r) in dedup_sorted(found) {
        match classify_root(system, p, &x, r)? {
            Ok(report) => result.roots.push(report),
            Err(report) => result.anomalies.push(report),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Default)]
pub struct InteriorCertificate {
    /// No interior equilibrium other than the origin was found.
    pub holds: bool,
    pub witnesses: Vec<State>,
}

/// `f − p·γ(V)·g·L_gVᵀ`, whose zeros in the CLF-only region are exactly the
/// interior equilibria.
pub fn interior_condition(system: &ControlSystem, p: Weight, x: &State) -> Result<DVector<f64>> {
    let f = system.model.drift(x)?;
    let g = system.model.input_map(x)?;
    let lie = system.lie_data(x)?;
    let gamma_v = system.certs.gamma.eval(lie.v);
    Ok(f - g * &lie.lg_v * (p.value() * gamma_v))
}

pub fn interior_certificate(system: &ControlSystem, p: Weight, search: &SearchGrid) -> Result<InteriorCertificate> {
    let grid = &search.grid;
    let q = |x: &State| interior_condition(system, p, x);
    let norms = grid_norms(grid, &q);
    let seeds: Vec<State> = local_minima(grid, &norms, search.seed_threshold, None)
        .into_iter()
        .map(|i| grid.node(i))
        .collect();
    let cfg = NewtonConfig {
        tolerance: search.refine_tol,
        ..NewtonConfig::default()
    };
    let roots: Vec<(State, f64)> = seeds
        .par_iter()
        .filter_map(|s| refine(q, s, &cfg, None))
        .filter(|o| o.residual_norm <= ROOT_TOL && o.x.norm() > DEDUP_RADIUS)
        .map(|o| (o.x, o.residual_norm))
        .collect();

    let mut witnesses = Vec::new();
    for (x, _) in dedup_sorted(roots) {
        let Ok(lie) = system.lie_data(&x) else { continue };
        if lie.h <= 1e-8 {
            continue;
        }
        if matches!(solve(&lie, p), Ok(s) if s.region == RegionTag::ClfOnCbfOff) {
            witnesses.push(x);
        }
    }
    Ok(InteriorCertificate {
        holds: witnesses.is_empty(),
        witnesses,
    })
}

/// `γ1⁻¹(v̄ / p)`: every interior equilibrium lies within this radius.
pub fn confinement_bound(v_bar: f64, gamma1_inverse: &ComparisonFunction, p: Weight) -> Result<f64> {
    if !v_bar.is_finite() {
        return Err(Error::BoundUnavailable(format!("supremum ratio is not finite ({v_bar})")));
    }
    if v_bar <= 0.0 {
        // No state satisfies the interior condition away from the origin.
        return Ok(0.0);
    }
    let r = gamma1_inverse.eval(v_bar / p.value());
    if !r.is_finite() {
        return Err(Error::BoundUnavailable(format!("γ1⁻¹ returned {r}")));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupRatio {
    /// Sample maximum of `L_fV / ‖L_gV‖²`; a lower estimate of the supremum.
    pub estimate: f64,
    pub used: usize,
    pub skipped: usize,
}

pub fn sup_ratio_estimate(system: &ControlSystem, sampling: &SampleConfig) -> Result<SupRatio> {
    let ratios: Vec<Option<f64>> = sampling
        .draw()
        .par_iter()
        .map(|x| {
            let lie = system.lie_data(x).ok()?;
            let a = lie.lg_v.norm();
            (a > 1e-9).then(|| lie.lf_v / (a * a))
        })
        .collect();
    let used: Vec<f64> = ratios.iter().flatten().copied().collect();
    let skipped = ratios.len() - used.len();
    let estimate = used.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if used.is_empty() {
        return Err(Error::EstimateUnavailable(format!(
            "all {skipped} samples had vanishing L_gV"
        )));
    }
    Ok(SupRatio {
        estimate,
        used: used.len(),
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceReport {
    /// Equilibrium with both constraints active at the probe weight.
    pub doubly_active: bool,
    /// `∇V = k∇h` with `k > 0`.
    pub parallel: bool,
    pub ratio: f64,
    pub angle: f64,
    /// `L_fh ≤ 0`.
    pub drift_inward: bool,
}

impl PersistenceReport {
    pub fn holds(&self) -> bool {
        self.doubly_active && self.parallel && self.drift_inward
    }
}

/// Checks the three conditions under which a boundary equilibrium found at
/// `probe` exists for every weight.
pub fn boundary_persistence_check(system: &ControlSystem, x_eq: &State, probe: Weight) -> Result<PersistenceReport> {
    let lie = system.lie_data(x_eq)?;
    if lie.h.abs() > BOUNDARY_TOL {
        return Err(Error::Precondition(format!("h = {:e} is not on the boundary", lie.h)));
    }
    let grad_h = system.certs.cbf.gradient(x_eq);
    if grad_h.norm() <= 1e-9 {
        return Err(Error::Indeterminate("∇h vanishes at the candidate".into()));
    }
    let grad_v = system.certs.clf.gradient(x_eq);

    let sol = solve(&lie, probe)?;
    let r = system.model.vector_field(x_eq, &sol.u_star)?.norm();
    let doubly_active = r <= ROOT_TOL && sol.region == RegionTag::ClfOnCbfOn2;

    let dot = grad_v.dot(&grad_h);
    let mut cross = 0.0;
    for i in 0..grad_v.len() {
        for j in (i + 1)..grad_v.len() {
            let w = grad_v[i] * grad_h[j] - grad_v[j] * grad_h[i];
            cross += w * w;
        }
    }
    let cross = f64::sqrt(cross);
    let angle = cross.atan2(dot);
    let ratio = dot / grad_h.norm_squared();

    Ok(PersistenceReport {
        doubly_active,
        parallel: angle <= 1e-6 && ratio > 0.0,
        ratio,
        angle,
        drift_inward: lie.lf_h <= 1e-9,
    })
}
