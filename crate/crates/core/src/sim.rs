//! Fixed-step RK4 integration of the filtered closed loop.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CertificatePair, ControlInput, ControlSystem, State};
use crate::modified::{filtered_control, TransformedModel};
use crate::qp::{solve, QpSolution, RegionTag, Weight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerMode {
    Original,
    Modified,
}

impl std::str::FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "modified" => Ok(Self::Modified),
            other => Err(Error::Config(format!("unknown controller mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step: f64,
    pub horizon: f64,
    pub convergence_radius: f64,
    /// Number of trailing steps inspected for convergence.
    pub convergence_window: usize,
    pub safety_tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            horizon: 20.0,
            convergence_radius: 1e-3,
            convergence_window: 100,
            safety_tolerance: 1e-3,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step, self.horizon, self.convergence_radius, self.safety_tolerance]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.convergence_window == 0 {
            return Err(Error::Config("integrator parameters must be positive".into()));
        }
        if self.step > self.horizon {
            return Err(Error::Config(format!("step {} exceeds horizon {}", self.step, self.horizon)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

/// The controller the loop is closed with.
#[derive(Debug, Clone)]
pub enum ClosedLoop {
    Original(ControlSystem),
    Modified {
        transformed: TransformedModel,
        certs: CertificatePair,
    },
}

/// Applied input and the QP that produced it.
#[derive(Debug, Clone)]
pub struct ControlEval {
    pub u: ControlInput,
    pub qp: QpSolution,
}

impl ClosedLoop {
    pub fn mode(&self) -> ControllerMode {
        match self {
            ClosedLoop::Original(_) => ControllerMode::Original,
            ClosedLoop::Modified { .. } => ControllerMode::Modified,
        }
    }

    pub fn certs(&self) -> &CertificatePair {
        match self {
            ClosedLoop::Original(s) => &s.certs,
            ClosedLoop::Modified { certs, .. } => certs,
        }
    }

    pub fn control(&self, p: Weight, x: &State) -> Result<ControlEval> {
        match self {
            ClosedLoop::Original(sys) => {
                let qp = solve(&sys.lie_data(x)?, p)?;
                Ok(ControlEval { u: qp.u_star.clone(), qp })
            }
            ClosedLoop::Modified { transformed, certs } => {
                let fc = filtered_control(transformed, certs, p, x)?;
                Ok(ControlEval {
                    u: fc.u,
                    qp: fc.correction,
                })
            }
        }
    }

    /// Plant vector field under the applied input.
    pub fn field(&self, p: Weight, x: &State) -> Result<(DVector<f64>, ControlEval)> {
        let ctl = self.control(p, x)?;
        let model = match self {
            ClosedLoop::Original(sys) => &sys.model,
            ClosedLoop::Modified { transformed, .. } => &transformed.base,
        };
        Ok((model.vector_field(x, &ctl.u)?, ctl))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TerminalFlag {
    Horizon,
    ConvergedTo(Vec<f64>),
    SafetyAnomaly,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub inputs: Vec<ControlInput>,
    pub v_values: Vec<f64>,
    pub h_values: Vec<f64>,
    pub regions: Vec<RegionTag>,
    pub delta: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub terminal: TerminalFlag,
    /// Set when a controller evaluation failed and the run was cut short.
    pub error: Option<Error>,
}

impl Trajectory {
    fn with_capacity(k: usize) -> Self {
        Self {
            times: Vec::with_capacity(k),
            states: Vec::with_capacity(k),
            inputs: Vec::with_capacity(k),
            v_values: Vec::with_capacity(k),
            h_values: Vec::with_capacity(k),
            regions: Vec::with_capacity(k),
            delta: Vec::with_capacity(k),
            lambda1: Vec::with_capacity(k),
            lambda2: Vec::with_capacity(k),
            terminal: TerminalFlag::Horizon,
            error: None,
        }
    }

    fn push(&mut self, t: f64, x: &State, ctl: &ControlEval) {
        self.times.push(t);
        self.states.push(x.clone());
        self.inputs.push(ctl.u.clone());
        self.v_values.push(ctl.qp.lie.v);
        self.h_values.push(ctl.qp.lie.h);
        self.regions.push(ctl.qp.region);
        self.delta.push(ctl.qp.delta);
        self.lambda1.push(ctl.qp.lambda1);
        self.lambda2.push(ctl.qp.lambda2);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&State> {
        self.states.last()
    }

    pub fn min_h(&self) -> f64 {
        self.h_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn converged_to(&self) -> Option<State> {
        match &self.terminal {
            TerminalFlag::ConvergedTo(x) => Some(State::from_column_slice(x)),
            _ => None,
        }
    }
}

fn rk4_step(lp: &ClosedLoop, p: Weight, x: &State, k1: &DVector<f64>, dt: f64) -> Result<State> {
    let k2 = lp.field(p, &(x + k1 * (0.5 * dt)))?.0;
    let k3 = lp.field(p, &(x + &k2 * (0.5 * dt)))?.0;
    let k4 = lp.field(p, &(x + &k3 * dt))?.0;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

fn windowed_limit(states: &[State], window: usize, radius: f64) -> Option<State> {
    if states.len() <= window {
        return None;
    }
    let tail = &states[states.len() - window - 1..];
    let mean = tail.iter().fold(State::zeros(tail[0].len()), |acc, x| acc + x) / tail.len() as f64;
    tail.iter().all(|x| (x - &mean).norm() <= radius).then_some(mean)
}

/// Integrates from `x0` to the horizon. Every RK4 stage evaluates the
/// controller; the recorded diagnostics are those at the step's start.
pub fn integrate(lp: &ClosedLoop, p: Weight, x0: &State, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!("non-finite initial state {:?}", x0.as_slice())));
    }
    let steps = cfg.steps();
    let mut traj = Trajectory::with_capacity(steps + 1);
    let h0 = lp.certs().cbf.value(x0);
    let floor = h0.min(0.0) - 10.0 * cfg.safety_tolerance;
    let mut anomaly = false;

    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * cfg.step;
        let (k1, ctl) = match lp.field(p, &x) {
            Ok(v) => v,
            Err(e) => {
                traj.error = Some(e);
                break;
            }
        };
        traj.push(t, &x, &ctl);
        if ctl.qp.lie.h < floor {
            anomaly = true;
        }
        if k == steps {
            break;
        }
        match rk4_step(lp, p, &x, &k1, cfg.step) {
            Ok(next) => x = next,
            Err(e) => {
                traj.error = Some(e);
                break;
            }
        }
    }

    traj.terminal = if anomaly {
        TerminalFlag::SafetyAnomaly
    } else if traj.error.is_some() {
        TerminalFlag::Horizon
    } else {
        match windowed_limit(&traj.states, cfg.convergence_window, cfg.convergence_radius) {
            Some(m) => TerminalFlag::ConvergedTo(m.iter().copied().collect()),
            None => TerminalFlag::Horizon,
        }
    };
    Ok(traj)
}

/// Independent runs from every start, in input order.
pub fn batch(lp: &ClosedLoop, p: Weight, starts: &[State], cfg: &IntegratorConfig) -> Vec<Result<Trajectory>> {
    starts.par_iter().map(|x0| integrate(lp, p, x0, cfg)).collect()
}
