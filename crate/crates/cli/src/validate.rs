//! Closed-form solver against the enumeration oracle on sampled states.

use cbflab_core::oracle::solve_oracle;
use cbflab_core::{solve, ControlSystem, State, Weight};

pub const INPUT_TOL: f64 = 1e-6;
pub const SLACK_TOL: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct Deviation {
    pub input: f64,
    pub slack: f64,
    pub kkt: f64,
}

impl Deviation {
    fn within_tolerance(&self) -> bool {
        self.input <= INPUT_TOL && self.slack <= SLACK_TOL && self.kkt <= KKT_TOL
    }

    /// Largest ratio of deviation to tolerance, for ranking states.
    fn severity(&self) -> f64 {
        (self.input / INPUT_TOL).max(self.slack / SLACK_TOL).max(self.kkt / KKT_TOL)
    }
}

#[derive(Debug, Clone)]
pub struct CrossCheck {
    pub samples: usize,
    pub max: Deviation,
    pub worst: Option<(State, Deviation)>,
    /// A state where either solver failed outright.
    pub failure: Option<(State, String)>,
}

impl CrossCheck {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max.within_tolerance()
    }
}

fn compare(system: &ControlSystem, p: Weight, x: &State) -> Result<Deviation, String> {
    let lie = system.lie_data(x).map_err(|e| e.to_string())?;
    let a = solve(&lie, p).map_err(|e| e.to_string())?;
    let b = solve_oracle(&lie, p).map_err(|e| e.to_string())?;
    let kkt = [
        a.stationarity().amax(),
        (a.delta - a.lambda1 / p.value()).abs(),
        a.clf_residual().max(0.0),
        (-a.cbf_residual()).max(0.0),
        (a.lambda1 * a.clf_residual()).abs(),
        (a.lambda2 * a.cbf_residual()).abs(),
        (-a.lambda1).max(0.0),
        (-a.lambda2).max(0.0),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(Deviation {
        input: (&a.u_star - &b.u_star).amax(),
        slack: (a.delta - b.delta).abs(),
        kkt,
    })
}

pub fn cross_check(system: &ControlSystem, p: Weight, states: &[State]) -> CrossCheck {
    let mut out = CrossCheck {
        samples: states.len(),
        max: Deviation::default(),
        worst: None,
        failure: None,
    };
    for x in states {
        match compare(system, p, x) {
            Ok(d) => {
                out.max.input = out.max.input.max(d.input);
                out.max.slack = out.max.slack.max(d.slack);
                out.max.kkt = out.max.kkt.max(d.kkt);
                if out.worst.as_ref().is_none_or(|(_, w)| d.severity() > w.severity()) {
                    out.worst = Some((x.clone(), d));
                }
            }
            Err(e) => {
                out.failure = Some((x.clone(), e));
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbflab_core::scenarios;

    #[test]
    fn example3_agrees() {
        let s = scenarios::load("example3").unwrap();
        let c = cross_check(&s.system, Weight::new(1.0).unwrap(), &s.sampling(500, 1).draw());
        assert!(c.passed());
        assert_eq!(c.samples, 500);
        assert!(c.worst.is_some());
    }

    #[test]
    fn empty_sample_is_vacuous() {
        let s = scenarios::load("example1").unwrap();
        let c = cross_check(&s.system, Weight::new(1.0).unwrap(), &[]);
        assert!(c.passed() && c.worst.is_none());
    }

    #[test]
    fn obstacle_centre_is_reported() {
        let s = scenarios::load("example1").unwrap();
        let c = cross_check(&s.system, Weight::new(1.0).unwrap(), &[State::from_column_slice(&[0.0, 4.0])]);
        assert!(!c.passed());
        assert!(c.failure.is_some());
    }
}
