//! Closed-form CLF-CBF quadratic-program safety filters.
//!
//! The filter solves, at each state,
//!
//! ```text
//! min ½‖u‖² + ½pδ²   s.t.   L_fV + L_gV·u + γ(V) ≤ δ,   L_fh + L_gh·u + α(h) ≥ 0
//! ```
//!
//! in closed form ([`qp::solve`]). Around it sit a brute-force reference
//! solver, a search for the equilibria the filter introduces, the modified
//! formulation with a nominal controller, an RK4 simulator and a set of
//! example scenarios.

pub mod equilibria;
pub mod error;
pub mod model;
pub mod modified;
pub mod newton;
pub mod oracle;
pub mod qp;
pub mod sampling;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    lie_data, CertificatePair, ComparisonFunction, ComparisonKind, ControlInput, ControlSystem, DynamicsModel, LieData,
    Quadratic, ScalarCertificate, State,
};
pub use qp::{classify_region, solve, QpSolution, RegionTag, Weight};
pub use scenarios::{load, Scenario};
