//! Flux estimation for magnetic-field electromechanical systems from biased
//! current/voltage measurements.
//!
//! The crate covers the full pipeline:
//!
//! * [`models`] — port-Hamiltonian plant models (a two-phase PMSM and a 2-DOF
//!   magnetic levitation bench), the MagLev full-state controller, and the
//!   biased measurement channel.
//! * [`regression`] — the quadratic flux/current constraint, the nine-filter
//!   bank, and the linear regression `y = Φ_λᵀλ + Φ_θᵀθ` it produces.
//! * [`observers`] — the non-adaptive (robust) gradient flux observer, the
//!   adaptive observer that also estimates the bias parameters, an open-loop
//!   integration baseline, persistency-of-excitation estimation, and the
//!   robust observer's error-envelope constants.
//! * [`sim`] — a deterministic fixed-step RK4 harness coupling plant,
//!   controller, filters and observers, with trace recording, summary
//!   metrics and bias sweeps.
//! * [`checks`] — numerical verification suites (constraint, regression,
//!   derivative identities, observer cross-checks, error bounds) used by the
//!   CLI `verify` command and the acceptance tests.

pub mod checks;
pub mod models;
pub mod observers;
pub mod regression;
pub mod sim;
mod util;

pub use models::{
    Dims, MaglevControllerParams, MaglevParams, MeasurementBias, ModelError, ModelSpec,
    PlantState, PmsmParams,
};
pub use regression::{
    ConstraintConstants, FilterBankState, KnownSignals, RegressionSample, TrueParameters,
};
pub use sim::{RunOutput, Scenario, SimError, Summary, Trace};
