//! Census coverage-error laboratory.
//!
//! Dual-system (capture–recapture) estimation of the true population and net
//! undercount from a census plus a post-enumeration survey (PES), together with
//! a synthetic-population simulator, the Iran 2006 match-code pipeline and a
//! Monte Carlo harness.
//!
//! Module map:
//! - [`ds`]: the 2×2 capture table, the multinomial likelihood and the basic
//!   dual-system estimators.
//! - [`estimators`]: mover procedures A/B/C, the empirical estimator, the
//!   match-code estimator and the procedure-C table.
//! - [`sampling`]: two-stage cluster design, weights, noninterview adjustment.
//! - [`popsim`]: ground-truth population, census and PES capture.
//! - [`matching`]: household/person matching, follow-up and tallying.
//! - [`harness`]: experiment configuration, replicates, microdata I/O.

pub mod ds;
pub mod error;
pub mod estimators;
pub mod groups;
pub mod harness;
pub mod matching;
pub mod par;
pub mod popsim;
pub mod sampling;
pub mod seeds;

pub use error::{Error, Result};

/// Numerical tolerances shared by the identity checks.
pub mod tolerance {
    /// Relative tolerance for algebraic identities between estimator forms.
    pub const IDENTITY_REL: f64 = 1e-12;
    /// Absolute tolerance for the likelihood factorization.
    pub const LIKELIHOOD_ABS: f64 = 1e-10;
    /// Relative tolerance for weight conservation under noninterview adjustment.
    pub const WEIGHT_CONSERVATION_REL: f64 = 1e-9;
}
