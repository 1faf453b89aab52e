//! Gaussian-process learning of unknown dynamics wrapped inside an L1 adaptive
//! controller, together with a quadrotor angular-rate simulator used to study
//! the learning hand-off, abrupt uncertainty changes and time-delay margins.
//!
//! The crate is layered bottom-up:
//!
//! * [`numerics`]: matrix exponentials, Cholesky solves, RK4, Savitzky–Golay
//!   derivatives, impulse-response L1 norms and covering-number bounds.
//! * [`gp`]: per-channel GP regression with squared-exponential kernels and
//!   the high-probability uniform error envelope.
//! * [`learner`]: the sampled Bayesian learner that publishes piecewise-static
//!   models `{f_hat, e_f_hat}`.
//! * [`l1`]: state predictor, piecewise-constant adaptation, the `C(s)` and
//!   learning filters, control law and the L1-norm condition.
//! * [`plant`]: body-rate dynamics, baseline feedback, uncertainty schedules and
//!   the input delay line.
//! * [`scenario`]: the closed-loop engine, companion ideal/reference systems,
//!   metrics and the delay-margin search.

pub mod error;
pub mod gp;
pub mod l1;
pub mod learner;
pub mod numerics;
pub mod plant;
pub mod scenario;

pub use error::{Error, Result};
pub use numerics::{RealMatrix, RealVector};
