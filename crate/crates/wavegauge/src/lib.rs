//! Numerical laboratory for the 1-D semilinear damped wave equation
//!
//! ```text
//! u_tt - u_xx + a(t,x) u_t = |u|^p
//! ```
//!
//! The crate has three legs:
//!
//! * [`gauge`] — constructs a gauge function `g(t,x)` that turns the damped
//!   operator into divergence form, by Picard iteration along characteristics.
//!   [`damping`] supplies the admissible damping coefficients and their
//!   decay certificates.
//! * [`testfn`] — smooth cutoff test functions, the envelope bounds their
//!   space-time integrals obey, and the discrete functionals that enter the
//!   blow-up test inequality.
//! * [`wavesim`] — a leapfrog solver for the full nonlinear equation, used to
//!   measure lifespans against the predicted small-data scaling.
//!
//! The [`cli`] module wires these into the `wavegauge` binary; [`config`]
//! holds the TOML run configuration it consumes.

pub mod cli;
pub mod config;
pub mod damping;
pub mod error;
pub mod gauge;
pub mod grid;
pub mod guide;
pub mod quad;
pub mod tail;
pub mod testfn;
pub mod wavesim;

pub use error::Error;
