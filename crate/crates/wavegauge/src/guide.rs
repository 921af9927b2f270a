//! The user guide, compiled.
//!
//! Each submodule's documentation is a chapter of the mdbook under
//! `book/`, included verbatim so that every snippet in the guide is a
//! doc-test: if the book drifts from the API, `cargo test --doc` breaks.

#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}

#[doc = include_str!("../../../book/src/damping-families.md")]
pub mod damping_families {}

#[doc = include_str!("../../../book/src/gauge-construction.md")]
pub mod gauge_construction {}

#[doc = include_str!("../../../book/src/accuracy-and-horizons.md")]
pub mod accuracy_and_horizons {}

#[doc = include_str!("../../../book/src/test-functions-and-functionals.md")]
pub mod test_functions_and_functionals {}

#[doc = include_str!("../../../book/src/wave-solver-and-lifespans.md")]
pub mod wave_solver_and_lifespans {}

#[doc = include_str!("../../../book/src/cli-reference.md")]
pub mod cli_reference {}
