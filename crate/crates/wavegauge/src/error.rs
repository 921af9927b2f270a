//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the gauge/functional/simulation
/// pipeline. Variants carry enough context to print a one-line diagnosis.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range, inconsistent, or unusable
    /// (e.g. a scale-invariant family with `k <= mu`, or a grid that would
    /// not fit in memory).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The Picard iteration for the gauge stopped making progress: the
    /// update norm grew on consecutive sweeps or the iteration cap was hit
    /// before reaching tolerance.
    #[error(
        "gauge iteration did not contract (lambda={lambda}, {iterations} iterations, \
         last update ratio {last_ratio:.3e})"
    )]
    NoContraction {
        lambda: f64,
        iterations: usize,
        last_ratio: f64,
    },

    /// The converged gauge perturbation left the decay class it was supposed
    /// to live in: some weighted field norm exceeds the admissible bound.
    #[error("constructed gauge left the decay class: {detail}")]
    NotInK { detail: String },

    /// An evaluation point or integration window falls outside the domain a
    /// stored field covers (gauge window, simulation band, bump support).
    #[error("domain: {0}")]
    Domain(String),

    /// The wave solver produced values growing too fast to be a genuine
    /// blow-up profile (grid-scale oscillation or collapse in too few steps).
    #[error("simulation unstable: {0}")]
    Unstable(String),

    /// A lifespan fit was requested with too little data or produced a slope
    /// inconsistent with itself.
    #[error("lifespan fit failed: {0}")]
    Fit(String),

    /// IO or serialization problems while reading configs / writing tables.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// TOML config parse failure.
    #[error("config parse: {0}")]
    TomlParse(#[from] toml::de::Error),

    /// JSON manifest serialization failure.
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
