//! Damping coefficients a(t,x) and their decay certificates.
//!
//! Three families are supported:
//!
//! * `Perturbation` — a(t,x) = b(t,x), a pure perturbation;
//! * `ScaleInv2`    — a(t,x) = 2/(1+t) + b(t,x);
//! * `ScaleInvMu`   — a(t,x) = μ/(1+t) + b(t,x), μ > 0.
//!
//! The perturbation b is expected to satisfy the decay hypothesis
//! |∂_t^α ∂_x^β b| ≤ δ(1+t)^{-k-α} for α,β ∈ {0,1} with k > 1 and small δ;
//! [`certify_bound`] measures how close a concrete profile comes to it.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// First partials of a perturbation profile at one point.
///
/// `b_tt` is part of the evaluator contract for schemes that need a second
/// time derivative; nothing in this crate consumes it yet, so built-in
/// profiles fill it in and custom profiles may return `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileDerivs {
    pub b: f64,
    pub b_t: f64,
    pub b_x: f64,
    pub b_tx: f64,
    pub b_tt: Option<f64>,
}

/// Evaluator contract for user-supplied perturbation profiles.
///
/// Implementations must be C² on [0,∞)×ℝ and supply their own derivatives;
/// there is no automatic differentiation.
pub trait ProfileFn: Send + Sync {
    /// b and its partials at (t, x), scaled by the spec's δ already applied
    /// or not — the evaluator owns its amplitude; `DampingSpec::delta` is
    /// still used by `certify_bound` as the normalization.
    fn eval(&self, t: f64, x: f64) -> ProfileDerivs;

    /// Hint that b does not depend on x (enables the exact quadrature
    /// horizon in the gauge construction).
    fn x_independent(&self) -> bool {
        false
    }
}

/// Shape of the perturbation term b.
#[derive(Clone)]
pub enum PerturbationProfile {
    /// b ≡ 0.
    Zero,
    /// b(t) = δ(1+t)^{-k}.
    TimeOnlyPower,
    /// b(t,x) = δ(1+t)^{-k} cos(ωx).
    SeparableCosine { omega: f64 },
    /// Code-level extension point; out of config-file scope.
    Custom(Arc<dyn ProfileFn>),
}

impl fmt::Debug for PerturbationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::TimeOnlyPower => write!(f, "TimeOnlyPower"),
            Self::SeparableCosine { omega } => write!(f, "SeparableCosine {{ omega: {omega} }}"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Damping family selector. `ScaleInvMu` carries its exponent μ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Perturbation,
    ScaleInv2,
    ScaleInvMu { mu: f64 },
}

/// A damping coefficient: family plus perturbation profile and its decay
/// parameters δ ≥ 0, k > 1 (k > μ for `ScaleInvMu`).
#[derive(Debug, Clone)]
pub struct DampingSpec {
    pub family: Family,
    pub delta: f64,
    pub k: f64,
    pub profile: PerturbationProfile,
}

impl DampingSpec {
    pub fn new(family: Family, delta: f64, k: f64, profile: PerturbationProfile) -> Result<Self> {
        if !(k > 1.0) {
            return Err(Error::Config(format!("damping requires k > 1, got k = {k}")));
        }
        if !(delta >= 0.0) {
            return Err(Error::Config(format!("damping requires delta >= 0, got {delta}")));
        }
        if let Family::ScaleInvMu { mu } = family {
            if !(mu > 0.0) {
                return Err(Error::Config(format!("ScaleInvMu requires mu > 0, got {mu}")));
            }
            if !(k > mu) {
                return Err(Error::Config(format!(
                    "ScaleInvMu requires k > mu, got k = {k}, mu = {mu}"
                )));
            }
        }
        Ok(Self { family, delta, k, profile })
    }

    /// b and its partials at (t, x).
    pub fn profile_derivs(&self, t: f64, x: f64) -> ProfileDerivs {
        let (delta, k) = (self.delta, self.k);
        match &self.profile {
            PerturbationProfile::Zero => ProfileDerivs {
                b: 0.0,
                b_t: 0.0,
                b_x: 0.0,
                b_tx: 0.0,
                b_tt: Some(0.0),
            },
            PerturbationProfile::TimeOnlyPower => {
                let w = (1.0 + t).powf(-k);
                ProfileDerivs {
                    b: delta * w,
                    b_t: -delta * k * w / (1.0 + t),
                    b_x: 0.0,
                    b_tx: 0.0,
                    b_tt: Some(delta * k * (k + 1.0) * w / ((1.0 + t) * (1.0 + t))),
                }
            }
            PerturbationProfile::SeparableCosine { omega } => {
                let w = (1.0 + t).powf(-k);
                let (sin, cos) = (omega * x).sin_cos();
                ProfileDerivs {
                    b: delta * w * cos,
                    b_t: -delta * k * w / (1.0 + t) * cos,
                    b_x: -delta * w * omega * sin,
                    b_tx: delta * k * w / (1.0 + t) * omega * sin,
                    b_tt: Some(delta * k * (k + 1.0) * w / ((1.0 + t) * (1.0 + t)) * cos),
                }
            }
            PerturbationProfile::Custom(f) => f.eval(t, x),
        }
    }

    /// True when b (hence a's perturbation part) does not depend on x.
    pub fn x_independent(&self) -> bool {
        match &self.profile {
            PerturbationProfile::Zero | PerturbationProfile::TimeOnlyPower => true,
            PerturbationProfile::SeparableCosine { .. } => self.delta == 0.0,
            PerturbationProfile::Custom(f) => f.x_independent(),
        }
    }

    /// a, a_t, a_x, a_tx at (t, x) — the full bundle the gauge iteration
    /// differentiates under the integral sign.
    pub fn eval_full(&self, t: f64, x: f64) -> FullDerivs {
        let p = self.profile_derivs(t, x);
        let (base, base_t) = match self.family {
            Family::Perturbation => (0.0, 0.0),
            Family::ScaleInv2 => {
                let s = 1.0 + t;
                (2.0 / s, -2.0 / (s * s))
            }
            Family::ScaleInvMu { mu } => {
                let s = 1.0 + t;
                (mu / s, -mu / (s * s))
            }
        };
        FullDerivs {
            a: base + p.b,
            a_t: base_t + p.b_t,
            a_x: p.b_x,
            a_tx: p.b_tx,
        }
    }
}

/// a and its first partials, plus the mixed partial a_tx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullDerivs {
    pub a: f64,
    pub a_t: f64,
    pub a_x: f64,
    pub a_tx: f64,
}

/// a(t,x) and its first partials for the selected family.
pub fn eval_damping(spec: &DampingSpec, t: f64, x: f64) -> (f64, f64, f64) {
    debug_assert!(t >= 0.0, "damping is defined for t >= 0");
    let d = spec.eval_full(t, x);
    (d.a, d.a_t, d.a_x)
}

/// Outcome of sampling the decay hypothesis on a grid.
///
/// `ratios[alpha][beta]` is the measured sup of |∂_t^α ∂_x^β b|·(1+t)^{k+α}/δ.
/// The hypothesis wants every ratio ≤ 1; built-in profiles exceed it by
/// factors like k or ω, so the report also states the smallest rescaling of
/// δ that restores the bound rather than rejecting the profile.
#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    pub max_ratio: f64,
    pub ratios: [[f64; 2]; 2],
    pub rescaling_factor: f64,
    pub satisfies_hypothesis: bool,
}

/// Samples |∂_t^α ∂_x^β b|·(1+t)^{k+α}/δ over a uniform (t,x) grid and
/// reports the maxima. δ = 0 passes trivially with ratio 0. For the
/// `Perturbation` family b *is* a, so this certifies a itself.
pub fn certify_bound(spec: &DampingSpec, t_max: f64, x_max: f64, n_samples: usize) -> Result<BoundReport> {
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "certify_bound needs at least 2 samples per axis, got {n_samples}"
        )));
    }
    let mut ratios = [[0.0f64; 2]; 2];
    if spec.delta > 0.0 {
        for it in 0..n_samples {
            let t = t_max * it as f64 / (n_samples - 1) as f64;
            let w0 = (1.0 + t).powf(spec.k) / spec.delta;
            let w1 = w0 * (1.0 + t);
            for ix in 0..n_samples {
                let x = -x_max + 2.0 * x_max * ix as f64 / (n_samples - 1) as f64;
                let p = spec.profile_derivs(t, x);
                ratios[0][0] = ratios[0][0].max(p.b.abs() * w0);
                ratios[0][1] = ratios[0][1].max(p.b_x.abs() * w0);
                ratios[1][0] = ratios[1][0].max(p.b_t.abs() * w1);
                ratios[1][1] = ratios[1][1].max(p.b_tx.abs() * w1);
            }
        }
    }
    let max_ratio = ratios.iter().flatten().cloned().fold(0.0, f64::max);
    Ok(BoundReport {
        max_ratio,
        ratios,
        rescaling_factor: max_ratio.max(1.0),
        satisfies_hypothesis: max_ratio <= 1.0 + 1e-9,
    })
}
