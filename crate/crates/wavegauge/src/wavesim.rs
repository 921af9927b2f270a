//! Finite-difference solver for the semilinear damped wave equation
//!
//! ```text
//! u_tt − u_xx + a(t,x)·u_t = |u|^p,   u(0) = u₀,  u_t(0) = u₁,
//! ```
//!
//! on a band wide enough that the light cone of the data never reaches the
//! boundary. The scheme is leapfrog at unit CFL (dt = dx) with the damping
//! term folded in semi-implicitly:
//!
//! ```text
//! (1 + a·dt/2)·u^{m+1} = 2u^m − (1 − a·dt/2)·u^{m−1} + dt²(Δₓu^m + |u^m|^p),
//! ```
//!
//! which is exact for the free wave at dt = dx and second-order overall.
//! Runs march until the sup norm crosses a blow-up threshold (then continue
//! to twice the threshold to read off detection sensitivity), until the
//! solution goes non-finite, or until a time cap.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::damping::{eval_damping, DampingSpec};
use crate::error::{Error, Result};
use crate::grid::{build_grid, CharacteristicGrid};
use crate::quad::simpson;
use crate::testfn::phi;

/// |u|^p with an integer fast path; the nonlinearity is evaluated at every
/// node of every step, and exponents in practice are small integers.
pub(crate) fn abs_pow(u: f64, p: f64) -> f64 {
    let au = u.abs();
    let rounded = p.round();
    if (p - rounded).abs() < 1e-12 && (1.0..=8.0).contains(&rounded) {
        au.powi(rounded as i32)
    } else {
        au.powf(p)
    }
}

// ---------------------------------------------------------------------------
// initial data

/// Spatial profile of the Cauchy data.
#[derive(Clone)]
pub enum DataKind {
    /// Smooth plateau bump φ(x/L).
    Bump,
    /// Indicator of |x| ≤ L.
    Plateau,
    /// Arbitrary shapes x ↦ (s₀, s₁), each still scaled by ε and the
    /// respective amplitude.
    Custom(Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>),
}

impl fmt::Debug for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataKind::Bump => write!(f, "Bump"),
            DataKind::Plateau => write!(f, "Plateau"),
            DataKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Cauchy data u₀ = ε·amp₀·shape(x), u₁ = ε·amp₁·shape(x), supported in
/// |x| ≤ support_radius.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub kind: DataKind,
    pub u0_amplitude: f64,
    pub u1_amplitude: f64,
    pub support_radius: f64,
    pub epsilon: f64,
}

impl InitialData {
    /// (u₀, u₁) at one point.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let l = self.support_radius;
        let (s0, s1) = match &self.kind {
            DataKind::Bump => {
                let s = phi(x / l);
                (s, s)
            }
            DataKind::Plateau => {
                let s = if x.abs() <= l { 1.0 } else { 0.0 };
                (s, s)
            }
            DataKind::Custom(f) => f(x),
        };
        (
            self.epsilon * self.u0_amplitude * s0,
            self.epsilon * self.u1_amplitude * s1,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.support_radius > 0.0 && self.support_radius.is_finite()) {
            return Err(Error::Config(format!(
                "data support radius must be positive, got {}",
                self.support_radius
            )));
        }
        for (name, v) in [
            ("u0_amplitude", self.u0_amplitude),
            ("u1_amplitude", self.u1_amplitude),
            ("epsilon", self.epsilon),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("data field {name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// stepping

/// Two consecutive time levels plus the bookkeeping the stepper needs.
/// `window` brackets the support; it grows one cell per step, so nodes
/// outside it are exact zeros and are never touched.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub dx: f64,
    pub x_left: f64,
    /// Level m−1.
    pub u_prev: Vec<f64>,
    /// Level m.
    pub u: Vec<f64>,
    pub window: (usize, usize),
    /// Cleared to drop |u|^p and march the linear equation instead.
    pub nonlinearity_enabled: bool,
}

/// One leapfrog step: consumes the state at levels (m−1, m) and returns
/// (m, m+1). Identical results to a full-band sweep because everything
/// outside the window is zero and the stencil is three-point.
pub fn step(mut state: SimState, spec: &DampingSpec, p: f64, dt: f64) -> SimState {
    let nxb = state.u.len();
    let dx = state.dx;
    let (wl0, wr0) = state.window;
    let wl = wl0.saturating_sub(1).max(1);
    let wr = (wr0 + 1).min(nxb - 2);
    let t = state.t;
    let a_level = if spec.x_independent() { Some(eval_damping(spec, t, 0.0).0) } else { None };
    for j in wl..=wr {
        let a = match a_level {
            Some(a) => a,
            None => eval_damping(spec, t, state.x_left + j as f64 * dx).0,
        };
        let lap = (state.u[j - 1] - 2.0 * state.u[j] + state.u[j + 1]) / (dx * dx);
        let nl = if state.nonlinearity_enabled { abs_pow(state.u[j], p) } else { 0.0 };
        // overwrite of u_prev[j] is safe: the stencil reads u_prev at j only
        state.u_prev[j] =
            (2.0 * state.u[j] - (1.0 - 0.5 * a * dt) * state.u_prev[j] + dt * dt * (lap + nl))
                / (1.0 + 0.5 * a * dt);
    }
    std::mem::swap(&mut state.u_prev, &mut state.u);
    state.t = t + dt;
    state.window = (wl, wr);
    state
}

/// Taylor first step: u¹ = u⁰ + dt·u₁ + dt²/2·(Δₓu⁰ + |u⁰|^p − a(0,·)u₁).
fn first_level(
    u0: &[f64],
    u1: &[f64],
    spec: &DampingSpec,
    p: f64,
    dt: f64,
    dx: f64,
    x_left: f64,
    window: (usize, usize),
    nonlinear: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; u0.len()];
    for j in window.0..=window.1 {
        let x = x_left + j as f64 * dx;
        let (a, _, _) = eval_damping(spec, 0.0, x);
        let lap = (u0[j - 1] - 2.0 * u0[j] + u0[j + 1]) / (dx * dx);
        let nl = if nonlinear { abs_pow(u0[j], p) } else { 0.0 };
        out[j] = u0[j] + dt * u1[j] + 0.5 * dt * dt * (lap + nl - a * u1[j]);
    }
    out
}

// ---------------------------------------------------------------------------
// runs

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    /// Reached the time cap with the sup norm below threshold.
    Completed,
    /// Crossed the blow-up threshold (overflow past it counts too).
    BlewUp,
    /// Grid-scale sawtooth or a non-finite value below threshold:
    /// numerics gave out before any blow-up was in sight.
    Unstable,
}

/// Everything one run produces. Field histories (`u`, `u_t`) are recorded
/// only by [`run_recording_fields`] and are row-major level-by-level on
/// `grid`'s core rectangle; the scalar histories are always present, one
/// entry per level.
#[derive(Debug, Clone)]
pub struct SimSolution {
    /// Uniform rectangle actually marched: nt levels × nx band columns.
    pub grid: CharacteristicGrid,
    pub u: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub sup_u_history: Vec<f64>,
    pub h1l2_norm_history: Vec<f64>,
    pub status: SimStatus,
    /// First time the sup norm exceeded the threshold.
    pub t_detected: Option<f64>,
    /// First time it exceeded twice the threshold; the gap to `t_detected`
    /// measures how sensitive the detected lifespan is to the threshold.
    pub t_threshold2: Option<f64>,
}

/// Marches until blow-up detection, instability, or `t_cap`, keeping only
/// scalar histories. Returns the solution record and the detected lifespan.
pub fn run_until_blowup(
    spec: &DampingSpec,
    data: &InitialData,
    p: f64,
    dx: f64,
    blowup_threshold: f64,
    t_cap: f64,
) -> Result<(SimSolution, Option<f64>)> {
    run_inner(spec, data, p, dx, blowup_threshold, t_cap, false)
}

/// Same as [`run_until_blowup`] but records full u and u_t histories for
/// the functional stage.
pub fn run_recording_fields(
    spec: &DampingSpec,
    data: &InitialData,
    p: f64,
    dx: f64,
    blowup_threshold: f64,
    t_cap: f64,
) -> Result<(SimSolution, Option<f64>)> {
    run_inner(spec, data, p, dx, blowup_threshold, t_cap, true)
}

fn run_inner(
    spec: &DampingSpec,
    data: &InitialData,
    p: f64,
    dx: f64,
    blowup_threshold: f64,
    t_cap: f64,
    record: bool,
) -> Result<(SimSolution, Option<f64>)> {
    if !(p > 1.0) {
        return Err(Error::Config(format!("nonlinearity exponent must exceed 1, got {p}")));
    }
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::Config(format!("dx must be positive, got {dx}")));
    }
    if !(t_cap >= dx) {
        return Err(Error::Config(format!("t_cap = {t_cap} allows no step at dx = {dx}")));
    }
    if !(blowup_threshold > 0.0) {
        return Err(Error::Config(format!(
            "blow-up threshold must be positive, got {blowup_threshold}"
        )));
    }
    data.validate()?;

    let dt = dx;
    let n_steps = (t_cap / dt - 1e-9).ceil() as usize;
    // band: data support + domain of influence + one spare cell each side
    let half_cols = ((data.support_radius + t_cap) / dx).ceil() as usize + 2;
    let nxb = 2 * half_cols + 1;
    let x_left = -(half_cols as f64) * dx;

    let mut u0 = vec![0.0; nxb];
    let mut u1 = vec![0.0; nxb];
    for j in 0..nxb {
        let (a0, a1) = data.eval(x_left + j as f64 * dx);
        u0[j] = a0;
        u1[j] = a1;
    }
    // initial support bracket, padded one cell
    let support_cols = (data.support_radius / dx).ceil() as usize + 1;
    let window = (
        (half_cols - support_cols.min(half_cols)).max(1),
        (half_cols + support_cols).min(nxb - 2),
    );

    let sup0 = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let amp_scale = sup0
        .max(u1.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .max(1e-300);

    let mut u_hist = Vec::new();
    let mut ut_hist = Vec::new();
    let mut sup_hist = vec![sup0];
    let mut norm_hist = vec![h1l2_norm(&u0, &u1, dx)];
    if record {
        u_hist.extend_from_slice(&u0);
        ut_hist.extend_from_slice(&u1);
    }

    let first = first_level(&u0, &u1, spec, p, dt, dx, x_left, (1, nxb - 2), true);
    let mut state = SimState {
        t: dt,
        dx,
        x_left,
        u_prev: u0.clone(),
        u: first,
        window: (window.0.saturating_sub(1).max(1), (window.1 + 1).min(nxb - 2)),
        nonlinearity_enabled: true,
    };

    let mut t_detected = None;
    let mut t_threshold2 = None;
    let mut status = SimStatus::Completed;
    let mut m = 1;
    loop {
        let sup = state.u.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
        sup_hist.push(sup);
        let ut_row: Vec<f64> = state
            .u
            .iter()
            .zip(&state.u_prev)
            .map(|(a, b)| (a - b) / dt)
            .collect();
        norm_hist.push(h1l2_norm(&state.u, &ut_row, dx));
        if record {
            u_hist.extend_from_slice(&state.u);
            ut_hist.extend_from_slice(&ut_row);
        }

        if !sup.is_finite() {
            status = if t_detected.is_some() { SimStatus::BlewUp } else { SimStatus::Unstable };
            break;
        }
        if t_detected.is_none() && sup > 100.0 * amp_scale && sawtooth_at_peak(&state.u) {
            status = SimStatus::Unstable;
            break;
        }
        if t_detected.is_none() && sup >= blowup_threshold {
            t_detected = Some(state.t);
            status = SimStatus::BlewUp;
        }
        if t_detected.is_some() && sup >= 2.0 * blowup_threshold {
            t_threshold2 = Some(state.t);
            break;
        }
        if m >= n_steps {
            break;
        }
        state = step(state, spec, p, dt);
        m += 1;
    }

    let levels = sup_hist.len();
    let t_max = (levels - 1) as f64 * dt;
    let grid = build_grid(t_max, x_left, -x_left, dx, t_max)?;
    debug_assert_eq!(grid.nt, levels);
    debug_assert_eq!(grid.nx, nxb);
    let sol = SimSolution {
        grid,
        u: u_hist,
        u_t: ut_hist,
        u0,
        u1,
        sup_u_history: sup_hist,
        h1l2_norm_history: norm_hist,
        status,
        t_detected,
        t_threshold2,
    };
    Ok((sol, t_detected))
}

/// Discrete H¹×L² norm: (∫ u_t² + u_x² + u² dx)^{1/2} with centered u_x.
fn h1l2_norm(u: &[f64], u_t: &[f64], dx: f64) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for j in 0..n {
        let ux = if j > 0 && j + 1 < n { (u[j + 1] - u[j - 1]) / (2.0 * dx) } else { 0.0 };
        s += u_t[j] * u_t[j] + ux * ux + u[j] * u[j];
    }
    (s * dx).sqrt()
}

/// Grid-scale oscillation check near the peak: the classic leapfrog
/// breakdown is a sign-alternating sawtooth with neighbors of comparable
/// size, whereas a genuine focusing peak is one-signed. Only consulted
/// once the sup norm is far above the data scale.
pub(crate) fn sawtooth_at_peak(u: &[f64]) -> bool {
    let n = u.len();
    let mut jmax = 0;
    let mut best = 0.0;
    for (j, v) in u.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            jmax = j;
        }
    }
    if jmax < 2 || jmax + 2 >= n {
        return false;
    }
    let w = &u[jmax - 2..=jmax + 2];
    let alternating = w.windows(2).all(|ab| ab[0] * ab[1] < 0.0);
    let comparable =
        u[jmax - 1].abs() > 0.2 * u[jmax].abs() && u[jmax + 1].abs() > 0.2 * u[jmax].abs();
    alternating && comparable
}

// ---------------------------------------------------------------------------
// lifespan sweeps

/// One ε of a lifespan sweep: detected time at dx, the dx/2 confirmation
/// run, and whether the two agree to 5%.
#[derive(Debug, Clone, Serialize)]
pub struct LifespanRecord {
    pub epsilon: f64,
    pub t_eps: Option<f64>,
    pub dx: f64,
    pub t_eps_refined: Option<f64>,
    pub rel_diff: Option<f64>,
    pub confirmed: bool,
}

/// Runs the solver at every ε in `eps_list` (which must be non-increasing)
/// at steps dx and dx/2, in parallel, preserving input order.
pub fn lifespan_sweep(
    spec: &DampingSpec,
    data_template: &InitialData,
    p: f64,
    eps_list: &[f64],
    dx: f64,
    blowup_threshold: f64,
    t_cap: f64,
) -> Result<Vec<LifespanRecord>> {
    if eps_list.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("epsilon values must be positive".into()));
    }
    if eps_list.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config(
            "epsilon list must be non-increasing so lifespans sweep upward".into(),
        ));
    }
    eps_list
        .par_iter()
        .map(|&epsilon| {
            let data = InitialData { epsilon, ..data_template.clone() };
            let (_, t_eps) = run_until_blowup(spec, &data, p, dx, blowup_threshold, t_cap)?;
            let (_, t_ref) = run_until_blowup(spec, &data, p, dx / 2.0, blowup_threshold, t_cap)?;
            let rel_diff = match (t_eps, t_ref) {
                (Some(a), Some(b)) => Some((a - b).abs() / b),
                _ => None,
            };
            Ok(LifespanRecord {
                epsilon,
                t_eps,
                dx,
                t_eps_refined: t_ref,
                rel_diff,
                confirmed: rel_diff.map_or(false, |r| r <= 0.05),
            })
        })
        .collect()
}

/// Power-law fit of the confirmed lifespans against the theoretical decay.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KappaFit {
    /// Least-squares slope of ln T against ln ε.
    pub slope: f64,
    /// (1/(p−1))·(1 + 1/p): the exponent κ with T(ε) ≲ ε^{−1/κ}.
    pub kappa_theory: f64,
    /// Measured lifespans may decay up to 15% faster than ε^{−1/κ} before
    /// the fit is declared inconsistent.
    pub consistent: bool,
}

/// Fits ln T = slope·ln ε + c over the confirmed records. Needs at least
/// four of them to say anything.
pub fn fit_kappa(records: &[LifespanRecord], p: f64) -> Result<KappaFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.confirmed)
        .filter_map(|r| r.t_eps_refined.map(|t| (r.epsilon.ln(), t.ln())))
        .collect();
    if pts.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 confirmed lifespans for a slope, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let var = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    if var == 0.0 {
        return Err(Error::Fit("all confirmed records share one epsilon".into()));
    }
    let slope = cov / var;
    let kappa_theory = 1.0 / (p - 1.0) * (1.0 + 1.0 / p);
    Ok(KappaFit {
        slope,
        kappa_theory,
        consistent: slope >= -(1.0 / kappa_theory) * 1.15,
    })
}

// ---------------------------------------------------------------------------
// ODE reference

/// Blow-up time of w″ = w^p, w(0) = w₀ > 0, w′(0) = 0:
///
/// ```text
/// T = ∫_{w₀}^∞ dw / √(2(w^{p+1} − w₀^{p+1})/(p+1)),
/// ```
///
/// the exact lifespan of the spatially flat solution inside its cone of
/// constancy. Computed with the substitution w = w₀ + z² (which removes the
/// inverse-square-root endpoint) plus an analytic far-tail correction.
pub fn ode_blowup_time(p: f64, w0: f64) -> f64 {
    assert!(p > 1.0 && w0 > 0.0, "need p > 1 and positive initial value");
    let f0 = w0.powf(p + 1.0) / (p + 1.0);
    let integrand = |z: f64| -> f64 {
        if z == 0.0 {
            return 2.0 / (2.0 * w0.powf(p)).sqrt();
        }
        let w = w0 + z * z;
        let diff = w.powf(p + 1.0) / (p + 1.0) - f0;
        2.0 * z / (2.0 * diff).sqrt()
    };
    let sample = |a: f64, b: f64, n: usize| -> f64 {
        let h = (b - a) / (n - 1) as f64;
        let vals: Vec<f64> = (0..n).map(|i| integrand(a + i as f64 * h)).collect();
        simpson(&vals, h)
    };
    let z_split = 10.0 * w0.sqrt().max(1.0);
    let z_far = 1e4 * w0.sqrt().max(1.0);
    let near = sample(0.0, z_split, 8001);
    let far = sample(z_split, z_far, 80001);
    // beyond z_far the integrand is √(2(p+1))·z^{−p} up to O(z^{−2}) corrections
    let tail = (2.0 * (p + 1.0)).sqrt() / (p - 1.0) * z_far.powf(1.0 - p);
    near + far + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::damping::{Family, PerturbationProfile};

    fn undamped() -> DampingSpec {
        DampingSpec::new(Family::Perturbation, 0.0, 2.0, PerturbationProfile::TimeOnlyPower)
            .unwrap()
    }

    fn bump_data(epsilon: f64) -> InitialData {
        InitialData {
            kind: DataKind::Bump,
            u0_amplitude: 1.0,
            u1_amplitude: 0.0,
            support_radius: 1.0,
            epsilon,
        }
    }

    #[test]
    fn free_wave_is_exact_at_unit_cfl() {
        // At dt = dx the leapfrog scheme reproduces d'Alembert exactly for
        // position-only data, so 60 steps should agree to roundoff.
        let spec = undamped();
        let dx = 0.05;
        let nxb = 201;
        let x_left = -5.0;
        let mut u0 = vec![0.0; nxb];
        for j in 0..nxb {
            u0[j] = phi(x_left + j as f64 * dx);
        }
        let u1 = vec![0.0; nxb];
        let first = first_level(&u0, &u1, &spec, 2.0, dx, dx, x_left, (1, nxb - 2), false);
        let mut state = SimState {
            t: dx,
            dx,
            x_left,
            u_prev: u0.clone(),
            u: first,
            window: (1, nxb - 2),
            nonlinearity_enabled: false,
        };
        for _ in 0..59 {
            state = step(state, &spec, 2.0, dx);
        }
        let t = state.t;
        assert!((t - 3.0).abs() < 1e-12);
        for j in 0..nxb {
            let x = x_left + j as f64 * dx;
            let exact = 0.5 * (phi(x - t) + phi(x + t));
            assert!(
                (state.u[j] - exact).abs() < 1e-12,
                "drift at x = {x}: {} vs {exact}",
                state.u[j]
            );
        }
    }

    #[test]
    fn zero_data_stays_zero_and_reports_no_blowup() {
        let spec = undamped();
        let data = bump_data(0.0);
        let (sol, detected) = run_recording_fields(&spec, &data, 2.0, 0.1, 1e8, 1.0).unwrap();
        assert_eq!(detected, None);
        assert_eq!(sol.status, SimStatus::Completed);
        assert!(sol.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthetic_power_law_fits_exactly() {
        // Records following T = ε^{−2/3} on the nose regress to slope −2/3,
        // which sits exactly on the p = 2 theory exponent.
        let records: Vec<LifespanRecord> = [0.5, 0.25, 0.125, 0.0625]
            .iter()
            .map(|&epsilon: &f64| {
                let t = epsilon.powf(-2.0 / 3.0);
                LifespanRecord {
                    epsilon,
                    t_eps: Some(t),
                    dx: 0.01,
                    t_eps_refined: Some(t),
                    rel_diff: Some(0.0),
                    confirmed: true,
                }
            })
            .collect();
        let fit = fit_kappa(&records, 2.0).unwrap();
        assert!((fit.slope + 2.0 / 3.0).abs() < 1e-12, "slope {}", fit.slope);
        assert!((fit.kappa_theory - 1.5).abs() < 1e-12);
        assert!(fit.consistent);
        // and for p = 3 the theory exponent is κ = (1/2)(4/3) = 2/3
        let fit3 = fit_kappa(&records, 3.0).unwrap();
        assert!((fit3.kappa_theory - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_march_conserves_discrete_energy() {
        // Nonlinearity off, a ≡ 0: the staggered energy
        //   E = ½‖(u^{m+1}−u^m)/dt‖² + ½(D₊u^{m+1}, D₊u^m)
        // is a conserved quantity of the linear leapfrog march.
        let spec = undamped();
        let dx = 0.01;
        let x_left = -11.5;
        let nxb = 2301;
        let mut u0 = vec![0.0; nxb];
        for (j, v) in u0.iter_mut().enumerate() {
            let x = x_left + j as f64 * dx;
            if x.abs() <= 1.0 {
                *v = (std::f64::consts::PI * x).sin();
            }
        }
        let u1 = vec![0.0; nxb];
        let energy = |a: &[f64], b: &[f64]| -> f64 {
            let mut kin = 0.0;
            let mut pot = 0.0;
            for j in 0..nxb - 1 {
                let dt_u = (b[j] - a[j]) / dx;
                kin += dt_u * dt_u;
                pot += (b[j + 1] - b[j]) * (a[j + 1] - a[j]) / (dx * dx);
            }
            0.5 * (kin + pot) * dx
        };
        let first = first_level(&u0, &u1, &spec, 2.0, dx, dx, x_left, (1, nxb - 2), false);
        let e0 = energy(&u0, &first);
        let mut state = SimState {
            t: dx,
            dx,
            x_left,
            u_prev: u0,
            u: first,
            window: (1, nxb - 2),
            nonlinearity_enabled: false,
        };
        let mut max_drift = 0.0f64;
        for _ in 0..1000 {
            let prev = state.u.clone();
            state = step(state, &spec, 2.0, dx);
            max_drift = max_drift.max((energy(&prev, &state.u) - e0).abs() / e0);
        }
        println!("relative energy drift over 1000 steps: {max_drift:.3e}");
        assert!(max_drift <= 1e-4, "drift {max_drift}");
    }

    #[test]
    fn window_matches_full_band_bitwise() {
        let spec = undamped();
        let data = bump_data(0.5);
        let dx = 0.1;
        let t_cap = 2.0;
        let (sol_windowed, _) = run_until_blowup(&spec, &data, 2.0, dx, 1e8, t_cap).unwrap();

        // replay with the window pinned to the whole band
        let nxb = sol_windowed.grid.nx;
        let x_left = sol_windowed.grid.x_min;
        let u0 = sol_windowed.u0.clone();
        let u1 = sol_windowed.u1.clone();
        let first = first_level(&u0, &u1, &spec, 2.0, dx, dx, x_left, (1, nxb - 2), true);
        let mut state = SimState {
            t: dx,
            dx,
            x_left,
            u_prev: u0,
            u: first,
            window: (1, nxb - 2),
            nonlinearity_enabled: true,
        };
        let steps = sol_windowed.sup_u_history.len() - 1;
        for _ in 1..steps {
            state = step(state, &spec, 2.0, dx);
        }
        let sup = state.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(sup, *sol_windowed.sup_u_history.last().unwrap());
    }

    #[test]
    fn support_respects_finite_propagation() {
        let spec = undamped();
        let data = bump_data(0.3);
        let dx = 0.05;
        let (sol, _) = run_recording_fields(&spec, &data, 2.0, dx, 1e8, 1.5).unwrap();
        assert_eq!(sol.status, SimStatus::Completed);
        let grid = &sol.grid;
        for i in 0..grid.nt {
            let t = grid.t(i);
            let reach = data.support_radius + t + 2.0 * dx;
            for j in 0..grid.nx {
                let x = grid.x(j as isize);
                if x.abs() > reach + 1e-9 {
                    assert_eq!(sol.u[grid.core_idx(i, j)], 0.0, "leak at t={t}, x={x}");
                }
            }
        }
    }

    #[test]
    fn plateau_center_follows_the_ode() {
        // Flat data of height 1 on |x| ≤ 8 blows up at the center like
        // w″ = w², whose lifespan the quadrature oracle pins down.
        let spec = undamped();
        let data = InitialData {
            kind: DataKind::Plateau,
            u0_amplitude: 1.0,
            u1_amplitude: 0.0,
            support_radius: 8.0,
            epsilon: 1.0,
        };
        let t_ode = ode_blowup_time(2.0, 1.0);
        let (sol, detected) = run_until_blowup(&spec, &data, 2.0, 0.05, 1e8, 4.0).unwrap();
        let t = detected.expect("plateau data must blow up");
        assert_eq!(sol.status, SimStatus::BlewUp);
        println!("detected T = {t}, ODE T = {t_ode}");
        assert!((t - t_ode).abs() / t_ode < 0.05, "detected {t} vs ode {t_ode}");
        // pushing on to twice the threshold barely moves the detection
        let t2 = sol.t_threshold2.expect("should reach 2x threshold");
        assert!(t2 >= t && (t2 - t) / t < 0.02);
    }

    /// RK4 on w″ = |w|^p as a first-order system, fine enough to serve as
    /// an exact reference for the second-order march.
    fn rk4_ode(p: f64, w0: f64, t_end: f64, n: usize) -> f64 {
        let h = t_end / n as f64;
        let f = |w: f64, v: f64| (v, abs_pow(w, p));
        let (mut w, mut v) = (w0, 0.0);
        for _ in 0..n {
            let (k1w, k1v) = f(w, v);
            let (k2w, k2v) = f(w + 0.5 * h * k1w, v + 0.5 * h * k1v);
            let (k3w, k3v) = f(w + 0.5 * h * k2w, v + 0.5 * h * k2v);
            let (k4w, k4v) = f(w + h * k3w, v + h * k3v);
            w += h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        w
    }

    #[test]
    fn plateau_center_converges_to_ode_at_second_order() {
        // Inside the light cone of the plateau edges the center column is an
        // ODE in time; halving dx must cut the pointwise error fourfold.
        let spec = undamped();
        let data = InitialData {
            kind: DataKind::Plateau,
            u0_amplitude: 1.0,
            u1_amplitude: 0.0,
            support_radius: 4.0,
            epsilon: 1.0,
        };
        let w_ref = rk4_ode(2.0, 1.0, 1.0, 20_000);
        let mut errs = Vec::new();
        for dx in [0.05, 0.025] {
            let (sol, _) = run_recording_fields(&spec, &data, 2.0, dx, 1e8, 1.0).unwrap();
            let grid = &sol.grid;
            let i = ((1.0 / dx).round()) as usize;
            let j0 = (-grid.x_min / dx).round() as usize;
            assert!(grid.x(j0 as isize).abs() < 1e-12);
            errs.push((sol.u[grid.core_idx(i, j0)] - w_ref).abs());
        }
        let ratio = errs[0] / errs[1];
        println!("center errors {errs:?}, ratio {ratio:.2}");
        assert!(ratio > 3.0 && ratio < 5.0, "expected ~4x error drop, got {ratio}");
    }

    #[test]
    fn ode_time_is_stable_and_matches_frozen_value() {
        // Independent closed form: substituting w = u^{-2} turns the integral
        // into a Beta function, T = √(3/2)·B(1/6,1/2)/3 = 2.974503…
        let t = ode_blowup_time(2.0, 1.0);
        assert!((t - 2.9745).abs() < 1e-3, "got {t}");
        // doubling w0 shortens the fuse with the exact scaling T ∝ w0^{(1−p)/2}
        let t2 = ode_blowup_time(2.0, 2.0);
        assert!((t2 / t - 0.5f64.sqrt()).abs() < 1e-6, "ratio {}", t2 / t);
    }

    #[test]
    fn coarse_blowup_reads_as_blowup_not_instability() {
        // Badly under-resolved focusing must still classify as BlewUp: the
        // sawtooth detector only fires on sign-alternating profiles.
        let spec = undamped();
        let data = InitialData {
            kind: DataKind::Plateau,
            u0_amplitude: 2.0,
            u1_amplitude: 0.0,
            support_radius: 2.0,
            epsilon: 1.0,
        };
        let (sol, detected) = run_until_blowup(&spec, &data, 4.0, 0.1, 1e8, 3.0).unwrap();
        assert_eq!(sol.status, SimStatus::BlewUp);
        assert!(detected.is_some());
    }

    #[test]
    fn sawtooth_classifier_separates_modes() {
        let saw = [0.0, 1.0, -2.0, 4.0, -8.0, 16.0, -9.0, 3.0, -1.0, 0.0];
        assert!(sawtooth_at_peak(&saw));
        let peak = [0.0, 1.0, 3.0, 9.0, 20.0, 9.0, 3.0, 1.0, 0.0];
        assert!(!sawtooth_at_peak(&peak));
        // alternating but with negligible neighbors: an isolated spike
        let spike = [0.0, 1e-3, -2e-3, 50.0, -1e-3, 2e-3, 0.0];
        assert!(!sawtooth_at_peak(&spike));
    }

    #[test]
    fn custom_data_shapes_are_scaled() {
        let data = InitialData {
            kind: DataKind::Custom(Arc::new(|x: f64| ((1.0 - x * x).max(0.0), x))),
            u0_amplitude: 2.0,
            u1_amplitude: 3.0,
            support_radius: 1.0,
            epsilon: 0.5,
        };
        let (a0, a1) = data.eval(0.5);
        assert!((a0 - 0.5 * 2.0 * 0.75).abs() < 1e-15);
        assert!((a1 - 0.5 * 3.0 * 0.5).abs() < 1e-15);
        let plateau = InitialData {
            kind: DataKind::Plateau,
            u0_amplitude: 1.0,
            u1_amplitude: 0.0,
            support_radius: 2.0,
            epsilon: 1.0,
        };
        assert_eq!(plateau.eval(2.0).0, 1.0);
        assert_eq!(plateau.eval(2.0 + 1e-12).0, 0.0);
    }

    #[test]
    fn sweep_validates_ordering_and_reports_non_detections() {
        let spec = undamped();
        let data = bump_data(1.0);
        assert!(matches!(
            lifespan_sweep(&spec, &data, 2.0, &[0.1, 0.2], 0.1, 1e8, 1.0),
            Err(Error::Config(_))
        ));
        // a tiny cap means nothing blows up; records still come back
        let recs = lifespan_sweep(&spec, &data, 2.0, &[0.2, 0.1], 0.1, 1e8, 1.0).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.t_eps.is_none() && !r.confirmed));
        assert!((recs[0].epsilon, recs[1].epsilon) == (0.2, 0.1));
    }

    #[test]
    fn kappa_fit_needs_four_confirmed_records() {
        let mk = |eps: f64, t: f64, ok: bool| LifespanRecord {
            epsilon: eps,
            t_eps: Some(t),
            dx: 0.1,
            t_eps_refined: Some(t),
            rel_diff: Some(0.0),
            confirmed: ok,
        };
        let three: Vec<_> = [(0.4, 2.0), (0.2, 3.0), (0.1, 4.5)]
            .iter()
            .map(|&(e, t)| mk(e, t, true))
            .collect();
        assert!(matches!(fit_kappa(&three, 2.0), Err(Error::Fit(_))));

        // exact power law T = ε^{−1/2}: slope −0.5, inside the 15% band
        let recs: Vec<_> = [0.8, 0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&e| mk(e, e.powf(-0.5), true))
            .collect();
        let fit = fit_kappa(&recs, 2.0).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.kappa_theory - 1.5).abs() < 1e-15);
        assert!(fit.consistent);

        // much steeper decay T = ε^{−1} is flagged
        let steep: Vec<_> = [0.8, 0.4, 0.2, 0.1].iter().map(|&e| mk(e, 1.0 / e, true)).collect();
        assert!(!fit_kappa(&steep, 2.0).unwrap().consistent);
    }

    #[test]
    fn abs_pow_fast_path_matches_powf() {
        for &u in &[-3.5, -1.0, 0.0, 0.7, 2.0, 9.9] {
            for &p in &[2.0, 3.0, 4.0, 8.0] {
                assert_eq!(abs_pow(u, p), u.abs().powf(p));
            }
            assert_eq!(abs_pow(u, 2.5), u.abs().powf(2.5));
        }
    }
}
