//! Gauge construction by Picard iteration along characteristics.
//!
//! The gauge g multiplies the damped wave operator into divergence form.
//! Writing g through the family ansatz
//!
//! ```text
//! Perturbation:  g = 1 + h
//! ScaleInv2:     g = (1+t)(1+h)
//! ScaleInvMu:    g = (1+t)^μ (1+h)
//! ```
//!
//! reduces everything to the correction h, which solves
//! h_tt − h_xx = A·h_t + B·(1+h) with family coefficients A, B built from
//! the perturbation b. Diagonalizing with v₁ = h_t + h_x, v₂ = h_t − h_x
//! turns this into integral equations along the characteristics:
//!
//! ```text
//! v₁(t,x) = −∫_t^S [ A/2·(v₁+v₂) + B·(1+h) ](s, x + t − s) ds + v₁(S)
//! v₂(t,x) = −∫_t^S [ A/2·(v₁+v₂) + B·(1+h) ](s, x − t + s) ds + v₂(S)
//! h(t,x)  = −½∫_t^S (v₁+v₂)(s, x) ds + h(S)
//! ```
//!
//! with S the quadrature horizon. The ∂_x companions satisfy the same
//! equations with the integrand differentiated under the integral sign.
//! Iterating from zero contracts in a weighted sup norm for small δ; the
//! horizon is closed either exactly (x-independent damping, see
//! [`crate::tail`]) or by zero truncation with an explicit tail majorant.

use serde::Serialize;

use crate::damping::{DampingSpec, Family};
use crate::error::{Error, Result};
use crate::grid::CharacteristicGrid;
use crate::quad::simpson_prefix_from_end;
use crate::tail::solve_tail;

/// Which integral-equation variant is iterated; must match the damping
/// family (each family has its own ansatz and coefficients A, B).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationVariant {
    Perturbation,
    ScaleInv2,
    ScaleInvMu,
}

impl IterationVariant {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Perturbation => Self::Perturbation,
            Family::ScaleInv2 => Self::ScaleInv2,
            Family::ScaleInvMu { .. } => Self::ScaleInvMu,
        }
    }

    fn matches(self, family: Family) -> bool {
        self == Self::for_family(family)
    }
}

/// Transport-form coefficients at one point: the system reads
/// (∂_t ∓ ∂_x)v_{1,2} = A·(v₁+v₂)/2 + B·(1+h), and `ax`, `bx` are the
/// x-derivatives of A and B for the differentiated companions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DivCoeffs {
    pub a: f64,
    pub b: f64,
    pub ax: f64,
    pub bx: f64,
}

pub(crate) fn div_coeffs(spec: &DampingSpec, t: f64, x: f64) -> DivCoeffs {
    let p = spec.profile_derivs(t, x);
    match spec.family {
        Family::Perturbation => DivCoeffs {
            a: p.b,
            b: p.b_t,
            ax: p.b_x,
            bx: p.b_tx,
        },
        Family::ScaleInv2 => {
            let s = 1.0 + t;
            DivCoeffs {
                a: p.b,
                b: p.b / s + p.b_t,
                ax: p.b_x,
                bx: p.b_x / s + p.b_tx,
            }
        }
        Family::ScaleInvMu { mu } => {
            let s = 1.0 + t;
            DivCoeffs {
                a: p.b - mu / s,
                b: mu * p.b / s + p.b_t,
                ax: p.b_x,
                bx: mu * p.b_x / s + p.b_tx,
            }
        }
    }
}

/// The iterated unknowns on the characteristic lattice: v₁, v₂, h and
/// their ∂_x companions, plus the convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct AuxTriple {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub h: Vec<f64>,
    pub dv1: Vec<f64>,
    pub dv2: Vec<f64>,
    pub dh: Vec<f64>,
    /// Amplitude bound θ ∈ (0,1) the construction aims for.
    pub theta: f64,
    /// θ′ = θ·min{k−1, 1}; the v-bound for the ScaleInvMu variant.
    pub theta_prime: f64,
    /// Weight of the v-components in the stopping norm; 1 unless raised
    /// for the ScaleInvMu variant.
    pub lambda: f64,
    pub variant: IterationVariant,
    pub iter_count: usize,
    pub contraction_r: f64,
}

impl AuxTriple {
    /// The zero element of K_θ — the canonical starting iterate.
    pub fn zeros(
        grid: &CharacteristicGrid,
        theta: f64,
        k: f64,
        lambda: f64,
        variant: IterationVariant,
    ) -> Self {
        let n = grid.n_nodes();
        Self {
            v1: vec![0.0; n],
            v2: vec![0.0; n],
            h: vec![0.0; n],
            dv1: vec![0.0; n],
            dv2: vec![0.0; n],
            dh: vec![0.0; n],
            theta,
            theta_prime: theta * (k - 1.0).min(1.0),
            lambda,
            variant,
            iter_count: 0,
            contraction_r: 0.0,
        }
    }

    /// Fresh zero arrays carrying over the bookkeeping fields.
    fn zeros_like(other: &AuxTriple, n: usize) -> Self {
        Self {
            v1: vec![0.0; n],
            v2: vec![0.0; n],
            h: vec![0.0; n],
            dv1: vec![0.0; n],
            dv2: vec![0.0; n],
            dh: vec![0.0; n],
            theta: other.theta,
            theta_prime: other.theta_prime,
            lambda: other.lambda,
            variant: other.variant,
            iter_count: other.iter_count,
            contraction_r: other.contraction_r,
        }
    }
}

/// The gauge g and its first partials on the core output window
/// (row-major `nt` × `nx`, t-level major).
#[derive(Debug, Clone)]
pub struct GaugeField {
    pub g: Vec<f64>,
    pub g_t: Vec<f64>,
    pub g_x: Vec<f64>,
    pub family: Family,
    pub nt: usize,
    pub nx: usize,
    pub delta_step: f64,
    pub x_min: f64,
}

impl GaugeField {
    #[inline]
    pub fn core_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nt && j < self.nx);
        i * self.nx + j
    }

    pub fn t_max(&self) -> f64 {
        (self.nt - 1) as f64 * self.delta_step
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + (self.nx - 1) as f64 * self.delta_step
    }

    /// (g, g_t, g_x) at (t, x) by bilinear interpolation; errors if the
    /// point lies outside the stored window.
    pub fn at(&self, t: f64, x: f64) -> Result<(f64, f64, f64)> {
        let d = self.delta_step;
        let eps = 1e-9 * d;
        if t < -eps || t > self.t_max() + eps || x < self.x_min - eps || x > self.x_max() + eps {
            return Err(Error::Domain(format!(
                "point (t={t}, x={x}) outside the gauge window [0, {}] x [{}, {}]",
                self.t_max(),
                self.x_min,
                self.x_max()
            )));
        }
        let ti = ((t / d) as usize).min(self.nt - 2);
        let xi = (((x - self.x_min) / d) as usize).min(self.nx - 2);
        let ft = (t / d - ti as f64).clamp(0.0, 1.0);
        let fx = ((x - self.x_min) / d - xi as f64).clamp(0.0, 1.0);
        let lerp = |f: &[f64]| {
            let i00 = f[self.core_idx(ti, xi)];
            let i01 = f[self.core_idx(ti, xi + 1)];
            let i10 = f[self.core_idx(ti + 1, xi)];
            let i11 = f[self.core_idx(ti + 1, xi + 1)];
            (1.0 - ft) * ((1.0 - fx) * i00 + fx * i01) + ft * ((1.0 - fx) * i10 + fx * i11)
        };
        Ok((lerp(&self.g), lerp(&self.g_t), lerp(&self.g_x)))
    }
}

/// How the improper integrals were closed at the horizon s_max.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HorizonClosure {
    /// Tail replaced by zero; `bound` is the analytic majorant of the
    /// neglected integral (see [`tail_bound`]).
    Zero { bound: f64 },
    /// Horizon values taken from the far-field ODE solve; `bound` is that
    /// solver's final update norm (near machine precision).
    Exact { v: f64, h: f64, bound: f64 },
}

impl HorizonClosure {
    /// Truncation bound the closure contributes to the solution error.
    pub fn bound(&self) -> f64 {
        match self {
            Self::Zero { bound } | Self::Exact { bound, .. } => *bound,
        }
    }

    fn values(&self) -> (f64, f64) {
        match self {
            Self::Zero { .. } => (0.0, 0.0),
            Self::Exact { v, h, .. } => (*v, *h),
        }
    }

    /// Picks the best closure available for the spec: the exact far-field
    /// solve when the damping is x-independent with k ≥ 2, zero truncation
    /// with the analytic majorant otherwise.
    pub fn auto(spec: &DampingSpec, grid: &CharacteristicGrid, theta: f64) -> Result<Self> {
        if spec.x_independent() && spec.k >= 2.0 {
            let sol = solve_tail(spec, grid.s_max, 2001, 1e-13)?;
            Ok(Self::Exact {
                v: sol.v_at_horizon,
                h: sol.h_at_horizon,
                bound: sol.last_update.max(1e-15),
            })
        } else {
            Ok(Self::Zero {
                bound: tail_bound(spec, grid.s_max, theta),
            })
        }
    }
}

/// Upper bound for the neglected ∫_{s_max}^∞ of the iteration integrand
/// over K_θ, integrating the majorant δθ(1+s)^{−2k} + δ(1+θ)(1+s)^{−k−1}
/// (plus μθ′(1+s)^{−k−1} for ScaleInvMu) in closed form.
pub fn tail_bound(spec: &DampingSpec, s_max: f64, theta: f64) -> f64 {
    let (delta, k) = (spec.delta, spec.k);
    let w = 1.0 + s_max;
    let mut bound = delta * theta * w.powf(1.0 - 2.0 * k) / (2.0 * k - 1.0)
        + delta * (1.0 + theta) * w.powf(-k) / k;
    if let Family::ScaleInvMu { mu } = spec.family {
        let theta_prime = theta * (k - 1.0).min(1.0);
        bound += mu * theta_prime * w.powf(-k) / k;
    }
    bound
}

/// Horizon that makes the zero-truncation tail bound ≤ 0.1·tol, rounded up
/// to a lattice level. Specs eligible for the exact closure need no
/// extension and get s_max = t_max back.
pub fn auto_s_max(spec: &DampingSpec, t_max: f64, x_min: f64, x_max: f64, delta_step: f64, theta: f64, tol: f64) -> Result<f64> {
    if spec.x_independent() && spec.k >= 2.0 {
        return Ok(t_max);
    }
    let target = 0.1 * tol;
    if tail_bound(spec, t_max, theta) <= target {
        return Ok(t_max);
    }
    // tail_bound is monotone decreasing in s_max; double to bracket, then
    // bisect down to lattice resolution.
    let mut hi = t_max.max(1.0);
    while tail_bound(spec, hi, theta) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Config(
                "tail bound target unreachable; raise tol or use an x-independent profile".into(),
            ));
        }
    }
    let mut lo = t_max;
    while hi - lo > delta_step {
        let mid = 0.5 * (lo + hi);
        if tail_bound(spec, mid, theta) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let levels = (hi / delta_step).ceil();
    let s_max = levels * delta_step;
    // Guard against cone sizes that cannot fit in memory: the stored node
    // count grows quadratically with the horizon.
    let n_s = levels as usize;
    let nx = ((x_max - x_min) / delta_step).round() as usize + 1;
    let nodes = (n_s + 1) * (nx + n_s);
    if nodes > 30_000_000 {
        return Err(Error::Config(format!(
            "horizon {s_max} needs {nodes} lattice nodes; raise tol or refine the profile"
        )));
    }
    Ok(s_max)
}

/// Diagnostics of one construction run.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub final_update_norm: f64,
    pub contraction_r: f64,
    /// Truncation bound of the horizon closure actually used.
    pub tail_bound: f64,
    pub in_k_theta: bool,
    pub lambda: f64,
    pub s_max: f64,
    pub closure: HorizonClosure,
}

/// Precomputed coefficients and closure for repeated applications of the
/// iteration map on one grid.
pub struct PicardContext {
    grid: CharacteristicGrid,
    variant: IterationVariant,
    ca: Vec<f64>,
    cb: Vec<f64>,
    cax: Vec<f64>,
    cbx: Vec<f64>,
    closure: HorizonClosure,
}

impl PicardContext {
    pub fn new(spec: &DampingSpec, grid: &CharacteristicGrid, closure: HorizonClosure) -> Self {
        let n = grid.n_nodes();
        let mut ca = vec![0.0; n];
        let mut cb = vec![0.0; n];
        let mut cax = vec![0.0; n];
        let mut cbx = vec![0.0; n];
        for i in 0..grid.n_levels() {
            let t = grid.t(i);
            let (lo, hi) = grid.cols(i);
            for j in lo..=hi {
                let c = div_coeffs(spec, t, grid.x(j));
                let id = grid.idx(i, j);
                ca[id] = c.a;
                cb[id] = c.b;
                cax[id] = c.ax;
                cbx[id] = c.bx;
            }
        }
        Self {
            grid: grid.clone(),
            variant: IterationVariant::for_family(spec.family),
            ca,
            cb,
            cax,
            cbx,
            closure,
        }
    }

    pub fn grid(&self) -> &CharacteristicGrid {
        &self.grid
    }

    pub fn closure(&self) -> &HorizonClosure {
        &self.closure
    }

    /// One application of the iteration map: new v₁, v₂ from the previous
    /// triple, then h from the *new* v's, each by Simpson prefix sums along
    /// its ray family; derivative grids from the differentiated integrands.
    pub fn apply(&self, prev: &AuxTriple) -> Result<AuxTriple> {
        let grid = &self.grid;
        let n = grid.n_nodes();
        if prev.v1.len() != n {
            return Err(Error::Config(format!(
                "triple has {} nodes but the grid stores {n}",
                prev.v1.len()
            )));
        }
        let top = grid.top_level();
        let nxm1 = (grid.nx - 1) as isize;
        let delta = grid.delta_step;
        let (v_hor, h_hor) = self.closure.values();

        // Integrand and its x-derivative at every node, shared by both
        // characteristic directions.
        let mut gv = vec![0.0; n];
        let mut gdv = vec![0.0; n];
        for i in 0..grid.n_levels() {
            let (lo, hi) = grid.cols(i);
            for j in lo..=hi {
                let id = grid.idx(i, j);
                let sv = prev.v1[id] + prev.v2[id];
                let sdv = prev.dv1[id] + prev.dv2[id];
                gv[id] = 0.5 * self.ca[id] * sv + self.cb[id] * (1.0 + prev.h[id]);
                gdv[id] = 0.5 * self.cax[id] * sv
                    + 0.5 * self.ca[id] * sdv
                    + self.cbx[id] * (1.0 + prev.h[id])
                    + self.cb[id] * prev.dh[id];
            }
        }

        let mut next = AuxTriple::zeros_like(prev, n);
        let mut ray = Vec::with_capacity(top + 1);
        let mut pre = vec![0.0; top + 1];

        // v₁ travels along x + t = const: anti-diagonals m + j = d.
        for d in 0..=(nxm1 + 2 * top as isize) {
            let m_min = (d - nxm1 + 1).div_euclid(2).max(0) as usize;
            let len = top - m_min + 1;
            ray.clear();
            ray.extend((m_min..=top).map(|m| gv[grid.idx(m, d - m as isize)]));
            simpson_prefix_from_end(&ray, delta, &mut pre[..len]);
            for (pos, m) in (m_min..=top).enumerate() {
                next.v1[grid.idx(m, d - m as isize)] = v_hor - pre[pos];
            }
            ray.clear();
            ray.extend((m_min..=top).map(|m| gdv[grid.idx(m, d - m as isize)]));
            simpson_prefix_from_end(&ray, delta, &mut pre[..len]);
            for (pos, m) in (m_min..=top).enumerate() {
                next.dv1[grid.idx(m, d - m as isize)] = -pre[pos];
            }
        }

        // v₂ travels along x − t = const: diagonals j − m = e.
        for e in (-2 * (top as isize))..=nxm1 {
            let m_min = (1 - e).div_euclid(2).max(0) as usize;
            let len = top - m_min + 1;
            ray.clear();
            ray.extend((m_min..=top).map(|m| gv[grid.idx(m, e + m as isize)]));
            simpson_prefix_from_end(&ray, delta, &mut pre[..len]);
            for (pos, m) in (m_min..=top).enumerate() {
                next.v2[grid.idx(m, e + m as isize)] = v_hor - pre[pos];
            }
            ray.clear();
            ray.extend((m_min..=top).map(|m| gdv[grid.idx(m, e + m as isize)]));
            simpson_prefix_from_end(&ray, delta, &mut pre[..len]);
            for (pos, m) in (m_min..=top).enumerate() {
                next.dv2[grid.idx(m, e + m as isize)] = -pre[pos];
            }
        }

        // h integrates the new v's vertically in time.
        for j in -(top as isize)..=(nxm1 + top as isize) {
            let m_min = (-j).max(j - nxm1).max(0) as usize;
            let len = top - m_min + 1;
            ray.clear();
            ray.extend((m_min..=top).map(|m| {
                let id = grid.idx(m, j);
                0.5 * (next.v1[id] + next.v2[id])
            }));
            simpson_prefix_from_end(&ray, delta, &mut pre[..len]);
            for (pos, m) in (m_min..=top).enumerate() {
                next.h[grid.idx(m, j)] = h_hor - pre[pos];
            }
            ray.clear();
            ray.extend((m_min..=top).map(|m| {
                let id = grid.idx(m, j);
                0.5 * (next.dv1[id] + next.dv2[id])
            }));
            simpson_prefix_from_end(&ray, delta, &mut pre[..len]);
            for (pos, m) in (m_min..=top).enumerate() {
                next.dh[grid.idx(m, j)] = -pre[pos];
            }
        }

        Ok(next)
    }
}

/// One iteration of the integral equations with the spec-default zero
/// truncation at the grid horizon (error ≤ [`tail_bound`]).
///
/// [`construct_h`] upgrades the closure internally when the exact far-field
/// solve applies; use [`PicardContext`] directly to iterate that operator.
pub fn picard_step(
    prev: &AuxTriple,
    spec: &DampingSpec,
    grid: &CharacteristicGrid,
    variant: IterationVariant,
) -> Result<AuxTriple> {
    if !variant.matches(spec.family) {
        return Err(Error::Config(format!(
            "variant {:?} does not match damping family {:?}",
            variant, spec.family
        )));
    }
    let closure = HorizonClosure::Zero {
        bound: tail_bound(spec, grid.s_max, prev.theta),
    };
    PicardContext::new(spec, grid, closure).apply(prev)
}

/// Weighted sup-norm of the difference of two triples:
/// max over levels of λ(1+t)^k(‖Δv₁‖+‖Δdv₁‖) + λ(1+t)^k(‖Δv₂‖+‖Δdv₂‖)
/// + (1+t)^{k−1}(‖Δh‖+‖Δdh‖), sup over the stored band at each level.
fn y_norm_diff(grid: &CharacteristicGrid, a: &AuxTriple, b: &AuxTriple, lambda: f64, k: f64) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..grid.n_levels() {
        let (lo, hi) = grid.cols(i);
        let mut m = [0.0f64; 6];
        for j in lo..=hi {
            let id = grid.idx(i, j);
            m[0] = m[0].max((a.v1[id] - b.v1[id]).abs());
            m[1] = m[1].max((a.dv1[id] - b.dv1[id]).abs());
            m[2] = m[2].max((a.v2[id] - b.v2[id]).abs());
            m[3] = m[3].max((a.dv2[id] - b.dv2[id]).abs());
            m[4] = m[4].max((a.h[id] - b.h[id]).abs());
            m[5] = m[5].max((a.dh[id] - b.dh[id]).abs());
        }
        let wk = (1.0 + grid.t(i)).powf(k);
        let wh = (1.0 + grid.t(i)).powf(k - 1.0);
        norm = norm.max(lambda * wk * (m[0] + m[1] + m[2] + m[3]) + wh * (m[4] + m[5]));
    }
    norm
}

/// K_θ membership of a triple: v-components against `v_bound`, h against
/// `theta`, all weighted; returns the worst violation (≤ 0 means inside).
fn k_theta_violation(grid: &CharacteristicGrid, triple: &AuxTriple, v_bound: f64, theta: f64, k: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..grid.n_levels() {
        let wk = (1.0 + grid.t(i)).powf(k);
        let wh = (1.0 + grid.t(i)).powf(k - 1.0);
        let (lo, hi) = grid.cols(i);
        for j in lo..=hi {
            let id = grid.idx(i, j);
            worst = worst
                .max(wk * triple.v1[id].abs() - v_bound)
                .max(wk * triple.v2[id].abs() - v_bound)
                .max(wh * triple.h[id].abs() - theta);
        }
    }
    worst
}

/// λ selection: fixed value, or the variant-dependent starting point with
/// doubling on failure (ScaleInvMu only; the other variants use λ = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    Auto,
    Fixed(f64),
}

/// Runs the Picard iteration to convergence and assembles the gauge.
///
/// Stops when the weighted update norm drops to `tol`; fails with
/// `NoContraction` if updates grow three times in a row (or `max_iter` is
/// exhausted) and with `NotInK` if the converged triple leaves K_θ by more
/// than 1e−6. Both failures signal that δ is too large for this θ.
pub fn construct_h(
    spec: &DampingSpec,
    grid: &CharacteristicGrid,
    theta: f64,
    lambda: LambdaPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<(AuxTriple, GaugeField, ConvergenceReport)> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("theta must lie in (0,1), got {theta}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {tol}")));
    }
    let variant = IterationVariant::for_family(spec.family);
    let k = spec.k;
    let closure = HorizonClosure::auto(spec, grid, theta)?;
    let ctx = PicardContext::new(spec, grid, closure);

    let lambda0 = match (lambda, spec.family) {
        (LambdaPolicy::Fixed(l), _) => {
            if !(l >= 1.0) {
                return Err(Error::Config(format!("lambda must be >= 1, got {l}")));
            }
            l
        }
        (LambdaPolicy::Auto, Family::ScaleInvMu { mu }) => (k / (k - mu)).ceil().max(1.0),
        (LambdaPolicy::Auto, _) => 1.0,
    };
    let doublings = if lambda == LambdaPolicy::Auto && variant == IterationVariant::ScaleInvMu {
        10
    } else {
        0
    };

    let mut last_err = None;
    for attempt in 0..=doublings {
        let lam = lambda0 * f64::powi(2.0, attempt);
        match iterate(&ctx, theta, k, lam, tol, max_iter) {
            Ok((triple, report)) => {
                let gauge = build_gauge_field(grid, &triple, spec.family);
                return Ok((triple, gauge, report));
            }
            Err(e @ Error::NoContraction { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt runs"))
}

fn iterate(
    ctx: &PicardContext,
    theta: f64,
    k: f64,
    lam: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(AuxTriple, ConvergenceReport)> {
    let grid = ctx.grid();
    let mut prev = AuxTriple::zeros(grid, theta, k, lam, ctx.variant);
    let mut prev_update = f64::INFINITY;
    let mut update = f64::INFINITY;
    let mut growth_streak = 0usize;
    let mut converged = false;
    let mut iters = 0usize;

    for n in 1..=max_iter {
        iters = n;
        let next = ctx.apply(&prev)?;
        prev_update = update;
        update = y_norm_diff(grid, &next, &prev, lam, k);
        prev = next;
        if update <= tol {
            converged = true;
            break;
        }
        if update > prev_update {
            growth_streak += 1;
            if growth_streak >= 3 {
                return Err(Error::NoContraction {
                    lambda: lam,
                    iterations: n,
                    last_ratio: update / prev_update,
                });
            }
        } else {
            growth_streak = 0;
        }
    }
    if !converged {
        return Err(Error::NoContraction {
            lambda: lam,
            iterations: iters,
            last_ratio: if prev_update.is_finite() { update / prev_update } else { f64::NAN },
        });
    }

    let contraction_r = if prev_update.is_finite() && prev_update > 0.0 {
        update / prev_update
    } else {
        0.0
    };
    let v_bound = if ctx.variant == IterationVariant::ScaleInvMu {
        prev.theta_prime
    } else {
        theta
    };
    let violation = k_theta_violation(grid, &prev, v_bound, theta, k);
    if violation > 1e-6 {
        return Err(Error::NotInK {
            detail: format!(
                "converged iterate exceeds the K_theta bounds by {violation:.3e} (theta = {theta}, v bound = {v_bound})"
            ),
        });
    }

    prev.iter_count = iters;
    prev.contraction_r = contraction_r;
    let report = ConvergenceReport {
        iterations: iters,
        final_update_norm: update,
        contraction_r,
        tail_bound: ctx.closure.bound(),
        in_k_theta: true,
        lambda: lam,
        s_max: grid.s_max,
        closure: ctx.closure,
    };
    Ok((prev, report))
}

fn build_gauge_field(grid: &CharacteristicGrid, triple: &AuxTriple, family: Family) -> GaugeField {
    let (nt, nx) = (grid.nt, grid.nx);
    let mut g = vec![0.0; nt * nx];
    let mut g_t = vec![0.0; nt * nx];
    let mut g_x = vec![0.0; nt * nx];
    for i in 0..nt {
        let t = grid.t(i);
        for j in 0..nx {
            let id = grid.idx(i, j as isize);
            let cid = i * nx + j;
            let one_h = 1.0 + triple.h[id];
            let h_t = 0.5 * (triple.v1[id] + triple.v2[id]);
            let h_x = triple.dh[id];
            match family {
                Family::Perturbation => {
                    g[cid] = one_h;
                    g_t[cid] = h_t;
                    g_x[cid] = h_x;
                }
                Family::ScaleInv2 => {
                    let w = 1.0 + t;
                    g[cid] = w * one_h;
                    g_t[cid] = one_h + w * h_t;
                    g_x[cid] = w * h_x;
                }
                Family::ScaleInvMu { mu } => {
                    let w = (1.0 + t).powf(mu);
                    let wp = mu * (1.0 + t).powf(mu - 1.0);
                    g[cid] = w * one_h;
                    g_t[cid] = wp * one_h + w * h_t;
                    g_x[cid] = w * h_x;
                }
            }
        }
    }
    GaugeField {
        g,
        g_t,
        g_x,
        family,
        nt,
        nx,
        delta_step: grid.delta_step,
        x_min: grid.x_min,
    }
}

/// Sup over interior core nodes of |h_tt − h_xx − A·h_t − B·(1+h)| with
/// centered second differences, h_t from the stored v's, and the family
/// coefficients A, B. Expected O(Δ²) plus the closure's truncation bound.
pub fn residual(
    triple: &AuxTriple,
    gauge: &GaugeField,
    spec: &DampingSpec,
    grid: &CharacteristicGrid,
    variant: IterationVariant,
) -> Result<f64> {
    if !variant.matches(spec.family) || !variant.matches(gauge.family) {
        return Err(Error::Config(
            "residual variant must match the damping family and the gauge".into(),
        ));
    }
    let d2 = grid.delta_step * grid.delta_step;
    let i_hi = grid.nt.saturating_sub(2).min(grid.top_level() - 1);
    let mut worst = 0.0f64;
    for i in 1..=i_hi {
        let t = grid.t(i);
        for j in 0..grid.nx as isize {
            let id = grid.idx(i, j);
            let h_tt =
                (triple.h[grid.idx(i + 1, j)] - 2.0 * triple.h[id] + triple.h[grid.idx(i - 1, j)]) / d2;
            let h_xx =
                (triple.h[grid.idx(i, j + 1)] - 2.0 * triple.h[id] + triple.h[grid.idx(i, j - 1)]) / d2;
            let h_t = 0.5 * (triple.v1[id] + triple.v2[id]);
            let c = div_coeffs(spec, t, grid.x(j));
            let r = h_tt - h_xx - c.a * h_t - c.b * (1.0 + triple.h[id]);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Decay diagnostics of a converged triple.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    /// sup over nodes of (1+t)^{k−1}|h|.
    pub sup_weighted_h: f64,
    /// Whether that sup stays ≤ θ.
    pub h_bound_pass: bool,
    /// Smallest C with (1+t)^k(|v₁|+|v₂|+|∂_x h|) ≤ C everywhere.
    pub c_constant: f64,
    /// Full K_θ membership, v-components measured against θ (θ′ for the
    /// ScaleInvMu variant).
    pub in_k_theta: bool,
}

/// Checks the decay bounds |h| ≤ θ(1+t)^{1−k} and first-order decay
/// (1+t)^{−k} on the whole stored lattice.
pub fn verify_decay(triple: &AuxTriple, grid: &CharacteristicGrid, theta: f64, k: f64) -> DecayReport {
    let mut sup_h = 0.0f64;
    let mut c = 0.0f64;
    for i in 0..grid.n_levels() {
        let wk = (1.0 + grid.t(i)).powf(k);
        let wh = (1.0 + grid.t(i)).powf(k - 1.0);
        let (lo, hi) = grid.cols(i);
        for j in lo..=hi {
            let id = grid.idx(i, j);
            sup_h = sup_h.max(wh * triple.h[id].abs());
            c = c.max(wk * (triple.v1[id].abs() + triple.v2[id].abs() + triple.dh[id].abs()));
        }
    }
    let v_bound = if triple.variant == IterationVariant::ScaleInvMu {
        triple.theta_prime
    } else {
        theta
    };
    let violation = k_theta_violation(grid, triple, v_bound, theta, k);
    DecayReport {
        sup_weighted_h: sup_h,
        h_bound_pass: sup_h <= theta + 1e-12,
        c_constant: c,
        in_k_theta: violation <= 1e-6,
    }
}
