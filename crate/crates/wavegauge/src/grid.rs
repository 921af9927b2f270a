//! Characteristic lattice for the backward-cone integrations.
//!
//! The gauge construction integrates along rays x ± t = const from a horizon
//! level s_max back to t = 0. To keep every ray on lattice points we take
//! Δt = Δx = delta_step and widen each time level so that both
//! characteristics and verticals through any stored node stay inside the
//! stored set:
//!
//! level i (t = iΔ) holds columns j ∈ [−i, nx−1+i], where the core columns
//! j ∈ [0, nx−1] discretize the requested window [x_min, x_max].
//!
//! The widening means the band at the top level spans
//! [x_min − s_max, x_max + s_max].

use crate::error::{Error, Result};

/// Uniform characteristic lattice over [0, s_max] × widening bands.
///
/// `nt` counts the levels covering the *output* window [0, t_max]; levels up
/// to `n_levels()-1` (t = s_max) exist for the integration.
#[derive(Debug, Clone)]
pub struct CharacteristicGrid {
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub delta_step: f64,
    pub s_max: f64,
    /// Levels in the output window: t = 0, Δ, …, t_max.
    pub nt: usize,
    /// Core columns: x = x_min, …, x_max.
    pub nx: usize,
    /// Index of the horizon level (t = s_max).
    n_s: usize,
}

impl CharacteristicGrid {
    /// Index of the last level (t = s_max).
    pub fn top_level(&self) -> usize {
        self.n_s
    }

    /// Number of stored levels.
    pub fn n_levels(&self) -> usize {
        self.n_s + 1
    }

    /// Column range at level i: j ∈ [lo, hi] inclusive.
    pub fn cols(&self, i: usize) -> (isize, isize) {
        (-(i as isize), (self.nx - 1) as isize + i as isize)
    }

    /// Flat index of node (level i, column j). Level i stores nx + 2i
    /// nodes at offset i·(nx + i − 1); within the level, column j sits at
    /// position j + i, so idx(i, j) = i·(nx + i) + j.
    #[inline]
    pub fn idx(&self, i: usize, j: isize) -> usize {
        debug_assert!(i <= self.n_s);
        debug_assert!(-(i as isize) <= j && j <= (self.nx - 1) as isize + i as isize);
        ((i * (self.nx + i)) as isize + j) as usize
    }

    /// Total stored nodes across all levels.
    pub fn n_nodes(&self) -> usize {
        (self.n_s + 1) * (self.nx + self.n_s)
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.delta_step
    }

    pub fn x(&self, j: isize) -> f64 {
        self.x_min + j as f64 * self.delta_step
    }

    /// Flat index into a core-only array of shape nt × nx, row-major in i.
    #[inline]
    pub fn core_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nt && j < self.nx);
        i * self.nx + j
    }
}

/// Builds the lattice, validating that Δ > 0 divides the extents and that
/// s_max ≥ t_max. `s_max` is rounded to the nearest lattice level.
pub fn build_grid(t_max: f64, x_min: f64, x_max: f64, delta_step: f64, s_max: f64) -> Result<CharacteristicGrid> {
    if !(delta_step > 0.0) || !delta_step.is_finite() {
        return Err(Error::Config(format!("grid step must be positive, got {delta_step}")));
    }
    if !(x_max > x_min) {
        return Err(Error::Config(format!(
            "grid window needs x_max > x_min, got [{x_min}, {x_max}]"
        )));
    }
    if !(t_max > 0.0) {
        return Err(Error::Config(format!("grid needs t_max > 0, got {t_max}")));
    }
    if s_max < t_max {
        return Err(Error::Config(format!(
            "horizon s_max = {s_max} must not be below t_max = {t_max}"
        )));
    }
    let check_divisible = |len: f64, name: &str| -> Result<usize> {
        let n = (len / delta_step).round();
        if (n * delta_step - len).abs() > 1e-9 * len.max(1.0) {
            return Err(Error::Config(format!(
                "{name} = {len} is not an integer multiple of the step {delta_step}"
            )));
        }
        Ok(n as usize)
    };
    let nt = check_divisible(t_max, "t_max")? + 1;
    let nx = check_divisible(x_max - x_min, "x_max - x_min")? + 1;
    let n_s = (s_max / delta_step).round() as usize;
    Ok(CharacteristicGrid {
        t_max,
        x_min,
        x_max,
        delta_step,
        s_max: n_s as f64 * delta_step,
        nt,
        nx,
        n_s,
    })
}
