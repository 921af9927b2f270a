//! Prefix quadrature on uniform grids.
//!
//! The characteristic integral equations need *all* partial integrals
//! ∫_{t_i}^{t_end} f ds along a ray, not just the total. Both helpers here
//! compute the full prefix family in one O(n) sweep with a two-panel Simpson
//! recurrence (fourth order); the odd-offset entries are closed with the
//! 3-point Newton–Cotes end rule, which is exact for quadratics.

/// `out[i] = ∫_{x_i}^{x_{n-1}}` of the sampled integrand, step `h` apart.
///
/// Fourth-order accurate for smooth integrands; falls back to the trapezoid
/// rule when fewer than three samples are available.
pub fn simpson_prefix_from_end(values: &[f64], h: f64, out: &mut [f64]) {
    let n = values.len();
    assert_eq!(out.len(), n, "output length must match input");
    match n {
        0 => return,
        1 => {
            out[0] = 0.0;
            return;
        }
        2 => {
            out[1] = 0.0;
            out[0] = 0.5 * h * (values[0] + values[1]);
            return;
        }
        _ => {}
    }
    out[n - 1] = 0.0;
    // Right-subinterval rule on the last three samples: exact for quadratics.
    out[n - 2] = h / 12.0 * (-values[n - 3] + 8.0 * values[n - 2] + 5.0 * values[n - 1]);
    for i in (0..n - 2).rev() {
        out[i] = out[i + 2] + h / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
    }
}

/// `out[i] = ∫_{x_0}^{x_i}` of the sampled integrand, step `h` apart.
pub fn simpson_prefix_from_start(values: &[f64], h: f64, out: &mut [f64]) {
    let n = values.len();
    assert_eq!(out.len(), n, "output length must match input");
    match n {
        0 => return,
        1 => {
            out[0] = 0.0;
            return;
        }
        2 => {
            out[0] = 0.0;
            out[1] = 0.5 * h * (values[0] + values[1]);
            return;
        }
        _ => {}
    }
    out[0] = 0.0;
    out[1] = h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2]);
    for i in 2..n {
        out[i] = out[i - 2] + h / 3.0 * (values[i - 2] + 4.0 * values[i - 1] + values[i]);
    }
}

/// Composite Simpson over the whole sample (odd tail panel closed with the
/// 3-point end rule). Convenience wrapper for one-off integrals.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut out = vec![0.0; n];
    simpson_prefix_from_start(values, h, &mut out);
    out[n - 1]
}
