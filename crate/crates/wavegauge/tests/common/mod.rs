//! Shared fixtures for the integration suites: closed-form gauge oracles,
//! a manufactured solution with known forcing, and process-level drivers
//! for the `wavegauge` binary.

// Each test target compiles its own copy of this module and uses a subset.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use wavegauge::damping::Family;
use wavegauge::gauge::{AuxTriple, GaugeField};
use wavegauge::grid::{build_grid, CharacteristicGrid};
use wavegauge::testfn::{eta, phi};
use wavegauge::wavesim::{SimSolution, SimStatus};

// ---------------------------------------------------------------------------
// closed-form gauge oracles (x-independent damping)
//
// With b(t) = δ(1+t)^{−k} the gauge perturbation solves an ODE in t and
// integrates exactly; these are the references the constructed lattices are
// measured against. In all cases v₁ = v₂ = h_t and ∂_x h = 0.

/// Pure-perturbation and μ-power families: 1 + h = exp(−δ(1+t)^{1−k}/(k−1)).
pub fn h_exact_power(delta: f64, k: f64, t: f64) -> f64 {
    (-delta * (1.0 + t).powf(1.0 - k) / (k - 1.0)).exp_m1()
}

/// The (1+t)-weighted family at k = 2: 1 + h = (1 − e^{−δσ})/(δσ) with
/// σ = 1/(1+t).
pub fn h_exact_scaleinv2(delta: f64, t: f64) -> f64 {
    let ds = delta / (1.0 + t);
    -(-ds).exp_m1() / ds - 1.0
}

/// Max over every stored lattice node of |h − oracle(t)|.
pub fn max_h_error(
    triple: &AuxTriple,
    grid: &CharacteristicGrid,
    oracle: impl Fn(f64) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..grid.n_levels() {
        let exact = oracle(grid.t(i));
        let (lo, hi) = grid.cols(i);
        for j in lo..=hi {
            worst = worst.max((triple.h[grid.idx(i, j)] - exact).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// manufactured solution

/// u = e^{−t}·cos x sampled on a [0, t_max] × [−x_half, x_half] rectangle.
/// With a ≡ 0 it satisfies u_tt − u_xx = 2u, so the functional identity
/// holds exactly when the nonlinearity density is replaced by 2u.
pub fn manufactured_solution(t_max: f64, x_half: f64, d: f64) -> SimSolution {
    let grid = build_grid(t_max, -x_half, x_half, d, t_max).unwrap();
    let (nt, nx) = (grid.nt, grid.nx);
    let mut u = vec![0.0; nt * nx];
    let mut u_t = vec![0.0; nt * nx];
    for i in 0..nt {
        let et = (-grid.t(i)).exp();
        for j in 0..nx {
            let c = grid.x(j as isize).cos();
            u[grid.core_idx(i, j)] = et * c;
            u_t[grid.core_idx(i, j)] = -et * c;
        }
    }
    let u0: Vec<f64> = (0..nx).map(|j| grid.x(j as isize).cos()).collect();
    let u1: Vec<f64> = u0.iter().map(|v| -v).collect();
    SimSolution {
        grid,
        u,
        u_t,
        u0,
        u1,
        sup_u_history: Vec::new(),
        h1l2_norm_history: Vec::new(),
        status: SimStatus::Completed,
        t_detected: None,
        t_threshold2: None,
    }
}

/// g ≡ 1 on an nt × nx window — the gauge of zero damping.
pub fn unit_gauge(nt: usize, nx: usize, d: f64, x_min: f64) -> GaugeField {
    GaugeField {
        g: vec![1.0; nt * nx],
        g_t: vec![0.0; nt * nx],
        g_x: vec![0.0; nt * nx],
        family: Family::Perturbation,
        nt,
        nx,
        delta_step: d,
        x_min,
    }
}

/// Direct trapezoid of ∫∫ |u|^p η(t/τ)φ(x/τ) over the entire recorded
/// history. Unlike the library functionals this imposes no window checks,
/// so it accepts τ far beyond the stored rectangle — there the cutoffs are
/// simply 1 and the integral saturates at the full nonlinear mass.
pub fn measured_i(sol: &SimSolution, p: f64, tau: f64) -> f64 {
    let grid = &sol.grid;
    let d = grid.delta_step;
    let mut acc = 0.0;
    for i in 0..grid.nt {
        let wt = if i == 0 || i == grid.nt - 1 { 0.5 } else { 1.0 };
        let cutoff_t = eta(grid.t(i) / tau);
        for j in 0..grid.nx {
            let wx = if j == 0 || j == grid.nx - 1 { 0.5 } else { 1.0 };
            let uv = sol.u[grid.core_idx(i, j)];
            acc += wt * wx * d * d * uv.abs().powf(p) * cutoff_t * phi(grid.x(j as isize) / tau);
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// process-level CLI drivers

static DIR_SEQ: AtomicUsize = AtomicUsize::new(0);

/// Fresh empty scratch directory, unique per call within the process.
pub fn scratch_dir(tag: &str) -> PathBuf {
    let n = DIR_SEQ.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("wavegauge-{tag}-{}-{n}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Writes `text` as config.toml inside `dir` and returns its path.
pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Exit code and both streams of one binary invocation.
pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `wavegauge` binary with raw arguments.
pub fn run_args(args: &[&str]) -> CliRun {
    let output = Command::new(env!("CARGO_BIN_EXE_wavegauge"))
        .args(args)
        .output()
        .expect("spawn wavegauge");
    CliRun {
        code: output.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

/// Runs one pipeline stage against a config, directing artifacts to `out`.
pub fn run_stage(subcommand: &str, config: &Path, out: &Path) -> CliRun {
    let config = config.to_string_lossy().into_owned();
    let out = out.to_string_lossy().into_owned();
    run_args(&[subcommand, "--config", &config, "--out", &out])
}

/// Parses a flat JSON report into a key → value map.
pub fn read_report(path: &Path) -> serde_json::Map<String, serde_json::Value> {
    let bytes =
        std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_slice::<serde_json::Value>(&bytes)
        .unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
        .as_object()
        .unwrap_or_else(|| panic!("{} is not a JSON object", path.display()))
        .clone()
}

/// Numeric field of a report, panicking with the key name when absent.
pub fn report_f64(map: &serde_json::Map<String, serde_json::Value>, key: &str) -> f64 {
    map.get(key)
        .and_then(|v| v.as_f64())
        .unwrap_or_else(|| panic!("report key {key} missing or not a number"))
}
