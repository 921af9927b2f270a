//! Acceptance suite: one test per criterion, each printing a single
//! `acceptance criterion N: PASS/FAIL — …` line carrying the measured
//! numbers. The same condition is asserted, so a FAIL line always comes
//! with a panic quoting the identical diagnosis.
//!
//! Criterion 8 is expected red: its second half demands that a windowed
//! integral of a nonnegative density decrease as the window grows, which
//! no faithful measurement can deliver (see the criterion's comment).

mod common;

use std::time::Instant;

use common::*;
use wavegauge::damping::{DampingSpec, Family, PerturbationProfile};
use wavegauge::gauge::{
    auto_s_max, construct_h, residual, verify_decay, IterationVariant, LambdaPolicy,
};
use wavegauge::grid::build_grid;
use wavegauge::testfn::{
    bump_inequality_constant, compute_functionals_with, envelope_d, phi, BumpParams, EnvelopeSpec,
};
use wavegauge::wavesim::{
    fit_kappa, lifespan_sweep, ode_blowup_time, run_recording_fields, run_until_blowup, DataKind,
    InitialData,
};
use wavegauge::Error;

fn verdict(n: usize, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("acceptance criterion {n}: {word} — {detail}");
    assert!(pass, "acceptance criterion {n}: {word} — {detail}");
}

fn timeonly(family: Family, delta: f64, k: f64) -> DampingSpec {
    DampingSpec::new(family, delta, k, PerturbationProfile::TimeOnlyPower).unwrap()
}

fn undamped() -> DampingSpec {
    DampingSpec::new(Family::Perturbation, 0.0, 2.0, PerturbationProfile::Zero).unwrap()
}

#[test]
fn criterion_1_gauge_matches_closed_form() {
    let start = Instant::now();
    let spec = timeonly(Family::Perturbation, 0.1, 2.0);
    let (theta, d, t_max, x_half) = (0.5, 0.025, 6.0, 6.0);
    let s_max = auto_s_max(&spec, t_max, -x_half, x_half, d, theta, 1e-8).unwrap();
    let grid = build_grid(t_max, -x_half, x_half, d, s_max).unwrap();
    let (triple, _, report) =
        construct_h(&spec, &grid, theta, LambdaPolicy::Auto, 1e-8, 200).unwrap();
    let err = max_h_error(&triple, &grid, |t| h_exact_power(0.1, 2.0, t));
    let secs = start.elapsed().as_secs_f64();
    let pass = report.contraction_r < 1.0 && err < 1e-6 && secs < 30.0;
    verdict(
        1,
        pass,
        &format!(
            "closed-form error {err:.2e} over {} nodes at step {d} \
             (contraction ratio {:.3}, {secs:.2} s single-threaded)",
            grid.n_nodes(),
            report.contraction_r
        ),
    );
}

#[test]
fn criterion_2_residual_is_second_order() {
    let spec = timeonly(Family::Perturbation, 0.1, 2.0);
    let theta = 0.5;
    // The sup-norm residual is sampled on the lattice, whose first interior
    // row sits at t = Δ while the residual density peaks at t = 0; the steps
    // are taken fine enough that this sampling offset stays inside the band.
    let steps = [0.02, 0.01, 0.005];
    let mut defects = Vec::new();
    for &d in &steps {
        let s_max = auto_s_max(&spec, 3.0, -3.0, 3.0, d, theta, 1e-10).unwrap();
        let grid = build_grid(3.0, -3.0, 3.0, d, s_max).unwrap();
        let (triple, gauge, report) =
            construct_h(&spec, &grid, theta, LambdaPolicy::Auto, 1e-10, 400).unwrap();
        let r = residual(&triple, &gauge, &spec, &grid, IterationVariant::Perturbation).unwrap();
        defects.push((r - report.tail_bound).max(0.0));
    }
    let (r01, r12) = (defects[0] / defects[1], defects[1] / defects[2]);
    let band = 3.5..=4.5;
    verdict(
        2,
        band.contains(&r01) && band.contains(&r12),
        &format!(
            "residuals ({:.2e}, {:.2e}, {:.2e}) at steps {steps:?}, \
             per-halving ratios {r01:.2} and {r12:.2}",
            defects[0], defects[1], defects[2]
        ),
    );
}

#[test]
fn criterion_3_decay_bounds_hold_for_all_families() {
    let (theta, k, delta, d) = (0.5, 2.0, 0.05, 0.05);
    let cases = [
        ("perturbation", Family::Perturbation),
        ("scaleinv2", Family::ScaleInv2),
        ("scaleinvmu", Family::ScaleInvMu { mu: 1.0 }),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, family) in cases {
        let spec = timeonly(family, delta, k);
        let s_max = auto_s_max(&spec, 3.0, -3.0, 3.0, d, theta, 1e-8).unwrap();
        let grid = build_grid(3.0, -3.0, 3.0, d, s_max).unwrap();
        let (triple, _, _) =
            construct_h(&spec, &grid, theta, LambdaPolicy::Auto, 1e-8, 200).unwrap();
        let decay = verify_decay(&triple, &grid, theta, k);
        pass &= decay.h_bound_pass && decay.c_constant.is_finite() && decay.in_k_theta;
        if matches!(family, Family::ScaleInvMu { .. }) {
            // the v-components must be measured against θ′ = θ·min{k−1, 1}
            pass &= (triple.theta_prime - theta * (k - 1.0).min(1.0)).abs() < 1e-15;
        }
        details.push(format!(
            "{name}: sup (1+t)^(k-1)|h| = {:.4} <= theta, C = {:.3}",
            decay.sup_weighted_h, decay.c_constant
        ));
    }
    verdict(3, pass, &details.join("; "));
}

#[test]
fn criterion_4_delta_threshold_brackets_within_factor_two() {
    let (theta, k, d) = (0.5, 2.0, 0.05);
    let grid = build_grid(2.0, -2.0, 2.0, d, 2.0).unwrap();
    // Ok → converged inside K_θ; Err → the two admissible failure modes.
    let probe = |delta: f64| -> Result<bool, String> {
        let spec = timeonly(Family::Perturbation, delta, k);
        match construct_h(&spec, &grid, theta, LambdaPolicy::Auto, 1e-8, 200) {
            Ok(_) => Ok(true),
            Err(Error::NoContraction { .. }) | Err(Error::NotInK { .. }) => Ok(false),
            Err(e) => Err(format!("delta = {delta} failed outside the flip set: {e}")),
        }
    };
    let (mut lo, mut hi) = (0.05, 5.0);
    assert!(probe(lo).unwrap(), "bracket start delta = {lo} must converge");
    assert!(!probe(hi).unwrap(), "bracket end delta = {hi} must flip");
    while hi / lo > 2.0 {
        let mid = (lo * hi).sqrt();
        match probe(mid).unwrap() {
            true => lo = mid,
            false => hi = mid,
        }
    }
    verdict(
        4,
        hi / lo <= 2.0,
        &format!(
            "construction flips from convergent-in-K_theta at delta = {lo:.4} to \
             NoContraction/NotInK at delta = {hi:.4} (ratio {:.2}); bracket reported, \
             not checked against any reference value",
            hi / lo
        ),
    );
}

#[test]
fn criterion_5_bump_value_and_stable_constants() {
    let off = (phi((5.0f64 / 8.0).sqrt()) - 0.5).abs();
    let a = bump_inequality_constant(2.0, 100_000);
    let b = bump_inequality_constant(2.0, 400_000);
    let pairs = [(a.0, b.0), (a.1, b.1), (a.2, b.2), (a.3, b.3)];
    let finite = pairs.iter().all(|(x, y)| x.is_finite() && y.is_finite());
    let drift = pairs
        .iter()
        .map(|(x, y)| (x - y).abs() / x.abs())
        .fold(0.0, f64::max);
    verdict(
        5,
        off < 1e-12 && finite && drift < 0.01,
        &format!(
            "phi(sqrt(5/8)) off by {off:.1e}; constants ({:.4}, {:.4}, {:.4}, {:.4}) \
             drift {:.3}% between 1e5 and 4e5 samples",
            a.0,
            a.1,
            a.2,
            a.3,
            100.0 * drift
        ),
    );
}

#[test]
fn criterion_6_identity_defect_is_second_order() {
    let spec = undamped();
    let params = BumpParams::new(2.0, 2.0, 2.0).unwrap();
    // Steps start at 0.025: coarser lattices put only ~10 samples across
    // each glue band of the cutoff, and the under-resolved spike of its
    // second derivative swamps the quadrature's leading Δ² term.
    let steps = [0.025, 0.0125, 0.00625];
    let mut defects = Vec::new();
    for &d in &steps {
        let sol = manufactured_solution(2.0, 2.0, d);
        let gauge = unit_gauge(sol.grid.nt, sol.grid.nx, d, sol.grid.x_min);
        // u = e^{−t}cos x satisfies u_tt − u_xx = 2u, so the identity is
        // probed with the manufactured density in place of |u|^p.
        let rep = compute_functionals_with(&sol, &gauge, &spec, &params, &EnvelopeSpec::Basic, &|_, _, uv| {
            2.0 * uv
        })
        .unwrap();
        defects.push(rep.defect);
    }
    let (r01, r12) = (defects[0] / defects[1], defects[1] / defects[2]);
    let band = 3.5..=4.5;
    verdict(
        6,
        band.contains(&r01) && band.contains(&r12),
        &format!(
            "manufactured-solution defects ({:.2e}, {:.2e}, {:.2e}) at steps {steps:?}, \
             per-halving ratios {r01:.2} and {r12:.2}",
            defects[0], defects[1], defects[2]
        ),
    );
}

#[test]
fn criterion_7_plateau_blowup_matches_ode_oracle() {
    let spec = undamped();
    let data = InitialData {
        kind: DataKind::Plateau,
        u0_amplitude: 1.0,
        u1_amplitude: 0.0,
        support_radius: 20.0,
        epsilon: 1.0,
    };
    let t_ref = ode_blowup_time(2.0, 1.0);
    let (sol, detected) = run_until_blowup(&spec, &data, 2.0, 0.01, 1e8, 4.0).unwrap();
    let t = detected.expect("plateau data must blow up before the cap");
    let rel = (t - t_ref).abs() / t_ref;
    let shift = sol
        .t_threshold2
        .map(|t2| (t2 - t).abs() / t)
        .expect("doubled threshold must also be crossed");
    verdict(
        7,
        rel < 0.02 && shift < 0.01,
        &format!(
            "detected T = {t:.4} vs quadrature oracle {t_ref:.4} ({:.2}% off); \
             doubling the threshold moves it by {:.2}%",
            100.0 * rel,
            100.0 * shift
        ),
    );
}

/// Expected red. The envelope half is a clean calculation and is asserted
/// tightly. The measurement half asks for I_{τ,τ} = ∫∫|u|^p η(t/τ)φ(x/τ)
/// from a blow-up run to decrease over τ ∈ {1e2, 1e3, 1e4}: the run blows
/// up near t ≈ 4 with support inside |x| ≲ 6, so for every listed τ both
/// cutoffs are identically 1 on the whole recorded history and the three
/// integrals agree to the last bit. A windowed integral of a nonnegative
/// density cannot decrease as the window grows — the decrease the envelope
/// bound C·D·I^{1/p} forces onto I lives beyond any finite recording. The
/// test measures faithfully and reports the failure rather than weakening
/// the check.
#[test]
fn criterion_8_envelope_decay_drives_contradiction() {
    let taus = [1e2, 1e3, 1e4];
    let mut env_off = 0.0f64;
    for &tau in &taus {
        let params = BumpParams::new(2.0, tau, tau).unwrap();
        let d = envelope_d(&params, &EnvelopeSpec::Basic).unwrap();
        env_off = env_off.max((d - (2.0 / tau + tau.powf(-0.5))).abs());
    }

    let spec = undamped();
    let data = InitialData {
        kind: DataKind::Bump,
        u0_amplitude: 0.0,
        u1_amplitude: 1.0,
        support_radius: 2.0,
        epsilon: 1.0,
    };
    let (sol, detected) = run_recording_fields(&spec, &data, 2.0, 0.025, 1e8, 8.0).unwrap();
    let t_star = detected.expect("the velocity bump must blow up before the cap");
    let i_vals: Vec<f64> = taus.iter().map(|&tau| measured_i(&sol, 2.0, tau)).collect();
    let decreasing = i_vals[0] > i_vals[1] && i_vals[1] > i_vals[2];
    verdict(
        8,
        env_off < 1e-12 && decreasing,
        &format!(
            "D(tau,tau) matches 2/tau + tau^(-1/2) to {env_off:.1e}, but measured \
             I_(tau,tau) = ({:.6e}, {:.6e}, {:.6e}) at tau = (1e2, 1e3, 1e4) does not \
             decrease: the run blows up at t = {t_star:.2} with support inside \
             |x| <= {:.1}, every cutoff is already 1 on the whole recorded history \
             for tau >= 1e2, and widening the window can only add nonnegative mass",
            i_vals[0],
            i_vals[1],
            i_vals[2],
            data.support_radius + t_star
        ),
    );
}

#[test]
fn criterion_9_lifespan_scaling_is_one_sided_consistent() {
    let start = Instant::now();
    let spec = timeonly(Family::Perturbation, 0.05, 2.0);
    // u₀ = 0, u₁ = ε·bump ≥ 0 keeps the data functional positive at every
    // cutoff scale — the sign hypothesis behind the lifespan bound.
    let template = InitialData {
        kind: DataKind::Bump,
        u0_amplitude: 0.0,
        u1_amplitude: 1.0,
        support_radius: 1.0,
        epsilon: 1.0,
    };
    let eps = [0.5, 0.25, 0.125, 0.0625];
    let records = lifespan_sweep(&spec, &template, 2.0, &eps, 0.02, 1e8, 30.0).unwrap();
    let all_confirmed = records.iter().all(|r| r.confirmed);
    let lifespans: Vec<f64> = records.iter().map(|r| r.t_eps_refined.unwrap_or(f64::NAN)).collect();
    let monotone = lifespans.windows(2).all(|w| w[1] > w[0]);
    let fit = fit_kappa(&records, 2.0).unwrap();
    let bound = -1.0 / fit.kappa_theory * 1.15;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        9,
        all_confirmed && monotone && fit.consistent && fit.slope >= bound && secs < 600.0,
        &format!(
            "lifespans ({:.2}, {:.2}, {:.2}, {:.2}) all confirmed and increasing; \
             fitted slope {:.4} stays above the one-sided bound {bound:.4} \
             (the power law caps the lifespan from above only); {secs:.0} s",
            lifespans[0], lifespans[1], lifespans[2], lifespans[3], fit.slope
        ),
    );
}

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let dir = scratch_dir("accept10");
    let config = write_config(
        &dir,
        r#"
[damping]
family = "perturbation"
delta = 0.05
k = 2.0
profile = "timeonly"

[gauge]
theta = 0.5
t_max = 2.0
x_min = -3.0
x_max = 3.0
delta_step = 0.05

[sim]
p = 2.0
epsilon = 0.8
eps_list = [0.5, 0.25, 0.125, 0.0625]
data = "bump"
u0_amplitude = 0.0
u1_amplitude = 1.0
support_radius = 1.0
dx = 0.05
t_cap = 25.0
record_fields = true

[functionals]
tau_list = [1.0, 2.0]

[output]
directory = "out"
formats = ["csv", "json"]
"#,
    );
    let outs = [dir.join("first"), dir.join("second")];
    for out in &outs {
        for stage in ["construct-gauge", "simulate", "functionals", "sweep"] {
            let run = run_stage(stage, &config, out);
            assert_eq!(run.code, 0, "stage {stage} failed: {}", run.stderr);
        }
    }

    let mut names: Vec<String> = std::fs::read_dir(&outs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.len() >= 7, "expected a full artifact set, got {names:?}");
    let mut compared = 0;
    let mut pass = true;
    for name in &names {
        if name == "manifest.json" {
            // timestamps differ by design; the hashes it records are
            // compared below instead
            continue;
        }
        let a = std::fs::read(outs[0].join(name)).unwrap();
        let b = std::fs::read(outs[1].join(name)).unwrap();
        if a != b {
            println!("artifact {name} differs between reruns");
            pass = false;
        }
        compared += 1;
    }
    let hashes = |out: &std::path::Path| {
        read_report(&out.join("manifest.json"))
            .into_iter()
            .filter(|(k, _)| k.starts_with("output."))
            .collect::<Vec<_>>()
    };
    pass &= hashes(&outs[0]) == hashes(&outs[1]);
    verdict(
        10,
        pass,
        &format!("{compared} artifacts byte-identical across reruns, manifest hashes agree"),
    );
}
