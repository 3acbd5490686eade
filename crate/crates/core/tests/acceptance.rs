//! Acceptance suite. Runs without the libtest harness so every criterion
//! line is printed; exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use recouple::effective::{closed_form_transfer, powder_optimal_dcp, rotvec_efficiency, EffectiveParams};
use recouple::ensemble::{EnsembleSpec, PowderScheme, RfDistribution};
use recouple::exact::PulseMode;
use recouple::experiments::{efficiency_curve, run_matching_profile, Engine, ExperimentConfig, PowderSource, Sweep};
use recouple::interactions::SpinSystem;
use recouple::selftest::{random_schedule, run_selftest};
use recouple::sequences::{sequence_propagator, SequenceDescriptor};
use recouple::spinops::{expm_unitary, transfer_efficiency, Subspace};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let b = SpinSystem::glycine().dipolar_coupling();
    let powder = EnsembleSpec::from_scheme(PowderScheme::BetaGaussLegendre(64), &RfDistribution::delta()).unwrap();
    let (t, eff) = powder_optimal_dcp(b, &powder).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        within(eff, 0.73, 0.01) && secs < 1.0,
        format!("powder DCP maximum {eff:.4} at {:.4} ms (target 0.73 +- 0.01), {secs:.3} s", t * 1e3),
    )
}

/// Glycine with ideal hard pulses.
fn glycine_exact(powder: PowderScheme) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        engine: Engine::Exact,
        powder: Some(PowderSource::Scheme(powder)),
        ..ExperimentConfig::default()
    };
    cfg.match_spec.pulse_mode = PulseMode::Instantaneous;
    cfg
}

struct Peaks {
    rf: String,
    values: [f64; 3],
    seconds: [f64; 3],
}

fn peaks(cfg: &ExperimentConfig, rf: &RfDistribution) -> Peaks {
    let seqs = [SequenceDescriptor::dcp(), SequenceDescriptor::comb3dcp(), SequenceDescriptor::comb6dcp()];
    let mut values = [0.0; 3];
    let mut seconds = [0.0; 3];
    for (k, s) in seqs.iter().enumerate() {
        let t0 = Instant::now();
        values[k] = efficiency_curve(cfg, s, rf).unwrap().peak;
        seconds[k] = t0.elapsed().as_secs_f64();
    }
    Peaks {
        rf: rf.label(),
        values,
        seconds,
    }
}

fn criterion_2(homogeneous: &Peaks) -> Outcome {
    let targets = [0.702, 0.809, 0.871];
    let names = ["DCP", "COMB3DCP", "COMB6DCP"];
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let pass = within(homogeneous.values[k], targets[k], 0.02) && homogeneous.seconds[k] < 300.0;
        ok &= pass;
        parts.push(format!(
            "{} {:.4} (target {} +- 0.02, {:.1} s){}",
            names[k],
            homogeneous.values[k],
            targets[k],
            homogeneous.seconds[k],
            if pass { "" } else { " FAIL" }
        ));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_3(all: &[(Peaks, [f64; 2])]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, targets) in all {
        let g3 = p.values[1] / p.values[0];
        let g6 = p.values[2] / p.values[0];
        let pass3 = within(g3, targets[0], 0.1);
        let pass6 = within(g6, targets[1], 0.1);
        ok &= pass3 && pass6;
        parts.push(format!(
            "{}: {g3:.3}{} / {g6:.3}{} (targets {} / {} +- 0.1)",
            p.rf,
            if pass3 { "" } else { " FAIL" },
            if pass6 { "" } else { " FAIL" },
            targets[0],
            targets[1]
        ));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let kappa = rng.gen_range(1.0..5e3);
        let gamma = rng.gen_range(0.0..2.0 * PI);
        let t = rng.gen_range(0.0..4e-3);
        let h = EffectiveParams::new(kappa, gamma, Subspace::Minus).block_hamiltonian(1.0);
        let e = transfer_efficiency(&expm_unitary(&h, t).unwrap());
        worst = worst.max((e - closed_form_transfer(kappa, t)).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst < 1e-10 && secs < 1.0, format!("max |delta| {worst:.2e} over 100 draws (< 1e-10), {secs:.3} s"))
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let seq = random_schedule(&mut rng, Subspace::Minus);
        let mut p = EffectiveParams::new(rng.gen_range(100.0..3000.0), rng.gen_range(0.0..2.0 * PI), Subspace::Minus);
        p.delta_rf_minus = rng.gen_range(-500.0..500.0);
        p.delta_rf_plus = rng.gen_range(-500.0..500.0);
        let k = rng.gen_range(0.5..1.5);
        let a = rotvec_efficiency(&p, &seq, k).unwrap();
        let b = transfer_efficiency(&sequence_propagator(&seq, &p, k).unwrap());
        worst = worst.max((a - b).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst < 1e-10 && secs < 5.0, format!("max |delta| {worst:.2e} over 200 schedules (< 1e-10), {secs:.3} s"))
}

fn criterion_6() -> Outcome {
    let r = run_selftest().unwrap();
    let secs = r.elapsed.as_secs_f64();
    let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    outcome(
        r.passed() && secs < 30.0,
        format!("{} checks, failed: [{}], {secs:.2} s", r.checks.len(), failed.join(", ")),
    )
}

fn mean_over_dispersion(seq: &SequenceDescriptor, gamma: f64) -> f64 {
    let p = EffectiveParams::new(1000.0, gamma, Subspace::Minus);
    let n = 61;
    (0..n)
        .map(|j| rotvec_efficiency(&p, seq, 0.7 + 0.6 * j as f64 / (n - 1) as f64).unwrap())
        .sum::<f64>()
        / n as f64
}

fn criterion_7() -> Outcome {
    // COMB6 and COMB3 have identical κ responses, so the comparison allows
    // rounding-level ties.
    const TIE: f64 = 1e-12;
    let mut rng = StdRng::seed_from_u64(7);
    let mut ok = true;
    let mut first = [0.0; 3];
    for draw in 0..50 {
        let gamma = if draw == 0 { 0.0 } else { rng.gen_range(0.0..2.0 * PI) };
        let m = [
            mean_over_dispersion(&SequenceDescriptor::dcp(), gamma),
            mean_over_dispersion(&SequenceDescriptor::comb3dcp(), gamma),
            mean_over_dispersion(&SequenceDescriptor::comb6dcp(), gamma),
        ];
        if draw == 0 {
            first = m;
        }
        ok &= m[2] >= m[1] - TIE && m[1] >= m[0] - TIE;
    }
    outcome(
        ok,
        format!(
            "mean efficiency over kappa_scale [0.7, 1.3]: DCP {:.6}, COMB3 {:.6}, COMB6 {:.6} (50 gamma draws)",
            first[0], first[1], first[2]
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = glycine_exact(PowderScheme::Zcw3(300));
    cfg.rf_s_khz = Sweep::new(32.0, 38.0, 61);
    let (profiles, _) = run_matching_profile(&cfg).unwrap();
    let w: Vec<f64> = profiles.iter().map(|p| p.fwhm_khz).collect();
    outcome(
        w[1] > w[0] && w[2] > w[0],
        format!("FWHM DCP {:.3} kHz, COMB3 {:.3} kHz, COMB6 {:.3} kHz", w[0], w[1], w[2]),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        println!("criterion {n}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    let homogeneous = peaks(&glycine_exact(PowderScheme::Zcw3(4180)), &RfDistribution::delta());
    report(2, criterion_2(&homogeneous));
    let inhomogeneous = glycine_exact(PowderScheme::Zcw3(1000));
    let gains = vec![
        (homogeneous, [1.15, 1.24]),
        (peaks(&inhomogeneous, &RfDistribution::lorentzian(2.0)), [1.21, 1.29]),
        (peaks(&inhomogeneous, &RfDistribution::lorentzian(5.0)), [1.38, 1.83]),
    ];
    report(3, criterion_3(&gains));
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    report(8, criterion_8());
    println!("criterion 9: EXCLUDED experimental spectra are out of scope; simulated substitutes are criteria 2, 3, 7 and 8");
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
