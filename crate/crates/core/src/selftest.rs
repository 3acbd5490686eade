//! Invariant suite run by `recouple selftest`.

use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::Matrix4;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::effective::{closed_form_transfer, effective_hamiltonian, homonuclear_effective_hamiltonian, rotvec_efficiency, EffectiveParams};
use crate::ensemble::{beta_gauss_legendre, RfDistribution, WidthConvention};
use crate::error::Result;
use crate::exact::{ExactEngine, MatchSpec};
use crate::interactions::{fourier_coeffs, CrystalliteOrientation, SpinSystem};
use crate::sequences::{sequence_propagator, PulseRealization, RfErrorSpec, SequenceDescriptor};
use crate::spinops::{basis, commutator, expm_unitary, generator_axis, transfer_efficiency, Operator4, Subspace, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed deviation.
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub elapsed: Duration,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<34} max deviation {:.3e} (tolerance {:.0e})",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance
            )?;
        }
        write!(f, "{} checks in {:.2} s", self.checks.len(), self.elapsed.as_secs_f64())
    }
}

/// A random schedule of dipolar blocks and X^σ rotations.
pub fn random_schedule(rng: &mut impl Rng, subspace: Subspace) -> SequenceDescriptor {
    let mut seq = SequenceDescriptor::new("random", subspace);
    let n = rng.gen_range(1..=8);
    for _ in 0..n {
        if rng.gen_bool(0.6) {
            seq = seq.block(rng.gen_range(1..=4));
        } else {
            let how = match rng.gen_range(0..3) {
                0 => PulseRealization::Split,
                1 => PulseRealization::IOnly,
                _ => PulseRealization::SOnly,
            };
            seq = seq.x_rotation(rng.gen_range(-2.0 * PI..2.0 * PI), how);
        }
    }
    seq
}

fn random_hermitian(rng: &mut impl Rng, scale: f64) -> Operator4 {
    let mut m = Matrix4::<C64>::zeros();
    for r in 0..4 {
        m[(r, r)] = C64::new(rng.gen_range(-scale..scale), 0.0);
        for c in r + 1..4 {
            let z = C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
            m[(r, c)] = z;
            m[(c, r)] = z.conj();
        }
    }
    Operator4(m)
}

fn random_crystallite(rng: &mut impl Rng) -> CrystalliteOrientation {
    CrystalliteOrientation::new(
        rng.gen_range(0.0..2.0 * PI),
        rng.gen_range(0.0..PI),
        rng.gen_range(0.0..2.0 * PI),
        1.0,
    )
}

fn operator_efficiency(seq: &SequenceDescriptor, p: &EffectiveParams, k: f64) -> Result<f64> {
    Ok(transfer_efficiency(&sequence_propagator(seq, p, k)?))
}

fn unitarity(rng: &mut StdRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut u = Operator4::identity();
        for _ in 0..10 {
            let h = random_hermitian(rng, 1e4);
            u = expm_unitary(&h, rng.gen_range(0.0..1e-3))? * u;
            worst = worst.max(u.unitarity_deviation());
        }
    }
    Ok(worst)
}

fn exact_unitarity() -> Result<f64> {
    let sys = SpinSystem::glycine();
    let cr = CrystalliteOrientation::new(0.3, 1.1, 2.0, 1.0);
    let mut eng = ExactEngine::new(&sys, &cr, &MatchSpec::glycine(), &RfErrorSpec::none())?;
    // 16 quarters of 640 slices: > 10⁴ slices
    let u = eng.propagator(&SequenceDescriptor::comb6dcp(), 640)?;
    Ok(u.unitarity_deviation())
}

fn x_plus_commutes(rng: &mut StdRng) -> Result<f64> {
    let sys = SpinSystem::glycine();
    let b = basis();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let fh = fourier_coeffs(&sys, &random_crystallite(rng));
        let h = effective_hamiltonian(&fh, 6, -1)?;
        let scale = h.max_abs().max(1.0);
        worst = worst.max(commutator(&h, &b.x_plus).max_abs() / scale);
    }
    Ok(worst)
}

fn homonuclear_conservation(rng: &mut StdRng) -> Result<f64> {
    let sys = SpinSystem::pure_dipolar(-2000.0, 10e3);
    let b = basis();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let fh = fourier_coeffs(&sys, &random_crystallite(rng));
        let h = homonuclear_effective_hamiltonian(&fh)?;
        let kappa = generator_axis(&h, Subspace::Plus).norm();
        if kappa < 1e-6 {
            continue;
        }
        let t = rng.gen_range(0.0..5.0) / kappa;
        let u = expm_unitary(&h, t)?;
        worst = worst.max((u.conjugate(&b.x_minus) - b.x_minus).max_abs());
        let inv = expm_unitary(&h, PI / kappa)?;
        worst = worst.max((inv.conjugate(&b.x_plus) + b.x_plus).max_abs());
    }
    Ok(worst)
}

fn gamma_invariance(rng: &mut StdRng) -> Result<f64> {
    let seqs = [
        SequenceDescriptor::dcp(),
        SequenceDescriptor::comb3dcp(),
        SequenceDescriptor::comb6dcp(),
        SequenceDescriptor::horror(),
        SequenceDescriptor::comb3horror(),
    ];
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.gen_range(0.5..1.5);
        let d = rng.gen_range(-200.0..200.0);
        for seq in seqs.iter().cloned().chain(std::iter::once(random_schedule(rng, Subspace::Minus))) {
            let mut vals = Vec::new();
            for j in 0..10 {
                let mut p = EffectiveParams::new(1000.0, j as f64 * PI / 10.0, seq.subspace);
                p.delta_rf_minus = d;
                p.delta_rf_plus = d;
                vals.push(rotvec_efficiency(&p, &seq, k)?);
                vals.push(operator_efficiency(&seq, &p, k)?);
            }
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
            worst = worst.max(hi - lo);
        }
    }
    Ok(worst)
}

fn comb_nominal() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seq in [SequenceDescriptor::comb3dcp(), SequenceDescriptor::comb6dcp()] {
        for j in 0..20 {
            for sign in [1.0, -1.0] {
                let p = EffectiveParams::new(1000.0, j as f64 * PI / 10.0, Subspace::Minus).with_sign(sign);
                worst = worst.max(1.0 - rotvec_efficiency(&p, &seq, 1.0)?);
                worst = worst.max(1.0 - operator_efficiency(&seq, &p, 1.0)?);
            }
        }
    }
    Ok(worst)
}

fn phase_advance(rng: &mut StdRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for sub in [Subspace::Minus, Subspace::Plus] {
        let x = sub.triplet()[0];
        for _ in 0..50 {
            let (k, g, th) = (rng.gen_range(0.1..3.0), rng.gen_range(0.0..2.0 * PI), rng.gen_range(-PI..PI));
            let t = rng.gen_range(0.0..5.0);
            let block = |gamma: f64| EffectiveParams::new(k, gamma, sub).block_hamiltonian(1.0);
            let r = expm_unitary(&x, th)?;
            let lhs = r * expm_unitary(&block(g), t)? * r.adjoint();
            let rhs = expm_unitary(&block(g - th), t)?;
            worst = worst.max((lhs - rhs).max_abs());
        }
    }
    Ok(worst)
}

fn quadrature() -> f64 {
    let pts = beta_gauss_legendre(32);
    let s: f64 = pts.iter().map(|c| c.weight * (2.0 * c.euler.beta).sin().powi(2)).sum();
    (s - 8.0 / 15.0).abs()
}

/// (worst |Σw − 1|, worst |mean scale − 1|)
fn rf_normalization() -> Result<(f64, f64)> {
    let (mut wsum, mut mean): (f64, f64) = (0.0, 0.0);
    for width in [1.0, 2.0, 5.0, 10.0] {
        for correlated in [true, false] {
            for convention in [WidthConvention::Fwhm, WidthConvention::Hwhm] {
                for mut d in [RfDistribution::lorentzian(width), RfDistribution::gaussian(width)] {
                    d.correlated = correlated;
                    d.convention = convention;
                    let nodes = d.nodes()?;
                    let w: f64 = nodes.iter().map(|n| n.weight).sum();
                    let mi: f64 = nodes.iter().map(|n| n.weight * n.scale_i).sum();
                    let ms: f64 = nodes.iter().map(|n| n.weight * n.scale_s).sum();
                    wsum = wsum.max((w - 1.0).abs());
                    mean = mean.max((mi - 1.0).abs()).max((ms - 1.0).abs());
                }
            }
        }
    }
    Ok((wsum, mean))
}

fn closed_form(rng: &mut StdRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (k, g, t) = (rng.gen_range(0.1..5e3), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..5e-3));
        let h = EffectiveParams::new(k, g, Subspace::Minus).block_hamiltonian(1.0);
        let e = transfer_efficiency(&expm_unitary(&h, t)?);
        worst = worst.max((e - closed_form_transfer(k, t)).abs());
    }
    Ok(worst)
}

fn engine_equivalence(rng: &mut StdRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 0..200 {
        let sub = if n % 4 == 3 { Subspace::Plus } else { Subspace::Minus };
        let seq = random_schedule(rng, sub);
        let mut p = EffectiveParams::new(rng.gen_range(100.0..2000.0), rng.gen_range(0.0..2.0 * PI), sub)
            .with_sign(if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        p.delta_rf_minus = rng.gen_range(-300.0..300.0);
        p.delta_rf_plus = rng.gen_range(-300.0..300.0);
        p.pulse_scale_i = rng.gen_range(0.9..1.1);
        p.pulse_scale_s = if sub == Subspace::Plus { p.pulse_scale_i } else { rng.gen_range(0.9..1.1) };
        let k = rng.gen_range(0.5..1.5);
        worst = worst.max((rotvec_efficiency(&p, &seq, k)? - operator_efficiency(&seq, &p, k)?).abs());
    }
    Ok(worst)
}

fn heisenberg_commutes_with_rf() -> f64 {
    let b = basis();
    let is = b.ix * b.sx + b.iy * b.sy + b.iz * b.sz;
    commutator(&is, &(b.ix + b.sx)).max_abs()
}

fn time_reversal(rng: &mut StdRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let seq = random_schedule(rng, Subspace::Minus);
        let p = EffectiveParams::new(1000.0, rng.gen_range(0.0..2.0 * PI), Subspace::Minus);
        let k = rng.gen_range(0.5..1.5);
        let u = sequence_propagator(&seq.then(&seq.inverse()), &p, k)?;
        // identity up to a global phase
        let phase = u.entry(0, 0);
        worst = worst.max((u - Operator4::identity().scale_c(phase)).max_abs());
    }
    Ok(worst)
}

/// Runs every invariant check with a fixed seed.
pub fn run_selftest() -> Result<SelftestReport> {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut checks = Vec::new();
    let mut add = |name, value, tolerance| checks.push(Check { name, value, tolerance });
    add("unitarity", unitarity(&mut rng)?, 1e-12);
    add("exact propagator unitarity", exact_unitarity()?, 1e-10);
    add("[H_IS, X+] = 0", x_plus_commutes(&mut rng)?, 1e-12);
    add("homonuclear X- conservation", homonuclear_conservation(&mut rng)?, 1e-10);
    add("I.S commutes with rf", heisenberg_commutes_with_rf(), 1e-15);
    add("gamma invariance", gamma_invariance(&mut rng)?, 1e-10);
    add("comb efficiency at nominal", comb_nominal()?, 1e-10);
    add("phase-advance lemma", phase_advance(&mut rng)?, 1e-10);
    add("time reversal", time_reversal(&mut rng)?, 1e-10);
    add("quadrature <sin^2 2beta> = 8/15", quadrature(), 1e-10);
    let (wsum, mean) = rf_normalization()?;
    add("rf node weights sum to 1", wsum, 1e-14);
    add("rf node mean scale = 1", mean, 1e-12);
    add("closed form vs propagator", closed_form(&mut rng)?, 1e-10);
    add("rotvec vs operator engine", engine_equivalence(&mut rng)?, 1e-10);
    Ok(SelftestReport {
        checks,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let r = run_selftest().unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.elapsed.as_secs_f64() < 30.0);
    }

    #[test]
    fn report_lists_every_check() {
        let r = run_selftest().unwrap();
        let text = r.to_string();
        assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), r.checks.len());
        assert!(r.check("gamma invariance").is_some());
    }
}
