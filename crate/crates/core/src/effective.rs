//! Rotor-period-averaged Hamiltonians in the rf interaction frame and a fast
//! propagation engine on the three-dimensional operator subspaces.
//!
//! Under heteronuclear matching ω_rf^I − ω_rf^S = ±ω_r the average dipolar
//! Hamiltonian is κ[cos γ Z⁻ ± sin γ Y⁻] with κ = b sin 2β / (2√2); under
//! homonuclear matching at half the spin rate it is κ[cos γ Z⁺ + sin γ Y⁺]
//! with κ = 3 b sin 2β / (4√2). Both commute with the X operator of the
//! other subspace, so I_x = X⁺ + X⁻ keeps one half fixed and only the other
//! half moves.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use crate::ensemble::{EnsembleSpec, PowderScheme};
use crate::error::{Error, Result};
use crate::interactions::{a_coefficients, FourierHamiltonian};
use crate::sequences::{Segment, SequenceDescriptor};
use crate::spinops::{basis, Operator4, RotVec3, Subspace, C64};

const HERMITIAN_TOL: f64 = 1e-12;

pub fn dcp_kappa(b_is: f64, beta: f64) -> f64 {
    b_is * (2.0 * beta).sin() / (2.0 * SQRT_2)
}

pub fn horror_kappa(b_is: f64, beta: f64) -> f64 {
    3.0 * b_is * (2.0 * beta).sin() / (4.0 * SQRT_2)
}

/// (A⁺_{p+q} Z⁺ − i A⁻_{p+q} Y⁺) + (A⁺_{p−q} Z⁻ − i A⁻_{p−q} Y⁻).
pub fn effective_hamiltonian_general(a_sum: (C64, C64), a_diff: (C64, C64)) -> Result<Operator4> {
    let b = basis();
    let i = C64::new(0.0, 1.0);
    let h = b.z_plus.scale_c(a_sum.0)
        + b.y_plus.scale_c(-i * a_sum.1)
        + b.z_minus.scale_c(a_diff.0)
        + b.y_minus.scale_c(-i * a_diff.1);
    let dev = h.hermitian_deviation();
    if dev > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(Error::NonHermitian { deviation: dev });
    }
    Ok(h)
}

/// Heteronuclear average Hamiltonian for integer n_sum = p+q, n_diff = p−q.
pub fn effective_hamiltonian(fh: &FourierHamiltonian, n_sum: i32, n_diff: i32) -> Result<Operator4> {
    effective_hamiltonian_general(a_coefficients(fh, n_sum), a_coefficients(fh, n_diff))
}

/// Homonuclear average Hamiltonian at p = q = ½. The secular homonuclear
/// dipolar operator is −3/2 times the heteronuclear one within the Z/Y pair.
pub fn homonuclear_effective_hamiltonian(fh: &FourierHamiltonian) -> Result<Operator4> {
    let s = |(a, b): (C64, C64)| (a * -1.5, b * -1.5);
    effective_hamiltonian_general(s(a_coefficients(fh, 1)), s(a_coefficients(fh, 0)))
}

/// I_x → S_x transfer (1 − cos κt)/2 of a single crystallite under DCP.
pub fn closed_form_transfer(kappa: f64, t: f64) -> f64 {
    (1.0 - (kappa * t).cos()) / 2.0
}

/// Parameters of the effective Hamiltonian
/// H̄ = s·κ₀[cos γ Z^σ + sign·sin γ Y^σ] + Δω⁻ X⁻ + Δω⁺ X⁺,
/// where s is the per-crystallite kappa_scale passed alongside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveParams {
    /// Nominal κ₀ in rad/s; sets every block duration.
    pub kappa: f64,
    pub gamma: f64,
    /// ±1 branch of the heteronuclear Hamiltonian.
    pub sign: f64,
    pub subspace: Subspace,
    pub delta_rf_minus: f64,
    pub delta_rf_plus: f64,
    /// Flip-angle scale factors for hard pulses on each channel.
    pub pulse_scale_i: f64,
    pub pulse_scale_s: f64,
}

impl EffectiveParams {
    pub fn new(kappa: f64, gamma: f64, subspace: Subspace) -> Self {
        EffectiveParams {
            kappa,
            gamma,
            sign: 1.0,
            subspace,
            delta_rf_minus: 0.0,
            delta_rf_plus: 0.0,
            pulse_scale_i: 1.0,
            pulse_scale_s: 1.0,
        }
    }

    pub fn with_sign(mut self, sign: f64) -> Self {
        self.sign = sign.signum();
        self
    }

    /// Applies fractional rf errors to both the recoupling field (amplitudes
    /// p·ω_r, q·ω_r) and the hard pulses.
    pub fn with_rf_error(mut self, rf: &crate::sequences::RfErrorSpec, p: f64, q: f64, spin_rate: f64) -> Self {
        let (dm, dp) = rf.effective_terms(p, q, spin_rate);
        self.delta_rf_minus = dm;
        self.delta_rf_plus = dp;
        self.pulse_scale_i = 1.0 + rf.delta_i;
        self.pulse_scale_s = 1.0 + rf.delta_s;
        self
    }

    pub fn block_duration(&self, quarter_turns: u32) -> Result<f64> {
        if self.kappa == 0.0 || !self.kappa.is_finite() {
            return Err(Error::UndefinedDuration);
        }
        Ok(quarter_turns as f64 * FRAC_PI_2 / self.kappa.abs())
    }

    pub fn block_hamiltonian(&self, kappa_scale: f64) -> Operator4 {
        let [_, y, z] = self.subspace.triplet();
        let b = basis();
        let k = self.kappa * kappa_scale;
        z.scale(k * self.gamma.cos())
            + y.scale(k * self.sign * self.gamma.sin())
            + b.x_minus.scale(self.delta_rf_minus)
            + b.x_plus.scale(self.delta_rf_plus)
    }

    /// Rotation vector a of the block Hamiltonian restricted to σ, H = a·(X, Y, Z).
    pub fn block_axis(&self, kappa_scale: f64) -> RotVec3 {
        let k = self.kappa * kappa_scale;
        let dx = match self.subspace {
            Subspace::Minus => self.delta_rf_minus,
            Subspace::Plus => self.delta_rf_plus,
        };
        RotVec3::new(dx, k * self.sign * self.gamma.sin(), k * self.gamma.cos())
    }

    /// Signed transfer from the unit X^σ image after propagation.
    pub fn efficiency_from_endpoint(&self, v: &RotVec3) -> f64 {
        match self.subspace {
            Subspace::Minus => (1.0 - v.x) / 2.0,
            Subspace::Plus => (v.x - 1.0) / 2.0,
        }
    }
}

/// Rotation angle about X^σ produced by an x-phase pulse, or `None` when the
/// pulse phase leaves the x axis.
fn pulse_x_angle(seg: &Segment, params: &EffectiveParams) -> Option<f64> {
    let Segment::Pulse { channel, flip, phase } = *seg else {
        return Some(0.0);
    };
    if phase.sin().abs() > 1e-12 {
        return None;
    }
    let dir = phase.cos().signum();
    let s_sign = match params.subspace {
        Subspace::Minus => -1.0,
        Subspace::Plus => 1.0,
    };
    let mut angle = 0.0;
    if channel.hits_i() {
        angle += flip * params.pulse_scale_i * dir;
    }
    if channel.hits_s() {
        angle += s_sign * flip * params.pulse_scale_s * dir;
    }
    Some(angle)
}

/// Unit X^σ image after each segment, starting with (1, 0, 0).
pub fn rotvec_propagate(
    params: &EffectiveParams,
    seq: &SequenceDescriptor,
    kappa_scale: f64,
) -> Result<Vec<RotVec3>> {
    if seq.subspace != params.subspace {
        return Err(Error::SubspaceMismatch {
            sequence: seq.subspace,
            hamiltonian: params.subspace,
        });
    }
    let axis = params.block_axis(kappa_scale);
    let rate = axis.norm();
    let x = RotVec3::new(1.0, 0.0, 0.0);
    let mut v = x;
    let mut out = Vec::with_capacity(seq.segments.len() + 1);
    out.push(v);
    for (index, seg) in seq.segments.iter().enumerate() {
        match *seg {
            Segment::Dipolar { quarter_turns } => {
                let t = params.block_duration(quarter_turns)?;
                if rate > 0.0 {
                    v = v.rotated(&axis, rate * t);
                }
            }
            Segment::Pulse { .. } => {
                let angle = pulse_x_angle(seg, params).ok_or_else(|| Error::MixedSubspace {
                    index,
                    subspace: params.subspace,
                    reason: "pulse phase is not along ±x".into(),
                })?;
                v = v.rotated(&x, angle);
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Transfer efficiency from the fast subspace engine.
pub fn rotvec_efficiency(params: &EffectiveParams, seq: &SequenceDescriptor, kappa_scale: f64) -> Result<f64> {
    let traj = rotvec_propagate(params, seq, kappa_scale)?;
    Ok(params.efficiency_from_endpoint(traj.last().expect("trajectory has a start point")))
}

fn powder_dcp_objective(b_is: f64, powder: &EnsembleSpec, t: f64) -> f64 {
    let terms: Vec<(f64, f64)> = powder
        .crystallites
        .iter()
        .map(|c| (c.weight, closed_form_transfer(dcp_kappa(b_is, c.euler.beta), t)))
        .collect();
    crate::ensemble::weighted_sum(terms.into_iter())
}

fn optimize_dcp(b_is: f64, powder: &EnsembleSpec) -> Result<(f64, f64)> {
    let kmax = b_is.abs() / (2.0 * SQRT_2);
    if kmax == 0.0 {
        return Err(Error::UndefinedDuration);
    }
    let f = |t: f64| powder_dcp_objective(b_is, powder, t);
    let hi = 2.0 * PI / kmax;
    let n = 400;
    let step = hi / n as f64;
    let (mut best_i, mut best) = (0usize, f64::NEG_INFINITY);
    for i in 1..n {
        let v = f(i as f64 * step);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let (mut a, mut b) = ((best_i - 1) as f64 * step, (best_i + 1) as f64 * step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-9 * b {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    Ok((t, f(t)))
}

/// Mixing time maximizing the powder-averaged DCP transfer, and that maximum.
///
/// When the powder records the scheme that generated it, the result is
/// recomputed on a scheme of twice the size and rejected if the maxima
/// differ by more than 1e−3.
pub fn powder_optimal_dcp(b_is: f64, powder: &EnsembleSpec) -> Result<(f64, f64)> {
    let (t, e) = optimize_dcp(b_is, powder)?;
    if let Some(scheme) = powder.scheme {
        let finer: PowderScheme = scheme.doubled();
        let spec = EnsembleSpec::new(finer.generate()?, powder.rf_nodes.clone())?;
        let (_, e2) = optimize_dcp(b_is, &spec)?;
        if (e2 - e).abs() > 1e-3 {
            return Err(Error::NonConvergentPowder {
                n: scheme.size(),
                n2: finer.size(),
                coarse: e,
                fine: e2,
            });
        }
    }
    Ok((t, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::{fourier_coeffs, CrystalliteOrientation, SpinSystem};
    use crate::sequences::sequence_propagator;
    use crate::spinops::{commutator, expm_unitary, transfer_efficiency};

    #[test]
    fn kappa_values() {
        let b = 2.0 * PI * -890.0;
        assert!((dcp_kappa(b, PI / 4.0) / (2.0 * PI) + 314.662_517_628).abs() < 1e-8);
        assert!((horror_kappa(b, PI / 4.0) / (2.0 * PI) + 471.993_776_442).abs() < 1e-8);
        assert_eq!(dcp_kappa(b, 0.0), 0.0);
        assert!(dcp_kappa(b, FRAC_PI_2).abs() < 1e-12);
        for beta in [0.2, 0.9, 1.3, 2.4] {
            assert!((horror_kappa(b, beta) / dcp_kappa(b, beta) - 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_inputs_give_zero_operator() {
        let z = C64::new(0.0, 0.0);
        let h = effective_hamiltonian_general((z, z), (z, z)).unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn inconsistent_coefficients_are_rejected() {
        let z = C64::new(0.0, 0.0);
        let bad = C64::new(1.0, 0.0);
        // a real A⁻ makes −iA⁻Y non-Hermitian
        assert!(matches!(
            effective_hamiltonian_general((z, z), (z, bad)),
            Err(Error::NonHermitian { .. })
        ));
    }

    #[test]
    fn heteronuclear_average_matches_kappa_form() {
        let sys = SpinSystem::pure_dipolar(-890.0, 10e3);
        let b = sys.dipolar_coupling();
        let basis = basis();
        for (alpha, beta, gamma) in [(0.1, 0.5, 0.3), (1.7, 2.2, -1.1), (0.0, 1.0, 2.5)] {
            let fh = fourier_coeffs(&sys, &CrystalliteOrientation::new(alpha, beta, gamma, 1.0));
            let k = dcp_kappa(b, beta);
            // rotor phase convention places the axis at γ + π
            let g = gamma + PI;
            for (n_diff, sign) in [(1, 1.0), (-1, -1.0)] {
                let h = effective_hamiltonian(&fh, 6, n_diff).unwrap();
                let expect = basis.z_minus.scale(k * g.cos()) + basis.y_minus.scale(sign * k * g.sin());
                assert!((h - expect).max_abs() < 1e-10 * b.abs());
                assert!(commutator(&h, &basis.x_plus).max_abs() < 1e-9);
            }
        }
    }

    #[test]
    fn homonuclear_average_matches_kappa_form() {
        let sys = SpinSystem::pure_dipolar(-890.0, 10e3);
        let b = sys.dipolar_coupling();
        let basis = basis();
        for (alpha, beta, gamma) in [(0.1, 0.5, 0.3), (1.7, 2.2, -1.1)] {
            let fh = fourier_coeffs(&sys, &CrystalliteOrientation::new(alpha, beta, gamma, 1.0));
            let k = horror_kappa(b, beta);
            let h = homonuclear_effective_hamiltonian(&fh).unwrap();
            let expect = basis.z_plus.scale(k * gamma.cos()) + basis.y_plus.scale(k * gamma.sin());
            assert!((h - expect).max_abs() < 1e-10 * b.abs());
            // X⁻ conserved, X⁺ inverted after κt = π
            let u = expm_unitary(&h, PI / k.abs()).unwrap();
            assert!((u.conjugate(&basis.x_minus) - basis.x_minus).max_abs() < 1e-10);
            assert!((u.conjugate(&basis.x_plus) + basis.x_plus).max_abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_values() {
        assert!((closed_form_transfer(1.0, PI) - 1.0).abs() < 1e-15);
        assert_eq!(closed_form_transfer(1.0, 0.0), 0.0);
        let e = closed_form_transfer(1.0, 0.86 * PI);
        assert!((e - 0.952_413_5).abs() < 1e-6, "{e}");
    }

    #[test]
    fn closed_form_matches_operator_propagation() {
        let b = basis();
        for &(k, t, g) in &[(1000.0, 0.002, 0.3), (-700.0, 0.004, 2.0), (250.0, 0.01, -1.0)] {
            let h = b.z_minus.scale(k * f64::cos(g)) + b.y_minus.scale(k * f64::sin(g));
            let u = expm_unitary(&h, t).unwrap();
            assert!((transfer_efficiency(&u) - closed_form_transfer(k, t)).abs() < 1e-10);
        }
    }

    #[test]
    fn block_axis_agrees_with_operator_generator() {
        let mut p = EffectiveParams::new(-1200.0, 0.7, Subspace::Minus).with_sign(-1.0);
        p.delta_rf_minus = 300.0;
        p.delta_rf_plus = -50.0;
        let h = p.block_hamiltonian(0.9);
        let a = crate::spinops::generator_axis(&h, Subspace::Minus);
        let ax = p.block_axis(0.9);
        assert!((a.x - ax.x).abs() < 1e-9 && (a.y - ax.y).abs() < 1e-9 && (a.z - ax.z).abs() < 1e-9);
    }

    #[test]
    fn rotvec_endpoints() {
        let p = EffectiveParams::new(900.0, 0.4, Subspace::Minus);
        let end = *rotvec_propagate(&p, &SequenceDescriptor::dcp(), 1.0).unwrap().last().unwrap();
        assert!((end.x + 1.0).abs() < 1e-12 && end.y.abs() < 1e-12 && end.z.abs() < 1e-12);
        for s in [0.75, 1.25] {
            let tr = rotvec_propagate(&p, &SequenceDescriptor::comb3dcp(), s).unwrap();
            let end = tr.last().unwrap();
            assert!(end.x < -0.95, "{s}: {end:?}");
            for v in &tr {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotvec_rejects_off_axis_pulses() {
        let p = EffectiveParams::new(900.0, 0.4, Subspace::Minus);
        let seq = SequenceDescriptor::dcp().pulse(crate::sequences::Channel::I, 1.0, FRAC_PI_2);
        assert!(matches!(rotvec_propagate(&p, &seq, 1.0), Err(Error::MixedSubspace { index: 1, .. })));
    }

    #[test]
    fn engines_agree_with_scaled_pulses() {
        let mut p = EffectiveParams::new(-1500.0, 1.2, Subspace::Minus);
        p.delta_rf_minus = 120.0;
        p.pulse_scale_i = 1.04;
        p.pulse_scale_s = 0.93;
        for seq in [SequenceDescriptor::comb3dcp(), SequenceDescriptor::comb6dcp()] {
            let a = rotvec_efficiency(&p, &seq, 1.1).unwrap();
            let b = transfer_efficiency(&sequence_propagator(&seq, &p, 1.1).unwrap());
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn single_crystallite_optimum_is_full_transfer() {
        let b = 2.0 * PI * -890.0;
        let powder = EnsembleSpec::single(CrystalliteOrientation::new(0.0, PI / 4.0, 0.0, 1.0));
        let (t, e) = powder_optimal_dcp(b, &powder).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        assert!((t * dcp_kappa(b, PI / 4.0).abs() - PI).abs() < 1e-6);
    }
}
