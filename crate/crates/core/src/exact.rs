//! Time-sliced propagation of the full rotating-frame Hamiltonian
//!
//! ```text
//! H(t) = ω_I(t) I_z + ω_S(t) S_z + ω_IS(t) 2I_zS_z
//!      + 2π(ν_off^I I_z + ν_off^S S_z) + rf(t)
//! ```
//!
//! over a pulse sequence. Each rotor period is cut into `slices_per_rotor`
//! slices and every slice uses the Hamiltonian at its midpoint. While only
//! the recoupling field is on, the slice product is rotor-periodic, so a
//! block of any length is assembled from cached prefix products and powers
//! of the one-period propagator.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Matrix4;

use crate::effective::{dcp_kappa, rotvec_efficiency, EffectiveParams};
use crate::ensemble::{map_crystallites, weighted_sum, EnsembleSpec};
use crate::error::{Error, Result};
use crate::interactions::{fourier_coeffs, CrystalliteOrientation, FourierHamiltonian, Interaction, SpinSystem};
use crate::sequences::{Channel, RfErrorSpec, Segment, SequenceDescriptor};
use crate::spinops::{basis, expm_real_symmetric, expm_unitary, rf_rotation, transfer_efficiency, Operator4, Subspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PulseMode {
    /// Hard pulses take time at `hard_pulse_hz`, with the recoupling field off.
    #[default]
    Finite,
    /// Ideal zero-length rotations.
    Instantaneous,
}

/// rf matching and digitization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchSpec {
    /// ω_rf^I / ω_r
    pub p: f64,
    /// ω_rf^S / ω_r
    pub q: f64,
    pub phase_i: f64,
    pub phase_s: f64,
    pub slices_per_rotor: usize,
    /// Nominal hard-pulse amplitude in Hz.
    pub hard_pulse_hz: f64,
    pub pulse_mode: PulseMode,
    /// Rotor phase at t = 0.
    pub rotor_phase0: f64,
}

impl MatchSpec {
    pub fn new(p: f64, q: f64) -> Self {
        MatchSpec {
            p,
            q,
            phase_i: 0.0,
            phase_s: 0.0,
            slices_per_rotor: 128,
            hard_pulse_hz: 100e3,
            pulse_mode: PulseMode::Finite,
            rotor_phase0: 0.0,
        }
    }

    /// 25 kHz on I (¹⁵N) and 35 kHz on S (¹³C) at 10 kHz spinning.
    pub fn glycine() -> Self {
        Self::new(2.5, 3.5)
    }

    pub fn homonuclear() -> Self {
        Self::new(0.5, 0.5)
    }

    pub fn from_hz(rf_i_hz: f64, rf_s_hz: f64, spin_rate_hz: f64) -> Self {
        Self::new(rf_i_hz / spin_rate_hz, rf_s_hz / spin_rate_hz)
    }

    /// Integer p − q of the heteronuclear match, if any.
    pub fn difference_order(&self) -> Option<i32> {
        let d = self.p - self.q;
        (d.fract().abs() < 1e-9 && d.abs() > 0.5).then_some(d.round() as i32)
    }
}

fn real_basis() -> [Matrix4<f64>; 7] {
    let b = basis();
    let re = |o: &Operator4| o.0.map(|z| z.re);
    [re(&b.iz), re(&b.sz), re(&b.izsz2), re(&b.ix), re(&b.sx), b.iy.0.map(|z| z.im), b.sy.0.map(|z| z.im)]
}

/// Time-independent part of the Hamiltonian plus the rf terms, split into
/// the real part and the coefficient of the imaginary I_y/S_y parts.
#[derive(Clone, Copy)]
struct RfField {
    amp_i: f64,
    phase_i: f64,
    amp_s: f64,
    phase_s: f64,
}

impl RfField {
    fn is_real(&self) -> bool {
        (self.amp_i * self.phase_i.sin()).abs() < 1e-12 * self.amp_i.abs().max(1.0)
            && (self.amp_s * self.phase_s.sin()).abs() < 1e-12 * self.amp_s.abs().max(1.0)
    }
}

/// Per-crystallite, per-rf-node propagation state with rotor-synchronous
/// caches.
pub struct ExactEngine {
    fh: FourierHamiltonian,
    n: usize,
    dt: f64,
    spin_rate: f64,
    rotor_phase0: f64,
    offset_i: f64,
    offset_s: f64,
    scale_i: f64,
    scale_s: f64,
    hard: f64,
    mode: PulseMode,
    ops: [Matrix4<f64>; 7],
    /// P(k) = U_{k−1} ⋯ U_0 for k = 0..=n.
    prefix: Vec<Operator4>,
    /// W^(2^j)
    period_powers: Vec<Operator4>,
    pulse_cache: HashMap<[u64; 5], Vec<Option<Operator4>>>,
}

impl ExactEngine {
    pub fn new(sys: &SpinSystem, cr: &CrystalliteOrientation, m: &MatchSpec, rf: &RfErrorSpec) -> Result<Self> {
        if m.slices_per_rotor == 0 {
            return Err(Error::InvalidArgument("slices_per_rotor must be positive".into()));
        }
        let n = m.slices_per_rotor;
        let spin_rate = sys.spin_rate();
        let mut e = ExactEngine {
            fh: fourier_coeffs(sys, cr),
            n,
            dt: sys.rotor_period() / n as f64,
            spin_rate,
            rotor_phase0: m.rotor_phase0,
            offset_i: 2.0 * PI * rf.offset_i_hz,
            offset_s: 2.0 * PI * rf.offset_s_hz,
            scale_i: 1.0 + rf.delta_i,
            scale_s: 1.0 + rf.delta_s,
            hard: 2.0 * PI * m.hard_pulse_hz,
            mode: m.pulse_mode,
            ops: real_basis(),
            prefix: Vec::with_capacity(n + 1),
            period_powers: Vec::new(),
            pulse_cache: HashMap::new(),
        };
        let field = RfField {
            amp_i: m.p * spin_rate * e.scale_i,
            phase_i: m.phase_i,
            amp_s: m.q * spin_rate * e.scale_s,
            phase_s: m.phase_s,
        };
        let mut p = Operator4::identity();
        e.prefix.push(p);
        for k in 0..n {
            p = e.slice(k, &field, e.dt)? * p;
            e.prefix.push(p);
        }
        e.period_powers.push(p);
        Ok(e)
    }

    pub fn slice_duration(&self) -> f64 {
        self.dt
    }

    pub fn slices_per_rotor(&self) -> usize {
        self.n
    }

    fn rotor_phase(&self, t: f64) -> f64 {
        self.rotor_phase0 + self.spin_rate * t
    }

    /// Diagonal (real symmetric) part at rotor phase φ plus rf.
    fn hamiltonian_real(&self, phi: f64, field: &RfField) -> (Matrix4<f64>, Matrix4<f64>) {
        let [iz, sz, izsz2, ix, sx, iy_im, sy_im] = &self.ops;
        let wi = self.fh.eval(Interaction::I, phi) + self.offset_i;
        let ws = self.fh.eval(Interaction::S, phi) + self.offset_s;
        let wd = self.fh.eval(Interaction::IS, phi);
        let re = iz * wi
            + sz * ws
            + izsz2 * wd
            + ix * (field.amp_i * field.phase_i.cos())
            + sx * (field.amp_s * field.phase_s.cos());
        let im = iy_im * (field.amp_i * field.phase_i.sin()) + sy_im * (field.amp_s * field.phase_s.sin());
        (re, im)
    }

    fn slice(&self, k: usize, field: &RfField, dt: f64) -> Result<Operator4> {
        let phi = self.rotor_phase((k as f64 + 0.5) * dt);
        let (re, im) = self.hamiltonian_real(phi, field);
        if field.is_real() {
            Ok(expm_real_symmetric(&re, dt))
        } else {
            let h = Operator4(re.zip_map(&im, crate::spinops::C64::new));
            expm_unitary(&h, dt)
        }
    }

    fn period_power(&mut self, mut m: usize) -> Operator4 {
        let mut out = Operator4::identity();
        let mut j = 0;
        while m > 0 {
            if j == self.period_powers.len() {
                let w = self.period_powers[j - 1];
                self.period_powers.push(w * w);
            }
            if m & 1 == 1 {
                out = self.period_powers[j] * out;
            }
            m >>= 1;
            j += 1;
        }
        out
    }

    /// Propagator under the recoupling field from absolute slice `a` for `len` slices.
    fn recoupling_block(&mut self, a: usize, len: usize) -> Operator4 {
        let b = a + len;
        let (ka, kb) = (a % self.n, b % self.n);
        let m = b / self.n - a / self.n;
        let w = self.period_power(m);
        self.prefix[kb] * w * self.prefix[ka].adjoint()
    }

    fn pulse_group(&mut self, group: &PulseGroup, pos: usize, u: Operator4) -> Result<(Operator4, usize)> {
        if self.mode == PulseMode::Instantaneous {
            let r = rf_rotation(
                group.flip_i * self.scale_i,
                group.phase_i,
                group.flip_s * self.scale_s,
                group.phase_s,
            );
            return Ok((r * u, 0));
        }
        let max_flip = group.flip_i.abs().max(group.flip_s.abs());
        let len = ((max_flip / self.hard / self.dt).round() as usize).max(1);
        let t = len as f64 * self.dt;
        let field = RfField {
            amp_i: group.flip_i / t * self.scale_i,
            phase_i: group.phase_i,
            amp_s: group.flip_s / t * self.scale_s,
            phase_s: group.phase_s,
        };
        let key = [
            group.flip_i.to_bits(),
            group.phase_i.to_bits(),
            group.flip_s.to_bits(),
            group.phase_s.to_bits(),
            len as u64,
        ];
        let n = self.n;
        self.pulse_cache.entry(key).or_insert_with(|| vec![None; n]);
        let mut u = u;
        for j in 0..len {
            let k = (pos + j) % n;
            let cached = self.pulse_cache[&key][k];
            let s = match cached {
                Some(s) => s,
                None => {
                    let s = self.slice(k, &field, self.dt)?;
                    self.pulse_cache.get_mut(&key).expect("inserted above")[k] = Some(s);
                    s
                }
            };
            u = s * u;
        }
        Ok((u, len))
    }

    /// Total propagator with each quarter turn lasting `quarter_slices` slices.
    pub fn propagator(&mut self, seq: &SequenceDescriptor, quarter_slices: usize) -> Result<Operator4> {
        let mut u = Operator4::identity();
        let mut pos = 0usize;
        for step in schedule(seq)? {
            match step {
                Step::Block(q) => {
                    let len = q as usize * quarter_slices;
                    u = self.recoupling_block(pos, len) * u;
                    pos += len;
                }
                Step::Pulses(g) => {
                    let (nu, len) = self.pulse_group(&g, pos, u)?;
                    u = nu;
                    pos += len;
                }
            }
        }
        Ok(u)
    }

    pub fn efficiency(&mut self, seq: &SequenceDescriptor, quarter_slices: usize) -> Result<f64> {
        Ok(transfer_efficiency(&self.propagator(seq, quarter_slices)?))
    }
}

/// Simultaneous pulses on the two channels.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PulseGroup {
    flip_i: f64,
    phase_i: f64,
    flip_s: f64,
    phase_s: f64,
}

enum Step {
    Block(u32),
    Pulses(PulseGroup),
}

/// Merges runs of pulses on disjoint channels into simultaneous groups.
fn schedule(seq: &SequenceDescriptor) -> Result<Vec<Step>> {
    let mut out = Vec::new();
    let mut open: Option<(PulseGroup, bool, bool)> = None;
    for seg in &seq.segments {
        match *seg {
            Segment::Dipolar { quarter_turns } => {
                if let Some((g, _, _)) = open.take() {
                    out.push(Step::Pulses(g));
                }
                out.push(Step::Block(quarter_turns));
            }
            Segment::Pulse { channel, flip, phase } => {
                let (hi, hs) = (channel.hits_i(), channel.hits_s());
                if let Some((g, ui, us)) = open {
                    if (hi && ui) || (hs && us) {
                        out.push(Step::Pulses(g));
                        open = None;
                    }
                }
                let (mut g, mut ui, mut us) = open.unwrap_or((
                    PulseGroup {
                        flip_i: 0.0,
                        phase_i: 0.0,
                        flip_s: 0.0,
                        phase_s: 0.0,
                    },
                    false,
                    false,
                ));
                if hi {
                    g.flip_i = flip;
                    g.phase_i = phase;
                    ui = true;
                }
                if hs {
                    g.flip_s = flip;
                    g.phase_s = phase;
                    us = true;
                }
                open = Some((g, ui, us));
                if channel == Channel::Both {
                    out.push(Step::Pulses(g));
                    open = None;
                }
            }
        }
    }
    if let Some((g, _, _)) = open {
        out.push(Step::Pulses(g));
    }
    Ok(out)
}

/// exp(−i H(t0 + dt/2) dt) with the recoupling field on.
pub fn slice_propagator(
    sys: &SpinSystem,
    cr: &CrystalliteOrientation,
    m: &MatchSpec,
    rf: &RfErrorSpec,
    t0: f64,
    dt: f64,
) -> Result<Operator4> {
    let max_dt = sys.rotor_period() / m.slices_per_rotor as f64;
    if !(dt > 0.0) || dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("slice {dt:e} s exceeds the rotor slice {max_dt:e} s")));
    }
    let spin_rate = sys.spin_rate();
    let e = ExactEngine {
        fh: fourier_coeffs(sys, cr),
        n: m.slices_per_rotor,
        dt,
        spin_rate,
        rotor_phase0: m.rotor_phase0,
        offset_i: 2.0 * PI * rf.offset_i_hz,
        offset_s: 2.0 * PI * rf.offset_s_hz,
        scale_i: 1.0 + rf.delta_i,
        scale_s: 1.0 + rf.delta_s,
        hard: 2.0 * PI * m.hard_pulse_hz,
        mode: m.pulse_mode,
        ops: real_basis(),
        prefix: Vec::new(),
        period_powers: Vec::new(),
        pulse_cache: HashMap::new(),
    };
    let field = RfField {
        amp_i: m.p * spin_rate * e.scale_i,
        phase_i: m.phase_i,
        amp_s: m.q * spin_rate * e.scale_s,
        phase_s: m.phase_s,
    };
    let phi = e.rotor_phase(t0 + dt / 2.0);
    let (re, im) = e.hamiltonian_real(phi, &field);
    let h = Operator4(re.zip_map(&im, crate::spinops::C64::new));
    expm_unitary(&h, dt)
}

/// Quarter-turn length in slices, requiring an integer number of slices.
pub fn quarter_slices(quarter_duration: f64, slice: f64) -> Result<usize> {
    let r = quarter_duration / slice;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-6 * n.max(1.0) {
        return Err(Error::Digitization {
            duration: quarter_duration,
            slice,
        });
    }
    Ok(n as usize)
}

/// Nearest whole number of slices (at least one).
pub fn round_to_slices(quarter_duration: f64, slice: f64) -> usize {
    ((quarter_duration / slice).round() as usize).max(1)
}

fn reject_plus(seq: &SequenceDescriptor) -> Result<()> {
    if seq.subspace == Subspace::Plus {
        return Err(Error::SubspaceMismatch {
            sequence: Subspace::Plus,
            hamiltonian: Subspace::Minus,
        });
    }
    Ok(())
}

/// Transfer efficiency from full propagation with quarter turns of
/// `quarter_duration` seconds, which must be a whole number of slices.
pub fn simulate_sequence_exact(
    sys: &SpinSystem,
    cr: &CrystalliteOrientation,
    seq: &SequenceDescriptor,
    m: &MatchSpec,
    rf: &RfErrorSpec,
    quarter_duration: f64,
) -> Result<f64> {
    reject_plus(seq)?;
    let q = quarter_slices(quarter_duration, sys.rotor_period() / m.slices_per_rotor as f64)?;
    ExactEngine::new(sys, cr, m, rf)?.efficiency(seq, q)
}

/// Efficiencies of one crystallite at several quarter lengths (in slices).
pub fn efficiency_curve(
    sys: &SpinSystem,
    cr: &CrystalliteOrientation,
    seq: &SequenceDescriptor,
    m: &MatchSpec,
    rf: &RfErrorSpec,
    quarters: &[usize],
) -> Result<Vec<f64>> {
    reject_plus(seq)?;
    let mut e = ExactEngine::new(sys, cr, m, rf)?;
    quarters
        .iter()
        .map(|&q| if q == 0 { Ok(0.0) } else { e.efficiency(seq, q) })
        .collect()
}

/// Powder- and rf-averaged efficiency curve.
pub fn powder_curve(
    sys: &SpinSystem,
    seq: &SequenceDescriptor,
    m: &MatchSpec,
    rf: &RfErrorSpec,
    spec: &EnsembleSpec,
    quarters: &[usize],
) -> Result<Vec<f64>> {
    crate::ensemble::try_average_vec(
        |cr, node| {
            let r = RfErrorSpec {
                delta_i: (1.0 + rf.delta_i) * node.scale_i - 1.0,
                delta_s: (1.0 + rf.delta_s) * node.scale_s - 1.0,
                ..*rf
            };
            efficiency_curve(sys, cr, seq, m, &r, quarters)
        },
        spec,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    /// exact − effective, per crystallite in input order.
    pub deltas: Vec<f64>,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Per-crystallite comparison of the exact and effective engines at a fixed
/// quarter length. The effective side keeps only the dipolar coupling.
pub fn effective_vs_exact_report(
    sys: &SpinSystem,
    seq: &SequenceDescriptor,
    powder: &EnsembleSpec,
    m: &MatchSpec,
    quarter_duration: f64,
) -> Result<ResidualReport> {
    reject_plus(seq)?;
    let dt = sys.rotor_period() / m.slices_per_rotor as f64;
    let q = quarter_slices(quarter_duration, dt)?;
    let kappa0 = std::f64::consts::FRAC_PI_2 / (q as f64 * dt);
    let sign = m.difference_order().map(|d| d.signum() as f64).unwrap_or(1.0);
    let b = sys.dipolar_coupling();
    let deltas = map_crystallites(powder, |cr| {
        let exact = ExactEngine::new(sys, cr, m, &RfErrorSpec::none())?.efficiency(seq, q)?;
        let k = dcp_kappa(b, cr.euler.beta);
        let params = EffectiveParams::new(kappa0, cr.euler.gamma, Subspace::Minus).with_sign(sign);
        let eff = rotvec_efficiency(&params, seq, k / kappa0)?;
        Ok(exact - eff)
    })?;
    let abs: Vec<f64> = deltas.iter().map(|d| d.abs()).collect();
    let max_abs = abs.iter().cloned().fold(0.0, f64::max);
    let mean_abs = weighted_sum(abs.iter().map(|&a| (1.0 / abs.len() as f64, a)));
    Ok(ResidualReport { deltas, max_abs, mean_abs })
}
