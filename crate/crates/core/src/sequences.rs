//! Recoupling sequences as ordered lists of dipolar-evolution blocks and hard
//! pulses, plus propagator assembly in the effective-Hamiltonian picture.
//!
//! A dipolar block of `q` quarter turns evolves under the effective
//! Hamiltonian for the time a nominal crystallite needs to rotate by q·π/2.
//! Pulses are ideal rotations between blocks.
//!
//! Rotations about X⁻ come from phase-alternated pulses: since
//! I_x = X⁺ + X⁻ and S_x = X⁺ − X⁻, a flip a on I at phase 0 rotates by +a
//! about X⁻ while the same flip on S rotates by −a.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};
use std::fmt::Write as _;
use std::path::Path;

use crate::effective::EffectiveParams;
use crate::error::{Error, Result};
use crate::spinops::{
    basis, expm_unitary, rf_rotation, subspace_project, Operator4, RotVec3, Subspace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    I,
    S,
    Both,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::I => "I",
            Channel::S => "S",
            Channel::Both => "both",
        }
    }

    fn parse(s: &str) -> Option<Channel> {
        match s {
            "I" | "i" => Some(Channel::I),
            "S" | "s" => Some(Channel::S),
            "both" | "IS" => Some(Channel::Both),
            _ => None,
        }
    }

    pub fn hits_i(self) -> bool {
        matches!(self, Channel::I | Channel::Both)
    }

    pub fn hits_s(self) -> bool {
        matches!(self, Channel::S | Channel::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Segment {
    Dipolar { quarter_turns: u32 },
    /// Ideal hard pulse, angles in radians.
    Pulse { channel: Channel, flip: f64, phase: f64 },
}

/// How a rotation about X⁻ is split over the two channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PulseRealization {
    /// θ/2 on I and θ/2 with opposite phase on S.
    #[default]
    Split,
    IOnly,
    SOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDescriptor {
    pub name: String,
    pub subspace: Subspace,
    pub segments: Vec<Segment>,
    /// rf amplitudes in units of the spin rate the sequence is designed for;
    /// `None` leaves matching to the caller.
    pub rf_match: Option<(f64, f64)>,
}

fn roman(n: usize) -> String {
    const TABLE: [(usize, &str); 9] = [
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut n = n;
    let mut s = String::new();
    for &(v, r) in &TABLE {
        while n >= v {
            s.push_str(r);
            n -= v;
        }
    }
    s
}

/// Wraps a phase into (−π, π].
fn wrap_phase(phase: f64) -> f64 {
    let mut p = phase.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

impl SequenceDescriptor {
    pub fn new(name: &str, subspace: Subspace) -> Self {
        SequenceDescriptor {
            name: name.to_string(),
            subspace,
            segments: Vec::new(),
            rf_match: None,
        }
    }

    pub fn block(mut self, quarter_turns: u32) -> Self {
        self.segments.push(Segment::Dipolar { quarter_turns });
        self
    }

    pub fn pulse(mut self, channel: Channel, flip: f64, phase: f64) -> Self {
        self.segments.push(Segment::Pulse { channel, flip, phase });
        self
    }

    /// Appends pulses realizing exp(−i θ X^σ).
    pub fn x_rotation(mut self, theta: f64, how: PulseRealization) -> Self {
        if theta == 0.0 {
            return self;
        }
        let phase = |positive: bool| if positive { 0.0 } else { PI };
        let a = theta.abs();
        let pos = theta > 0.0;
        match self.subspace {
            Subspace::Plus => {
                // a flip θ/2 on both spins rotates by θ about X⁺ = (I_x + S_x)/2
                self.segments.push(Segment::Pulse {
                    channel: Channel::Both,
                    flip: a / 2.0,
                    phase: phase(pos),
                });
            }
            Subspace::Minus => match how {
                PulseRealization::Split => {
                    self.segments.push(Segment::Pulse {
                        channel: Channel::I,
                        flip: a / 2.0,
                        phase: phase(pos),
                    });
                    self.segments.push(Segment::Pulse {
                        channel: Channel::S,
                        flip: a / 2.0,
                        phase: phase(!pos),
                    });
                }
                PulseRealization::IOnly => self.segments.push(Segment::Pulse {
                    channel: Channel::I,
                    flip: a,
                    phase: phase(pos),
                }),
                PulseRealization::SOnly => self.segments.push(Segment::Pulse {
                    channel: Channel::S,
                    flip: a,
                    phase: phase(!pos),
                }),
            },
        }
        self
    }

    pub fn dcp() -> Self {
        Self::new("dcp", Subspace::Minus).block(2)
    }

    pub fn comb3dcp() -> Self {
        Self::comb3dcp_with(PulseRealization::Split)
    }

    pub fn comb3dcp_with(how: PulseRealization) -> Self {
        Self::comb3(Self::new("comb3dcp", Subspace::Minus), how)
    }

    fn comb3(s: Self, how: PulseRealization) -> Self {
        s.block(1)
            .x_rotation(-FRAC_PI_2, how)
            .block(2)
            .x_rotation(FRAC_PI_2, how)
            .block(1)
    }

    pub fn comb6dcp() -> Self {
        Self::comb6dcp_with(PulseRealization::Split, false)
    }

    /// `flip_final` reverses the last pulse pair so that it matches the
    /// second one.
    pub fn comb6dcp_with(how: PulseRealization, flip_final: bool) -> Self {
        let last = if flip_final { -FRAC_PI_2 } else { FRAC_PI_2 };
        let name = if flip_final { "comb6dcp-flipped" } else { "comb6dcp" };
        Self::comb6(Self::new(name, Subspace::Minus), how, last)
    }

    fn comb6(s: Self, how: PulseRealization, last: f64) -> Self {
        s.block(3)
            .x_rotation(-PI, how)
            .block(4)
            .x_rotation(-FRAC_PI_2, how)
            .block(1)
            .x_rotation(-PI, how)
            .block(3)
            .x_rotation(-PI, how)
            .block(4)
            .x_rotation(last, how)
            .block(1)
    }

    pub fn horror() -> Self {
        let mut s = Self::new("horror", Subspace::Plus).block(2);
        s.rf_match = Some((0.5, 0.5));
        s
    }

    pub fn comb3horror() -> Self {
        let mut s = Self::comb3(Self::new("comb3horror", Subspace::Plus), PulseRealization::Split);
        s.rf_match = Some((0.5, 0.5));
        s
    }

    pub fn comb6horror() -> Self {
        let mut s = Self::comb6(
            Self::new("comb6horror", Subspace::Plus),
            PulseRealization::Split,
            FRAC_PI_2,
        );
        s.rf_match = Some((0.5, 0.5));
        s
    }

    /// Double-quantum analogue of (π/2)_x (π)_{y+π/6}: a π/2 block followed
    /// by a π block whose phase is advanced by π/2 + π/6 through a pair of
    /// X⁺ rotations.
    pub fn composite_2q_excitation() -> Self {
        let theta = FRAC_PI_2 + PI / 6.0;
        let mut s = Self::new("composite2q", Subspace::Plus)
            .block(1)
            .x_rotation(-theta, PulseRealization::Split)
            .block(2)
            .x_rotation(theta, PulseRealization::Split);
        s.rf_match = Some((0.5, 0.5));
        debug_assert!((theta - 2.0 * FRAC_PI_3).abs() < 1e-15);
        s
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "dcp" => Self::dcp(),
            "comb3dcp" | "comb3" => Self::comb3dcp(),
            "comb6dcp" | "comb6" => Self::comb6dcp(),
            "comb6dcp-flipped" => Self::comb6dcp_with(PulseRealization::Split, true),
            "comb3dcp-i" => Self::comb3dcp_with(PulseRealization::IOnly),
            "comb3dcp-s" => Self::comb3dcp_with(PulseRealization::SOnly),
            "horror" => Self::horror(),
            "comb3horror" => Self::comb3horror(),
            "comb6horror" => Self::comb6horror(),
            "composite2q" => Self::composite_2q_excitation(),
            _ => {
                return Err(Error::Unknown {
                    what: "sequence",
                    name: name.to_string(),
                })
            }
        })
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "dcp", "comb3dcp", "comb6dcp", "comb6dcp-flipped", "comb3dcp-i", "comb3dcp-s", "horror",
            "comb3horror", "comb6horror", "composite2q",
        ]
    }

    /// A built-in name or a path to a sequence text file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match Self::by_name(spec) {
            Ok(s) => Ok(s),
            Err(e) => {
                let p = Path::new(spec);
                if p.exists() {
                    Self::from_file(p)
                } else {
                    Err(e)
                }
            }
        }
    }

    pub fn total_quarter_turns(&self) -> u32 {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Dipolar { quarter_turns } => *quarter_turns,
                Segment::Pulse { .. } => 0,
            })
            .sum()
    }

    pub fn block_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Dipolar { .. }))
            .count()
    }

    /// Reversed segments with negated rotations; the blocks themselves are
    /// undone by the X^σ(π) conjugation that flips the sign of the
    /// dipolar Hamiltonian.
    pub fn inverse(&self) -> Self {
        let mut s = Self::new(&format!("{}-inverse", self.name), self.subspace);
        s.rf_match = self.rf_match;
        s = s.x_rotation(PI, PulseRealization::Split);
        for seg in self.segments.iter().rev() {
            s.segments.push(match *seg {
                Segment::Pulse { channel, flip, phase } => Segment::Pulse {
                    channel,
                    flip,
                    phase: wrap_phase(phase + PI),
                },
                d => d,
            });
        }
        s.x_rotation(-PI, PulseRealization::Split)
    }

    /// Concatenation, keeping this descriptor's name and subspace.
    pub fn then(&self, other: &SequenceDescriptor) -> Self {
        let mut s = self.clone();
        s.segments.extend_from_slice(&other.segments);
        s
    }

    /// Segments grouped into labeled phases: each dipolar block is one
    /// phase, and each run of consecutive pulses is another.
    pub fn phases(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out: Vec<(String, std::ops::Range<usize>)> = Vec::new();
        let mut k = 0;
        while k < self.segments.len() {
            let start = k;
            if matches!(self.segments[k], Segment::Dipolar { .. }) {
                k += 1;
            } else {
                while k < self.segments.len() && matches!(self.segments[k], Segment::Pulse { .. }) {
                    k += 1;
                }
            }
            out.push((roman(out.len() + 1), start..k));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "subspace {}", self.subspace.name());
        if let Some((p, q)) = self.rf_match {
            let _ = writeln!(s, "match {p} {q}");
        }
        for seg in &self.segments {
            match seg {
                Segment::Dipolar { quarter_turns } => {
                    let _ = writeln!(s, "D {quarter_turns}");
                }
                Segment::Pulse { channel, flip, phase } => {
                    let _ = writeln!(
                        s,
                        "P {} {} {}",
                        channel.name(),
                        fmt_deg(flip.to_degrees()),
                        fmt_deg(phase.to_degrees())
                    );
                }
            }
        }
        s
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut seq = Self::new("custom", Subspace::Minus);
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::parse(source, line_no, format!("{m}: '{line}'"));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("not a number"));
            match tok[0] {
                "name" if tok.len() == 2 => seq.name = tok[1].to_string(),
                "subspace" if tok.len() == 2 => {
                    seq.subspace = match tok[1] {
                        "minus" | "-" => Subspace::Minus,
                        "plus" | "+" => Subspace::Plus,
                        _ => return Err(bad("subspace must be 'minus' or 'plus'")),
                    }
                }
                "match" if tok.len() == 3 => seq.rf_match = Some((num(tok[1])?, num(tok[2])?)),
                "D" if tok.len() == 2 => {
                    let q = tok[1]
                        .parse::<u32>()
                        .ok()
                        .filter(|&q| q > 0)
                        .ok_or_else(|| bad("quarter turns must be a positive integer"))?;
                    seq.segments.push(Segment::Dipolar { quarter_turns: q });
                }
                "P" if tok.len() == 4 => {
                    let channel = Channel::parse(tok[1]).ok_or_else(|| bad("channel must be I, S or both"))?;
                    seq.segments.push(Segment::Pulse {
                        channel,
                        flip: num(tok[2])?.to_radians(),
                        phase: num(tok[3])?.to_radians(),
                    });
                }
                _ => return Err(bad("unrecognized line")),
            }
        }
        if seq.segments.is_empty() {
            return Err(Error::parse(source, 0, "sequence has no segments"));
        }
        Ok(seq)
    }
}

fn fmt_deg(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

/// rf amplitude errors and resonance offsets.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RfErrorSpec {
    /// Fractional amplitude deviation on I.
    pub delta_i: f64,
    pub delta_s: f64,
    pub offset_i_hz: f64,
    pub offset_s_hz: f64,
}

impl RfErrorSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn scales(delta_i: f64, delta_s: f64) -> Self {
        RfErrorSpec {
            delta_i,
            delta_s,
            ..Self::default()
        }
    }

    pub fn offsets(offset_i_hz: f64, offset_s_hz: f64) -> Self {
        RfErrorSpec {
            offset_i_hz,
            offset_s_hz,
            ..Self::default()
        }
    }

    pub fn has_offsets(&self) -> bool {
        self.offset_i_hz != 0.0 || self.offset_s_hz != 0.0
    }

    /// (Δω⁻, Δω⁺) in rad/s for recoupling amplitudes p·ω_r and q·ω_r.
    ///
    /// The residual field Δω_I I_x + Δω_S S_x equals
    /// (Δω_I − Δω_S) X⁻ + (Δω_I + Δω_S) X⁺.
    pub fn effective_terms(&self, p: f64, q: f64, spin_rate: f64) -> (f64, f64) {
        let di = self.delta_i * p * spin_rate;
        let ds = self.delta_s * q * spin_rate;
        (di - ds, di + ds)
    }
}

/// Propagator of one segment in the effective picture.
fn segment_propagator(seg: &Segment, params: &EffectiveParams, kappa_scale: f64) -> Result<Operator4> {
    match *seg {
        Segment::Dipolar { quarter_turns } => {
            let t = params.block_duration(quarter_turns)?;
            expm_unitary(&params.block_hamiltonian(kappa_scale), t)
        }
        Segment::Pulse { channel, flip, phase } => {
            let fi = if channel.hits_i() { flip * params.pulse_scale_i } else { 0.0 };
            let fs = if channel.hits_s() { flip * params.pulse_scale_s } else { 0.0 };
            Ok(rf_rotation(fi, phase, fs, phase))
        }
    }
}

fn check_subspace(seq: &SequenceDescriptor, params: &EffectiveParams) -> Result<()> {
    if seq.subspace != params.subspace {
        return Err(Error::SubspaceMismatch {
            sequence: seq.subspace,
            hamiltonian: params.subspace,
        });
    }
    Ok(())
}

/// Total propagator, later segments multiplied on the left.
pub fn sequence_propagator(
    seq: &SequenceDescriptor,
    params: &EffectiveParams,
    kappa_scale: f64,
) -> Result<Operator4> {
    check_subspace(seq, params)?;
    let mut u = Operator4::identity();
    for seg in &seq.segments {
        u = segment_propagator(seg, params, kappa_scale)? * u;
    }
    Ok(u)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    /// Roman-numeral phase label (I, II, ...).
    pub label: String,
    /// Elapsed dipolar evolution in nominal quarter turns.
    pub progress: f64,
    /// Projection coordinates of the evolving I_x onto (X^σ, Y^σ, Z^σ).
    pub coords: RotVec3,
}

/// Samples the state through the sequence: `samples_per_quarter` points per
/// quarter turn of dipolar evolution, and per π/2 of pulse flip.
pub fn trajectory_export(
    seq: &SequenceDescriptor,
    params: &EffectiveParams,
    kappa_scale: f64,
    samples_per_quarter: usize,
) -> Result<Vec<TrajectoryPoint>> {
    check_subspace(seq, params)?;
    if samples_per_quarter == 0 {
        return Err(Error::InvalidArgument("samples_per_quarter must be at least 1".into()));
    }
    let ix = basis().ix;
    let project = |u: &Operator4| subspace_project(&u.conjugate(&ix), seq.subspace).coords;
    let mut u = Operator4::identity();
    let mut progress = 0.0;
    let mut out = vec![TrajectoryPoint {
        label: "I".into(),
        progress,
        coords: project(&u),
    }];
    for (label, range) in seq.phases() {
        for seg in &seq.segments[range] {
            match *seg {
                Segment::Dipolar { quarter_turns } => {
                    let n = samples_per_quarter * quarter_turns as usize;
                    let step = expm_unitary(
                        &params.block_hamiltonian(kappa_scale),
                        params.block_duration(quarter_turns)? / n as f64,
                    )?;
                    for _ in 0..n {
                        u = step * u;
                        progress += quarter_turns as f64 / n as f64;
                        out.push(TrajectoryPoint {
                            label: label.clone(),
                            progress,
                            coords: project(&u),
                        });
                    }
                }
                Segment::Pulse { channel, flip, phase } => {
                    let n = ((flip.abs() / FRAC_PI_2).ceil() as usize * samples_per_quarter).max(1);
                    let part = Segment::Pulse {
                        channel,
                        flip: flip / n as f64,
                        phase,
                    };
                    let step = segment_propagator(&part, params, kappa_scale)?;
                    for _ in 0..n {
                        u = step * u;
                        out.push(TrajectoryPoint {
                            label: label.clone(),
                            progress,
                            coords: project(&u),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}
