//! Experiment orchestration: configuration, sweeps and CSV tables.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::effective::{dcp_kappa, horror_kappa, rotvec_efficiency, EffectiveParams};
use crate::ensemble::{load_crystallite_file, EnsembleSpec, PowderScheme, RfDistribution, RfNode};
use crate::error::{Error, Result};
use crate::exact::{powder_curve, round_to_slices, MatchSpec, PulseMode};
use crate::interactions::{CrystalliteOrientation, SpinSystem};
use crate::kv::KeyValues;
use crate::sequences::{trajectory_export, RfErrorSpec, SequenceDescriptor};
use crate::spinops::Subspace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Effective,
    Exact,
}

impl Engine {
    pub fn parse(s: &str) -> Result<Engine> {
        match s {
            "effective" => Ok(Engine::Effective),
            "exact" => Ok(Engine::Exact),
            _ => Err(Error::Unknown {
                what: "engine",
                name: s.to_string(),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Engine::Effective => "effective",
            Engine::Exact => "exact",
        }
    }
}

/// `min:max:steps`, inclusive, evenly spaced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sweep {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Sweep {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Sweep { min, max, steps }
    }

    pub fn parse(s: &str) -> Result<Sweep> {
        let bad = || Error::InvalidArgument(format!("sweep '{s}' must be min:max:steps"));
        let p: Vec<&str> = s.split(':').map(str::trim).collect();
        if p.len() != 3 {
            return Err(bad());
        }
        let sw = Sweep {
            min: p[0].parse().map_err(|_| bad())?,
            max: p[1].parse().map_err(|_| bad())?,
            steps: p[2].parse().map_err(|_| bad())?,
        };
        sw.validate()?;
        Ok(sw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sweep range is empty (0 steps)".into()));
        }
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidArgument("sweep bounds must be finite".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min];
        }
        (0..self.steps)
            .map(|k| self.min + (self.max - self.min) * k as f64 / (self.steps - 1) as f64)
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}:{}:{}", self.min, self.max, self.steps)
    }
}

#[derive(Clone, Debug)]
pub enum PowderSource {
    Scheme(PowderScheme),
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub system: SpinSystem,
    pub system_source: String,
    pub sequences: Vec<SequenceDescriptor>,
    pub engine: Engine,
    /// `None` picks the engine default.
    pub powder: Option<PowderSource>,
    pub rf_dists: Vec<RfDistribution>,
    pub match_spec: MatchSpec,
    pub time_points: usize,
    pub time_max_ms: Option<f64>,
    pub rf_scale: Sweep,
    pub dipole_scale: Sweep,
    pub rf_delta_percent: Sweep,
    pub offset_hz: Sweep,
    pub rf_s_khz: Sweep,
    pub mixing_ms: Option<Vec<f64>>,
    pub gamma_deg: Vec<f64>,
    pub samples_per_quarter: usize,
    pub kappa_scale: f64,
    pub out: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "system", "sequences", "engine", "powder", "crystallite_file", "rf_dist", "p", "q", "rf_i_khz", "rf_s_khz_match",
    "slices_per_rotor", "hard_pulse_khz", "pulse_mode", "time_points", "time_max_ms", "rf_scale", "dipole_scale",
    "rf_delta_percent", "offset_hz", "rf_s_khz", "mixing_ms", "gamma_deg", "samples_per_quarter", "kappa_scale", "out",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SpinSystem::glycine(),
            system_source: "glycine".into(),
            sequences: vec![
                SequenceDescriptor::dcp(),
                SequenceDescriptor::comb3dcp(),
                SequenceDescriptor::comb6dcp(),
            ],
            engine: Engine::Exact,
            powder: None,
            rf_dists: vec![RfDistribution::delta()],
            match_spec: MatchSpec::glycine(),
            time_points: 64,
            time_max_ms: None,
            rf_scale: Sweep::new(0.8, 1.2, 21),
            dipole_scale: Sweep::new(0.0, 2.0, 41),
            rf_delta_percent: Sweep::new(-10.0, 10.0, 11),
            offset_hz: Sweep::new(-3000.0, 3000.0, 11),
            rf_s_khz: Sweep::new(32.0, 38.0, 61),
            mixing_ms: None,
            gamma_deg: (0..10).map(|k| 18.0 * k as f64).collect(),
            samples_per_quarter: 16,
            kappa_scale: 1.0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let kv = KeyValues::parse(&path.display().to_string(), &text)?;
        Self::from_kv(&kv, path.parent())
    }

    /// Builds a config from key/value pairs; relative paths resolve against `base`.
    pub fn from_kv(kv: &KeyValues, base: Option<&Path>) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(kv.error(k, "unknown configuration key"));
        }
        let resolve = |s: &str| -> PathBuf {
            let p = PathBuf::from(s);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let wrap = |key: &str, e: Error| -> Error {
            match e {
                Error::Parse { .. } => e,
                other => kv.error(key, other.to_string()),
            }
        };
        let mut cfg = ExperimentConfig::default();
        if let Some(s) = kv.get("system") {
            if s != "glycine" {
                let p = resolve(s);
                cfg.system = SpinSystem::from_file(&p).map_err(|e| wrap("system", e))?;
                cfg.system_source = p.display().to_string();
            }
        }
        if let Some(s) = kv.get("sequences") {
            cfg.sequences = s
                .split(',')
                .map(|n| {
                    let n = n.trim();
                    SequenceDescriptor::by_name(n).or_else(|e| {
                        let p = resolve(n);
                        if p.exists() {
                            SequenceDescriptor::from_file(&p)
                        } else {
                            Err(e)
                        }
                    })
                })
                .collect::<Result<_>>()
                .map_err(|e| wrap("sequences", e))?;
            if cfg.sequences.is_empty() {
                return Err(kv.error("sequences", "no sequences given"));
            }
        }
        if let Some(s) = kv.get("engine") {
            cfg.engine = Engine::parse(s).map_err(|e| wrap("engine", e))?;
        }
        if let Some(s) = kv.get("powder") {
            cfg.powder = Some(PowderSource::Scheme(PowderScheme::parse(s).map_err(|e| wrap("powder", e))?));
        }
        if let Some(s) = kv.get("crystallite_file") {
            let p = resolve(s);
            if !p.exists() {
                return Err(kv.error("crystallite_file", format!("file '{}' does not exist", p.display())));
            }
            cfg.powder = Some(PowderSource::File(p));
        }
        if let Some(s) = kv.get("rf_dist") {
            cfg.rf_dists = s
                .split(',')
                .map(|d| RfDistribution::parse(d.trim()))
                .collect::<Result<_>>()
                .map_err(|e| wrap("rf_dist", e))?;
        }
        let spin = cfg.system.spin_rate_hz;
        let m = &mut cfg.match_spec;
        m.p = kv.f64_or("p", m.p)?;
        m.q = kv.f64_or("q", m.q)?;
        if kv.get("rf_i_khz").is_some() {
            m.p = kv.f64("rf_i_khz")? * 1e3 / spin;
        }
        if kv.get("rf_s_khz_match").is_some() {
            m.q = kv.f64("rf_s_khz_match")? * 1e3 / spin;
        }
        m.slices_per_rotor = kv.usize_or("slices_per_rotor", m.slices_per_rotor)?;
        if m.slices_per_rotor == 0 {
            return Err(kv.error("slices_per_rotor", "must be positive"));
        }
        m.hard_pulse_hz = kv.f64_or("hard_pulse_khz", m.hard_pulse_hz / 1e3)? * 1e3;
        if let Some(s) = kv.get("pulse_mode") {
            m.pulse_mode = match s {
                "finite" => PulseMode::Finite,
                "instantaneous" | "ideal" => PulseMode::Instantaneous,
                _ => return Err(kv.error("pulse_mode", "must be 'finite' or 'instantaneous'")),
            };
        }
        cfg.time_points = kv.usize_or("time_points", cfg.time_points)?;
        if cfg.time_points == 0 {
            return Err(kv.error("time_points", "sweep range is empty (0 steps)"));
        }
        if kv.get("time_max_ms").is_some() {
            cfg.time_max_ms = Some(kv.f64("time_max_ms")?);
        }
        for (key, slot) in [
            ("rf_scale", &mut cfg.rf_scale),
            ("dipole_scale", &mut cfg.dipole_scale),
            ("rf_delta_percent", &mut cfg.rf_delta_percent),
            ("offset_hz", &mut cfg.offset_hz),
            ("rf_s_khz", &mut cfg.rf_s_khz),
        ] {
            if let Some(s) = kv.get(key) {
                *slot = Sweep::parse(s).map_err(|e| wrap(key, e))?;
            }
        }
        if kv.get("mixing_ms").is_some() {
            cfg.mixing_ms = Some(kv.list_f64("mixing_ms")?);
        }
        if kv.get("gamma_deg").is_some() {
            cfg.gamma_deg = kv.list_f64("gamma_deg")?;
        }
        cfg.samples_per_quarter = kv.usize_or("samples_per_quarter", cfg.samples_per_quarter)?;
        cfg.kappa_scale = kv.f64_or("kappa_scale", cfg.kappa_scale)?;
        if let Some(s) = kv.get("out") {
            cfg.out = Some(resolve(s));
        }
        Ok(cfg)
    }

    /// Powder for the configured engine: `gl:32` for the effective model,
    /// `zcw3:4180` for full propagation, unless overridden.
    pub fn ensemble(&self, rf: &RfDistribution) -> Result<EnsembleSpec> {
        match &self.powder {
            Some(PowderSource::File(p)) => EnsembleSpec::new(load_crystallite_file(p)?, rf.nodes()?),
            Some(PowderSource::Scheme(s)) => EnsembleSpec::from_scheme(*s, rf),
            None => EnsembleSpec::from_scheme(self.default_scheme(), rf),
        }
    }

    pub fn default_scheme(&self) -> PowderScheme {
        match self.engine {
            Engine::Effective => PowderScheme::BetaGaussLegendre(32),
            Engine::Exact => PowderScheme::Zcw3(4180),
        }
    }

    pub fn powder_label(&self) -> String {
        match &self.powder {
            Some(PowderSource::File(p)) => format!("file:{}", p.display()),
            Some(PowderSource::Scheme(s)) => s.label(),
            None => self.default_scheme().label(),
        }
    }

    /// Resolved settings, one `key = value` per entry.
    pub fn echo(&self) -> Vec<(String, String)> {
        let m = &self.match_spec;
        let mut v: Vec<(String, String)> = vec![
            ("system".into(), self.system_source.clone()),
            ("sequences".into(), self.sequences.iter().map(|s| s.name.clone()).collect::<Vec<_>>().join(",")),
            ("engine".into(), self.engine.name().into()),
            ("powder".into(), self.powder_label()),
            ("rf_dist".into(), self.rf_dists.iter().map(|d| d.label()).collect::<Vec<_>>().join(",")),
            ("p".into(), m.p.to_string()),
            ("q".into(), m.q.to_string()),
            ("slices_per_rotor".into(), m.slices_per_rotor.to_string()),
            ("hard_pulse_khz".into(), (m.hard_pulse_hz / 1e3).to_string()),
            (
                "pulse_mode".into(),
                match m.pulse_mode {
                    PulseMode::Finite => "finite".into(),
                    PulseMode::Instantaneous => "instantaneous".into(),
                },
            ),
            ("time_points".into(), self.time_points.to_string()),
        ];
        if let Some(t) = self.time_max_ms {
            v.push(("time_max_ms".into(), t.to_string()));
        }
        for (k, s) in [
            ("rf_scale", &self.rf_scale),
            ("dipole_scale", &self.dipole_scale),
            ("rf_delta_percent", &self.rf_delta_percent),
            ("offset_hz", &self.offset_hz),
            ("rf_s_khz", &self.rf_s_khz),
        ] {
            v.push((k.into(), s.label()));
        }
        if let Some(ms) = &self.mixing_ms {
            v.push(("mixing_ms".into(), join(ms)));
        }
        v.push(("gamma_deg".into(), join(&self.gamma_deg)));
        v.push(("samples_per_quarter".into(), self.samples_per_quarter.to_string()));
        v.push(("kappa_scale".into(), self.kappa_scale.to_string()));
        v
    }

    /// κ of the most favourable crystallite, sin 2β = 1.
    pub fn kappa_ref(&self, subspace: Subspace) -> f64 {
        let b = self.system.dipolar_coupling().abs();
        match subspace {
            Subspace::Minus => b / (2.0 * SQRT_2),
            Subspace::Plus => 3.0 * b / (4.0 * SQRT_2),
        }
    }

    /// Total nominal dipolar evolution time of a sequence at κ_ref.
    pub fn nominal_time(&self, seq: &SequenceDescriptor) -> f64 {
        seq.total_quarter_turns() as f64 * FRAC_PI_2 / self.kappa_ref(seq.subspace)
    }

    fn rf_match_for(&self, seq: &SequenceDescriptor) -> (f64, f64) {
        match (self.engine, seq.rf_match) {
            (Engine::Effective, Some(pq)) => pq,
            _ => (self.match_spec.p, self.match_spec.q),
        }
    }

    fn check_engine(&self, seq: &SequenceDescriptor) -> Result<()> {
        if self.engine == Engine::Exact && seq.subspace == Subspace::Plus {
            return Err(Error::SubspaceMismatch {
                sequence: Subspace::Plus,
                hamiltonian: Subspace::Minus,
            });
        }
        Ok(())
    }

    fn mixing_time_ms(&self, index: usize, seq: &SequenceDescriptor) -> Result<f64> {
        if let Some(ms) = &self.mixing_ms {
            return ms
                .get(index)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("no mixing time for sequence {}", seq.name)));
        }
        if let Some(ms) = stated_mixing_ms(&seq.name) {
            return Ok(ms);
        }
        // peak of the effective-model powder curve
        let mut c = self.clone();
        c.engine = Engine::Effective;
        c.powder = None;
        let curve = efficiency_curve(&c, seq, &RfDistribution::delta())?;
        Ok(curve.peak_time_ms)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Mixing times used with the glycine matching profiles.
pub fn stated_mixing_ms(name: &str) -> Option<f64> {
    match name {
        "dcp" => Some(1.8),
        "comb3dcp" => Some(4.0),
        "comb6dcp" => Some(12.8),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// Formats with 9 significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = x.abs().log10().floor() as i32;
    if (-5..9).contains(&e) {
        let decimals = (8 - e).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub footer: Vec<String>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .map(|c| match c {
                    Cell::Num(x) => fmt_sig(*x),
                    Cell::Text(t) => t.clone(),
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        for f in &self.footer {
            let _ = writeln!(s, "# {f}");
        }
        s
    }

    /// Numeric column by header name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows
            .iter()
            .map(|r| match &r[i] {
                Cell::Num(x) => Some(*x),
                _ => None,
            })
            .collect()
    }
}

fn metadata(cfg: &ExperimentConfig, run: &str) -> Vec<(String, String)> {
    let mut m = vec![
        ("run".to_string(), run.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    m.extend(cfg.echo());
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct EfficiencyCurve {
    pub sequence: String,
    pub rf: String,
    pub times_ms: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub peak_time_ms: f64,
    pub peak: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Powder-averaged efficiencies at total dipolar evolution times `times` (s).
/// Returns the times actually simulated, which the exact engine rounds to
/// whole slices per quarter turn.
fn powder_efficiencies(
    cfg: &ExperimentConfig,
    seq: &SequenceDescriptor,
    spec: &EnsembleSpec,
    times: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nq = seq.total_quarter_turns() as f64;
    match cfg.engine {
        Engine::Exact => {
            let dt = cfg.system.rotor_period() / cfg.match_spec.slices_per_rotor as f64;
            let quarters: Vec<usize> = times
                .iter()
                .map(|&t| if t <= 0.0 { 0 } else { round_to_slices(t / nq, dt) })
                .collect();
            let eff = powder_curve(&cfg.system, seq, &cfg.match_spec, &RfErrorSpec::none(), spec, &quarters)?;
            Ok((quarters.iter().map(|&q| q as f64 * dt * nq).collect(), eff))
        }
        Engine::Effective => {
            let b = cfg.system.dipolar_coupling();
            let (p, q) = cfg.rf_match_for(seq);
            let sign = (p - q).signum();
            let w_r = cfg.system.spin_rate();
            let eff = crate::ensemble::try_average_vec(
                |cr, node| {
                    let kappa = crystallite_kappa(seq.subspace, b, cr);
                    times
                        .iter()
                        .map(|&t| {
                            if t <= 0.0 {
                                return Ok(0.0);
                            }
                            let k0 = nq * FRAC_PI_2 / t;
                            let params = effective_params(seq.subspace, k0, cr.euler.gamma, sign, node, p, q, w_r);
                            rotvec_efficiency(&params, seq, kappa / k0)
                        })
                        .collect()
                },
                spec,
            )?;
            Ok((times.to_vec(), eff))
        }
    }
}

fn crystallite_kappa(sub: Subspace, b: f64, cr: &CrystalliteOrientation) -> f64 {
    match sub {
        Subspace::Minus => dcp_kappa(b, cr.euler.beta),
        Subspace::Plus => horror_kappa(b, cr.euler.beta),
    }
}

#[allow(clippy::too_many_arguments)]
fn effective_params(
    sub: Subspace,
    k0: f64,
    gamma: f64,
    sign: f64,
    node: &RfNode,
    p: f64,
    q: f64,
    w_r: f64,
) -> EffectiveParams {
    let rf = RfErrorSpec::scales(node.scale_i - 1.0, node.scale_s - 1.0);
    let sign = if sub == Subspace::Plus || sign == 0.0 { 1.0 } else { sign };
    EffectiveParams::new(k0, gamma, sub).with_sign(sign).with_rf_error(&rf, p, q, w_r)
}

/// Efficiency against mixing time for one sequence and rf distribution,
/// refined around the best grid point.
pub fn efficiency_curve(cfg: &ExperimentConfig, seq: &SequenceDescriptor, rf: &RfDistribution) -> Result<EfficiencyCurve> {
    cfg.check_engine(seq)?;
    let spec = cfg.ensemble(rf)?;
    let t_max = cfg
        .time_max_ms
        .map(|ms| ms * 1e-3)
        .unwrap_or_else(|| 2.0 * cfg.nominal_time(seq));
    let n = cfg.time_points;
    let grid: Vec<f64> = (0..n)
        .map(|k| if n == 1 { t_max } else { t_max * k as f64 / (n - 1) as f64 })
        .collect();
    let (times, eff) = powder_efficiencies(cfg, seq, &spec, &grid)?;
    let i = argmax(&eff);
    let (mut peak_t, mut peak) = (times[i], eff[i]);
    if n > 2 {
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(n - 1)];
        let fine: Vec<f64> = (0..=16).map(|k| lo + (hi - lo) * k as f64 / 16.0).collect();
        let (ft, fe) = powder_efficiencies(cfg, seq, &spec, &fine)?;
        let j = argmax(&fe);
        if fe[j] > peak {
            peak_t = ft[j];
            peak = fe[j];
        }
    }
    Ok(EfficiencyCurve {
        sequence: seq.name.clone(),
        rf: rf.label(),
        times_ms: times.iter().map(|t| t * 1e3).collect(),
        efficiency: eff,
        peak_time_ms: peak_t * 1e3,
        peak,
    })
}

#[derive(Clone, Debug)]
pub struct EfficiencyReport {
    pub curves: Vec<EfficiencyCurve>,
    pub table: Table,
}

impl EfficiencyReport {
    pub fn peak(&self, sequence: &str, rf: &str) -> Option<f64> {
        self.curves
            .iter()
            .find(|c| c.sequence == sequence && c.rf == rf)
            .map(|c| c.peak)
    }

    /// Peak ratio of `sequence` to `reference` under the same rf distribution.
    pub fn gain(&self, sequence: &str, reference: &str, rf: &str) -> Option<f64> {
        Some(self.peak(sequence, rf)? / self.peak(reference, rf)?)
    }
}

pub fn run_efficiency_vs_time(cfg: &ExperimentConfig) -> Result<EfficiencyReport> {
    let mut table = Table::new(&["sequence", "rf_dist", "time_ms", "efficiency"]);
    table.metadata = metadata(cfg, "efficiency");
    let mut curves = Vec::new();
    for rf in &cfg.rf_dists {
        for seq in &cfg.sequences {
            let c = efficiency_curve(cfg, seq, rf)?;
            for (t, e) in c.times_ms.iter().zip(&c.efficiency) {
                table.push(vec![c.sequence.as_str().into(), c.rf.as_str().into(), (*t).into(), (*e).into()]);
            }
            table.footer.push(format!(
                "peak {} {} efficiency = {} at {} ms",
                c.sequence,
                c.rf,
                fmt_sig(c.peak),
                fmt_sig(c.peak_time_ms)
            ));
            curves.push(c);
        }
    }
    if let Some(reference) = cfg.sequences.first() {
        for rf in &cfg.rf_dists {
            let rl = rf.label();
            for seq in cfg.sequences.iter().skip(1) {
                let rep = EfficiencyReport {
                    curves: curves.clone(),
                    table: Table::default(),
                };
                if let Some(g) = rep.gain(&seq.name, &reference.name, &rl) {
                    table.footer.push(format!("gain {}/{} {} = {}", seq.name, reference.name, rl, fmt_sig(g)));
                }
            }
        }
    }
    Ok(EfficiencyReport { curves, table })
}

/// Efficiency grid over correlated rf scale and dipolar scale, one table per
/// sequence. The effective engine follows one nominal crystallite; the exact
/// engine averages the configured powder at each sequence's mixing time.
pub fn run_map_rf_vs_dipole(cfg: &ExperimentConfig) -> Result<Vec<(String, Table)>> {
    cfg.rf_scale.validate()?;
    cfg.dipole_scale.validate()?;
    let rfs = cfg.rf_scale.points();
    let dips = cfg.dipole_scale.points();
    let cells: Vec<(f64, f64)> = rfs.iter().flat_map(|&r| dips.iter().map(move |&d| (r, d))).collect();
    let mut out = Vec::new();
    for (idx, seq) in cfg.sequences.iter().enumerate() {
        cfg.check_engine(seq)?;
        let (p, q) = cfg.rf_match_for(seq);
        let w_r = cfg.system.spin_rate();
        let values: Vec<f64> = match cfg.engine {
            Engine::Effective => {
                let k0 = cfg.kappa_ref(seq.subspace);
                let sign = (p - q).signum();
                cells
                    .par_iter()
                    .map(|&(r, d)| {
                        let node = RfNode {
                            scale_i: r,
                            scale_s: r,
                            weight: 1.0,
                        };
                        let params = effective_params(seq.subspace, k0, 0.0, sign, &node, p, q, w_r);
                        rotvec_efficiency(&params, seq, d)
                    })
                    .collect::<Result<_>>()?
            }
            Engine::Exact => {
                let t = cfg.mixing_time_ms(idx, seq)? * 1e-3;
                let spec = cfg.ensemble(&RfDistribution::delta())?;
                let dt = cfg.system.rotor_period() / cfg.match_spec.slices_per_rotor as f64;
                let quarter = round_to_slices(t / seq.total_quarter_turns() as f64, dt);
                cells
                    .par_iter()
                    .map(|&(r, d)| {
                        let sys = cfg.system.with_dipolar_scale(d);
                        let rf = RfErrorSpec::scales(r - 1.0, r - 1.0);
                        Ok(powder_curve(&sys, seq, &cfg.match_spec, &rf, &spec, &[quarter])?[0])
                    })
                    .collect::<Result<_>>()?
            }
        };
        let mut table = Table::new(&["rf_scale", "dipole_scale", "efficiency"]);
        table.metadata = metadata(cfg, "map");
        table.metadata.push(("sequence".into(), seq.name.clone()));
        for (&(r, d), &e) in cells.iter().zip(&values) {
            table.push(vec![r.into(), d.into(), e.into()]);
        }
        let width = robust_width(&dips, &cells, &values, 0.9);
        table
            .footer
            .push(format!("dipole_scale width at efficiency >= 0.9 (rf_scale nearest 1) = {}", fmt_sig(width)));
        out.push((seq.name.clone(), table));
    }
    Ok(out)
}

/// Length of the dipole-scale interval with efficiency ≥ `level` in the
/// row whose rf scale is closest to 1.
pub fn robust_width(dips: &[f64], cells: &[(f64, f64)], values: &[f64], level: f64) -> f64 {
    let target = cells
        .iter()
        .map(|c| c.0)
        .min_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()))
        .unwrap_or(1.0);
    let row: Vec<f64> = cells
        .iter()
        .zip(values)
        .filter(|(c, _)| c.0 == target)
        .map(|(_, &v)| v)
        .collect();
    if dips.len() < 2 {
        return 0.0;
    }
    let step = (dips[dips.len() - 1] - dips[0]) / (dips.len() - 1) as f64;
    row.iter().filter(|&&v| v >= level).count() as f64 * step
}

/// Non-correlated rf-scale and offset grids, exact engine only.
pub fn run_offset_rf_profiles(cfg: &ExperimentConfig) -> Result<Table> {
    if cfg.engine != Engine::Exact {
        return Err(Error::InvalidArgument(
            "offset profiles need the exact engine: resonance offsets are not part of the effective Hamiltonian".into(),
        ));
    }
    cfg.rf_delta_percent.validate()?;
    cfg.offset_hz.validate()?;
    let deltas = cfg.rf_delta_percent.points();
    let offsets = cfg.offset_hz.points();
    let spec = cfg.ensemble(&RfDistribution::delta())?;
    let dt = cfg.system.rotor_period() / cfg.match_spec.slices_per_rotor as f64;
    let mut table = Table::new(&["sequence", "profile", "x", "y", "efficiency"]);
    table.metadata = metadata(cfg, "profiles");
    for (idx, seq) in cfg.sequences.iter().enumerate() {
        cfg.check_engine(seq)?;
        let t = cfg.mixing_time_ms(idx, seq)? * 1e-3;
        let quarter = round_to_slices(t / seq.total_quarter_turns() as f64, dt);
        let mut jobs: Vec<(&str, f64, f64, RfErrorSpec)> = Vec::new();
        for &di in &deltas {
            for &ds in &deltas {
                jobs.push(("rf", di, ds, RfErrorSpec::scales(di / 100.0, ds / 100.0)));
            }
        }
        for &oi in &offsets {
            for &os in &offsets {
                jobs.push(("offset", oi, os, RfErrorSpec::offsets(oi, os)));
            }
        }
        let values: Vec<f64> = jobs
            .par_iter()
            .map(|(_, _, _, rf)| Ok(powder_curve(&cfg.system, seq, &cfg.match_spec, rf, &spec, &[quarter])?[0]))
            .collect::<Result<_>>()?;
        for ((kind, x, y, _), v) in jobs.iter().zip(&values) {
            table.push(vec![seq.name.as_str().into(), (*kind).into(), (*x).into(), (*y).into(), (*v).into()]);
        }
        table
            .footer
            .push(format!("mixing {} = {} ms", seq.name, fmt_sig(quarter as f64 * dt * seq.total_quarter_turns() as f64 * 1e3)));
    }
    Ok(table)
}

fn fwhm(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let i = argmax(y);
    let half = y[i] / 2.0;
    let cross = |a: usize, b: usize| -> f64 {
        let t = (half - y[a]) / (y[b] - y[a]);
        x[a] + t * (x[b] - x[a])
    };
    let mut lo = x[0];
    for k in (0..i).rev() {
        if y[k] < half {
            lo = cross(k, k + 1);
            break;
        }
    }
    let mut hi = x[x.len() - 1];
    for k in i + 1..x.len() {
        if y[k] < half {
            hi = cross(k - 1, k);
            break;
        }
    }
    hi - lo
}

#[derive(Clone, Debug)]
pub struct MatchingProfile {
    pub sequence: String,
    pub rf_s_khz: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub peak_khz: f64,
    pub fwhm_khz: f64,
}

/// Efficiency against the S-channel rf amplitude at fixed I amplitude.
pub fn run_matching_profile(cfg: &ExperimentConfig) -> Result<(Vec<MatchingProfile>, Table)> {
    if cfg.engine != Engine::Exact {
        return Err(Error::InvalidArgument(
            "matching profiles need the exact engine: the effective Hamiltonian assumes an exact match".into(),
        ));
    }
    cfg.rf_s_khz.validate()?;
    let rfs = cfg.rf_s_khz.points();
    let spec = cfg.ensemble(&RfDistribution::delta())?;
    let dt = cfg.system.rotor_period() / cfg.match_spec.slices_per_rotor as f64;
    let mut table = Table::new(&["sequence", "rf_S_kHz", "efficiency"]);
    table.metadata = metadata(cfg, "matching");
    let mut profiles = Vec::new();
    for (idx, seq) in cfg.sequences.iter().enumerate() {
        cfg.check_engine(seq)?;
        let t = cfg.mixing_time_ms(idx, seq)? * 1e-3;
        let quarter = round_to_slices(t / seq.total_quarter_turns() as f64, dt);
        let eff: Vec<f64> = rfs
            .par_iter()
            .map(|&khz| {
                let mut m = cfg.match_spec;
                m.q = khz * 1e3 / cfg.system.spin_rate_hz;
                Ok(powder_curve(&cfg.system, seq, &m, &RfErrorSpec::none(), &spec, &[quarter])?[0])
            })
            .collect::<Result<_>>()?;
        for (r, e) in rfs.iter().zip(&eff) {
            table.push(vec![seq.name.as_str().into(), (*r).into(), (*e).into()]);
        }
        let prof = MatchingProfile {
            sequence: seq.name.clone(),
            peak_khz: rfs[argmax(&eff)],
            fwhm_khz: fwhm(&rfs, &eff),
            rf_s_khz: rfs.clone(),
            efficiency: eff,
        };
        table.footer.push(format!(
            "{} mixing = {} ms, peak at {} kHz, fwhm = {} kHz",
            seq.name,
            fmt_sig(quarter as f64 * dt * seq.total_quarter_turns() as f64 * 1e3),
            fmt_sig(prof.peak_khz),
            fmt_sig(prof.fwhm_khz)
        ));
        profiles.push(prof);
    }
    Ok((profiles, table))
}

/// Subspace trajectories for each configured γ. Always uses the effective
/// Hamiltonian, whatever engine is configured.
pub fn run_trajectory(cfg: &ExperimentConfig) -> Result<Table> {
    let mut table = Table::new(&["sequence", "gamma_deg", "segment_label", "progress", "x", "y", "z"]);
    table.metadata = metadata(cfg, "trajectory");
    for (k, v) in table.metadata.iter_mut() {
        if k == "engine" {
            *v = Engine::Effective.name().into();
        }
    }
    let mut endpoints: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for seq in &cfg.sequences {
        let k0 = cfg.kappa_ref(seq.subspace);
        let (p, q) = cfg.rf_match_for(seq);
        let sign = if seq.subspace == Subspace::Minus && p != q { (p - q).signum() } else { 1.0 };
        for &g in &cfg.gamma_deg {
            let params = EffectiveParams::new(k0, g.to_radians(), seq.subspace).with_sign(sign);
            let tr = trajectory_export(seq, &params, cfg.kappa_scale, cfg.samples_per_quarter)?;
            for pt in &tr {
                table.push(vec![
                    seq.name.as_str().into(),
                    g.into(),
                    pt.label.as_str().into(),
                    pt.progress.into(),
                    pt.coords.x.into(),
                    pt.coords.y.into(),
                    pt.coords.z.into(),
                ]);
            }
            endpoints
                .entry(seq.name.clone())
                .or_default()
                .push(tr.last().map(|p| p.coords.x).unwrap_or(0.0));
        }
    }
    for (name, xs) in endpoints {
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        table.footer.push(format!("{name} endpoint x spread across gamma = {}", fmt_sig(spread)));
    }
    Ok(table)
}

/// Peak of a sampled curve; used by callers that post-process tables.
pub fn peak_of(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.is_empty() || x.len() != y.len() {
        return None;
    }
    let i = argmax(y);
    Some((x[i], y[i]))
}
