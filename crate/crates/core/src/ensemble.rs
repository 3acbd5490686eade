//! Crystallite orientation sets and rf-amplitude distributions, and the
//! weighted averages over them.
//!
//! Averages are computed in parallel but always reduced in a fixed order
//! with compensated summation, so results do not depend on the worker count.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interactions::CrystalliteOrientation;

/// Neumaier-compensated Σ wᵢ·vᵢ.
pub fn weighted_sum(terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (w, v) in terms {
        let x = w * v;
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            return (vec![0.0], vec![2.0]);
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowderScheme {
    /// β only, Gauss–Legendre in cos β; for γ-encoded problems.
    BetaGaussLegendre(usize),
    /// Equal-weight three-angle set: cos β on a midpoint lattice, α and γ from
    /// low-discrepancy additive recurrences.
    Zcw3(usize),
    /// Product grid with β midpoints of the upper hemisphere [0, π/2] weighted
    /// by sin β; α and γ uniform on [0, 2π).
    Grid { n_alpha: usize, n_beta: usize, n_gamma: usize },
}

impl PowderScheme {
    /// `gl:32`, `zcw3:300`, `grid:1:8:4` (α, β, γ counts) or `grid:8`.
    pub fn parse(s: &str) -> Result<PowderScheme> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Unknown {
            what: "powder scheme",
            name: s.to_string(),
        };
        let num = |t: &str| t.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(bad);
        Ok(match parts.as_slice() {
            ["gl" | "beta_gauss_legendre", n] => PowderScheme::BetaGaussLegendre(num(n)?),
            ["zcw3", n] => PowderScheme::Zcw3(num(n)?),
            ["grid", b] => PowderScheme::Grid {
                n_alpha: 1,
                n_beta: num(b)?,
                n_gamma: 1,
            },
            ["grid", a, b, g] => PowderScheme::Grid {
                n_alpha: num(a)?,
                n_beta: num(b)?,
                n_gamma: num(g)?,
            },
            _ => return Err(bad()),
        })
    }

    pub fn label(&self) -> String {
        match *self {
            PowderScheme::BetaGaussLegendre(n) => format!("gl:{n}"),
            PowderScheme::Zcw3(n) => format!("zcw3:{n}"),
            PowderScheme::Grid { n_alpha, n_beta, n_gamma } => format!("grid:{n_alpha}:{n_beta}:{n_gamma}"),
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            PowderScheme::BetaGaussLegendre(n) | PowderScheme::Zcw3(n) => n,
            PowderScheme::Grid { n_alpha, n_beta, n_gamma } => n_alpha * n_beta * n_gamma,
        }
    }

    pub fn doubled(&self) -> PowderScheme {
        match *self {
            PowderScheme::BetaGaussLegendre(n) => PowderScheme::BetaGaussLegendre(2 * n),
            PowderScheme::Zcw3(n) => PowderScheme::Zcw3(2 * n),
            PowderScheme::Grid { n_alpha, n_beta, n_gamma } => PowderScheme::Grid {
                n_alpha,
                n_beta: 2 * n_beta,
                n_gamma,
            },
        }
    }

    pub fn generate(&self) -> Result<Vec<CrystalliteOrientation>> {
        match *self {
            PowderScheme::BetaGaussLegendre(n) => Ok(beta_gauss_legendre(n)),
            PowderScheme::Zcw3(n) => Ok(zcw3(n)),
            PowderScheme::Grid { n_alpha, n_beta, n_gamma } => Ok(grid(n_alpha, n_beta, n_gamma)),
        }
    }
}

pub fn beta_gauss_legendre(n: usize) -> Vec<CrystalliteOrientation> {
    let (x, w) = gauss_legendre(n);
    x.iter()
        .zip(&w)
        .map(|(&c, &wk)| CrystalliteOrientation::new(0.0, c.clamp(-1.0, 1.0).acos(), 0.0, wk / 2.0))
        .collect()
}

/// Real root of x³ = x + 1; 1/ρ and 1/ρ² drive the α and γ recurrences.
const PLASTIC: f64 = 1.324_717_957_244_746;

pub fn zcw3(n: usize) -> Vec<CrystalliteOrientation> {
    let g1 = 1.0 / PLASTIC;
    let g2 = 1.0 / (PLASTIC * PLASTIC);
    (0..n)
        .map(|j| {
            let cb = 1.0 - (2 * j + 1) as f64 / n as f64;
            let fa = (0.5 + j as f64 * g1).fract();
            let fg = (0.5 + j as f64 * g2).fract();
            CrystalliteOrientation::new(2.0 * PI * fa, cb.acos(), 2.0 * PI * fg, 1.0 / n as f64)
        })
        .collect()
}

pub fn grid(n_alpha: usize, n_beta: usize, n_gamma: usize) -> Vec<CrystalliteOrientation> {
    let betas: Vec<f64> = (0..n_beta)
        .map(|j| (j as f64 + 0.5) * (PI / 2.0) / n_beta as f64)
        .collect();
    let norm: f64 = betas.iter().map(|b| b.sin()).sum::<f64>() * (n_alpha * n_gamma) as f64;
    let mut out = Vec::with_capacity(n_alpha * n_beta * n_gamma);
    for ia in 0..n_alpha {
        for &b in &betas {
            for ig in 0..n_gamma {
                out.push(CrystalliteOrientation::new(
                    2.0 * PI * ia as f64 / n_alpha as f64,
                    b,
                    2.0 * PI * ig as f64 / n_gamma as f64,
                    b.sin() / norm,
                ));
            }
        }
    }
    out
}

/// Whitespace-separated `alpha beta gamma weight` lines in degrees; weights
/// are renormalized to sum to one.
pub fn parse_crystallite_file(source: &str, text: &str) -> Result<Vec<CrystalliteOrientation>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) if v.len() == 4 => v,
            _ => return Err(Error::parse(source, idx + 1, format!("expected 'alpha beta gamma weight', got '{line}'"))),
        };
        let c = CrystalliteOrientation::new(
            vals[0].to_radians(),
            vals[1].to_radians(),
            vals[2].to_radians(),
            vals[3],
        );
        c.validate().map_err(|e| Error::parse(source, idx + 1, e.to_string()))?;
        out.push(c);
    }
    if out.is_empty() {
        return Err(Error::parse(source, 0, "no crystallites"));
    }
    let total: f64 = out.iter().map(|c| c.weight).sum();
    for c in &mut out {
        c.weight /= total;
    }
    Ok(out)
}

pub fn load_crystallite_file(path: &Path) -> Result<Vec<CrystalliteOrientation>> {
    let text = std::fs::read_to_string(path)?;
    parse_crystallite_file(&path.display().to_string(), &text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfShape {
    Delta,
    Lorentzian,
    Gaussian,
}

/// Which width the percentage names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WidthConvention {
    #[default]
    Fwhm,
    Hwhm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfNode {
    pub scale_i: f64,
    pub scale_s: f64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfDistribution {
    pub shape: RfShape,
    pub width_percent: f64,
    pub n_nodes: usize,
    pub correlated: bool,
    pub convention: WidthConvention,
}

impl RfDistribution {
    pub fn delta() -> Self {
        RfDistribution {
            shape: RfShape::Delta,
            width_percent: 0.0,
            n_nodes: 1,
            correlated: true,
            convention: WidthConvention::Fwhm,
        }
    }

    pub fn lorentzian(width_percent: f64) -> Self {
        RfDistribution {
            shape: RfShape::Lorentzian,
            width_percent,
            n_nodes: 21,
            correlated: true,
            convention: WidthConvention::Fwhm,
        }
    }

    pub fn gaussian(width_percent: f64) -> Self {
        RfDistribution {
            shape: RfShape::Gaussian,
            ..Self::lorentzian(width_percent)
        }
    }

    /// `delta`, `lorentzian:5`, `gaussian:9:independent`, `lorentzian:2:correlated:hwhm:11`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let bad = |m: &str| Error::InvalidArgument(format!("rf distribution '{s}': {m}"));
        let mut d = match parts.next().unwrap_or("") {
            "delta" | "none" => return Ok(Self::delta()),
            "lorentzian" => Self::lorentzian(0.0),
            "gaussian" => Self::gaussian(0.0),
            _ => return Err(bad("shape must be delta, lorentzian or gaussian")),
        };
        d.width_percent = parts
            .next()
            .and_then(|w| w.parse::<f64>().ok())
            .ok_or_else(|| bad("missing width in percent"))?;
        for p in parts {
            match p {
                "correlated" => d.correlated = true,
                "independent" | "uncorrelated" => d.correlated = false,
                "fwhm" => d.convention = WidthConvention::Fwhm,
                "hwhm" => d.convention = WidthConvention::Hwhm,
                n => d.n_nodes = n.parse().map_err(|_| bad("unrecognized option"))?,
            }
        }
        Ok(d)
    }

    pub fn label(&self) -> String {
        match self.shape {
            RfShape::Delta => "delta".into(),
            RfShape::Lorentzian | RfShape::Gaussian => format!(
                "{}:{}:{}:{}:{}",
                if self.shape == RfShape::Lorentzian { "lorentzian" } else { "gaussian" },
                self.width_percent,
                if self.correlated { "correlated" } else { "independent" },
                if self.convention == WidthConvention::Fwhm { "fwhm" } else { "hwhm" },
                self.n_nodes
            ),
        }
    }

    pub fn nodes(&self) -> Result<Vec<RfNode>> {
        rf_distribution(self.shape, self.width_percent, self.n_nodes, self.correlated, self.convention)
    }
}

/// One-dimensional nodes (scale, weight) of a distribution truncated at
/// ±3 FWHM around 1 and renormalized.
fn rf_nodes_1d(shape: RfShape, width_percent: f64, n: usize, conv: WidthConvention) -> Vec<(f64, f64)> {
    let width = width_percent / 100.0;
    let fwhm = match conv {
        WidthConvention::Fwhm => width,
        WidthConvention::Hwhm => 2.0 * width,
    };
    if shape == RfShape::Delta || fwhm == 0.0 {
        return vec![(1.0, 1.0)];
    }
    let half = 3.0 * fwhm;
    let density = |u: f64| match shape {
        RfShape::Lorentzian => {
            let g = fwhm / 2.0;
            1.0 / (u * u + g * g)
        }
        RfShape::Gaussian => {
            let sigma = fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt());
            (-u * u / (2.0 * sigma * sigma)).exp()
        }
        RfShape::Delta => unreachable!(),
    };
    let (x, w) = gauss_legendre(n);
    let raw: Vec<(f64, f64)> = x.iter().zip(&w).map(|(&xk, &wk)| (xk * half, wk * density(xk * half))).collect();
    let total = weighted_sum(raw.iter().map(|&(_, w)| (w, 1.0)));
    // symmetrize so the mean is exactly 1
    let n = raw.len();
    (0..n)
        .map(|k| {
            let u = 0.5 * (raw[k].0 - raw[n - 1 - k].0);
            let w = 0.5 * (raw[k].1 + raw[n - 1 - k].1) / total;
            (1.0 + u, w)
        })
        .collect()
}

pub fn rf_distribution(
    shape: RfShape,
    width_percent: f64,
    n_nodes: usize,
    correlated: bool,
    convention: WidthConvention,
) -> Result<Vec<RfNode>> {
    if n_nodes < 1 {
        return Err(Error::InvalidArgument("rf distribution needs at least one node".into()));
    }
    if !(width_percent >= 0.0) || !width_percent.is_finite() {
        return Err(Error::InvalidArgument(format!("rf width {width_percent} must be non-negative")));
    }
    let one = rf_nodes_1d(shape, width_percent, n_nodes, convention);
    if correlated || one.len() == 1 {
        return Ok(one
            .iter()
            .map(|&(s, w)| RfNode {
                scale_i: s,
                scale_s: s,
                weight: w,
            })
            .collect());
    }
    let mut out = Vec::with_capacity(one.len() * one.len());
    for &(si, wi) in &one {
        for &(ss, ws) in &one {
            out.push(RfNode {
                scale_i: si,
                scale_s: ss,
                weight: wi * ws,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub crystallites: Vec<CrystalliteOrientation>,
    pub rf_nodes: Vec<RfNode>,
    /// Generating scheme, when known; enables doubling tests.
    pub scheme: Option<PowderScheme>,
}

impl EnsembleSpec {
    pub fn new(crystallites: Vec<CrystalliteOrientation>, rf_nodes: Vec<RfNode>) -> Result<Self> {
        let cw = weighted_sum(crystallites.iter().map(|c| (c.weight, 1.0)));
        let rw = weighted_sum(rf_nodes.iter().map(|r| (r.weight, 1.0)));
        if crystallites.is_empty() || (cw - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("crystallite weights sum to {cw}, not 1")));
        }
        if rf_nodes.is_empty() || (rw - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("rf weights sum to {rw}, not 1")));
        }
        for c in &crystallites {
            c.validate()?;
        }
        Ok(EnsembleSpec {
            crystallites,
            rf_nodes,
            scheme: None,
        })
    }

    pub fn from_scheme(scheme: PowderScheme, rf: &RfDistribution) -> Result<Self> {
        let mut s = Self::new(scheme.generate()?, rf.nodes()?)?;
        s.scheme = Some(scheme);
        Ok(s)
    }

    pub fn single(cr: CrystalliteOrientation) -> Self {
        EnsembleSpec {
            crystallites: vec![CrystalliteOrientation { weight: 1.0, ..cr }],
            rf_nodes: vec![RfNode {
                scale_i: 1.0,
                scale_s: 1.0,
                weight: 1.0,
            }],
            scheme: None,
        }
    }

    pub fn with_rf(&self, rf_nodes: Vec<RfNode>) -> Result<Self> {
        let mut s = Self::new(self.crystallites.clone(), rf_nodes)?;
        s.scheme = self.scheme;
        Ok(s)
    }
}

/// Σ_c Σ_r w_c w_r f(c, r).
pub fn average<F>(f: F, spec: &EnsembleSpec) -> f64
where
    F: Fn(&CrystalliteOrientation, &RfNode) -> f64 + Sync,
{
    try_average(|c, r| Ok(f(c, r)), spec).expect("infallible")
}

pub fn try_average<F>(f: F, spec: &EnsembleSpec) -> Result<f64>
where
    F: Fn(&CrystalliteOrientation, &RfNode) -> Result<f64> + Sync,
{
    let v = try_average_vec(|c, r| Ok(vec![f(c, r)?]), spec)?;
    Ok(v[0])
}

/// Element-wise average of a vector-valued function; every call must return
/// the same length.
pub fn try_average_vec<F>(f: F, spec: &EnsembleSpec) -> Result<Vec<f64>>
where
    F: Fn(&CrystalliteOrientation, &RfNode) -> Result<Vec<f64>> + Sync,
{
    let pairs: Vec<(usize, usize)> = (0..spec.crystallites.len())
        .flat_map(|c| (0..spec.rf_nodes.len()).map(move |r| (c, r)))
        .collect();
    let parts: Vec<(f64, Vec<f64>)> = pairs
        .par_iter()
        .map(|&(c, r)| {
            let cr = &spec.crystallites[c];
            let node = &spec.rf_nodes[r];
            f(cr, node).map(|v| (cr.weight * node.weight, v))
        })
        .collect::<Result<_>>()?;
    let len = parts.first().map(|p| p.1.len()).unwrap_or(0);
    if parts.iter().any(|p| p.1.len() != len) {
        return Err(Error::InvalidArgument("averaged function returned ragged output".into()));
    }
    Ok((0..len)
        .map(|k| weighted_sum(parts.iter().map(|(w, v)| (*w, v[k]))))
        .collect())
}

/// Per-crystallite map in input order, for functions that handle the rf
/// average themselves.
pub fn map_crystallites<T, F>(spec: &EnsembleSpec, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&CrystalliteOrientation) -> Result<T> + Sync,
{
    spec.crystallites.par_iter().map(&f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn beta_scheme_moments() {
        for n in [8, 16, 32] {
            let s = beta_gauss_legendre(n);
            let w: f64 = s.iter().map(|c| c.weight).sum();
            assert!((w - 1.0).abs() < 1e-14);
            let m: f64 = s.iter().map(|c| c.weight * (2.0 * c.euler.beta).sin().powi(2)).sum();
            assert!((m - 8.0 / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zcw3_covers_sphere() {
        let s = zcw3(2000);
        let w: f64 = s.iter().map(|c| c.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
        let m: f64 = s.iter().map(|c| c.weight * (2.0 * c.euler.beta).sin().powi(2)).sum();
        assert!((m - 8.0 / 15.0).abs() < 1e-5);
        let ca: f64 = s.iter().map(|c| c.weight * c.euler.alpha.cos()).sum();
        let sg: f64 = s.iter().map(|c| c.weight * c.euler.gamma.sin()).sum();
        assert!(ca.abs() < 5e-3 && sg.abs() < 5e-3);
    }

    #[test]
    fn single_beta_grid() {
        let g = grid(1, 1, 1);
        assert_eq!(g.len(), 1);
        assert!((g[0].euler.beta - PI / 4.0).abs() < 1e-15);
        assert!((g[0].weight - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!(PowderScheme::parse("gl:32").unwrap(), PowderScheme::BetaGaussLegendre(32));
        assert_eq!(PowderScheme::parse("zcw3:100").unwrap().size(), 100);
        assert_eq!(PowderScheme::parse("grid:2:3:4").unwrap().size(), 24);
        assert!(PowderScheme::parse("sobol:10").is_err());
        assert!(PowderScheme::parse("gl:0").is_err());
    }

    #[test]
    fn crystallite_file() {
        let c = parse_crystallite_file("f", "0 45 0 2\n# c\n10 90 20 2\n").unwrap();
        assert_eq!(c.len(), 2);
        assert!((c[0].weight - 0.5).abs() < 1e-15);
        assert!((c[1].euler.gamma - 20f64.to_radians()).abs() < 1e-15);
        let e = parse_crystallite_file("f", "0 45 0\n").unwrap_err().to_string();
        assert!(e.starts_with("f:1:"));
        assert!(parse_crystallite_file("f", "0 200 0 1\n").is_err());
    }

    #[test]
    fn delta_distribution() {
        let d = RfDistribution::delta().nodes().unwrap();
        assert_eq!(d, vec![RfNode { scale_i: 1.0, scale_s: 1.0, weight: 1.0 }]);
    }

    #[test]
    fn lorentzian_nodes_are_symmetric_and_normalized() {
        for conv in [WidthConvention::Fwhm, WidthConvention::Hwhm] {
            let d = rf_distribution(RfShape::Lorentzian, 5.0, 21, true, conv).unwrap();
            assert_eq!(d.len(), 21);
            let w = weighted_sum(d.iter().map(|n| (n.weight, 1.0)));
            let mean = weighted_sum(d.iter().map(|n| (n.weight, n.scale_i)));
            assert!((w - 1.0).abs() < 1e-15);
            assert!((mean - 1.0).abs() < 1e-12);
            for k in 0..21 {
                assert!((d[k].weight - d[20 - k].weight).abs() < 1e-15);
                assert!((d[k].scale_i - 1.0 + d[20 - k].scale_i - 1.0).abs() < 1e-15);
            }
            let span = d[20].scale_i - d[0].scale_i;
            let expect = match conv {
                WidthConvention::Fwhm => 0.3,
                WidthConvention::Hwhm => 0.6,
            };
            assert!(span < expect && span > 0.9 * expect);
        }
    }

    #[test]
    fn independent_channels_form_a_product_grid() {
        let d = rf_distribution(RfShape::Gaussian, 4.0, 5, false, WidthConvention::Fwhm).unwrap();
        assert_eq!(d.len(), 25);
        assert!(d.iter().any(|n| n.scale_i != n.scale_s));
        let w = weighted_sum(d.iter().map(|n| (n.weight, 1.0)));
        assert!((w - 1.0).abs() < 1e-14);
        assert!(rf_distribution(RfShape::Gaussian, 4.0, 0, false, WidthConvention::Fwhm).is_err());
    }

    #[test]
    fn distribution_parsing() {
        let d = RfDistribution::parse("lorentzian:5:independent:hwhm:11").unwrap();
        assert_eq!(d.shape, RfShape::Lorentzian);
        assert_eq!(d.width_percent, 5.0);
        assert!(!d.correlated);
        assert_eq!(d.convention, WidthConvention::Hwhm);
        assert_eq!(d.n_nodes, 11);
        assert_eq!(RfDistribution::parse(&d.label()).unwrap(), d);
        assert!(RfDistribution::parse("box:3").is_err());
        assert!(RfDistribution::parse("gaussian").is_err());
    }

    #[test]
    fn averages() {
        let spec = EnsembleSpec::from_scheme(PowderScheme::BetaGaussLegendre(12), &RfDistribution::lorentzian(5.0)).unwrap();
        assert!((average(|_, _| 3.5, &spec) - 3.5).abs() < 1e-14);
        let m = average(|c, _| (2.0 * c.euler.beta).sin().powi(2), &spec);
        assert!((m - 8.0 / 15.0).abs() < 1e-13);
        let v = try_average_vec(|c, r| Ok(vec![1.0, r.scale_i, c.euler.beta.cos()]), &spec).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-14);
    }

    #[test]
    fn ensemble_rejects_unnormalized_weights() {
        let c = vec![CrystalliteOrientation::new(0.0, 0.3, 0.0, 0.7)];
        assert!(EnsembleSpec::new(c, RfDistribution::delta().nodes().unwrap()).is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let terms = [(1.0, 1e16), (1.0, 1.0), (1.0, -1e16)];
        assert_eq!(weighted_sum(terms.into_iter()), 1.0);
    }
}
