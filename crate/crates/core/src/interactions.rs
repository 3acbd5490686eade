//! Spin-system parameters and the rotor-frame Fourier decomposition of the
//! time-dependent interaction frequencies
//!
//! ```text
//! ω_λ(t) = Σ_{m=-2..2} ω_λ^(m) exp(i m ω_r t),    λ ∈ {I, S, IS}
//! ```
//!
//! with ω_I, ω_S multiplying I_z, S_z and ω_IS multiplying 2I_zS_z.
//!
//! Rank-2 tensors go principal axis frame → crystal frame → rotor frame → lab.
//! Wigner matrices follow D^j_{m'm}(α, β, γ) = e^{−im'α} d^j_{m'm}(β) e^{−imγ},
//! and a component transforms as ρ^B_m = Σ_k ρ^A_k D²_{km}(Ω_AB). The rotor to
//! lab step uses Euler angles (−ω_r t, θ_m, 0), so that
//! ω^(m) = ρ^R_m d²_{m0}(θ_m). Advancing a crystallite's γ by δ multiplies
//! ω^(m) by e^{−imδ}.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::spinops::C64;

/// arccos(1/√3)
pub const MAGIC_ANGLE: f64 = 0.955_316_618_124_509_2;

const GLYCINE: &str = include_str!("../data/glycine.conf");

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Euler {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Euler {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Euler { alpha, beta, gamma }
    }

    pub fn from_degrees(a: f64, b: f64, g: f64) -> Self {
        Euler::new(a.to_radians(), b.to_radians(), g.to_radians())
    }
}

fn factorial(n: i32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Reduced Wigner element d²_{m'm}(β).
pub fn wigner_d2(mp: i32, m: i32, beta: f64) -> f64 {
    let j = 2;
    let (c, s) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    let pre = (factorial(j + m) * factorial(j - m) * factorial(j + mp) * factorial(j - mp)).sqrt();
    let mut sum = 0.0;
    for k in 0..=2 * j {
        let a = [j + m - k, k, j - k - mp, k - m + mp];
        if a.iter().any(|&x| x < 0) {
            continue;
        }
        let sign = if (k - m + mp).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let den: f64 = a.iter().map(|&x| factorial(x)).product();
        sum += sign / den * c.powi(2 * j - 2 * k + m - mp) * s.powi(2 * k - m + mp);
    }
    pre * sum
}

/// Full Wigner element D²_{m'm}(α, β, γ).
pub fn wigner_big_d2(mp: i32, m: i32, e: &Euler) -> C64 {
    C64::from_polar(1.0, -(mp as f64) * e.alpha - (m as f64) * e.gamma) * wigner_d2(mp, m, e.beta)
}

/// Components ρ_{-2..2} of a rank-2 tensor, indexed by m + 2.
pub type Rank2 = [C64; 5];

pub fn rotate_rank2(rho: &Rank2, e: &Euler) -> Rank2 {
    std::array::from_fn(|mi| {
        let m = mi as i32 - 2;
        (0..5)
            .map(|ki| rho[ki] * wigner_big_d2(ki as i32 - 2, m, e))
            .sum()
    })
}

/// Principal-axis components scaled so that a tensor aligned with the field
/// gives frequency `aniso` at η = 0.
fn pas_components(aniso: f64, eta: f64) -> Rank2 {
    let side = C64::new(-aniso * eta / 6f64.sqrt(), 0.0);
    let zero = C64::new(0.0, 0.0);
    [side, zero, C64::new(aniso, 0.0), zero, side]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsaTensor {
    /// Reduced anisotropy δ_zz − δ_iso in ppm.
    pub delta_ppm: f64,
    pub eta: f64,
    /// Principal axis frame → crystal frame.
    pub euler: Euler,
}

impl CsaTensor {
    pub fn none() -> Self {
        CsaTensor {
            delta_ppm: 0.0,
            eta: 0.0,
            euler: Euler::default(),
        }
    }
}

/// Everything needed to build the two-spin Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinSystem {
    pub name: String,
    pub nucleus_i: String,
    pub nucleus_s: String,
    /// ν_I / ν_1H (signed).
    pub gamma_ratio_i: f64,
    pub gamma_ratio_s: f64,
    pub proton_larmor_mhz: f64,
    pub spin_rate_hz: f64,
    pub iso_shift_i_hz: f64,
    pub iso_shift_s_hz: f64,
    pub csa_i: CsaTensor,
    pub csa_s: CsaTensor,
    /// b_IS / 2π
    pub dipolar_hz: f64,
    pub dipolar_euler: Euler,
    pub j_hz: f64,
}

impl SpinSystem {
    /// The bundled glycine Cα–N reference pair.
    pub fn glycine() -> SpinSystem {
        Self::parse("glycine.conf", GLYCINE).expect("bundled glycine data parses")
    }

    pub fn glycine_text() -> &'static str {
        GLYCINE
    }

    /// Two spins coupled only through the dipolar interaction (no CSA, no J).
    pub fn pure_dipolar(dipolar_hz: f64, spin_rate_hz: f64) -> SpinSystem {
        SpinSystem {
            name: "pure-dipolar".into(),
            nucleus_i: "I".into(),
            nucleus_s: "S".into(),
            gamma_ratio_i: -0.10136767,
            gamma_ratio_s: 0.25145020,
            proton_larmor_mhz: 700.0,
            spin_rate_hz,
            iso_shift_i_hz: 0.0,
            iso_shift_s_hz: 0.0,
            csa_i: CsaTensor::none(),
            csa_s: CsaTensor::none(),
            dipolar_hz,
            dipolar_euler: Euler::default(),
            j_hz: 0.0,
        }
    }

    pub fn from_file(path: &Path) -> Result<SpinSystem> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(source: &str, text: &str) -> Result<SpinSystem> {
        let kv = KeyValues::parse(source, text)?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<SpinSystem> {
        let euler = |key: &str| -> Result<Euler> {
            let [a, b, g] = kv.triple_f64(key)?;
            Ok(Euler::from_degrees(a, b, g))
        };
        let csa = |prefix: &str| -> Result<CsaTensor> {
            let dkey = format!("{prefix}_delta_ppm");
            if kv.get(&dkey).is_none() {
                return Ok(CsaTensor::none());
            }
            Ok(CsaTensor {
                delta_ppm: kv.f64(&dkey)?,
                eta: kv.f64(&format!("{prefix}_eta"))?,
                euler: euler(&format!("{prefix}_euler_deg"))?,
            })
        };
        let known = [
            "name", "nucleus_i", "nucleus_s", "gamma_ratio_i", "gamma_ratio_s", "proton_larmor_mhz",
            "spin_rate_hz", "iso_shift_i_hz", "iso_shift_s_hz", "csa_i_delta_ppm", "csa_i_eta",
            "csa_i_euler_deg", "csa_s_delta_ppm", "csa_s_eta", "csa_s_euler_deg", "dipolar_hz",
            "dipolar_euler_deg", "j_hz",
        ];
        if let Some(k) = kv.keys().find(|k| !known.contains(k)) {
            return Err(kv.error(k, "unknown spin-system key"));
        }
        let sys = SpinSystem {
            name: kv.get("name").unwrap_or("unnamed").to_string(),
            nucleus_i: kv.get("nucleus_i").unwrap_or("I").to_string(),
            nucleus_s: kv.get("nucleus_s").unwrap_or("S").to_string(),
            gamma_ratio_i: kv.f64("gamma_ratio_i")?,
            gamma_ratio_s: kv.f64("gamma_ratio_s")?,
            proton_larmor_mhz: kv.f64("proton_larmor_mhz")?,
            spin_rate_hz: kv.f64("spin_rate_hz")?,
            iso_shift_i_hz: kv.f64_or("iso_shift_i_hz", 0.0)?,
            iso_shift_s_hz: kv.f64_or("iso_shift_s_hz", 0.0)?,
            csa_i: csa("csa_i")?,
            csa_s: csa("csa_s")?,
            dipolar_hz: kv.f64("dipolar_hz")?,
            dipolar_euler: if kv.get("dipolar_euler_deg").is_some() {
                euler("dipolar_euler_deg")?
            } else {
                Euler::default()
            },
            j_hz: kv.f64_or("j_hz", 0.0)?,
        };
        sys.validate()
            .map_err(|e| Error::parse(kv.source(), 0, e.to_string()))?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, eta) in [("csa_i_eta", self.csa_i.eta), ("csa_s_eta", self.csa_s.eta)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::InvalidArgument(format!("{label} = {eta} outside [0, 1]")));
            }
        }
        if !(self.spin_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spin rate must be positive, got {}",
                self.spin_rate_hz
            )));
        }
        Ok(())
    }

    /// ω_r in rad/s.
    pub fn spin_rate(&self) -> f64 {
        2.0 * PI * self.spin_rate_hz
    }

    pub fn rotor_period(&self) -> f64 {
        1.0 / self.spin_rate_hz
    }

    /// b_IS in rad/s.
    pub fn dipolar_coupling(&self) -> f64 {
        2.0 * PI * self.dipolar_hz
    }

    pub fn larmor_i_hz(&self) -> f64 {
        self.proton_larmor_mhz * 1e6 * self.gamma_ratio_i
    }

    pub fn larmor_s_hz(&self) -> f64 {
        self.proton_larmor_mhz * 1e6 * self.gamma_ratio_s
    }

    /// Same system with the dipolar coupling multiplied by `factor`.
    pub fn with_dipolar_scale(&self, factor: f64) -> SpinSystem {
        SpinSystem {
            dipolar_hz: self.dipolar_hz * factor,
            ..self.clone()
        }
    }

    /// Flat key = value rendering, parseable by [`SpinSystem::parse`].
    pub fn to_text(&self) -> String {
        let e = |x: &Euler| {
            format!("{}, {}, {}", x.alpha.to_degrees(), x.beta.to_degrees(), x.gamma.to_degrees())
        };
        let mut s = String::new();
        s += &format!("name = {}\nnucleus_i = {}\nnucleus_s = {}\n", self.name, self.nucleus_i, self.nucleus_s);
        s += &format!("gamma_ratio_i = {}\ngamma_ratio_s = {}\n", self.gamma_ratio_i, self.gamma_ratio_s);
        s += &format!("proton_larmor_mhz = {}\nspin_rate_hz = {}\n", self.proton_larmor_mhz, self.spin_rate_hz);
        s += &format!("iso_shift_i_hz = {}\niso_shift_s_hz = {}\n", self.iso_shift_i_hz, self.iso_shift_s_hz);
        for (p, c) in [("csa_i", &self.csa_i), ("csa_s", &self.csa_s)] {
            s += &format!("{p}_delta_ppm = {}\n{p}_eta = {}\n{p}_euler_deg = {}\n", c.delta_ppm, c.eta, e(&c.euler));
        }
        s += &format!("dipolar_hz = {}\ndipolar_euler_deg = {}\nj_hz = {}\n", self.dipolar_hz, e(&self.dipolar_euler), self.j_hz);
        s
    }
}

/// Crystal frame → rotor frame orientation of one crystallite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrystalliteOrientation {
    pub euler: Euler,
    pub weight: f64,
}

impl CrystalliteOrientation {
    pub fn new(alpha: f64, beta: f64, gamma: f64, weight: f64) -> Self {
        CrystalliteOrientation {
            euler: Euler::new(alpha, beta, gamma),
            weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=PI).contains(&self.euler.beta) {
            return Err(Error::InvalidArgument(format!("beta {} outside [0, pi]", self.euler.beta)));
        }
        if !(self.weight > 0.0) {
            return Err(Error::InvalidArgument(format!("weight {} must be positive", self.weight)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interaction {
    I = 0,
    S = 1,
    IS = 2,
}

/// Fourier coefficients ω_λ^(m) in rad/s for one crystallite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierHamiltonian {
    pub coeffs: [Rank2; 3],
}

impl FourierHamiltonian {
    /// ω_λ^(m); zero for |m| > 2.
    pub fn coeff(&self, lambda: Interaction, m: i32) -> C64 {
        if m.abs() > 2 {
            return C64::new(0.0, 0.0);
        }
        self.coeffs[lambda as usize][(m + 2) as usize]
    }

    /// ω_λ at rotor phase ω_r t.
    pub fn eval(&self, lambda: Interaction, rotor_phase: f64) -> f64 {
        let c = &self.coeffs[lambda as usize];
        let mut acc = c[2].re;
        for m in 1..=2 {
            let e = C64::from_polar(1.0, m as f64 * rotor_phase);
            acc += 2.0 * (c[(m + 2) as usize] * e).re;
        }
        acc
    }

    /// Full complex sum Σ ω^(m) e^{imφ}, whose imaginary part vanishes for
    /// conjugate-symmetric coefficients.
    pub fn eval_complex(&self, lambda: Interaction, rotor_phase: f64) -> C64 {
        let c = &self.coeffs[lambda as usize];
        (0..5)
            .map(|k| c[k] * C64::from_polar(1.0, (k as f64 - 2.0) * rotor_phase))
            .sum()
    }
}

fn lab_coefficients(pas: &Rank2, pc: &Euler, cr: &Euler) -> Rank2 {
    let crystal = rotate_rank2(pas, pc);
    let rotor = rotate_rank2(&crystal, cr);
    std::array::from_fn(|mi| rotor[mi] * wigner_d2(mi as i32 - 2, 0, MAGIC_ANGLE))
}

pub fn fourier_coeffs(sys: &SpinSystem, cr: &CrystalliteOrientation) -> FourierHamiltonian {
    let two_pi = 2.0 * PI;
    let shift = |csa: &CsaTensor, larmor_hz: f64, iso_hz: f64| {
        let aniso = two_pi * csa.delta_ppm * 1e-6 * larmor_hz;
        let mut c = lab_coefficients(&pas_components(aniso, csa.eta), &csa.euler, &cr.euler);
        c[2] += C64::new(two_pi * iso_hz, 0.0);
        c
    };
    let ci = shift(&sys.csa_i, sys.larmor_i_hz(), sys.iso_shift_i_hz);
    let cs = shift(&sys.csa_s, sys.larmor_s_hz(), sys.iso_shift_s_hz);
    let mut cd = lab_coefficients(
        &pas_components(sys.dipolar_coupling(), 0.0),
        &sys.dipolar_euler,
        &cr.euler,
    );
    // weak-coupling J: 2π J I_zS_z = π J (2 I_zS_z)
    cd[2] += C64::new(PI * sys.j_hz, 0.0);
    FourierHamiltonian { coeffs: [ci, cs, cd] }
}

/// (A_n⁺, A_n⁻) = ½(ω_IS^(−n) ± ω_IS^(n)).
pub fn a_coefficients(fh: &FourierHamiltonian, n: i32) -> (C64, C64) {
    let minus = fh.coeff(Interaction::IS, -n);
    let plus = fh.coeff(Interaction::IS, n);
    ((minus + plus) * 0.5, (minus - plus) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wigner_small_d_closed_forms() {
        for &b in &[0.0, 0.3, 1.1, MAGIC_ANGLE, 2.5, PI] {
            let (s, c) = f64::sin_cos(b);
            assert!((wigner_d2(0, 0, b) - (3.0 * c * c - 1.0) / 2.0).abs() < 1e-14);
            assert!((wigner_d2(1, 0, b) + (1.5f64).sqrt() * s * c).abs() < 1e-14);
            assert!((wigner_d2(0, 1, b) - (1.5f64).sqrt() * s * c).abs() < 1e-14);
            assert!((wigner_d2(2, 0, b) - (3.0f64 / 8.0).sqrt() * s * s).abs() < 1e-14);
            assert!((wigner_d2(2, 2, b) - ((1.0 + c) / 2.0).powi(2)).abs() < 1e-14);
        }
        assert!(wigner_d2(0, 0, MAGIC_ANGLE).abs() < 1e-15);
    }

    #[test]
    fn wigner_d_rows_are_orthonormal() {
        let b = 0.77;
        for m1 in -2..=2 {
            for m2 in -2..=2 {
                let dot: f64 = (-2..=2).map(|k| wigner_d2(m1, k, b) * wigner_d2(m2, k, b)).sum();
                let expect = if m1 == m2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn glycine_matches_reference_values() {
        let g = SpinSystem::glycine();
        assert_eq!(g.csa_s.delta_ppm, 19.43);
        assert_eq!(g.csa_s.eta, 0.98);
        assert!((g.csa_s.euler.alpha.to_degrees() - 64.9).abs() < 1e-12);
        assert!((g.csa_s.euler.beta.to_degrees() - 37.3).abs() < 1e-12);
        assert!((g.csa_s.euler.gamma.to_degrees() + 28.8).abs() < 1e-12);
        assert_eq!(g.csa_i.delta_ppm, 10.1);
        assert_eq!(g.csa_i.eta, 0.17);
        assert!((g.csa_i.euler.alpha.to_degrees() + 83.8).abs() < 1e-12);
        assert!((g.csa_i.euler.beta.to_degrees() + 79.0).abs() < 1e-12);
        assert_eq!(g.dipolar_hz, -890.0);
        assert_eq!(g.dipolar_euler, Euler::default());
        assert_eq!(g.j_hz, -11.0);
        assert_eq!(g.proton_larmor_mhz, 700.0);
        assert_eq!(g.spin_rate_hz, 10_000.0);
    }

    #[test]
    fn text_round_trip() {
        let g = SpinSystem::glycine();
        let back = SpinSystem::parse("echo", &g.to_text()).unwrap();
        assert_eq!(back.dipolar_hz, g.dipolar_hz);
        assert!((back.csa_s.euler.gamma - g.csa_s.euler.gamma).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_eta_and_unknown_keys() {
        let bad = SpinSystem::glycine_text().replace("csa_i_eta = 0.17", "csa_i_eta = 1.4");
        assert!(SpinSystem::parse("x", &bad).is_err());
        let extra = format!("{}\nfoo = 1\n", SpinSystem::glycine_text());
        assert!(SpinSystem::parse("x", &extra).is_err());
    }

    #[test]
    fn pure_dipolar_has_no_static_component() {
        let sys = SpinSystem::pure_dipolar(-890.0, 10e3);
        let fh = fourier_coeffs(&sys, &CrystalliteOrientation::new(0.4, 1.0, 2.0, 1.0));
        assert!(fh.coeff(Interaction::IS, 0).norm() < 1e-10);
        assert_eq!(a_coefficients(&fh, 3), (C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
    }

    #[test]
    fn a0_is_static_coefficient() {
        let g = SpinSystem::glycine();
        let fh = fourier_coeffs(&g, &CrystalliteOrientation::new(0.1, 0.7, 1.3, 1.0));
        let (ap, am) = a_coefficients(&fh, 0);
        assert!((ap - fh.coeff(Interaction::IS, 0)).norm() < 1e-15);
        assert!(am.norm() < 1e-15);
        // J enters the static dipolar slot
        assert!((ap.re - PI * g.j_hz).abs() < 1e-9);
    }

    #[test]
    fn reality_of_time_domain_frequencies() {
        let g = SpinSystem::glycine();
        for cr in [
            CrystalliteOrientation::new(0.3, 0.4, 0.5, 1.0),
            CrystalliteOrientation::new(2.0, 2.9, -1.0, 1.0),
        ] {
            let fh = fourier_coeffs(&g, &cr);
            for lambda in [Interaction::I, Interaction::S, Interaction::IS] {
                for m in -2..=2 {
                    assert!((fh.coeff(lambda, -m) - fh.coeff(lambda, m).conj()).norm() < 1e-9);
                }
                for k in 0..32 {
                    let phi = 2.0 * PI * k as f64 / 32.0;
                    let z = fh.eval_complex(lambda, phi);
                    assert!(z.im.abs() < 1e-10 * (1.0 + z.re.abs()));
                    assert!((z.re - fh.eval(lambda, phi)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gamma_advance_multiplies_by_phase() {
        let g = SpinSystem::glycine();
        let delta = 0.83;
        let a = fourier_coeffs(&g, &CrystalliteOrientation::new(0.5, 1.2, 0.2, 1.0));
        let b = fourier_coeffs(&g, &CrystalliteOrientation::new(0.5, 1.2, 0.2 + delta, 1.0));
        for lambda in [Interaction::I, Interaction::S, Interaction::IS] {
            for m in -2..=2 {
                let expect = if m == 0 {
                    a.coeff(lambda, 0)
                } else {
                    a.coeff(lambda, m) * C64::from_polar(1.0, -(m as f64) * delta)
                };
                assert!((b.coeff(lambda, m) - expect).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn static_tensor_gives_textbook_frequency() {
        // Rotate a CSA tensor so that lab frequency at a fixed rotor phase can be
        // compared with δ[(3cos²θ−1)/2 − η/2 sin²θ cos2φ] evaluated directly.
        let aniso = 1000.0;
        let eta = 0.4;
        let pas = pas_components(aniso, eta);
        let (theta, phi) = (0.7, 0.3);
        // PAS → lab with Euler (φ', θ, 0) has polar angles (θ, π−φ') of B0 in the PAS.
        let lab = rotate_rank2(&pas, &Euler::new(phi, theta, 0.0));
        let freq = lab[2].re;
        let expect = aniso * ((3.0 * theta.cos().powi(2) - 1.0) / 2.0 - eta / 2.0 * theta.sin().powi(2) * (2.0 * phi).cos());
        assert!((freq - expect).abs() < 1e-9, "{freq} vs {expect}");
    }
}
