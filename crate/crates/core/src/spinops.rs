//! Operator algebra on the four-dimensional Hilbert space of two spin-1/2 nuclei.
//!
//! Matrices are written in the Zeeman product basis |αα⟩, |αβ⟩, |βα⟩, |ββ⟩ with
//! the first factor belonging to spin I. Spin operators carry the ½-Pauli
//! normalization, so tr(I_z²) = tr(S_z²) = tr((2I_zS_z)²) = 1.
//!
//! The heteronuclear transfer dynamics decompose into two su(2) triplets:
//!
//! ```text
//! X∓ = ½(I_x ∓ S_x)    Y∓ = I_yS_z ∓ I_zS_y    Z∓ = I_zS_z ± I_yS_y
//! ```
//!
//! Each triplet obeys [X, Y] = iZ cyclically and commutes with the other one.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const HERMITIAN_TOL: f64 = 1e-12;

/// 4×4 complex operator on the two-spin space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Operator4(pub Matrix4<C64>);

impl Operator4 {
    pub fn zero() -> Self {
        Operator4(Matrix4::zeros())
    }

    pub fn identity() -> Self {
        Operator4(Matrix4::identity())
    }

    pub fn from_real(m: &Matrix4<f64>) -> Self {
        Operator4(m.map(|x| C64::new(x, 0.0)))
    }

    pub fn entry(&self, r: usize, c: usize) -> C64 {
        self.0[(r, c)]
    }

    pub fn adjoint(&self) -> Self {
        Operator4(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Hilbert–Schmidt inner product tr(self† · other).
    pub fn inner(&self, other: &Operator4) -> C64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        (self.0 - self.0.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() < tol
    }

    /// max |U†U − 1|.
    pub fn unitarity_deviation(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix4::identity())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// U ρ U†.
    pub fn conjugate(&self, rho: &Operator4) -> Operator4 {
        Operator4(self.0 * rho.0 * self.0.adjoint())
    }

    pub fn scale(&self, s: f64) -> Operator4 {
        Operator4(self.0 * C64::new(s, 0.0))
    }

    pub fn scale_c(&self, s: C64) -> Operator4 {
        Operator4(self.0 * s)
    }

    /// True when every imaginary part vanishes exactly.
    pub fn is_real(&self) -> bool {
        self.0.iter().all(|z| z.im == 0.0)
    }
}

impl Add for Operator4 {
    type Output = Operator4;
    fn add(self, rhs: Operator4) -> Operator4 {
        Operator4(self.0 + rhs.0)
    }
}

impl AddAssign for Operator4 {
    fn add_assign(&mut self, rhs: Operator4) {
        self.0 += rhs.0;
    }
}

impl Sub for Operator4 {
    type Output = Operator4;
    fn sub(self, rhs: Operator4) -> Operator4 {
        Operator4(self.0 - rhs.0)
    }
}

impl Neg for Operator4 {
    type Output = Operator4;
    fn neg(self) -> Operator4 {
        Operator4(-self.0)
    }
}

impl Mul for Operator4 {
    type Output = Operator4;
    fn mul(self, rhs: Operator4) -> Operator4 {
        Operator4(self.0 * rhs.0)
    }
}

impl Mul<&Operator4> for &Operator4 {
    type Output = Operator4;
    fn mul(self, rhs: &Operator4) -> Operator4 {
        Operator4(self.0 * rhs.0)
    }
}

impl Mul<Operator4> for f64 {
    type Output = Operator4;
    fn mul(self, rhs: Operator4) -> Operator4 {
        rhs.scale(self)
    }
}

/// Which of the two three-dimensional operator subspaces a problem lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subspace {
    /// {X⁻, Y⁻, Z⁻}: zero-quantum-like, driven by heteronuclear matching.
    Minus,
    /// {X⁺, Y⁺, Z⁺}: double-quantum-like, driven by homonuclear matching.
    Plus,
}

impl Subspace {
    pub fn sign(self) -> f64 {
        match self {
            Subspace::Minus => -1.0,
            Subspace::Plus => 1.0,
        }
    }

    pub fn other(self) -> Subspace {
        match self {
            Subspace::Minus => Subspace::Plus,
            Subspace::Plus => Subspace::Minus,
        }
    }

    /// (X, Y, Z) of this subspace.
    pub fn triplet(self) -> [Operator4; 3] {
        let b = basis();
        match self {
            Subspace::Minus => [b.x_minus, b.y_minus, b.z_minus],
            Subspace::Plus => [b.x_plus, b.y_plus, b.z_plus],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subspace::Minus => "minus",
            Subspace::Plus => "plus",
        }
    }
}

/// Named product operators.
#[derive(Clone, Debug)]
pub struct SpinBasis {
    pub ix: Operator4,
    pub iy: Operator4,
    pub iz: Operator4,
    pub sx: Operator4,
    pub sy: Operator4,
    pub sz: Operator4,
    /// 2 I_z S_z
    pub izsz2: Operator4,
    /// I·S = I_xS_x + I_yS_y + I_zS_z
    pub i_dot_s: Operator4,
    pub x_minus: Operator4,
    pub y_minus: Operator4,
    pub z_minus: Operator4,
    pub x_plus: Operator4,
    pub y_plus: Operator4,
    pub z_plus: Operator4,
}

fn pauli() -> [Matrix2<C64>; 4] {
    let z = C64::new(0.0, 0.0);
    let h = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    [
        Matrix2::new(C64::new(1.0, 0.0), z, z, C64::new(1.0, 0.0)),
        Matrix2::new(z, h, h, z),
        Matrix2::new(z, -ih, ih, z),
        Matrix2::new(h, z, z, -h),
    ]
}

fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Operator4 {
    let mut m = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    m[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    Operator4(m)
}

/// The shared operator basis.
pub fn basis() -> &'static SpinBasis {
    static BASIS: OnceLock<SpinBasis> = OnceLock::new();
    BASIS.get_or_init(|| {
        let [e, sx, sy, sz] = pauli();
        let ix = kron(&sx, &e);
        let iy = kron(&sy, &e);
        let iz = kron(&sz, &e);
        let s_x = kron(&e, &sx);
        let s_y = kron(&e, &sy);
        let s_z = kron(&e, &sz);
        let iysy = iy * s_y;
        let izsz = iz * s_z;
        let iysz = iy * s_z;
        let izsy = iz * s_y;
        SpinBasis {
            ix,
            iy,
            iz,
            sx: s_x,
            sy: s_y,
            sz: s_z,
            izsz2: izsz.scale(2.0),
            i_dot_s: ix * s_x + iysy + izsz,
            x_minus: (ix - s_x).scale(0.5),
            y_minus: iysz - izsy,
            z_minus: izsz + iysy,
            x_plus: (ix + s_x).scale(0.5),
            y_plus: iysz + izsy,
            z_plus: izsz - iysy,
        }
    })
}

pub fn commutator(a: &Operator4, b: &Operator4) -> Operator4 {
    Operator4(a.0 * b.0 - b.0 * a.0)
}

/// exp(−i h t) for Hermitian `h`, via eigendecomposition.
pub fn expm_unitary(h: &Operator4, t: f64) -> Result<Operator4> {
    let deviation = h.hermitian_deviation();
    if deviation >= HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(Error::NonHermitian { deviation });
    }
    if h.is_real() {
        let re = h.0.map(|z| z.re);
        let sym = (re + re.transpose()) * 0.5;
        return Ok(expm_real_symmetric(&sym, t));
    }
    let herm = (h.0 + h.0.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let v = eig.eigenvectors;
    let mut phases = Matrix4::<C64>::zeros();
    for k in 0..4 {
        phases[(k, k)] = C64::from_polar(1.0, -eig.eigenvalues[k] * t);
    }
    Ok(Operator4(v * phases * v.adjoint()))
}

/// exp(−i h t) for a real symmetric generator. Used on the hot path of the
/// time-sliced engine, where every x-phase Hamiltonian is real.
pub fn expm_real_symmetric(h: &Matrix4<f64>, t: f64) -> Operator4 {
    let eig = h.symmetric_eigen();
    let v = &eig.eigenvectors;
    let ph: [C64; 4] = std::array::from_fn(|k| C64::from_polar(1.0, -eig.eigenvalues[k] * t));
    let mut u = Matrix4::<C64>::zeros();
    for r in 0..4 {
        for c in r..4 {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..4 {
                acc += ph[k] * (v[(r, k)] * v[(c, k)]);
            }
            u[(r, c)] = acc;
            u[(c, r)] = acc;
        }
    }
    Operator4(u)
}

fn spin_half_rotation(theta: f64, phase: f64) -> Matrix2<C64> {
    // exp(−i θ (cos φ σ_x + sin φ σ_y)/2)
    let c = C64::new((theta / 2.0).cos(), 0.0);
    let s = (theta / 2.0).sin();
    let off = C64::new(0.0, -s) * C64::from_polar(1.0, -phase);
    let off_t = C64::new(0.0, -s) * C64::from_polar(1.0, phase);
    Matrix2::new(c, off, off_t, c)
}

/// Exact propagator of an ideal instantaneous pulse pair: flip `theta_i` with
/// phase `phase_i` on I and `theta_s`/`phase_s` on S.
pub fn rf_rotation(theta_i: f64, phase_i: f64, theta_s: f64, phase_s: f64) -> Operator4 {
    kron(
        &spin_half_rotation(theta_i, phase_i),
        &spin_half_rotation(theta_s, phase_s),
    )
}

/// tr(S_x · u I_x u†) / tr(I_x²): signed I_x → S_x transfer.
pub fn transfer_efficiency(u: &Operator4) -> f64 {
    let b = basis();
    let evolved = u.conjugate(&b.ix);
    b.sx.inner(&evolved).re / b.ix.inner(&b.ix).re
}

/// Coordinates in an orthonormalized (X, Y, Z) triplet.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RotVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl RotVec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        RotVec3 { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &RotVec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &RotVec3) -> RotVec3 {
        RotVec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(&self, s: f64) -> RotVec3 {
        RotVec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn add(&self, o: &RotVec3) -> RotVec3 {
        RotVec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    /// Right-handed rotation about `axis` (need not be normalized) by `angle`.
    pub fn rotated(&self, axis: &RotVec3, angle: f64) -> RotVec3 {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return *self;
        }
        let k = axis.scale(1.0 / n);
        let (s, c) = angle.sin_cos();
        // Rodrigues
        self.scale(c)
            .add(&k.cross(self).scale(s))
            .add(&k.scale(k.dot(self) * (1.0 - c)))
    }
}

/// Result of projecting an operator onto one subspace triplet.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub coords: RotVec3,
    /// Norm of the part of the operator outside the triplet.
    pub residual: f64,
}

/// Project `rho` onto the orthonormalized (X^σ, Y^σ, Z^σ) of `sigma`.
///
/// Each triplet member has Hilbert–Schmidt norm 1/√2, so I_x and X^σ both
/// project to (1/√2, 0, 0).
pub fn subspace_project(rho: &Operator4, sigma: Subspace) -> Projection {
    let trip = sigma.triplet();
    let mut coords = [0.0; 3];
    let mut inside = Operator4::zero();
    for (k, b) in trip.iter().enumerate() {
        let n = b.norm();
        let unit = b.scale(1.0 / n);
        let c = unit.inner(rho);
        coords[k] = c.re;
        inside += unit.scale_c(c);
    }
    Projection {
        coords: RotVec3::new(coords[0], coords[1], coords[2]),
        residual: (*rho - inside).norm(),
    }
}

/// Generator coordinates of a Hamiltonian restricted to `sigma`: H = a·(X, Y, Z).
pub fn generator_axis(h: &Operator4, sigma: Subspace) -> RotVec3 {
    let p = subspace_project(h, sigma);
    p.coords.scale(std::f64::consts::SQRT_2)
}
