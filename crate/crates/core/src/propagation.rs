//! Retarded propagation between scattering events in an anisotropic,
//! inhomogeneous medium, in the slowly-varying phase-integral form.
//!
//! Along a straight ray with unit direction u the transverse susceptibility
//! is expanded as χ̃ = χ0·I + χvec·σ in the spherical q = ±1 basis of the
//! local frame. The 2×2 amplitude matrix X then follows from the phase
//! integrals φ0 = 2π∫χ0 ds and φ = 2π∫χ_len ds (k = 1).

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector3};
use num_complex::Complex64;

use crate::angular::{euler_zyz, q_index, spherical_unit, wigner_rotation_rank1};
use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;

const I: Complex64 = Complex64::new(0.0, 1.0);
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Right-handed local frame of a ray: `z` is the ray direction, `x` the
/// projection of the lab z-axis on the transverse plane (lab x when the ray
/// is parallel to z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl LocalFrame {
    pub fn for_ray(u: &Vector3<f64>) -> Self {
        let z = u.normalize();
        let mut x = Vector3::z() - z * z.z;
        if x.norm() < 1e-9 {
            x = Vector3::x() - z * z.x;
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self { x, y, z }
    }

    /// Rotation matrix with the frame vectors as columns.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.x, self.y, self.z])
    }

    /// 3×2 embedding of transverse (x, y) components into the lab.
    pub fn transverse(&self) -> Matrix3x2<Complex64> {
        Matrix3x2::from_columns(&[self.x.map(Complex64::from), self.y.map(Complex64::from)])
    }
}

/// Pauli expansion of the transverse susceptibility for one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransverseChi {
    pub chi0: Complex64,
    pub chivec: Vector3<Complex64>,
    /// Principal square root of χvec·χvec (bilinear).
    pub chi_len: Complex64,
    /// χvec/χ_len; `None` when the transverse tensor is isotropic.
    pub director: Option<Vector3<Complex64>>,
}

/// Spherical components χ_{q1}^{q2} = e_{q1}·χ·e*_{q2}, indices ordered (+1, 0, −1).
pub fn spherical_tensor(chi: &Matrix3<Complex64>) -> Matrix3<Complex64> {
    Matrix3::from_fn(|a, b| {
        let q1 = 1 - a as i32;
        let q2 = 1 - b as i32;
        spherical_unit(q1).transpose().dot(&(chi * spherical_unit(q2).conjugate()).transpose())
    })
}

/// Rotate χ into the ray frame and expand its q = ±1 block in Pauli matrices.
pub fn transverse_decompose(chi_lab: &Matrix3<Complex64>, ray: &Vector3<f64>) -> TransverseChi {
    let frame = LocalFrame::for_ray(ray);
    let (a, b, g) = euler_zyz(&frame.rotation());
    let d = wigner_rotation_rank1(a, b, g);
    let s = spherical_tensor(chi_lab);
    let rotated = d.transpose() * s * d.conjugate();
    let (p, m) = (q_index(1), q_index(-1));
    pauli_expand(Matrix2::new(rotated[(p, p)], rotated[(p, m)], rotated[(m, p)], rotated[(m, m)]))
}

fn pauli_expand(block: Matrix2<Complex64>) -> TransverseChi {
    let chi0 = (block[(0, 0)] + block[(1, 1)]) / 2.0;
    let chivec = Vector3::new(
        (block[(0, 1)] + block[(1, 0)]) / 2.0,
        I * (block[(0, 1)] - block[(1, 0)]) / 2.0,
        (block[(0, 0)] - block[(1, 1)]) / 2.0,
    );
    let chi_len = (chivec.x * chivec.x + chivec.y * chivec.y + chivec.z * chivec.z).sqrt();
    let scale = chi0.norm().max(chivec.norm()).max(f64::MIN_POSITIVE);
    let director = (chi_len.norm() > 1e-13 * scale).then(|| chivec / chi_len);
    TransverseChi { chi0, chivec, chi_len, director }
}

/// χ0·I + χvec·σ in the q = ±1 basis.
pub fn reconstruct_block(t: &TransverseChi) -> Matrix2<Complex64> {
    let v = t.chivec;
    Matrix2::new(t.chi0 + v.z, v.x - I * v.y, v.x + I * v.y, t.chi0 - v.z)
}

/// Keeps the sign of a complex square root continuous across a sweep.
#[derive(Debug, Clone, Default)]
pub struct SqrtTracker {
    last: Option<Complex64>,
}

impl SqrtTracker {
    pub fn next(&mut self, z: Complex64) -> Complex64 {
        let r = z.sqrt();
        let r = match self.last {
            Some(prev) if (r + prev).norm() < (r - prev).norm() => -r,
            _ => r,
        };
        self.last = Some(r);
        r
    }
}

/// Straight path piece between two points at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub length: f64,
    pub omega: f64,
}

impl RaySegment {
    pub fn new(start: Vector3<f64>, end: Vector3<f64>, omega: f64) -> Result<Self> {
        let d = end - start;
        let length = d.norm();
        if !(length > 0.0) {
            return Err(Error::domain("ray segment has zero length"));
        }
        Ok(Self { start, end, direction: d / length, length, omega })
    }

    pub fn point(&self, s: f64) -> Vector3<f64> {
        self.start + self.direction * s
    }
}

/// 2×2 amplitude matrix over the (x, y) components of the local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeMatrix {
    pub x: Matrix2<Complex64>,
}

impl AmplitudeMatrix {
    pub fn identity() -> Self {
        Self { x: Matrix2::identity() }
    }

    /// Lab-frame 3×3 operator U X Uᵀ acting on transverse fields.
    pub fn embed(&self, frame: &LocalFrame) -> Matrix3<Complex64> {
        let u = frame.transverse();
        u * self.x * u.transpose()
    }

    pub fn then(&self, next: &AmplitudeMatrix) -> AmplitudeMatrix {
        AmplitudeMatrix { x: next.x * self.x }
    }
}

/// φ0 = 2π∫χ0 ds and φ = 2π∫χ_len ds along the segment.
pub fn phase_integrals<F>(segment: &RaySegment, sampler: F) -> Result<(Complex64, Complex64)>
where
    F: Fn(&Vector3<f64>) -> (Complex64, Complex64),
{
    let tol = 1e-12;
    let phi0 = integrate_adaptive(|s| sampler(&segment.point(s)).0, 0.0, segment.length, tol, tol)?;
    let phi = integrate_adaptive(|s| sampler(&segment.point(s)).1, 0.0, segment.length, tol, tol)?;
    Ok((phi0 * TWO_PI, phi * TWO_PI))
}

/// The four components of X for given phase integrals and director.
pub fn amplitude_matrix(phi0: Complex64, phi: Complex64, director: Option<&Vector3<Complex64>>) -> AmplitudeMatrix {
    let e0 = (I * phi0).exp();
    let Some(n) = director else {
        return AmplitudeMatrix { x: Matrix2::identity() * e0 };
    };
    let (c, s) = (phi.cos(), phi.sin());
    AmplitudeMatrix {
        x: Matrix2::new(
            e0 * (c - I * s * n.x),
            e0 * I * s * (n.y + I * n.z),
            e0 * I * s * (n.y - I * n.z),
            e0 * (c + I * s * n.x),
        ),
    }
}

/// X from φ0 and the integrated vector Φ = 2π∫χvec ds, stable when the
/// bilinear length of Φ vanishes (sin φ/φ → 1).
pub fn amplitude_from_phase_vector(phi0: Complex64, big_phi: &Vector3<Complex64>) -> AmplitudeMatrix {
    let phi = (big_phi.x * big_phi.x + big_phi.y * big_phi.y + big_phi.z * big_phi.z).sqrt();
    let sinc = if phi.norm() < 1e-6 {
        Complex64::ONE - phi * phi / 6.0
    } else {
        phi.sin() / phi
    };
    let e0 = (I * phi0).exp();
    let v = big_phi * sinc;
    let c = phi.cos();
    AmplitudeMatrix {
        x: Matrix2::new(
            e0 * (c - I * v.x),
            e0 * I * (v.y + I * v.z),
            e0 * I * (v.y - I * v.z),
            e0 * (c + I * v.x),
        ),
    }
}

/// Susceptibility field seen by propagating light.
pub trait OpticalMedium: Sync {
    fn chi(&self, r: &Vector3<f64>, omega: f64) -> Matrix3<Complex64>;
}

impl<F> OpticalMedium for F
where
    F: Fn(&Vector3<f64>, f64) -> Matrix3<Complex64> + Sync,
{
    fn chi(&self, r: &Vector3<f64>, omega: f64) -> Matrix3<Complex64> {
        self(r, omega)
    }
}

/// Amplitude matrix for a segment, split into pieces no longer than a
/// tenth of the local extinction length; the director of each piece is
/// taken at its midpoint.
pub fn segment_amplitude(segment: &RaySegment, medium: &dyn OpticalMedium) -> Result<AmplitudeMatrix> {
    let u = segment.direction;
    let mut x = AmplitudeMatrix::identity();
    let mut s = 0.0;
    let mut guard = 0usize;
    while s < segment.length {
        let mid_chi = transverse_decompose(&medium.chi(&segment.point(s), segment.omega), &u);
        let inv_l = (4.0 * std::f64::consts::PI * mid_chi.chi0.im).abs().max(1e-300);
        let step = (0.1 / inv_l).min(segment.length - s);
        let piece = RaySegment::new(segment.point(s), segment.point(s + step), segment.omega)?;
        let centre = transverse_decompose(&medium.chi(&piece.point(step / 2.0), segment.omega), &u);
        let director = centre.director;
        let sampler = |r: &Vector3<f64>| {
            let t = transverse_decompose(&medium.chi(r, segment.omega), &u);
            // Project on the midpoint director so the piece keeps one axis.
            let len = match director {
                Some(n) => t.chivec.dot(&n),
                None => Complex64::ZERO,
            };
            (t.chi0, len)
        };
        let (phi0, phi) = phase_integrals(&piece, sampler)?;
        x = x.then(&amplitude_matrix(phi0, phi, director.as_ref()));
        s += step;
        guard += 1;
        if guard > 1_000_000 {
            return Err(Error::numeric("segment splitting did not terminate"));
        }
    }
    Ok(x)
}

/// Far-field propagator from `r_from` to `r_to`: −X·e^{iR}/R embedded in
/// the lab frame. Separations below `min_separation` are rejected; the near
/// zone belongs to the coupled-dipole solver.
pub fn green_asymptote(
    r_from: &Vector3<f64>,
    r_to: &Vector3<f64>,
    omega: f64,
    medium: &dyn OpticalMedium,
    min_separation: f64,
) -> Result<Matrix3<Complex64>> {
    let seg = RaySegment::new(*r_from, *r_to, omega)?;
    if seg.length < min_separation {
        return Err(Error::Range(format!(
            "separation {:.4} below the far-field minimum {min_separation}",
            seg.length
        )));
    }
    let x = segment_amplitude(&seg, medium)?;
    let frame = LocalFrame::for_ray(&seg.direction);
    let phase = -(I * seg.length).exp() / seg.length;
    Ok(x.embed(&frame) * phase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_right_handed() {
        for u in [Vector3::new(0.3, -0.2, 0.9), Vector3::z(), -Vector3::z(), Vector3::x()] {
            let f = LocalFrame::for_ray(&u);
            assert!((f.x.cross(&f.y) - f.z).norm() < 1e-14);
            assert!(f.x.dot(&f.z).abs() < 1e-14);
        }
    }

    fn expm2(a: Matrix2<Complex64>) -> Matrix2<Complex64> {
        // Scaling and squaring with a Taylor core.
        let scaled = a / Complex64::from(1024.0);
        let mut term = Matrix2::identity();
        let mut sum = Matrix2::identity();
        for k in 1..30 {
            term = term * scaled / Complex64::from(k as f64);
            sum += term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn homogeneous_segment_matches_cartesian_exponential() {
        let chi = Matrix3::from_fn(|a, b| Complex64::new(0.01 * (1 + a + 2 * b) as f64, 0.02 + 0.005 * (a * b) as f64));
        let medium = move |_: &Vector3<f64>, _: f64| chi;
        let u = Vector3::new(0.2, -0.5, 0.7).normalize();
        let len = 0.9;
        let seg = RaySegment::new(Vector3::zeros(), u * len, 0.0).unwrap();
        let x = segment_amplitude(&seg, &medium).unwrap();
        let f = LocalFrame::for_ray(&u);
        let t = f.transverse();
        let block = t.transpose() * chi * t;
        let expect = expm2(block * Complex64::new(0.0, TWO_PI * len));
        assert!((x.x - expect).norm() < 1e-10, "{} vs {}", x.x, expect);
    }

    #[test]
    fn sqrt_tracker_follows_branch() {
        let mut t = SqrtTracker::default();
        let mut prev: Option<Complex64> = None;
        for k in 0..200 {
            let ang = std::f64::consts::PI * 1.9 * k as f64 / 199.0;
            let r = t.next(Complex64::from_polar(1.0, ang));
            if let Some(p) = prev {
                assert!((r - p).norm() < 0.1);
            }
            prev = Some(r);
        }
    }
}
