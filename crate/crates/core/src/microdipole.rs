//! Coupled-dipole scattering by frozen atomic configurations, plus the
//! self-consistent continuum model and slab transmission.
//!
//! Units: k = 1, γ = 1. The vector model is an F0 = 0 → F = 1 atom with
//! |d|² = 3/4 per Cartesian axis; the scalar model keeps only the isotropic
//! radiative coupling with g² = 1/2 so that a single scalar atom is lossless
//! with linewidth γ (its resonant cross section is 4π instead of 6π).
//!
//! Amplitudes are reported in the resolvent sign convention: the total
//! cross section is Q0 = −4π Im T_forward and dσ/dΩ = |T|², all in λbar².

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Vector-model dipole strength per Cartesian axis.
pub const VECTOR_D2: f64 = 0.75;
/// Scalar-model coupling g².
pub const SCALAR_G2: f64 = 0.5;
/// Default minimum interatomic distance (λbar).
pub const CONTACT_FLOOR: f64 = 0.05;

/// Spherical Hankel function of the first kind, order 0.
pub fn hankel0(x: f64) -> Complex64 {
    -I * (I * x).exp() / x
}

/// Spherical Hankel function of the first kind, order 2.
pub fn hankel2(x: f64) -> Complex64 {
    (I * x).exp() * (I / x - 3.0 / (x * x) - 3.0 * I / (x * x * x))
}

/// Free-space field Green tensor D_{μν}(R) for wavenumber k.
pub fn field_green_tensor(r: &Vector3<f64>, k: f64) -> Result<Matrix3<Complex64>> {
    let dist = r.norm();
    if !(dist > 0.0) {
        return Err(Error::domain("Green tensor at zero separation is renormalised separately"));
    }
    let x = k * dist;
    let n = r / dist;
    let iso = I * (2.0 / 3.0) * hankel0(x);
    let aniso = I * hankel2(x);
    let k3 = k.abs().powi(3);
    Ok(Matrix3::from_fn(|a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        -k3 * (iso * delta + aniso * (n[a] * n[b] - delta / 3.0))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DipoleModel {
    Scalar,
    Vector,
}

impl DipoleModel {
    pub fn dim(self) -> usize {
        match self {
            DipoleModel::Scalar => 1,
            DipoleModel::Vector => 3,
        }
    }
}

/// Frozen atomic positions with the probe detuning.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub positions: Vec<Vector3<f64>>,
    pub model: DipoleModel,
    pub detuning: f64,
    pub contact_floor: f64,
}

impl Configuration {
    pub fn new(positions: Vec<Vector3<f64>>, model: DipoleModel, detuning: f64) -> Self {
        Self { positions, model, detuning, contact_floor: CONTACT_FLOOR }
    }

    pub fn with_detuning(&self, detuning: f64) -> Self {
        Self { detuning, ..self.clone() }
    }
}

/// Non-Hermitian Hamiltonian over singly excited states. Basis index
/// `a * dim + μ` for atom a and Cartesian axis μ (vector) or `a` (scalar).
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub h: DMatrix<Complex64>,
    pub model: DipoleModel,
    pub n_atoms: usize,
}

/// Detuning-independent part: diagonal −i/2, pair couplings. The full
/// Hamiltonian at detuning Δ is this minus Δ·I.
fn coupling_matrix(positions: &[Vector3<f64>], model: DipoleModel, floor: f64) -> Result<DMatrix<Complex64>> {
    let n = positions.len();
    let d = model.dim();
    let mut h = DMatrix::zeros(n * d, n * d);
    for a in 0..n {
        for mu in 0..d {
            h[(a * d + mu, a * d + mu)] = Complex64::new(0.0, -0.5);
        }
        for b in (a + 1)..n {
            let r = positions[a] - positions[b];
            if r.norm() < floor {
                return Err(Error::domain(format!(
                    "atoms {a} and {b} are {:.4} λbar apart, below the contact floor {floor}",
                    r.norm()
                )));
            }
            match model {
                DipoleModel::Scalar => {
                    let v = -0.5 * I * hankel0(r.norm());
                    h[(a, b)] = v;
                    h[(b, a)] = v;
                }
                DipoleModel::Vector => {
                    let g = field_green_tensor(&r, 1.0)? * Complex64::from(VECTOR_D2);
                    for mu in 0..3 {
                        for nu in 0..3 {
                            h[(a * 3 + mu, b * 3 + nu)] = g[(mu, nu)];
                            h[(b * 3 + nu, a * 3 + mu)] = g[(mu, nu)];
                        }
                    }
                }
            }
        }
    }
    Ok(h)
}

pub fn build_effective_hamiltonian(config: &Configuration) -> Result<EffectiveHamiltonian> {
    let mut h = coupling_matrix(&config.positions, config.model, config.contact_floor)?;
    for i in 0..h.nrows() {
        h[(i, i)] -= config.detuning;
    }
    Ok(EffectiveHamiltonian { h, model: config.model, n_atoms: config.positions.len() })
}

/// Factorised resolvent (E − H)⁻¹ for repeated solves at one frequency.
pub struct Resolvent {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    model: DipoleModel,
}

impl Resolvent {
    pub fn new(h: &EffectiveHamiltonian, e: Complex64) -> Result<Self> {
        let n = h.h.nrows();
        let m = DMatrix::from_diagonal_element(n, n, e) - &h.h;
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(Error::numeric("resolvent matrix is singular"));
        }
        Ok(Self { lu, model: h.model })
    }

    pub fn solve(&self, rhs: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        self.lu.solve(rhs).ok_or_else(|| Error::numeric("resolvent solve failed"))
    }
}

fn plane_wave_vector(
    positions: &[Vector3<f64>],
    model: DipoleModel,
    k: &Vector3<f64>,
    e: &Vector3<Complex64>,
    conj: bool,
) -> DVector<Complex64> {
    let d = model.dim();
    let mut v = DVector::zeros(positions.len() * d);
    for (a, r) in positions.iter().enumerate() {
        let phase = (I * k.dot(r)).exp();
        match model {
            DipoleModel::Scalar => v[a] = SCALAR_G2.sqrt() * phase,
            DipoleModel::Vector => {
                for mu in 0..3 {
                    v[a * 3 + mu] = VECTOR_D2.sqrt() * e[mu] * phase;
                }
            }
        }
        if conj {
            for mu in 0..d {
                v[a * d + mu] = v[a * d + mu].conj();
            }
        }
    }
    v
}

/// Scattering amplitude for (k_in, e_in) → (k_out, e_out) at resolvent
/// energy E (E = 0 on shell; the detuning lives in H).
pub fn t_matrix_element(
    config: &Configuration,
    h: &EffectiveHamiltonian,
    k_in: &Vector3<f64>,
    e_in: &Vector3<Complex64>,
    k_out: &Vector3<f64>,
    e_out: &Vector3<Complex64>,
    e: Complex64,
) -> Result<Complex64> {
    let res = Resolvent::new(h, e)?;
    t_matrix_with(&res, &config.positions, k_in, e_in, k_out, e_out)
}

/// As [`t_matrix_element`] with a prepared resolvent.
pub fn t_matrix_with(
    res: &Resolvent,
    positions: &[Vector3<f64>],
    k_in: &Vector3<f64>,
    e_in: &Vector3<Complex64>,
    k_out: &Vector3<f64>,
    e_out: &Vector3<Complex64>,
) -> Result<Complex64> {
    let src = plane_wave_vector(positions, res.model, k_in, e_in, false);
    let x = res.solve(&src)?;
    let out = plane_wave_vector(positions, res.model, k_out, e_out, true);
    Ok(out.transpose().dot(&x.transpose()))
}

/// Total cross section (λbar²) by the optical theorem.
pub fn total_cross_section(config: &Configuration, k_in: &Vector3<f64>, e_in: &Vector3<Complex64>) -> Result<f64> {
    let h = build_effective_hamiltonian(config)?;
    let t = t_matrix_element(config, &h, k_in, e_in, k_in, e_in, Complex64::ZERO)?;
    Ok(-4.0 * std::f64::consts::PI * t.im)
}

/// dσ/dΩ (λbar² per steradian) for one input and one output channel.
pub fn differential_cross_section(
    config: &Configuration,
    k_in: &Vector3<f64>,
    e_in: &Vector3<Complex64>,
    k_out: &Vector3<f64>,
    e_out: &Vector3<Complex64>,
) -> Result<f64> {
    let h = build_effective_hamiltonian(config)?;
    Ok(t_matrix_element(config, &h, k_in, e_in, k_out, e_out, Complex64::ZERO)?.norm_sqr())
}

/// Q0(Δ) over a detuning grid, reusing the pair couplings.
pub fn cross_section_spectrum(
    positions: &[Vector3<f64>],
    model: DipoleModel,
    detunings: &[f64],
    k_in: &Vector3<f64>,
    e_in: &Vector3<Complex64>,
) -> Result<Vec<f64>> {
    let base = coupling_matrix(positions, model, CONTACT_FLOOR)?;
    let n = base.nrows();
    let n_atoms = positions.len();
    detunings
        .iter()
        .map(|&delta| {
            let h = EffectiveHamiltonian {
                h: &base - DMatrix::from_diagonal_element(n, n, Complex64::new(delta, 0.0)),
                model,
                n_atoms,
            };
            let res = Resolvent::new(&h, Complex64::ZERO)?;
            let t = t_matrix_with(&res, positions, k_in, e_in, k_in, e_in)?;
            Ok(-4.0 * std::f64::consts::PI * t.im)
        })
        .collect()
}

/// Uniform random positions in a ball, rejecting pairs closer than `floor`.
pub fn random_ball<R: Rng + ?Sized>(n: usize, radius: f64, floor: f64, rng: &mut R) -> Result<Vec<Vector3<f64>>> {
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pts.len() < n {
        attempts += 1;
        if attempts > 1000 * n + 10_000 {
            return Err(Error::domain("ball too small for the requested atoms at this contact floor"));
        }
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.norm_squared() > 1.0 {
            continue;
        }
        let p = p * radius;
        if pts.iter().all(|q| (q - p).norm() >= floor) {
            pts.push(p);
        }
    }
    Ok(pts)
}

/// Gaussian cloud positions with rms radius r0 per axis.
pub fn random_gaussian<R: Rng + ?Sized>(n: usize, r0: f64, floor: f64, rng: &mut R) -> Result<Vec<Vector3<f64>>> {
    use rand_distr::Distribution;
    let normal = rand_distr::Normal::new(0.0, r0)
        .map_err(|e| Error::domain(format!("invalid Gaussian radius: {e}")))?;
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pts.len() < n {
        attempts += 1;
        if attempts > 1000 * n + 10_000 {
            return Err(Error::domain("Gaussian cloud too dense for the contact floor"));
        }
        let p = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        if pts.iter().all(|q| (q - p).norm() >= floor) {
            pts.push(p);
        }
    }
    Ok(pts)
}

/// Ball radius holding `n` atoms at density `n0` (λbar⁻³).
pub fn ball_radius(n: usize, n0: f64) -> f64 {
    (3.0 * n as f64 / (4.0 * std::f64::consts::PI * n0)).cbrt()
}

/// Welford running mean and variance, one accumulator per grid point.
#[derive(Debug, Clone)]
pub struct RunningStats {
    pub count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let c = self.count as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let d = x - *m;
            *m += d / c;
            *s += d * (x - *m);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean per point.
    pub fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let c = self.count as f64;
        self.m2.iter().map(|s| (s / (c - 1.0) / c).sqrt()).collect()
    }
}

/// Dielectric response of the continuum model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon {
    pub eps: Complex64,
    pub chi: Complex64,
}

/// Self-consistent continuum susceptibility at scaled density `n_scaled`.
///
/// Each dipole sees the Lorentz local field E + (4π/3)P and radiates into
/// the medium with the modified width (γ/2)√ε. With α = −(3/4)/(Δ + (i/2)√ε)
/// and χ = nα/(1 − (4π/3)nα) this closes to
/// f(χ) = χ(Δ + πn + (i/2)√(1+4πχ)) + (3/4)n = 0,
/// solved by continuation in n from the dilute limit with Newton steps.
pub fn self_consistent_epsilon(n_scaled: f64, delta: f64) -> Result<Epsilon> {
    if n_scaled < 0.0 {
        return Err(Error::domain("scaled density must be non-negative"));
    }
    let pi = std::f64::consts::PI;
    let f = |chi: Complex64, n: f64| {
        let s = (1.0 + 4.0 * pi * chi).sqrt();
        chi * (delta + pi * n + 0.5 * I * s) + 0.75 * n
    };
    let df = |chi: Complex64, n: f64| {
        let s = (1.0 + 4.0 * pi * chi).sqrt();
        (delta + pi * n + 0.5 * I * s) + I * pi * chi / s
    };
    // Newton from `x`; Err carries the last iterate for diagnostics.
    let newton = |mut x: Complex64, n: f64| -> std::result::Result<Complex64, Complex64> {
        for _ in 0..100 {
            let d = df(x, n);
            if d.norm() < 1e-300 {
                return Err(x);
            }
            let step = f(x, n) / d;
            x -= step;
            if step.norm() <= 1e-15 * (1.0 + x.norm()) {
                // Only the branch with Re √ε > 0 is physical.
                return if (1.0 + 4.0 * pi * x).sqrt().re > 0.0 { Ok(x) } else { Err(x) };
            }
        }
        Err(x)
    };
    // Continuation in n with step control: near ε ≈ 0 the root moves fast
    // and a fixed step can jump to another branch.
    let mut n = 0.0;
    let mut h = n_scaled / 64.0;
    let mut chi = Complex64::ZERO;
    let mut slope = -0.75 / Complex64::new(delta, 0.5);
    while n < n_scaled {
        let h_try = h.min(n_scaled - n);
        let n_next = n + h_try;
        let guess = chi + slope * h_try;
        let candidate = match newton(guess, n_next) {
            Ok(x) if (x - guess).norm() <= 0.1 * (x.norm() + 1e-3) => {
                slope = (x - chi) / h_try;
                chi = x;
                n = n_next;
                h = (2.0 * h_try).min(n_scaled / 16.0);
                continue;
            }
            Ok(x) | Err(x) => x,
        };
        h = h_try / 2.0;
        if h < n_scaled * 1e-9 {
            return Err(Error::numeric(format!(
                "self-consistent root lost at n={n_next:.4}, Δ={delta}: tracked root {chi} (n={n:.4}), Newton candidate {candidate}"
            )));
        }
    }
    Ok(Epsilon { eps: 1.0 + 4.0 * pi * chi, chi })
}

/// Normal-incidence transmission amplitude of a slab of thickness `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabTransmission {
    pub t: Complex64,
    pub intensity: f64,
}

pub fn slab_transmission(eps: Complex64, l: f64, k: f64) -> Result<SlabTransmission> {
    slab_transmission_with_root(eps, eps.sqrt(), l, k)
}

/// As [`slab_transmission`] with an explicitly chosen branch of √ε.
pub fn slab_transmission_with_root(eps: Complex64, root: Complex64, l: f64, k: f64) -> Result<SlabTransmission> {
    if l < 0.0 {
        return Err(Error::domain("slab thickness must be non-negative"));
    }
    let psi = root * (l * k);
    let t = 2.0 * root / (2.0 * root * psi.cos() - I * (1.0 + eps) * psi.sin());
    Ok(SlabTransmission { t, intensity: t.norm_sqr() })
}

/// Extinction cross section of a homogeneous ball of radius `radius` and
/// permittivity `eps` (Mie series). This is the continuum prediction for the
/// same observable that [`cross_section_spectrum`] gives microscopically.
pub fn sphere_extinction(eps: Complex64, radius: f64, k: f64) -> Result<f64> {
    if !(radius > 0.0) || !(k > 0.0) {
        return Err(Error::domain("sphere radius and wavenumber must be positive"));
    }
    let m = eps.sqrt();
    let x = k * radius;
    let mx = m * x;
    let n_stop = (x + 4.0 * x.cbrt() + 2.0).ceil() as usize;
    // Logarithmic derivative of ψ_n(mx) is stable only by downward recurrence.
    let n_start = n_stop.max(mx.norm().ceil() as usize) + 15;
    let mut d = vec![Complex64::ZERO; n_start + 1];
    for n in (1..=n_start).rev() {
        let q = n as f64 / mx;
        d[n - 1] = q - 1.0 / (d[n] + q);
    }
    let (mut psi_prev, mut psi) = (x.cos(), x.sin());
    let (mut chi_prev, mut chi) = (-x.sin(), x.cos());
    let mut sum = 0.0;
    for n in 1..=n_stop {
        let nf = n as f64;
        let psi_n = (2.0 * nf - 1.0) / x * psi - psi_prev;
        let chi_n = (2.0 * nf - 1.0) / x * chi - chi_prev;
        let xi_n = Complex64::new(psi_n, -chi_n);
        let xi_prev = Complex64::new(psi, -chi);
        let ta = d[n] / m + nf / x;
        let tb = d[n] * m + nf / x;
        let a = (ta * psi_n - psi) / (ta * xi_n - xi_prev);
        let b = (tb * psi_n - psi) / (tb * xi_n - xi_prev);
        sum += (2.0 * nf + 1.0) * (a + b).re;
        psi_prev = psi;
        psi = psi_n;
        chi_prev = chi;
        chi = chi_n;
    }
    let q = 2.0 * std::f64::consts::PI / (k * k) * sum;
    if !q.is_finite() {
        return Err(Error::numeric("Mie series did not converge"));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_field_is_transverse() {
        let r = Vector3::new(0.0, 0.0, 400.0);
        let g = field_green_tensor(&r, 1.0).unwrap();
        assert!(g[(2, 2)].norm() / g[(0, 0)].norm() < 2.0 / 400.0 * 1.05);
    }

    #[test]
    fn single_atom_resonance() {
        let c = Configuration::new(vec![Vector3::zeros()], DipoleModel::Vector, 0.0);
        let e = Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO);
        let q = total_cross_section(&c, &Vector3::z(), &e).unwrap();
        assert!((q - 6.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn dilute_epsilon_tends_to_one() {
        let e = self_consistent_epsilon(1e-9, 0.3).unwrap();
        assert!((e.eps - 1.0).norm() < 1e-7);
    }
}
