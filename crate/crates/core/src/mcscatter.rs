//! Monte-Carlo multiple scattering with full polarisation.
//!
//! Trajectories are sampled from the ladder (intensity) distribution with
//! forced collisions and expected-value escape: at every vertex the weight
//! that would leave the cloud along the new direction is tallied as escaped
//! and the rest is forced to collide. Free paths are drawn with the scalar
//! extinction κ of the passive medium; anisotropy, birefringence and gain
//! enter through the ratio |X·e|²/e^{−κτ} of the exact amplitude matrix to
//! the sampled attenuation.
//!
//! Detection uses next-event estimation at every vertex toward every
//! detector. The crossed (coherent backscattering) term re-traverses the
//! sampled chain in reverse order, so for reciprocal chains it equals the
//! ladder term chain by chain at exact backscattering.
//!
//! Positions are drawn from the smooth density, so returning to the same
//! scatterer has measure zero and recurrent scattering is absent.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::{erfc, erfc_inv};

use crate::angular::HalfInt;
use crate::error::{Error, Result};
use crate::medium::{
    dressed_blocks, dressed_propagator, raman_gain_susceptibility, raman_lines, scattering_tensor_with, susceptibility,
    Atom, ControlField, GroundState,
};
use crate::propagation::{amplitude_from_phase_vector, transverse_decompose, LocalFrame};

const I: Complex64 = Complex64::new(0.0, 1.0);
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;
/// Frequencies are snapped to this grid so that cache keys and physics agree.
const FREQ_QUANTUM: f64 = 1e-9;
/// Trajectories per deterministic accumulation chunk.
const CHUNK: u64 = 256;

/// Resonant cross section 2π(2F+1)/(2F0+1) in λbar².
pub fn resonance_cross_section(f0: HalfInt, f: HalfInt) -> f64 {
    TWO_PI * f.multiplicity() as f64 / f0.multiplicity() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityProfile {
    /// n0·exp(−r²/2r0²).
    Gaussian { r0: f64 },
    /// Uniform density inside a ball.
    UniformSphere { radius: f64 },
    /// Uniform density for |z| < thickness/2, unbounded in x and y.
    Slab { thickness: f64 },
}

impl DensityProfile {
    /// ∫ n/n0 along the line through the centre (λbar).
    pub fn central_column(&self) -> f64 {
        match *self {
            DensityProfile::Gaussian { r0 } => (TWO_PI).sqrt() * r0,
            DensityProfile::UniformSphere { radius } => 2.0 * radius,
            DensityProfile::Slab { thickness } => thickness,
        }
    }
}

/// Atomic cloud: density profile and a spatially uniform internal state.
#[derive(Debug, Clone)]
pub struct Cloud {
    pub n0: f64,
    pub profile: DensityProfile,
    pub atom: Atom,
    /// Ground-state density matrix at peak density n0; must be diagonal.
    pub ground: GroundState,
    pub control: Option<ControlField>,
}

impl Cloud {
    pub fn new(atom: Atom, ground: GroundState, profile: DensityProfile, control: Option<ControlField>) -> Result<Self> {
        ground.validate(&atom)?;
        let n0 = ground.density;
        if !(n0 > 0.0) {
            return Err(Error::domain("peak density n0 must be positive"));
        }
        let size = match profile {
            DensityProfile::Gaussian { r0 } => r0,
            DensityProfile::UniformSphere { radius } => radius,
            DensityProfile::Slab { thickness } => thickness,
        };
        if !(size > 0.0) {
            return Err(Error::domain("cloud size must be positive"));
        }
        let n = atom.n_ground();
        for a in 0..n {
            for b in 0..n {
                if a != b && ground.rho[(a, b)].norm() > 0.0 {
                    return Err(Error::domain("Monte-Carlo transport needs a diagonal ground density matrix"));
                }
            }
        }
        Ok(Self { n0, profile, atom, ground, control })
    }

    /// Cycling-transition cross section: highest ground to highest excited level.
    pub fn sigma0(&self) -> f64 {
        let f0 = self.atom.scheme.ground.iter().map(|l| l.f).max().expect("ground levels");
        let f = self.atom.scheme.excited.iter().map(|l| l.f).max().expect("excited levels");
        resonance_cross_section(f0, f)
    }

    /// Resonant optical depth through the centre: √(2π)n0σ0r0 (Gaussian),
    /// 2n0σ0R (sphere diameter), n0σ0L (slab).
    pub fn b0(&self) -> f64 {
        self.n0 * self.sigma0() * self.central_column()
    }

    fn central_column(&self) -> f64 {
        self.profile.central_column()
    }

    pub fn relative_density(&self, r: &Vector3<f64>) -> f64 {
        match self.profile {
            DensityProfile::Gaussian { r0 } => (-r.norm_squared() / (2.0 * r0 * r0)).exp(),
            DensityProfile::UniformSphere { radius } => f64::from(u8::from(r.norm() <= radius)),
            DensityProfile::Slab { thickness } => f64::from(u8::from(r.z.abs() <= thickness / 2.0)),
        }
    }

    /// Interval of the ray p + s·u (s ≥ 0) inside a bounded profile.
    fn chord(&self, p: &Vector3<f64>, u: &Vector3<f64>) -> (f64, f64) {
        match self.profile {
            DensityProfile::UniformSphere { radius } => {
                let s0 = p.dot(u);
                let disc = s0 * s0 - (p.norm_squared() - radius * radius);
                if disc <= 0.0 {
                    return (0.0, 0.0);
                }
                let root = disc.sqrt();
                ((-s0 - root).max(0.0), (-s0 + root).max(0.0))
            }
            DensityProfile::Slab { thickness } => {
                let h = thickness / 2.0;
                if u.z == 0.0 {
                    return if p.z.abs() <= h { (0.0, f64::INFINITY) } else { (0.0, 0.0) };
                }
                let t1 = (-h - p.z) / u.z;
                let t2 = (h - p.z) / u.z;
                (t1.min(t2).max(0.0), t1.max(t2).max(0.0))
            }
            DensityProfile::Gaussian { .. } => unreachable!("Gaussian columns are analytic"),
        }
    }

    fn gaussian_parts(r0: f64, p: &Vector3<f64>, u: &Vector3<f64>) -> (f64, f64) {
        let s0 = p.dot(u);
        let b2 = (p.norm_squared() - s0 * s0).max(0.0);
        let k = (-b2 / (2.0 * r0 * r0)).exp() * r0 * (std::f64::consts::PI / 2.0).sqrt();
        (k, s0 / (std::f64::consts::SQRT_2 * r0))
    }

    /// ∫₀ˢ n/n0 along p + t·u.
    pub fn column(&self, p: &Vector3<f64>, u: &Vector3<f64>, s: f64) -> f64 {
        match self.profile {
            DensityProfile::Gaussian { r0 } => {
                let (k, a) = Self::gaussian_parts(r0, p, u);
                k * (erfc(a) - erfc(a + s / (std::f64::consts::SQRT_2 * r0)))
            }
            _ => {
                let (lo, hi) = self.chord(p, u);
                (s.min(hi) - lo).max(0.0)
            }
        }
    }

    /// Relative column from p to infinity along u.
    pub fn column_to_exit(&self, p: &Vector3<f64>, u: &Vector3<f64>) -> f64 {
        match self.profile {
            DensityProfile::Gaussian { r0 } => {
                let (k, a) = Self::gaussian_parts(r0, p, u);
                k * erfc(a)
            }
            _ => {
                let (lo, hi) = self.chord(p, u);
                hi - lo
            }
        }
    }

    /// Geometric distance from p to the far edge of the medium along u
    /// (finite profiles only).
    pub fn distance_to_exit(&self, p: &Vector3<f64>, u: &Vector3<f64>) -> Option<f64> {
        match self.profile {
            DensityProfile::Gaussian { .. } => None,
            _ => Some(self.chord(p, u).1),
        }
    }

    /// Distance s with ∫₀ˢ n/n0 = c, or `None` if the ray leaves first.
    pub fn distance_for_column(&self, p: &Vector3<f64>, u: &Vector3<f64>, c: f64) -> Option<f64> {
        match self.profile {
            DensityProfile::Gaussian { r0 } => {
                let (k, a) = Self::gaussian_parts(r0, p, u);
                let target = erfc(a) - c / k;
                if !(target > 0.0) {
                    return None;
                }
                Some((erfc_inv(target) - a) * std::f64::consts::SQRT_2 * r0)
            }
            _ => {
                let (lo, hi) = self.chord(p, u);
                (lo + c < hi).then_some(lo + c)
            }
        }
    }

    /// Position drawn proportional to the density.
    pub fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        match self.profile {
            DensityProfile::Gaussian { r0 } => {
                use rand_distr::{Distribution, StandardNormal};
                let g = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
                Vector3::new(g(rng), g(rng), g(rng)) * r0
            }
            DensityProfile::UniformSphere { radius } => loop {
                let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                if p.norm_squared() <= 1.0 {
                    break p * radius;
                }
            },
            DensityProfile::Slab { thickness } => Vector3::new(0.0, 0.0, (rng.random::<f64>() - 0.5) * thickness),
        }
    }

    /// Radius of the entry disk for an external beam along −z and its start height.
    fn entry_geometry(&self) -> (f64, f64) {
        match self.profile {
            DensityProfile::Gaussian { r0 } => (6.0 * r0, 12.0 * r0),
            DensityProfile::UniformSphere { radius } => (radius, radius + 1.0),
            DensityProfile::Slab { thickness } => (0.0, thickness / 2.0 + 1.0),
        }
    }

    /// Area normalising beam-source intensities to cross sections (λbar²).
    pub fn entry_area(&self) -> f64 {
        match self.profile {
            DensityProfile::Slab { .. } => 1.0,
            _ => {
                let r = self.entry_geometry().0;
                std::f64::consts::PI * r * r
            }
        }
    }
}

/// Outcome of an analog free-path draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreePath {
    Collision { position: Vector3<f64>, distance: f64 },
    Escape,
}

/// Analog free path with survival exp(−κ∫n/n0 ds); κ = n0·σ_ex.
pub fn sample_free_path<R: Rng + ?Sized>(
    cloud: &Cloud,
    start: &Vector3<f64>,
    u: &Vector3<f64>,
    kappa: f64,
    rng: &mut R,
) -> FreePath {
    if kappa <= 0.0 {
        return FreePath::Escape;
    }
    let xi: f64 = rng.random();
    let c = -(1.0 - xi).ln() / kappa;
    match cloud.distance_for_column(start, u, c) {
        Some(s) => FreePath::Collision { position: start + u * s, distance: s },
        None => FreePath::Escape,
    }
}

/// One scattering channel m → m' with its tensor at a given input frequency.
#[derive(Debug, Clone)]
pub struct Channel {
    pub m_in: usize,
    pub m_out: usize,
    pub population: f64,
    pub omega_out: f64,
    pub alpha: Matrix3<Complex64>,
}

/// Medium response at one frequency, evaluated at peak density.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub omega: f64,
    /// Passive susceptibility plus Raman gain.
    pub chi: Matrix3<Complex64>,
    /// Sampling extinction per unit relative column: 4π Im tr(χ_passive)/3.
    pub kappa: f64,
    /// χ0 when χ is isotropic (fast propagation path).
    pub isotropic: Option<Complex64>,
    pub channels: Vec<Channel>,
}

impl Spectral {
    pub fn new(cloud: &Cloud, omega: f64, with_gain: bool) -> Result<Self> {
        let control = cloud.control.as_ref();
        let passive = susceptibility(&cloud.atom, &cloud.ground, control, omega)?.chi;
        let mut chi = passive;
        if let (Some(c), true) = (control, with_gain) {
            chi += raman_gain_susceptibility(&cloud.atom, &cloud.ground, c, omega);
        }
        let kappa = FOUR_PI * passive.trace().im / 3.0;
        if !(kappa > 0.0) {
            return Err(Error::numeric(format!("no passive extinction at ω={omega}; free paths cannot be sampled")));
        }
        let chi0 = chi.trace() / 3.0;
        let off = (chi - Matrix3::from_diagonal_element(chi0)).norm();
        let isotropic = (off <= 1e-13 * chi0.norm()).then_some(chi0);
        let blocks = dressed_blocks(&cloud.atom, control);
        let mut channels = Vec::new();
        for m in 0..cloud.atom.n_ground() {
            let p = cloud.ground.population(m);
            if p <= 0.0 {
                continue;
            }
            let e = Complex64::new(omega + cloud.atom.ground[m].energy, 0.0);
            let g = dressed_propagator(&cloud.atom, control, &blocks, e)?;
            for mp in 0..cloud.atom.n_ground() {
                let t = scattering_tensor_with(&cloud.atom, &g, mp, m, omega);
                if t.alpha.norm() == 0.0 {
                    continue;
                }
                channels.push(Channel {
                    m_in: m,
                    m_out: mp,
                    population: p,
                    omega_out: snap(t.omega_out),
                    alpha: t.alpha,
                });
            }
        }
        Ok(Self { omega, chi, kappa, isotropic, channels })
    }

    pub fn sigma_samp(&self, n0: f64) -> f64 {
        self.kappa / n0
    }

    /// Lab-frame transverse amplitude operator for a segment along u
    /// carrying relative column `col`.
    pub fn segment(&self, u: &Vector3<f64>, col: f64) -> Matrix3<Complex64> {
        if let Some(chi0) = self.isotropic {
            let phase = (I * (TWO_PI * col) * chi0).exp();
            let p = Matrix3::identity() - u * u.transpose();
            return p.map(|x| phase * x);
        }
        let t = transverse_decompose(&self.chi, u);
        let x = amplitude_from_phase_vector(t.chi0 * (TWO_PI * col), &(t.chivec * Complex64::from(TWO_PI * col)));
        x.embed(&LocalFrame::for_ray(u))
    }

    fn channel(&self, m_in: usize, m_out: usize) -> Option<&Channel> {
        self.channels.iter().find(|c| c.m_in == m_in && c.m_out == m_out)
    }
}

fn snap(omega: f64) -> f64 {
    (omega / FREQ_QUANTUM).round() * FREQ_QUANTUM
}

fn freq_key(omega: f64) -> i64 {
    (omega / FREQ_QUANTUM).round() as i64
}

/// Shared, immutable-after-insert cache of spectral data keyed by frequency.
pub struct SpectralCache<'a> {
    cloud: &'a Cloud,
    with_gain: bool,
    map: RwLock<HashMap<i64, Arc<Spectral>>>,
}

impl<'a> SpectralCache<'a> {
    pub fn new(cloud: &'a Cloud, with_gain: bool) -> Self {
        Self { cloud, with_gain, map: RwLock::new(HashMap::new()) }
    }

    pub fn get(&self, omega: f64) -> Result<Arc<Spectral>> {
        let key = freq_key(omega);
        if let Some(s) = self.map.read().expect("cache lock").get(&key) {
            return Ok(s.clone());
        }
        let s = Arc::new(Spectral::new(self.cloud, key as f64 * FREQ_QUANTUM, self.with_gain)?);
        Ok(self.map.write().expect("cache lock").entry(key).or_insert(s).clone())
    }
}

/// Outgoing event sampled at one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterOutcome {
    pub direction: Vector3<f64>,
    pub polarization: Vector3<Complex64>,
    pub channel: usize,
    pub omega_out: f64,
    /// Multiplicative weight factor σ_sc(e)/σ_samp.
    pub weight: f64,
}

/// Per-channel scattering cross sections (8π/3)ρ_m|α e|² for polarisation e.
pub fn channel_cross_sections(spec: &Spectral, e: &Vector3<Complex64>) -> Vec<f64> {
    spec.channels
        .iter()
        .map(|c| c.population * (8.0 * std::f64::consts::PI / 3.0) * (c.alpha * e).norm_squared())
        .collect()
}

fn transverse(v: &Vector3<Complex64>, u: &Vector3<f64>) -> Vector3<Complex64> {
    let uc = u.map(Complex64::from);
    v - uc * uc.dot(v)
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi = TWO_PI * rng.random::<f64>();
    let s = (1.0 - z * z).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Direction drawn from |P(u)v|² by rejection against the uniform sphere.
fn sample_dipole_direction<R: Rng + ?Sized>(v: &Vector3<Complex64>, rng: &mut R) -> Vector3<f64> {
    let vv = v.norm_squared();
    loop {
        let u = random_direction(rng);
        if rng.random::<f64>() * vv <= transverse(v, &u).norm_squared() {
            return u;
        }
    }
}

/// Samples channel, direction and polarisation in proportion to the
/// polarisation-resolved differential cross section.
pub fn scatter_event<R: Rng + ?Sized>(
    spec: &Spectral,
    n0: f64,
    e: &Vector3<Complex64>,
    rng: &mut R,
) -> Result<ScatterOutcome> {
    let sigmas = channel_cross_sections(spec, e);
    let total: f64 = sigmas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numeric("no scattering channel open for this polarisation"));
    }
    let mut pick = rng.random::<f64>() * total;
    let mut channel = sigmas.len() - 1;
    for (i, s) in sigmas.iter().enumerate() {
        if pick < *s {
            channel = i;
            break;
        }
        pick -= s;
    }
    let c = &spec.channels[channel];
    let v = c.alpha * e;
    let u = sample_dipole_direction(&v, rng);
    let pv = transverse(&v, &u);
    Ok(ScatterOutcome {
        direction: u,
        polarization: pv / Complex64::from(pv.norm()),
        channel,
        omega_out: c.omega_out,
        weight: total / spec.sigma_samp(n0),
    })
}

/// Far-field detector: outgoing direction and analyser polarisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub direction: Vector3<f64>,
    pub polarization: Vector3<Complex64>,
}

/// Backscattering detection channels for a beam incident along −z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolarizationChannel {
    LinPar,
    LinPerp,
    HelPar,
    HelPerp,
}

impl PolarizationChannel {
    pub const ALL: [PolarizationChannel; 4] = [Self::LinPar, Self::LinPerp, Self::HelPar, Self::HelPerp];

    pub fn label(self) -> &'static str {
        match self {
            Self::LinPar => "lin_par",
            Self::LinPerp => "lin_perp",
            Self::HelPar => "hel_par",
            Self::HelPerp => "hel_perp",
        }
    }

    pub fn is_helical(self) -> bool {
        matches!(self, Self::HelPar | Self::HelPerp)
    }

    /// Incident polarisation: x̂ for linear, (x̂ + iŷ)/√2 for helical channels.
    pub fn input(self) -> Vector3<Complex64> {
        if self.is_helical() {
            Vector3::new(Complex64::ONE, I, Complex64::ZERO) / Complex64::from(std::f64::consts::SQRT_2)
        } else {
            Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO)
        }
    }

    /// Detector at angle θ from exact backscattering, rotated about y.
    /// The helicity-preserving analyser is the rotated conjugate of the input.
    pub fn detector(self, theta: f64) -> Detector {
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), theta);
        let direction = rot * Vector3::z();
        let r = rot.matrix().map(Complex64::from);
        let polarization = match self {
            Self::LinPar => r * Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO),
            Self::LinPerp => r * Vector3::new(Complex64::ZERO, Complex64::ONE, Complex64::ZERO),
            Self::HelPar => r * self.input().conjugate(),
            Self::HelPerp => r * self.input(),
        };
        Detector { direction, polarization }
    }
}

/// Where trajectories start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    /// Plane wave along −z with the given polarisation and detuning.
    Beam { polarization: Vector3<Complex64>, omega: f64 },
    /// Spontaneous Raman emission from the pumped atoms, density-weighted,
    /// at the Raman line centre.
    SpontaneousRaman,
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub source: Source,
    pub detectors: Vec<Detector>,
    pub max_order: usize,
    /// Trajectories stop once their weight falls below this.
    pub weight_floor: f64,
    pub crossed: bool,
    /// Include the Raman gain susceptibility in segment amplitudes.
    pub gain: bool,
    /// Heuristic residual-motion dephasing: the crossed term of order N is
    /// multiplied by this factor to the power N − 1.
    pub crossed_damping: f64,
    /// Escape-time histogram (bin width, bin count) in λbar of path length.
    pub time_histogram: Option<(f64, usize)>,
    /// Number of final orders examined by the instability test.
    pub tail_window: usize,
    pub workers: usize,
}

impl McConfig {
    pub fn beam(polarization: Vector3<Complex64>, omega: f64) -> Self {
        Self {
            source: Source::Beam { polarization, omega },
            detectors: Vec::new(),
            max_order: 50,
            weight_floor: 1e-8,
            crossed: false,
            gain: true,
            crossed_damping: 1.0,
            time_histogram: None,
            tail_window: 5,
            workers: 1,
        }
    }
}

/// Sum and sum of squares per scattering order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderStats {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl OrderStats {
    fn new(orders: usize) -> Self {
        Self { sum: vec![0.0; orders], sum_sq: vec![0.0; orders] }
    }

    fn add(&mut self, order: usize, v: f64) {
        self.sum[order] += v;
        self.sum_sq[order] += v * v;
    }

    fn merge(&mut self, o: &OrderStats) {
        for (a, b) in self.sum.iter_mut().zip(&o.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&o.sum_sq) {
            *a += b;
        }
    }

    /// Mean per trajectory and its standard error, per order.
    pub fn mean_and_error(&self, n: u64) -> Vec<(f64, f64)> {
        let nf = n as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, s2)| {
                let mean = s / nf;
                let var = if n > 1 { ((s2 / nf - mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
                (mean, var.sqrt())
            })
            .collect()
    }
}

/// Per-trajectory totals of multiple-scattering ladder and crossed terms,
/// kept for ratio statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairMoments {
    pub l: f64,
    pub c: f64,
    pub ll: f64,
    pub cc: f64,
    pub lc: f64,
}

impl PairMoments {
    fn push(&mut self, l: f64, c: f64) {
        self.l += l;
        self.c += c;
        self.ll += l * l;
        self.cc += c * c;
        self.lc += l * c;
    }

    fn merge(&mut self, o: &PairMoments) {
        self.l += o.l;
        self.c += o.c;
        self.ll += o.ll;
        self.cc += o.cc;
        self.lc += o.lc;
    }

    /// (L + C)/L with a delta-method standard error.
    pub fn enhancement(&self, n: u64) -> (f64, f64) {
        let nf = n as f64;
        let (ml, mc) = (self.l / nf, self.c / nf);
        if ml == 0.0 {
            return (1.0, 0.0);
        }
        let vl = self.ll / nf - ml * ml;
        let vc = self.cc / nf - mc * mc;
        let cov = self.lc / nf - ml * mc;
        let r = mc / ml;
        let var = (vc - 2.0 * r * cov + r * r * vl) / (ml * ml * nf);
        (1.0 + r, var.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTally {
    pub ladder: OrderStats,
    pub crossed: OrderStats,
    /// Orders ≥ 2 only.
    pub multiple: PairMoments,
}

/// Accumulators of a Monte-Carlo run; intensities are per injected
/// trajectory (multiply by `scale` for λbar²/sr with a beam source).
#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub trajectories: u64,
    pub scale: f64,
    pub detectors: Vec<DetectorTally>,
    /// Weight leaving the medium after n scatterings (n = 0: unscattered).
    pub escaped: OrderStats,
    pub absorbed: f64,
    /// Net weight created by gain along segments.
    pub amplified: f64,
    /// Weight dropped at the order cap or below the weight floor.
    pub truncated: f64,
    /// Trajectories stopped by the order cap; weight-floor stops are not counted.
    pub truncated_runs: u64,
    pub time_histogram: Option<Vec<f64>>,
    pub unstable: bool,
}

impl McResult {
    fn empty(cfg: &McConfig, scale: f64) -> Self {
        let orders = cfg.max_order + 1;
        Self {
            trajectories: 0,
            scale,
            detectors: cfg
                .detectors
                .iter()
                .map(|_| DetectorTally {
                    ladder: OrderStats::new(orders),
                    crossed: OrderStats::new(orders),
                    multiple: PairMoments::default(),
                })
                .collect(),
            escaped: OrderStats::new(orders),
            absorbed: 0.0,
            amplified: 0.0,
            truncated: 0.0,
            truncated_runs: 0,
            time_histogram: cfg.time_histogram.map(|(_, n)| vec![0.0; n]),
            unstable: false,
        }
    }

    fn merge(&mut self, o: &McResult) {
        self.trajectories += o.trajectories;
        for (a, b) in self.detectors.iter_mut().zip(&o.detectors) {
            a.ladder.merge(&b.ladder);
            a.crossed.merge(&b.crossed);
            a.multiple.merge(&b.multiple);
        }
        self.escaped.merge(&o.escaped);
        self.absorbed += o.absorbed;
        self.amplified += o.amplified;
        self.truncated += o.truncated;
        self.truncated_runs += o.truncated_runs;
        if let (Some(a), Some(b)) = (self.time_histogram.as_mut(), o.time_histogram.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Total escaped weight per injected trajectory.
    pub fn escaped_fraction(&self) -> f64 {
        self.escaped.sum.iter().sum::<f64>() / self.trajectories as f64
    }

    /// Mean escaped intensity per order.
    pub fn escaped_by_order(&self) -> Vec<(f64, f64)> {
        self.escaped.mean_and_error(self.trajectories)
    }
}

/// Tail test on order-resolved intensities: the least-squares geometric
/// ratio I_{n+1}/I_n over the last `window` populated orders exceeds 1.
/// A fit rather than the endpoint ratio keeps the flag robust to noise in
/// the sparsely sampled high orders.
pub fn tail_growing(intensity: &[f64], window: usize) -> bool {
    tail_log_ratio(intensity, window).is_some_and(|s| s > 0.0)
}

/// Fitted ln(I_{n+1}/I_n) over the last `window` populated orders.
pub fn tail_log_ratio(intensity: &[f64], window: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        intensity.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(n, v)| (n as f64, v.ln())).collect();
    let tail = &pts[pts.len().saturating_sub(window)..];
    if tail.len() < 2 {
        return None;
    }
    let k = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / k;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

struct Vertex {
    position: Vector3<f64>,
    channel: Option<(usize, usize)>,
}

struct Engine<'a> {
    cloud: &'a Cloud,
    cfg: &'a McConfig,
    cache: SpectralCache<'a>,
    k_in: Vector3<f64>,
}

impl<'a> Engine<'a> {
    /// Amplitude of the ordered path through `vertices` (first element is
    /// hit first), with the channel of each vertex, excluding the
    /// configuration phase e^{ik_in·r_first − ik_out·r_last}.
    fn path_amplitude(
        &self,
        vertices: &[(Vector3<f64>, usize, usize)],
        e_in: &Vector3<Complex64>,
        omega_in: f64,
        det: &Detector,
    ) -> Result<Complex64> {
        let mut omega = omega_in;
        let first = vertices[0].0;
        let spec = self.cache.get(omega)?;
        let col = self.cloud.column_to_exit(&first, &-self.k_in);
        let mut v = spec.segment(&self.k_in, col) * e_in;
        for (i, (r, m_in, m_out)) in vertices.iter().enumerate() {
            let spec = self.cache.get(omega)?;
            let ch = spec
                .channel(*m_in, *m_out)
                .ok_or_else(|| Error::numeric("reverse path visits a closed channel"))?;
            v = ch.alpha * v;
            omega = ch.omega_out;
            let spec = self.cache.get(omega)?;
            let (next, u, col) = match vertices.get(i + 1) {
                Some(n) => {
                    let d = n.0 - r;
                    let len = d.norm();
                    let u = d / len;
                    (true, u, self.cloud.column(r, &u, len))
                }
                None => (false, det.direction, self.cloud.column_to_exit(r, &det.direction)),
            };
            v = spec.segment(&u, col) * v;
            if !next {
                break;
            }
        }
        Ok(det.polarization.conjugate().dot(&v))
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<State>> {
        match self.cfg.source {
            Source::Beam { polarization, omega } => {
                let (radius, height) = self.cloud.entry_geometry();
                let (x, y) = loop {
                    let x = rng.random_range(-1.0..1.0);
                    let y = rng.random_range(-1.0..1.0);
                    if x * x + y * y <= 1.0 {
                        break (x * radius, y * radius);
                    }
                };
                let e = polarization / Complex64::from(polarization.norm());
                Ok(Some(State {
                    position: Vector3::new(x, y, height),
                    direction: self.k_in,
                    polarization: e,
                    omega: snap(omega),
                    weight: 1.0,
                    order: 0,
                    path: 0.0,
                    log_vd: 0.0,
                }))
            }
            Source::SpontaneousRaman => {
                let control = self
                    .cloud
                    .control
                    .as_ref()
                    .ok_or_else(|| Error::domain("spontaneous Raman source needs a control field"))?;
                let lines = raman_lines(&self.cloud.atom, &self.cloud.ground, control);
                let strengths: Vec<f64> = lines.iter().map(|l| l.weight * l.dipole.norm_squared()).collect();
                let total: f64 = strengths.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::domain("no Raman emission lines for this pump configuration"));
                }
                let mut pick = rng.random::<f64>() * total;
                let mut idx = lines.len() - 1;
                for (i, s) in strengths.iter().enumerate() {
                    if pick < *s {
                        idx = i;
                        break;
                    }
                    pick -= s;
                }
                let line = &lines[idx];
                let position = self.cloud.sample_position(rng);
                let u = sample_dipole_direction(&line.dipole, rng);
                let pv = transverse(&line.dipole, &u);
                Ok(Some(State {
                    position,
                    direction: u,
                    polarization: pv / Complex64::from(pv.norm()),
                    omega: snap(line.omega_r),
                    weight: 1.0,
                    order: 0,
                    path: 0.0,
                    log_vd: 0.0,
                }))
            }
        }
    }

    fn run_chunk(&self, chunk: u64, n_total: u64, seed: u64) -> Result<McResult> {
        let mut acc = McResult::empty(self.cfg, 0.0);
        let start = chunk * CHUNK;
        let end = (start + CHUNK).min(n_total);
        for t in start..end {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            self.run_trajectory(&mut rng, &mut acc)?;
            acc.trajectories += 1;
        }
        Ok(acc)
    }

    /// Forced-collision step along the current direction. Returns false
    /// when nothing remains to scatter.
    fn advance<R: Rng + ?Sized>(&self, s: &mut State, acc: &mut McResult, rng: &mut R) -> Result<bool> {
        let spec = self.cache.get(s.omega)?;
        let c_exit = self.cloud.column_to_exit(&s.position, &s.direction);
        let x_exit = spec.segment(&s.direction, c_exit);
        let escape = s.weight * (x_exit * s.polarization).norm_squared();
        acc.escaped.add(s.order, escape);
        if let (Some(h), Some((width, _))) = (acc.time_histogram.as_mut(), self.cfg.time_histogram) {
            if let Some(d) = self.cloud.distance_to_exit(&s.position, &s.direction) {
                let bin = ((s.path + d) / width) as usize;
                if bin < h.len() {
                    h[bin] += escape;
                }
            }
        }
        let p_int = -(-spec.kappa * c_exit).exp_m1();
        if !(p_int > 0.0) {
            return Ok(false);
        }
        // Truncated exponential in column, inverted through the density.
        let xi: f64 = rng.random();
        let col = -(-xi * p_int).ln_1p() / spec.kappa;
        let Some(dist) = self.cloud.distance_for_column(&s.position, &s.direction, col) else {
            // Only reachable by rounding at the far edge of the chord.
            acc.truncated += s.weight * p_int;
            return Ok(false);
        };
        let x = spec.segment(&s.direction, col);
        let v = x * s.polarization;
        let vn = v.norm();
        let before = s.weight * p_int;
        s.weight = before * vn * vn / (-spec.kappa * col).exp();
        acc.amplified += s.weight - before;
        s.polarization = v / Complex64::from(vn);
        s.log_vd += vn.ln();
        s.position += s.direction * dist;
        s.path += dist;
        s.order += 1;
        Ok(true)
    }

    fn run_trajectory<R: Rng + ?Sized>(&self, rng: &mut R, acc: &mut McResult) -> Result<()> {
        let Some(mut s) = self.initial_state(rng)? else { return Ok(()) };
        let beam = matches!(self.cfg.source, Source::Beam { .. });
        let omega_in = s.omega;
        let e_in = s.polarization;
        let nd = self.cfg.detectors.len();
        let mut vertices: Vec<Vertex> = Vec::new();
        // Reverse-path row vectors divided by the direct amplitude norm,
        // valid while every channel so far is elastic.
        let mut rows: Vec<Vector3<Complex64>> = vec![Vector3::zeros(); nd];
        let mut elastic = true;
        let mut first_pos = Vector3::zeros();
        let mut ms_l = vec![0.0; nd];
        let mut ms_c = vec![0.0; nd];
        let crossed = self.cfg.crossed && beam;

        if !self.advance(&mut s, acc, rng)? {
            return Ok(());
        }
        loop {
            let spec = self.cache.get(s.omega)?;
            let sigma_samp = spec.sigma_samp(self.cloud.n0);
            let j = s.order;
            if j == 1 {
                first_pos = s.position;
                if crossed {
                    let scale = (-s.log_vd).exp();
                    for (d, det) in self.cfg.detectors.iter().enumerate() {
                        let col = self.cloud.column_to_exit(&s.position, &det.direction);
                        let x_out = spec.segment(&det.direction, col);
                        rows[d] = (x_out.transpose() * det.polarization.conjugate()) * Complex64::from(scale);
                    }
                }
            }
            // Next-event estimation toward each detector.
            for (d, det) in self.cfg.detectors.iter().enumerate() {
                let mut lad = 0.0;
                let mut crs = 0.0;
                let phase = if crossed && j >= 2 {
                    (I * (self.k_in + det.direction).dot(&(s.position - first_pos))).exp()
                } else {
                    Complex64::ZERO
                };
                let x_in = if crossed && j >= 2 {
                    let spec_in = self.cache.get(omega_in)?;
                    let col = self.cloud.column_to_exit(&s.position, &-self.k_in);
                    Some(spec_in.segment(&self.k_in, col) * e_in)
                } else {
                    None
                };
                for ch in &spec.channels {
                    let spec_out = self.cache.get(ch.omega_out)?;
                    let col = self.cloud.column_to_exit(&s.position, &det.direction);
                    let x_out = spec_out.segment(&det.direction, col);
                    let a_d = det.polarization.conjugate().dot(&(x_out * (ch.alpha * s.polarization)));
                    lad += ch.population * a_d.norm_sqr();
                    if let Some(xin) = &x_in {
                        let a_r = if elastic && ch.omega_out == omega_in {
                            rows[d].dot(&(ch.alpha * xin))
                        } else {
                            let mut path: Vec<(Vector3<f64>, usize, usize)> = Vec::with_capacity(j);
                            path.push((s.position, ch.m_in, ch.m_out));
                            for v in vertices.iter().rev() {
                                let (mi, mo) = v.channel.expect("earlier vertices have channels");
                                path.push((v.position, mi, mo));
                            }
                            self.path_amplitude(&path, &e_in, omega_in, det)? * (-s.log_vd).exp()
                        };
                        crs += ch.population * (a_d.conj() * a_r * phase).re;
                    }
                }
                let damping = self.cfg.crossed_damping.powi(j as i32 - 1);
                let l = s.weight * lad / sigma_samp;
                let c = s.weight * crs * damping / sigma_samp;
                acc.detectors[d].ladder.add(j, l);
                if j >= 2 {
                    acc.detectors[d].crossed.add(j, c);
                    ms_l[d] += l;
                    ms_c[d] += c;
                }
            }
            if j >= self.cfg.max_order || s.weight < self.cfg.weight_floor {
                acc.truncated += s.weight;
                acc.truncated_runs += u64::from(j >= self.cfg.max_order);
                break;
            }
            let out = scatter_event(&spec, self.cloud.n0, &s.polarization, rng)?;
            let ch = &spec.channels[out.channel];
            let before = s.weight;
            s.weight *= out.weight;
            acc.absorbed += before - s.weight;
            let v = ch.alpha * s.polarization;
            let pv = transverse(&v, &out.direction);
            s.log_vd += pv.norm().ln();
            let from = s.position;
            vertices.push(Vertex { position: from, channel: Some((ch.m_in, ch.m_out)) });
            let was_elastic = ch.omega_out == s.omega;
            s.direction = out.direction;
            s.polarization = out.polarization;
            s.omega = out.omega_out;
            let alpha = ch.alpha;
            let norm_before = s.log_vd;
            if !self.advance(&mut s, acc, rng)? {
                break;
            }
            elastic &= was_elastic;
            if crossed && elastic {
                // ρ̂ ← ρ̂·α·X(r_{j+1} → r_j) / |direct growth|.
                let d = s.position - from;
                let len = d.norm();
                let back = -d / len;
                let spec_now = self.cache.get(s.omega)?;
                let x_back = spec_now.segment(&back, self.cloud.column(&s.position, &back, len));
                let growth = (s.log_vd - norm_before + pv.norm().ln()).exp();
                for row in rows.iter_mut() {
                    *row = (x_back.transpose() * (alpha.transpose() * *row)) / Complex64::from(growth);
                }
            }
        }
        if crossed {
            for d in 0..nd {
                acc.detectors[d].multiple.push(ms_l[d], ms_c[d]);
            }
        }
        Ok(())
    }
}

struct State {
    position: Vector3<f64>,
    direction: Vector3<f64>,
    polarization: Vector3<Complex64>,
    omega: f64,
    weight: f64,
    order: usize,
    /// Geometric path length travelled (λbar).
    path: f64,
    /// ln of the direct-path amplitude norm arriving at the current vertex.
    log_vd: f64,
}

/// Runs `trajectories` histories. Results depend only on (seed, count):
/// each trajectory owns RNG stream `index` and chunks merge in index order.
pub fn simulate(cloud: &Cloud, cfg: &McConfig, trajectories: u64, seed: u64) -> Result<McResult> {
    if cfg.max_order == 0 {
        return Err(Error::domain("max_order must be at least 1"));
    }
    if cfg.workers == 0 {
        return Err(Error::domain("at least one worker is required"));
    }
    let engine = Engine { cloud, cfg, cache: SpectralCache::new(cloud, cfg.gain), k_in: -Vector3::z() };
    let chunks = trajectories.div_ceil(CHUNK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::numeric(format!("thread pool: {e}")))?;
    let parts: Vec<Result<McResult>> =
        pool.install(|| (0..chunks).into_par_iter().map(|c| engine.run_chunk(c, trajectories, seed)).collect());
    let scale = match cfg.source {
        Source::Beam { .. } => cloud.entry_area(),
        Source::SpontaneousRaman => 1.0,
    };
    let mut total = McResult::empty(cfg, scale);
    for p in parts {
        total.merge(&p?);
    }
    let escaped: Vec<f64> = total.escaped_by_order().iter().map(|p| p.0).collect();
    total.unstable = tail_growing(&escaped, cfg.tail_window);
    Ok(total)
}

/// Ladder transport with detection; any control field dresses the medium
/// but Raman gain is left out of the segment amplitudes.
pub fn simulate_ladder(cloud: &Cloud, cfg: &McConfig, trajectories: u64, seed: u64) -> Result<McResult> {
    let cfg = McConfig { crossed: false, gain: false, ..cfg.clone() };
    simulate(cloud, &cfg, trajectories, seed)
}

/// Transport with Raman gain from the control-driven atoms. Without a
/// control field this is exactly [`simulate_ladder`].
pub fn gain_transport(cloud: &Cloud, cfg: &McConfig, trajectories: u64, seed: u64) -> Result<McResult> {
    let cfg = McConfig { crossed: false, gain: cloud.control.is_some(), ..cfg.clone() };
    simulate(cloud, &cfg, trajectories, seed)
}

/// Coherent-backscattering cone for one polarisation channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CbsResult {
    pub channel: PolarizationChannel,
    pub theta: Vec<f64>,
    /// Single scattering S(θ), λbar²/sr.
    pub single: Vec<f64>,
    /// Multiple-scattering ladder L(θ), λbar²/sr.
    pub ladder: Vec<f64>,
    /// Crossed term C(θ), λbar²/sr.
    pub crossed: Vec<f64>,
    pub single_err: Vec<f64>,
    pub ladder_err: Vec<f64>,
    pub crossed_err: Vec<f64>,
    /// (S + L + C)/(S + L).
    pub eta: Vec<f64>,
    /// (L + C)/L: single scattering excluded.
    pub eta_multiple: Vec<f64>,
    pub eta_multiple_err: Vec<f64>,
    /// Per-order ladder and crossed means at each θ.
    pub by_order: Vec<Vec<(f64, f64)>>,
    pub trajectories: u64,
}

/// CBS enhancement over a θ grid for one channel. A beam with the channel's
/// input polarisation enters along −z at detuning `omega`.
pub fn cbs_enhancement(
    cloud: &Cloud,
    base: &McConfig,
    channel: PolarizationChannel,
    omega: f64,
    theta: &[f64],
    trajectories: u64,
    seed: u64,
) -> Result<CbsResult> {
    let cfg = McConfig {
        source: Source::Beam { polarization: channel.input(), omega },
        detectors: theta.iter().map(|t| channel.detector(*t)).collect(),
        crossed: true,
        gain: false,
        ..base.clone()
    };
    let r = simulate(cloud, &cfg, trajectories, seed)?;
    let n = r.trajectories;
    let mut out = CbsResult {
        channel,
        theta: theta.to_vec(),
        single: vec![],
        ladder: vec![],
        crossed: vec![],
        single_err: vec![],
        ladder_err: vec![],
        crossed_err: vec![],
        eta: vec![],
        eta_multiple: vec![],
        eta_multiple_err: vec![],
        by_order: vec![],
        trajectories: n,
    };
    for det in &r.detectors {
        let lad = det.ladder.mean_and_error(n);
        let crs = det.crossed.mean_and_error(n);
        let single = lad[1].0 * r.scale;
        let ladder: f64 = lad[2..].iter().map(|p| p.0).sum::<f64>() * r.scale;
        let crossed: f64 = crs[2..].iter().map(|p| p.0).sum::<f64>() * r.scale;
        let nf = n as f64;
        let m = &det.multiple;
        let err = |s: f64, s2: f64| ((s2 / nf - (s / nf).powi(2)).max(0.0) / (nf - 1.0).max(1.0)).sqrt() * r.scale;
        out.single.push(single);
        out.single_err.push(lad[1].1 * r.scale);
        out.ladder.push(ladder);
        out.ladder_err.push(err(m.l, m.ll));
        out.crossed.push(crossed);
        out.crossed_err.push(err(m.c, m.cc));
        let denom = single + ladder;
        out.eta.push(if denom > 0.0 { (denom + crossed) / denom } else { 1.0 });
        let (em, ee) = m.enhancement(n);
        out.eta_multiple.push(em);
        out.eta_multiple_err.push(ee);
        out.by_order.push(lad.iter().zip(&crs).map(|(a, b)| (a.0 * r.scale, b.0 * r.scale)).collect());
    }
    Ok(out)
}

/// Direct and reversed amplitudes of a fixed chain (first position is hit
/// first), including the configuration phases. Channels are (m, m') pairs
/// valid at the frequencies the path reaches them.
pub fn chain_amplitudes(
    cloud: &Cloud,
    positions: &[Vector3<f64>],
    channels: &[(usize, usize)],
    e_in: &Vector3<Complex64>,
    omega: f64,
    det: &Detector,
) -> Result<(Complex64, Complex64)> {
    if positions.len() != channels.len() || positions.is_empty() {
        return Err(Error::domain("chain needs one channel per position"));
    }
    let cfg = McConfig::beam(*e_in, omega);
    let engine = Engine { cloud, cfg: &cfg, cache: SpectralCache::new(cloud, false), k_in: -Vector3::z() };
    let omega = snap(omega);
    let forward: Vec<_> = positions.iter().zip(channels).map(|(p, c)| (*p, c.0, c.1)).collect();
    let reverse: Vec<_> = forward.iter().rev().copied().collect();
    let (r1, rn) = (positions[0], positions[positions.len() - 1]);
    let k_out = det.direction;
    let k_in = engine.k_in;
    let ph_d = (I * (k_in.dot(&r1) - k_out.dot(&rn))).exp();
    let ph_r = (I * (k_in.dot(&rn) - k_out.dot(&r1))).exp();
    let a_d = engine.path_amplitude(&forward, e_in, omega, det)? * ph_d;
    let a_r = engine.path_amplitude(&reverse, e_in, omega, det)? * ph_r;
    Ok((a_d, a_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::LevelScheme;

    fn two_level_cloud(b0: f64) -> Cloud {
        let atom = Atom::new(&LevelScheme::two_level_0_1());
        let r0 = 10.0;
        let n0 = b0 / ((TWO_PI).sqrt() * 6.0 * std::f64::consts::PI * r0);
        let ground = GroundState::isotropic(&atom, &[(HalfInt::ZERO, 1.0)], n0).unwrap();
        Cloud::new(atom, ground, DensityProfile::Gaussian { r0 }, None).unwrap()
    }

    #[test]
    fn gaussian_column_inverts() {
        let c = two_level_cloud(3.0);
        let p = Vector3::new(3.0, -2.0, 5.0);
        let u = Vector3::new(0.3, 0.4, -0.5).normalize();
        for s in [0.5, 4.0, 17.0] {
            let col = c.column(&p, &u, s);
            let back = c.distance_for_column(&p, &u, col).unwrap();
            assert!((back - s).abs() < 1e-8 * s.max(1.0), "{back} vs {s}");
        }
        assert!(c.distance_for_column(&p, &u, c.column_to_exit(&p, &u) * 1.0001).is_none());
    }

    #[test]
    fn b0_matches_definition() {
        let c = two_level_cloud(5.0);
        assert!((c.b0() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn backscattering_detector_geometry() {
        let d = PolarizationChannel::HelPar.detector(0.0);
        assert!((d.direction - Vector3::z()).norm() < 1e-15);
        let e = PolarizationChannel::HelPar.input();
        // Helicity-preserving analyser blocks single dipole backscattering.
        assert!(d.polarization.conjugate().dot(&e).norm() < 1e-15);
    }
}
