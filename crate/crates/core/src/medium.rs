//! Dressed propagators, susceptibility and scattering tensors, kinetic
//! lengths, and the small saturation/dephasing estimates.
//!
//! Conventions: ħ = 1, γ = 1, k = 1. A probe at offset frequency ω acting on
//! ground sublevel m probes the excited manifold at energy E = ω + E_m.
//! Tensors are Cartesian; index order is (output, input) for α and
//! (polarisation, field) for χ.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;

use crate::angular::{dipole_vector, HalfInt, LevelScheme, Sublevel};
use crate::error::{Error, Result};
use crate::quadrature::sphere_grid;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Precomputed sublevel lists and Cartesian dipole vectors ⟨n|d|m⟩.
#[derive(Debug, Clone)]
pub struct Atom {
    pub scheme: LevelScheme,
    pub ground: Vec<Sublevel>,
    pub excited: Vec<Sublevel>,
    /// `dipoles[n * n_ground + m]`
    dipoles: Vec<Vector3<Complex64>>,
}

impl Atom {
    pub fn new(scheme: &LevelScheme) -> Self {
        let ground = scheme.ground_states();
        let excited = scheme.excited_states();
        let mut dipoles = Vec::with_capacity(ground.len() * excited.len());
        for n in &excited {
            for m in &ground {
                dipoles.push(dipole_vector(scheme, n, m));
            }
        }
        Self { scheme: scheme.clone(), ground, excited, dipoles }
    }

    pub fn dipole(&self, n: usize, m: usize) -> &Vector3<Complex64> {
        &self.dipoles[n * self.ground.len() + m]
    }

    pub fn n_ground(&self) -> usize {
        self.ground.len()
    }

    pub fn n_excited(&self) -> usize {
        self.excited.len()
    }
}

/// Microwave field between ground hyperfine levels (magnetic dipole).
///
/// Carried for completeness of the driving configuration; with the ordering
/// γ ≫ V̄²γ/Δ²_hpf ≫ Ū its dressing of the optical response is negligible and
/// it does not enter [`susceptibility`].
#[derive(Debug, Clone)]
pub struct MicrowaveField {
    /// U_{m m̃} over ground sublevels (units γ).
    pub couplings: DMatrix<Complex64>,
    pub frequency: f64,
}

/// Classical control mode coupling ground sublevels m' to excited n.
#[derive(Debug, Clone)]
pub struct ControlField {
    /// V_{n m'}: rows excited, columns ground (units γ).
    pub couplings: DMatrix<Complex64>,
    /// ω_c in the offset convention (units γ).
    pub frequency: f64,
    /// Cartesian unit polarisation vector.
    pub polarization: Vector3<Complex64>,
    /// Phenomenological width of the coupled ground sublevels (units γ).
    pub ground_width: f64,
    pub microwave: Option<MicrowaveField>,
}

/// Reference transition used to calibrate a control Rabi frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTransition {
    pub f0: HalfInt,
    pub m0: HalfInt,
    pub f: HalfInt,
    pub m: HalfInt,
}

impl ControlField {
    /// Control with polarisation `eps` acting on the ground levels listed in
    /// `driven`, with Rabi frequency 2|V| = `rabi` on `reference` and
    /// frequency `E_f − E_f0 + detuning` for that reference.
    pub fn new(
        atom: &Atom,
        eps: Vector3<Complex64>,
        rabi: f64,
        detuning: f64,
        reference: ReferenceTransition,
        driven: &[HalfInt],
    ) -> Result<Self> {
        let eps = eps / Complex64::new(eps.norm(), 0.0);
        let scheme = &atom.scheme;
        let n_ref = scheme
            .excited_index(reference.f, reference.m)
            .ok_or_else(|| Error::domain("control reference excited state not in scheme"))?;
        let m_ref = scheme
            .ground_index(reference.f0, reference.m0)
            .ok_or_else(|| Error::domain("control reference ground state not in scheme"))?;
        let d_ref = atom.dipole(n_ref, m_ref).dot(&eps).norm();
        if d_ref == 0.0 {
            return Err(Error::domain(
                "control polarisation does not drive the reference transition",
            ));
        }
        let field = rabi / (2.0 * d_ref);
        let mut couplings = DMatrix::zeros(atom.n_excited(), atom.n_ground());
        for (m, g) in atom.ground.iter().enumerate() {
            if !driven.contains(&g.f) {
                continue;
            }
            for n in 0..atom.n_excited() {
                couplings[(n, m)] = atom.dipole(n, m).dot(&eps) * field;
            }
        }
        let frequency = atom.excited[n_ref].energy - atom.ground[m_ref].energy + detuning;
        Ok(Self { couplings, frequency, polarization: eps, ground_width: 0.0, microwave: None })
    }

    /// π-polarised (along z) control.
    pub fn pi(
        atom: &Atom,
        rabi: f64,
        detuning: f64,
        reference: ReferenceTransition,
        driven: &[HalfInt],
    ) -> Result<Self> {
        let z = Vector3::new(Complex64::ZERO, Complex64::ZERO, Complex64::ONE);
        Self::new(atom, z, rabi, detuning, reference, driven)
    }

    pub fn with_ground_width(mut self, width: f64) -> Self {
        self.ground_width = width;
        self
    }

    /// Ground sublevels with at least one nonzero coupling.
    fn coupled_ground(&self) -> Vec<usize> {
        (0..self.couplings.ncols())
            .filter(|&m| self.couplings.column(m).iter().any(|v| v.norm() > 0.0))
            .collect()
    }
}

/// Ground-state density matrix and atomic density.
#[derive(Debug, Clone)]
pub struct GroundState {
    pub rho: DMatrix<Complex64>,
    /// Local density n0 (atoms per λbar³) at the evaluation point.
    pub density: f64,
}

impl GroundState {
    /// Equal population of all Zeeman sublevels of the listed levels,
    /// weighted by `fractions` per hyperfine level.
    pub fn isotropic(atom: &Atom, fractions: &[(HalfInt, f64)], density: f64) -> Result<Self> {
        let mut rho = DMatrix::zeros(atom.n_ground(), atom.n_ground());
        for &(f0, p) in fractions {
            let mult = f0.multiplicity() as f64;
            let mut found = false;
            for (i, g) in atom.ground.iter().enumerate() {
                if g.f == f0 {
                    rho[(i, i)] = Complex64::new(p / mult, 0.0);
                    found = true;
                }
            }
            if !found {
                return Err(Error::domain(format!("ground level F0={f0} not in scheme")));
            }
        }
        let gs = Self { rho, density };
        gs.validate(atom)?;
        Ok(gs)
    }

    pub fn empty(atom: &Atom) -> Self {
        Self { rho: DMatrix::zeros(atom.n_ground(), atom.n_ground()), density: 0.0 }
    }

    /// Trace one (or zero for an empty state), Hermitian, coherences only
    /// inside a degenerate hyperfine level.
    pub fn validate(&self, atom: &Atom) -> Result<()> {
        let n = atom.n_ground();
        if self.rho.nrows() != n || self.rho.ncols() != n {
            return Err(Error::domain("ground density matrix has wrong dimension"));
        }
        if self.density < 0.0 {
            return Err(Error::domain("atomic density must be non-negative"));
        }
        let tr = self.rho.trace();
        if tr.norm() > 1e-12 && (tr - Complex64::ONE).norm() > 1e-9 {
            return Err(Error::domain(format!("ground density matrix trace {tr} is not 1")));
        }
        for a in 0..n {
            if self.rho[(a, a)].re < -1e-12 {
                return Err(Error::domain("negative ground population"));
            }
            for b in 0..n {
                if (self.rho[(a, b)] - self.rho[(b, a)].conj()).norm() > 1e-12 {
                    return Err(Error::domain("ground density matrix is not Hermitian"));
                }
                if a != b
                    && atom.ground[a].f != atom.ground[b].f
                    && self.rho[(a, b)].norm() > 0.0
                {
                    return Err(Error::domain(
                        "coherences between different ground hyperfine levels are not supported",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn population(&self, m: usize) -> f64 {
        self.rho[(m, m)].re
    }
}

/// Excited states connected through shared control couplings. Each block
/// is closed under the dressing: G is block diagonal in this partition.
pub fn dressed_blocks(atom: &Atom, control: Option<&ControlField>) -> Vec<Vec<usize>> {
    let ne = atom.n_excited();
    let mut parent: Vec<usize> = (0..ne).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let nx = p[y];
            p[y] = r;
            y = nx;
        }
        r
    }
    if let Some(c) = control {
        for m in c.coupled_ground() {
            let linked: Vec<usize> =
                (0..ne).filter(|&n| c.couplings[(n, m)].norm() > 0.0).collect();
            for w in linked.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a] = b;
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_of = vec![usize::MAX; ne];
    for n in 0..ne {
        let r = find(&mut parent, n);
        if root_of[r] == usize::MAX {
            root_of[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[root_of[r]].push(n);
    }
    blocks
}

/// The bracket of the dressed-propagator equation for one block:
/// M = (E − E_n + i/2)δ − Σ_{m'} V_{nm'}V*_{n''m'}/(E − ω_c − E_{m'} + iΓ_g).
/// Panics if some detuning E − ω_c − E_{m'} is exactly zero.
pub fn dressed_bracket(
    atom: &Atom,
    control: Option<&ControlField>,
    e: Complex64,
    block: &[usize],
) -> DMatrix<Complex64> {
    let gamma = atom.scheme.gamma;
    let k = block.len();
    let mut m = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            e - atom.excited[block[i]].energy + I * (gamma / 2.0)
        } else {
            Complex64::ZERO
        }
    });
    if let Some(c) = control {
        for mp in c.coupled_ground() {
            let delta = e - c.frequency - atom.ground[mp].energy + I * c.ground_width;
            for i in 0..k {
                for j in 0..k {
                    m[(i, j)] -=
                        c.couplings[(block[i], mp)] * c.couplings[(block[j], mp)].conj() / delta;
                }
            }
        }
    }
    m
}

/// Dressed excited-state propagator G(E) restricted to `block`.
///
/// Solved in Woodbury form, G = A⁻¹ + A⁻¹V(D − V†A⁻¹V)⁻¹V†A⁻¹ with A the
/// undressed diagonal and D the two-photon detunings, which stays regular at
/// exact two-photon resonance (D = 0) where the bracket itself diverges.
pub fn dressed_propagator_block(
    atom: &Atom,
    control: Option<&ControlField>,
    e: Complex64,
    block: &[usize],
) -> Result<DMatrix<Complex64>> {
    let gamma = atom.scheme.gamma;
    let k = block.len();
    let a_inv: Vec<Complex64> = block
        .iter()
        .map(|&n| 1.0 / (e - atom.excited[n].energy + I * (gamma / 2.0)))
        .collect();
    let mut g = DMatrix::from_fn(k, k, |i, j| if i == j { a_inv[i] } else { Complex64::ZERO });
    let Some(c) = control else {
        return Ok(g);
    };
    let mps: Vec<usize> = c
        .coupled_ground()
        .into_iter()
        .filter(|&mp| block.iter().any(|&n| c.couplings[(n, mp)].norm() > 0.0))
        .collect();
    if mps.is_empty() {
        return Ok(g);
    }
    let r = mps.len();
    // A⁻¹V (k×r) and V†A⁻¹ (r×k).
    let av = DMatrix::from_fn(k, r, |i, s| a_inv[i] * c.couplings[(block[i], mps[s])]);
    let va = DMatrix::from_fn(r, k, |s, j| c.couplings[(block[j], mps[s])].conj() * a_inv[j]);
    let mut cap = DMatrix::from_fn(r, r, |s, t| {
        let mut acc = Complex64::ZERO;
        for i in 0..k {
            acc -= c.couplings[(block[i], mps[s])].conj() * av[(i, t)];
        }
        acc
    });
    for (s, &mp) in mps.iter().enumerate() {
        cap[(s, s)] += e - c.frequency - atom.ground[mp].energy + I * c.ground_width;
    }
    let cap_inv = invert_checked(&cap)?;
    g += &av * cap_inv * &va;
    Ok(g)
}

/// Dense inverse with a 1-norm condition estimate; condition above 1e12 is
/// reported as pole proximity.
pub fn invert_checked(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = m.nrows();
    let lu = m.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::PoleProximity {
        condition: f64::INFINITY,
        residual: f64::INFINITY,
    })?;
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || cond > 1e12 {
        let residual = (m * &inv - DMatrix::identity(n, n)).norm();
        return Err(Error::PoleProximity { condition: cond, residual });
    }
    Ok(inv)
}

fn norm1(m: &DMatrix<Complex64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Full excited-space propagator at energy E (block diagonal).
pub fn dressed_propagator(
    atom: &Atom,
    control: Option<&ControlField>,
    blocks: &[Vec<usize>],
    e: Complex64,
) -> Result<DMatrix<Complex64>> {
    let ne = atom.n_excited();
    let mut g = DMatrix::zeros(ne, ne);
    for b in blocks {
        let gb = dressed_propagator_block(atom, control, e, b)?;
        for (i, &ni) in b.iter().enumerate() {
            for (j, &nj) in b.iter().enumerate() {
                g[(ni, nj)] = gb[(i, j)];
            }
        }
    }
    Ok(g)
}

/// χ_{μμ'}(ω), 3×3 and dimensionless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SusceptibilityTensor {
    pub chi: Matrix3<Complex64>,
    pub omega: f64,
}

/// α^{(m'm)}_{μ'μ}(ω) with output frequency ω' = ω + E_m − E_{m'}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringTensor {
    pub alpha: Matrix3<Complex64>,
    pub m_out: usize,
    pub m_in: usize,
    pub omega_in: f64,
    pub omega_out: f64,
}

/// Sample susceptibility at frequency ω for the local ground state.
pub fn susceptibility(
    atom: &Atom,
    ground: &GroundState,
    control: Option<&ControlField>,
    omega: f64,
) -> Result<SusceptibilityTensor> {
    let blocks = dressed_blocks(atom, control);
    let ng = atom.n_ground();
    let ne = atom.n_excited();
    let mut chi = Matrix3::<Complex64>::zeros();
    // ρ_{m'm} pairs the E = ω + E_m propagator with the row ⟨m'|.
    for m in 0..ng {
        let col_nonzero = (0..ng).any(|mp| ground.rho[(mp, m)].norm() > 0.0);
        if !col_nonzero {
            continue;
        }
        let g = dressed_propagator(atom, control, &blocks, Complex64::new(omega + atom.ground[m].energy, 0.0))?;
        for mp in 0..ng {
            let r = ground.rho[(mp, m)];
            if r.norm() == 0.0 {
                continue;
            }
            for n in 0..ne {
                let dn = atom.dipole(n, m);
                for np in 0..ne {
                    let gv = g[(n, np)];
                    if gv.norm() == 0.0 {
                        continue;
                    }
                    let dnp = atom.dipole(np, mp);
                    for mu in 0..3 {
                        for nu in 0..3 {
                            chi[(mu, nu)] -= r * gv * dn[mu].conj() * dnp[nu];
                        }
                    }
                }
            }
        }
    }
    Ok(SusceptibilityTensor { chi: chi * Complex64::from(ground.density), omega })
}

/// Single-atom scattering tensor for m → m'.
pub fn scattering_tensor(
    atom: &Atom,
    control: Option<&ControlField>,
    m_out: usize,
    m_in: usize,
    omega: f64,
) -> Result<ScatteringTensor> {
    let blocks = dressed_blocks(atom, control);
    let g = dressed_propagator(atom, control, &blocks, Complex64::new(omega + atom.ground[m_in].energy, 0.0))?;
    Ok(scattering_tensor_with(atom, &g, m_out, m_in, omega))
}

/// As [`scattering_tensor`] with a precomputed G(ω + E_m).
pub fn scattering_tensor_with(
    atom: &Atom,
    g: &DMatrix<Complex64>,
    m_out: usize,
    m_in: usize,
    omega: f64,
) -> ScatteringTensor {
    let ne = atom.n_excited();
    let mut alpha = Matrix3::zeros();
    for n in 0..ne {
        let dn = atom.dipole(n, m_in);
        if dn.norm_squared() == 0.0 {
            continue;
        }
        for np in 0..ne {
            let gv = g[(np, n)];
            if gv.norm() == 0.0 {
                continue;
            }
            let dnp = atom.dipole(np, m_out);
            for mu_out in 0..3 {
                for mu in 0..3 {
                    alpha[(mu_out, mu)] -= gv * dnp[mu_out].conj() * dn[mu];
                }
            }
        }
    }
    let omega_out = omega + atom.ground[m_in].energy - atom.ground[m_out].energy;
    ScatteringTensor { alpha, m_out, m_in, omega_in: omega, omega_out }
}

/// Stimulated Raman emission by atoms in control-coupled ground sublevels.
///
/// An atom in m absorbs a control photon and emits into the probe mode while
/// landing in m̃. Its emission dipole is
/// A_μ = Σ_n (d_μ)_{m̃n} V_{nm}/(E_m + ω_c − E_n + i/2); the Raman line sits at
/// ω_R = E_m + ω_c + Re Σ_m − E_m̃ with width Γ_R = −Im Σ_m + Γ_g, where Σ_m is
/// the light shift of m. The contribution
/// χ^(A)_{μμ'} = n ρ_mm A_μ A*_μ' / (ω − ω_R + iΓ_R)
/// has Im χ^(A) ≤ 0, i.e. gain.
pub fn raman_gain_susceptibility(
    atom: &Atom,
    ground: &GroundState,
    control: &ControlField,
    omega: f64,
) -> Matrix3<Complex64> {
    let mut chi = Matrix3::<Complex64>::zeros();
    for line in raman_lines(atom, ground, control) {
        let denom = omega - line.omega_r + I * line.width;
        for mu in 0..3 {
            for nu in 0..3 {
                chi[(mu, nu)] += line.weight * line.dipole[mu] * line.dipole[nu].conj() / denom;
            }
        }
    }
    chi * Complex64::from(ground.density)
}

/// One stimulated-Raman emission line m → m̃.
#[derive(Debug, Clone, Copy)]
pub struct RamanLine {
    pub m_from: usize,
    pub m_to: usize,
    pub dipole: Vector3<Complex64>,
    pub omega_r: f64,
    pub width: f64,
    /// Population ρ_mm of the emitting sublevel.
    pub weight: f64,
}

pub fn raman_lines(atom: &Atom, ground: &GroundState, control: &ControlField) -> Vec<RamanLine> {
    let gamma = atom.scheme.gamma;
    let mut out = Vec::new();
    for m in control.coupled_ground() {
        let p = ground.population(m);
        if p <= 0.0 {
            continue;
        }
        let em = atom.ground[m].energy;
        let denoms: Vec<Complex64> = atom
            .excited
            .iter()
            .map(|n| 1.0 / (em + control.frequency - n.energy + I * (gamma / 2.0)))
            .collect();
        let sigma: Complex64 = (0..atom.n_excited())
            .map(|n| control.couplings[(n, m)].norm_sqr() * denoms[n])
            .sum();
        let width = -sigma.im + control.ground_width;
        for mt in 0..atom.n_ground() {
            // Only transitions into levels not driven by the control emit
            // on the probe side of the Λ.
            if control.couplings.column(mt).iter().any(|v| v.norm() > 0.0) {
                continue;
            }
            let mut a = Vector3::zeros();
            for n in 0..atom.n_excited() {
                let v = control.couplings[(n, m)];
                if v.norm() == 0.0 {
                    continue;
                }
                a += atom.dipole(n, mt).map(|x| x.conj()) * (v * denoms[n]);
            }
            if a.norm_squared() == 0.0 {
                continue;
            }
            out.push(RamanLine {
                m_from: m,
                m_to: mt,
                dipole: a,
                omega_r: em + control.frequency + sigma.re - atom.ground[mt].energy,
                width,
                weight: p,
            });
        }
    }
    out
}

/// Emission-weighted mean Raman line centre Σ ρ|A|²ω_R / Σ ρ|A|², or `None`
/// when the control opens no emission line.
pub fn mean_raman_frequency(atom: &Atom, ground: &GroundState, control: &ControlField) -> Option<f64> {
    let lines = raman_lines(atom, ground, control);
    let w: f64 = lines.iter().map(|l| l.weight * l.dipole.norm_squared()).sum();
    (w > 0.0).then(|| lines.iter().map(|l| l.omega_r * l.weight * l.dipole.norm_squared()).sum::<f64>() / w)
}

/// Extinction, scattering and loss lengths along polarisation `e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticLengths {
    /// Extinction length; negative when the medium amplifies.
    pub l_ex: f64,
    /// Extinction cross section per atom, 4π Im(e*·χ·e)/n (also σ_tot).
    pub sigma_ex: f64,
    /// Elastic scattering length.
    pub l_sc: f64,
    /// Elastic (frequency-conserving) scattering cross section.
    pub sigma_sc: f64,
    /// Scattering into all channels including Raman.
    pub sigma_sc_all: f64,
    /// l_ls⁻¹ = l_ex⁻¹ − l_sc⁻¹; negative values mean gain.
    pub inv_l_ls: f64,
}

impl KineticLengths {
    /// Gain length when the loss rate is negative.
    pub fn l_g(&self) -> Option<f64> {
        (self.inv_l_ls < 0.0).then(|| -1.0 / self.inv_l_ls)
    }
}

/// Quadrature order for σ_sc; the integrand is a degree-2 polynomial on the
/// sphere so this grid is exact and doubling it is a no-op.
const SC_THETA: usize = 6;
const SC_PHI: usize = 8;

/// Angle-integrated |P(u)·v|² over the sphere by product quadrature.
pub fn dipole_emission_integral(v: &Vector3<Complex64>, n_theta: usize, n_phi: usize) -> f64 {
    sphere_grid(n_theta, n_phi)
        .iter()
        .map(|(u, w)| {
            let uc = u.map(|x| Complex64::new(x, 0.0));
            let along = uc.dot(v);
            w * (v - uc * along).norm_squared()
        })
        .sum()
}

/// Kinetic lengths for polarisation `e` at frequency ω. `extra_chi` adds
/// e.g. the Raman gain susceptibility.
pub fn kinetic_lengths(
    atom: &Atom,
    ground: &GroundState,
    control: Option<&ControlField>,
    omega: f64,
    e: &Vector3<Complex64>,
    extra_chi: Option<&Matrix3<Complex64>>,
) -> Result<KineticLengths> {
    let mut chi = susceptibility(atom, ground, control, omega)?.chi;
    if let Some(x) = extra_chi {
        chi += x;
    }
    let n = ground.density;
    let inv_l_ex = 4.0 * std::f64::consts::PI * (e.conjugate().dot(&(chi * e))).im;
    let blocks = dressed_blocks(atom, control);
    let mut sigma_sc = 0.0;
    let mut sigma_all = 0.0;
    for m in 0..atom.n_ground() {
        let p = ground.population(m);
        if p <= 0.0 {
            continue;
        }
        let g = dressed_propagator(atom, control, &blocks, Complex64::new(omega + atom.ground[m].energy, 0.0))?;
        for mp in 0..atom.n_ground() {
            let t = scattering_tensor_with(atom, &g, mp, m, omega);
            let v = t.alpha * e;
            let s = p * dipole_emission_integral(&v, SC_THETA, SC_PHI);
            sigma_all += s;
            if (t.omega_out - omega).abs() < 1e-9 {
                sigma_sc += s;
            }
        }
    }
    let inv_l_sc = n * sigma_sc;
    Ok(KineticLengths {
        l_ex: 1.0 / inv_l_ex,
        sigma_ex: if n > 0.0 { inv_l_ex / n } else { 0.0 },
        l_sc: 1.0 / inv_l_sc,
        sigma_sc,
        sigma_sc_all: sigma_all,
        inv_l_ls: inv_l_ex - inv_l_sc,
    })
}

/// Saturation parameter and Mollow intensity fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub s: f64,
    pub i_coh: f64,
    pub i_incoh: f64,
}

pub fn saturation_and_intensities(rabi: f64, detuning: f64, gamma: f64) -> Result<Saturation> {
    if !(gamma > 0.0) {
        return Err(Error::domain("gamma must be positive"));
    }
    let s = (rabi * rabi / 2.0) / (detuning * detuning + gamma * gamma / 4.0);
    let d = 2.0 * (1.0 + s) * (1.0 + s);
    Ok(Saturation { s, i_coh: s / d, i_incoh: s * s / d })
}

/// Residual-motion phase scatter δφ ~ k·v̄/γ (any consistent units).
pub fn doppler_dephasing(k: f64, v_bar: f64, gamma: f64) -> f64 {
    k * v_bar / gamma
}

/// Right-hand side helper: excited-state vector (d_n · e) for ground m.
pub fn excitation_vector(atom: &Atom, m: usize, e: &Vector3<Complex64>) -> DVector<Complex64> {
    DVector::from_fn(atom.n_excited(), |n, _| atom.dipole(n, m).dot(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cz() -> Vector3<Complex64> {
        Vector3::new(Complex64::ZERO, Complex64::ZERO, Complex64::ONE)
    }

    #[test]
    fn two_level_lorentzian() {
        let atom = Atom::new(&LevelScheme::two_level_0_1());
        let gs = GroundState::isotropic(&atom, &[(HalfInt::ZERO, 1.0)], 0.01).unwrap();
        for delta in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let chi = susceptibility(&atom, &gs, None, delta).unwrap().chi;
            let expect = -0.01 * 0.75 / Complex64::new(delta, 0.5);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { expect } else { Complex64::ZERO };
                    assert!((chi[(i, j)] - want).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn closed_transition_is_lossless() {
        let atom = Atom::new(&LevelScheme::rb85_d2());
        let gs = GroundState::isotropic(&atom, &[(HalfInt::int(3), 1.0)], 1e-3).unwrap();
        let k = kinetic_lengths(&atom, &gs, None, 0.3, &cz(), None).unwrap();
        // Off-resonant F=3,2 channels open a little Raman loss; it must be tiny.
        assert!(k.inv_l_ls.abs() * k.l_ex < 5e-3, "{k:?}");
        assert!((k.sigma_ex - k.sigma_sc_all).abs() / k.sigma_ex < 1e-12);
    }

    #[test]
    fn saturation_values() {
        let s = saturation_and_intensities(3.0, 0.0, 1.0).unwrap();
        assert!((s.s - 18.0).abs() < 1e-12);
        let s1 = saturation_and_intensities(2f64.sqrt() / 2.0, 0.0, 1.0).unwrap();
        assert!((s1.s - 1.0).abs() < 1e-12 && (s1.i_coh - 0.125).abs() < 1e-12);
    }
}
