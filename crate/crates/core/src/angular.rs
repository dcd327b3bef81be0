//! Angular-momentum algebra and atomic matrix elements.
//!
//! Everything works on doubled integers so selection rules are exact. Phases
//! follow Condon–Shortley. Dipole elements are normalised so that every
//! excited Zeeman state decays with total rate `gamma` (units γ, k = 1).

use std::collections::HashMap;
use std::sync::{LazyLock, RwLock};

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A non-negative or signed half-integer stored as `2j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt {
    pub twice_value: i32,
}

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt { twice_value: 0 };
    pub const HALF: HalfInt = HalfInt { twice_value: 1 };
    pub const ONE: HalfInt = HalfInt { twice_value: 2 };

    pub const fn from_twice(twice_value: i32) -> Self {
        Self { twice_value }
    }

    pub const fn int(n: i32) -> Self {
        Self { twice_value: 2 * n }
    }

    pub fn value(self) -> f64 {
        f64::from(self.twice_value) / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.twice_value % 2 == 0
    }

    /// Projections −j, −j+1, …, j.
    pub fn projections(self) -> impl Iterator<Item = HalfInt> {
        (-self.twice_value..=self.twice_value)
            .step_by(2)
            .map(HalfInt::from_twice)
    }

    /// 2j+1.
    pub fn multiplicity(self) -> usize {
        (self.twice_value + 1) as usize
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, o: HalfInt) -> HalfInt {
        HalfInt::from_twice(self.twice_value + o.twice_value)
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, o: HalfInt) -> HalfInt {
        HalfInt::from_twice(self.twice_value - o.twice_value)
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt::from_twice(-self.twice_value)
    }
}

impl std::fmt::Display for HalfInt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.twice_value / 2)
        } else {
            write!(f, "{}/2", self.twice_value)
        }
    }
}

fn check_projection(j: HalfInt, m: HalfInt) -> Result<()> {
    if j.twice_value < 0 || (j.twice_value - m.twice_value).rem_euclid(2) != 0 {
        return Err(Error::domain(format!(
            "projection {m} incompatible with angular momentum {j}"
        )));
    }
    Ok(())
}

const MAX_FACTORIAL: usize = 200;

static LN_FACTORIAL: LazyLock<Vec<f64>> = LazyLock::new(|| {
    let mut t = vec![0.0; MAX_FACTORIAL + 1];
    for n in 1..=MAX_FACTORIAL {
        t[n] = t[n - 1] + (n as f64).ln();
    }
    t
});

/// ln(n!) where `twice` = 2n; callers guarantee `twice` is even and ≥ 0.
fn lnf(twice: i32) -> f64 {
    LN_FACTORIAL[(twice / 2) as usize]
}

/// ln Δ(abc) with doubled arguments, or None on triangle violation.
fn ln_triangle(a: i32, b: i32, c: i32) -> Option<f64> {
    if a + b < c || a + c < b || b + c < a || (a + b + c) % 2 != 0 {
        return None;
    }
    Some(lnf(a + b - c) + lnf(a - b + c) + lnf(b + c - a) - lnf(a + b + c + 2))
}

type CgKey = (i32, i32, i32, i32, i32, i32);
type SixjKey = (i32, i32, i32, i32, i32, i32);

static CG_CACHE: LazyLock<RwLock<HashMap<CgKey, f64>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));
static SIXJ_CACHE: LazyLock<RwLock<HashMap<SixjKey, f64>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

/// C^{JM}_{j1 m1, j2 m2}. Zero on selection-rule failure; error only when a
/// projection has the wrong parity for its magnitude.
pub fn clebsch_gordan(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j: HalfInt,
    m: HalfInt,
) -> Result<f64> {
    check_projection(j1, m1)?;
    check_projection(j2, m2)?;
    check_projection(j, m)?;
    let key = (
        j1.twice_value,
        m1.twice_value,
        j2.twice_value,
        m2.twice_value,
        j.twice_value,
        m.twice_value,
    );
    if let Some(v) = CG_CACHE.read().expect("cg cache poisoned").get(&key) {
        return Ok(*v);
    }
    let v = cg_racah(key);
    CG_CACHE.write().expect("cg cache poisoned").insert(key, v);
    Ok(v)
}

fn cg_racah((j1, m1, j2, m2, j, m): CgKey) -> f64 {
    if m != m1 + m2 || m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    let Some(ln_delta) = ln_triangle(j1, j2, j) else {
        return 0.0;
    };
    let ln_pref = 0.5
        * ((f64::from(j) + 1.0).ln()
            + ln_delta
            + lnf(j1 + m1)
            + lnf(j1 - m1)
            + lnf(j2 + m2)
            + lnf(j2 - m2)
            + lnf(j + m)
            + lnf(j - m));
    // Summation index k in doubled units; all factorial arguments stay ≥ 0.
    let kmin = 0.max(j2 - j - m1).max(j1 - j + m2);
    let kmax = (j1 + j2 - j).min(j1 - m1).min(j2 + m2);
    let mut sum = 0.0;
    let mut k = kmin;
    while k <= kmax {
        let ln_den = lnf(k)
            + lnf(j1 + j2 - j - k)
            + lnf(j1 - m1 - k)
            + lnf(j2 + m2 - k)
            + lnf(j - j2 + m1 + k)
            + lnf(j - j1 - m2 + k);
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (ln_pref - ln_den).exp();
        k += 2;
    }
    sum
}

/// Wigner 6j symbol {a b c; d e f}; zero when any triad fails.
pub fn wigner_6j(a: HalfInt, b: HalfInt, c: HalfInt, d: HalfInt, e: HalfInt, f: HalfInt) -> f64 {
    let key = (
        a.twice_value,
        b.twice_value,
        c.twice_value,
        d.twice_value,
        e.twice_value,
        f.twice_value,
    );
    if key.0 < 0 || key.1 < 0 || key.2 < 0 || key.3 < 0 || key.4 < 0 || key.5 < 0 {
        return 0.0;
    }
    if let Some(v) = SIXJ_CACHE.read().expect("6j cache poisoned").get(&key) {
        return *v;
    }
    let v = sixj_racah(key);
    SIXJ_CACHE.write().expect("6j cache poisoned").insert(key, v);
    v
}

fn sixj_racah((a, b, c, d, e, f): SixjKey) -> f64 {
    let (Some(t1), Some(t2), Some(t3), Some(t4)) = (
        ln_triangle(a, b, c),
        ln_triangle(a, e, f),
        ln_triangle(d, b, f),
        ln_triangle(d, e, c),
    ) else {
        return 0.0;
    };
    let ln_pref = 0.5 * (t1 + t2 + t3 + t4);
    let tmin = (a + b + c).max(a + e + f).max(d + b + f).max(d + e + c);
    let tmax = (a + b + d + e).min(a + c + d + f).min(b + c + e + f);
    let mut sum = 0.0;
    let mut t = tmin;
    while t <= tmax {
        let ln_num = lnf(t + 2);
        let ln_den = lnf(t - a - b - c)
            + lnf(t - a - e - f)
            + lnf(t - d - b - f)
            + lnf(t - d - e - c)
            + lnf(a + b + d + e - t)
            + lnf(a + c + d + f - t)
            + lnf(b + c + e + f - t);
        let sign = if (t / 2) % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (ln_pref + ln_num - ln_den).exp();
        t += 2;
    }
    sum
}

/// Spherical unit vector e_q, q ∈ {−1, 0, +1}: e0 = ez, e±1 = ∓(ex ± i ey)/√2.
pub fn spherical_unit(q: i32) -> Vector3<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match q {
        1 => Vector3::new(Complex64::new(-s, 0.0), Complex64::new(0.0, -s), Complex64::ZERO),
        0 => Vector3::new(Complex64::ZERO, Complex64::ZERO, Complex64::ONE),
        -1 => Vector3::new(Complex64::new(s, 0.0), Complex64::new(0.0, -s), Complex64::ZERO),
        _ => panic!("spherical index {q} outside rank 1"),
    }
}

/// Index of q in arrays ordered (+1, 0, −1).
pub fn q_index(q: i32) -> usize {
    (1 - q) as usize
}

/// Covariant spherical components v_q = e_q · v, returned in order (+1, 0, −1).
pub fn to_spherical(v: &Vector3<Complex64>) -> Vector3<Complex64> {
    Vector3::new(
        spherical_unit(1).dot(v),
        spherical_unit(0).dot(v),
        spherical_unit(-1).dot(v),
    )
}

/// Inverse of [`to_spherical`]: v = Σ_q (−1)^q v_q e_{−q}.
pub fn from_spherical(vq: &Vector3<Complex64>) -> Vector3<Complex64> {
    let mut v = Vector3::zeros();
    for q in [1, 0, -1] {
        let sign = if q == 0 { 1.0 } else { -1.0 };
        v += spherical_unit(-q) * (vq[q_index(q)] * sign);
    }
    v
}

/// Rank-1 Wigner matrix D¹_{q'q}(α, β, γ) in the order (+1, 0, −1) for both
/// indices. Rotated basis vectors satisfy R e_q = Σ_{q'} e_{q'} D_{q'q} with
/// R = Rz(α) Ry(β) Rz(γ).
pub fn wigner_rotation_rank1(alpha: f64, beta: f64, gamma: f64) -> Matrix3<Complex64> {
    let (s, c) = beta.sin_cos();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let d = Matrix3::new(
        (1.0 + c) / 2.0,
        -s * r,
        (1.0 - c) / 2.0,
        s * r,
        c,
        -s * r,
        (1.0 - c) / 2.0,
        s * r,
        (1.0 + c) / 2.0,
    );
    Matrix3::from_fn(|i, j| {
        let qp = 1 - i as i32;
        let q = 1 - j as i32;
        Complex64::from_polar(d[(i, j)], -(f64::from(qp) * alpha + f64::from(q) * gamma))
    })
}

/// ZYZ Euler angles of a proper rotation matrix (inverse of Rz(α)Ry(β)Rz(γ)).
pub fn euler_zyz(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let beta = r[(2, 2)].clamp(-1.0, 1.0).acos();
    if beta.sin().abs() < 1e-12 {
        // Gimbal lock: only α ± γ is defined, put everything in α.
        let alpha = r[(1, 0)].atan2(r[(0, 0)]);
        if r[(2, 2)] > 0.0 {
            return (alpha, 0.0, 0.0);
        }
        return ((-r[(0, 1)]).atan2(r[(1, 1)]), std::f64::consts::PI, 0.0);
    }
    let alpha = r[(1, 2)].atan2(r[(0, 2)]);
    let gamma = r[(2, 1)].atan2(-r[(2, 0)]);
    (alpha, beta, gamma)
}

/// Hyperfine level with its energy offset (units ħγ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperfineLevel {
    pub f: HalfInt,
    pub energy: f64,
}

/// One Zeeman sublevel in a manifold listing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sublevel {
    pub f: HalfInt,
    pub m: HalfInt,
    pub energy: f64,
}

/// Hyperfine structure of an S → J transition.
///
/// Energies are offsets in units of γ. The optical frequency `omega0` is kept
/// only for dispersion estimates (group velocity); everywhere else detunings
/// are measured from the zero of the energy offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    pub ground: Vec<HyperfineLevel>,
    pub excited: Vec<HyperfineLevel>,
    pub j: HalfInt,
    pub s: HalfInt,
    pub i: HalfInt,
    pub gamma: f64,
    pub omega0: f64,
}

fn triangle(a: HalfInt, b: HalfInt, c: HalfInt) -> bool {
    let (a, b, c) = (a.twice_value, b.twice_value, c.twice_value);
    a + b >= c && a + c >= b && b + c >= a && (a + b + c) % 2 == 0
}

impl LevelScheme {
    pub fn new(
        ground: Vec<HyperfineLevel>,
        excited: Vec<HyperfineLevel>,
        j: HalfInt,
        s: HalfInt,
        i: HalfInt,
        gamma: f64,
        omega0: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::domain("decay rate gamma must be positive"));
        }
        if ground.is_empty() || excited.is_empty() {
            return Err(Error::domain("level scheme needs ground and excited levels"));
        }
        for l in &ground {
            if !triangle(s, i, l.f) {
                return Err(Error::domain(format!("ground F0={} not in S⊗I", l.f)));
            }
        }
        for l in &excited {
            if !triangle(j, i, l.f) {
                return Err(Error::domain(format!("excited F={} not in J⊗I", l.f)));
            }
        }
        Ok(Self { ground, excited, j, s, i, gamma, omega0 })
    }

    /// Nondegenerate F0 = 0 → F = 1 transition (S = 0, I = 0, J = 1).
    pub fn two_level_0_1() -> Self {
        Self::new(
            vec![HyperfineLevel { f: HalfInt::ZERO, energy: 0.0 }],
            vec![HyperfineLevel { f: HalfInt::ONE, energy: 0.0 }],
            HalfInt::ONE,
            HalfInt::ZERO,
            HalfInt::ZERO,
            1.0,
            RB_D2_OMEGA0,
        )
        .expect("static scheme")
    }

    /// ⁸⁵Rb D2 line, energies relative to F0=3 → F=4 (γ/2π = 6.0666 MHz).
    pub fn rb85_d2() -> Self {
        let g = 6.0666;
        Self::new(
            vec![
                HyperfineLevel { f: HalfInt::int(2), energy: -3035.732 / g },
                HyperfineLevel { f: HalfInt::int(3), energy: 0.0 },
            ],
            vec![
                HyperfineLevel { f: HalfInt::int(1), energy: -(120.640 + 29.372 + 63.401) / g },
                HyperfineLevel { f: HalfInt::int(2), energy: -(120.640 + 63.401) / g },
                HyperfineLevel { f: HalfInt::int(3), energy: -120.640 / g },
                HyperfineLevel { f: HalfInt::int(4), energy: 0.0 },
            ],
            HalfInt::from_twice(3),
            HalfInt::HALF,
            HalfInt::from_twice(5),
            1.0,
            RB_D2_OMEGA0,
        )
        .expect("static scheme")
    }

    /// ⁸⁷Rb D2 line restricted to the excited F=1 level (EIT Λ-scheme).
    /// Energies relative to F0=1 → F=1.
    pub fn rb87_d2_lambda() -> Self {
        let g = 6.0666;
        Self::new(
            vec![
                HyperfineLevel { f: HalfInt::int(1), energy: 0.0 },
                HyperfineLevel { f: HalfInt::int(2), energy: 6834.683 / g },
            ],
            vec![HyperfineLevel { f: HalfInt::int(1), energy: 0.0 }],
            HalfInt::from_twice(3),
            HalfInt::HALF,
            HalfInt::from_twice(3),
            1.0,
            RB_D2_OMEGA0,
        )
        .expect("static scheme")
    }

    pub fn ground_states(&self) -> Vec<Sublevel> {
        manifold(&self.ground)
    }

    pub fn excited_states(&self) -> Vec<Sublevel> {
        manifold(&self.excited)
    }

    pub fn ground_level(&self, f0: HalfInt) -> Option<&HyperfineLevel> {
        self.ground.iter().find(|l| l.f == f0)
    }

    pub fn excited_level(&self, f: HalfInt) -> Option<&HyperfineLevel> {
        self.excited.iter().find(|l| l.f == f)
    }

    /// Index of (F0, M0) in [`Self::ground_states`].
    pub fn ground_index(&self, f0: HalfInt, m0: HalfInt) -> Option<usize> {
        self.ground_states().iter().position(|s| s.f == f0 && s.m == m0)
    }

    /// Index of (F, M) in [`Self::excited_states`].
    pub fn excited_index(&self, f: HalfInt, m: HalfInt) -> Option<usize> {
        self.excited_states().iter().position(|s| s.f == f && s.m == m)
    }

    /// |⟨J‖d‖S⟩|² fixed by the requirement that every excited sublevel
    /// decays at rate `gamma` with k = 1.
    pub fn reduced_j_squared(&self) -> f64 {
        3.0 * f64::from(self.j.twice_value + 1) * self.gamma / 4.0
    }

    /// ⟨F‖d‖F0⟩ including its phase.
    pub fn reduced_dipole(&self, f: HalfInt, f0: HalfInt) -> f64 {
        let six = wigner_6j(self.s, self.i, f0, f, HalfInt::ONE, self.j);
        if six == 0.0 {
            return 0.0;
        }
        let phase = parity(f0 + self.j + self.i - HalfInt::ONE);
        let dim = f64::from((f.twice_value + 1) * (f0.twice_value + 1));
        phase * dim.sqrt() * six * self.reduced_j_squared().sqrt()
    }
}

/// ⁸⁵Rb/⁸⁷Rb D2 optical frequency in units of γ (384.23 THz / 6.0666 MHz).
pub const RB_D2_OMEGA0: f64 = 384.230e6 / 6.0666;

fn manifold(levels: &[HyperfineLevel]) -> Vec<Sublevel> {
    levels
        .iter()
        .flat_map(|l| l.f.projections().map(move |m| Sublevel { f: l.f, m, energy: l.energy }))
        .collect()
}

/// (−1)^x for an integer-valued half-integer.
fn parity(x: HalfInt) -> f64 {
    debug_assert!(x.is_integer(), "phase exponent {x} is not an integer");
    if (x.twice_value / 2).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// ⟨F M|d_q|F0 M0⟩ (units of √(ħγ)·λbar^{3/2}).
pub fn dipole_matrix_element(
    scheme: &LevelScheme,
    f: HalfInt,
    m: HalfInt,
    f0: HalfInt,
    m0: HalfInt,
    q: i32,
) -> Result<Complex64> {
    if scheme.excited_level(f).is_none() {
        return Err(Error::domain(format!("F={f} is not an excited level of the scheme")));
    }
    if scheme.ground_level(f0).is_none() {
        return Err(Error::domain(format!("F0={f0} is not a ground level of the scheme")));
    }
    if !(-1..=1).contains(&q) {
        return Err(Error::domain(format!("spherical index q={q} outside rank 1")));
    }
    let qh = HalfInt::int(q);
    if m != m0 + qh {
        return Ok(Complex64::ZERO);
    }
    let cg = clebsch_gordan(f0, m0, HalfInt::ONE, qh, f, m)?;
    // The printed phase (−1)^{2·1} is unity.
    let reduced = scheme.reduced_dipole(f, f0);
    Ok(Complex64::new(reduced * cg / f64::from(f.twice_value + 1).sqrt(), 0.0))
}

/// Cartesian dipole vector ⟨n|d|m⟩ for excited n and ground m.
pub fn dipole_vector(scheme: &LevelScheme, n: &Sublevel, m: &Sublevel) -> Vector3<Complex64> {
    let mut vq = Vector3::zeros();
    for q in [1, 0, -1] {
        vq[q_index(q)] = dipole_matrix_element(scheme, n.f, n.m, m.f, m.m, q)
            .expect("sublevels taken from the scheme");
    }
    from_spherical(&vq)
}

/// ⟨F0' M0'|m_q|F0 M0⟩ in units of μ_B (electronic spin only).
pub fn magnetic_matrix_element(
    scheme: &LevelScheme,
    f0p: HalfInt,
    m0p: HalfInt,
    f0: HalfInt,
    m0: HalfInt,
    q: i32,
) -> Result<Complex64> {
    if scheme.ground_level(f0p).is_none() || scheme.ground_level(f0).is_none() {
        return Err(Error::domain("magnetic element needs two ground levels"));
    }
    if !(-1..=1).contains(&q) {
        return Err(Error::domain(format!("spherical index q={q} outside rank 1")));
    }
    let qh = HalfInt::int(q);
    if m0p != m0 + qh {
        return Ok(Complex64::ZERO);
    }
    let cg = clebsch_gordan(f0, m0, HalfInt::ONE, qh, f0p, m0p)?;
    let six = wigner_6j(scheme.s, scheme.i, f0, f0p, HalfInt::ONE, scheme.s);
    let phase = parity(f0 + scheme.s + scheme.i - HalfInt::ONE);
    let dim = f64::from((f0p.twice_value + 1) * (f0.twice_value + 1));
    let reduced = phase * dim.sqrt() * six * 6f64.sqrt();
    Ok(Complex64::new(reduced * cg / f64::from(f0p.twice_value + 1).sqrt(), 0.0))
}

/// Spontaneous repopulation of the ground manifold from an excited-state
/// density matrix, (R̂ρ)_{m'm}, written with CG and 6j factors directly.
pub fn repopulation_matrix(
    scheme: &LevelScheme,
    rho_excited: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let exc = scheme.excited_states();
    let gnd = scheme.ground_states();
    if rho_excited.nrows() != exc.len() || rho_excited.ncols() != exc.len() {
        return Err(Error::domain(format!(
            "excited density matrix is {}x{}, scheme has {} excited sublevels",
            rho_excited.nrows(),
            rho_excited.ncols(),
            exc.len()
        )));
    }
    let j2 = f64::from(scheme.j.twice_value + 1);
    let mut out = DMatrix::zeros(gnd.len(), gnd.len());
    for (a, mp) in gnd.iter().enumerate() {
        for (b, m) in gnd.iter().enumerate() {
            let radial = parity(m.f - mp.f)
                * f64::from((mp.f.twice_value + 1) * (m.f.twice_value + 1)).sqrt()
                * j2;
            let mut acc = Complex64::ZERO;
            for (c, np) in exc.iter().enumerate() {
                let six_p = wigner_6j(scheme.s, scheme.i, mp.f, np.f, HalfInt::ONE, scheme.j);
                if six_p == 0.0 {
                    continue;
                }
                let q = np.m - mp.m;
                if q.twice_value.abs() > 2 {
                    continue;
                }
                let cg_p = clebsch_gordan(mp.f, mp.m, HalfInt::ONE, q, np.f, np.m)?;
                if cg_p == 0.0 {
                    continue;
                }
                for (d, n) in exc.iter().enumerate() {
                    // Same q on both sides.
                    if n.m - m.m != q {
                        continue;
                    }
                    let six = wigner_6j(scheme.s, scheme.i, m.f, n.f, HalfInt::ONE, scheme.j);
                    let cg = clebsch_gordan(m.f, m.m, HalfInt::ONE, q, n.f, n.m)?;
                    acc += rho_excited[(c, d)] * (cg_p * cg * six_p * six);
                }
            }
            out[(a, b)] = acc * (radial * scheme.gamma);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(t: i32) -> HalfInt {
        HalfInt::from_twice(t)
    }

    #[test]
    fn cg_selection_and_identity() {
        let one = HalfInt::ONE;
        assert_eq!(clebsch_gordan(one, one, one, one, one, HalfInt::ZERO).unwrap(), 0.0);
        for tj in 0..8 {
            let j = h(tj);
            let v = clebsch_gordan(j, j, HalfInt::ZERO, HalfInt::ZERO, j, j).unwrap();
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!(clebsch_gordan(one, h(1), one, h(0), one, h(1)).is_err());
    }

    #[test]
    fn spin_half_triplet() {
        let v = clebsch_gordan(h(1), h(1), h(1), h(-1), h(2), h(0)).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn spherical_components_of_ex() {
        let ex = Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO);
        let s = to_spherical(&ex);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s[q_index(-1)] - Complex64::new(r, 0.0)).norm() < 1e-15);
        assert!((s[q_index(1)] - Complex64::new(-r, 0.0)).norm() < 1e-15);
        assert!((from_spherical(&s) - ex).norm() < 1e-15);
    }

    #[test]
    fn every_excited_sublevel_decays_at_gamma() {
        for scheme in [LevelScheme::two_level_0_1(), LevelScheme::rb85_d2()] {
            for n in scheme.excited_states() {
                let total: f64 = scheme
                    .ground_states()
                    .iter()
                    .map(|m| dipole_vector(&scheme, &n, m).norm_squared())
                    .sum();
                assert!((4.0 / 3.0 * total - scheme.gamma).abs() < 1e-12, "{n:?}");
            }
        }
    }

    #[test]
    fn euler_round_trip() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let (a, b, g) = euler_zyz(r.matrix());
        let back = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), a)
            * nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), b)
            * nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), g);
        assert!((back.matrix() - r.matrix()).norm() < 1e-12);
    }
}
