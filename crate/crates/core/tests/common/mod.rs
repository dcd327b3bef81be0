#![allow(dead_code)]

use std::f64::consts::PI;

use coldscatter::angular::{HalfInt, LevelScheme};
use coldscatter::mcscatter::{Cloud, DensityProfile};
use coldscatter::medium::{Atom, GroundState};
use num_complex::Complex64;

/// Gaussian cloud of F0=0 → F=1 atoms with central optical depth `b0`.
pub fn two_level_cloud(b0: f64, r0: f64) -> Cloud {
    let atom = Atom::new(&LevelScheme::two_level_0_1());
    let n0 = b0 / ((2.0 * PI).sqrt() * 6.0 * PI * r0);
    let ground = GroundState::isotropic(&atom, &[(HalfInt::ZERO, 1.0)], n0).unwrap();
    Cloud::new(atom, ground, DensityProfile::Gaussian { r0 }, None).unwrap()
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|i, j| a[*i][col].norm().total_cmp(&a[*j][col].norm())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::ZERO; n];
    for row in (0..n).rev() {
        let s: Complex64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dipole–dipole coupling between two F0=0 → F=1 atoms in the Lehmberg
/// form, for unit polarisation axes `mu` and `nu` (γ = k = 1).
pub fn lehmberg_coupling(r: &[f64; 3], mu: usize, nu: usize) -> Complex64 {
    let x = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let n = [r[0] / x, r[1] / x, r[2] / x];
    let delta = if mu == nu { 1.0 } else { 0.0 };
    let i = Complex64::i();
    let e = (i * x).exp();
    let a = 1.0 / x + i / (x * x) - 1.0 / (x * x * x);
    let b = 1.0 / x + 3.0 * i / (x * x) - 3.0 / (x * x * x);
    -0.75 * e * (a * delta - b * n[mu] * n[nu])
}

/// Normal-incidence slab transmission from the 4×4 boundary-matching
/// system; returns the field amplitude at the exit face for unit incidence
/// at the entry face.
pub fn slab_by_boundary_matching(eps: Complex64, l: f64) -> Complex64 {
    let i = Complex64::i();
    let n = eps.sqrt();
    let (ep, em) = ((i * n * l).exp(), (-i * n * l).exp());
    let el = (i * l).exp();
    let one = Complex64::ONE;
    let zero = Complex64::ZERO;
    // Unknowns r, a, b, t with E_left = e^{iz} + r e^{−iz}, E_slab = a e^{inz} + b e^{−inz}, E_right = t e^{iz}.
    let a = vec![
        vec![-one, one, one, zero],
        vec![one, n, -n, zero],
        vec![zero, ep, em, -el],
        vec![zero, n * ep, -n * em, -el],
    ];
    let b = vec![one, one, zero, zero];
    let x = gauss_solve(a, b);
    x[3] * el
}
