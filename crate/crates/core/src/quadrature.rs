//! Numerical integration helpers: adaptive Gauss–Kronrod on an interval and
//! product Gauss grids on the unit sphere.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights on the odd Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kron += s * WGK[i];
        if i % 2 == 1 {
            gauss += s * WG[i / 2];
        }
    }
    (kron * h, ((kron - gauss) * h).norm())
}

/// Adaptive G7–K15 integral of a complex function over [a, b].
///
/// Fails when the estimated error stays above `max(abs_tol, rel_tol·|I|)`
/// after `max_intervals` bisections.
pub fn integrate_adaptive<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Complex64> {
    if a == b {
        return Ok(Complex64::ZERO);
    }
    const MAX_INTERVALS: usize = 2000;
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.norm()) {
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::numeric(format!(
                "quadrature on [{a}, {b}] did not converge: estimate {total}, error {err:.3e} after {MAX_INTERVALS} intervals"
            )));
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
        total = pieces.iter().map(|p| p.2).sum();
        err = pieces.iter().map(|p| p.3).sum();
    }
    Ok(total)
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Product grid on the unit sphere: Gauss–Legendre in cos θ times a uniform
/// rule in φ. Exact for spherical harmonics of degree < min(2·n_theta, n_phi).
pub fn sphere_grid(n_theta: usize, n_phi: usize) -> Vec<(Vector3<f64>, f64)> {
    let (x, w) = gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for (ct, wt) in x.iter().zip(&w) {
        let st = (1.0 - ct * ct).sqrt();
        for k in 0..n_phi {
            let phi = (k as f64 + 0.5) * dphi;
            out.push((Vector3::new(st * phi.cos(), st * phi.sin(), *ct), wt * dphi));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let f = |x: f64| Complex64::new(1.0 / (1e-4 + x * x), 0.0);
        let v = integrate_adaptive(f, -1.0, 1.0, 1e-12, 1e-12).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((v.re - exact).abs() / exact < 1e-11);
    }

    #[test]
    fn sphere_area() {
        let a: f64 = sphere_grid(4, 8).iter().map(|p| p.1).sum();
        assert!((a - 4.0 * std::f64::consts::PI).abs() < 1e-13);
    }
}
