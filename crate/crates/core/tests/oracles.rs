//! Checks against independent closed forms, direct computations written
//! here from scratch, and frozen literature values.

mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use coldscatter::angular::{clebsch_gordan, wigner_6j, HalfInt, LevelScheme};
use coldscatter::mcscatter::{resonance_cross_section, Cloud, DensityProfile};
use coldscatter::medium::{kinetic_lengths, susceptibility, Atom, GroundState};
use coldscatter::microdipole::{
    field_green_tensor, hankel0, hankel2, self_consistent_epsilon, slab_transmission, sphere_extinction, VECTOR_D2,
};
use coldscatter::protocols::{schmidt_coefficient, PsiMinusState};
use coldscatter::transport::{
    diffusion_constant, group_velocity, letokhov_threshold, solve_gain_diffusion_sphere, Boundary, DiffusionModel,
};
use common::{lehmberg_coupling, slab_by_boundary_matching};
use nalgebra::Vector3;
use num_complex::Complex64;

fn h(twice: i32) -> HalfInt {
    HalfInt::from_twice(twice)
}

#[test]
fn hankel_functions_match_trigonometric_bessel_forms() {
    for &x in &[0.05f64, 0.3, 1.0, 2.7, 10.0, 55.5] {
        let (s, c) = (x.sin(), x.cos());
        let j0 = s / x;
        let y0 = -c / x;
        let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
        let y2 = -(3.0 / (x * x) - 1.0) * c / x - 3.0 * s / (x * x);
        assert_relative_eq!(hankel0(x).re, j0, max_relative = 1e-12);
        assert_relative_eq!(hankel0(x).im, y0, max_relative = 1e-12);
        assert_relative_eq!(hankel2(x).re, j2, max_relative = 1e-9, epsilon = 1e-12);
        assert_relative_eq!(hankel2(x).im, y2, max_relative = 1e-9, epsilon = 1e-12);
    }
}

#[test]
fn green_tensor_matches_lehmberg_coupling() {
    for r in [[0.3, 0.0, 0.0], [0.7, -0.4, 1.1], [-3.0, 2.0, 5.5]] {
        let g = field_green_tensor(&Vector3::new(r[0], r[1], r[2]), 1.0).unwrap();
        for mu in 0..3 {
            for nu in 0..3 {
                let lib = g[(mu, nu)] * VECTOR_D2;
                assert!((lib - lehmberg_coupling(&r, mu, nu)).norm() < 1e-12, "r={r:?} ({mu},{nu})");
            }
        }
    }
}

#[test]
fn clebsch_gordan_and_6j_frozen_values() {
    let cg = |a, b, c, d, e, f| clebsch_gordan(h(a), h(b), h(c), h(d), h(e), h(f)).unwrap();
    assert_relative_eq!(cg(2, 2, 2, -2, 0, 0), 1.0 / 3f64.sqrt(), max_relative = 1e-14);
    assert_relative_eq!(cg(1, 1, 1, -1, 2, 0), 1.0 / 2f64.sqrt(), max_relative = 1e-14);
    assert_relative_eq!(cg(2, 2, 2, 0, 4, 2), 1.0 / 2f64.sqrt(), max_relative = 1e-14);
    assert_relative_eq!(cg(4, 0, 2, 0, 2, 0), -(2.0f64 / 5.0).sqrt(), max_relative = 1e-14);
    assert_relative_eq!(wigner_6j(h(2), h(2), h(2), h(2), h(2), h(2)), 1.0 / 6.0, max_relative = 1e-14);
    assert_relative_eq!(wigner_6j(h(2), h(4), h(6), h(4), h(2), h(0)), 1.0 / 15f64.sqrt(), max_relative = 1e-14);
    assert_relative_eq!(wigner_6j(h(1), h(1), h(2), h(1), h(1), h(0)), 0.5, max_relative = 1e-14);
}

#[test]
fn two_level_susceptibility_is_lorentzian() {
    let atom = Atom::new(&LevelScheme::two_level_0_1());
    let n = 2e-3;
    let ground = GroundState::isotropic(&atom, &[(HalfInt::ZERO, 1.0)], n).unwrap();
    for d in [-3.0, -0.5, 0.0, 0.2, 4.0] {
        let chi = susceptibility(&atom, &ground, None, d).unwrap().chi;
        let expect = -0.75 * n / Complex64::new(d, 0.5);
        for a in 0..3 {
            assert!((chi[(a, a)] - expect).norm() < 1e-12 * expect.norm(), "Δ={d}");
        }
        let e = Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO);
        let k = kinetic_lengths(&atom, &ground, None, d, &e, None).unwrap();
        let sigma = resonance_cross_section(HalfInt::ZERO, HalfInt::ONE) / (1.0 + 4.0 * d * d);
        assert_relative_eq!(k.l_ex, 1.0 / (n * sigma), max_relative = 1e-12);
    }
}

#[test]
fn dilute_self_consistent_limit() {
    let n = 1e-7;
    for d in [-2.0, 0.0, 0.7] {
        let chi = self_consistent_epsilon(n, d).unwrap().chi;
        let dilute = -0.75 * n / Complex64::new(d, 0.5);
        assert!((chi - dilute).norm() < 1e-5 * dilute.norm());
    }
}

#[test]
fn selfconsistent_root_loss_is_reported() {
    // Beyond the validated density range the tracked root meets the √ε
    // branch point; the solver must say so rather than jump branches.
    let err = self_consistent_epsilon(0.2, 0.7).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let msg = err.to_string();
    assert!(msg.contains("tracked root") && msg.contains("Newton candidate"), "{msg}");
}

#[test]
fn slab_transmission_matches_boundary_matching() {
    for eps in [
        Complex64::new(1.0, 0.0),
        Complex64::new(1.02, 0.01),
        Complex64::new(0.7, 0.3),
        Complex64::new(2.25, 0.0),
    ] {
        for l in [0.0, 0.5, 3.0, 40.0] {
            let lib = slab_transmission(eps, l, 1.0).unwrap().t;
            let oracle = slab_by_boundary_matching(eps, l);
            assert!((lib - oracle).norm() < 1e-12, "ε={eps} L={l}: {lib} vs {oracle}");
        }
    }
}

#[test]
fn mie_limits_and_reference_value() {
    assert!(sphere_extinction(Complex64::ONE, 3.0, 1.0).unwrap().abs() < 1e-14);

    // Rayleigh limit for a small absorbing ball.
    let eps = Complex64::new(2.0, 0.5);
    let r = 0.01f64;
    let rayleigh = 4.0 * PI * r.powi(3) * ((eps - 1.0) / (eps + 2.0)).im;
    assert_relative_eq!(sphere_extinction(eps, r, 1.0).unwrap(), rayleigh, max_relative = 1e-3);

    // Bohren & Huffman's BHMIE test case: m = 1.55, radius 0.525 µm,
    // wavelength 0.6328 µm, tabulated Qext = 3.10543.
    let x = 2.0 * PI * 0.525 / 0.6328;
    let q = sphere_extinction(Complex64::new(1.55 * 1.55, 0.0), x, 1.0).unwrap() / (PI * x * x);
    assert_relative_eq!(q, 3.10543, max_relative = 2e-6);
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let step = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + step * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * step / 3.0
}

#[test]
fn gaussian_chord_columns_match_quadrature() {
    let atom = Atom::new(&LevelScheme::two_level_0_1());
    let ground = GroundState::isotropic(&atom, &[(HalfInt::ZERO, 1.0)], 1e-3).unwrap();
    let r0 = 7.0;
    let cloud = Cloud::new(atom, ground, DensityProfile::Gaussian { r0 }, None).unwrap();
    let density = |r: Vector3<f64>| (-r.norm_squared() / (2.0 * r0 * r0)).exp();
    let cases = [
        (Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0)),
        (Vector3::new(3.0, -2.0, 5.0), Vector3::new(0.6, 0.0, -0.8)),
        (Vector3::new(-9.0, 4.0, -1.0), Vector3::new(0.48, 0.6, 0.64)),
    ];
    for (p, u) in cases {
        for s in [1.0, 6.5, 20.0] {
            let q = simpson(|t| density(p + u * t), 0.0, s, 2000);
            assert_relative_eq!(cloud.column(&p, &u, s), q, max_relative = 1e-10);
            let back = cloud.distance_for_column(&p, &u, q).unwrap();
            assert_relative_eq!(back, s, max_relative = 1e-8);
        }
        let total = simpson(|t| density(p + u * t), 0.0, 15.0 * r0, 20000);
        assert_relative_eq!(cloud.column_to_exit(&p, &u), total, max_relative = 1e-10);
    }
}

#[test]
fn diffusion_closed_forms() {
    let model = DiffusionModel { v_bar: 0.5, l0_bar: 80.0, cos_mean: 0.2, albedo: 1.0, l_g: 1e15, r0: 400.0 };
    let d = diffusion_constant(&model).unwrap();
    assert_relative_eq!(d.l_tr, 100.0, max_relative = 1e-14);
    assert_relative_eq!(d.d, 0.5 * 100.0 / 3.0, max_relative = 1e-14);
    assert_relative_eq!(letokhov_threshold(100.0, 300.0).unwrap(), PI * 100.0, max_relative = 1e-14);
    // Without gain the fundamental absorbing-sphere mode decays at D(π/R)².
    let mode = solve_gain_diffusion_sphere(&model, Boundary::Absorbing, 400).unwrap();
    assert_relative_eq!(mode.growth_rate, -d.d * (PI / model.r0).powi(2), max_relative = 1e-3);
}

#[test]
fn group_velocity_of_a_lorentzian() {
    let n = 1e-4;
    let chi_re = |w: f64| (-0.75 * n / Complex64::new(w, 0.5)).re;
    // d/dΔ Re[−(3/4)n/(Δ + i/2)] = (3/4)n(Δ² − 1/4)/(Δ² + 1/4)².
    for w in [-1.0, 0.0, 0.3] {
        let slope = 0.75 * n * (w * w - 0.25) / (w * w + 0.25f64).powi(2);
        let v = group_velocity(chi_re, w, 1e3, 1e-3, 1e-3).unwrap();
        assert_relative_eq!(v.dchi_domega, slope, max_relative = 1e-8);
        assert_relative_eq!(v.v_g, 1.0 / (1.0 + 2.0 * PI * 1e3 * slope), max_relative = 1e-8);
    }
}

#[test]
fn schmidt_closed_forms() {
    for n_bar in [0.1, 1.0, 7.0] {
        assert_relative_eq!(schmidt_coefficient(n_bar, 0, 0).unwrap(), 1.0 / (1.0 + n_bar), max_relative = 1e-14);
        assert_relative_eq!(
            schmidt_coefficient(n_bar, 1, 1).unwrap(),
            -n_bar / (1.0 + n_bar).powi(2),
            max_relative = 1e-14
        );
        // The truncated square sums to (1 − x^{N+1})² with x = n̄/(1+n̄).
        let state = PsiMinusState { n_bar, n_max: 40 };
        let x = n_bar / (1.0 + n_bar);
        let closed = (1.0 - x.powi(41)).powi(2);
        assert_relative_eq!(state.truncated_norm().unwrap(), closed, max_relative = 1e-13);
    }
}
