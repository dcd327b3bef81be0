//! Extinction spectrum of a dense ball of two-level atoms from exact
//! coupled dipoles, against Mie scattering by a ball with the
//! self-consistent permittivity and against the bulk Im χ.
//!
//! cargo run --release --example dense_spectrum -- [configurations] [n0]

use coldscatter::microdipole::{
    ball_radius, cross_section_spectrum, random_ball, self_consistent_epsilon, sphere_extinction, DipoleModel,
    RunningStats, CONTACT_FLOOR,
};
use nalgebra::Vector3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap_or(0)
}

fn main() -> coldscatter::Result<()> {
    let mut args = std::env::args().skip(1);
    let configurations: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);
    let n0: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.05);
    let n = 50;
    let radius = ball_radius(n, n0);
    let det: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
    let k = Vector3::z();
    let e = Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut stats = RunningStats::new(det.len());
    for _ in 0..configurations {
        let pos = random_ball(n, radius, CONTACT_FLOOR, &mut rng)?;
        stats.push(&cross_section_spectrum(&pos, DipoleModel::Vector, &det, &k, &e)?);
    }
    let micro = stats.mean().to_vec();
    let err = stats.stderr();
    let mut mie = Vec::new();
    let mut chi = Vec::new();
    for d in &det {
        let eps = self_consistent_epsilon(n0, *d)?;
        mie.push(sphere_extinction(eps.eps, radius, 1.0)?);
        chi.push(eps.chi.im);
    }
    println!("{n} atoms in a ball of radius {radius:.2} λbar (n0 = {n0}), {configurations} configurations");
    println!("  Δ (γ)   Q0 dipoles        Q0 Mie    Im χ");
    for i in (0..det.len()).step_by(2) {
        println!("  {:5.2}   {:7.3} ± {:5.3}   {:7.3}   {:.5}", det[i], micro[i], err[i], mie[i], chi[i]);
    }
    println!(
        "peaks: dipoles {:+.2} γ, Mie {:+.2} γ, bulk Im χ {:+.2} γ",
        det[argmax(&micro)],
        det[argmax(&mie)],
        det[argmax(&chi)]
    );
    Ok(())
}
