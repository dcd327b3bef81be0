//! Random-laser threshold in a Raman-pumped ⁸⁵Rb cloud: order-resolved
//! escape of spontaneously emitted Raman photons and the fitted growth of
//! the high-order tail as the control Rabi frequency rises.
//!
//! cargo run --release --example gain_transport -- [trajectories] [b0]

use coldscatter::angular::{HalfInt, LevelScheme};
use coldscatter::cli::{build_control_field, ControlSpec};
use coldscatter::mcscatter::{gain_transport, tail_log_ratio, Cloud, DensityProfile, McConfig, Source};
use coldscatter::medium::{kinetic_lengths, raman_gain_susceptibility, Atom, GroundState};
use nalgebra::Vector3;
use num_complex::Complex64;

fn main() -> coldscatter::Result<()> {
    let mut args = std::env::args().skip(1);
    let trajectories: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5000);
    let b0: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(30.0);

    let scheme = LevelScheme::rb85_d2();
    let atom = Atom::new(&scheme);
    let n0 = 1e-3;
    let ground = GroundState::isotropic(&atom, &[(HalfInt::int(2), 0.6), (HalfInt::int(3), 0.4)], n0)?;
    let e = |f| scheme.excited_level(HalfInt::int(f)).map_or(0.0, |l| l.energy);
    let x = Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO);

    println!("b0 = {b0}, {trajectories} trajectories per point");
    println!("  Ω (γ)   l_ex/λbar   l_g/λbar    tail slope   unstable");
    for rabi in [0.5, 2.0, 4.0, 6.0, 8.0, 12.0] {
        // π control on F0=2 → F=3, tuned so the Raman line lands on F0=3 → F=4.
        let spec = ControlSpec {
            rabi,
            detuning: e(4) - e(3),
            f0: 2,
            m0: 0,
            f: 3,
            polarization: "pi".into(),
            ground_width: 0.05,
            raman_line: Some(0.0),
        };
        let control = build_control_field(&atom, &ground, &spec)?;
        let gain = raman_gain_susceptibility(&atom, &ground, &control, 0.0);
        let lengths = kinetic_lengths(&atom, &ground, Some(&control), 0.0, &x, Some(&gain))?;

        let profile = DensityProfile::Gaussian { r0: 1.0 };
        let r0 = b0 / (profile.central_column() * n0 * 2.0 * std::f64::consts::PI * 9.0 / 7.0);
        let cloud = Cloud::new(atom.clone(), ground.clone(), DensityProfile::Gaussian { r0 }, Some(control))?;
        let mut cfg = McConfig::beam(x, 0.0);
        cfg.source = Source::SpontaneousRaman;
        cfg.max_order = 60;
        cfg.tail_window = 10;
        cfg.weight_floor = 1e-12;
        let r = gain_transport(&cloud, &cfg, trajectories, 3)?;
        let by: Vec<f64> = r.escaped_by_order().iter().map(|p| p.0).collect();
        let slope = tail_log_ratio(&by, cfg.tail_window).unwrap_or(f64::NAN);
        let l_g = lengths.l_g().map_or("passive".to_string(), |l| format!("{l:.0}"));
        println!("  {rabi:5.1}   {:9.1}   {l_g:>9}   {slope:+.4}      {}", lengths.l_ex, r.unstable);
    }
    Ok(())
}
