//! Coherent backscattering cone of a Gaussian cloud of F0=0 → F=1 atoms in
//! all four polarisation channels.
//!
//! cargo run --release --example cbs_cone -- [trajectories] [b0]

use coldscatter::angular::{HalfInt, LevelScheme};
use coldscatter::mcscatter::{cbs_enhancement, Cloud, DensityProfile, McConfig, PolarizationChannel};
use coldscatter::medium::{Atom, GroundState};

fn main() -> coldscatter::Result<()> {
    let mut args = std::env::args().skip(1);
    let trajectories: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let b0: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5.0);

    let atom = Atom::new(&LevelScheme::two_level_0_1());
    let r0 = 20.0;
    let n0 = b0 / ((2.0 * std::f64::consts::PI).sqrt() * 6.0 * std::f64::consts::PI * r0);
    let ground = GroundState::isotropic(&atom, &[(HalfInt::ZERO, 1.0)], n0)?;
    let cloud = Cloud::new(atom, ground, DensityProfile::Gaussian { r0 }, None)?;
    println!("b0 = {:.3}, r0 = {r0} λbar, {trajectories} trajectories", cloud.b0());

    let theta: Vec<f64> = (0..6).map(|i| i as f64 * 0.01).collect();
    let base = McConfig::beam(PolarizationChannel::LinPar.input(), 0.0);
    for channel in PolarizationChannel::ALL {
        let t = std::time::Instant::now();
        let r = cbs_enhancement(&cloud, &base, channel, 0.0, &theta, trajectories, 7)?;
        println!("{:<9} ({:.1} s)", channel.label(), t.elapsed().as_secs_f64());
        println!("  θ (rad)   S          L          C          η        η_ms ± err");
        for i in 0..theta.len() {
            println!(
                "  {:<8.3}  {:<9.4}  {:<9.4}  {:<9.4}  {:<7.4}  {:.4} ± {:.4}",
                r.theta[i], r.single[i], r.ladder[i], r.crossed[i], r.eta[i], r.eta_multiple[i], r.eta_multiple_err[i]
            );
        }
    }
    Ok(())
}
