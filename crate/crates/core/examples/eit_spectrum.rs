//! Electromagnetically induced transparency on the ⁸⁷Rb Λ system: probe
//! absorption with and without a resonant π control field.
//!
//! cargo run --example eit_spectrum -- [rabi]

use coldscatter::angular::{HalfInt, LevelScheme};
use coldscatter::medium::{susceptibility, Atom, ControlField, GroundState, ReferenceTransition};

fn main() -> coldscatter::Result<()> {
    let rabi: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1.0);
    let atom = Atom::new(&LevelScheme::rb87_d2_lambda());
    let ground = GroundState::isotropic(&atom, &[(HalfInt::int(1), 1.0)], 1e-3)?;
    let reference = ReferenceTransition { f0: HalfInt::int(2), m0: HalfInt::ONE, f: HalfInt::ONE, m: HalfInt::ONE };
    let control = ControlField::pi(&atom, rabi, 0.0, reference, &[HalfInt::int(2)])?;

    let peak = susceptibility(&atom, &ground, None, 0.0)?.chi[(2, 2)].im;
    println!("control Rabi frequency {rabi} γ; Im χ_zz normalised to the bare line centre");
    println!("  Δ (γ)    bare      dressed   Re χ_zz (dressed)");
    for i in -12..=12 {
        let w = i as f64 / 6.0;
        let bare = susceptibility(&atom, &ground, None, w)?.chi[(2, 2)];
        let dressed = susceptibility(&atom, &ground, Some(&control), w)?.chi[(2, 2)];
        println!("  {w:6.3}  {:8.4}  {:8.4}  {:+.4e}", bare.im / peak, dressed.im / peak, dressed.re);
    }
    Ok(())
}
