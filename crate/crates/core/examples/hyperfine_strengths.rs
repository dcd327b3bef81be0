//! Relative hyperfine line strengths of the ⁸⁵Rb D2 line from the
//! Wigner–Eckart machinery, with the per-sublevel sum rule.
//!
//! cargo run --example hyperfine_strengths

use coldscatter::angular::{dipole_matrix_element, LevelScheme};

fn main() -> coldscatter::Result<()> {
    let scheme = LevelScheme::rb85_d2();
    let j2 = scheme.reduced_j_squared();
    println!("F0 → F   S(F0,F) = Σ|⟨F m|d_q|F0 m0⟩|² / ((2F0+1)·|⟨J‖d‖J0⟩|²)");
    for g in &scheme.ground {
        let mut total = 0.0;
        for e in &scheme.excited {
            let mut s = 0.0;
            for m0 in g.f.projections() {
                for m in e.f.projections() {
                    for q in -1..=1 {
                        s += dipole_matrix_element(&scheme, e.f, m, g.f, m0, q)?.norm_sqr();
                    }
                }
            }
            let s = s / (g.f.multiplicity() as f64 * j2);
            total += s;
            if s > 0.0 {
                println!("{} → {}    {s:.5}", g.f, e.f);
            }
        }
        // Summed over all excited levels each ground sublevel sees the full J strength.
        println!("{} → all  {total:.5}", g.f);
    }
    Ok(())
}
