//! Truncation of the two-mode Ψ⁻ state: Schmidt coefficients, the number
//! of Fock states needed for a given norm defect, and the Mach–Zehnder
//! read-out of a stored atom number.
//!
//! cargo run --example psi_minus

use coldscatter::protocols::{mz_signal, schmidt_coefficient, PsiMinusState};

fn main() -> coldscatter::Result<()> {
    println!("  n̄      N_max   1 − Σ Λ²       bound");
    for n_bar in [0.1, 1.0, 10.0, 100.0] {
        let s = PsiMinusState::with_tolerance(n_bar, 1e-10)?;
        println!("  {n_bar:6.1}  {:5}   {:.3e}     {:.3e}", s.n_max, 1.0 - s.truncated_norm()?, s.tail_bound());
    }
    let row: Vec<String> = (0..5).map(|n| format!("{:+.4}", schmidt_coefficient(1.0, n, n).unwrap_or(f64::NAN))).collect();
    println!("diagonal Λ_nn at n̄ = 1: {}", row.join(" "));
    for atoms in [0.0, 100.0, 1000.0] {
        println!("MZ difference current for {atoms:6.0} atoms: {:.3}", mz_signal(1.0, 0.01, atoms)?);
    }
    Ok(())
}
