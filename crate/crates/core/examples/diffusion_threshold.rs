//! Critical radius of a diffusive gain sphere from the radial diffusion
//! eigenproblem, against the Letokhov estimate, over a decade of gain lengths.
//!
//! cargo run --release --example diffusion_threshold

use coldscatter::transport::{
    critical_radius, diffusion_constant, letokhov_threshold, solve_gain_diffusion_sphere, Boundary, DiffusionModel,
};

fn main() -> coldscatter::Result<()> {
    let base = DiffusionModel { v_bar: 1.0, l0_bar: 100.0, cos_mean: 0.0, albedo: 1.0, l_g: 1000.0, r0: 1.0 };
    let l_tr = diffusion_constant(&base)?.l_tr;
    println!("l_tr = {l_tr} λbar, absorbing boundary");
    println!("  l_g/l_tr   Letokhov R_c   eigenproblem R_c   ratio");
    for ratio in [3.0, 10.0, 30.0] {
        let model = DiffusionModel { l_g: ratio * l_tr, ..base };
        let analytic = letokhov_threshold(l_tr, model.l_g)?;
        let rc = critical_radius(&model, Boundary::Absorbing, 200, 0.5 * analytic, 2.0 * analytic)?;
        println!("  {ratio:8.1}   {analytic:12.2}   {rc:16.2}   {:.4}", rc / analytic);
    }

    let model = DiffusionModel { r0: 900.0, ..base };
    for boundary in [Boundary::Absorbing, Boundary::Mixed, Boundary::Reflecting] {
        let mode = solve_gain_diffusion_sphere(&model, boundary, 200)?;
        println!("r0 = 900: {boundary:?} boundary, growth rate {:+.4e} γ", mode.growth_rate);
    }
    Ok(())
}
