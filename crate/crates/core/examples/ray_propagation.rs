//! Polarisation-resolved propagation through a birefringent, absorbing
//! medium: the phase-integral amplitude matrix against the plane-wave
//! result for the two eigenpolarisations.
//!
//! cargo run --example ray_propagation

use std::f64::consts::PI;

use coldscatter::propagation::{green_asymptote, segment_amplitude, LocalFrame, RaySegment};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

fn main() -> coldscatter::Result<()> {
    let chi_perp = Complex64::new(1e-3, 4e-3);
    let chi_par = Complex64::new(-2e-3, 1e-3);
    // Uniaxial along lab z inside a ball of radius 40 λbar.
    let medium = move |r: &Vector3<f64>, _omega: f64| {
        if r.norm() < 40.0 {
            Matrix3::from_diagonal(&Vector3::new(chi_perp, chi_perp, chi_par))
        } else {
            Matrix3::zeros()
        }
    };
    let seg = RaySegment::new(Vector3::new(-30.0, 0.0, 0.0), Vector3::new(30.0, 0.0, 0.0), 0.0)?;
    let x = segment_amplitude(&seg, &medium)?;
    let frame = LocalFrame::for_ray(&seg.direction);
    let lab = x.embed(&frame);

    let i = Complex64::i();
    let expect = |chi: Complex64| (i * 2.0 * PI * chi * seg.length).exp();
    println!("ray along x, length {} λbar", seg.length);
    println!("  z-polarised: {:.6}  plane wave {:.6}", lab[(2, 2)], expect(chi_par));
    println!("  y-polarised: {:.6}  plane wave {:.6}", lab[(1, 1)], expect(chi_perp));
    println!("  y→z mixing:  {:.2e}", lab[(2, 1)].norm());

    // A diagonal ray sees a mixture and converts polarisation.
    let diag = RaySegment::new(Vector3::new(-20.0, 0.0, -20.0), Vector3::new(20.0, 0.0, 20.0), 0.0)?;
    let xd = segment_amplitude(&diag, &medium)?;
    println!("ray along (x+z)/√2: X = [{:.4}, {:.4}; {:.4}, {:.4}]", xd.x[(0, 0)], xd.x[(0, 1)], xd.x[(1, 0)], xd.x[(1, 1)]);

    let g = green_asymptote(&Vector3::zeros(), &Vector3::new(0.0, 35.0, 0.0), 0.0, &medium, 5.0)?;
    println!("far-field propagator to (0, 35, 0): G_zz = {:.4e}, G_xx = {:.4e}", g[(2, 2)], g[(0, 0)]);
    Ok(())
}
