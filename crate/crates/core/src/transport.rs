//! Diffusion limit of radiative transport: group velocity, diffusion
//! constant, gain-diffusion eigenmodes of a sphere and the Letokhov
//! threshold. Lengths in λbar, rates in γ, speeds in units of c.

use crate::error::{Error, Result};

/// Group velocity and the dispersion slope it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupVelocity {
    /// v_g / c.
    pub v_g: f64,
    /// dχ'/dω per γ.
    pub dchi_domega: f64,
}

/// v_g from 1/v_g = 1 + 2π ω̄ dχ'/dω, with ω̄ the optical carrier in γ units.
///
/// The slope is a Richardson-extrapolated central difference with step `h`;
/// when the h and h/2 estimates disagree by more than `rel_tol` the
/// sampling is too coarse for the local dispersion and a numeric error is
/// returned.
pub fn group_velocity<F: Fn(f64) -> f64>(
    chi_re: F,
    omega: f64,
    omega_carrier: f64,
    h: f64,
    rel_tol: f64,
) -> Result<GroupVelocity> {
    if !(h > 0.0) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let central = |step: f64| (chi_re(omega + step) - chi_re(omega - step)) / (2.0 * step);
    let d1 = central(h);
    let d2 = central(h / 2.0);
    let d = (4.0 * d2 - d1) / 3.0;
    let scale = d.abs().max(d1.abs()).max(f64::MIN_POSITIVE);
    if (d2 - d1).abs() > rel_tol * scale && (d2 - d1).abs() > 1e-300 {
        return Err(Error::numeric(format!(
            "dispersion slope unstable at ω={omega}: {d1:.6e} (h) vs {d2:.6e} (h/2)"
        )));
    }
    let inv = 1.0 + 2.0 * std::f64::consts::PI * omega_carrier * d;
    Ok(GroupVelocity { v_g: 1.0 / inv, dchi_domega: d })
}

/// Parameters of the scalar diffusion model on a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionModel {
    pub v_bar: f64,
    pub l0_bar: f64,
    pub cos_mean: f64,
    pub albedo: f64,
    /// Gain length; `f64::INFINITY` without gain.
    pub l_g: f64,
    pub r0: f64,
}

impl DiffusionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_bar > 0.0) || !(self.l0_bar > 0.0) || !(self.r0 > 0.0) {
            return Err(Error::domain("v_bar, l0_bar and r0 must be positive"));
        }
        if !(0.0..=1.0).contains(&self.albedo) {
            return Err(Error::domain(format!("albedo {} outside [0, 1]", self.albedo)));
        }
        if !(self.l_g > 0.0) {
            return Err(Error::domain("gain length must be positive (use infinity for none)"));
        }
        Ok(())
    }

    /// Net linear source rate: gain minus absorption.
    pub fn source_rate(&self) -> f64 {
        self.v_bar / self.l_g - self.v_bar * (1.0 - self.albedo) / self.l0_bar
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffusion {
    pub d: f64,
    pub l_tr: f64,
}

pub fn diffusion_constant(model: &DiffusionModel) -> Result<Diffusion> {
    if model.cos_mean >= 1.0 {
        return Err(Error::domain("⟨cosθ⟩ must be below 1"));
    }
    let l_tr = model.l0_bar / (1.0 - model.cos_mean);
    Ok(Diffusion { d: l_tr * model.v_bar / 3.0, l_tr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// W(r0) = 0.
    Absorbing,
    /// −D W'(r0) = v̄ W(r0)/2.
    Mixed,
    /// W'(r0) = 0.
    Reflecting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainMode {
    /// Dominant eigenvalue of D∆ + source (γ units); positive means growth.
    pub growth_rate: f64,
    pub radii: Vec<f64>,
    /// Eigenfunction normalised to a unit maximum.
    pub profile: Vec<f64>,
}

/// Tridiagonal radial operator: (lower, diag, upper) on nodes 0..n.
fn radial_operator(model: &DiffusionModel, d: f64, boundary: Boundary, n_cells: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = model.r0 / n_cells as f64;
    let h2 = h * h;
    let c = model.source_rate();
    let unknowns = match boundary {
        Boundary::Absorbing => n_cells,
        _ => n_cells + 1,
    };
    let radii: Vec<f64> = (0..unknowns).map(|i| i as f64 * h).collect();
    let mut lo = vec![0.0; unknowns];
    let mut di = vec![0.0; unknowns];
    let mut up = vec![0.0; unknowns];
    // Regularity at the centre: ∆W → 3W'' = 6(W1 − W0)/h².
    di[0] = -6.0 * d / h2 + c;
    up[0] = 6.0 * d / h2;
    for i in 1..unknowns {
        let r = radii[i];
        if i == n_cells {
            // Boundary node with a ghost point eliminated through W'(r0) = −κW.
            let kappa = match boundary {
                Boundary::Mixed => model.v_bar / (2.0 * d),
                _ => 0.0,
            };
            lo[i] = 2.0 * d / h2;
            di[i] = d * (-2.0 / h2 - 2.0 * kappa / h - 2.0 * kappa / r) + c;
        } else {
            lo[i] = d * (1.0 / h2 - 1.0 / (r * h));
            di[i] = -2.0 * d / h2 + c;
            up[i] = d * (1.0 / h2 + 1.0 / (r * h));
        }
    }
    (lo, di, up, radii)
}

/// Solves (diag + lo·shift-down + up·shift-up) x = rhs by the Thomas algorithm.
fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut beta = di[0];
    if beta.abs() < 1e-300 {
        return Err(Error::numeric("tridiagonal pivot vanished"));
    }
    x[0] = rhs[0] / beta;
    for i in 1..n {
        c[i - 1] = up[i - 1] / beta;
        beta = di[i] - lo[i] * c[i - 1];
        if beta.abs() < 1e-300 {
            return Err(Error::numeric("tridiagonal pivot vanished"));
        }
        x[i] = (rhs[i] - lo[i] * x[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

fn dominant_mode(model: &DiffusionModel, boundary: Boundary, n_cells: usize) -> Result<GainMode> {
    let diff = diffusion_constant(model)?;
    let (lo, di, up, radii) = radial_operator(model, diff.d, boundary, n_cells);
    // The spectrum lies below the source rate; shifting above it makes the
    // dominant mode the smallest eigenvalue of (σ − L).
    let sigma = model.source_rate() + diff.d / (model.r0 * model.r0);
    let neg_lo: Vec<f64> = lo.iter().map(|v| -v).collect();
    let neg_up: Vec<f64> = up.iter().map(|v| -v).collect();
    let shifted: Vec<f64> = di.iter().map(|v| sigma - v).collect();
    let mut y: Vec<f64> = radii.iter().map(|r| 1.0 - 0.5 * r / model.r0).collect();
    let mut lambda = f64::NAN;
    for _ in 0..500 {
        let x = thomas(&neg_lo, &shifted, &neg_up, &y)?;
        let mu = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / y.iter().map(|b| b * b).sum::<f64>();
        let next = sigma - 1.0 / mu;
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        y = x.iter().map(|v| v / norm).collect();
        let done = (next - lambda).abs() <= 1e-14 * (sigma.abs() + diff.d / (model.r0 * model.r0));
        lambda = next;
        if done {
            break;
        }
    }
    let sign = if y[0] < 0.0 { -1.0 } else { 1.0 };
    let mut profile: Vec<f64> = y.iter().map(|v| v * sign).collect();
    let mut radii = radii;
    if boundary == Boundary::Absorbing {
        radii.push(model.r0);
        profile.push(0.0);
    }
    Ok(GainMode { growth_rate: lambda, radii, profile })
}

/// Lowest diffusion mode of a sphere with gain and loss.
///
/// Second-order radial finite differences on `n_cells` intervals, dominant
/// eigenvalue by shifted inverse iteration. A second solve on half the grid
/// guards against under-resolution: if the two disagree by more than 0.5%
/// of the diffusive rate D/r0², a numeric error reports both values.
pub fn solve_gain_diffusion_sphere(model: &DiffusionModel, boundary: Boundary, n_cells: usize) -> Result<GainMode> {
    model.validate()?;
    if n_cells < 8 {
        return Err(Error::domain("at least 8 radial cells are required"));
    }
    let fine = dominant_mode(model, boundary, n_cells)?;
    let coarse = dominant_mode(model, boundary, n_cells / 2)?;
    let scale = diffusion_constant(model)?.d / (model.r0 * model.r0);
    if (fine.growth_rate - coarse.growth_rate).abs() > 0.005 * scale.max(fine.growth_rate.abs()) {
        return Err(Error::numeric(format!(
            "radial grid not converged: {} cells gives {:.6e}, {} cells gives {:.6e}",
            n_cells,
            fine.growth_rate,
            n_cells / 2,
            coarse.growth_rate
        )));
    }
    Ok(fine)
}

/// Critical sphere radius π√(l_tr l_g / 3) for diffusive gain.
pub fn letokhov_threshold(l_tr: f64, l_g: f64) -> Result<f64> {
    if !(l_tr > 0.0) || !(l_g > 0.0) {
        return Err(Error::domain("l_tr and l_g must be positive"));
    }
    Ok(std::f64::consts::PI * (l_tr * l_g / 3.0).sqrt())
}

/// Radius at which the dominant growth rate changes sign, by bisection on
/// [r_lo, r_hi]. The bracket must straddle the sign change.
pub fn critical_radius(model: &DiffusionModel, boundary: Boundary, n_cells: usize, r_lo: f64, r_hi: f64) -> Result<f64> {
    let rate = |r0: f64| solve_gain_diffusion_sphere(&DiffusionModel { r0, ..*model }, boundary, n_cells).map(|m| m.growth_rate);
    let (mut a, mut b) = (r_lo, r_hi);
    let (fa, fb) = (rate(a)?, rate(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::domain(format!("no sign change of the growth rate on [{r_lo}, {r_hi}]")));
    }
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if rate(m)?.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-12 * b {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Energy density W and radial current J sampled on a (time × radius) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    /// Indexed [time][radius].
    pub values: Vec<Vec<f64>>,
}

fn derivative(f: &[f64], x: &[f64], i: usize) -> f64 {
    let n = f.len();
    if n < 2 {
        return 0.0;
    }
    if i == 0 {
        (f[1] - f[0]) / (x[1] - x[0])
    } else if i == n - 1 {
        (f[n - 1] - f[n - 2]) / (x[n - 1] - x[n - 2])
    } else {
        (f[i + 1] - f[i - 1]) / (x[i + 1] - x[i - 1])
    }
}

/// ∂W/∂t + ∇·J + v̄(1−a)/l̄0·W on the common grid, for spherically
/// symmetric fields (∇·J = r⁻²∂(r²J)/∂r, and 3∂J/∂r at the centre).
pub fn continuity_residual(w: &RadialField, j: &RadialField, model: &DiffusionModel) -> Result<Vec<Vec<f64>>> {
    if w.times != j.times || w.radii != j.radii {
        return Err(Error::domain("W and J must share one time and radius grid"));
    }
    let nt = w.times.len();
    let nr = w.radii.len();
    if w.values.len() != nt || j.values.len() != nt || w.values.iter().chain(&j.values).any(|row| row.len() != nr) {
        return Err(Error::domain("field arrays do not match the declared grid"));
    }
    let loss = model.v_bar * (1.0 - model.albedo) / model.l0_bar;
    let mut out = vec![vec![0.0; nr]; nt];
    for (t, row) in out.iter_mut().enumerate() {
        let flux: Vec<f64> = w.radii.iter().zip(&j.values[t]).map(|(r, jv)| r * r * jv).collect();
        for (i, cell) in row.iter_mut().enumerate() {
            let series: Vec<f64> = w.values.iter().map(|v| v[i]).collect();
            // A single snapshot is treated as static.
            let dwdt = if nt > 1 { derivative(&series, &w.times, t) } else { 0.0 };
            let r = w.radii[i];
            let div = if r == 0.0 {
                3.0 * derivative(&j.values[t], &w.radii, i)
            } else {
                derivative(&flux, &w.radii, i) / (r * r)
            };
            *cell = dwdt + div + loss * w.values[t][i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(r0: f64) -> DiffusionModel {
        DiffusionModel { v_bar: 1.0, l0_bar: 1.0, cos_mean: 0.0, albedo: 1.0, l_g: f64::INFINITY, r0 }
    }

    #[test]
    fn absorbing_sphere_fundamental_mode() {
        let m = model(10.0);
        let mode = solve_gain_diffusion_sphere(&m, Boundary::Absorbing, 400).unwrap();
        let exact = -(1.0 / 3.0) * std::f64::consts::PI.powi(2) / 100.0;
        assert!((mode.growth_rate / exact - 1.0).abs() < 1e-3);
    }

    #[test]
    fn reflecting_sphere_conserves() {
        let mode = solve_gain_diffusion_sphere(&model(5.0), Boundary::Reflecting, 200).unwrap();
        assert!(mode.growth_rate.abs() < 1e-10);
    }
}
