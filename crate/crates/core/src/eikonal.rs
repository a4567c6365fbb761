//! Phase construction from the outgoing velocity field: the line-integral
//! phase phi with grad phi = F, the eikonal identity 1/2 |grad phi|^2 + V =
//! lambda, the incoming phase, and the classification of scattering orbits as
//! mixed-problem solutions beyond a matching time.

use std::cell::RefCell;

use nalgebra::DVector;
use serde::Serialize;

use crate::asymptotics::{omega_plus, sample_state};
use crate::error::{Error, Result};
use crate::perturbed::{field, solve_mixed_perturbed, PerturbedOptions};
use crate::potentials::{total_potential, Perturbation, RadialPotential};
use crate::quad;
use crate::radial::{l_of_theta1, radial_field, ScatteringData, Trajectory};

#[derive(Clone, Debug)]
pub struct EikonalOptions {
    /// base radius R0 of the phase normalization phi(R0 omega) = sqrt(2 lambda) R0
    pub r0: f64,
    pub field_opts: PerturbedOptions,
    /// relative tolerance of the radial-part line quadrature
    pub quad_tol: f64,
}

impl Default for EikonalOptions {
    fn default() -> Self {
        EikonalOptions { r0: 2.0, field_opts: PerturbedOptions::fast(), quad_tol: 1e-11 }
    }
}

/// Integrate the segment component of a vector field from base to base + seg,
/// with errors from the field solver carried out of the quadrature.
fn line_integral(
    seg: &DVector<f64>,
    base: &DVector<f64>,
    f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    tol: f64,
) -> Result<f64> {
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let v = quad::adaptive(
        |l| {
            if failure.borrow().is_some() {
                return 0.0;
            }
            let p = base + l * seg;
            match f(&p) {
                Ok(fv) => seg.dot(&fv),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    0.0
                }
            }
        },
        0.0,
        1.0,
        tol,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    v
}

// graded panels for the smooth perturbation correction F - F1 along segments
const DEV_PANELS: [(f64, f64); 2] = [(0.0, 0.2), (0.2, 1.0)];

/// Outgoing phase: the line integral of F from R0 omega to x plus the base
/// value sqrt(2 lambda) R0. The radial part uses the cheap shooting field and
/// the perturbation correction is integrated separately.
pub fn phase(
    pot: &RadialPotential,
    pert: &Perturbation,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<f64> {
    let base = opts.r0 * omega;
    let seg = x - &base;
    let mut phi = (2.0 * lambda).max(0.0).sqrt() * opts.r0;
    if seg.norm() == 0.0 {
        return Ok(phi);
    }
    phi += line_integral(
        &seg,
        &base,
        |p| radial_field(pot, &ScatteringData::new(p.clone(), omega.clone(), lambda)),
        opts.quad_tol,
    )?;
    if !pert.is_zero() {
        let fo = opts.field_opts.clone().primed(pot, pert)?;
        for (a, b) in DEV_PANELS {
            let mut acc = 0.0;
            for (&u, &w) in quad::GL8_X.iter().zip(quad::GL8_W.iter()) {
                let l = a + (b - a) * u;
                let p = &base + l * &seg;
                let s = field(pot, pert, &ScatteringData::new(p, omega.clone(), lambda), &fo)?;
                acc += w * seg.dot(&(&s.f - &s.f1));
            }
            phi += (b - a) * acc;
        }
    }
    Ok(phi)
}

/// Radial-model phase by the arc-then-ray route built from shooting scalars:
/// minus the angular momentum along the base arc, then the radial velocity
/// component along the ray to x. Requires V2 = 0.
pub fn phase_radial(
    pot: &RadialPotential,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<f64> {
    let r = x.norm();
    let r0 = opts.r0;
    let cos_t = (x.dot(omega) / r).clamp(-1.0, 1.0);
    let theta_hat = cos_t.acos();
    let mut phi = (2.0 * lambda).max(0.0).sqrt() * r0;
    if theta_hat > 0.0 {
        // the angular component of F points back toward omega
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let arc = quad::adaptive(
            |th| match l_of_theta1(pot, lambda, r0, -th) {
                Ok(l) => l.abs(),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    0.0
                }
            },
            0.0,
            theta_hat,
            opts.quad_tol,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        phi -= arc;
    }
    if r > r0 {
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let ray = quad::adaptive(
            |rho| {
                let run = || -> Result<f64> {
                    let g = pot.g(lambda, rho)?;
                    let l = if theta_hat > 0.0 {
                        l_of_theta1(pot, lambda, rho, -theta_hat)?
                    } else {
                        0.0
                    };
                    let kappa = l / (rho * g);
                    Ok(g * (1.0 - kappa * kappa).max(0.0).sqrt())
                };
                match run() {
                    Ok(v) => v,
                    Err(e) => {
                        *failure.borrow_mut() = Some(e);
                        0.0
                    }
                }
            },
            r0,
            r,
            opts.quad_tol,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        phi += ray;
    }
    Ok(phi)
}

/// Phase by the alternative route of an arc at radius R0 followed by the ray
/// along x-hat; valid for the perturbed field as well. Agreement with `phase`
/// certifies path independence.
pub fn phase_via_arc(
    pot: &RadialPotential,
    pert: &Perturbation,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<f64> {
    let r = x.norm();
    let r0 = opts.r0;
    let xhat = x / r;
    let cos_t = xhat.dot(omega).clamp(-1.0, 1.0);
    let theta_hat = cos_t.acos();
    let fo = opts.field_opts.clone().primed(pot, pert)?;
    let f_at = |p: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(field(pot, pert, &ScatteringData::new(p.clone(), omega.clone(), lambda), &fo)?.f)
    };
    let mut phi = (2.0 * lambda).max(0.0).sqrt() * r0;
    if theta_hat > 1e-14 {
        // rotate from omega toward x-hat in their common plane
        let perp = (&xhat - cos_t * omega) / theta_hat.sin();
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let arc = quad::adaptive(
            |th| {
                if failure.borrow().is_some() {
                    return 0.0;
                }
                let (s, c) = th.sin_cos();
                let p = r0 * (c * omega + s * &perp);
                let tangent = r0 * (-s * omega + c * &perp);
                match f_at(&p) {
                    Ok(fv) => fv.dot(&tangent),
                    Err(e) => {
                        *failure.borrow_mut() = Some(e);
                        0.0
                    }
                }
            },
            0.0,
            theta_hat,
            opts.quad_tol.max(1e-10),
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        phi += arc;
    }
    if r > r0 {
        let seg = (r - r0) * &xhat;
        let base = r0 * &xhat;
        phi += line_integral(&seg, &base, f_at, opts.quad_tol.max(1e-10))?;
    }
    Ok(phi)
}

/// phi on the incoming cone: phi-(x, omega, lambda) = -phi+(x, -omega, lambda).
pub fn incoming_phase(
    pot: &RadialPotential,
    pert: &Perturbation,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<f64> {
    Ok(-phase(pot, pert, x, &(-omega), lambda, opts)?)
}

/// Central-difference gradient of the phase, one coordinate at a time. The
/// phase varies on the scale of |x|, so the relative step 1e-3 keeps the
/// truncation error near 1e-7 of the field magnitude.
pub fn phase_gradient(
    pot: &RadialPotential,
    pert: &Perturbation,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<DVector<f64>> {
    let d = x.len();
    let h = x.norm() * 1e-3;
    let mut grad = DVector::zeros(d);
    for i in 0..d {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let pp = phase(pot, pert, &xp, omega, lambda, opts)?;
        let pm = phase(pot, pert, &xm, omega, lambda, opts)?;
        grad[i] = (pp - pm) / (2.0 * h);
    }
    Ok(grad)
}

#[derive(Clone, Debug)]
pub struct EikonalCheck {
    pub grad_phi: DVector<f64>,
    pub f: DVector<f64>,
    /// 1/2 |grad phi|^2 + V - lambda
    pub residual: f64,
    /// |grad phi - F|
    pub grad_deviation: f64,
}

/// Verify the eikonal identity and the gradient property at one cone point.
pub fn eikonal_residual(
    pot: &RadialPotential,
    pert: &Perturbation,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<EikonalCheck> {
    let fo = opts.field_opts.clone().primed(pot, pert)?;
    let f = field(pot, pert, &ScatteringData::new(x.clone(), omega.clone(), lambda), &fo)?.f;
    let grad = phase_gradient(pot, pert, x, omega, lambda, opts)?;
    let residual = 0.5 * grad.norm_squared() + total_potential(pot, pert, x) - lambda;
    let grad_deviation = (&grad - &f).norm();
    Ok(EikonalCheck { grad_phi: grad, f, residual, grad_deviation })
}

/// Max antisymmetric part of the field Jacobian by central differences; zero
/// certifies that F is a gradient.
pub fn curl_check(
    pot: &RadialPotential,
    pert: &Perturbation,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<f64> {
    let fo = opts.field_opts.clone().primed(pot, pert)?;
    let d = x.len();
    let h = x.norm() * 1e-4;
    let mut cols = Vec::with_capacity(d);
    for i in 0..d {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let fp = field(pot, pert, &ScatteringData::new(xp, omega.clone(), lambda), &fo)?.f;
        let fm = field(pot, pert, &ScatteringData::new(xm, omega.clone(), lambda), &fo)?.f;
        cols.push((fp - fm) / (2.0 * h));
    }
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i + 1..d {
            worst = worst.max((cols[i][j] - cols[j][i]).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct PhaseSample {
    pub x: DVector<f64>,
    pub omega: DVector<f64>,
    pub lambda: f64,
    pub phi: f64,
    pub grad_phi: DVector<f64>,
    pub residual: f64,
}

impl PhaseSample {
    pub fn csv_header(d: usize) -> String {
        let mut cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        cols.push("phi".into());
        cols.extend((1..=d).map(|i| format!("gradphi{i}")));
        cols.push("residual".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.x.iter().map(|v| format!("{v:.16e}")).collect();
        cols.push(format!("{:.16e}", self.phi));
        cols.extend(self.grad_phi.iter().map(|v| format!("{v:.16e}")));
        cols.push(format!("{:.16e}", self.residual));
        cols.join(",")
    }
}

/// Phase, gradient and eikonal residual at one point, for grid exports.
pub fn phase_sample(
    pot: &RadialPotential,
    pert: &Perturbation,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &EikonalOptions,
) -> Result<PhaseSample> {
    let phi = phase(pot, pert, x, omega, lambda, opts)?;
    let check = eikonal_residual(pot, pert, x, omega, lambda, opts)?;
    Ok(PhaseSample {
        x: x.clone(),
        omega: omega.clone(),
        lambda,
        phi,
        grad_phi: check.grad_phi,
        residual: check.residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MatchDiagnostics {
    /// sup over the matched window of (t-1)^2 |q(t)|
    pub kappa_measured: f64,
    /// admissible ceiling (1 + eps_bar)/2
    pub kappa_limit: f64,
    pub kappa_ok: bool,
    /// min over the window of 1.1 t_tilde(|y|) - (t - 1)
    pub time_comparison_margin: f64,
    pub time_comparison_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassificationResult {
    pub omega_plus: Vec<f64>,
    pub omega_minus: Option<Vec<f64>>,
    pub lambda: f64,
    pub t0: f64,
    pub position_match: f64,
    pub velocity_match: f64,
    pub diagnostics: MatchDiagnostics,
}

#[derive(Clone, Debug)]
pub struct ClassifyOptions {
    pub field_opts: PerturbedOptions,
    pub position_tol: f64,
    pub velocity_tol: f64,
    /// cone half-opening used to pick the first candidate matching time
    pub sigma: f64,
    pub max_doublings: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            field_opts: PerturbedOptions::coarse(),
            position_tol: 1e-4,
            velocity_tol: 1e-4,
            sigma: 0.2,
            max_doublings: 20,
        }
    }
}

/// Represent a scattering orbit beyond some T0 as the mixed-problem solution
/// with its own asymptotic data (omega+, lambda). T is doubled from the first
/// cone-entry time until the mixed solution reproduces the orbit on [T, 10T].
pub fn classify_orbit(
    pot: &RadialPotential,
    pert: &Perturbation,
    traj: &Trajectory,
    opts: &ClassifyOptions,
) -> Result<ClassificationResult> {
    let n = traj.times.len();
    if n < 8 {
        return Err(Error::Domain("classification needs a sampled trajectory".into()));
    }
    let last = n - 1;
    let kinetic = 0.5 * traj.velocities[last].norm_squared();
    let mut lambda = kinetic + total_potential(pot, pert, &traj.positions[last]);
    // integration round-off can leave a zero-energy orbit marginally negative
    if lambda < 0.0 && lambda > -1e-9 * kinetic.max(1e-300) {
        lambda = 0.0;
    }
    let asym = omega_plus(traj)?;
    let mut om = DVector::from_vec(asym.omega_plus.clone());

    // first time the running direction aligns with omega+ inside the cone
    let mut t_enter = traj.times[last];
    for k in 0..n {
        let p = &traj.positions[k];
        if p.norm() >= 1.0 && p.dot(&om) >= (1.0 - opts.sigma) * p.norm() {
            t_enter = traj.times[k];
            break;
        }
    }

    let fo = opts.field_opts.clone().primed(pot, pert)?;
    let mut t_match = t_enter.max(traj.times[0]);
    let mut attempts = 0usize;
    while attempts < opts.max_doublings {
        attempts += 1;
        let t_end = 10.0 * t_match;
        if t_end > traj.times[last] {
            break;
        }
        let (x_t, _) = sample_state(traj, t_match);
        // the direction-limit extrapolation is too coarse for matching when
        // the direction converges slowly, so refine omega against the orbit:
        // solve the mixed problem with the current estimate, compare far-time
        // directions, and rotate the estimate by the offset. The map has unit
        // derivative, so a few iterations reach solver accuracy.
        let t_far = traj.times[last].min(t_match - 1.0 + fo.t_max);
        let mut sol_opt = None;
        for _ in 0..5 {
            let data = ScatteringData::new(x_t.clone(), om.clone(), lambda);
            let sol = match solve_mixed_perturbed(pot, pert, &data, &fo) {
                Ok(s) => s,
                Err(_) => break,
            };
            let (p_orbit, _) = sample_state(traj, t_far);
            let (p_mixed, _) = sample_state(&sol.y, t_far - t_match + 1.0);
            let delta = &p_orbit / p_orbit.norm() - &p_mixed / p_mixed.norm();
            let step = delta.norm();
            om = (&om + delta).normalize();
            sol_opt = Some(sol);
            if step <= 1e-9 {
                break;
            }
        }
        let sol = match sol_opt {
            Some(s) => s,
            None => {
                t_match *= 2.0;
                continue;
            }
        };
        // the mixed solution's own clock starts at 1 when the orbit is at T
        let checks = crate::util::log_grid(t_match, t_end, 25);
        let mut pos_err = 0.0f64;
        let mut ok = true;
        for &t in &checks {
            let (p_orbit, _) = sample_state(traj, t);
            let (p_mixed, _) = sample_state(&sol.y, t - t_match + 1.0);
            let e = (&p_orbit - p_mixed).norm() / p_orbit.norm();
            pos_err = pos_err.max(e);
            if e > opts.position_tol {
                ok = false;
                break;
            }
        }
        if !ok {
            t_match *= 2.0;
            continue;
        }
        // velocity against the field, the gradient of the outgoing phase
        let mut vel_err = 0.0f64;
        for &t in checks.iter().step_by(6) {
            let (p_orbit, v_orbit) = sample_state(traj, t);
            let g = pot.g(lambda, p_orbit.norm())?;
            let fs = field(pot, pert, &ScatteringData::new(p_orbit, om.clone(), lambda), &fo)?;
            vel_err = vel_err.max((v_orbit - fs.f).norm() / g);
        }
        if vel_err > opts.velocity_tol {
            t_match *= 2.0;
            continue;
        }

        // sufficient-condition diagnostics on the matched window
        let eps_bar = sol.ctx.epsilon_bar;
        let mut kappa_measured = 0.0f64;
        let mut time_margin = f64::INFINITY;
        for (i, &tau) in sol.ctx.grid.iter().enumerate().step_by(sol.ctx.grid.len() / 24) {
            if tau <= 1.0 {
                continue;
            }
            let q = (sol.ctx.qpath.q)(tau);
            let qn = q.symmetric_eigenvalues().iter().fold(0.0f64, |a, &e| a.max(e.abs()));
            kappa_measured = kappa_measured.max((tau - 1.0) * (tau - 1.0) * qn);
            let r = sol.y.positions[i].norm();
            time_margin = time_margin.min(1.1 * pot.t_tilde(r)? - (tau - 1.0));
        }
        let kappa_limit = 0.5 * (1.0 + eps_bar);
        let diagnostics = MatchDiagnostics {
            kappa_measured,
            kappa_limit,
            kappa_ok: kappa_measured < kappa_limit,
            time_comparison_margin: time_margin,
            time_comparison_ok: time_margin > 0.0,
        };
        return Ok(ClassificationResult {
            omega_plus: om.iter().cloned().collect(),
            omega_minus: None,
            lambda,
            t0: t_match,
            position_match: pos_err,
            velocity_match: vel_err,
            diagnostics,
        });
    }
    Err(Error::NoMatch(attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::integrate_in_potential;
    use approx::assert_relative_eq;

    fn dir2(a: f64) -> DVector<f64> {
        DVector::from_vec(vec![a.cos(), a.sin()])
    }

    #[test]
    fn phase_at_base_point() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let opts = EikonalOptions::default();
        let om = dir2(0.3);
        let x = 2.0 * om.clone();
        let phi = phase(&pot, &pert, &x, &om, 0.5, &opts).unwrap();
        assert_relative_eq!(phi, 2.0, epsilon = 1e-12);
        let phi0 = phase(&pot, &pert, &x, &om, 0.0, &opts).unwrap();
        assert_relative_eq!(phi0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coulomb_radial_phase_closed_form() {
        // straight outgoing ray at zero energy: phi = int_2^4 sqrt(2/rho) drho
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let opts = EikonalOptions::default();
        let om = dir2(0.0);
        let x = 4.0 * om.clone();
        let exact = 2.0 * 2.0f64.sqrt() * (2.0 - 2.0f64.sqrt());
        let phi = phase(&pot, &pert, &x, &om, 0.0, &opts).unwrap();
        assert_relative_eq!(phi, exact, epsilon = 1e-9);
        let phi_r = phase_radial(&pot, &x, &om, 0.0, &opts).unwrap();
        assert_relative_eq!(phi_r, exact, epsilon = 1e-9);
    }

    #[test]
    fn phase_routes_agree() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let opts = EikonalOptions::default();
        let om = dir2(0.0);
        for &(r, ang, lam) in &[(20.0, 0.15, 0.5), (35.0, 0.05, 0.5), (25.0, 0.25, 0.0)] {
            let x = r * dir2(ang);
            let a = phase(&pot, &pert, &x, &om, lam, &opts).unwrap();
            let b = phase_radial(&pot, &x, &om, lam, &opts).unwrap();
            let c = phase_via_arc(&pot, &pert, &x, &om, lam, &opts).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-8);
            assert_relative_eq!(a, c, epsilon = 1e-6, max_relative = 1e-7);
        }
    }

    #[test]
    fn eikonal_identity_radial() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let opts = EikonalOptions::default();
        let om = dir2(0.0);
        let x = 30.0 * dir2(0.2);
        let check = eikonal_residual(&pot, &pert, &x, &om, 0.5, &opts).unwrap();
        let scale = 0.5f64.abs() + total_potential(&pot, &pert, &x).abs();
        assert!(check.residual.abs() <= 1e-7 * scale, "residual {}", check.residual);
        assert!(
            check.grad_deviation <= 1e-5 * check.f.norm(),
            "gradient deviation {}",
            check.grad_deviation
        );
    }

    #[test]
    fn eikonal_identity_perturbed() {
        let pot = RadialPotential::power_law(1.0, 1.0);
        let pert = Perturbation::anisotropic(0.05, 1.0, 0.25);
        let opts = EikonalOptions::default();
        let om = dir2(0.1);
        let x = 40.0 * dir2(0.3);
        let check = eikonal_residual(&pot, &pert, &x, &om, 0.0, &opts).unwrap();
        let scale = total_potential(&pot, &pert, &x).abs();
        assert!(check.residual.abs() <= 1e-4 * scale, "residual {}", check.residual);
        assert!(
            check.grad_deviation <= 1e-5 * check.f.norm(),
            "gradient deviation {} vs {}",
            check.grad_deviation,
            1e-5 * check.f.norm()
        );
        let curl = curl_check(&pot, &pert, &x, &om, 0.0, &opts).unwrap();
        assert!(curl <= 1e-5 * check.f.norm() / x.norm(), "curl {curl}");
    }

    #[test]
    fn incoming_phase_identity() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let opts = EikonalOptions::default();
        let om = dir2(0.4);
        let x = -15.0 * dir2(0.45);
        let pin = incoming_phase(&pot, &pert, &x, &om, 0.3, &opts).unwrap();
        let pout = phase(&pot, &pert, &x, &(-&om), 0.3, &opts).unwrap();
        assert_relative_eq!(pin, -pout, epsilon = 1e-13);
    }

    #[test]
    fn classify_self() {
        let pot = RadialPotential::power_law(1.0, 1.0);
        let pert = Perturbation::anisotropic(0.05, 1.0, 0.25);
        let om = dir2(0.1);
        let data = ScatteringData::new(40.0 * dir2(0.2), om, 0.0);
        let sol = solve_mixed_perturbed(&pot, &pert, &data, &PerturbedOptions::coarse()).unwrap();
        let res = classify_orbit(&pot, &pert, &sol.y, &ClassifyOptions::default()).unwrap();
        assert_eq!(res.t0, 1.0);
        assert!(res.position_match <= 1e-4);
        assert!(res.velocity_match <= 1e-4);
        assert!(res.diagnostics.kappa_ok);
        // idempotence of the recovered asymptotic data
        let dot = DVector::from_vec(res.omega_plus.clone()).dot(&data.omega);
        assert!(dot >= 1.0 - 1e-6, "omega+ deviates, dot {dot}");
        assert!((res.lambda - 0.0).abs() <= 1e-6);
    }

    #[test]
    fn classify_integrated_orbit() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let x0 = DVector::from_vec(vec![20.0, 6.0]);
        let v0 = DVector::from_vec(vec![0.9, 0.25]);
        let lam = 0.5 * v0.norm_squared() + pot.v1(x0.norm());
        assert!(lam > 0.0);
        let out: Vec<f64> = crate::util::log_grid(1.0, 2e5, 500);
        let traj =
            integrate_in_potential(&pot, &pert, &x0, &v0, 1.0, 2e5, 1e-10, Some(&out)).unwrap();
        let res = classify_orbit(&pot, &pert, &traj, &ClassifyOptions::default()).unwrap();
        assert!(res.position_match <= 1e-4, "position {}", res.position_match);
        assert!(res.velocity_match <= 1e-4, "velocity {}", res.velocity_match);
        assert!((res.lambda - lam).abs() <= 1e-7);
    }

    #[test]
    fn bound_orbit_rejected() {
        // circular orbit in the Coulomb potential: no escape, no classification
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let r = 5.0f64;
        let vc = (1.0 / r).sqrt();
        let x0 = DVector::from_vec(vec![r, 0.0]);
        let v0 = DVector::from_vec(vec![0.0, vc]);
        let out: Vec<f64> = crate::util::log_grid(1.0, 1e3, 200);
        let traj =
            integrate_in_potential(&pot, &pert, &x0, &v0, 1.0, 1e3, 1e-10, Some(&out)).unwrap();
        assert!(classify_orbit(&pot, &pert, &traj, &ClassifyOptions::default()).is_err());
    }
}
