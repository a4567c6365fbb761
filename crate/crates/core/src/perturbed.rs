//! Perturbed mixed problem: the full orbit y = y1 + z where y1 is the radial
//! reference solution and z is the fixed point of a Picard map built on the
//! decaying-solution operator. The outgoing velocity field F(x) = ydot(1)
//! extends the radial field to anisotropic perturbations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::asymptotics::sample_state;
use crate::error::{Error, Result};
use crate::linforce::{
    hardy_infimum, solve_decaying, uniform_log_grid, CoefficientPath, WeightedGridFunction,
};
use crate::potentials::{check_conditions, total_potential, Perturbation, RadialPotential};
use crate::quad;
use crate::radial::{solve_mixed_radial, Cone, PlanarOrbit, ScatteringData, Trajectory};
use crate::util;

#[derive(Clone, Debug)]
pub struct PerturbedOptions {
    pub t_max: f64,
    pub n_nodes: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Hardy constant reuse across solves of the same potential pair; filled
    /// from check_conditions when absent.
    pub epsilon_bar: Option<f64>,
}

impl Default for PerturbedOptions {
    fn default() -> Self {
        PerturbedOptions { t_max: 1e6, n_nodes: 8000, max_iter: 60, tol: 1e-10, epsilon_bar: None }
    }
}

impl PerturbedOptions {
    /// Cheaper settings for derivative probes and sweeps.
    pub fn coarse() -> Self {
        PerturbedOptions { n_nodes: 2000, ..Default::default() }
    }

    /// Cheapest settings that keep the field accurate to about 1e-6 relative;
    /// used inside phase quadratures.
    pub fn fast() -> Self {
        PerturbedOptions { n_nodes: 1000, ..Default::default() }
    }

    /// Resolve the Hardy constant once so repeated solves skip the audit.
    pub fn primed(mut self, pot: &RadialPotential, pert: &Perturbation) -> Result<Self> {
        if self.epsilon_bar.is_none() {
            let report = check_conditions(pot, pert, 1e6, 1200);
            self.epsilon_bar = Some(report.eps_bar1.ok_or_else(|| {
                Error::InfeasibleParameters(
                    "no feasible Hardy constant for this potential".into(),
                )
            })?);
        }
        Ok(self)
    }
}

/// Everything the Picard map needs: the radial reference orbit, the
/// linearized coefficient path q = -hess V1(y1), and the weight bookkeeping.
pub struct FixedPointContext {
    pub data: ScatteringData,
    pub orbit: PlanarOrbit,
    pub y1: Trajectory,
    pub f1: DVector<f64>,
    pub qpath: CoefficientPath,
    pub grid: Vec<f64>,
    /// weight exponent s = alpha + 1/2 - eps
    pub s: f64,
    /// decay-rate slack eps < alpha eps2
    pub eps: f64,
    /// weight shift 1 - s
    pub r_w: f64,
    pub epsilon_bar: f64,
    pub pot: RadialPotential,
    pub pert: Perturbation,
}

impl FixedPointContext {
    pub fn new(
        pot: &RadialPotential,
        pert: &Perturbation,
        data: &ScatteringData,
        opts: &PerturbedOptions,
    ) -> Result<Self> {
        let grid = uniform_log_grid(opts.t_max, opts.n_nodes);
        let (orbit, y1, f1) = solve_mixed_radial(pot, data, &grid)?;
        let alpha = pot.alpha();
        let eps = 0.9 * alpha * pert.eps2;
        let s = alpha + 0.5 - eps;
        let epsilon_bar = match opts.epsilon_bar {
            Some(e) => e,
            None => check_conditions(pot, pert, 1e6, 1200).eps_bar1.ok_or_else(|| {
                Error::InfeasibleParameters("no feasible Hardy constant for this potential".into())
            })?,
        };
        if (s - 1.0).abs() >= 0.5 * epsilon_bar {
            return Err(Error::InfeasibleParameters(format!(
                "weight exponent s = {s} violates |s - 1| < eps_bar/2 = {}",
                0.5 * epsilon_bar
            )));
        }
        let d = data.x.len();
        let pot_q = pot.clone();
        let y1_q = y1.clone();
        // values at grid nodes are reused across every Picard solve; off-grid
        // times (the Robin closure midpoint) fall through to a direct evaluation
        let q_at = move |pos: &DVector<f64>, pot: &RadialPotential| -> DMatrix<f64> {
            -pot.hessian_v1(pos).expect("reference orbit stays outside the core")
        };
        let q_nodes: Vec<DMatrix<f64>> =
            y1.positions.iter().map(|p| q_at(p, pot)).collect();
        let grid_q = grid.clone();
        let qpath = CoefficientPath::new(
            Arc::new(move |t: f64| {
                let k = grid_q.partition_point(|&g| g < t);
                for j in [k.saturating_sub(1), k] {
                    if j < grid_q.len() && (grid_q[j] - t).abs() <= 1e-9 * t {
                        return q_nodes[j].clone();
                    }
                }
                let (pos, _) = sample_state(&y1_q, t);
                q_at(&pos, &pot_q)
            }),
            epsilon_bar,
            d,
        );
        Ok(FixedPointContext {
            data: data.clone(),
            orbit,
            y1,
            f1,
            qpath,
            grid,
            s,
            eps,
            r_w: 1.0 - s,
            epsilon_bar,
            pot: pot.clone(),
            pert: pert.clone(),
        })
    }

    fn y1_at(&self, t: f64) -> DVector<f64> {
        sample_state(&self.y1, t).0
    }

    fn z_envelope(&self, t: f64) -> f64 {
        t.powf(self.pot.alpha() - self.eps)
    }
}

/// Nonlinear remainder of the Taylor expansion around the reference orbit:
/// the quadratic V1 remainder plus the full perturbation gradient at y1 + z.
pub fn taylor_residual(ctx: &FixedPointContext, z: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let y1 = ctx.y1_at(t);
    let d = y1.len();
    let mut quadratic = DVector::zeros(d);
    if z.norm() > 0.0 {
        for (&l, &w) in quad::GL8_X.iter().zip(quad::GL8_W.iter()) {
            let p = &y1 + l * z;
            if p.norm() < 1.0 {
                return Err(Error::CoreEntry(p.norm()));
            }
            quadratic += w * (1.0 - l) * ctx.pot.d3v1_applied(&p, z)?;
        }
    }
    let y = &y1 + z;
    if y.norm() < 1.0 {
        return Err(Error::CoreEntry(y.norm()));
    }
    Ok(-quadratic - ctx.pert.grad_v2(&y))
}

/// One application of the cutoff Picard map: z -> T(0)[chi1 chi2 R(z)].
pub fn picard_map(
    ctx: &FixedPointContext,
    z: &WeightedGridFunction,
) -> Result<WeightedGridFunction> {
    let d = ctx.data.x.len();
    let mut rhs = WeightedGridFunction::zeros(ctx.grid.clone(), d, ctx.s);
    for (k, &t) in ctx.grid.iter().enumerate() {
        let zk = &z.values[k];
        let zn = zk.norm();
        let chi1 = util::cutoff_below(zn / ctx.y1.positions[k].norm(), 2.0 / 3.0);
        let chi2 = util::cutoff_below(zn / ctx.z_envelope(t), 2.0);
        if chi1 == 0.0 || chi2 == 0.0 {
            continue;
        }
        rhs.values[k] = chi1 * chi2 * taylor_residual(ctx, zk, t)?;
    }
    solve_decaying(&ctx.qpath, &rhs, ctx.s)
}

#[derive(Clone, Debug)]
pub struct FieldSample {
    pub x: DVector<f64>,
    pub omega: DVector<f64>,
    pub lambda: f64,
    pub f: DVector<f64>,
    pub f1: DVector<f64>,
}

impl FieldSample {
    pub fn csv_header(d: usize) -> String {
        let mut cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        cols.extend((1..=d).map(|i| format!("omega{i}")));
        cols.push("lambda".into());
        cols.extend((1..=d).map(|i| format!("F{i}")));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.x.iter().map(|v| format!("{v:.16e}")).collect();
        cols.extend(self.omega.iter().map(|v| format!("{v:.16e}")));
        cols.push(format!("{:.16e}", self.lambda));
        cols.extend(self.f.iter().map(|v| format!("{v:.16e}")));
        cols.join(",")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbedReport {
    pub iterations: usize,
    pub contraction_ratio: f64,
    pub fixed_point_residual: f64,
    pub z_norm: f64,
    /// min over the grid of 1/2 t^{alpha-eps} - |z|
    pub bound_margin: f64,
    /// min over the grid of 2/3 - |z|/|y1|
    pub cutoff_margin_reference: f64,
    /// min over the grid of 2 - |z|/t^{alpha-eps}
    pub cutoff_margin_envelope: f64,
    /// 1/2 |F|^2 + V(x) - lambda
    pub energy_residual: f64,
    /// inf (t-1)^2 lambda_min(q), before adding the Hardy ceiling
    pub hardy_infimum: f64,
}

pub struct PerturbedSolution {
    pub ctx: FixedPointContext,
    pub z: WeightedGridFunction,
    pub y: Trajectory,
    pub sample: FieldSample,
    pub report: PerturbedReport,
}

/// One-sided fourth-order derivative at the first node of a uniform grid.
fn derivative_at_start(values: &[DVector<f64>], h: f64) -> DVector<f64> {
    (-25.0 * &values[0] + 48.0 * &values[1] - 36.0 * &values[2] + 16.0 * &values[3]
        - 3.0 * &values[4])
        / (12.0 * h)
}

/// d/dt on the log-uniform grid: z_tau / t with central differences inside.
fn grid_time_derivative(z: &WeightedGridFunction) -> Vec<DVector<f64>> {
    let n = z.grid.len();
    let delta = (z.grid[n - 1].ln() - z.grid[0].ln()) / (n - 1) as f64;
    let mut out = Vec::with_capacity(n);
    out.push(derivative_at_start(&z.values[0..5], delta) / z.grid[0]);
    for i in 1..n - 1 {
        out.push((&z.values[i + 1] - &z.values[i - 1]) / (2.0 * delta * z.grid[i]));
    }
    out.push(
        (3.0 * &z.values[n - 1] - 4.0 * &z.values[n - 2] + &z.values[n - 3])
            / (2.0 * delta * z.grid[n - 1]),
    );
    out
}

/// Solve the perturbed mixed problem by Picard iteration from z = 0.
pub fn solve_mixed_perturbed(
    pot: &RadialPotential,
    pert: &Perturbation,
    data: &ScatteringData,
    opts: &PerturbedOptions,
) -> Result<PerturbedSolution> {
    let ctx = FixedPointContext::new(pot, pert, data, opts)?;
    let d = data.x.len();
    let mut z = WeightedGridFunction::zeros(ctx.grid.clone(), d, ctx.s);
    let mut iterations = 0usize;
    let mut ratio = 0.0f64;
    let mut prev_delta = f64::NAN;
    if !pert.is_zero() {
        loop {
            let z_next = picard_map(&ctx, &z)?;
            let mut diff = z_next.clone();
            for k in 0..diff.values.len() {
                diff.values[k] -= &z.values[k];
            }
            let delta = diff.norm_minus_s();
            iterations += 1;
            if prev_delta.is_finite() && prev_delta > 0.0 {
                let r = delta / prev_delta;
                ratio = ratio.max(r);
                if r >= 1.0 {
                    return Err(Error::NonContraction(r));
                }
            }
            let done = delta <= opts.tol * z.norm_minus_s().max(1.0);
            z = z_next;
            prev_delta = delta;
            if done {
                break;
            }
            if iterations >= opts.max_iter {
                return Err(Error::NonConvergence(delta));
            }
        }
    }

    // a-posteriori checks: both cutoffs must be strictly inactive and the
    // envelope bound must hold on the whole grid
    let mut bound_margin = f64::INFINITY;
    let mut margin_ref = f64::INFINITY;
    let mut margin_env = f64::INFINITY;
    for (k, &t) in ctx.grid.iter().enumerate() {
        let zn = z.values[k].norm();
        let env = ctx.z_envelope(t);
        bound_margin = bound_margin.min(0.5 * env - zn);
        margin_ref = margin_ref.min(2.0 / 3.0 - zn / ctx.y1.positions[k].norm());
        margin_env = margin_env.min(2.0 - zn / env);
    }
    // inactivity means the smooth steps sit at 1, i.e. the ratios stay below
    // half the cutoff windows
    if margin_ref < 1.0 / 3.0 || margin_env < 1.0 {
        return Err(Error::CutoffActive { r0: data.x.norm() });
    }

    let residual = if pert.is_zero() {
        0.0
    } else {
        let pz = picard_map(&ctx, &z)?;
        let mut diff = pz;
        for k in 0..diff.values.len() {
            diff.values[k] -= &z.values[k];
        }
        diff.norm_minus_s()
    };

    let zdot = grid_time_derivative(&z);
    let mut positions = Vec::with_capacity(ctx.grid.len());
    let mut velocities = Vec::with_capacity(ctx.grid.len());
    for k in 0..ctx.grid.len() {
        positions.push(&ctx.y1.positions[k] + &z.values[k]);
        velocities.push(&ctx.y1.velocities[k] + &zdot[k]);
    }
    let y = Trajectory { times: ctx.grid.clone(), positions, velocities, lambda: data.lambda };
    let f = &ctx.f1 + &zdot[0];
    let energy_residual =
        0.5 * f.norm_squared() + total_potential(pot, pert, &data.x) - data.lambda;
    let hardy_inf = hardy_infimum(&ctx.qpath, &ctx.grid);
    let sample = FieldSample {
        x: data.x.clone(),
        omega: data.omega.clone(),
        lambda: data.lambda,
        f,
        f1: ctx.f1.clone(),
    };
    let report = PerturbedReport {
        iterations,
        contraction_ratio: ratio,
        fixed_point_residual: residual,
        z_norm: z.norm_minus_s(),
        bound_margin,
        cutoff_margin_reference: margin_ref,
        cutoff_margin_envelope: margin_env,
        energy_residual,
        hardy_infimum: hardy_inf,
    };
    Ok(PerturbedSolution { ctx, z, y, sample, report })
}

/// Convenience: just the field value F(x). Without a perturbation the fixed
/// point is z = 0 and the field comes straight from the radial shooting solve.
pub fn field(
    pot: &RadialPotential,
    pert: &Perturbation,
    data: &ScatteringData,
    opts: &PerturbedOptions,
) -> Result<FieldSample> {
    if pert.is_zero() {
        let f1 = crate::radial::radial_field(pot, data)?;
        return Ok(FieldSample {
            x: data.x.clone(),
            omega: data.omega.clone(),
            lambda: data.lambda,
            f: f1.clone(),
            f1,
        });
    }
    Ok(solve_mixed_perturbed(pot, pert, data, opts)?.sample)
}

/// Semigroup check: re-solve the mixed problem from y(t_bar) and compare the
/// returned field with the orbit velocity. Returns the max error relative to
/// the local speed scale g(|y|).
pub fn flow_consistency(
    pot: &RadialPotential,
    pert: &Perturbation,
    data: &ScatteringData,
    t_checks: &[f64],
    opts: &PerturbedOptions,
) -> Result<f64> {
    let opts = &opts.clone().primed(pot, pert)?;
    let sol = solve_mixed_perturbed(pot, pert, data, opts)?;
    let mut worst = 0.0f64;
    for &tb in t_checks {
        if tb == 1.0 {
            continue;
        }
        let (pos, vel) = sample_state(&sol.y, tb);
        let data2 = ScatteringData::new(pos.clone(), data.omega.clone(), data.lambda);
        let f2 = field(pot, pert, &data2, opts)?;
        let g = pot.g(data.lambda, pos.norm())?;
        worst = worst.max((vel - f2.f).norm() / g);
    }
    Ok(worst)
}

fn xorshift(state: &mut u64) -> f64 {
    let mut x = *state;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    *state = x;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

fn random_profile(ctx: &FixedPointContext, state: &mut u64) -> WeightedGridFunction {
    let d = ctx.data.x.len();
    let amp = 0.05 + 0.2 * xorshift(state);
    let mut dir = DVector::zeros(d);
    for i in 0..d {
        dir[i] = 2.0 * xorshift(state) - 1.0;
    }
    if dir.norm() == 0.0 {
        dir[0] = 1.0;
    }
    let dir = dir.normalize();
    let phase = 6.0 * xorshift(state);
    WeightedGridFunction::from_fn(ctx.grid.clone(), ctx.s, |t| {
        let scale = amp * (1.0 - 1.0 / t) * ctx.z_envelope(t) * (0.8 + 0.2 * (t.ln() + phase).sin());
        scale * &dir
    })
}

/// Measured Lipschitz ratio of the Picard map on random admissible pairs.
pub fn contraction_certificate(ctx: &FixedPointContext, pairs: usize) -> Result<f64> {
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let za = random_profile(ctx, &mut state);
        let zb = random_profile(ctx, &mut state);
        let pa = picard_map(ctx, &za)?;
        let pb = picard_map(ctx, &zb)?;
        let mut num = pa.clone();
        let mut den = za.clone();
        for k in 0..num.values.len() {
            num.values[k] -= &pb.values[k];
            den.values[k] -= &zb.values[k];
        }
        let dn = den.norm_minus_s();
        if dn > 0.0 {
            worst = worst.max(num.norm_minus_s() / dn);
        }
    }
    Ok(worst)
}

/// Smallest radius (by doubling from 1) at which the contraction certificate
/// passes with ratio <= 1/2 and the solve succeeds with inactive cutoffs.
pub fn select_r0(
    pot: &RadialPotential,
    pert: &Perturbation,
    omega: &DVector<f64>,
    lambda: f64,
    opts: &PerturbedOptions,
) -> Result<f64> {
    let opts = &opts.clone().primed(pot, pert)?;
    let mut r = 1.0f64;
    for _ in 0..24 {
        let data = ScatteringData::new(r * omega, omega.clone(), lambda);
        let attempt = solve_mixed_perturbed(pot, pert, &data, opts).and_then(|sol| {
            let ratio = contraction_certificate(&sol.ctx, 4)?;
            if ratio <= 0.5 && sol.report.contraction_ratio <= 0.5 {
                Ok(())
            } else {
                Err(Error::NonContraction(ratio))
            }
        });
        match attempt {
            Ok(()) => return Ok(r),
            Err(_) => r *= 2.0,
        }
    }
    Err(Error::NonConvergence(r))
}

/// Largest halving of sigma from 1/2 such that the solved orbit stays inside
/// the outgoing cone of that opening for all grid times.
pub fn select_sigma0(
    pot: &RadialPotential,
    pert: &Perturbation,
    data: &ScatteringData,
    opts: &PerturbedOptions,
) -> Result<f64> {
    let opts = &opts.clone().primed(pot, pert)?;
    let sol = solve_mixed_perturbed(pot, pert, data, opts)?;
    let r0 = data.x.norm();
    let mut sigma = 0.5f64;
    for _ in 0..20 {
        let cone = Cone::outgoing(r0, sigma, data.omega.clone());
        if sol.y.positions.iter().all(|p| cone.contains(p)) {
            return Ok(sigma);
        }
        sigma *= 0.5;
    }
    Err(Error::ConeMembership("orbit leaves every tested cone opening".into()))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeBoundsReport {
    /// decay exponent used in the |x|^{-eps_check} terms
    pub eps_check: f64,
    /// fitted C in |F/|F| - F1/|F1|| <= C |x|^{-eps_check}
    pub c_direction: f64,
    /// fitted C in 1 - Fhat . xhat <= C (1 - xhat . omega) + C |x|^{-eps_check}
    pub c_align_upper: f64,
    /// fitted c in 1 - Fhat . xhat >= c (1 - xhat . omega) - C |x|^{-eps_check}
    pub c_align_lower: f64,
    /// fitted C in 1 - Fhat . omega <= C (1 - xhat . omega) + C |x|^{-eps_check}
    pub c_omega: f64,
    pub samples: usize,
}

fn eps_check(pot: &RadialPotential, pert: &Perturbation) -> f64 {
    let alpha = pot.alpha();
    let eps = 0.9 * alpha * pert.eps2;
    (0.9 * eps / alpha).min(0.9 * pert.eps2)
}

/// Fit the cone inequalities relating Fhat, xhat and omega over a sample grid.
pub fn field_cone_bounds(
    pot: &RadialPotential,
    pert: &Perturbation,
    samples: &[ScatteringData],
    opts: &PerturbedOptions,
) -> Result<ConeBoundsReport> {
    let opts = &opts.clone().primed(pot, pert)?;
    let ec = eps_check(pot, pert);
    let mut c_dir = 0.0f64;
    let mut c_up = 0.0f64;
    let mut c_lo = f64::INFINITY;
    let mut c_om = 0.0f64;
    for data in samples {
        let s = field(pot, pert, data, opts)?;
        let fhat = s.f.normalize();
        let f1hat = s.f1.normalize();
        let xhat = data.x.normalize();
        let r = data.x.norm();
        let decay = r.powf(-ec);
        c_dir = c_dir.max((&fhat - f1hat).norm() / decay);
        let misalign = 1.0 - fhat.dot(&xhat);
        let b = 1.0 - xhat.dot(&data.omega);
        c_up = c_up.max(misalign / (b + decay));
        if b > 1e-6 {
            c_lo = c_lo.min((misalign + c_dir * decay) / b);
        }
        c_om = c_om.max((1.0 - fhat.dot(&data.omega)) / (b + decay));
    }
    Ok(ConeBoundsReport {
        eps_check: ec,
        c_direction: c_dir,
        c_align_upper: c_up,
        c_align_lower: if c_lo.is_finite() { c_lo } else { 0.0 },
        c_omega: c_om,
        samples: samples.len(),
    })
}

/// Deviations |F_n - F| and the finite-difference Jacobian deviation for the
/// truncated perturbations V2 cut off beyond each n.
pub fn truncated_field_convergence(
    pot: &RadialPotential,
    pert: &Perturbation,
    data: &ScatteringData,
    n_list: &[f64],
    opts: &PerturbedOptions,
) -> Result<Vec<(f64, f64)>> {
    let opts = &opts.clone().primed(pot, pert)?;
    let jac = |p: &Perturbation| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = data.x.len();
        let f0 = field(pot, p, data, opts)?.f;
        let h = data.x.norm() * 1e-5;
        let mut j = DMatrix::zeros(d, d);
        for c in 0..d {
            let mut xp = data.x.clone();
            xp[c] += h;
            let mut xm = data.x.clone();
            xm[c] -= h;
            let fp = field(pot, p, &ScatteringData::new(xp, data.omega.clone(), data.lambda), opts)?;
            let fm = field(pot, p, &ScatteringData::new(xm, data.omega.clone(), data.lambda), opts)?;
            j.set_column(c, &((fp.f - fm.f) / (2.0 * h)));
        }
        Ok((f0, j))
    };
    let (f_ref, j_ref) = jac(pert)?;
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let (fn_, jn) = jac(&pert.truncated(n))?;
        out.push(((fn_ - &f_ref).norm(), (jn - &j_ref).norm()));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub quantity: String,
    pub order: usize,
    pub fitted_exponent: f64,
    pub predicted_exponent: f64,
}

fn directional_stencil(
    pot: &RadialPotential,
    pert: &Perturbation,
    data: &ScatteringData,
    dir: &DVector<f64>,
    h: f64,
    opts: &PerturbedOptions,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    let mk = |shift: f64| -> ScatteringData {
        ScatteringData::new(&data.x + shift * dir, data.omega.clone(), data.lambda)
    };
    let sm = field(pot, pert, &mk(-h), opts)?;
    let s0 = field(pot, pert, data, opts)?;
    let sp = field(pot, pert, &mk(h), opts)?;
    Ok((sm.f, s0.f, sp.f, sm.f1, s0.f1, sp.f1))
}

/// Log-log fits of derivative magnitudes against |x| along a scaling family
/// of sample points, compared with the predicted decay exponents.
pub fn bound_probe(
    pot: &RadialPotential,
    pert: &Perturbation,
    quantity_id: &str,
    samples: &[ScatteringData],
    opts: &PerturbedOptions,
) -> Result<Vec<ProbeRow>> {
    let opts = &opts.clone().primed(pot, pert)?;
    if samples.len() < 3 {
        return Err(Error::Domain("bound_probe needs at least 3 scaling samples".into()));
    }
    let lambda = samples[0].lambda;
    let radii: Vec<f64> = samples.iter().map(|s| s.x.norm()).collect();
    let ln_r: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    // local decay rate of the speed scale g over the sampled span
    let ln_g: Vec<f64> = radii
        .iter()
        .map(|&r| pot.g(lambda, r).map(|g| g.ln()))
        .collect::<Result<_>>()?;
    let g_slope = util::ls_slope(&ln_r, &ln_g);
    let ec = eps_check(pot, pert);
    let mut rows = Vec::new();

    let fit = |mags: &[f64]| -> f64 {
        let ln_m: Vec<f64> = mags.iter().map(|m| m.max(1e-300).ln()).collect();
        util::ls_slope(&ln_r, &ln_m)
    };

    match quantity_id {
        "dF" | "dF_minus_dF1" => {
            let diff = quantity_id == "dF_minus_dF1";
            let mut m1 = Vec::new();
            let mut m2 = Vec::new();
            for data in samples {
                let r = data.x.norm();
                let xhat = data.x.normalize();
                // transverse direction in the plane of x and omega (or e2)
                let mut tr = &data.omega - data.omega.dot(&xhat) * &xhat;
                if tr.norm() < 1e-8 {
                    tr = DVector::zeros(data.x.len());
                    tr[1] = 1.0;
                    tr -= tr.dot(&xhat) * &xhat;
                }
                let tr = tr.normalize();
                let h = r * 1e-4;
                let mut best1 = 0.0f64;
                let mut best2 = 0.0f64;
                for dir in [&xhat, &tr] {
                    let (fm, f0, fp, gm, g0, gp) =
                        directional_stencil(pot, pert, data, dir, h, opts)?;
                    let (um, u0, up) = if diff {
                        (fm - gm, f0 - g0, fp - gp)
                    } else {
                        (fm, f0, fp)
                    };
                    best1 = best1.max(((&up - &um) / (2.0 * h)).norm());
                    best2 = best2.max(((up - 2.0 * u0 + um) / (h * h)).norm());
                }
                m1.push(best1);
                m2.push(best2);
            }
            let extra = if diff { -ec } else { 0.0 };
            rows.push(ProbeRow {
                quantity: quantity_id.into(),
                order: 1,
                fitted_exponent: fit(&m1),
                predicted_exponent: g_slope - 1.0 + extra,
            });
            rows.push(ProbeRow {
                quantity: quantity_id.into(),
                order: 2,
                fitted_exponent: fit(&m2),
                predicted_exponent: g_slope - 2.0 + extra,
            });
        }
        "dy" | "dydot" => {
            let t_star = 100.0f64;
            let want_dot = quantity_id == "dydot";
            let mut mx = Vec::new();
            let mut mo = Vec::new();
            for data in samples {
                let r = data.x.norm();
                let xhat = data.x.normalize();
                let h = r * 1e-5;
                let state_at = |d2: &ScatteringData| -> Result<(DVector<f64>, DVector<f64>)> {
                    let sol = solve_mixed_perturbed(pot, pert, d2, opts)?;
                    Ok(sample_state(&sol.y, t_star))
                };
                let dxp = ScatteringData::new(&data.x + h * &xhat, data.omega.clone(), lambda);
                let dxm = ScatteringData::new(&data.x - h * &xhat, data.omega.clone(), lambda);
                let (pp, vp) = state_at(&dxp)?;
                let (pm, vm) = state_at(&dxm)?;
                let (p0, _) = state_at(data)?;
                let scale = if want_dot {
                    pot.g(lambda, p0.norm())?
                } else {
                    p0.norm()
                };
                let dq = if want_dot { (vp - vm) / (2.0 * h) } else { (pp - pm) / (2.0 * h) };
                mx.push(dq.norm() / scale);
                // omega derivative: rotate omega slightly in the x-omega plane
                let ho = 1e-5;
                let mut perp = &data.x - data.x.dot(&data.omega) * &data.omega;
                if perp.norm() < 1e-8 {
                    perp = DVector::zeros(data.x.len());
                    perp[1] = 1.0;
                    perp -= perp.dot(&data.omega) * &data.omega;
                }
                let perp = perp.normalize();
                let op = (&data.omega + ho * &perp).normalize();
                let om = (&data.omega - ho * &perp).normalize();
                let (qp, wp) =
                    state_at(&ScatteringData::new(data.x.clone(), op, lambda))?;
                let (qm, wm) =
                    state_at(&ScatteringData::new(data.x.clone(), om, lambda))?;
                let dqo = if want_dot { (wp - wm) / (2.0 * ho) } else { (qp - qm) / (2.0 * ho) };
                mo.push(dqo.norm() / scale);
            }
            rows.push(ProbeRow {
                quantity: format!("{quantity_id}_dx"),
                order: 1,
                fitted_exponent: fit(&mx),
                predicted_exponent: -1.0,
            });
            rows.push(ProbeRow {
                quantity: format!("{quantity_id}_domega"),
                order: 1,
                fitted_exponent: fit(&mo),
                predicted_exponent: 0.0,
            });
        }
        "y_inverse_bounds" => {
            let mut m = Vec::new();
            for data in samples {
                let sol = solve_mixed_perturbed(pot, pert, data, opts)?;
                let alpha = pot.alpha();
                let sup = sol
                    .y
                    .times
                    .iter()
                    .zip(sol.y.positions.iter())
                    .map(|(&t, p)| t.powf(alpha) / p.norm())
                    .fold(0.0f64, f64::max);
                m.push(sup);
            }
            rows.push(ProbeRow {
                quantity: "y_inverse_bounds".into(),
                order: 0,
                fitted_exponent: fit(&m),
                predicted_exponent: 0.0,
            });
        }
        other => {
            return Err(Error::Domain(format!("unknown probe quantity '{other}'")));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dir2(a: f64) -> DVector<f64> {
        DVector::from_vec(vec![a.cos(), a.sin()])
    }

    fn setup() -> (RadialPotential, Perturbation, ScatteringData) {
        let pot = RadialPotential::power_law(1.0, 1.0);
        let pert = Perturbation::anisotropic(0.05, 1.0, 0.25);
        let omega = dir2(0.2);
        let x = 50.0 * dir2(0.5);
        (pot, pert, ScatteringData::new(x, omega, 0.0))
    }

    #[test]
    fn v2_zero_reduces_to_radial() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let data = ScatteringData::new(30.0 * dir2(0.4), dir2(0.1), 0.3);
        let opts = PerturbedOptions::coarse();
        let sol = solve_mixed_perturbed(&pot, &pert, &data, &opts).unwrap();
        assert_eq!(sol.report.iterations, 0);
        assert!(sol.z.max_norm() == 0.0);
        assert_relative_eq!((&sol.sample.f - &sol.sample.f1).norm(), 0.0, epsilon = 1e-14);
        let g = pot.g(0.3, 30.0).unwrap();
        assert_relative_eq!(sol.sample.f.norm(), g, epsilon = 1e-9);
    }

    #[test]
    fn residual_scaling_is_quadratic() {
        let (pot, _, data) = setup();
        let pert = Perturbation::none(1.0);
        let opts = PerturbedOptions::coarse();
        let ctx = FixedPointContext::new(&pot, &pert, &data, &opts).unwrap();
        let z = DVector::from_vec(vec![0.3, -0.2]);
        let r1 = taylor_residual(&ctx, &z, 10.0).unwrap();
        let r2 = taylor_residual(&ctx, &(0.5 * &z), 10.0).unwrap();
        assert_relative_eq!(r1.norm(), 4.0 * r2.norm(), max_relative = 1e-2);
        // z = 0 leaves only the perturbation gradient, zero here
        let r0 = taylor_residual(&ctx, &DVector::zeros(2), 10.0).unwrap();
        assert_eq!(r0.norm(), 0.0);
    }

    #[test]
    fn fixed_point_small_perturbation() {
        let (pot, pert, data) = setup();
        let opts = PerturbedOptions::default();
        let sol = solve_mixed_perturbed(&pot, &pert, &data, &opts).unwrap();
        assert!(sol.report.contraction_ratio <= 0.5, "ratio {}", sol.report.contraction_ratio);
        assert!(sol.report.bound_margin > 0.0);
        assert!(sol.report.cutoff_margin_reference > 1.0 / 3.0);
        assert!(sol.report.cutoff_margin_envelope > 1.0);
        assert!(sol.report.fixed_point_residual <= 1e-9);
        assert!(
            sol.report.energy_residual.abs() <= 1e-6,
            "energy residual {}",
            sol.report.energy_residual
        );
        // the field differs from the radial one but not wildly
        let dev = (&sol.sample.f - &sol.sample.f1).norm() / sol.sample.f1.norm();
        assert!(dev > 1e-8 && dev < 0.2, "relative field deviation {dev}");
    }

    #[test]
    fn contraction_certificate_holds() {
        let (pot, pert, data) = setup();
        let opts = PerturbedOptions::coarse();
        let ctx = FixedPointContext::new(&pot, &pert, &data, &opts).unwrap();
        let ratio = contraction_certificate(&ctx, 10).unwrap();
        assert!(ratio <= 0.5, "certificate ratio {ratio}");
    }

    #[test]
    fn flow_consistency_coulomb_exact() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let data = ScatteringData::new(25.0 * dir2(0.3), dir2(0.05), 0.4);
        let opts = PerturbedOptions::default();
        let err = flow_consistency(&pot, &pert, &data, &[3.0, 30.0, 300.0], &opts).unwrap();
        assert!(err <= 1e-8, "consistency error {err}");
    }

    #[test]
    fn flow_consistency_perturbed() {
        let (pot, pert, data) = setup();
        let opts = PerturbedOptions::default();
        let checks: Vec<f64> = util::log_grid(2.0, 2e3, 5);
        let err = flow_consistency(&pot, &pert, &data, &checks, &opts).unwrap();
        assert!(err <= 1e-5, "consistency error {err}");
    }

    #[test]
    fn truncation_converges() {
        let (pot, pert, data) = setup();
        let opts = PerturbedOptions::coarse();
        let devs =
            truncated_field_convergence(&pot, &pert, &data, &[1e2, 1e4, 1e6], &opts).unwrap();
        assert!(devs[0].0 >= devs[1].0 && devs[1].0 >= devs[2].0, "{devs:?}");
        assert!(devs[2].0 <= 1e-8);
        let zero = Perturbation::none(1.0);
        let devs0 = truncated_field_convergence(&pot, &zero, &data, &[1e2], &opts).unwrap();
        assert_eq!(devs0[0].0, 0.0);
    }

    #[test]
    fn cone_bounds_report() {
        let (pot, pert, _) = setup();
        let opts = PerturbedOptions::coarse();
        let omega = dir2(0.0);
        let samples: Vec<ScatteringData> = [(40.0, 0.1), (80.0, 0.25), (160.0, 0.05)]
            .iter()
            .map(|&(r, ang)| ScatteringData::new(r * dir2(ang), omega.clone(), 0.0))
            .collect();
        let rep = field_cone_bounds(&pot, &pert, &samples, &opts).unwrap();
        assert!(rep.c_direction.is_finite() && rep.c_direction >= 0.0);
        assert!(rep.c_align_upper > 0.0 && rep.c_omega > 0.0);
    }

    #[test]
    fn lambda_continuity_at_threshold() {
        let (pot, pert, data) = setup();
        let opts = PerturbedOptions::coarse();
        let f0 = field(&pot, &pert, &data, &opts).unwrap().f;
        let mut prev = f64::INFINITY;
        for &lam in &[1e-1, 1e-3, 1e-5] {
            let d2 = ScatteringData::new(data.x.clone(), data.omega.clone(), lam);
            let dev = (field(&pot, &pert, &d2, &opts).unwrap().f - &f0).norm();
            assert!(dev < prev, "deviation {dev} not decreasing");
            prev = dev;
        }
    }

    #[test]
    fn select_scales() {
        let (pot, pert, _) = setup();
        let opts = PerturbedOptions::coarse();
        let omega = dir2(0.3);
        let r0 = select_r0(&pot, &pert, &omega, 0.0, &opts).unwrap();
        assert!(r0 >= 1.0 && r0 <= 1e4);
        let data = ScatteringData::new(2.0 * r0.max(20.0) * dir2(0.35), omega, 0.0);
        let sigma = select_sigma0(&pot, &pert, &data, &opts).unwrap();
        assert!(sigma > 0.0 && sigma <= 0.5);
    }
}
