//! Forward Newton integration and escape diagnostics: asymptotic normalized
//! velocity, virial and growth bounds, and the logarithmic-spiral orbit whose
//! direction never converges.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potentials::{Perturbation, RadialPotential};
use crate::radial::Trajectory;
use crate::util;

// Dormand-Prince 5(4) tableau
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive 5(4) integration of Newton's equation xddot = force(x).
///
/// When `out_times` is given, steps are clamped to land exactly on those
/// times and only they are recorded; otherwise every accepted step is kept.
/// Fails with a core-entry error if the orbit reaches |x| < 1.
pub fn integrate_newton<F>(
    force: F,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    t0: f64,
    t1: f64,
    tol: f64,
    out_times: Option<&[f64]>,
) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(t1 > t0) {
        return Err(Error::Domain(format!("bad time span [{t0}, {t1}]")));
    }
    if !(1e-13..=1e-6).contains(&tol) {
        return Err(Error::Domain(format!("tolerance {tol} outside [1e-13, 1e-6]")));
    }
    if x0.norm() < 1.0 {
        return Err(Error::CoreEntry(t0));
    }
    let d = x0.len();
    let mut t = t0;
    let mut x = x0.clone();
    let mut v = v0.clone();
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    let mut out_idx = 0usize;
    let mut record = |t: f64, x: &DVector<f64>, v: &DVector<f64>| {
        times.push(t);
        positions.push(x.clone());
        velocities.push(v.clone());
    };
    match out_times {
        Some(ts) => {
            while out_idx < ts.len() && ts[out_idx] <= t0 {
                record(t0, &x, &v);
                out_idx += 1;
            }
        }
        None => record(t0, &x, &v),
    }

    let mut h = 1e-4 * (t1 - t0).min(1.0);
    let mut k1v = force(&x);
    let mut rejected_in_row = 0usize;
    while t < t1 {
        let mut clamped = false;
        let mut step = h.min(t1 - t);
        if let Some(ts) = out_times {
            if out_idx < ts.len() && t + step >= ts[out_idx] {
                step = ts[out_idx] - t;
                clamped = true;
            }
        }
        // stages; state is (x, v), derivative (v, force(x))
        let mut kx: Vec<DVector<f64>> = Vec::with_capacity(7);
        let mut kv: Vec<DVector<f64>> = Vec::with_capacity(7);
        kx.push(v.clone());
        kv.push(k1v.clone());
        for s in 0..6 {
            let mut xs = x.clone();
            let mut vs = v.clone();
            for j in 0..=s {
                if A[s][j] != 0.0 {
                    xs += step * A[s][j] * &kx[j];
                    vs += step * A[s][j] * &kv[j];
                }
            }
            let _ = C[s];
            kx.push(vs);
            kv.push(force(&xs));
        }
        // 5th order solution is the stage-7 state by FSAL construction
        let mut x5 = x.clone();
        let mut v5 = v.clone();
        for j in 0..6 {
            if A[5][j] != 0.0 {
                x5 += step * A[5][j] * &kx[j];
                v5 += step * A[5][j] * &kv[j];
            }
        }
        let mut x4 = x.clone();
        let mut v4 = v.clone();
        for j in 0..7 {
            if B4[j] != 0.0 {
                x4 += step * B4[j] * &kx[j];
                v4 += step * B4[j] * &kv[j];
            }
        }
        // scaled error norm
        let mut err2 = 0.0f64;
        for i in 0..d {
            let sx = tol + tol * x5[i].abs().max(x[i].abs());
            let sv = tol + tol * v5[i].abs().max(v[i].abs());
            err2 += ((x5[i] - x4[i]) / sx).powi(2) + ((v5[i] - v4[i]) / sv).powi(2);
        }
        let err = (err2 / (2 * d) as f64).sqrt();
        if err <= 1.0 {
            t += step;
            x = x5;
            v = v5;
            k1v = kv[6].clone();
            if x.norm() < 1.0 {
                return Err(Error::CoreEntry(t));
            }
            match out_times {
                Some(ts) => {
                    if clamped && out_idx < ts.len() && (t - ts[out_idx]).abs() <= 1e-12 * t.abs() {
                        record(t, &x, &v);
                        out_idx += 1;
                    }
                }
                None => record(t, &x, &v),
            }
            rejected_in_row = 0;
        } else {
            rejected_in_row += 1;
            if rejected_in_row > 60 {
                return Err(Error::StepFailure(t));
            }
        }
        let factor = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        h = (step * factor).max(1e-14 * t.abs().max(1.0));
    }
    Ok(Trajectory { times, positions, velocities, lambda: f64::NAN })
}

/// Convenience wrapper integrating in V1 + V2 and stamping the energy.
pub fn integrate_in_potential(
    pot: &RadialPotential,
    pert: &Perturbation,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    t0: f64,
    t1: f64,
    tol: f64,
    out_times: Option<&[f64]>,
) -> Result<Trajectory> {
    let force = |x: &DVector<f64>| crate::potentials::total_force(pot, pert, x);
    let mut traj = integrate_newton(force, x0, v0, t0, t1, tol, out_times)?;
    traj.lambda = 0.5 * v0.norm_squared() + crate::potentials::total_potential(pot, pert, x0);
    Ok(traj)
}

/// Largest deviation of the sampled energy from its initial value.
pub fn energy_drift(traj: &Trajectory, potential: impl Fn(&DVector<f64>) -> f64) -> f64 {
    let e0 = 0.5 * traj.velocities[0].norm_squared() + potential(&traj.positions[0]);
    traj.positions
        .iter()
        .zip(traj.velocities.iter())
        .map(|(x, v)| (0.5 * v.norm_squared() + potential(x) - e0).abs())
        .fold(0.0, f64::max)
}

/// Cubic Hermite interpolation of the trajectory position and velocity at t.
pub fn sample_state(traj: &Trajectory, t: f64) -> (DVector<f64>, DVector<f64>) {
    let times = &traj.times;
    let n = times.len();
    if t <= times[0] {
        return (traj.positions[0].clone(), traj.velocities[0].clone());
    }
    if t >= times[n - 1] {
        return (traj.positions[n - 1].clone(), traj.velocities[n - 1].clone());
    }
    let idx = times.partition_point(|&u| u <= t).min(n - 1);
    let (i0, i1) = (idx - 1, idx);
    let h = times[i1] - times[i0];
    let s = (t - times[i0]) / h;
    let (x0, x1) = (&traj.positions[i0], &traj.positions[i1]);
    let (v0, v1) = (&traj.velocities[i0], &traj.velocities[i1]);
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    let x = h00 * x0 + (h10 * h) * v0 + h01 * x1 + (h11 * h) * v1;
    // derivative of the Hermite interpolant
    let d00 = 6.0 * s * (s - 1.0) / h;
    let d10 = (1.0 - s) * (1.0 - 3.0 * s);
    let d01 = -d00;
    let d11 = s * (3.0 * s - 2.0);
    let v = d00 * x0 + d10 * v0 + d01 * x1 + d11 * v1;
    (x, v)
}

/// Escape-direction diagnostics for a forward trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticReport {
    pub omega_plus: Vec<f64>,
    pub omega_tilde_plus: Vec<f64>,
    /// |omega_plus - omega_tilde_plus|
    pub omega_agreement: f64,
    /// fitted p in |omega(t) - omega_plus| ~ t^{-p}
    pub decay_exponent_fit: f64,
    /// fitted growth exponent of the angular momentum matrix norm
    pub angular_momentum_growth: f64,
}

fn aitken(s0: f64, s1: f64, s2: f64) -> f64 {
    let d1 = s1 - s0;
    let d2 = s2 - s1;
    let den = d2 - d1;
    if den.abs() < 1e-14 * (s2.abs().max(1.0)) {
        s2
    } else {
        s2 - d2 * d2 / den
    }
}

fn l_matrix_norm(x: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            let lij = x[i] * v[j] - x[j] * v[i];
            s += lij * lij;
        }
    }
    s.sqrt()
}

/// Estimate the asymptotic normalized position and velocity directions by
/// componentwise Aitken extrapolation at times T/4, T/2, T.
pub fn omega_plus(traj: &Trajectory) -> Result<AsymptoticReport> {
    let n = traj.times.len();
    if n < 16 {
        return Err(Error::Domain("trajectory too short for extrapolation".into()));
    }
    let t_end = traj.times[n - 1];
    // escape check over the last decade
    let decade_start = traj.times.partition_point(|&u| u < t_end / 10.0);
    for k in decade_start..n - 1 {
        if traj.positions[k + 1].norm() <= traj.positions[k].norm() {
            return Err(Error::NonEscaping(format!(
                "|x| not increasing at t = {}",
                traj.times[k]
            )));
        }
    }
    let d = traj.positions[0].len();
    let samples: Vec<(DVector<f64>, DVector<f64>)> = [0.25, 0.5, 1.0]
        .iter()
        .map(|&f| sample_state(traj, f * t_end))
        .collect();
    let mut omega = DVector::zeros(d);
    let mut omega_t = DVector::zeros(d);
    for i in 0..d {
        let o: Vec<f64> = samples.iter().map(|(x, _)| x[i] / x.norm()).collect();
        omega[i] = aitken(o[0], o[1], o[2]);
        let ot: Vec<f64> = samples.iter().map(|(_, v)| v[i] / v.norm()).collect();
        omega_t[i] = aitken(ot[0], ot[1], ot[2]);
    }
    omega /= omega.norm();
    omega_t /= omega_t.norm();
    let agreement = (&omega - &omega_t).norm();

    // decay-rate fit over the last two decades
    let fit_start = traj.times.partition_point(|&u| u < t_end / 100.0);
    let mut lt = Vec::new();
    let mut ld = Vec::new();
    let mut ll = Vec::new();
    for k in fit_start..n {
        let x = &traj.positions[k];
        let dev = (x / x.norm() - &omega).norm();
        if dev > 1e-14 {
            lt.push(traj.times[k].ln());
            ld.push(dev.ln());
        }
        ll.push(l_matrix_norm(x, &traj.velocities[k]).max(1e-300).ln());
    }
    let decay = if lt.len() >= 8 { -util::ls_slope(&lt, &ld) } else { f64::INFINITY };
    let lt_all: Vec<f64> =
        (fit_start..n).map(|k| traj.times[k].ln()).collect();
    let l_span = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ll.iter().cloned().fold(f64::INFINITY, f64::min);
    let l_growth = if l_span < 1e-8 { 0.0 } else { util::ls_slope(&lt_all, &ll) };

    Ok(AsymptoticReport {
        omega_plus: omega.iter().cloned().collect(),
        omega_tilde_plus: omega_t.iter().cloned().collect(),
        omega_agreement: agreement,
        decay_exponent_fit: decay,
        angular_momentum_growth: l_growth,
    })
}

/// Virial and growth diagnostics along an escaping trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct VirialReport {
    /// first sampled time with x.v >= 0
    pub onset_time: f64,
    /// x.v >= 2 (t - T) lambda after onset
    pub virial_pass: bool,
    /// x^2 >= 2 lambda (t - T)^2 + R^2 after onset
    pub growth_pass: bool,
    pub position_exponent_fit: f64,
    pub velocity_exponent_fit: f64,
}

pub fn virial_check(traj: &Trajectory, lambda: f64) -> Result<VirialReport> {
    let n = traj.times.len();
    let onset = (0..n)
        .find(|&k| traj.positions[k].dot(&traj.velocities[k]) >= 0.0)
        .ok_or_else(|| Error::NonEscaping("x.v never nonnegative".into()))?;
    let t_on = traj.times[onset];
    let r2_on = traj.positions[onset].norm_squared();
    let mut virial_pass = true;
    let mut growth_pass = true;
    for k in onset..n {
        let dt = traj.times[k] - t_on;
        let xv = traj.positions[k].dot(&traj.velocities[k]);
        let scale = (traj.positions[k].norm() * traj.velocities[k].norm()).max(1e-12);
        if xv < 2.0 * dt * lambda - 1e-8 * scale {
            virial_pass = false;
        }
        let x2 = traj.positions[k].norm_squared();
        if x2 < 2.0 * lambda * dt * dt + r2_on - 1e-8 * x2.max(1.0) {
            growth_pass = false;
        }
    }
    let t_end = traj.times[n - 1];
    let fit_start = traj.times.partition_point(|&u| u < t_end / 100.0);
    let lt: Vec<f64> = (fit_start..n).map(|k| traj.times[k].ln()).collect();
    let lr: Vec<f64> = (fit_start..n).map(|k| traj.positions[k].norm().ln()).collect();
    let lv: Vec<f64> = (fit_start..n).map(|k| traj.velocities[k].norm().ln()).collect();
    Ok(VirialReport {
        onset_time: t_on,
        virial_pass,
        growth_pass,
        position_exponent_fit: util::ls_slope(&lt, &lr),
        velocity_exponent_fit: util::ls_slope(&lt, &lv),
    })
}

/// Parameters of the angular profile chi(psi) = -a - b sin(psi) and the orbit
/// scale constant for the exact logarithmic-spiral solution r = (k t)^alpha,
/// theta = c ln r.
#[derive(Clone, Debug, Serialize)]
pub struct SpiralParams {
    pub mu: f64,
    pub c: f64,
    pub b: f64,
    pub a: f64,
    pub k: f64,
}

/// Construct the spiral potential V = r^{-mu} chi(theta - c ln r), integrate
/// the matched orbit over `decades` decades of radius from r0, and return the
/// measured drift sup |theta(t) - c ln r(t)|.
pub fn spiral_example(
    mu: f64,
    c: f64,
    b: f64,
    r0: f64,
    decades: f64,
) -> Result<(SpiralParams, Trajectory, f64)> {
    if !(mu > 0.0 && mu < 2.0 && c > 0.0 && b > 0.0 && r0 >= 1.0) {
        return Err(Error::InfeasibleParameters(format!("mu={mu} c={c} b={b} r0={r0}")));
    }
    let alpha = 2.0 / (2.0 + mu);
    let a = (b / mu) * (1.0 - alpha) * (1.0 + c * c) / (c * (2.0 * alpha - 1.0));
    if a <= b {
        return Err(Error::InfeasibleParameters(format!(
            "profile not negative: a = {a} <= b = {b}"
        )));
    }
    let k = (b / (c * alpha * (2.0 * alpha - 1.0))).sqrt();
    let chi = |psi: f64| -a - b * psi.sin();
    let chi_p = |psi: f64| -b * psi.cos();
    let force = move |x: &DVector<f64>| {
        let r = x.norm();
        let theta = x[1].atan2(x[0]);
        // the potential only depends on psi mod 2 pi, so the atan2 branch is fine
        let psi = theta - c * r.ln();
        let fr = r.powf(-mu - 1.0) * (mu * chi(psi) + c * chi_p(psi));
        let ft = -r.powf(-mu - 1.0) * chi_p(psi);
        let er = x / r;
        let et = DVector::from_vec(vec![-er[1], er[0]]);
        fr * er + ft * et
    };
    // matched initial data on the spiral at radius r0
    let t0 = r0.powf(1.0 / alpha) / k;
    let theta0 = c * r0.ln();
    let rdot0 = k * alpha * (k * t0).powf(alpha - 1.0);
    let thetadot0 = c * alpha / t0;
    let (s0, c0) = theta0.sin_cos();
    let x0 = DVector::from_vec(vec![r0 * c0, r0 * s0]);
    let v0 = DVector::from_vec(vec![
        rdot0 * c0 - r0 * thetadot0 * s0,
        rdot0 * s0 + r0 * thetadot0 * c0,
    ]);
    let t1 = (r0 * 10f64.powf(decades)).powf(1.0 / alpha) / k;
    let grid = util::log_grid(t0, t1, 600);
    let mut traj = integrate_newton(force, &x0, &v0, t0, t1, 1e-11, Some(&grid))?;
    traj.lambda = 0.0;
    // unwrapped polar angle along the samples
    let mut drift = 0.0f64;
    let mut theta_prev = theta0;
    for k_i in 0..traj.times.len() {
        let x = &traj.positions[k_i];
        let r = x.norm();
        let raw = x[1].atan2(x[0]);
        let mut theta = raw;
        let two_pi = 2.0 * std::f64::consts::PI;
        while theta - theta_prev > std::f64::consts::PI {
            theta -= two_pi;
        }
        while theta - theta_prev < -std::f64::consts::PI {
            theta += two_pi;
        }
        theta_prev = theta;
        drift = drift.max((theta - c * r.ln()).abs());
    }
    Ok((SpiralParams { mu, c, b, a, k }, traj, drift))
}
