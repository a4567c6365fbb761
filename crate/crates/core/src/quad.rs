//! Quadrature kernels used throughout the crate.
//!
//! Three flavours:
//!  * adaptive Gauss-Kronrod 7-15 for smooth integrands on finite intervals,
//!  * tanh-sinh (double exponential) for integrands with integrable endpoint
//!    singularities, e.g. inverse square roots at a turning point,
//!  * fixed-order Gauss-Legendre panels for cheap smooth line integrals.

use crate::error::{Error, Result};

// 7-point Gauss / 15-point Kronrod abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate().take(7) {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        kronrod += wk * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let err = (h * (kronrod - gauss)).abs();
    (h * kronrod, err)
}

/// Adaptive Gauss-Kronrod integration of a smooth integrand on [a, b].
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut stack: Vec<(f64, f64)> = vec![(a, b)];
    let mut total = 0.0f64;
    let mut total_err = 0.0f64;
    let (coarse, _) = gk15(&f, a, b);
    let scale = coarse.abs().max(1e-300);
    let mut evals = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        let (val, err) = gk15(&f, lo, hi);
        evals += 1;
        if evals > 200_000 {
            return Err(Error::Quadrature(format!(
                "subdivision limit reached on [{a}, {b}]"
            )));
        }
        let local_tol = rel_tol * scale * ((hi - lo) / (b - a)).abs().max(1e-14);
        if err <= local_tol || (hi - lo).abs() < 1e-15 * (b - a).abs() {
            total += val;
            total_err += err;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid));
            stack.push((mid, hi));
        }
    }
    if !total.is_finite() {
        return Err(Error::Quadrature(format!("non-finite result on [{a}, {b}]")));
    }
    let _ = total_err;
    Ok(total)
}

/// Tanh-sinh integration on [a, b].
///
/// The integrand receives `(x, d_lo, d_hi)` where `d_lo = x - a` and
/// `d_hi = b - x` are computed without cancellation, so integrands singular
/// at an endpoint can be evaluated accurately exponentially close to it.
pub fn tanh_sinh<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let half = 0.5 * (b - a);
    let u_max = 6.5f64;

    // evaluate the transformed integrand at abscissa parameter u
    let eval = |u: f64| -> f64 {
        let s = (std::f64::consts::FRAC_PI_2) * u.sinh();
        let t = s.tanh();
        // 1 -/+ tanh(s) without cancellation; e underflows only once the
        // distance to the endpoint is below the subnormal range
        let e = (-2.0 * s.abs()).exp();
        if e == 0.0 {
            return 0.0;
        }
        let near = 2.0 * e / (1.0 + e); // = 1 - |tanh|
        let far = 1.0 + t.abs();
        let (d_lo, d_hi) = if s >= 0.0 {
            (half * far, half * near)
        } else {
            (half * near, half * far)
        };
        let x = if s >= 0.0 { b - d_hi } else { a + d_lo };
        // sech^2 written through e to avoid cosh overflow at large |s|
        let sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
        let w = half * std::f64::consts::FRAC_PI_2 * u.cosh() * sech2;
        let v = f(x, d_lo, d_hi);
        if v.is_finite() {
            w * v
        } else {
            // endpoint rounding can push a singular integrand out of domain;
            // the double-exponential weight there is negligible
            0.0
        }
    };

    let mut h = 1.0f64;
    let n0 = (u_max / h).ceil() as i64;
    let mut sum = eval(0.0);
    for k in 1..=n0 {
        sum += eval(k as f64 * h) + eval(-(k as f64) * h);
    }
    let mut value = sum * h;

    for _level in 0..12 {
        h *= 0.5;
        let n = (u_max / h).ceil() as i64;
        let mut odd = 0.0;
        let mut k = 1i64;
        while k <= n {
            odd += eval(k as f64 * h) + eval(-(k as f64) * h);
            k += 2;
        }
        sum += odd;
        let new_value = sum * h;
        let change = (new_value - value).abs();
        value = new_value;
        if change <= rel_tol * value.abs().max(1e-300) && _level >= 2 {
            return Ok(value);
        }
    }
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Quadrature(format!("tanh-sinh diverged on [{a}, {b}]")))
    }
}

/// Tanh-sinh for integrands that only need the abscissa.
pub fn tanh_sinh_plain<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    tanh_sinh(|x, _, _| f(x), a, b, rel_tol)
}

// 8-point Gauss-Legendre on [0, 1].
pub const GL8_X: [f64; 8] = [
    0.019855071751231884,
    0.101666761293186630,
    0.237233795041835507,
    0.408282678752175098,
    0.591717321247824902,
    0.762766204958164493,
    0.898333238706813370,
    0.980144928248768116,
];
pub const GL8_W: [f64; 8] = [
    0.050614268145188130,
    0.111190517226687235,
    0.156853322938943644,
    0.181341891689180991,
    0.181341891689180991,
    0.156853322938943644,
    0.111190517226687235,
    0.050614268145188130,
];

/// Fixed 8-point Gauss-Legendre rule on [0, 1]; used for the Taylor remainder
/// integral over the interpolation parameter.
pub fn gauss8_unit<F: FnMut(f64) -> f64>(mut f: F) -> f64 {
    GL8_X.iter().zip(GL8_W.iter()).map(|(&x, &w)| w * f(x)).sum()
}

// 16-point Gauss-Legendre nodes (positive half) and weights on [-1, 1].
const GL16_X: [f64; 8] = [
    0.095012509837637440,
    0.281603550779258913,
    0.458016777657227386,
    0.617876244402643748,
    0.755404408355003034,
    0.865631202387831744,
    0.944575023073232576,
    0.989400934991649933,
];
const GL16_W: [f64; 8] = [
    0.189450610455068496,
    0.182603415044923589,
    0.169156519395002538,
    0.149595988816576732,
    0.124628971255533872,
    0.095158511682492785,
    0.062253523938647893,
    0.027152459411754095,
];

/// Fixed 16-point Gauss-Legendre rule on [0, 1].
pub fn gauss16_unit<F: FnMut(f64) -> f64>(mut f: F) -> f64 {
    let mut s = 0.0;
    for (&x, &wt) in GL16_X.iter().zip(GL16_W.iter()) {
        s += wt * (f(0.5 - 0.5 * x) + f(0.5 + 0.5 * x));
    }
    0.5 * s
}

/// Composite 16-point Gauss-Legendre over `panels` equal panels of [a, b].
pub fn gauss16_panels<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let mut total = 0.0;
    let w = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        let c = lo + 0.5 * w;
        let h = 0.5 * w;
        let mut s = 0.0;
        for (&x, &wt) in GL16_X.iter().zip(GL16_W.iter()) {
            s += wt * (f(c - h * x) + f(c + h * x));
        }
        total += s * h;
    }
    total
}

/// Composite trapezoid weight vector for an arbitrary strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = grid[i + 1] - grid[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}
