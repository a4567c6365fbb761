//! Small shared helpers: quintic smoothstep windows and log-spaced grids.

/// Quintic smoothstep on [0, 1]: 0 at 0, 1 at 1, C^2 at both ends.
pub fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

pub fn smoothstep_d1(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        30.0 * u * u * (u - 1.0) * (u - 1.0)
    }
}

pub fn smoothstep_d2(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        60.0 * u * (2.0 * u - 1.0) * (u - 1.0)
    }
}

pub fn smoothstep_d3(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        360.0 * u * u - 360.0 * u + 60.0
    }
}

/// Smooth cutoff of the condition s < eps: equals 1 for s <= eps/2 and 0 for
/// s >= 3eps/4, with a quintic transition in between.
pub fn cutoff_below(s: f64, eps: f64) -> f64 {
    1.0 - smoothstep((s - 0.5 * eps) / (0.25 * eps))
}

/// First derivative of `cutoff_below` in s.
pub fn cutoff_below_d1(s: f64, eps: f64) -> f64 {
    -smoothstep_d1((s - 0.5 * eps) / (0.25 * eps)) / (0.25 * eps)
}

/// Second derivative of `cutoff_below` in s.
pub fn cutoff_below_d2(s: f64, eps: f64) -> f64 {
    -smoothstep_d2((s - 0.5 * eps) / (0.25 * eps)) / (0.25 * eps * 0.25 * eps)
}

/// n log-spaced points on [a, b], endpoints included. Requires a, b > 0.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a && n >= 2);
    let la = a.ln();
    let lb = b.ln();
    let mut g: Vec<f64> = (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = a;
    g[n - 1] = b;
    g
}

/// Least-squares slope of y against x.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}
