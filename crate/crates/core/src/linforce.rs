//! The linearized-force equation z'' - q(t) z = f on [1, T_max] with z(1) = 0
//! and the decaying branch selected at infinity.
//!
//! Discretization: tau = ln t maps the equation to
//! e^{-2 tau}(z_tautau - z_tau) - q z = f on a uniform tau grid; central
//! differences give second order. The far boundary imposes the Robin
//! condition z_tau = M z where M collects the decaying Frobenius exponents
//! 1/2 - sqrt(1/4 + c_k) of the eigenvalues c_k of t^2 q(t).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quad;

/// Time-dependent symmetric coefficient matrix with its Hardy constant.
#[derive(Clone)]
pub struct CoefficientPath {
    pub q: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
    pub epsilon_bar: f64,
    pub dim: usize,
}

impl CoefficientPath {
    pub fn new(
        q: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
        epsilon_bar: f64,
        dim: usize,
    ) -> Self {
        CoefficientPath { q, epsilon_bar, dim }
    }

    pub fn zero(dim: usize, epsilon_bar: f64) -> Self {
        CoefficientPath {
            q: Arc::new(move |_| DMatrix::zeros(dim, dim)),
            epsilon_bar,
            dim,
        }
    }

    fn lambda_min(&self, t: f64) -> f64 {
        let m = (self.q)(t);
        if self.dim == 1 {
            return m[(0, 0)];
        }
        let sym = 0.5 * (&m + m.transpose());
        sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Vector-valued grid function with the weighted L^2 norm exponent attached.
#[derive(Clone, Debug)]
pub struct WeightedGridFunction {
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub s: f64,
}

impl WeightedGridFunction {
    pub fn zeros(grid: Vec<f64>, dim: usize, s: f64) -> Self {
        let values = vec![DVector::zeros(dim); grid.len()];
        WeightedGridFunction { grid, values, s }
    }

    pub fn from_fn(grid: Vec<f64>, s: f64, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let values = grid.iter().map(|&t| f(t)).collect();
        WeightedGridFunction { grid, values, s }
    }

    /// Weighted norm (integral of |z|^2 t^{-2s})^{1/2} by composite trapezoid.
    pub fn norm_minus_s(&self) -> f64 {
        let w = quad::trapezoid_weights(&self.grid);
        let mut acc = 0.0;
        for k in 0..self.grid.len() {
            acc += w[k] * self.values[k].norm_squared() * self.grid[k].powf(-2.0 * self.s);
        }
        acc.sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Grid of n points, log-uniform on [1, t_max], endpoints exact.
pub fn uniform_log_grid(t_max: f64, n: usize) -> Vec<f64> {
    crate::util::log_grid(1.0, t_max, n)
}

/// Infimum over the grid of (t-1)^2 lambda_min(q(t)) + (1 - eps_bar^2)/4.
/// Positive means the coercivity condition holds with that slack.
pub fn hardy_margin(qp: &CoefficientPath, grid: &[f64]) -> f64 {
    let ceiling = 0.25 * (1.0 - qp.epsilon_bar * qp.epsilon_bar);
    grid.iter()
        .map(|&t| (t - 1.0) * (t - 1.0) * qp.lambda_min(t) + ceiling)
        .fold(f64::INFINITY, f64::min)
}

/// Infimum over the grid of (t-1)^2 lambda_min(q(t)) alone.
pub fn hardy_infimum(qp: &CoefficientPath, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&t| (t - 1.0) * (t - 1.0) * qp.lambda_min(t))
        .fold(f64::INFINITY, f64::min)
}

fn check_log_uniform(grid: &[f64]) -> Result<f64> {
    let n = grid.len();
    if n < 8 || (grid[0] - 1.0).abs() > 1e-12 {
        return Err(Error::Domain("solver grid must start at t = 1 with >= 8 nodes".into()));
    }
    let delta = (grid[n - 1].ln() - grid[0].ln()) / (n - 1) as f64;
    for (i, &t) in grid.iter().enumerate() {
        if (t.ln() - i as f64 * delta).abs() > 1e-9 {
            return Err(Error::Domain("solver grid must be uniform in ln t".into()));
        }
    }
    Ok(delta)
}

/// Robin matrix of decaying Frobenius exponents for t^2 q(t), shifted by -r.
fn robin_matrix(qp: &CoefficientPath, t: f64, r: f64) -> DMatrix<f64> {
    let d = qp.dim;
    let m = (qp.q)(t);
    let sym = 0.5 * (&m + m.transpose()) * (t * t);
    if d == 1 {
        let c = sym[(0, 0)];
        return DMatrix::from_element(1, 1, 0.5 - (0.25 + c).max(0.0).sqrt() - r);
    }
    let eig = sym.symmetric_eigen();
    let nu = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        eig.eigenvalues.iter().map(|&c| 0.5 - (0.25 + c).max(0.0).sqrt() - r),
    ));
    &eig.eigenvectors * nu * eig.eigenvectors.transpose()
}

/// Solve the weight-shifted problem: returns z = t^r w where
/// w'' + (2r/t) w' + (r(r-1)/t^2) w - q w = t^{-r} rhs, w(1) = 0, w decaying.
/// r = 0 recovers the plain decaying solve.
pub fn solve_decaying_shifted(
    qp: &CoefficientPath,
    rhs: &WeightedGridFunction,
    s: f64,
    r: f64,
) -> Result<WeightedGridFunction> {
    if s >= 1.0 + 0.5 * qp.epsilon_bar {
        return Err(Error::Domain(format!(
            "weight exponent s = {s} outside s < 1 + eps_bar/2 = {}",
            1.0 + 0.5 * qp.epsilon_bar
        )));
    }
    let margin = hardy_margin(qp, &rhs.grid);
    if margin < 0.0 {
        return Err(Error::HardyViolation(margin));
    }
    let grid = &rhs.grid;
    let delta = check_log_uniform(grid)?;
    let n = grid.len();
    let d = qp.dim;
    let ident = DMatrix::<f64>::identity(d, d);

    // unknowns z_1 .. z_{n-1}; z_0 = 0
    let m = n - 1;
    let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut sup: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut rvec: Vec<DVector<f64>> = Vec::with_capacity(m);
    let d2 = delta * delta;
    for i in 1..n - 1 {
        let tau = i as f64 * delta;
        let t = grid[i];
        let e2 = (-2.0 * tau).exp();
        // first-order coefficient in tau: (2r - 1)
        let c1 = 2.0 * r - 1.0;
        sub.push(e2 * (1.0 / d2 - 0.5 * c1 / delta) * &ident);
        diag.push(e2 * (-2.0 / d2 + r * (r - 1.0)) * &ident - (qp.q)(t));
        sup.push(e2 * (1.0 / d2 + 0.5 * c1 / delta) * &ident);
        rvec.push(t.powf(-r) * &rhs.values[i]);
    }
    // Robin closure at the last cell midpoint
    let t_mid = ((n as f64 - 1.5) * delta).exp();
    let mrob = robin_matrix(qp, t_mid, r);
    sub.push(-(&ident / delta) - 0.5 * &mrob);
    diag.push((&ident / delta) - 0.5 * &mrob);
    sup.push(DMatrix::zeros(d, d));
    rvec.push(DVector::zeros(d));

    // block Thomas elimination; the first unknown is z_1, whose sub-block
    // couples to z_0 = 0 and is dropped
    for i in 1..m {
        let lu = diag[i - 1].clone().lu();
        let x = lu
            .solve(&sup[i - 1])
            .ok_or_else(|| Error::RootSolve("singular block in tridiagonal solve".into()))?;
        let y = lu.solve(&rvec[i - 1]).unwrap();
        let factor = sub[i].clone();
        diag[i] -= &factor * x;
        let corr = &factor * y;
        rvec[i] -= corr;
    }
    let mut w: Vec<DVector<f64>> = vec![DVector::zeros(d); m];
    let lu = diag[m - 1].clone().lu();
    w[m - 1] = lu
        .solve(&rvec[m - 1])
        .ok_or_else(|| Error::RootSolve("singular closing block".into()))?;
    for i in (0..m - 1).rev() {
        let b = &rvec[i] - &sup[i] * &w[i + 1];
        w[i] = diag[i].clone().lu().solve(&b).unwrap();
    }

    let mut values = Vec::with_capacity(n);
    values.push(DVector::zeros(d));
    for (i, wi) in w.into_iter().enumerate() {
        values.push(grid[i + 1].powf(r) * wi);
    }
    Ok(WeightedGridFunction { grid: grid.clone(), values, s })
}

/// Unique decaying solution of z'' - q z = rhs with z(1) = 0.
pub fn solve_decaying(
    qp: &CoefficientPath,
    rhs: &WeightedGridFunction,
    s: f64,
) -> Result<WeightedGridFunction> {
    solve_decaying_shifted(qp, rhs, s, 0.0)
}

/// Max norm of the discrete-operator residual z'' - q z - rhs on interior
/// nodes (second-order differences on the log grid).
pub fn discrete_residual(
    qp: &CoefficientPath,
    rhs: &WeightedGridFunction,
    z: &WeightedGridFunction,
) -> f64 {
    let grid = &z.grid;
    let n = grid.len();
    let delta = (grid[n - 1].ln() - grid[0].ln()) / (n - 1) as f64;
    let d2 = delta * delta;
    let mut worst = 0.0f64;
    for i in 1..n - 1 {
        let tau = i as f64 * delta;
        let e2 = (-2.0 * tau).exp();
        let ztt = (&z.values[i + 1] - 2.0 * &z.values[i] + &z.values[i - 1]) / d2;
        let zt = (&z.values[i + 1] - &z.values[i - 1]) / (2.0 * delta);
        let res = e2 * (ztt - zt) - (qp.q)(grid[i]) * &z.values[i] - &rhs.values[i];
        worst = worst.max(res.norm());
    }
    worst
}
