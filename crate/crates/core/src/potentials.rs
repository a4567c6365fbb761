//! Potential models: the attractive radial part V1, the anisotropic
//! perturbation V2, derived scalar quantities, and the numerical audit of the
//! decay, virial and tail conditions the solvers rely on.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad;
use crate::util;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum V1Model {
    /// V1(r) = -gamma r^{-mu}
    PowerLaw { gamma: f64 },
    /// V1(r) = -gamma r^{-mu} (1 + beta r^{-nu}); short-range correction
    PowerLawShortRange { gamma: f64, beta: f64, nu: f64 },
    /// V1(r) = -m(r) r^{-mu} where the amplitude m ramps from 1 up to `amp`
    /// over [ramp_at, ramp_at + ramp_width]; used to realize a prescribed
    /// ratio sup V1(r')/V1(r) strictly above 1.
    AmplitudeStep { amp: f64, ramp_at: f64, ramp_width: f64 },
    /// User-supplied profile; derivatives by central differences.
    Custom(ScalarFn),
}

/// Attractive radial potential with decay exponent mu in (0, 2).
///
/// Invariants assumed downstream: V1(r) <= -eps1 r^{-mu} and
/// r V1'(r) <= -(2 - eps1_tilde) V1(r) for r >= 1.
#[derive(Clone)]
pub struct RadialPotential {
    model: V1Model,
    pub mu: f64,
    pub eps1: f64,
    pub eps1_tilde: f64,
}

impl RadialPotential {
    pub fn power_law(gamma: f64, mu: f64) -> Self {
        assert!(gamma > 0.0 && mu > 0.0 && mu < 2.0);
        RadialPotential {
            model: V1Model::PowerLaw { gamma },
            mu,
            eps1: 0.9 * gamma,
            eps1_tilde: 0.9 * (2.0 - mu),
        }
    }

    pub fn coulomb(gamma: f64) -> Self {
        assert!(gamma > 0.0);
        RadialPotential {
            model: V1Model::PowerLaw { gamma },
            mu: 1.0,
            eps1: 0.9 * gamma,
            eps1_tilde: 0.9,
        }
    }

    /// -gamma r^{-mu}(1 + beta r^{-nu}); beta >= 0 keeps the virial bound.
    pub fn power_law_short_range(gamma: f64, mu: f64, beta: f64, nu: f64) -> Self {
        assert!(gamma > 0.0 && mu > 0.0 && mu < 2.0 && beta >= 0.0 && nu > 0.0);
        assert!(mu + nu < 2.0, "corrected tail must stay attractive-subquadratic");
        RadialPotential {
            model: V1Model::PowerLawShortRange { gamma, beta, nu },
            mu,
            eps1: 0.9 * gamma,
            eps1_tilde: 0.9 * (2.0 - mu - nu),
        }
    }

    /// Amplitude ramp 1 -> amp over [ramp_at, ramp_at + width]. The sup ratio
    /// of potential values is amp (2/(2+width/ramp_at))... attained across the
    /// ramp, slightly above amp*(ramp_at/(ramp_at+width))^mu.
    pub fn amplitude_step(mu: f64, amp: f64, ramp_at: f64, ramp_width: f64) -> Self {
        assert!(mu > 0.0 && mu < 2.0 && amp >= 1.0 && ramp_at > 1.0 && ramp_width > 0.0);
        RadialPotential {
            model: V1Model::AmplitudeStep { amp, ramp_at, ramp_width },
            mu,
            eps1: 0.9,
            eps1_tilde: 0.9 * (2.0 - mu),
        }
    }

    pub fn custom(f: ScalarFn, mu: f64, eps1: f64, eps1_tilde: f64) -> Self {
        RadialPotential { model: V1Model::Custom(f), mu, eps1, eps1_tilde }
    }

    /// Radial growth exponent of zero-energy orbits, 2/(2+mu).
    pub fn alpha(&self) -> f64 {
        2.0 / (2.0 + self.mu)
    }

    /// amplitude m(r) and first three derivatives for the ramp model
    fn ramp(amp: f64, a: f64, w: f64, r: f64) -> (f64, f64, f64, f64) {
        let u = (r - a) / w;
        let m = 1.0 + (amp - 1.0) * util::smoothstep(u);
        let m1 = (amp - 1.0) * util::smoothstep_d1(u) / w;
        let m2 = (amp - 1.0) * util::smoothstep_d2(u) / (w * w);
        let m3 = (amp - 1.0) * util::smoothstep_d3(u) / (w * w * w);
        (m, m1, m2, m3)
    }

    pub fn v1(&self, r: f64) -> f64 {
        let mu = self.mu;
        match &self.model {
            V1Model::PowerLaw { gamma } => -gamma * r.powf(-mu),
            V1Model::PowerLawShortRange { gamma, beta, nu } => {
                -gamma * r.powf(-mu) * (1.0 + beta * r.powf(-nu))
            }
            V1Model::AmplitudeStep { amp, ramp_at, ramp_width } => {
                let (m, _, _, _) = Self::ramp(*amp, *ramp_at, *ramp_width, r);
                -m * r.powf(-mu)
            }
            V1Model::Custom(f) => f(r),
        }
    }

    pub fn dv1(&self, r: f64) -> f64 {
        let mu = self.mu;
        match &self.model {
            V1Model::PowerLaw { gamma } => gamma * mu * r.powf(-mu - 1.0),
            V1Model::PowerLawShortRange { gamma, beta, nu } => {
                gamma * mu * r.powf(-mu - 1.0)
                    + gamma * beta * (mu + nu) * r.powf(-mu - nu - 1.0)
            }
            V1Model::AmplitudeStep { amp, ramp_at, ramp_width } => {
                let (m, m1, _, _) = Self::ramp(*amp, *ramp_at, *ramp_width, r);
                -m1 * r.powf(-mu) + m * mu * r.powf(-mu - 1.0)
            }
            V1Model::Custom(f) => {
                let h = r * 1e-6;
                (f(r + h) - f(r - h)) / (2.0 * h)
            }
        }
    }

    pub fn d2v1(&self, r: f64) -> f64 {
        let mu = self.mu;
        match &self.model {
            V1Model::PowerLaw { gamma } => -gamma * mu * (mu + 1.0) * r.powf(-mu - 2.0),
            V1Model::PowerLawShortRange { gamma, beta, nu } => {
                -gamma * mu * (mu + 1.0) * r.powf(-mu - 2.0)
                    - gamma * beta * (mu + nu) * (mu + nu + 1.0) * r.powf(-mu - nu - 2.0)
            }
            V1Model::AmplitudeStep { amp, ramp_at, ramp_width } => {
                let (m, m1, m2, _) = Self::ramp(*amp, *ramp_at, *ramp_width, r);
                -m2 * r.powf(-mu) + 2.0 * m1 * mu * r.powf(-mu - 1.0)
                    - m * mu * (mu + 1.0) * r.powf(-mu - 2.0)
            }
            V1Model::Custom(f) => {
                let h = r * 1e-4;
                (f(r + h) - 2.0 * f(r) + f(r - h)) / (h * h)
            }
        }
    }

    pub fn d3v1(&self, r: f64) -> f64 {
        let mu = self.mu;
        match &self.model {
            V1Model::PowerLaw { gamma } => {
                gamma * mu * (mu + 1.0) * (mu + 2.0) * r.powf(-mu - 3.0)
            }
            V1Model::PowerLawShortRange { gamma, beta, nu } => {
                gamma * mu * (mu + 1.0) * (mu + 2.0) * r.powf(-mu - 3.0)
                    + gamma
                        * beta
                        * (mu + nu)
                        * (mu + nu + 1.0)
                        * (mu + nu + 2.0)
                        * r.powf(-mu - nu - 3.0)
            }
            V1Model::AmplitudeStep { amp, ramp_at, ramp_width } => {
                let (m, m1, m2, m3) = Self::ramp(*amp, *ramp_at, *ramp_width, r);
                -m3 * r.powf(-mu) + 3.0 * m2 * mu * r.powf(-mu - 1.0)
                    - 3.0 * m1 * mu * (mu + 1.0) * r.powf(-mu - 2.0)
                    + m * mu * (mu + 1.0) * (mu + 2.0) * r.powf(-mu - 3.0)
            }
            V1Model::Custom(f) => {
                let h = r * 1e-3;
                (f(r + 2.0 * h) - 2.0 * f(r + h) + 2.0 * f(r - h) - f(r - 2.0 * h))
                    / (2.0 * h * h * h)
            }
        }
    }

    /// Local speed sqrt(2 lambda - 2 V1(r)) of an energy-lambda radial orbit.
    pub fn g(&self, lambda: f64, r: f64) -> Result<f64> {
        if r < 1.0 {
            return Err(Error::Domain(format!("g requires r >= 1, got {r}")));
        }
        if lambda < 0.0 {
            return Err(Error::Domain(format!("g requires lambda >= 0, got {lambda}")));
        }
        Ok((2.0 * lambda - 2.0 * self.v1(r)).sqrt())
    }

    /// Arrival time at radius r of the zero-energy radial orbit started at
    /// r = 1 with the local speed: integral of (-2 V1)^{-1/2} from 1 to r.
    pub fn t_tilde(&self, r: f64) -> Result<f64> {
        if r < 1.0 {
            return Err(Error::Domain(format!("t_tilde requires r >= 1, got {r}")));
        }
        quad::adaptive(|rho| (-2.0 * self.v1(rho)).powf(-0.5), 1.0, r, 1e-12)
    }

    /// Hessian of the radial potential at position y, |y| >= 1:
    /// V1''(|y|) on the radial direction, V1'(|y|)/|y| on the orthogonal
    /// complement.
    pub fn hessian_v1(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let r = y.norm();
        if r < 1.0 {
            return Err(Error::Domain(format!("hessian_v1 requires |y| >= 1, got {r}")));
        }
        let d = y.len();
        let yhat = y / r;
        let par = &yhat * yhat.transpose();
        let perp = DMatrix::identity(d, d) - &par;
        Ok(self.d2v1(r) * par + (self.dv1(r) / r) * perp)
    }

    /// Third derivative tensor of the radial potential applied twice to u:
    /// the gradient in y of u . Hess V1(y) . u.
    pub fn d3v1_applied(&self, y: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let r = y.norm();
        if r < 1.0 {
            return Err(Error::Domain(format!("d3v1_applied requires |y| >= 1, got {r}")));
        }
        let yhat = y / r;
        let a = yhat.dot(u);
        let c = (self.d2v1(r) - self.dv1(r) / r) / r;
        Ok(self.d3v1(r) * a * a * &yhat
            + c * (2.0 * a * (u - a * &yhat) + (u.norm_squared() - a * a) * yhat))
    }
}

#[derive(Clone)]
enum V2Model {
    None,
    /// V2(x) = strength x_1 <x>^{-p}
    AnisotropicPower { strength: f64, p: f64 },
}

/// Anisotropic perturbation with decay exponent eps2, optionally truncated to
/// a ball of radius ~ truncation_radius by a smooth cutoff.
#[derive(Clone)]
pub struct Perturbation {
    model: V2Model,
    pub eps2: f64,
    pub truncation_radius: Option<f64>,
}

impl Perturbation {
    pub fn none(mu: f64) -> Self {
        Perturbation { model: V2Model::None, eps2: 0.25 * (2.0 - mu), truncation_radius: None }
    }

    /// V2(x) = strength x_1 <x>^{-(mu + eps2 + 1)}; each derivative gains one
    /// power of decay, matching the required weighted bounds.
    pub fn anisotropic(strength: f64, mu: f64, eps2: f64) -> Self {
        assert!(eps2 > 0.0 && eps2 <= 0.25 * (2.0 - mu) + 1e-12);
        Perturbation {
            model: V2Model::AnisotropicPower { strength, p: mu + eps2 + 1.0 },
            eps2,
            truncation_radius: None,
        }
    }

    pub fn truncated(&self, n: f64) -> Self {
        let mut p = self.clone();
        p.truncation_radius = Some(n);
        p
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.model, V2Model::None)
    }

    fn v2_raw(&self, x: &DVector<f64>) -> f64 {
        match &self.model {
            V2Model::None => 0.0,
            V2Model::AnisotropicPower { strength, p } => {
                let w2 = 1.0 + x.norm_squared();
                strength * x[0] * w2.powf(-0.5 * p)
            }
        }
    }

    fn grad_v2_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x.len();
        match &self.model {
            V2Model::None => DVector::zeros(d),
            V2Model::AnisotropicPower { strength, p } => {
                let w2 = 1.0 + x.norm_squared();
                let mut g = DVector::zeros(d);
                g[0] = w2.powf(-0.5 * p);
                g -= p * x[0] * w2.powf(-0.5 * p - 1.0) * x;
                *strength * g
            }
        }
    }

    fn hess_v2_raw(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        match &self.model {
            V2Model::None => DMatrix::zeros(d, d),
            V2Model::AnisotropicPower { strength, p } => {
                let w2 = 1.0 + x.norm_squared();
                let mut e1 = DVector::zeros(d);
                e1[0] = 1.0;
                let outer_ex = &e1 * x.transpose() + x * e1.transpose();
                let h = -p * w2.powf(-0.5 * p - 1.0)
                    * (outer_ex + x[0] * DMatrix::identity(d, d))
                    + p * (p + 2.0) * x[0] * w2.powf(-0.5 * p - 2.0) * (x * x.transpose());
                *strength * h
            }
        }
    }

    pub fn v2(&self, x: &DVector<f64>) -> f64 {
        match self.truncation_radius {
            None => self.v2_raw(x),
            Some(n) => util::cutoff_below(x.norm() / n, 1.0) * self.v2_raw(x),
        }
    }

    pub fn grad_v2(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.truncation_radius {
            None => self.grad_v2_raw(x),
            Some(n) => {
                let r = x.norm();
                let chi = util::cutoff_below(r / n, 1.0);
                let dchi = util::cutoff_below_d1(r / n, 1.0) / n;
                let xhat = x / r.max(1e-300);
                chi * self.grad_v2_raw(x) + self.v2_raw(x) * dchi * xhat
            }
        }
    }

    pub fn hess_v2(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self.truncation_radius {
            None => self.hess_v2_raw(x),
            Some(n) => {
                let r = x.norm().max(1e-300);
                let d = x.len();
                let chi = util::cutoff_below(r / n, 1.0);
                let dchi = util::cutoff_below_d1(r / n, 1.0) / n;
                let d2chi = util::cutoff_below_d2(r / n, 1.0) / (n * n);
                let xhat = x / r;
                let g = self.grad_v2_raw(x);
                let proj = &xhat * xhat.transpose();
                chi * self.hess_v2_raw(x)
                    + dchi * (&xhat * g.transpose() + &g * xhat.transpose())
                    + self.v2_raw(x)
                        * (d2chi * &proj + (dchi / r) * (DMatrix::identity(d, d) - proj))
            }
        }
    }
}

/// Total potential value V1(|x|) + V2(x).
pub fn total_potential(pot: &RadialPotential, pert: &Perturbation, x: &DVector<f64>) -> f64 {
    pot.v1(x.norm()) + pert.v2(x)
}

/// Total force -grad(V1 + V2).
pub fn total_force(pot: &RadialPotential, pert: &Perturbation, x: &DVector<f64>) -> DVector<f64> {
    let r = x.norm();
    -pot.dv1(r) / r * x - pert.grad_v2(x)
}

/// Audit result for the decay, virial and tail conditions. Positive margins
/// mean the condition holds with that slack on the sampled grid.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub r_max: f64,
    pub n_samples: usize,
    /// min over the grid of -V1 r^mu - eps1
    pub margin_lower_bound: f64,
    /// 0.1 minus the positive part of the tail slope of r^{mu+n} |d^n V1|
    pub margin_derivative_bounds: [f64; 4],
    /// normalized min of (-(2 - eps1_tilde) V1 - r V1') / (-V1)
    pub margin_virial: f64,
    /// 0.1 minus the positive part of the tail slope of <x>^{mu+eps2+k} |d^k V2|
    pub margin_perturbation: [f64; 3],
    /// (2 - mu)/4 - eps2
    pub margin_eps2: f64,
    /// tail max of r^{-1} V1'(r) t_tilde(r)^2
    pub limsup_radial_first: f64,
    /// tail max of V1''(r) t_tilde(r)^2
    pub limsup_radial_second: f64,
    /// tail max of (-V1' / sqrt(-2 V1)) t_tilde
    pub limsup_mixed: f64,
    /// feasible interval for the Hardy constant, empty when infeasible
    pub eps_bar1_interval: Option<(f64, f64)>,
    /// midpoint of the feasible interval
    pub eps_bar1: Option<f64>,
    /// ceiling slack 1/4 (1 - eps_bar1^2) - max(limsup_radial_*) at the midpoint
    pub margin_tail_quarter: Option<f64>,
    /// ceiling slack 1/2 (1 + eps_bar1) - limsup_mixed at the midpoint
    pub margin_tail_half: Option<f64>,
}

impl ConditionReport {
    pub fn all_margins_positive(&self) -> bool {
        self.margin_lower_bound > 0.0
            && self.margin_derivative_bounds.iter().all(|&m| m > 0.0)
            && self.margin_virial > 0.0
            && self.margin_perturbation.iter().all(|&m| m > 0.0)
            && self.margin_eps2 >= 0.0
            && self.margin_tail_quarter.map_or(false, |m| m > 0.0)
            && self.margin_tail_half.map_or(false, |m| m > 0.0)
    }
}

/// Sample the potential pair on a log grid and report condition margins,
/// tail-limit estimates and the feasible Hardy-constant interval.
pub fn check_conditions(
    pot: &RadialPotential,
    pert: &Perturbation,
    r_max: f64,
    n_samples: usize,
) -> ConditionReport {
    let r_max = r_max.max(10.0);
    let n_samples = n_samples.max(100);
    let grid = util::log_grid(1.0, r_max, n_samples);
    let mu = pot.mu;
    let eps2 = pert.eps2;

    let mut margin_lower = f64::INFINITY;
    let mut margin_virial = f64::INFINITY;
    for &r in &grid {
        let v = pot.v1(r);
        margin_lower = margin_lower.min(-v * r.powf(mu) - pot.eps1);
        let virial = (-(2.0 - pot.eps1_tilde) * v - r * pot.dv1(r)) / (-v);
        margin_virial = margin_virial.min(virial);
    }

    // derivative boundedness: weighted magnitudes must not grow along the tail
    let tail: Vec<f64> = grid.iter().copied().filter(|&r| r >= r_max / 10.0).collect();
    let log_tail: Vec<f64> = tail.iter().map(|r| r.ln()).collect();
    let mut margin_deriv = [0.0f64; 4];
    for n in 0..4usize {
        let weighted: Vec<f64> = tail
            .iter()
            .map(|&r| {
                let d = match n {
                    0 => pot.v1(r),
                    1 => pot.dv1(r),
                    2 => pot.d2v1(r),
                    _ => pot.d3v1(r),
                };
                (d.abs().max(1e-300) * r.powf(mu + n as f64)).ln()
            })
            .collect();
        let slope = util::ls_slope(&log_tail, &weighted);
        margin_deriv[n] = 0.1 - slope.max(0.0);
    }

    // perturbation decay along a generic ray (avoids the x1 = 0 null set)
    let dir = DVector::from_vec(vec![(0.8f64).sqrt(), (0.2f64).sqrt()]);
    let mut margin_pert = [0.1f64; 3];
    if !pert.is_zero() {
        for k in 0..3usize {
            let weighted: Vec<f64> = tail
                .iter()
                .map(|&r| {
                    let x = r * &dir;
                    let w = (1.0 + x.norm_squared()).sqrt();
                    let mag = match k {
                        0 => pert.v2(&x).abs(),
                        1 => pert.grad_v2(&x).norm(),
                        _ => pert.hess_v2(&x).norm(),
                    };
                    (mag.max(1e-300) * w.powf(mu + eps2 + k as f64)).ln()
                })
                .collect();
            let slope = util::ls_slope(&log_tail, &weighted);
            margin_pert[k] = 0.1 - slope.max(0.0);
        }
    }

    // tail limit estimates over the last decade
    let mut limsup_first = f64::NEG_INFINITY;
    let mut limsup_second = f64::NEG_INFINITY;
    let mut limsup_mixed = f64::NEG_INFINITY;
    for &r in &tail {
        let tt = pot.t_tilde(r).unwrap_or(f64::NAN);
        limsup_first = limsup_first.max(pot.dv1(r) / r * tt * tt);
        limsup_second = limsup_second.max(pot.d2v1(r) * tt * tt);
        limsup_mixed = limsup_mixed.max(-pot.dv1(r) / (-2.0 * pot.v1(r)).sqrt() * tt);
    }

    let lb_structural = (1.0 - pot.alpha() * (mu + 2.0 * eps2)).max(0.0);
    let lb_mixed = 2.0 * limsup_mixed - 1.0;
    let lb = lb_structural.max(lb_mixed).max(0.0);
    let quarter_arg = limsup_first.max(limsup_second).max(0.0);
    let interval = if quarter_arg < 0.25 {
        let ub = (1.0 - 4.0 * quarter_arg).sqrt();
        if lb < ub { Some((lb, ub)) } else { None }
    } else {
        None
    };
    let eps_bar1 = interval.map(|(a, b)| 0.5 * (a + b));
    let margin_tail_quarter =
        eps_bar1.map(|e| 0.25 * (1.0 - e * e) - limsup_first.max(limsup_second));
    let margin_tail_half = eps_bar1.map(|e| 0.5 * (1.0 + e) - limsup_mixed);

    ConditionReport {
        r_max,
        n_samples,
        margin_lower_bound: margin_lower,
        margin_derivative_bounds: margin_deriv,
        margin_virial,
        margin_perturbation: margin_pert,
        margin_eps2: 0.25 * (2.0 - mu) - eps2,
        limsup_radial_first: limsup_first,
        limsup_radial_second: limsup_second,
        limsup_mixed,
        eps_bar1_interval: interval,
        eps_bar1,
        margin_tail_quarter,
        margin_tail_half,
    }
}

/// Build a radial potential from a JSON spec, e.g.
/// {"model": "power_law", "gamma": 1.0, "mu": 1.0}.
pub fn radial_from_config(cfg: &serde_json::Value) -> Result<RadialPotential> {
    let model = cfg
        .get("model")
        .and_then(|m| m.as_str())
        .ok_or_else(|| Error::Domain("potential config missing \"model\"".into()))?;
    let num = |key: &str| -> Result<f64> {
        cfg.get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Domain(format!("potential config missing \"{key}\"")))
    };
    match model {
        "power_law" => {
            let gamma = num("gamma")?;
            let mu = num("mu")?;
            if !(gamma > 0.0) || !(mu > 0.0 && mu < 2.0) {
                return Err(Error::Domain(format!(
                    "power_law requires gamma > 0 and mu in (0, 2); got gamma={gamma}, mu={mu}"
                )));
            }
            Ok(RadialPotential::power_law(gamma, mu))
        }
        "coulomb" => {
            let gamma = num("gamma")?;
            if !(gamma > 0.0) {
                return Err(Error::Domain(format!("coulomb requires gamma > 0; got {gamma}")));
            }
            Ok(RadialPotential::coulomb(gamma))
        }
        "power_law_short_range" => {
            let gamma = num("gamma")?;
            let mu = num("mu")?;
            let beta = num("beta")?;
            let nu = num("nu")?;
            if !(gamma > 0.0 && mu > 0.0 && mu + nu < 2.0 && beta >= 0.0 && nu > 0.0) {
                return Err(Error::Domain(
                    "power_law_short_range requires gamma > 0, beta >= 0, nu > 0, mu + nu < 2"
                        .into(),
                ));
            }
            Ok(RadialPotential::power_law_short_range(gamma, mu, beta, nu))
        }
        other => Err(Error::Domain(format!("unknown potential model \"{other}\""))),
    }
}

/// Build a perturbation from a JSON spec, e.g.
/// {"model": "anisotropic_power", "strength": 0.1, "eps2": 0.25}.
/// The radial potential supplies mu for the decay exponent.
pub fn perturbation_from_config(
    cfg: &serde_json::Value,
    pot: &RadialPotential,
) -> Result<Perturbation> {
    let model = cfg
        .get("model")
        .and_then(|m| m.as_str())
        .ok_or_else(|| Error::Domain("perturbation config missing \"model\"".into()))?;
    match model {
        "none" => Ok(Perturbation::none(pot.mu)),
        "anisotropic_power" => {
            let strength = cfg
                .get("strength")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::Domain("perturbation config missing \"strength\"".into()))?;
            let eps2 = cfg
                .get("eps2")
                .and_then(|v| v.as_f64())
                .unwrap_or(0.25 * (2.0 - pot.mu));
            if !(eps2 > 0.0 && eps2 <= 0.25 * (2.0 - pot.mu) + 1e-12) {
                return Err(Error::Domain(format!(
                    "eps2 must lie in (0, (2 - mu)/4]; got {eps2}"
                )));
            }
            let mut p = Perturbation::anisotropic(strength, pot.mu, eps2);
            if let Some(n) = cfg.get("truncation_radius").and_then(|v| v.as_f64()) {
                p = p.truncated(n);
            }
            Ok(p)
        }
        other => Err(Error::Domain(format!("unknown perturbation model \"{other}\""))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn g_values() {
        let coulomb = RadialPotential::coulomb(1.0);
        assert_relative_eq!(coulomb.g(0.0, 4.0).unwrap(), (0.5f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(coulomb.g(0.5, 1.0).unwrap(), (3.0f64).sqrt(), epsilon = 1e-14);
        let pl = RadialPotential::power_law(1.0, 1.8);
        assert_relative_eq!(
            pl.g(0.0, 10.0).unwrap(),
            (2.0 * 10f64.powf(-1.8)).sqrt(),
            epsilon = 1e-14
        );
        assert!(pl.g(0.0, 0.5).is_err());
    }

    #[test]
    fn t_tilde_closed_forms() {
        let coulomb = RadialPotential::coulomb(1.0);
        assert_relative_eq!(coulomb.t_tilde(1.0).unwrap(), 0.0, epsilon = 1e-15);
        let expect = (2.0f64).sqrt() * (4.0f64.powf(1.5) - 1.0) / 3.0;
        assert_relative_eq!(coulomb.t_tilde(4.0).unwrap(), expect, epsilon = 1e-10);
        let pl = RadialPotential::power_law(1.0, 1.8);
        let expect = (0.5f64).sqrt() * (8.0f64.powf(1.9) - 1.0) / 1.9;
        assert_relative_eq!(pl.t_tilde(8.0).unwrap(), expect, epsilon = 1e-10);
    }

    #[test]
    fn t_tilde_monotone() {
        let pot = RadialPotential::power_law(2.0, 0.7);
        let mut prev = 0.0;
        for &r in &[1.5, 2.0, 4.0, 10.0, 50.0] {
            let t = pot.t_tilde(r).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn hessian_eigenstructure() {
        let coulomb = RadialPotential::coulomb(1.0);
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let h = coulomb.hessian_v1(&y).unwrap();
        // V1'' = -2 r^{-3} = -0.25 along y, V1'/r = r^{-2}/r... = 1/8 across
        assert_relative_eq!(h[(0, 0)], -0.25, epsilon = 1e-13);
        assert_relative_eq!(h[(1, 1)], 0.125, epsilon = 1e-13);
        assert_relative_eq!(h[(0, 1)], 0.0, epsilon = 1e-13);
        assert_relative_eq!(h[(1, 0)], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn hessian_matches_fd() {
        let pot = RadialPotential::power_law(1.3, 1.4);
        let y = DVector::from_vec(vec![1.7, -2.4, 0.9]);
        let h = pot.hessian_v1(&y).unwrap();
        let step = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += step;
                ym[j] -= step;
                let gp = pot.dv1(yp.norm()) / yp.norm() * yp[i];
                let gm = pot.dv1(ym.norm()) / ym.norm() * ym[i];
                let fd = (gp - gm) / (2.0 * step);
                assert_relative_eq!(h[(i, j)], fd, epsilon = 1e-7, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn third_derivative_applied_matches_fd() {
        let pot = RadialPotential::power_law(0.8, 1.1);
        let y = DVector::from_vec(vec![2.0, 1.0, -1.5]);
        let u = DVector::from_vec(vec![0.3, -0.7, 0.2]);
        let t = pot.d3v1_applied(&y, &u).unwrap();
        let step = 1e-5;
        for i in 0..3 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += step;
            ym[i] -= step;
            let qp = (pot.hessian_v1(&yp).unwrap() * &u).dot(&u);
            let qm = (pot.hessian_v1(&ym).unwrap() * &u).dot(&u);
            let fd = (qp - qm) / (2.0 * step);
            assert_relative_eq!(t[i], fd, epsilon = 1e-7, max_relative = 1e-6);
        }
    }

    #[test]
    fn custom_fd_derivatives() {
        let f: ScalarFn = Arc::new(|r: f64| -1.3 * r.powf(-0.9));
        let pot = RadialPotential::custom(f, 0.9, 1.0, 1.0);
        let exact = RadialPotential::power_law(1.3, 0.9);
        for &r in &[1.5, 3.0, 12.0] {
            assert_relative_eq!(pot.dv1(r), exact.dv1(r), max_relative = 1e-8);
            assert_relative_eq!(pot.d2v1(r), exact.d2v1(r), max_relative = 1e-5);
            assert_relative_eq!(pot.d3v1(r), exact.d3v1(r), max_relative = 1e-3);
        }
    }

    #[test]
    fn perturbation_gradient_matches_fd() {
        let pert = Perturbation::anisotropic(0.2, 1.0, 0.25);
        let x = DVector::from_vec(vec![2.5, -1.0, 0.7]);
        let g = pert.grad_v2(&x);
        let step = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let fd = (pert.v2(&xp) - pert.v2(&xm)) / (2.0 * step);
            assert_relative_eq!(g[i], fd, epsilon = 1e-9, max_relative = 1e-7);
        }
    }

    #[test]
    fn perturbation_hessian_matches_fd() {
        let pert = Perturbation::anisotropic(0.2, 1.0, 0.25);
        let x = DVector::from_vec(vec![2.5, -1.0, 0.7]);
        let h = pert.hess_v2(&x);
        let step = 1e-5;
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let fd = (pert.grad_v2(&xp) - pert.grad_v2(&xm)) / (2.0 * step);
            for i in 0..3 {
                assert_relative_eq!(h[(i, j)], fd[i], epsilon = 1e-8, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn truncated_perturbation_fd_and_support() {
        let pert = Perturbation::anisotropic(0.5, 1.0, 0.25).truncated(10.0);
        // inside the inner plateau the cutoff is identically 1
        let x_in = DVector::from_vec(vec![3.0, 1.0]);
        let free = Perturbation::anisotropic(0.5, 1.0, 0.25);
        assert_relative_eq!(pert.v2(&x_in), free.v2(&x_in), epsilon = 1e-15);
        // beyond 3n/4 it vanishes
        let x_out = DVector::from_vec(vec![8.0, 0.5]);
        assert_eq!(pert.v2(&x_out), 0.0);
        assert_eq!(pert.grad_v2(&x_out).norm(), 0.0);
        // transition region: gradient and hessian consistent with FD
        let x = DVector::from_vec(vec![5.5, 1.5]);
        let g = pert.grad_v2(&x);
        let h = pert.hess_v2(&x);
        let step = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let fdg = (pert.v2(&xp) - pert.v2(&xm)) / (2.0 * step);
            assert_relative_eq!(g[j], fdg, epsilon = 1e-8, max_relative = 1e-6);
            let fdh = (pert.grad_v2(&xp) - pert.grad_v2(&xm)) / (2.0 * step);
            for i in 0..2 {
                assert_relative_eq!(h[(i, j)], fdh[i], epsilon = 1e-6, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn conditions_power_law_family() {
        for &mu in &[0.5, 1.0, 1.5, 1.8] {
            for &gamma in &[0.5, 1.0, 3.0] {
                let pot = RadialPotential::power_law(gamma, mu);
                let pert = Perturbation::none(mu);
                let rep = check_conditions(&pot, &pert, 1e6, 400);
                assert!(rep.all_margins_positive(), "mu={mu} gamma={gamma}: {rep:?}");
            }
        }
    }

    #[test]
    fn conditions_tail_limit_mu_one() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::none(1.0);
        let rep = check_conditions(&pot, &pert, 1e8, 600);
        // tail limit of r^{-1} V1' t_tilde^2 for mu = 1 is 2/9
        assert_relative_eq!(rep.limsup_radial_first, 2.0 / 9.0, epsilon = 1e-3);
        let (lo, hi) = rep.eps_bar1_interval.unwrap();
        assert!(lo < 1e-9);
        assert_relative_eq!(hi, 1.0 / 3.0, epsilon = 1e-2);
    }

    #[test]
    fn conditions_with_perturbation() {
        let pot = RadialPotential::coulomb(1.0);
        let pert = Perturbation::anisotropic(0.3, 1.0, 0.25);
        let rep = check_conditions(&pot, &pert, 1e6, 400);
        assert!(rep.all_margins_positive(), "{rep:?}");
    }

    #[test]
    fn config_round_trip() {
        let cfg: serde_json::Value =
            serde_json::from_str(r#"{"model": "power_law", "gamma": 2.0, "mu": 0.7}"#).unwrap();
        let pot = radial_from_config(&cfg).unwrap();
        assert_relative_eq!(pot.v1(2.0), -2.0 * 2.0f64.powf(-0.7), epsilon = 1e-15);
        let bad: serde_json::Value =
            serde_json::from_str(r#"{"model": "power_law", "gamma": 1.0, "mu": 2.1}"#).unwrap();
        assert!(radial_from_config(&bad).is_err());
        let pcfg: serde_json::Value =
            serde_json::from_str(r#"{"model": "anisotropic_power", "strength": 0.1}"#).unwrap();
        let pert = perturbation_from_config(&pcfg, &pot).unwrap();
        assert!(!pert.is_zero());
    }
}
