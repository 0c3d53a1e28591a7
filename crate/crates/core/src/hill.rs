//! Hill-function approximation of the clamped matched-filter factor.
//!
//! For amplitude `a` the target is `[log a - a/q]_+`, fitted by
//! `h q^n / (H^n + q^n)` in plain least squares over a log-spaced grid of
//! `q` above the clamp boundary `a / log a`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HillError {
    #[error("amplitude {0} must exceed e")]
    AmplitudeTooSmall(f64),
    #[error("invalid fit configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillParams {
    pub a: f64,
    pub h: f64,
    #[serde(rename = "H")]
    pub half: f64,
    pub n: f64,
    pub residual: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Set when the evaluation budget ran out before convergence.
    #[serde(default)]
    pub degraded: bool,
}

impl HillParams {
    pub fn eval(&self, q: f64) -> f64 {
        hill_eval(self, q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HillFitConfig {
    pub points: usize,
    /// Grid starts at `q_min_factor * a / log a`.
    pub q_min_factor: f64,
    /// Grid ends at `q_max_factor * a`.
    pub q_max_factor: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub max_evals: usize,
}

impl Default for HillFitConfig {
    fn default() -> Self {
        Self {
            points: 200,
            q_min_factor: 1.001,
            q_max_factor: 100.0,
            n_min: 0.5,
            n_max: 10.0,
            max_evals: 200_000,
        }
    }
}

impl HillFitConfig {
    fn validate(&self) -> Result<(), HillError> {
        if self.points < 3 {
            return Err(HillError::BadConfig("at least 3 grid points".into()));
        }
        if !(self.q_min_factor > 1.0) {
            return Err(HillError::BadConfig("q_min_factor must exceed 1".into()));
        }
        if !(self.n_min > 0.0 && self.n_max > self.n_min) {
            return Err(HillError::BadConfig("need 0 < n_min < n_max".into()));
        }
        if self.max_evals == 0 {
            return Err(HillError::BadConfig("max_evals must be positive".into()));
        }
        Ok(())
    }
}

/// `[log a - a/q]_+`.
pub fn hill_target(a: f64, q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    (a.ln() - a / q).max(0.0)
}

pub fn hill_eval(p: &HillParams, q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    p.h / (1.0 + (p.half / q).powf(p.n))
}

struct Objective {
    log_q: Vec<f64>,
    target: Vec<f64>,
}

impl Objective {
    /// `theta = (log h, log H, n)`.
    fn sse(&self, theta: [f64; 3]) -> f64 {
        let h = theta[0].exp();
        let (lh, n) = (theta[1], theta[2]);
        self.log_q
            .iter()
            .zip(&self.target)
            .map(|(&lq, &y)| {
                let r = y - h / (1.0 + (n * (lh - lq)).exp());
                r * r
            })
            .sum()
    }
}

struct Search<'a> {
    obj: &'a Objective,
    n_range: (f64, f64),
    evals: usize,
    budget: usize,
}

impl Search<'_> {
    fn eval(&mut self, theta: [f64; 3]) -> f64 {
        self.evals += 1;
        self.obj.sse(theta)
    }

    /// Compass search with step halving. Returns `(theta, sse, converged)`.
    fn compass(&mut self, start: [f64; 3]) -> ([f64; 3], f64, bool) {
        let mut x = start;
        let mut fx = self.eval(x);
        let mut step = [0.5, 0.5, 0.5];
        loop {
            if step.iter().all(|&s| s < 1e-10) {
                return (x, fx, true);
            }
            if self.evals >= self.budget {
                return (x, fx, false);
            }
            let mut improved = false;
            for i in 0..3 {
                for sign in [1.0, -1.0] {
                    let mut y = x;
                    y[i] += sign * step[i];
                    if i == 2 {
                        y[2] = y[2].clamp(self.n_range.0, self.n_range.1);
                        if y[2] == x[2] {
                            continue;
                        }
                    }
                    let fy = self.eval(y);
                    if fy < fx {
                        x = y;
                        fx = fy;
                        improved = true;
                        // expand along a successful direction
                        step[i] *= 2.0;
                        break;
                    }
                }
            }
            if !improved {
                for s in &mut step {
                    *s *= 0.5;
                }
            }
        }
    }
}

fn objective(a: f64, config: &HillFitConfig) -> Result<(Objective, f64, f64), HillError> {
    if !(a > std::f64::consts::E && a.is_finite()) {
        return Err(HillError::AmplitudeTooSmall(a));
    }
    config.validate()?;
    let q_min = config.q_min_factor * a / a.ln();
    let q_max = config.q_max_factor * a;
    if !(q_max > q_min) {
        return Err(HillError::BadConfig("q_max must exceed q_min".into()));
    }
    let (l0, l1) = (q_min.ln(), q_max.ln());
    let m = config.points;
    let log_q: Vec<f64> = (0..m).map(|i| l0 + (l1 - l0) * i as f64 / (m - 1) as f64).collect();
    let target = log_q.iter().map(|&lq| hill_target(a, lq.exp())).collect();
    Ok((Objective { log_q, target }, q_min, q_max))
}

/// Least-squares Hill fit for amplitude `a`.
pub fn fit_hill(a: f64, config: &HillFitConfig) -> Result<HillParams, HillError> {
    let ceiling = a.ln();
    let mut starts = Vec::new();
    for h in [ceiling, 1.2 * ceiling] {
        for half in [a / a.ln(), a, 3.0 * a] {
            for n in [1.0f64, 2.0, 4.0] {
                starts.push([h.ln(), half.ln(), n.clamp(config.n_min, config.n_max)]);
            }
        }
    }
    run_fit(a, config, starts)
}

/// Single-start fit seeded from a fit at a nearby amplitude, rescaled to
/// `a`. Much cheaper than [`fit_hill`] inside outer optimisation loops.
pub fn refit_hill(a: f64, config: &HillFitConfig, seed: &HillParams) -> Result<HillParams, HillError> {
    if !(a > std::f64::consts::E && a.is_finite()) {
        return Err(HillError::AmplitudeTooSmall(a));
    }
    let start = [
        (seed.h * a.ln() / seed.a.ln()).ln(),
        (seed.half * a / seed.a).ln(),
        seed.n.clamp(config.n_min, config.n_max),
    ];
    run_fit(a, config, vec![start])
}

fn run_fit(a: f64, config: &HillFitConfig, starts: Vec<[f64; 3]>) -> Result<HillParams, HillError> {
    let (obj, q_min, q_max) = objective(a, config)?;
    let mut search = Search {
        obj: &obj,
        n_range: (config.n_min, config.n_max),
        evals: 0,
        budget: config.max_evals,
    };
    let mut best: Option<([f64; 3], f64)> = None;
    let mut converged = true;
    for s in starts {
        if search.evals >= search.budget {
            converged = false;
            break;
        }
        let (x, f, ok) = search.compass(s);
        converged &= ok;
        if best.is_none_or(|(_, bf)| f < bf) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.expect("at least one start ran");
    if !converged {
        log::warn!("Hill fit for a = {a} stopped at the evaluation budget");
    }
    Ok(HillParams {
        a,
        h: x[0].exp(),
        half: x[1].exp(),
        n: x[2],
        residual: f,
        q_min,
        q_max,
        degraded: !converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(p: &HillParams, cfg: &HillFitConfig) -> f64 {
        let (l0, l1) = (p.q_min.ln(), p.q_max.ln());
        let m = cfg.points;
        (0..m)
            .map(|i| {
                let q = (l0 + (l1 - l0) * i as f64 / (m - 1) as f64).exp();
                let r = hill_target(p.a, q) - hill_eval(p, q);
                r * r
            })
            .sum()
    }

    #[test]
    fn target_boundary_is_zero() {
        for a in [11.0f64, 58.0] {
            assert!(hill_target(a, a / a.ln()).abs() < 1e-12);
            assert!((hill_target(a, a) - (a.ln() - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_identities() {
        let p = HillParams {
            a: 58.0,
            h: 4.0,
            half: 30.0,
            n: 2.0,
            residual: 0.0,
            q_min: 1.0,
            q_max: 2.0,
            degraded: false,
        };
        assert_eq!(hill_eval(&p, 0.0), 0.0);
        assert!((hill_eval(&p, 30.0) - 2.0).abs() < 1e-12);
        assert!((hill_eval(&p, 30e6) - 4.0).abs() < 4e-3);
        let vals: Vec<f64> = (0..100).map(|i| hill_eval(&p, i as f64)).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fit_is_close_at_the_amplitude() {
        let cfg = HillFitConfig::default();
        for (a, want) in [(11.0, 1.3979), (58.0, 3.0604)] {
            let p = fit_hill(a, &cfg).unwrap();
            assert!(!p.degraded);
            let got = hill_eval(&p, a);
            assert!((got - want).abs() < 0.1 * want, "a={a}: {got} vs {want}");
            assert!((residual(&p, &cfg) - p.residual).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_is_locally_optimal() {
        let cfg = HillFitConfig::default();
        for a in [11.0, 58.0] {
            let p = fit_hill(a, &cfg).unwrap();
            for which in 0..3 {
                for f in [0.99, 1.01] {
                    let mut q = p.clone();
                    match which {
                        0 => q.h *= f,
                        1 => q.half *= f,
                        _ => q.n *= f,
                    }
                    if q.n > cfg.n_max || q.n < cfg.n_min {
                        continue;
                    }
                    assert!(residual(&q, &cfg) >= p.residual - 1e-12);
                }
            }
        }
    }

    #[test]
    fn smaller_amplitude_gets_small_positive_value() {
        let p = fit_hill(58.0, &HillFitConfig::default()).unwrap();
        let v = hill_eval(&p, 11.0);
        assert!(v > 0.0 && v < 0.25 * hill_eval(&p, 58.0), "{v}");
    }

    #[test]
    fn rejects_small_amplitude_and_flags_budget() {
        assert_eq!(fit_hill(2.0, &HillFitConfig::default()), Err(HillError::AmplitudeTooSmall(2.0)));
        let cfg = HillFitConfig {
            max_evals: 5,
            ..HillFitConfig::default()
        };
        assert!(fit_hill(58.0, &cfg).unwrap().degraded);
    }

    #[test]
    fn json_round_trip_uses_capital_h() {
        let p = fit_hill(11.0, &HillFitConfig::default()).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"H\":"));
        let back: HillParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
