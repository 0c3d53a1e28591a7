//! Log-posteriori demodulation filters driven by a receptor trajectory.
//!
//! Every filter is integrated event by event: between jumps of the active
//! count `x_*` the right-hand side is a known function of time, and each
//! activation adds a Dirac contribution. Paths are reported on a uniform
//! sample grid, each sample including all events up to and at its time.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{uniform_grid, Reference, StepSignal};
use crate::trajectory::Trajectory;

/// Species name of the active receptor count in the networks built here.
pub const ACTIVE_SPECIES: &str = "Xs";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemodError {
    #[error("reference is {value} <= 0 at activation time {time}")]
    NonPositiveReference { time: f64, value: f64 },
    #[error("input u(t) is zero at t = {0} while receptors are active")]
    ZeroInput(f64),
    #[error("trajectory has no species `{0}`")]
    MissingSpecies(String),
    #[error("invalid symbol set: {0}")]
    InvalidSymbols(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Rectangular-pulse concentration-modulation alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMSymbolSet {
    amplitudes: Vec<f64>,
    off_level: f64,
    duration: f64,
    priors: Vec<f64>,
}

impl CMSymbolSet {
    /// Equiprobable symbols.
    pub fn new(amplitudes: Vec<f64>, off_level: f64, duration: f64) -> Result<Self, DemodError> {
        let k = amplitudes.len();
        Self::with_priors(amplitudes, off_level, duration, vec![1.0 / k as f64; k.max(1)])
    }

    /// Zero priors are accepted; their filters start at negative infinity.
    pub fn with_priors(
        amplitudes: Vec<f64>,
        off_level: f64,
        duration: f64,
        priors: Vec<f64>,
    ) -> Result<Self, DemodError> {
        if amplitudes.len() < 2 {
            return Err(DemodError::InvalidSymbols("need at least two symbols".into()));
        }
        if !(off_level >= 1.0 && off_level.is_finite()) {
            return Err(DemodError::InvalidSymbols("OFF level must be at least 1".into()));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(DemodError::InvalidSymbols("duration must be positive".into()));
        }
        for &a in &amplitudes {
            if !(a > off_level && a.is_finite()) {
                return Err(DemodError::InvalidSymbols(format!(
                    "amplitude {a} must exceed the OFF level {off_level}"
                )));
            }
            if a < 10.0 * off_level {
                log::warn!("amplitude {a} is less than ten times the OFF level {off_level}");
            }
        }
        if priors.len() != amplitudes.len() {
            return Err(DemodError::InvalidSymbols("one prior per symbol is required".into()));
        }
        if priors.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(DemodError::InvalidSymbols("priors must be non-negative".into()));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DemodError::InvalidSymbols(format!("priors sum to {total}, not 1")));
        }
        Ok(Self {
            amplitudes,
            off_level,
            duration,
            priors,
        })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, k: usize) -> f64 {
        self.amplitudes[k]
    }

    pub fn off_level(&self) -> f64 {
        self.off_level
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn log_prior(&self, k: usize) -> f64 {
        self.priors[k].ln()
    }

    /// Transmitted profile lambda_k(t).
    pub fn profile(&self, k: usize, horizon: f64) -> StepSignal {
        StepSignal::pulse(self.amplitudes[k], self.off_level, self.duration, horizon)
    }
}

/// Filter output on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl FilterPath {
    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("paths are non-empty")
    }

    /// Sample at or immediately before `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t + 1e-9);
        self.values[i.saturating_sub(1)]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean inter-activation statistics of one receptor under constant input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenewalStats {
    pub m: f64,
    pub var: f64,
    pub x_star: f64,
}

/// Active-receptor count of a trajectory as a step signal.
pub fn active_signal(tr: &Trajectory) -> Result<StepSignal, DemodError> {
    tr.signal_by_name(ACTIVE_SPECIES)
        .map_err(|_| DemodError::MissingSpecies(ACTIVE_SPECIES.into()))
}

/// Walks the merged grid of jumps, breakpoints and samples.
///
/// `flow(a, b, x)` integrates the continuous term over `[a, b]` with `x_*`
/// held at `x`; `jump(t, delta)` is the contribution of a jump at `t`.
fn sweep(
    x: &StepSignal,
    extra: &[f64],
    dt: f64,
    init: f64,
    mut flow: impl FnMut(f64, f64, f64) -> Result<f64, DemodError>,
    mut jump: impl FnMut(f64, f64) -> Result<f64, DemodError>,
) -> Result<FilterPath, DemodError> {
    if !(dt > 0.0) {
        return Err(DemodError::InvalidParameter("sample step must be positive".into()));
    }
    let horizon = x.horizon();
    let samples = uniform_grid(dt, horizon);
    let mut nodes: Vec<f64> = x.times()[1..].to_vec();
    nodes.extend(extra.iter().copied().filter(|&t| t > 0.0 && t <= horizon));
    nodes.extend(samples.iter().copied().skip(1));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let jumps = x.times();
    let xs = x.values();
    let mut ji = 1;
    let mut cur_x = xs[0];
    let mut acc = init;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(samples.len());
    out.push(acc);
    let mut si = 1;
    for t in nodes {
        if t > prev {
            acc += flow(prev, t, cur_x)?;
        }
        if ji < jumps.len() && jumps[ji] == t {
            acc += jump(t, xs[ji] - cur_x)?;
            cur_x = xs[ji];
            ji += 1;
        }
        if si < samples.len() && samples[si] == t {
            out.push(acc);
            si += 1;
        }
        prev = t;
    }
    Ok(FilterPath {
        times: samples,
        values: out,
    })
}

/// Event-driven log-posteriori filter with reference `reference`
/// (lambda_k co-located, sigma_k with diffusion).
pub fn exact_filter(
    x_star: &StepSignal,
    reference: &dyn Reference,
    g_plus: f64,
    receptors: u32,
    log_prior: f64,
    dt: f64,
) -> Result<FilterPath, DemodError> {
    let m = f64::from(receptors);
    sweep(
        x_star,
        &reference.breakpoints(),
        dt,
        log_prior,
        |a, b, x| Ok(-g_plus * (m - x) * reference.integral(a, b)),
        |t, delta| {
            if delta <= 0.0 {
                return Ok(0.0);
            }
            let r = reference.value(t);
            if !(r > 0.0) {
                return Err(DemodError::NonPositiveReference { time: t, value: r });
            }
            Ok(delta * r.ln())
        },
    )
}

/// Time-scale-separated approximation driven by the input `u`.
pub fn intermediate_filter(
    x_star: &StepSignal,
    input: &StepSignal,
    reference: &StepSignal,
    g_minus: f64,
    log_prior: f64,
    dt: f64,
) -> Result<FilterPath, DemodError> {
    let mut bp = input.times().to_vec();
    bp.extend_from_slice(reference.times());
    let mut u_c = input.cursor();
    let mut r_c = reference.cursor();
    sweep(
        x_star,
        &bp,
        dt,
        log_prior,
        |a, b, x| {
            if x == 0.0 {
                return Ok(0.0);
            }
            let u = u_c.value(a);
            if u <= 0.0 {
                return Err(DemodError::ZeroInput(a));
            }
            let lam = r_c.value(a);
            if !(lam > 0.0) {
                return Err(DemodError::NonPositiveReference { time: a, value: lam });
            }
            Ok(g_minus * x * (lam.ln() - lam / u) * (b - a))
        },
        |_, _| Ok(0.0),
    )
}

/// Non-negative filter with the constant reference a_k; starts at 0.
pub fn positive_filter(
    x_star: &StepSignal,
    input: &StepSignal,
    amplitude: f64,
    g_minus: f64,
    dt: f64,
) -> Result<FilterPath, DemodError> {
    if !(amplitude > 0.0) {
        return Err(DemodError::InvalidParameter("amplitude must be positive".into()));
    }
    let la = amplitude.ln();
    let mut u_c = input.cursor();
    sweep(
        x_star,
        input.times(),
        dt,
        0.0,
        |a, b, x| {
            if x == 0.0 {
                return Ok(0.0);
            }
            let u = u_c.value(a);
            if u <= 0.0 {
                return Err(DemodError::ZeroInput(a));
            }
            Ok(g_minus * x * (la - amplitude / u).max(0.0) * (b - a))
        },
        |_, _| Ok(0.0),
    )
}

/// Matched-filter factor `log z - z / a`.
pub fn phi(a: f64, z: f64) -> f64 {
    z.ln() - z / a
}

pub fn renewal_stats(g_plus: f64, g_minus: f64, a: f64, receptors: u32) -> Result<RenewalStats, DemodError> {
    if !(g_plus > 0.0 && g_minus > 0.0 && a > 0.0 && receptors > 0) {
        return Err(DemodError::InvalidParameter("renewal inputs must be positive".into()));
    }
    let on = g_plus * a;
    Ok(RenewalStats {
        m: 1.0 / on + 1.0 / g_minus,
        var: 1.0 / (on * on) + 1.0 / (g_minus * g_minus),
        x_star: f64::from(receptors) * on / (on + g_minus),
    })
}

/// Number of activations (positive unit jumps) of `x_*` in `[0, t]`.
pub fn activation_count(x_star: &StepSignal, t: f64) -> u64 {
    x_star
        .jumps()
        .take_while(|&(s, _)| s <= t)
        .filter(|&(_, d)| d > 0.0)
        .map(|(_, d)| d as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::{receptor_network, time_varying_ssa, ExogenousSchedule};
    use crate::rng::RngSpec;
    use crate::signal::{SampledReference, SampledSeries};

    const G_PLUS: f64 = 0.02;
    const G_MINUS: f64 = 0.5;
    const M: u32 = 100;

    fn symbols() -> CMSymbolSet {
        CMSymbolSet::new(vec![11.0, 58.0], 1.0, 50.0).unwrap()
    }

    fn run(symbol: usize, seed: u64) -> Trajectory {
        let s = symbols();
        let net = receptor_network(G_PLUS, G_MINUS).unwrap();
        let sched = ExogenousSchedule::pulse(0, s.amplitude(symbol) as i64, 1, 50.0);
        time_varying_ssa(&net, &[0, i64::from(M), 0], &sched, 60.0, &RngSpec::new(seed, symbol as u64)).unwrap()
    }

    #[test]
    fn symbol_set_validation() {
        assert!(CMSymbolSet::new(vec![11.0], 1.0, 50.0).is_err());
        assert!(CMSymbolSet::new(vec![11.0, 0.5], 1.0, 50.0).is_err());
        assert!(CMSymbolSet::new(vec![11.0, 58.0], 0.5, 50.0).is_err());
        assert!(CMSymbolSet::with_priors(vec![11.0, 58.0], 1.0, 50.0, vec![0.3, 0.3]).is_err());
        let s = CMSymbolSet::with_priors(vec![11.0, 58.0], 1.0, 50.0, vec![1.0, 0.0]).unwrap();
        assert_eq!(s.log_prior(0), 0.0);
        assert_eq!(s.log_prior(1), f64::NEG_INFINITY);
    }

    #[test]
    fn no_events_gives_linear_decay() {
        let x = StepSignal::constant(0.0, 10.0);
        let r = StepSignal::constant(11.0, 10.0);
        let p = exact_filter(&x, &r, G_PLUS, M, 0.5f64.ln(), 0.5).unwrap();
        for (t, v) in p.times.iter().zip(&p.values) {
            let want = 0.5f64.ln() - G_PLUS * 100.0 * 11.0 * t;
            assert!((v - want).abs() < 1e-9);
        }
    }

    #[test]
    fn single_activation_adds_log_reference() {
        let x = StepSignal::from_breakpoints(&[(0.0, 0.0), (1.25, 1.0)], 2.0).unwrap();
        let r = StepSignal::constant(58.0, 2.0);
        let with = exact_filter(&x, &r, G_PLUS, M, 0.0, 0.25).unwrap();
        let flow = |t: f64| -G_PLUS * 58.0 * (100.0 * t - (t - 1.25).max(0.0));
        assert!((with.value_at(1.0) - flow(1.0)).abs() < 1e-9);
        assert!((with.value_at(1.25) - (flow(1.25) + 58f64.ln())).abs() < 1e-9);
        assert!((with.value_at(2.0) - (flow(2.0) + 58f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn deactivations_do_not_jump() {
        let x = StepSignal::from_breakpoints(&[(0.0, 2.0), (1.0, 1.0)], 2.0).unwrap();
        let r = StepSignal::constant(5.0, 2.0);
        let p = exact_filter(&x, &r, G_PLUS, 3, 0.0, 0.001).unwrap();
        let i = p.times.iter().position(|&t| (t - 1.0).abs() < 1e-12).unwrap();
        let step = p.values[i] - p.values[i - 1];
        // only the continuous term, rate 0.02 * (3 - 2) * 5
        assert!((step + 0.1 * 0.001).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_reference_at_activation_fails() {
        let x = StepSignal::from_breakpoints(&[(0.0, 0.0), (1.0, 1.0)], 2.0).unwrap();
        let r = StepSignal::constant(0.0, 2.0);
        assert!(matches!(
            exact_filter(&x, &r, G_PLUS, M, 0.0, 0.5),
            Err(DemodError::NonPositiveReference { .. })
        ));
    }

    #[test]
    fn missing_active_species() {
        let tr = Trajectory::from_parts(vec!["A".into()], vec![0], vec![], 1.0);
        assert_eq!(active_signal(&tr), Err(DemodError::MissingSpecies("Xs".into())));
    }

    /// Summation by parts: `int x lambda = sum_i delta_i int_{t_i}^T lambda`.
    fn oracle(tr: &Trajectory, lambda: &StepSignal, log_prior: f64, t: f64) -> f64 {
        let xs = tr.species_index("Xs").unwrap();
        let x0 = tr.initial()[xs] as f64;
        let mut jumps = 0.0;
        let mut x_lambda = x0 * lambda.integral(0.0, t);
        for e in tr.events().iter().filter(|e| e.species as usize == xs && e.time <= t) {
            if e.delta > 0 {
                jumps += e.delta as f64 * lambda.value(e.time).ln();
            }
            x_lambda += e.delta as f64 * lambda.integral(e.time, t);
        }
        log_prior + jumps - G_PLUS * (f64::from(M) * lambda.integral(0.0, t) - x_lambda)
    }

    #[test]
    fn exact_filter_matches_summation_oracle() {
        let s = symbols();
        for sym in 0..2 {
            let tr = run(sym, 7);
            let x = active_signal(&tr).unwrap();
            for k in 0..2 {
                let lambda = s.profile(k, tr.horizon());
                let p = exact_filter(&x, &lambda, G_PLUS, M, s.log_prior(k), 0.1).unwrap();
                for &t in &[5.0, 20.0, 45.0, 50.0, 55.0, 60.0] {
                    let want = oracle(&tr, &lambda, s.log_prior(k), t);
                    let got = p.value_at(t);
                    assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn sampled_reference_agrees_with_step_on_flat_signal() {
        let x = active_signal(&run(1, 3)).unwrap();
        let step = StepSignal::constant(58.0, 60.0);
        let sampled = SampledReference::new(SampledSeries::new(0.01, vec![58.0; 6001]));
        let a = exact_filter(&x, &step, G_PLUS, M, 0.0, 0.1).unwrap();
        let b = exact_filter(&x, &sampled, G_PLUS, M, 0.0, 0.1).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            assert!((u - v).abs() < 1e-8 * u.abs().max(1.0));
        }
    }

    #[test]
    fn intermediate_closed_form() {
        let x = StepSignal::constant(7.0, 10.0);
        let u = StepSignal::constant(11.0, 10.0);
        let p = intermediate_filter(&x, &u, &u, G_MINUS, 0.0, 1.0).unwrap();
        let want = G_MINUS * 7.0 * (11f64.ln() - 1.0) * 10.0;
        assert!((p.last() - want).abs() < 1e-9);
        // b = 1 tail factor is -1
        let one = StepSignal::constant(1.0, 10.0);
        let q = intermediate_filter(&x, &one, &one, G_MINUS, 0.0, 1.0).unwrap();
        assert!((q.last() + G_MINUS * 7.0 * 10.0).abs() < 1e-9);
    }

    #[test]
    fn intermediate_rejects_zero_input_with_active_receptors() {
        let x = StepSignal::constant(1.0, 1.0);
        let u = StepSignal::constant(0.0, 1.0);
        let r = StepSignal::constant(5.0, 1.0);
        assert!(matches!(
            intermediate_filter(&x, &u, &r, G_MINUS, 0.0, 0.5),
            Err(DemodError::ZeroInput(_))
        ));
        let idle = StepSignal::constant(0.0, 1.0);
        assert!(intermediate_filter(&idle, &u, &r, G_MINUS, 0.0, 0.5).is_ok());
    }

    #[test]
    fn positive_filter_examples() {
        let x = StepSignal::constant(10.0, 5.0);
        // u below the clamp boundary
        let low = StepSignal::constant(58.0 / 58f64.ln() - 0.1, 5.0);
        let p = positive_filter(&x, &low, 58.0, G_MINUS, 0.5).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        // mismatched symbol 0 into filter 1
        assert!((phi(11.0, 58.0) + 1.2123).abs() < 1e-4);
        let u11 = StepSignal::constant(11.0, 5.0);
        let q = positive_filter(&x, &u11, 58.0, G_MINUS, 0.5).unwrap();
        assert!(q.values.iter().all(|&v| v == 0.0));
        // matched slope
        let u58 = StepSignal::constant(58.0, 5.0);
        let r = positive_filter(&x, &u58, 58.0, G_MINUS, 0.5).unwrap();
        assert!((58f64.ln() - 1.0 - 3.0604).abs() < 1e-4);
        assert!((r.last() - G_MINUS * 10.0 * (58f64.ln() - 1.0) * 5.0).abs() < 1e-9);
    }

    #[test]
    fn positive_filter_is_monotone_on_ssa_paths() {
        let s = symbols();
        for sym in 0..2 {
            let tr = run(sym, 11);
            let x = active_signal(&tr).unwrap();
            let u = s.profile(sym, tr.horizon());
            for k in 0..2 {
                let p = positive_filter(&x, &u, s.amplitude(k), G_MINUS, 0.1).unwrap();
                assert!(p.values[0] == 0.0);
                assert!(p.values.windows(2).all(|w| w[1] >= w[0]));
            }
        }
    }

    #[test]
    fn phi_values_and_concavity() {
        assert!((phi(58.0, 11.0) - 2.2083).abs() < 1e-4);
        let grid: Vec<f64> = (0..200).map(|i| (0.01 * i as f64).exp()).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|x, y| phi(3.0, *x).total_cmp(&phi(3.0, *y)))
            .unwrap();
        assert!((best - 3.0).abs() < 0.04);
        for z in grid.windows(3) {
            let h = 1e-3 * z[1];
            let d2 = phi(3.0, z[1] + h) - 2.0 * phi(3.0, z[1]) + phi(3.0, z[1] - h);
            assert!(d2 <= 0.0);
        }
    }

    #[test]
    fn matched_filter_argmax_is_exact() {
        // constant input a, t < d: argmax of the intermediate filter equals argmax of phi
        let amps = [5.0, 11.0, 30.0, 58.0];
        let x = StepSignal::from_breakpoints(&[(0.0, 0.0), (0.3, 4.0), (2.0, 9.0)], 4.0).unwrap();
        for &a in &amps {
            let u = StepSignal::constant(a, 4.0);
            let scores: Vec<f64> = amps
                .iter()
                .map(|&z| intermediate_filter(&x, &u, &StepSignal::constant(z, 4.0), G_MINUS, 0.0, 1.0).unwrap().last())
                .collect();
            let by_filter = (0..amps.len()).max_by(|&i, &j| scores[i].total_cmp(&scores[j])).unwrap();
            let by_phi = (0..amps.len()).max_by(|&i, &j| phi(a, amps[i]).total_cmp(&phi(a, amps[j]))).unwrap();
            assert_eq!(by_filter, by_phi);
        }
    }

    #[test]
    fn renewal_values() {
        let r = renewal_stats(G_PLUS, G_MINUS, 58.0, M).unwrap();
        assert!((r.m - (1.0 / 1.16 + 2.0)).abs() < 1e-12);
        assert!((r.m - 2.8621).abs() < 1e-4);
        assert!((r.x_star - 69.8795).abs() < 1e-4);
        assert!((r.x_star * r.m * G_MINUS / 100.0 - 1.0).abs() < 1e-12);
        assert!(renewal_stats(0.0, G_MINUS, 58.0, M).is_err());
    }

    #[test]
    fn activation_counting() {
        assert_eq!(activation_count(&StepSignal::constant(0.0, 1.0), 1.0), 0);
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 0.1, (i % 2) as f64)).collect();
        let s = StepSignal::from_breakpoints(&pts, 5.0).unwrap();
        assert_eq!(activation_count(&s, 5.0), 10);
    }

    #[test]
    fn csv_export() {
        let p = FilterPath {
            times: vec![0.0, 0.5],
            values: vec![-0.5, 1.0],
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,value\n0,-0.5\n0.5,1\n");
    }
}
