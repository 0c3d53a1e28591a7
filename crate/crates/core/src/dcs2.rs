//! CM-inspired promoter model driven by a transcription-factor input.
//!
//! States, with `q(t)` the Msn2 input and `Hill` the fit for amplitude `a`:
//!
//! ```text
//! P'    = g+ q (1 - P) - g- P
//! C'    = g- P Hill(q) - d2 C
//! mRNA' = k3 C - d3 mRNA
//! YFP'  = k4 mRNA - (d4 + k5) YFP
//! mYFP' = k5 YFP - d4 mYFP
//! ```
//!
//! Time is in minutes. The free parameters are `g+, g-, a, d2, k3`; the Hill
//! coefficients follow from `a` and are never fitted directly.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hill::{fit_hill, hill_eval, refit_hill, HillError, HillFitConfig, HillParams};
use crate::signal::StepSignal;

/// Msn2 amplitudes for inhibitor levels 100 nM, 275 nM, 690 nM and 3 uM.
pub const MSN2_AMPLITUDES: [f64; 4] = [313.2, 744.5, 1107.8, 1410.1];

/// Inhibitor concentrations, nM, matching [`MSN2_AMPLITUDES`].
pub const INHIBITOR_LEVELS_NM: [f64; 4] = [100.0, 275.0, 690.0, 3000.0];

/// Sampling interval of the reporter time series, minutes.
pub const SAMPLE_INTERVAL: f64 = 2.5;

/// Samples per reporter time series.
pub const SAMPLES_PER_SERIES: usize = 64;

/// Fitting error of the reference eight-parameter model on the 30 profiles.
pub const REFERENCE_FITTING_ERROR: f64 = 4.9e7;

const STEP: f64 = 0.05;

#[derive(Debug, Error)]
pub enum Dcs2Error {
    #[error("parameter `{0}` must be positive and finite")]
    BadParameter(&'static str),
    #[error("integration unstable even at step {0} min")]
    Unstable(f64),
    #[error("time series `{label}`: {msg}")]
    BadSeries { label: String, msg: String },
    #[error("no dataset has a non-zero input, so the parameters are unidentifiable")]
    Unidentifiable,
    #[error("no datasets given")]
    NoData,
    #[error("input covers [0, {input}] but samples run to {needed}")]
    ShortInput { input: f64, needed: f64 },
    #[error(transparent)]
    Hill(#[from] HillError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Constants held fixed during fitting; none of them are free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedRates {
    pub d3: f64,
    pub k4: f64,
    pub d4: f64,
    pub k5: f64,
}

impl FixedRates {
    /// Illustrative values for the synthetic route; real-data fits must
    /// supply measured ones.
    pub const SYNTHETIC: Self = Self {
        d3: 0.1,
        k4: 5.0,
        d4: 0.001,
        k5: 0.05,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DCS2Params {
    pub g_plus: f64,
    pub g_minus: f64,
    pub a: f64,
    pub d2: f64,
    pub k3: f64,
    pub fixed: FixedRates,
}

impl DCS2Params {
    pub const FREE_NAMES: [&'static str; 5] = ["g_plus", "g_minus", "a", "d2", "k3"];

    /// Published optimum of the free parameters.
    pub fn reference(fixed: FixedRates) -> Self {
        Self {
            g_plus: 3.19e-4,
            g_minus: 0.15,
            a: 1400.0,
            d2: 0.40,
            k3: 0.23,
            fixed,
        }
    }

    pub fn free(&self) -> [f64; 5] {
        [self.g_plus, self.g_minus, self.a, self.d2, self.k3]
    }

    pub fn with_free(&self, v: [f64; 5]) -> Self {
        Self {
            g_plus: v[0],
            g_minus: v[1],
            a: v[2],
            d2: v[3],
            k3: v[4],
            fixed: self.fixed,
        }
    }

    pub fn validate(&self) -> Result<(), Dcs2Error> {
        let pos = |v: f64, n: &'static str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Dcs2Error::BadParameter(n))
            }
        };
        pos(self.g_plus, "g_plus")?;
        pos(self.g_minus, "g_minus")?;
        pos(self.a, "a")?;
        pos(self.d2, "d2")?;
        pos(self.k3, "k3")?;
        pos(self.fixed.d3, "d3")?;
        pos(self.fixed.k4, "k4")?;
        pos(self.fixed.k5, "k5")?;
        if !(self.fixed.d4 >= 0.0 && self.fixed.d4.is_finite()) {
            return Err(Dcs2Error::BadParameter("d4"));
        }
        Ok(())
    }

    pub fn hill(&self, config: &HillFitConfig) -> Result<HillParams, Dcs2Error> {
        Ok(fit_hill(self.a, config)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self, Dcs2Error> {
        let s = Self {
            label: label.into(),
            times,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), Dcs2Error> {
        let err = |msg: String| Dcs2Error::BadSeries {
            label: self.label.clone(),
            msg,
        };
        if self.times.is_empty() {
            return Err(err("no samples (row count 0)".into()));
        }
        if self.times.len() != self.values.len() {
            return Err(err("times and values differ in length".into()));
        }
        if let Some(i) = self.times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(err(format!("time {} at row {} does not increase", self.times[i + 1], i + 2)));
        }
        if self.times.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(err("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Whether consecutive sample gaps agree to `rel` of the first gap.
    pub fn is_uniform(&self, rel: f64) -> bool {
        let Some(first) = self.times.get(1).map(|t| t - self.times[0]) else {
            return true;
        };
        self.times.windows(2).all(|w| ((w[1] - w[0]) - first).abs() <= rel * first)
    }

    /// Zero-order hold of the samples from t = 0.
    pub fn to_step(&self, horizon: f64) -> StepSignal {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(self.len());
        pts.push((0.0, self.values[0]));
        for (&t, &v) in self.times.iter().zip(&self.values) {
            if t <= 0.0 {
                pts[0].1 = v;
            } else {
                pts.push((t, v));
            }
        }
        StepSignal::from_breakpoints(&pts, horizon.max(*self.times.last().expect("non-empty")))
            .expect("validated times increase")
    }
}

/// Reads a CSV whose first column is time and each further column a
/// profile. Non-uniform spacing is accepted with a warning.
pub fn ingest_timeseries(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>, Dcs2Error> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let label = path.display().to_string();
    if headers.len() < 2 {
        return Err(Dcs2Error::BadSeries {
            label,
            msg: format!("need a time column and at least one profile column, found {}", headers.len()),
        });
    }
    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len() - 1];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Dcs2Error::BadSeries {
                label,
                msg: format!("row {} has {} columns, expected {}", row + 2, rec.len(), headers.len()),
            });
        }
        let parse = |i: usize| {
            rec[i].parse::<f64>().map_err(|_| Dcs2Error::BadSeries {
                label: label.clone(),
                msg: format!("row {}, column `{}`: `{}` is not a number", row + 2, &headers[i], &rec[i]),
            })
        };
        times.push(parse(0)?);
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(parse(c + 1)?);
        }
    }
    if times.is_empty() {
        return Err(Dcs2Error::BadSeries {
            label,
            msg: "no samples (row count 0)".into(),
        });
    }
    let mut out = Vec::with_capacity(cols.len());
    for (c, values) in cols.into_iter().enumerate() {
        let s = TimeSeries::new(headers[c + 1].to_string(), times.clone(), values)?;
        if c == 0 && !s.is_uniform(1e-6) {
            log::warn!("{label}: sample spacing is not uniform; fitting uses the actual times");
        }
        out.push(s);
    }
    Ok(out)
}

/// Model states sampled at the requested times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcs2Trajectory {
    pub times: Vec<f64>,
    /// Rows of `[P_active, C_init, mRNA, YFP, mYFP]`.
    pub states: Vec<[f64; 5]>,
}

impl Dcs2Trajectory {
    pub fn myfp(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[4]).collect()
    }
}

fn rhs(p: &DCS2Params, q: f64, hill_q: f64, y: &[f64; 5]) -> [f64; 5] {
    let f = &p.fixed;
    [
        p.g_plus * q * (1.0 - y[0]) - p.g_minus * y[0],
        p.g_minus * y[0] * hill_q - p.d2 * y[1],
        p.k3 * y[1] - f.d3 * y[2],
        f.k4 * y[2] - (f.d4 + f.k5) * y[3],
        f.k5 * y[3] - f.d4 * y[4],
    ]
}

fn integrate(
    p: &DCS2Params,
    hill: &HillParams,
    input: &StepSignal,
    samples: &[f64],
    h_max: f64,
) -> Option<Dcs2Trajectory> {
    let mut nodes: Vec<f64> = input.times().to_vec();
    nodes.extend_from_slice(samples);
    let end = samples.last().copied().unwrap_or(0.0);
    nodes.retain(|&t| t > 0.0 && t <= end);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let mut y = [0.0; 5];
    let mut t = 0.0;
    let mut out = Vec::with_capacity(samples.len());
    let mut si = 0;
    while si < samples.len() && samples[si] <= 0.0 {
        out.push(y);
        si += 1;
    }
    let mut cursor = input.cursor();
    let mut scale: f64 = 1.0;
    for stop in nodes {
        let q = cursor.value(t);
        let hq = hill_eval(hill, q);
        let steps = ((stop - t) / h_max).ceil().max(1.0) as usize;
        let h = (stop - t) / steps as f64;
        for _ in 0..steps {
            let k1 = rhs(p, q, hq, &y);
            let k2 = rhs(p, q, hq, &std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]));
            let k3 = rhs(p, q, hq, &std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]));
            let k4 = rhs(p, q, hq, &std::array::from_fn(|i| y[i] + h * k3[i]));
            for i in 0..5 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        scale = y.iter().copied().fold(scale, f64::max);
        if y.iter().any(|&v| v < -1e-9 * scale || !v.is_finite()) || y[0] > 1.0 + 1e-9 {
            return None;
        }
        t = stop;
        while si < samples.len() && samples[si] == stop {
            out.push(y);
            si += 1;
        }
    }
    Some(Dcs2Trajectory {
        times: samples.to_vec(),
        states: out,
    })
}

/// Integrates the model from the zero state, reporting states at `samples`
/// (non-decreasing, non-negative minutes).
pub fn simulate_dcs2(
    params: &DCS2Params,
    hill: &HillParams,
    input: &StepSignal,
    samples: &[f64],
) -> Result<Dcs2Trajectory, Dcs2Error> {
    params.validate()?;
    if let Some(&last) = samples.last() {
        if last > input.horizon() + 1e-9 {
            return Err(Dcs2Error::ShortInput {
                input: input.horizon(),
                needed: last,
            });
        }
    }
    if input.min_value() < 0.0 {
        return Err(Dcs2Error::BadSeries {
            label: "input".into(),
            msg: "negative input".into(),
        });
    }
    let mut h = STEP;
    for _ in 0..6 {
        if let Some(tr) = integrate(params, hill, input, samples, h) {
            return Ok(tr);
        }
        h *= 0.5;
    }
    Err(Dcs2Error::Unstable(h))
}

/// One input profile and its measured reporter series.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input: StepSignal,
    pub measured: TimeSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcs2FitConfig {
    /// Starting points for the free parameters, in `FREE_NAMES` order.
    pub starts: Vec<[f64; 5]>,
    /// Objective evaluations per start.
    pub max_evals: usize,
    /// Relative spread of simplex values at which a start stops.
    pub tolerance: f64,
    pub hill: HillFitConfig,
}

impl Default for Dcs2FitConfig {
    fn default() -> Self {
        Self {
            starts: vec![[5e-4, 0.1, 1000.0, 0.3, 0.3], [2e-4, 0.25, 2000.0, 0.6, 0.15]],
            max_evals: 3000,
            tolerance: 1e-12,
            hill: HillFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcs2Fit {
    pub params: DCS2Params,
    pub hill: HillParams,
    /// Total sum of squared residuals.
    pub error: f64,
    pub per_dataset: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
}

struct Problem<'a> {
    data: &'a [Dataset],
    template: DCS2Params,
    hill_cfg: HillFitConfig,
    anchor: HillParams,
}

impl Problem<'_> {
    /// Per-dataset squared residuals; `None` for invalid parameters.
    fn residuals(&self, x: &[f64; 5]) -> Option<(Vec<f64>, HillParams)> {
        let p = self.template.with_free(std::array::from_fn(|i| x[i].exp()));
        let hill = refit_hill(p.a, &self.hill_cfg, &self.anchor).ok()?;
        let mut out = Vec::with_capacity(self.data.len());
        for d in self.data {
            let tr = simulate_dcs2(&p, &hill, &d.input, &d.measured.times).ok()?;
            out.push(
                tr.myfp()
                    .iter()
                    .zip(&d.measured.values)
                    .map(|(m, y)| (m - y) * (m - y))
                    .sum(),
            );
        }
        Some((out, hill))
    }

    fn value(&self, x: &[f64; 5]) -> f64 {
        self.residuals(x).map_or(f64::INFINITY, |(r, _)| r.iter().sum())
    }
}

/// Nelder-Mead in log-parameter space. Returns `(x, f, evals, converged)`.
fn nelder_mead(problem: &Problem<'_>, start: [f64; 5], max_evals: usize, tol: f64) -> ([f64; 5], f64, usize, bool) {
    const N: usize = 5;
    let mut simplex: Vec<[f64; N]> = vec![start];
    for i in 0..N {
        let mut v = start;
        v[i] += 0.25;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.par_iter().map(|x| problem.value(x)).collect();
    let mut evals = N + 1;
    loop {
        let mut order: Vec<usize> = (0..=N).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (best, worst) = (values[0], values[N]);
        let size = (1..=N)
            .map(|i| (0..N).map(|j| (simplex[i][j] - simplex[0][j]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= tol * best.abs().max(1e-300) && size < 1e-6 || size < 1e-10 {
            return (simplex[0], best, evals, true);
        }
        if evals >= max_evals {
            return (simplex[0], best, evals, false);
        }
        let centroid: [f64; N] = std::array::from_fn(|j| (0..N).map(|i| simplex[i][j]).sum::<f64>() / N as f64);
        let along = |c: f64| -> [f64; N] { std::array::from_fn(|j| centroid[j] + c * (simplex[N][j] - centroid[j])) };
        let xr = along(-1.0);
        let fr = problem.value(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = problem.value(&xe);
            evals += 1;
            if fe < fr {
                simplex[N] = xe;
                values[N] = fe;
            } else {
                simplex[N] = xr;
                values[N] = fr;
            }
        } else if fr < values[N - 1] {
            simplex[N] = xr;
            values[N] = fr;
        } else {
            let xc = if fr < values[N] { along(-0.5) } else { along(0.5) };
            let fc = problem.value(&xc);
            evals += 1;
            if fc < values[N].min(fr) {
                simplex[N] = xc;
                values[N] = fc;
            } else {
                let x0 = simplex[0];
                let shrunk: Vec<[f64; N]> = simplex[1..]
                    .iter()
                    .map(|x| std::array::from_fn(|j| x0[j] + 0.5 * (x[j] - x0[j])))
                    .collect();
                let fs: Vec<f64> = shrunk.par_iter().map(|x| problem.value(x)).collect();
                evals += N;
                for (i, (x, f)) in shrunk.into_iter().zip(fs).enumerate() {
                    simplex[i + 1] = x;
                    values[i + 1] = f;
                }
            }
        }
    }
}

/// Least-squares fit of the five free parameters to measured reporter
/// series across all datasets.
pub fn fit_dcs2(data: &[Dataset], fixed: FixedRates, config: &Dcs2FitConfig) -> Result<Dcs2Fit, Dcs2Error> {
    if data.is_empty() {
        return Err(Dcs2Error::NoData);
    }
    for d in data {
        d.measured.validate()?;
        if let Some(&last) = d.measured.times.last() {
            if last > d.input.horizon() + 1e-9 {
                return Err(Dcs2Error::ShortInput {
                    input: d.input.horizon(),
                    needed: last,
                });
            }
        }
    }
    if data.iter().all(|d| d.input.max_value() <= 0.0) {
        return Err(Dcs2Error::Unidentifiable);
    }
    if config.starts.is_empty() {
        return Err(Dcs2Error::BadParameter("starts"));
    }
    let template = DCS2Params::reference(fixed);
    let mut best: Option<([f64; 5], f64)> = None;
    let mut evaluations = 0;
    let mut converged = true;
    for start in &config.starts {
        let p0 = template.with_free(*start);
        p0.validate()?;
        let problem = Problem {
            data,
            template,
            hill_cfg: config.hill,
            anchor: fit_hill(start[2], &config.hill)?,
        };
        let mut x: [f64; 5] = std::array::from_fn(|i| start[i].ln());
        let mut f = f64::INFINITY;
        // restart from the incumbent until a restart stops improving
        for _ in 0..8 {
            let (nx, nf, ev, ok) = nelder_mead(&problem, x, config.max_evals, config.tolerance);
            evaluations += ev;
            let improved = nf < f * (1.0 - 1e-9);
            if nf < f {
                x = nx;
                f = nf;
            }
            if !ok {
                converged = false;
                break;
            }
            if !improved {
                break;
            }
        }
        if best.is_none_or(|(_, bf)| f < bf) {
            best = Some((x, f));
        }
    }
    let (x, _) = best.expect("at least one start");
    let params = template.with_free(std::array::from_fn(|i| x[i].exp()));
    let hill = params.hill(&config.hill)?;
    let mut per_dataset = Vec::with_capacity(data.len());
    for d in data {
        let tr = simulate_dcs2(&params, &hill, &d.input, &d.measured.times)?;
        per_dataset.push(
            tr.myfp()
                .iter()
                .zip(&d.measured.values)
                .map(|(m, y)| (m - y) * (m - y))
                .sum(),
        );
    }
    if !converged {
        log::warn!("DCS2 fit stopped at the evaluation budget");
    }
    Ok(Dcs2Fit {
        params,
        hill,
        error: per_dataset.iter().sum(),
        per_dataset,
        evaluations,
        converged,
    })
}

/// Train of `count` pulses of height `amplitude`, each `on` minutes long and
/// separated by `gap` minutes, starting at `start`.
pub fn pulse_train(amplitude: f64, count: usize, on: f64, gap: f64, start: f64, horizon: f64) -> StepSignal {
    let mut pts = vec![(0.0, 0.0)];
    for i in 0..count {
        let t0 = start + i as f64 * (on + gap);
        if t0 == 0.0 {
            pts[0].1 = amplitude;
        } else {
            pts.push((t0, amplitude));
        }
        pts.push((t0 + on, 0.0));
    }
    StepSignal::from_breakpoints(&pts, horizon).expect("pulses are ordered")
}

/// Six input profiles for self-consistency fits: four single pulses, one
/// per Msn2 amplitude, and two trains of four 5-minute pulses.
pub fn synthetic_profiles() -> Vec<(String, StepSignal)> {
    let h = 160.0;
    let single = [(313.2, 20.0), (744.5, 40.0), (1107.8, 10.0), (1410.1, 50.0)];
    let mut out: Vec<(String, StepSignal)> = single
        .iter()
        .map(|&(a, d)| (format!("pulse_{a}_{d}min"), pulse_train(a, 1, d, 0.0, 5.0, h)))
        .collect();
    for gap in [5.0, 15.0] {
        out.push((format!("train_1107.8_gap{gap}min"), pulse_train(1107.8, 4, 5.0, gap, 5.0, h)));
    }
    out
}

/// Noise-free reporter series generated from `params` on the standard
/// sample grid.
pub fn synthetic_datasets(params: &DCS2Params, hill: &HillFitConfig) -> Result<Vec<Dataset>, Dcs2Error> {
    let hp = params.hill(hill)?;
    let times = standard_sample_times();
    synthetic_profiles()
        .into_iter()
        .map(|(label, input)| {
            let tr = simulate_dcs2(params, &hp, &input, &times)?;
            Ok(Dataset {
                measured: TimeSeries::new(label, times.clone(), tr.myfp())?,
                input,
            })
        })
        .collect()
}

/// Sample times `0, 2.5, ..., 157.5` min.
pub fn standard_sample_times() -> Vec<f64> {
    (0..SAMPLES_PER_SERIES).map(|i| i as f64 * SAMPLE_INTERVAL).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportionality {
    pub durations: Vec<f64>,
    pub max_myfp: Vec<f64>,
    /// Least-squares slope through the origin.
    pub slope: f64,
    /// `||y - slope x|| / ||y||`.
    pub relative_residual: f64,
}

/// Maximum reporter level against total ON time for single pulses of the
/// given durations, with reporter decay switched off.
pub fn max_myfp_proportionality(
    params: &DCS2Params,
    hill: &HillParams,
    amplitude: f64,
    durations: &[f64],
    settle: f64,
) -> Result<Proportionality, Dcs2Error> {
    let mut p = *params;
    p.fixed.d4 = 0.0;
    let mut max_myfp = Vec::with_capacity(durations.len());
    for &d in durations {
        let horizon = d + settle;
        let input = if d > 0.0 {
            StepSignal::pulse(amplitude, 0.0, d, horizon)
        } else {
            StepSignal::constant(0.0, horizon)
        };
        let tr = simulate_dcs2(&p, hill, &input, &[horizon])?;
        max_myfp.push(tr.states[0][4]);
    }
    Ok(through_origin(durations, max_myfp))
}

/// Line through the origin with its relative residual.
pub fn through_origin(x: &[f64], y: Vec<f64>) -> Proportionality {
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    Proportionality {
        durations: x.to_vec(),
        relative_residual: if syy > 0.0 { (rss / syy).sqrt() } else { 0.0 },
        slope,
        max_myfp: y,
    }
}

/// Closed-form limit of the reporter with `d4 = 0`:
/// `k4 k3 g- / (d3 d2) * integral of P Hill(q)`, the integral taken from a
/// simulated `P` on a fine grid over `[0, horizon]`.
pub fn predicted_max_myfp(params: &DCS2Params, hill: &HillParams, input: &StepSignal, horizon: f64) -> Result<f64, Dcs2Error> {
    let n = (horizon / 0.01).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
    let tr = simulate_dcs2(params, hill, input, &times)?;
    let f: Vec<f64> = times
        .iter()
        .zip(&tr.states)
        .map(|(&t, s)| s[0] * hill_eval(hill, input.value(t)))
        .collect();
    let dt = horizon / n as f64;
    let integral: f64 = f.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
    let fx = &params.fixed;
    Ok(fx.k4 * params.k3 * params.g_minus / (fx.d3 * params.d2) * integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn params() -> DCS2Params {
        DCS2Params::reference(FixedRates::SYNTHETIC)
    }

    fn fast(p: DCS2Params) -> DCS2Params {
        DCS2Params {
            g_plus: p.g_plus * 10.0,
            g_minus: p.g_minus * 10.0,
            ..p
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let p = params();
        let hill = p.hill(&HillFitConfig::default()).unwrap();
        let tr = simulate_dcs2(&p, &hill, &StepSignal::constant(0.0, 100.0), &standard_sample_times()[..40]).unwrap();
        assert!(tr.states.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn constant_input_equilibrium() {
        let p = params();
        let hill = p.hill(&HillFitConfig::default()).unwrap();
        let c = 744.5;
        let tr = simulate_dcs2(&p, &hill, &StepSignal::constant(c, 200.0), &[200.0]).unwrap();
        let want = p.g_plus * c / (p.g_plus * c + p.g_minus);
        assert!((tr.states[0][0] - want).abs() < 1e-9);
    }

    #[test]
    fn bounds_and_monotone_reporter() {
        let mut p = params();
        p.fixed.d4 = 0.0;
        let hill = p.hill(&HillFitConfig::default()).unwrap();
        let input = pulse_train(1410.1, 6, 5.0, 5.0, 10.0, 160.0);
        let times: Vec<f64> = (0..=1600).map(|i| i as f64 * 0.1).collect();
        let tr = simulate_dcs2(&p, &hill, &input, &times).unwrap();
        for w in tr.states.windows(2) {
            assert!((0.0..=1.0).contains(&w[1][0]));
            assert!(w[1].iter().all(|&v| v >= 0.0));
            assert!(w[1][4] >= w[0][4]);
        }
    }

    #[test]
    fn reporter_limit_matches_integral_identity() {
        let mut p = params();
        p.fixed.d4 = 0.0;
        let hill = p.hill(&HillFitConfig::default()).unwrap();
        let input = StepSignal::pulse(1107.8, 0.0, 30.0, 600.0);
        let sim = simulate_dcs2(&p, &hill, &input, &[600.0]).unwrap().states[0][4];
        let pred = predicted_max_myfp(&p, &hill, &input, 600.0).unwrap();
        assert!((sim - pred).abs() < 0.02 * pred, "{sim} vs {pred}");
    }

    #[test]
    fn proportionality_examples() {
        let p = params();
        let hill = p.hill(&HillFitConfig::default()).unwrap();
        let zero = max_myfp_proportionality(&p, &hill, 1107.8, &[0.0], 500.0).unwrap();
        assert_eq!(zero.max_myfp, vec![0.0]);

        let f = fast(p);
        let r = max_myfp_proportionality(&f, &hill, 1107.8, &[20.0, 40.0], 500.0).unwrap();
        let ratio = r.max_myfp[1] / r.max_myfp[0];
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");

        let mut fz = f;
        fz.fixed.d4 = 0.0;
        let single = StepSignal::pulse(1107.8, 0.0, 20.0, 600.0);
        let train = pulse_train(1107.8, 4, 5.0, 5.0, 0.0, 600.0);
        let a = simulate_dcs2(&fz, &hill, &single, &[600.0]).unwrap().states[0][4];
        let b = simulate_dcs2(&fz, &hill, &train, &[600.0]).unwrap().states[0][4];
        assert!((a - b).abs() < 0.1 * a, "{a} vs {b}");
    }

    #[test]
    fn series_validation() {
        assert!(TimeSeries::new("x", vec![], vec![]).is_err());
        assert!(TimeSeries::new("x", vec![0.0, 2.0, 1.0], vec![0.0; 3]).is_err());
        let s = TimeSeries::new("x", vec![0.0, 2.5, 6.0], vec![0.0; 3]).unwrap();
        assert!(!s.is_uniform(1e-6));
    }

    #[test]
    fn ingest_well_formed_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        let mut f = std::fs::File::create(&good).unwrap();
        writeln!(f, "time,p1,p2").unwrap();
        for i in 0..64 {
            writeln!(f, "{},{},{}", i as f64 * 2.5, i, 2 * i).unwrap();
        }
        drop(f);
        let series = ingest_timeseries(&good).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[1].label, "p2");
        assert_eq!(series[0].len(), 64);

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "time,p1\n").unwrap();
        let err = ingest_timeseries(&empty).unwrap_err().to_string();
        assert!(err.contains("row count 0"), "{err}");

        let back = dir.path().join("back.csv");
        std::fs::write(&back, "time,p1\n0,1\n5,2\n2.5,3\n").unwrap();
        assert!(ingest_timeseries(&back).is_err());
        let narrow = dir.path().join("narrow.csv");
        std::fs::write(&narrow, "time\n0\n").unwrap();
        assert!(ingest_timeseries(&narrow).is_err());
    }

    #[test]
    fn zero_input_dataset_is_unidentifiable() {
        let m = TimeSeries::new("z", standard_sample_times(), vec![0.0; 64]).unwrap();
        let d = Dataset {
            input: StepSignal::constant(0.0, 160.0),
            measured: m,
        };
        assert!(matches!(
            fit_dcs2(&[d], FixedRates::SYNTHETIC, &Dcs2FitConfig::default()),
            Err(Dcs2Error::Unidentifiable)
        ));
    }
}
