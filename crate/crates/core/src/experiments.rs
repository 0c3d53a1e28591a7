//! End-to-end Monte Carlo experiments: channel, receptors, filters,
//! molecular circuit and decisions, plus the outputs they leave on disk.
//!
//! Run `r` of symbol `k` draws all of its randomness from
//! `RngSpec::new(master_seed, k * runs + r)`, so results do not depend on
//! scheduling. Runs fan out over rayon; files are written afterwards by a
//! single collector.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    annihilate, annihilation_ode, counterexample_scenarios, decide, deterministic_annihilation, simulate_y,
    AnnihilationConfig, CountingPath,
};
use crate::config::{CircuitInput, ConfigError, ExperimentConfig, Method, ReferenceKind, Scenario};
use crate::dcs2::{
    fit_dcs2, ingest_timeseries, simulate_dcs2, synthetic_datasets, DCS2Params, Dataset, Dcs2Fit, Dcs2FitConfig,
    FixedRates, REFERENCE_FITTING_ERROR,
};
use crate::crn::{receptor_network, ExogenousSchedule, ReactionNetwork, Simulation};
use crate::demod::{
    active_signal, exact_filter, intermediate_filter, positive_filter, CMSymbolSet, FilterPath,
};
use crate::hill::{fit_hill, HillParams};
use crate::rdme::{build_rdme, mean_trajectory, steady_state_mean, RdmeModel};
use crate::rng::RngSpec;
use crate::signal::{Reference, SampledReference, StepSignal};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("symbol {symbol}, run {run}: {msg}")]
    Run { symbol: usize, run: usize, msg: String },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Compare(String),
}

impl ExperimentError {
    /// Exit-code class: configuration problems versus simulation failures.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Setup(_))
    }
}

/// Error counts of one method at one decision time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub time: f64,
    /// Errors per transmitted symbol.
    pub errors: Vec<usize>,
    pub runs: usize,
    /// Prior-weighted error probability.
    pub ber: f64,
    /// Chosen threshold, one-sample method only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BERResult {
    pub method: Method,
    pub points: Vec<BerPoint>,
}

impl BERResult {
    pub fn at(&self, t: f64) -> Option<&BerPoint> {
        self.points.iter().find(|p| (p.time - t).abs() < 1e-9)
    }
}

/// Everything kept from one simulated run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub symbol: usize,
    pub run: usize,
    /// Active receptor count x_*(t).
    pub active: StepSignal,
    /// x_* at every decision time.
    pub active_at: Vec<u32>,
    /// History filters per hypothesis: L_k co-located, Z_k with diffusion.
    pub history: Vec<FilterPath>,
    /// Intermediate approximations (co-located only).
    pub intermediate: Vec<FilterPath>,
    /// Positive-part filters (co-located only).
    pub positive: Vec<FilterPath>,
    /// Production paths y_k.
    pub production: Vec<CountingPath>,
    /// Per method, the decision at every decision time.
    pub decisions: Vec<(Method, Vec<usize>)>,
    /// Full receptor trajectory, kept for the exported runs only.
    pub trajectory: Option<Trajectory>,
    /// Annihilation output, kept for the exported runs only.
    pub annihilation: Option<Trajectory>,
}

/// Result of [`run_ber_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub symbols: CMSymbolSet,
    pub hill: Vec<HillParams>,
    pub decision_times: Vec<f64>,
    /// `runs[k][r]`.
    pub runs: Vec<Vec<RunRecord>>,
    pub ber: Vec<BERResult>,
}

enum Channel {
    Colocated {
        network: ReactionNetwork,
        receptors: u32,
    },
    Diffusion(Box<RdmeModel>),
}

struct Context {
    config: ExperimentConfig,
    symbols: CMSymbolSet,
    channel: Channel,
    references: Vec<Box<dyn Reference + Send + Sync>>,
    hill: Vec<HillParams>,
    times: Vec<f64>,
    g_plus: f64,
    g_minus: f64,
    receptors: u32,
}

fn setup(config: &ExperimentConfig) -> Result<Context, ExperimentError> {
    config.validate()?;
    let horizon = config.horizon();
    let setup_err = |e: &dyn std::fmt::Display| ExperimentError::Setup(e.to_string());
    let rec = config
        .receptors
        .ok_or_else(|| ExperimentError::Setup("missing receptors".into()))?;
    let (symbols, channel) = match config.scenario {
        Scenario::Colocated => {
            let amps = config.symbols.amplitudes.clone().expect("validated");
            let d = config.symbols.duration.expect("validated");
            let k = amps.len();
            let priors = config.symbols.priors.clone().unwrap_or(vec![1.0 / k as f64; k]);
            let symbols = CMSymbolSet::with_priors(amps, config.symbols.off_level, d, priors)
                .map_err(|e| setup_err(&e))?;
            let network = receptor_network(rec.g_plus, rec.g_minus).map_err(|e| setup_err(&e))?;
            (
                symbols,
                Channel::Colocated {
                    network,
                    receptors: rec.count,
                },
            )
        }
        Scenario::Diffusion => {
            let grid = config.grid.clone().expect("validated");
            let emission = config.emission.clone().expect("validated");
            let model = build_rdme(&grid, &emission, &rec).map_err(|e| setup_err(&e))?;
            let amps = emission
                .rates
                .iter()
                .map(|&r| steady_state_mean(&grid, r))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| setup_err(&e))?;
            let basal = steady_state_mean(&grid, emission.basal_rate).map_err(|e| setup_err(&e))?;
            let off = basal.max(config.reference.floor);
            let k = amps.len();
            let priors = config.symbols.priors.clone().unwrap_or(vec![1.0 / k as f64; k]);
            let symbols = CMSymbolSet::with_priors(amps, off, emission.on_duration, priors)
                .map_err(|e| setup_err(&e))?;
            (symbols, Channel::Diffusion(Box::new(model)))
        }
        Scenario::Dcs2 => {
            return Err(ExperimentError::Setup(
                "the dcs2 scenario has no BER experiment; use fit-dcs2".into(),
            ))
        }
    };
    let mut references: Vec<Box<dyn Reference + Send + Sync>> = Vec::new();
    for k in 0..symbols.len() {
        match (&channel, config.reference.kind) {
            (Channel::Diffusion(m), ReferenceKind::MeanField) => {
                let s = mean_trajectory(&m.grid, &m.emission, k, horizon, config.reference.dt)
                    .map_err(|e| setup_err(&e))?;
                references.push(Box::new(SampledReference::new(s)));
            }
            _ => references.push(Box::new(symbols.profile(k, horizon))),
        }
    }
    let hill = symbols
        .amplitudes()
        .iter()
        .map(|&a| fit_hill(a, &config.hill))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| setup_err(&e))?;
    Ok(Context {
        times: config.decision_times(),
        config: config.clone(),
        symbols,
        channel,
        references,
        hill,
        g_plus: rec.g_plus,
        g_minus: rec.g_minus,
        receptors: rec.count,
    })
}

/// Channel-plus-receptor trajectory of one run.
fn simulate_channel(ctx: &Context, symbol: usize, spec: &RngSpec) -> Result<(Trajectory, StepSignal), String> {
    let horizon = ctx.config.horizon();
    match &ctx.channel {
        Channel::Colocated { network, receptors } => {
            let s = &ctx.symbols;
            let on = s.amplitude(symbol).round() as i64;
            let off = s.off_level().round() as i64;
            let sched = ExogenousSchedule::pulse(0, on, off, s.duration());
            let tr = Simulation::new(network)
                .schedule(sched)
                .run(&[0, i64::from(*receptors), 0], horizon, spec)
                .map_err(|e| e.to_string())?;
            let u = tr.signal(0);
            Ok((tr, u))
        }
        Channel::Diffusion(model) => {
            let l = &model.layout;
            let sched = model.schedule(symbol).map_err(|e| e.to_string())?;
            let tr = Simulation::new(&model.network)
                .record(&[l.receiver, l.inactive, l.active])
                .schedule(sched)
                .run(&model.initial_state(), horizon, spec)
                .map_err(|e| e.to_string())?;
            let n_r = tr.signal(0);
            Ok((tr, n_r))
        }
    }
}

type FilterSet = (Vec<FilterPath>, Vec<FilterPath>, Vec<FilterPath>);

/// History filters for every hypothesis, plus the intermediate and
/// positive-part filters when the receptors sit at the transmitter.
fn apply_filters(ctx: &Context, active: &StepSignal, n_r: &StepSignal) -> Result<FilterSet, String> {
    let k = ctx.symbols.len();
    let dt = ctx.config.sample_dt;
    let mut history = Vec::with_capacity(k);
    for j in 0..k {
        history.push(
            exact_filter(active, ctx.references[j].as_ref(), ctx.g_plus, ctx.receptors, ctx.symbols.log_prior(j), dt)
                .map_err(|e| e.to_string())?,
        );
    }
    let (mut intermediate, mut positive) = (Vec::new(), Vec::new());
    if matches!(ctx.channel, Channel::Colocated { .. }) {
        for j in 0..k {
            let lambda = ctx.symbols.profile(j, ctx.config.horizon());
            intermediate.push(
                intermediate_filter(active, n_r, &lambda, ctx.g_minus, ctx.symbols.log_prior(j), dt)
                    .map_err(|e| e.to_string())?,
            );
            positive.push(
                positive_filter(active, n_r, ctx.symbols.amplitude(j), ctx.g_minus, dt).map_err(|e| e.to_string())?,
            );
        }
    }
    Ok((history, intermediate, positive))
}

fn run_one(ctx: &Context, symbol: usize, run: usize) -> Result<RunRecord, String> {
    let cfg = &ctx.config;
    let base = RngSpec::new(cfg.master_seed, (symbol * cfg.runs + run) as u64);
    let (tr, n_r) = simulate_channel(ctx, symbol, &base.child(0))?;
    let active = active_signal(&tr).map_err(|e| e.to_string())?;
    let k = ctx.symbols.len();
    let horizon = cfg.horizon();
    let (history, intermediate, positive) = apply_filters(ctx, &active, &n_r)?;

    let mut decisions = Vec::new();
    let mut production = Vec::new();
    let mut annihilation = None;
    for &method in &cfg.methods {
        match method {
            Method::HistoryFilter => {
                let d = ctx
                    .times
                    .iter()
                    .map(|&t| argmax(history.iter().map(|p| p.value_at(t))))
                    .collect();
                decisions.push((method, d));
            }
            Method::MolecularCircuit => {
                let input = match cfg.circuit.input {
                    CircuitInput::ReceiverCount => n_r.clone(),
                    CircuitInput::Clamped => ctx.symbols.profile(symbol, horizon),
                };
                production = (0..k)
                    .map(|j| {
                        let mut rng = base.child(1 + j as u64).rng();
                        simulate_y(&active, &input, &ctx.hill[j], ctx.g_minus, ctx.receptors, &mut rng)
                    })
                    .collect();
                let mut rng = base.child(100).rng();
                let ann = annihilate(
                    &production,
                    &AnnihilationConfig {
                        k_a: cfg.circuit.k_a,
                        species: k,
                    },
                    &mut rng,
                )
                .map_err(|e| e.to_string())?;
                decisions.push((method, decisions_from_counts(&ann, &ctx.times)));
                annihilation = Some(ann);
            }
            Method::OneSample => {}
        }
    }
    let active_at = {
        let mut c = active.cursor();
        ctx.times.iter().map(|&t| c.value(t) as u32).collect()
    };
    let keep = run < cfg.saved_runs;
    Ok(RunRecord {
        symbol,
        run,
        active,
        active_at,
        history,
        intermediate,
        positive,
        production,
        decisions,
        trajectory: keep.then_some(tr),
        annihilation: if keep { annihilation } else { None },
    })
}

fn decisions_from_counts(tr: &Trajectory, times: &[f64]) -> Vec<usize> {
    let mut state = tr.initial().to_vec();
    let ev = tr.events();
    let mut i = 0;
    times
        .iter()
        .map(|&t| {
            while i < ev.len() && ev[i].time <= t {
                state[ev[i].species as usize] += ev[i].delta;
                i += 1;
            }
            decide(&state)
        })
        .collect()
}

/// Index of the largest value; ties and NaN go to the lowest index.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn tally(method: Method, runs: &[Vec<RunRecord>], times: &[f64], priors: &[f64]) -> BERResult {
    let points = times
        .iter()
        .enumerate()
        .map(|(ti, &time)| {
            let errors: Vec<usize> = runs
                .iter()
                .enumerate()
                .map(|(k, rs)| {
                    rs.iter()
                        .filter(|r| {
                            r.decisions
                                .iter()
                                .find(|(m, _)| *m == method)
                                .is_some_and(|(_, d)| d[ti] != k)
                        })
                        .count()
                })
                .collect();
            let n = runs[0].len();
            BerPoint {
                time,
                ber: weighted_ber(&errors, n, priors),
                errors,
                runs: n,
                threshold: None,
            }
        })
        .collect();
    BERResult { method, points }
}

fn weighted_ber(errors: &[usize], runs: usize, priors: &[f64]) -> f64 {
    errors
        .iter()
        .zip(priors)
        .map(|(&e, &p)| p * e as f64 / runs as f64)
        .sum()
}

/// Simulates every symbol and run, applies the configured methods and
/// tallies bit-error rates at each decision time.
pub fn run_ber_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    let ctx = setup(config)?;
    let k = ctx.symbols.len();
    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|s| (0..config.runs).map(move |r| (s, r))).collect();
    let results: Vec<Result<RunRecord, ExperimentError>> = jobs
        .par_iter()
        .map(|&(symbol, run)| run_one(&ctx, symbol, run).map_err(|msg| ExperimentError::Run { symbol, run, msg }))
        .collect();
    let mut runs: Vec<Vec<RunRecord>> = (0..k).map(|_| Vec::with_capacity(config.runs)).collect();
    for r in results {
        let r = r?;
        runs[r.symbol].push(r);
    }
    let priors = ctx.symbols.priors().to_vec();
    let mut ber = Vec::new();
    for &m in &config.methods {
        match m {
            Method::OneSample => {
                if k == 2 {
                    ber.push(one_sample_result(&runs, &ctx.times, ctx.receptors, &priors));
                } else {
                    log::warn!("the one-sample baseline needs exactly two symbols; skipped");
                }
            }
            _ => ber.push(tally(m, &runs, &ctx.times, &priors)),
        }
    }
    Ok(ExperimentOutput {
        config: config.clone(),
        symbols: ctx.symbols,
        hill: ctx.hill,
        decision_times: ctx.times,
        runs,
        ber,
    })
}

/// One channel realisation (`symbol`, `run`) with the same random stream
/// the BER experiment would use. Species 0 of the result is the receiver
/// count `n_R`.
pub fn simulate_single(config: &ExperimentConfig, symbol: usize, run: usize) -> Result<Trajectory, ExperimentError> {
    let ctx = setup(config)?;
    if symbol >= ctx.symbols.len() {
        return Err(ExperimentError::Setup(format!(
            "symbol {symbol} out of range for {} symbols",
            ctx.symbols.len()
        )));
    }
    let base = RngSpec::new(config.master_seed, (symbol * config.runs + run) as u64);
    simulate_channel(&ctx, symbol, &base.child(0))
        .map(|(tr, _)| tr)
        .map_err(|msg| ExperimentError::Run { symbol, run, msg })
}

/// Filter outputs over a recorded receptor trajectory.
#[derive(Debug, Clone)]
pub struct Demodulation {
    pub history: Vec<FilterPath>,
    pub intermediate: Vec<FilterPath>,
    pub positive: Vec<FilterPath>,
    pub decision_times: Vec<f64>,
    /// History-filter argmax at each decision time.
    pub decisions: Vec<usize>,
}

/// Applies the configured filters to a trajectory whose species 0 is the
/// receiver count and which contains the active-receptor species `Xs`.
pub fn demodulate(config: &ExperimentConfig, tr: &Trajectory) -> Result<Demodulation, ExperimentError> {
    let ctx = setup(config)?;
    let run_err = |msg: String| ExperimentError::Run { symbol: 0, run: 0, msg };
    if tr.horizon() + 1e-9 < config.horizon() {
        return Err(run_err(format!(
            "trajectory ends at {} before the configured horizon {}",
            tr.horizon(),
            config.horizon()
        )));
    }
    let active = active_signal(tr).map_err(|e| run_err(e.to_string()))?;
    let (history, intermediate, positive) = apply_filters(&ctx, &active, &tr.signal(0)).map_err(run_err)?;
    let decisions = ctx
        .times
        .iter()
        .map(|&t| argmax(history.iter().map(|p| p.value_at(t))))
        .collect();
    Ok(Demodulation {
        history,
        intermediate,
        positive,
        decision_times: ctx.times,
        decisions,
    })
}

/// Best threshold rule "decide 1 iff x_*(t) >= theta" over theta = 0..=M.
/// Ties select the smallest threshold. Returns `(theta, BER)`.
pub fn one_sample_baseline(samples0: &[u32], samples1: &[u32], receptors: u32, priors: [f64; 2]) -> (u32, f64) {
    let mut best = (0, f64::INFINITY);
    for theta in 0..=receptors {
        let e0 = samples0.iter().filter(|&&x| x >= theta).count() as f64 / samples0.len().max(1) as f64;
        let e1 = samples1.iter().filter(|&&x| x < theta).count() as f64 / samples1.len().max(1) as f64;
        let ber = priors[0] * e0 + priors[1] * e1;
        if ber < best.1 - 1e-15 {
            best = (theta, ber);
        }
    }
    best
}

fn one_sample_result(runs: &[Vec<RunRecord>], times: &[f64], receptors: u32, priors: &[f64]) -> BERResult {
    let points = times
        .iter()
        .enumerate()
        .map(|(ti, &time)| {
            let s0: Vec<u32> = runs[0].iter().map(|r| r.active_at[ti]).collect();
            let s1: Vec<u32> = runs[1].iter().map(|r| r.active_at[ti]).collect();
            let (theta, ber) = one_sample_baseline(&s0, &s1, receptors, [priors[0], priors[1]]);
            BerPoint {
                time,
                errors: vec![
                    s0.iter().filter(|&&x| x >= theta).count(),
                    s1.iter().filter(|&&x| x < theta).count(),
                ],
                runs: s0.len(),
                ber,
                threshold: Some(theta),
            }
        })
        .collect();
    BERResult {
        method: Method::OneSample,
        points,
    }
}

/// Pointwise RMS over runs of `a[i] - b[i]` on a uniform grid of step `dt`.
/// Paths of unequal length are truncated to the shortest one.
pub fn rms_compare(a: &[FilterPath], b: &[FilterPath], dt: f64) -> Result<FilterPath, ExperimentError> {
    if a.len() != b.len() {
        return Err(ExperimentError::Compare(format!("{} paths against {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(ExperimentError::Compare("at least two paired runs are required".into()));
    }
    if !(dt > 0.0) {
        return Err(ExperimentError::Compare("sample step must be positive".into()));
    }
    let ends: Vec<f64> = a.iter().chain(b).map(|p| *p.times.last().expect("non-empty")).collect();
    let common = ends.iter().copied().fold(f64::INFINITY, f64::min);
    if ends.iter().any(|&e| (e - common).abs() > 1e-9) {
        log::warn!("path horizons differ; truncating to the common horizon {common}");
    }
    let times = crate::signal::uniform_grid(dt, common);
    let values = times
        .iter()
        .map(|&t| {
            let ss: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x.value_at(t) - y.value_at(t);
                    if d.is_nan() {
                        // equal infinite sentinels
                        0.0
                    } else {
                        d * d
                    }
                })
                .sum();
            (ss / a.len() as f64).sqrt()
        })
        .collect();
    Ok(FilterPath { times, values })
}

#[derive(Debug, Serialize)]
struct MethodSummary<'a> {
    method: &'a str,
    final_time: f64,
    final_ber: f64,
    min_ber: f64,
    mean_ber: f64,
}

#[derive(Debug, Serialize)]
struct RmsSummary {
    symbol: usize,
    filter: usize,
    time: f64,
    rms: f64,
    mean_intermediate: f64,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    scenario: Scenario,
    runs_per_symbol: usize,
    master_seed: u64,
    amplitudes: &'a [f64],
    off_level: f64,
    duration: f64,
    hill: &'a [HillParams],
    methods: Vec<MethodSummary<'a>>,
    ber: &'a [BERResult],
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rms_intermediate: Vec<RmsSummary>,
}

/// Writes `config.snapshot`, `trajectories/`, `filters/`, `ber.csv` and
/// `summary.json` under `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir.join("trajectories"))?;
    fs::create_dir_all(dir.join("filters"))?;
    fs::write(dir.join("config.snapshot"), out.config.to_toml())?;

    let dt = out.config.sample_dt;
    for rs in &out.runs {
        for r in rs.iter().filter(|r| r.run < out.config.saved_runs) {
            let stem = format!("symbol{}_run{}", r.symbol, r.run);
            if let Some(tr) = &r.trajectory {
                let f = BufWriter::new(fs::File::create(dir.join("trajectories").join(format!("{stem}.csv")))?);
                tr.write_sampled_csv(dt, f).map_err(|e| ExperimentError::Setup(e.to_string()))?;
                let f = BufWriter::new(fs::File::create(dir.join("trajectories").join(format!("{stem}.events")))?);
                tr.write_event_list(f).map_err(|e| ExperimentError::Setup(e.to_string()))?;
            }
            if let Some(ann) = &r.annihilation {
                let f = BufWriter::new(fs::File::create(
                    dir.join("trajectories").join(format!("{stem}_annihilation.csv")),
                )?);
                ann.write_sampled_csv(dt, f).map_err(|e| ExperimentError::Setup(e.to_string()))?;
            }
            let groups: [(&str, &Vec<FilterPath>); 3] =
                [("history", &r.history), ("intermediate", &r.intermediate), ("positive", &r.positive)];
            for (name, paths) in groups {
                for (j, p) in paths.iter().enumerate() {
                    let f = BufWriter::new(fs::File::create(dir.join("filters").join(format!("{stem}_{name}{j}.csv")))?);
                    p.write_csv(f)?;
                }
            }
            for (j, p) in r.production.iter().enumerate() {
                let mut w = csv::Writer::from_path(dir.join("filters").join(format!("{stem}_y{j}.csv")))?;
                w.write_record(["time", "count"])?;
                let mut acc = 0;
                for (&t, &s) in p.times().iter().zip(p.sizes()) {
                    acc += s;
                    w.write_record([t.to_string(), acc.to_string()])?;
                }
                w.flush()?;
            }
        }
    }

    let k = out.symbols.len();
    let mut w = csv::Writer::from_path(dir.join("ber.csv"))?;
    let mut header = vec!["method".to_string(), "time".to_string()];
    header.extend((0..k).map(|i| format!("errors_{i}")));
    header.extend(["runs".to_string(), "ber".to_string(), "threshold".to_string()]);
    w.write_record(&header)?;
    for res in &out.ber {
        for p in &res.points {
            let mut row = vec![res.method.tag().to_string(), p.time.to_string()];
            row.extend(p.errors.iter().map(|e| e.to_string()));
            row.push(p.runs.to_string());
            row.push(p.ber.to_string());
            row.push(p.threshold.map(|t| t.to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let methods = out
        .ber
        .iter()
        .map(|r| {
            let last = r.points.last();
            MethodSummary {
                method: r.method.tag(),
                final_time: last.map_or(0.0, |p| p.time),
                final_ber: last.map_or(0.0, |p| p.ber),
                min_ber: r.points.iter().map(|p| p.ber).fold(f64::INFINITY, f64::min),
                mean_ber: r.points.iter().map(|p| p.ber).sum::<f64>() / r.points.len().max(1) as f64,
            }
        })
        .collect();
    let mut rms_intermediate = Vec::new();
    if out.config.scenario == Scenario::Colocated && out.config.runs >= 2 {
        let t = out.symbols.duration() * 0.9;
        for (s, rs) in out.runs.iter().enumerate() {
            for j in 0..k {
                let a: Vec<FilterPath> = rs.iter().map(|r| r.history[j].clone()).collect();
                let b: Vec<FilterPath> = rs.iter().map(|r| r.intermediate[j].clone()).collect();
                let rms = rms_compare(&a, &b, dt)?;
                let mean = b.iter().map(|p| p.value_at(t)).sum::<f64>() / b.len() as f64;
                rms_intermediate.push(RmsSummary {
                    symbol: s,
                    filter: j,
                    time: t,
                    rms: rms.value_at(t),
                    mean_intermediate: mean,
                });
            }
        }
    }
    let summary = Summary {
        scenario: out.config.scenario,
        runs_per_symbol: out.config.runs,
        master_seed: out.config.master_seed,
        amplitudes: out.symbols.amplitudes(),
        off_level: out.symbols.off_level(),
        duration: out.symbols.duration(),
        hill: &out.hill,
        methods,
        ber: &out.ber,
        rms_intermediate,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// Outcome of one three-species annihilation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnihilationScenarioReport {
    pub impulses: Vec<Vec<(f64, f64)>>,
    pub expected_species: usize,
    pub expected_count: f64,
    /// Instantaneous-annihilation limit.
    pub deterministic: Vec<f64>,
    /// Mass-action ODE at the stochastic `k_a`.
    pub ode: Vec<f64>,
    pub stochastic_matches: usize,
    pub runs: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub k_a: f64,
    pub horizon: f64,
    pub scenarios: Vec<AnnihilationScenarioReport>,
    pub pass: bool,
}

/// Runs both three-species counterexamples: exact limit, ODE and `runs`
/// stochastic realisations at rate `k_a`. A scenario passes when the limit
/// is within 1e-6 of the expected survivor and at least 99% of stochastic
/// runs end in exactly that state.
pub fn check_counterexamples(runs: usize, k_a: f64, master_seed: u64) -> Result<CounterexampleReport, ExperimentError> {
    const HORIZON: f64 = 20.0;
    let expected = [(2usize, 30.0), (1usize, 10.0)];
    let cfg = AnnihilationConfig { k_a, species: 3 };
    let mut scenarios = Vec::new();
    for (si, (imp, (sp, count))) in counterexample_scenarios().into_iter().zip(expected).enumerate() {
        let setup = |e: &dyn std::fmt::Display| ExperimentError::Setup(e.to_string());
        let deterministic = deterministic_annihilation(&imp).map_err(|e| setup(&e))?;
        let ode = annihilation_ode(&imp, k_a, HORIZON).map_err(|e| setup(&e))?;
        let paths = imp
            .iter()
            .map(|l| {
                let v: Vec<(f64, u64)> = l.iter().map(|&(t, n)| (t, n as u64)).collect();
                CountingPath::from_impulses(&v, HORIZON)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| setup(&e))?;
        let want: Vec<i64> = (0..3).map(|i| if i == sp { count as i64 } else { 0 }).collect();
        let matches = (0..runs)
            .into_par_iter()
            .map(|r| {
                let mut rng = RngSpec::new(master_seed, (si * runs + r) as u64).rng();
                annihilate(&paths, &cfg, &mut rng)
                    .map(|tr| usize::from(tr.state_at(HORIZON) == want))
                    .map_err(|e| ExperimentError::Run {
                        symbol: si,
                        run: r,
                        msg: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .sum::<usize>();
        let exact = deterministic
            .iter()
            .enumerate()
            .all(|(i, &v)| (v - if i == sp { count } else { 0.0 }).abs() <= 1e-6);
        scenarios.push(AnnihilationScenarioReport {
            impulses: imp,
            expected_species: sp,
            expected_count: count,
            deterministic,
            ode,
            stochastic_matches: matches,
            runs,
            pass: exact && matches * 100 >= runs * 99,
        });
    }
    Ok(CounterexampleReport {
        k_a,
        horizon: HORIZON,
        pass: scenarios.iter().all(|s| s.pass),
        scenarios,
    })
}

/// Result of a promoter-model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcs2Report {
    /// `"synthetic"` or `"dataset"`.
    pub route: String,
    pub labels: Vec<String>,
    pub fit: Dcs2Fit,
    /// Generating parameters on the synthetic route.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<DCS2Params>,
    /// `|fit / truth - 1|` per free parameter, synthetic route only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_errors: Option<Vec<(String, f64)>>,
    pub pass: bool,
}

/// Fits the promoter model. Without data the fit runs on noise-free series
/// generated from the reference parameters and passes when every free
/// parameter is recovered within 10%. With data it passes when the total
/// error does not exceed the published reference value.
pub fn run_dcs2(config: &ExperimentConfig) -> Result<(Dcs2Report, Vec<Dataset>), ExperimentError> {
    let section = config.dcs2.clone().unwrap_or_default();
    let fit_cfg = section.fit.clone().unwrap_or_else(|| Dcs2FitConfig {
        hill: config.hill,
        ..Dcs2FitConfig::default()
    });
    let setup = |e: &dyn std::fmt::Display| ExperimentError::Setup(e.to_string());
    match (&section.data, &section.inputs) {
        (None, None) => {
            let fixed = section.fixed.unwrap_or(FixedRates::SYNTHETIC);
            let truth = DCS2Params::reference(fixed);
            let data = synthetic_datasets(&truth, &fit_cfg.hill).map_err(|e| setup(&e))?;
            let fit = fit_dcs2(&data, fixed, &fit_cfg).map_err(|e| ExperimentError::Run {
                symbol: 0,
                run: 0,
                msg: e.to_string(),
            })?;
            let errs: Vec<(String, f64)> = DCS2Params::FREE_NAMES
                .iter()
                .zip(fit.params.free().iter().zip(truth.free()))
                .map(|(n, (f, t))| (n.to_string(), (f / t - 1.0).abs()))
                .collect();
            let pass = errs.iter().all(|(_, e)| *e <= 0.10);
            let labels = data.iter().map(|d| d.measured.label.clone()).collect();
            Ok((
                Dcs2Report {
                    route: "synthetic".into(),
                    labels,
                    fit,
                    truth: Some(truth),
                    relative_errors: Some(errs),
                    pass,
                },
                data,
            ))
        }
        (Some(data_path), Some(input_path)) => {
            let fixed = section
                .fixed
                .ok_or_else(|| ExperimentError::Setup("fitting measured data requires [dcs2.fixed]".into()))?;
            let measured = ingest_timeseries(data_path).map_err(|e| setup(&e))?;
            let inputs = ingest_timeseries(input_path).map_err(|e| setup(&e))?;
            if measured.len() != inputs.len() {
                return Err(ExperimentError::Setup(format!(
                    "{} reporter columns against {} input columns",
                    measured.len(),
                    inputs.len()
                )));
            }
            let data: Vec<Dataset> = measured
                .into_iter()
                .zip(inputs)
                .map(|(m, u)| {
                    let horizon = *m.times.last().expect("non-empty");
                    Dataset {
                        input: u.to_step(horizon),
                        measured: m,
                    }
                })
                .collect();
            let fit = fit_dcs2(&data, fixed, &fit_cfg).map_err(|e| ExperimentError::Run {
                symbol: 0,
                run: 0,
                msg: e.to_string(),
            })?;
            Ok((
                Dcs2Report {
                    route: "dataset".into(),
                    labels: data.iter().map(|d| d.measured.label.clone()).collect(),
                    pass: fit.error <= REFERENCE_FITTING_ERROR,
                    fit,
                    truth: None,
                    relative_errors: None,
                },
                data,
            ))
        }
        _ => Err(ExperimentError::Setup("[dcs2] needs both `data` and `inputs`, or neither".into())),
    }
}

/// Writes `config.snapshot`, `summary.json` and one measured-versus-fitted
/// CSV per profile under `trajectories/`.
pub fn write_dcs2_outputs(
    config: &ExperimentConfig,
    report: &Dcs2Report,
    data: &[Dataset],
    dir: &Path,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir.join("trajectories"))?;
    fs::write(dir.join("config.snapshot"), config.to_toml())?;
    for (i, d) in data.iter().enumerate() {
        let tr = simulate_dcs2(&report.fit.params, &report.fit.hill, &d.input, &d.measured.times)
            .map_err(|e| ExperimentError::Setup(e.to_string()))?;
        let mut w = csv::Writer::from_path(dir.join("trajectories").join(format!("profile{i}.csv")))?;
        w.write_record(["time", "input", "measured", "fitted"])?;
        for ((&t, &m), f) in d.measured.times.iter().zip(&d.measured.values).zip(tr.myfp()) {
            w.write_record([t.to_string(), d.input.value(t).to_string(), m.to_string(), f.to_string()])?;
        }
        w.flush()?;
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_colocated(runs: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::colocated_reference();
        c.runs = runs;
        c.horizon = Some(20.0);
        c.symbols.duration = Some(15.0);
        c
    }

    #[test]
    fn single_run_ber_is_zero_or_one() {
        let out = run_ber_experiment(&small_colocated(1)).unwrap();
        for r in &out.ber {
            for p in &r.points {
                assert!(p.ber == 0.0 || p.ber == 0.5 || p.ber == 1.0, "{}", p.ber);
                assert!(p.errors.iter().all(|&e| e <= 1));
            }
        }
    }

    #[test]
    fn degenerate_prior_always_decides_zero() {
        let mut c = small_colocated(3);
        c.symbols.priors = Some(vec![1.0, 0.0]);
        c.methods = vec![Method::HistoryFilter];
        let out = run_ber_experiment(&c).unwrap();
        for rs in &out.runs {
            for r in rs {
                assert_eq!(r.history[0].initial(), 0.0);
                assert_eq!(r.history[1].initial(), f64::NEG_INFINITY);
                assert!(r.decisions[0].1.iter().all(|&d| d == 0));
            }
        }
        // symbol 1 errors carry zero weight
        assert!(out.ber[0].points.iter().all(|p| p.ber == 0.0));
    }

    #[test]
    fn baseline_examples() {
        let (theta, ber) = one_sample_baseline(&[0, 1, 2], &[7, 8, 9], 10, [0.5, 0.5]);
        assert_eq!(ber, 0.0);
        assert_eq!(theta, 3);
        let same = [1, 2, 3, 4, 5, 6];
        let (theta, ber) = one_sample_baseline(&same, &same, 10, [0.5, 0.5]);
        assert_eq!(ber, 0.5);
        assert_eq!(theta, 0);
    }

    #[test]
    fn rms_examples() {
        let p = |off: f64, n: usize| FilterPath {
            times: (0..n).map(|i| i as f64 * 0.5).collect(),
            values: (0..n).map(|i| i as f64 + off).collect(),
        };
        let a = vec![p(0.0, 5), p(1.0, 5)];
        let r = rms_compare(&a, &a, 0.5).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
        let b = vec![p(2.5, 5), p(3.5, 5)];
        let r = rms_compare(&a, &b, 0.5).unwrap();
        assert!(r.values.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        let short = vec![p(0.0, 3), p(1.0, 5)];
        let r = rms_compare(&short, &a, 0.5).unwrap();
        assert_eq!(r.times.len(), 3);
        assert!(rms_compare(&a[..1], &b[..1], 0.5).is_err());
    }

    #[test]
    fn outputs_are_reproducible() {
        let c = small_colocated(2);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_outputs(&run_ber_experiment(&c).unwrap(), d1.path()).unwrap();
        write_outputs(&run_ber_experiment(&c).unwrap(), d2.path()).unwrap();
        for name in ["config.snapshot", "ber.csv", "summary.json", "trajectories/symbol1_run0.csv", "filters/symbol0_run0_history1.csv"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn counterexample_check_passes() {
        let r = check_counterexamples(20, 1e4, 7).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.scenarios[0].stochastic_matches, 20);
        assert!((r.scenarios[1].ode[1] - 10.0).abs() < 0.05, "{:?}", r.scenarios[1].ode);
    }

    #[test]
    fn dcs2_measured_route_needs_fixed_rates() {
        let mut c = ExperimentConfig::dcs2_reference();
        c.dcs2 = Some(crate::config::Dcs2Config {
            data: Some("a.csv".into()),
            inputs: Some("b.csv".into()),
            ..Default::default()
        });
        let e = run_dcs2(&c).unwrap_err();
        assert!(e.is_config(), "{e}");
        c.dcs2.as_mut().unwrap().inputs = None;
        assert!(run_dcs2(&c).unwrap_err().is_config());
    }

    #[test]
    fn single_run_replays_the_experiment() {
        let c = small_colocated(2);
        let out = run_ber_experiment(&c).unwrap();
        let tr = simulate_single(&c, 1, 1).unwrap();
        let d = demodulate(&c, &tr).unwrap();
        assert_eq!(d.history, out.runs[1][1].history);
        assert_eq!(d.intermediate, out.runs[1][1].intermediate);
        assert_eq!(&d.decisions, &out.runs[1][1].decisions[0].1);
        assert!(simulate_single(&c, 2, 0).unwrap_err().is_config());
    }
}
