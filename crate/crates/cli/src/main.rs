use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmdemod::config::{ExperimentConfig, Method, Scenario};
use cmdemod::experiments::{
    check_counterexamples, demodulate, run_ber_experiment, run_dcs2, simulate_single, write_dcs2_outputs, write_outputs,
    ExperimentError,
};
use cmdemod::hill::{fit_hill, HillFitConfig};
use cmdemod::rdme::{mean_trajectory, steady_state_field, steady_state_mean};
use cmdemod::trajectory::Trajectory;

#[derive(Parser)]
#[command(name = "cmdemod", version, about = "Molecular-communication channel simulation and demodulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one channel realisation and export its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        symbol: usize,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Apply the filters to a recorded event list.
    Demod {
        #[command(flatten)]
        common: Common,
        /// Event list written by `simulate`.
        #[arg(long)]
        events: PathBuf,
    },
    /// Fit the Hill approximation for one or more amplitudes.
    FitHill {
        #[arg(short, long, required = true, num_args = 1..)]
        amplitude: Vec<f64>,
        /// Optional configuration whose [hill] section is used.
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run the full bit-error-rate experiment.
    Ber {
        #[command(flatten)]
        common: Common,
    },
    /// Best single-sample threshold detector.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the promoter model (synthetic profiles unless data is configured).
    FitDcs2 {
        #[command(flatten)]
        common: Common,
    },
    /// Verify the three-species annihilation counterexamples.
    #[command(name = "check-appendix-c")]
    CheckCounterexamples {
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 1e4)]
        k_a: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Mean-field steady state and receiver-count means per emission rate.
    SteadyState {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Simulation(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Simulation(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Simulation(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let cfg = ExperimentConfig::load(&common.config).map_err(|e| Failure::Config(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Failure::Simulation(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, symbol, run } => {
            let (cfg, out) = load(&common)?;
            let tr = simulate_single(&cfg, symbol, run)?;
            let dir = out.join("trajectories");
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            fs::write(out.join("config.snapshot"), cfg.to_toml()).map_err(|e| io_err(&out, e))?;
            let stem = format!("symbol{symbol}_run{run}");
            let csv = dir.join(format!("{stem}.csv"));
            let f = fs::File::create(&csv).map_err(|e| io_err(&csv, e))?;
            tr.write_sampled_csv(cfg.sample_dt, BufWriter::new(f)).map_err(|e| io_err(&csv, e))?;
            let ev = dir.join(format!("{stem}.events"));
            let f = fs::File::create(&ev).map_err(|e| io_err(&ev, e))?;
            tr.write_event_list(BufWriter::new(f)).map_err(|e| io_err(&ev, e))?;
            println!("{} events over {} s written to {}", tr.events().len(), tr.horizon(), dir.display());
        }
        Command::Demod { common, events } => {
            let (cfg, out) = load(&common)?;
            let f = fs::File::open(&events).map_err(|e| Failure::Config(format!("{}: {e}", events.display())))?;
            let tr = Trajectory::read_event_list(BufReader::new(f))
                .map_err(|e| Failure::Config(format!("{}: {e}", events.display())))?;
            let d = demodulate(&cfg, &tr)?;
            let dir = out.join("filters");
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            let groups = [("history", &d.history), ("intermediate", &d.intermediate), ("positive", &d.positive)];
            for (name, paths) in groups {
                for (j, p) in paths.iter().enumerate() {
                    let path = dir.join(format!("{name}{j}.csv"));
                    let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                    p.write_csv(BufWriter::new(f)).map_err(|e| io_err(&path, e))?;
                }
            }
            let mut w = csv::Writer::from_path(out.join("decisions.csv")).map_err(|e| io_err(&out, e))?;
            w.write_record(["time", "decision"]).map_err(|e| io_err(&out, e))?;
            for (t, k) in d.decision_times.iter().zip(&d.decisions) {
                w.write_record([t.to_string(), k.to_string()]).map_err(|e| io_err(&out, e))?;
            }
            w.flush().map_err(|e| io_err(&out, e))?;
            if let Some(k) = d.decisions.last() {
                println!("decision at {} s: symbol {k}", d.decision_times.last().copied().unwrap_or(0.0));
            }
        }
        Command::FitHill { amplitude, config } => {
            let hc = match config {
                Some(p) => ExperimentConfig::load(&p).map_err(|e| Failure::Config(e.to_string()))?.hill,
                None => HillFitConfig::default(),
            };
            let fits = amplitude
                .iter()
                .map(|&a| fit_hill(a, &hc))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Config(e.to_string()))?;
            print_json(&fits)?;
        }
        Command::Ber { common } => {
            let (cfg, out) = load(&common)?;
            let res = run_ber_experiment(&cfg)?;
            write_outputs(&res, &out)?;
            for r in &res.ber {
                if let Some(p) = r.points.last() {
                    println!("{}: BER {:.4} at {} s", r.method.tag(), p.ber, p.time);
                }
            }
            println!("outputs in {}", out.display());
        }
        Command::Baseline { common } => {
            let (mut cfg, out) = load(&common)?;
            cfg.methods = vec![Method::OneSample];
            let res = run_ber_experiment(&cfg)?;
            write_outputs(&res, &out)?;
            if let Some(r) = res.ber.first() {
                let best = r.points.iter().min_by(|a, b| a.ber.total_cmp(&b.ber));
                if let Some(p) = best {
                    println!(
                        "lowest one-sample BER {:.4} at {} s (threshold {})",
                        p.ber,
                        p.time,
                        p.threshold.unwrap_or(0)
                    );
                }
            } else {
                return Err(Failure::Config("the baseline needs exactly two symbols".into()));
            }
            println!("outputs in {}", out.display());
        }
        Command::FitDcs2 { common } => {
            let (cfg, out) = load(&common)?;
            if cfg.scenario != Scenario::Dcs2 {
                return Err(Failure::Config("fit-dcs2 needs scenario = \"dcs2\"".into()));
            }
            let (report, data) = run_dcs2(&cfg)?;
            write_dcs2_outputs(&cfg, &report, &data, &out)?;
            let p = &report.fit.params;
            println!(
                "{} route: g+ {:.4e}, g- {:.4}, a {:.1}, d2 {:.4}, k3 {:.4}; error {:.4e} ({})",
                report.route,
                p.g_plus,
                p.g_minus,
                p.a,
                p.d2,
                p.k3,
                report.fit.error,
                if report.pass { "pass" } else { "fail" }
            );
            println!("outputs in {}", out.display());
        }
        Command::CheckCounterexamples { runs, k_a, seed } => {
            if runs == 0 {
                return Err(Failure::Config("runs must be positive".into()));
            }
            let r = check_counterexamples(runs, k_a, seed)?;
            print_json(&r)?;
            if !r.pass {
                return Err(Failure::Simulation("annihilation check failed".into()));
            }
        }
        Command::SteadyState { common } => {
            let (cfg, out) = load(&common)?;
            let (Some(grid), Some(emission)) = (&cfg.grid, &cfg.emission) else {
                return Err(Failure::Config("steady-state needs [grid] and [emission]".into()));
            };
            let sim = |e: &dyn std::fmt::Display| Failure::Simulation(e.to_string());
            fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            let mut rows = Vec::new();
            for (k, &rate) in emission.rates.iter().enumerate() {
                let mean = steady_state_mean(grid, rate).map_err(|e| sim(&e))?;
                let field = steady_state_field(grid, rate).map_err(|e| sim(&e))?;
                let sigma = mean_trajectory(grid, emission, k, cfg.horizon(), cfg.reference.dt).map_err(|e| sim(&e))?;
                let path = out.join(format!("sigma{k}.csv"));
                let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
                w.write_record(["time", "value"]).map_err(|e| io_err(&path, e))?;
                for (i, v) in sigma.values.iter().enumerate() {
                    let t = i as f64 * sigma.dt;
                    w.write_record([t.to_string(), v.to_string()]).map_err(|e| io_err(&path, e))?;
                }
                w.flush().map_err(|e| io_err(&path, e))?;
                rows.push(serde_json::json!({
                    "symbol": k,
                    "rate": rate,
                    "receiver_mean": mean,
                    "total_mean": field.iter().sum::<f64>(),
                }));
            }
            print_json(&rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Simulation(m)) => {
            eprintln!("simulation error: {m}");
            ExitCode::from(3)
        }
    }
}
