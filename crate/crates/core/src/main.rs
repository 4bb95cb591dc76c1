use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use inertia_drem::config::{preset, EstimatorOverrides, PfcSourceKind, RunConfig, PRESETS};
use inertia_drem::csv_io::{emit_estimates, emit_samples, emit_truth, ingest_csv, ingest_estimates, ingest_truth, write_table, FreqUnit};
use inertia_drem::estimator::{run_estimator, UpdateRule};
use inertia_drem::harness::{generate, run_many, score, summary, write_json, write_outputs};
use inertia_drem::metrics::freq_replay;
use inertia_drem::model::AggParams;
use inertia_drem::{Error, Result};

#[derive(Parser)]
#[command(name = "inertia-drem", version, about = "Online inertia estimation with dynamic regressor extension and mixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// Configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Seed for fleet heterogeneity and noise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct EstimatorFlags {
    /// Filter pole [1/s].
    #[arg(long)]
    alpha: Option<f64>,
    /// Extension delay [s].
    #[arg(long = "delay")]
    d: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    /// Sample period [s].
    #[arg(long)]
    dt: Option<f64>,
    /// Warm-up before the first update [s].
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    y_guard: Option<f64>,
    /// Initial estimates `eta1,eta2`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    eta_init: Option<Vec<f64>>,
    /// Initial estimates as multiples of the true initial parameters.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    eta_init_scale: Option<Vec<f64>>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long, value_enum)]
    pfc_source: Option<PfcSourceKind>,
    #[arg(long, value_enum)]
    update_rule: Option<UpdateRule>,
}

impl EstimatorFlags {
    fn overrides(&self) -> EstimatorOverrides {
        let pair = |v: &Option<Vec<f64>>| v.as_ref().map(|v| [v[0], v[1]]);
        EstimatorOverrides {
            alpha: self.alpha,
            d: self.d,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            dt: self.dt,
            warmup: self.warmup,
            y_guard: self.y_guard,
            eta_init: pair(&self.eta_init),
            eta_init_scale: pair(&self.eta_init_scale),
            omega0: self.omega0,
            pfc_source: self.pfc_source,
            update_rule: self.update_rule,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth measurement stream and parameter trace.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Output directory.
        #[arg(long, env = "INERTIA_DREM_OUT", default_value = "out")]
        out: PathBuf,
        /// Frequency unit of the written stream.
        #[arg(long, value_enum, default_value = "pu")]
        unit: FreqUnit,
    },
    /// Estimate inertia from a measurement CSV.
    Estimate {
        /// Measurement stream with header `t,f_av,p_pfc_tot,p_e_pfc`.
        input: PathBuf,
        /// Ground-truth trace for scoring.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Configuration file providing `[system]`, `[estimator]` and `[metrics]`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Unit of `f_av`; inferred when omitted.
        #[arg(long, value_enum)]
        unit: Option<FreqUnit>,
        #[command(flatten)]
        flags: EstimatorFlags,
        #[arg(long, env = "INERTIA_DREM_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Simulate, estimate, score and write plot data for one or more scenarios.
    RunScenario {
        /// Built-in scenarios (repeatable); run in parallel.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: Vec<String>,
        /// Configuration files (repeatable).
        #[arg(long)]
        config: Vec<PathBuf>,
        /// Run every built-in scenario.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        flags: EstimatorFlags,
        #[arg(long, env = "INERTIA_DREM_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Replay the frequency with the reference and an estimated inertia.
    ReplayMetrics {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Estimated inertia [s].
        #[arg(long, conflicts_with = "estimates", required_unless_present = "estimates")]
        h_hat: Option<f64>,
        /// Estimates CSV; the last estimate is used.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Configuration file providing `[system]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        unit: Option<FreqUnit>,
        #[arg(long, env = "INERTIA_DREM_OUT", default_value = "out")]
        out: PathBuf,
    },
}

fn load(source: &Source) -> Result<RunConfig> {
    let mut cfg = match (&source.config, &source.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("pass --config or --preset".into())),
    };
    if let Some(seed) = source.seed {
        cfg.scenario.set_seed(seed);
    }
    Ok(cfg)
}

fn system_of(config: &Option<PathBuf>) -> Result<(AggParams, Option<RunConfig>)> {
    match config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            Ok((cfg.system, Some(cfg)))
        }
        None => Ok((AggParams::reference(), None)),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { source, out, unit } => {
            let cfg = load(&source)?;
            let truth = generate(&cfg)?;
            mkdir(&out)?;
            emit_samples(&out.join("samples.csv"), &truth.run.samples, unit, cfg.system.f_nom)?;
            emit_truth(&out.join("truth.csv"), &truth.run.truth)?;
            println!("{}: wrote {} samples to {}", cfg.name, truth.run.samples.len(), out.display());
        }
        Command::Estimate { input, truth, config, unit, flags, out } => {
            let (system, cfg) = system_of(&config)?;
            let samples = ingest_csv(&input, unit, system.f_nom)?;
            let truth = truth.map(|p| ingest_truth(&p)).transpose()?;
            let mut ov = cfg.as_ref().map(|c| c.estimator.clone()).unwrap_or_default();
            ov.merge(&flags.overrides());
            // without a truth trace the default start is relative to the configured system
            let theta0 = truth.as_ref().and_then(|t| t.first()).map(|p| p.theta()).unwrap_or_else(|| system.theta());
            let dt = match samples.as_slice() {
                [a, b, ..] => b.t - a.t,
                _ => 1e-3,
            };
            let est_cfg = ov.resolve(&theta0, dt, &system);
            let est = run_estimator(&samples, &est_cfg, false)?;
            mkdir(&out)?;
            emit_estimates(&out.join("estimates.csv"), &est.records)?;
            if let Some(truth) = truth {
                let sim = inertia_drem::model::SimRun { samples, truth };
                let window = cfg.as_ref().and_then(|c| c.metrics.e_avg_window);
                let replay = cfg.as_ref().is_none_or(|c| c.metrics.replay);
                let (report, _) = score(&est, &sim, &system, window, replay)?;
                write_json(&out.join("metrics.json"), &report)?;
                println!("{}", summary("estimate", &report));
            } else if let Some(r) = est.records.last() {
                println!("eta_hat = ({}, {}), H_tot_hat = {:?} s, P_m,PFC_hat = {:?} pu", r.eta1_hat, r.eta2_hat, r.h_tot_hat, r.p_m_pfc_hat);
            }
        }
        Command::RunScenario { preset: names, config, all, seed, flags, out } => {
            let mut cfgs = Vec::new();
            let names: Vec<String> = if all { PRESETS.iter().map(|s| s.to_string()).collect() } else { names };
            for n in &names {
                cfgs.push(preset(n)?);
            }
            for p in &config {
                cfgs.push(RunConfig::load(p)?);
            }
            if cfgs.is_empty() {
                return Err(Error::Config("pass --preset, --config or --all".into()));
            }
            let ov = flags.overrides();
            for c in &mut cfgs {
                if let Some(s) = seed {
                    c.scenario.set_seed(s);
                }
                c.estimator.merge(&ov);
            }
            let mut first_err = None;
            for (cfg, result) in cfgs.iter().zip(run_many(&cfgs)) {
                match result.and_then(|o| write_outputs(&o, cfg, &out.join(&cfg.name)).map(|_| o)) {
                    Ok(o) => {
                        println!("{} ({:.2} s)", summary(&cfg.name, &o.report), o.report.runtime);
                        if o.report.unstable_steps > 0 {
                            warn!("{}: Euler update flagged unstable; consider --update-rule exponential", cfg.name);
                        }
                    }
                    Err(e) => {
                        if cfgs.len() > 1 {
                            eprintln!("error[{}]: {}: {e}", e.category(), cfg.name);
                        }
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Command::ReplayMetrics { samples, truth, h_hat, estimates, config, unit, out } => {
            let (system, _) = system_of(&config)?;
            let samples = ingest_csv(&samples, unit, system.f_nom)?;
            let truth = ingest_truth(&truth)?;
            let h_hat = match (h_hat, estimates) {
                (Some(h), _) => h,
                (None, Some(p)) => ingest_estimates(&p)?
                    .last()
                    .and_then(|r| r.h_tot_hat)
                    .ok_or_else(|| Error::InvalidParams("estimates file has no identifiable final estimate".into()))?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let h = truth.last().map(|t| t.h_tot).ok_or_else(|| Error::InvalidParams("empty truth trace".into()))?;
            let nominal = freq_replay(&samples, &truth, h, &system)?;
            let estimated = freq_replay(&samples, &truth, h_hat, &system)?;
            mkdir(&out)?;
            write_table(
                &out.join("delta_f.csv"),
                &["t", "delta_f_h_mhz", "delta_f_h_hat_mhz"],
                samples.iter().enumerate().map(|(k, s)| vec![Some(s.t), Some(nominal.delta_f_mhz[k]), Some(estimated.delta_f_mhz[k])]),
            )?;
            println!("{:<12} {:>10} {:>16}", "inertia", "H [s]", "max |df| [mHz]");
            println!("{:<12} {:>10.4} {:>16.4}", "reference", h, nominal.max_abs_mhz);
            println!("{:<12} {:>10.4} {:>16.4}", "estimated", h_hat, estimated.max_abs_mhz);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
