//! End-to-end pipeline: generate ground truth, estimate, score, and write
//! the trace and plot files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::config::{RunConfig, ScenarioConfig};
use crate::csv_io::{emit_estimates, emit_samples, emit_truth, write_table};
use crate::error::{Error, Result};
use crate::estimator::{reconstruct_pfc, run_estimator, EstimatorConfig, EstimatorRun};
use crate::metrics::{e_avg, final_rel_err, freq_replay, MetricsReport, ReplayTrace};
use crate::model::{simulate_aggregated, AggParams, SimRun};
use crate::truth_sim::{add_noise, aggregate_params, default_fleet, simulate_scenario};

/// Ground truth plus the aggregated constants matching it on the
/// measurement base.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub run: SimRun,
    /// Constants for replays and governor reconstruction at the end of the run.
    pub replay_params: AggParams,
    pub max_coupling_imbalance: f64,
}

pub fn generate(cfg: &RunConfig) -> Result<GroundTruth> {
    match &cfg.scenario {
        ScenarioConfig::Aggregated { duration, dt, seed, noise, events } => {
            let mut run = simulate_aggregated(&cfg.system, *duration, *dt, events)?;
            if let Some(n) = noise {
                add_noise(&mut run.samples, n, *seed)?;
            }
            Ok(GroundTruth { run, replay_params: cfg.system, max_coupling_imbalance: 0.0 })
        }
        ScenarioConfig::Fleet { duration, dt, seed, noise, events, machines } => {
            let fleet = machines.clone().unwrap_or_else(|| default_fleet(*seed));
            let spec = crate::truth_sim::ScenarioSpec { duration: *duration, dt: *dt, events: events.clone(), noise: *noise, seed: *seed };
            let out = simulate_scenario(&fleet, &spec, cfg.system.f_nom)?;
            // survivors' governors and inertia, powers on the fixed measurement base
            let mut params = aggregate_params(&out.survivors, cfg.system.f_nom)?;
            params.k_p *= params.s_b / out.s_base;
            params.s_b = out.s_base;
            Ok(GroundTruth { run: out.run, replay_params: params, max_coupling_imbalance: out.max_coupling_imbalance })
        }
    }
}

/// Everything a run produces in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub name: String,
    pub truth: GroundTruth,
    pub estimator: EstimatorConfig,
    pub est: EstimatorRun,
    /// Replays with the reference and with the estimated inertia.
    pub replays: Option<(ReplayTrace, ReplayTrace)>,
    pub report: MetricsReport,
}

pub fn estimator_config(cfg: &RunConfig, truth: &GroundTruth) -> Result<EstimatorConfig> {
    let first = truth.run.truth.first().ok_or_else(|| Error::InvalidScenario("empty ground-truth trace".into()))?;
    let est = cfg.estimator.resolve(&first.theta(), cfg.scenario.dt(), &truth.replay_params);
    est.validate()?;
    Ok(est)
}

/// Score an estimation run against ground truth.
pub fn score(
    est: &EstimatorRun,
    truth: &SimRun,
    params: &AggParams,
    window: Option<[f64; 2]>,
    replay: bool,
) -> Result<(MetricsReport, Option<(ReplayTrace, ReplayTrace)>)> {
    let last = est.records.last();
    let last_truth = truth.truth.last();
    let mut report = MetricsReport {
        final_rel_err: None,
        e_avg: None,
        e_avg_window: window,
        delta_f_max: None,
        h_tot_true: last_truth.map(|t| t.h_tot),
        h_tot_hat: last.and_then(|r| r.h_tot_hat),
        p_m_pfc_true: last_truth.map(|t| t.p_m_pfc),
        p_m_pfc_hat: last.and_then(|r| r.p_m_pfc_hat),
        delta_l2: last.map_or(0.0, |r| r.delta_l2),
        unstable_steps: est.unstable_steps,
        runtime: 0.0,
    };
    if let (Some(r), Some(t)) = (last, last_truth) {
        report.final_rel_err = Some(final_rel_err([r.eta1_hat, r.eta2_hat], &t.theta()));
    }
    if let Some([t1, t2]) = window {
        report.e_avg = Some(e_avg(&est.records, &truth.truth, t1, t2)?);
    }
    let mut replays = None;
    if replay {
        if let (Some(h), Some(h_hat)) = (report.h_tot_true, report.h_tot_hat) {
            let nominal = freq_replay(&truth.samples, &truth.truth, h, params)?;
            let estimated = freq_replay(&truth.samples, &truth.truth, h_hat, params)?;
            report.delta_f_max = Some([nominal.max_abs_mhz, estimated.max_abs_mhz]);
            replays = Some((nominal, estimated));
        }
    }
    Ok((report, replays))
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let start = Instant::now();
    cfg.validate()?;
    let truth = generate(cfg)?;
    let estimator = estimator_config(cfg, &truth)?;
    let est = run_estimator(&truth.run.samples, &estimator, true)?;
    let (mut report, replays) = score(&est, &truth.run, &truth.replay_params, cfg.metrics.e_avg_window, cfg.metrics.replay)?;
    report.runtime = start.elapsed().as_secs_f64();
    info!("{}: finished in {:.2} s", cfg.name, report.runtime);
    Ok(PipelineOutput { name: cfg.name.clone(), truth, estimator, est, replays, report })
}

fn stride<T>(v: &[T], n: usize) -> impl Iterator<Item = (usize, &T)> {
    let last = v.len().saturating_sub(1);
    v.iter().enumerate().filter(move |(k, _)| k % n == 0 || *k == last)
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write the traces, the metrics report, the resolved configuration and one
/// plot file per figure into `dir`. Returns the files written.
pub fn write_outputs(out: &PipelineOutput, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("plots")).map_err(|e| Error::io(dir, e))?;
    let f_nom = cfg.system.f_nom;
    let samples = &out.truth.run.samples;
    let truth = &out.truth.run.truth;
    let records = &out.est.records;
    let n = cfg.output.plot_stride;
    let mut written = Vec::new();
    let mut file = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    emit_samples(&file("samples.csv"), samples, cfg.output.unit, f_nom)?;
    emit_truth(&file("truth.csv"), truth)?;
    emit_estimates(&file("estimates.csv"), records)?;
    write_json(&file("metrics.json"), &out.report)?;
    let resolved = cfg.to_toml()?;
    let p = file("config.toml");
    std::fs::write(&p, resolved).map_err(|e| Error::io(&p, e))?;

    // measured frequency and the two replays
    let replay = out.replays.as_ref();
    write_table(
        &file("plots/f_av.csv"),
        &["t", "f_measured_hz", "f_replay_h_hz", "f_replay_h_hat_hz"],
        stride(samples, n).map(|(k, s)| {
            vec![
                Some(s.t),
                Some(f_nom * s.omega_av),
                replay.map(|r| f_nom * r.0.omega[k]),
                replay.map(|r| f_nom * r.1.omega[k]),
            ]
        }),
    )?;
    let rebuilt = reconstruct_pfc(samples, out.truth.replay_params.governor())?;
    write_table(
        &file("plots/p_pfc.csv"),
        &["t", "p_pfc_measured", "p_pfc_reconstructed"],
        stride(samples, n).map(|(k, s)| vec![Some(s.t), Some(s.p_pfc_tot), Some(rebuilt[k])]),
    )?;
    write_table(
        &file("plots/eta_hat.csv"),
        &["t", "eta1_hat", "eta2_hat", "eta1", "eta2"],
        stride(records, n).map(|(k, r)| {
            let th = truth[k].theta();
            vec![Some(r.t), Some(r.eta1_hat), Some(r.eta2_hat), Some(th.eta1), Some(th.eta2)]
        }),
    )?;
    write_table(
        &file("plots/eta_rel.csv"),
        &["t", "eta1_rel", "eta2_rel"],
        stride(records, n).map(|(k, r)| {
            let th = truth[k].theta();
            vec![Some(r.t), Some(r.eta1_hat / th.eta1), Some(r.eta2_hat / th.eta2)]
        }),
    )?;
    write_table(
        &file("plots/delta_l2.csv"),
        &["t", "delta", "delta_l2"],
        stride(records, n).map(|(k, r)| vec![Some(r.t), Some(out.est.snapshots[k].delta), Some(r.delta_l2)]),
    )?;
    if let Some((nominal, estimated)) = replay {
        write_table(
            &file("plots/delta_f.csv"),
            &["t", "delta_f_h_mhz", "delta_f_h_hat_mhz"],
            stride(samples, n).map(|(k, s)| vec![Some(s.t), Some(nominal.delta_f_mhz[k]), Some(estimated.delta_f_mhz[k])]),
        )?;
    }
    Ok(written)
}

/// Run several configurations on worker threads, one per configuration.
pub fn run_many(cfgs: &[RunConfig]) -> Vec<Result<PipelineOutput>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(move || run_pipeline(c))).collect();
        handles.into_iter().map(|h| h.join().expect("scenario worker panicked")).collect()
    })
}

/// One-line human summary of a report.
pub fn summary(name: &str, r: &MetricsReport) -> String {
    let mut line = format!("{name}:");
    if let (Some(h), Some(hh)) = (r.h_tot_true, r.h_tot_hat) {
        line += &format!(" H_tot {h:.4} s, estimate {hh:.4} s ({:+.2}%);", 100.0 * (hh / h - 1.0));
    }
    if let (Some(p), Some(ph)) = (r.p_m_pfc_true, r.p_m_pfc_hat) {
        line += &format!(" P_m,PFC {p:.5} pu, estimate {ph:.5} pu;");
    }
    if let Some(e) = r.final_rel_err {
        line += &format!(" final rel. error ({:.3e}, {:.3e});", e[0], e[1]);
    }
    if let Some(e) = r.e_avg {
        line += &format!(" e_avg {e:.4};");
    }
    if let Some([a, b]) = r.delta_f_max {
        line += &format!(" max |df| {a:.3} mHz (H) vs {b:.3} mHz (H_hat);");
    }
    line += &format!(" ||Delta||_T {:.4e}", r.delta_l2);
    if r.unstable_steps > 0 {
        line += &format!("; {} Euler-unstable steps", r.unstable_steps);
    }
    line
}
