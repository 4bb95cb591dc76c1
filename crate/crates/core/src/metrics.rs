//! Error metrics and the frequency replay comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimateRecord;
use crate::integrate::Rk4Workspace;
use crate::model::{AggParams, AggState, Sample, TrueTheta, TruthPoint};

/// `|eta_hat_i / eta_i - 1|` for both components.
pub fn final_rel_err(estimate: [f64; 2], truth: &TrueTheta) -> [f64; 2] {
    let eta = truth.as_array();
    [(estimate[0] / eta[0] - 1.0).abs(), (estimate[1] / eta[1] - 1.0).abs()]
}

/// Time-averaged relative error over `[t1, t2]`, worst component.
///
/// Rectangle rule over the samples in `[t1, t2)`, normalized by the covered
/// time so a constant error is returned exactly.
pub fn e_avg(records: &[EstimateRecord], truth: &[TruthPoint], t1: f64, t2: f64) -> Result<f64> {
    let (start, end) = match (records.first(), records.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => (f64::NAN, f64::NAN),
    };
    if !(t2 > t1) || !(start <= t1 + 1e-9 && end >= t2 - 1e-9) || truth.len() != records.len() {
        return Err(Error::WindowOutsideTrace { t1, t2, start, end });
    }
    let mut acc = [0.0f64; 2];
    let mut span = 0.0;
    for k in 0..records.len() - 1 {
        let r = &records[k];
        if r.t < t1 - 1e-9 || r.t >= t2 - 1e-9 {
            continue;
        }
        let h = records[k + 1].t - r.t;
        let eta = truth[k].theta().as_array();
        let est = [r.eta1_hat, r.eta2_hat];
        for i in 0..2 {
            acc[i] += (eta[i] - est[i]).abs() / eta[i].abs() * h;
        }
        span += h;
    }
    Ok((acc[0] / span).max(acc[1] / span))
}

/// Frequency deviation between a replay of the aggregated model and the
/// recorded average frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    pub h_tot: f64,
    /// Replayed frequency [pu].
    pub omega: Vec<f64>,
    /// Replay minus record [mHz].
    pub delta_f_mhz: Vec<f64>,
    /// `max |delta_f|` [mHz].
    pub max_abs_mhz: f64,
}

/// Replay the aggregated swing equation with a candidate inertia, driven by
/// the recorded `P_m,PFC` and `P_e,PFC`, from the recorded initial frequency
/// with a settled governor.
pub fn freq_replay(samples: &[Sample], truth: &[TruthPoint], h_tot: f64, params: &AggParams) -> Result<ReplayTrace> {
    if samples.len() != truth.len() {
        return Err(Error::InvalidParams(format!(
            "replay needs matching streams, got {} samples and {} truth points",
            samples.len(),
            truth.len()
        )));
    }
    if !(h_tot > 0.0) {
        return Err(Error::InvalidParams(format!("replay inertia must be positive, got {h_tot}")));
    }
    let mut out = ReplayTrace { h_tot, omega: Vec::with_capacity(samples.len()), delta_f_mhz: Vec::with_capacity(samples.len()), max_abs_mhz: 0.0 };
    let Some(first) = samples.first() else {
        return Ok(out);
    };
    let gov = params.governor();
    let omega0 = first.omega_av;
    let mut state = AggState { omega_av: omega0, g_state: (1.0 - gov.lead_ratio()) * gov.droop_signal(omega0), b1: params.b1() };
    let mut ws = Rk4Workspace::new(2);
    for k in 0..samples.len() {
        let s = &samples[k];
        let df = params.f_nom * (state.omega_av - s.omega_av) * 1e3;
        out.omega.push(state.omega_av);
        out.delta_f_mhz.push(df);
        out.max_abs_mhz = out.max_abs_mhz.max(df.abs());
        if k + 1 < samples.len() {
            let dt = samples[k + 1].t - s.t;
            let theta = TrueTheta::from_physical(h_tot, truth[k].p_m_pfc);
            state = crate::model::step_with(&state, s.p_e_pfc, &theta, &gov, dt, s.t, &mut ws)?;
        }
    }
    Ok(out)
}

/// Summary of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub final_rel_err: Option<[f64; 2]>,
    pub e_avg: Option<f64>,
    pub e_avg_window: Option<[f64; 2]>,
    /// `max |delta_f|` [mHz] of the replays with the reference and the estimated inertia.
    pub delta_f_max: Option<[f64; 2]>,
    pub h_tot_true: Option<f64>,
    pub h_tot_hat: Option<f64>,
    pub p_m_pfc_true: Option<f64>,
    pub p_m_pfc_hat: Option<f64>,
    pub delta_l2: f64,
    pub unstable_steps: u64,
    /// Wall-clock time [s]; never written to disk so outputs stay reproducible.
    #[serde(skip)]
    pub runtime: f64,
}
