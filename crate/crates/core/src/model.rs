//! Aggregated frequency model: the swing equation of the average PFC
//! frequency driven by a lumped TGOV1 turbine-governor.
//!
//! Everything is per-unit on the system base. With the base removed the
//! swing constant is `b1 = omega0^2 / 2`, which is `0.5` at `omega0 = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{rk4_step, Rk4Workspace};

/// Below this frequency the `1/omega` swing model is considered broken.
pub const Y_GUARD: f64 = 0.1;

/// Total rating of the aggregated continental system [MW].
pub const REFERENCE_S_B_MW: f64 = 570_892.0;

/// Size of the reference unit outage [MW].
pub const NOMINAL_OUTAGE_MW: f64 = 1455.0;

/// Aggregated system constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggParams {
    /// Total power rating [MW].
    pub s_b: f64,
    /// Total inertia constant [s].
    pub h_tot: f64,
    /// Nominal frequency [pu].
    pub omega0: f64,
    /// Total droop gain [pu].
    pub k_p: f64,
    /// Aggregated PFC mechanical setpoint [pu].
    pub p_m_pfc: f64,
    /// Governor lag time constant [s].
    pub t_p: f64,
    /// Governor lead time constant [s].
    pub t_z: f64,
    /// Nominal frequency used for Hz output [Hz].
    #[serde(default = "default_f_nom")]
    pub f_nom: f64,
}

fn default_f_nom() -> f64 {
    50.0
}

impl Default for AggParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl AggParams {
    /// Aggregated parameters of the continental European system.
    pub fn reference() -> Self {
        Self {
            s_b: REFERENCE_S_B_MW,
            h_tot: 3.665,
            omega0: 1.0,
            k_p: 2.495,
            p_m_pfc: 0.498,
            t_p: 12.983,
            t_z: 6.0,
            f_nom: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(format!("aggregate parameters: {what}")));
        let finite = [self.s_b, self.h_tot, self.omega0, self.k_p, self.p_m_pfc, self.t_p, self.t_z, self.f_nom]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return bad("all values must be finite");
        }
        if self.s_b <= 0.0 {
            return bad("s_b must be positive");
        }
        if self.h_tot <= 0.0 {
            return bad("h_tot must be positive");
        }
        if self.omega0 <= 0.0 {
            return bad("omega0 must be positive");
        }
        if self.k_p < 0.0 {
            return bad("k_p must be non-negative");
        }
        if self.t_p <= 0.0 {
            return bad("t_p must be positive");
        }
        if self.t_z < 0.0 || self.t_z >= self.t_p {
            return bad("t_z must satisfy 0 <= t_z < t_p");
        }
        if self.f_nom <= 0.0 {
            return bad("f_nom must be positive");
        }
        Ok(())
    }

    /// Swing constant `omega0^2 / 2` (system base removed).
    pub fn b1(&self) -> f64 {
        self.omega0 * self.omega0 / 2.0
    }

    pub fn theta(&self) -> TrueTheta {
        TrueTheta::from_physical(self.h_tot, self.p_m_pfc)
    }

    pub fn governor(&self) -> Governor {
        Governor { k_p: self.k_p, t_p: self.t_p, t_z: self.t_z, omega0: self.omega0 }
    }

    /// Convert a power in MW to per-unit on this system base.
    pub fn mw_to_pu(&self, mw: f64) -> f64 {
        mw / self.s_b
    }
}

/// The two identifiable parameters: `eta1 = 1/H_tot`, `eta2 = P_m,PFC/H_tot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueTheta {
    pub eta1: f64,
    pub eta2: f64,
}

impl TrueTheta {
    pub fn from_physical(h_tot: f64, p_m_pfc: f64) -> Self {
        Self { eta1: 1.0 / h_tot, eta2: p_m_pfc / h_tot }
    }

    pub fn h_tot(&self) -> f64 {
        1.0 / self.eta1
    }

    pub fn p_m_pfc(&self) -> f64 {
        self.eta2 / self.eta1
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.eta1, self.eta2]
    }
}

/// State of the aggregated model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggState {
    /// Average electrical frequency of the PFC units [pu].
    pub omega_av: f64,
    /// Internal lag state of the lumped governor [pu].
    pub g_state: f64,
    /// Swing constant `omega0^2 / 2`.
    pub b1: f64,
}

impl AggState {
    /// Steady state at nominal frequency.
    pub fn equilibrium(params: &AggParams) -> Self {
        Self { omega_av: params.omega0, g_state: 0.0, b1: params.b1() }
    }
}

/// One time-stamped measurement triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Time [s].
    pub t: f64,
    /// Average PFC frequency [pu].
    pub omega_av: f64,
    /// Total PFC mechanical power injection [pu].
    pub p_pfc_tot: f64,
    /// Aggregated PFC electrical power [pu].
    pub p_e_pfc: f64,
}

/// Ground-truth parameters at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub t: f64,
    pub h_tot: f64,
    pub p_m_pfc: f64,
}

impl TruthPoint {
    pub fn theta(&self) -> TrueTheta {
        TrueTheta::from_physical(self.h_tot, self.p_m_pfc)
    }
}

/// Lead-lag turbine-governor `(1 + p T_z)/(1 + p T_p)` acting on the droop
/// signal `-K_P (omega - omega0)`.
///
/// Realized with direct feedthrough: `x = (T_z/T_p) u + g` and
/// `g' = ((1 - T_z/T_p) u - g) / T_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Governor {
    pub k_p: f64,
    pub t_p: f64,
    pub t_z: f64,
    pub omega0: f64,
}

impl Governor {
    pub fn droop_signal(&self, omega: f64) -> f64 {
        -self.k_p * (omega - self.omega0)
    }

    pub fn lead_ratio(&self) -> f64 {
        self.t_z / self.t_p
    }

    pub fn output(&self, omega: f64, g: f64) -> f64 {
        self.lead_ratio() * self.droop_signal(omega) + g
    }

    pub fn lag_rate(&self, omega: f64, g: f64) -> f64 {
        ((1.0 - self.lead_ratio()) * self.droop_signal(omega) - g) / self.t_p
    }
}

/// Total PFC power injection `P_PFC,tot` produced by the lumped governor.
pub fn governor_output(state: &AggState, params: &AggParams) -> f64 {
    params.governor().output(state.omega_av, state.g_state)
}

/// Swing-equation rate `eta1 b1 (x - u)/y + eta2 b1 / y`.
pub fn swing_rate(y: f64, x: f64, u: f64, b1: f64, theta: &TrueTheta) -> Result<f64> {
    if !(y.abs() >= Y_GUARD) {
        return Err(Error::FrequencyCollapse { t: f64::NAN, omega: y, guard: Y_GUARD });
    }
    Ok(theta.eta1 * b1 * (x - u) / y + theta.eta2 * b1 / y)
}

/// Time derivative of the average frequency [pu/s].
pub fn agg_derivative(state: &AggState, p_e_pfc: f64, theta: &TrueTheta, params: &AggParams) -> Result<f64> {
    let x = governor_output(state, params);
    swing_rate(state.omega_av, x, p_e_pfc, state.b1, theta)
}

fn agg_rhs(y: &[f64], p_e_pfc: f64, theta: &TrueTheta, gov: &Governor, b1: f64, d: &mut [f64]) -> Result<()> {
    let (omega, g) = (y[0], y[1]);
    let x = gov.output(omega, g);
    d[0] = swing_rate(omega, x, p_e_pfc, b1, theta)?;
    d[1] = gov.lag_rate(omega, g);
    Ok(())
}

/// Advance the aggregated model by one RK4 step with inputs held over the step.
pub fn step_aggregated(state: &AggState, p_e_pfc: f64, theta: &TrueTheta, params: &AggParams, dt: f64) -> Result<AggState> {
    let mut ws = Rk4Workspace::new(2);
    step_with(state, p_e_pfc, theta, &params.governor(), dt, 0.0, &mut ws)
}

pub(crate) fn step_with(
    state: &AggState,
    p_e_pfc: f64,
    theta: &TrueTheta,
    gov: &Governor,
    dt: f64,
    t: f64,
    ws: &mut Rk4Workspace,
) -> Result<AggState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("step size must be positive, got {dt}")));
    }
    let mut y = [state.omega_av, state.g_state];
    let b1 = state.b1;
    rk4_step(&mut y, t, dt, ws, |_, y, d| agg_rhs(y, p_e_pfc, theta, gov, b1, d)).map_err(|e| e.at_time(t))?;
    Ok(AggState { omega_av: y[0], g_state: y[1], b1 })
}

pub fn to_hz(omega: f64, params: &AggParams) -> f64 {
    params.f_nom * omega
}

/// Disturbances understood by the aggregated generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggEventKind {
    /// Step of the PFC mechanical setpoint [pu]; a unit outage is a negative step.
    SetpointStep { delta: f64 },
    /// Step of the PFC electrical load [pu].
    LoadStep { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: AggEventKind,
}

/// Output of a generator run: the measurement stream plus ground truth at the
/// same instants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimRun {
    pub samples: Vec<Sample>,
    pub truth: Vec<TruthPoint>,
}

/// Number of samples on `[0, duration]` at spacing `dt` (both ends included).
pub(crate) fn sample_count(duration: f64, dt: f64) -> usize {
    (duration / dt + 1e-9).floor() as usize + 1
}

/// Index of the first sample at or after `time`.
pub(crate) fn event_index(time: f64, dt: f64) -> usize {
    (time / dt - 1e-9).ceil().max(0.0) as usize
}

/// Simulate the aggregated model from equilibrium.
///
/// Events take effect at the first sample instant at or after their time;
/// inputs are held constant over each integration step.
pub fn simulate_aggregated(params: &AggParams, duration: f64, dt: f64, events: &[AggEvent]) -> Result<SimRun> {
    params.validate()?;
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::InvalidScenario(format!("need dt > 0 and duration >= 0, got dt = {dt}, duration = {duration}")));
    }
    let gov = params.governor();
    let n = sample_count(duration, dt);
    let mut sorted: Vec<AggEvent> = events.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_event = 0;

    let mut state = AggState::equilibrium(params);
    let mut p_m = params.p_m_pfc;
    let mut p_e = params.p_m_pfc;
    let mut ws = Rk4Workspace::new(2);
    let mut run = SimRun { samples: Vec::with_capacity(n), truth: Vec::with_capacity(n) };

    for k in 0..n {
        let t = k as f64 * dt;
        while next_event < sorted.len() && event_index(sorted[next_event].time, dt) <= k {
            match sorted[next_event].kind {
                AggEventKind::SetpointStep { delta } => p_m += delta,
                AggEventKind::LoadStep { delta } => p_e += delta,
            }
            next_event += 1;
        }
        run.samples.push(Sample {
            t,
            omega_av: state.omega_av,
            p_pfc_tot: gov.output(state.omega_av, state.g_state),
            p_e_pfc: p_e,
        });
        run.truth.push(TruthPoint { t, h_tot: params.h_tot, p_m_pfc: p_m });
        if k + 1 < n {
            let theta = TrueTheta::from_physical(params.h_tot, p_m);
            state = step_with(&state, p_e, &theta, &gov, dt, t, &mut ws)?;
        }
    }
    Ok(run)
}
