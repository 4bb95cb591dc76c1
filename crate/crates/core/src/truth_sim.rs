//! Multi-machine synthetic grid producing ground-truth measurement streams.
//!
//! Each machine follows its own swing equation on its own base. Machines are
//! tied together by a lossless coupling to weighted reference angle and
//! speed, so internal transfers cancel exactly and only the load and the
//! mechanical powers move the centre of inertia. PFC units carry their own
//! TGOV1 governor.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{rk4_step, Rk4Workspace};
use crate::model::{event_index, sample_count, AggParams, Governor, Sample, SimRun, TruthPoint, Y_GUARD};

const OMEGA0: f64 = 1.0;
const STATES_PER_MACHINE: usize = 3;

/// Per-machine constants. Powers are per-unit on the machine's own rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineParams {
    /// Inertia constant [s].
    pub h: f64,
    /// Rating [MW].
    pub s_b: f64,
    /// Mechanical setpoint [pu].
    pub p_m: f64,
    /// Droop gain [pu]; zero for units without PFC.
    #[serde(default)]
    pub k_droop: f64,
    #[serde(default = "default_t_p")]
    pub t_p: f64,
    #[serde(default = "default_t_z")]
    pub t_z: f64,
    pub is_pfc: bool,
    /// Synchronizing coefficient to the reference angle [pu/rad].
    pub k_sync: f64,
    /// Damping against the reference speed [pu/pu].
    #[serde(default)]
    pub damping: f64,
}

fn default_t_p() -> f64 {
    12.983
}

fn default_t_z() -> f64 {
    6.0
}

impl MachineParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(format!("machine: {what}")));
        if ![self.h, self.s_b, self.p_m, self.k_droop, self.t_p, self.t_z, self.k_sync, self.damping]
            .iter()
            .all(|v| v.is_finite())
        {
            return bad("all values must be finite");
        }
        if self.h <= 0.0 {
            return bad("h must be positive");
        }
        if self.s_b <= 0.0 {
            return bad("s_b must be positive");
        }
        if self.is_pfc != (self.k_droop > 0.0) {
            return bad("a unit has PFC exactly when its droop gain is positive");
        }
        if self.k_droop < 0.0 {
            return bad("droop gain must be non-negative");
        }
        if self.is_pfc && (self.t_p <= 0.0 || self.t_z < 0.0 || self.t_z >= self.t_p) {
            return bad("governor needs 0 <= t_z < t_p");
        }
        if self.k_sync <= 0.0 {
            return bad("k_sync must be positive");
        }
        if self.damping < 0.0 {
            return bad("damping must be non-negative");
        }
        Ok(())
    }

    fn governor(&self) -> Governor {
        Governor { k_p: self.k_droop, t_p: self.t_p, t_z: self.t_z, omega0: OMEGA0 }
    }

    /// `H_i S_Bi` [MW s].
    pub fn kinetic_weight(&self) -> f64 {
        self.h * self.s_b
    }
}

/// Optional Gaussian measurement noise, standard deviations in pu.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub omega_std: f64,
    #[serde(default)]
    pub p_pfc_std: f64,
    #[serde(default)]
    pub p_e_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// Trip a machine; it leaves every sum from this instant on.
    Outage { machine: usize },
    /// Step of the total load [pu on the system base].
    LoadStep { delta: f64 },
    /// Linear change of a machine's setpoint by `delta` [pu on its own rating]
    /// over `ramp_time` seconds.
    RescheduleRamp { machine: usize, delta: f64, ramp_time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// [s]
    pub duration: f64,
    /// [s]
    pub dt: f64,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidScenario(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidScenario(format!("duration must be positive, got {}", self.duration)));
        }
        for ev in &self.events {
            if !(ev.time > 0.0 && ev.time < self.duration) {
                return Err(Error::InvalidScenario(format!(
                    "event time {} s is not strictly inside (0, {})",
                    ev.time, self.duration
                )));
            }
            if let EventKind::RescheduleRamp { ramp_time, .. } = ev.kind {
                if !(ramp_time >= 0.0) {
                    return Err(Error::InvalidScenario(format!("ramp time must be non-negative, got {ramp_time}")));
                }
            }
        }
        if let Some(n) = &self.noise {
            if !(n.omega_std >= 0.0 && n.p_pfc_std >= 0.0 && n.p_e_std >= 0.0) {
                return Err(Error::InvalidScenario("noise standard deviations must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Inertia-and-rating weighted mean speed.
pub fn compute_coi(speeds: &[f64], machines: &[MachineParams]) -> Result<f64> {
    if speeds.is_empty() || speeds.len() != machines.len() {
        return Err(Error::InvalidParams(format!(
            "centre of inertia needs equal non-empty lists, got {} speeds for {} machines",
            speeds.len(),
            machines.len()
        )));
    }
    let (num, den) = speeds
        .iter()
        .zip(machines)
        .fold((0.0, 0.0), |(n, d), (w, m)| (n + m.kinetic_weight() * w, d + m.kinetic_weight()));
    Ok(num / den)
}

/// `sum H_i S_Bi / sum S_Bi` over all given machines.
pub fn compute_h_tot(machines: &[MachineParams]) -> Result<f64> {
    if machines.is_empty() {
        return Err(Error::InvalidParams("total inertia of an empty fleet".into()));
    }
    let num: f64 = machines.iter().map(MachineParams::kinetic_weight).sum();
    let den: f64 = machines.iter().map(|m| m.s_b).sum();
    Ok(num / den)
}

/// Unweighted mean speed of the PFC units.
pub fn compute_avg_freq(pfc_speeds: &[f64]) -> Result<f64> {
    if pfc_speeds.is_empty() {
        return Err(Error::InvalidParams("average frequency needs at least one PFC unit".into()));
    }
    Ok(pfc_speeds.iter().sum::<f64>() / pfc_speeds.len() as f64)
}

fn pfc_sum(machines: &[MachineParams], values: impl Iterator<Item = f64>, s_base: f64) -> Result<f64> {
    let mut any = false;
    let mut total = 0.0;
    for (m, v) in machines.iter().zip(values) {
        if m.is_pfc {
            any = true;
            total += m.s_b * v;
        }
    }
    if !any {
        return Err(Error::InvalidParams("PFC aggregate of a fleet without PFC units".into()));
    }
    Ok(total / s_base)
}

/// Aggregated PFC mechanical setpoint on the system base.
pub fn compute_p_m_pfc(machines: &[MachineParams], s_base: f64) -> Result<f64> {
    pfc_sum(machines, machines.iter().map(|m| m.p_m), s_base)
}

/// Aggregated PFC electrical power on the system base; `p_e` per machine on its own rating.
pub fn compute_p_e_pfc(machines: &[MachineParams], p_e: &[f64], s_base: f64) -> Result<f64> {
    pfc_sum(machines, p_e.iter().copied(), s_base)
}

/// Total PFC mechanical power deviation on the system base.
pub fn compute_p_pfc_tot(machines: &[MachineParams], pfc: &[f64], s_base: f64) -> Result<f64> {
    pfc_sum(machines, pfc.iter().copied(), s_base)
}

/// Aggregated model constants of a fleet: total rating and inertia, droop
/// and setpoint of the PFC units on the total base, and the droop-weighted
/// governor time constants.
pub fn aggregate_params(machines: &[MachineParams], f_nom: f64) -> Result<AggParams> {
    let s_b: f64 = machines.iter().map(|m| m.s_b).sum();
    let h_tot = compute_h_tot(machines)?;
    let k_p = pfc_sum(machines, machines.iter().map(|m| m.k_droop), s_b)?;
    let p_m_pfc = compute_p_m_pfc(machines, s_b)?;
    let wsum: f64 = machines.iter().filter(|m| m.is_pfc).map(|m| m.k_droop * m.s_b).sum();
    let t_p = machines.iter().filter(|m| m.is_pfc).map(|m| m.k_droop * m.s_b * m.t_p).sum::<f64>() / wsum;
    let t_z = machines.iter().filter(|m| m.is_pfc).map(|m| m.k_droop * m.s_b * m.t_z).sum::<f64>() / wsum;
    Ok(AggParams { s_b, h_tot, omega0: OMEGA0, k_p, p_m_pfc, t_p, t_z, f_nom })
}

/// Ten-unit fleet whose aggregates reproduce the continental parameters.
///
/// Eight PFC units and two units without PFC. The seed jitters the PFC
/// inertias, droops and setpoints; the draws are then shifted or rescaled so
/// that total inertia, total droop and the PFC setpoint hit their targets
/// exactly. Unit 7 is the small PFC unit (about 2% of generation) used for
/// the reference outage.
pub fn default_fleet(seed: u64) -> Vec<MachineParams> {
    let agg = AggParams::reference();
    let shares = [0.22, 0.18, 0.15, 0.125, 0.10, 0.085, 0.06, 0.02, 0.04, 0.02];
    let n_pfc = 8;
    let unc_h = [2.5, 3.0];
    let unc_p_m = 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_draw = Uniform::new(2.5, 6.0);
    let jitter = Uniform::new(0.8, 1.2);
    let mut h: Vec<f64> = (0..n_pfc).map(|_| h_draw.sample(&mut rng)).collect();
    let mut k: Vec<f64> = (0..n_pfc).map(|_| jitter.sample(&mut rng)).collect();
    let mut p_m: Vec<f64> = (0..n_pfc).map(|_| jitter.sample(&mut rng)).collect();

    // shift PFC inertias (clamped to [2.5, 6]) until the weighted total matches
    let unc_weight: f64 = unc_h.iter().zip(&shares[n_pfc..]).map(|(h, s)| h * s).sum();
    let target = agg.h_tot - unc_weight;
    let total = |h: &[f64], c: f64| -> f64 {
        h.iter().zip(&shares[..n_pfc]).map(|(h, s)| (h + c).clamp(2.5, 6.0) * s).sum()
    };
    let (mut lo, mut hi) = (-4.0, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(&h, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    for v in &mut h {
        *v = (*v + shift).clamp(2.5, 6.0);
    }
    // absorb the bisection residual in the largest unit
    let residual = target - total(&h, 0.0);
    h[0] += residual / shares[0];

    let scale_k = agg.k_p / k.iter().zip(&shares).map(|(k, s)| k * s).sum::<f64>();
    k.iter_mut().for_each(|v| *v *= scale_k);
    let scale_p = agg.p_m_pfc / p_m.iter().zip(&shares).map(|(p, s)| p * s).sum::<f64>();
    p_m.iter_mut().for_each(|v| *v *= scale_p);

    // coupling and damping proportional to inertia make the reference angle
    // and speed the centre of inertia and give every unit the same swing mode
    let kappa = 0.5;
    let damp = 7.0;
    let mut fleet: Vec<MachineParams> = (0..n_pfc)
        .map(|i| MachineParams {
            h: h[i],
            s_b: shares[i] * agg.s_b,
            p_m: p_m[i],
            k_droop: k[i],
            t_p: agg.t_p,
            t_z: agg.t_z,
            is_pfc: true,
            k_sync: kappa * h[i],
            damping: damp * h[i],
        })
        .collect();
    for (j, &hj) in unc_h.iter().enumerate() {
        fleet.push(MachineParams {
            h: hj,
            s_b: shares[n_pfc + j] * agg.s_b,
            p_m: unc_p_m,
            k_droop: 0.0,
            t_p: agg.t_p,
            t_z: agg.t_z,
            is_pfc: false,
            k_sync: kappa * hj,
            damping: damp * hj,
        });
    }
    fleet
}

#[derive(Debug, Clone, Copy)]
struct Ramp {
    machine: usize,
    start: f64,
    delta: f64,
    duration: f64,
}

impl Ramp {
    fn value(&self, t: f64) -> f64 {
        if t <= self.start {
            0.0
        } else if self.duration <= 0.0 || t >= self.start + self.duration {
            self.delta
        } else {
            self.delta * (t - self.start) / self.duration
        }
    }
}

/// Fleet state between events: which units are online, the load, and the
/// setpoint ramps started so far.
#[derive(Debug, Clone)]
struct Fleet {
    machines: Vec<MachineParams>,
    online: Vec<bool>,
    /// Base of every emitted power, fixed at the pre-disturbance total rating.
    s_base: f64,
    /// Load [pu on `s_base`].
    load: f64,
    base_p_m: Vec<f64>,
    ramps: Vec<Ramp>,
    omega_base: f64,
}

/// Powers of the online machines at one instant, own base.
struct Powers {
    p_e: Vec<f64>,
    coupling: Vec<f64>,
    pfc: Vec<f64>,
    p_m: Vec<f64>,
}

impl Fleet {
    fn new(machines: &[MachineParams], f_nom: f64) -> Result<Self> {
        if machines.is_empty() {
            return Err(Error::InvalidParams("empty fleet".into()));
        }
        for m in machines {
            m.validate()?;
        }
        if !machines.iter().any(|m| m.is_pfc) {
            return Err(Error::InvalidParams("fleet needs at least one PFC unit".into()));
        }
        let s_base: f64 = machines.iter().map(|m| m.s_b).sum();
        let load = machines.iter().map(|m| m.s_b * m.p_m).sum::<f64>() / s_base;
        Ok(Self {
            machines: machines.to_vec(),
            online: vec![true; machines.len()],
            s_base,
            load,
            base_p_m: machines.iter().map(|m| m.p_m).collect(),
            ramps: Vec::new(),
            omega_base: 2.0 * PI * f_nom,
        })
    }

    fn p_m(&self, i: usize, t: f64) -> f64 {
        self.base_p_m[i] + self.ramps.iter().filter(|r| r.machine == i).map(|r| r.value(t)).sum::<f64>()
    }

    fn online_machines(&self) -> impl Iterator<Item = (usize, &MachineParams)> {
        self.machines.iter().enumerate().filter(move |(i, _)| self.online[*i])
    }

    /// Load share of each machine: proportional to its synchronizing power.
    fn share(&self, i: usize) -> f64 {
        let total: f64 = self.online_machines().map(|(_, m)| m.s_b * m.k_sync).sum();
        let m = &self.machines[i];
        m.s_b * m.k_sync / total
    }

    fn powers(&self, t: f64, y: &[f64]) -> Powers {
        let n = self.machines.len();
        let (mut ks, mut kd, mut ds, mut dw) = (0.0, 0.0, 0.0, 0.0);
        for (i, m) in self.online_machines() {
            let (delta, omega) = (y[STATES_PER_MACHINE * i], y[STATES_PER_MACHINE * i + 1]);
            ks += m.s_b * m.k_sync;
            kd += m.s_b * m.k_sync * delta;
            ds += m.s_b * m.damping;
            dw += m.s_b * m.damping * omega;
        }
        let delta_ref = kd / ks;
        let omega_ref = if ds > 0.0 { dw / ds } else { 0.0 };

        let mut p = Powers { p_e: vec![0.0; n], coupling: vec![0.0; n], pfc: vec![0.0; n], p_m: vec![0.0; n] };
        for (i, m) in self.online_machines() {
            let base = STATES_PER_MACHINE * i;
            let (delta, omega, g) = (y[base], y[base + 1], y[base + 2]);
            let coupling = m.k_sync * (delta - delta_ref) + m.damping * (omega - omega_ref);
            p.coupling[i] = coupling;
            p.p_e[i] = self.s_base * self.share(i) * self.load / m.s_b + coupling;
            p.pfc[i] = if m.is_pfc { m.governor().output(omega, g) } else { 0.0 };
            p.p_m[i] = self.p_m(i, t);
        }
        p
    }

    fn omega_coi(&self, y: &[f64]) -> f64 {
        let (num, den) = self
            .online_machines()
            .fold((0.0, 0.0), |(n, d), (i, m)| (n + m.kinetic_weight() * y[STATES_PER_MACHINE * i + 1], d + m.kinetic_weight()));
        num / den
    }

    fn rhs(&self, t: f64, y: &[f64], d: &mut [f64]) -> Result<()> {
        d.fill(0.0);
        let p = self.powers(t, y);
        let omega_coi = self.omega_coi(y);
        for (i, m) in self.online_machines() {
            let base = STATES_PER_MACHINE * i;
            let (omega, g) = (y[base + 1], y[base + 2]);
            if !(omega.abs() >= Y_GUARD) {
                return Err(Error::FrequencyCollapse { t, omega, guard: Y_GUARD });
            }
            d[base] = self.omega_base * (omega - omega_coi);
            d[base + 1] = OMEGA0 * OMEGA0 / (2.0 * m.h) * (p.p_m[i] + p.pfc[i] - p.p_e[i]) / omega;
            d[base + 2] = if m.is_pfc { m.governor().lag_rate(omega, g) } else { 0.0 };
        }
        Ok(())
    }

    /// Equilibrium: nominal speed, settled governors and angles that make
    /// every unit's electrical output equal its setpoint.
    fn equilibrium(&self) -> Vec<f64> {
        let mut y = vec![0.0; STATES_PER_MACHINE * self.machines.len()];
        for (i, m) in self.online_machines() {
            let base = STATES_PER_MACHINE * i;
            let offset = m.p_m - self.s_base * self.share(i) * self.load / m.s_b;
            y[base] = offset / m.k_sync;
            y[base + 1] = OMEGA0;
        }
        y
    }

    fn apply(&mut self, ev: &Event, t_event: f64) -> Result<()> {
        let check = |i: usize| -> Result<()> {
            if i >= self.machines.len() {
                return Err(Error::InvalidScenario(format!("event refers to machine {i}, fleet has {}", self.machines.len())));
            }
            if !self.online[i] {
                return Err(Error::InvalidScenario(format!("machine {i} is already offline")));
            }
            Ok(())
        };
        match ev.kind {
            EventKind::Outage { machine } => {
                check(machine)?;
                self.online[machine] = false;
                if !self.online_machines().any(|(_, m)| m.is_pfc) {
                    return Err(Error::InvalidScenario("outage leaves no PFC unit online".into()));
                }
            }
            EventKind::LoadStep { delta } => self.load += delta,
            EventKind::RescheduleRamp { machine, delta, ramp_time } => {
                check(machine)?;
                self.ramps.push(Ramp { machine, start: t_event, delta, duration: ramp_time });
            }
        }
        Ok(())
    }

    fn survivors(&self) -> Vec<MachineParams> {
        self.online_machines().map(|(_, m)| *m).collect()
    }

    fn sample(&self, t: f64, y: &[f64]) -> Result<(Sample, TruthPoint)> {
        let p = self.powers(t, y);
        let mut live = Vec::new();
        let mut speeds = Vec::new();
        let mut p_e = Vec::new();
        let mut pfc = Vec::new();
        let mut p_m = Vec::new();
        for (i, m) in self.online_machines() {
            live.push(*m);
            p_e.push(p.p_e[i]);
            pfc.push(p.pfc[i]);
            let mut m_now = *m;
            m_now.p_m = p.p_m[i];
            p_m.push(m_now);
            if m.is_pfc {
                speeds.push(y[STATES_PER_MACHINE * i + 1]);
            }
        }
        let sample = Sample {
            t,
            omega_av: compute_avg_freq(&speeds)?,
            p_pfc_tot: compute_p_pfc_tot(&live, &pfc, self.s_base)?,
            p_e_pfc: compute_p_e_pfc(&live, &p_e, self.s_base)?,
        };
        let truth = TruthPoint { t, h_tot: compute_h_tot(&live)?, p_m_pfc: compute_p_m_pfc(&p_m, self.s_base)? };
        Ok((sample, truth))
    }
}

/// Result of a fleet simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetRun {
    pub run: SimRun,
    /// Base of the emitted powers: the total rating before any outage [MW].
    pub s_base: f64,
    /// Largest `|sum_i S_i P_coupling,i| / s_base` seen at the sample instants.
    pub max_coupling_imbalance: f64,
    /// Units still online at the end.
    pub survivors: Vec<MachineParams>,
}

/// Integrate the fleet from equilibrium through the scenario's events.
pub fn simulate_scenario(machines: &[MachineParams], spec: &ScenarioSpec, f_nom: f64) -> Result<FleetRun> {
    spec.validate()?;
    let mut fleet = Fleet::new(machines, f_nom)?;
    let mut events = spec.events.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_event = 0;

    let n = sample_count(spec.duration, spec.dt);
    let mut y = fleet.equilibrium();
    let mut ws = Rk4Workspace::new(y.len());
    let mut out = SimRun { samples: Vec::with_capacity(n), truth: Vec::with_capacity(n) };
    let mut max_imbalance = 0.0f64;

    for k in 0..n {
        let t = k as f64 * spec.dt;
        while next_event < events.len() && event_index(events[next_event].time, spec.dt) <= k {
            fleet.apply(&events[next_event], t)?;
            next_event += 1;
        }
        let (sample, truth) = fleet.sample(t, &y)?;
        let p = fleet.powers(t, &y);
        let imbalance: f64 = fleet.online_machines().map(|(i, m)| m.s_b * p.coupling[i]).sum::<f64>() / fleet.s_base;
        max_imbalance = max_imbalance.max(imbalance.abs());
        out.samples.push(sample);
        out.truth.push(truth);
        if k + 1 < n {
            rk4_step(&mut y, t, spec.dt, &mut ws, |t, y, d| fleet.rhs(t, y, d))?;
        }
    }

    if let Some(noise) = &spec.noise {
        add_noise(&mut out.samples, noise, spec.seed)?;
    }
    Ok(FleetRun { run: out, s_base: fleet.s_base, max_coupling_imbalance: max_imbalance, survivors: fleet.survivors() })
}

/// Add independent Gaussian noise to the three measured channels.
pub fn add_noise(samples: &mut [Sample], noise: &NoiseSpec, seed: u64) -> Result<()> {
    let dist = |std: f64| {
        Normal::new(0.0, std).map_err(|e| Error::InvalidScenario(format!("noise: {e}")))
    };
    let (nw, np, ne) = (dist(noise.omega_std)?, dist(noise.p_pfc_std)?, dist(noise.p_e_std)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in samples {
        s.omega_av += nw.sample(&mut rng);
        s.p_pfc_tot += np.sample(&mut rng);
        s.p_e_pfc += ne.sample(&mut rng);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(h: f64, s_b: f64) -> MachineParams {
        MachineParams {
            h,
            s_b,
            p_m: 0.5,
            k_droop: 1.0,
            t_p: 12.983,
            t_z: 6.0,
            is_pfc: true,
            k_sync: 0.5 * h,
            damping: 7.0 * h,
        }
    }

    #[test]
    fn coi_examples() {
        let a = unit(3.0, 100.0);
        assert!((compute_coi(&[1.01, 0.99], &[a, a]).unwrap() - 1.0).abs() < 1e-15);
        let fleet = [unit(2.0, 10.0), unit(6.0, 70.0), unit(3.5, 1.0)];
        assert!((compute_coi(&[0.97; 3], &fleet).unwrap() - 0.97).abs() < 1e-15);
        // H S weights (2, 1)
        let w = [unit(2.0, 1.0), unit(1.0, 1.0)];
        assert!((compute_coi(&[1.0, 0.7], &w).unwrap() - 0.9).abs() < 1e-15);
        assert!(compute_coi(&[], &[]).is_err());
        assert!(compute_coi(&[1.0], &w).is_err());
    }

    #[test]
    fn h_tot_examples() {
        assert_eq!(compute_h_tot(&[unit(4.2, 90.0)]).unwrap(), 4.2);
        let h = compute_h_tot(&[unit(4.0, 100.0), unit(2.0, 300.0)]).unwrap();
        assert!((h - 2.5).abs() < 1e-15);
        // removing a unit at the mean leaves the mean unchanged
        let fleet = [unit(4.0, 100.0), unit(2.0, 300.0), unit(2.5, 50.0)];
        let before = compute_h_tot(&fleet).unwrap();
        let after = compute_h_tot(&fleet[..2]).unwrap();
        assert!((before - after).abs() < 1e-15);
        assert!(compute_h_tot(&[]).is_err());
    }

    #[test]
    fn pfc_aggregates_need_a_pfc_unit() {
        let mut m = unit(3.0, 100.0);
        m.is_pfc = false;
        m.k_droop = 0.0;
        assert!(compute_p_m_pfc(&[m], 100.0).is_err());
        assert!(compute_avg_freq(&[]).is_err());
        let mut fleet = vec![unit(3.0, 100.0), m];
        fleet[0].p_m = 0.4;
        assert!((compute_p_m_pfc(&fleet, 200.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((compute_p_e_pfc(&fleet, &[0.6, 0.9], 200.0).unwrap() - 0.3).abs() < 1e-15);
        assert!((compute_p_pfc_tot(&fleet, &[0.01, 0.0], 200.0).unwrap() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn default_fleet_matches_aggregates() {
        for seed in [0, 1, 42, 12345] {
            let fleet = default_fleet(seed);
            assert_eq!(fleet.len(), 10);
            assert_eq!(fleet.iter().filter(|m| m.is_pfc).count(), 8);
            for m in &fleet {
                m.validate().unwrap();
                assert!(m.h >= 2.5 - 1e-9 && m.h <= 6.0 + 1e-9, "{}", m.h);
            }
            let agg = aggregate_params(&fleet, 50.0).unwrap();
            let table = AggParams::reference();
            assert!((agg.h_tot - table.h_tot).abs() < 1e-12);
            assert!((agg.k_p - table.k_p).abs() < 1e-12);
            assert!((agg.p_m_pfc - table.p_m_pfc).abs() < 1e-12);
            assert!((agg.s_b - table.s_b).abs() < 1e-6);
            assert!((agg.t_p - table.t_p).abs() < 1e-12);
            let gen: f64 = fleet.iter().map(|m| m.p_m * m.s_b).sum();
            let share7 = fleet[7].p_m * fleet[7].s_b / gen;
            assert!(share7 > 0.015 && share7 < 0.03, "{share7}");
        }
        assert_ne!(default_fleet(1), default_fleet(2));
    }

    #[test]
    fn equilibrium_without_events_is_constant() {
        let fleet = default_fleet(3);
        let spec = ScenarioSpec { duration: 5.0, dt: 1e-3, events: vec![], noise: None, seed: 0 };
        let out = simulate_scenario(&fleet, &spec, 50.0).unwrap();
        let first = out.run.samples[0];
        assert!((first.omega_av - 1.0).abs() < 1e-15);
        for s in &out.run.samples {
            assert!((s.omega_av - 1.0).abs() < 1e-12);
            assert!(s.p_pfc_tot.abs() < 1e-12);
            assert!((s.p_e_pfc - first.p_e_pfc).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        let ok = ScenarioSpec { duration: 10.0, dt: 1e-3, events: vec![], noise: None, seed: 0 };
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.events.push(Event { time: 10.0, kind: EventKind::LoadStep { delta: 0.1 } });
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.dt = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invalid_machine_index() {
        let fleet = default_fleet(0);
        let spec = ScenarioSpec {
            duration: 1.0,
            dt: 1e-3,
            events: vec![Event { time: 0.5, kind: EventKind::Outage { machine: 10 } }],
            noise: None,
            seed: 0,
        };
        assert!(matches!(simulate_scenario(&fleet, &spec, 50.0), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn machine_validation() {
        let mut m = unit(3.0, 100.0);
        m.k_droop = 0.0;
        assert!(m.validate().is_err());
        let mut m = unit(3.0, 100.0);
        m.t_z = 13.0;
        assert!(m.validate().is_err());
        let mut m = unit(3.0, 100.0);
        m.h = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let base = vec![Sample { t: 0.0, omega_av: 1.0, p_pfc_tot: 0.0, p_e_pfc: 0.5 }; 50];
        let spec = NoiseSpec { omega_std: 1e-5, p_pfc_std: 1e-4, p_e_std: 0.0 };
        let (mut a, mut b, mut c) = (base.clone(), base.clone(), base.clone());
        add_noise(&mut a, &spec, 7).unwrap();
        add_noise(&mut b, &spec, 7).unwrap();
        add_noise(&mut c, &spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|s| s.p_e_pfc == 0.5));
    }
}
