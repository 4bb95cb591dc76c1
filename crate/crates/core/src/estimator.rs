//! DREM estimator of `eta = (1/H_tot, P_m,PFC/H_tot)`.
//!
//! Per sample: filter the measurements into the scalar regression
//! `z = eta1 xi2 + eta2 xi3`, extend it with a pure delay, mix the 2x2
//! system with its adjugate into `Z_i = Delta eta_i`, and run one scalar
//! gradient estimator per parameter.
//!
//! `z` is the dirty derivative of `omega_av`, which is exact for inputs
//! that are linear between samples and equals the held low-pass of the
//! difference quotient. The `xi` channels are therefore fed the interval
//! average (trapezoid) of their arguments through the held low-pass, so
//! that both sides of the regression see the same discretization.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{DelayLine, DirtyDerivative, LowPass};
use crate::model::{AggParams, Governor, Sample, TrueTheta, Y_GUARD};

/// Below this `eta1_hat` the physical parameters are not reported.
pub const EPS_DIV: f64 = 1e-6;

/// Tolerance on the sample spacing of an input stream [s].
pub const SPACING_TOL: f64 = 1e-9;

/// Where `P_PFC,tot` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PfcSource {
    /// The measured channel of the sample stream.
    Measured,
    /// Rebuilt from `omega_av` with a lumped TGOV1 governor.
    Reconstructed { k_p: f64, t_p: f64, t_z: f64 },
}

impl PfcSource {
    pub fn reconstructed_from(params: &AggParams) -> Self {
        PfcSource::Reconstructed { k_p: params.k_p, t_p: params.t_p, t_z: params.t_z }
    }
}

/// Discretization of the gradient law `eta_hat' = gamma Delta (Z - Delta eta_hat)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Explicit Euler; unstable once `gamma Delta^2 dt > 2`.
    #[default]
    Euler,
    /// Exact solution over the step with `Delta` and `Z` held; stable for any gain.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Filter pole [1/s].
    pub alpha: f64,
    /// Extension delay [s].
    pub d: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Sample period [s].
    pub dt: f64,
    /// Updates are frozen before this time after the first sample [s];
    /// defaults to `d + 5/alpha`.
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default = "default_y_guard")]
    pub y_guard: f64,
    pub eta_init: [f64; 2],
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    #[serde(default = "default_pfc_source")]
    pub pfc_source: PfcSource,
    #[serde(default)]
    pub update_rule: UpdateRule,
}

fn default_y_guard() -> f64 {
    Y_GUARD
}

fn default_omega0() -> f64 {
    1.0
}

fn default_pfc_source() -> PfcSource {
    PfcSource::Measured
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::reference_gains(&AggParams::reference().theta())
    }
}

impl EstimatorConfig {
    /// Gains of the reference experiment, started at `(0.3 eta1, 0.2 eta2)`.
    pub fn reference_gains(theta: &TrueTheta) -> Self {
        Self {
            alpha: 1e3,
            d: 2.0,
            gamma1: 1e10,
            gamma2: 1e10,
            dt: 1e-3,
            warmup: None,
            y_guard: Y_GUARD,
            eta_init: [0.3 * theta.eta1, 0.2 * theta.eta2],
            omega0: 1.0,
            pfc_source: PfcSource::Measured,
            update_rule: UpdateRule::Euler,
        }
    }

    pub fn warmup(&self) -> f64 {
        self.warmup.unwrap_or(self.d + 5.0 / self.alpha)
    }

    pub fn b1(&self) -> f64 {
        0.5 * self.omega0 * self.omega0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(format!("estimator: {msg}")));
        let finite = [self.alpha, self.d, self.gamma1, self.gamma2, self.dt, self.y_guard, self.omega0];
        if !finite.iter().chain(&self.eta_init).all(|v| v.is_finite()) {
            return bad("all values must be finite".into());
        }
        if self.alpha <= 0.0 {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.dt <= 0.0 {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.gamma1 <= 0.0 || self.gamma2 <= 0.0 {
            return bad("gains must be positive".into());
        }
        if self.y_guard <= 0.0 || self.omega0 <= 0.0 {
            return bad("y_guard and omega0 must be positive".into());
        }
        crate::filters::delay_samples(self.d, self.dt)?;
        if !(self.warmup() >= self.d) {
            return bad(format!("warm-up {} s is shorter than the delay {} s", self.warmup(), self.d));
        }
        if let PfcSource::Reconstructed { k_p, t_p, t_z } = self.pfc_source {
            if !(k_p >= 0.0 && t_p > 0.0 && t_z >= 0.0 && t_z < t_p) {
                return bad("reconstruction governor needs k_p >= 0 and 0 <= t_z < t_p".into());
            }
        }
        Ok(())
    }
}

/// Regression internals at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressorSnapshot {
    pub t: f64,
    pub z: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub z_f: f64,
    pub xi2_f: f64,
    pub xi3_f: f64,
    pub delta: f64,
    pub z_mix: [f64; 2],
    /// False before the end of the warm-up.
    pub valid: bool,
}

/// Filtered regression `(z, xi2, xi3)` before extension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub z: f64,
    pub xi2: f64,
    pub xi3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub t: f64,
    pub eta1_hat: f64,
    pub eta2_hat: f64,
    /// `None` while `eta1_hat <= EPS_DIV`.
    pub h_tot_hat: Option<f64>,
    pub p_m_pfc_hat: Option<f64>,
    /// Truncated L2 norm of `Delta` accumulated since the end of the warm-up.
    pub delta_l2: f64,
}

/// Adjugate mixing of the extended system with rows `(xi2, xi3)` and
/// `(xi2_f, xi3_f)`: returns `(Delta, [Z1, Z2])`.
pub fn mix(phi: [f64; 2], phi_f: [f64; 2], z: f64, z_f: f64) -> (f64, [f64; 2]) {
    let delta = phi[0] * phi_f[1] - phi[1] * phi_f[0];
    let z1 = phi_f[1] * z - phi[1] * z_f;
    let z2 = phi[0] * z_f - phi_f[0] * z;
    (delta, [z1, z2])
}

/// One step of the scalar gradient estimator. Returns the new estimate and
/// `gamma Delta^2 dt`.
pub fn gradient_update(eta_hat: f64, delta: f64, z_mix: f64, gamma: f64, dt: f64, rule: UpdateRule) -> (f64, f64) {
    if delta == 0.0 {
        return (eta_hat, 0.0);
    }
    let x = gamma * delta * delta * dt;
    let gain = match rule {
        UpdateRule::Euler => gamma * dt,
        // (1 - e^{-x}) / (Delta^2)
        UpdateRule::Exponential => gamma * dt * (-(-x).exp_m1() / x),
    };
    (eta_hat + gain * delta * (z_mix - delta * eta_hat), x)
}

/// `(H_tot, P_m,PFC)` from `(eta1, eta2)`.
pub fn recover_parameters(eta1_hat: f64, eta2_hat: f64) -> Result<(f64, f64)> {
    if !(eta1_hat > EPS_DIV) {
        return Err(Error::NotIdentifiable { eta1: eta1_hat, eps: EPS_DIV });
    }
    Ok((1.0 / eta1_hat, eta2_hat / eta1_hat))
}

/// Running `sqrt(sum Delta^2 dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExcitationNorm {
    sum_sq: f64,
}

impl ExcitationNorm {
    pub fn step(&mut self, delta: f64, dt: f64) -> f64 {
        self.sum_sq += delta * delta * dt;
        self.value()
    }

    pub fn value(&self) -> f64 {
        self.sum_sq.sqrt()
    }
}

/// Lumped TGOV1 driven by the measured frequency, linear between samples.
#[derive(Debug, Clone)]
pub struct GovernorObserver {
    gov: Governor,
    lag: LowPass,
    primed: bool,
}

impl GovernorObserver {
    pub fn new(gov: Governor) -> Result<Self> {
        Ok(Self { lag: LowPass::new(1.0 / gov.t_p)?, gov, primed: false })
    }

    /// `P_PFC,tot` at the current sample; the first call starts settled.
    pub fn step(&mut self, omega: f64, dt: f64) -> f64 {
        let u = self.gov.droop_signal(omega);
        let drive = (1.0 - self.gov.lead_ratio()) * u;
        let g = if self.primed {
            self.lag.step_linear(drive, dt)
        } else {
            self.lag.prime(drive);
            self.primed = true;
            drive
        };
        self.gov.lead_ratio() * u + g
    }
}

/// `P_PFC,tot` rebuilt from the frequency channel of a stream.
pub fn reconstruct_pfc(samples: &[Sample], gov: Governor) -> Result<Vec<f64>> {
    let mut obs = GovernorObserver::new(gov)?;
    let dt = match samples {
        [a, b, ..] => b.t - a.t,
        _ => 0.0,
    };
    Ok(samples.iter().map(|s| obs.step(s.omega_av, dt)).collect())
}

#[derive(Debug, Clone)]
struct Channels {
    z: DirtyDerivative,
    xi2: LowPass,
    xi3: LowPass,
    gov: Option<GovernorObserver>,
    prev_args: [f64; 2],
    primed: bool,
}

/// Streaming estimator; feed samples in time order with [`Estimator::push`].
#[derive(Debug, Clone)]
pub struct Estimator {
    cfg: EstimatorConfig,
    b1: f64,
    ch: Channels,
    delay_z: DelayLine,
    delay_xi2: DelayLine,
    delay_xi3: DelayLine,
    eta: [f64; 2],
    norm: ExcitationNorm,
    t0: Option<f64>,
    t_prev: f64,
    unstable_steps: u64,
}

impl Estimator {
    pub fn new(cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        let gov = match cfg.pfc_source {
            PfcSource::Measured => None,
            PfcSource::Reconstructed { k_p, t_p, t_z } => {
                Some(GovernorObserver::new(Governor { k_p, t_p, t_z, omega0: cfg.omega0 })?)
            }
        };
        Ok(Self {
            b1: cfg.b1(),
            ch: Channels {
                z: DirtyDerivative::new(cfg.alpha)?,
                xi2: LowPass::new(cfg.alpha)?,
                xi3: LowPass::new(cfg.alpha)?,
                gov,
                prev_args: [0.0; 2],
                primed: false,
            },
            delay_z: DelayLine::new(cfg.d, cfg.dt)?,
            delay_xi2: DelayLine::new(cfg.d, cfg.dt)?,
            delay_xi3: DelayLine::new(cfg.d, cfg.dt)?,
            eta: cfg.eta_init,
            norm: ExcitationNorm::default(),
            t0: None,
            t_prev: 0.0,
            unstable_steps: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn estimates(&self) -> [f64; 2] {
        self.eta
    }

    /// Number of updates so far with `gamma Delta^2 dt > 2`.
    pub fn unstable_steps(&self) -> u64 {
        self.unstable_steps
    }

    /// `P_PFC,tot` as the estimator sees it.
    fn pfc(&mut self, s: &Sample) -> f64 {
        match &mut self.ch.gov {
            None => s.p_pfc_tot,
            Some(obs) => obs.step(s.omega_av, self.cfg.dt),
        }
    }

    /// Filter one sample into the scalar regression. The first sample puts
    /// every filter in steady state.
    pub fn build_regressor(&mut self, s: &Sample) -> Result<Regression> {
        let y = s.omega_av;
        if !(y.abs() >= self.cfg.y_guard) {
            return Err(Error::FrequencyCollapse { t: s.t, omega: y, guard: self.cfg.y_guard });
        }
        let first = !self.ch.primed;
        self.ch.primed = true;
        let x = self.pfc(s);
        let args = [self.b1 * (x - s.p_e_pfc) / y, self.b1 / y];
        let dt = self.cfg.dt;
        let reg = if first {
            self.ch.z.prime(y - self.cfg.omega0);
            self.ch.xi2.prime(args[0]);
            self.ch.xi3.prime(args[1]);
            Regression { z: 0.0, xi2: args[0], xi3: args[1] }
        } else {
            let [p2, p3] = self.ch.prev_args;
            Regression {
                z: self.ch.z.step(y - self.cfg.omega0, dt),
                xi2: self.ch.xi2.step(0.5 * (p2 + args[0]), dt),
                xi3: self.ch.xi3.step(0.5 * (p3 + args[1]), dt),
            }
        };
        self.ch.prev_args = args;
        Ok(reg)
    }

    /// Consume one sample.
    pub fn push(&mut self, s: &Sample) -> Result<(EstimateRecord, RegressorSnapshot)> {
        if self.t0.is_some() {
            let gap = s.t - self.t_prev;
            if !((gap - self.cfg.dt).abs() <= SPACING_TOL) {
                return Err(Error::SpacingMismatch { t: s.t, expected: self.cfg.dt, got: gap });
            }
        }
        let reg = self.build_regressor(s)?;
        let t0 = *self.t0.get_or_insert(s.t);
        self.t_prev = s.t;

        let z_f = self.delay_z.step(reg.z);
        let xi2_f = self.delay_xi2.step(reg.xi2);
        let xi3_f = self.delay_xi3.step(reg.xi3);
        let (delta, z_mix) = mix([reg.xi2, reg.xi3], [xi2_f, xi3_f], reg.z, z_f);
        let valid = s.t - t0 >= self.cfg.warmup() - SPACING_TOL;

        if valid {
            let gammas = [self.cfg.gamma1, self.cfg.gamma2];
            let mut unstable = false;
            for i in 0..2 {
                let (next, x) = gradient_update(self.eta[i], delta, z_mix[i], gammas[i], self.cfg.dt, self.cfg.update_rule);
                self.eta[i] = next;
                unstable |= x > 2.0 && self.cfg.update_rule == UpdateRule::Euler;
            }
            if unstable {
                if self.unstable_steps == 0 {
                    warn!("t = {} s: gamma Delta^2 dt exceeds 2, the Euler update may diverge", s.t);
                }
                self.unstable_steps += 1;
            }
            self.norm.step(delta, self.cfg.dt);
        }

        let recovered = recover_parameters(self.eta[0], self.eta[1]).ok();
        let record = EstimateRecord {
            t: s.t,
            eta1_hat: self.eta[0],
            eta2_hat: self.eta[1],
            h_tot_hat: recovered.map(|r| r.0),
            p_m_pfc_hat: recovered.map(|r| r.1),
            delta_l2: self.norm.value(),
        };
        let snap = RegressorSnapshot {
            t: s.t,
            z: reg.z,
            xi2: reg.xi2,
            xi3: reg.xi3,
            z_f,
            xi2_f,
            xi3_f,
            delta,
            z_mix,
            valid,
        };
        Ok((record, snap))
    }
}

/// Estimates and, if requested, regression internals of a whole stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimatorRun {
    pub records: Vec<EstimateRecord>,
    pub snapshots: Vec<RegressorSnapshot>,
    /// Updates flagged as Euler-unstable.
    pub unstable_steps: u64,
}

pub fn run_estimator(samples: &[Sample], cfg: &EstimatorConfig, keep_snapshots: bool) -> Result<EstimatorRun> {
    let mut est = Estimator::new(cfg.clone())?;
    let mut run = EstimatorRun {
        records: Vec::with_capacity(samples.len()),
        snapshots: Vec::with_capacity(if keep_snapshots { samples.len() } else { 0 }),
        unstable_steps: 0,
    };
    for s in samples {
        let (rec, snap) = est.push(s)?;
        run.records.push(rec);
        if keep_snapshots {
            run.snapshots.push(snap);
        }
    }
    run.unstable_steps = est.unstable_steps();
    Ok(run)
}
