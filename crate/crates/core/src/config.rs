//! Run configuration: TOML file with `[system]`, `[scenario]`, `[estimator]`,
//! `[metrics]` and `[output]` sections, plus the built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csv_io::FreqUnit;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, PfcSource, UpdateRule};
use crate::model::{AggEvent, AggEventKind, AggParams, TrueTheta, NOMINAL_OUTAGE_MW};
use crate::truth_sim::{Event, EventKind, MachineParams, NoiseSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Aggregated constants; drive the aggregated generator and the replays.
    #[serde(default)]
    pub system: AggParams,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub estimator: EstimatorOverrides,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "run".into()
}

/// Which ground-truth generator produces the measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Aggregated {
        duration: f64,
        dt: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        noise: Option<NoiseSpec>,
        #[serde(default)]
        events: Vec<AggEvent>,
    },
    Fleet {
        duration: f64,
        dt: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        noise: Option<NoiseSpec>,
        #[serde(default)]
        events: Vec<Event>,
        /// Defaults to the seeded ten-unit fleet.
        #[serde(default)]
        machines: Option<Vec<MachineParams>>,
    },
}

impl ScenarioConfig {
    pub fn dt(&self) -> f64 {
        match self {
            ScenarioConfig::Aggregated { dt, .. } | ScenarioConfig::Fleet { dt, .. } => *dt,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ScenarioConfig::Aggregated { seed, .. } | ScenarioConfig::Fleet { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            ScenarioConfig::Aggregated { seed, .. } | ScenarioConfig::Fleet { seed, .. } => *seed = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PfcSourceKind {
    Measured,
    Reconstructed,
}

/// Estimator settings layered over the reference configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorOverrides {
    pub alpha: Option<f64>,
    pub d: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    /// Defaults to the scenario sample period.
    pub dt: Option<f64>,
    pub warmup: Option<f64>,
    pub y_guard: Option<f64>,
    pub eta_init: Option<[f64; 2]>,
    /// Initial estimates as multiples of the true initial parameters; used
    /// when `eta_init` is absent. Defaults to `[0.3, 0.2]`.
    pub eta_init_scale: Option<[f64; 2]>,
    pub omega0: Option<f64>,
    pub pfc_source: Option<PfcSourceKind>,
    pub update_rule: Option<UpdateRule>,
}

impl EstimatorOverrides {
    /// Overlay `other` on top of `self`.
    pub fn merge(&mut self, other: &EstimatorOverrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(alpha, d, gamma1, gamma2, dt, warmup, y_guard, eta_init, eta_init_scale, omega0, pfc_source, update_rule);
    }

    /// Full configuration given the true initial parameters (for the default
    /// start), the stream sample period and the governor used when the PFC
    /// power is reconstructed.
    pub fn resolve(&self, theta0: &TrueTheta, dt: f64, governor: &AggParams) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::reference_gains(theta0);
        let scale = self.eta_init_scale.unwrap_or([0.3, 0.2]);
        cfg.eta_init = self.eta_init.unwrap_or([scale[0] * theta0.eta1, scale[1] * theta0.eta2]);
        cfg.dt = self.dt.unwrap_or(dt);
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(alpha, d, gamma1, gamma2, y_guard, omega0, update_rule);
        if self.warmup.is_some() {
            cfg.warmup = self.warmup;
        }
        if self.pfc_source == Some(PfcSourceKind::Reconstructed) {
            cfg.pfc_source = PfcSource::reconstructed_from(governor);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Averaging window of the mean relative error [s].
    #[serde(default)]
    pub e_avg_window: Option<[f64; 2]>,
    /// Replay the frequency with the reference and the estimated inertia.
    #[serde(default = "yes")]
    pub replay: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { e_avg_window: None, replay: true }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Keep every n-th sample in the plot files.
    #[serde(default = "default_stride")]
    pub plot_stride: usize,
    /// Frequency unit of the emitted sample stream.
    #[serde(default = "default_unit")]
    pub unit: FreqUnit,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { plot_stride: default_stride(), unit: default_unit() }
    }
}

fn default_stride() -> usize {
    10
}

fn default_unit() -> FreqUnit {
    FreqUnit::Pu
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.output.plot_stride == 0 {
            return Err(Error::Config("output.plot_stride must be at least 1".into()));
        }
        if let Some([t1, t2]) = self.metrics.e_avg_window {
            if !(t2 > t1) {
                return Err(Error::Config(format!("metrics.e_avg_window must satisfy t1 < t2, got [{t1}, {t2}]")));
            }
        }
        Ok(())
    }
}

/// Names of the built-in scenarios.
pub const PRESETS: [&str; 3] = ["nominal-outage", "fleet-outage", "rescheduling"];

/// Fleet seed shared by the fleet presets.
pub const DEFAULT_FLEET_SEED: u64 = 42;

/// Unit tripped in the fleet outage (about 2% of generation).
pub const OUTAGE_UNIT: usize = 7;

pub fn preset(name: &str) -> Result<RunConfig> {
    let system = AggParams::reference();
    let cfg = match name {
        // aggregated model, reference unit trip as a setpoint step
        "nominal-outage" => RunConfig {
            name: name.into(),
            system,
            scenario: ScenarioConfig::Aggregated {
                duration: 100.0,
                dt: 1e-3,
                seed: 0,
                noise: None,
                events: vec![AggEvent { time: 10.0, kind: AggEventKind::SetpointStep { delta: -system.mw_to_pu(NOMINAL_OUTAGE_MW) } }],
            },
            estimator: EstimatorOverrides::default(),
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        },
        "fleet-outage" => RunConfig {
            name: name.into(),
            system,
            scenario: ScenarioConfig::Fleet {
                duration: 100.0,
                dt: 1e-3,
                seed: DEFAULT_FLEET_SEED,
                noise: None,
                events: vec![Event { time: 10.0, kind: EventKind::Outage { machine: OUTAGE_UNIT } }],
                machines: None,
            },
            // the trip moves P_e,PFC in one sample and Euler at gamma = 1e10 overshoots
            estimator: EstimatorOverrides { update_rule: Some(UpdateRule::Exponential), ..Default::default() },
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        },
        "rescheduling" => RunConfig {
            name: name.into(),
            system,
            scenario: ScenarioConfig::Fleet {
                duration: 900.0,
                dt: 1e-3,
                seed: DEFAULT_FLEET_SEED,
                noise: None,
                events: rescheduling_events(),
                machines: None,
            },
            estimator: EstimatorOverrides::default(),
            metrics: MetricsConfig { e_avg_window: Some([300.0, 761.0]), replay: true },
            output: OutputConfig { plot_stride: 100, ..OutputConfig::default() },
        },
        other => {
            return Err(Error::Config(format!("unknown preset `{other}`; known presets: {}", PRESETS.join(", "))));
        }
    };
    Ok(cfg)
}

/// Setpoint ramps of the two units without PFC at a compressed hourly
/// cadence, interleaved with small load steps.
fn rescheduling_events() -> Vec<Event> {
    let mut events = Vec::new();
    let ramps = [(8, 0.1), (9, -0.1), (8, -0.1), (9, 0.1), (8, 0.05), (9, -0.05)];
    for (k, &(machine, delta)) in ramps.iter().enumerate() {
        let t = 50.0 + 150.0 * k as f64;
        events.push(Event { time: t, kind: EventKind::RescheduleRamp { machine, delta, ramp_time: 30.0 } });
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        events.push(Event { time: t + 75.0, kind: EventKind::LoadStep { delta: sign * 0.001 } });
    }
    events
}
