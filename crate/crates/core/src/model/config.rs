//! TOML run configuration.
//!
//! ```toml
//! [model]
//! G = 1.0
//! V_plus = 1.0
//! V_minus = 1.0
//! omega = 4.0
//! gamma = 0.05      # default 0
//! hbar = 0.25       # default 0.25
//!
//! [classical]
//! dt_steps_per_period = 512
//! grid_theta = 200
//! grid_action = 200
//! # action_range = [-8.0, 8.0]   default [-2 omega/G, 2 omega/G]
//! horizon_periods = 400
//! tol_factor = 0.1               # basin tolerance in units of the resonance width
//! map_periods = 300
//! particles = 10000
//! t_final_periods = 300
//! histogram_bins = 160
//!
//! [quantum]
//! # n_max = 24       default: see `MomentumBasis::for_params`
//! # n_min = -24      default: -n_max
//! margin = 1.0
//! dt_steps_per_period = 512
//! t_final_periods = 300
//! sample_every_periods = 10
//! # n0 = 8           default: round(I+/hbar)
//! snapshots = false
//!
//! [run]
//! out_dir = "out"
//! seed = 0
//! workers = 0        # 0 = all available cores
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    #[serde(rename = "G")]
    g: f64,
    #[serde(rename = "V_plus")]
    v_plus: f64,
    #[serde(rename = "V_minus")]
    v_minus: f64,
    omega: f64,
    #[serde(default)]
    gamma: f64,
    #[serde(default = "default_hbar")]
    hbar: f64,
}

fn default_hbar() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalSettings {
    pub dt_steps_per_period: usize,
    pub grid_theta: usize,
    pub grid_action: usize,
    pub action_range: Option<[f64; 2]>,
    pub horizon_periods: usize,
    pub tol_factor: f64,
    pub map_periods: usize,
    pub particles: usize,
    pub t_final_periods: usize,
    pub histogram_bins: usize,
}

impl Default for ClassicalSettings {
    fn default() -> Self {
        Self {
            dt_steps_per_period: 512,
            grid_theta: 200,
            grid_action: 200,
            action_range: None,
            horizon_periods: 400,
            tol_factor: 0.1,
            map_periods: 300,
            particles: 10_000,
            t_final_periods: 300,
            histogram_bins: 160,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumSettings {
    pub n_max: Option<i64>,
    pub n_min: Option<i64>,
    pub margin: f64,
    pub dt_steps_per_period: usize,
    pub t_final_periods: usize,
    pub sample_every_periods: usize,
    pub n0: Option<i64>,
    pub snapshots: bool,
}

impl Default for QuantumSettings {
    fn default() -> Self {
        Self {
            n_max: None,
            n_min: None,
            margin: 1.0,
            dt_steps_per_period: 512,
            t_final_periods: 300,
            sample_every_periods: 10,
            n0: None,
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    model: ModelSection,
    #[serde(default)]
    classical: ClassicalSettings,
    #[serde(default)]
    quantum: QuantumSettings,
    #[serde(default)]
    run: RunSettings,
}

/// Fully validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub model: ModelParams,
    pub classical: ClassicalSettings,
    pub quantum: QuantumSettings,
    pub run: RunSettings,
}

impl Default for Config {
    /// The Fig. 1 regime: `G = V+ = V- = 1`, `omega = 4`, `gamma = 0.05`, `hbar = 0.25`.
    fn default() -> Self {
        Self {
            model: ModelParams::symmetric(1.0, 1.0, 4.0, 0.05, 0.25).expect("valid defaults"),
            classical: ClassicalSettings::default(),
            quantum: QuantumSettings::default(),
            run: RunSettings::default(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<Config> {
    let de = toml::Deserializer::new(text);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::ConfigParse {
            key: if key == "." { "<document>".into() } else { key },
            message: e.into_inner().message().trim().to_string(),
        }
    })?;

    let m = doc.model;
    let model = ModelParams::new(m.g, m.v_plus, m.v_minus, m.omega, m.gamma, m.hbar)?;
    let cfg = Config {
        model,
        classical: doc.classical,
        quantum: doc.quantum,
        run: doc.run,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = |key: &'static str, v: usize| {
            if v == 0 {
                Err(Error::Validation {
                    key,
                    reason: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        };
        let c = &self.classical;
        positive("classical.dt_steps_per_period", c.dt_steps_per_period)?;
        positive("classical.grid_theta", c.grid_theta)?;
        positive("classical.grid_action", c.grid_action)?;
        positive("classical.horizon_periods", c.horizon_periods)?;
        positive("classical.map_periods", c.map_periods)?;
        positive("classical.particles", c.particles)?;
        positive("classical.histogram_bins", c.histogram_bins)?;
        if !(c.tol_factor > 0.0) {
            return Err(Error::Validation {
                key: "classical.tol_factor",
                reason: format!("{} must be > 0", c.tol_factor),
            });
        }
        if let Some([lo, hi]) = c.action_range {
            if !(lo < hi) {
                return Err(Error::Validation {
                    key: "classical.action_range",
                    reason: format!("[{lo}, {hi}] is empty"),
                });
            }
        }
        let q = &self.quantum;
        positive("quantum.dt_steps_per_period", q.dt_steps_per_period)?;
        positive("quantum.sample_every_periods", q.sample_every_periods)?;
        if let (Some(lo), Some(hi)) = (q.n_min, q.n_max) {
            if lo > 0 || hi < 0 || lo >= hi {
                return Err(Error::Validation {
                    key: "quantum.n_min",
                    reason: format!("level range [{lo}, {hi}] must contain 0"),
                });
            }
        }
        if !(q.margin >= 0.0) {
            return Err(Error::Validation {
                key: "quantum.margin",
                reason: format!("{} must be >= 0", q.margin),
            });
        }
        Ok(())
    }
}
