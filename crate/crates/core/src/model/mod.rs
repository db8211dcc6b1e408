//! Physical parameters of the double resonance model and the classical
//! resonance geometry derived from them.
//!
//! The Hamiltonian is `H = G I^2 / 2 - V+ cos(theta - omega t) - V- cos(theta + omega t)`.
//! All quantities are dimensionless.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod config;

pub use config::{
    load_config, parse_config, ClassicalSettings, Config, QuantumSettings, RunSettings,
};

/// Physical constants of the DRM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Nonlinearity (inverse moment of inertia).
    pub g: f64,
    pub v_plus: f64,
    pub v_minus: f64,
    /// Driving frequency.
    pub omega: f64,
    /// Relaxation constant, the phase-volume contraction rate.
    pub gamma: f64,
    /// Effective Planck constant; ignored by the classical dynamics.
    pub hbar: f64,
}

impl ModelParams {
    pub fn new(g: f64, v_plus: f64, v_minus: f64, omega: f64, gamma: f64, hbar: f64) -> Result<Self> {
        let p = Self {
            g,
            v_plus,
            v_minus,
            omega,
            gamma,
            hbar,
        };
        p.validate()?;
        Ok(p)
    }

    /// Symmetric model `V+ = V- = v`.
    pub fn symmetric(g: f64, v: f64, omega: f64, gamma: f64, hbar: f64) -> Result<Self> {
        Self::new(g, v, v, omega, gamma, hbar)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(key: &'static str, value: f64, ok: bool, rule: &str) -> Result<()> {
            if !value.is_finite() || !ok {
                return Err(Error::Validation {
                    key,
                    reason: format!("{value} violates {rule}"),
                });
            }
            Ok(())
        }
        check("G", self.g, self.g > 0.0, "G > 0")?;
        check("V_plus", self.v_plus, self.v_plus >= 0.0, "V_plus >= 0")?;
        check("V_minus", self.v_minus, self.v_minus >= 0.0, "V_minus >= 0")?;
        check("omega", self.omega, self.omega > 0.0, "omega > 0")?;
        check("gamma", self.gamma, self.gamma >= 0.0, "gamma >= 0")?;
        check("hbar", self.hbar, self.hbar > 0.0, "hbar > 0")?;
        Ok(())
    }

    /// Driving period `2 pi / omega`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_hbar(mut self, hbar: f64) -> Self {
        self.hbar = hbar;
        self
    }

    pub fn with_v_minus(mut self, v_minus: f64) -> Self {
        self.v_minus = v_minus;
        self
    }

    pub fn is_symmetric(&self) -> bool {
        self.v_plus == self.v_minus
    }
}

/// Positions and widths of the two primary resonances, plus the limit-cycle
/// phase of the upper resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceGeometry {
    pub i_plus: f64,
    pub i_minus: f64,
    /// Width `4 sqrt(V+/G)` of the upper resonance.
    pub delta_i_plus: f64,
    /// Width `4 sqrt(V-/G)` of the lower resonance.
    pub delta_i_minus: f64,
    /// Attracting root of `V+ sin(theta0) = gamma I+`, in `[0, pi/2]`.
    pub theta0: Option<f64>,
    /// Repelling partner root `pi - theta0`.
    pub theta0_unstable: Option<f64>,
    /// Largest damping that still admits the upper limit cycle, `V+ G / omega`.
    pub gamma_critical: f64,
}

impl ResonanceGeometry {
    /// Larger of the two resonance widths.
    pub fn delta_i(&self) -> f64 {
        self.delta_i_plus.max(self.delta_i_minus)
    }

    /// Relative phase `theta - omega t` actually held on the upper cycle.
    /// The cycle lags behind the wave, so this is `-theta0`.
    pub fn cycle_phase(&self) -> Option<f64> {
        self.theta0.map(|t| -t)
    }
}

pub fn derive_geometry(params: &ModelParams) -> ResonanceGeometry {
    let i_plus = params.omega / params.g;
    let i_minus = -i_plus;
    let delta_i_plus = 4.0 * (params.v_plus / params.g).sqrt();
    let delta_i_minus = 4.0 * (params.v_minus / params.g).sqrt();

    let theta0 = if params.gamma == 0.0 {
        Some(0.0)
    } else if params.v_plus == 0.0 {
        None
    } else {
        let arg = params.gamma * i_plus / params.v_plus;
        (arg.abs() <= 1.0).then(|| arg.asin().clamp(0.0, FRAC_PI_2))
    };

    ResonanceGeometry {
        i_plus,
        i_minus,
        delta_i_plus,
        delta_i_minus,
        theta0,
        theta0_unstable: theta0.map(|t| PI - t),
        gamma_critical: params.v_plus * params.g / params.omega,
    }
}
