//! The single TOML configuration document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{BaselineConfig, DrivingController, SafetyController, TrackingPid};
use crate::dynamics::VehicleParams;
use crate::mpc::MpcConfig;
use crate::potential::PfGains;
use crate::reference::GateThresholds;
use crate::sim::{InfractionTable, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub vehicle: VehicleParams,
    pub pf: PfGains,
    pub mpc: MpcConfig,
    pub gates: GateThresholds,
    pub sim: SimConfig,
    pub infractions: InfractionTable,
    pub baseline: BaselineConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pf.validate().map_err(ConfigError::Invalid)?;
        self.mpc
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.infractions.validate().map_err(ConfigError::Invalid)?;
        let s = &self.sim;
        if !(s.deadlock_speed >= 0.0 && s.deadlock_time > 0.0 && s.perception_range > 0.0) {
            return Err(ConfigError::Invalid(
                "sim needs deadlock_speed >= 0, deadlock_time > 0, perception_range > 0".into(),
            ));
        }
        let g = &self.gates;
        if !(g.junction_slow_factor >= 0.0) {
            return Err(ConfigError::Invalid(
                "gates.junction_slow_factor must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Controller variants compared by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    TrackingPid,
    /// MPC with the obstacle and front-obstacle gains zeroed.
    Mpc,
    MpcPf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::TrackingPid, Variant::Mpc, Variant::MpcPf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::TrackingPid => "tracking-pid",
            Variant::Mpc => "mpc",
            Variant::MpcPf => "mpc-pf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn build(&self, cfg: &Config) -> Box<dyn DrivingController> {
        match self {
            Variant::TrackingPid => Box::new(TrackingPid::new(
                cfg.vehicle.clone(),
                cfg.baseline.clone(),
                cfg.pf.clone(),
                cfg.gates.clone(),
            )),
            Variant::Mpc => Box::new(SafetyController::new(
                cfg.vehicle.clone(),
                cfg.pf.zeroed(),
                cfg.mpc.clone(),
                cfg.gates.clone(),
            )),
            Variant::MpcPf => Box::new(SafetyController::new(
                cfg.vehicle.clone(),
                cfg.pf.clone(),
                cfg.mpc.clone(),
                cfg.gates.clone(),
            )),
        }
    }
}
