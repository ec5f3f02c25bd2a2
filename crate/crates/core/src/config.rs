//! Run configuration for the back-end, loaded from a TOML document.

use std::path::Path;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{AssociationParams, Prediction};
use crate::factor_graph::{diagonal_information, LmParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Diagonal information weights `[rotation, translation]` per factor kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InformationConfig {
    pub odometry: [f64; 2],
    pub observation: [f64; 2],
    pub motion: [f64; 2],
    pub const_velocity: [f64; 2],
    pub loop_closure: [f64; 2],
    /// Isotropic weight of the prior pinning the first ego pose.
    pub anchor: f64,
    /// Multiplier on observation information for supplementary detections.
    pub supplementary_scale: f64,
}

impl Default for InformationConfig {
    fn default() -> Self {
        Self {
            odometry: [1e2, 1e2],
            observation: [1e1, 1e1],
            motion: [1e2, 1e2],
            const_velocity: [1e1, 1e1],
            loop_closure: [1e2, 1e2],
            anchor: 1e8,
            supplementary_scale: 0.25,
        }
    }
}

fn diag(w: [f64; 2]) -> Matrix6<f64> {
    diagonal_information(w[0], w[1])
}

impl InformationConfig {
    pub fn odometry(&self) -> Matrix6<f64> {
        diag(self.odometry)
    }
    pub fn observation(&self) -> Matrix6<f64> {
        diag(self.observation)
    }
    pub fn motion(&self) -> Matrix6<f64> {
        diag(self.motion)
    }
    pub fn const_velocity(&self) -> Matrix6<f64> {
        diag(self.const_velocity)
    }
    pub fn loop_closure(&self) -> Matrix6<f64> {
        diag(self.loop_closure)
    }
    pub fn anchor(&self) -> Matrix6<f64> {
        Matrix6::identity() * self.anchor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Sliding window size K in frames.
    pub window_size: usize,
    pub init_threshold: usize,
    pub gate_initialized: f64,
    pub gate_uninitialized: f64,
    pub miss_limit: u32,
    /// m/s
    pub speed_threshold: f64,
    pub prediction: Prediction,
    /// Seconds per frame; a stream header overrides it.
    pub frame_period: f64,
    /// Feed detections to the back-end. Off gives an odometry-only run.
    pub use_objects: bool,
    /// Run global optimization on loop events.
    pub use_loop: bool,
    pub information: InformationConfig,
    pub solver: LmParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AssociationParams::default();
        Self {
            window_size: a.window_size,
            init_threshold: a.init_threshold,
            gate_initialized: a.gate_initialized,
            gate_uninitialized: a.gate_uninitialized,
            miss_limit: a.miss_limit,
            speed_threshold: a.speed_threshold,
            prediction: a.prediction,
            frame_period: 0.1,
            use_objects: true,
            use_loop: true,
            information: InformationConfig::default(),
            solver: LmParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn association(&self) -> AssociationParams {
        AssociationParams {
            window_size: self.window_size,
            init_threshold: self.init_threshold,
            gate_initialized: self.gate_initialized,
            gate_uninitialized: self.gate_uninitialized,
            miss_limit: self.miss_limit,
            speed_threshold: self.speed_threshold,
            prediction: self.prediction,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.window_size < 2 {
            return bad("window_size must be at least 2");
        }
        if !(self.gate_initialized > 0.0 && self.gate_uninitialized > 0.0) {
            return bad("gate radii must be positive");
        }
        if !(self.frame_period > 0.0 && self.frame_period.is_finite()) {
            return bad("frame_period must be positive");
        }
        if !(self.speed_threshold >= 0.0) {
            return bad("speed_threshold must be non-negative");
        }
        let info = &self.information;
        let weights = [
            info.odometry,
            info.observation,
            info.motion,
            info.const_velocity,
            info.loop_closure,
        ];
        if weights.iter().flatten().any(|w| !(*w > 0.0 && w.is_finite())) || !(info.anchor > 0.0) {
            return bad("information weights must be positive and finite");
        }
        if !(info.supplementary_scale > 0.0) {
            return bad("supplementary_scale must be positive");
        }
        if self.solver.max_iters == 0 {
            return bad("solver.max_iters must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_partial_documents() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);

        let cfg = RunConfig::from_toml_str(
            "window_size = 6\nprediction = \"last_position\"\n[information]\nobservation = [5.0, 20.0]\n[solver]\nmax_iters = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.window_size, 6);
        assert_eq!(cfg.prediction, Prediction::LastPosition);
        assert_eq!(cfg.information.observation, [5.0, 20.0]);
        assert_eq!(cfg.information.motion, [1e2, 1e2]);
        assert_eq!(cfg.solver.max_iters, 7);
        assert_eq!(cfg.association().window_size, 6);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(RunConfig::from_toml_str("window_size = 1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(
            RunConfig::from_toml_str("[information]\nodometry = [0.0, 1.0]"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(RunConfig::from_toml_str("bogus = 3"), Err(ConfigError::Parse(_))));
    }
}
