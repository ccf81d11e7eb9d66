//! Engine tunables and the flat `key = value` config file.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Every tunable of the odometry engine. Missing keys in a config file take
/// these defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Density neighborhood radius (m).
    pub density_radius: f64,
    /// Density percentile below which points are dropped, in [0, 100].
    pub density_alpha: f64,
    /// Neighborhood size for covariances and normals.
    pub knn: usize,
    /// Decay of the coarse correspondence weights.
    pub coarse_sigma: f64,
    /// Base damping added to the normal equations.
    pub lm_lambda: f64,
    /// Damping increases tried after a cost increase before giving up.
    pub lm_max_retries: usize,
    pub coarse_max_iters: usize,
    pub coarse_tol: f64,
    /// Coarse correspondence distance gate (m).
    pub coarse_max_dist: f64,
    pub fine_max_iters: usize,
    pub fine_tol: f64,
    /// Lower bound on the fine correspondence gate (m).
    pub min_gate: f64,
    /// Translation disagreement above which the prediction wins the gate (m).
    pub gate_tau: f64,
    /// Growth of the recent-increment weight with the adaptive threshold.
    pub prediction_gain: f64,
    pub sigma_decay: f64,
    pub sigma_max: f64,
    pub beta: f64,
    /// Sliding window length for the threshold; 0 keeps every frame.
    pub threshold_window: usize,
    pub threshold_bootstrap: f64,
    pub threshold_floor: f64,
    /// Frame period (s).
    pub dt: f64,
    /// Per-scan voxel downsampling (m).
    pub frame_voxel: f64,
    pub map_voxel: f64,
    pub map_max_points_per_voxel: usize,
    pub map_max_range: f64,
    /// Coarse results farther than this from their seed count as divergence (m).
    pub max_translation: f64,
    /// Rigidly align estimates to ground truth before computing APE.
    pub eval_align: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            density_radius: 1.0,
            density_alpha: 5.0,
            knn: 10,
            coarse_sigma: 1.0,
            lm_lambda: 1e-4,
            lm_max_retries: 5,
            coarse_max_iters: 20,
            coarse_tol: 1e-4,
            coarse_max_dist: 2.0,
            fine_max_iters: 30,
            fine_tol: 1e-4,
            min_gate: 0.3,
            gate_tau: 1.0,
            prediction_gain: 1.0,
            sigma_decay: 1.5,
            sigma_max: 1.0,
            beta: 1.0,
            threshold_window: 100,
            threshold_bootstrap: 2.0,
            threshold_floor: 0.1,
            dt: 0.1,
            frame_voxel: 0.5,
            map_voxel: 1.0,
            map_max_points_per_voxel: 20,
            map_max_range: 100.0,
            max_translation: 20.0,
            eval_align: true,
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective values, one `key = value` line each.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key,
                    reason: format!("must be positive and finite, got {v}"),
                })
            }
        }
        fn nonneg(key: &'static str, v: f64) -> Result<(), ConfigError> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key,
                    reason: format!("must be non-negative and finite, got {v}"),
                })
            }
        }
        positive("density_radius", self.density_radius)?;
        if !(0.0..=100.0).contains(&self.density_alpha) {
            return Err(ConfigError::Invalid {
                key: "density_alpha",
                reason: format!("must lie in [0, 100], got {}", self.density_alpha),
            });
        }
        if self.knn < 3 {
            return Err(ConfigError::Invalid {
                key: "knn",
                reason: format!("must be at least 3, got {}", self.knn),
            });
        }
        positive("coarse_sigma", self.coarse_sigma)?;
        nonneg("lm_lambda", self.lm_lambda)?;
        positive("coarse_tol", self.coarse_tol)?;
        positive("coarse_max_dist", self.coarse_max_dist)?;
        positive("fine_tol", self.fine_tol)?;
        positive("min_gate", self.min_gate)?;
        positive("gate_tau", self.gate_tau)?;
        nonneg("prediction_gain", self.prediction_gain)?;
        positive("sigma_decay", self.sigma_decay)?;
        nonneg("sigma_max", self.sigma_max)?;
        positive("beta", self.beta)?;
        positive("threshold_bootstrap", self.threshold_bootstrap)?;
        positive("threshold_floor", self.threshold_floor)?;
        positive("dt", self.dt)?;
        positive("frame_voxel", self.frame_voxel)?;
        positive("map_voxel", self.map_voxel)?;
        positive("map_max_range", self.map_max_range)?;
        positive("max_translation", self.max_translation)?;
        if self.map_max_points_per_voxel == 0 {
            return Err(ConfigError::Invalid {
                key: "map_max_points_per_voxel",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}
