//! Scenario configuration. Files are JSON; any field left out takes the
//! default of the chosen scenario kind.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use vpc_core::costs::{Bounds, CostWeights};
use vpc_core::dynamics::CameraExtrinsics;
use vpc_core::ocp::{ControllerConfig, OcpParams};
use vpc_core::simulator::{NoiseModel, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    GateReaching,
    QuarterCircle,
    FullCircle,
    SuccessSweep,
    PredictCompare,
    Hover,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::GateReaching,
        ScenarioKind::QuarterCircle,
        ScenarioKind::FullCircle,
        ScenarioKind::SuccessSweep,
        ScenarioKind::PredictCompare,
        ScenarioKind::Hover,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::GateReaching => "gate_reaching",
            ScenarioKind::QuarterCircle => "quarter_circle",
            ScenarioKind::FullCircle => "full_circle",
            ScenarioKind::SuccessSweep => "success_sweep",
            ScenarioKind::PredictCompare => "predict_compare",
            ScenarioKind::Hover => "hover",
        }
    }
}

/// Starting position and heading, vehicle at rest and level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPose {
    pub position: [f64; 3],
    pub heading_deg: f64,
}

/// The five gate-reaching starts.
pub fn table_one_poses() -> Vec<InitialPose> {
    [
        (6.0, -30.0),
        (3.0, -15.0),
        (0.0, 0.0),
        (-3.0, 15.0),
        (-6.0, 30.0),
    ]
    .into_iter()
    .map(|(y, h)| InitialPose {
        position: [-2.0, y, 3.0],
        heading_deg: h,
    })
    .collect()
}

/// Open-loop prediction study: a static point seen from a camera moving with
/// a constant twist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Initial camera-frame position of the point (m).
    pub point: [f64; 3],
    /// Camera-frame linear velocity (m/s).
    pub v_c: [f64; 3],
    /// Camera-frame angular velocity (rad/s).
    pub omega_c: [f64; 3],
    pub dt: f64,
    pub horizon: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            point: [0.3, -0.2, 4.0],
            v_c: [0.5, -0.2, 1.0],
            omega_c: [0.1, 0.3, -0.2],
            dt: 0.01,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// Landmark (gate center) in the world frame (m).
    pub landmark: [f64; 3],
    /// Gate reaching: distance to hold in front of the gate (m).
    pub goal_distance: f64,
    /// Gate reaching starts; also the hover start (first entry).
    pub poses: Vec<InitialPose>,
    /// Maximum reference speeds (m/s) for the tracking scenarios and the sweep.
    pub speeds: Vec<f64>,
    /// Perception objective on or off (the sweep always runs both).
    pub perception: bool,
    /// Sweep trials per speed and mode.
    pub trials: usize,
    /// Consecutive clean laps that make a sweep trial a success.
    pub laps: usize,
    /// Profile acceleration limit as a fraction of the maximum thrust.
    pub accel_fraction: f64,
    /// Time simulated after a tracking reference comes to rest (s).
    pub settle_time: f64,
    pub weights: CostWeights,
    pub bounds: Bounds,
    pub extrinsics: CameraExtrinsics,
    pub ocp: OcpParams,
    pub noise: NoiseModel,
    pub sim: SimConfig,
    pub predict: PredictConfig,
}

impl ScenarioConfig {
    /// Defaults for one scenario kind.
    pub fn defaults(kind: ScenarioKind) -> Self {
        let mut cfg = Self {
            scenario: kind,
            seed: 0,
            landmark: [6.0, 0.0, 3.0],
            goal_distance: 2.0,
            poses: table_one_poses(),
            speeds: vec![1.0, 3.0, 5.0],
            perception: true,
            trials: 20,
            laps: 3,
            accel_fraction: 0.6,
            settle_time: 2.0,
            weights: CostWeights::default(),
            bounds: Bounds::default(),
            extrinsics: CameraExtrinsics::default(),
            ocp: OcpParams::default(),
            noise: NoiseModel::default(),
            sim: SimConfig::default(),
            predict: PredictConfig::default(),
        };
        match kind {
            ScenarioKind::GateReaching => {}
            ScenarioKind::QuarterCircle => {}
            ScenarioKind::FullCircle => {
                cfg.speeds = vec![2.0];
                cfg.weights.q_s = [0.0; 2];
                cfg.weights.q_d = 0.0;
                cfg.weights.q_v = [1.0; 3];
            }
            ScenarioKind::SuccessSweep => {
                cfg.speeds = vec![4.0, 6.0, 8.0];
                cfg.noise = NoiseModel {
                    sigma_v: 0.05,
                    sigma_att: 0.01,
                    sigma_d_rel: 0.01,
                    sigma_px: 0.005,
                    seed: 0,
                };
            }
            ScenarioKind::PredictCompare => {}
            ScenarioKind::Hover => {
                cfg.poses = vec![InitialPose {
                    position: [3.9, 0.0, 3.0],
                    heading_deg: 0.0,
                }];
                cfg.sim.duration = 5.0;
            }
        }
        cfg
    }

    /// Parses a config, filling unspecified fields from the defaults of its
    /// kind. `fallback` supplies the kind when the file names none.
    pub fn from_json(text: &str, fallback: Option<ScenarioKind>) -> Result<Self, ConfigError> {
        let mut user: Value = serde_json::from_str(text)?;
        if let Some(Value::Object(ocp)) = user.get_mut("ocp") {
            if let Some(n) = ocp.remove("N") {
                ocp.insert("horizon".into(), n);
            }
        }
        let Value::Object(ref map) = user else {
            return Err(ConfigError::Invalid("top level must be an object".into()));
        };
        let kind = match map.get("scenario") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => {
                fallback.ok_or_else(|| ConfigError::Invalid("missing field `scenario`".into()))?
            }
        };
        let mut merged = serde_json::to_value(Self::defaults(kind))?;
        merge(&mut merged, user);
        merged["scenario"] = serde_json::to_value(kind)?;
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(
        path: &std::path::Path,
        fallback: Option<ScenarioKind>,
    ) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, fallback)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.weights.validate().map_err(ConfigError::Invalid)?;
        self.bounds.validate().map_err(ConfigError::Invalid)?;
        self.ocp.validate().map_err(ConfigError::Invalid)?;
        self.noise.validate().map_err(ConfigError::Invalid)?;
        self.sim.validate().map_err(ConfigError::Invalid)?;
        if self.landmark.iter().any(|v| !v.is_finite()) {
            return bad("landmark must be finite".into());
        }
        if let Some(s) = self.speeds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("speeds must be positive, got {s}"));
        }
        if !(self.goal_distance > 0.0) {
            return bad("goal_distance must be positive".into());
        }
        if !(self.accel_fraction > 0.0 && self.accel_fraction <= 1.0) {
            return bad("accel_fraction must lie in (0, 1]".into());
        }
        if !(self.settle_time >= 0.0 && self.settle_time.is_finite()) {
            return bad("settle_time must be non-negative".into());
        }
        match self.scenario {
            ScenarioKind::GateReaching | ScenarioKind::Hover if self.poses.is_empty() => {
                bad("at least one initial pose is required".into())
            }
            ScenarioKind::QuarterCircle | ScenarioKind::FullCircle | ScenarioKind::SuccessSweep
                if self.speeds.is_empty() =>
            {
                bad("at least one speed is required".into())
            }
            ScenarioKind::SuccessSweep if self.trials == 0 || self.laps == 0 => {
                bad("trials and laps must be at least 1".into())
            }
            ScenarioKind::PredictCompare => {
                let p = &self.predict;
                if !(p.dt > 0.0 && p.horizon >= p.dt) {
                    return bad("predict needs dt > 0 and horizon >= dt".into());
                }
                if !(p.point[2] > 0.0) {
                    return bad("predict point must lie in front of the camera".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn controller(&self, perception: bool) -> ControllerConfig {
        let weights = if perception {
            self.weights
        } else {
            self.weights.without_perception()
        };
        ControllerConfig {
            weights,
            bounds: self.bounds,
            extrinsics: self.extrinsics,
            params: self.ocp,
        }
    }

    /// Reference acceleration limit (m/s²).
    pub fn accel_limit(&self) -> f64 {
        self.accel_fraction * self.bounds.c_max
    }
}

/// Overlays `patch` on `base`, recursing into objects; anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults of every kind, keyed by name.
pub fn dump_defaults() -> Value {
    let mut out = serde_json::Map::new();
    for kind in ScenarioKind::ALL {
        out.insert(
            kind.name().into(),
            serde_json::to_value(ScenarioConfig::defaults(kind)).unwrap(),
        );
    }
    Value::Object(out)
}
