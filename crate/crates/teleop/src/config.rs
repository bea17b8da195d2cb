//! Session configuration file.
//!
//! One JSON document names the frame registry, the arm description (a path resolved against
//! the config file's directory), servo, mode and trial settings, the scripted operator and
//! the tick rates. Its hash is a SHA-256 over the canonical (key-sorted, compact) form of the
//! document together with the canonical arm description.

use std::fmt;
use std::path::{Path, PathBuf};

use bodylink::arm::{ArmDescription, ServoConfig, WorkspaceBox};
use bodylink::link::{ControlMode, ModeConfig};
use bodylink::operator::{OperatorPolicy, PolicyKind};
use bodylink::se3::{FrameRegistry, Rotation, Transform};
use bodylink::session::SessionSetup;
use bodylink::trial::TrialSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid {path}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn d_control() -> u32 {
    100
}
fn d_telemetry() -> u32 {
    30
}
fn d_lambda() -> f64 {
    1e-3
}
fn d_dead_zone() -> f64 {
    0.02
}
fn d_log_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn d_session() -> String {
    "session".into()
}
fn d_participant() -> String {
    "sim".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoSection {
    pub gain_k: f64,
    #[serde(default = "d_lambda")]
    pub damping_lambda: f64,
    /// Omitted means unbounded.
    #[serde(default)]
    pub workspace: Option<WorkspaceBox<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    pub mode: ControlMode,
    /// m/s at full deflection.
    pub joystick_gain: f64,
    pub joystick_max_speed: f64,
    #[serde(default = "d_dead_zone")]
    pub dead_zone: f64,
    /// Device axes to world, row-major; identity when omitted.
    #[serde(default)]
    pub world_from_device: Option<Rotation<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "d_session")]
    pub session_id: String,
    #[serde(default = "d_participant")]
    pub participant_id: String,
    pub frames: FrameRegistry<f64>,
    /// Arm description file, relative to this config file.
    pub arm: PathBuf,
    pub servo: ServoSection,
    pub mode: ModeSection,
    pub trial: TrialSpec,
    /// Body pose in the world frame before any tracker input.
    pub initial_body: Transform<f64>,
    /// Scripted operator used by `simulate`.
    #[serde(default)]
    pub operator: Option<OperatorPolicy>,
    #[serde(default = "d_control")]
    pub tick_rate_control: u32,
    #[serde(default = "d_telemetry")]
    pub tick_rate_telemetry: u32,
    #[serde(default = "d_log_dir")]
    pub log_dir: PathBuf,
}

/// Hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Compact JSON with object keys sorted (serde_json's default map is ordered).
pub fn canonical_json(value: &serde_json::Value) -> String {
    serde_json::to_string(value).expect("values serialize")
}

/// A config file with its arm resolved and hash computed.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub config: SessionConfig,
    pub arm: ArmDescription,
    pub hash: String,
}

impl fmt::Display for LoadedConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (hash {})", self.path.display(), &self.hash[..12])
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_value(path: &Path, text: &str) -> Result<serde_json::Value, ConfigError> {
    serde_json::from_str(text).map_err(|source| ConfigError::Json {
        path: path.to_owned(),
        source,
    })
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let raw = parse_value(path, &text)?;
        let config: SessionConfig = serde_json::from_value(raw.clone()).map_err(|source| ConfigError::Json {
            path: path.to_owned(),
            source,
        })?;
        let arm_path = path.parent().unwrap_or(Path::new(".")).join(&config.arm);
        let arm_text = read(&arm_path)?;
        let arm_raw = parse_value(&arm_path, &arm_text)?;
        let arm: ArmDescription = serde_json::from_value(arm_raw.clone()).map_err(|source| ConfigError::Json {
            path: arm_path.clone(),
            source,
        })?;
        let hash = sha256_hex(format!("{}\n{}", canonical_json(&raw), canonical_json(&arm_raw)).as_bytes());
        let loaded = Self {
            path: path.to_owned(),
            config,
            arm,
            hash,
        };
        loaded.setup().map_err(|message| ConfigError::Invalid {
            path: path.to_owned(),
            message,
        })?;
        Ok(loaded)
    }

    /// Validated session setup. Mode changes (e.g. a CLI policy) go through
    /// [`Self::setup_with_mode`] and do not change the hash.
    pub fn setup(&self) -> Result<SessionSetup, String> {
        self.setup_with_mode(self.config.mode.mode)
    }

    pub fn setup_with_mode(&self, mode: ControlMode) -> Result<SessionSetup, String> {
        let c = &self.config;
        if c.tick_rate_telemetry == 0 || c.tick_rate_control < c.tick_rate_telemetry {
            return Err(format!(
                "tick rates must satisfy control >= telemetry > 0 (got {} and {})",
                c.tick_rate_control, c.tick_rate_telemetry
            ));
        }
        let arm = self
            .arm
            .build::<f64>()
            .map_err(|e| format!("arm {}: {e}", c.arm.display()))?
            .with_base_frame(c.frames.world_from_robot_base);
        let dt = 1.0 / f64::from(c.tick_rate_control);
        let servo = ServoConfig::new(
            c.servo.gain_k,
            c.servo.damping_lambda,
            dt,
            c.servo.workspace.unwrap_or_else(WorkspaceBox::unbounded),
        )
        .map_err(|e| format!("servo: {e}"))?;
        let mode_cfg = ModeConfig {
            mode,
            joystick_gain: c.mode.joystick_gain,
            joystick_max_speed: c.mode.joystick_max_speed,
            dead_zone: c.mode.dead_zone,
            world_from_device: c.mode.world_from_device.unwrap_or_else(Rotation::identity),
        };
        mode_cfg.validate().map_err(|e| format!("mode: {e}"))?;
        let trial = TrialSpec { mode, ..c.trial.clone() };
        trial.validate().map_err(|e| format!("trial: {e}"))?;
        if let Some(op) = &c.operator {
            op.validate().map_err(|e| format!("operator: {e}"))?;
        }
        Ok(SessionSetup {
            registry: c.frames.clone(),
            arm,
            home: self.arm.home_state(),
            servo,
            mode: mode_cfg,
            trial,
            initial_body: c.initial_body,
            tick_rate_control: c.tick_rate_control,
            tick_rate_telemetry: c.tick_rate_telemetry,
            session_id: c.session_id.clone(),
            config_hash: self.hash.clone(),
            participant_id: c.participant_id.clone(),
        })
    }

    /// Operator policy for `kind`, taking tunables from the config when it names the same kind.
    pub fn policy(&self, kind: PolicyKind) -> OperatorPolicy {
        match &self.config.operator {
            Some(p) => OperatorPolicy { kind, ..p.clone() },
            None => OperatorPolicy::new(kind),
        }
    }
}
