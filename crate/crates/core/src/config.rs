//! Pipeline configuration: per-mode presets overlaid by a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::anchors::ShiftPolicy;
use crate::codec::POOL;
use crate::diffusion::{self, make_schedule, SamplerMode, Schedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::metrics::{MetricConfig, ShelfMargins};
use crate::retrieval;
use crate::voxgrid::DEFAULT_SDF_TRUNCATION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Room,
    Shelf,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Room => "room",
            Mode::Shelf => "shelf",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "room" => Ok(Mode::Room),
            "shelf" => Ok(Mode::Shelf),
            _ => Err(Error::invalid(format!("unknown mode {s:?} (expected room or shelf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelConfig {
    /// Voxel edge `s_v` in meters.
    pub voxel_size: f64,
    /// Local block edge `K` in voxels.
    pub block_resolution: usize,
    /// SDF truncation in voxels.
    pub sdf_truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Maximum anchor shift `E` per axis, in voxels.
    pub max_shift: [u32; 3],
    /// Probability that a context object is masked to pending.
    pub mask_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Canonical asset resolution `K_A`.
    pub asset_resolution: usize,
    pub sigma: f64,
    pub scale_gate: f64,
    pub iou_threshold: f64,
    pub size_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sampler: SamplerMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Evaluation voxel pitch `s_e` in meters.
    pub pitch: f64,
    /// Floor-plan tolerance `η` in meters.
    pub floor_tolerance: f64,
    pub open_face_margin: f64,
    pub other_face_margin: f64,
    pub intrusion_margin: f64,
    pub float_tolerance: f64,
    pub overlap_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<PathBuf>,
    pub voxel: VoxelConfig,
    pub policy: PolicyConfig,
    pub retrieval: RetrievalConfig,
    pub diffusion: DiffusionConfig,
    pub metrics: MetricsSection,
}

/// Keys that may appear in a file although the preset leaves them unset.
const OPTIONAL_KEYS: &[&str] = &["palette"];

impl PipelineConfig {
    pub fn preset(mode: Mode) -> Self {
        let (voxel_size, max_shift, pitch) = match mode {
            Mode::Room => (0.0375, [4, 0, 4], 0.02),
            Mode::Shelf => (0.01, [6, 6, 6], 0.012),
        };
        PipelineConfig {
            mode,
            seed: 0,
            palette: None,
            voxel: VoxelConfig {
                voxel_size,
                block_resolution: 64,
                sdf_truncation: DEFAULT_SDF_TRUNCATION,
            },
            policy: PolicyConfig {
                max_shift,
                mask_probability: 0.5,
            },
            retrieval: RetrievalConfig {
                asset_resolution: retrieval::DEFAULT_ASSET_RESOLUTION,
                sigma: retrieval::DEFAULT_SIGMA,
                scale_gate: retrieval::DEFAULT_SCALE_GATE,
                iou_threshold: retrieval::DEFAULT_IOU_THRESHOLD,
                size_ratio: retrieval::DEFAULT_SIZE_RATIO,
            },
            diffusion: DiffusionConfig {
                steps: diffusion::DEFAULT_STEPS,
                schedule: ScheduleKind::Linear,
                beta_min: diffusion::DEFAULT_BETA_MIN,
                beta_max: diffusion::DEFAULT_BETA_MAX,
                sampler: SamplerMode::Deterministic,
            },
            metrics: MetricsSection {
                pitch,
                floor_tolerance: crate::metrics::FLOOR_TOLERANCE,
                open_face_margin: crate::metrics::OPEN_FACE_MARGIN,
                other_face_margin: crate::metrics::OTHER_FACE_MARGIN,
                intrusion_margin: crate::metrics::INTRUSION_MARGIN,
                float_tolerance: crate::metrics::FLOAT_TOLERANCE,
                overlap_epsilon: crate::metrics::OVERLAP_EPSILON,
            },
        }
    }

    /// Checks every value against the constraints of the module that owns it.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| check(key, v.is_finite() && v > 0.0, "must be a finite value > 0");
        let non_negative = |key: &str, v: f64| check(key, v.is_finite() && v >= 0.0, "must be a finite value >= 0");
        let unit = |key: &str, v: f64| check(key, (0.0..=1.0).contains(&v), "must lie in [0, 1]");
        let at_least_one = |key: &str, v: f64| check(key, v.is_finite() && v >= 1.0, "must be a finite value >= 1");

        positive("voxel.voxel_size", self.voxel.voxel_size)?;
        let k = self.voxel.block_resolution;
        check(
            "voxel.block_resolution",
            k > 0 && k.is_multiple_of(POOL),
            &format!("must be a positive multiple of {POOL}"),
        )?;
        positive("voxel.sdf_truncation", self.voxel.sdf_truncation)?;
        check(
            "policy.max_shift",
            self.policy.max_shift.iter().all(|&e| (e as usize) < k / 2),
            "must be below half the block resolution on every axis",
        )?;
        unit("policy.mask_probability", self.policy.mask_probability)?;
        check("retrieval.asset_resolution", self.retrieval.asset_resolution > 0, "must be > 0")?;
        positive("retrieval.sigma", self.retrieval.sigma)?;
        at_least_one("retrieval.scale_gate", self.retrieval.scale_gate)?;
        unit("retrieval.iou_threshold", self.retrieval.iou_threshold)?;
        at_least_one("retrieval.size_ratio", self.retrieval.size_ratio)?;
        self.schedule().map_err(|e| Error::parse("diffusion", e.to_string()))?;
        positive("metrics.pitch", self.metrics.pitch)?;
        non_negative("metrics.floor_tolerance", self.metrics.floor_tolerance)?;
        non_negative("metrics.open_face_margin", self.metrics.open_face_margin)?;
        non_negative("metrics.other_face_margin", self.metrics.other_face_margin)?;
        non_negative("metrics.intrusion_margin", self.metrics.intrusion_margin)?;
        non_negative("metrics.float_tolerance", self.metrics.float_tolerance)?;
        positive("metrics.overlap_epsilon", self.metrics.overlap_epsilon)?;
        Ok(())
    }

    pub fn shift_policy(&self) -> ShiftPolicy {
        ShiftPolicy::new(self.policy.max_shift)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let d = &self.diffusion;
        make_schedule(d.steps, d.schedule, d.beta_min, d.beta_max)
    }

    pub fn metric_config(&self) -> MetricConfig {
        let m = &self.metrics;
        MetricConfig {
            pitch: m.pitch,
            eta: m.floor_tolerance,
            margins: ShelfMargins {
                open: m.open_face_margin,
                other: m.other_face_margin,
            },
            intrusion_margin: m.intrusion_margin,
            float_tolerance: m.float_tolerance,
            epsilon: m.overlap_epsilon,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }
}

fn check(key: &str, ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::parse(key, msg))
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Writes `user` over `base`, rejecting keys and types the preset lacks.
fn overlay(base: &mut Table, user: &Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        let Some(slot) = base.get_mut(key) else {
            if OPTIONAL_KEYS.contains(&path.as_str()) {
                base.insert(key.clone(), value.clone());
                continue;
            }
            return Err(Error::parse(path, "unknown key"));
        };
        match (slot, value) {
            (Value::Table(b), Value::Table(u)) => overlay(b, u, &path)?,
            (slot @ Value::Float(_), Value::Integer(i)) => *slot = Value::Float(*i as f64),
            (Value::Integer(_), Value::Integer(i)) if *i < 0 => {
                return Err(Error::parse(path, "must not be negative"));
            }
            (slot @ Value::Array(_), Value::Array(items)) => {
                let Value::Array(b) = &*slot else { unreachable!() };
                if b.len() != items.len() {
                    return Err(Error::parse(path, format!("expected {} elements", b.len())));
                }
                for (i, (bv, uv)) in b.iter().zip(items).enumerate() {
                    if type_name(bv) != type_name(uv) {
                        return Err(Error::parse(format!("{path}[{i}]"), format!("expected {}", type_name(bv))));
                    }
                    if let Value::Integer(n) = uv {
                        if *n < 0 {
                            return Err(Error::parse(format!("{path}[{i}]"), "must not be negative"));
                        }
                    }
                }
                *slot = value.clone();
            }
            (slot, value) if type_name(slot) == type_name(value) => *slot = value.clone(),
            (slot, value) => {
                return Err(Error::parse(
                    path,
                    format!("expected {}, found {}", type_name(slot), type_name(value)),
                ));
            }
        }
    }
    Ok(())
}

/// Parses `text` as overrides on top of the `mode` preset and validates.
pub fn parse_config(text: &str, mode: Mode, source: &str) -> Result<PipelineConfig> {
    let user: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::parse(source, e.message().to_string()))?;
    let preset = PipelineConfig::preset(mode);
    if let Some(m) = user.get("mode") {
        if m.as_str() != Some(mode.as_str()) {
            return Err(Error::parse("mode", format!("file sets {m} but {} was requested", mode.as_str())));
        }
    }
    let mut base = Table::try_from(&preset).expect("preset serializes to a table");
    overlay(&mut base, &user, "")?;
    let cfg: PipelineConfig = Value::Table(base)
        .try_into()
        .map_err(|e: toml::de::Error| Error::parse(source, e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, mode: Mode) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, mode, &path.display().to_string())
}
