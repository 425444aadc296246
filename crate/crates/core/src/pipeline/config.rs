use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conditioning::BalancingLevel;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::eval::{ClassifierKind, MetricWeights};
use crate::guidance::GuidanceConfig;

pub const MIN_TIMESTEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: PathBuf::from("data.csv"),
            schema: PathBuf::from("schema.json"),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub timesteps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Cosine,
            timesteps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    Identity,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub mode: CodecMode,
    /// Required for `linear`.
    pub latent_dim: Option<usize>,
    /// Largest reconstruction MSE a fitted linear codec may have.
    pub max_mse: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            mode: CodecMode::Identity,
            latent_dim: None,
            max_mse: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub level: BalancingLevel,
    /// Defaults to the size of the training split.
    pub n_samples: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            level: BalancingLevel::new(10).unwrap(),
            n_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub classifier: ClassifierKind,
    pub weights: MetricWeights,
    /// Defaults to the first sensitive column.
    pub fairness_attribute: Option<String>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            classifier: ClassifierKind::BoostedStumps,
            weights: MetricWeights::default(),
            fairness_attribute: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub levels: Vec<BalancingLevel>,
    pub seeds: Vec<u64>,
    pub svg: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            levels: BalancingLevel::all().collect(),
            seeds: vec![0, 1, 2],
            svg: true,
        }
    }
}

/// The JSON run configuration shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub seed: u64,
    /// Encode constant numerical columns as fixed values instead of failing.
    pub constant_passthrough: bool,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub codec: CodecConfig,
    pub guidance: GuidanceConfig,
    pub sampling: SamplingConfig,
    pub evaluation: EvaluationConfig,
    pub sweep: SweepConfig,
    pub jobs: usize,
}

impl RunConfig {
    /// Reads a config file, applies `key=value` overrides with dotted
    /// keys, and resolves relative paths against the file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_value(value, overrides, base)
    }

    pub fn from_value(mut value: Value, overrides: &[(String, String)], base: &Path) -> Result<Self> {
        for (key, raw) in overrides {
            set_dotted(&mut value, key, parse_scalar(raw))?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.paths.data, &mut cfg.paths.schema, &mut cfg.paths.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.timesteps < MIN_TIMESTEPS {
            return Err(Error::Config(format!(
                "schedule.timesteps {} below {MIN_TIMESTEPS}",
                self.schedule.timesteps
            )));
        }
        self.denoiser.validate()?;
        self.guidance.validate()?;
        if self.codec.mode == CodecMode::Linear && !matches!(self.codec.latent_dim, Some(d) if d > 0) {
            return Err(Error::Config("codec.latent_dim must be set for the linear codec".into()));
        }
        if !(self.codec.max_mse > 0.0) {
            return Err(Error::Config("codec.max_mse must be positive".into()));
        }
        if self.sampling.n_samples == Some(0) {
            return Err(Error::Config("sampling.n_samples must be positive".into()));
        }
        if self.sweep.seeds.is_empty() || self.sweep.levels.is_empty() {
            return Err(Error::Config("sweep needs at least one level and one seed".into()));
        }
        Ok(())
    }

    /// Checks that the input files exist; only `prepare` reads them.
    pub fn check_inputs(&self) -> Result<()> {
        for (name, p) in [("paths.data", &self.paths.data), ("paths.schema", &self.paths.schema)] {
            if !p.is_file() {
                return Err(Error::Config(format!("{name}: {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        self.jobs.max(1)
    }
}

/// Override values are JSON when they parse as JSON, strings otherwise.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn set_dotted(root: &mut Value, key: &str, v: Value) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` does not address an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), v);
    Ok(())
}
