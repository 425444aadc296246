//! JSON model checkpoint with a versioned magic header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::LatentCodec;
use super::config::{ConditionCards, DenoiserConfig};
use super::network::{Denoiser, ParamLayout};
use crate::data::BlockLayout;
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &str = "FAIRDIFF-CKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub config_hash: String,
    pub manifest_id: String,
    pub schedule: ScheduleKind,
    pub timesteps: usize,
    /// Layout of the encoded rows before the codec.
    pub data_layout: BlockLayout,
    pub codec: LatentCodec,
    pub config: DenoiserConfig,
    /// Layout the network operates on (codec output).
    pub layout: BlockLayout,
    pub cards: ConditionCards,
    pub param_layout: ParamLayout,
    pub trained_epochs: usize,
    pub params: Vec<f64>,
}

/// Everything needed to sample: network, codec and schedule.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Denoiser,
    pub codec: LatentCodec,
    pub data_layout: BlockLayout,
    pub schedule: NoiseSchedule,
}

impl Checkpoint {
    pub fn new(trained: &TrainedModel, config_hash: &str, manifest_id: &str) -> Result<Self> {
        let schedule = trained
            .schedule
            .kind()
            .ok_or_else(|| Error::Invalid("only named schedules can be checkpointed".into()))?;
        let m = &trained.model;
        Ok(Checkpoint {
            magic: MAGIC.into(),
            version: VERSION,
            config_hash: config_hash.into(),
            manifest_id: manifest_id.into(),
            schedule,
            timesteps: trained.schedule.timesteps(),
            data_layout: trained.data_layout.clone(),
            codec: trained.codec.clone(),
            config: m.config().clone(),
            layout: m.layout().clone(),
            cards: m.cards().clone(),
            param_layout: m.param_layout().clone(),
            trained_epochs: m.trained_epochs(),
            params: m.params().to_vec(),
        })
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.magic != MAGIC {
            return Err(Error::Invalid(format!("not a checkpoint (magic {:?})", self.magic)));
        }
        if self.version != VERSION {
            return Err(Error::Invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.codec.latent_layout(&self.data_layout) != self.layout {
            return Err(Error::Mismatch("codec output does not match network layout".into()));
        }
        let model = Denoiser::from_parts(
            self.config,
            self.layout,
            self.cards,
            self.param_layout,
            self.params,
            self.trained_epochs,
        )?;
        Ok(TrainedModel {
            model,
            codec: self.codec,
            data_layout: self.data_layout,
            schedule: NoiseSchedule::new(self.schedule, self.timesteps)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("magic").and_then(|m| m.as_str()) != Some(MAGIC) {
            return Err(Error::Invalid(format!("{} is not a checkpoint", path.display())));
        }
        Ok(serde_json::from_value(value)?)
    }
}
