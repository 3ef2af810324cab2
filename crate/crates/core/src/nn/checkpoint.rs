//! Checkpoint files: `model.json` (architecture and provenance) plus
//! `model.bin` (parameter blocks in declared order, row-major,
//! little-endian `f32`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::params::{count_parameters, Arch, ModelParameters};

pub const FORMAT: &str = "nbdf-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
pub const JSON_FILE: &str = "model.json";
pub const BIN_FILE: &str = "model.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub ref_channel: usize,
    pub seed: u64,
    pub num_parameters: usize,
    /// Training configuration echo, free-form.
    pub train_config: serde_json::Value,
    pub blocks: Vec<BlockShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParameters<f32>,
}

impl Checkpoint {
    pub fn new(
        params: ModelParameters<f32>,
        ref_channel: usize,
        seed: u64,
        train_config: serde_json::Value,
    ) -> Result<Self> {
        let arch = *params.arch();
        if ref_channel >= arch.num_channels {
            return invalid(format!(
                "reference channel {ref_channel} out of range for {} channels",
                arch.num_channels
            ));
        }
        let blocks = params
            .blocks()
            .iter()
            .map(|b| BlockShape { name: b.name.clone(), shape: b.shape.clone() })
            .collect();
        let meta = CheckpointMeta {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            arch,
            ref_channel,
            seed,
            num_parameters: count_parameters(&arch),
            train_config,
            blocks,
        };
        Ok(Self { meta, params })
    }

    pub fn arch(&self) -> &Arch {
        self.params.arch()
    }

    /// Write `model.json` and `model.bin` into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(JSON_FILE), serde_json::to_string_pretty(&self.meta)?)?;
        let mut bytes = Vec::with_capacity(self.params.len() * 4);
        for v in self.params.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(BIN_FILE), bytes)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(JSON_FILE))?)?;
        if meta.format != FORMAT || meta.version != FORMAT_VERSION {
            return invalid(format!(
                "unsupported checkpoint format {} v{}",
                meta.format, meta.version
            ));
        }
        meta.arch.validate()?;
        let expected = ModelParameters::<f32>::zeros(meta.arch)?;
        let declared: Vec<(&str, &[usize])> =
            meta.blocks.iter().map(|b| (b.name.as_str(), b.shape.as_slice())).collect();
        let actual: Vec<(&str, &[usize])> =
            expected.blocks().iter().map(|b| (b.name.as_str(), b.shape.as_slice())).collect();
        if declared != actual {
            return invalid("checkpoint block list does not match its architecture");
        }
        let bytes = fs::read(dir.join(BIN_FILE))?;
        if bytes.len() != expected.len() * 4 {
            return invalid(format!(
                "{} holds {} bytes, expected {}",
                BIN_FILE,
                bytes.len(),
                expected.len() * 4
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let params = ModelParameters::from_data(meta.arch, data)?;
        if meta.ref_channel >= meta.arch.num_channels {
            return invalid("reference channel out of range");
        }
        Ok(Self { meta, params })
    }
}
