use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{EncoderEnsemble, EpochStats, TrainConfig};
use super::{Arch, Dims, EncoderParams};
use crate::dataset::ColumnMeta;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk encoder ensemble. Each member is its parameter blocks flattened
/// in block order, row-major. `columns` carries the preprocessing statistics
/// the encoder was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub dims: Dims,
    pub arch: Arch,
    pub train_config: TrainConfig,
    pub members: Vec<Vec<f64>>,
    #[serde(default)]
    pub columns: Vec<ColumnMeta>,
}

impl ModelFile {
    pub fn new(ensemble: &EncoderEnsemble, train_config: &TrainConfig, columns: Vec<ColumnMeta>) -> Result<Self> {
        ensemble.validate()?;
        let first = &ensemble.members[0];
        Ok(ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            dims: first.dims,
            arch: first.arch(),
            train_config: train_config.clone(),
            members: ensemble.members.iter().map(EncoderParams::flatten).collect(),
            columns,
        })
    }

    pub fn ensemble(&self) -> Result<EncoderEnsemble> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.members.is_empty() {
            return Err(Error::Format("model has no members".into()));
        }
        let members = self
            .members
            .iter()
            .map(|v| EncoderParams::unflatten(self.dims, self.arch, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderEnsemble { members, folds: Vec::new(), traces: Vec::new() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text)?;
        model.ensemble()?;
        Ok(model)
    }
}

/// Writes the per-epoch loss trace of every member as CSV.
pub fn write_trace(traces: &[Vec<EpochStats>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["member", "epoch", "mean_loss", "skipped_anchor_fraction"]).map_err(err)?;
    for (m, trace) in traces.iter().enumerate() {
        for s in trace {
            w.write_record([
                m.to_string(),
                s.epoch.to_string(),
                s.mean_loss.to_string(),
                s.skipped_anchor_fraction.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
