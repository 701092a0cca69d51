//! Single-file model checkpoints: magic, version, JSON header, then every
//! parameter as little-endian `f64`.

use std::io::Read as _;
use std::path::Path;

use cablegraph_core::gnn::{Model, ModelConfig, OutputScale};
use cablegraph_core::graphgen::GraphConfig;
use cablegraph_core::net::ParamMeta;
use cablegraph_core::train::TrainReport;
use serde::{Deserialize, Serialize};

use crate::config::RobotConfig;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"CGCKPT\0\0";
pub const VERSION: u32 = 1;

/// Condensed training history kept with the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub num_train_items: usize,
    pub num_val_items: usize,
}

impl TrainSummary {
    /// Summary after `report`, counting epochs run before it as well.
    pub fn from_report(report: &TrainReport) -> Self {
        Self {
            epochs_completed: report.epochs.last().map_or(0, |e| e.epoch + 1),
            best_epoch: report.best_epoch,
            best_val_loss: report.best_val_loss,
            final_train_loss: report.epochs.last().map_or(f64::NAN, |e| e.train_loss),
            num_train_items: report.num_train_items,
            num_val_items: report.num_val_items,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub robot: RobotConfig,
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub output_scale: OutputScale,
    pub params: Vec<ParamMeta>,
    pub train: Option<TrainSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, robot: RobotConfig, train: Option<TrainSummary>) -> Self {
        let header = CheckpointHeader {
            version: VERSION,
            robot,
            model: model.config.clone(),
            graph: model.graph.clone(),
            output_scale: model.output_scale.clone(),
            params: model.params.meta(),
            train,
        };
        Self { header, model }
    }

    pub fn epochs_completed(&self) -> usize {
        self.header.train.as_ref().map_or(0, |t| t.epochs_completed)
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let flat = self.model.params.flat_values();
        let mut out = Vec::with_capacity(20 + header.len() + 8 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> CliResult<Self> {
        let bad = |m: &str| CliError::checkpoint(origin, m);
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&r[..len])?;
        let payload = &r[len..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let flat: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut model = Model::new(header.model.clone(), header.graph.clone(), 0)?;
        model.params.load_flat(&header.params, &flat)?;
        model.output_scale = header.output_scale.clone();
        Ok(Self { header, model })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::missing("checkpoint", path));
        }
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
