//! Checkpoint file: magic "OGCK", u32 version, u32 index length, a UTF-8
//! JSON index, then one "OGEN" grid per parameter tensor in slot order.

use std::fs;
use std::path::Path;

use ndarray::Ix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqformer::{ModelConfig, ParamStore, SeqFormer};
use crate::synthgen::ogen;
use crate::viewcodec::{LatentCodec, Task};

pub const MAGIC: &[u8; 4] = b"OGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Index {
    config: ModelConfig,
    codec: LatentCodec,
    step: usize,
    tasks: Vec<Task>,
    tensors: Vec<String>,
}

/// A trained model with the codec of the data it was trained on.
#[derive(Clone)]
pub struct Checkpoint {
    pub model: SeqFormer<f32>,
    pub codec: LatentCodec,
    pub step: usize,
    pub tasks: Vec<Task>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let index = Index {
            config: self.model.config().clone(),
            codec: self.codec,
            step: self.step,
            tasks: self.tasks.clone(),
            tensors: params.names().to_vec(),
        };
        let json = serde_json::to_vec(&index).expect("index serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in params.tensors() {
            out.extend(ogen::encode(&t.clone().into_dyn()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(12..12 + len)
            .ok_or_else(|| Error::Format("truncated checkpoint index".into()))?;
        let index: Index =
            serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint index: {e}")))?;
        let mut at = 12 + len;
        let mut params = ParamStore::default();
        for name in &index.tensors {
            let (grid, used) = ogen::decode_prefix(&bytes[at..])?;
            at += used;
            let t = grid
                .into_dimensionality::<Ix2>()
                .map_err(|_| Error::Format(format!("tensor {name} is not 2-D")))?;
            params.push(name.clone(), t);
        }
        if at != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
        }
        let model = SeqFormer::from_params(index.config, params)?;
        if model.config().image_channels != index.codec.image_channels() {
            return Err(Error::Format("checkpoint codec does not match the model".into()));
        }
        Ok(Self {
            model,
            codec: index.codec,
            step: index.step,
            tasks: index.tasks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
