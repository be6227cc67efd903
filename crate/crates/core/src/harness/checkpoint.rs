//! Checkpoint container.
//!
//! Layout: the 8-byte magic `RELMODCK`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the UTF-8 JSON header, then
//! every parameter tensor as raw little-endian `f64` values in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::EpochRecord;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::substrate::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"RELMODCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub group: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    /// Epoch (1-based) whose parameters are stored; 0 before any training.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    vocab: Vocab,
    epoch: usize,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

pub fn snapshot(store: &ParamStore) -> Vec<NamedTensor> {
    store
        .iter()
        .map(|(_, p)| NamedTensor {
            name: p.name.clone(),
            group: p.group.clone(),
            tensor: p.value.clone(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        config: &RunConfig,
        vocab: &Vocab,
        epoch: usize,
        history: Vec<EpochRecord>,
    ) -> Self {
        Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            epoch,
            history,
            params: snapshot(&model.store),
        }
    }

    /// Rebuilds the model and loads every stored tensor by name.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model.clone(), self.vocab.len(), self.config.seed)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for nt in &self.params {
            let id = model
                .store
                .find(&nt.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", nt.name)))?;
            let slot = model.store.value_mut(id);
            if slot.shape() != nt.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    nt.name,
                    nt.tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = nt.tensor.clone();
        }
        Ok(model)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            tensors: self
                .params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    group: p.group.clone(),
                    shape: p.tensor.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for p in &self.params {
            for v in p.tensor.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;

        let mut params = Vec::with_capacity(header.tensors.len());
        let mut buf = [0u8; 8];
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("truncated data for `{}`", entry.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            params.push(NamedTensor {
                name: entry.name,
                group: entry.group,
                tensor: Tensor::new(entry.shape, data)?,
            });
        }
        if input.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            vocab: header.vocab,
            epoch: header.epoch,
            history: header.history,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
