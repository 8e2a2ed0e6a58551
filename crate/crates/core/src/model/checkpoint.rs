use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::CraftModel;
use super::ModelError;
use crate::numerics::{DenseArray, ParamStore, Precision, Real};

const MAGIC: &[u8; 8] = b"CRAFTCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Self-describing part of a checkpoint, stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub num_nodes: usize,
    pub dataset_checksum: String,
    pub config_fingerprint: String,
    pub seed: u64,
    pub epoch: u64,
    pub precision: Precision,
    pub arrays: Vec<ArrayEntry>,
}

impl CheckpointHeader {
    /// Reads only the header of a serialized checkpoint, e.g. to find out
    /// its precision before loading.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        Ok(Self::parse(bytes)?.0)
    }

    fn parse(bytes: &[u8]) -> Result<(Self, usize), ModelError> {
        let bad = |msg: &str| ModelError::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let header = serde_json::from_slice(body)
            .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        Ok((header, header_len))
    }
}

/// Parameter values plus their header.
///
/// Layout: magic `CRAFTCKP`, version `u32`, header length `u64`, the JSON
/// header, then every array's values in header order as little-endian
/// floats of the header's precision. Optimizer moments are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub store: ParamStore<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(
        model: &CraftModel,
        store: &ParamStore<T>,
        dataset_checksum: &str,
        config_fingerprint: &str,
        seed: u64,
        epoch: u64,
    ) -> Self {
        let arrays = store
            .groups()
            .iter()
            .map(|g| ArrayEntry {
                name: g.name.clone(),
                shape: g.value.shape().to_vec(),
                trainable: g.trainable,
            })
            .collect();
        let mut values = ParamStore::new();
        for g in store.groups() {
            let id = values.add(g.name.clone(), g.value.clone());
            values.group_mut(id).trainable = g.trainable;
        }
        Self {
            header: CheckpointHeader {
                config: model.config.clone(),
                num_nodes: model.num_nodes,
                dataset_checksum: dataset_checksum.to_string(),
                config_fingerprint: config_fingerprint.to_string(),
                seed,
                epoch,
                precision: T::PRECISION,
                arrays,
            },
            store: values,
        }
    }

    pub fn model(&self) -> Result<CraftModel, ModelError> {
        CraftModel::bind(
            self.header.config.clone(),
            self.header.num_nodes,
            &self.store,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header =
            serde_json::to_vec(&self.header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(
            20 + header.len() + self.store.num_values() * T::PRECISION.byte_width(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for g in self.store.groups() {
            for &v in g.value.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ModelError> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |msg: &str| ModelError::Checkpoint(msg.to_string());
        let (header, header_len) = CheckpointHeader::parse(bytes)?;
        if header.precision != T::PRECISION {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint stores {} precision, requested {}",
                header.precision,
                T::PRECISION
            )));
        }
        let width = T::PRECISION.byte_width();
        let mut pos = 20 + header_len;
        let mut store = ParamStore::new();
        for entry in &header.arrays {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(pos..pos + n * width)
                .ok_or_else(|| bad("truncated array data"))?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            let id = store.add(
                entry.name.clone(),
                DenseArray::from_vec(&entry.shape, data)?,
            );
            store.group_mut(id).trainable = entry.trainable;
            pos += n * width;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after array data"));
        }
        Ok(Self { header, store })
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
