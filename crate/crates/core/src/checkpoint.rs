//! Binary checkpoint containers.
//!
//! Layout: a header line (`viewpose-ckpt-v1\n` or `viewpose-head-v1\n`), a
//! little-endian `u64` byte length, that many bytes of JSON metadata, then
//! every tensor's raw little-endian elements in the order the metadata lists
//! them. Writing goes through a temporary file and a rename, so a crash never
//! leaves a truncated checkpoint under the final name.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::optim::AdamState;
use autodiff::{ParamKind, ParamStore, Scalar, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Autoencoder, ModelConfig};

pub const CHECKPOINT_HEADER: &str = "viewpose-ckpt-v1";
pub const HEAD_HEADER: &str = "viewpose-head-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub(crate) enum Section {
    Trainable,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    section: Section,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta<M> {
    dtype: String,
    body: M,
    tensors: Vec<TensorMeta>,
}

pub(crate) struct Record<T> {
    pub name: String,
    pub section: Section,
    pub tensor: Tensor<T>,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), message: message.into() }
}

pub(crate) fn store_records<T: Scalar>(store: &ParamStore<T>) -> Vec<Record<T>> {
    store
        .entries()
        .map(|(_, e)| Record {
            name: e.name.clone(),
            section: match e.kind {
                ParamKind::Trainable => Section::Trainable,
                ParamKind::Buffer => Section::Buffer,
            },
            tensor: e.value().clone(),
        })
        .collect()
}

fn adam_records<T: Scalar>(state: &AdamState<T>) -> Vec<Record<T>> {
    state
        .moments
        .iter()
        .flat_map(|(name, m, v)| {
            [
                Record { name: name.clone(), section: Section::AdamM, tensor: m.clone() },
                Record { name: name.clone(), section: Section::AdamV, tensor: v.clone() },
            ]
        })
        .collect()
}

/// Splits records back into a parameter store and Adam moments.
pub(crate) fn split_records<T: Scalar>(path: &Path, records: Vec<Record<T>>) -> Result<(ParamStore<T>, Vec<(String, Tensor<T>, Tensor<T>)>)> {
    let mut store = ParamStore::new();
    let mut moments: Vec<(String, Tensor<T>, Tensor<T>)> = Vec::new();
    let mut pending_m: Option<(String, Tensor<T>)> = None;
    for r in records {
        match r.section {
            Section::Trainable | Section::Buffer => {
                let kind = if r.section == Section::Trainable { ParamKind::Trainable } else { ParamKind::Buffer };
                store.add(r.name, kind, r.tensor).map_err(|e| ckpt_err(path, e.to_string()))?;
            }
            Section::AdamM => pending_m = Some((r.name, r.tensor)),
            Section::AdamV => match pending_m.take() {
                Some((name, m)) if name == r.name => moments.push((name, m, r.tensor)),
                _ => return Err(ckpt_err(path, format!("optimizer second moment for {} without first moment", r.name))),
            },
        }
    }
    if let Some((name, _)) = pending_m {
        return Err(ckpt_err(path, format!("optimizer first moment for {name} without second moment")));
    }
    Ok((store, moments))
}

pub(crate) fn write_container<T: Scalar, M: Serialize>(path: &Path, header: &str, body: &M, records: &[Record<T>]) -> Result<()> {
    let meta = Meta {
        dtype: T::DTYPE.to_string(),
        body,
        tensors: records
            .iter()
            .map(|r| TensorMeta { name: r.name.clone(), section: r.section, shape: r.tensor.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| ckpt_err(path, e.to_string()))?;
    let mut bytes = Vec::with_capacity(json.len() + records.iter().map(|r| r.tensor.numel() * 8).sum::<usize>() + 64);
    bytes.extend_from_slice(header.as_bytes());
    bytes.push(b'\n');
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for r in records {
        bytes.extend_from_slice(&T::to_le_bytes_vec(r.tensor.data()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let tmp = tmp_path(path);
    let mut f = fs::File::create(&tmp).map_err(Error::io(&tmp))?;
    f.write_all(&bytes).map_err(Error::io(&tmp))?;
    f.sync_all().map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub(crate) fn read_container<T: Scalar, M: DeserializeOwned>(path: &Path, header: &str) -> Result<(M, Vec<Record<T>>)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let head_len = header.len() + 1;
    if bytes.len() < head_len + 8 || &bytes[..header.len()] != header.as_bytes() || bytes[header.len()] != b'\n' {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(24)]).lines().next().unwrap_or("").to_string();
        return Err(ckpt_err(path, format!("expected header {header:?}, found {found:?}")));
    }
    let json_len = u64::from_le_bytes(bytes[head_len..head_len + 8].try_into().expect("8 bytes")) as usize;
    let json_start = head_len + 8;
    let data_start = json_start
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| ckpt_err(path, "metadata length exceeds file size"))?;
    let meta: Meta<M> =
        serde_json::from_slice(&bytes[json_start..data_start]).map_err(|e| ckpt_err(path, format!("metadata: {e}")))?;
    if meta.dtype != T::DTYPE {
        return Err(ckpt_err(path, format!("stored as {}, requested {}", meta.dtype, T::DTYPE)));
    }
    let width = std::mem::size_of::<T>();
    let mut offset = data_start;
    let mut records = Vec::with_capacity(meta.tensors.len());
    for t in meta.tensors {
        let n: usize = t.shape.iter().product();
        let end = offset + n * width;
        if end > bytes.len() {
            return Err(ckpt_err(path, format!("truncated data for tensor {}", t.name)));
        }
        let data = T::from_le_bytes_slice(&bytes[offset..end]);
        let tensor = Tensor::new(&t.shape, data).map_err(|e| ckpt_err(path, e.to_string()))?;
        records.push(Record { name: t.name, section: t.section, tensor });
        offset = end;
    }
    if offset != bytes.len() {
        return Err(ckpt_err(path, format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((meta.body, records))
}

/// Hex-encoded SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointBody {
    model: ModelConfig,
    epoch: usize,
    step: u64,
    optimizer_step: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A full autoencoder snapshot with optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub model: Autoencoder<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub optimizer: Option<AdamState<T>>,
    /// Free-form run configuration echo.
    pub extra: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut records = store_records(self.model.store());
        let optimizer_step = match &self.optimizer {
            Some(state) => {
                records.extend(adam_records(state));
                state.step
            }
            None => 0,
        };
        let body = CheckpointBody {
            model: self.model.config().clone(),
            epoch: self.epoch,
            step: self.step,
            optimizer_step,
            extra: self.extra.clone(),
        };
        write_container(path, CHECKPOINT_HEADER, &body, &records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (body, records): (CheckpointBody, _) = read_container(path, CHECKPOINT_HEADER)?;
        let has_optimizer = records.iter().any(|r| matches!(r.section, Section::AdamM)) || body.optimizer_step > 0;
        let (store, moments) = split_records(path, records)?;
        let model = Autoencoder::from_store(body.model, store).map_err(|e| ckpt_err(path, e.to_string()))?;
        let optimizer = has_optimizer.then(|| AdamState { step: body.optimizer_step, moments });
        Ok(Self { model, epoch: body.epoch, step: body.step, optimizer, extra: body.extra })
    }
}
