//! Model checkpoints ("microlm/1") and optimizer state ("optim/1").

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use factlab_core::corpus::CorpusStream;
use factlab_core::microlm::{DType, MicroLm, ModelConfig, Real, Tokenizer};
use factlab_core::optimizer::{AdamWConfig, OptimizerState};

use crate::container::{self, Blobs, ContainerError};
use crate::hashing;

pub const MODEL_FORMAT: &str = "microlm/1";
pub const OPTIM_FORMAT: &str = "optim/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    tokenizer: Tokenizer,
    tokenizer_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimMeta {
    pub step_count: u64,
    /// Next training step to run; the schedule position.
    pub next_step: u64,
    pub optimizer: AdamWConfig,
    pub stream: CorpusStream,
}

pub fn encode_model<T: Real>(model: &MicroLm<T>, tokenizer: &Tokenizer) -> Result<Vec<u8>, ContainerError> {
    let meta =
        ModelMeta { config: model.config.clone(), tokenizer: tokenizer.clone(), tokenizer_hash: hashing::tokenizer_hash(tokenizer) };
    container::encode(MODEL_FORMAT, &meta, &Blobs { groups: vec![("", &model.params)] })
}

pub fn save_model<T: Real>(path: &Path, model: &MicroLm<T>, tokenizer: &Tokenizer) -> Result<(), ContainerError> {
    Ok(write_atomic(path, &encode_model(model, tokenizer)?)?)
}

/// Loads a checkpoint stored with element type `T`.
pub fn load_model<T: Real>(path: &Path) -> Result<(MicroLm<T>, Tokenizer), ContainerError> {
    let bytes = fs::read(path)?;
    let d = container::decode::<ModelMeta>(&bytes, MODEL_FORMAT)?;
    let params = d.tensors::<T>("")?;
    let model = MicroLm::from_params(d.meta.config.clone(), params)
        .map_err(|e| ContainerError::Format { expected: "params matching config".into(), actual: e.to_string() })?;
    Ok((model, d.meta.tokenizer))
}

/// Element type a checkpoint was stored with.
pub fn stored_dtype(path: &Path) -> Result<DType, ContainerError> {
    let bytes = fs::read(path)?;
    let (format, dtype) = container::peek(&bytes)?;
    if format != MODEL_FORMAT {
        return Err(ContainerError::Format { expected: MODEL_FORMAT.into(), actual: format });
    }
    dtype.ok_or(ContainerError::Truncated)
}

pub fn encode_state<T: Real>(state: &OptimizerState<T>, meta: &OptimMeta) -> Result<Vec<u8>, ContainerError> {
    container::encode(OPTIM_FORMAT, meta, &Blobs { groups: vec![("m.", &state.first_moment), ("v.", &state.second_moment)] })
}

pub fn save_state<T: Real>(path: &Path, state: &OptimizerState<T>, meta: &OptimMeta) -> Result<(), ContainerError> {
    Ok(write_atomic(path, &encode_state(state, meta)?)?)
}

pub fn load_state<T: Real>(path: &Path) -> Result<(OptimizerState<T>, OptimMeta), ContainerError> {
    let bytes = fs::read(path)?;
    let d = container::decode::<OptimMeta>(&bytes, OPTIM_FORMAT)?;
    let state = OptimizerState {
        step_count: d.meta.step_count,
        first_moment: d.tensors::<T>("m.")?,
        second_moment: d.tensors::<T>("v.")?,
    };
    Ok((state, d.meta))
}

/// Writes via a temporary sibling and rename, so a crash never leaves a
/// half-written file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
