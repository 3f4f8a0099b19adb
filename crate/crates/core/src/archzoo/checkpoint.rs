//! Parameter checkpoints.
//!
//! A checkpoint is two files: `<stem>.bin` holds every parameter block as
//! consecutive 64-bit little-endian reals in registration order, and
//! `<stem>.json` names each block with its shape and element offset:
//!
//! ```json
//! {"format":"napool-params-v1","config":{...},
//!  "blocks":[{"name":"embed.token","shape":[100,128],"offset":0}, ...],
//!  "total":12345}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Real, Tensor};

use super::config::ModelConfig;
use super::model::Model;

const FORMAT: &str = "napool-params-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    config: ModelConfig,
    blocks: Vec<Block>,
    total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save<T: Real>(model: &Model<T>, stem: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(model.param_count() * 8);
    let mut blocks = Vec::new();
    let mut offset = 0;
    for (name, t) in model.names().iter().zip(model.params()) {
        blocks.push(Block { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let side = Sidecar { format: FORMAT.into(), config: model.config().clone(), blocks, total: offset };
    let (bin, json) = paths(stem);
    fs::write(bin, bytes)?;
    fs::write(json, serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

/// Reads a checkpoint written by [`save`].
pub fn load<T: Real>(stem: &Path) -> Result<Model<T>> {
    let (bin, json) = paths(stem);
    let side: Sidecar = serde_json::from_slice(&fs::read(json)?)?;
    if side.format != FORMAT {
        return Err(Error::config(format!("unsupported checkpoint format {:?}", side.format)));
    }
    let bytes = fs::read(bin)?;
    if bytes.len() != side.total * 8 {
        return Err(Error::config(format!(
            "checkpoint holds {} bytes, sidecar declares {} values",
            bytes.len(),
            side.total
        )));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut blocks = Vec::with_capacity(side.blocks.len());
    for b in side.blocks {
        let n: usize = b.shape.iter().product();
        let slice = values
            .get(b.offset..b.offset + n)
            .ok_or_else(|| Error::config(format!("block {} lies outside the data file", b.name)))?;
        blocks.push((b.name, Tensor::from_f64_shaped(&b.shape, slice)?));
    }
    Model::from_params(&side.config, blocks)
}
