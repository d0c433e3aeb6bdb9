//! Checkpoint files: one JSON header line followed by every parameter as a
//! little-endian f64, in block order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{OwnedBlock, ParamSet};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub variant: String,
    pub shapes: Vec<BlockShape>,
    pub seed: u64,
    pub step: usize,
}

pub fn encode_checkpoint<P: ParamSet>(params: &P, seed: u64, step: usize) -> Result<Vec<u8>> {
    let blocks = params.blocks();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        variant: params.variant().to_string(),
        shapes: blocks
            .iter()
            .map(|b| BlockShape {
                name: b.name.clone(),
                shape: b.shape.clone(),
            })
            .collect(),
        seed,
        step,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for b in &blocks {
        for x in b.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<P: ParamSet>(bytes: &[u8]) -> Result<(P, CheckpointHeader)> {
    let mut reader = BufReader::new(bytes);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Checkpoint("missing header line".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let total: usize = header.shapes.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    if body.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            total * 8,
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let blocks = header
        .shapes
        .iter()
        .map(|s| OwnedBlock {
            name: s.name.clone(),
            shape: s.shape.clone(),
            data: values.by_ref().take(s.shape.iter().product()).collect(),
        })
        .collect();
    let params = P::from_blocks(&header.variant, blocks)?;
    Ok((params, header))
}

pub fn save_checkpoint<P: ParamSet>(path: impl AsRef<Path>, params: &P, seed: u64, step: usize) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, seed, step)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<P: ParamSet>(path: impl AsRef<Path>) -> Result<(P, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
