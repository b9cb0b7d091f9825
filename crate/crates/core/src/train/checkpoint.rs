//! Binary checkpoint format.
//!
//! ```text
//! "LVNETCKPT"           9 bytes
//! version               u32 little-endian
//! header length         u64 little-endian
//! header                UTF-8 JSON (arch, train, step, params, moments)
//! parameter values      f32 little-endian, header order
//! first moments         same layout, present iff header.moments
//! second moments        same layout, present iff header.moments
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimState, TrainConfig};
use crate::arch::{ArchConfig, Model};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"LVNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    train: Option<TrainConfig>,
    step: u64,
    params: Vec<ParamEntry>,
    moments: bool,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

/// Everything restored from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub state: Option<OptimState>,
    pub train_config: Option<TrainConfig>,
    pub step: u64,
}

pub fn encode_checkpoint(model: &Model<f32>, state: Option<&OptimState>, train: Option<&TrainConfig>) -> Vec<u8> {
    let header = Header {
        arch: model.config().clone(),
        train: train.cloned(),
        step: state.map_or(0, |s| s.step),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        moments: state.is_some(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let n = model.num_params();
    let mut out = Vec::with_capacity(9 + 12 + json.len() + 4 * n * if state.is_some() { 3 } else { 1 });
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |t: &Tensor<f32>| {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for p in model.params().iter() {
        put(&p.value);
    }
    if let Some(s) = state {
        s.m.iter().for_each(&mut put);
        s.v.iter().for_each(&mut put);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                field,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize], field: &str) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4, field)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(9, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", "not an LVNETCKPT file"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "version",
            format!("file has version {version}, this build reads {CHECKPOINT_VERSION}"),
        ));
    }
    let hlen = u64::from_le_bytes(r.take(8, "header length")?.try_into().unwrap());
    let hlen = usize::try_from(hlen).map_err(|_| Error::format("header length", "too large"))?;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::format("header", e.to_string()))?;
    header
        .arch
        .validate()
        .map_err(|e| Error::format("header.arch", e.to_string()))?;

    let mut model = Model::zeros(header.arch.clone()).map_err(|e| Error::format("header.arch", e.to_string()))?;
    if model.params().len() != header.params.len() {
        return Err(Error::format(
            "header.params",
            format!(
                "{} entries, architecture defines {}",
                header.params.len(),
                model.params().len()
            ),
        ));
    }
    for (p, e) in model.params().iter().zip(&header.params) {
        if p.name != e.name || p.value.shape() != e.shape.as_slice() {
            return Err(Error::format(
                format!("header.params[{}]", e.name),
                format!("expected {} {:?}", p.name, p.value.shape()),
            ));
        }
    }
    let mut values = Vec::with_capacity(header.params.len());
    for e in &header.params {
        values.push(r.tensor(&e.shape, &format!("parameter data for {}", e.name))?);
    }
    let state = if header.moments {
        let mut m = Vec::with_capacity(header.params.len());
        for e in &header.params {
            m.push(r.tensor(&e.shape, &format!("first moment for {}", e.name))?);
        }
        let mut v = Vec::with_capacity(header.params.len());
        for e in &header.params {
            v.push(r.tensor(&e.shape, &format!("second moment for {}", e.name))?);
        }
        Some(OptimState { step: header.step, m, v })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::format(
            "trailer",
            format!("{} unexpected bytes after the last block", bytes.len() - r.pos),
        ));
    }
    for (p, v) in model.params_mut().iter_mut().zip(values) {
        p.value = v;
    }
    Ok(Checkpoint {
        model,
        state,
        train_config: header.train,
        step: header.step,
    })
}

pub fn checkpoint_save(
    path: impl AsRef<Path>,
    model: &Model<f32>,
    state: Option<&OptimState>,
    train: Option<&TrainConfig>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model, state, train)).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::xavier_model;

    #[test]
    fn truncation_is_a_format_error() {
        let m = xavier_model(ArchConfig::tiny(), 1).unwrap();
        let st = OptimState::new(m.params());
        let bytes = encode_checkpoint(&m, Some(&st), None);
        let err = decode_checkpoint(&bytes[..bytes.len() - 1]).unwrap_err();
        match err {
            Error::Format { field, .. } => assert!(field.contains("second moment"), "{field}"),
            e => panic!("unexpected {e}"),
        }
        assert!(decode_checkpoint(&bytes).is_ok());
    }

    #[test]
    fn version_mismatch_is_named() {
        let m = xavier_model(ArchConfig::tiny(), 1).unwrap();
        let mut bytes = encode_checkpoint(&m, None, None);
        bytes[9] = 99;
        match decode_checkpoint(&bytes).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "version"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn size_is_params_times_four_plus_header() {
        let m = xavier_model(ArchConfig::tiny(), 1).unwrap();
        let bytes = encode_checkpoint(&m, None, None);
        let hlen = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 21 + hlen + 4 * m.num_params());
    }
}
