//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic    8 bytes   "ENVAECKP"
//! version  u32       1
//! hlen     u64       length of the JSON header in bytes
//! header   hlen      UTF-8 JSON: arch, loss config, counters, rng state,
//!                    and a manifest {name, group, shape, offset} per tensor
//! payload  ...       raw f64 values, tensors in manifest order; `offset`
//!                    is the byte offset from the start of the payload
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::data::DataKind;
use crate::error::{CheckpointError, Error, Result};
use crate::losses::LossConfig;
use crate::nets::{ModelArch, Params};
use crate::random::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ENVAECKP";
pub const VERSION: u32 = 1;

/// Everything needed to resume training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Params,
    pub adam: AdamState,
    pub step: u64,
    pub epoch: u64,
    pub rng: RngState,
    pub loss: LossConfig,
    /// Shape of the data the model was trained on, when known.
    pub data_kind: Option<DataKind>,
}

impl Checkpoint {
    pub fn arch(&self) -> &ModelArch {
        self.params.arch()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ModelArch,
    loss: LossConfig,
    step: u64,
    epoch: u64,
    adam_step: u64,
    rng: RngState,
    data_kind: Option<DataKind>,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    group: Group,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    AdamM,
    AdamV,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let groups: [(Group, Vec<(&String, &Tensor)>); 3] = [
        (Group::Param, ckpt.params.iter().collect()),
        (Group::AdamM, ckpt.adam.m.iter().collect()),
        (Group::AdamV, ckpt.adam.v.iter().collect()),
    ];
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    for (group, tensors) in &groups {
        for (name, t) in tensors {
            manifest.push(ManifestEntry {
                name: (*name).clone(),
                group: *group,
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = Header {
        arch: ckpt.arch().clone(),
        loss: ckpt.loss.clone(),
        step: ckpt.step,
        epoch: ckpt.epoch,
        adam_step: ckpt.adam.step,
        rng: ckpt.rng,
        data_kind: ckpt.data_kind,
        tensors: manifest,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take(bytes: &[u8], at: usize, len: usize) -> Result<&[u8], CheckpointError> {
    let end = at.checked_add(len).filter(|&e| e <= bytes.len());
    match end {
        Some(end) => Ok(&bytes[at..end]),
        None => Err(CheckpointError::Truncated {
            needed: at as u64 + len as u64,
            available: bytes.len() as u64,
        }),
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let magic = take(bytes, 0, 8)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = u32::from_le_bytes(take(bytes, 8, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let hlen = u64::from_le_bytes(take(bytes, 12, 8)?.try_into().unwrap());
    let hlen = usize::try_from(hlen).map_err(|_| CheckpointError::Truncated {
        needed: hlen,
        available: bytes.len() as u64,
    })?;
    let header: Header = serde_json::from_slice(take(bytes, 20, hlen)?)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload_start = 20 + hlen;

    let mut groups: [BTreeMap<String, Tensor>; 3] = Default::default();
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let raw = take(bytes, payload_start + entry.offset as usize, numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let slot = match entry.group {
            Group::Param => 0,
            Group::AdamM => 1,
            Group::AdamV => 2,
        };
        groups[slot].insert(entry.name.clone(), t);
    }
    let [params, m, v] = groups;
    let params = Params::from_tensors(&header.arch, params)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(Checkpoint {
        version,
        params,
        adam: AdamState {
            step: header.adam_step,
            m,
            v,
        },
        step: header.step,
        epoch: header.epoch,
        rng: header.rng,
        loss: header.loss,
        data_kind: header.data_kind,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossVariant;
    use crate::nets::{HiddenActivation, OutputActivation};
    use crate::random::Rng;

    fn sample() -> Checkpoint {
        let arch = ModelArch {
            input_dim: 3,
            latent_dim: 2,
            encoder_hidden: vec![4],
            decoder_hidden: vec![4],
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Sigmoid,
        };
        let mut rng = Rng::new(5);
        let params = Params::init(&arch, &mut rng).unwrap();
        let mut adam = AdamState::new(&params);
        adam.step = 7;
        for t in adam.m.values_mut().chain(adam.v.values_mut()) {
            for v in t.data_mut() {
                *v = rng.normal() * 1e-3;
            }
        }
        Checkpoint {
            version: VERSION,
            params,
            adam,
            step: 7,
            epoch: 2,
            rng: rng.state(),
            loss: LossConfig::new(LossVariant::Fenvae),
            data_kind: Some(DataKind::Vector),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        for ((_, a), (_, b)) in c.params.iter().zip(back.params.iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Checkpoint(CheckpointError::BadMagic))
        ));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 2, .. }))
        ));
    }

    #[test]
    fn truncated_mid_tensor() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 12];
        assert!(matches!(
            decode_checkpoint(cut),
            Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
        ));
        assert!(matches!(
            decode_checkpoint(&bytes[..5]),
            Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
        ));
    }
}
