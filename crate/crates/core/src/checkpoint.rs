//! Versioned checkpoint archives.
//!
//! Layout: the tag `duoseg-ckpt-v1\n`, a little-endian `u64` header length,
//! a JSON header, then every tensor listed in the header as little-endian
//! `f32` values in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::UNet;
use crate::trainer::{CyclerState, Models, TrainConfig, TrainState};

pub const FORMAT_TAG: &str = "duoseg-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config_hash: String,
    pub config: TrainConfig,
    /// completed epochs
    pub epoch: usize,
    pub seg_steps: u64,
    pub critic_steps: u64,
    pub best_test_dsc: Option<f64>,
    pub best_epoch: Option<usize>,
    /// `[height, width]` the networks were trained at
    pub resolution: [usize; 2],
    /// batch streams for view 1, view 2 and the unlabeled pool
    pub sampler: Option<[CyclerState; 3]>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, resolution: [usize; 2]) -> Self {
        let mut named: Vec<(&str, &[f32])> = vec![("f1", state.models.f1.params())];
        if let Some(f2) = &state.models.f2 {
            named.push(("f2", f2.params()));
        }
        if let Some(c) = &state.models.critic {
            named.push(("critic", c.params()));
        }
        if let Some(t) = &state.models.teacher {
            named.push(("teacher", t.params()));
        }
        named.push(("opt1.velocity", &state.opt1.velocity));
        if let Some(o) = &state.opt2 {
            named.push(("opt2.velocity", &o.velocity));
        }
        if let Some(o) = &state.critic_opt {
            named.push(("critic_opt.square_avg", &o.square_avg));
        }
        let mut entries = Vec::with_capacity(named.len());
        let mut offset = 0;
        for (name, t) in &named {
            entries.push(TensorEntry {
                name: name.to_string(),
                offset,
                len: t.len(),
            });
            offset += t.len();
        }
        Self {
            header: CheckpointHeader {
                format: FORMAT_TAG.into(),
                config_hash: state.config.hash(),
                config: state.config.clone(),
                epoch: state.epoch,
                seg_steps: state.seg_steps,
                critic_steps: state.critic_steps,
                best_test_dsc: state.best_test_dsc.is_finite().then_some(state.best_test_dsc),
                best_epoch: state.best_epoch,
                resolution,
                sampler: state.sampler_states(),
                tensors: entries,
            },
            tensors: named.into_iter().map(|(_, t)| t.to_vec()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(FORMAT_TAG.len() + 9 + header.len() + 4 * self.tensors.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(FORMAT_TAG.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let tag_len = FORMAT_TAG.len() + 1;
        if bytes.len() < tag_len + 8 || &bytes[..FORMAT_TAG.len()] != FORMAT_TAG.as_bytes() || bytes[FORMAT_TAG.len()] != b'\n' {
            return Err(Error::Checkpoint(format!("missing {FORMAT_TAG} tag")));
        }
        let header_len = u64::from_le_bytes(bytes[tag_len..tag_len + 8].try_into().expect("8 bytes")) as usize;
        let body = tag_len + 8;
        let header_end = body
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[body..header_end])?;
        if header.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", header.format)));
        }
        let payload = &bytes[header_end..];
        let total: usize = header.tensors.iter().map(|t| t.len).sum();
        if payload.len() != total * 4 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header lists {}",
                payload.len(),
                total * 4
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let end = e.offset.checked_add(e.len).filter(|&end| end <= total);
            let Some(end) = end else {
                return Err(Error::Checkpoint(format!("tensor {} out of bounds", e.name)));
            };
            tensors.push(
                payload[e.offset * 4..end * 4]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            );
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| self.tensors[i].as_slice())
    }

    fn require(&self, name: &str) -> Result<Vec<f32>> {
        self.tensor(name)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing")))
    }

    /// Rebuilds the networks stored in the archive.
    pub fn models(&self) -> Result<Models> {
        let cfg = &self.header.config;
        let seg = cfg.segnet.unet()?;
        let optional = |name: &str, present: bool, unet| -> Result<Option<UNet<f32>>> {
            if present {
                Ok(Some(UNet::from_params(unet, self.require(name)?)?))
            } else {
                Ok(None)
            }
        };
        Ok(Models {
            f1: UNet::from_params(seg, self.require("f1")?)?,
            f2: optional("f2", cfg.mode.has_second_net(), seg)?,
            critic: optional("critic", cfg.mode.has_critic(), cfg.critic.unet()?)?,
            teacher: optional("teacher", cfg.mode == crate::trainer::Mode::MeanTeacher, seg)?,
        })
    }

    /// Rebuilds the full training state, including optimizer moments and batch streams.
    pub fn to_state(&self) -> Result<TrainState> {
        let mut state = TrainState::new(self.header.config.clone())?;
        state.models = self.models()?;
        state.opt1.velocity = self.require("opt1.velocity")?;
        if let Some(o) = state.opt2.as_mut() {
            o.velocity = self.require("opt2.velocity")?;
        }
        if let Some(o) = state.critic_opt.as_mut() {
            o.square_avg = self.require("critic_opt.square_avg")?;
        }
        state.epoch = self.header.epoch;
        state.seg_steps = self.header.seg_steps;
        state.critic_steps = self.header.critic_steps;
        state.best_test_dsc = self.header.best_test_dsc.unwrap_or(f64::NEG_INFINITY);
        state.best_epoch = self.header.best_epoch;
        if let Some(s) = &self.header.sampler {
            state.restore_sampler(s);
        }
        Ok(state)
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
