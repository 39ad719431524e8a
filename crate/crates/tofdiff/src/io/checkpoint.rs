//! Versioned binary checkpoint container.
//!
//! Layout: magic `TFCK`, u32 version, u64 header length, JSON header (model
//! config echo, schedule constants, seeds, loss history, tensor directory),
//! then all parameter tensors as little-endian f64 in directory order.
//! Parameters are widened to f64 on save, so f32 models round-trip exactly.

use crate::error::{Error, Result};
use crate::nn::{init_base, init_guidance, GuidanceNet, ModelConfig, ParamBlocks, UNet};
use crate::tensor::Real;
use crate::training::Stage;
use std::path::Path;

const MAGIC: &[u8; 4] = b"TFCK";
const VERSION: u32 = 1;
const MAX_HEADER_LEN: usize = 1 << 26;

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

/// Everything needed to rebuild and re-run a trained model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub frequency_hz: f64,
    pub scale_const: f64,
    /// Whether training data went through dynamic-range normalization.
    pub normalize: bool,
    pub stage: Stage,
    /// Seed the base model was initialized from.
    pub init_seed: u64,
    /// Seed of the training run that produced this checkpoint.
    pub train_seed: u64,
    pub loss_history: Vec<f64>,
    pub probe_loss_start: f64,
    pub probe_loss_end: f64,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct TensorEntry {
    name: String,
    len: u64,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct HeaderDoc {
    meta: CheckpointMeta,
    base_tensors: Vec<TensorEntry>,
    guidance_tensors: Vec<TensorEntry>,
}

/// A trained model plus its provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub base: UNet<T>,
    pub guidance: Option<GuidanceNet<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn schedule(&self) -> Result<crate::scheduler::Schedule> {
        crate::scheduler::Schedule::linear(
            self.meta.train_steps,
            self.meta.beta_start,
            self.meta.beta_end,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries = |blocks: Vec<(String, &[T])>| -> Vec<TensorEntry> {
            blocks
                .iter()
                .map(|(name, b)| TensorEntry {
                    name: name.clone(),
                    len: b.len() as u64,
                })
                .collect()
        };
        let base_blocks = self.base.named_blocks();
        let guidance_blocks = self
            .guidance
            .as_ref()
            .map(|g| g.named_blocks())
            .unwrap_or_default();
        let header = HeaderDoc {
            meta: self.meta.clone(),
            base_tensors: entries(base_blocks.clone()),
            guidance_tensors: entries(guidance_blocks.clone()),
        };
        let header_json = serde_json::to_vec(&header)?;
        let payload_len: usize = base_blocks
            .iter()
            .chain(guidance_blocks.iter())
            .map(|(_, b)| b.len() * 8)
            .sum();
        let mut out = Vec::with_capacity(16 + header_json.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, block) in base_blocks.iter().chain(guidance_blocks.iter()) {
            for v in block.iter() {
                out.extend_from_slice(&v.into_f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < 16 {
            return Err(bad("too short"));
        }
        if &data[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(data[4..8].try_into().expect("sized"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(data[8..16].try_into().expect("sized")) as usize;
        if header_len > MAX_HEADER_LEN || 16 + header_len > data.len() {
            return Err(bad("header length out of range"));
        }
        let header: HeaderDoc = serde_json::from_slice(&data[16..16 + header_len])?;
        header
            .meta
            .model
            .validate()
            .map_err(|e| bad(format!("model config: {e}")))?;

        let payload = &data[16 + header_len..];
        let declared: u64 = header
            .base_tensors
            .iter()
            .chain(header.guidance_tensors.iter())
            .map(|e| e.len)
            .sum();
        let expected_bytes = declared
            .checked_mul(8)
            .ok_or_else(|| bad("tensor directory overflows"))?;
        if payload.len() as u64 != expected_bytes {
            return Err(bad(format!(
                "payload is {} bytes, directory declares {expected_bytes}",
                payload.len()
            )));
        }

        let mut base: UNet<T> = init_base(&header.meta.model, header.meta.init_seed)
            .map_err(|e| bad(format!("rebuilding model: {e}")))?;
        let mut offset = 0usize;
        fill_blocks(&mut base, &header.base_tensors, payload, &mut offset)?;
        let guidance = if header.guidance_tensors.is_empty() {
            None
        } else {
            let mut g = init_guidance(&base);
            fill_blocks(&mut g, &header.guidance_tensors, payload, &mut offset)?;
            Some(g)
        };
        let ck = Checkpoint {
            meta: header.meta,
            base,
            guidance,
        };
        if !ck.base.all_finite()
            || ck.guidance.as_ref().map(|g| !g.all_finite()).unwrap_or(false)
        {
            return Err(bad("non-finite parameters"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn fill_blocks<T: Real, P: ParamBlocks<T>>(
    target: &mut P,
    entries: &[TensorEntry],
    payload: &[u8],
    offset: &mut usize,
) -> Result<()> {
    let mut blocks = target.named_blocks_mut();
    if blocks.len() != entries.len() {
        return Err(bad(format!(
            "tensor directory has {} entries, model expects {}",
            entries.len(),
            blocks.len()
        )));
    }
    for (entry, (name, block)) in entries.iter().zip(blocks.iter_mut()) {
        if entry.name != *name {
            return Err(bad(format!(
                "tensor {:?} does not match expected {:?}",
                entry.name, name
            )));
        }
        if entry.len as usize != block.len() {
            return Err(bad(format!(
                "tensor {:?} has length {}, model expects {}",
                entry.name,
                entry.len,
                block.len()
            )));
        }
        for v in block.iter_mut() {
            let bytes: [u8; 8] = payload[*offset..*offset + 8]
                .try_into()
                .expect("length checked");
            *v = T::from_f64(f64::from_le_bytes(bytes));
            *offset += 8;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_meta() -> CheckpointMeta {
        CheckpointMeta {
            model: ModelConfig {
                in_channels: 1,
                base_width: 2,
                depth_levels: 2,
                time_embed_dim: 4,
                guidance_channels: 2,
            },
            train_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            frequency_hz: 2e7,
            scale_const: 64.0,
            normalize: true,
            stage: Stage::Prior,
            init_seed: 7,
            train_seed: 8,
            loss_history: vec![1.0, 0.5],
            probe_loss_start: 1.0,
            probe_loss_end: 0.5,
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let meta = tiny_meta();
        let base: UNet<f32> = init_base(&meta.model, meta.init_seed).unwrap();
        let guidance = Some(init_guidance(&base));
        let ck = Checkpoint {
            meta,
            base,
            guidance,
        };
        let bytes = ck.to_bytes().unwrap();
        let back: Checkpoint<f32> = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.base.param_hash(), ck.base.param_hash());
        assert_eq!(
            back.guidance.as_ref().unwrap().param_hash(),
            ck.guidance.as_ref().unwrap().param_hash()
        );
        assert_eq!(back.meta, ck.meta);
        // serializing again reproduces the same bytes
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn prior_only_checkpoint_has_no_guidance() {
        let meta = tiny_meta();
        let base: UNet<f64> = init_base(&meta.model, 7).unwrap();
        let ck = Checkpoint {
            meta,
            base,
            guidance: None,
        };
        let back: Checkpoint<f64> = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert!(back.guidance.is_none());
    }

    #[test]
    fn corrupted_inputs_are_rejected() {
        let meta = tiny_meta();
        let base: UNet<f32> = init_base(&meta.model, 7).unwrap();
        let ck = Checkpoint {
            meta,
            base,
            guidance: None,
        };
        let bytes = ck.to_bytes().unwrap();

        assert!(Checkpoint::<f32>::from_bytes(b"").is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"NOPE").is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&wrong_magic).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(Checkpoint::<f32>::from_bytes(&wrong_version).is_err());
        let truncated = &bytes[..bytes.len() - 3];
        assert!(Checkpoint::<f32>::from_bytes(truncated).is_err());
        let mut huge_header = bytes.clone();
        huge_header[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::<f32>::from_bytes(&huge_header).is_err());
        let mut nan_payload = bytes.clone();
        let off = bytes.len() - 8;
        nan_payload[off..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(Checkpoint::<f32>::from_bytes(&nan_payload).is_err());
    }
}
