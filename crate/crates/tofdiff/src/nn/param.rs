//! Uniform access to the flat parameter blocks of a model, used by the
//! optimizer, checkpoints, and parameter hashing.

use crate::tensor::Real;
use sha2::{Digest, Sha256};

/// A parameter container that exposes its tensors as named flat slices in a
/// fixed traversal order.
pub trait ParamBlocks<T: Real>: Clone {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>);

    fn named_blocks(&self) -> Vec<(String, &[T])> {
        let mut v = Vec::new();
        self.visit("", &mut v);
        v
    }

    fn named_blocks_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut v = Vec::new();
        self.visit_mut("", &mut v);
        v
    }

    fn blocks(&self) -> Vec<&[T]> {
        self.named_blocks().into_iter().map(|(_, b)| b).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.named_blocks_mut()
            .into_iter()
            .map(|(_, b)| b)
            .collect()
    }

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Structure-preserving copy with every parameter set to zero; the
    /// natural container for gradients and optimizer moments.
    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for b in out.blocks_mut() {
            for v in b.iter_mut() {
                *v = T::zero();
            }
        }
        out
    }

    fn zero_fill(&mut self) {
        for b in self.blocks_mut() {
            for v in b.iter_mut() {
                *v = T::zero();
            }
        }
    }

    /// `self += other * scale`, block by block.
    fn add_scaled(&mut self, other: &Self, scale: T) {
        let mut mine = self.blocks_mut();
        let theirs = other.blocks();
        assert_eq!(mine.len(), theirs.len(), "parameter structure mismatch");
        for (dst, src) in mine.iter_mut().zip(theirs) {
            assert_eq!(dst.len(), src.len(), "parameter block size mismatch");
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d = *d + s * scale;
            }
        }
    }

    /// SHA-256 over the canonical little-endian f64 encoding of all blocks.
    fn param_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, block) in self.named_blocks() {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for v in block {
                hasher.update(v.into_f64().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Helper for prefixed child names.
pub(crate) fn child(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
