//! Model manifest, the fixed tensor naming scheme, and the deterministic
//! tiny-model generator.
//!
//! Architecture is LLaMA-style: pre-RMSNorm, rotary embeddings, SwiGLU MLP,
//! no biases. Per block the seven projection matrices
//! (q/k/v/o, gate/up/down) are prunable; embeddings, norms and the LM head
//! never are.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, SplitMix64};
use crate::tensor::Tensor32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub norm_eps: f32,
    pub tie_embeddings: bool,
}

impl ModelManifest {
    /// The bundled default: a 4-layer model small enough to prune and
    /// evaluate in seconds, with a 256-token vocabulary so byte-level
    /// corpora map directly onto token ids.
    pub fn default_tiny() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 128,
            norm_eps: 1e-5,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ManifestInvalid(msg));
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_layers == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || self.max_seq_len == 0
        {
            return fail("all dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(self.d_model / self.n_heads).is_multiple_of(2) {
            return fail(format!(
                "head dim {} must be even for rotary embeddings",
                self.d_model / self.n_heads
            ));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return fail(format!("norm_eps {} must be a positive float", self.norm_eps));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Every tensor name implied by the manifest, with its shape.
    /// Weight matrices are `[out_features, in_features]`.
    pub fn tensor_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let d = self.d_model;
        let mut out = BTreeMap::new();
        out.insert("tok_emb.weight".to_string(), vec![self.vocab_size, d]);
        for i in 0..self.n_layers {
            out.insert(format!("blocks.{i}.attn_norm.weight"), vec![d]);
            for proj in ["q_proj", "k_proj", "v_proj", "o_proj"] {
                out.insert(format!("blocks.{i}.attn.{proj}.weight"), vec![d, d]);
            }
            out.insert(format!("blocks.{i}.mlp_norm.weight"), vec![d]);
            out.insert(format!("blocks.{i}.mlp.gate_proj.weight"), vec![self.d_ff, d]);
            out.insert(format!("blocks.{i}.mlp.up_proj.weight"), vec![self.d_ff, d]);
            out.insert(format!("blocks.{i}.mlp.down_proj.weight"), vec![d, self.d_ff]);
        }
        out.insert("final_norm.weight".to_string(), vec![d]);
        if !self.tie_embeddings {
            out.insert("lm_head.weight".to_string(), vec![self.vocab_size, d]);
        }
        out
    }

    /// The prunable tensors, layer-major, in a fixed within-layer order.
    pub fn prunable_tensors(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_layers * 7);
        for i in 0..self.n_layers {
            for proj in ["q_proj", "k_proj", "v_proj", "o_proj"] {
                out.push(format!("blocks.{i}.attn.{proj}.weight"));
            }
            for proj in ["gate_proj", "up_proj", "down_proj"] {
                out.push(format!("blocks.{i}.mlp.{proj}.weight"));
            }
        }
        out
    }
}

/// Whether `name` is one of the seven per-block projection matrices.
/// Derivable from the name alone, so pruning does not need a manifest.
pub fn is_prunable_name(name: &str) -> bool {
    let parts: Vec<&str> = name.split('.').collect();
    let [_, layer, group, proj, weight] = parts.as_slice() else {
        return false;
    };
    parts[0] == "blocks"
        && layer.parse::<usize>().is_ok()
        && *weight == "weight"
        && match *group {
            "attn" => matches!(*proj, "q_proj" | "k_proj" | "v_proj" | "o_proj"),
            "mlp" => matches!(*proj, "gate_proj" | "up_proj" | "down_proj"),
            _ => false,
        }
}

/// Layer index of a block-scoped tensor name ("blocks.3.attn.q_proj.weight" -> 3).
pub fn layer_of_name(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("blocks.")?;
    rest.split('.').next()?.parse().ok()
}

/// Check that every tensor implied by the manifest exists in the checkpoint
/// with the implied shape.
pub fn validate_checkpoint(ckpt: &Checkpoint, manifest: &ModelManifest) -> Result<()> {
    for (name, shape) in manifest.tensor_shapes() {
        match ckpt.get(&name) {
            None => {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    got: vec![],
                })
            }
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    got: t.shape().to_vec(),
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Generate a random checkpoint for `manifest`: a pure function of
/// `(manifest, seed)`.
///
/// Each tensor draws from its own SplitMix64 stream keyed by
/// `seed ^ fnv1a64(name)`, so the result does not depend on generation
/// order. Projection matrices are uniform in [-1,1) scaled by
/// 1/sqrt(d_model); embeddings are unscaled; norm weights land in
/// [0.75, 1.25) so normalization stays near-identity.
pub fn generate_tiny_model(manifest: &ModelManifest, seed: u64) -> Result<Checkpoint> {
    manifest.validate()?;
    let inv_sqrt_d = 1.0 / (manifest.d_model as f32).sqrt();
    let mut ckpt = Checkpoint::new();
    for (name, shape) in manifest.tensor_shapes() {
        let mut rng = SplitMix64::new(seed ^ fnv1a64(name.as_bytes()));
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if is_prunable_name(&name) {
            (0..n).map(|_| rng.next_uniform_f32() * inv_sqrt_d).collect()
        } else if name.ends_with("norm.weight") {
            (0..n).map(|_| 1.0 + 0.25 * rng.next_uniform_f32()).collect()
        } else {
            (0..n).map(|_| rng.next_uniform_f32()).collect()
        };
        ckpt.insert(name, Tensor32::new(shape, data)?);
    }
    Ok(ckpt)
}
