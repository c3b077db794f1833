//! Minimal decoder-only forward pass with an activation-capture hook.
//!
//! One sequence per call, f32 end to end in production (the generic
//! parameter exists for f64 cross-checks). The capture hook records, for
//! every prunable projection, the running sum of squares of each input
//! channel over all token positions — exactly the statistic the
//! activation-aware pruning score needs.

use std::collections::BTreeMap;

use crate::container::Checkpoint;
use crate::error::{Error, Result};
use crate::manifest::ModelManifest;
use crate::pruning::MaskSet;
use crate::scalar::Element;
use crate::tensor::Tensor;

/// Per-channel Σx² accumulators for every prunable tensor, plus the number
/// of token positions folded in. Accumulation is f64 so that splitting a
/// sample stream and merging the halves reproduces the single-pass sums.
#[derive(Clone, Debug)]
pub struct CapturedActivations {
    sums: BTreeMap<String, Vec<f64>>,
    token_count: u64,
}

impl CapturedActivations {
    pub fn new(manifest: &ModelManifest) -> Self {
        let shapes = manifest.tensor_shapes();
        let sums = manifest
            .prunable_tensors()
            .into_iter()
            .map(|name| {
                let in_features = shapes[&name][1];
                (name, vec![0.0f64; in_features])
            })
            .collect();
        Self {
            sums,
            token_count: 0,
        }
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn sums(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.sums
    }

    /// Sum another accumulator into this one (for sharded calibration).
    pub fn merge(&mut self, other: &CapturedActivations) -> Result<()> {
        for (name, acc) in &mut self.sums {
            let theirs = other.sums.get(name).ok_or_else(|| {
                Error::InvalidArgument(format!("accumulator missing tensor \"{name}\""))
            })?;
            if theirs.len() != acc.len() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: vec![acc.len()],
                    got: vec![theirs.len()],
                });
            }
            for (a, b) in acc.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        self.token_count += other.token_count;
        Ok(())
    }

    fn add_sq<T: Element>(&mut self, name: &str, x: &[T]) {
        let acc = self
            .sums
            .get_mut(name)
            .expect("capture targets come from the same manifest");
        debug_assert_eq!(acc.len(), x.len());
        for (a, &v) in acc.iter_mut().zip(x) {
            let v = v.as_f64();
            *a += v * v;
        }
    }
}

struct Block<T> {
    attn_norm: Vec<T>,
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wo: Tensor<T>,
    mlp_norm: Vec<T>,
    w_gate: Tensor<T>,
    w_up: Tensor<T>,
    w_down: Tensor<T>,
    index: usize,
}

/// A loaded model, optionally with pruning masks burned in at load time so
/// that a masked forward is bit-identical to a forward over a physically
/// zeroed checkpoint.
pub struct Model<T> {
    manifest: ModelManifest,
    tok_emb: Tensor<T>,
    blocks: Vec<Block<T>>,
    final_norm: Vec<T>,
    lm_head: Option<Tensor<T>>,
    inv_freq: Vec<f64>,
    eps: T,
}

pub type Model32 = Model<f32>;

impl<T: Element> Model<T> {
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        manifest: &ModelManifest,
        masks: Option<&MaskSet>,
    ) -> Result<Self> {
        manifest.validate()?;

        if let Some(masks) = masks {
            // Every mask must resolve to a checkpoint tensor of equal shape.
            for (name, mask) in masks.iter() {
                let t = ckpt.get(name).ok_or_else(|| Error::ShapeMismatch {
                    name: name.clone(),
                    expected: vec![mask.rows(), mask.cols()],
                    got: vec![],
                })?;
                if t.shape() != [mask.rows(), mask.cols()] {
                    return Err(Error::ShapeMismatch {
                        name: name.clone(),
                        expected: vec![mask.rows(), mask.cols()],
                        got: t.shape().to_vec(),
                    });
                }
            }
        }

        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let t = ckpt.get(name).ok_or_else(|| Error::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                got: vec![],
            })?;
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            match masks.and_then(|m| m.get(name)) {
                Some(mask) => Ok(crate::pruning::apply_mask(t, mask)?.cast()),
                None => Ok(t.cast()),
            }
        };

        let d = manifest.d_model;
        let v = manifest.vocab_size;
        let ff = manifest.d_ff;
        let tok_emb = fetch("tok_emb.weight", &[v, d])?;
        let mut blocks = Vec::with_capacity(manifest.n_layers);
        for i in 0..manifest.n_layers {
            blocks.push(Block {
                attn_norm: fetch(&format!("blocks.{i}.attn_norm.weight"), &[d])?.into_data(),
                wq: fetch(&format!("blocks.{i}.attn.q_proj.weight"), &[d, d])?,
                wk: fetch(&format!("blocks.{i}.attn.k_proj.weight"), &[d, d])?,
                wv: fetch(&format!("blocks.{i}.attn.v_proj.weight"), &[d, d])?,
                wo: fetch(&format!("blocks.{i}.attn.o_proj.weight"), &[d, d])?,
                mlp_norm: fetch(&format!("blocks.{i}.mlp_norm.weight"), &[d])?.into_data(),
                w_gate: fetch(&format!("blocks.{i}.mlp.gate_proj.weight"), &[ff, d])?,
                w_up: fetch(&format!("blocks.{i}.mlp.up_proj.weight"), &[ff, d])?,
                w_down: fetch(&format!("blocks.{i}.mlp.down_proj.weight"), &[d, ff])?,
                index: i,
            });
        }
        let final_norm = fetch("final_norm.weight", &[d])?.into_data();
        let lm_head = if manifest.tie_embeddings {
            None
        } else {
            Some(fetch("lm_head.weight", &[v, d])?)
        };

        // Rotary frequencies, base 10000, precomputed in f64.
        let hd = manifest.head_dim();
        let inv_freq = (0..hd / 2)
            .map(|p| 10000f64.powf(-2.0 * p as f64 / hd as f64))
            .collect();

        Ok(Self {
            manifest: manifest.clone(),
            tok_emb,
            blocks,
            final_norm,
            lm_head,
            inv_freq,
            eps: T::of(manifest.norm_eps as f64),
        })
    }

    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    /// Logits `[seq_len, vocab_size]` for one token sequence.
    pub fn forward(&self, tokens: &[u32]) -> Result<Tensor<T>> {
        self.forward_inner(tokens, None)
    }

    /// Forward pass that also folds this sequence's activations into `cap`.
    pub fn forward_captured(
        &self,
        tokens: &[u32],
        cap: &mut CapturedActivations,
    ) -> Result<Tensor<T>> {
        self.forward_inner(tokens, Some(cap))
    }

    fn forward_inner(
        &self,
        tokens: &[u32],
        mut cap: Option<&mut CapturedActivations>,
    ) -> Result<Tensor<T>> {
        let len = tokens.len();
        if len == 0 {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if len > self.manifest.max_seq_len {
            return Err(Error::SequenceTooLong {
                len,
                max: self.manifest.max_seq_len,
            });
        }
        for &t in tokens {
            if t as usize >= self.manifest.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: t,
                    vocab: self.manifest.vocab_size,
                });
            }
        }

        let d = self.manifest.d_model;
        let ff = self.manifest.d_ff;
        let n_heads = self.manifest.n_heads;
        let hd = self.manifest.head_dim();
        let scale = T::of(1.0 / (hd as f64).sqrt());

        // Residual stream, [len, d].
        let mut x = vec![T::zero(); len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            x[t * d..(t + 1) * d].copy_from_slice(self.tok_emb.row(tok as usize));
        }

        let mut h = vec![T::zero(); len * d];
        let mut q = vec![T::zero(); len * d];
        let mut k = vec![T::zero(); len * d];
        let mut v = vec![T::zero(); len * d];
        let mut ctx = vec![T::zero(); len * d];
        let mut gate = vec![T::zero(); len * ff];
        let mut up = vec![T::zero(); len * ff];
        let mut down = vec![T::zero(); len * d];
        let mut scores = vec![T::zero(); len];

        for block in &self.blocks {
            let i = block.index;

            // Attention half.
            rmsnorm_rows(&mut h, &x, &block.attn_norm, self.eps, len, d);
            if let Some(cap) = cap.as_deref_mut() {
                let qn = format!("blocks.{i}.attn.q_proj.weight");
                let kn = format!("blocks.{i}.attn.k_proj.weight");
                let vn = format!("blocks.{i}.attn.v_proj.weight");
                for t in 0..len {
                    let row = &h[t * d..(t + 1) * d];
                    cap.add_sq(&qn, row);
                    cap.add_sq(&kn, row);
                    cap.add_sq(&vn, row);
                }
            }
            matmul_rows(&mut q, &h, &block.wq, len);
            matmul_rows(&mut k, &h, &block.wk, len);
            matmul_rows(&mut v, &h, &block.wv, len);
            for t in 0..len {
                self.rope_in_place(&mut q[t * d..(t + 1) * d], t, n_heads, hd);
                self.rope_in_place(&mut k[t * d..(t + 1) * d], t, n_heads, hd);
            }

            // Causal attention, one (head, query) pair at a time.
            for head in 0..n_heads {
                let off = head * hd;
                for t in 0..len {
                    let qrow = &q[t * d + off..t * d + off + hd];
                    for (j, s) in scores.iter_mut().enumerate().take(t + 1) {
                        let krow = &k[j * d + off..j * d + off + hd];
                        *s = dot(qrow, krow) * scale;
                    }
                    softmax_in_place(&mut scores[..t + 1]);
                    let out = &mut ctx[t * d + off..t * d + off + hd];
                    out.fill(T::zero());
                    for j in 0..=t {
                        let p = scores[j];
                        let vrow = &v[j * d + off..j * d + off + hd];
                        for (o, &vv) in out.iter_mut().zip(vrow) {
                            *o += p * vv;
                        }
                    }
                }
            }

            if let Some(cap) = cap.as_deref_mut() {
                let on = format!("blocks.{i}.attn.o_proj.weight");
                for t in 0..len {
                    cap.add_sq(&on, &ctx[t * d..(t + 1) * d]);
                }
            }
            // x += Wo ctx, reusing q as the output buffer.
            matmul_rows(&mut q, &ctx, &block.wo, len);
            for (xi, qi) in x.iter_mut().zip(&q) {
                *xi += *qi;
            }

            // MLP half.
            rmsnorm_rows(&mut h, &x, &block.mlp_norm, self.eps, len, d);
            if let Some(cap) = cap.as_deref_mut() {
                let gn = format!("blocks.{i}.mlp.gate_proj.weight");
                let un = format!("blocks.{i}.mlp.up_proj.weight");
                for t in 0..len {
                    let row = &h[t * d..(t + 1) * d];
                    cap.add_sq(&gn, row);
                    cap.add_sq(&un, row);
                }
            }
            matmul_rows(&mut gate, &h, &block.w_gate, len);
            matmul_rows(&mut up, &h, &block.w_up, len);
            for (g, u) in gate.iter_mut().zip(&up) {
                *g = silu(*g) * *u;
            }
            if let Some(cap) = cap.as_deref_mut() {
                let dn = format!("blocks.{i}.mlp.down_proj.weight");
                for t in 0..len {
                    cap.add_sq(&dn, &gate[t * ff..(t + 1) * ff]);
                }
            }
            matmul_rows(&mut down, &gate, &block.w_down, len);
            for (xi, di) in x.iter_mut().zip(&down) {
                *xi += *di;
            }
        }

        rmsnorm_rows(&mut h, &x, &self.final_norm, self.eps, len, d);
        let head = self.lm_head.as_ref().unwrap_or(&self.tok_emb);
        let vocab = self.manifest.vocab_size;
        let mut logits = vec![T::zero(); len * vocab];
        matmul_rows(&mut logits, &h, head, len);

        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "forward pass produced non-finite logits".into(),
            ));
        }
        if let Some(cap) = cap {
            cap.token_count += len as u64;
        }
        Tensor::new(vec![len, vocab], logits)
    }

    fn rope_in_place(&self, row: &mut [T], pos: usize, n_heads: usize, hd: usize) {
        for head in 0..n_heads {
            let base = head * hd;
            for (p, &f) in self.inv_freq.iter().enumerate() {
                let angle = pos as f64 * f;
                let (sin, cos) = (T::of(angle.sin()), T::of(angle.cos()));
                let a = row[base + 2 * p];
                let b = row[base + 2 * p + 1];
                row[base + 2 * p] = a * cos - b * sin;
                row[base + 2 * p + 1] = a * sin + b * cos;
            }
        }
    }
}

/// Sum of per-position negative log-likelihoods, max-subtraction stabilized,
/// accumulated in f64. `targets[t]` is scored against `logits[t]`.
pub fn nll_sum<T: Element>(logits: &Tensor<T>, targets: &[u32]) -> Result<f64> {
    let (rows, vocab) = logits.dims2()?;
    if targets.len() != rows {
        return Err(Error::InvalidArgument(format!(
            "{} logit rows but {} targets",
            rows,
            targets.len()
        )));
    }
    let mut total = 0.0f64;
    for (t, &target) in targets.iter().enumerate() {
        if target as usize >= vocab {
            return Err(Error::TokenOutOfRange {
                id: target,
                vocab,
            });
        }
        let row = logits.row(t);
        let mut max = row[0];
        for &z in row {
            if z > max {
                max = z;
            }
        }
        let max = max.as_f64();
        let mut sum_exp = 0.0f64;
        for &z in row {
            sum_exp += (z.as_f64() - max).exp();
        }
        total += max + sum_exp.ln() - row[target as usize].as_f64();
    }
    Ok(total)
}

/// Mean negative log-likelihood (nats per position) of `targets` under `logits`.
pub fn logits_to_nll<T: Element>(logits: &Tensor<T>, targets: &[u32]) -> Result<f64> {
    let sum = nll_sum(logits, targets)?;
    Ok(sum / targets.len() as f64)
}

/// `out[t] = x[t] / rms(x[t]) * weight`, row by row.
fn rmsnorm_rows<T: Element>(out: &mut [T], x: &[T], weight: &[T], eps: T, rows: usize, d: usize) {
    let inv_d = T::of(1.0 / d as f64);
    for t in 0..rows {
        let row = &x[t * d..(t + 1) * d];
        let mut ss = T::zero();
        for &v in row {
            ss += v * v;
        }
        let rms = (ss * inv_d + eps).sqrt();
        let orow = &mut out[t * d..(t + 1) * d];
        for j in 0..d {
            orow[j] = row[j] / rms * weight[j];
        }
    }
}

/// `out[t] = W x[t]` for each of `rows` rows; `W` is `[out_f, in_f]` row-major.
fn matmul_rows<T: Element>(out: &mut [T], x: &[T], w: &Tensor<T>, rows: usize) {
    let (out_f, in_f) = w.dims2().expect("weight matrices are 2-D");
    let wd = w.data();
    for t in 0..rows {
        let xrow = &x[t * in_f..(t + 1) * in_f];
        let orow = &mut out[t * out_f..(t + 1) * out_f];
        for (o, wrow) in orow.iter_mut().zip(wd.chunks_exact(in_f)) {
            *o = dot(wrow, xrow);
        }
    }
}

fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Stabilized softmax over a slice.
fn softmax_in_place<T: Element>(xs: &mut [T]) {
    let mut max = xs[0];
    for &v in xs.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

fn silu<T: Element>(z: T) -> T {
    z / (T::one() + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::generate_tiny_model;

    fn small_manifest() -> ModelManifest {
        ModelManifest {
            vocab_size: 16,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 16,
            norm_eps: 1e-5,
            tie_embeddings: true,
        }
    }

    #[test]
    fn logits_shape_and_finiteness() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 3).unwrap();
        let model = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        let logits = model.forward(&[1, 2, 3]).unwrap();
        assert_eq!(logits.shape(), &[3, 16]);
        assert!(logits.data().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn rejects_bad_tokens_and_lengths() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 3).unwrap();
        let model = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        assert!(matches!(
            model.forward(&[99]),
            Err(Error::TokenOutOfRange { .. })
        ));
        assert!(matches!(
            model.forward(&[0; 17]),
            Err(Error::SequenceTooLong { .. })
        ));
        assert!(model.forward(&[]).is_err());
    }

    #[test]
    fn causality_prefix_logits_unaffected_by_suffix() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 11).unwrap();
        let model = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        let a = model.forward(&[1, 2, 3, 4, 5]).unwrap();
        let b = model.forward(&[1, 2, 3, 9, 5]).unwrap();
        // Positions before the perturbed token are bitwise identical.
        for t in 0..3 {
            assert_eq!(a.row(t), b.row(t), "position {t} changed");
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn rmsnorm_unit_weight_mean_square_is_one() {
        // Inputs with mean square >= 1 keep the eps perturbation below 1e-5.
        let d = 64;
        let x: Vec<f32> = (0..d).map(|i| ((i * 37 % 19) as f32 - 9.0) / 3.0).collect();
        let w = vec![1.0f32; d];
        let mut out = vec![0.0f32; d];
        rmsnorm_rows(&mut out, &x, &w, 1e-5f32, 1, d);
        let ms: f32 = out.iter().map(|v| v * v).sum::<f32>() / d as f32;
        assert!((ms - 1.0).abs() < 1e-5, "mean square {ms}");
    }

    #[test]
    fn rope_preserves_pair_norms() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 5).unwrap();
        let model = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        let mut row: Vec<f32> = (0..8).map(|i| (i as f32) * 0.3 - 1.0).collect();
        let before: f32 = row.iter().map(|v| v * v).sum();
        model.rope_in_place(&mut row, 7, 2, 4);
        let after: f32 = row.iter().map(|v| v * v).sum();
        assert!((before.sqrt() - after.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn zero_sparsity_masks_give_bitwise_identical_logits() {
        use crate::pruning::{prune_model, GroupSpec, PruneMethod, PruneRecipe};
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 31).unwrap();
        let (_, masks) = prune_model(
            &ckpt,
            &PruneRecipe {
                method: PruneMethod::Magnitude,
                spec: GroupSpec::PerRow { sparsity: 0.0 },
                stats: None,
            },
        )
        .unwrap();
        let plain = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        let masked = Model32::from_checkpoint(&ckpt, &m, Some(&masks)).unwrap();
        let tokens = [1u32, 5, 9, 13];
        let a = plain.forward(&tokens).unwrap();
        let b = masked.forward(&tokens).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn capture_token_count_is_additive() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 5).unwrap();
        let model = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        let mut cap = CapturedActivations::new(&m);
        model.forward_captured(&[1, 2, 3], &mut cap).unwrap();
        assert_eq!(cap.token_count(), 3);
        model.forward_captured(&[4, 5], &mut cap).unwrap();
        assert_eq!(cap.token_count(), 5);
    }

    /// Independent single-token re-derivation: the captured sum of squares
    /// for q_proj must equal the square of the post-norm hidden vector,
    /// which for one token is rmsnorm(embedding row).
    #[test]
    fn capture_matches_hand_rolled_single_token_forward() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 21).unwrap();
        let model = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        let token = 9u32;
        let mut cap = CapturedActivations::new(&m);
        model.forward_captured(&[token], &mut cap).unwrap();

        // By-hand recomputation in f64, independent of the model code.
        let emb: Vec<f64> = ckpt["tok_emb.weight"]
            .row(token as usize)
            .iter()
            .map(|&v| v as f64)
            .collect();
        let g: Vec<f64> = ckpt["blocks.0.attn_norm.weight"]
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect();
        let ms = emb.iter().map(|v| v * v).sum::<f64>() / emb.len() as f64;
        let rms = (ms + 1e-5).sqrt();
        let expect: Vec<f64> = emb
            .iter()
            .zip(&g)
            .map(|(&e, &gw)| {
                let h = e / rms * gw;
                h * h
            })
            .collect();

        // The model runs in f32, the reference in f64; agreement is limited
        // by f32 rounding of the normalized hidden vector.
        let got = &cap.sums()["blocks.0.attn.q_proj.weight"];
        for (a, b) in got.iter().zip(&expect) {
            assert!(
                (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                "got {a}, expected {b}"
            );
        }
        // q/k/v share the same input.
        assert_eq!(got, &cap.sums()["blocks.0.attn.k_proj.weight"]);
        assert_eq!(got, &cap.sums()["blocks.0.attn.v_proj.weight"]);
    }

    #[test]
    fn nll_near_one_hot_is_near_zero() {
        let logits = Tensor::new(vec![1, 4], vec![1000.0f32, 0.0, 0.0, 0.0]).unwrap();
        let nll = logits_to_nll(&logits, &[0]).unwrap();
        assert!(nll < 1e-6, "nll {nll}");
    }

    #[test]
    fn nll_uniform_is_log_vocab() {
        let logits = Tensor::new(vec![2, 16], vec![0.25f32; 32]).unwrap();
        let nll = logits_to_nll(&logits, &[3, 7]).unwrap();
        assert!((nll - (16f64).ln()).abs() < 1e-9, "nll {nll}");
    }

    /// Extended-precision oracle: recompute the softmax NLL directly in f64
    /// without max-subtraction tricks and require 1e-5 agreement.
    #[test]
    fn nll_matches_high_precision_oracle() {
        let mut rng = crate::rng::SplitMix64::new(99);
        let vocab = 32;
        let rows = 8;
        let data: Vec<f32> = (0..rows * vocab)
            .map(|_| rng.next_uniform_f32() * 6.0)
            .collect();
        let targets: Vec<u32> = (0..rows)
            .map(|_| (rng.next_below(vocab as u64)) as u32)
            .collect();
        let logits = Tensor::new(vec![rows, vocab], data.clone()).unwrap();
        let got = logits_to_nll(&logits, &targets).unwrap();

        let mut expect = 0.0f64;
        for (t, &target) in targets.iter().enumerate() {
            let row = &data[t * vocab..(t + 1) * vocab];
            let denom: f64 = row.iter().map(|&z| (z as f64).exp()).sum();
            let p = (row[target as usize] as f64).exp() / denom;
            expect += -p.ln();
        }
        expect /= rows as f64;
        assert!((got - expect).abs() < 1e-5, "got {got}, oracle {expect}");
    }

    #[test]
    fn nll_length_mismatch_is_an_error() {
        let logits = Tensor::new(vec![2, 4], vec![0.0f32; 8]).unwrap();
        assert!(logits_to_nll(&logits, &[0]).is_err());
    }
}
