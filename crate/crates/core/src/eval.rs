//! Next-token perplexity of dense or masked models on held-out token
//! streams — the desk-scale quality proxy for comparing sub-models.

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationCorpus;
use crate::container::Checkpoint;
use crate::error::{Error, Result};
use crate::manifest::ModelManifest;
use crate::pruning::MaskSet;
use crate::transformer::{nll_sum, Model32};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub model: String,
    /// Mask-set id, or "dense" when no masks were applied.
    pub masks: String,
    pub corpus: String,
    /// Number of next-token predictions scored.
    pub token_count: u64,
    /// Mean negative log-likelihood, nats per prediction.
    pub mean_nll: f64,
    /// `exp(mean_nll)`.
    pub perplexity: f64,
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

/// Mean NLL over all next-token predictions across all sequences, in corpus
/// order; sequences of length 1 contribute nothing. Deterministic in the
/// bytes of (checkpoint, masks, corpus).
pub fn evaluate(
    ckpt: &Checkpoint,
    manifest: &ModelManifest,
    masks: Option<(&MaskSet, &str)>,
    corpus: &CalibrationCorpus,
    model_id: &str,
    corpus_id: &str,
) -> Result<EvalResult> {
    if corpus.records.is_empty() {
        return Err(Error::EmptyCorpus(corpus_id.to_string()));
    }
    let model = Model32::from_checkpoint(ckpt, manifest, masks.map(|(set, _)| set))?;
    let mut total_nll = 0.0f64;
    let mut predictions = 0u64;
    for seq in &corpus.records {
        if seq.len() < 2 {
            continue;
        }
        let logits = model.forward(seq)?;
        let scored = logits.take_rows(seq.len() - 1)?;
        total_nll += nll_sum(&scored, &seq[1..])?;
        predictions += (seq.len() - 1) as u64;
    }
    if predictions == 0 {
        return Err(Error::EmptyCorpus(format!(
            "{corpus_id}: no sequence long enough to score"
        )));
    }
    let mean_nll = total_nll / predictions as f64;
    Ok(EvalResult {
        model: model_id.to_string(),
        masks: masks
            .map(|(_, id)| id.to_string())
            .unwrap_or_else(|| "dense".to_string()),
        corpus: corpus_id.to_string(),
        token_count: predictions,
        mean_nll,
        perplexity: mean_nll.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::generate_tiny_model;
    use crate::pruning::{prune_model, GroupSpec, PruneMethod, PruneRecipe};

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

    fn corpus_of(records: Vec<Vec<u32>>) -> CalibrationCorpus {
        CalibrationCorpus {
            records,
            source_fingerprint: 1,
            dropped_empty: 0,
        }
    }

    #[test]
    fn zero_sparsity_masks_do_not_change_perplexity() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 8).unwrap();
        let corpus = corpus_of(vec![vec![1, 2, 3, 4, 5], vec![7, 8, 9]]);
        let dense = evaluate(&ckpt, &m, None, &corpus, "m", "c").unwrap();

        let (_, masks) = prune_model(
            &ckpt,
            &PruneRecipe {
                method: PruneMethod::Magnitude,
                spec: GroupSpec::PerRow { sparsity: 0.0 },
                stats: None,
            },
        )
        .unwrap();
        let masked = evaluate(&ckpt, &m, Some((&masks, "s0")), &corpus, "m", "c").unwrap();
        assert_eq!(dense.mean_nll, masked.mean_nll);
        assert_eq!(dense.perplexity, masked.perplexity);
        assert_eq!(dense.token_count, 6);
        assert_eq!(dense.masks, "dense");
        assert_eq!(masked.masks, "s0");
    }

    #[test]
    fn zeroed_final_norm_gives_uniform_logits_and_vocab_perplexity() {
        let m = small_manifest();
        let mut ckpt = generate_tiny_model(&m, 8).unwrap();
        for v in ckpt.get_mut("final_norm.weight").unwrap().data_mut() {
            *v = 0.0;
        }
        let corpus = corpus_of(vec![vec![0, 1, 2, 3, 4, 5, 6, 7]]);
        let r = evaluate(&ckpt, &m, None, &corpus, "m", "c").unwrap();
        assert!(
            (r.perplexity - 16.0).abs() < 1e-9 * 16.0,
            "perplexity {}",
            r.perplexity
        );
        assert!((r.perplexity - r.mean_nll.exp()).abs() < 1e-12);
    }

    #[test]
    fn perplexity_is_at_least_one() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 99).unwrap();
        let corpus = corpus_of(vec![vec![3, 1, 4, 1, 5, 9, 2, 6]]);
        let r = evaluate(&ckpt, &m, None, &corpus, "m", "c").unwrap();
        assert!(r.perplexity >= 1.0);
    }

    #[test]
    fn short_sequences_are_skipped_and_empty_corpus_rejected() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 8).unwrap();
        let corpus = corpus_of(vec![vec![1], vec![2, 3]]);
        let r = evaluate(&ckpt, &m, None, &corpus, "m", "c").unwrap();
        assert_eq!(r.token_count, 1);

        assert!(matches!(
            evaluate(&ckpt, &m, None, &corpus_of(vec![]), "m", "c"),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(matches!(
            evaluate(&ckpt, &m, None, &corpus_of(vec![vec![1]]), "m", "c"),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 12).unwrap();
        let corpus = corpus_of(vec![vec![1, 2, 3], vec![4, 5, 6, 7]]);
        let a = evaluate(&ckpt, &m, None, &corpus, "m", "c").unwrap();
        let b = evaluate(&ckpt, &m, None, &corpus, "m", "c").unwrap();
        assert_eq!(a.mean_nll, b.mean_nll);
    }
}
