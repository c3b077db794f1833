//! Calibration corpora, deterministic sample selection, and activation-norm
//! accumulation.
//!
//! Corpora are JSONL: one record per line, either `{"tokens": [..]}`
//! (pretokenized) or `{"text": "..."}` (byte-level, token id = byte value).
//! Samples are selected without replacement by a SplitMix64-driven partial
//! Fisher-Yates shuffle, so a (corpus, count, seed) triple always picks the
//! same records in the same order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::container::{self, Checkpoint, Metadata, TensorMap, TensorRecord};
use crate::error::{Error, Result};
use crate::manifest::ModelManifest;
use crate::rng::{fnv1a64, partial_shuffle_indices, SplitMix64};
use crate::transformer::{CapturedActivations, Model32};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tokenizer {
    Pretokenized,
    ByteLevel,
}

impl Tokenizer {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretokenized" => Some(Tokenizer::Pretokenized),
            "byte_level" => Some(Tokenizer::ByteLevel),
            _ => None,
        }
    }
}

/// A loaded corpus: token sequences plus the FNV-1a fingerprint of the raw
/// file bytes (provenance for downstream artifacts).
#[derive(Clone, Debug)]
pub struct CalibrationCorpus {
    pub records: Vec<Vec<u32>>,
    pub source_fingerprint: u64,
    /// Sequences that were empty after tokenization and were dropped.
    pub dropped_empty: usize,
}

pub fn load_corpus(
    path: &Path,
    tokenizer: Tokenizer,
    vocab_size: usize,
    max_seq_len: usize,
) -> Result<CalibrationCorpus> {
    if tokenizer == Tokenizer::ByteLevel && vocab_size < 256 {
        return Err(Error::InvalidArgument(format!(
            "byte_level tokenizer requires vocab_size >= 256, got {vocab_size}"
        )));
    }
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fingerprint = fnv1a64(&raw);
    let text = std::str::from_utf8(&raw).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        detail: format!("not UTF-8: {e}"),
    })?;

    let bad_line = |line: usize, detail: String| Error::CorpusLine {
        path: path.to_path_buf(),
        line,
        detail,
    };

    let mut records = Vec::new();
    let mut dropped_empty = 0usize;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| bad_line(lineno, format!("malformed JSON: {e}")))?;

        let tokens: Vec<u32> = match tokenizer {
            Tokenizer::Pretokenized => {
                let arr = value
                    .get("tokens")
                    .and_then(|t| t.as_array())
                    .ok_or_else(|| bad_line(lineno, "missing \"tokens\" array".into()))?;
                let mut out = Vec::with_capacity(arr.len());
                for v in arr {
                    let id = v
                        .as_u64()
                        .ok_or_else(|| bad_line(lineno, format!("token {v} is not a non-negative integer")))?;
                    if id >= vocab_size as u64 {
                        return Err(bad_line(
                            lineno,
                            format!("token id {id} >= vocab_size {vocab_size}"),
                        ));
                    }
                    out.push(id as u32);
                }
                out
            }
            Tokenizer::ByteLevel => {
                let s = value
                    .get("text")
                    .and_then(|t| t.as_str())
                    .ok_or_else(|| bad_line(lineno, "missing \"text\" string".into()))?;
                s.bytes().map(u32::from).collect()
            }
        };

        if tokens.is_empty() {
            dropped_empty += 1;
            continue;
        }
        let mut tokens = tokens;
        tokens.truncate(max_seq_len);
        records.push(tokens);
    }

    Ok(CalibrationCorpus {
        records,
        source_fingerprint: fingerprint,
        dropped_empty,
    })
}

/// Result of sample selection; `shortfall` is set when the corpus had fewer
/// records than requested (in which case every record is returned).
#[derive(Clone, Debug)]
pub struct Selection {
    pub samples: Vec<Vec<u32>>,
    pub requested: usize,
    pub shortfall: bool,
}

pub fn select_samples(corpus: &CalibrationCorpus, count: usize, seed: u64) -> Result<Selection> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let n = corpus.records.len();
    if n == 0 {
        return Err(Error::EmptyCorpus("no records to select from".into()));
    }
    if n < count {
        return Ok(Selection {
            samples: corpus.records.clone(),
            requested: count,
            shortfall: true,
        });
    }
    let mut rng = SplitMix64::new(seed);
    let idx = partial_shuffle_indices(n, count, &mut rng);
    Ok(Selection {
        samples: idx.into_iter().map(|i| corpus.records[i].clone()).collect(),
        requested: count,
        shortfall: false,
    })
}

/// Per-tensor input-channel L2 norms over a calibration run, with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    /// `a_j = sqrt(Σ x_j²)` per prunable tensor, length = in_features.
    pub norms: BTreeMap<String, Vec<f32>>,
    pub sample_count: u64,
    pub token_count: u64,
    pub seed: u64,
    pub corpus_fingerprint: u64,
}

impl ActivationStats {
    /// Finalize an accumulator: `a_j = sqrt(Σ x_j²)`, stored as f32.
    pub fn from_captured(
        cap: &CapturedActivations,
        sample_count: u64,
        seed: u64,
        corpus_fingerprint: u64,
    ) -> Self {
        let norms = cap
            .sums()
            .iter()
            .map(|(name, sums)| {
                let a: Vec<f32> = sums.iter().map(|s| s.sqrt() as f32).collect();
                (name.clone(), a)
            })
            .collect();
        Self {
            norms,
            sample_count,
            token_count: cap.token_count(),
            seed,
            corpus_fingerprint,
        }
    }

    /// Persist as a container with one `<tensor>.actnorm` f32 vector per
    /// prunable tensor and provenance in `__metadata__`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = TensorMap::new();
        for (name, a) in &self.norms {
            tensors.insert(
                format!("{name}.actnorm"),
                TensorRecord::from_f32(vec![a.len()], a),
            );
        }
        let mut meta = Metadata::new();
        meta.insert("seed".into(), self.seed.to_string());
        meta.insert("sample_count".into(), self.sample_count.to_string());
        meta.insert("token_count".into(), self.token_count.to_string());
        meta.insert("corpus_fp".into(), self.corpus_fingerprint.to_string());
        container::write_container(&tensors, &meta, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (records, meta) = container::read_container(path)?;
        let malformed = |detail: String| Error::Malformed {
            path: path.to_path_buf(),
            detail,
        };
        let field = |key: &str| -> Result<u64> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| malformed(format!("missing or invalid \"{key}\" metadata")))
        };
        let mut norms = BTreeMap::new();
        for (key, rec) in &records {
            let Some(name) = key.strip_suffix(".actnorm") else {
                return Err(malformed(format!("unexpected tensor \"{key}\" in stats file")));
            };
            norms.insert(name.to_string(), rec.to_f32_vec()?);
        }
        Ok(Self {
            norms,
            sample_count: field("sample_count")?,
            token_count: field("token_count")?,
            seed: field("seed")?,
            corpus_fingerprint: field("corpus_fp")?,
        })
    }
}

/// Run every sample through the model (sequentially, in selection order)
/// with activation capture, and finalize the per-channel norms.
pub fn accumulate_stats(
    ckpt: &Checkpoint,
    manifest: &ModelManifest,
    samples: &[Vec<u32>],
    seed: u64,
    corpus_fingerprint: u64,
) -> Result<ActivationStats> {
    if samples.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let model = Model32::from_checkpoint(ckpt, manifest, None)?;
    let mut cap = CapturedActivations::new(manifest);
    for sample in samples {
        model.forward_captured(sample, &mut cap)?;
    }
    Ok(ActivationStats::from_captured(
        &cap,
        samples.len() as u64,
        seed,
        corpus_fingerprint,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::generate_tiny_model;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        (dir, path)
    }

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
    fn byte_level_maps_ascii_to_byte_values() {
        let (_d, path) = write_lines(&[r#"{"text":"AB"}"#]);
        let corpus = load_corpus(&path, Tokenizer::ByteLevel, 256, 128).unwrap();
        assert_eq!(corpus.records, vec![vec![65, 66]]);
        assert_eq!(corpus.dropped_empty, 0);
    }

    #[test]
    fn pretokenized_passthrough() {
        let (_d, path) = write_lines(&[r#"{"tokens":[3,1,2]}"#]);
        let corpus = load_corpus(&path, Tokenizer::Pretokenized, 16, 128).unwrap();
        assert_eq!(corpus.records, vec![vec![3, 1, 2]]);
    }

    #[test]
    fn out_of_range_token_names_the_line() {
        let (_d, path) = write_lines(&[r#"{"tokens":[1]}"#, r#"{"tokens":[99]}"#]);
        let err = load_corpus(&path, Tokenizer::Pretokenized, 16, 128).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(err.to_string().contains("99"), "{err}");
    }

    #[test]
    fn malformed_json_names_the_line() {
        let (_d, path) = write_lines(&[r#"{"tokens":[1]}"#, "not json"]);
        let err = load_corpus(&path, Tokenizer::Pretokenized, 16, 128).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(err.to_string().contains("malformed JSON"), "{err}");
    }

    #[test]
    fn byte_level_needs_256_vocab() {
        let (_d, path) = write_lines(&[r#"{"text":"x"}"#]);
        let err = load_corpus(&path, Tokenizer::ByteLevel, 16, 128).unwrap_err();
        assert!(err.to_string().contains("vocab_size >= 256"), "{err}");
    }

    #[test]
    fn truncation_and_empty_drop() {
        let (_d, path) = write_lines(&[r#"{"text":"abcdefgh"}"#, r#"{"text":""}"#]);
        let corpus = load_corpus(&path, Tokenizer::ByteLevel, 256, 4).unwrap();
        assert_eq!(corpus.records.len(), 1);
        assert_eq!(corpus.records[0], vec![97, 98, 99, 100]);
        assert_eq!(corpus.dropped_empty, 1);
    }

    #[test]
    fn wrong_field_for_tokenizer_mode_names_the_line() {
        let (_d, path) = write_lines(&[r#"{"tokens":[1,2]}"#]);
        let err = load_corpus(&path, Tokenizer::ByteLevel, 256, 4).unwrap_err();
        assert!(err.to_string().contains("missing \"text\""), "{err}");
    }

    #[test]
    fn selection_is_deterministic_and_seed_sensitive() {
        let records: Vec<Vec<u32>> = (0..1000u32).map(|i| vec![i % 16]).collect();
        let corpus = CalibrationCorpus {
            records,
            source_fingerprint: 0,
            dropped_empty: 0,
        };
        let a1 = select_samples(&corpus, 128, 1).unwrap();
        let a2 = select_samples(&corpus, 128, 1).unwrap();
        assert_eq!(a1.samples, a2.samples);
        let b = select_samples(&corpus, 128, 2).unwrap();
        assert_ne!(a1.samples, b.samples, "different seeds must differ");
        assert!(!a1.shortfall);
    }

    #[test]
    fn selection_exhausts_exact_sized_corpus() {
        let records: Vec<Vec<u32>> = (0..128u32).map(|i| vec![i % 16]).collect();
        let corpus = CalibrationCorpus {
            records: records.clone(),
            source_fingerprint: 0,
            dropped_empty: 0,
        };
        let sel = select_samples(&corpus, 128, 42).unwrap();
        assert!(!sel.shortfall);
        let mut got = sel.samples.clone();
        got.sort();
        let mut want = records;
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn selection_flags_shortfall() {
        let corpus = CalibrationCorpus {
            records: vec![vec![1], vec![2]],
            source_fingerprint: 0,
            dropped_empty: 0,
        };
        let sel = select_samples(&corpus, 5, 0).unwrap();
        assert!(sel.shortfall);
        assert_eq!(sel.samples.len(), 2);

        let empty = CalibrationCorpus {
            records: vec![],
            source_fingerprint: 0,
            dropped_empty: 0,
        };
        assert!(matches!(
            select_samples(&empty, 1, 0),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn empty_calibration_set_is_an_error() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 1).unwrap();
        let err = accumulate_stats(&ckpt, &m, &[], 0, 0).unwrap_err();
        assert_eq!(err.to_string(), "empty calibration set");
    }

    /// One single-token sample: the L2 norm over one token is the absolute
    /// value of the input vector, cross-checked by hand for the first block.
    #[test]
    fn single_token_norms_are_absolute_values() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 13).unwrap();
        let stats = accumulate_stats(&ckpt, &m, &[vec![5]], 0, 0).unwrap();

        // Hand-computed post-norm input of block 0 in f64.
        let emb: Vec<f64> = ckpt["tok_emb.weight"].row(5).iter().map(|&v| v as f64).collect();
        let g: Vec<f64> = ckpt["blocks.0.attn_norm.weight"]
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect();
        let ms = emb.iter().map(|v| v * v).sum::<f64>() / emb.len() as f64;
        let rms = (ms + 1e-5).sqrt();

        let a = &stats.norms["blocks.0.attn.q_proj.weight"];
        for (j, &aj) in a.iter().enumerate() {
            let expect = (emb[j] / rms * g[j]).abs() as f32;
            assert!(
                (aj - expect).abs() <= 1e-6 * expect.abs().max(1.0),
                "channel {j}: got {aj}, expected {expect}"
            );
            assert!(aj >= 0.0);
        }
        assert_eq!(stats.sample_count, 1);
        assert_eq!(stats.token_count, 1);
    }

    /// Σx² additivity: accumulating two halves separately and merging gives
    /// the same stats as a single pass.
    #[test]
    fn split_accumulation_matches_single_pass() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 3).unwrap();
        let samples: Vec<Vec<u32>> = (0..8u32).map(|i| vec![i, i + 1, i + 2]).collect();

        let whole = accumulate_stats(&ckpt, &m, &samples, 9, 7).unwrap();

        let model = Model32::from_checkpoint(&ckpt, &m, None).unwrap();
        let mut first = CapturedActivations::new(&m);
        for s in &samples[..4] {
            model.forward_captured(s, &mut first).unwrap();
        }
        let mut second = CapturedActivations::new(&m);
        for s in &samples[4..] {
            model.forward_captured(s, &mut second).unwrap();
        }
        first.merge(&second).unwrap();
        let merged = ActivationStats::from_captured(&first, samples.len() as u64, 9, 7);

        assert_eq!(whole, merged);
    }

    /// Adding a sample never decreases any norm.
    #[test]
    fn norms_are_monotone_in_samples() {
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 23).unwrap();
        let some = accumulate_stats(&ckpt, &m, &[vec![1, 2]], 0, 0).unwrap();
        let more = accumulate_stats(&ckpt, &m, &[vec![1, 2], vec![3, 4, 5]], 0, 0).unwrap();
        for (name, a) in &some.norms {
            let b = &more.norms[name];
            for (x, y) in a.iter().zip(b) {
                assert!(y >= x, "{name}: {y} < {x}");
            }
        }
    }

    /// Scaling an input-side norm weight by c scales the captured norms of
    /// the projections it feeds by exactly c (within f32 rounding). Scaling
    /// the embedding table itself is absorbed by the pre-norm, so first-layer
    /// norms stay put within the eps-induced tolerance.
    #[test]
    fn norm_weight_scaling_is_covariant_and_embedding_scaling_is_absorbed() {
        let m = small_manifest();
        let base_ckpt = generate_tiny_model(&m, 77).unwrap();
        let samples: Vec<Vec<u32>> = vec![vec![1, 2, 3, 4], vec![7, 8]];
        let base = accumulate_stats(&base_ckpt, &m, &samples, 0, 0).unwrap();

        let c = 2.0f32;
        let mut scaled_norm = base_ckpt.clone();
        {
            let t = scaled_norm.get_mut("blocks.0.attn_norm.weight").unwrap();
            for v in t.data_mut() {
                *v *= c;
            }
        }
        let scaled = accumulate_stats(&scaled_norm, &m, &samples, 0, 0).unwrap();
        for name in [
            "blocks.0.attn.q_proj.weight",
            "blocks.0.attn.k_proj.weight",
            "blocks.0.attn.v_proj.weight",
        ] {
            for (a, b) in base.norms[name].iter().zip(&scaled.norms[name]) {
                assert!(
                    (b - c * a).abs() <= 1e-5 * (c * a).abs().max(1e-3),
                    "{name}: {b} vs {}",
                    c * a
                );
            }
        }

        let mut scaled_emb = base_ckpt.clone();
        {
            let t = scaled_emb.get_mut("tok_emb.weight").unwrap();
            for v in t.data_mut() {
                *v *= c;
            }
        }
        let absorbed = accumulate_stats(&scaled_emb, &m, &samples, 0, 0).unwrap();
        let name = "blocks.0.attn.q_proj.weight";
        for (a, b) in base.norms[name].iter().zip(&absorbed.norms[name]) {
            assert!(
                (b - a).abs() <= 1e-4 * a.abs().max(1e-3),
                "{name}: {b} vs {a}"
            );
        }
    }

    #[test]
    fn stats_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.safetensors");
        let m = small_manifest();
        let ckpt = generate_tiny_model(&m, 2).unwrap();
        let stats = accumulate_stats(&ckpt, &m, &[vec![1, 2, 3]], 11, 22).unwrap();
        stats.save(&path).unwrap();
        let back = ActivationStats::load(&path).unwrap();
        assert_eq!(back, stats);
        assert_eq!(back.seed, 11);
        assert_eq!(back.corpus_fingerprint, 22);
    }
}
