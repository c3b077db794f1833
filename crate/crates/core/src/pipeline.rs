//! One-command experiment: prune a single tiny model against two synthetic
//! byte-level domains with two calibration seeds each, then compare every
//! pair of mask sets.
//!
//! The two domains occupy disjoint byte ranges. Domain "a" is printable
//! ASCII (all bytes < 0x80); domain "b" uses characters whose UTF-8
//! encodings consist solely of bytes >= 0x80, so the two corpora activate
//! disjoint embedding rows. If calibration data steers pruning, masks from
//! the same domain should be closer (smaller Jaccard distance) than masks
//! from different domains.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{compare_models, JaccardReport, LayerAggregation};
use crate::calibration::{accumulate_stats, load_corpus, select_samples, Tokenizer};
use crate::container::{save_checkpoint, Metadata};
use crate::error::{Error, Result};
use crate::manifest::{generate_tiny_model, ModelManifest};
use crate::pruning::{prune_model, GroupSpec, MaskSet, PruneMethod, PruneRecipe};
use crate::render::{render_diff, render_weights};
use crate::rng::{fnv1a64, SplitMix64};

/// The two synthetic calibration domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainAlphabet {
    /// Printable ASCII: every byte in 0x20..=0x7E.
    Ascii,
    /// Characters U+00A0..U+07FF: every UTF-8 byte in 0x80..=0xDF.
    MultiByte,
}

impl DomainAlphabet {
    fn sample_char(self, rng: &mut SplitMix64) -> char {
        match self {
            DomainAlphabet::Ascii => (0x20 + rng.next_below(0x7F - 0x20) as u8) as char,
            DomainAlphabet::MultiByte => {
                let code = 0xA0 + rng.next_below(0x800 - 0xA0) as u32;
                char::from_u32(code).expect("range below surrogates")
            }
        }
    }
}

/// Write a JSONL corpus of `records` random texts drawn from `alphabet`.
pub fn synth_domain_corpus(
    path: &Path,
    alphabet: DomainAlphabet,
    records: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = SplitMix64::new(seed);
    let mut out = String::new();
    for _ in 0..records {
        let len = 48 + rng.next_below(81) as usize;
        let text: String = (0..len).map(|_| alphabet.sample_char(&mut rng)).collect();
        let line = serde_json::json!({ "text": text });
        writeln!(out, "{line}").expect("in-memory write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub seq_len: usize,
    pub records: usize,
    pub sparsity: f32,
    pub manifest: ModelManifest,
}

impl PipelineConfig {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            out_dir: out_dir.into(),
            seed,
            samples: 128,
            seq_len: 128,
            records: 512,
            sparsity: 0.5,
            manifest: ModelManifest::default_tiny(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PairDistance {
    pub a: String,
    pub b: String,
    pub within_domain: bool,
    pub global: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineSummary {
    pub pairs: Vec<PairDistance>,
    pub within_mean: f64,
    pub cross_mean: f64,
    /// `cross_mean - within_mean`; positive when same-domain masks agree more.
    pub gap: f64,
}

impl PipelineSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Run the whole experiment into `cfg.out_dir`, returning the pairwise
/// comparison summary. Every artifact lands on disk: model, corpora, stats,
/// masks, pruned checkpoints, reports, summary, and example images.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.manifest.validate()?;
    if cfg.manifest.vocab_size < 256 {
        return Err(Error::InvalidArgument(
            "pipeline corpora are byte-level; the manifest needs vocab_size >= 256".into(),
        ));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let out = |name: &str| cfg.out_dir.join(name);

    cfg.manifest.to_json_file(&out("manifest.json"))?;
    let ckpt = generate_tiny_model(&cfg.manifest, cfg.seed)?;
    let mut model_meta = Metadata::new();
    model_meta.insert("seed".into(), cfg.seed.to_string());
    save_checkpoint(&ckpt, &model_meta, &out("model.safetensors"))?;

    // Two domains x two calibration seeds -> four mask sets.
    let domains = [("a", DomainAlphabet::Ascii), ("b", DomainAlphabet::MultiByte)];
    let calib_seeds = [cfg.seed.wrapping_add(1), cfg.seed.wrapping_add(2)];
    let mut mask_sets: BTreeMap<String, MaskSet> = BTreeMap::new();

    for (tag, alphabet) in domains {
        let corpus_path = out(&format!("calib_{tag}.jsonl"));
        synth_domain_corpus(
            &corpus_path,
            alphabet,
            cfg.records,
            cfg.seed ^ fnv1a64(tag.as_bytes()),
        )?;
        let corpus = load_corpus(
            &corpus_path,
            Tokenizer::ByteLevel,
            cfg.manifest.vocab_size,
            cfg.seq_len,
        )?;

        for (i, &calib_seed) in calib_seeds.iter().enumerate() {
            let label = format!("{tag}{}", i + 1);
            let selection = select_samples(&corpus, cfg.samples, calib_seed)?;
            let stats = accumulate_stats(
                &ckpt,
                &cfg.manifest,
                &selection.samples,
                calib_seed,
                corpus.source_fingerprint,
            )?;
            stats.save(&out(&format!("stats_{label}.safetensors")))?;

            let recipe = PruneRecipe {
                method: PruneMethod::Wanda,
                spec: GroupSpec::PerRow {
                    sparsity: cfg.sparsity,
                },
                stats: Some(&stats),
            };
            let (pruned, masks) = prune_model(&ckpt, &recipe)?;
            save_checkpoint(&pruned, &Metadata::new(), &out(&format!("pruned_{label}.safetensors")))?;
            masks.save(&out(&format!("masks_{label}.safetensors")))?;
            mask_sets.insert(label, masks);
        }
    }

    // All six unordered pairs; (a1,a2) and (b1,b2) are within-domain.
    let labels: Vec<String> = mask_sets.keys().cloned().collect();
    let mut pairs = Vec::new();
    for (i, la) in labels.iter().enumerate() {
        for lb in labels.iter().skip(i + 1) {
            let report = compare_models(
                &mask_sets[la],
                &mask_sets[lb],
                LayerAggregation::Unweighted,
            )?;
            write_report(&report, &out(&format!("report_{la}_{lb}.json")))?;
            pairs.push(PairDistance {
                a: la.clone(),
                b: lb.clone(),
                within_domain: la.as_bytes()[0] == lb.as_bytes()[0],
                global: report.global,
            });
        }
    }

    // Example images for the middle layer's query projection, mirroring the
    // within- vs cross-domain mask contrast.
    let probe = format!("blocks.{}.attn.q_proj.weight", cfg.manifest.n_layers / 2);
    if let Some(mask_a1) = mask_sets["a1"].get(&probe) {
        render_weights(&ckpt[&probe], &out("qproj_dense.pgm"))?;
        render_diff(mask_a1, mask_sets["a2"].get(&probe).unwrap(), &out("qproj_diff_within.pgm"))?;
        render_diff(mask_a1, mask_sets["b1"].get(&probe).unwrap(), &out("qproj_diff_cross.pgm"))?;
    }

    let mean = |within: bool| {
        let ds: Vec<f64> = pairs
            .iter()
            .filter(|p| p.within_domain == within)
            .map(|p| p.global)
            .collect();
        ds.iter().sum::<f64>() / ds.len() as f64
    };
    let summary = PipelineSummary {
        within_mean: mean(true),
        cross_mean: mean(false),
        gap: mean(false) - mean(true),
        pairs,
    };
    std::fs::write(out("summary.json"), summary.to_json())
        .map_err(|e| Error::io(out("summary.json"), e))?;
    Ok(summary)
}

fn write_report(report: &JaccardReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}
