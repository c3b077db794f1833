//! Command-line driver for the sub-model extraction pipeline:
//! model generation, activation capture, pruning, mask comparison,
//! rendering, perplexity evaluation, mask verification, and the
//! one-command two-domain experiment.
//!
//! Exit codes: 0 success, 1 runtime/I-O error, 2 usage or validation error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use subforge_core::analysis::{compare_models, LayerAggregation};
use subforge_core::calibration::{
    accumulate_stats, load_corpus, select_samples, ActivationStats, Tokenizer,
};
use subforge_core::container::{load_checkpoint, save_checkpoint, Metadata};
use subforge_core::error::Error as CoreError;
use subforge_core::eval::evaluate;
use subforge_core::manifest::{generate_tiny_model, validate_checkpoint, ModelManifest};
use subforge_core::pipeline::{run_pipeline, PipelineConfig};
use subforge_core::pruning::{
    parse_nm, prune_model, GroupSpec, MaskSet, PruneMethod, PruneRecipe,
};
use subforge_core::render::{render_diff, render_mask, render_weights};

#[derive(Parser)]
#[command(name = "subforge", version, about = "Extract and analyze sparse sub-models of tiny transformer checkpoints")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic random checkpoint from a manifest.
    InitModel {
        /// Manifest JSON; defaults to the bundled tiny configuration.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run calibration samples through a model and persist activation norms.
    Capture {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Calibration corpus (JSONL).
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, value_parser = parse_tokenizer)]
        tokenizer: Tokenizer,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        /// Truncate each record to this many tokens.
        #[arg(long = "seq-len", default_value_t = 128)]
        seq_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score and mask every prunable tensor of a checkpoint.
    Prune {
        #[arg(long)]
        model: PathBuf,
        /// Activation stats (required for wanda).
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        method: PruneMethod,
        /// Unstructured sparsity ratio in [0, 1].
        #[arg(long, conflicts_with = "nm")]
        sparsity: Option<f32>,
        /// Structured pattern "n:m" (keep n of every m along the input dim).
        #[arg(long, value_parser = parse_nm_arg)]
        nm: Option<(usize, usize)>,
        /// Comparison group for --sparsity: row (per output) or layer.
        #[arg(long, default_value = "row", conflicts_with = "nm")]
        group: String,
        #[arg(long = "out-model")]
        out_model: PathBuf,
        #[arg(long = "out-masks")]
        out_masks: PathBuf,
    },
    /// Jaccard-compare two mask sets and write a JSON report.
    Compare {
        #[arg(long = "masks-a")]
        masks_a: PathBuf,
        #[arg(long = "masks-b")]
        masks_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Weight per-layer and global means by tensor element count.
        #[arg(long)]
        weighted: bool,
    },
    /// Render weights, a mask, or a mask difference as a PGM image.
    Render(RenderArgs),
    /// Next-token perplexity of a (optionally masked) model on a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_tokenizer)]
        tokenizer: Tokenizer,
        /// Truncate each record to this many tokens (default: manifest max).
        #[arg(long = "seq-len")]
        seq_len: Option<usize>,
        /// Escalate the calibration/evaluation overlap warning to an error.
        #[arg(long)]
        strict: bool,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that every mask in a file satisfies its declared sparsity
    /// structure; exits nonzero naming the offending tensor otherwise.
    Verify {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, conflicts_with = "nm")]
        sparsity: Option<f32>,
        #[arg(long, value_parser = parse_nm_arg)]
        nm: Option<(usize, usize)>,
        #[arg(long, default_value = "row", conflicts_with = "nm")]
        group: String,
    },
    /// Run the 2-domain x 2-seed experiment and print the Jaccard table.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long = "seq-len", default_value_t = 128)]
        seq_len: usize,
        /// Records per synthetic domain corpus.
        #[arg(long, default_value_t = 512)]
        records: usize,
        #[arg(long, default_value_t = 0.5)]
        sparsity: f32,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct RenderSource {
    /// Checkpoint whose named tensor is rendered as a magnitude heat map.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Mask file whose named mask is rendered black/white.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Two mask files; renders where the named masks differ.
    #[arg(long, num_args = 2, value_names = ["MASKS_A", "MASKS_B"])]
    diff: Option<Vec<PathBuf>>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    source: RenderSource,
    /// Tensor name, e.g. "blocks.2.attn.q_proj.weight".
    #[arg(long)]
    tensor: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_tokenizer(s: &str) -> Result<Tokenizer, String> {
    Tokenizer::parse(s).ok_or_else(|| format!("unknown tokenizer \"{s}\" (byte_level|pretokenized)"))
}

fn parse_method(s: &str) -> Result<PruneMethod, String> {
    PruneMethod::parse(s).ok_or_else(|| format!("unknown method \"{s}\" (wanda|magnitude)"))
}

fn parse_nm_arg(s: &str) -> Result<(usize, usize), String> {
    parse_nm(s).ok_or_else(|| format!("expected \"n:m\", got \"{s}\""))
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .downcast_ref::<CoreError>()
                .map(CoreError::is_validation)
                .unwrap_or(false);
            if validation {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// FORGE_THREADS caps the rayon pool (default: number of cores).
fn init_thread_pool() {
    if let Ok(v) = std::env::var("FORGE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid FORGE_THREADS={v:?}"),
        }
    }
}

fn load_manifest_or_default(path: &Option<PathBuf>) -> anyhow::Result<ModelManifest> {
    match path {
        Some(p) => Ok(ModelManifest::from_json_file(p)?),
        None => Ok(ModelManifest::default_tiny()),
    }
}

fn group_spec(sparsity: Option<f32>, nm: Option<(usize, usize)>, group: &str) -> anyhow::Result<GroupSpec> {
    match (sparsity, nm) {
        (Some(s), None) => match group {
            "row" => Ok(GroupSpec::PerRow { sparsity: s }),
            "layer" => Ok(GroupSpec::PerLayer { sparsity: s }),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown group \"{other}\" (row|layer)"
            ))
            .into()),
        },
        (None, Some((n, m))) => Ok(GroupSpec::Nm { n, m }),
        _ => Err(CoreError::InvalidArgument(
            "exactly one of --sparsity or --nm is required".into(),
        )
        .into()),
    }
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::InitModel { manifest, seed, out } => {
            let manifest = load_manifest_or_default(&manifest)?;
            let ckpt = generate_tiny_model(&manifest, seed)?;
            let mut meta = Metadata::new();
            meta.insert("seed".into(), seed.to_string());
            save_checkpoint(&ckpt, &meta, &out)?;
            let prunable = manifest.prunable_tensors().len();
            println!(
                "wrote {}: {} tensors ({} prunable), seed {}",
                out.display(),
                ckpt.len(),
                prunable,
                seed
            );
        }

        Cmd::Capture {
            model,
            manifest,
            calib,
            tokenizer,
            samples,
            seq_len,
            seed,
            out,
        } => {
            let manifest = ModelManifest::from_json_file(&manifest)?;
            let (ckpt, _) = load_checkpoint(&model)?;
            validate_checkpoint(&ckpt, &manifest)?;
            let corpus = load_corpus(&calib, tokenizer, manifest.vocab_size, seq_len)?;
            if corpus.dropped_empty > 0 {
                eprintln!("warning: dropped {} empty sequence(s)", corpus.dropped_empty);
            }
            let selection = select_samples(&corpus, samples, seed)?;
            if selection.shortfall {
                eprintln!(
                    "warning: shortfall: {}/{}",
                    selection.samples.len(),
                    selection.requested
                );
            }
            let stats = accumulate_stats(
                &ckpt,
                &manifest,
                &selection.samples,
                seed,
                corpus.source_fingerprint,
            )?;
            stats.save(&out)?;
            println!(
                "wrote {}: {} norm vectors over {} samples / {} tokens",
                out.display(),
                stats.norms.len(),
                stats.sample_count,
                stats.token_count
            );
        }

        Cmd::Prune {
            model,
            stats,
            method,
            sparsity,
            nm,
            group,
            out_model,
            out_masks,
        } => {
            let (ckpt, _) = load_checkpoint(&model)?;
            let spec = group_spec(sparsity, nm, &group)?;
            let stats = stats.as_deref().map(ActivationStats::load).transpose()?;
            let recipe = PruneRecipe {
                method,
                spec,
                stats: stats.as_ref(),
            };
            let (pruned, masks) = prune_model(&ckpt, &recipe)?;
            save_checkpoint(&pruned, &Metadata::new(), &out_model)?;
            masks.save(&out_masks)?;
            let total: u64 = masks.iter().map(|(_, m)| m.bit_len() as u64).sum();
            let kept: u64 = masks.iter().map(|(_, m)| m.kept_count()).sum();
            println!(
                "wrote {} and {}: {} masks, {}/{} weights kept",
                out_model.display(),
                out_masks.display(),
                masks.len(),
                kept,
                total
            );
        }

        Cmd::Compare {
            masks_a,
            masks_b,
            out,
            weighted,
        } => {
            let a = MaskSet::load(&masks_a)?;
            let b = MaskSet::load(&masks_b)?;
            let agg = if weighted {
                LayerAggregation::SizeWeighted
            } else {
                LayerAggregation::Unweighted
            };
            let report = compare_models(&a, &b, agg)?;
            std::fs::write(&out, report.to_json())
                .with_context(|| format!("writing {}", out.display()))?;
            println!("global Jaccard distance: {:.6}", report.global);
        }

        Cmd::Render(args) => run_render(args)?,

        Cmd::Eval {
            model,
            manifest,
            masks,
            corpus,
            tokenizer,
            seq_len,
            strict,
            out,
        } => {
            let manifest = ModelManifest::from_json_file(&manifest)?;
            let (ckpt, _) = load_checkpoint(&model)?;
            validate_checkpoint(&ckpt, &manifest)?;
            let seq_len = seq_len.unwrap_or(manifest.max_seq_len);
            let corpus_data = load_corpus(&corpus, tokenizer, manifest.vocab_size, seq_len)?;
            let mask_set = masks.as_deref().map(MaskSet::load).transpose()?;

            // Separate-splits check: the evaluation corpus must not be the
            // calibration corpus the masks were built from.
            if let Some(set) = &mask_set {
                if let Some(fp) = set.meta.get("stats_corpus_fp") {
                    if *fp == corpus_data.source_fingerprint.to_string() {
                        let err = CoreError::CorpusOverlap {
                            fp: corpus_data.source_fingerprint,
                        };
                        if strict {
                            return Err(err.into());
                        }
                        eprintln!("warning: {err}");
                    }
                }
            }

            let mask_ref = mask_set.as_ref().map(|set| {
                (
                    set,
                    masks.as_ref().unwrap().to_str().unwrap_or("masks"),
                )
            });
            let result = evaluate(
                &ckpt,
                &manifest,
                mask_ref,
                &corpus_data,
                model.to_str().unwrap_or("model"),
                corpus.to_str().unwrap_or("corpus"),
            )?;
            match out {
                Some(path) => {
                    std::fs::write(&path, result.to_json())
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("perplexity {:.6} over {} predictions", result.perplexity, result.token_count);
                }
                None => print!("{}", result.to_json()),
            }
        }

        Cmd::Verify {
            masks,
            sparsity,
            nm,
            group,
        } => {
            let set = MaskSet::load(&masks)?;
            let spec = group_spec(sparsity, nm, &group)?;
            verify_masks(&set, spec)?;
            println!("ok: {} masks satisfy {:?}", set.len(), spec);
        }

        Cmd::Pipeline {
            out,
            seed,
            samples,
            seq_len,
            records,
            sparsity,
            manifest,
        } => {
            let mut cfg = PipelineConfig::new(out, seed);
            cfg.samples = samples;
            cfg.seq_len = seq_len;
            cfg.records = records;
            cfg.sparsity = sparsity;
            cfg.manifest = load_manifest_or_default(&manifest)?;
            let summary = run_pipeline(&cfg)?;

            println!("pair      scope   global Jaccard distance");
            for p in &summary.pairs {
                println!(
                    "{} vs {}  {}  {:.6}",
                    p.a,
                    p.b,
                    if p.within_domain { "within" } else { "cross " },
                    p.global
                );
            }
            println!(
                "within mean {:.6} | cross mean {:.6} | gap {:+.6}",
                summary.within_mean, summary.cross_mean, summary.gap
            );
        }
    }
    Ok(())
}

fn run_render(args: RenderArgs) -> anyhow::Result<()> {
    let RenderArgs { source, tensor, out } = args;
    if let Some(ckpt_path) = source.weights {
        let (ckpt, _) = load_checkpoint(&ckpt_path)?;
        let t = ckpt
            .get(&tensor)
            .with_context(|| format!("no tensor \"{tensor}\" in {}", ckpt_path.display()))?;
        render_weights(t, &out)?;
    } else if let Some(mask_path) = source.mask {
        let set = MaskSet::load(&mask_path)?;
        let m = set
            .get(&tensor)
            .with_context(|| format!("no mask \"{tensor}\" in {}", mask_path.display()))?;
        render_mask(m, &out)?;
    } else if let Some(paths) = source.diff {
        let a = MaskSet::load(&paths[0])?;
        let b = MaskSet::load(&paths[1])?;
        let ma = a
            .get(&tensor)
            .with_context(|| format!("no mask \"{tensor}\" in {}", paths[0].display()))?;
        let mb = b
            .get(&tensor)
            .with_context(|| format!("no mask \"{tensor}\" in {}", paths[1].display()))?;
        render_diff(ma, mb, &out)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Re-count every mask against the declared structure.
fn verify_masks(set: &MaskSet, spec: GroupSpec) -> anyhow::Result<()> {
    for (name, mask) in set.iter() {
        let cols = mask.cols();
        match spec {
            GroupSpec::PerRow { sparsity } => {
                let expect = cols as u64 - (sparsity as f64 * cols as f64).floor() as u64;
                for r in 0..mask.rows() {
                    let got = mask.row_kept_count(r);
                    if got != expect {
                        bail!(
                            "mask \"{name}\" violates per_row sparsity {sparsity}: \
                             row {r} keeps {got}, expected {expect}"
                        );
                    }
                }
            }
            GroupSpec::PerLayer { sparsity } => {
                let total = mask.bit_len() as u64;
                let expect = total - (sparsity as f64 * total as f64).floor() as u64;
                let got = mask.kept_count();
                if got != expect {
                    bail!(
                        "mask \"{name}\" violates per_layer sparsity {sparsity}: \
                         keeps {got}, expected {expect}"
                    );
                }
            }
            GroupSpec::Nm { n, m } => {
                if cols % m != 0 {
                    bail!("mask \"{name}\" violates nm {n}:{m}: {cols} columns not divisible by {m}");
                }
                for r in 0..mask.rows() {
                    for g in 0..cols / m {
                        let kept = (0..m)
                            .filter(|j| mask.is_kept(r * cols + g * m + j))
                            .count();
                        if kept != n {
                            bail!(
                                "mask \"{name}\" violates nm {n}:{m}: \
                                 row {r} group {g} keeps {kept}"
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
