//! Importance scoring and mask generation.
//!
//! Two scoring methods: activation-weighted (|W_ij| * a_j, with a_j the
//! calibration L2 norm of input channel j) and plain magnitude (|W_ij|).
//! Three comparison groups: each row (per output), the whole tensor, or
//! aligned N:M blocks along the input dimension. Within a group the lowest
//! scores are pruned; ties break on the flat row-major index (smaller index
//! pruned first), which makes every mask a pure function of its inputs.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::calibration::ActivationStats;
use crate::container::{self, Checkpoint, Metadata, TensorMap, TensorRecord};
use crate::error::{Error, Result};
use crate::manifest::is_prunable_name;
use crate::scalar::Element;
use crate::tensor::{Tensor, Tensor32};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneMethod {
    Wanda,
    Magnitude,
}

impl PruneMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PruneMethod::Wanda => "wanda",
            PruneMethod::Magnitude => "magnitude",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wanda" => Some(PruneMethod::Wanda),
            "magnitude" => Some(PruneMethod::Magnitude),
            _ => None,
        }
    }
}

/// Comparison group plus its sparsity parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroupSpec {
    /// Rank weights within each output row; prune floor(s * cols) per row.
    PerRow { sparsity: f32 },
    /// Rank all weights of the tensor together; prune floor(s * total).
    PerLayer { sparsity: f32 },
    /// Keep exactly n of every m consecutive weights along the input dim.
    Nm { n: usize, m: usize },
}

impl GroupSpec {
    pub fn group_name(self) -> &'static str {
        match self {
            GroupSpec::PerRow { .. } => "per_row",
            GroupSpec::PerLayer { .. } => "per_layer",
            GroupSpec::Nm { .. } => "nm",
        }
    }

    /// Fraction of weights removed.
    pub fn sparsity_target(self) -> f32 {
        match self {
            GroupSpec::PerRow { sparsity } | GroupSpec::PerLayer { sparsity } => sparsity,
            GroupSpec::Nm { n, m } => (m - n) as f32 / m as f32,
        }
    }

    pub fn nm(self) -> Option<(usize, usize)> {
        match self {
            GroupSpec::Nm { n, m } => Some((n, m)),
            _ => None,
        }
    }

    fn validate(self, cols: usize) -> Result<()> {
        match self {
            GroupSpec::PerRow { sparsity } | GroupSpec::PerLayer { sparsity } => {
                if !(0.0..=1.0).contains(&sparsity) || !sparsity.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "sparsity {sparsity} is not in [0, 1]"
                    )));
                }
            }
            GroupSpec::Nm { n, m } => {
                if n == 0 || n >= m {
                    return Err(Error::InvalidArgument(format!(
                        "N:M pattern requires 0 < n < m, got {n}:{m}"
                    )));
                }
                if !cols.is_multiple_of(m) {
                    return Err(Error::InvalidArgument(format!(
                        "N:M pattern {n}:{m} requires m to divide in_features {cols}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-weight importance values for one tensor; same shape as the weights,
/// all entries non-negative and finite.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    pub name: String,
    pub values: Tensor32,
}

/// Compute importance scores for one weight tensor.
pub fn score(
    name: &str,
    weights: &Tensor32,
    method: PruneMethod,
    stats: Option<&ActivationStats>,
) -> Result<ScoreMatrix> {
    let (rows, cols) = weights.dims2().map_err(|_| Error::ShapeMismatch {
        name: name.to_string(),
        expected: vec![0, 0],
        got: weights.shape().to_vec(),
    })?;
    let values = match method {
        PruneMethod::Magnitude => weights.data().iter().map(|w| w.abs()).collect::<Vec<_>>(),
        PruneMethod::Wanda => {
            let stats = stats.ok_or(Error::WandaRequiresStats)?;
            let norms = stats
                .norms
                .get(name)
                .ok_or_else(|| Error::MissingNorms(name.to_string()))?;
            if norms.len() != cols {
                return Err(Error::ShapeMismatch {
                    name: format!("{name}.actnorm"),
                    expected: vec![cols],
                    got: vec![norms.len()],
                });
            }
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let wrow = weights.row(r);
                for c in 0..cols {
                    out.push(wrow[c].abs() * norms[c]);
                }
            }
            out
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "score matrix for \"{name}\" has non-finite entries"
        )));
    }
    Ok(ScoreMatrix {
        name: name.to_string(),
        values: Tensor32::new(vec![rows, cols], values)?,
    })
}

/// A bit-packed keep/prune decision aligned to one weight tensor.
/// Bit = 1 means the weight is kept. Bits are packed row-major,
/// LSB-first within each byte.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    name: String,
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    pub method: PruneMethod,
    pub spec: GroupSpec,
}

impl PruneMask {
    fn all_ones(name: String, rows: usize, cols: usize, method: PruneMethod, spec: GroupSpec) -> Self {
        let n = rows * cols;
        let mut bits = vec![0xFFu8; n.div_ceil(8)];
        // Zero the padding bits so popcounts stay exact.
        if !n.is_multiple_of(8) {
            let last = bits.len() - 1;
            bits[last] = (1u8 << (n % 8)) - 1;
        }
        Self {
            name,
            rows,
            cols,
            bits,
            method,
            spec,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bit_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn is_kept(&self, flat: usize) -> bool {
        debug_assert!(flat < self.bit_len());
        self.bits[flat / 8] & (1 << (flat % 8)) != 0
    }

    #[inline]
    fn clear(&mut self, flat: usize) {
        self.bits[flat / 8] &= !(1 << (flat % 8));
    }

    pub fn kept_count(&self) -> u64 {
        self.bits.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn row_kept_count(&self, r: usize) -> u64 {
        (0..self.cols)
            .filter(|c| self.is_kept(r * self.cols + c))
            .count() as u64
    }

    /// Popcount of the bitwise AND/OR/XOR against another mask of the same shape.
    pub fn and_count(&self, other: &Self) -> u64 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    pub fn or_count(&self, other: &Self) -> u64 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum()
    }

    pub fn xor_count(&self, other: &Self) -> u64 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones() as u64)
            .sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// A mask built from raw packed bytes (mask-file loading and tests).
    pub fn from_bytes(
        name: String,
        rows: usize,
        cols: usize,
        bits: Vec<u8>,
        method: PruneMethod,
        spec: GroupSpec,
    ) -> Result<Self> {
        let n = rows * cols;
        if bits.len() != n.div_ceil(8) {
            return Err(Error::InvalidArgument(format!(
                "mask \"{name}\": {}x{} needs {} bytes, got {}",
                rows,
                cols,
                n.div_ceil(8),
                bits.len()
            )));
        }
        if !n.is_multiple_of(8) {
            let tail = bits[bits.len() - 1] >> (n % 8);
            if tail != 0 {
                return Err(Error::InvalidArgument(format!(
                    "mask \"{name}\": padding bits beyond {rows}x{cols} are set"
                )));
            }
        }
        Ok(Self {
            name,
            rows,
            cols,
            bits,
            method,
            spec,
        })
    }
}

/// Total order used to pick pruning victims: ascending score, then ascending
/// flat index. Among equal scores the smaller index is pruned first.
#[inline]
fn victim_order(scores: &[f32], a: usize, b: usize) -> std::cmp::Ordering {
    scores[a].total_cmp(&scores[b]).then(a.cmp(&b))
}

/// Build the keep/prune mask for one score matrix.
pub fn make_mask(scores: &ScoreMatrix, method: PruneMethod, spec: GroupSpec) -> Result<PruneMask> {
    let (rows, cols) = scores.values.dims2()?;
    spec.validate(cols)?;
    let vals = scores.values.data();
    let mut mask = PruneMask::all_ones(scores.name.clone(), rows, cols, method, spec);

    match spec {
        GroupSpec::PerRow { sparsity } => {
            let k = (sparsity as f64 * cols as f64).floor() as usize;
            let k = k.min(cols);
            if k == 0 {
                return Ok(mask);
            }
            for r in 0..rows {
                let base = r * cols;
                let mut idx: Vec<usize> = (base..base + cols).collect();
                if k < cols {
                    idx.select_nth_unstable_by(k - 1, |&a, &b| victim_order(vals, a, b));
                }
                for &flat in &idx[..k] {
                    mask.clear(flat);
                }
            }
        }
        GroupSpec::PerLayer { sparsity } => {
            let total = rows * cols;
            let k = (sparsity as f64 * total as f64).floor() as usize;
            let k = k.min(total);
            if k == 0 {
                return Ok(mask);
            }
            let mut idx: Vec<usize> = (0..total).collect();
            if k < total {
                idx.select_nth_unstable_by(k - 1, |&a, &b| victim_order(vals, a, b));
            }
            for &flat in &idx[..k] {
                mask.clear(flat);
            }
        }
        GroupSpec::Nm { n, m } => {
            for r in 0..rows {
                for g in 0..cols / m {
                    let base = r * cols + g * m;
                    let mut idx: Vec<usize> = (base..base + m).collect();
                    idx.sort_unstable_by(|&a, &b| victim_order(vals, a, b));
                    for &flat in &idx[..m - n] {
                        mask.clear(flat);
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Zero out pruned weights: kept entries are copied bit-exactly, pruned
/// entries become positive zero. The input tensor is untouched.
pub fn apply_mask<T: Element>(weights: &Tensor<T>, mask: &PruneMask) -> Result<Tensor<T>> {
    let (rows, cols) = weights.dims2().map_err(|_| Error::ShapeMismatch {
        name: mask.name.clone(),
        expected: vec![mask.rows, mask.cols],
        got: weights.shape().to_vec(),
    })?;
    if (rows, cols) != (mask.rows, mask.cols) {
        return Err(Error::ShapeMismatch {
            name: mask.name.clone(),
            expected: vec![mask.rows, mask.cols],
            got: vec![rows, cols],
        });
    }
    let data = weights
        .data()
        .iter()
        .enumerate()
        .map(|(i, &w)| if mask.is_kept(i) { w } else { T::zero() })
        .collect();
    Tensor::new(vec![rows, cols], data)
}

/// One cell of the pruning matrix: method, grouping, and (for the
/// activation-aware method) the calibration stats to score against.
#[derive(Clone, Copy, Debug)]
pub struct PruneRecipe<'a> {
    pub method: PruneMethod,
    pub spec: GroupSpec,
    pub stats: Option<&'a ActivationStats>,
}

impl PruneRecipe<'_> {
    pub fn validate(&self) -> Result<()> {
        match (self.method, self.stats) {
            (PruneMethod::Wanda, None) => Err(Error::WandaRequiresStats),
            (PruneMethod::Magnitude, Some(_)) => Err(Error::InvalidArgument(
                "magnitude pruning does not take activation stats".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// All masks for one sub-model, plus the provenance metadata persisted with
/// the mask file.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    masks: BTreeMap<String, PruneMask>,
    pub meta: Metadata,
}

impl MaskSet {
    pub fn new(masks: BTreeMap<String, PruneMask>, meta: Metadata) -> Self {
        Self { masks, meta }
    }

    pub fn get(&self, name: &str) -> Option<&PruneMask> {
        self.masks.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PruneMask)> {
        self.masks.iter()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.masks.keys().cloned().collect()
    }

    /// Persist as a container holding one u8 tensor `<name>.mask` per mask
    /// (packed bits) with shape recorded as `<name>.shape` metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = TensorMap::new();
        let mut meta = self.meta.clone();
        for (name, mask) in &self.masks {
            tensors.insert(
                format!("{name}.mask"),
                TensorRecord::from_u8(vec![mask.bits.len()], mask.bits.clone()),
            );
            meta.insert(format!("{name}.shape"), format!("{}x{}", mask.rows, mask.cols));
        }
        container::write_container(&tensors, &meta, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (records, meta) = container::read_container(path)?;
        let malformed = |detail: String| Error::Malformed {
            path: path.to_path_buf(),
            detail,
        };

        let method = meta
            .get("method")
            .and_then(|s| PruneMethod::parse(s))
            .ok_or_else(|| malformed("missing or unknown \"method\" metadata".into()))?;
        let group = meta
            .get("group")
            .cloned()
            .ok_or_else(|| malformed("missing \"group\" metadata".into()))?;
        let spec = match group.as_str() {
            "per_row" | "per_layer" => {
                let sparsity: f32 = meta
                    .get("sparsity")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed("missing or invalid \"sparsity\" metadata".into()))?;
                if group == "per_row" {
                    GroupSpec::PerRow { sparsity }
                } else {
                    GroupSpec::PerLayer { sparsity }
                }
            }
            "nm" => {
                let nm = meta
                    .get("nm")
                    .and_then(|s| parse_nm(s))
                    .ok_or_else(|| malformed("missing or invalid \"nm\" metadata".into()))?;
                GroupSpec::Nm { n: nm.0, m: nm.1 }
            }
            other => return Err(malformed(format!("unknown group \"{other}\""))),
        };

        let mut masks = BTreeMap::new();
        for (key, rec) in &records {
            let Some(name) = key.strip_suffix(".mask") else {
                return Err(malformed(format!("unexpected tensor \"{key}\" in mask file")));
            };
            let shape_str = meta
                .get(&format!("{name}.shape"))
                .ok_or_else(|| malformed(format!("missing \"{name}.shape\" metadata")))?;
            let (rows, cols) = shape_str
                .split_once('x')
                .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
                .ok_or_else(|| malformed(format!("bad shape \"{shape_str}\" for \"{name}\"")))?;
            let mask = PruneMask::from_bytes(
                name.to_string(),
                rows,
                cols,
                rec.data.clone(),
                method,
                spec,
            )
            .map_err(|e| malformed(e.to_string()))?;
            masks.insert(name.to_string(), mask);
        }
        Ok(Self { masks, meta })
    }
}

pub fn parse_nm(s: &str) -> Option<(usize, usize)> {
    let (n, m) = s.split_once(':')?;
    Some((n.parse().ok()?, m.parse().ok()?))
}

/// Score and mask every prunable tensor of a checkpoint; non-prunable
/// tensors are copied verbatim. Tensors are independent, so they are
/// processed in parallel; output order is fixed by name.
pub fn prune_model(ckpt: &Checkpoint, recipe: &PruneRecipe) -> Result<(Checkpoint, MaskSet)> {
    recipe.validate()?;

    let prunable: Vec<(&String, &Tensor32)> = ckpt
        .iter()
        .filter(|(name, _)| is_prunable_name(name))
        .collect();

    let results: Vec<(String, Tensor32, PruneMask)> = prunable
        .par_iter()
        .map(|(name, weights)| {
            let scores = score(name, weights, recipe.method, recipe.stats)?;
            let mask = make_mask(&scores, recipe.method, recipe.spec)?;
            let pruned = apply_mask(weights, &mask)?;
            Ok(((*name).clone(), pruned, mask))
        })
        .collect::<Result<_>>()?;

    let mut pruned_ckpt = ckpt.clone();
    let mut masks = BTreeMap::new();
    for (name, pruned, mask) in results {
        pruned_ckpt.insert(name.clone(), pruned);
        masks.insert(name, mask);
    }

    let mut meta = Metadata::new();
    meta.insert("method".into(), recipe.method.as_str().into());
    meta.insert("group".into(), recipe.spec.group_name().into());
    match recipe.spec {
        GroupSpec::Nm { n, m } => {
            meta.insert("nm".into(), format!("{n}:{m}"));
        }
        _ => {
            meta.insert("sparsity".into(), format!("{}", recipe.spec.sparsity_target()));
        }
    }
    if let Some(stats) = recipe.stats {
        meta.insert("stats_seed".into(), stats.seed.to_string());
        meta.insert("stats_corpus_fp".into(), stats.corpus_fingerprint.to_string());
    }

    Ok((pruned_ckpt, MaskSet::new(masks, meta)))
}
