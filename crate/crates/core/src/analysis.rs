//! Quantitative comparison of sub-model masks: Jaccard distance over the
//! KEPT-weight index sets, per tensor, per layer, and globally.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Metadata;
use crate::error::{Error, Result};
use crate::manifest::layer_of_name;
use crate::pruning::{MaskSet, PruneMask};

/// `1 - |K_a ∩ K_b| / |K_a ∪ K_b|` over kept-bit index sets; zero when both
/// sets are empty. Exact: computed from integer popcounts.
pub fn jaccard_distance(a: &PruneMask, b: &PruneMask) -> Result<f64> {
    if a.name() != b.name() || !a.same_shape(b) {
        return Err(Error::InvalidArgument(format!(
            "cannot compare mask \"{}\" ({}x{}) with \"{}\" ({}x{})",
            a.name(),
            a.rows(),
            a.cols(),
            b.name(),
            b.rows(),
            b.cols()
        )));
    }
    let inter = a.and_count(b);
    let union = a.or_count(b);
    if union == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - inter as f64 / union as f64)
}

/// How per-layer (and global) distances aggregate over tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LayerAggregation {
    /// Plain mean over the layer's tensors.
    #[default]
    Unweighted,
    /// Mean weighted by tensor element count.
    SizeWeighted,
}

/// Per-tensor, per-layer, and global Jaccard distances between two mask
/// sets, plus both sets' provenance metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JaccardReport {
    pub tensors: BTreeMap<String, f64>,
    pub layers: BTreeMap<usize, f64>,
    pub global: f64,
    pub a_meta: Metadata,
    pub b_meta: Metadata,
}

impl JaccardReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Compare two mask sets tensor by tensor. The tensor-name universes must
/// match exactly; the error lists the symmetric difference otherwise.
pub fn compare_models(
    a: &MaskSet,
    b: &MaskSet,
    agg: LayerAggregation,
) -> Result<JaccardReport> {
    let a_names = a.names();
    let b_names = b.names();
    if a_names != b_names {
        let only_a: Vec<String> = a_names
            .iter()
            .filter(|n| !b_names.contains(n))
            .cloned()
            .collect();
        let only_b: Vec<String> = b_names
            .iter()
            .filter(|n| !a_names.contains(n))
            .cloned()
            .collect();
        return Err(Error::MaskUniverseMismatch { only_a, only_b });
    }

    let distances: Vec<(String, usize, f64)> = a_names
        .par_iter()
        .map(|name| {
            let d = jaccard_distance(a.get(name).unwrap(), b.get(name).unwrap())?;
            Ok((name.clone(), a.get(name).unwrap().bit_len(), d))
        })
        .collect::<Result<_>>()?;

    let mut tensors = BTreeMap::new();
    let mut by_layer: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut global = (0.0f64, 0.0f64);
    for (name, elems, d) in &distances {
        tensors.insert(name.clone(), *d);
        let w = match agg {
            LayerAggregation::Unweighted => 1.0,
            LayerAggregation::SizeWeighted => *elems as f64,
        };
        if let Some(layer) = layer_of_name(name) {
            let e = by_layer.entry(layer).or_insert((0.0, 0.0));
            e.0 += w * d;
            e.1 += w;
        }
        global.0 += w * d;
        global.1 += w;
    }

    Ok(JaccardReport {
        tensors,
        layers: by_layer
            .into_iter()
            .map(|(layer, (sum, weight))| (layer, sum / weight))
            .collect(),
        global: if global.1 > 0.0 { global.0 / global.1 } else { 0.0 },
        a_meta: a.meta.clone(),
        b_meta: b.meta.clone(),
    })
}
