//! Extract domain-specific sparse sub-models from tiny decoder-only
//! transformer checkpoints and analyze the resulting pruning masks.
//!
//! The pipeline: generate or load an f32 safetensors checkpoint
//! ([`manifest`], [`container`]), run calibration data through the model
//! while capturing per-channel activation norms ([`transformer`],
//! [`calibration`]), score and mask weights by activation-weighted or plain
//! magnitude at unstructured or N:M sparsity ([`pruning`]), then compare
//! sub-models by Jaccard distance and grayscale renderings ([`analysis`],
//! [`render`]) and sanity-check them with a perplexity harness ([`eval`]).
//!
//! Determinism is a design constraint throughout: fixed seeds reproduce
//! checkpoints, stats, masks, reports and images byte for byte.
//!
//! The numeric kernels are generic over the scalar type ([`scalar::Element`],
//! f32 or f64); all shipped artifacts use the f32 aliases below.

pub mod analysis;
pub mod calibration;
pub mod container;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod pipeline;
pub mod pruning;
pub mod render;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod transformer;

pub use container::Checkpoint;
pub use error::{Error, Result};
pub use scalar::Element;

/// Concrete scalar used by every shipped artifact.
pub type Scalar = f32;
pub use tensor::{Tensor, Tensor32};
pub use transformer::{Model, Model32};
