//! Cross-domain and cross-system recommendation by mapping target-side latent
//! factors onto sparsity-weighted benchmark factors with a deep tansig network.
//!
//! The crate is organized along the pipeline:
//!
//! * [`data`] and [`factors`]: ratings, entity indices, latent-factor matrices.
//! * [`mf`]: PMF, MMMF and BPR factorization, plus one-sided retraining.
//! * [`bridge`]: sparsity degrees and benchmark factor generation.
//! * [`dnnmap`]: min-max normalization and the mapping network.
//! * [`pipeline`]: the end-to-end three-phase run and top-N recommendation.
//! * [`eval`]: metrics, baselines, multi-seed experiments and reports.
//! * [`synth`]: planted-factor synthetic domain pairs.

pub mod bridge;
pub mod data;
pub mod dnnmap;
pub mod eval;
pub mod factors;
pub mod mf;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use data::{chronological_split, load_ratings, EntityKind, RatingDataset, RatingScale, RatingTriple};
pub use factors::FactorMatrix;
pub use mf::{MfConfig, MfKind, MfModel, RatingPredictor};
pub use pipeline::{PipelineConfig, PipelineResult, Task};
