//! Knowledge distillation workbench for implicit-feedback recommenders.
//!
//! A large teacher and a compact student are trained on binary feedback with
//! BPR. The student can then be distilled from the teacher's soft labels with
//! popularity-stratified group-wise sampling (`unkd`), a single global group
//! (`cd`), or a position-weighted pointwise loss (`rd`). Evaluation reports
//! overall and popularity-group ranking quality.
//!
//! The [`causal`] module holds a synthetic generative model in which the
//! total, popularity-path, and preference-path effects of an item on its soft
//! label are exactly computable.

pub mod backbone;
pub mod causal;
pub mod config;
pub mod dataset;
pub mod distill;
mod error;
pub mod eval;
pub mod pipeline;
mod real;
pub mod rng;
pub mod trainer;

pub use backbone::{BackboneKind, EmbeddingModel, Embeddings, NormalizedGraph};
pub use config::{DistillMethod, ExperimentConfig};
pub use dataset::{Interaction, InteractionDataset};
pub use distill::{DistillPlan, PopularityPartition};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use real::Real;
pub use trainer::TrainConfig;
