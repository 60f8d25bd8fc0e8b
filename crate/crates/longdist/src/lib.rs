//! Instance attribution from per-epoch classifier prediction traces.
//!
//! A classifier that is trained over `k` epochs assigns every instance a label
//! at the end of each epoch; the resulting label sequence is the instance's
//! *prediction trace*. This crate measures how similarly two instances were
//! treated over the whole training run (the longitudinal distances), derives
//! the training instances closest to a target (the explainer sets), and ships
//! a synthetic-equation benchmark that scores how often the explainer set's
//! majority label matches the target's ground truth.
//!
//! The pieces, bottom-up:
//!
//! - [`trace`]: [`TraceMatrix`] (per-instance, per-epoch labels), the
//!   [`CorrectnessMask`], and the `.ldtr` binary trace format that decouples
//!   distance computation from any particular trainer.
//! - [`dataset`]: the seven-equation synthetic classification benchmark,
//!   feature standardization, and CSV I/O.
//! - [`mlp`]: a small 4→8→7 feed-forward softmax classifier trained with plain
//!   SGD, recording full-set predictions after every epoch.
//! - [`distance`]: the longitudinal distance (fraction of epochs with
//!   differing labels), its strict variant (restricted to epochs where the
//!   training instance was classified correctly), the negative complement,
//!   and explainer-set selection.
//! - [`fidelity`]: the evaluation harness — majority-label explanations over
//!   sampled targets, accuracy scoring, and the prediction-sequence analysis
//!   table.
//!
//! Everything downstream of a user-supplied 64-bit seed is deterministic:
//! same inputs, same bytes out.

pub mod dataset;
pub mod distance;
pub mod fidelity;
pub mod mlp;
pub mod seed;
pub mod trace;

pub use dataset::{DataConfig, EquationSet, Instance, Standardizer};
pub use distance::{
    distances_to_all, explainer_set, explainer_union, DistanceKind, DistanceVector,
    ExplainerResult, Polarity,
};
pub use fidelity::{EvalConfig, ExplanationOutcome, FidelityReport, OutcomeFilter};
pub use mlp::{MlpModel, TrainConfig, TrainOutput};
pub use seed::derive_seed;
pub use trace::{CorrectnessMask, Label, TraceMatrix};
