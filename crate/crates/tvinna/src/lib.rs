//! tvinna: merge language-adapted model checkpoints and measure what the
//! merges know, using minimal-pair benchmarks scored by log-likelihood.
//!
//! The pieces fit together as a pipeline:
//!
//! 1. [`tensorstore`] reads and writes checkpoints (safetensors container).
//! 2. [`merge`] turns fine-tuned checkpoints into task vectors and combines
//!    them by weighted averaging or sign-election (TIES).
//! 3. [`pairgen`] builds minimal-pair evaluation sets from corruption logs,
//!    rated translations, and labeled corpora.
//! 4. [`scoring`] assigns log-likelihoods to texts via pluggable scorers and
//!    judges each pair by which side scores higher.
//! 5. [`report`] aggregates per-setup accuracies into means and pairwise
//!    win tallies, emitted as CSV or Markdown.
//!
//! The [`cli`] module wires these into the `tvinna` binary. All public
//! entry points are deterministic: the same inputs produce the same bytes,
//! regardless of thread count.

pub mod cli;
pub mod merge;
pub mod pairgen;
pub mod report;
pub mod scoring;
pub mod tensorstore;

pub use merge::{
    build_recipe, lora_to_task_vector, merge_task_arithmetic, merge_ties, merge_with_recipe,
    task_vector, LoraAdapter, LoraPair, MergeError, MergeMethod, MergeRecipe, RecipeSource,
    TaskVector,
};
pub use report::{
    benchmark_mean, emit_report, pairwise_wins, write_report, Fraction, ReportError,
    ReportFormat, SetupResult, WinTally,
};
pub use tensorstore::{
    assert_compatible, checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint,
    save_checkpoint, CompatReport, Dtype, Tensor, TensorMap, TensorStoreError,
};
