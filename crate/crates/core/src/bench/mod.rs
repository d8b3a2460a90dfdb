//! Desk-scale experiment harness and synthetic corpora.
//!
//! Three experiments share one [`Workbench`]: a fixed train/test split and
//! one language model trained on the unlabeled training text.
//!
//! * starvation: downsample the training split, then fill it back to full
//!   size with generated samples;
//! * ratio: hold the training size fixed and vary the original/generated mix;
//! * agnostic: double a downsampled subset and compare classifier families.

mod config;
mod report;
mod run;
mod synth;

pub use config::{BenchConfig, CorpusSource, Ratio};
pub use report::{
    parse_csv_aggregates, render_csv, render_markdown, sha256_hex, write_report, AggregateRow, Arm, Cell,
    ExperimentKind, ExperimentReport, RepeatResult, CSV_HEADER,
};
pub use run::{
    build_corpus, dataset_checksum, lexicon_hit_rates, run_agnostic, run_ratio, run_starvation,
    train_language_model, Workbench,
};
pub use synth::{synth_corpus, SynthClass, SynthSpec, ABUSE_MIX};
