//! Labeled text corpora: ingestion, cleaning, stratified sampling.

mod io;
mod preprocess;
mod sampling;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, save_jsonl, CorpusFormat};
pub use preprocess::{is_stopword, preprocess, stopwords};
pub use sampling::{downsample, round_half_up, stratified_split, Fraction, SplitSpec};

/// Longest token sequence kept after cleaning.
pub const MAX_TOKENS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    /// Cleaned tokens. Empty until [`filter_and_finalize`] runs.
    pub tokens: Vec<String>,
    pub label: String,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            tokens: Vec::new(),
            label: label.into(),
        }
    }

    /// An already-clean example, e.g. generator output.
    pub fn from_tokens(tokens: Vec<String>, label: impl Into<String>) -> Self {
        Self {
            text: tokens.join(" "),
            tokens,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Generated,
    Mixed,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Original => "original",
            Provenance::Generated => "generated",
            Provenance::Mixed => "mixed",
        })
    }
}

/// An ordered collection of examples whose label set is exactly the
/// labels present, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    label_set: Vec<String>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, provenance: Provenance) -> Self {
        let label_set = examples
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self {
            examples,
            label_set,
            provenance,
        }
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self::new(Vec::new(), provenance)
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<LabeledExample> {
        self.examples
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples grouped by label, each group in dataset order.
    pub fn by_class(&self) -> BTreeMap<&str, Vec<&LabeledExample>> {
        let mut out: BTreeMap<&str, Vec<&LabeledExample>> = BTreeMap::new();
        for e in &self.examples {
            out.entry(e.label.as_str()).or_default().push(e);
        }
        out
    }

    /// Concatenate two datasets; provenance becomes `Mixed` when they differ.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let provenance = if self.provenance == other.provenance {
            self.provenance
        } else {
            Provenance::Mixed
        };
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Dataset::new(examples, provenance)
    }

    pub fn token_lists(&self) -> Vec<&[String]> {
        self.examples.iter().map(|e| e.tokens.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.label.as_str()).collect()
    }
}

pub type ClassStats = BTreeMap<String, usize>;

pub fn class_stats(dataset: &Dataset) -> ClassStats {
    let mut stats = ClassStats::new();
    for e in dataset.examples() {
        *stats.entry(e.label.clone()).or_default() += 1;
    }
    stats
}

/// What [`filter_and_finalize`] kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: ClassStats,
    pub dropped_empty: usize,
    pub dropped_too_long: usize,
}

/// Clean every example and drop those left with 0 or more than
/// [`MAX_TOKENS`] tokens. The cap applies after cleaning.
pub fn filter_and_finalize(dataset: Dataset) -> Result<(Dataset, FilterReport)> {
    let provenance = dataset.provenance();
    let mut report = FilterReport::default();
    let mut kept = Vec::with_capacity(dataset.len());
    for mut e in dataset.into_examples() {
        let tokens = preprocess(&e.text);
        if tokens.is_empty() {
            report.dropped_empty += 1;
            continue;
        }
        if tokens.len() > MAX_TOKENS {
            report.dropped_too_long += 1;
            continue;
        }
        e.tokens = tokens;
        kept.push(e);
    }
    if kept.is_empty() {
        return Err(Error::Empty("every example was dropped by cleaning".into()));
    }
    if report.dropped_empty > 0 {
        log::warn!("dropped {} example(s) left empty by cleaning", report.dropped_empty);
    }
    if report.dropped_too_long > 0 {
        log::info!(
            "dropped {} example(s) over {MAX_TOKENS} tokens",
            report.dropped_too_long
        );
    }
    let out = Dataset::new(kept, provenance);
    report.kept = class_stats(&out);
    Ok((out, report))
}
