//! Class boosting: how many samples to generate per class, generating them,
//! and merging them into the original training set without duplicates.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::corpus::{ClassStats, Dataset, LabeledExample, Provenance};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lexicon::ClassLexicon;
use crate::lm::LanguageModel;
use crate::rng::{derive, str_key};
use crate::steer::{generate_conditional, generate_unconditional, Bag, LengthRange, SteerConfig};

/// Regeneration attempts per slot before a duplicate is given up on.
pub const MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BoostMode {
    /// Targets follow a reference class distribution.
    #[default]
    PreserveDistribution,
    /// Equal targets per class.
    Balance,
}

impl fmt::Display for BoostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoostMode::PreserveDistribution => "preserve",
            BoostMode::Balance => "balance",
        })
    }
}

impl FromStr for BoostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preserve" | "preserve_distribution" => Ok(BoostMode::PreserveDistribution),
            "balance" => Ok(BoostMode::Balance),
            other => Err(Error::InvalidArgument(format!("unknown boost mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassPlan {
    pub original: usize,
    pub target: usize,
}

impl ClassPlan {
    pub fn boost(&self) -> usize {
        self.target - self.original
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoostPlan {
    pub mode: BoostMode,
    pub classes: BTreeMap<String, ClassPlan>,
}

impl BoostPlan {
    pub fn total_target(&self) -> usize {
        self.classes.values().map(|c| c.target).sum()
    }

    pub fn total_boost(&self) -> usize {
        self.classes.values().map(ClassPlan::boost).sum()
    }

    pub fn boosts(&self) -> BTreeMap<String, usize> {
        self.classes.iter().map(|(k, c)| (k.clone(), c.boost())).collect()
    }

    pub fn targets(&self) -> ClassStats {
        self.classes.iter().map(|(k, c)| (k.clone(), c.target)).collect()
    }
}

/// Integer targets `≥ original`, summing to `total`, as close to
/// `total · w_c / Σw` as the floors allow. Classes whose share falls below
/// their current count are pinned there and the rest is re-split; leftover
/// units go by largest remainder, ties to the earlier class.
fn water_fill(original: &[usize], weights: &[f64], total: usize) -> Result<Vec<usize>> {
    let n = original.len();
    let mut pinned = vec![false; n];
    loop {
        let free = total - (0..n).filter(|&i| pinned[i]).map(|i| original[i]).sum::<usize>();
        let mass: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| weights[i]).sum();
        if mass.is_nan() || mass <= 0.0 {
            if free == 0 {
                return Ok(original.to_vec());
            }
            return Err(Error::InvalidArgument(
                "reference distribution has no mass on the classes left to fill".into(),
            ));
        }
        let ideal: Vec<f64> = (0..n)
            .map(|i| if pinned[i] { original[i] as f64 } else { free as f64 * weights[i] / mass })
            .collect();
        let newly: Vec<usize> = (0..n).filter(|&i| !pinned[i] && ideal[i] < original[i] as f64).collect();
        if !newly.is_empty() {
            for i in newly {
                pinned[i] = true;
            }
            continue;
        }
        let mut out: Vec<usize> = (0..n)
            .map(|i| if pinned[i] { original[i] } else { ((ideal[i] + 1e-9).floor() as usize).max(original[i]) })
            .collect();
        let assigned: usize = out.iter().sum();
        let mut order: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - out[a] as f64;
            let rb = ideal[b] - out[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
            out[i] += 1;
        }
        debug_assert_eq!(out.iter().sum::<usize>(), total);
        return Ok(out);
    }
}

/// Per-class targets and boosting counts that bring `stats` up to `target_total`.
///
/// Preserve mode follows `reference` (the subset's own distribution when
/// `None`). Classes present only in the reference enter with zero originals.
pub fn plan_boost(
    stats: &ClassStats,
    target_total: usize,
    mode: BoostMode,
    reference: Option<&ClassStats>,
) -> Result<BoostPlan> {
    let current: usize = stats.values().sum();
    if target_total < current {
        return Err(Error::InvalidArgument(format!(
            "target total {target_total} is below the current size {current}"
        )));
    }
    let reference = reference.unwrap_or(stats);
    let labels: Vec<&String> = stats
        .keys()
        .chain(reference.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::Empty("class statistics".into()));
    }
    let original: Vec<usize> = labels.iter().map(|l| stats.get(*l).copied().unwrap_or(0)).collect();
    let weights: Vec<f64> = match mode {
        BoostMode::PreserveDistribution => labels
            .iter()
            .map(|l| reference.get(*l).copied().unwrap_or(0) as f64)
            .collect(),
        BoostMode::Balance => vec![1.0; labels.len()],
    };
    let targets = water_fill(&original, &weights, target_total)?;
    Ok(BoostPlan {
        mode,
        classes: labels
            .into_iter()
            .zip(original.into_iter().zip(targets))
            .map(|(l, (original, target))| (l.clone(), ClassPlan { original, target }))
            .collect(),
    })
}

/// Everything about sampling except the class bags.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub steer: SteerConfig,
    pub lengths: LengthRange,
    /// Use only the top `n` lexicon tokens as the bag.
    pub bag_size: Option<usize>,
    /// When false, samples come from the plain LM and are merely labeled.
    pub steering: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            steer: SteerConfig::default(),
            lengths: LengthRange::default(),
            bag_size: None,
            steering: true,
        }
    }
}

/// A language model plus one bag per class, ready to produce labeled samples.
pub struct Augmenter<'a> {
    lm: &'a LanguageModel,
    bags: BTreeMap<String, Bag>,
    config: GenerationConfig,
    exec: Execution,
}

impl<'a> Augmenter<'a> {
    pub fn new(lm: &'a LanguageModel, lexicons: &[ClassLexicon], config: GenerationConfig, exec: Execution) -> Result<Self> {
        config.steer.validate()?;
        config.lengths.validate(&lm.model)?;
        let bags = lexicons
            .iter()
            .map(|lex| Ok((lex.label.clone(), Bag::from_lexicon(lex, &lm.tokenizer, config.bag_size)?)))
            .collect::<Result<_>>()?;
        Ok(Self { lm, bags, config, exec })
    }

    pub fn bag(&self, label: &str) -> Option<&Bag> {
        self.bags.get(label)
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    /// One sample for `(label, slot, attempt)`, from its own random stream.
    pub fn sample(&self, label: &str, slot: usize, attempt: u32, seed: u64) -> Result<LabeledExample> {
        let bag = self
            .bags
            .get(label)
            .ok_or_else(|| Error::InvalidArgument(format!("no lexicon for class {label:?}")))?;
        let stream = derive(seed, &[str_key(label), slot as u64, u64::from(attempt)]);
        let model = &self.lm.model;
        let ids = if self.config.steering && self.config.steer.is_active() {
            generate_conditional(model, bag, &self.config.steer, self.config.lengths, stream)?
        } else {
            generate_unconditional(model, self.config.steer.decode, self.config.lengths, stream)?
        };
        Ok(LabeledExample::from_tokens(self.lm.tokenizer.decode(&ids), label))
    }

    /// Exactly `plan.boost(c)` samples per class, classes in label order.
    pub fn generate_batch(&self, plan: &BoostPlan, seed: u64) -> Result<Dataset> {
        let slots: Vec<(&str, usize)> = plan
            .classes
            .iter()
            .flat_map(|(label, c)| (0..c.boost()).map(move |i| (label.as_str(), i)))
            .collect();
        for (label, c) in &plan.classes {
            if c.boost() > 0 && !self.bags.contains_key(label) {
                return Err(Error::InvalidArgument(format!("no lexicon for class {label:?}")));
            }
        }
        let examples = exec::try_map(self.exec, &slots, |&(label, i)| self.sample(label, i, 0, seed))?;
        Ok(Dataset::new(examples, Provenance::Generated))
    }

    /// Plan, generate and merge in one go.
    pub fn augment(&self, original: &Dataset, plan: &BoostPlan, seed: u64) -> Result<MergeOutcome> {
        let generated = self.generate_batch(plan, seed)?;
        dedup_merge(original, &generated, |label, slot, attempt| self.sample(label, slot, attempt, seed))
    }
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub dataset: Dataset,
    /// Generated samples kept (after any regeneration).
    pub generated: usize,
    /// Duplicates that were replaced by a fresh sample.
    pub replaced: usize,
    /// Slots left empty after [`MAX_ATTEMPTS`] duplicates in a row.
    pub shortfall: usize,
}

/// Appends `generated` to `original`, skipping any generated sample whose
/// tokens already occur in the original set or earlier in the generated
/// set. A duplicate in slot `i` of its class is retried through
/// `regenerate(label, i, attempt)` for attempts `1..=MAX_ATTEMPTS`.
pub fn dedup_merge<F>(original: &Dataset, generated: &Dataset, mut regenerate: F) -> Result<MergeOutcome>
where
    F: FnMut(&str, usize, u32) -> Result<LabeledExample>,
{
    let mut seen: HashSet<Vec<String>> = original.examples().iter().map(|e| e.tokens.clone()).collect();
    let mut slots: BTreeMap<&str, usize> = BTreeMap::new();
    let mut merged = original.examples().to_vec();
    let (mut kept, mut replaced, mut shortfall) = (0, 0, 0);
    for example in generated.examples() {
        let slot = slots.entry(example.label.as_str()).or_insert(0);
        let index = *slot;
        *slot += 1;
        let mut candidate = example.clone();
        let mut attempt = 0;
        while seen.contains(&candidate.tokens) && attempt < MAX_ATTEMPTS {
            attempt += 1;
            candidate = regenerate(&example.label, index, attempt)?;
        }
        if seen.contains(&candidate.tokens) {
            shortfall += 1;
            continue;
        }
        if attempt > 0 {
            replaced += 1;
        }
        seen.insert(candidate.tokens.clone());
        merged.push(candidate);
        kept += 1;
    }
    if shortfall > 0 {
        log::warn!("{shortfall} generated slots stayed duplicates after {MAX_ATTEMPTS} attempts");
    }
    Ok(MergeOutcome {
        dataset: Dataset::new(merged, Provenance::Mixed),
        generated: kept,
        replaced,
        shortfall,
    })
}
