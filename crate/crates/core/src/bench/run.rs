use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use super::config::{BenchConfig, CorpusSource};
use super::report::{sha256_hex, Arm, Cell, ExperimentKind, ExperimentReport, RepeatResult};
use super::synth::synth_corpus;
use crate::augment::{plan_boost, Augmenter, GenerationConfig};
use crate::classify::{train_classifier, Family};
use crate::corpus::{class_stats, downsample, filter_and_finalize, load_corpus, stratified_split, Dataset, Fraction, SplitSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lexicon::{extract_lexicons, score_tfidf, to_tsv, ClassLexicon};
use crate::lm::{train_lm, LanguageModel, ModelConfig, Tokenizer, TrainOptions, TrainReport};
use crate::rng::{derive, str_key};

/// SHA-256 over `label \t tokens` lines, in dataset order.
pub fn dataset_checksum(data: &Dataset) -> String {
    let mut s = String::new();
    for e in data.examples() {
        let _ = writeln!(s, "{}\t{}", e.label, e.tokens.join(" "));
    }
    sha256_hex(s.as_bytes())
}

/// Builds the corpus a config asks for, finalized and ready to split.
pub fn build_corpus(config: &BenchConfig) -> Result<Dataset> {
    match &config.corpus {
        CorpusSource::Synthetic => synth_corpus(&config.synth_spec()),
        CorpusSource::File { path, format } => Ok(filter_and_finalize(load_corpus(path, *format)?)?.0),
    }
}

/// Trains the shared LM on the text of `train`; labels are never seen.
pub fn train_language_model(config: &BenchConfig, train: &Dataset, exec: Execution) -> Result<(LanguageModel, TrainReport)> {
    let tokenizer = Tokenizer::build(train, config.lm_max_vocab)?;
    let model_config = ModelConfig {
        vocab_size: tokenizer.len(),
        seed: config.seed,
        ..config.lm.clone()
    };
    let opts = TrainOptions {
        exec,
        ..config.lm_train.clone()
    };
    let (model, report) = train_lm(train, &tokenizer, &model_config, &opts)?;
    Ok((LanguageModel { tokenizer, model }, report))
}

/// A fixed split and language model shared by every experiment.
pub struct Workbench {
    config: BenchConfig,
    train: Dataset,
    test: Dataset,
    lm: LanguageModel,
    split_checksum: String,
    exec: Execution,
}

struct Generated {
    dataset: Dataset,
    n_generated: usize,
    lexicon_checksum: String,
}

impl Workbench {
    /// Corpus, split and LM training in one go.
    pub fn prepare(config: BenchConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        let corpus = build_corpus(&config)?;
        let (train, test) = stratified_split(&corpus, &SplitSpec::new(config.train_fraction, config.seed)?)?;
        log::info!("split: {} train, {} test", train.len(), test.len());
        let (lm, report) = train_language_model(&config, &train, exec)?;
        log::info!("language model: loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);
        Self::from_parts(config, train, test, lm, exec)
    }

    pub fn from_parts(config: BenchConfig, train: Dataset, test: Dataset, lm: LanguageModel, exec: Execution) -> Result<Self> {
        config.validate()?;
        config.generation.lengths.validate(&lm.model)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty("bench split".into()));
        }
        let split_checksum = dataset_checksum(&test);
        Ok(Self {
            config,
            train,
            test,
            lm,
            split_checksum,
            exec,
        })
    }

    pub fn config(&self) -> &BenchConfig {
        &self.config
    }

    /// Swap the experiment settings while keeping split and LM.
    pub fn set_config(&mut self, config: BenchConfig) -> Result<()> {
        config.validate()?;
        config.generation.lengths.validate(&self.lm.model)?;
        self.config = config;
        Ok(())
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn lm(&self) -> &LanguageModel {
        &self.lm
    }

    pub fn split_checksum(&self) -> &str {
        &self.split_checksum
    }

    pub fn lexicons(&self, subset: &Dataset) -> Result<Vec<ClassLexicon>> {
        extract_lexicons(&score_tfidf(subset, self.config.granularity)?, self.config.lexicon_k)
    }

    /// Macro-F1 on the test split of a classifier trained on `data`.
    pub fn score(&self, data: &Dataset, family: Family, seed: u64) -> Result<f64> {
        let clf = train_classifier(data, &self.config.spec_for(family, seed))?;
        Ok(clf.evaluate(&self.test, self.test.label_set(), self.exec)?.macro_f1)
    }

    pub fn augmenter<'a>(&'a self, lexicons: &[ClassLexicon], steering: bool) -> Result<Augmenter<'a>> {
        let generation = GenerationConfig {
            steering,
            ..self.config.generation.clone()
        };
        Augmenter::new(&self.lm, lexicons, generation, self.exec)
    }

    /// Mines lexicons from `subset` alone and fills it up to `target_total`.
    fn fill(&self, subset: &Dataset, target_total: usize, seed: u64, steering: bool) -> Result<Generated> {
        let lexicons = self.lexicons(subset)?;
        let lexicon_checksum = sha256_hex(to_tsv(&lexicons).as_bytes());
        let plan = plan_boost(
            &class_stats(subset),
            target_total,
            self.config.boost_mode,
            Some(&class_stats(&self.train)),
        )?;
        let out = self.augmenter(&lexicons, steering)?.augment(subset, &plan, seed)?;
        if out.shortfall > 0 {
            log::warn!("{} generated slots lost to duplicates", out.shortfall);
        }
        Ok(Generated {
            dataset: out.dataset,
            n_generated: out.generated,
            lexicon_checksum,
        })
    }

    fn subset(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        downsample(&self.train, Fraction::new(fraction)?, seed)
    }

    fn report(&self, kind: ExperimentKind, cells: BTreeMap<(u8, u64, Arm), Cell>, mut checksums: BTreeMap<String, String>) -> ExperimentReport {
        checksums.insert("split/test".into(), self.split_checksum.clone());
        let mut report = ExperimentReport {
            kind,
            cells: cells.into_values().collect(),
            config_echo: self.config.to_text(),
            checksums,
        };
        report.canonicalize();
        report
    }
}

fn push(
    cells: &mut BTreeMap<(u8, u64, Arm), Cell>,
    family: Family,
    axis_value: f64,
    axis_label: &str,
    arm: Arm,
    result: RepeatResult,
) {
    cells
        .entry((family as u8, axis_value.to_bits(), arm))
        .or_insert_with(|| Cell {
            family,
            axis_value,
            axis_label: axis_label.to_string(),
            arm,
            repeats: Vec::new(),
        })
        .repeats
        .push(result);
}

fn cell_seed(seed: u64, kind: ExperimentKind, axis: f64) -> u64 {
    derive(seed, &[str_key(&kind.to_string()), axis.to_bits()])
}

/// Downsampled training sets, each filled back to the full training size.
pub fn run_starvation(wb: &Workbench) -> Result<ExperimentReport> {
    let cfg = wb.config();
    let kind = ExperimentKind::Starvation;
    let full = wb.train.len();
    let mut cells = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    for &fraction in &cfg.starvation_fractions {
        let label = fraction.to_string();
        for seed in cfg.repeat_seeds() {
            let subset = wb.subset(fraction, seed)?;
            let gen_seed = cell_seed(seed, kind, fraction);
            let boosted = if subset.len() < full {
                let g = wb.fill(&subset, full, gen_seed, true)?;
                checksums.insert(format!("lexicons/{label}/{seed}"), g.lexicon_checksum.clone());
                Some(g)
            } else {
                None
            };
            let control = match (&boosted, cfg.control_arm) {
                (Some(_), true) => Some(wb.fill(&subset, full, gen_seed, false)?),
                _ => None,
            };
            for &family in &cfg.starvation_families {
                let base = wb.score(&subset, family, seed)?;
                log::info!("starvation {family} {label} seed {seed}: baseline {base:.4}");
                push(&mut cells, family, fraction, &label, Arm::Baseline, RepeatResult {
                    seed,
                    macro_f1: base,
                    delta_f1: None,
                    n_original: subset.len(),
                    n_generated: 0,
                });
                for (arm, g) in [(Arm::Boosted, &boosted), (Arm::Control, &control)] {
                    if let Some(g) = g {
                        let f1 = wb.score(&g.dataset, family, seed)?;
                        log::info!("starvation {family} {label} seed {seed}: {arm} {f1:.4}");
                        push(&mut cells, family, fraction, &label, arm, RepeatResult {
                            seed,
                            macro_f1: f1,
                            delta_f1: Some(f1 - base),
                            n_original: subset.len(),
                            n_generated: g.n_generated,
                        });
                    }
                }
            }
        }
    }
    Ok(wb.report(kind, cells, checksums))
}

/// Fixed training size, varying original/generated mix. Deltas are against
/// the all-original cell of the same repeat. Every mix of a repeat draws
/// slot `i` of a class from the same generation stream.
pub fn run_ratio(wb: &Workbench) -> Result<ExperimentReport> {
    let cfg = wb.config();
    let kind = ExperimentKind::Ratio;
    let full = wb.train.len();
    let mut cells = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    let mut ratios = cfg.ratios.clone();
    let stream = |seed: u64| derive(seed, &[str_key(&kind.to_string())]);
    ratios.sort_by(|a, b| b.original_share().total_cmp(&a.original_share()));
    for seed in cfg.repeat_seeds() {
        let mut reference: BTreeMap<u8, f64> = BTreeMap::new();
        for ratio in &ratios {
            let label = ratio.to_string();
            let axis = 1.0 - ratio.original_share();
            let subset = wb.subset(ratio.original_share(), seed)?;
            let mixed = if ratio.generated > 0 {
                let g = wb.fill(&subset, full, stream(seed), true)?;
                checksums.insert(format!("lexicons/{label}/{seed}"), g.lexicon_checksum.clone());
                Some(g)
            } else {
                None
            };
            for &family in &cfg.ratio_families {
                let (data, arm, n_generated) = match &mixed {
                    Some(g) => (&g.dataset, Arm::Boosted, g.n_generated),
                    None => (&subset, Arm::Baseline, 0),
                };
                let f1 = wb.score(data, family, seed)?;
                if ratio.generated == 0 {
                    reference.insert(family as u8, f1);
                }
                let delta = reference.get(&(family as u8)).map(|r| f1 - r);
                log::info!("ratio {family} {label} seed {seed}: {f1:.4}");
                push(&mut cells, family, axis, &label, arm, RepeatResult {
                    seed,
                    macro_f1: f1,
                    delta_f1: delta,
                    n_original: subset.len(),
                    n_generated,
                });
            }
        }
    }
    Ok(wb.report(kind, cells, checksums))
}

/// Downsampled subsets doubled with generated data, per classifier family.
pub fn run_agnostic(wb: &Workbench) -> Result<ExperimentReport> {
    let cfg = wb.config();
    let kind = ExperimentKind::Agnostic;
    let mut cells = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    for &fraction in &cfg.agnostic_fractions {
        let label = fraction.to_string();
        for seed in cfg.repeat_seeds() {
            let subset = wb.subset(fraction, seed)?;
            let g = wb.fill(&subset, 2 * subset.len(), cell_seed(seed, kind, fraction), true)?;
            checksums.insert(format!("lexicons/{label}/{seed}"), g.lexicon_checksum.clone());
            for &family in &cfg.agnostic_families {
                let base = wb.score(&subset, family, seed)?;
                let aug = wb.score(&g.dataset, family, seed)?;
                log::info!("agnostic {family} {label} seed {seed}: {base:.4} -> {aug:.4}");
                push(&mut cells, family, fraction, &label, Arm::Baseline, RepeatResult {
                    seed,
                    macro_f1: base,
                    delta_f1: None,
                    n_original: subset.len(),
                    n_generated: 0,
                });
                push(&mut cells, family, fraction, &label, Arm::Boosted, RepeatResult {
                    seed,
                    macro_f1: aug,
                    delta_f1: Some(aug - base),
                    n_original: subset.len(),
                    n_generated: g.n_generated,
                });
            }
        }
    }
    Ok(wb.report(kind, cells, checksums))
}

/// Per class, the share of `n` generated samples containing at least one
/// of the class's top-`top` lexicon tokens.
pub fn lexicon_hit_rates(
    wb: &Workbench,
    lexicons: &[ClassLexicon],
    top: usize,
    n: usize,
    seed: u64,
    steering: bool,
) -> Result<BTreeMap<String, f64>> {
    let augmenter = wb.augmenter(lexicons, steering)?;
    lexicons
        .iter()
        .map(|lex| {
            let bag: HashSet<&str> = lex.top(top).collect();
            let mut hits = 0usize;
            for i in 0..n {
                let sample = augmenter.sample(&lex.label, i, 0, seed)?;
                if sample.tokens.iter().any(|t| bag.contains(t.as_str())) {
                    hits += 1;
                }
            }
            Ok((lex.label.clone(), hits as f64 / n as f64))
        })
        .collect()
}
