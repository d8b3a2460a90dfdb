use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use super::synth::SynthSpec;
use crate::augment::{BoostMode, GenerationConfig};
use crate::classify::{ClassifierSpec, Family};
use crate::corpus::CorpusFormat;
use crate::error::{Error, Result};
use crate::lexicon::DocGranularity;
use crate::lm::{parse_key_values, DecodeStrategy, ModelConfig, TrainOptions};
use crate::steer::{LengthRange, SteerConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Synthetic,
    File { path: PathBuf, format: CorpusFormat },
}

/// An original/generated mix, in the same units across a grid (e.g. 70/10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Ratio {
    pub original: u32,
    pub generated: u32,
}

impl Ratio {
    pub fn total(&self) -> u32 {
        self.original + self.generated
    }

    /// Share of the training set kept from the original data.
    pub fn original_share(&self) -> f64 {
        f64::from(self.original) / f64::from(self.total())
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.original, self.generated)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("ratio {s:?} (expected original/generated, e.g. 70/10)"));
        let (o, g) = s.split_once('/').ok_or_else(bad)?;
        let ratio = Ratio {
            original: o.trim().parse().map_err(|_| bad())?,
            generated: g.trim().parse().map_err(|_| bad())?,
        };
        if ratio.original == 0 {
            return Err(bad());
        }
        Ok(ratio)
    }
}

/// Every knob of a bench run. Serialized as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub seed: u64,
    pub repeats: usize,
    pub corpus: CorpusSource,
    pub synth: SynthSpec,
    pub train_fraction: f64,
    pub lm: ModelConfig,
    pub lm_max_vocab: usize,
    pub lm_train: TrainOptions,
    pub lexicon_k: usize,
    pub granularity: DocGranularity,
    pub generation: GenerationConfig,
    pub boost_mode: BoostMode,
    pub linear: ClassifierSpec,
    pub neural: ClassifierSpec,
    pub starvation_fractions: Vec<f64>,
    pub starvation_families: Vec<Family>,
    /// Adds an unsteered-generation arm to the starvation grid.
    pub control_arm: bool,
    pub ratios: Vec<Ratio>,
    pub ratio_families: Vec<Family>,
    pub agnostic_fractions: Vec<f64>,
    pub agnostic_families: Vec<Family>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mut synth = SynthSpec::abuse_mix(10_000, 10, 0);
        synth.background_size = 2000;
        synth.min_len = 4;
        synth.max_len = 10;
        Self {
            seed: 0,
            repeats: 5,
            corpus: CorpusSource::Synthetic,
            synth,
            train_fraction: 0.8,
            lm: ModelConfig {
                context_length: 32,
                ..ModelConfig::default()
            },
            lm_max_vocab: 8000,
            lm_train: TrainOptions {
                epochs: 10,
                ..TrainOptions::default()
            },
            lexicon_k: 20,
            granularity: DocGranularity::Class,
            generation: GenerationConfig {
                steer: SteerConfig {
                    step_size: 0.2,
                    decode: DecodeStrategy::Sample,
                    ..SteerConfig::default()
                },
                lengths: LengthRange { min: 1, max: 10 },
                bag_size: None,
                steering: true,
            },
            boost_mode: BoostMode::PreserveDistribution,
            linear: ClassifierSpec::linear(0),
            neural: ClassifierSpec::neural(0),
            starvation_fractions: vec![0.01, 0.05, 0.2, 0.4, 0.6, 1.0],
            starvation_families: vec![Family::LinearBow],
            control_arm: false,
            ratios: (0..8).map(|g| Ratio { original: 80 - 10 * g, generated: 10 * g }).collect(),
            ratio_families: vec![Family::LinearBow],
            agnostic_fractions: vec![0.2, 0.3, 0.4],
            agnostic_families: vec![Family::LinearBow, Family::Neural],
        }
    }
}

fn list<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        })
        .collect()
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl BenchConfig {
    pub fn spec_for(&self, family: Family, seed: u64) -> ClassifierSpec {
        let base = match family {
            Family::LinearBow => &self.linear,
            Family::Neural => &self.neural,
        };
        ClassifierSpec { seed, ..base.clone() }
    }

    /// The synthetic corpus spec with the master seed applied.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// Seeds of the repeats: `seed, seed + 1, …`.
    pub fn repeat_seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.seed + r).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} not in (0, 1)", self.train_fraction));
        }
        if self.lexicon_k == 0 {
            return bad("lexicon_k must be positive".into());
        }
        for &f in self.starvation_fractions.iter().chain(&self.agnostic_fractions) {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("fraction {f} not in (0, 1]"));
            }
        }
        if let Some(first) = self.ratios.first() {
            if self.ratios.iter().any(|r| r.total() != first.total()) {
                return bad("all ratios must share the same total".into());
            }
        }
        if self.corpus == CorpusSource::Synthetic {
            self.synth.validate()?;
        }
        self.generation.steer.validate()?;
        self.linear.validate()?;
        self.neural.validate()?;
        let mut lm = self.lm.clone();
        lm.vocab_size = lm.vocab_size.max(4);
        lm.validate()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("repeats", self.repeats.to_string());
        match &self.corpus {
            CorpusSource::Synthetic => kv("corpus", "synthetic".into()),
            CorpusSource::File { path, format } => {
                kv("corpus", path.display().to_string());
                kv("corpus_format", format.to_string());
            }
        }
        kv("synth_total", self.synth.total.to_string());
        kv(
            "synth_proportions",
            list(&self.synth.classes.iter().map(|c| format!("{}:{}", c.label, c.proportion)).collect::<Vec<_>>()),
        );
        kv("synth_indicators", self.synth.classes.first().map_or(0, |c| c.indicators.len()).to_string());
        kv("synth_boost", self.synth.boost.to_string());
        kv("synth_background", self.synth.background_size.to_string());
        kv("synth_min_len", self.synth.min_len.to_string());
        kv("synth_max_len", self.synth.max_len.to_string());
        kv("train_fraction", self.train_fraction.to_string());
        kv("lm_layers", self.lm.layers.to_string());
        kv("lm_dim", self.lm.model_dim.to_string());
        kv("lm_heads", self.lm.heads.to_string());
        kv("lm_ffn", self.lm.ffn_dim.to_string());
        kv("lm_context", self.lm.context_length.to_string());
        kv("lm_max_vocab", self.lm_max_vocab.to_string());
        kv("lm_epochs", self.lm_train.epochs.to_string());
        kv("lm_lr", self.lm_train.learning_rate.to_string());
        kv("lm_batch", self.lm_train.batch_size.to_string());
        kv("lm_grad_clip", self.lm_train.grad_clip.to_string());
        kv("lexicon_k", self.lexicon_k.to_string());
        kv("lexicon_granularity", self.granularity.to_string());
        let g = &self.generation;
        kv("bag_size", g.bag_size.map_or("all".into(), |n| n.to_string()));
        kv("steering", g.steering.to_string());
        kv("steer_alpha", g.steer.alpha.to_string());
        kv("steer_beta", g.steer.beta.to_string());
        kv("steer_step", g.steer.step_size.to_string());
        kv("steer_iterations", g.steer.iterations.to_string());
        kv("steer_normalize", g.steer.grad_normalize.to_string());
        kv("decode", g.steer.decode.to_string());
        kv("gen_min_len", g.lengths.min.to_string());
        kv("gen_max_len", g.lengths.max.to_string());
        kv("boost_mode", self.boost_mode.to_string());
        for (prefix, spec) in [("linear", &self.linear), ("neural", &self.neural)] {
            kv(&format!("{prefix}_l2"), spec.l2.to_string());
            kv(&format!("{prefix}_epochs"), spec.epochs.to_string());
            kv(&format!("{prefix}_lr"), spec.learning_rate.to_string());
            kv(&format!("{prefix}_batch"), spec.batch_size.to_string());
        }
        kv("neural_embed", self.neural.embed_dim.to_string());
        kv("neural_hidden", self.neural.hidden_dim.to_string());
        kv("starvation_fractions", list(&self.starvation_fractions));
        kv("starvation_families", list(&self.starvation_families));
        kv("control_arm", self.control_arm.to_string());
        kv("ratios", list(&self.ratios));
        kv("ratio_families", list(&self.ratio_families));
        kv("agnostic_fractions", list(&self.agnostic_fractions));
        kv("agnostic_families", list(&self.agnostic_families));
        s
    }

    /// Reads `key = value` text over the defaults. Unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(parse_key_values(text)?)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        let mut indicators = None;
        let mut proportions: Option<Vec<(String, f64)>> = None;
        let mut corpus_format = CorpusFormat::Jsonl;
        let mut corpus_path = None;
        for (key, value) in &map {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "seed" => c.seed = parse(k, v)?,
                "repeats" => c.repeats = parse(k, v)?,
                "corpus" => corpus_path = (v != "synthetic").then(|| PathBuf::from(v)),
                "corpus_format" => corpus_format = parse(k, v)?,
                "synth_total" => c.synth.total = parse(k, v)?,
                "synth_proportions" => {
                    proportions = Some(
                        v.split(',')
                            .map(|p| {
                                let (l, x) = p
                                    .split_once(':')
                                    .ok_or_else(|| Error::Config(format!("{k}: expected label:proportion")))?;
                                Ok((l.trim().to_string(), parse(k, x.trim())?))
                            })
                            .collect::<Result<_>>()?,
                    )
                }
                "synth_indicators" => indicators = Some(parse::<usize>(k, v)?),
                "synth_boost" => c.synth.boost = parse(k, v)?,
                "synth_background" => c.synth.background_size = parse(k, v)?,
                "synth_min_len" => c.synth.min_len = parse(k, v)?,
                "synth_max_len" => c.synth.max_len = parse(k, v)?,
                "train_fraction" => c.train_fraction = parse(k, v)?,
                "lm_layers" => c.lm.layers = parse(k, v)?,
                "lm_dim" => c.lm.model_dim = parse(k, v)?,
                "lm_heads" => c.lm.heads = parse(k, v)?,
                "lm_ffn" => c.lm.ffn_dim = parse(k, v)?,
                "lm_context" => c.lm.context_length = parse(k, v)?,
                "lm_max_vocab" => c.lm_max_vocab = parse(k, v)?,
                "lm_epochs" => c.lm_train.epochs = parse(k, v)?,
                "lm_lr" => c.lm_train.learning_rate = parse(k, v)?,
                "lm_batch" => c.lm_train.batch_size = parse(k, v)?,
                "lm_grad_clip" => c.lm_train.grad_clip = parse(k, v)?,
                "lexicon_k" => c.lexicon_k = parse(k, v)?,
                "lexicon_granularity" => c.granularity = parse(k, v)?,
                "bag_size" => c.generation.bag_size = if v == "all" { None } else { Some(parse(k, v)?) },
                "steering" => c.generation.steering = parse(k, v)?,
                "steer_alpha" => c.generation.steer.alpha = parse(k, v)?,
                "steer_beta" => c.generation.steer.beta = parse(k, v)?,
                "steer_step" => c.generation.steer.step_size = parse(k, v)?,
                "steer_iterations" => c.generation.steer.iterations = parse(k, v)?,
                "steer_normalize" => c.generation.steer.grad_normalize = parse(k, v)?,
                "decode" => c.generation.steer.decode = parse(k, v)?,
                "gen_min_len" => c.generation.lengths.min = parse(k, v)?,
                "gen_max_len" => c.generation.lengths.max = parse(k, v)?,
                "boost_mode" => c.boost_mode = parse(k, v)?,
                "linear_l2" => c.linear.l2 = parse(k, v)?,
                "linear_epochs" => c.linear.epochs = parse(k, v)?,
                "linear_lr" => c.linear.learning_rate = parse(k, v)?,
                "linear_batch" => c.linear.batch_size = parse(k, v)?,
                "neural_l2" => c.neural.l2 = parse(k, v)?,
                "neural_epochs" => c.neural.epochs = parse(k, v)?,
                "neural_lr" => c.neural.learning_rate = parse(k, v)?,
                "neural_batch" => c.neural.batch_size = parse(k, v)?,
                "neural_embed" => c.neural.embed_dim = parse(k, v)?,
                "neural_hidden" => c.neural.hidden_dim = parse(k, v)?,
                "starvation_fractions" => c.starvation_fractions = parse_list(k, v)?,
                "starvation_families" => c.starvation_families = parse_list(k, v)?,
                "control_arm" => c.control_arm = parse(k, v)?,
                "ratios" => c.ratios = parse_list(k, v)?,
                "ratio_families" => c.ratio_families = parse_list(k, v)?,
                "agnostic_fractions" => c.agnostic_fractions = parse_list(k, v)?,
                "agnostic_families" => c.agnostic_families = parse_list(k, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        if let Some(path) = corpus_path {
            c.corpus = CorpusSource::File {
                path,
                format: corpus_format,
            };
        }
        let proportions = proportions.unwrap_or_else(|| {
            c.synth
                .classes
                .iter()
                .map(|cl| (cl.label.clone(), cl.proportion))
                .collect()
        });
        let n_ind = indicators.unwrap_or_else(|| c.synth.classes.first().map_or(0, |cl| cl.indicators.len()));
        c.synth.classes = proportions
            .into_iter()
            .map(|(label, proportion)| super::synth::SynthClass::named(label, proportion, n_ind))
            .collect();
        c.validate()?;
        Ok(c)
    }
}
