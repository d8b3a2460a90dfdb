use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dager_core::augment::{plan_boost, Augmenter, BoostMode, GenerationConfig};
use dager_core::bench::{self, BenchConfig, ExperimentReport, Workbench};
use dager_core::classify::{train_classifier, Classifier, ClassifierSpec, Family};
use dager_core::corpus::{
    class_stats, downsample, filter_and_finalize, load_corpus, save_jsonl, stratified_split, CorpusFormat, Dataset,
    Fraction, Provenance, SplitSpec,
};
use dager_core::lexicon::{extract_lexicons, load_lexicons, save_lexicons, score_tfidf, DocGranularity};
use dager_core::lm::{load_model, save_model, train_lm, DecodeStrategy, LanguageModel, ModelConfig, Tokenizer, TrainOptions};
use dager_core::steer::{LengthRange, SteerConfig};
use dager_core::Execution;

#[derive(Parser)]
#[command(name = "dager", version, about = "Lexicon-steered data augmentation for text classification")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a raw corpus and write it as JSONL.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: CorpusFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified train/test split into `<out>/train.jsonl` and `<out>/test.jsonl`.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, env = "DAGER_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class-stratified down-sampling.
    Downsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, env = "DAGER_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine per-class TF-IDF lexicons.
    Lexicon {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long, default_value = "class")]
        granularity: DocGranularity,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the word-level language model on unlabeled text.
    TrainLm(TrainLmArgs),
    /// Sample class-conditional text for one class.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long = "class")]
        label: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[command(flatten)]
        steer: SteerArgs,
        #[arg(long, env = "DAGER_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Boost a training set with generated samples.
    Augment {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lexicons: PathBuf,
        #[arg(long)]
        target_total: usize,
        #[arg(long, default_value = "preserve")]
        mode: BoostMode,
        #[command(flatten)]
        steer: SteerArgs,
        #[arg(long, env = "DAGER_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier; writes `<out>/classifier.json`.
    TrainClf {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "linear")]
        family: Family,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long, env = "DAGER_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class and macro metrics of a trained classifier.
    Eval {
        #[arg(long)]
        clf: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment grid and write its report.
    Bench {
        experiment: Experiment,
        /// key = value file; missing keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reuse a language model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, env = "DAGER_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    ffn: usize,
    #[arg(long, default_value_t = 32)]
    context: usize,
    #[arg(long, default_value_t = 8000)]
    max_vocab: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f32,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, env = "DAGER_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SteerArgs {
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 0.03)]
    step: f64,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    /// Step along the unit gradient.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 10, conflicts_with = "decode")]
    topk: usize,
    /// greedy, sample, topk:K or nucleus:P
    #[arg(long)]
    decode: Option<DecodeStrategy>,
    /// Bag of the top `n` lexicon tokens instead of all of them.
    #[arg(long)]
    bag_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_len: usize,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
    /// Sample from the plain LM and only attach the label.
    #[arg(long)]
    no_steering: bool,
}

impl SteerArgs {
    fn config(&self) -> GenerationConfig {
        GenerationConfig {
            steer: SteerConfig {
                alpha: self.alpha,
                beta: self.beta,
                step_size: self.step,
                iterations: self.iters,
                grad_normalize: self.normalize,
                decode: self.decode.unwrap_or(DecodeStrategy::TopK(self.topk)),
            },
            lengths: LengthRange {
                min: self.min_len,
                max: self.max_len,
            },
            bag_size: self.bag_size,
            steering: !self.no_steering,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Starvation,
    Ratio,
    Agnostic,
}

/// Load a corpus file and (re)apply cleaning, which is idempotent.
fn read_clean(path: &Path, format: CorpusFormat) -> Result<Dataset> {
    let raw = load_corpus(path, format).with_context(|| format!("reading {}", path.display()))?;
    let (data, report) = filter_and_finalize(raw)?;
    if report.dropped_empty + report.dropped_too_long > 0 {
        log::info!(
            "{}: dropped {} empty and {} overlong examples",
            path.display(),
            report.dropped_empty,
            report.dropped_too_long
        );
    }
    Ok(data)
}

fn read_jsonl(path: &Path) -> Result<Dataset> {
    read_clean(path, CorpusFormat::Jsonl)
}

fn write_jsonl(path: &Path, data: &Dataset) -> Result<()> {
    ensure_parent(path)?;
    save_jsonl(path, &[(data, None)]).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn load_lm(dir: &Path) -> Result<LanguageModel> {
    load_model(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Ingest { input, format, out } => {
            let data = read_clean(&input, format)?;
            write_jsonl(&out, &data)?;
            log::info!("{} examples, {} classes", data.len(), data.label_set().len());
        }
        Command::Split { input, ratio, seed, out } => {
            let data = read_jsonl(&input)?;
            let (train, test) = stratified_split(&data, &SplitSpec::new(ratio, seed)?)?;
            write_jsonl(&out.join("train.jsonl"), &train)?;
            write_jsonl(&out.join("test.jsonl"), &test)?;
            log::info!("{} train, {} test", train.len(), test.len());
        }
        Command::Downsample {
            input,
            fraction,
            seed,
            out,
        } => {
            let data = read_jsonl(&input)?;
            let subset = downsample(&data, Fraction::new(fraction)?, seed)?;
            write_jsonl(&out, &subset)?;
            log::info!("kept {} of {}", subset.len(), data.len());
        }
        Command::Lexicon {
            train,
            k,
            granularity,
            out,
        } => {
            let data = read_jsonl(&train)?;
            let lexicons = extract_lexicons(&score_tfidf(&data, granularity)?, k)?;
            ensure_parent(&out)?;
            save_lexicons(&lexicons, &out)?;
        }
        Command::TrainLm(args) => {
            let data = read_jsonl(&args.corpus)?;
            let tokenizer = Tokenizer::build(&data, args.max_vocab)?;
            let config = ModelConfig {
                layers: args.layers,
                model_dim: args.dim,
                heads: args.heads,
                ffn_dim: args.ffn,
                context_length: args.context,
                vocab_size: tokenizer.len(),
                seed: args.seed,
            };
            let opts = TrainOptions {
                epochs: args.epochs,
                learning_rate: args.lr,
                batch_size: args.batch,
                exec,
                ..TrainOptions::default()
            };
            let (model, report) = train_lm(&data, &tokenizer, &config, &opts)?;
            log::info!("loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);
            save_model(&LanguageModel { tokenizer, model }, &args.out)?;
        }
        Command::Generate {
            model,
            lexicon,
            label,
            n,
            steer,
            seed,
            out,
        } => {
            let lm = load_lm(&model)?;
            let lexicons = load_lexicons(&lexicon)?;
            let Some(lex) = lexicons.iter().find(|l| l.label == label) else {
                bail!("no lexicon for class {label:?} in {}", lexicon.display());
            };
            let augmenter = Augmenter::new(&lm, std::slice::from_ref(lex), steer.config(), exec)?;
            let samples = (0..n)
                .map(|i| augmenter.sample(&label, i, 0, seed))
                .collect::<dager_core::Result<Vec<_>>>()?;
            write_jsonl(&out, &Dataset::new(samples, Provenance::Generated))?;
        }
        Command::Augment {
            train,
            model,
            lexicons,
            target_total,
            mode,
            steer,
            seed,
            out,
        } => {
            let data = read_jsonl(&train)?;
            let lm = load_lm(&model)?;
            let lexicons = load_lexicons(&lexicons)?;
            let plan = plan_boost(&class_stats(&data), target_total, mode, None)?;
            let augmenter = Augmenter::new(&lm, &lexicons, steer.config(), exec)?;
            let outcome = augmenter.augment(&data, &plan, seed)?;
            let (original, generated) = outcome.dataset.examples().split_at(data.len());
            let original = Dataset::new(original.to_vec(), Provenance::Original);
            let generated = Dataset::new(generated.to_vec(), Provenance::Generated);
            ensure_parent(&out)?;
            save_jsonl(
                &out,
                &[(&original, Some(Provenance::Original)), (&generated, Some(Provenance::Generated))],
            )?;
            log::info!(
                "{} generated, {} regenerated duplicates, {} short",
                outcome.generated,
                outcome.replaced,
                outcome.shortfall
            );
        }
        Command::TrainClf {
            train,
            family,
            epochs,
            lr,
            l2,
            seed,
            out,
        } => {
            let data = read_jsonl(&train)?;
            let mut spec = ClassifierSpec::for_family(family, seed);
            if let Some(e) = epochs {
                spec.epochs = e;
            }
            if let Some(lr) = lr {
                spec.learning_rate = lr;
            }
            if let Some(l2) = l2 {
                spec.l2 = l2;
            }
            let clf = train_classifier(&data, &spec)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            clf.save(&out.join("classifier.json"))?;
        }
        Command::Eval { clf, test, out } => {
            let path = if clf.is_dir() { clf.join("classifier.json") } else { clf };
            let clf = Classifier::load(&path)?;
            let data = read_jsonl(&test)?;
            let result = clf.evaluate(&data, data.label_set(), exec)?;
            ensure_parent(&out)?;
            fs::write(&out, serde_json::to_string_pretty(&result)? + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
            println!("macro-F1 {:.4}", result.macro_f1);
        }
        Command::Bench {
            experiment,
            config,
            model,
            seed,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => BenchConfig::from_text(
                    &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => BenchConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let start = Instant::now();
            let wb = match &model {
                None => Workbench::prepare(cfg, exec)?,
                Some(dir) => {
                    let corpus = bench::build_corpus(&cfg)?;
                    let (train, test) = stratified_split(&corpus, &SplitSpec::new(cfg.train_fraction, cfg.seed)?)?;
                    Workbench::from_parts(cfg, train, test, load_lm(dir)?, exec)?
                }
            };
            let report: ExperimentReport = match experiment {
                Experiment::Starvation => bench::run_starvation(&wb)?,
                Experiment::Ratio => bench::run_ratio(&wb)?,
                Experiment::Agnostic => bench::run_agnostic(&wb)?,
            };
            bench::write_report(&report, &out)?;
            print!("{}", bench::render_markdown(&report));
            log::info!("{} finished in {:.1}s", report.kind, start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
