//! Trains a tiny LM on a synthetic corpus and prints plain and steered
//! samples for every class.
//!
//! `cargo run --release -p dager-core --example steer_demo`

use dager_core::augment::{Augmenter, GenerationConfig};
use dager_core::bench::{synth_corpus, SynthSpec};
use dager_core::corpus::{stratified_split, SplitSpec};
use dager_core::lexicon::{extract_lexicons, score_tfidf, DocGranularity};
use dager_core::lm::{train_lm, DecodeStrategy, LanguageModel, ModelConfig, Tokenizer, TrainOptions};
use dager_core::steer::{LengthRange, SteerConfig};
use dager_core::Execution;

fn main() -> dager_core::Result<()> {
    let mut spec = SynthSpec::abuse_mix(2000, 10, 0);
    spec.background_size = 300;
    spec.min_len = 4;
    spec.max_len = 10;
    let corpus = synth_corpus(&spec)?;
    let (train, _) = stratified_split(&corpus, &SplitSpec::new(0.8, 0)?)?;

    let tokenizer = Tokenizer::build(&train, 4000)?;
    let config = ModelConfig {
        vocab_size: tokenizer.len(),
        context_length: 32,
        ..ModelConfig::default()
    };
    let opts = TrainOptions {
        epochs: 3,
        ..TrainOptions::default()
    };
    let (model, report) = train_lm(&train, &tokenizer, &config, &opts)?;
    println!("LM loss {:.3} -> {:.3}", report.initial_loss, report.final_loss);
    let lm = LanguageModel { tokenizer, model };

    let lexicons = extract_lexicons(&score_tfidf(&train, DocGranularity::Class)?, 20)?;
    let generation = GenerationConfig {
        steer: SteerConfig {
            step_size: 0.2,
            decode: DecodeStrategy::Sample,
            ..SteerConfig::default()
        },
        lengths: LengthRange { min: 1, max: 10 },
        ..GenerationConfig::default()
    };
    let plain = Augmenter::new(&lm, &lexicons, GenerationConfig { steering: false, ..generation.clone() }, Execution::Parallel)?;
    let steered = Augmenter::new(&lm, &lexicons, generation, Execution::Parallel)?;
    for lex in &lexicons {
        println!("\n[{}] lexicon: {}", lex.label, lex.top(8).collect::<Vec<_>>().join(" "));
        for i in 0..3 {
            println!("  plain:   {}", plain.sample(&lex.label, i, 0, 1)?.text);
            println!("  steered: {}", steered.sample(&lex.label, i, 0, 1)?.text);
        }
    }
    Ok(())
}
