//! Lexicon-conditioned text generation for imbalanced text classification.
//!
//! The pipeline mines per-class TF-IDF lexicons from a (possibly starved)
//! training split, steers a small decoder-only language model toward a
//! class by nudging its final activation along the gradient of a
//! bag-of-words loss plus a KL drift penalty, and measures how much the
//! generated samples help downstream classifiers.
//!
//! Modules, bottom-up:
//! - [`corpus`]: ingestion, cleaning, stratified split and down-sampling
//! - [`lexicon`]: class TF-IDF scoring and top-k lexicons
//! - [`lm`]: word tokenizer, cached transformer decoder, trainer, persistence
//! - [`steer`]: the activation perturbation and conditional decoding
//! - [`augment`]: boost planning, batch generation, de-duplicated merge
//! - [`classify`]: linear and neural bag-of-words classifiers, macro-F1
//! - [`bench`]: synthetic corpora, the three experiment designs, reports

pub mod augment;
pub mod bench;
pub mod classify;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod lexicon;
pub mod lm;
pub mod rng;
pub mod steer;

pub use error::{Error, Result};
pub use exec::Execution;
