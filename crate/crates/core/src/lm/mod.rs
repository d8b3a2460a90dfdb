//! A small decoder-only language model.
//!
//! [`Model`] holds immutable weights; [`DecoderSession`] decodes one token at
//! a time against a per-layer key/value cache and exposes the final hidden
//! activation and its logits so callers can perturb them before sampling.

mod config;
mod io;
mod model;
pub(crate) mod ops;
mod sample;
mod session;
mod tokenizer;
mod train;

pub use config::{parse_key_values, ModelConfig};
pub use io::{load_model, save_model, LanguageModel};
pub use model::{Layout, Model, TensorInfo};
pub use ops::softmax;
pub use sample::{sample_next, validate_distribution, DecodeStrategy};
pub use session::DecoderSession;
pub use tokenizer::{Tokenizer, BOS, BOS_ID, EOS, EOS_ID, UNK, UNK_ID};
pub use train::{encode_corpus, evaluate_loss, train_lm, TrainOptions, TrainReport};
