use rand::seq::SliceRandom;

use super::config::ModelConfig;
use super::model::{backward, cross_entropy, forward, Model};
use super::tokenizer::{Tokenizer, BOS_ID, EOS_ID};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::rng;

/// Sequences per gradient chunk. Chunking is fixed so the reduction order,
/// and therefore the trained weights, never depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f32,
    pub exec: Execution,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 3e-3,
            batch_size: 16,
            grad_clip: 1.0,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-token loss of the initial weights over the whole corpus.
    pub initial_loss: f64,
    /// Same measurement after the last epoch.
    pub final_loss: f64,
    /// Mean training-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// `<bos> tokens <eos>` per example, truncated to fit the context window.
pub fn encode_corpus(corpus: &Dataset, tokenizer: &Tokenizer, context_length: usize) -> Vec<Vec<u32>> {
    corpus
        .examples()
        .iter()
        .map(|e| {
            let mut seq = Vec::with_capacity(e.tokens.len() + 2);
            seq.push(BOS_ID);
            seq.extend(tokenizer.encode(&e.tokens));
            seq.push(EOS_ID);
            seq.truncate(context_length + 1);
            seq
        })
        .collect()
}

fn split(seq: &[u32]) -> (&[u32], &[u32]) {
    (&seq[..seq.len() - 1], &seq[1..])
}

/// Mean next-token cross-entropy per predicted token.
pub fn evaluate_loss(model: &Model, seqs: &[Vec<u32>], exec: Execution) -> f64 {
    let per_seq = exec::map(exec, seqs, |seq| {
        let (ids, targets) = split(seq);
        cross_entropy(&forward(model, ids), targets, model.vocab_size())
    });
    let tokens: usize = seqs.iter().map(|s| s.len() - 1).sum();
    per_seq.iter().sum::<f64>() / tokens.max(1) as f64
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f32) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Teacher-forced next-token training with Adam.
///
/// Deterministic given `config.seed`: initialization and per-epoch shuffles
/// come from keyed substreams, and batch gradients are reduced in a fixed
/// chunk order.
pub fn train_lm(
    corpus: &Dataset,
    tokenizer: &Tokenizer,
    config: &ModelConfig,
    opts: &TrainOptions,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    if config.vocab_size != tokenizer.len() {
        return Err(Error::Config(format!(
            "vocab_size {} does not match tokenizer size {}",
            config.vocab_size,
            tokenizer.len()
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let seqs = encode_corpus(corpus, tokenizer, config.context_length);
    if seqs.is_empty() {
        return Err(Error::Empty("language-model corpus".into()));
    }

    let mut model = Model::init(config)?;
    let initial_loss = evaluate_loss(&model, &seqs, opts.exec);
    let mut adam = Adam::new(model.params.len());
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let mut r = rng::substream(config.seed, &[rng::str_key("epoch"), epoch as u64]);
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0f64;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let tokens: usize = batch.iter().map(|&i| seqs[i].len() - 1).sum();
            let scale = 1.0 / tokens as f32;
            let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
            let model_ref = &model;
            let parts = exec::map(opts.exec, &chunks, |chunk| {
                let mut grads = vec![0.0f32; model_ref.params.len()];
                let mut loss = 0.0f64;
                for &i in *chunk {
                    let (ids, targets) = split(&seqs[i]);
                    let acts = forward(model_ref, ids);
                    loss += cross_entropy(&acts, targets, model_ref.vocab_size());
                    backward(model_ref, ids, targets, &acts, scale, &mut grads);
                }
                (loss, grads)
            });
            let mut parts = parts.into_iter();
            let (mut loss, mut grads) = parts.next().expect("non-empty batch");
            for (l, g) in parts {
                loss += l;
                for (a, b) in grads.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let batch_loss = loss / tokens as f64;
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            if opts.grad_clip > 0.0 {
                let norm = grads.iter().map(|g| g * g).sum::<f32>().sqrt();
                if norm > opts.grad_clip {
                    let s = opts.grad_clip / norm;
                    grads.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam.update(&mut model.params, &grads, opts.learning_rate);
            epoch_loss += loss;
            epoch_tokens += tokens;
        }
        let mean = epoch_loss / epoch_tokens as f64;
        log::info!("lm epoch {}: loss {mean:.4}", epoch + 1);
        epoch_losses.push(mean);
        model = Model::from_parts(model.config.clone(), model.params);
    }

    let final_loss = if opts.epochs == 0 {
        initial_loss
    } else {
        evaluate_loss(&model, &seqs, opts.exec)
    };
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: opts.epochs,
            loss: final_loss,
        });
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}
