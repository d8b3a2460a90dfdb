use super::model::Model;
use super::ops::{gelu, layer_norm, linear, softmax, softmax_in_place};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Incremental decoding state over shared model weights.
///
/// Holds the token prefix, one key/value cache per layer covering every
/// prefix position, the final-layer activation `h_t` at the newest
/// position, the logits `E · h_t`, and the session's random stream.
#[derive(Clone)]
pub struct DecoderSession<'m> {
    model: &'m Model,
    prefix: Vec<u32>,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    rng: Rng,
}

impl<'m> DecoderSession<'m> {
    pub fn new(model: &'m Model, seed: u64) -> Self {
        let cfg = model.config();
        let cap = cfg.context_length * cfg.model_dim;
        Self {
            model,
            prefix: Vec::new(),
            keys: vec![Vec::with_capacity(cap); cfg.layers],
            values: vec![Vec::with_capacity(cap); cfg.layers],
            hidden: Vec::new(),
            logits: Vec::new(),
            rng: rng::rng(seed),
        }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn prefix(&self) -> &[u32] {
        &self.prefix
    }

    /// Number of positions held in every layer's cache.
    pub fn cache_len(&self) -> usize {
        self.keys.first().map_or(0, |k| k.len() / self.model.dim())
    }

    /// Final-layer activation at the newest position. Empty before the first step.
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// The unconditional next-token distribution `softmax(z_t)`.
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Append `token`, extend every layer's cache by one position and
    /// refresh `h_t` and the logits.
    pub fn step(&mut self, token: u32) -> Result<()> {
        let model = self.model;
        let cfg = model.config();
        let (d, f, nh, hd) = (cfg.model_dim, cfg.ffn_dim, cfg.heads, cfg.head_dim());
        let t = self.prefix.len();
        if t >= cfg.context_length {
            return Err(Error::ContextOverflow {
                len: t,
                capacity: cfg.context_length,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "token id {token} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let lay = &model.layout;
        let scale = 1.0 / (hd as f32).sqrt();

        let e = model.p(lay.tok_emb + token as usize * d, d);
        let pos = model.p(lay.pos_emb + t * d, d);
        let mut x: Vec<f32> = e.iter().zip(pos).map(|(a, b)| a + b).collect();

        let mut xhat = vec![0.0f32; d];
        let mut rstd = [0.0f32];
        let mut a = vec![0.0f32; d];
        let mut qkv = vec![0.0f32; 3 * d];
        let mut o = vec![0.0f32; d];
        let mut proj = vec![0.0f32; d];
        let mut hidden = vec![0.0f32; f];
        let mut scores = vec![0.0f32; t + 1];
        for (l, s) in lay.layers.iter().enumerate() {
            layer_norm(&x, model.p(s.ln1_g, d), model.p(s.ln1_b, d), d, &mut a, &mut xhat, &mut rstd);
            linear(&a, model.p(s.wqkv, d * 3 * d), model.p(s.bqkv, 3 * d), 1, d, 3 * d, &mut qkv);
            self.keys[l].extend_from_slice(&qkv[d..2 * d]);
            self.values[l].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&self.keys[l], &self.values[l]);

            o.fill(0.0);
            for h in 0..nh {
                let q = &qkv[h * hd..(h + 1) * hd];
                for (u, sc) in scores.iter_mut().enumerate() {
                    let k = &keys[u * d + h * hd..u * d + (h + 1) * hd];
                    *sc = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut o[h * hd..(h + 1) * hd];
                for (u, &p) in scores.iter().enumerate() {
                    let v = &values[u * d + h * hd..u * d + (h + 1) * hd];
                    for (oi, &vi) in out.iter_mut().zip(v) {
                        *oi += p * vi;
                    }
                }
            }
            linear(&o, model.p(s.wo, d * d), model.p(s.bo, d), 1, d, d, &mut proj);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += pi;
            }

            layer_norm(&x, model.p(s.ln2_g, d), model.p(s.ln2_b, d), d, &mut a, &mut xhat, &mut rstd);
            linear(&a, model.p(s.w1, d * f), model.p(s.b1, f), 1, d, f, &mut hidden);
            hidden.iter_mut().for_each(|z| *z = gelu(*z));
            linear(&hidden, model.p(s.w2, f * d), model.p(s.b2, d), 1, f, d, &mut proj);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += pi;
            }
        }
        layer_norm(&x, model.p(lay.lnf_g, d), model.p(lay.lnf_b, d), d, &mut a, &mut xhat, &mut rstd);

        self.hidden = a.iter().map(|&v| f64::from(v)).collect();
        self.logits = model.head_logits(&self.hidden);
        self.prefix.push(token);
        Ok(())
    }
}
