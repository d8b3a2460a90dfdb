use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place};
use crate::error::Result;
use crate::rng;

/// One named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements.
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerSlots {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wqkv: usize,
    pub bqkv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where every tensor lives in the flat buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerSlots>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f, v, c) = (cfg.model_dim, cfg.ffn_dim, cfg.vocab_size, cfg.context_length);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let info = TensorInfo { name, shape, offset };
            offset += info.len();
            tensors.push(info);
            offset - tensors.last().unwrap().len()
        };
        let tok_emb = push("tok_emb".into(), vec![v, d]);
        let pos_emb = push("pos_emb".into(), vec![c, d]);
        let layers = (0..cfg.layers)
            .map(|l| LayerSlots {
                ln1_g: push(format!("h{l}.ln1.g"), vec![d]),
                ln1_b: push(format!("h{l}.ln1.b"), vec![d]),
                wqkv: push(format!("h{l}.attn.wqkv"), vec![d, 3 * d]),
                bqkv: push(format!("h{l}.attn.bqkv"), vec![3 * d]),
                wo: push(format!("h{l}.attn.wo"), vec![d, d]),
                bo: push(format!("h{l}.attn.bo"), vec![d]),
                ln2_g: push(format!("h{l}.ln2.g"), vec![d]),
                ln2_b: push(format!("h{l}.ln2.b"), vec![d]),
                w1: push(format!("h{l}.mlp.w1"), vec![d, f]),
                b1: push(format!("h{l}.mlp.b1"), vec![f]),
                w2: push(format!("h{l}.mlp.w2"), vec![f, d]),
                b2: push(format!("h{l}.mlp.b2"), vec![d]),
            })
            .collect();
        let lnf_g = push("lnf.g".into(), vec![d]);
        let lnf_b = push("lnf.b".into(), vec![d]);
        Self {
            tensors,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            total: offset,
        }
    }
}

/// A decoder-only transformer (pre-norm, GELU MLP, tied embeddings).
///
/// The LM head is the token embedding matrix: `logits = E · h` where `h` is
/// the final layer-normed activation. Weights are immutable once built, so a
/// `Model` can be shared across threads by reference.
#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<f32>,
    head_f64: Vec<f64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Model {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut params = vec![0.0f32; layout.total];
        let mut r = rng::substream(config.seed, &[rng::str_key("init")]);
        let base = Normal::new(0.0f32, 0.02).expect("valid std");
        let proj = Normal::new(0.0f32, 0.02 / (2.0 * config.layers as f32).sqrt()).expect("valid std");
        for t in &layout.tensors {
            let slot = &mut params[t.range()];
            if t.name.ends_with(".g") {
                slot.fill(1.0);
            } else if t.shape.len() == 1 {
                // biases and layer-norm shifts start at zero
            } else if t.name.ends_with("attn.wo") || t.name.ends_with("mlp.w2") {
                slot.iter_mut().for_each(|p| *p = proj.sample(&mut r));
            } else {
                slot.iter_mut().for_each(|p| *p = base.sample(&mut r));
            }
        }
        Ok(Self::from_parts(config.clone(), params))
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<f32>) -> Self {
        let layout = Layout::new(&config);
        assert_eq!(params.len(), layout.total, "parameter buffer does not match layout");
        let emb = &params[layout.tok_emb..layout.tok_emb + config.vocab_size * config.model_dim];
        let head_f64 = emb.iter().map(|&x| f64::from(x)).collect();
        Self {
            config,
            layout,
            params,
            head_f64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.config.model_dim
    }

    pub(crate) fn p(&self, offset: usize, len: usize) -> &[f32] {
        &self.params[offset..offset + len]
    }

    /// Token embedding row, also the LM head row for that token.
    pub fn embedding(&self, token: u32) -> &[f64] {
        let d = self.config.model_dim;
        &self.head_f64[token as usize * d..(token as usize + 1) * d]
    }

    /// LM head: `z[v] = E[v] · h`, in f64.
    pub fn head_logits(&self, h: &[f64]) -> Vec<f64> {
        self.head_f64
            .chunks_exact(self.config.model_dim)
            .map(|row| dot(row, h))
            .collect()
    }

    /// Pull a logit-space gradient back to activation space: `g = E^T dz`.
    pub fn head_backward(&self, dz: &[f64]) -> Vec<f64> {
        let d = self.config.model_dim;
        let mut g = vec![0.0; d];
        for (row, &dzv) in self.head_f64.chunks_exact(d).zip(dz) {
            if dzv != 0.0 {
                for (gi, &e) in g.iter_mut().zip(row) {
                    *gi += dzv * e;
                }
            }
        }
        g
    }

    /// Logits for every position of `ids` from one uncached pass.
    pub fn forward_logits(&self, ids: &[u32]) -> Vec<Vec<f32>> {
        let acts = forward(self, ids);
        acts.logits
            .chunks_exact(self.config.vocab_size)
            .map(<[f32]>::to_vec)
            .collect()
    }
}

pub(crate) struct LayerActs {
    x_in: Vec<f32>,
    ln1_xhat: Vec<f32>,
    ln1_rstd: Vec<f32>,
    a: Vec<f32>,
    qkv: Vec<f32>,
    probs: Vec<f32>, // [heads, T, T], causal (upper part zero)
    o: Vec<f32>,
    x_mid: Vec<f32>,
    ln2_xhat: Vec<f32>,
    ln2_rstd: Vec<f32>,
    m: Vec<f32>,
    f_pre: Vec<f32>,
    f_act: Vec<f32>,
}

pub(crate) struct Activations {
    t: usize,
    layers: Vec<LayerActs>,
    x_final: Vec<f32>,
    lnf_xhat: Vec<f32>,
    lnf_rstd: Vec<f32>,
    h: Vec<f32>,
    pub(crate) logits: Vec<f32>,
}

/// Full causal forward pass over `ids`, keeping what backprop needs.
pub(crate) fn forward(model: &Model, ids: &[u32]) -> Activations {
    let cfg = &model.config;
    let (t_len, d, f, v) = (ids.len(), cfg.model_dim, cfg.ffn_dim, cfg.vocab_size);
    let (nh, hd) = (cfg.heads, cfg.head_dim());
    assert!(t_len <= cfg.context_length, "sequence longer than context");
    let lay = &model.layout;
    let scale = 1.0 / (hd as f32).sqrt();

    let mut x = vec![0.0f32; t_len * d];
    for (t, &id) in ids.iter().enumerate() {
        let e = model.p(lay.tok_emb + id as usize * d, d);
        let p = model.p(lay.pos_emb + t * d, d);
        for i in 0..d {
            x[t * d + i] = e[i] + p[i];
        }
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for s in &lay.layers {
        let x_in = x.clone();
        let mut ln1_xhat = vec![0.0; t_len * d];
        let mut ln1_rstd = vec![0.0; t_len];
        let mut a = vec![0.0; t_len * d];
        layer_norm(&x_in, model.p(s.ln1_g, d), model.p(s.ln1_b, d), d, &mut a, &mut ln1_xhat, &mut ln1_rstd);

        let mut qkv = vec![0.0; t_len * 3 * d];
        linear(&a, model.p(s.wqkv, d * 3 * d), model.p(s.bqkv, 3 * d), t_len, d, 3 * d, &mut qkv);

        let mut probs = vec![0.0f32; nh * t_len * t_len];
        let mut o = vec![0.0f32; t_len * d];
        for h in 0..nh {
            for t in 0..t_len {
                let q = &qkv[t * 3 * d + h * hd..t * 3 * d + (h + 1) * hd];
                let row = &mut probs[(h * t_len + t) * t_len..(h * t_len + t) * t_len + t + 1];
                for (u, s) in row.iter_mut().enumerate() {
                    let k = &qkv[u * 3 * d + d + h * hd..u * 3 * d + d + (h + 1) * hd];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                softmax_in_place(row);
                let out = &mut o[t * d + h * hd..t * d + (h + 1) * hd];
                for (u, &p) in row.iter().enumerate() {
                    let vv = &qkv[u * 3 * d + 2 * d + h * hd..u * 3 * d + 2 * d + (h + 1) * hd];
                    for (oi, &vi) in out.iter_mut().zip(vv) {
                        *oi += p * vi;
                    }
                }
            }
        }

        let mut attn = vec![0.0; t_len * d];
        linear(&o, model.p(s.wo, d * d), model.p(s.bo, d), t_len, d, d, &mut attn);
        let x_mid: Vec<f32> = x_in.iter().zip(&attn).map(|(a, b)| a + b).collect();

        let mut ln2_xhat = vec![0.0; t_len * d];
        let mut ln2_rstd = vec![0.0; t_len];
        let mut m = vec![0.0; t_len * d];
        layer_norm(&x_mid, model.p(s.ln2_g, d), model.p(s.ln2_b, d), d, &mut m, &mut ln2_xhat, &mut ln2_rstd);
        let mut f_pre = vec![0.0; t_len * f];
        linear(&m, model.p(s.w1, d * f), model.p(s.b1, f), t_len, d, f, &mut f_pre);
        let f_act: Vec<f32> = f_pre.iter().map(|&z| gelu(z)).collect();
        let mut mlp = vec![0.0; t_len * d];
        linear(&f_act, model.p(s.w2, f * d), model.p(s.b2, d), t_len, f, d, &mut mlp);
        x = x_mid.iter().zip(&mlp).map(|(a, b)| a + b).collect();

        layers.push(LayerActs {
            x_in,
            ln1_xhat,
            ln1_rstd,
            a,
            qkv,
            probs,
            o,
            x_mid,
            ln2_xhat,
            ln2_rstd,
            m,
            f_pre,
            f_act,
        });
    }

    let mut lnf_xhat = vec![0.0; t_len * d];
    let mut lnf_rstd = vec![0.0; t_len];
    let mut h = vec![0.0; t_len * d];
    layer_norm(&x, model.p(lay.lnf_g, d), model.p(lay.lnf_b, d), d, &mut h, &mut lnf_xhat, &mut lnf_rstd);

    let emb = model.p(lay.tok_emb, v * d);
    let mut logits = vec![0.0f32; t_len * v];
    for t in 0..t_len {
        let ht = &h[t * d..(t + 1) * d];
        for (z, row) in logits[t * v..(t + 1) * v].iter_mut().zip(emb.chunks_exact(d)) {
            *z = row.iter().zip(ht).map(|(a, b)| a * b).sum();
        }
    }

    Activations {
        t: t_len,
        layers,
        x_final: x,
        lnf_xhat,
        lnf_rstd,
        h,
        logits,
    }
}

/// Summed next-token cross-entropy of `targets` under the stored logits.
pub(crate) fn cross_entropy(acts: &Activations, targets: &[u32], vocab: usize) -> f64 {
    let mut total = 0.0f64;
    for (t, &y) in targets.iter().enumerate() {
        let z = &acts.logits[t * vocab..(t + 1) * vocab];
        let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = z.iter().map(|&v| f64::from(v - max).exp()).sum::<f64>().ln() + f64::from(max);
        total += lse - f64::from(z[y as usize]);
    }
    total
}

/// Backpropagate `loss_scale * Σ_t CE(t)` into `grads` (same layout as params).
pub(crate) fn backward(model: &Model, ids: &[u32], targets: &[u32], acts: &Activations, loss_scale: f32, grads: &mut [f32]) {
    let cfg = &model.config;
    let (t_len, d, f, v) = (acts.t, cfg.model_dim, cfg.ffn_dim, cfg.vocab_size);
    let (nh, hd) = (cfg.heads, cfg.head_dim());
    let lay = &model.layout;
    let scale = 1.0 / (hd as f32).sqrt();
    let _ = &acts.x_final;

    // logits -> h (tied head)
    let emb = model.p(lay.tok_emb, v * d);
    let mut dh = vec![0.0f32; t_len * d];
    {
        let mut dz = vec![0.0f32; v];
        for t in 0..t_len {
            dz.copy_from_slice(&acts.logits[t * v..(t + 1) * v]);
            softmax_in_place(&mut dz);
            dz[targets[t] as usize] -= 1.0;
            let ht = &acts.h[t * d..(t + 1) * d];
            let dht = &mut dh[t * d..(t + 1) * d];
            for (vi, &g) in dz.iter().enumerate() {
                let g = g * loss_scale;
                let row = &emb[vi * d..(vi + 1) * d];
                let drow = &mut grads[lay.tok_emb + vi * d..lay.tok_emb + (vi + 1) * d];
                for i in 0..d {
                    dht[i] += g * row[i];
                    drow[i] += g * ht[i];
                }
            }
        }
    }

    let mut dx = vec![0.0f32; t_len * d];
    {
        let (dg, db) = split_pair(grads, lay.lnf_g, lay.lnf_b, d);
        layer_norm_backward(&dh, &acts.lnf_xhat, &acts.lnf_rstd, model.p(lay.lnf_g, d), d, &mut dx, dg, db);
    }

    for (s, la) in lay.layers.iter().zip(&acts.layers).rev() {
        // MLP branch
        let mut df_act = vec![0.0f32; t_len * f];
        {
            let (dw, db) = split_pair_sized(grads, s.w2, f * d, s.b2, d);
            linear_backward(&la.f_act, &dx, model.p(s.w2, f * d), t_len, f, d, &mut df_act, dw, db);
        }
        let df_pre: Vec<f32> = df_act.iter().zip(&la.f_pre).map(|(g, &z)| g * gelu_grad(z)).collect();
        let mut dm = vec![0.0f32; t_len * d];
        {
            let (dw, db) = split_pair_sized(grads, s.w1, d * f, s.b1, f);
            linear_backward(&la.m, &df_pre, model.p(s.w1, d * f), t_len, d, f, &mut dm, dw, db);
        }
        let mut dx_mid = dx.clone();
        {
            let (dg, db) = split_pair(grads, s.ln2_g, s.ln2_b, d);
            layer_norm_backward(&dm, &la.ln2_xhat, &la.ln2_rstd, model.p(s.ln2_g, d), d, &mut dx_mid, dg, db);
        }
        let _ = &la.x_mid;

        // attention branch
        let mut d_o = vec![0.0f32; t_len * d];
        {
            let (dw, db) = split_pair_sized(grads, s.wo, d * d, s.bo, d);
            linear_backward(&la.o, &dx_mid, model.p(s.wo, d * d), t_len, d, d, &mut d_o, dw, db);
        }
        let mut dqkv = vec![0.0f32; t_len * 3 * d];
        let mut dp = vec![0.0f32; t_len];
        for h in 0..nh {
            for t in 0..t_len {
                let p = &la.probs[(h * t_len + t) * t_len..(h * t_len + t) * t_len + t + 1];
                let dot = &d_o[t * d + h * hd..t * d + (h + 1) * hd];
                let mut pdp = 0.0f32;
                for u in 0..=t {
                    let vb = u * 3 * d + 2 * d + h * hd;
                    let vv = &la.qkv[vb..vb + hd];
                    dp[u] = dot.iter().zip(vv).map(|(a, b)| a * b).sum();
                    pdp += p[u] * dp[u];
                    let dv = &mut dqkv[vb..vb + hd];
                    for (g, &o) in dv.iter_mut().zip(dot) {
                        *g += p[u] * o;
                    }
                }
                let qb = t * 3 * d + h * hd;
                for u in 0..=t {
                    let ds = p[u] * (dp[u] - pdp) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kb = u * 3 * d + d + h * hd;
                    for i in 0..hd {
                        let k = la.qkv[kb + i];
                        let q = la.qkv[qb + i];
                        dqkv[qb + i] += ds * k;
                        dqkv[kb + i] += ds * q;
                    }
                }
            }
        }
        let mut da = vec![0.0f32; t_len * d];
        {
            let (dw, db) = split_pair_sized(grads, s.wqkv, d * 3 * d, s.bqkv, 3 * d);
            linear_backward(&la.a, &dqkv, model.p(s.wqkv, d * 3 * d), t_len, d, 3 * d, &mut da, dw, db);
        }
        let mut dx_in = dx_mid.clone();
        {
            let (dg, db) = split_pair(grads, s.ln1_g, s.ln1_b, d);
            layer_norm_backward(&da, &la.ln1_xhat, &la.ln1_rstd, model.p(s.ln1_g, d), d, &mut dx_in, dg, db);
        }
        let _ = &la.x_in;
        dx = dx_in;
    }

    for (t, &id) in ids.iter().enumerate() {
        let g = &dx[t * d..(t + 1) * d];
        let te = lay.tok_emb + id as usize * d;
        for i in 0..d {
            grads[te + i] += g[i];
        }
        let pe = lay.pos_emb + t * d;
        for i in 0..d {
            grads[pe + i] += g[i];
        }
    }
}

/// Two disjoint mutable windows of equal length `n` into `buf`.
/// Dot product over eight interleaved partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

fn split_pair(buf: &mut [f32], a: usize, b: usize, n: usize) -> (&mut [f32], &mut [f32]) {
    split_pair_sized(buf, a, n, b, n)
}

fn split_pair_sized(buf: &mut [f32], a: usize, na: usize, b: usize, nb: usize) -> (&mut [f32], &mut [f32]) {
    assert!(a + na <= b, "windows must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + na], &mut hi[..nb])
}
