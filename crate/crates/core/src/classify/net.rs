use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::lm::softmax;

/// Flat-parameter layouts for both classifier families.
#[derive(Debug, Clone, Copy)]
pub(super) enum Net {
    /// `W[V, C]`, `b[C]`.
    Linear { vocab: usize, classes: usize },
    /// `E[V, e]`, `W1[e, h]`, `b1[h]`, `W2[h, C]`, `b2[C]`.
    Neural {
        vocab: usize,
        embed: usize,
        hidden: usize,
        classes: usize,
    },
}

impl Net {
    pub fn linear(vocab: usize, classes: usize) -> Self {
        Net::Linear { vocab, classes }
    }

    pub fn neural(vocab: usize, embed: usize, hidden: usize, classes: usize) -> Self {
        Net::Neural {
            vocab,
            embed,
            hidden,
            classes,
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            Net::Linear { vocab, classes } => vocab * classes + classes,
            Net::Neural {
                vocab,
                embed,
                hidden,
                classes,
            } => vocab * embed + embed * hidden + hidden + hidden * classes + classes,
        }
    }

    /// True for parameters that take weight decay.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.len()];
        match *self {
            Net::Linear { vocab, classes } => mask[vocab * classes..].fill(false),
            Net::Neural {
                vocab,
                embed,
                hidden,
                classes,
            } => {
                let b1 = vocab * embed + embed * hidden;
                mask[b1..b1 + hidden].fill(false);
                mask[b1 + hidden + hidden * classes..].fill(false);
            }
        }
        mask
    }

    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        if let Net::Neural {
            vocab,
            embed,
            hidden,
            classes,
        } = *self
        {
            let mut fill = |range: std::ops::Range<usize>, std: f64| {
                let n = Normal::new(0.0, std).expect("positive std");
                for x in &mut p[range] {
                    *x = n.sample(rng);
                }
            };
            let e_end = vocab * embed;
            let w1_end = e_end + embed * hidden;
            let w2 = w1_end + hidden;
            fill(0..e_end, 0.1);
            fill(e_end..w1_end, (2.0 / embed as f64).sqrt());
            fill(w2..w2 + hidden * classes, (1.0 / hidden as f64).sqrt());
        }
        p
    }

    pub fn logits(&self, p: &[f64], ids: &[u32]) -> Vec<f64> {
        match *self {
            Net::Linear { vocab, classes } => {
                let mut z = p[vocab * classes..].to_vec();
                for &t in ids {
                    let row = &p[t as usize * classes..(t as usize + 1) * classes];
                    z.iter_mut().zip(row).for_each(|(a, w)| *a += w);
                }
                z
            }
            Net::Neural { .. } => self.neural_forward(p, ids).2,
        }
    }

    /// Mean embedding, hidden activations, logits.
    fn neural_forward(&self, p: &[f64], ids: &[u32]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let Net::Neural {
            vocab,
            embed,
            hidden,
            classes,
        } = *self
        else {
            unreachable!()
        };
        let inv = 1.0 / ids.len() as f64;
        let mut x = vec![0.0; embed];
        for &t in ids {
            let row = &p[t as usize * embed..(t as usize + 1) * embed];
            x.iter_mut().zip(row).for_each(|(a, e)| *a += e * inv);
        }
        let w1 = vocab * embed;
        let b1 = w1 + embed * hidden;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * classes;
        let mut h = p[b1..b1 + hidden].to_vec();
        for (i, &xi) in x.iter().enumerate() {
            let row = &p[w1 + i * hidden..w1 + (i + 1) * hidden];
            h.iter_mut().zip(row).for_each(|(a, w)| *a += xi * w);
        }
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut z = p[b2..b2 + classes].to_vec();
        for (j, &hj) in h.iter().enumerate() {
            let row = &p[w2 + j * classes..w2 + (j + 1) * classes];
            z.iter_mut().zip(row).for_each(|(a, w)| *a += hj * w);
        }
        (x, h, z)
    }

    /// Cross-entropy of `target`; adds `scale · ∂loss/∂p` into `grad`.
    pub fn loss_grad(&self, p: &[f64], ids: &[u32], target: usize, scale: f64, grad: &mut [f64]) -> f64 {
        match *self {
            Net::Linear { vocab, classes } => {
                let q = softmax(&self.logits(p, ids));
                let loss = -q[target].max(1e-300).ln();
                if scale == 0.0 {
                    return loss;
                }
                let dz: Vec<f64> = (0..classes)
                    .map(|c| scale * (q[c] - if c == target { 1.0 } else { 0.0 }))
                    .collect();
                for &t in ids {
                    let row = &mut grad[t as usize * classes..(t as usize + 1) * classes];
                    row.iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
                }
                grad[vocab * classes..].iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
                loss
            }
            Net::Neural {
                vocab,
                embed,
                hidden,
                classes,
            } => {
                let (x, h, z) = self.neural_forward(p, ids);
                let q = softmax(&z);
                let loss = -q[target].max(1e-300).ln();
                if scale == 0.0 {
                    return loss;
                }
                let w1 = vocab * embed;
                let b1 = w1 + embed * hidden;
                let w2 = b1 + hidden;
                let b2 = w2 + hidden * classes;
                let dz: Vec<f64> = (0..classes)
                    .map(|c| scale * (q[c] - if c == target { 1.0 } else { 0.0 }))
                    .collect();
                let mut dh = vec![0.0; hidden];
                for j in 0..hidden {
                    let row = w2 + j * classes;
                    for c in 0..classes {
                        grad[row + c] += h[j] * dz[c];
                        dh[j] += p[row + c] * dz[c];
                    }
                    if h[j] <= 0.0 {
                        dh[j] = 0.0;
                    }
                }
                grad[b2..b2 + classes].iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
                grad[b1..b1 + hidden].iter_mut().zip(&dh).for_each(|(g, d)| *g += d);
                let mut dx = vec![0.0; embed];
                for i in 0..embed {
                    let row = w1 + i * hidden;
                    for j in 0..hidden {
                        grad[row + j] += x[i] * dh[j];
                        dx[i] += p[row + j] * dh[j];
                    }
                }
                let inv = 1.0 / ids.len() as f64;
                for &t in ids {
                    let row = &mut grad[t as usize * embed..(t as usize + 1) * embed];
                    row.iter_mut().zip(&dx).for_each(|(g, d)| *g += d * inv);
                }
                loss
            }
        }
    }
}

pub(super) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}
