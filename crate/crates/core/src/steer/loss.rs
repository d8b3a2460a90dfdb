use std::sync::atomic::{AtomicU64, Ordering};

use super::generate::Bag;
use crate::error::{Error, Result};
use crate::lm::{softmax, Model};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

static FLOOR_HITS: AtomicU64 = AtomicU64::new(0);

/// How many times a bag probability has been floored, process-wide.
pub fn floor_hits() -> u64 {
    FLOOR_HITS.load(Ordering::Relaxed)
}

/// `Σ_{w ∈ bag} −ln q(w)`.
pub fn bow_loss(q: &[f64], bag: &Bag) -> Result<f64> {
    let mut total = 0.0;
    for &w in bag.ids() {
        let p = *q.get(w as usize).ok_or(Error::DimensionMismatch {
            expected: w as usize + 1,
            got: q.len(),
        })?;
        if p < PROB_FLOOR {
            FLOOR_HITS.fetch_add(1, Ordering::Relaxed);
            log::warn!("bag token {w} has probability {p:e}; flooring");
        }
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(total)
}

/// `KL(p ‖ q) = Σ_v p(v) ln(p(v)/q(v))`; zero-mass terms of `p` vanish.
pub fn kl_loss(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv.max(PROB_FLOOR)).ln())
        .sum();
    // rounding can leave a tiny negative total when p ≈ q
    Ok(kl.max(0.0))
}

/// The KL penalty summed over several positions. Steering perturbs only the
/// newest position, so callers normally pass one pair; unperturbed
/// positions have `p = q` and contribute zero.
pub fn kl_loss_positions(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    p.iter().zip(q).map(|(a, b)| kl_loss(a, b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub bow: f64,
    pub kl: f64,
    /// `α · bow + β · kl`
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerUpdate {
    /// `∂L/∂Δh`, in activation space.
    pub gradient: Vec<f64>,
    /// `−s · g`, or `−s · g / ‖g‖` when normalizing.
    pub delta: Vec<f64>,
}

/// The steering objective at one decoding position.
pub struct SteerProblem<'a> {
    model: &'a Model,
    hidden: &'a [f64],
    /// Unconditional distribution `softmax(E · h)`.
    prior: Vec<f64>,
    bag: &'a Bag,
    alpha: f64,
    beta: f64,
}

impl<'a> SteerProblem<'a> {
    pub fn new(model: &'a Model, hidden: &'a [f64], bag: &'a Bag, alpha: f64, beta: f64) -> Result<Self> {
        Self::with_prior(model, hidden, None, bag, alpha, beta)
    }

    /// Like [`SteerProblem::new`], reusing already computed logits `E · h`.
    pub(crate) fn with_prior(
        model: &'a Model,
        hidden: &'a [f64],
        logits: Option<&[f64]>,
        bag: &'a Bag,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        if hidden.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: hidden.len(),
            });
        }
        if hidden.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("activation".into()));
        }
        if bag.ids().iter().any(|&w| w as usize >= model.vocab_size()) {
            return Err(Error::InvalidArgument("bag id outside vocabulary".into()));
        }
        let prior = match logits {
            Some(z) => softmax(z),
            None => softmax(&model.head_logits(hidden)),
        };
        Ok(Self {
            model,
            hidden,
            prior,
            bag,
            alpha,
            beta,
        })
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// Steered logits `E · (h + Δh)`.
    pub fn logits(&self, delta: &[f64]) -> Vec<f64> {
        let shifted: Vec<f64> = self.hidden.iter().zip(delta).map(|(h, d)| h + d).collect();
        self.model.head_logits(&shifted)
    }

    pub fn losses_at(&self, q: &[f64]) -> Result<LossBreakdown> {
        let bow = bow_loss(q, self.bag)?;
        let kl = kl_loss(&self.prior, q)?;
        let combined = self.alpha * bow + self.beta * kl;
        if !combined.is_finite() {
            return Err(Error::NonFinite("steering loss".into()));
        }
        Ok(LossBreakdown { bow, kl, combined })
    }

    pub fn losses(&self, delta: &[f64]) -> Result<LossBreakdown> {
        self.losses_at(&softmax(&self.logits(delta)))
    }

    /// Logit-space gradient: `α(|bag|·q − 1_bag) + β(q − p)`.
    pub fn logit_gradient(&self, q: &[f64]) -> Vec<f64> {
        let n = self.bag.len() as f64;
        let mut dz: Vec<f64> = q
            .iter()
            .zip(&self.prior)
            .map(|(&qv, &pv)| self.alpha * n * qv + self.beta * (qv - pv))
            .collect();
        for &w in self.bag.ids() {
            dz[w as usize] -= self.alpha;
        }
        dz
    }

    /// `∂L/∂Δh = Eᵀ · ∂L/∂z` at the given steered distribution.
    pub fn gradient_at(&self, q: &[f64]) -> Vec<f64> {
        if self.alpha == 0.0 && self.beta == 0.0 {
            return vec![0.0; self.hidden.len()];
        }
        self.model.head_backward(&self.logit_gradient(q))
    }

    pub fn gradient(&self, delta: &[f64]) -> Vec<f64> {
        self.gradient_at(&softmax(&self.logits(delta)))
    }
}

/// Gradient of the combined loss at `Δh` and the step it implies.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradient(
    model: &Model,
    hidden: &[f64],
    delta: &[f64],
    bag: &Bag,
    alpha: f64,
    beta: f64,
    step_size: f64,
    normalize: bool,
) -> Result<SteerUpdate> {
    let problem = SteerProblem::new(model, hidden, bag, alpha, beta)?;
    let gradient = problem.gradient(delta);
    let delta = step(&gradient, step_size, normalize)?;
    Ok(SteerUpdate { gradient, delta })
}

pub(crate) fn step(gradient: &[f64], step_size: f64, normalize: bool) -> Result<Vec<f64>> {
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("steering gradient".into()));
    }
    let scale = if normalize {
        let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > 0.0 {
            step_size / norm
        } else {
            0.0
        }
    } else {
        step_size
    };
    Ok(gradient.iter().map(|g| -scale * g).collect())
}
