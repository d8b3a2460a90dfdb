//! Class-conditional decoding by activation steering.
//!
//! At each decoding step the final-layer activation `h_t` is shifted by a
//! perturbation `Δh` before the LM head. `Δh` starts at zero and takes `m`
//! gradient steps on
//!
//! ```text
//! L(Δh) = α · L_bow + β · L_kl
//! L_bow = Σ_{w ∈ bag} −ln q(w)
//! L_kl  = Σ_v p(v) · ln(p(v) / q(v))
//! ```
//!
//! where `p = softmax(E·h_t)` is the unconditional next-token distribution
//! and `q = softmax(E·(h_t + Δh))` the steered one. The bag term pulls mass
//! toward the class lexicon; the KL term holds `q` near `p` so the text
//! stays fluent. Tokens are then sampled from `q`. The key/value cache is
//! never perturbed: the emitted token alone conditions later steps.

mod generate;
mod loss;

pub use generate::{
    conditional_step, generate_conditional, generate_unconditional, perturb, Bag, LengthRange,
    Perturbation,
};
pub use loss::{
    bow_loss, floor_hits, kl_loss, kl_loss_positions, loss_gradient, LossBreakdown, SteerProblem,
    SteerUpdate, PROB_FLOOR,
};

use crate::error::{Error, Result};
use crate::lm::DecodeStrategy;

#[derive(Debug, Clone, PartialEq)]
pub struct SteerConfig {
    /// Weight of the bag-of-words loss.
    pub alpha: f64,
    /// Weight of the KL drift penalty.
    pub beta: f64,
    pub step_size: f64,
    pub iterations: usize,
    /// Step along `g / ‖g‖` instead of `g`.
    pub grad_normalize: bool,
    pub decode: DecodeStrategy,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.01,
            step_size: 0.03,
            iterations: 3,
            grad_normalize: false,
            decode: DecodeStrategy::TopK(10),
        }
    }
}

impl SteerConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.alpha) || !finite_nonneg(self.beta) {
            return Err(Error::InvalidArgument("alpha and beta must be finite and >= 0".into()));
        }
        if !finite_nonneg(self.step_size) {
            return Err(Error::InvalidArgument("step size must be finite and >= 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("steering needs at least one iteration".into()));
        }
        Ok(())
    }

    /// True when the configuration can move `Δh` at all.
    pub fn is_active(&self) -> bool {
        self.step_size > 0.0 && self.alpha + self.beta > 0.0
    }
}
