use super::loss::{self, LossBreakdown, SteerProblem};
use super::SteerConfig;
use crate::corpus::MAX_TOKENS;
use crate::error::{Error, Result};
use crate::lexicon::ClassLexicon;
use crate::lm::{sample_next, softmax, DecodeStrategy, DecoderSession, Model, Tokenizer, BOS_ID, EOS_ID, UNK_ID};

/// Target token ids for one class: sorted, unique, inside the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    ids: Vec<u32>,
}

impl Bag {
    pub fn new(mut ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::Empty("bag of words".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&w| w as usize >= vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "bag id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(Self { ids })
    }

    /// Maps the lexicon's tokens (all of them, or the top `limit`) to
    /// vocabulary ids. Tokens the LM does not know are dropped.
    pub fn from_lexicon(lexicon: &ClassLexicon, tokenizer: &Tokenizer, limit: Option<usize>) -> Result<Self> {
        let limit = limit.unwrap_or(usize::MAX);
        let mut ids = Vec::new();
        let mut dropped = 0usize;
        for token in lexicon.top(limit) {
            match tokenizer.id(token) {
                Some(id) if id > UNK_ID => ids.push(id),
                _ => dropped += 1,
            }
        }
        if dropped > 0 {
            log::warn!(
                "class {}: {dropped} lexicon tokens are not in the LM vocabulary",
                lexicon.label
            );
        }
        if ids.is_empty() {
            return Err(Error::Empty(format!("bag for class {} after vocabulary mapping", lexicon.label)));
        }
        Self::new(ids, tokenizer.len())
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// Bounds on the number of content tokens in a generated sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

impl Default for LengthRange {
    fn default() -> Self {
        Self { min: 1, max: MAX_TOKENS }
    }
}

impl LengthRange {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.min == 0 || self.min > self.max || self.max > MAX_TOKENS {
            return Err(Error::InvalidArgument(format!(
                "length range {}..={} must satisfy 1 <= min <= max <= {MAX_TOKENS}",
                self.min, self.max
            )));
        }
        // <bos> plus every content token but the last is fed to the model
        if self.max > model.config().context_length {
            return Err(Error::ContextOverflow {
                len: self.max,
                capacity: model.config().context_length,
            });
        }
        Ok(())
    }
}

/// Result of steering one position.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub delta: Vec<f64>,
    /// Steered next-token distribution `softmax(E · (h + Δh))`.
    pub probs: Vec<f64>,
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
}

/// Runs `m` gradient steps on `Δh` from zero at the session's newest position.
pub fn perturb(session: &DecoderSession<'_>, bag: &Bag, cfg: &SteerConfig) -> Result<Perturbation> {
    let (problem, delta, probs) = descend(session, bag, cfg)?;
    let initial = problem.losses_at(problem.prior())?;
    let last = problem.losses_at(&probs)?;
    Ok(Perturbation {
        delta,
        probs,
        initial,
        last,
    })
}

fn descend<'a>(
    session: &'a DecoderSession<'_>,
    bag: &'a Bag,
    cfg: &SteerConfig,
) -> Result<(SteerProblem<'a>, Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let model = session.model();
    let hidden = session.hidden();
    if hidden.is_empty() {
        return Err(Error::InvalidArgument("session has no position to steer".into()));
    }
    let problem = SteerProblem::with_prior(model, hidden, Some(session.logits()), bag, cfg.alpha, cfg.beta)?;
    let mut delta = vec![0.0; model.dim()];
    let mut q = problem.prior().to_vec();
    if cfg.is_active() {
        for _ in 0..cfg.iterations {
            let g = problem.gradient_at(&q);
            let step = loss::step(&g, cfg.step_size, cfg.grad_normalize)?;
            let dot: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            debug_assert!(dot <= 0.0, "steering step is not a descent direction");
            if step.iter().all(|&s| s == 0.0) {
                break;
            }
            for (d, s) in delta.iter_mut().zip(&step) {
                *d += s;
            }
            q = softmax(&problem.logits(&delta));
        }
    }
    if q.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("steered distribution".into()));
    }
    Ok((problem, delta, q))
}

fn mask_reserved(dist: &mut [f64], allow_eos: bool) -> Result<()> {
    dist[BOS_ID as usize] = 0.0;
    dist[UNK_ID as usize] = 0.0;
    if !allow_eos {
        dist[EOS_ID as usize] = 0.0;
    }
    let total: f64 = dist.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::InvalidDistribution("no mass left after masking reserved tokens".into()));
    }
    for p in dist.iter_mut() {
        *p /= total;
    }
    Ok(())
}

/// Steers the newest position of `session`, samples from the steered
/// distribution and appends the sample. Returns the sampled id.
pub fn conditional_step(session: &mut DecoderSession<'_>, bag: &Bag, cfg: &SteerConfig, allow_eos: bool) -> Result<u32> {
    let mut dist = descend(session, bag, cfg)?.2;
    mask_reserved(&mut dist, allow_eos)?;
    let id = sample_next(&dist, cfg.decode, session.rng_mut())?;
    Ok(id)
}

fn generate_with(
    model: &Model,
    lengths: LengthRange,
    seed: u64,
    mut next: impl FnMut(&mut DecoderSession<'_>, bool) -> Result<u32>,
) -> Result<Vec<u32>> {
    lengths.validate(model)?;
    let mut session = DecoderSession::new(model, seed);
    session.step(BOS_ID)?;
    let mut out = Vec::with_capacity(lengths.max);
    loop {
        let id = next(&mut session, out.len() >= lengths.min)?;
        if id == EOS_ID {
            break;
        }
        out.push(id);
        if out.len() == lengths.max {
            break;
        }
        session.step(id)?;
    }
    Ok(out)
}

/// Samples a class-conditional sequence of content token ids.
pub fn generate_conditional(
    model: &Model,
    bag: &Bag,
    cfg: &SteerConfig,
    lengths: LengthRange,
    seed: u64,
) -> Result<Vec<u32>> {
    cfg.validate()?;
    generate_with(model, lengths, seed, |s, allow_eos| conditional_step(s, bag, cfg, allow_eos))
}

/// Samples from the plain LM with the same masking and stopping rules.
pub fn generate_unconditional(model: &Model, decode: DecodeStrategy, lengths: LengthRange, seed: u64) -> Result<Vec<u32>> {
    generate_with(model, lengths, seed, |s, allow_eos| {
        let mut dist = s.probs();
        mask_reserved(&mut dist, allow_eos)?;
        sample_next(&dist, decode, s.rng_mut())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;
    use crate::rng;
    use rand::Rng;

    fn model(vocab: usize, seed: u64) -> Model {
        Model::init(&ModelConfig {
            vocab_size: vocab,
            model_dim: 16,
            heads: 2,
            ffn_dim: 32,
            layers: 1,
            context_length: 32,
            seed,
        })
        .unwrap()
    }

    fn session<'m>(m: &'m Model, r: &mut impl Rng) -> DecoderSession<'m> {
        let mut s = DecoderSession::new(m, 0);
        s.step(BOS_ID).unwrap();
        for _ in 0..r.gen_range(0..6) {
            s.step(r.gen_range(3..m.vocab_size() as u32)).unwrap();
        }
        s
    }

    #[test]
    fn bag_validation() {
        assert!(Bag::new(vec![], 5).is_err());
        assert!(Bag::new(vec![5], 5).is_err());
        let b = Bag::new(vec![3, 1, 3], 5).unwrap();
        assert_eq!(b.ids(), &[1, 3]);
        assert!(b.contains(3) && !b.contains(2));
    }

    #[test]
    fn zero_step_leaves_distribution_bitwise() {
        let m = model(40, 3);
        let mut r = rng::rng(5);
        let s = session(&m, &mut r);
        let bag = Bag::new(vec![4, 9], 40).unwrap();
        let cfg = SteerConfig {
            step_size: 0.0,
            ..SteerConfig::default()
        };
        let p = perturb(&s, &bag, &cfg).unwrap();
        assert!(p.delta.iter().all(|&d| d == 0.0));
        assert_eq!(p.probs, s.probs());
    }

    #[test]
    fn zero_step_generation_matches_unconditional() {
        let m = model(40, 7);
        let bag = Bag::new(vec![5, 6], 40).unwrap();
        for decode in [DecodeStrategy::TopK(10), DecodeStrategy::Greedy, DecodeStrategy::Nucleus(0.9)] {
            let cfg = SteerConfig {
                step_size: 0.0,
                decode,
                ..SteerConfig::default()
            };
            for seed in 0..20 {
                let a = generate_conditional(&m, &bag, &cfg, LengthRange::default(), seed).unwrap();
                let b = generate_unconditional(&m, decode, LengthRange::default(), seed).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn bag_loss_descends_for_small_step() {
        let m = model(60, 11);
        let mut r = rng::rng(12);
        for _ in 0..50 {
            let s = session(&m, &mut r);
            let n = r.gen_range(1..5);
            let ids: Vec<u32> = (0..n).map(|_| r.gen_range(3..60)).collect();
            let bag = Bag::new(ids, 60).unwrap();
            let mut descended = false;
            for step_size in [1e-3, 1e-2, 3e-2] {
                let cfg = SteerConfig {
                    beta: 0.0,
                    step_size,
                    ..SteerConfig::default()
                };
                let p = perturb(&s, &bag, &cfg).unwrap();
                descended |= p.last.bow < p.initial.bow;
            }
            assert!(descended);
        }
    }

    #[test]
    fn bag_mass_never_drops() {
        let m = model(60, 13);
        let mut r = rng::rng(14);
        for _ in 0..100 {
            let s = session(&m, &mut r);
            let ids: Vec<u32> = (0..r.gen_range(1..6)).map(|_| r.gen_range(3..60)).collect();
            let bag = Bag::new(ids, 60).unwrap();
            let cfg = SteerConfig {
                beta: 0.0,
                step_size: 1e-3,
                ..SteerConfig::default()
            };
            let before = s.probs();
            let after = perturb(&s, &bag, &cfg).unwrap().probs;
            let mass = |d: &[f64]| bag.ids().iter().map(|&w| d[w as usize]).sum::<f64>();
            assert!(mass(&after) >= mass(&before));
        }
    }

    #[test]
    fn strong_single_token_bag_wins_greedy() {
        // random init has tiny embeddings, so a large step is needed to move logits
        let m = model(50, 17);
        let mut r = rng::rng(18);
        let (mut steered, mut plain) = (0, 0);
        for _ in 0..100 {
            let s = session(&m, &mut r);
            let w = r.gen_range(3..50);
            let bag = Bag::new(vec![w], 50).unwrap();
            let cfg = SteerConfig {
                alpha: 5.0,
                step_size: 30.0,
                decode: DecodeStrategy::Greedy,
                ..SteerConfig::default()
            };
            let mut a = s.clone();
            if conditional_step(&mut a, &bag, &cfg, true).unwrap() == w {
                steered += 1;
            }
            let mut d = s.probs();
            mask_reserved(&mut d, true).unwrap();
            if sample_next(&d, DecodeStrategy::Greedy, &mut rng::rng(0)).unwrap() == w {
                plain += 1;
            }
        }
        assert!(steered > 50, "steered {steered}");
        assert!(steered > plain);
    }

    #[test]
    fn generation_respects_lengths_and_masks() {
        let m = model(30, 19);
        let bag = Bag::new(vec![7], 30).unwrap();
        let lengths = LengthRange { min: 4, max: 9 };
        for seed in 0..30 {
            let ids = generate_conditional(&m, &bag, &SteerConfig::default(), lengths, seed).unwrap();
            assert!((4..=9).contains(&ids.len()));
            assert!(ids.iter().all(|&i| i > UNK_ID));
        }
        assert!(LengthRange { min: 0, max: 3 }.validate(&m).is_err());
        assert!(LengthRange { min: 1, max: 31 }.validate(&m).is_err());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let m = model(30, 23);
        let bag = Bag::new(vec![8, 9], 30).unwrap();
        let cfg = SteerConfig::default();
        let a = generate_conditional(&m, &bag, &cfg, LengthRange::default(), 99).unwrap();
        let b = generate_conditional(&m, &bag, &cfg, LengthRange::default(), 99).unwrap();
        assert_eq!(a, b);
    }
}
