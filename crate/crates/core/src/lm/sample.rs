use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// How the next token is drawn from a distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeStrategy {
    /// Argmax; ties go to the lowest id.
    Greedy,
    /// Sample among the k most probable tokens.
    TopK(usize),
    /// Sample among the smallest top set holding at least `p` of the mass.
    Nucleus(f64),
    /// Sample from the whole distribution.
    Sample,
}

impl Default for DecodeStrategy {
    fn default() -> Self {
        DecodeStrategy::TopK(10)
    }
}

impl fmt::Display for DecodeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeStrategy::Greedy => f.write_str("greedy"),
            DecodeStrategy::TopK(k) => write!(f, "topk:{k}"),
            DecodeStrategy::Nucleus(p) => write!(f, "nucleus:{p}"),
            DecodeStrategy::Sample => f.write_str("sample"),
        }
    }
}

impl FromStr for DecodeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("decode strategy `{s}` (greedy|sample|topk:K|nucleus:P)"));
        match s.split_once(':') {
            None if s == "greedy" => Ok(DecodeStrategy::Greedy),
            None if s == "sample" => Ok(DecodeStrategy::Sample),
            Some(("topk", k)) => match k.parse() {
                Ok(k) if k > 0 => Ok(DecodeStrategy::TopK(k)),
                _ => Err(bad()),
            },
            Some(("nucleus", p)) => match p.parse::<f64>() {
                Ok(p) if p > 0.0 && p <= 1.0 => Ok(DecodeStrategy::Nucleus(p)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

pub fn validate_distribution(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if let Some(bad) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {bad}")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Ids ranked by probability, descending, ties by id.
fn ranked(dist: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..dist.len()).collect();
    ids.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    ids
}

/// Draw from `dist` restricted to `support`, renormalized. Support is walked
/// in ascending id order so the draw depends only on the rng state.
fn draw(dist: &[f64], mut support: Vec<usize>, rng: &mut impl Rng) -> u32 {
    support.sort_unstable();
    let total: f64 = support.iter().map(|&i| dist[i]).sum();
    let u = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    for &i in &support {
        cum += dist[i];
        if cum > u {
            return i as u32;
        }
    }
    // rounding left u at the very top: take the last token with mass
    *support.iter().rev().find(|&&i| dist[i] > 0.0).expect("support has mass") as u32
}

pub fn sample_next(dist: &[f64], strategy: DecodeStrategy, rng: &mut impl Rng) -> Result<u32> {
    validate_distribution(dist)?;
    match strategy {
        DecodeStrategy::Greedy => {
            let mut best = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > dist[best] {
                    best = i;
                }
            }
            Ok(best as u32)
        }
        DecodeStrategy::Sample => Ok(draw(dist, (0..dist.len()).collect(), rng)),
        DecodeStrategy::TopK(k) => {
            if k == 0 {
                return Err(Error::InvalidArgument("top-k with k = 0".into()));
            }
            let mut ids: Vec<usize> = (0..dist.len()).collect();
            if k < ids.len() {
                // same cut as the full ranking, without sorting everything
                ids.select_nth_unstable_by(k - 1, |&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
                ids.truncate(k);
            }
            Ok(draw(dist, ids, rng))
        }
        DecodeStrategy::Nucleus(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidArgument(format!("nucleus p = {p}")));
            }
            let ids = ranked(dist);
            let mut cum = 0.0;
            let mut cut = ids.len();
            for (n, &i) in ids.iter().enumerate() {
                cum += dist[i];
                if cum >= p - 1e-12 {
                    cut = n + 1;
                    break;
                }
            }
            Ok(draw(dist, ids[..cut].to_vec(), rng))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn greedy_argmax_and_ties() {
        let mut r = rng::rng(0);
        assert_eq!(sample_next(&[0.1, 0.7, 0.2], DecodeStrategy::Greedy, &mut r).unwrap(), 1);
        assert_eq!(sample_next(&[0.5, 0.5, 0.0], DecodeStrategy::Greedy, &mut r).unwrap(), 0);
    }

    #[test]
    fn topk_frequencies() {
        let mut r = rng::rng(1);
        let dist = [0.1, 0.7, 0.2];
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[sample_next(&dist, DecodeStrategy::TopK(2), &mut r).unwrap() as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        assert!((counts[1] as f64 / 1e4 - 7.0 / 9.0).abs() < 0.02);
        assert!((counts[2] as f64 / 1e4 - 2.0 / 9.0).abs() < 0.02);
    }

    #[test]
    fn nucleus_keeps_smallest_head() {
        let mut r = rng::rng(2);
        let dist = [0.05, 0.6, 0.3, 0.05];
        for _ in 0..1000 {
            let id = sample_next(&dist, DecodeStrategy::Nucleus(0.85), &mut r).unwrap();
            assert!(id == 1 || id == 2);
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let dist = [0.25; 4];
        let a: Vec<u32> = {
            let mut r = rng::rng(5);
            (0..50).map(|_| sample_next(&dist, DecodeStrategy::TopK(4), &mut r).unwrap()).collect()
        };
        let b: Vec<u32> = {
            let mut r = rng::rng(5);
            (0..50).map(|_| sample_next(&dist, DecodeStrategy::TopK(4), &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_distributions() {
        let mut r = rng::rng(0);
        assert!(sample_next(&[0.5, 0.4], DecodeStrategy::Greedy, &mut r).is_err());
        assert!(sample_next(&[f64::NAN, 1.0], DecodeStrategy::Greedy, &mut r).is_err());
        assert!(sample_next(&[1.5, -0.5], DecodeStrategy::Greedy, &mut r).is_err());
        assert!(sample_next(&[1.0], DecodeStrategy::TopK(0), &mut r).is_err());
    }

    #[test]
    fn parse_strategies() {
        assert_eq!("greedy".parse::<DecodeStrategy>().unwrap(), DecodeStrategy::Greedy);
        assert_eq!("topk:10".parse::<DecodeStrategy>().unwrap(), DecodeStrategy::TopK(10));
        assert_eq!("nucleus:0.9".parse::<DecodeStrategy>().unwrap(), DecodeStrategy::Nucleus(0.9));
        assert!("topk:0".parse::<DecodeStrategy>().is_err());
        assert!("beam".parse::<DecodeStrategy>().is_err());
        for s in [DecodeStrategy::TopK(7), DecodeStrategy::Sample, DecodeStrategy::Nucleus(0.5)] {
            assert_eq!(s.to_string().parse::<DecodeStrategy>().unwrap(), s);
        }
    }

    #[test]
    fn full_sampling_matches_wide_topk() {
        let dist = [0.1, 0.0, 0.6, 0.3];
        for seed in 0..50 {
            let a = sample_next(&dist, DecodeStrategy::Sample, &mut rng::rng(seed)).unwrap();
            let b = sample_next(&dist, DecodeStrategy::TopK(4), &mut rng::rng(seed)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, 1);
        }
    }
}
