use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::{class_stats, Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::rng;

/// A proportion in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Fraction(f64);

impl Fraction {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidArgument(format!("fraction {value} not in (0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: Fraction,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        let f = Fraction::new(train_fraction)?;
        if f.get() >= 1.0 {
            return Err(Error::InvalidArgument("train fraction must be below 1".into()));
        }
        Ok(Self {
            train_fraction: f,
            seed,
        })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: Fraction(0.8),
            seed: 0,
        }
    }
}

/// Round half up, tolerant of binary representation error (0.7 * 5 rounds to 4).
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Per-class quotas for taking `fraction` of each class.
///
/// Each class gets `round_half_up(count * fraction)`. When the sum misses
/// `round_half_up(total * fraction)`, single units are moved by largest
/// remainder: added to the classes rounded down the most, removed from
/// those rounded up the most, ties to the larger class. Every quota stays
/// within one unit of its exact share and class rank order is preserved.
pub(crate) fn allocate(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = round_half_up(total as f64 * fraction);
    let mut quota: Vec<usize> = counts
        .iter()
        .map(|&c| round_half_up(c as f64 * fraction).min(c))
        .collect();
    let sum: usize = quota.iter().sum();
    let up = sum < target;
    let gap = sum.abs_diff(target);
    // residual = exact - quota; most positive first when adding
    let residual = |i: usize| counts[i] as f64 * fraction - quota[i] as f64;
    let mut order: Vec<usize> = (0..counts.len())
        .filter(|&i| if up { quota[i] < counts[i] } else { quota[i] > 0 })
        .collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (residual(a), residual(b));
        let by_residual = if up { rb.total_cmp(&ra) } else { ra.total_cmp(&rb) };
        by_residual
            .then(counts[b].cmp(&counts[a]))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(gap.min(order.len() * 2)) {
        if quota.iter().sum::<usize>() == target {
            break;
        }
        if up && quota[i] < counts[i] {
            quota[i] += 1;
        } else if !up && quota[i] > 0 {
            quota[i] -= 1;
        }
    }
    quota
}

/// Choose `quota[c]` members of every class with a seeded per-class
/// permutation. Returns the chosen positions in dataset order.
///
/// The permutation depends only on (seed, label), so for a fixed seed a
/// smaller quota always selects a prefix of a larger one.
fn choose(dataset: &Dataset, quotas: &[(String, usize)], seed: u64) -> HashSet<usize> {
    let mut chosen = HashSet::new();
    for (label, quota) in quotas {
        let mut members: Vec<usize> = dataset
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| &e.label == label)
            .map(|(i, _)| i)
            .collect();
        let mut r = rng::substream(seed, &[rng::str_key(label)]);
        members.shuffle(&mut r);
        chosen.extend(members.into_iter().take(*quota));
    }
    chosen
}

fn partition(dataset: &Dataset, chosen: &HashSet<usize>) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut inside = Vec::with_capacity(chosen.len());
    let mut outside = Vec::with_capacity(dataset.len() - chosen.len());
    for (i, e) in dataset.examples().iter().enumerate() {
        if chosen.contains(&i) {
            inside.push(e.clone());
        } else {
            outside.push(e.clone());
        }
    }
    (inside, outside)
}

/// Split each class into train and test at `spec.train_fraction`, keeping
/// the class distribution. Both halves preserve dataset order.
pub fn stratified_split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let stats = class_stats(dataset);
    if let Some((label, &count)) = stats.iter().find(|(_, &c)| c < 2) {
        return Err(Error::ClassTooSmall {
            label: label.clone(),
            count,
            needed: 2,
        });
    }
    let counts: Vec<usize> = stats.values().copied().collect();
    let quota = allocate(&counts, spec.train_fraction.get());
    let quotas: Vec<(String, usize)> = stats
        .keys()
        .zip(quota)
        .zip(&counts)
        .map(|((l, q), &c)| (l.clone(), q.clamp(1, c - 1)))
        .collect();
    let chosen = choose(dataset, &quotas, spec.seed);
    let (train, test) = partition(dataset, &chosen);
    let p = dataset.provenance();
    Ok((Dataset::new(train, p), Dataset::new(test, p)))
}

/// Keep `fraction` of every class. Fraction 1 returns the dataset unchanged.
pub fn downsample(train: &Dataset, fraction: Fraction, seed: u64) -> Result<Dataset> {
    if fraction.get() >= 1.0 {
        return Ok(train.clone());
    }
    let stats = class_stats(train);
    let counts: Vec<usize> = stats.values().copied().collect();
    let quota = allocate(&counts, fraction.get());
    if let Some(((label, &count), _)) = stats.iter().zip(&quota).find(|(_, &q)| q == 0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {} would leave class `{label}` ({count} examples) empty",
            fraction.get()
        )));
    }
    let quotas: Vec<(String, usize)> = stats.keys().cloned().zip(quota).collect();
    let chosen = choose(train, &quotas, seed);
    let (kept, _) = partition(train, &chosen);
    Ok(Dataset::new(kept, train.provenance()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use proptest::prelude::*;

    fn fixture(counts: &[(&str, usize)]) -> Dataset {
        let mut ex = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                ex.push(LabeledExample::from_tokens(vec![format!("{label}{i}")], *label));
            }
        }
        Dataset::new(ex, Provenance::Original)
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(49.65), 50);
        assert_eq!(round_half_up(0.7 * 5.0), 4);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.4999), 2);
    }

    #[test]
    fn hundred_splits_eighty_twenty() {
        let ds = fixture(&[("a", 100), ("b", 50)]);
        let (train, test) = stratified_split(&ds, &SplitSpec::default()).unwrap();
        let s = class_stats(&train);
        assert_eq!(s["a"], 80);
        assert_eq!(class_stats(&test)["a"], 20);
        assert_eq!(s["b"], 40);
    }

    #[test]
    fn split_is_deterministic_disjoint_and_covering() {
        let ds = fixture(&[("a", 37), ("b", 11), ("c", 5)]);
        let spec = SplitSpec::new(0.8, 42).unwrap();
        let (t1, s1) = stratified_split(&ds, &spec).unwrap();
        let (t2, s2) = stratified_split(&ds, &spec).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(s1, s2);
        let mut all: Vec<_> = t1.examples().iter().chain(s1.examples()).cloned().collect();
        all.sort_by(|a, b| a.text.cmp(&b.text));
        let mut orig = ds.examples().to_vec();
        orig.sort_by(|a, b| a.text.cmp(&b.text));
        assert_eq!(all, orig);
        let (t3, _) = stratified_split(&ds, &SplitSpec::new(0.8, 43).unwrap()).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn tiny_class_rejected() {
        let ds = fixture(&[("a", 10), ("b", 1)]);
        assert!(matches!(
            stratified_split(&ds, &SplitSpec::default()),
            Err(Error::ClassTooSmall { count: 1, .. })
        ));
    }

    #[test]
    fn ten_thousand_corpus_within_one_example() {
        let ds = fixture(&[("normal", 5385), ("spam", 1403), ("abusive", 2715), ("hateful", 497)]);
        let (train, _) = stratified_split(&ds, &SplitSpec::new(0.8, 7).unwrap()).unwrap();
        let stats = class_stats(&train);
        for (label, n) in class_stats(&ds) {
            let diff = stats[&label] as f64 - 0.8 * n as f64;
            assert!(diff.abs() <= 1.0, "{label}: {diff}");
        }
        assert_eq!(train.len(), 8000);
    }

    #[test]
    fn downsample_cases() {
        let ds = fixture(&[("hateful", 4965), ("normal", 300)]);
        let f = Fraction::new(0.01).unwrap();
        let small = downsample(&ds, f, 1).unwrap();
        assert_eq!(class_stats(&small)["hateful"], 50);
        assert_eq!(class_stats(&small)["normal"], 3);
        assert_eq!(downsample(&ds, Fraction::new(1.0).unwrap(), 9).unwrap(), ds);
        let bad = fixture(&[("a", 1000), ("b", 10)]);
        assert!(downsample(&bad, f, 1).is_err());
        assert!(Fraction::new(0.0).is_err());
        assert!(Fraction::new(1.5).is_err());
    }

    #[test]
    fn downsample_nests_and_is_subset() {
        let ds = fixture(&[("a", 200), ("b", 60), ("c", 25)]);
        let small = downsample(&ds, Fraction::new(0.2).unwrap(), 5).unwrap();
        let big = downsample(&ds, Fraction::new(0.6).unwrap(), 5).unwrap();
        for e in small.examples() {
            assert!(ds.examples().contains(e));
            assert!(big.examples().contains(e));
        }
    }

    proptest! {
        #[test]
        fn split_proportions_hold(counts in prop::collection::vec(2usize..400, 2..6), seed: u64) {
            let labels = ["a", "b", "c", "d", "e", "f"];
            let spec: Vec<(&str, usize)> = labels.iter().copied().zip(counts.iter().copied()).collect();
            let ds = fixture(&spec);
            let (train, test) = stratified_split(&ds, &SplitSpec::new(0.8, seed).unwrap()).unwrap();
            prop_assert_eq!(train.len() + test.len(), ds.len());
            let ts = class_stats(&train);
            for (label, n) in &spec {
                let tc = ts[*label] as f64;
                prop_assert!((tc / *n as f64 - 0.8).abs() <= 1.0 / *n as f64 + 1e-12,
                    "{} {} {}", label, tc, n);
            }
        }

        #[test]
        fn downsample_keeps_rank_order(counts in prop::collection::vec(50usize..2000, 2..5), seed: u64) {
            let labels = ["a", "b", "c", "d"];
            let spec: Vec<(&str, usize)> = labels.iter().copied().zip(counts.iter().copied()).collect();
            let ds = fixture(&spec);
            let small = class_stats(&downsample(&ds, Fraction::new(0.05).unwrap(), seed).unwrap());
            for (la, a) in &spec {
                for (lb, b) in &spec {
                    if a > b {
                        prop_assert!(small[*la] >= small[*lb]);
                    }
                }
            }
        }
    }
}
