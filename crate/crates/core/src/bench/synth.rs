use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Dataset, LabeledExample, Provenance, MAX_TOKENS};
use crate::error::{Error, Result};
use crate::rng::{self, str_key};

/// Class proportions of the four-label abusive-tweet corpus.
pub const ABUSE_MIX: [(&str, f64); 4] = [
    ("normal", 0.5385),
    ("spam", 0.1403),
    ("abusive", 0.2715),
    ("hateful", 0.0497),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClass {
    pub label: String,
    pub proportion: f64,
    pub indicators: Vec<String>,
}

impl SynthClass {
    /// Indicators named after the first three letters of the label, e.g.
    /// `spa00`, `spa01`, ….
    pub fn named(label: impl Into<String>, proportion: f64, indicators: usize) -> Self {
        let label = label.into();
        let prefix: String = label
            .chars()
            .filter(char::is_ascii_alphanumeric)
            .take(3)
            .collect::<String>()
            .to_ascii_lowercase();
        let prefix = if prefix.is_empty() { "c".to_string() } else { prefix };
        Self {
            indicators: (0..indicators).map(|j| format!("{prefix}{j:02}")).collect(),
            label,
            proportion,
        }
    }
}

/// Recipe for a labeled corpus with a known class signal.
///
/// Every token is drawn from the class's indicator set with probability
/// `boost`, and otherwise uniformly from the shared background, which holds
/// `background_size` filler words plus every indicator token.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<SynthClass>,
    pub total: usize,
    pub background_size: usize,
    pub boost: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Four classes in the proportions of [`ABUSE_MIX`], each with
    /// `indicators` tokens named after the first three letters of its label.
    pub fn abuse_mix(total: usize, indicators: usize, seed: u64) -> Self {
        let classes = ABUSE_MIX
            .iter()
            .map(|&(label, proportion)| SynthClass::named(label, proportion, indicators))
            .collect();
        Self {
            classes,
            total,
            background_size: 500,
            boost: 0.25,
            min_len: 6,
            max_len: 14,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.total == 0 {
            return Err(Error::InvalidArgument("synthetic corpus needs classes and a positive size".into()));
        }
        let sum: f64 = self.classes.iter().map(|c| c.proportion).sum();
        if (sum - 1.0).abs() > 1e-9 || self.classes.iter().any(|c| c.proportion.is_nan() || c.proportion < 0.0) {
            return Err(Error::InvalidArgument(format!("class proportions sum to {sum}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.boost) {
            return Err(Error::InvalidArgument("boost must lie in [0, 1]".into()));
        }
        if self.boost > 0.0 && self.classes.iter().any(|c| c.indicators.is_empty()) {
            return Err(Error::InvalidArgument("boost > 0 needs a non-empty indicator set for every class".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.classes {
            for t in &c.indicators {
                if !seen.insert(t.as_str()) {
                    return Err(Error::InvalidArgument(format!("indicator {t:?} is shared between classes")));
                }
            }
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > MAX_TOKENS {
            return Err(Error::InvalidArgument("sentence length range must lie within 1..=30".into()));
        }
        if self.background_size == 0 && seen.is_empty() {
            return Err(Error::InvalidArgument("empty background vocabulary".into()));
        }
        Ok(())
    }

    /// Filler words followed by every class's indicators.
    pub fn background(&self) -> Vec<String> {
        let mut words: Vec<String> = (0..self.background_size).map(|i| format!("w{i:03}")).collect();
        words.extend(self.classes.iter().flat_map(|c| c.indicators.iter().cloned()));
        words
    }

    /// Exact class counts: `total · proportion` rounded by largest remainder.
    pub fn class_counts(&self) -> Vec<usize> {
        let ideal: Vec<f64> = self.classes.iter().map(|c| c.proportion * self.total as f64).collect();
        let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| (ideal[b] - counts[b] as f64).total_cmp(&(ideal[a] - counts[a] as f64)).then(a.cmp(&b)));
        let missing = self.total - counts.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        counts
    }
}

/// Draws the corpus. Examples come out already tokenized and clean.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let background = spec.background();
    let mut labels: Vec<usize> = spec
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let mut r = rng::substream(spec.seed, &[str_key("synth")]);
    labels.shuffle(&mut r);
    let examples = labels
        .into_iter()
        .map(|c| {
            let class = &spec.classes[c];
            let len = r.gen_range(spec.min_len..=spec.max_len);
            let tokens = (0..len)
                .map(|_| {
                    if r.gen::<f64>() < spec.boost {
                        class.indicators[r.gen_range(0..class.indicators.len())].clone()
                    } else {
                        background[r.gen_range(0..background.len())].clone()
                    }
                })
                .collect();
            LabeledExample::from_tokens(tokens, class.label.clone())
        })
        .collect();
    Ok(Dataset::new(examples, Provenance::Original))
}
