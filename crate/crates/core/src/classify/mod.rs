//! Downstream classifiers and the macro-F1 metric.
//!
//! Two families stand in for the larger judgement models: multinomial
//! logistic regression over token counts, and a small neural model (mean of
//! token embeddings, one ReLU hidden layer, softmax). Both train with Adam
//! on shuffled minibatches and are deterministic given the spec's seed.

mod metrics;
mod net;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use metrics::{macro_f1, ClassMetrics, EvalResult};
use net::{Adam, Net};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lm::softmax;
use crate::rng::{self, str_key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearBow,
    Neural,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::LinearBow => "linear",
            Family::Neural => "neural",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear_bow" => Ok(Family::LinearBow),
            "neural" => Ok(Family::Neural),
            other => Err(Error::InvalidArgument(format!("unknown classifier family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub family: Family,
    /// L2 penalty on weights (not biases).
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Neural only.
    pub embed_dim: usize,
    /// Neural only.
    pub hidden_dim: usize,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn linear(seed: u64) -> Self {
        Self {
            family: Family::LinearBow,
            l2: 1e-4,
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 32,
            embed_dim: 0,
            hidden_dim: 0,
            seed,
        }
    }

    pub fn neural(seed: u64) -> Self {
        Self {
            family: Family::Neural,
            l2: 1e-5,
            epochs: 20,
            learning_rate: 0.01,
            batch_size: 32,
            embed_dim: 32,
            hidden_dim: 32,
            seed,
        }
    }

    pub fn for_family(family: Family, seed: u64) -> Self {
        match family {
            Family::LinearBow => Self::linear(seed),
            Family::Neural => Self::neural(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument("l2 must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.family == Family::Neural && (self.embed_dim == 0 || self.hidden_dim == 0) {
            return Err(Error::InvalidArgument("neural classifier needs embed_dim and hidden_dim".into()));
        }
        Ok(())
    }
}

/// A trained classifier. Tokens outside its vocabulary are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    spec: ClassifierSpec,
    labels: Vec<String>,
    vocab: Vec<String>,
    majority: usize,
    params: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

fn net_for(spec: &ClassifierSpec, vocab: usize, classes: usize) -> Net {
    match spec.family {
        Family::LinearBow => Net::linear(vocab, classes),
        Family::Neural => Net::neural(vocab, spec.embed_dim, spec.hidden_dim, classes),
    }
}

/// Fits a classifier on the finalized tokens of `train`.
pub fn train_classifier(train: &Dataset, spec: &ClassifierSpec) -> Result<Classifier> {
    spec.validate()?;
    let labels = train.label_set().to_vec();
    if labels.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "classifier training needs at least 2 classes, got {}",
            labels.len()
        )));
    }
    let vocab: Vec<String> = train
        .examples()
        .iter()
        .flat_map(|e| e.tokens.iter().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    let label_index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let encoded: Vec<(Vec<u32>, usize)> = train
        .examples()
        .iter()
        .map(|e| {
            let ids = e.tokens.iter().filter_map(|t| index.get(t).copied()).collect();
            (ids, label_index[e.label.as_str()])
        })
        .collect();
    let mut counts = vec![0usize; labels.len()];
    for (_, y) in &encoded {
        counts[*y] += 1;
    }
    // ties go to the lexicographically first label
    let majority = (0..labels.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);

    let net = net_for(spec, vocab.len(), labels.len());
    let mut params = net.init(&mut rng::substream(spec.seed, &[str_key("init")]));
    let mut adam = Adam::new(params.len(), spec.learning_rate);
    let decay = net.weight_mask();
    let mut order: Vec<usize> = (0..encoded.len()).filter(|&i| !encoded[i].0.is_empty()).collect();
    let mut grad = vec![0.0; params.len()];
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng::substream(spec.seed, &[str_key("epoch"), epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (ids, y) = &encoded[i];
                epoch_loss += net.loss_grad(&params, ids, *y, scale, &mut grad);
            }
            for ((g, p), &w) in grad.iter_mut().zip(&params).zip(&decay) {
                if w {
                    *g += spec.l2 * p;
                }
            }
            adam.step(&mut params, &grad);
        }
        if !epoch_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }
    }
    Ok(Classifier {
        spec: spec.clone(),
        labels,
        vocab,
        majority,
        params,
        index,
    })
}

impl Classifier {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn majority_label(&self) -> &str {
        &self.labels[self.majority]
    }

    fn net(&self) -> Net {
        net_for(&self.spec, self.vocab.len(), self.labels.len())
    }

    fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.index.get(t.as_ref()).copied()).collect()
    }

    /// Class probabilities, or `None` when no token is known.
    pub fn probs<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let ids = self.encode(tokens);
        if ids.is_empty() {
            return None;
        }
        Some(softmax(&self.net().logits(&self.params, &ids)))
    }

    /// Highest-probability label; the majority training label when the
    /// text has no known token. Ties go to the earlier label.
    pub fn predict_one<S: AsRef<str>>(&self, tokens: &[S]) -> &str {
        let ids = self.encode(tokens);
        if ids.is_empty() {
            return self.majority_label();
        }
        let z = self.net().logits(&self.params, &ids);
        let best = (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
        &self.labels[best]
    }

    pub fn predict<T: AsRef<[String]> + Sync>(&self, texts: &[T], exec: Execution) -> Vec<String> {
        exec::map(exec, texts, |t| self.predict_one(t.as_ref()).to_string())
    }

    /// Mean cross-entropy over examples with at least one known token.
    pub fn mean_loss(&self, data: &Dataset) -> f64 {
        let net = self.net();
        let li: HashMap<&str, usize> = self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut scratch = vec![0.0; self.params.len()];
        let (mut total, mut n) = (0.0, 0usize);
        for e in data.examples() {
            let ids = self.encode(&e.tokens);
            if let (false, Some(&y)) = (ids.is_empty(), li.get(e.label.as_str())) {
                total += net.loss_grad(&self.params, &ids, y, 0.0, &mut scratch);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// Predicts `test` and scores it against `label_set`.
    pub fn evaluate<L: AsRef<str>>(&self, test: &Dataset, label_set: &[L], exec: Execution) -> Result<EvalResult> {
        let texts: Vec<&[String]> = test.token_lists();
        let pred = self.predict(&texts, exec);
        macro_f1(&test.labels(), &pred, label_set)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Classifier = serde_json::from_str(text)?;
        c.spec.validate()?;
        let expected = net_for(&c.spec, c.vocab.len(), c.labels.len()).len();
        if c.params.len() != expected {
            return Err(Error::ModelFormat(format!(
                "classifier has {} parameters, expected {expected}",
                c.params.len()
            )));
        }
        if c.majority >= c.labels.len() {
            return Err(Error::ModelFormat("majority index out of range".into()));
        }
        c.index = c.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledExample, Provenance};
    use rand::Rng;

    fn ex(tokens: &[&str], label: &str) -> LabeledExample {
        LabeledExample::from_tokens(tokens.iter().map(|s| s.to_string()).collect(), label)
    }

    fn separable() -> Dataset {
        let mut r = rng::rng(1);
        let mut v = Vec::new();
        for i in 0..60 {
            let (own, label) = if i % 3 == 0 { (["apple", "pear"], "B") } else { (["stone", "rock"], "A") };
            let shared = ["the", "some", "very"];
            let mut toks = vec![own[r.gen_range(0..2)]];
            for _ in 0..r.gen_range(0..4) {
                toks.push(shared[r.gen_range(0..3)]);
            }
            v.push(ex(&toks, label));
        }
        Dataset::new(v, Provenance::Original)
    }

    fn accuracy(c: &Classifier, d: &Dataset) -> f64 {
        let pred = c.predict(&d.token_lists(), Execution::Sequential);
        pred.iter().zip(d.labels()).filter(|(p, g)| p.as_str() == *g).count() as f64 / d.len() as f64
    }

    #[test]
    fn separable_set_is_fit_by_both_families() {
        let d = separable();
        for spec in [ClassifierSpec::linear(0), ClassifierSpec::neural(0)] {
            let c = train_classifier(&d, &spec).unwrap();
            assert_eq!(accuracy(&c, &d), 1.0, "{}", spec.family);
            assert_eq!(c.predict_one(&["apple"]), "B");
            assert_eq!(c.predict_one(&["rock", "stone"]), "A");
        }
    }

    #[test]
    fn same_seed_same_predictions() {
        let d = separable();
        let probe = [vec!["the".to_string()], vec!["very".to_string(), "pear".to_string()]];
        for family in [Family::LinearBow, Family::Neural] {
            let a = train_classifier(&d, &ClassifierSpec::for_family(family, 9)).unwrap();
            let b = train_classifier(&d, &ClassifierSpec::for_family(family, 9)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.predict(&probe, Execution::Parallel), b.predict(&probe, Execution::Sequential));
        }
    }

    #[test]
    fn linear_ignores_token_order_and_batches_match() {
        let c = train_classifier(&separable(), &ClassifierSpec::linear(2)).unwrap();
        let a = c.probs(&["the", "apple", "rock"]).unwrap();
        let b = c.probs(&["rock", "the", "apple"]).unwrap();
        assert_eq!(a, b);
        let texts: Vec<Vec<String>> = separable().token_lists().iter().map(|t| t.to_vec()).collect();
        let batch = c.predict(&texts, Execution::Parallel);
        let single: Vec<String> = texts.iter().map(|t| c.predict_one(t).to_string()).collect();
        assert_eq!(batch, single);
    }

    #[test]
    fn unknown_or_empty_text_gets_majority() {
        let c = train_classifier(&separable(), &ClassifierSpec::linear(0)).unwrap();
        assert_eq!(c.majority_label(), "A");
        assert_eq!(c.predict_one::<&str>(&[]), "A");
        assert_eq!(c.predict_one(&["zebra"]), "A");
        assert!(c.probs(&["zebra"]).is_none());
    }

    #[test]
    fn single_class_is_rejected() {
        let d = Dataset::new(vec![ex(&["a"], "A"), ex(&["b"], "A")], Provenance::Original);
        assert!(train_classifier(&d, &ClassifierSpec::linear(0)).is_err());
    }

    #[test]
    fn json_roundtrip_is_exact() {
        for spec in [ClassifierSpec::linear(4), ClassifierSpec::neural(4)] {
            let c = train_classifier(&separable(), &spec).unwrap();
            let back = Classifier::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.probs(&["pear"]), c.probs(&["pear"]));
        }
        assert!(Classifier::from_json("{}").is_err());
    }

    #[test]
    fn neural_fits_token_interactions_better() {
        // label = (has p) xor (has q): not linearly separable over counts
        let mut r = rng::rng(7);
        let mut v = Vec::new();
        for _ in 0..400 {
            let (a, b) = (r.gen_bool(0.5), r.gen_bool(0.5));
            let mut toks = vec!["filler"];
            if a {
                toks.push("p");
            }
            if b {
                toks.push("q");
            }
            v.push(ex(&toks, if a ^ b { "odd" } else { "even" }));
        }
        let d = Dataset::new(v, Provenance::Original);
        let lin = train_classifier(&d, &ClassifierSpec::linear(0)).unwrap();
        let mut spec = ClassifierSpec::neural(0);
        spec.epochs = 60;
        let neu = train_classifier(&d, &spec).unwrap();
        assert!(neu.mean_loss(&d) < lin.mean_loss(&d), "{} vs {}", neu.mean_loss(&d), lin.mean_loss(&d));
    }
}
