use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub labels: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// `confusion[gold][pred]`, indexed like `labels`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 plus their unweighted mean over
/// `label_set`. Empty denominators give 0, so a class that never occurs in
/// gold or predictions scores F1 = 0.
pub fn macro_f1<G, P, L>(gold: &[G], pred: &[P], label_set: &[L]) -> Result<EvalResult>
where
    G: AsRef<str>,
    P: AsRef<str>,
    L: AsRef<str>,
{
    if gold.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            got: pred.len(),
        });
    }
    let labels: Vec<String> = label_set.iter().map(|l| l.as_ref().to_string()).collect();
    if labels.is_empty() {
        return Err(Error::Empty("label set".into()));
    }
    let index = |s: &str| {
        labels
            .iter()
            .position(|l| l == s)
            .ok_or_else(|| Error::InvalidArgument(format!("label {s:?} not in label set")))
    };
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        confusion[index(g.as_ref())?][index(p.as_ref())?] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: labels[c].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(EvalResult {
        labels,
        per_class,
        macro_f1,
        confusion,
    })
}
