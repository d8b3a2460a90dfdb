//! Class lexicons: the condition signal used to steer generation.
//!
//! Each class is scored with TF-IDF and its top-k tokens become the bag
//! the steering loss pulls toward.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 500;

/// What counts as a document when computing document frequency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DocGranularity {
    /// All of a class's text is one document; idf contrasts classes.
    #[default]
    Class,
    /// Every example is its own document.
    Example,
}

impl fmt::Display for DocGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Class => "class",
            Self::Example => "example",
        })
    }
}

impl FromStr for DocGranularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(Self::Class),
            "example" => Ok(Self::Example),
            other => Err(Error::InvalidArgument(format!(
                "doc granularity `{other}` (expected class|example)"
            ))),
        }
    }
}

/// label -> token -> score. Only tokens present in a class are stored;
/// absent tokens score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfScores {
    pub classes: BTreeMap<String, HashMap<String, f64>>,
}

impl TfIdfScores {
    pub fn score(&self, label: &str, token: &str) -> f64 {
        self.classes
            .get(label)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Smoothed idf: `ln((1 + n_docs) / (1 + df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Score every (class, token) pair as `tf(t, c) * idf(t)`, with `tf` the
/// token's share of all tokens in class `c`.
pub fn score_tfidf(train: &Dataset, granularity: DocGranularity) -> Result<TfIdfScores> {
    if train.is_empty() {
        return Err(Error::Empty("training set for lexicon mining".into()));
    }
    if train.label_set().len() < 2 {
        return Err(Error::InvalidArgument(
            "lexicon mining needs at least two classes".into(),
        ));
    }

    let mut counts: BTreeMap<&str, HashMap<&str, usize>> = BTreeMap::new();
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for e in train.examples() {
        let class = counts.entry(e.label.as_str()).or_default();
        for t in &e.tokens {
            *class.entry(t.as_str()).or_default() += 1;
        }
        *totals.entry(e.label.as_str()).or_default() += e.tokens.len();
    }

    let mut df: HashMap<&str, usize> = HashMap::new();
    let n_docs = match granularity {
        DocGranularity::Class => {
            for class in counts.values() {
                for t in class.keys() {
                    *df.entry(t).or_default() += 1;
                }
            }
            counts.len()
        }
        DocGranularity::Example => {
            for e in train.examples() {
                let distinct: HashSet<&str> = e.tokens.iter().map(String::as_str).collect();
                for t in distinct {
                    *df.entry(t).or_default() += 1;
                }
            }
            train.len()
        }
    };

    let classes = counts
        .into_iter()
        .map(|(label, class)| {
            let total = totals[label] as f64;
            let scored = class
                .into_iter()
                .map(|(t, n)| (t.to_string(), n as f64 / total * smoothed_idf(n_docs, df[t])))
                .collect();
            (label.to_string(), scored)
        })
        .collect();
    Ok(TfIdfScores { classes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassLexicon {
    pub label: String,
    /// Descending by score, ties by token ascending.
    pub entries: Vec<(String, f64)>,
    pub k: usize,
}

impl ClassLexicon {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _)| t.as_str())
    }

    pub fn top(&self, n: usize) -> impl Iterator<Item = &str> {
        self.tokens().take(n)
    }
}

fn rank(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Keep the `k` best-scoring tokens of every class.
pub fn extract_lexicons(scores: &TfIdfScores, k: usize) -> Result<Vec<ClassLexicon>> {
    if k == 0 {
        return Err(Error::InvalidArgument("lexicon size k must be positive".into()));
    }
    Ok(scores
        .classes
        .iter()
        .map(|(label, class)| {
            let mut entries: Vec<(String, f64)> =
                class.iter().map(|(t, &s)| (t.clone(), s)).collect();
            if entries.len() > k {
                entries.select_nth_unstable_by(k - 1, rank);
                entries.truncate(k);
            }
            entries.sort_by(rank);
            ClassLexicon {
                label: label.clone(),
                entries,
                k,
            }
        })
        .collect())
}

/// Serialize lexicons as `class<TAB>token<TAB>score` lines.
pub fn to_tsv(lexicons: &[ClassLexicon]) -> String {
    let mut out = String::new();
    for lex in lexicons {
        for (token, score) in &lex.entries {
            // 17 significant digits round-trip every f64.
            let _ = writeln!(out, "{}\t{}\t{:.16e}", lex.label, token, score);
        }
    }
    out
}

pub fn save_lexicons(lexicons: &[ClassLexicon], path: &Path) -> Result<()> {
    fs::write(path, to_tsv(lexicons)).map_err(|e| Error::io(path, e))
}

pub fn parse_tsv(content: &str) -> Result<Vec<ClassLexicon>> {
    let mut lexicons: Vec<ClassLexicon> = Vec::new();
    let mut finished: BTreeSet<String> = BTreeSet::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let bad = |why: &str| Error::LexiconFormat(format!("line {}: {why}", i + 1));
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(label), Some(token), Some(score), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad("expected class<TAB>token<TAB>score"));
        };
        let score: f64 = score.parse().map_err(|_| bad("score is not a number"))?;
        if !score.is_finite() || score < 0.0 {
            return Err(bad("score must be finite and non-negative"));
        }
        if lexicons.last().map(|l| l.label.as_str()) != Some(label) {
            if let Some(prev) = lexicons.last() {
                finished.insert(prev.label.clone());
            }
            if finished.contains(label) {
                return Err(bad("class rows are not grouped"));
            }
            seen.clear();
            lexicons.push(ClassLexicon {
                label: label.to_string(),
                entries: Vec::new(),
                k: 0,
            });
        }
        let lex = lexicons.last_mut().expect("pushed above");
        if !seen.insert(token.to_string()) {
            return Err(bad("duplicate token within class"));
        }
        if let Some((_, prev)) = lex.entries.last() {
            if score > *prev {
                return Err(bad("scores not in descending order"));
            }
        }
        lex.entries.push((token.to_string(), score));
        lex.k = lex.entries.len();
    }
    Ok(lexicons)
}

pub fn load_lexicons(path: &Path) -> Result<Vec<ClassLexicon>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledExample, Provenance};
    use approx::assert_abs_diff_eq;

    fn ds(rows: &[(&str, &str)]) -> Dataset {
        Dataset::new(
            rows.iter()
                .map(|(text, label)| {
                    LabeledExample::from_tokens(
                        text.split_whitespace().map(String::from).collect(),
                        *label,
                    )
                })
                .collect(),
            Provenance::Original,
        )
    }

    #[test]
    fn hand_evaluated_scores() {
        let d = ds(&[("kill kill ugly", "A"), ("nice day", "B")]);
        let s = score_tfidf(&d, DocGranularity::Class).unwrap();
        let expected = (2.0 / 3.0) * ((3.0f64 / 2.0).ln() + 1.0);
        assert_abs_diff_eq!(s.score("A", "kill"), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(s.score("A", "kill"), 0.93698, epsilon = 1e-5);
        assert_eq!(s.score("A", "nice"), 0.0);
    }

    #[test]
    fn ubiquitous_token_idf_is_one() {
        assert_eq!(smoothed_idf(4, 4), 1.0);
        let d = ds(&[("x a", "A"), ("x b", "B"), ("x c", "C")]);
        let s = score_tfidf(&d, DocGranularity::Class).unwrap();
        assert_abs_diff_eq!(s.score("B", "x"), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn order_and_duplication_invariance() {
        let rows = [("a b c", "A"), ("a a d", "A"), ("b e", "B"), ("e f e", "B")];
        let base = score_tfidf(&ds(&rows), DocGranularity::Class).unwrap();
        let mut rev = rows.to_vec();
        rev.reverse();
        assert_eq!(base, score_tfidf(&ds(&rev), DocGranularity::Class).unwrap());
        let doubled: Vec<_> = rows.iter().chain(rows.iter()).copied().collect();
        let dup = score_tfidf(&ds(&doubled), DocGranularity::Class).unwrap();
        for (label, class) in &base.classes {
            for (t, v) in class {
                assert_abs_diff_eq!(dup.score(label, t), *v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_class_rejected() {
        assert!(score_tfidf(&ds(&[("a", "A"), ("b", "A")]), DocGranularity::Class).is_err());
    }

    #[test]
    fn example_granularity_uses_example_df() {
        let d = ds(&[("a b", "A"), ("a", "A"), ("c", "B")]);
        let s = score_tfidf(&d, DocGranularity::Example).unwrap();
        // df(a) = 2 of 3 docs
        assert_abs_diff_eq!(s.score("A", "a"), (2.0 / 3.0) * ((4.0f64 / 3.0).ln() + 1.0), epsilon = 1e-15);
    }

    #[test]
    fn clamp_ties_and_zero_k() {
        let d = ds(&[("g f e d c b a", "A"), ("z", "B")]);
        let s = score_tfidf(&d, DocGranularity::Class).unwrap();
        let lex = extract_lexicons(&s, 500).unwrap();
        assert_eq!(lex[0].entries.len(), 7);
        // all scores equal: lexicographic order
        assert_eq!(lex[0].tokens().collect::<Vec<_>>(), ["a", "b", "c", "d", "e", "f", "g"]);
        assert!(extract_lexicons(&s, 0).is_err());
    }

    #[test]
    fn roundtrip_and_validation() {
        let d = ds(&[("a b b c", "w"), ("c d", "x"), ("e e f", "y"), ("g", "z")]);
        let lex = extract_lexicons(&score_tfidf(&d, DocGranularity::Class).unwrap(), 500).unwrap();
        assert_eq!(lex.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        save_lexicons(&lex, &path).unwrap();
        let back = load_lexicons(&path).unwrap();
        assert_eq!(back.len(), lex.len());
        for (a, b) in lex.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.entries, b.entries);
        }
        assert!(parse_tsv("a\tx\t0.5\na\tx\t0.4\n").is_err());
        assert!(parse_tsv("a\tx\t0.4\na\ty\t0.5\n").is_err());
        assert!(parse_tsv("a\tx\t0.4\nb\ty\t0.5\na\tz\t0.1\n").is_err());
        assert!(parse_tsv("a\tx\n").is_err());
        assert!(parse_tsv("a\tx\tnan\n").is_err());
    }
}
