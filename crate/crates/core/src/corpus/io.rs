use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledExample, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Tsv => "tsv",
        })
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    text: Option<String>,
    label: Option<String>,
}

#[derive(Serialize)]
struct JsonOut<'a> {
    text: &'a str,
    label: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// Read a labeled corpus. Records keep file order; cleaning is not applied.
/// Blank lines are skipped. Line numbers in errors are 1-based.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Dataset> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut examples = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (text, label) = match format {
            CorpusFormat::Jsonl => {
                let rec: JsonRecord =
                    serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
                let text = rec.text.ok_or_else(|| malformed(line_no, "missing \"text\"".into()))?;
                let label = rec
                    .label
                    .ok_or_else(|| malformed(line_no, "missing \"label\"".into()))?;
                (text, label)
            }
            CorpusFormat::Tsv => {
                let (text, label) = line
                    .rsplit_once('\t')
                    .ok_or_else(|| malformed(line_no, "expected text<TAB>label".into()))?;
                (text.to_string(), label.trim_end_matches('\r').to_string())
            }
        };
        if text.trim().is_empty() {
            return Err(malformed(line_no, "empty text".into()));
        }
        if label.trim().is_empty() {
            return Err(malformed(line_no, "empty label".into()));
        }
        examples.push(LabeledExample::new(text, label));
    }
    if examples.is_empty() {
        return Err(Error::Empty(format!("{} holds no records", path.display())));
    }
    Ok(Dataset::new(examples, Provenance::Original))
}

/// Write `{"text", "label"}` JSONL. Text is the cleaned token sequence when
/// tokens are present, so re-ingesting the file reproduces the same tokens.
/// Each part is written in order with an optional per-record provenance tag.
pub fn save_jsonl(path: &Path, parts: &[(&Dataset, Option<Provenance>)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (dataset, provenance) in parts {
        for e in dataset.examples() {
            let joined;
            let text = if e.tokens.is_empty() {
                e.text.as_str()
            } else {
                joined = e.tokens.join(" ");
                joined.as_str()
            };
            let rec = JsonOut {
                text,
                label: &e.label,
                provenance: *provenance,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_jsonl_in_order() {
        let f = write(
            r#"{"text": "you are great", "label": "normal"}
{"text": "buy now cheap", "label": "spam"}
{"text": "shut up idiot", "label": "abusive"}

{"text": "go back home", "label": "hateful", "id": 4}
"#,
        );
        let ds = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.label_set().len(), 4);
        assert_eq!(ds.examples()[1].label, "spam");
        assert!(ds.examples()[0].tokens.is_empty());
    }

    #[test]
    fn missing_label_names_line() {
        let f = write("{\"text\": \"a\", \"label\": \"x\"}\n{\"text\": \"b\"}\n");
        match load_corpus(f.path(), CorpusFormat::Jsonl) {
            Err(Error::MalformedRecord { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tsv_and_errors() {
        let f = write("hello world\tnormal\nbad line without tab\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Tsv),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
        let f = write("a b\tx\nc\ty\n");
        let ds = load_corpus(f.path(), CorpusFormat::Tsv).unwrap();
        assert_eq!(ds.labels(), ["x", "y"]);
        let empty = write("\n\n");
        assert!(matches!(load_corpus(empty.path(), CorpusFormat::Tsv), Err(Error::Empty(_))));
        assert!(matches!("csv".parse::<CorpusFormat>(), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn saved_jsonl_reloads() {
        let ds = Dataset::new(
            vec![
                LabeledExample::from_tokens(vec!["a".into(), "b".into()], "x"),
                LabeledExample::new("raw \"quoted\" text", "y"),
            ],
            Provenance::Original,
        );
        let out = tempfile::NamedTempFile::new().unwrap();
        save_jsonl(out.path(), &[(&ds, Some(Provenance::Generated))]).unwrap();
        let text = std::fs::read_to_string(out.path()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"provenance\":\"generated\""));
        let back = load_corpus(out.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(back.examples()[0].text, "a b");
        assert_eq!(back.examples()[1].text, "raw \"quoted\" text");
    }
}
