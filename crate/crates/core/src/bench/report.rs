use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::classify::Family;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExperimentKind {
    Starvation,
    Ratio,
    Agnostic,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Starvation => "starvation",
            ExperimentKind::Ratio => "ratio",
            ExperimentKind::Agnostic => "agnostic",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "starvation" => Ok(ExperimentKind::Starvation),
            "ratio" => Ok(ExperimentKind::Ratio),
            "agnostic" => Ok(ExperimentKind::Agnostic),
            other => Err(Error::InvalidArgument(format!("unknown experiment {other:?}"))),
        }
    }
}

/// Which training set a cell's classifier saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    /// Original data only.
    Baseline,
    /// Original data plus steered generations.
    Boosted,
    /// Original data plus unsteered generations.
    Control,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Baseline => "baseline",
            Arm::Boosted => "boosted",
            Arm::Control => "control",
        })
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "boosted" => Ok(Arm::Boosted),
            "control" => Ok(Arm::Control),
            other => Err(Error::InvalidArgument(format!("unknown arm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatResult {
    pub seed: u64,
    pub macro_f1: f64,
    /// Against the cell's reference (baseline arm, or the ratio grid's first cell).
    pub delta_f1: Option<f64>,
    pub n_original: usize,
    pub n_generated: usize,
}

/// One grid point and arm, with a result per repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub family: Family,
    /// Numeric position on the grid axis; cells sort by it.
    pub axis_value: f64,
    /// How the axis value is printed, e.g. `0.05` or `70/10`.
    pub axis_label: String,
    pub arm: Arm,
    pub repeats: Vec<RepeatResult>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl Cell {
    pub fn scores(&self) -> Vec<f64> {
        self.repeats.iter().map(|r| r.macro_f1).collect()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.scores())
    }

    pub fn std(&self) -> f64 {
        sample_std(&self.scores())
    }

    /// Mean delta over repeats that carry one.
    pub fn mean_delta(&self) -> Option<f64> {
        let d: Vec<f64> = self.repeats.iter().filter_map(|r| r.delta_f1).collect();
        (!d.is_empty()).then(|| mean(&d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub cells: Vec<Cell>,
    /// The full configuration as `key = value` text.
    pub config_echo: String,
    /// Named SHA-256 digests: the test split and every cell's lexicons.
    pub checksums: BTreeMap<String, String>,
}

impl ExperimentReport {
    /// Sorts cells by family, axis value and arm, and repeats by seed.
    pub fn canonicalize(&mut self) {
        for c in &mut self.cells {
            c.repeats.sort_by_key(|r| r.seed);
        }
        self.cells.sort_by(|a, b| {
            (a.family as u8)
                .cmp(&(b.family as u8))
                .then(a.axis_value.total_cmp(&b.axis_value))
                .then(a.arm.cmp(&b.arm))
        });
    }

    pub fn cell(&self, family: Family, axis_label: &str, arm: Arm) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.family == family && c.axis_label == axis_label && c.arm == arm)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub const CSV_HEADER: [&str; 11] = [
    "experiment",
    "family",
    "axis",
    "arm",
    "row",
    "seed",
    "macro_f1",
    "std",
    "delta_f1",
    "n_original",
    "n_generated",
];

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// One row per cell and repeat, then a `mean` row per cell. Floats are
/// written in shortest round-trip form.
pub fn render_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let kind = report.kind.to_string();
    for c in &report.cells {
        let family = c.family.to_string();
        let arm = c.arm.to_string();
        for r in &c.repeats {
            w.write_record([
                kind.as_str(),
                &family,
                &c.axis_label,
                &arm,
                "repeat",
                &r.seed.to_string(),
                &r.macro_f1.to_string(),
                "",
                &opt(r.delta_f1),
                &r.n_original.to_string(),
                &r.n_generated.to_string(),
            ])?;
        }
        if !c.repeats.is_empty() {
            w.write_record([
                kind.as_str(),
                &family,
                &c.axis_label,
                &arm,
                "mean",
                "",
                &c.mean().to_string(),
                &c.std().to_string(),
                &opt(c.mean_delta()),
                "",
                "",
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// An aggregate (`mean`) row read back from a report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub experiment: ExperimentKind,
    pub family: Family,
    pub axis: String,
    pub arm: Arm,
    pub mean: f64,
    pub std: f64,
    pub delta: Option<f64>,
}

pub fn parse_csv_aggregates(text: &str) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected report header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Config(format!("bad number {s:?}"))) };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if &rec[4] != "mean" {
            continue;
        }
        out.push(AggregateRow {
            experiment: rec[0].parse()?,
            family: rec[1].parse()?,
            axis: rec[2].to_string(),
            arm: rec[3].parse()?,
            mean: num(&rec[6])?,
            std: num(&rec[7])?,
            delta: if rec[8].is_empty() { None } else { Some(num(&rec[8])?) },
        });
    }
    Ok(out)
}

/// Aggregate table per family.
pub fn render_markdown(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} experiment\n", report.kind);
    if let Some(split) = report.checksums.get("split/test") {
        let _ = writeln!(s, "Test split sha256: `{split}`\n");
    }
    let mut families: Vec<Family> = report.cells.iter().map(|c| c.family).collect();
    families.dedup();
    if families.is_empty() {
        let _ = writeln!(s, "No cells.");
    }
    for family in families {
        let _ = writeln!(s, "## {family}\n");
        let _ = writeln!(s, "| axis | arm | repeats | macro-F1 mean | std | mean delta |");
        let _ = writeln!(s, "|---|---|---:|---:|---:|---:|");
        for c in report.cells.iter().filter(|c| c.family == family) {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} | {:.4} | {} |",
                c.axis_label,
                c.arm,
                c.repeats.len(),
                c.mean(),
                c.std(),
                c.mean_delta().map_or("-".to_string(), |d| format!("{d:+.4}"))
            );
        }
        s.push('\n');
    }
    s
}

/// Writes `report.csv`, `report.md`, `config_echo.txt` and `checksums.txt`
/// into `dir`. The checksum file lists the recorded digests followed by the
/// digests of the three other files.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("report.csv", render_csv(report)?),
        ("report.md", render_markdown(report)),
        ("config_echo.txt", report.config_echo.clone()),
    ];
    let mut sums = String::new();
    for (name, digest) in &report.checksums {
        let _ = writeln!(sums, "{digest}  {name}");
    }
    let mut paths = Vec::new();
    for (name, content) in &files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(sums, "{}  {name}", sha256_hex(content.as_bytes()));
        paths.push(path);
    }
    let path = dir.join("checksums.txt");
    std::fs::write(&path, sums).map_err(|e| Error::io(&path, e))?;
    paths.push(path);
    Ok(paths)
}
