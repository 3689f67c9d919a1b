//! Per-frame prediction records and their tab-separated log format.
//!
//! ```text
//! frame_id  session_id  timestamp_s  true_class  <clf_1>  ...  <clf_N>
//! f000001   s01         0.0333       2           p0,p1,...,p9  ...
//! ```
//!
//! The header names the classifiers; every record carries one 10-vector per
//! classifier, comma separated, in header order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::ensemble::{ClassDistribution, NUM_CLASSES};
use crate::error::{Error, Result};

/// Sums further than this from one are rejected on load.
pub const LOAD_SUM_TOLERANCE: f64 = 1e-3;

const FIXED_COLUMNS: [&str; 4] = ["frame_id", "session_id", "timestamp_s", "true_class"];

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub frame_id: String,
    pub session_id: String,
    pub timestamp_s: f64,
    pub true_class: usize,
    /// One distribution per classifier, in the owning log's classifier order.
    pub outputs: Vec<ClassDistribution>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionLog {
    pub classifiers: Vec<String>,
    pub records: Vec<PredictionRecord>,
}

impl PredictionLog {
    pub fn new(classifiers: Vec<String>, records: Vec<PredictionRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.outputs.len() != classifiers.len() {
                return Err(Error::Schema {
                    line: i + 2,
                    msg: format!("{} outputs for {} classifiers", r.outputs.len(), classifiers.len()),
                });
            }
        }
        Ok(Self { classifiers, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classifiers(&self) -> usize {
        self.classifiers.len()
    }

    pub fn truths(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.true_class).collect()
    }

    /// Outputs of classifier `k` across all records.
    pub fn column(&self, k: usize) -> Vec<ClassDistribution> {
        self.records.iter().map(|r| r.outputs[k]).collect()
    }

    /// Same classifiers, a subset of records.
    pub fn with_records(&self, records: Vec<PredictionRecord>) -> Self {
        Self {
            classifiers: self.classifiers.clone(),
            records,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
        for name in &self.classifiers {
            check_token(name, "classifier name")?;
            header.push(name);
        }
        out.push_str(&header.join("\t"));
        out.push('\n');
        for r in &self.records {
            check_token(&r.frame_id, "frame id")?;
            check_token(&r.session_id, "session id")?;
            let _ = write!(out, "{}\t{}\t{}\t{}", r.frame_id, r.session_id, r.timestamp_s, r.true_class);
            for d in &r.outputs {
                out.push('\t');
                let cells: Vec<String> = d.probs().iter().map(|p| p.to_string()).collect();
                out.push_str(&cells.join(","));
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(Error::parse(path, 1, format!("header must start with {}", FIXED_COLUMNS.join(" "))));
        }
        let classifiers: Vec<String> = cols[FIXED_COLUMNS.len()..].iter().map(|s| s.to_string()).collect();
        if classifiers.is_empty() {
            return Err(Error::parse(path, 1, "header declares no classifiers"));
        }
        let expected_cols = FIXED_COLUMNS.len() + classifiers.len();

        let mut records = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != expected_cols {
                return Err(Error::parse(path, ln, format!("expected {expected_cols} fields, got {}", fields.len())));
            }
            let timestamp_s: f64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, ln, format!("bad timestamp `{}`", fields[2])))?;
            if !timestamp_s.is_finite() {
                return Err(Error::parse(path, ln, "timestamp must be finite"));
            }
            let true_class: usize = fields[3]
                .parse()
                .ok()
                .filter(|&c| c < NUM_CLASSES)
                .ok_or_else(|| Error::parse(path, ln, format!("bad class id `{}`", fields[3])))?;
            let outputs = fields[4..]
                .iter()
                .map(|cell| parse_distribution(cell).map_err(|msg| Error::Schema { line: ln, msg }))
                .collect::<Result<Vec<_>>>()?;
            records.push(PredictionRecord {
                frame_id: fields[0].to_string(),
                session_id: fields[1].to_string(),
                timestamp_s,
                true_class,
                outputs,
            });
        }
        Self::new(classifiers, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!("{what} `{s}` is empty or contains tabs/newlines")));
    }
    Ok(())
}

fn parse_distribution(cell: &str) -> std::result::Result<ClassDistribution, String> {
    let values: Vec<f64> = cell
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad probability `{v}`")))
        .collect::<std::result::Result<_, _>>()?;
    let probs: [f64; NUM_CLASSES] = values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {NUM_CLASSES} probabilities, got {}", v.len()))?;
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("probabilities must be finite and non-negative".into());
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > LOAD_SUM_TOLERANCE {
        return Err(format!("probabilities sum to {sum}"));
    }
    // leave rounding-level deviations alone so written logs reload bit-exact
    if (sum - 1.0).abs() > 1e-12 {
        ClassDistribution::normalized(probs).map_err(|e| e.to_string())
    } else {
        ClassDistribution::new(probs).map_err(|e| e.to_string())
    }
}
