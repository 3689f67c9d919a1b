//! Train/test partitioning, confusion matrices and metric reports.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{accuracy, nll, ClassDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::records::PredictionLog;

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Shuffle all records and hold out `test_fraction` of them.
    Random { test_fraction: f64, seed: u64 },
    /// Hold out every record of the listed sessions.
    BySession { test_sessions: Vec<String> },
}

impl FromStr for SplitSpec {
    type Err = Error;

    /// `random:<fraction>:<seed>` or `sessions:<file>` where the file lists
    /// one held-out session id per line.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("split must be random:<fraction>:<seed> or sessions:<file>, got `{s}`"));
        match s.split_once(':') {
            Some(("random", rest)) => {
                let (f, seed) = rest.split_once(':').ok_or_else(bad)?;
                let test_fraction: f64 = f.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&test_fraction) {
                    return Err(bad());
                }
                Ok(SplitSpec::Random {
                    test_fraction,
                    seed: seed.parse().map_err(|_| bad())?,
                })
            }
            Some(("sessions", file)) => {
                let path = Path::new(file);
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Ok(SplitSpec::BySession {
                    test_sessions: text
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty() && !l.starts_with('#'))
                        .map(str::to_string)
                        .collect(),
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Disjoint, covering `(train, test)` partition. Both halves keep the input
/// record order.
pub fn split(log: &PredictionLog, spec: &SplitSpec) -> Result<(PredictionLog, PredictionLog)> {
    let n = log.len();
    let mut is_test = vec![false; n];
    match spec {
        SplitSpec::Random { test_fraction, seed } => {
            if !(0.0..=1.0).contains(test_fraction) {
                return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1]")));
            }
            let n_test = (test_fraction * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            for &i in &order[n - n_test..] {
                is_test[i] = true;
            }
        }
        SplitSpec::BySession { test_sessions } => {
            let known: HashSet<&str> = log.records.iter().map(|r| r.session_id.as_str()).collect();
            if let Some(missing) = test_sessions.iter().find(|s| !known.contains(s.as_str())) {
                return Err(Error::UnknownSession(missing.clone()));
            }
            let held: HashSet<&str> = test_sessions.iter().map(String::as_str).collect();
            for (flag, r) in is_test.iter_mut().zip(&log.records) {
                *flag = held.contains(r.session_id.as_str());
            }
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in log.records.iter().zip(is_test) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((log.with_records(train), log.with_records(test)))
}

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub row_percent: [[f64; NUM_CLASSES]; NUM_CLASSES],
    /// Actual classes with no samples; their percentage rows are all zero.
    pub empty_rows: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Percentage of samples on the diagonal.
    pub fn accuracy(&self) -> f64 {
        100.0 * self.trace() as f64 / self.total().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual");
        for c in 0..NUM_CLASSES {
            let _ = write!(out, ",C{c}");
        }
        out.push_str(",samples\n");
        for (a, row) in self.row_percent.iter().enumerate() {
            let _ = write!(out, "C{a}");
            for v in row {
                let _ = write!(out, ",{v:.2}");
            }
            let n: u64 = self.counts[a].iter().sum();
            let _ = writeln!(out, ",{n}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:>8}", "actual");
        for c in 0..NUM_CLASSES {
            let _ = write!(out, "{:>8}", format!("C{c}"));
        }
        out.push('\n');
        for (a, row) in self.row_percent.iter().enumerate() {
            let flag = if self.empty_rows.contains(&a) { "*" } else { "" };
            let _ = write!(out, "{:>8}", format!("C{a}{flag}"));
            for v in row {
                let _ = write!(out, "{v:>8.2}");
            }
            out.push('\n');
        }
        if !self.empty_rows.is_empty() {
            out.push_str("* no samples of this class\n");
        }
        out
    }
}

pub fn confusion(predictions: &[ClassDistribution], truths: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (p, &t) in predictions.iter().zip(truths) {
        if t >= NUM_CLASSES {
            return Err(Error::InvalidArgument(format!("class id {t} out of range")));
        }
        counts[t][p.argmax()] += 1;
    }
    let mut row_percent = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    let mut empty_rows = Vec::new();
    for a in 0..NUM_CLASSES {
        let n: u64 = counts[a].iter().sum();
        if n == 0 {
            empty_rows.push(a);
            continue;
        }
        for p in 0..NUM_CLASSES {
            row_percent[a][p] = 100.0 * counts[a][p] as f64 / n as f64;
        }
    }
    Ok(ConfusionMatrix {
        counts,
        row_percent,
        empty_rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub split: String,
    pub model: String,
    pub samples: usize,
    pub nll: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub fusion: String,
    pub rows: Vec<MetricRow>,
    /// Split the confusion matrix was computed on.
    pub confusion_split: String,
    pub confusion: ConfusionMatrix,
}

fn rows_for(split: &str, log: &PredictionLog, strategy: &dyn FusionStrategy) -> Result<(Vec<MetricRow>, Vec<ClassDistribution>)> {
    let truths = log.truths();
    let mut rows = Vec::new();
    for (k, name) in log.classifiers.iter().enumerate() {
        let preds = log.column(k);
        rows.push(MetricRow {
            split: split.into(),
            model: name.clone(),
            samples: log.len(),
            nll: nll(&preds, &truths)?,
            accuracy: accuracy(&preds, &truths)?,
        });
    }
    let fused = strategy.fuse_log(log)?;
    rows.push(MetricRow {
        split: split.into(),
        model: format!("fused:{}", strategy.name()),
        samples: log.len(),
        nll: nll(&fused, &truths)?,
        accuracy: accuracy(&fused, &truths)?,
    });
    Ok((rows, fused))
}

/// Per-classifier and fused NLL/accuracy on each non-empty split, plus the
/// fused confusion matrix on the test split (train when test is empty).
pub fn report(train: &PredictionLog, test: &PredictionLog, strategy: &dyn FusionStrategy) -> Result<EvaluationReport> {
    let mut rows = Vec::new();
    let mut confusion_source = None;
    for (name, log) in [("train", train), ("test", test)] {
        if log.is_empty() {
            continue;
        }
        let (r, fused) = rows_for(name, log, strategy)?;
        rows.extend(r);
        confusion_source = Some((name, fused, log.truths()));
    }
    let (split, fused, truths) = confusion_source.ok_or(Error::Empty("both splits are empty"))?;
    Ok(EvaluationReport {
        fusion: strategy.name().to_string(),
        rows,
        confusion_split: split.to_string(),
        confusion: confusion(&fused, &truths)?,
    })
}

impl EvaluationReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("split,model,samples,nll,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.4},{:.2}", r.split, r.model, r.samples, r.nll, r.accuracy);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut out = format!("fusion: {}\n\n", self.fusion);
        let _ = writeln!(out, "{:<6} {:<width$} {:>8} {:>10} {:>12}", "split", "model", "samples", "Loss (NLL)", "Accuracy (%)");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:<width$} {:>8} {:>10.4} {:>12.2}",
                r.split, r.model, r.samples, r.nll, r.accuracy
            );
        }
        let _ = writeln!(out, "\nconfusion matrix ({} split, row %):", self.confusion_split);
        out.push_str(&self.confusion.to_text());
        out
    }

    /// Writes `metrics.csv`, `confusion.csv` and `report.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("metrics.csv", self.metrics_csv()),
            ("confusion.csv", self.confusion.to_csv()),
            ("report.txt", self.to_text()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
