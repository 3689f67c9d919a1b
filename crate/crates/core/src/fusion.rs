//! Fusion strategies behind a common trait, looked up by name at runtime.
//!
//! A strategy spec is `name` or `name:argument`, e.g. `majority`,
//! `weights:ga.txt` or `mlp:mlp.txt`. New strategies can be added to a
//! [`FusionRegistry`] with [`FusionRegistry::register`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::ensemble::{majority_vote, weighted_vote, ClassDistribution, WeightVector};
use crate::error::{Error, Result};
use crate::mlp::MlpFuser;
use crate::records::PredictionLog;

pub trait FusionStrategy: Send + Sync {
    fn name(&self) -> &str;

    /// Combines one frame's classifier outputs.
    fn fuse(&self, outputs: &[ClassDistribution]) -> Result<ClassDistribution>;

    fn fuse_log(&self, log: &PredictionLog) -> Result<Vec<ClassDistribution>> {
        log.records.iter().map(|r| self.fuse(&r.outputs)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Majority;

impl FusionStrategy for Majority {
    fn name(&self) -> &str {
        "majority"
    }

    fn fuse(&self, outputs: &[ClassDistribution]) -> Result<ClassDistribution> {
        majority_vote(outputs)
    }
}

#[derive(Debug, Clone)]
pub struct Weighted {
    pub weights: WeightVector,
}

impl FusionStrategy for Weighted {
    fn name(&self) -> &str {
        "weighted"
    }

    fn fuse(&self, outputs: &[ClassDistribution]) -> Result<ClassDistribution> {
        weighted_vote(outputs, self.weights.as_slice())
    }
}

impl FusionStrategy for MlpFuser {
    fn name(&self) -> &str {
        "mlp"
    }

    fn fuse(&self, outputs: &[ClassDistribution]) -> Result<ClassDistribution> {
        MlpFuser::fuse(self, outputs)
    }
}

/// Builds a strategy from its optional argument and the log's classifier names.
pub type FusionFactory = fn(Option<&str>, &[String]) -> Result<Box<dyn FusionStrategy>>;

pub struct FusionRegistry {
    factories: BTreeMap<String, FusionFactory>,
}

impl Default for FusionRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl FusionRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `majority`, `weights:<file>` and `mlp:<file>`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("majority", build_majority);
        r.register("weights", build_weighted);
        r.register("mlp", build_mlp);
        r
    }

    pub fn register(&mut self, name: impl Into<String>, factory: FusionFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &str, classifiers: &[String]) -> Result<Box<dyn FusionStrategy>> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy(name.to_string()))?;
        factory(arg, classifiers)
    }
}

fn build_majority(arg: Option<&str>, _: &[String]) -> Result<Box<dyn FusionStrategy>> {
    if arg.is_some() {
        return Err(Error::InvalidArgument("`majority` takes no argument".into()));
    }
    Ok(Box::new(Majority))
}

fn build_weighted(arg: Option<&str>, classifiers: &[String]) -> Result<Box<dyn FusionStrategy>> {
    let path = arg.ok_or_else(|| Error::InvalidArgument("usage: weights:<file>".into()))?;
    let (names, weights) = load_weights(path)?;
    if names != classifiers {
        return Err(Error::InvalidArgument(format!(
            "weights file is for classifiers [{}] but the log has [{}]",
            names.join(", "),
            classifiers.join(", ")
        )));
    }
    Ok(Box::new(Weighted { weights }))
}

fn build_mlp(arg: Option<&str>, classifiers: &[String]) -> Result<Box<dyn FusionStrategy>> {
    let path = arg.ok_or_else(|| Error::InvalidArgument("usage: mlp:<file>".into()))?;
    let fuser = MlpFuser::load(path)?;
    if fuser.n_classifiers() != classifiers.len() {
        return Err(Error::InvalidArgument(format!(
            "MLP expects {} classifiers but the log has {}",
            fuser.n_classifiers(),
            classifiers.len()
        )));
    }
    Ok(Box::new(fuser))
}

const WEIGHTS_HEADER: &str = "#classifiers";

/// Header line `#classifiers<TAB>name...`, then one weight per line.
pub fn weights_to_text(names: &[String], weights: &WeightVector) -> Result<String> {
    if names.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: names.len(),
            right: weights.len(),
        });
    }
    let mut out = String::from(WEIGHTS_HEADER);
    for n in names {
        out.push('\t');
        out.push_str(n);
    }
    out.push('\n');
    for w in weights.as_slice() {
        let _ = writeln!(out, "{w}");
    }
    Ok(out)
}

pub fn weights_from_text(text: &str, path: &Path) -> Result<(Vec<String>, WeightVector)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty weights file"))?;
    let mut cols = header.split('\t');
    if cols.next() != Some(WEIGHTS_HEADER) {
        return Err(Error::parse(path, 1, format!("expected `{WEIGHTS_HEADER}` header")));
    }
    let names: Vec<String> = cols.map(|s| s.trim().to_string()).collect();
    let weights = lines
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, i + 1, format!("bad weight `{}`", l.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if weights.len() != names.len() {
        return Err(Error::parse(
            path,
            1,
            format!("{} classifier names but {} weights", names.len(), weights.len()),
        ));
    }
    Ok((names, WeightVector::new(weights)?))
}

pub fn save_weights(path: impl AsRef<Path>, names: &[String], weights: &WeightVector) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, weights_to_text(names, weights)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(Vec<String>, WeightVector)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    weights_from_text(&text, path)
}
