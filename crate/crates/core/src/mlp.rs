//! Learned fusion: a one-hidden-layer perceptron over the concatenated
//! classifier distributions, trained with mini-batch gradient descent on
//! NLL plus an L2 penalty on the weight matrices.
//!
//! The learning rate is per record: a mini-batch step moves by `lr` times
//! the batch-summed gradient, i.e. `lr · |batch|` times the gradient of the
//! mean loss.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{ClassDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::records::{PredictionLog, PredictionRecord};

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_LAMBDA: f64 = 1e-3;
/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;

const MODEL_MAGIC: &str = "fusionkit-mlp";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    pub final_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            initial_lr: 1e-2,
            final_lr: 1e-4,
            epochs: 30,
            batch_size: 50,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > self.final_lr && self.final_lr > 0.0) {
            return Err(Error::InvalidArgument("need initial_lr > final_lr > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Linear decay: `lr_e = initial - e · (initial - final) / epochs`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.initial_lr - epoch as f64 * (self.initial_lr - self.final_lr) / self.epochs as f64
    }
}

/// Concatenated classifier outputs with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDataset {
    pub inputs: Vec<Vec<f64>>,
    pub truths: Vec<usize>,
}

impl MlpDataset {
    pub fn from_log(log: &PredictionLog) -> Self {
        Self {
            inputs: log.records.iter().map(encode_record).collect(),
            truths: log.truths(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn encode_outputs(outputs: &[ClassDistribution]) -> Vec<f64> {
    outputs.iter().flat_map(|d| d.probs().iter().copied()).collect()
}

pub fn encode_record(record: &PredictionRecord) -> Vec<f64> {
    encode_outputs(&record.outputs)
}

/// Parameter-shaped gradients (or any parameter-shaped quantity).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpFuser {
    n_classifiers: usize,
    hidden: usize,
    /// `hidden × input_dim`, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `NUM_CLASSES × hidden`, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub reg_lambda: f64,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: [f64; NUM_CLASSES],
}

impl MlpFuser {
    pub fn zeros(n_classifiers: usize, hidden: usize, reg_lambda: f64) -> Self {
        let d = NUM_CLASSES * n_classifiers;
        Self {
            n_classifiers,
            hidden,
            w1: vec![0.0; hidden * d],
            b1: vec![0.0; hidden],
            w2: vec![0.0; NUM_CLASSES * hidden],
            b2: vec![0.0; NUM_CLASSES],
            reg_lambda,
        }
    }

    /// All parameters uniform in `[-scale, scale]`.
    pub fn random(n_classifiers: usize, hidden: usize, reg_lambda: f64, scale: f64, rng: &mut impl Rng) -> Self {
        let mut f = Self::zeros(n_classifiers, hidden, reg_lambda);
        for p in f.w1.iter_mut().chain(&mut f.b1).chain(&mut f.w2).chain(&mut f.b2) {
            *p = rng.gen_range(-scale..=scale);
        }
        f
    }

    pub fn input_dim(&self) -> usize {
        NUM_CLASSES * self.n_classifiers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_classifiers(&self) -> usize {
        self.n_classifiers
    }

    pub fn num_parameters(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn parameters(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::LengthMismatch {
                left: flat.len(),
                right: self.num_parameters(),
            });
        }
        let mut it = flat.iter().copied();
        for p in self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2).chain(&mut self.b2) {
            *p = it.next().expect("length checked");
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let d = self.input_dim();
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * d..(j + 1) * d];
                self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mut logits = [0.0; NUM_CLASSES];
        for (k, l) in logits.iter_mut().enumerate() {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            *l = self.b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        Activations { pre, hidden, logits }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ClassDistribution> {
        self.check_input(x)?;
        Ok(ClassDistribution::from_raw(softmax(&self.activations(x).logits)))
    }

    pub fn fuse(&self, outputs: &[ClassDistribution]) -> Result<ClassDistribution> {
        self.forward(&encode_outputs(outputs))
    }

    /// `λ (‖W1‖² + ‖W2‖²)`, biases excluded.
    pub fn regularizer(&self) -> f64 {
        self.reg_lambda * self.w1.iter().chain(&self.w2).map(|w| w * w).sum::<f64>()
    }

    /// Mean NLL over `batch` plus the regularizer.
    pub fn loss_on(&self, data: &MlpDataset, batch: &[usize]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("loss batch"));
        }
        let mut total = 0.0;
        for &i in batch {
            let x = &data.inputs[i];
            self.check_input(x)?;
            let a = self.activations(x);
            total += log_sum_exp(&a.logits) - a.logits[data.truths[i]];
        }
        Ok(total / batch.len() as f64 + self.regularizer())
    }

    pub fn loss(&self, data: &MlpDataset) -> Result<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        self.loss_on(data, &all)
    }

    /// Exact gradient of [`MlpFuser::loss_on`].
    pub fn gradient(&self, data: &MlpDataset, batch: &[usize]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        let d = self.input_dim();
        let h = self.hidden;
        let mut g = Gradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; h],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; NUM_CLASSES],
        };
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let x = &data.inputs[i];
            self.check_input(x)?;
            let a = self.activations(x);
            let mut dz2 = softmax(&a.logits);
            dz2[data.truths[i]] -= 1.0;
            dz2.iter_mut().for_each(|v| *v *= scale);

            let mut dh = vec![0.0; h];
            for k in 0..NUM_CLASSES {
                g.b2[k] += dz2[k];
                for j in 0..h {
                    g.w2[k * h + j] += dz2[k] * a.hidden[j];
                    dh[j] += self.w2[k * h + j] * dz2[k];
                }
            }
            for j in 0..h {
                if a.pre[j] <= 0.0 {
                    continue;
                }
                g.b1[j] += dh[j];
                let row = &mut g.w1[j * d..(j + 1) * d];
                for (gw, v) in row.iter_mut().zip(x) {
                    *gw += dh[j] * v;
                }
            }
        }
        let two_lambda = 2.0 * self.reg_lambda;
        for (gw, w) in g.w1.iter_mut().zip(&self.w1).chain(g.w2.iter_mut().zip(&self.w2)) {
            *gw += two_lambda * w;
        }
        Ok(g)
    }

    fn step(&mut self, g: &Gradients, lr: f64) {
        for (p, d) in self
            .w1
            .iter_mut()
            .zip(&g.w1)
            .chain(self.b1.iter_mut().zip(&g.b1))
            .chain(self.w2.iter_mut().zip(&g.w2))
            .chain(self.b2.iter_mut().zip(&g.b2))
        {
            *p -= lr * d;
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} 1");
        let _ = writeln!(out, "classifiers {}", self.n_classifiers);
        let _ = writeln!(out, "hidden {}", self.hidden);
        let _ = writeln!(out, "lambda {}", self.reg_lambda);
        for (tag, v) in [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)] {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{tag} {}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::parse(path, i + 1, format!("expected `{key}`")));
            }
            Ok((i + 1, parts.collect()))
        };
        let scalar = |(ln, v): (usize, Vec<&str>)| -> Result<f64> {
            match v[..] {
                [s] => s.parse().map_err(|_| Error::parse(path, ln, format!("bad number `{s}`"))),
                _ => Err(Error::parse(path, ln, "expected one value")),
            }
        };
        let version = scalar(field(MODEL_MAGIC)?)?;
        if version != 1.0 {
            return Err(Error::parse(path, 1, "unsupported model version"));
        }
        let n = scalar(field("classifiers")?)? as usize;
        let hidden = scalar(field("hidden")?)? as usize;
        let lambda = scalar(field("lambda")?)?;
        let mut fuser = Self::zeros(n, hidden, lambda);
        for key in ["w1", "b1", "w2", "b2"] {
            let (ln, vals) = field(key)?;
            let target = match key {
                "w1" => &mut fuser.w1,
                "b1" => &mut fuser.b1,
                "w2" => &mut fuser.w2,
                _ => &mut fuser.b2,
            };
            if vals.len() != target.len() {
                return Err(Error::parse(path, ln, format!("expected {} values, got {}", target.len(), vals.len())));
            }
            for (t, s) in target.iter_mut().zip(vals) {
                *t = s.parse().map_err(|_| Error::parse(path, ln, format!("bad number `{s}`")))?;
                if !t.is_finite() {
                    return Err(Error::parse(path, ln, "non-finite weight"));
                }
            }
        }
        Ok(fuser)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn log_sum_exp(z: &[f64; NUM_CLASSES]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub fuser: MlpFuser,
    /// Full-dataset loss before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

pub fn train_with_history(
    data: &MlpDataset,
    n_classifiers: usize,
    hidden: usize,
    schedule: &TrainSchedule,
    seed: u64,
    reg_lambda: f64,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("MLP training data"));
    }
    if hidden == 0 {
        return Err(Error::InvalidArgument("hidden width must be positive".into()));
    }
    if !(reg_lambda >= 0.0) {
        return Err(Error::InvalidArgument("reg_lambda must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fuser = MlpFuser::random(n_classifiers, hidden, reg_lambda, INIT_SCALE, &mut rng);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = vec![fuser.loss(data)?];
    for epoch in 0..schedule.epochs {
        let lr = schedule.learning_rate(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(schedule.batch_size) {
            let g = fuser.gradient(data, batch)?;
            fuser.step(&g, lr * batch.len() as f64);
        }
        loss_curve.push(fuser.loss(data)?);
    }
    Ok(TrainOutcome { fuser, loss_curve })
}

pub fn train(
    data: &MlpDataset,
    n_classifiers: usize,
    hidden: usize,
    schedule: &TrainSchedule,
    seed: u64,
    reg_lambda: f64,
) -> Result<MlpFuser> {
    Ok(train_with_history(data, n_classifiers, hidden, schedule, seed, reg_lambda)?.fuser)
}
