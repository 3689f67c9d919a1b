//! Class distributions and the fusion/metric primitives over them.

use std::fmt;

use crate::error::{Error, Result};

/// Posture classes C0..C9.
pub const NUM_CLASSES: usize = 10;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "safe driving",
    "text right",
    "phone right",
    "text left",
    "phone left",
    "adjust radio",
    "drinking",
    "reaching behind",
    "hair and makeup",
    "talking to passenger",
];

/// Probability floor applied inside the negative log-likelihood.
pub const NLL_FLOOR: f64 = 1e-15;

/// Tolerance on `|Σp - 1|` accepted by [`ClassDistribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Ten non-negative class probabilities summing to one.
#[derive(Clone, Copy, PartialEq)]
pub struct ClassDistribution([f64; NUM_CLASSES]);

impl ClassDistribution {
    pub fn new(probs: [f64; NUM_CLASSES]) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} is negative or not finite")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Scales non-negative finite weights to sum to one.
    pub fn normalized(weights: [f64; NUM_CLASSES]) -> Result<Self> {
        if weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Ok(Self(weights.map(|w| w / sum)))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_CLASSES] = probs.try_into().map_err(|_| Error::DimensionMismatch {
            expected: NUM_CLASSES,
            got: probs.len(),
        })?;
        Self::new(arr)
    }

    /// Caller guarantees the invariants (convex combinations of valid
    /// distributions, softmax outputs).
    pub(crate) fn from_raw(probs: [f64; NUM_CLASSES]) -> Self {
        Self(probs)
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn one_hot(class: usize) -> Self {
        let mut p = [0.0; NUM_CLASSES];
        p[class] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl fmt::Debug for ClassDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Non-negative ensemble weights, one per classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

/// Smallest weight that counts as "non-zero" for the normalizing denominator.
pub const MIN_ACTIVE_WEIGHT: f64 = 1e-9;

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidArgument(format!("weight {w} outside [0, 1]")));
        }
        if !weights.iter().any(|&w| w >= MIN_ACTIVE_WEIGHT) {
            return Err(Error::ZeroWeights);
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(1/N) Σ C_i`
pub fn majority_vote(outputs: &[ClassDistribution]) -> Result<ClassDistribution> {
    if outputs.is_empty() {
        return Err(Error::Empty("no classifier outputs to fuse"));
    }
    let mut acc = [0.0; NUM_CLASSES];
    for c in outputs {
        for (a, p) in acc.iter_mut().zip(c.probs()) {
            *a += p;
        }
    }
    let n = outputs.len() as f64;
    Ok(ClassDistribution::from_raw(acc.map(|a| a / n)))
}

/// `(Σ w_i C_i) / Σ w_i`. Takes raw weights so scaled chromosomes work too;
/// any non-negative vector with a positive sum is accepted.
pub fn weighted_vote(outputs: &[ClassDistribution], weights: &[f64]) -> Result<ClassDistribution> {
    if outputs.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: outputs.len(),
            right: weights.len(),
        });
    }
    if outputs.is_empty() {
        return Err(Error::Empty("no classifier outputs to fuse"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let mut acc = [0.0; NUM_CLASSES];
    for (c, &w) in outputs.iter().zip(weights) {
        for (a, p) in acc.iter_mut().zip(c.probs()) {
            *a += w * p;
        }
    }
    Ok(ClassDistribution::from_raw(acc.map(|a| a / total)))
}

fn check_lengths(predictions: &[ClassDistribution], truths: &[usize]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("no predictions"));
    }
    if let Some(t) = truths.iter().find(|&&t| t >= NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!("class id {t} out of range")));
    }
    Ok(())
}

/// Mean of `-ln(max(p_true, 1e-15))`.
pub fn nll(predictions: &[ClassDistribution], truths: &[usize]) -> Result<f64> {
    check_lengths(predictions, truths)?;
    let log_lik: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, &t)| p.prob(t).max(NLL_FLOOR).ln())
        .sum();
    // `0 - x` rather than `-x` so a perfect score is +0.0
    Ok((0.0 - log_lik) / predictions.len() as f64)
}

/// Percentage of predictions whose argmax equals the truth.
pub fn accuracy(predictions: &[ClassDistribution], truths: &[usize]) -> Result<f64> {
    check_lengths(predictions, truths)?;
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, &t)| p.argmax() == t)
        .count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}
