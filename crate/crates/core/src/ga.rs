//! Genetic search for ensemble weights.
//!
//! A chromosome holds one weight per classifier. Fitness is the negated NLL of
//! the weighted vote on a random subsample of the records, redrawn every
//! generation. Each generation keeps the fittest fraction as parents, adds a
//! few random survivors, appends mutated copies of some parents and refills
//! the population with uniform crossover. After the last generation every
//! member of the final population is scored on the full dataset and the best
//! one is returned.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{nll, weighted_vote, ClassDistribution, WeightVector, MIN_ACTIVE_WEIGHT};
use crate::error::{Error, Result};
use crate::records::PredictionLog;

/// Standard deviation of the Gaussian perturbation applied by mutation.
pub const MUTATION_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    /// Top share of the population kept as parents.
    pub elite_fraction: f64,
    /// Share of the non-elite remainder drawn at random as extra parents.
    pub extra_parent_fraction: f64,
    /// Share of the parents that get a mutated copy.
    pub mutation_fraction: f64,
    pub generations: usize,
    /// Share of the records scored per fitness evaluation.
    pub fitness_subsample: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            elite_fraction: 0.20,
            extra_parent_fraction: 0.10,
            mutation_fraction: 0.05,
            generations: 5,
            fitness_subsample: 0.5,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be in (0, 1), got {v}")))
            }
        };
        if self.population_size < 4 {
            return Err(Error::InvalidArgument("population_size must be at least 4".into()));
        }
        if self.generations < 1 {
            return Err(Error::InvalidArgument("generations must be at least 1".into()));
        }
        frac("elite_fraction", self.elite_fraction)?;
        frac("extra_parent_fraction", self.extra_parent_fraction)?;
        frac("mutation_fraction", self.mutation_fraction)?;
        // 1.0 is allowed here: it selects the full dataset
        if !(self.fitness_subsample > 0.0 && self.fitness_subsample <= 1.0) {
            return Err(Error::InvalidArgument("fitness_subsample must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population_size as f64).ceil() as usize).min(self.population_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightChromosome {
    pub genes: Vec<f64>,
    /// `None` until evaluated.
    pub fitness: Option<f64>,
}

impl WeightChromosome {
    pub fn new(genes: Vec<f64>) -> Self {
        Self { genes, fitness: None }
    }

    pub fn weights(&self) -> Result<WeightVector> {
        WeightVector::new(self.genes.clone())
    }
}

/// What happened in one generation, for inspection and reproducibility checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub subsample_seed: u64,
    /// Subsample fitness of each member of the incoming population.
    pub fitness: Vec<f64>,
    /// Population indices kept as parents, elites first.
    pub parents: Vec<usize>,
    /// Population handed to the next generation.
    pub next_population: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOutcome {
    /// Best member of the final population, fitness measured on all records.
    pub best: WeightChromosome,
    /// Final population with full-data fitness.
    pub final_population: Vec<WeightChromosome>,
    pub trace: Vec<GenerationTrace>,
}

fn init_with(rng: &mut ChaCha8Rng, size: usize, n_classifiers: usize) -> Vec<WeightChromosome> {
    let mut pop = Vec::with_capacity(size);
    pop.push(WeightChromosome::new(vec![1.0; n_classifiers]));
    while pop.len() < size {
        pop.push(WeightChromosome::new((0..n_classifiers).map(|_| rng.gen::<f64>()).collect()));
    }
    pop
}

/// First chromosome is all ones (the plain average); the rest are uniform in
/// `[0, 1]` per gene.
pub fn init_population(cfg: &GaConfig, n_classifiers: usize) -> Result<Vec<WeightChromosome>> {
    cfg.validate()?;
    if n_classifiers == 0 {
        return Err(Error::InvalidArgument("need at least one classifier".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(init_with(&mut rng, cfg.population_size, n_classifiers))
}

/// Record indices used by a fitness evaluation: all of them when
/// `subsample >= 1`, otherwise `⌈subsample · n⌉` drawn without replacement.
pub fn subsample_indices(n: usize, subsample: f64, seed: u64) -> Vec<usize> {
    if subsample >= 1.0 {
        return (0..n).collect();
    }
    let k = ((subsample * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();
    picks
}

fn fitness_on(genes: &[f64], log: &PredictionLog, indices: &[usize]) -> Result<f64> {
    if !genes.iter().any(|&g| g >= MIN_ACTIVE_WEIGHT) {
        return Ok(f64::NEG_INFINITY);
    }
    let fused: Vec<ClassDistribution> = indices
        .iter()
        .map(|&i| weighted_vote(&log.records[i].outputs, genes))
        .collect::<Result<_>>()?;
    let truths: Vec<usize> = indices.iter().map(|&i| log.records[i].true_class).collect();
    Ok(0.0 - nll(&fused, &truths)?)
}

/// Negated NLL of the weighted vote on a seeded subsample. All-zero
/// chromosomes score `-inf`.
pub fn fitness(genes: &[f64], log: &PredictionLog, subsample: f64, seed: u64) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Empty("fitness dataset"));
    }
    if genes.len() != log.num_classifiers() {
        return Err(Error::LengthMismatch {
            left: genes.len(),
            right: log.num_classifiers(),
        });
    }
    fitness_on(genes, log, &subsample_indices(log.len(), subsample, seed))
}

fn score_all(pop: &[WeightChromosome], log: &PredictionLog, indices: &[usize]) -> Result<Vec<f64>> {
    pop.par_iter().map(|c| fitness_on(&c.genes, log, indices)).collect()
}

/// Descending by fitness; equal scores keep population order.
fn rank(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
    order
}

fn next_generation(
    cfg: &GaConfig,
    rng: &mut ChaCha8Rng,
    pop: &[WeightChromosome],
    fitness: &[f64],
) -> (Vec<usize>, Vec<WeightChromosome>) {
    let size = cfg.population_size;
    let order = rank(fitness);
    let n_elite = cfg.elite_count();
    let rest = &order[n_elite..];
    let n_extra = ((cfg.extra_parent_fraction * rest.len() as f64).ceil() as usize).min(rest.len());

    let mut parents: Vec<usize> = order[..n_elite].to_vec();
    parents.extend(index::sample(rng, rest.len(), n_extra).into_iter().map(|i| rest[i]));

    let mut pool: Vec<Vec<f64>> = parents.iter().map(|&i| pop[i].genes.clone()).collect();
    let n_mut = ((cfg.mutation_fraction * parents.len() as f64).ceil() as usize).min(parents.len());
    let noise = Normal::new(0.0, MUTATION_SIGMA).expect("positive sigma");
    for m in index::sample(rng, parents.len(), n_mut).into_vec() {
        let mut genes = pool[m].clone();
        let g = rng.gen_range(0..genes.len());
        genes[g] = (genes[g] + noise.sample(rng)).clamp(0.0, 1.0);
        pool.push(genes);
    }

    let n_pool = pool.len();
    let mut next = pool.clone();
    while next.len() < size {
        let pair = index::sample(rng, n_pool, 2);
        let (a, b) = (&pool[pair.index(0)], &pool[pair.index(1)]);
        let child = a
            .iter()
            .zip(b)
            .map(|(&ga, &gb)| if rng.gen::<bool>() { ga } else { gb })
            .collect();
        next.push(child);
    }
    next.truncate(size);
    (parents, next.into_iter().map(WeightChromosome::new).collect())
}

pub fn evolve(cfg: &GaConfig, log: &PredictionLog) -> Result<EvolveOutcome> {
    cfg.validate()?;
    if log.is_empty() {
        return Err(Error::Empty("GA training log"));
    }
    let n_classifiers = log.num_classifiers();
    if n_classifiers == 0 {
        return Err(Error::InvalidArgument("log declares no classifiers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop = init_with(&mut rng, cfg.population_size, n_classifiers);
    let mut trace = Vec::with_capacity(cfg.generations);

    for _ in 0..cfg.generations {
        let subsample_seed: u64 = rng.gen();
        let indices = subsample_indices(log.len(), cfg.fitness_subsample, subsample_seed);
        let scores = score_all(&pop, log, &indices)?;
        let (parents, next) = next_generation(cfg, &mut rng, &pop, &scores);
        trace.push(GenerationTrace {
            subsample_seed,
            fitness: scores,
            parents,
            next_population: next.iter().map(|c| c.genes.clone()).collect(),
        });
        pop = next;
    }

    let all: Vec<usize> = (0..log.len()).collect();
    let full = score_all(&pop, log, &all)?;
    for (c, f) in pop.iter_mut().zip(&full) {
        c.fitness = Some(*f);
    }
    let best_idx = rank(&full)[0];
    Ok(EvolveOutcome {
        best: pop[best_idx].clone(),
        final_population: pop,
        trace,
    })
}
