//! Real-valued genetic search and the genome layout for sleep hyperparameters.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::metrics::{self, PredictionBatch};
use crate::nn::DenseNetwork;
use crate::sleep::{sleep_prepared, InputStatistics, LayerScales, SleepConfig};

/// A candidate: one real per gene, each inside its `(low, high)` bound.
pub type Genome = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub elite_count: usize,
    pub tournament_size: usize,
    /// Per-gene probability of Gaussian mutation.
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of the gene's range.
    pub mutation_sigma: f64,
    /// Mutation width shrinks as `(1 - (g - 1) / generations)^mutation_decay`
    /// in generation `g`; zero keeps it constant.
    pub mutation_decay: f64,
    /// Probability that a child is produced by uniform crossover.
    pub crossover_rate: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 40,
            generations: 50,
            elite_count: 2,
            tournament_size: 3,
            mutation_rate: 0.2,
            mutation_sigma: 0.1,
            mutation_decay: 2.0,
            crossover_rate: 0.7,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(config("population size must be at least 2"));
        }
        if self.elite_count >= self.population_size {
            return Err(config("elite count must be below the population size"));
        }
        if self.tournament_size == 0 {
            return Err(config("tournament size must be at least 1"));
        }
        for (name, p) in [
            ("mutation rate", self.mutation_rate),
            ("crossover rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.mutation_decay >= 0.0 && self.mutation_decay.is_finite()) {
            return Err(config("mutation decay must be nonnegative"));
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return Err(config("mutation sigma must be nonnegative"));
        }
        Ok(())
    }
}

/// Scores a whole population at once, returning one fitness per genome in order.
///
/// Implementations may evaluate in parallel; the search only depends on the
/// returned values, never on evaluation order.
pub trait PopulationEvaluator {
    fn evaluate(&mut self, population: &[Genome]) -> Vec<f64>;
}

/// Sequential evaluation of a per-genome fitness function.
pub struct Sequential<F>(pub F);

impl<F: FnMut(&[f64]) -> f64> PopulationEvaluator for Sequential<F> {
    fn evaluate(&mut self, population: &[Genome]) -> Vec<f64> {
        population.iter().map(|g| (self.0)(g)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best fitness seen so far, including earlier generations.
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Genome,
    pub best_fitness: f64,
    /// One entry for the initial population and one per bred generation.
    pub history: Vec<GenerationStats>,
    pub final_population: Vec<Genome>,
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(config("genome needs at least one gene"));
    }
    for (g, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(config(format!("gene {g} has invalid bounds ({lo}, {hi})")));
        }
    }
    Ok(())
}

fn sanitize(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::NEG_INFINITY
    }
}

/// Maximises fitness with elitism, tournament selection, uniform crossover
/// and clamped Gaussian mutation.
///
/// `initial` replaces the uniform random starting population when given.
pub fn ga_search<E: PopulationEvaluator>(
    evaluator: &mut E,
    bounds: &[(f64, f64)],
    cfg: &GaConfig,
    initial: Option<Vec<Genome>>,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    check_bounds(bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut population: Vec<Genome> = match initial {
        Some(pop) => {
            if pop.len() != cfg.population_size {
                return Err(config("initial population has the wrong size"));
            }
            if pop.iter().any(|g| g.len() != bounds.len()) {
                return Err(config("initial genome has the wrong gene count"));
            }
            pop.into_iter().map(|g| clamp_genome(g, bounds)).collect()
        }
        None => (0..cfg.population_size)
            .map(|_| {
                bounds
                    .iter()
                    .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                    .collect()
            })
            .collect(),
    };

    let mut fitness: Vec<f64> = evaluator.evaluate(&population).into_iter().map(sanitize).collect();
    let mut best_idx = rank(&fitness)[0];
    let mut best = (population[best_idx].clone(), fitness[best_idx]);
    let mut history = Vec::with_capacity(cfg.generations + 1);
    history.push(stats(0, best.1, &fitness));

    for generation in 1..=cfg.generations {
        let order = rank(&fitness);
        let mut next: Vec<Genome> = order[..cfg.elite_count]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        let progress = (generation - 1) as f64 / cfg.generations as f64;
        let width = cfg.mutation_sigma * libm::pow(1.0 - progress, cfg.mutation_decay);
        while next.len() < cfg.population_size {
            let a = tournament(&fitness, cfg.tournament_size, &mut rng);
            let mut child = population[a].clone();
            if rng.random::<f64>() < cfg.crossover_rate {
                let b = tournament(&fitness, cfg.tournament_size, &mut rng);
                for (c, &other) in child.iter_mut().zip(&population[b]) {
                    if rng.random::<bool>() {
                        *c = other;
                    }
                }
            }
            for (c, &(lo, hi)) in child.iter_mut().zip(bounds) {
                if rng.random::<f64>() < cfg.mutation_rate {
                    let sd = width * (hi - lo);
                    if sd > 0.0 {
                        let n = Normal::new(0.0, sd).map_err(|_| config("bad mutation sigma"))?;
                        *c = (*c + n.sample(&mut rng)).clamp(lo, hi);
                    }
                }
            }
            next.push(child);
        }
        population = next;
        fitness = evaluator.evaluate(&population).into_iter().map(sanitize).collect();
        best_idx = rank(&fitness)[0];
        if fitness[best_idx] > best.1 {
            best = (population[best_idx].clone(), fitness[best_idx]);
        }
        history.push(stats(generation, best.1, &fitness));
    }

    Ok(SearchOutcome {
        best: best.0,
        best_fitness: best.1,
        history,
        final_population: population,
    })
}

fn clamp_genome(g: Genome, bounds: &[(f64, f64)]) -> Genome {
    g.into_iter()
        .zip(bounds)
        .map(|(v, &(lo, hi))| v.clamp(lo, hi))
        .collect()
}

/// Indices sorted by descending fitness; ties keep the lower index first.
fn rank(fitness: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fitness.len()).collect();
    idx.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    idx
}

fn tournament<R: Rng>(fitness: &[f64], size: usize, rng: &mut R) -> usize {
    let mut winner = rng.random_range(0..fitness.len());
    for _ in 1..size {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] > fitness[winner] || (fitness[c] == fitness[winner] && c < winner) {
            winner = c;
        }
    }
    winner
}

fn stats(generation: usize, best: f64, fitness: &[f64]) -> GenerationStats {
    let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
    let worst = fitness.iter().copied().fold(f64::INFINITY, f64::min);
    GenerationStats {
        generation,
        best,
        mean,
        worst,
    }
}

/// Search envelope for the sleep genes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SleepBounds {
    pub steps: (f64, f64),
    pub decay: (f64, f64),
    pub max_rate: (f64, f64),
    /// Bounds on `|stdp|`, shared by both increments.
    pub stdp: (f64, f64),
    pub threshold: (f64, f64),
}

impl Default for SleepBounds {
    fn default() -> Self {
        Self {
            steps: (50.0, 500.0),
            decay: (0.9, 0.999),
            max_rate: (50.0, 400.0),
            stdp: (1e-5, 1e-3),
            threshold: (0.1, 25.0),
        }
    }
}

/// Maps genomes `[steps, decay, max_rate, stdp_pos, |stdp_neg|, thresholds..]`
/// to sleep configurations. `dt` and the sleep seed are fixed, not searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepCodec {
    pub plastic_layers: usize,
    pub bounds: SleepBounds,
    pub dt: f64,
    pub seed: u64,
}

impl SleepCodec {
    pub const FIXED_GENES: usize = 5;

    pub fn new(plastic_layers: usize) -> Self {
        Self {
            plastic_layers,
            bounds: SleepBounds::default(),
            dt: 0.001,
            seed: 0,
        }
    }

    pub fn gene_count(&self) -> usize {
        Self::FIXED_GENES + self.plastic_layers
    }

    pub fn gene_bounds(&self) -> Vec<(f64, f64)> {
        let b = &self.bounds;
        let mut v = Vec::with_capacity(self.gene_count());
        v.extend([b.steps, b.decay, b.max_rate, b.stdp, b.stdp]);
        v.extend(core::iter::repeat_n(b.threshold, self.plastic_layers));
        v
    }

    pub fn decode(&self, genome: &[f64]) -> Result<SleepConfig> {
        if genome.len() != self.gene_count() {
            return Err(config(format!(
                "genome has {} genes, expected {}",
                genome.len(),
                self.gene_count()
            )));
        }
        if genome.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("genome"));
        }
        let steps = libm::round(genome[0]).max(1.0) as usize;
        let thresholds = genome[5..]
            .iter()
            .map(|&t| if t > 0.0 { t } else { f64::MIN_POSITIVE })
            .collect();
        Ok(SleepConfig {
            steps,
            dt: self.dt,
            decay: genome[1].clamp(0.0, 1.0),
            max_rate: genome[2],
            stdp_pos: genome[3],
            stdp_neg: -genome[4].abs(),
            thresholds,
            seed: self.seed,
        })
    }

    pub fn encode(&self, cfg: &SleepConfig) -> Result<Genome> {
        if cfg.thresholds.len() != self.plastic_layers {
            return Err(config("threshold count does not match the codec"));
        }
        let mut g = Vec::with_capacity(self.gene_count());
        g.extend([
            cfg.steps as f64,
            cfg.decay,
            cfg.max_rate,
            cfg.stdp_pos,
            -cfg.stdp_neg,
        ]);
        g.extend_from_slice(&cfg.thresholds);
        Ok(g)
    }
}

/// What a sleep candidate is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SrcObjective {
    /// Validation accuracy.
    Accuracy,
    /// Validation accuracy minus `weight * ECE` (calibration-targeted tuning).
    AccuracyMinusEce { weight: f64, bins: usize },
    /// `-ECE` while validation accuracy is at least `min_accuracy`; below it,
    /// `-1 - shortfall`, so every feasible candidate beats every infeasible one.
    EceAboveAccuracy { min_accuracy: f64, bins: usize },
    /// Negative validation NLL.
    NegativeNll,
}

impl Default for SrcObjective {
    fn default() -> Self {
        SrcObjective::Accuracy
    }
}

/// Everything a sleep fitness evaluation needs, computed once per base model.
///
/// `val_head_inputs` are backbone outputs of the validation samples, so
/// candidates only re-run the head.
#[derive(Debug, Clone)]
pub struct SrcFitness<'a> {
    pub base: &'a DenseNetwork,
    pub stats: &'a InputStatistics,
    pub scales: &'a LayerScales,
    pub val_head_inputs: &'a [Vec<f64>],
    pub val_labels: &'a [usize],
    pub codec: &'a SleepCodec,
    pub objective: SrcObjective,
}

impl SrcFitness<'_> {
    /// Clones the base network, sleeps it with the decoded genome and scores it.
    /// Numeric failures score `-inf`.
    pub fn score(&self, genome: &[f64]) -> f64 {
        self.try_score(genome).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn try_score(&self, genome: &[f64]) -> Result<f64> {
        let cfg = self.codec.decode(genome)?;
        let mut net = self.base.clone();
        sleep_prepared(&mut net, self.stats, self.scales, &cfg)?;
        score_head(&net, self.val_head_inputs, self.val_labels, self.objective)
    }
}

/// Scores a network on precomputed head inputs.
pub fn score_head(
    net: &DenseNetwork,
    head_inputs: &[Vec<f64>],
    labels: &[usize],
    objective: SrcObjective,
) -> Result<f64> {
    let hs = net.head_start();
    let logits = head_inputs
        .iter()
        .map(|h| net.forward_from(hs, h))
        .collect::<Result<Vec<_>>>()?;
    let batch = PredictionBatch::from_logits(&logits, labels.to_vec(), 1.0)?;
    let acc = metrics::accuracy(&batch);
    Ok(match objective {
        SrcObjective::Accuracy => acc,
        SrcObjective::AccuracyMinusEce { weight, bins } => acc - weight * metrics::ece(&batch, bins)?,
        SrcObjective::EceAboveAccuracy { min_accuracy, bins } => {
            if acc >= min_accuracy {
                -metrics::ece(&batch, bins)?
            } else {
                -1.0 - (min_accuracy - acc)
            }
        }
        SrcObjective::NegativeNll => -metrics::nll(&batch),
    })
}
