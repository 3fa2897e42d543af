//! Trial orchestration: train, apply methods, evaluate and analyse.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sleepcal_core::analysis::{self, ConfidenceTransfer, Histogram1D, WeightDiff};
use sleepcal_core::data::{generate_synthetic, split_indices};
use sleepcal_core::ga::{self, GaConfig, GenerationStats, Genome, PopulationEvaluator, SleepCodec, SrcFitness, SrcObjective};
use sleepcal_core::metrics::{self, MetricSet};
use sleepcal_core::sleep::{prepare, sleep_prepared};
use sleepcal_core::temperature::{fit_temperature, TemperatureFit};
use sleepcal_core::{math, DenseNetwork, LabeledDataset, LossKind, PredictionBatch, ReliabilityBins, SleepConfig};

use crate::dataset_io;
use crate::error::{Error, Result};
use crate::spec::{DatasetSource, ExperimentSpec, Method, SleepObjective, SrcSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// A dataset that remembers which split it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    split: Split,
    data: LabeledDataset,
}

impl SplitData {
    pub fn new(split: Split, data: LabeledDataset) -> Self {
        Self { split, data }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Access for fitting anything (weights, temperature, sleep parameters).
    /// Test data is refused.
    pub fn fitting(&self) -> Result<&LabeledDataset> {
        match self.split {
            Split::Test => Err(Error::SplitViolation(self.split)),
            _ => Ok(&self.data),
        }
    }

    /// Read-only access for scoring and analysis.
    pub fn evaluation(&self) -> &LabeledDataset {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: SplitData,
    pub validation: SplitData,
    pub test: SplitData,
}

pub fn load_dataset(source: &DatasetSource) -> Result<LabeledDataset> {
    match source {
        DatasetSource::Synthetic { params, seed } => Ok(generate_synthetic(params, *seed)?),
        DatasetSource::Csv { path, class_count } => dataset_io::ingest_csv(path, *class_count),
        DatasetSource::Idx {
            images,
            labels,
            class_count,
        } => dataset_io::ingest_idx(images, labels, *class_count),
    }
}

pub fn make_splits(data: &LabeledDataset, spec: &ExperimentSpec) -> Result<Splits> {
    let [train, mut val, mut test] = split_indices(data.len(), spec.split.fractions, spec.split.seed)?;
    if spec.split.test_from_validation {
        test = val.split_off(val.len() / 2);
    }
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Spec(format!(
            "{} samples leave an empty split ({} / {} / {})",
            data.len(),
            train.len(),
            val.len(),
            test.len()
        )));
    }
    Ok(Splits {
        train: SplitData::new(Split::Train, data.subset(&train)),
        validation: SplitData::new(Split::Validation, data.subset(&val)),
        test: SplitData::new(Split::Test, data.subset(&test)),
    })
}

pub fn build_network(spec: &ExperimentSpec, data: &LabeledDataset, seed: u64) -> Result<DenseNetwork> {
    let widths = spec.model.widths(data.feature_dim(), data.class_count());
    Ok(DenseNetwork::seeded(&widths, spec.model.head_start(), spec.model.head_bias, seed)?)
}

pub fn train_network(
    net: &mut DenseNetwork,
    train: &SplitData,
    cfg: &sleepcal_core::TrainConfig,
    loss: &LossKind,
) -> Result<sleepcal_core::TrainHistory> {
    Ok(sleepcal_core::train::train_sgd(net, train.fitting()?, cfg, loss)?)
}

pub fn logits(net: &DenseNetwork, data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    data.iter().map(|(x, _)| net.logits(x).map_err(Error::from)).collect()
}

pub fn predictions(net: &DenseNetwork, data: &LabeledDataset, temperature: f64) -> Result<PredictionBatch> {
    Ok(PredictionBatch::from_logits(&logits(net, data)?, data.labels().to_vec(), temperature)?)
}

pub fn fit_temperature_on(net: &DenseNetwork, val: &SplitData) -> Result<TemperatureFit> {
    let data = val.fitting()?;
    Ok(fit_temperature(&logits(net, data)?, data.labels())?)
}

/// Scores populations in parallel on the rayon pool.
pub struct ParallelFitness<'a>(pub &'a SrcFitness<'a>);

impl PopulationEvaluator for ParallelFitness<'_> {
    fn evaluate(&mut self, population: &[Genome]) -> Vec<f64> {
        population.par_iter().map(|g| self.0.score(g)).collect()
    }
}

/// Non-finite fitness values (failed candidates) are stored as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaLogRow {
    pub generation: usize,
    pub best: Option<f64>,
    pub mean: Option<f64>,
    pub worst: Option<f64>,
}

impl From<GenerationStats> for GaLogRow {
    fn from(s: GenerationStats) -> Self {
        let f = |x: f64| x.is_finite().then_some(x);
        Self {
            generation: s.generation,
            best: f(s.best),
            mean: f(s.mean),
            worst: f(s.worst),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedSleep {
    pub config: SleepConfig,
    pub objective: SrcObjective,
    /// Validation fitness of the unslept model under the same objective.
    pub baseline_fitness: f64,
    pub best_fitness: Option<f64>,
    pub history: Vec<GaLogRow>,
    /// Layers whose activation scale hit the floor.
    pub floored_scales: Vec<usize>,
}

/// Picks sleep parameters on the validation split (or takes the fixed ones)
/// and returns the slept network.
pub fn tune_and_sleep(
    net: &DenseNetwork,
    train: &SplitData,
    val: &SplitData,
    spec: &SrcSpec,
    seed: u64,
) -> Result<(DenseNetwork, TunedSleep)> {
    let train = train.fitting()?;
    let val = val.fitting()?;
    let (stats, scales) = prepare(net, train)?;
    let codec = SleepCodec {
        plastic_layers: net.plastic_layer_count(),
        bounds: spec.bounds.clone(),
        dt: spec.dt,
        seed,
    };
    let head_inputs = val
        .iter()
        .map(|(x, _)| net.head_input(x))
        .collect::<sleepcal_core::Result<Vec<_>>>()?;
    let objective = match spec.objective {
        SleepObjective::Accuracy => SrcObjective::Accuracy,
        SleepObjective::AccuracyMinusEce { weight, bins } => SrcObjective::AccuracyMinusEce { weight, bins },
        SleepObjective::EceWithinAccuracy { tolerance, bins } => SrcObjective::EceAboveAccuracy {
            min_accuracy: ga::score_head(net, &head_inputs, val.labels(), SrcObjective::Accuracy)? - tolerance,
            bins,
        },
        SleepObjective::Nll => SrcObjective::NegativeNll,
    };
    let baseline_fitness = ga::score_head(net, &head_inputs, val.labels(), objective)?;
    let floored_scales = scales.floored.clone();

    let (config, best_fitness, history) = match &spec.fixed {
        Some(cfg) => (cfg.clone(), None, Vec::new()),
        None => {
            let fitness = SrcFitness {
                base: net,
                stats: &stats,
                scales: &scales,
                val_head_inputs: &head_inputs,
                val_labels: val.labels(),
                codec: &codec,
                objective,
            };
            let ga_cfg = GaConfig {
                seed: spec.ga.seed ^ seed,
                ..spec.ga.clone()
            };
            let out = ga::ga_search(&mut ParallelFitness(&fitness), &codec.gene_bounds(), &ga_cfg, None)?;
            let cfg = codec.decode(&out.best)?;
            let best = out.best_fitness.is_finite().then_some(out.best_fitness);
            (cfg, best, out.history.into_iter().map(GaLogRow::from).collect())
        }
    };
    let mut slept = net.clone();
    sleep_prepared(&mut slept, &stats, &scales, &config)?;
    Ok((
        slept,
        TunedSleep {
            config,
            objective,
            baseline_fitness,
            best_fitness,
            history,
            floored_scales,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub metrics: MetricSet,
    /// Temperature applied to the logits (1 unless the method uses TS).
    pub temperature: f64,
    pub reliability: ReliabilityBins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHistogram {
    pub method: Method,
    pub histogram: Histogram1D,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialAnalysis {
    pub src_transfer: Option<ConfidenceTransfer>,
    pub ts_transfer: Option<ConfidenceTransfer>,
    pub features: Vec<NamedHistogram>,
    pub sparsity: Vec<NamedHistogram>,
    pub weight_diff: Option<WeightDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed { stage: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub results: Vec<MethodResult>,
    pub temperature_fit: Option<TemperatureFit>,
    pub src_temperature_fit: Option<TemperatureFit>,
    pub sleep: Option<TunedSleep>,
    pub analysis: TrialAnalysis,
    pub warnings: Vec<String>,
}

impl TrialRecord {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    /// Completed trials the statistics are taken over.
    pub trials: usize,
    pub mean: MetricSet,
    /// Population standard deviation.
    pub std: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: ExperimentSpec,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("manifest", e))
    }

    pub fn summary_row(&self, method: Method) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method)
    }
}

/// Independent sub-seeds of one trial seed: 0 initialisation, 1 training
/// order, 2 sleep and search.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trains the network of the trial with seed `seed` under `loss`.
pub fn train_model(
    spec: &ExperimentSpec,
    splits: &Splits,
    seed: u64,
    loss: &LossKind,
) -> Result<(DenseNetwork, sleepcal_core::TrainHistory)> {
    let mut cfg = spec.train.clone();
    cfg.seed = derive_seed(seed, 1);
    let mut net = build_network(spec, splits.train.evaluation(), derive_seed(seed, 0))?;
    let history = train_network(&mut net, &splits.train, &cfg, loss)?;
    Ok((net, history))
}

struct TrialContext<'a> {
    spec: &'a ExperimentSpec,
    splits: &'a Splits,
    seed: u64,
}

fn evaluate_method(
    method: Method,
    net: &DenseNetwork,
    test: &LabeledDataset,
    temperature: f64,
    bins: usize,
) -> Result<(MethodResult, PredictionBatch)> {
    let batch = predictions(net, test, temperature)?;
    Ok((
        MethodResult {
            method,
            metrics: MetricSet::evaluate(&batch, bins)?,
            temperature,
            reliability: metrics::reliability_bins(&batch, bins)?,
        },
        batch,
    ))
}

fn run_trial_stages(ctx: &TrialContext<'_>, rec: &mut TrialRecord, stage: &mut &'static str) -> Result<()> {
    let spec = ctx.spec;
    let wants = |m: Method| spec.methods.contains(&m);
    let test = ctx.splits.test.evaluation();
    let bins = spec.bins;

    *stage = "train";
    let (base, _) = train_model(spec, ctx.splits, ctx.seed, &LossKind::CrossEntropy)?;

    *stage = "evaluate baseline";
    let (base_result, base_batch) = evaluate_method(Method::Baseline, &base, test, 1.0, bins)?;
    let mut results = vec![base_result];

    let need_src = wants(Method::Src) || wants(Method::SrcTs);
    let mut src_net = None;
    if need_src {
        *stage = "sleep";
        let (slept, tuned) = tune_and_sleep(
            &base,
            &ctx.splits.train,
            &ctx.splits.validation,
            &spec.src,
            derive_seed(ctx.seed, 2),
        )?;
        if !tuned.floored_scales.is_empty() {
            rec.warnings.push(format!(
                "trial {}: activation scale floored for plastic layers {:?}",
                rec.trial, tuned.floored_scales
            ));
        }
        rec.sleep = Some(tuned);
        src_net = Some(slept);
    }

    if let Some(slept) = &src_net {
        *stage = "evaluate src";
        let (r, batch) = evaluate_method(Method::Src, slept, test, 1.0, bins)?;
        if wants(Method::Src) {
            results.push(r);
        }
        *stage = "analysis";
        rec.analysis.src_transfer = Some(analysis::confidence_transfer(&base_batch, &batch, spec.analysis.bins_2d)?);
        let wd = analysis::weight_diff_hist(&base, slept, spec.analysis.bins_1d)?;
        if wd.fraction_negative <= 0.5 {
            rec.warnings.push(format!(
                "trial {}: only {:.3} of head weight changes after sleep are negative",
                rec.trial, wd.fraction_negative
            ));
        }
        rec.analysis.weight_diff = Some(wd);
        let layers = analysis::default_selection(&base);
        for (m, net) in [(Method::Baseline, &base), (Method::Src, slept)] {
            rec.analysis.features.push(NamedHistogram {
                method: m,
                histogram: analysis::feature_magnitude_hist(net, test, &layers, spec.analysis.stage, spec.analysis.bins_1d)?,
            });
            rec.analysis.sparsity.push(NamedHistogram {
                method: m,
                histogram: analysis::sparsity_hist(net, test, &layers, spec.analysis.nonzero_threshold, spec.analysis.bins_1d)?,
            });
        }
    }

    if wants(Method::Ts) {
        *stage = "temperature";
        let t = match spec.temperature {
            Some(t) => t,
            None => {
                let fit = fit_temperature_on(&base, &ctx.splits.validation)?;
                let t = fit.temperature.value();
                if !fit.converged {
                    rec.warnings.push(format!("trial {}: temperature search did not converge", rec.trial));
                }
                rec.temperature_fit = Some(fit);
                t
            }
        };
        let (r, batch) = evaluate_method(Method::Ts, &base, test, t, bins)?;
        rec.analysis.ts_transfer = Some(analysis::confidence_transfer(&base_batch, &batch, spec.analysis.bins_2d)?);
        results.push(r);
    }

    if let (true, Some(slept)) = (wants(Method::SrcTs), &src_net) {
        *stage = "temperature after sleep";
        let t = match spec.temperature {
            Some(t) => t,
            None => {
                let fit = fit_temperature_on(slept, &ctx.splits.validation)?;
                let t = fit.temperature.value();
                rec.src_temperature_fit = Some(fit);
                t
            }
        };
        results.push(evaluate_method(Method::SrcTs, slept, test, t, bins)?.0);
    }

    for (method, loss) in [
        (
            Method::Ls,
            LossKind::LabelSmoothing {
                epsilon: spec.label_smoothing,
            },
        ),
        (
            Method::Focal,
            LossKind::Focal {
                alpha: spec.focal_alpha,
                gamma: spec.focal_gamma,
            },
        ),
    ] {
        if !wants(method) {
            continue;
        }
        *stage = if method == Method::Ls { "train ls" } else { "train focal" };
        let (net, _) = train_model(spec, ctx.splits, ctx.seed, &loss)?;
        results.push(evaluate_method(method, &net, test, 1.0, bins)?.0);
    }

    results.retain(|r| wants(r.method));
    results.sort_by_key(|r| spec.methods.iter().position(|m| *m == r.method));
    rec.results = results;
    Ok(())
}

pub fn run_trial(spec: &ExperimentSpec, splits: &Splits, trial: usize, seed: u64) -> TrialRecord {
    let mut rec = TrialRecord {
        trial,
        seed,
        status: TrialStatus::Completed,
        results: Vec::new(),
        temperature_fit: None,
        src_temperature_fit: None,
        sleep: None,
        analysis: TrialAnalysis::default(),
        warnings: Vec::new(),
    };
    let ctx = TrialContext { spec, splits, seed };
    let mut stage = "setup";
    if let Err(e) = run_trial_stages(&ctx, &mut rec, &mut stage) {
        log::warn!("trial {trial} failed during {stage}: {e}");
        rec.status = TrialStatus::Failed {
            stage: stage.to_string(),
            message: e.to_string(),
        };
        rec.results.clear();
    }
    rec
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    math::sqrt(math::exact_mean(&sq))
}

pub fn summarize(methods: &[Method], trials: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &method in methods {
        let sets: Vec<&MetricSet> = trials
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
            .filter_map(|t| t.result(method).map(|r| &r.metrics))
            .collect();
        if sets.is_empty() {
            continue;
        }
        let stat = |get: fn(&MetricSet) -> f64| {
            let xs: Vec<f64> = sets.iter().map(|s| get(s)).collect();
            let mean = math::exact_mean(&xs);
            (mean, population_std(&xs, mean))
        };
        let (acc, acc_sd) = stat(|s| s.accuracy);
        let (ece, ece_sd) = stat(|s| s.ece);
        let (nll, nll_sd) = stat(|s| s.nll);
        let (brier, brier_sd) = stat(|s| s.brier);
        let (ent, ent_sd) = stat(|s| s.entropy);
        rows.push(SummaryRow {
            method,
            trials: sets.len(),
            mean: MetricSet {
                accuracy: acc,
                ece,
                nll,
                brier,
                entropy: ent,
            },
            std: MetricSet {
                accuracy: acc_sd,
                ece: ece_sd,
                nll: nll_sd,
                brier: brier_sd,
                entropy: ent_sd,
            },
        });
    }
    rows
}

/// Runs every trial of `spec`. Failed trials are recorded, not fatal.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunManifest> {
    spec.validate()?;
    let data = load_dataset(&spec.dataset)?;
    let splits = make_splits(&data, spec)?;
    let seeds = spec.trial_seeds();
    let run = || -> Vec<TrialRecord> {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| {
                log::info!("trial {i} (seed {seed}) started");
                let rec = run_trial(spec, &splits, i, seed);
                log::info!("trial {i} finished");
                rec
            })
            .collect()
    };
    let trials = match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Spec(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let summary = summarize(&spec.methods, &trials);
    Ok(RunManifest {
        spec: spec.clone(),
        trials,
        summary,
    })
}
