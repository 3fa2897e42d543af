use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use sleepcal::experiment::{self, derive_seed, make_splits, predictions, Splits};
use sleepcal::spec::{ExperimentSpec, Method};
use sleepcal::{model_io, report, svg, RunManifest};
use sleepcal_core::analysis;
use sleepcal_core::metrics::{self, MetricSet};
use sleepcal_core::{LossKind, SleepConfig};

#[derive(Parser)]
#[command(name = "sleepcal", version, about = "Sleep replay consolidation and calibration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec (JSON, or TOML with a .toml extension). Defaults to the desk experiment.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Base seed; single-model commands use it as the trial seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated subset of baseline,src,ts,src+ts,ls,focal.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Reliability bins for ECE and the diagrams.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::default(),
        };
        if let Some(s) = self.seed {
            spec.base_seed = s;
            spec.seeds = None;
        }
        if let Some(m) = &self.methods {
            spec.methods = m.clone();
        }
        if let Some(t) = self.trials {
            spec.trials = t;
            spec.seeds = None;
        }
        if let Some(b) = self.bins {
            spec.bins = b;
        }
        if self.threads.is_some() {
            spec.threads = self.threads;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn setup(&self) -> Result<(ExperimentSpec, Splits)> {
        let spec = self.spec()?;
        if let Some(n) = spec.threads {
            // Only the first call in a process can size the global pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let data = experiment::load_dataset(&spec.dataset)?;
        let splits = make_splits(&data, &spec)?;
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok((spec, splits))
    }

    fn trial_seed(&self, spec: &ExperimentSpec) -> u64 {
        self.seed.unwrap_or_else(|| spec.trial_seeds()[0])
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline network and save it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Loss to train with instead of cross-entropy: ls or focal.
        #[arg(long)]
        loss: Option<Method>,
    },
    /// Sleep a model with a fixed configuration.
    Sleep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// SleepConfig JSON.
        #[arg(long)]
        config: PathBuf,
    },
    /// Search sleep parameters on the validation split and sleep the model with the winner.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Fit a temperature on the validation split.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Test-split metrics and a reliability diagram for one model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "temperature_file")]
        temperature: Option<f64>,
        /// temperature.json written by `calibrate`.
        #[arg(long)]
        temperature_file: Option<PathBuf>,
    },
    /// Confidence transfer, feature, sparsity and weight-change analyses of two models.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// The reference (baseline) model.
        #[arg(long)]
        model: PathBuf,
        /// The modified model, e.g. after sleep.
        #[arg(long)]
        other: PathBuf,
    },
    /// Write the report bundle for a saved manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every trial and method of the spec and write the report bundle.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize, Deserialize)]
struct TemperatureFile {
    temperature: f64,
    nll: f64,
    baseline_nll: f64,
    fell_back: bool,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_metrics(label: &str, m: &MetricSet) {
    println!(
        "{label}: accuracy {:.4}  ece {:.6}  nll {:.6}  brier {:.6}  entropy {:.6}",
        m.accuracy, m.ece, m.nll, m.brier, m.entropy
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, loss } => {
            let (spec, splits) = common.setup()?;
            let loss = match loss {
                None | Some(Method::Baseline) => LossKind::CrossEntropy,
                Some(Method::Ls) => LossKind::LabelSmoothing {
                    epsilon: spec.label_smoothing,
                },
                Some(Method::Focal) => LossKind::Focal {
                    alpha: spec.focal_alpha,
                    gamma: spec.focal_gamma,
                },
                Some(m) => bail!("{m} is not a training loss"),
            };
            let seed = common.trial_seed(&spec);
            let (net, history) = experiment::train_model(&spec, &splits, seed, &loss)?;
            let path = common.out.join("model.json");
            model_io::save(&net, &path)?;
            write(
                &common.out.join("train_history.json"),
                &serde_json::to_string_pretty(&history)?,
            )?;
            if let Some(last) = history.epochs.last() {
                info!("final epoch loss {:.5}, accuracy {:.4}", last.loss, last.accuracy);
            }
            println!("{}", path.display());
        }
        Command::Sleep { common, model, config } => {
            let (_, splits) = common.setup()?;
            let net = model_io::load(&model)?;
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: SleepConfig = serde_json::from_str(&text).context("parsing sleep config")?;
            let (slept, report) = sleepcal_core::sleep::sleep(&net, splits.train.fitting()?, &cfg)?;
            info!("spikes per layer {:?}", report.spike_counts);
            let path = common.out.join("model_sleep.json");
            model_io::save(&slept, &path)?;
            println!("{}", path.display());
        }
        Command::Tune { common, model } => {
            let (spec, splits) = common.setup()?;
            let net = model_io::load(&model)?;
            let seed = derive_seed(common.trial_seed(&spec), 2);
            let (slept, tuned) = experiment::tune_and_sleep(&net, &splits.train, &splits.validation, &spec.src, seed)?;
            let mut log = String::from("generation,best,mean,worst\n");
            let cell = |x: Option<f64>| x.map_or_else(|| "-inf".to_string(), |v| v.to_string());
            for r in &tuned.history {
                log.push_str(&format!("{},{},{},{}\n", r.generation, cell(r.best), cell(r.mean), cell(r.worst)));
            }
            write(&common.out.join("ga_log.csv"), &log)?;
            write(
                &common.out.join("sleep_config.json"),
                &serde_json::to_string_pretty(&tuned.config)?,
            )?;
            model_io::save(&slept, &common.out.join("model_sleep.json"))?;
            println!(
                "validation fitness {} -> {}",
                tuned.baseline_fitness,
                tuned.best_fitness.map_or("n/a".into(), |f| f.to_string())
            );
        }
        Command::Calibrate { common, model } => {
            let (_, splits) = common.setup()?;
            let net = model_io::load(&model)?;
            let fit = experiment::fit_temperature_on(&net, &splits.validation)?;
            let file = TemperatureFile {
                temperature: fit.temperature.value(),
                nll: fit.nll,
                baseline_nll: fit.baseline_nll,
                fell_back: fit.fell_back,
            };
            write(&common.out.join("temperature.json"), &serde_json::to_string_pretty(&file)?)?;
            println!("T = {}", file.temperature);
        }
        Command::Evaluate {
            common,
            model,
            temperature,
            temperature_file,
        } => {
            let (spec, splits) = common.setup()?;
            let net = model_io::load(&model)?;
            let t = match (temperature, temperature_file) {
                (Some(t), _) => t,
                (None, Some(p)) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<TemperatureFile>(&text)?.temperature
                }
                (None, None) => 1.0,
            };
            let batch = predictions(&net, splits.test.evaluation(), t)?;
            let m = MetricSet::evaluate(&batch, spec.bins)?;
            let bins = metrics::reliability_bins(&batch, spec.bins)?;
            report::write_reliability_csv(&bins, &common.out.join("reliability.csv"))?;
            write(
                &common.out.join("reliability.svg"),
                &svg::reliability_diagram(&bins, &format!("{} (T = {t})", model.display())),
            )?;
            write(&common.out.join("metrics.json"), &serde_json::to_string_pretty(&m)?)?;
            print_metrics("test", &m);
        }
        Command::Analyze { common, model, other } => {
            let (spec, splits) = common.setup()?;
            let base = model_io::load(&model)?;
            let after = model_io::load(&other)?;
            let test = splits.test.evaluation();
            let a = &spec.analysis;
            let out = &common.out;
            let tb = predictions(&base, test, 1.0)?;
            let ta = predictions(&after, test, 1.0)?;
            let t = analysis::confidence_transfer(&tb, &ta, a.bins_2d)?;
            write(
                &out.join("transfer.svg"),
                &svg::heatmap(&t.histogram, "confidence transfer", "baseline confidence", "method confidence"),
            )?;
            println!("transfer above {} on {} below {}", t.above, t.on, t.below);
            let layers = analysis::default_selection(&base);
            let fb = analysis::feature_magnitude_hist(&base, test, &layers, a.stage, a.bins_1d)?;
            let fa = analysis::feature_magnitude_hist(&after, test, &layers, a.stage, a.bins_1d)?;
            let series = [("baseline", &fb), ("other", &fa)];
            report::write_histogram_csv(&series, &out.join("features.csv"))?;
            write(&out.join("features.svg"), &svg::overlaid_histograms(&series, "features", "activation"))?;
            let sb = analysis::sparsity_hist(&base, test, &layers, a.nonzero_threshold, a.bins_1d)?;
            let sa = analysis::sparsity_hist(&after, test, &layers, a.nonzero_threshold, a.bins_1d)?;
            let series = [("baseline", &sb), ("other", &sa)];
            report::write_histogram_csv(&series, &out.join("sparsity.csv"))?;
            write(
                &out.join("sparsity.svg"),
                &svg::overlaid_histograms(&series, "sparsity", "nonzero fraction"),
            )?;
            let wd = analysis::weight_diff_hist(&base, &after, a.bins_1d)?;
            report::write_histogram_csv(&[("delta", &wd.histogram)], &out.join("weight_diff.csv"))?;
            write(
                &out.join("weight_diff.svg"),
                &svg::overlaid_histograms(&[("after - before", &wd.histogram)], "head weight changes", "delta"),
            )?;
            println!("fraction of negative head weight changes {:.4}", wd.fraction_negative);
            if wd.fraction_negative <= 0.5 {
                log::warn!("most head weights did not decrease ({:.4} negative)", wd.fraction_negative);
            }
        }
        Command::Report { manifest, out } => {
            let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let m = RunManifest::from_json(&text)?;
            report::emit_report(&m, &out)?;
        }
        Command::RunAll { common } => {
            let spec = common.spec()?;
            let manifest = experiment::run_experiment(&spec)?;
            report::emit_report(&manifest, &common.out)?;
            for row in &manifest.summary {
                print_metrics(&format!("{:<8} ({} trials)", row.method.key(), row.trials), &row.mean);
            }
            for t in &manifest.trials {
                for w in &t.warnings {
                    log::warn!("{w}");
                }
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
