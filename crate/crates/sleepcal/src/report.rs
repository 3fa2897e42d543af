//! Report bundle: metric tables, reliability and analysis plots, GA logs.

use std::fs;
use std::path::{Path, PathBuf};

use sleepcal_core::analysis::Histogram1D;
use sleepcal_core::metrics::MetricSet;
use sleepcal_core::ReliabilityBins;

use crate::error::{Error, Result};
use crate::experiment::{RunManifest, TrialRecord, TrialStatus};
use crate::spec::Method;
use crate::svg;

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "ece", "nll", "brier", "entropy"];
const HIGHER_IS_BETTER: [bool; 5] = [true, false, false, false, true];

pub fn metric_values(m: &MetricSet) -> [f64; 5] {
    [m.accuracy, m.ece, m.nll, m.brier, m.entropy]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Flag {
    #[default]
    None,
    /// Best (or tied best) post-hoc value.
    Best,
    /// Best retraining value that strictly beats every post-hoc value.
    BeatsPostHoc,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::None => "",
            Flag::Best => "best",
            Flag::BeatsPostHoc => "best-dagger",
        }
    }
}

fn better(a: f64, b: f64, higher: bool) -> bool {
    if higher {
        a > b
    } else {
        a < b
    }
}

fn best_of(values: impl Iterator<Item = f64>, higher: bool) -> Option<f64> {
    values.fold(None, |acc, v| match acc {
        Some(b) if !better(v, b, higher) => Some(b),
        _ => Some(v),
    })
}

/// Table-style best flags. Post-hoc methods tied for the best value are all
/// flagged; the best retraining method is flagged only when it strictly
/// beats the best post-hoc value (or when there are no post-hoc rows).
pub fn best_flags(rows: &[(Method, [f64; 5])]) -> Vec<[Flag; 5]> {
    let mut flags = vec![[Flag::None; 5]; rows.len()];
    for k in 0..5 {
        let hi = HIGHER_IS_BETTER[k];
        let post = best_of(rows.iter().filter(|r| !r.0.retrains()).map(|r| r.1[k]), hi);
        let retrain = best_of(rows.iter().filter(|r| r.0.retrains()).map(|r| r.1[k]), hi);
        for (i, (m, v)) in rows.iter().enumerate() {
            if !m.retrains() {
                if Some(v[k]) == post {
                    flags[i][k] = Flag::Best;
                }
            } else if Some(v[k]) == retrain {
                match post {
                    Some(p) if better(v[k], p, hi) => flags[i][k] = Flag::BeatsPostHoc,
                    None => flags[i][k] = Flag::Best,
                    _ => {}
                }
            }
        }
    }
    flags
}

/// One table line in display units.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: Method,
    pub values: [f64; 5],
}

impl TableRow {
    /// Accuracy in percent (one decimal), Brier scaled by 100, the rest to six decimals.
    pub fn from_metrics(method: Method, m: &MetricSet) -> Self {
        let round = |x: f64, d: i32| {
            let s = 10f64.powi(d);
            (x * s).round() / s
        };
        Self {
            method,
            values: [
                round(100.0 * m.accuracy, 1),
                round(m.ece, 6),
                round(m.nll, 6),
                round(100.0 * m.brier, 6),
                round(m.entropy, 6),
            ],
        }
    }
}

/// LaTeX-style rows: best post-hoc values in bold, winning retraining values
/// in bold with a dagger, and a spacer line before the retraining block.
pub fn render_table(title: &str, rows: &[TableRow]) -> String {
    let pairs: Vec<(Method, [f64; 5])> = rows.iter().map(|r| (r.method, r.values)).collect();
    let flags = best_flags(&pairs);
    let mut out = format!("\\textbf{{{title}}} \\\\\n");
    let mut in_retrain = false;
    for (row, fl) in rows.iter().zip(&flags) {
        if row.method.retrains() && !in_retrain {
            in_retrain = true;
            if rows.iter().any(|r| !r.method.retrains()) {
                out.push_str("\\\\\n");
            }
        }
        let cells: Vec<String> = row
            .values
            .iter()
            .zip(fl)
            .map(|(v, f)| match f {
                Flag::None => format!("{v}"),
                Flag::Best => format!("\\textbf{{{v}}}"),
                Flag::BeatsPostHoc => format!("\\textbf{{{v}\\textsuperscript{{\\textdagger}}}}"),
            })
            .collect();
        out.push_str(&format!("{} & {} \\\\\n", row.method.label(), cells.join(" & ")));
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path.display().to_string(), e))
}

fn csv_finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_row<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Error::format(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Mean per method and metric, with `brier_x100` in the table's units and a
/// best flag per metric.
pub fn write_metrics_csv(manifest: &RunManifest, path: &Path) -> Result<()> {
    let pairs: Vec<(Method, [f64; 5])> = manifest
        .summary
        .iter()
        .map(|r| (r.method, metric_values(&r.mean)))
        .collect();
    let flags = best_flags(&pairs);
    let mut w = csv_writer(path)?;
    let mut header = vec!["method".to_string(), "trials".into()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    header.push("brier_x100".into());
    header.extend(METRIC_NAMES.iter().map(|s| format!("best_{s}")));
    csv_row(&mut w, path, &header)?;
    for (row, fl) in manifest.summary.iter().zip(&flags) {
        let v = metric_values(&row.mean);
        let mut rec = vec![row.method.key().to_string(), row.trials.to_string()];
        rec.extend(v.iter().map(|x| x.to_string()));
        rec.push((100.0 * row.mean.brier).to_string());
        rec.extend(fl.iter().map(|f| f.as_str().to_string()));
        csv_row(&mut w, path, &rec)?;
    }
    csv_finish(w, path)
}

/// Population standard deviation per method and metric.
pub fn write_metrics_std_csv(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["method".to_string(), "trials".into()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    header.push("brier_x100".into());
    csv_row(&mut w, path, &header)?;
    for row in &manifest.summary {
        let mut rec = vec![row.method.key().to_string(), row.trials.to_string()];
        rec.extend(metric_values(&row.std).iter().map(|x| x.to_string()));
        rec.push((100.0 * row.std.brier).to_string());
        csv_row(&mut w, path, &rec)?;
    }
    csv_finish(w, path)
}

pub fn write_reliability_csv(bins: &ReliabilityBins, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, ["bin_low", "bin_high", "count", "acc", "conf"])?;
    for b in &bins.bins {
        csv_row(
            &mut w,
            path,
            [
                b.low.to_string(),
                b.high.to_string(),
                b.count.to_string(),
                b.accuracy.to_string(),
                b.confidence.to_string(),
            ],
        )?;
    }
    csv_finish(w, path)
}

pub fn write_histogram_csv(series: &[(&str, &Histogram1D)], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, ["series", "bin_low", "bin_high", "count"])?;
    for (name, h) in series {
        for (i, c) in h.counts.iter().enumerate() {
            csv_row(
                &mut w,
                path,
                [name.to_string(), h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()],
            )?;
        }
    }
    csv_finish(w, path)
}

fn write_transfer(t: &sleepcal_core::analysis::ConfidenceTransfer, stem: &Path, title: &str) -> Result<()> {
    let csv_path = stem.with_extension("csv");
    let h = &t.histogram;
    let mut w = csv_writer(&csv_path)?;
    csv_row(&mut w, &csv_path, ["base_low", "base_high", "method_low", "method_high", "count"])?;
    for (i, row) in h.counts.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            csv_row(
                &mut w,
                &csv_path,
                [
                    h.x_edges[i].to_string(),
                    h.x_edges[i + 1].to_string(),
                    h.y_edges[j].to_string(),
                    h.y_edges[j + 1].to_string(),
                    c.to_string(),
                ],
            )?;
        }
    }
    csv_finish(w, &csv_path)?;
    let title = format!("{title} (above {}, on {}, below {})", t.above, t.on, t.below);
    write_text(
        &stem.with_extension("svg"),
        &svg::heatmap(h, &title, "baseline confidence", "method confidence"),
    )
}

fn file_key(m: Method) -> String {
    m.key().replace('+', "_")
}

fn emit_trial(trial: &TrialRecord, out: &Path) -> Result<()> {
    let prefix = format!("trial{:02}", trial.trial);
    let rel = out.join("reliability");
    for r in &trial.results {
        let stem = rel.join(format!("{prefix}_{}", file_key(r.method)));
        write_reliability_csv(&r.reliability, &stem.with_extension("csv"))?;
        write_text(
            &stem.with_extension("svg"),
            &svg::reliability_diagram(&r.reliability, &format!("{} (trial {})", r.method.label(), trial.trial)),
        )?;
    }

    let an = out.join("analysis");
    let a = &trial.analysis;
    if let Some(t) = &a.src_transfer {
        write_transfer(t, &an.join(format!("{prefix}_transfer_src")), "SRC vs baseline")?;
    }
    if let Some(t) = &a.ts_transfer {
        write_transfer(t, &an.join(format!("{prefix}_transfer_ts")), "TS vs baseline")?;
    }
    for (name, hists, xlabel) in [
        ("features", &a.features, "activation"),
        ("sparsity", &a.sparsity, "nonzero fraction"),
    ] {
        if hists.is_empty() {
            continue;
        }
        let series: Vec<(&str, &Histogram1D)> = hists.iter().map(|h| (h.method.label(), &h.histogram)).collect();
        let stem = an.join(format!("{prefix}_{name}"));
        write_histogram_csv(&series, &stem.with_extension("csv"))?;
        write_text(&stem.with_extension("svg"), &svg::overlaid_histograms(&series, name, xlabel))?;
    }
    if let Some(wd) = &a.weight_diff {
        let stem = an.join(format!("{prefix}_weight_diff"));
        write_histogram_csv(&[("delta", &wd.histogram)], &stem.with_extension("csv"))?;
        write_text(
            &stem.with_extension("svg"),
            &svg::overlaid_histograms(
                &[("after - before", &wd.histogram)],
                &format!("head weight changes ({:.1}% negative)", 100.0 * wd.fraction_negative),
                "delta",
            ),
        )?;
    }

    if let Some(s) = &trial.sleep {
        let ga = out.join("ga");
        let log = ga.join(format!("{prefix}_ga_log.csv"));
        let mut w = csv_writer(&log)?;
        csv_row(&mut w, &log, ["generation", "best", "mean", "worst"])?;
        let cell = |x: Option<f64>| x.map_or_else(|| "-inf".to_string(), |v| v.to_string());
        for r in &s.history {
            csv_row(
                &mut w,
                &log,
                [r.generation.to_string(), cell(r.best), cell(r.mean), cell(r.worst)],
            )?;
        }
        csv_finish(w, &log)?;
        let cfg = serde_json::to_string_pretty(&s.config).expect("sleep config serializes");
        write_text(&ga.join(format!("{prefix}_sleep_config.json")), &cfg)?;
    }
    Ok(())
}

fn write_weight_direction(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, ["trial", "count", "mean_delta", "fraction_negative", "flagged"])?;
    for t in &manifest.trials {
        if let Some(wd) = &t.analysis.weight_diff {
            csv_row(
                &mut w,
                path,
                [
                    t.trial.to_string(),
                    wd.count.to_string(),
                    wd.mean_delta.to_string(),
                    wd.fraction_negative.to_string(),
                    (wd.fraction_negative <= 0.5).to_string(),
                ],
            )?;
        }
    }
    csv_finish(w, path)
}

/// Writes the full report bundle under `out` and returns the top-level files.
pub fn emit_report(manifest: &RunManifest, out: &Path) -> Result<Vec<PathBuf>> {
    for dir in ["", "reliability", "analysis", "ga"] {
        let d = out.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let files = [
        "metrics.csv",
        "metrics_std.csv",
        "table.tex",
        "manifest.json",
        "warnings.txt",
        "trials.csv",
    ]
    .map(|f| out.join(f));

    write_metrics_csv(manifest, &files[0])?;
    write_metrics_std_csv(manifest, &files[1])?;
    let rows: Vec<TableRow> = manifest
        .summary
        .iter()
        .map(|r| TableRow::from_metrics(r.method, &r.mean))
        .collect();
    write_text(&files[2], &render_table(&manifest.spec.name, &rows))?;
    write_text(&files[3], &manifest.to_json())?;
    let warnings: Vec<&str> = manifest
        .trials
        .iter()
        .flat_map(|t| t.warnings.iter().map(String::as_str))
        .collect();
    let mut text = warnings.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_text(&files[4], &text)?;
    write_trials_csv(manifest, &files[5])?;
    write_weight_direction(manifest, &out.join("analysis").join("weight_direction.csv"))?;
    for t in &manifest.trials {
        emit_trial(t, out)?;
    }
    Ok(files.to_vec())
}

/// Per-trial, per-method metric rows, plus failed trials with their stage.
fn write_trials_csv(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["trial".to_string(), "seed".into(), "method".into(), "status".into()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    header.push("temperature".into());
    csv_row(&mut w, path, &header)?;
    for t in &manifest.trials {
        match &t.status {
            TrialStatus::Completed => {
                for r in &t.results {
                    let mut rec = vec![t.trial.to_string(), t.seed.to_string(), r.method.key().into(), "ok".into()];
                    rec.extend(metric_values(&r.metrics).iter().map(|x| x.to_string()));
                    rec.push(r.temperature.to_string());
                    csv_row(&mut w, path, &rec)?;
                }
            }
            TrialStatus::Failed { stage, message } => {
                let mut rec = vec![
                    t.trial.to_string(),
                    t.seed.to_string(),
                    String::new(),
                    format!("failed in {stage}: {message}"),
                ];
                rec.extend(std::iter::repeat_n(String::new(), 6));
                csv_row(&mut w, path, &rec)?;
            }
        }
    }
    csv_finish(w, path)
}
