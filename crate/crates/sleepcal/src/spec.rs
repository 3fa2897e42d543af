//! Experiment specification files (JSON or TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sleepcal_core::analysis::{ActivationStage, DEFAULT_BINS_1D, DEFAULT_BINS_2D};
use sleepcal_core::ga::{GaConfig, SleepBounds};
use sleepcal_core::metrics::DEFAULT_BINS;
use sleepcal_core::{SleepConfig, SyntheticParams, TrainConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "src")]
    Src,
    #[serde(rename = "ts")]
    Ts,
    #[serde(rename = "src+ts")]
    SrcTs,
    #[serde(rename = "ls")]
    Ls,
    #[serde(rename = "focal")]
    Focal,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Baseline,
        Method::Src,
        Method::Ts,
        Method::SrcTs,
        Method::Ls,
        Method::Focal,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Src => "src",
            Method::Ts => "ts",
            Method::SrcTs => "src+ts",
            Method::Ls => "ls",
            Method::Focal => "focal",
        }
    }

    /// Row label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::Src => "Baseline + SRC",
            Method::Ts => "Baseline + TS",
            Method::SrcTs => "Baseline + SRC + TS",
            Method::Ls => "Baseline + LS",
            Method::Focal => "Baseline + Focal",
        }
    }

    /// Methods that need retraining rather than acting on a trained model.
    pub fn retrains(self) -> bool {
        matches!(self, Method::Ls | Method::Focal)
    }

    pub fn uses_temperature(self) -> bool {
        matches!(self, Method::Ts | Method::SrcTs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Spec(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        #[serde(flatten)]
        params: SyntheticParams,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        class_count: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        class_count: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
    /// No labelled test split: cut the validation part in half, one half for
    /// fitting and one for evaluation. The test fraction must then be zero.
    pub test_from_validation: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.6, 0.2, 0.2],
            seed: 0,
            test_from_validation: false,
        }
    }
}

/// `input -> backbone.. -> head.. -> classes`; the head starts after the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub backbone: Vec<usize>,
    pub head: Vec<usize>,
    pub head_bias: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            backbone: vec![64],
            head: vec![64, 32],
            head_bias: false,
        }
    }
}

impl ModelSpec {
    pub fn widths(&self, features: usize, classes: usize) -> Vec<usize> {
        let mut w = vec![features];
        w.extend(&self.backbone);
        w.extend(&self.head);
        w.push(classes);
        w
    }

    pub fn head_start(&self) -> usize {
        self.backbone.len()
    }

    pub fn plastic_layers(&self) -> usize {
        self.head.len() + 1
    }
}

/// Fitness used when searching sleep parameters on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SleepObjective {
    Accuracy,
    AccuracyMinusEce { weight: f64, bins: usize },
    /// Lowest ECE among candidates whose validation accuracy is within
    /// `tolerance` of the unslept model.
    EceWithinAccuracy { tolerance: f64, bins: usize },
    Nll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrcSpec {
    pub ga: GaConfig,
    pub bounds: SleepBounds,
    pub objective: SleepObjective,
    pub dt: f64,
    /// Skips the search and sleeps with this configuration.
    pub fixed: Option<SleepConfig>,
}

impl Default for SrcSpec {
    fn default() -> Self {
        Self {
            ga: GaConfig::default(),
            bounds: SleepBounds::default(),
            objective: SleepObjective::Accuracy,
            dt: 0.001,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSpec {
    pub bins_1d: usize,
    pub bins_2d: usize,
    pub nonzero_threshold: f64,
    pub stage: ActivationStage,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            bins_1d: DEFAULT_BINS_1D,
            bins_2d: DEFAULT_BINS_2D,
            nonzero_threshold: 0.0,
            stage: ActivationStage::Post,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub label_smoothing: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub src: SrcSpec,
    pub trials: usize,
    /// Explicit per-trial seeds; otherwise `base_seed + trial`.
    pub seeds: Option<Vec<u64>>,
    pub base_seed: u64,
    pub bins: usize,
    /// Pins the temperature instead of fitting it.
    pub temperature: Option<f64>,
    pub analysis: AnalysisSpec,
    pub threads: Option<usize>,
}

/// The desk experiment: overlapping clusters and an overtrained network, so
/// the baseline comes out overconfident.
impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            dataset: DatasetSource::Synthetic {
                params: SyntheticParams {
                    overlap: 1.5,
                    ..SyntheticParams::default()
                },
                seed: 0,
            },
            split: SplitSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig {
                learning_rate: 0.01,
                epochs: 200,
                ..TrainConfig::default()
            },
            methods: Method::ALL.to_vec(),
            label_smoothing: 0.05,
            focal_alpha: 1.0,
            focal_gamma: 1.0,
            src: SrcSpec {
                ga: GaConfig {
                    mutation_decay: 0.0,
                    ..GaConfig::default()
                },
                objective: SleepObjective::EceWithinAccuracy {
                    tolerance: 0.005,
                    bins: DEFAULT_BINS,
                },
                ..SrcSpec::default()
            },
            trials: 10,
            seeds: None,
            base_seed: 0,
            bins: DEFAULT_BINS,
            temperature: None,
            analysis: AnalysisSpec::default(),
            threads: None,
        }
    }
}

impl ExperimentSpec {
    pub fn trial_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.trials as u64).map(|i| self.base_seed + i).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.split.fractions;
        if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Spec(format!("split fractions {f:?} must be nonnegative and sum to 1")));
        }
        if self.split.test_from_validation && f[2] != 0.0 {
            return Err(Error::Spec("test_from_validation needs a zero test fraction".into()));
        }
        if !self.split.test_from_validation && (f[1] == 0.0 || f[2] == 0.0) {
            return Err(Error::Spec("validation and test fractions must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Spec("no methods selected".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.trials {
                return Err(Error::Spec(format!("{} seeds given for {} trials", seeds.len(), self.trials)));
            }
        }
        if self.trials == 0 {
            return Err(Error::Spec("need at least one trial".into()));
        }
        if self.bins == 0 {
            return Err(Error::Spec("bin count must be positive".into()));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Spec(format!("pinned temperature {t} must be positive")));
            }
        }
        self.train.validate()?;
        Ok(())
    }

    /// Reads a spec; `.toml` files are parsed as TOML, everything else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))?
        };
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.key().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.key()));
        }
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn default_spec_is_valid_and_matches_desk_layout() {
        let s = ExperimentSpec::default();
        s.validate().unwrap();
        assert_eq!(s.model.widths(32, 10), vec![32, 64, 64, 32, 10]);
        assert_eq!(s.model.head_start(), 1);
        assert_eq!(s.model.plastic_layers(), 3);
        assert_eq!(s.trial_seeds().len(), 10);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let s: ExperimentSpec = serde_json::from_str(r#"{"trials": 2, "methods": ["baseline", "ts"]}"#).unwrap();
        assert_eq!(s.trials, 2);
        assert_eq!(s.methods, vec![Method::Baseline, Method::Ts]);
        assert_eq!(s.bins, 15);
    }

    #[test]
    fn toml_spec_parses() {
        let s: ExperimentSpec = toml::from_str(
            r#"
            trials = 1
            methods = ["src"]
            [dataset]
            kind = "csv"
            path = "data.csv"
            "#,
        )
        .unwrap();
        assert!(matches!(s.dataset, DatasetSource::Csv { .. }));
    }

    #[test]
    fn rejects_inconsistent_spec() {
        let mut s = ExperimentSpec::default();
        s.split.fractions = [0.5, 0.5, 0.5];
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::default();
        s.seeds = Some(vec![1, 2]);
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::default();
        s.split.test_from_validation = true;
        assert!(s.validate().is_err());
    }
}
