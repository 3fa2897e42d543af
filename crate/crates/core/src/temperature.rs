//! Temperature scaling: one positive scalar dividing the logits, fitted on
//! validation NLL.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config, input, Error, Result};
use crate::loss::softmax_scaled;
use crate::math::{exact_mean, neg_log_floored};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const IDENTITY: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t > 0.0 && t.is_finite() {
            Ok(Self(t))
        } else {
            Err(config(format!("temperature {t} must be positive and finite")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(t: f64) -> Result<Self> {
        Self::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// `softmax(z / T)`.
pub fn apply_temperature(z: &[f64], t: Temperature) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(input("empty logit vector"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(softmax_scaled(z, t.0))
}

/// Mean NLL of `labels` under `softmax(logits / t)`.
pub fn nll_at(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    let terms: Vec<f64> = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| neg_log_floored(softmax_scaled(z, t)[y]))
        .collect();
    exact_mean(&terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub low: f64,
    pub high: f64,
    /// Final bracket width in `ln T`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            low: 0.05,
            high: 20.0,
            tolerance: 1e-4,
            max_iterations: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    /// Validation NLL at `temperature`.
    pub nll: f64,
    /// Validation NLL at `T = 1`.
    pub baseline_nll: f64,
    /// Set when the optimum was worse than `T = 1` and identity was kept.
    pub fell_back: bool,
    /// Cleared when the bracket did not shrink below tolerance in time.
    pub converged: bool,
    pub iterations: usize,
}

pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize]) -> Result<TemperatureFit> {
    fit_temperature_with(logits, labels, &FitOptions::default())
}

/// Golden-section search for the NLL minimiser over `ln T`.
///
/// NLL is convex in `1 / T`, hence unimodal in `ln T`.
pub fn fit_temperature_with(
    logits: &[Vec<f64>],
    labels: &[usize],
    opts: &FitOptions,
) -> Result<TemperatureFit> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(input("validation logits must be nonempty and match the labels"));
    }
    let classes = logits[0].len();
    for (z, &y) in logits.iter().zip(labels) {
        if z.len() != classes || y >= classes {
            return Err(input("ragged logits or label out of range"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("validation logits"));
        }
    }
    if !(opts.low > 0.0 && opts.high > opts.low && opts.tolerance > 0.0) {
        return Err(config("temperature search bracket is invalid"));
    }

    let f = |u: f64| nll_at(logits, labels, libm::exp(u));
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let (mut a, mut b) = (libm::log(opts.low), libm::log(opts.high));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    // the interior probes never reach the bracket ends, where the optimum
    // sits when NLL is still falling at the edge
    for u in [a, b] {
        let fu = f(u);
        if fu < best.1 {
            best = (u, fu);
        }
    }
    let mut iterations = 0;
    while b - a > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    let converged = b - a <= opts.tolerance;
    let baseline_nll = nll_at(logits, labels, 1.0);
    let (temperature, nll, fell_back) = if best.1 > baseline_nll {
        (Temperature::IDENTITY, baseline_nll, true)
    } else {
        (Temperature::new(libm::exp(best.0))?, best.1, false)
    };
    Ok(TemperatureFit {
        temperature,
        nll,
        baseline_nll,
        fell_back,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::softmax;
    use alloc::vec;

    #[test]
    fn identity_temperature_is_plain_softmax() {
        let z = [0.3, -1.2, 2.5];
        assert_eq!(apply_temperature(&z, Temperature::IDENTITY).unwrap(), softmax(&z).unwrap());
    }

    #[test]
    fn huge_temperature_is_nearly_uniform() {
        let p = apply_temperature(&[3.0, 1.0], Temperature::new(1e6).unwrap()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn temperature_two_halves_logits() {
        let p = apply_temperature(&[2.0, 0.0], Temperature::new(2.0).unwrap()).unwrap();
        let e = 1f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_temperature() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::INFINITY).is_err());
        assert!(serde_json::from_str::<Temperature>("-2.0").is_err());
    }

    #[test]
    fn symmetric_case_fits_identity() {
        // p = 3/4 from logits (ln 3, 0) with labels in exactly 3:1 proportion.
        let z = vec![3f64.ln(), 0.0];
        let logits = vec![z.clone(), z.clone(), z.clone(), z];
        let fit = fit_temperature(&logits, &[0, 0, 0, 1]).unwrap();
        assert!((fit.temperature.value() - 1.0).abs() <= 1e-3, "{fit:?}");
        assert!(fit.converged);
    }

    #[test]
    fn overconfident_logits_get_heated() {
        let logits = vec![vec![8.0, 0.0], vec![8.0, 0.0], vec![0.0, 8.0], vec![0.0, 8.0]];
        let fit = fit_temperature(&logits, &[0, 1, 1, 1]).unwrap();
        assert!(fit.temperature.value() > 1.0);
        assert!(fit.nll <= fit.baseline_nll);
    }

    #[test]
    fn rejects_empty_validation() {
        assert!(fit_temperature(&[], &[]).is_err());
    }
}
