//! Versioned JSON weight files with hex-float payloads.
//!
//! ```json
//! { "format": "sleepcal-model", "version": 1, "head_start": 1,
//!   "layers": [ { "in_dim": 2, "out_dim": 3, "activation": "relu",
//!                 "weights": ["0x1p+0", ...], "bias": ["0x0p+0", ...] } ] }
//! ```
//!
//! Weights are row-major `(out_dim, in_dim)`. Loading a saved file gives back
//! bit-identical parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sleepcal_core::{Activation, DenseLayer, DenseNetwork};

use crate::error::{Error, Result};
use crate::hexfloat;

pub const FORMAT: &str = "sleepcal-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    head_start: usize,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<String>,
    bias: Option<Vec<String>>,
}

fn encode(xs: &[f64]) -> Vec<String> {
    // Layers reject non-finite values on construction.
    xs.iter()
        .map(|&x| hexfloat::format(x).expect("finite weight"))
        .collect()
}

fn decode(xs: &[String], what: &str) -> Result<Vec<f64>> {
    xs.iter()
        .map(|s| hexfloat::parse(s).ok_or_else(|| Error::format(what, format!("bad hex float {s:?}"))))
        .collect()
}

pub fn to_json(net: &DenseNetwork) -> String {
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        head_start: net.head_start(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation(),
                weights: encode(l.weights()),
                bias: l.bias().map(encode),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model file serializes")
}

pub fn from_json(text: &str) -> Result<DenseNetwork> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::format("model file", e))?;
    if file.format != FORMAT {
        return Err(Error::format("model file", format!("unknown format {:?}", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::format("model file", format!("unsupported version {}", file.version)));
    }
    let layers = file
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let what = format!("layer {i}");
            let weights = decode(&l.weights, &what)?;
            let bias = l.bias.as_ref().map(|b| decode(b, &what)).transpose()?;
            Ok(DenseLayer::new(l.in_dim, l.out_dim, weights, bias, l.activation)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseNetwork::new(layers, file.head_start)?)
}

pub fn save(net: &DenseNetwork, path: &Path) -> Result<()> {
    fs::write(path, to_json(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DenseNetwork> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_version_and_format() {
        let net = DenseNetwork::seeded(&[2, 3, 2], 1, false, 0).unwrap();
        let text = to_json(&net);
        assert!(from_json(&text.replace("\"version\": 1", "\"version\": 2")).is_err());
        assert!(from_json(&text.replace(FORMAT, "other")).is_err());
        assert_eq!(from_json(&text).unwrap(), net);
    }

    #[test]
    fn rejects_bad_payload() {
        let net = DenseNetwork::seeded(&[1, 2], 0, true, 0).unwrap();
        let text = to_json(&net).replace("0x", "1x");
        assert!(from_json(&text).is_err());
    }
}
