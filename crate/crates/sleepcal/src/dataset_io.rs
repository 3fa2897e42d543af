//! Dataset ingestion from CSV and IDX files, and CSV export.

use std::fs;
use std::io::Write;
use std::path::Path;

use sleepcal_core::LabeledDataset;

use crate::error::{Error, Result};

/// Reads one sample per row with the integer label in the last column.
///
/// A first row that does not parse as numbers is taken as a header. The class
/// count is `max label + 1` unless given.
pub fn ingest_csv(path: &Path, class_count: Option<usize>) -> Result<LabeledDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, path, class_count)
}

fn parse_csv<R: std::io::Read>(reader: R, path: &Path, class_count: Option<usize>) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(idx as u64 + 1, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.len() < 2 {
            return Err(err(line, "need at least one feature and a label".into()));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().take(record.len() - 1).map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if idx == 0 => continue,
            Err(e) => return Err(err(line, format!("bad feature value: {e}"))),
        };
        let label_text = &record[record.len() - 1];
        let label: usize = match label_text.parse() {
            Ok(y) => y,
            Err(_) if idx == 0 => continue,
            Err(_) => return Err(err(line, format!("label {label_text:?} is not a class index"))),
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(line, format!("expected {w} features, found {}", values.len())));
            }
            Some(_) => {}
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(line, "non-finite feature value".into()));
        }
        features.extend(values);
        labels.push(label);
    }
    let width = width.ok_or_else(|| err(0, "no samples".into()))?;
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    Ok(LabeledDataset::from_flat(features, labels, width, classes)?)
}

/// Writes `data` in the layout [`ingest_csv`] reads, with shortest round-trip floats.
pub fn export_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..data.feature_dim())
        .map(|i| format!("x{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (x, y) in data.iter() {
        for v in x {
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&y.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct IdxFile {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn read_idx(path: &Path) -> Result<IdxFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |offset: usize, message: String| Error::Idx {
        path: path.to_path_buf(),
        offset,
        message,
    };
    if bytes.len() < 4 {
        return Err(err(0, "truncated magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(0, "magic number must start with two zero bytes".into()));
    }
    if bytes[2] != 0x08 {
        return Err(err(2, format!("unsupported element type 0x{:02x}, expected unsigned byte", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(err(3, "zero dimensions".into()));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(err(bytes.len(), "truncated dimension header".into()));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    if bytes.len() - header != expected {
        return Err(err(
            header,
            format!("payload has {} bytes, dimensions {dims:?} need {expected}", bytes.len() - header),
        ));
    }
    Ok(IdxFile {
        dims,
        payload: bytes[header..].to_vec(),
    })
}

/// Reads an IDX image file and its label file; pixels are scaled to `[0, 1]`.
pub fn ingest_idx(images: &Path, labels: &Path, class_count: Option<usize>) -> Result<LabeledDataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if lab.dims.len() != 1 {
        return Err(Error::Idx {
            path: labels.to_path_buf(),
            offset: 3,
            message: format!("label file must be one-dimensional, has {} dimensions", lab.dims.len()),
        });
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Idx {
            path: labels.to_path_buf(),
            offset: 4,
            message: format!("{} labels for {} images", lab.dims[0], img.dims[0]),
        });
    }
    let feature_dim: usize = img.dims[1..].iter().product::<usize>().max(1);
    let features = img.payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = lab.payload.iter().map(|&b| b as usize).collect();
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    Ok(LabeledDataset::from_flat(features, labels, feature_dim, classes)?)
}

/// Writes an unsigned-byte IDX file with the given dimensions.
pub fn write_idx(path: &Path, dims: &[u32], payload: &[u8]) -> Result<()> {
    let mut out = vec![0u8, 0, 0x08, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
