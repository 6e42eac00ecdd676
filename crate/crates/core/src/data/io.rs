//! Delimiter-separated series files.
//!
//! One series per line, comma or tab separated (detected from the first
//! non-blank line). Labeled files carry an integer class in the first field,
//! matrix files are plain numeric rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassId, TimeSeriesSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Class label first, then the series values.
    Labeled,
    /// Headerless numeric matrix, no labels.
    Matrix,
}

fn detect_delimiter(text: &str) -> char {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.contains('\t') {
        '\t'
    } else {
        ','
    }
}

pub fn parse_dataset(text: &str, format: DatasetFormat, path: &Path) -> Result<Vec<TimeSeriesSample>> {
    let delimiter = detect_delimiter(text);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut width = None;
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = Vec::new();
        for (col, field) in line.split(delimiter).enumerate() {
            let field = field.trim();
            let value: f64 = field
                .parse()
                .map_err(|_| parse_err(line_no, format!("field {} is not numeric: {field:?}", col + 1)))?;
            if !value.is_finite() {
                return Err(parse_err(line_no, format!("field {} is not finite", col + 1)));
            }
            fields.push(value);
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(
                    line_no,
                    format!("ragged row: {} fields, expected {w}", fields.len()),
                ))
            }
            _ => {}
        }
        let sample = match format {
            DatasetFormat::Labeled => {
                if fields.len() < 2 {
                    return Err(parse_err(line_no, "labeled row needs a label and values".into()));
                }
                let label = fields[0];
                if label.fract() != 0.0 || label < 0.0 || label > u32::MAX as f64 {
                    return Err(parse_err(line_no, format!("label {label} is not a class id")));
                }
                TimeSeriesSample::labeled(fields[1..].to_vec(), label as ClassId)
            }
            DatasetFormat::Matrix => TimeSeriesSample::new(fields),
        };
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::structural(format!("{} contains no series", path.display())));
    }
    Ok(samples)
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<TimeSeriesSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format, path)
}

pub fn format_dataset(samples: &[TimeSeriesSample], format: DatasetFormat) -> Result<String> {
    let mut out = String::new();
    for (i, sample) in samples.iter().enumerate() {
        if format == DatasetFormat::Labeled {
            let label = sample
                .label
                .ok_or_else(|| Error::structural(format!("sample {i} has no label")))?;
            write!(out, "{label},").unwrap();
        }
        let row: Vec<String> = sample.values.iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(
    path: impl AsRef<Path>,
    samples: &[TimeSeriesSample],
    format: DatasetFormat,
) -> Result<()> {
    let path = path.as_ref();
    let text = format_dataset(samples, format)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Sidecar with one integer class per line.
pub fn write_labels(path: impl AsRef<Path>, labels: &[ClassId]) -> Result<()> {
    let path = path.as_ref();
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<ClassId>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("not a class id: {l:?}"),
            })
        })
        .collect()
}
