//! Reading and writing observation files.
//!
//! The format is CSV with a header of either `value` or `value,error`.

use abcmix::ObservedDataset;
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Validation {
        path: String,
        line: usize,
        message: String,
    },
}

/// Observation columns as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub values: Vec<f64>,
    pub errors: Option<Vec<f64>>,
}

impl RawData {
    pub fn into_dataset(self, grid_size: usize) -> abcmix::Result<ObservedDataset> {
        ObservedDataset::new(self.values, self.errors, grid_size)
    }
}

pub fn read_data(path: &Path) -> Result<RawData, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_data(&text, &path.display().to_string())
}

/// Parses the text of a data file; `origin` names it in error messages.
pub fn parse_data(text: &str, origin: &str) -> Result<RawData, IngestError> {
    let parse_err = |line: u64, message: String| IngestError::Parse {
        path: origin.to_string(),
        line: line as usize,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let with_errors = match header
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        [] | [""] => return Err(parse_err(1, "file is empty".into())),
        ["value"] => false,
        ["value", "error"] => true,
        _ => {
            return Err(parse_err(
                1,
                format!(
                    "expected header `value` or `value,error`, found `{}`",
                    header.join(",")
                ),
            ))
        }
    };

    let mut values = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            parse_err(
                e.position().map_or(0, |p| line_of(text, p.byte())),
                e.to_string(),
            )
        })?;
        let line = record.position().map_or(0, |p| line_of(text, p.byte()));
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let number = |s: &str| -> Result<f64, IngestError> {
            match s.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(parse_err(line, format!("`{s}` is not a finite number"))),
            }
        };
        values.push(number(&record[0])?);
        if with_errors {
            let e = number(&record[1])?;
            if e < 0.0 {
                return Err(IngestError::Validation {
                    path: origin.to_string(),
                    line: line as usize,
                    message: format!("measurement error {e} is negative"),
                });
            }
            errors.push(e);
        }
    }
    if values.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(RawData {
        values,
        errors: with_errors.then_some(errors),
    })
}

/// Writes values (and errors, when present) with round-trip precision.
pub fn write_data(path: &Path, values: &[f64], errors: Option<&[f64]>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    match errors {
        Some(errors) => {
            writeln!(out, "value,error")?;
            for (v, e) in values.iter().zip(errors) {
                writeln!(out, "{v:?},{e:?}")?;
            }
        }
        None => {
            writeln!(out, "value")?;
            for v in values {
                writeln!(out, "{v:?}")?;
            }
        }
    }
    out.flush()
}

/// One-based physical line of the first non-blank byte at or after `offset`.
fn line_of(text: &str, offset: u64) -> u64 {
    let bytes = text.as_bytes();
    let mut end = (offset as usize).min(bytes.len());
    while end < bytes.len() && bytes[end].is_ascii_whitespace() {
        end += 1;
    }
    1 + bytes[..end].iter().filter(|&&b| b == b'\n').count() as u64
}
