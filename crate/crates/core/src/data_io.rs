//! Feature matrix and label file formats.
//!
//! Text features: a `"N n"` header line followed by `N` lines of `n`
//! space-separated floats. Binary features: the magic `TSAF`, then `N` and
//! `n` as little-endian `u32`, then `N*n` little-endian `f32` values in row
//! major order. Labels: one UTF-8 token per line, one line per frame.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, TsaError};

pub const BINARY_MAGIC: &[u8; 4] = b"TSAF";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Text,
    Binary,
}

impl FeatureFormat {
    /// `.bin` and `.tsaf` are binary; everything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("tsaf") => FeatureFormat::Binary,
            _ => FeatureFormat::Text,
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = TsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(FeatureFormat::Text),
            "binary" => Ok(FeatureFormat::Binary),
            other => Err(TsaError::InvalidArgument(format!(
                "unknown feature format {other:?}"
            ))),
        }
    }
}

/// Dense row-major matrix of finite values, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(TsaError::InvalidShape { rows, cols });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TsaError::InvalidValue {
                location: format!("row {}, column {}", pos / cols, pos % cols),
                value: data[pos].to_string(),
            });
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(TsaError::RowLengthMismatch {
                line: bad + 1,
                expected: cols,
                found: rows[bad].len(),
            });
        }
        FeatureMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        FeatureMatrix::new(rows, cols, vec![0.0; rows * cols])
    }

    /// Number of frames `N`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature dimensionality `n`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(keep.len() * self.cols);
        for &i in keep {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(keep.len(), self.cols, data)
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| TsaError::io(path, e))?;
    match format {
        FeatureFormat::Text => {
            let text = String::from_utf8(bytes)
                .map_err(|_| TsaError::MalformedHeader("file is not UTF-8".into()))?;
            parse_text_features(&text)
        }
        FeatureFormat::Binary => parse_binary_features(&bytes),
    }
}

pub fn save_features(m: &FeatureMatrix, path: &Path, format: FeatureFormat) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Text => format_text_features(m).into_bytes(),
        FeatureFormat::Binary => encode_binary_features(m),
    };
    fs::write(path, bytes).map_err(|e| TsaError::io(path, e))
}

pub fn parse_text_features(text: &str) -> Result<FeatureMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| TsaError::MalformedHeader("empty file".into()))?;
    let dims: Vec<&str> = header.split(' ').collect();
    let (rows, cols) = match dims.as_slice() {
        [a, b] => match (a.parse::<usize>(), b.parse::<usize>()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(TsaError::MalformedHeader(header.to_string())),
        },
        _ => return Err(TsaError::MalformedHeader(header.to_string())),
    };
    if rows == 0 || cols == 0 {
        return Err(TsaError::InvalidShape { rows, cols });
    }

    let mut data = Vec::with_capacity(rows * cols);
    let mut found = 0;
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        found += 1;
        if found > rows {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| TsaError::InvalidValue {
                location: format!("line {line_no}"),
                value: tok.to_string(),
            })?;
            if !v.is_finite() {
                return Err(TsaError::InvalidValue {
                    location: format!("line {line_no}"),
                    value: tok.to_string(),
                });
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(TsaError::RowLengthMismatch {
                line: line_no,
                expected: cols,
                found: data.len() - before,
            });
        }
    }
    if found != rows {
        return Err(TsaError::RowCountMismatch {
            expected: rows,
            found,
        });
    }
    FeatureMatrix::new(rows, cols, data)
}

pub fn format_text_features(m: &FeatureMatrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn encode_binary_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.as_slice().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn parse_binary_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 12 || &bytes[..4] != BINARY_MAGIC {
        return Err(TsaError::MalformedHeader("missing TSAF magic".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(4))
        .ok_or(TsaError::InvalidShape { rows, cols })?;
    if payload.len() != expected {
        let found = if cols == 0 { 0 } else { payload.len() / (4 * cols) };
        return Err(TsaError::RowCountMismatch {
            expected: rows,
            found,
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(TsaError::InvalidValue {
                location: format!("byte offset {}", 12 + 4 * k),
                value: v.to_string(),
            });
        }
        data.push(v as f64);
    }
    FeatureMatrix::new(rows, cols, data)
}

/// Per-frame integer labels with the token names they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub labels: Vec<usize>,
    pub names: Vec<String>,
    pub background_id: Option<usize>,
}

impl LabelSequence {
    /// Builds a sequence from raw integer labels; names default to the
    /// decimal ids.
    pub fn from_ids(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        LabelSequence {
            labels,
            names: (0..k).map(|c| c.to_string()).collect(),
            background_id: None,
        }
    }

    /// Maps tokens to dense ids in order of first appearance.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S], background: Option<&str>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(TsaError::EmptyLabels);
        }
        let mut ids: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut labels = Vec::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref();
            if tok.is_empty() {
                return Err(TsaError::BlankLabel(i + 1));
            }
            let next = names.len();
            let id = *ids.entry(tok).or_insert_with(|| {
                names.push(tok.to_string());
                next
            });
            labels.push(id);
        }
        let background_id = background.and_then(|b| ids.get(b).copied());
        Ok(LabelSequence {
            labels,
            names,
            background_id,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of classes `K`.
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    /// Restricts the sequence to the given frames, keeping the class table.
    pub fn select(&self, keep: &[usize]) -> Self {
        LabelSequence {
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            names: self.names.clone(),
            background_id: self.background_id,
        }
    }
}

pub fn parse_labels(text: &str, background: Option<&str>) -> Result<LabelSequence> {
    let mut lines: Vec<&str> = text.split('\n').map(|l| l.trim_end_matches('\r')).collect();
    // one trailing newline is allowed
    if lines.last() == Some(&"") {
        lines.pop();
    }
    LabelSequence::from_tokens(&lines, background)
}

pub fn load_labels(path: &Path, background: Option<&str>) -> Result<LabelSequence> {
    let text = fs::read_to_string(path).map_err(|e| TsaError::io(path, e))?;
    parse_labels(&text, background)
}

pub fn format_labels(labels: &LabelSequence) -> String {
    let mut out = String::new();
    for &l in &labels.labels {
        out.push_str(&labels.names[l]);
        out.push('\n');
    }
    out
}

pub fn save_labels(labels: &LabelSequence, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| TsaError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_labels(labels).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| TsaError::io(path, e))
}
