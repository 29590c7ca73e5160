//! File formats: CSV sequences, label lists, score tables, and JSON models.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::detector::ChangeScoreSeries;
use crate::error::{input, Error, Result};
use crate::metric::{Standardizer, TrainConfig, TrainedModel};
use crate::ot::GroundMetric;

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

fn parse_err(line: usize, column: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        line: Some(line),
        column,
        message: message.into(),
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.flush().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Parses a rectangular CSV of decimal floats. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_sequence_csv(text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut count = 0;
        for (c, field) in line.split(',').enumerate() {
            let field = field.trim();
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line_no, Some(c + 1), format!("not a number: '{field}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, Some(c + 1), "non-finite value"));
            }
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(
                    line_no,
                    None,
                    format!("expected {w} columns, found {count}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let Some(width) = width else {
        return Err(Error::Parse {
            line: None,
            column: None,
            message: "no data rows".into(),
        });
    };
    Ok(Array2::from_shape_vec((rows, width), values).expect("rectangular"))
}

pub fn read_sequence_csv(path: &Path) -> Result<Array2<f64>> {
    parse_sequence_csv(&read_text(path)?)
}

/// Shortest round-trip decimal form of every value.
pub fn format_sequence_csv(data: &Array2<f64>) -> String {
    let mut out = String::with_capacity(data.len() * 20);
    for row in data.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_sequence_csv(path: &Path, data: &Array2<f64>) -> Result<()> {
    atomic_write(path, format_sequence_csv(data).as_bytes())
}

/// One nonnegative integer per line, strictly increasing.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|_| parse_err(k + 1, None, format!("not a nonnegative integer: '{line}'")))?;
        if out.last().is_some_and(|&p| p >= v) {
            return Err(parse_err(k + 1, None, "labels must be strictly increasing"));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&read_text(path)?)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    atomic_write(path, text.as_bytes())
}

/// `index,score,valid` with one row per sequence position.
pub fn format_scores_csv(s: &ChangeScoreSeries) -> String {
    let mut out = String::from("index,score,valid\n");
    for (i, (v, ok)) in s.scores.iter().zip(&s.valid).enumerate() {
        out.push_str(&format!("{i},{v},{}\n", u8::from(*ok)));
    }
    out
}

pub fn write_scores_csv(path: &Path, s: &ChangeScoreSeries) -> Result<()> {
    atomic_write(path, format_scores_csv(s).as_bytes())
}

pub fn parse_scores_csv(text: &str) -> Result<ChangeScoreSeries> {
    let mut scores = Vec::new();
    let mut valid = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("index") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(
                line_no,
                None,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, Some(1), "bad index"))?;
        if idx != scores.len() {
            return Err(parse_err(
                line_no,
                Some(1),
                format!("expected index {}", scores.len()),
            ));
        }
        let v: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, Some(2), "bad score"))?;
        let ok = match fields[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(parse_err(
                    line_no,
                    Some(3),
                    format!("bad valid flag '{other}'"),
                ))
            }
        };
        scores.push(v);
        valid.push(ok);
    }
    ChangeScoreSeries::from_masked(scores, valid)
}

pub fn read_scores_csv(path: &Path) -> Result<ChangeScoreSeries> {
    parse_scores_csv(&read_text(path)?)
}

/// On-disk form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub r: usize,
    pub d: usize,
    pub gamma: f64,
    /// Row-major `r × d`.
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub config: TrainConfig,
    pub best_iteration: usize,
    pub train_loss_history: Vec<f64>,
    pub val_loss_history: Vec<f64>,
}

impl ModelFile {
    pub fn from_model(m: &TrainedModel) -> Self {
        let l = m.metric.l();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            r: l.nrows(),
            d: l.ncols(),
            gamma: m.metric.gamma(),
            l: l.iter().copied().collect(),
            feature_mean: m.standardizer.mean.to_vec(),
            feature_scale: m.standardizer.scale.to_vec(),
            config: m.config.clone(),
            best_iteration: m.best_iteration,
            train_loss_history: m.train_loss_history.clone(),
            val_loss_history: m.val_loss_history.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return input(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            ));
        }
        let checks = [
            ("L length", self.r * self.d, self.l.len()),
            ("feature_mean length", self.d, self.feature_mean.len()),
            ("feature_scale length", self.d, self.feature_scale.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        if self
            .feature_scale
            .iter()
            .any(|&s| !(s.is_finite() && s > 0.0))
        {
            return input("feature_scale entries must be positive");
        }
        Ok(())
    }

    pub fn metric(&self) -> Result<GroundMetric> {
        self.validate()?;
        let l = Array2::from_shape_vec((self.r, self.d), self.l.clone()).expect("checked length");
        GroundMetric::new(l, self.gamma)
    }

    pub fn standardizer(&self) -> Standardizer {
        Standardizer {
            mean: self.feature_mean.clone().into(),
            scale: self.feature_scale.clone().into(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    atomic_write(path, model.to_json().as_bytes())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_json(&read_text(path)?)
}
