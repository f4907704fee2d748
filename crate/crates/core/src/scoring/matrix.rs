//! Groups × columns score table and its CSV + sidecar serialization.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Measure;
use crate::provenance::Provenance;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("{0} values for a {1}×{2} matrix")]
    Dimensions(usize, usize, usize),
    #[error("duplicate {axis} label `{label}`")]
    Duplicate { axis: &'static str, label: String },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: String, col: String },
    #[error("matrices disagree on {0}")]
    Incompatible(&'static str),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Columns are trait-pair ids ("powerless-powerful").
    TraitPair,
    /// Columns are single adjectives.
    Adjective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub measure: Measure,
    /// Template ids averaged into each cell, in id order; empty for CEAT.
    pub templates: Vec<String>,
    pub kind: ColumnKind,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Row-major values.
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    measure: Measure,
    templates: Vec<String>,
    kind: ColumnKind,
    rows: usize,
    cols: usize,
    provenance: Provenance,
}

fn check_unique(axis: &'static str, labels: &[String]) -> Result<(), MatrixError> {
    let mut seen = BTreeSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(MatrixError::Duplicate {
                axis,
                label: l.clone(),
            });
        }
    }
    Ok(())
}

/// Path of the JSON sidecar that accompanies a score CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

impl ScoreMatrix {
    pub fn new(
        measure: Measure,
        templates: Vec<String>,
        kind: ColumnKind,
        rows: Vec<String>,
        cols: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, MatrixError> {
        if values.len() != rows.len() * cols.len() {
            return Err(MatrixError::Dimensions(values.len(), rows.len(), cols.len()));
        }
        check_unique("row", &rows)?;
        check_unique("column", &cols)?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite {
                row: rows[i / cols.len()].clone(),
                col: cols[i % cols.len()].clone(),
            });
        }
        Ok(ScoreMatrix {
            measure,
            templates,
            kind,
            rows,
            cols,
            values,
        })
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == id)
    }

    pub fn col_index(&self, id: &str) -> Option<usize> {
        self.cols.iter().position(|c| c == id)
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols.len() + col]
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        Some(self.value(self.row_index(row)?, self.col_index(col)?))
    }

    pub fn row(&self, id: &str) -> Option<&[f64]> {
        let i = self.row_index(id)?;
        let n = self.cols.len();
        Some(&self.values[i * n..(i + 1) * n])
    }

    /// Cell-wise mean of matrices sharing labels, measure and kind. The
    /// template lists are merged in id order.
    pub fn average(parts: &[&ScoreMatrix]) -> Result<ScoreMatrix, MatrixError> {
        let first = parts.first().ok_or(MatrixError::Incompatible("count (none given)"))?;
        for p in &parts[1..] {
            if p.rows != first.rows {
                return Err(MatrixError::Incompatible("rows"));
            }
            if p.cols != first.cols {
                return Err(MatrixError::Incompatible("columns"));
            }
            if p.measure != first.measure || p.kind != first.kind {
                return Err(MatrixError::Incompatible("measure or kind"));
            }
        }
        let n = parts.len() as f64;
        let values = (0..first.values.len())
            .map(|i| parts.iter().map(|p| p.values[i]).sum::<f64>() / n)
            .collect();
        let templates: BTreeSet<String> = parts.iter().flat_map(|p| p.templates.iter().cloned()).collect();
        ScoreMatrix::new(
            first.measure,
            templates.into_iter().collect(),
            first.kind,
            first.rows.clone(),
            first.cols.clone(),
            values,
        )
    }

    /// CSV text: optional `#` provenance line, a header of `group` and the
    /// column ids, then one row per group. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self, provenance: Option<&Provenance>) -> String {
        let mut out = String::new();
        if let Some(p) = provenance {
            out.push_str(&p.comment_line());
            out.push('\n');
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("group").chain(self.cols.iter().map(String::as_str));
        w.write_record(header).expect("in-memory write");
        let n = self.cols.len();
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.clone()];
            rec.extend(self.values[i * n..(i + 1) * n].iter().map(|v| format!("{v}")));
            w.write_record(&rec).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    fn sidecar_json(&self, provenance: &Provenance) -> String {
        let s = Sidecar {
            measure: self.measure,
            templates: self.templates.clone(),
            kind: self.kind,
            rows: self.rows.len(),
            cols: self.cols.len(),
            provenance: provenance.clone(),
        };
        let mut json = serde_json::to_string_pretty(&s).expect("sidecar serializes");
        json.push('\n');
        json
    }

    /// Writes `path` and its sidecar JSON.
    pub fn write(&self, path: &Path, provenance: &Provenance) -> Result<(), MatrixError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |e: std::io::Error| MatrixError::Io {
                path,
                message: e.to_string(),
            }
        };
        fs::write(path, self.to_csv(Some(provenance))).map_err(io(path))?;
        let side = sidecar_path(path);
        fs::write(&side, self.sidecar_json(provenance)).map_err(io(&side))?;
        Ok(())
    }

    /// Reads a score CSV and its sidecar; returns the matrix and the
    /// provenance recorded when it was written.
    pub fn read(path: &Path) -> Result<(ScoreMatrix, Provenance), MatrixError> {
        let err = |p: &Path, message: String| MatrixError::Io {
            path: p.display().to_string(),
            message,
        };
        let side = sidecar_path(path);
        let side_text = fs::read_to_string(&side).map_err(|e| err(&side, e.to_string()))?;
        let sidecar: Sidecar = serde_json::from_str(&side_text).map_err(|e| err(&side, e.to_string()))?;
        let text = fs::read_to_string(path).map_err(|e| err(path, e.to_string()))?;
        let (rows, cols, values) = parse_csv(&text).map_err(|m| err(path, m))?;
        if rows.len() != sidecar.rows || cols.len() != sidecar.cols {
            return Err(err(path, "shape disagrees with sidecar".into()));
        }
        let m = ScoreMatrix::new(sidecar.measure, sidecar.templates, sidecar.kind, rows, cols, values)?;
        Ok((m, sidecar.provenance))
    }
}

type Parsed = (Vec<String>, Vec<String>, Vec<f64>);

fn parse_csv(text: &str) -> Result<Parsed, String> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.get(0) != Some("group") {
        return Err("first header column must be `group`".into());
    }
    let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != cols.len() + 1 {
            return Err(format!("row {}: expected {} fields", line + 1, cols.len() + 1));
        }
        rows.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            values.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("row {}: `{f}`: {e}", line + 1))?,
            );
        }
    }
    Ok((rows, cols, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ScoreMatrix {
        ScoreMatrix::new(
            Measure::Set,
            vec!["all_are".into()],
            ColumnKind::TraitPair,
            vec!["asian".into(), "black".into()],
            vec!["cold-warm".into(), "poor-wealthy".into()],
            vec![0.1, -0.25, 1.0 / 3.0, 50.0],
        )
        .unwrap()
    }

    #[test]
    fn lookups() {
        let m = sample();
        assert_eq!(m.get("black", "poor-wealthy"), Some(50.0));
        assert_eq!(m.row("asian"), Some(&[0.1, -0.25][..]));
        assert_eq!(m.get("nobody", "cold-warm"), None);
    }

    #[test]
    fn rejects_bad_shapes() {
        let e = ScoreMatrix::new(Measure::Ilps, vec![], ColumnKind::Adjective, vec!["a".into()], vec!["x".into()], vec![]);
        assert!(matches!(e, Err(MatrixError::Dimensions(0, 1, 1))));
        let e = ScoreMatrix::new(Measure::Ilps, vec![], ColumnKind::Adjective, vec!["a".into(), "a".into()], vec!["x".into()], vec![0.0, 0.0]);
        assert!(matches!(e, Err(MatrixError::Duplicate { .. })));
        let e = ScoreMatrix::new(Measure::Ilps, vec![], ColumnKind::Adjective, vec!["a".into()], vec!["x".into()], vec![f64::NAN]);
        assert!(matches!(e, Err(MatrixError::NonFinite { .. })));
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let m = sample();
        let prov = Provenance::new();
        m.write(&path, &prov).unwrap();
        let (back, p) = ScoreMatrix::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(p, prov);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# stereo-meter"));
        assert!(text.contains("group,cold-warm,poor-wealthy\n"));
    }

    #[test]
    fn averaging_two_templates() {
        let a = ScoreMatrix::new(Measure::Ilps, vec!["t2".into()], ColumnKind::TraitPair, vec!["g".into()], vec!["p".into()], vec![0.2]).unwrap();
        let b = ScoreMatrix::new(Measure::Ilps, vec!["t1".into()], ColumnKind::TraitPair, vec!["g".into()], vec!["p".into()], vec![0.4]).unwrap();
        let avg = ScoreMatrix::average(&[&a, &b]).unwrap();
        assert!((avg.values[0] - 0.3).abs() < 1e-15);
        assert_eq!(avg.templates, ["t1", "t2"]);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let m = ScoreMatrix::new(
                Measure::Ceat, vec![], ColumnKind::TraitPair,
                vec!["a".into(), "b".into()],
                vec!["x".into(), "y".into(), "z".into()],
                values,
            ).unwrap();
            let (rows, cols, back) = parse_csv(&m.to_csv(None)).unwrap();
            prop_assert_eq!(rows, m.rows.clone());
            prop_assert_eq!(cols, m.cols.clone());
            prop_assert_eq!(back, m.values.clone());
        }
    }
}
