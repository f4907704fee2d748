//! Human stereotype ratings: per-annotation or pre-aggregated CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HumanError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("ratings row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("unrecognized ratings header {0:?}; expected a `rating` or a `mean` column")]
    Header(Vec<String>),
    #[error("duplicate aggregated cell ({group}, {trait_pair})")]
    Duplicate { group: String, trait_pair: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanCell {
    /// Individual ratings when the input was per-annotation; empty otherwise.
    pub ratings: Vec<f64>,
    pub mean: f64,
    pub n: usize,
}

/// Ratings keyed by group id, then trait-pair id (`left-right`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HumanRatings {
    cells: BTreeMap<String, BTreeMap<String, HumanCell>>,
}

fn check_range(row: usize, what: &str, v: f64) -> Result<f64, HumanError> {
    if v.is_finite() && (0.0..=100.0).contains(&v) {
        Ok(v)
    } else {
        Err(HumanError::Row {
            row,
            message: format!("{what} {v} is outside [0, 100]"),
        })
    }
}

impl HumanRatings {
    /// Aggregates `(group, trait_pair, rating)` annotations by unweighted mean.
    pub fn from_annotations<I, S>(rows: I) -> Result<Self, HumanError>
    where
        I: IntoIterator<Item = (S, S, f64)>,
        S: Into<String>,
    {
        let mut raw: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for (i, (g, p, r)) in rows.into_iter().enumerate() {
            let r = check_range(i + 1, "rating", r)?;
            raw.entry(g.into()).or_default().entry(p.into()).or_default().push(r);
        }
        let cells = raw
            .into_iter()
            .map(|(g, pairs)| {
                let pairs = pairs
                    .into_iter()
                    .map(|(p, ratings)| {
                        let mean = ratings.iter().sum::<f64>() / ratings.len() as f64;
                        let n = ratings.len();
                        (p, HumanCell { ratings, mean, n })
                    })
                    .collect();
                (g, pairs)
            })
            .collect();
        Ok(HumanRatings { cells })
    }

    /// Builds ratings from `(group, trait_pair, mean, n)` rows.
    pub fn from_means<I, S>(rows: I) -> Result<Self, HumanError>
    where
        I: IntoIterator<Item = (S, S, f64, usize)>,
        S: Into<String>,
    {
        let mut cells: BTreeMap<String, BTreeMap<String, HumanCell>> = BTreeMap::new();
        for (i, (g, p, mean, n)) in rows.into_iter().enumerate() {
            let mean = check_range(i + 1, "mean", mean)?;
            let (g, p) = (g.into(), p.into());
            let slot = cells.entry(g.clone()).or_default();
            if slot.contains_key(&p) {
                return Err(HumanError::Duplicate { group: g, trait_pair: p });
            }
            slot.insert(
                p,
                HumanCell {
                    ratings: Vec::new(),
                    mean,
                    n,
                },
            );
        }
        Ok(HumanRatings { cells })
    }

    /// Parses either CSV layout, detected from the header:
    /// `group,trait_left,trait_right,rating,annotator_id` or
    /// `group,trait_left,trait_right,mean,n`.
    pub fn parse_csv(text: &str) -> Result<Self, HumanError> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| HumanError::Row { row: 0, message: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (Some(gi), Some(li), Some(ri)) = (col("group"), col("trait_left"), col("trait_right")) else {
            return Err(HumanError::Header(header));
        };
        let mut records = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| HumanError::Row { row: i + 1, message: e.to_string() })?;
            records.push(rec);
        }
        let num = |row: usize, s: Option<&str>, what: &str| -> Result<f64, HumanError> {
            s.unwrap_or("").parse::<f64>().map_err(|e| HumanError::Row {
                row,
                message: format!("{what}: {e}"),
            })
        };
        let key = |rec: &csv::StringRecord| {
            (
                rec.get(gi).unwrap_or("").to_string(),
                format!("{}-{}", rec.get(li).unwrap_or(""), rec.get(ri).unwrap_or("")),
            )
        };
        if let Some(vi) = col("rating") {
            let rows = records
                .iter()
                .enumerate()
                .map(|(i, rec)| {
                    let (g, p) = key(rec);
                    Ok((g, p, num(i + 1, rec.get(vi), "rating")?))
                })
                .collect::<Result<Vec<_>, HumanError>>()?;
            Self::from_annotations(rows)
        } else if let Some(mi) = col("mean") {
            let ni = col("n");
            let rows = records
                .iter()
                .enumerate()
                .map(|(i, rec)| {
                    let (g, p) = key(rec);
                    let n = match ni {
                        Some(ni) => rec.get(ni).unwrap_or("").parse::<usize>().map_err(|e| HumanError::Row {
                            row: i + 1,
                            message: format!("n: {e}"),
                        })?,
                        None => 0,
                    };
                    Ok((g, p, num(i + 1, rec.get(mi), "mean")?, n))
                })
                .collect::<Result<Vec<_>, HumanError>>()?;
            Self::from_means(rows)
        } else {
            Err(HumanError::Header(header))
        }
    }

    pub fn read(path: &Path) -> Result<Self, HumanError> {
        let text = fs::read_to_string(path).map_err(|e| HumanError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_csv(&text)
    }

    pub fn cell(&self, group: &str, trait_pair: &str) -> Option<&HumanCell> {
        self.cells.get(group)?.get(trait_pair)
    }

    pub fn mean(&self, group: &str, trait_pair: &str) -> Option<f64> {
        self.cell(group, trait_pair).map(|c| c.mean)
    }

    pub fn groups(&self) -> impl Iterator<Item = &str> {
        self.cells.keys().map(String::as_str)
    }

    pub fn group(&self, group: &str) -> Option<&BTreeMap<String, HumanCell>> {
        self.cells.get(group)
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Keeps only the listed groups.
    pub fn restricted_to(&self, groups: &[String]) -> HumanRatings {
        HumanRatings {
            cells: self
                .cells
                .iter()
                .filter(|(g, _)| groups.contains(g))
                .map(|(g, c)| (g.clone(), c.clone()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_annotation_layout() {
        let csv = "group,trait_left,trait_right,rating,annotator_id\n\
                   asian,cold,warm,60,a1\n\
                   asian,cold,warm,80,a2\n\
                   asian,poor,wealthy,30,a1\n";
        let h = HumanRatings::parse_csv(csv).unwrap();
        let c = h.cell("asian", "cold-warm").unwrap();
        assert_eq!(c.mean, 70.0);
        assert_eq!(c.n, 2);
        assert_eq!(c.ratings, [60.0, 80.0]);
        assert_eq!(h.mean("asian", "poor-wealthy"), Some(30.0));
    }

    #[test]
    fn aggregated_layout() {
        let csv = "group,trait_left,trait_right,mean,n\nblack,cold,warm,55.5,20\n";
        let h = HumanRatings::parse_csv(csv).unwrap();
        let c = h.cell("black", "cold-warm").unwrap();
        assert_eq!((c.mean, c.n), (55.5, 20));
        assert!(c.ratings.is_empty());
    }

    #[test]
    fn out_of_range_rating_is_rejected() {
        let csv = "group,trait_left,trait_right,rating,annotator_id\nasian,cold,warm,101,a1\n";
        let e = HumanRatings::parse_csv(csv).unwrap_err();
        assert!(matches!(e, HumanError::Row { row: 1, .. }), "{e}");
    }

    #[test]
    fn unknown_header_is_rejected() {
        let e = HumanRatings::parse_csv("group,trait_left,trait_right,score\n").unwrap_err();
        assert!(matches!(e, HumanError::Header(_)));
    }

    #[test]
    fn duplicate_aggregate_is_rejected() {
        let csv = "group,trait_left,trait_right,mean,n\ng,a,b,1,1\ng,a,b,2,1\n";
        assert!(matches!(HumanRatings::parse_csv(csv), Err(HumanError::Duplicate { .. })));
    }
}
