//! Model–human alignment: Kendall τ and P@3 per group and overall, and the
//! pilot that picks which templates to use.

pub mod human;
pub mod kendall;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use human::{HumanCell, HumanError, HumanRatings};
pub use kendall::{kendall_tau, pair_counts, precision_at_3, PairCounts, PrecisionAt3, StatsError, Tau};

use crate::provenance::Provenance;
use crate::scoring::{ColumnKind, MatrixError, Measure, ScoreMatrix};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no (group, trait pair) cell is shared by the scores and the human ratings")]
    EmptyIntersection,
    #[error("alignment needs trait-pair columns, got adjective columns")]
    WrongKind,
    #[error("no candidate templates")]
    NoCandidates,
    #[error("no score matrix for template `{0}`")]
    MissingTemplate(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Human(#[from] HumanError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// How the overall τ is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One τ over every (group, trait pair) observation.
    #[default]
    Pooled,
    /// Unweighted mean of the per-group τ values (no p-value).
    MeanOfGroups,
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "pooled" => Ok(Pooling::Pooled),
            "mean_of_groups" | "mean" => Ok(Pooling::MeanOfGroups),
            other => Err(format!("unknown pooling `{other}` (pooled, mean_of_groups)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Negligible,
    Weak,
    Moderate,
    Strong,
}

impl Strength {
    pub fn of(tau: f64) -> Strength {
        let a = tau.abs();
        if a < 0.10 {
            Strength::Negligible
        } else if a < 0.20 {
            Strength::Weak
        } else if a < 0.30 {
            Strength::Moderate
        } else {
            Strength::Strong
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strength::Negligible => "negligible",
            Strength::Weak => "weak",
            Strength::Moderate => "moderate",
            Strength::Strong => "strong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAlignment {
    pub group: String,
    /// Trait pairs rated by both sides.
    pub n: usize,
    pub tau: Option<f64>,
    pub p_value: Option<f64>,
    pub strength: Option<Strength>,
    pub p3_top: Option<f64>,
    pub p3_bottom: Option<f64>,
    pub p3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallAlignment {
    pub pooling: Pooling,
    /// Observations pooled (pooled mode) or groups averaged (mean mode).
    pub n: usize,
    pub tau: Option<f64>,
    pub p_value: Option<f64>,
    pub strength: Option<Strength>,
    /// Mean of the defined group P@3 values.
    pub p3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub measure: Measure,
    pub templates: Vec<String>,
    pub groups: Vec<GroupAlignment>,
    pub overall: OverallAlignment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aligns a trait-pair score matrix with human ratings. Groups are reported
/// in id order, so the result does not depend on the matrix row order.
pub fn align(scores: &ScoreMatrix, human: &HumanRatings, pooling: Pooling) -> Result<AlignmentReport, AlignError> {
    if scores.kind != ColumnKind::TraitPair {
        return Err(AlignError::WrongKind);
    }
    let mut order: Vec<usize> = (0..scores.rows.len()).collect();
    order.sort_by(|&a, &b| scores.rows[a].cmp(&scores.rows[b]));

    let (mut all_x, mut all_y) = (Vec::new(), Vec::new());
    let mut groups = Vec::new();
    for r in order {
        let g = &scores.rows[r];
        let Some(rated) = human.group(g) else { continue };
        let mut obs: Vec<(String, f64, f64)> = scores
            .cols
            .iter()
            .enumerate()
            .filter_map(|(c, p)| rated.get(p).map(|h| (p.clone(), scores.value(r, c), h.mean)))
            .collect();
        if obs.is_empty() {
            continue;
        }
        obs.sort_by(|a, b| a.0.cmp(&b.0));
        let x: Vec<f64> = obs.iter().map(|o| o.1).collect();
        let y: Vec<f64> = obs.iter().map(|o| o.2).collect();
        all_x.extend_from_slice(&x);
        all_y.extend_from_slice(&y);

        let tau = kendall_tau(&x, &y).ok();
        let model: Vec<(String, f64)> = obs.iter().map(|o| (o.0.clone(), o.1)).collect();
        let hm: BTreeMap<String, f64> = obs.iter().map(|o| (o.0.clone(), o.2)).collect();
        let p3 = precision_at_3(&model, &hm).ok();
        groups.push(GroupAlignment {
            group: g.clone(),
            n: obs.len(),
            tau: tau.map(|t| t.tau),
            p_value: tau.map(|t| t.p_value),
            strength: tau.map(|t| Strength::of(t.tau)),
            p3_top: p3.map(|p| p.top),
            p3_bottom: p3.map(|p| p.bottom),
            p3: p3.map(|p| p.p3),
        });
    }
    if groups.is_empty() {
        return Err(AlignError::EmptyIntersection);
    }

    let p3s: Vec<f64> = groups.iter().filter_map(|g| g.p3).collect();
    let overall = match pooling {
        Pooling::Pooled => {
            let t = kendall_tau(&all_x, &all_y).ok();
            OverallAlignment {
                pooling,
                n: all_x.len(),
                tau: t.map(|t| t.tau),
                p_value: t.map(|t| t.p_value),
                strength: t.map(|t| Strength::of(t.tau)),
                p3: mean(&p3s),
            }
        }
        Pooling::MeanOfGroups => {
            let taus: Vec<f64> = groups.iter().filter_map(|g| g.tau).collect();
            let tau = mean(&taus);
            OverallAlignment {
                pooling,
                n: taus.len(),
                tau,
                p_value: None,
                strength: tau.map(Strength::of),
                p3: mean(&p3s),
            }
        }
    };
    Ok(AlignmentReport {
        measure: scores.measure,
        templates: scores.templates.clone(),
        groups,
        overall,
        provenance: None,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl AlignmentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Fixed-width table, three decimals.
    pub fn to_table(&self) -> String {
        let width = self.groups.iter().map(|g| g.group.len()).chain([7]).max().unwrap_or(7);
        let mut out = String::new();
        let templates = if self.templates.is_empty() {
            "-".to_string()
        } else {
            self.templates.join(", ")
        };
        let _ = writeln!(out, "measure: {}  templates: {templates}", self.measure);
        let _ = writeln!(
            out,
            "{:<width$}  {:>3}  {:>7}  {:>7}  {:<10}  {:>6}",
            "group", "n", "tau", "p", "strength", "P@3"
        );
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:<width$}  {:>3}  {:>7}  {:>7}  {:<10}  {:>6}",
                g.group,
                g.n,
                fmt_opt(g.tau),
                fmt_opt(g.p_value),
                g.strength.map_or("-", Strength::as_str),
                fmt_opt(g.p3)
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            out,
            "{:<width$}  {:>3}  {:>7}  {:>7}  {:<10}  {:>6}",
            "overall",
            o.n,
            fmt_opt(o.tau),
            fmt_opt(o.p_value),
            o.strength.map_or("-", Strength::as_str),
            fmt_opt(o.p3)
        );
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), AlignError> {
        fs::write(path, self.to_json()).map_err(|e| AlignError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotCandidate {
    pub templates: Vec<String>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotChoice {
    pub templates: Vec<String>,
    pub tau: Option<f64>,
    pub evaluated: Vec<PilotCandidate>,
}

/// Picks the best single template, replaced by a pair only when the pair's τ
/// is strictly higher. Earlier candidates win ties within each size.
pub fn select_templates(evaluated: &[PilotCandidate]) -> Option<&PilotCandidate> {
    let best_of = |size: usize| {
        let mut best: Option<&PilotCandidate> = None;
        for c in evaluated.iter().filter(|c| c.templates.len() == size) {
            let Some(t) = c.tau else { continue };
            if best.and_then(|b| b.tau).is_none_or(|bt| t > bt) {
                best = Some(c);
            }
        }
        best
    };
    let single = best_of(1);
    match (single, best_of(2)) {
        (Some(s), Some(p)) if p.tau > s.tau => Some(p),
        (None, Some(p)) => Some(p),
        (Some(s), _) => Some(s),
        (None, None) => evaluated.iter().find(|c| c.templates.len() == 1),
    }
}

/// Evaluates every candidate and every unordered pair (cells averaged) on the
/// pilot ratings and returns the selection.
pub fn pilot_select_templates(
    candidates: &[String],
    per_template: &BTreeMap<String, ScoreMatrix>,
    human: &HumanRatings,
    pooling: Pooling,
) -> Result<PilotChoice, AlignError> {
    if candidates.is_empty() {
        return Err(AlignError::NoCandidates);
    }
    let get = |t: &String| per_template.get(t).ok_or_else(|| AlignError::MissingTemplate(t.clone()));
    let tau_of = |m: &ScoreMatrix| -> Result<Option<f64>, AlignError> {
        match align(m, human, pooling) {
            Ok(r) => Ok(r.overall.tau),
            Err(AlignError::EmptyIntersection) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut evaluated = Vec::new();
    for t in candidates {
        evaluated.push(PilotCandidate {
            templates: vec![t.clone()],
            tau: tau_of(get(t)?)?,
        });
    }
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            let avg = ScoreMatrix::average(&[get(a)?, get(b)?])?;
            evaluated.push(PilotCandidate {
                templates: vec![a.clone(), b.clone()],
                tau: tau_of(&avg)?,
            });
        }
    }
    let chosen = select_templates(&evaluated).ok_or(AlignError::NoCandidates)?.clone();
    Ok(PilotChoice {
        templates: chosen.templates,
        tau: chosen.tau,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(ts: &[&str], tau: f64) -> PilotCandidate {
        PilotCandidate {
            templates: ts.iter().map(|s| s.to_string()).collect(),
            tau: Some(tau),
        }
    }

    #[test]
    fn pilot_prefers_single_unless_pair_is_strictly_better() {
        let e = [cand(&["t1"], 0.25), cand(&["t2"], 0.10), cand(&["t1", "t2"], 0.22)];
        assert_eq!(select_templates(&e).unwrap().templates, ["t1"]);
        let e = [cand(&["t1"], 0.20), cand(&["t2"], 0.21), cand(&["t1", "t2"], 0.258)];
        assert_eq!(select_templates(&e).unwrap().templates, ["t1", "t2"]);
        let e = [cand(&["t1"], 0.20), cand(&["t2"], 0.21), cand(&["t1", "t2"], 0.21)];
        assert_eq!(select_templates(&e).unwrap().templates, ["t2"]);
        let e = [cand(&["t1"], 0.3)];
        assert_eq!(select_templates(&e).unwrap().templates, ["t1"]);
    }

    fn matrix(rows: &[&str], cols: &[&str], values: Vec<f64>) -> ScoreMatrix {
        ScoreMatrix::new(
            Measure::Set,
            vec!["t".into()],
            ColumnKind::TraitPair,
            rows.iter().map(|s| s.to_string()).collect(),
            cols.iter().map(|s| s.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    fn human_for(rows: &[&str], cols: &[&str], means: &[f64]) -> HumanRatings {
        let mut v = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                v.push((r.to_string(), c.to_string(), means[i * cols.len() + j], 5));
            }
        }
        HumanRatings::from_means(v).unwrap()
    }

    #[test]
    fn perfect_agreement() {
        let cols = ["a-b", "c-d", "e-f", "g-h", "i-j", "k-l"];
        let means = [90.0, 80.0, 70.0, 30.0, 20.0, 10.0, 10.0, 20.0, 30.0, 70.0, 80.0, 90.0];
        let m = matrix(&["g1", "g2"], &cols, means.iter().map(|v| v / 100.0).collect());
        let h = human_for(&["g1", "g2"], &cols, &means);
        let r = align(&m, &h, Pooling::Pooled).unwrap();
        assert!(r.groups.iter().all(|g| g.tau == Some(1.0) && g.p3 == Some(1.0)));
        assert_eq!(r.overall.tau, Some(1.0));
        assert_eq!(r.overall.p3, Some(1.0));
        assert_eq!(r.overall.strength, Some(Strength::Strong));
        assert!(r.to_table().contains("overall"));
    }

    #[test]
    fn hand_computed_two_groups() {
        // g1: model [1,3,2,4] vs human [10,20,30,40] → τ = 4/6.
        // g2: model [4,3,2,1] vs human [60,70,40,45]: S = 2, τ = 1/3.
        let cols = ["a-b", "c-d", "e-f", "g-h"];
        let m = matrix(&["g2", "g1"], &cols, vec![4.0, 3.0, 2.0, 1.0, 1.0, 3.0, 2.0, 4.0]);
        let h = human_for(&["g1", "g2"], &cols, &[10.0, 20.0, 30.0, 40.0, 60.0, 70.0, 40.0, 45.0]);
        let r = align(&m, &h, Pooling::Pooled).unwrap();
        assert_eq!(r.groups[0].group, "g1");
        assert!((r.groups[0].tau.unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.groups[1].tau.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // g1: top3 by model = g-h(40), c-d(20), e-f(30) → none > 50; bottom3 = a-b, e-f, c-d → all < 50.
        assert_eq!((r.groups[0].p3_top, r.groups[0].p3_bottom), (Some(0.0), Some(1.0)));
        // g2: top3 = a-b(60), c-d(70), e-f(40) → 2/3; bottom3 = g-h(45), e-f(40), c-d(70) → 2/3.
        assert_eq!((r.groups[1].p3_top, r.groups[1].p3_bottom), (Some(2.0 / 3.0), Some(2.0 / 3.0)));
        assert_eq!(r.overall.p3, Some((0.5 + 2.0 / 3.0) / 2.0));
        let mean = align(&m, &h, Pooling::MeanOfGroups).unwrap();
        assert!((mean.overall.tau.unwrap() - (4.0 / 6.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(mean.overall.p_value, None);
    }

    #[test]
    fn disjoint_labels_fail() {
        let m = matrix(&["g"], &["a-b"], vec![1.0]);
        let h = human_for(&["other"], &["a-b"], &[50.0]);
        assert!(matches!(align(&m, &h, Pooling::Pooled), Err(AlignError::EmptyIntersection)));
    }

    #[test]
    fn strength_bands() {
        assert_eq!(Strength::of(0.05), Strength::Negligible);
        assert_eq!(Strength::of(0.10), Strength::Weak);
        assert_eq!(Strength::of(-0.199), Strength::Weak);
        assert_eq!(Strength::of(0.25), Strength::Moderate);
        assert_eq!(Strength::of(0.30), Strength::Strong);
    }
}
