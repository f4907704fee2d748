//! Association measures between a group and an adjective, and their
//! aggregation into score matrices.

mod build;
mod matrix;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{Matrix, TensorBundle};
use crate::squish::{squish, SquishError, SquishProblem};

pub use build::{build_adjective_matrix, build_score_matrix, required_tensors, ScoringOptions};
pub use matrix::{sidecar_path, ColumnKind, MatrixError, ScoreMatrix};

/// Default cap applied when SeT would be +∞.
pub const DEFAULT_INFINITY_CAP: f64 = 50.0;
pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Ilps,
    IlpsStar,
    Ceat,
    Set,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Ilps, Measure::IlpsStar, Measure::Ceat, Measure::Set];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Ilps => "ilps",
            Measure::IlpsStar => "ilps_star",
            Measure::Ceat => "ceat",
            Measure::Set => "set",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ilps" => Ok(Measure::Ilps),
            "ilps_star" | "ilps-star" | "ilps*" | "ilps★" | "ilpsstar" => Ok(Measure::IlpsStar),
            "ceat" => Ok(Measure::Ceat),
            "set" => Ok(Measure::Set),
            other => Err(format!("unknown measure `{other}` (ilps, ilps_star, ceat, set)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("adjective `{0}` has no tokenization in the bundle")]
    UnknownAdjective(String),
    #[error("adjective `{adjective}` splits into {subwords} subwords; use ILPS★ for multi-subword adjectives")]
    MultiSubword { adjective: String, subwords: usize },
    #[error("prompt `{prompt}` has no {tensor}")]
    MissingTensor { prompt: String, tensor: &'static str },
    #[error("missing filling step {step} of {of} for `{adjective}` (prompt `{prompt}`)")]
    MissingStep {
        adjective: String,
        step: usize,
        of: usize,
        prompt: String,
    },
    #[error("expected {expected} step prompts for `{adjective}`, got {found}")]
    StepCount {
        adjective: String,
        expected: usize,
        found: usize,
    },
    #[error("{} required tensors missing: {}", .0.len(), .0.join(", "))]
    MissingTensors(Vec<String>),
    #[error("no CEAT embeddings for `{0}`")]
    MissingEmbedding(String),
    #[error("zero-norm CEAT embedding for `{0}`")]
    ZeroNorm(String),
    #[error("CEAT needs at least one embedding per pole and two in total (got {left} left, {right} right)")]
    TooFewSamples { left: usize, right: usize },
    #[error("CEAT cosine spread is zero; effect size undefined")]
    DegenerateSpread,
    #[error("Δ is 0 on the prior prompt `{prompt}` for `{adjective}`; the SeT ratio is undefined")]
    ZeroPriorDistance { prompt: String, adjective: String },
    #[error("{measure} has no adjective-level form")]
    NoAdjectiveLevel { measure: Measure },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error(transparent)]
    Squish(#[from] SquishError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// `log softmax(logits)[index]` in f64 with max subtraction.
pub fn log_softmax_at(logits: &[f32], index: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(f64::from(l)));
    let sum: f64 = logits.iter().map(|&l| (f64::from(l) - max).exp()).sum();
    f64::from(logits[index]) - max - sum.ln()
}

fn subwords<'b>(bundle: &'b TensorBundle, adjective: &str) -> Result<&'b [usize], ScoringError> {
    bundle
        .adjective_tokenization
        .get(adjective)
        .map(Vec::as_slice)
        .ok_or_else(|| ScoringError::UnknownAdjective(adjective.to_string()))
}

fn logits<'b>(bundle: &'b TensorBundle, prompt: &str) -> Result<&'b [f32], ScoringError> {
    bundle.logits(prompt).ok_or_else(|| ScoringError::MissingTensor {
        prompt: prompt.to_string(),
        tensor: "logits",
    })
}

/// log p(adj | group prompt) − log p(adj | prior prompt).
pub fn ilps(
    bundle: &TensorBundle,
    group_prompt: &str,
    prior_prompt: &str,
    adjective: &str,
) -> Result<f64, ScoringError> {
    let toks = subwords(bundle, adjective)?;
    if toks.len() != 1 {
        return Err(ScoringError::MultiSubword {
            adjective: adjective.to_string(),
            subwords: toks.len(),
        });
    }
    let g = log_softmax_at(logits(bundle, group_prompt)?, toks[0]);
    let p = log_softmax_at(logits(bundle, prior_prompt)?, toks[0]);
    Ok(g - p)
}

/// Chain-rule log-probability of the adjective's subwords, one step prompt
/// per subword, summed left to right.
fn chain_log_prob(
    bundle: &TensorBundle,
    steps: &[&str],
    toks: &[usize],
    adjective: &str,
) -> Result<f64, ScoringError> {
    if steps.len() != toks.len() {
        return Err(ScoringError::StepCount {
            adjective: adjective.to_string(),
            expected: toks.len(),
            found: steps.len(),
        });
    }
    let mut terms = steps.iter().zip(toks).enumerate().map(|(i, (p, &tok))| {
        let l = bundle.logits(p).ok_or_else(|| ScoringError::MissingStep {
            adjective: adjective.to_string(),
            step: i + 1,
            of: toks.len(),
            prompt: p.to_string(),
        })?;
        Ok::<f64, ScoringError>(log_softmax_at(l, tok))
    });
    // Seed with the first term so a single step reproduces ILPS exactly.
    let mut total = terms.next().expect("at least one subword")?;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// ILPS over multi-subword adjectives via the chain rule.
pub fn ilps_star(
    bundle: &TensorBundle,
    group_steps: &[&str],
    prior_steps: &[&str],
    adjective: &str,
) -> Result<f64, ScoringError> {
    let toks = subwords(bundle, adjective)?;
    if toks.is_empty() {
        return Err(ScoringError::UnknownAdjective(adjective.to_string()));
    }
    let g = chain_log_prob(bundle, group_steps, toks, adjective)?;
    let p = chain_log_prob(bundle, prior_steps, toks, adjective)?;
    Ok(g - p)
}

/// Effect size `(mean(a) − mean(b)) / sd(a ∪ b)` with the sample standard
/// deviation. The spread is computed over the sorted union so that swapping
/// `a` and `b` negates the result exactly.
pub fn effect_size(a: &[f64], b: &[f64]) -> Result<f64, ScoringError> {
    if a.is_empty() || b.is_empty() || a.len() + b.len() < 2 {
        return Err(ScoringError::TooFewSamples {
            left: b.len(),
            right: a.len(),
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let m = mean(&all);
    let var = all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (all.len() - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(ScoringError::DegenerateSpread);
    }
    Ok((mean(a) - mean(b)) / sd)
}

fn unit_rows(word: &str, m: &Matrix) -> Result<Vec<Vec<f64>>, ScoringError> {
    m.iter_rows()
        .map(|r| {
            let norm = r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(ScoringError::ZeroNorm(word.to_string()));
            }
            Ok(r.iter().map(|&x| f64::from(x) / norm).collect())
        })
        .collect()
}

/// Single-group CEAT: each adjective embedding contributes one observation,
/// its cosine to the group averaged over the group's embeddings. `right`
/// adjectives form the positive pole.
pub fn ceat(
    embeddings: &BTreeMap<String, Matrix>,
    group_word: &str,
    left: &[&str],
    right: &[&str],
) -> Result<f64, ScoringError> {
    let get = |w: &str| {
        embeddings
            .get(w)
            .ok_or_else(|| ScoringError::MissingEmbedding(w.to_string()))
            .and_then(|m| unit_rows(w, m))
    };
    let group = get(group_word)?;
    let observe = |words: &[&str]| -> Result<Vec<f64>, ScoringError> {
        let mut out = Vec::new();
        for w in words {
            for t in get(w)? {
                let total: f64 = group
                    .iter()
                    .map(|g| g.iter().zip(&t).map(|(x, y)| x * y).sum::<f64>())
                    .sum();
                out.push(total / group.len() as f64);
            }
        }
        Ok(out)
    };
    effect_size(&observe(right)?, &observe(left)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetOptions {
    pub margin: f64,
    pub infinity_cap: f64,
}

impl Default for SetOptions {
    fn default() -> Self {
        SetOptions {
            margin: DEFAULT_MARGIN,
            infinity_cap: DEFAULT_INFINITY_CAP,
        }
    }
}

/// Logits `A h + bias` and `‖h‖²` for one prompt, reused across adjectives.
#[derive(Debug, Clone)]
pub struct PromptState {
    pub prompt: String,
    pub logits: Vec<f64>,
    pub norm_sq: f64,
}

impl PromptState {
    pub fn from_bundle(bundle: &TensorBundle, prompt: &str) -> Result<Self, ScoringError> {
        let h = bundle.hidden(prompt).ok_or_else(|| ScoringError::MissingTensor {
            prompt: prompt.to_string(),
            tensor: "hidden vector",
        })?;
        Ok(PromptState {
            prompt: prompt.to_string(),
            logits: bundle.project(h),
            norm_sq: h.iter().map(|&x| f64::from(x) * f64::from(x)).sum(),
        })
    }

    pub fn distance(&self, token: usize, margin: f64) -> Result<f64, ScoringError> {
        let p = SquishProblem::new(&self.logits, self.norm_sq, token, margin);
        Ok(squish(&p)?.distance)
    }
}

/// SeT value from the two distances: `−log(Δ_group / Δ_prior)`, larger
/// meaning a stronger association. `Δ_group = 0` clamps to the cap.
pub fn set_from_distances(delta_group: f64, delta_prior: f64, cap: f64) -> Option<f64> {
    if delta_prior == 0.0 {
        return None;
    }
    if delta_group == 0.0 {
        return Some(cap);
    }
    Some(-(delta_group / delta_prior).ln())
}

/// Word-level SeT from per-subword values: the maximum.
pub fn combine_subwords(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn set_with_states(
    group: &PromptState,
    prior: &PromptState,
    toks: &[usize],
    adjective: &str,
    options: &SetOptions,
) -> Result<f64, ScoringError> {
    let mut per_subword = Vec::with_capacity(toks.len());
    for &tok in toks {
        let dg = group.distance(tok, options.margin)?;
        let dp = prior.distance(tok, options.margin)?;
        let v = set_from_distances(dg, dp, options.infinity_cap).ok_or_else(|| {
            ScoringError::ZeroPriorDistance {
                prompt: prior.prompt.clone(),
                adjective: adjective.to_string(),
            }
        })?;
        if dg == 0.0 {
            log::warn!(
                "SeT for `{adjective}` on `{}` is unbounded (Δ = 0); clamped to {}",
                group.prompt,
                options.infinity_cap
            );
        }
        per_subword.push(v);
    }
    Ok(combine_subwords(&per_subword))
}

/// SeT association of `adjective` with the group prompt.
pub fn set_score(
    bundle: &TensorBundle,
    group_prompt: &str,
    prior_prompt: &str,
    adjective: &str,
    options: &SetOptions,
) -> Result<f64, ScoringError> {
    let toks = subwords(bundle, adjective)?;
    if toks.is_empty() {
        return Err(ScoringError::UnknownAdjective(adjective.to_string()));
    }
    let g = PromptState::from_bundle(bundle, group_prompt)?;
    let p = PromptState::from_bundle(bundle, prior_prompt)?;
    set_with_states(&g, &p, toks, adjective, options)
}

/// Mean of one pole's adjective scores.
pub fn pole_score(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Right pole minus left pole.
pub fn trait_pair_score(left: f64, right: f64) -> f64 {
    right - left
}
