//! Minimal output-matrix perturbation that makes one token the margin argmax.
//!
//! Changing row `j` of the output matrix by `δ_j` moves logit `j` by `δ_j·h`,
//! and the cheapest row change achieving a logit change `d_j` is
//! `d_j·h/‖h‖²`, costing `d_j²/‖h‖²`. The squared Frobenius problem therefore
//! reduces to a one-dimensional problem over logit changes:
//!
//! ```text
//! min Σ_j d_j² / ‖h‖²   s.t.  ℓ_t + d_t ≥ ℓ_j + d_j + γ   for all j ≠ t
//! ```
//!
//! At the optimum the target is raised to a level `u` and every competitor
//! above `u − γ` is pushed down to exactly `u − γ` ("squished"). The greedy
//! pass below finds that active set after one sort.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SquishError {
    #[error("need at least two logits, got {0}")]
    TooFewLogits(usize),
    #[error("logit {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("target index {target} out of range for {len} logits")]
    TargetOutOfRange { target: usize, len: usize },
    #[error("hidden norm must be positive and finite, got {0}")]
    BadHiddenNorm(f64),
    #[error("margin must be positive and finite, got {0}")]
    BadMargin(f64),
    #[error("oracle enumeration supports at most {max} logits, got {len}")]
    OracleTooLarge { len: usize, max: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SquishProblem<'a> {
    /// Current logits `ℓ = A h (+ bias)`.
    pub logits: &'a [f64],
    /// `‖h‖²`.
    pub hidden_norm_sq: f64,
    pub target: usize,
    pub margin: f64,
}

impl<'a> SquishProblem<'a> {
    pub fn new(logits: &'a [f64], hidden_norm_sq: f64, target: usize, margin: f64) -> Self {
        SquishProblem {
            logits,
            hidden_norm_sq,
            target,
            margin,
        }
    }

    pub fn validate(&self) -> Result<(), SquishError> {
        let len = self.logits.len();
        if len < 2 {
            return Err(SquishError::TooFewLogits(len));
        }
        if let Some((index, &value)) = self.logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SquishError::NonFinite { index, value });
        }
        if self.target >= len {
            return Err(SquishError::TargetOutOfRange {
                target: self.target,
                len,
            });
        }
        if !(self.hidden_norm_sq > 0.0 && self.hidden_norm_sq.is_finite()) {
            return Err(SquishError::BadHiddenNorm(self.hidden_norm_sq));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(SquishError::BadMargin(self.margin));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquishResult {
    /// Minimal `‖A' − A‖²_F`.
    pub distance: f64,
    /// Target logit after the change (the level `u`).
    pub adjusted_target_logit: f64,
    /// Number of competitors pushed down.
    pub active_set_size: usize,
}

impl SquishResult {
    /// Per-token logit changes realising the optimum.
    pub fn logit_changes(&self, problem: &SquishProblem<'_>) -> Vec<f64> {
        let u = self.adjusted_target_logit;
        let floor = u - problem.margin;
        problem
            .logits
            .iter()
            .enumerate()
            .map(|(j, &l)| {
                if j == problem.target {
                    u - l
                } else if l > floor {
                    floor - l
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Solves the squishing problem exactly in `O(V log V)`.
pub fn squish(problem: &SquishProblem<'_>) -> Result<SquishResult, SquishError> {
    problem.validate()?;
    let gamma = problem.margin;
    let target_logit = problem.logits[problem.target];

    // The level only rises as competitors join, so anything at or below
    // `ℓ_t − γ` can never become active.
    let mut candidates: Vec<(f64, usize)> = problem
        .logits
        .iter()
        .enumerate()
        .filter(|&(j, &l)| j != problem.target && l > target_logit - gamma)
        .map(|(j, &l)| (l, j))
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut sum = target_logit;
    let mut level = target_logit;
    let mut active = 0usize;
    for &(l, _) in &candidates {
        if l <= level - gamma {
            break;
        }
        sum += l + gamma;
        active += 1;
        level = sum / (active + 1) as f64;
    }

    let raise = level - target_logit;
    let squished: f64 = candidates[..active]
        .iter()
        .map(|&(l, _)| {
            let d = level - gamma - l;
            d * d
        })
        .sum();
    Ok(SquishResult {
        distance: (raise * raise + squished) / problem.hidden_norm_sq,
        adjusted_target_logit: level,
        active_set_size: active,
    })
}

/// Largest vocabulary the enumeration oracle accepts.
pub const ORACLE_MAX_LOGITS: usize = 12;

/// Brute-force reference: tries every candidate active set, solves the
/// equality-constrained minimum-norm problem for it by Gaussian elimination,
/// and keeps the cheapest feasible one. Exponential; for verification only.
pub fn squish_oracle(problem: &SquishProblem<'_>) -> Result<SquishResult, SquishError> {
    problem.validate()?;
    let n = problem.logits.len();
    if n > ORACLE_MAX_LOGITS {
        return Err(SquishError::OracleTooLarge {
            len: n,
            max: ORACLE_MAX_LOGITS,
        });
    }
    let t = problem.target;
    let gamma = problem.margin;
    let others: Vec<usize> = (0..n).filter(|&j| j != t).collect();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;

    for mask in 0u32..(1u32 << others.len()) {
        let active: Vec<usize> = others
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, &j)| j)
            .collect();
        let d = min_norm_solution(n, t, &active, problem.logits, gamma);
        let feasible = (0..n).filter(|&j| j != t).all(|j| {
            let lhs = problem.logits[t] + d[t];
            let rhs = problem.logits[j] + d[j] + gamma;
            lhs >= rhs - 1e-10 * (1.0 + rhs.abs())
        });
        if !feasible {
            continue;
        }
        let cost: f64 = d.iter().map(|x| x * x).sum();
        if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
            best = Some((cost, d, active.len()));
        }
    }

    let (cost, d, active_set_size) = best.expect("the all-active set is always feasible");
    Ok(SquishResult {
        distance: cost / problem.hidden_norm_sq,
        adjusted_target_logit: problem.logits[t] + d[t],
        active_set_size,
    })
}

/// Minimum-norm `d` with `d_t − d_j = ℓ_j + γ − ℓ_t` for every `j` in
/// `active`: `d = Cᵀ (C Cᵀ)⁻¹ b`.
fn min_norm_solution(n: usize, t: usize, active: &[usize], logits: &[f64], gamma: f64) -> Vec<f64> {
    let m = active.len();
    let mut d = vec![0.0; n];
    if m == 0 {
        return d;
    }
    let row = |r: usize| -> Vec<f64> {
        let mut c = vec![0.0; n];
        c[t] = 1.0;
        c[active[r]] = -1.0;
        c
    };
    let rows: Vec<Vec<f64>> = (0..m).map(row).collect();
    // Augmented system [C Cᵀ | b].
    let mut a: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r: Vec<f64> = (0..m)
                .map(|k| rows[i].iter().zip(&rows[k]).map(|(x, y)| x * y).sum())
                .collect();
            r.push(logits[active[i]] + gamma - logits[t]);
            r
        })
        .collect();
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for k in col..=m {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    let lambda: Vec<f64> = (0..m).map(|i| a[i][m] / a[i][i]).collect();
    for (r, c) in rows.iter().enumerate() {
        for (j, &v) in c.iter().enumerate() {
            d[j] += v * lambda[r];
        }
    }
    d
}
