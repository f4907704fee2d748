//! Kendall's τ-b and Precision@3.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Largest sample size that gets an exact permutation p-value.
pub const EXACT_P_MAX_N: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite observation at index {0}")]
    NonFinite(usize),
    #[error("τ undefined: one input is constant")]
    Degenerate,
    #[error("label `{0}` missing from the human ratings")]
    LabelMismatch(String),
}

/// Integer pair counts behind τ-b.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCounts {
    pub n: usize,
    /// n(n−1)/2
    pub pairs: u64,
    /// Pairs tied on x.
    pub tied_x: u64,
    /// Pairs tied on y.
    pub tied_y: u64,
    /// Concordant minus discordant.
    pub s: i64,
    /// Tie-group sizes (≥ 2) on each side, for the variance.
    pub groups_x: Vec<u64>,
    pub groups_y: Vec<u64>,
}

impl PairCounts {
    pub fn tau_b(&self) -> Option<f64> {
        let dx = self.pairs - self.tied_x;
        let dy = self.pairs - self.tied_y;
        if dx == 0 || dy == 0 {
            return None;
        }
        Some(self.s as f64 / ((dx as f64) * (dy as f64)).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau {
    pub tau: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
}

fn tie_groups(sorted: &[f64]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push((j - i) as u64);
        }
        i = j;
    }
    out
}

fn tied_pairs(groups: &[u64]) -> u64 {
    groups.iter().map(|t| t * (t - 1) / 2).sum()
}

/// Sorts `v` ascending and returns the number of pairs `i < j` with
/// `v[i] > v[j]`.
fn sort_counting_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_inversions(&mut v[..mid]) + sort_counting_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            // Everything still waiting on the left is larger than v[j].
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: x.len() });
    }
    if let Some(i) = x.iter().zip(y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    Ok(())
}

/// Pair counts in O(n log n): sort by (x, y), then count inversions of y.
pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts, StatsError> {
    check_inputs(x, y)?;
    let n = x.len();
    // Adding 0.0 folds −0.0 into +0.0 so ordering agrees with `==`.
    let x: Vec<f64> = x.iter().map(|v| v + 0.0).collect();
    let y: Vec<f64> = y.iter().map(|v| v + 0.0).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let groups_x = tie_groups(&xs);
    let mut joint = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && xs[j] == xs[i] && ys[j] == ys[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        joint += t * (t - 1) / 2;
        i = j;
    }
    let discordant = sort_counting_inversions(&mut ys);
    let groups_y = tie_groups(&ys);

    let pairs = (n as u64) * (n as u64 - 1) / 2;
    let tied_x = tied_pairs(&groups_x);
    let tied_y = tied_pairs(&groups_y);
    let concordant = pairs + joint - tied_x - tied_y - discordant;
    Ok(PairCounts {
        n,
        pairs,
        tied_x,
        tied_y,
        s: concordant as i64 - discordant as i64,
        groups_x,
        groups_y,
    })
}

/// Tie-corrected variance of S under independence.
fn variance_s(c: &PairCounts) -> f64 {
    let n = c.n as f64;
    let sum = |g: &[u64], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = n * (n - 1.0) * (2.0 * n + 5.0);
    let vt = sum(&c.groups_x, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&c.groups_y, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&c.groups_x, &|t| t * (t - 1.0)) * sum(&c.groups_y, &|t| t * (t - 1.0));
    let v2 = sum(&c.groups_x, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&c.groups_y, &|t| t * (t - 1.0) * (t - 2.0));
    let mut var = (v0 - vt - vu) / 18.0 + v1 / (2.0 * n * (n - 1.0));
    if c.n > 2 {
        var += v2 / (9.0 * n * (n - 1.0) * (n - 2.0));
    }
    var
}

fn normal_p(c: &PairCounts) -> f64 {
    let var = variance_s(c);
    if !(var > 0.0) {
        return 1.0;
    }
    let z = c.s as f64 / var.sqrt();
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Dense integer ranks.
fn ranks(v: &[f64]) -> Vec<u32> {
    let mut sorted: Vec<f64> = v.iter().map(|x| x + 0.0).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    v.iter()
        .map(|x| sorted.partition_point(|s| s.total_cmp(&(x + 0.0)) == Ordering::Less) as u32)
        .collect()
}

fn s_of(a: &[u32], b: &[u32]) -> i64 {
    let mut s = 0i64;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            s += (a[i].cmp(&a[j]) as i64) * (b[i].cmp(&b[j]) as i64);
        }
    }
    s
}

fn next_permutation(v: &mut [u32]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn distinct_arrangements(r: &[u32]) -> u64 {
    let fact = |k: usize| (1..=k as u64).product::<u64>();
    let mut counts = BTreeMap::new();
    for &x in r {
        *counts.entry(x).or_insert(0usize) += 1;
    }
    counts.values().fold(fact(r.len()), |acc, &c| acc / fact(c))
}

/// Exact two-sided p-value: the share of equally likely rearrangements whose
/// |S| is at least the observed |S|.
fn exact_p(x: &[f64], y: &[f64], observed: i64) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len();
    let target = observed.abs();
    if rx.iter().collect::<std::collections::BTreeSet<_>>().len() == n
        && ry.iter().collect::<std::collections::BTreeSet<_>>().len() == n
    {
        // No ties: S = pairs − 2·inversions, and inversion counts follow the
        // Mahonian distribution.
        let pairs = n * (n - 1) / 2;
        let mut dist = vec![1u64];
        for k in 1..=n {
            let mut next = vec![0u64; dist.len() + k - 1];
            for (inv, &c) in dist.iter().enumerate() {
                for add in 0..k {
                    next[inv + add] += c;
                }
            }
            dist = next;
        }
        let total: u64 = dist.iter().sum();
        let hits: u64 = dist
            .iter()
            .enumerate()
            .filter(|(inv, _)| (pairs as i64 - 2 * *inv as i64).abs() >= target)
            .map(|(_, c)| c)
            .sum();
        return hits as f64 / total as f64;
    }
    // With ties, enumerate the distinct arrangements of whichever side has
    // fewer of them while the other stays fixed.
    let (fixed, mut moving) = if distinct_arrangements(&rx) <= distinct_arrangements(&ry) {
        (ry, rx)
    } else {
        (rx, ry)
    };
    moving.sort_unstable();
    let (mut total, mut hits) = (0u64, 0u64);
    loop {
        total += 1;
        if s_of(&fixed, &moving).abs() >= target {
            hits += 1;
        }
        if !next_permutation(&mut moving) {
            break;
        }
    }
    hits as f64 / total as f64
}

/// τ-b with a two-sided p-value: exact for n ≤ 10, normal approximation with
/// tie-corrected variance above that.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Tau, StatsError> {
    let c = pair_counts(x, y)?;
    let tau = c.tau_b().ok_or(StatsError::Degenerate)?;
    let p_value = if c.n <= EXACT_P_MAX_N {
        exact_p(x, y, c.s)
    } else {
        normal_p(&c)
    };
    Ok(Tau {
        tau,
        p_value,
        n: c.n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAt3 {
    pub top: f64,
    pub bottom: f64,
    pub p3: f64,
}

/// Human mean above which a trait counts as the high pole.
pub const HUMAN_THRESHOLD: f64 = 50.0;

/// P@3 of model scores against human means (binarized at 50). Model ties are
/// broken by label.
pub fn precision_at_3(
    model: &[(String, f64)],
    human: &BTreeMap<String, f64>,
) -> Result<PrecisionAt3, StatsError> {
    if model.len() < 3 {
        return Err(StatsError::TooShort { needed: 3, got: model.len() });
    }
    if let Some((l, _)) = model.iter().find(|(l, _)| !human.contains_key(l)) {
        return Err(StatsError::LabelMismatch(l.clone()));
    }
    if let Some(i) = model.iter().position(|(_, v)| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mut desc: Vec<&(String, f64)> = model.iter().collect();
    desc.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut asc: Vec<&(String, f64)> = model.iter().collect();
    asc.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let top = desc[..3].iter().filter(|(l, _)| human[l] > HUMAN_THRESHOLD).count();
    let bottom = asc[..3].iter().filter(|(l, _)| human[l] < HUMAN_THRESHOLD).count();
    let top = top as f64 / 3.0;
    let bottom = bottom as f64 / 3.0;
    Ok(PrecisionAt3 {
        top,
        bottom,
        p3: (top + bottom) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(x: &[f64], y: &[f64]) -> (i64, u64, u64) {
        let (mut s, mut tx, mut ty) = (0i64, 0u64, 0u64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let a = (x[i] - x[j]).signum() * (x[i] != x[j]) as i32 as f64;
                let b = (y[i] - y[j]).signum() * (y[i] != y[j]) as i32 as f64;
                s += (a * b) as i64;
                tx += (x[i] == x[j]) as u64;
                ty += (y[i] == y[j]) as u64;
            }
        }
        (s, tx, ty)
    }

    #[test]
    fn worked_cases() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().tau, 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().tau, -1.0);
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t.tau - 4.0 / 6.0).abs() < 1e-15);
        // 24 permutations; |S| ≥ 4 for inversion counts 0, 1, 5, 6: 1+3+3+1.
        assert!((t.p_value - 8.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn constant_input_is_degenerate() {
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::Degenerate));
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(StatsError::TooShort { .. })));
        assert!(matches!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1))));
    }

    #[test]
    fn exact_p_with_ties_counts_arrangements() {
        // x has a tie; permuting x's multiset gives 4!/2! = 12 arrangements.
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        let t = kendall_tau(&x, &y).unwrap();
        let ry = [0u32, 1, 2, 3];
        let mut rx = vec![0u32, 0, 1, 2];
        let obs = s_of(&[0, 0, 1, 2], &ry).abs();
        let (mut hits, mut total) = (0, 0);
        loop {
            total += 1;
            hits += (s_of(&rx, &ry).abs() >= obs) as u32;
            if !next_permutation(&mut rx) {
                break;
            }
        }
        assert_eq!(total, 12);
        assert_eq!(t.p_value, f64::from(hits) / 12.0);
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let t = kendall_tau(&x, &x).unwrap();
        assert_eq!(t.tau, 1.0);
        assert!(t.p_value < 1e-8);
    }

    #[test]
    fn p3_examples() {
        let labels: Vec<String> = (0..16).map(|i| format!("p{i:02}")).collect();
        let human_vals = [70.0, 55.0, 40.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 30.0, 45.0, 60.0];
        let model: Vec<(String, f64)> = labels.iter().enumerate().map(|(i, l)| (l.clone(), 16.0 - i as f64)).collect();
        let human: BTreeMap<String, f64> = labels.iter().cloned().zip(human_vals).collect();
        let p = precision_at_3(&model, &human).unwrap();
        assert_eq!((p.top, p.bottom), (2.0 / 3.0, 2.0 / 3.0));
        assert_eq!(p.p3, 2.0 / 3.0);

        let h: BTreeMap<String, f64> = [("a", 90.0), ("b", 80.0), ("c", 70.0), ("d", 30.0), ("e", 20.0), ("f", 10.0)]
            .iter()
            .map(|(l, v)| (l.to_string(), *v))
            .collect();
        let same: Vec<(String, f64)> = h.iter().map(|(l, v)| (l.clone(), *v)).collect();
        assert_eq!(precision_at_3(&same, &h).unwrap().p3, 1.0);
        let rev: Vec<(String, f64)> = h.iter().map(|(l, v)| (l.clone(), -v)).collect();
        assert_eq!(precision_at_3(&rev, &h).unwrap().p3, 0.0);
        assert!(matches!(precision_at_3(&same[..2], &h), Err(StatsError::TooShort { .. })));
    }

    proptest! {
        #[test]
        fn fast_counts_match_brute_force(
            pairs in proptest::collection::vec((0u8..5, 0u8..5), 2..40)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            let c = pair_counts(&x, &y).unwrap();
            let (s, tx, ty) = brute(&x, &y);
            prop_assert_eq!(c.s, s);
            prop_assert_eq!(c.tied_x, tx);
            prop_assert_eq!(c.tied_y, ty);
        }

        #[test]
        fn monotone_transforms_preserve_tau(
            x in proptest::collection::vec(-10.0f64..10.0, 3..25),
            y in proptest::collection::vec(-10.0f64..10.0, 25),
        ) {
            let y = &y[..x.len()];
            if let Ok(t) = kendall_tau(&x, y) {
                let fx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                let fy: Vec<f64> = y.iter().map(|v| 3.0 * v + 1.0).collect();
                let u = kendall_tau(&fx, &fy).unwrap();
                prop_assert_eq!(t.tau, u.tau);
                prop_assert!((-1.0..=1.0).contains(&t.tau));
                prop_assert!((0.0..=1.0).contains(&t.p_value));
            }
        }
    }
}
