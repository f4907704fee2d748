//! Analyses of paired identities: how much identity order matters, which
//! domain dominates a pair's trait profile, and which traits emerge only for
//! the pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::kendall_tau;
use crate::lexicon::{Domain, PairedGroup, SocialGroup};
use crate::scoring::{ColumnKind, ScoreMatrix};

pub const DOMINANCE_THRESHOLD: f64 = 0.1;
/// Absorbs rounding in differences of published two-decimal correlations.
const DOMINANCE_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Error)]
pub enum IntersectError {
    #[error("expected a score matrix with {expected:?} columns")]
    WrongKind { expected: ColumnKind },
    #[error("ground truth is empty once restricted to the scored groups and adjectives")]
    EmptyTruth,
    #[error("ground truth row {row}: {message}")]
    Truth { row: usize, message: String },
}

fn tau(a: &[f64], b: &[f64]) -> Option<f64> {
    kendall_tau(a, b).ok().map(|t| t.tau)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    /// Mean τ between a pair and its first component.
    pub mean_first: Option<f64>,
    /// Mean τ between a pair and its second component.
    pub mean_second: Option<f64>,
    /// Mean τ between the two orders of the same pair.
    pub mean_reversed: Option<f64>,
    /// Mean over pairs of the larger of the two component τ values.
    pub mean_best_component: Option<f64>,
    pub pairs_used: usize,
    pub reversed_used: usize,
    /// Pairs without a score row for themselves or a component.
    pub skipped: usize,
    /// Comparisons where τ was undefined (a constant score vector).
    pub undefined: usize,
}

/// Order sensitivity over trait-pair score vectors.
pub fn order_analysis(scores: &ScoreMatrix, pairs: &[PairedGroup]) -> OrderSummary {
    let (mut first, mut second, mut best, mut reversed) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut used, mut skipped, mut undefined) = (0, 0, 0);
    for p in pairs.iter().filter(|p| !p.is_excluded()) {
        let (Some(row), Some(a), Some(b)) = (scores.row(&p.id), scores.row(&p.first), scores.row(&p.second)) else {
            log::warn!("pair `{}` lacks its own or a component row; skipped", p.id);
            skipped += 1;
            continue;
        };
        used += 1;
        let ta = tau(row, a);
        let tb = tau(row, b);
        undefined += usize::from(ta.is_none()) + usize::from(tb.is_none());
        first.extend(ta);
        second.extend(tb);
        if let (Some(x), Some(y)) = (ta, tb) {
            best.push(x.max(y));
        }
        // Each unordered pair once.
        if p.first < p.second {
            if let Some(rev) = scores.row(&PairedGroup::pair_id(&p.second, &p.first)) {
                match tau(row, rev) {
                    Some(t) => reversed.push(t),
                    None => undefined += 1,
                }
            }
        }
    }
    OrderSummary {
        mean_first: mean(&first),
        mean_second: mean(&second),
        mean_reversed: mean(&reversed),
        mean_best_component: mean(&best),
        pairs_used: used,
        reversed_used: reversed.len(),
        skipped,
        undefined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ADominates,
    BDominates,
    Neither,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::ADominates => "a-dominates",
            Verdict::BDominates => "b-dominates",
            Verdict::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRecord {
    pub domain_a: Domain,
    pub domain_b: Domain,
    pub corr_a: f64,
    pub corr_b: f64,
    pub diff: f64,
    pub verdict: Verdict,
    /// Pairs contributing to the means (0 when built from published values).
    pub pairs: usize,
}

impl DominanceRecord {
    pub fn from_correlations(domain_a: Domain, domain_b: Domain, corr_a: f64, corr_b: f64, pairs: usize) -> Self {
        let diff = corr_a - corr_b;
        let bar = DOMINANCE_THRESHOLD - DOMINANCE_TOLERANCE;
        let verdict = if diff >= bar {
            Verdict::ADominates
        } else if diff <= -bar {
            Verdict::BDominates
        } else {
            Verdict::Neither
        };
        DominanceRecord {
            domain_a,
            domain_b,
            corr_a,
            corr_b,
            diff,
            verdict,
            pairs,
        }
    }

    pub fn swapped(&self) -> Self {
        Self::from_correlations(self.domain_b, self.domain_a, self.corr_b, self.corr_a, self.pairs)
    }

    /// `(dominant, dominated)` when a verdict was reached.
    pub fn winner(&self) -> Option<(Domain, Domain)> {
        match self.verdict {
            Verdict::ADominates => Some((self.domain_a, self.domain_b)),
            Verdict::BDominates => Some((self.domain_b, self.domain_a)),
            Verdict::Neither => None,
        }
    }
}

/// Pools both identity orders of every non-excluded pair spanning two
/// domains and compares mean τ to each domain's component.
pub fn dominance(scores: &ScoreMatrix, pairs: &[PairedGroup], groups: &[SocialGroup]) -> Vec<DominanceRecord> {
    let domain_of: BTreeMap<&str, Domain> = groups.iter().map(|g| (g.id.as_str(), g.domain)).collect();
    let mut acc: BTreeMap<(Domain, Domain), (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for p in pairs.iter().filter(|p| !p.is_excluded()) {
        let (Some(&d1), Some(&d2)) = (domain_of.get(p.first.as_str()), domain_of.get(p.second.as_str())) else {
            continue;
        };
        if d1 == d2 {
            continue;
        }
        let (Some(row), Some(r1), Some(r2)) = (scores.row(&p.id), scores.row(&p.first), scores.row(&p.second)) else {
            continue;
        };
        let (t1, t2) = (tau(row, r1), tau(row, r2));
        // Orient so the first slot holds the earlier domain.
        let (key, ta, tb) = if d1 < d2 { ((d1, d2), t1, t2) } else { ((d2, d1), t2, t1) };
        let e = acc.entry(key).or_default();
        e.0.extend(ta);
        e.1.extend(tb);
        e.2 += 1;
    }
    acc.into_iter()
        .filter_map(|((a, b), (ta, tb, n))| {
            Some(DominanceRecord::from_correlations(a, b, mean(&ta)?, mean(&tb)?, n))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRelations {
    pub dominates: BTreeSet<Domain>,
    pub dominated_by: BTreeSet<Domain>,
}

/// Per-domain dominates / dominated-by sets; every domain that appears in a
/// record gets an entry.
pub fn domain_relations(records: &[DominanceRecord]) -> BTreeMap<Domain, DomainRelations> {
    let mut out: BTreeMap<Domain, DomainRelations> = BTreeMap::new();
    for r in records {
        out.entry(r.domain_a).or_default();
        out.entry(r.domain_b).or_default();
        if let Some((win, lose)) = r.winner() {
            out.get_mut(&win).expect("inserted").dominates.insert(lose);
            out.get_mut(&lose).expect("inserted").dominated_by.insert(win);
        }
    }
    out
}

pub fn dominance_csv(records: &[DominanceRecord]) -> String {
    let mut out = String::from("domain_a,domain_b,corr_a,corr_b,diff,verdict\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.domain_a,
            r.domain_b,
            r.corr_a,
            r.corr_b,
            r.diff,
            r.verdict.as_str()
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    AboveMax,
    BelowMin,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AboveMax => "above-max",
            Direction::BelowMin => "below-min",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergentRecord {
    pub group: String,
    pub adjective: String,
    pub direction: Direction,
    /// Always positive: how far the pair clears its components.
    pub increase: f64,
    /// Component maximum (above-max) or minimum (below-min).
    pub component_extreme: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmergentLists {
    pub above_max: Vec<EmergentRecord>,
    pub below_min: Vec<EmergentRecord>,
    /// Pairs skipped for lack of a component row.
    pub skipped: usize,
}

fn rank(records: &mut Vec<EmergentRecord>, top_k: Option<usize>) {
    records.sort_by(|a, b| {
        b.increase
            .total_cmp(&a.increase)
            .then_with(|| a.group.cmp(&b.group))
            .then_with(|| a.adjective.cmp(&b.adjective))
    });
    if let Some(k) = top_k {
        records.truncate(k);
    }
}

/// Emergent traits on adjective-level scores, ranked by increase with ties
/// broken by group id then adjective. `top_k = None` keeps every record.
pub fn emergent(
    scores: &ScoreMatrix,
    pairs: &[PairedGroup],
    top_k: Option<usize>,
) -> Result<EmergentLists, IntersectError> {
    if scores.kind != ColumnKind::Adjective {
        return Err(IntersectError::WrongKind {
            expected: ColumnKind::Adjective,
        });
    }
    let mut lists = EmergentLists::default();
    for p in pairs.iter().filter(|p| !p.is_excluded()) {
        let Some(row) = scores.row(&p.id) else { continue };
        let (Some(a), Some(b)) = (scores.row(&p.first), scores.row(&p.second)) else {
            log::warn!("pair `{}` lacks a component row; emergent records skipped", p.id);
            lists.skipped += 1;
            continue;
        };
        for (j, adjective) in scores.cols.iter().enumerate() {
            let (s, s1, s2) = (row[j], a[j], b[j]);
            let hi = s1.max(s2);
            let lo = s1.min(s2);
            if s - hi > 0.0 {
                lists.above_max.push(EmergentRecord {
                    group: p.id.clone(),
                    adjective: adjective.clone(),
                    direction: Direction::AboveMax,
                    increase: s - hi,
                    component_extreme: hi,
                });
            }
            if lo - s > 0.0 {
                lists.below_min.push(EmergentRecord {
                    group: p.id.clone(),
                    adjective: adjective.clone(),
                    direction: Direction::BelowMin,
                    increase: lo - s,
                    component_extreme: lo,
                });
            }
        }
    }
    rank(&mut lists.above_max, top_k);
    rank(&mut lists.below_min, top_k);
    Ok(lists)
}

pub fn emergent_csv(lists: &EmergentLists) -> String {
    let mut out = String::from("group,adjective,direction,increase,component_extreme\n");
    for r in lists.above_max.iter().chain(&lists.below_min) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.group,
            r.adjective,
            r.direction.as_str(),
            r.increase,
            r.component_extreme
        );
    }
    out
}

/// The (group, adjective) cells an evaluation ranges over.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Universe {
    pub groups: BTreeSet<String>,
    pub adjectives: BTreeSet<String>,
}

impl Universe {
    pub fn size(&self) -> usize {
        self.groups.len() * self.adjectives.len()
    }

    pub fn contains(&self, cell: &(String, String)) -> bool {
        self.groups.contains(&cell.0) && self.adjectives.contains(&cell.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergentEvaluation {
    pub precision: f64,
    pub recall: f64,
    /// Expected precision of picking the same number of cells at random.
    pub baseline_precision: f64,
    /// Expected recall of picking the same number of cells at random.
    pub baseline_recall: f64,
    pub detected: usize,
    pub truth: usize,
    pub hits: usize,
    pub universe: usize,
}

pub fn detected_cells(records: &[EmergentRecord]) -> BTreeSet<(String, String)> {
    records.iter().map(|r| (r.group.clone(), r.adjective.clone())).collect()
}

/// Precision and recall of detected cells against ground truth, both
/// restricted to `universe`.
pub fn evaluate_emergent(
    detected: &BTreeSet<(String, String)>,
    truth: &BTreeSet<(String, String)>,
    universe: &Universe,
) -> Result<EmergentEvaluation, IntersectError> {
    let truth: BTreeSet<_> = truth.iter().filter(|c| universe.contains(c)).collect();
    if truth.is_empty() {
        return Err(IntersectError::EmptyTruth);
    }
    let detected: BTreeSet<_> = detected.iter().filter(|c| universe.contains(c)).collect();
    let hits = detected.intersection(&truth).count();
    let u = universe.size() as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EmergentEvaluation {
        precision: ratio(hits, detected.len()),
        recall: ratio(hits, truth.len()),
        baseline_precision: truth.len() as f64 / u,
        baseline_recall: detected.len() as f64 / u,
        detected: detected.len(),
        truth: truth.len(),
        hits,
        universe: universe.size(),
    })
}

/// Parses `group,adjective,dimension` ground-truth rows.
pub fn parse_truth(text: &str) -> Result<BTreeSet<(String, String)>, IntersectError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| IntersectError::Truth { row: 0, message: e.to_string() })?
        .clone();
    let gi = header.iter().position(|h| h == "group");
    let ai = header.iter().position(|h| h == "adjective");
    let (Some(gi), Some(ai)) = (gi, ai) else {
        return Err(IntersectError::Truth {
            row: 0,
            message: "header needs `group` and `adjective` columns".into(),
        });
    };
    let mut out = BTreeSet::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IntersectError::Truth { row: i + 1, message: e.to_string() })?;
        out.insert((rec[gi].to_string(), rec[ai].to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::Measure;
    use proptest::prelude::*;

    fn pair(first: &str, second: &str) -> PairedGroup {
        PairedGroup {
            id: PairedGroup::pair_id(first, second),
            first: first.into(),
            second: second.into(),
            singular: format!("{first} {second}"),
            plural: format!("{first} {second}s"),
            exclusion: None,
        }
    }

    fn matrix(kind: ColumnKind, rows: &[(&str, Vec<f64>)], cols: &[&str]) -> ScoreMatrix {
        ScoreMatrix::new(
            Measure::Set,
            vec!["t".into()],
            kind,
            rows.iter().map(|r| r.0.to_string()).collect(),
            cols.iter().map(|c| c.to_string()).collect(),
            rows.iter().flat_map(|r| r.1.clone()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn order_analysis_by_hand() {
        let cols = ["p1", "p2", "p3"];
        let m = matrix(
            ColumnKind::TraitPair,
            &[
                ("a", vec![1.0, 2.0, 3.0]),
                ("b", vec![3.0, 1.0, 2.0]),
                ("a+b", vec![3.0, 1.0, 2.0]),
                ("b+a", vec![1.0, 3.0, 2.0]),
            ],
            &cols,
        );
        let s = order_analysis(&m, &[pair("a", "b"), pair("b", "a"), pair("a", "zzz")]);
        // a+b: τ(a) = −1/3, τ(b) = 1. b+a: τ(b) = −1, τ(a) = 1/3.
        assert!((s.mean_first.unwrap() - (-1.0 / 3.0 - 1.0) / 2.0).abs() < 1e-15);
        assert!((s.mean_second.unwrap() - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((s.mean_best_component.unwrap() - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        // τ(a+b, b+a) = −1: every pair discordant.
        assert_eq!(s.mean_reversed, Some(-1.0));
        assert_eq!((s.pairs_used, s.reversed_used, s.skipped), (2, 1, 1));
    }

    #[test]
    fn dominance_rule_examples() {
        let r = DominanceRecord::from_correlations(Domain::Age, Domain::GenderSexuality, 0.552, 0.320, 0);
        assert_eq!(r.verdict, Verdict::ADominates);
        assert!((r.diff - 0.232).abs() < 1e-12);
        let r = DominanceRecord::from_correlations(Domain::Age, Domain::Disability, 0.532, 0.475, 0);
        assert_eq!(r.verdict, Verdict::Neither);
        let r = DominanceRecord::from_correlations(Domain::Age, Domain::Religion, 0.3, 0.3, 0);
        assert_eq!(r.verdict, Verdict::Neither);
        let edge = DominanceRecord::from_correlations(Domain::Age, Domain::Religion, 0.4, 0.3, 0);
        assert_eq!(edge.verdict, Verdict::ADominates);
    }

    #[test]
    fn identical_vectors_give_no_verdicts() {
        let groups = vec![
            SocialGroup::new("a", Domain::Age, "a", "as", Some("a")),
            SocialGroup::new("b", Domain::Religion, "b", "bs", Some("b")),
        ];
        let v = vec![1.0, 2.0, 3.0];
        let m = matrix(
            ColumnKind::TraitPair,
            &[("a", v.clone()), ("b", v.clone()), ("a+b", v.clone()), ("b+a", v)],
            &["x", "y", "z"],
        );
        let recs = dominance(&m, &[pair("a", "b"), pair("b", "a")], &groups);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].diff, 0.0);
        assert_eq!(recs[0].verdict, Verdict::Neither);
        assert_eq!(recs[0].pairs, 2);
    }

    #[test]
    fn emergent_arithmetic() {
        let m = matrix(
            ColumnKind::Adjective,
            &[("g1", vec![0.1, 0.5]), ("g2", vec![-0.2, 0.0]), ("g1+g2", vec![0.3, 0.5])],
            &["kind", "warm"],
        );
        let l = emergent(&m, &[pair("g1", "g2")], None).unwrap();
        assert_eq!(l.above_max.len(), 1);
        let r = &l.above_max[0];
        assert_eq!((r.group.as_str(), r.adjective.as_str()), ("g1+g2", "kind"));
        assert!((r.increase - 0.2).abs() < 1e-15);
        assert_eq!(r.component_extreme, 0.1);
        // S(pair) equal to the component max is not emergent.
        assert!(l.below_min.is_empty());
        assert!(emergent_csv(&l).contains("g1+g2,kind,above-max,"));
    }

    #[test]
    fn emergent_needs_adjective_columns() {
        let m = matrix(ColumnKind::TraitPair, &[("g", vec![0.0])], &["x-y"]);
        assert!(matches!(emergent(&m, &[], None), Err(IntersectError::WrongKind { .. })));
    }

    fn cells(v: &[&str]) -> BTreeSet<(String, String)> {
        v.iter().map(|s| ("g".to_string(), s.to_string())).collect()
    }

    #[test]
    fn evaluation_set_arithmetic() {
        let universe = Universe {
            groups: ["g".to_string()].into(),
            adjectives: ["a", "b", "c", "d", "x", "y"].iter().map(|s| s.to_string()).collect(),
        };
        let truth = cells(&["a", "b", "c", "d"]);
        let e = evaluate_emergent(&cells(&["a", "b", "x"]), &truth, &universe).unwrap();
        assert_eq!((e.precision, e.recall), (2.0 / 3.0, 0.5));
        assert_eq!((e.baseline_precision, e.baseline_recall), (4.0 / 6.0, 3.0 / 6.0));
        let e = evaluate_emergent(&truth, &truth, &universe).unwrap();
        assert_eq!((e.precision, e.recall), (1.0, 1.0));
        let e = evaluate_emergent(&cells(&["x", "y"]), &truth, &universe).unwrap();
        assert_eq!((e.precision, e.recall), (0.0, 0.0));
        assert!(matches!(
            evaluate_emergent(&cells(&["a"]), &BTreeSet::new(), &universe),
            Err(IntersectError::EmptyTruth)
        ));
    }

    #[test]
    fn truth_csv() {
        let t = parse_truth("group,adjective,dimension\nblack+woman,cold,communion\n").unwrap();
        assert!(t.contains(&("black+woman".to_string(), "cold".to_string())));
    }

    proptest! {
        #[test]
        fn swapping_domains_negates(ca in -1.0f64..1.0, cb in -1.0f64..1.0) {
            let r = DominanceRecord::from_correlations(Domain::Age, Domain::Religion, ca, cb, 0);
            let s = r.swapped();
            prop_assert_eq!(s.diff, -r.diff);
            let expect = match r.verdict {
                Verdict::ADominates => Verdict::BDominates,
                Verdict::BDominates => Verdict::ADominates,
                Verdict::Neither => Verdict::Neither,
            };
            prop_assert_eq!(s.verdict, expect);
        }

        #[test]
        fn emergent_shift_invariant(
            s in -1.0f64..1.0, s1 in -1.0f64..1.0, s2 in -1.0f64..1.0, c in -5.0f64..5.0,
        ) {
            let build = |d: f64| matrix(
                ColumnKind::Adjective,
                &[("g1", vec![s1 + d]), ("g2", vec![s2 + d]), ("g1+g2", vec![s + d])],
                &["t"],
            );
            let a = emergent(&build(0.0), &[pair("g1", "g2")], None).unwrap();
            let b = emergent(&build(c), &[pair("g1", "g2")], None).unwrap();
            for r in &a.above_max {
                prop_assert!(s > s1 && s > s2);
                let _ = r;
            }
            // Skip near-ties where rounding may flip a zero increase.
            let margin = (s - s1.max(s2)).abs().min((s1.min(s2) - s).abs());
            if margin > 1e-9 {
                prop_assert_eq!(a.above_max.len(), b.above_max.len());
                prop_assert_eq!(a.below_min.len(), b.below_min.len());
                for (x, y) in a.above_max.iter().chain(&a.below_min).zip(b.above_max.iter().chain(&b.below_min)) {
                    prop_assert!((x.increase - y.increase).abs() < 1e-12);
                }
            }
        }
    }
}
