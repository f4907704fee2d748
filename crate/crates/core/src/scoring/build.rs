//! Score-matrix assembly over groups, adjectives and templates.
//!
//! Cells are computed on a worker pool, collected in input order, and reduced
//! sequentially (templates in id order), so the output does not depend on the
//! worker count.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::{
    ceat, ilps, ilps_star, pole_score, set_with_states, trait_pair_score, ColumnKind, Measure,
    PromptState, ScoreMatrix, ScoringError, SetOptions,
};
use crate::lexicon::{GroupRef, Pole, Surface, TraitPair};
use crate::model_io::{chain_prompt_ids, prompt_id, TensorBundle};

#[derive(Debug, Clone)]
pub struct ScoringOptions {
    pub set: SetOptions,
    /// Average auxiliary adjectives into each pole.
    pub aux_adjectives: bool,
    pub workers: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            set: SetOptions::default(),
            aux_adjectives: false,
            workers: 1,
        }
    }
}

fn sorted_templates(templates: &[String]) -> Vec<String> {
    let set: BTreeSet<&String> = templates.iter().collect();
    set.into_iter().cloned().collect()
}

fn group_refs(groups: &[&dyn Surface]) -> Vec<GroupRef> {
    groups.iter().map(|g| GroupRef::Group(g.id().to_string())).collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ScoringError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ScoringError::Pool(e.to_string()))
}

fn pair_adjectives(pairs: &[TraitPair], aux: bool) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in pairs {
        for a in p.pole(Pole::Left, aux).into_iter().chain(p.pole(Pole::Right, aux)) {
            if seen.insert(a) {
                out.push(a.to_string());
            }
        }
    }
    out
}

/// Lists the tensors `measure` needs that the bundle lacks, as
/// `"<prompt or word> (<tensor>)"`. Tokenization problems are errors.
pub fn required_tensors(
    bundle: &TensorBundle,
    groups: &[&dyn Surface],
    adjectives: &[String],
    templates: &[String],
    measure: Measure,
) -> Result<Vec<String>, ScoringError> {
    let mut missing = BTreeSet::new();
    if measure == Measure::Ceat {
        let words = adjectives.iter().map(String::as_str).chain(groups.iter().map(|g| g.plural()));
        for w in words {
            if !bundle.ceat_embeddings.contains_key(w) {
                missing.insert(format!("{w} (ceat embeddings)"));
            }
        }
        return Ok(missing.into_iter().collect());
    }
    let mut targets = vec![GroupRef::Prior];
    targets.extend(group_refs(groups));
    for adjective in adjectives {
        let toks = bundle
            .adjective_tokenization
            .get(adjective)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ScoringError::UnknownAdjective(adjective.clone()))?;
        if measure == Measure::Ilps && toks.len() != 1 {
            return Err(ScoringError::MultiSubword {
                adjective: adjective.clone(),
                subwords: toks.len(),
            });
        }
    }
    for t in templates {
        for target in &targets {
            match measure {
                Measure::Ilps => {
                    let id = prompt_id(t, target);
                    if bundle.logits(&id).is_none() {
                        missing.insert(format!("{id} (logits)"));
                    }
                }
                Measure::Set => {
                    let id = prompt_id(t, target);
                    if bundle.hidden(&id).is_none() {
                        missing.insert(format!("{id} (hidden)"));
                    }
                }
                Measure::IlpsStar => {
                    for adjective in adjectives {
                        let k = bundle.adjective_tokenization[adjective].len();
                        for id in chain_prompt_ids(t, target, adjective, k) {
                            if bundle.logits(&id).is_none() {
                                missing.insert(format!("{id} (logits)"));
                            }
                        }
                    }
                }
                Measure::Ceat => unreachable!(),
            }
        }
    }
    Ok(missing.into_iter().collect())
}

/// Adjective scores indexed `[template][group][adjective]`.
fn adjective_scores(
    bundle: &TensorBundle,
    groups: &[GroupRef],
    adjectives: &[String],
    templates: &[String],
    measure: Measure,
    options: &ScoringOptions,
    pool: &rayon::ThreadPool,
) -> Result<Vec<f64>, ScoringError> {
    let cells: Vec<(usize, usize)> = (0..templates.len())
        .flat_map(|t| (0..groups.len()).map(move |g| (t, g)))
        .collect();

    let per_cell: Vec<Vec<f64>> = match measure {
        Measure::Ilps | Measure::IlpsStar => pool.install(|| {
            cells
                .par_iter()
                .map(|&(t, g)| {
                    let template = &templates[t];
                    adjectives
                        .iter()
                        .map(|adj| {
                            if measure == Measure::Ilps {
                                ilps(
                                    bundle,
                                    &prompt_id(template, &groups[g]),
                                    &prompt_id(template, &GroupRef::Prior),
                                    adj,
                                )
                            } else {
                                let k = bundle.adjective_tokenization[adj].len();
                                let gs = chain_prompt_ids(template, &groups[g], adj, k);
                                let ps = chain_prompt_ids(template, &GroupRef::Prior, adj, k);
                                let gs: Vec<&str> = gs.iter().map(String::as_str).collect();
                                let ps: Vec<&str> = ps.iter().map(String::as_str).collect();
                                ilps_star(bundle, &gs, &ps, adj)
                            }
                        })
                        .collect::<Result<Vec<f64>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
        })?,
        Measure::Set => {
            // Projected logits and norms, once per prompt.
            let prompt_ids: Vec<String> = templates
                .iter()
                .flat_map(|t| {
                    std::iter::once(prompt_id(t, &GroupRef::Prior))
                        .chain(groups.iter().map(move |g| prompt_id(t, g)))
                })
                .collect();
            let states: Vec<PromptState> = pool.install(|| {
                prompt_ids
                    .par_iter()
                    .map(|id| PromptState::from_bundle(bundle, id))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let stride = groups.len() + 1;
            pool.install(|| {
                cells
                    .par_iter()
                    .map(|&(t, g)| {
                        let prior = &states[t * stride];
                        let group = &states[t * stride + 1 + g];
                        adjectives
                            .iter()
                            .map(|adj| {
                                let toks = &bundle.adjective_tokenization[adj];
                                set_with_states(group, prior, toks, adj, &options.set)
                            })
                            .collect::<Result<Vec<f64>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })?
        }
        Measure::Ceat => return Err(ScoringError::NoAdjectiveLevel { measure }),
    };
    Ok(per_cell.into_iter().flatten().collect())
}

fn ensure_present(
    bundle: &TensorBundle,
    groups: &[&dyn Surface],
    adjectives: &[String],
    templates: &[String],
    measure: Measure,
) -> Result<(), ScoringError> {
    let missing = required_tensors(bundle, groups, adjectives, templates, measure)?;
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ScoringError::MissingTensors(missing))
    }
}

/// Groups × trait-pairs matrix for `measure`, averaged over `templates`
/// (ignored for CEAT).
pub fn build_score_matrix(
    bundle: &TensorBundle,
    groups: &[&dyn Surface],
    trait_pairs: &[TraitPair],
    templates: &[String],
    measure: Measure,
    options: &ScoringOptions,
) -> Result<ScoreMatrix, ScoringError> {
    let aux = options.aux_adjectives;
    let adjectives = pair_adjectives(trait_pairs, aux);
    let templates = if measure == Measure::Ceat {
        Vec::new()
    } else {
        sorted_templates(templates)
    };
    if measure != Measure::Ceat && templates.is_empty() {
        return Err(ScoringError::UnknownTemplate("(none given)".into()));
    }
    ensure_present(bundle, groups, &adjectives, &templates, measure)?;
    let pool = pool(options.workers)?;
    let rows: Vec<String> = groups.iter().map(|g| g.id().to_string()).collect();
    let cols: Vec<String> = trait_pairs.iter().map(TraitPair::id).collect();

    let values: Vec<f64> = if measure == Measure::Ceat {
        let cells: Vec<(usize, usize)> = (0..groups.len())
            .flat_map(|g| (0..trait_pairs.len()).map(move |p| (g, p)))
            .collect();
        pool.install(|| {
            cells
                .par_iter()
                .map(|&(g, p)| {
                    let pair = &trait_pairs[p];
                    ceat(
                        &bundle.ceat_embeddings,
                        groups[g].plural(),
                        &pair.pole(Pole::Left, aux),
                        &pair.pole(Pole::Right, aux),
                    )
                })
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        let refs = group_refs(groups);
        let scores = adjective_scores(bundle, &refs, &adjectives, &templates, measure, options, &pool)?;
        let col: BTreeMap<&str, usize> = adjectives.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        let (ng, na) = (groups.len(), adjectives.len());
        let at = |t: usize, g: usize, a: &str| scores[(t * ng + g) * na + col[a]];
        let mut values = Vec::with_capacity(ng * trait_pairs.len());
        for g in 0..ng {
            for pair in trait_pairs {
                let mut sum = 0.0;
                for t in 0..templates.len() {
                    let left: Vec<f64> = pair.pole(Pole::Left, aux).iter().map(|a| at(t, g, a)).collect();
                    let right: Vec<f64> = pair.pole(Pole::Right, aux).iter().map(|a| at(t, g, a)).collect();
                    sum += trait_pair_score(pole_score(&left), pole_score(&right));
                }
                values.push(sum / templates.len() as f64);
            }
        }
        values
    };
    Ok(ScoreMatrix::new(measure, templates, ColumnKind::TraitPair, rows, cols, values)?)
}

/// Groups × adjectives matrix of raw adjective scores, averaged over
/// `templates`.
pub fn build_adjective_matrix(
    bundle: &TensorBundle,
    groups: &[&dyn Surface],
    adjectives: &[String],
    templates: &[String],
    measure: Measure,
    options: &ScoringOptions,
) -> Result<ScoreMatrix, ScoringError> {
    if measure == Measure::Ceat {
        return Err(ScoringError::NoAdjectiveLevel { measure });
    }
    let templates = sorted_templates(templates);
    if templates.is_empty() {
        return Err(ScoringError::UnknownTemplate("(none given)".into()));
    }
    ensure_present(bundle, groups, adjectives, &templates, measure)?;
    let pool = pool(options.workers)?;
    let refs = group_refs(groups);
    let scores = adjective_scores(bundle, &refs, adjectives, &templates, measure, options, &pool)?;
    let (ng, na) = (groups.len(), adjectives.len());
    let mut values = Vec::with_capacity(ng * na);
    for g in 0..ng {
        for a in 0..na {
            let mut sum = 0.0;
            for t in 0..templates.len() {
                sum += scores[(t * ng + g) * na + a];
            }
            values.push(sum / templates.len() as f64);
        }
    }
    Ok(ScoreMatrix::new(
        measure,
        templates,
        ColumnKind::Adjective,
        groups.iter().map(|g| g.id().to_string()).collect(),
        adjectives.to_vec(),
        values,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Dimension, Domain, SocialGroup};
    use crate::model_io::{Matrix, PromptTensors};

    fn toy_bundle() -> TensorBundle {
        // Vocabulary: 0 weak, 1 strong, 2 filler. Logits chosen so the
        // adjective log-probabilities are easy to recompute by hand.
        let mut prompts = BTreeMap::new();
        let mut put = |id: &str, l: [f32; 3], h: [f32; 2]| {
            prompts.insert(
                id.to_string(),
                PromptTensors {
                    logits: Some(l.to_vec()),
                    hidden: Some(h.to_vec()),
                },
            );
        };
        put("t1/PRIOR", [0.0, 0.0, 0.0], [1.0, 0.0]);
        put("t1/a", [1.0, 0.0, 0.0], [0.5, 0.5]);
        put("t1/b", [0.0, 2.0, 0.0], [0.0, 1.0]);
        put("t2/PRIOR", [0.0, 0.5, 0.0], [1.0, 1.0]);
        put("t2/a", [0.0, 1.0, 0.0], [2.0, 0.0]);
        put("t2/b", [2.0, 0.0, 1.0], [0.2, 0.9]);
        TensorBundle {
            vocabulary: vec!["weak".into(), "strong".into(), "x".into()],
            adjective_tokenization: BTreeMap::from([
                ("weak".to_string(), vec![0]),
                ("strong".to_string(), vec![1]),
            ]),
            output_matrix: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.3]]),
            output_bias: None,
            prompts,
            ceat_embeddings: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    fn groups() -> Vec<SocialGroup> {
        vec![
            SocialGroup::new("a", Domain::Age, "a person", "as", None),
            SocialGroup::new("b", Domain::Religion, "b person", "bs", None),
        ]
    }

    fn pairs() -> Vec<TraitPair> {
        vec![TraitPair::new(Dimension::Agency, "weak", "strong")]
    }

    #[test]
    fn ilps_matrix_matches_manual_composition() {
        let b = toy_bundle();
        let gs = groups();
        let refs: Vec<&dyn Surface> = gs.iter().map(|g| g as &dyn Surface).collect();
        let ts = vec!["t2".to_string(), "t1".to_string()];
        let m = build_score_matrix(&b, &refs, &pairs(), &ts, Measure::Ilps, &ScoringOptions::default()).unwrap();
        assert_eq!(m.templates, ["t1", "t2"]);
        for g in ["a", "b"] {
            let mut expected = 0.0;
            for t in ["t1", "t2"] {
                let w = ilps(&b, &format!("{t}/{g}"), &format!("{t}/PRIOR"), "weak").unwrap();
                let s = ilps(&b, &format!("{t}/{g}"), &format!("{t}/PRIOR"), "strong").unwrap();
                expected += s - w;
            }
            assert_eq!(m.get(g, "weak-strong").unwrap(), expected / 2.0);
        }
    }

    #[test]
    fn swapping_poles_negates_column() {
        let b = toy_bundle();
        let gs = groups();
        let refs: Vec<&dyn Surface> = gs.iter().map(|g| g as &dyn Surface).collect();
        let ts = vec!["t1".to_string(), "t2".to_string()];
        let flipped = vec![TraitPair::new(Dimension::Agency, "strong", "weak")];
        for measure in [Measure::Ilps, Measure::Set] {
            let m = build_score_matrix(&b, &refs, &pairs(), &ts, measure, &ScoringOptions::default()).unwrap();
            let f = build_score_matrix(&b, &refs, &flipped, &ts, measure, &ScoringOptions::default()).unwrap();
            for (x, y) in m.values.iter().zip(&f.values) {
                assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_values() {
        let b = toy_bundle();
        let gs = groups();
        let refs: Vec<&dyn Surface> = gs.iter().map(|g| g as &dyn Surface).collect();
        let ts = vec!["t1".to_string(), "t2".to_string()];
        let one = build_score_matrix(&b, &refs, &pairs(), &ts, Measure::Set, &ScoringOptions::default()).unwrap();
        let many = ScoringOptions {
            workers: 8,
            ..ScoringOptions::default()
        };
        let eight = build_score_matrix(&b, &refs, &pairs(), &ts, Measure::Set, &many).unwrap();
        assert_eq!(one, eight);
    }

    #[test]
    fn missing_tensors_are_listed_together() {
        let mut b = toy_bundle();
        b.prompts.remove("t1/a");
        b.prompts.get_mut("t2/PRIOR").unwrap().logits = None;
        let gs = groups();
        let refs: Vec<&dyn Surface> = gs.iter().map(|g| g as &dyn Surface).collect();
        let ts = vec!["t1".to_string(), "t2".to_string()];
        let e = build_score_matrix(&b, &refs, &pairs(), &ts, Measure::Ilps, &ScoringOptions::default()).unwrap_err();
        match e {
            ScoringError::MissingTensors(list) => {
                assert_eq!(list, ["t1/a (logits)", "t2/PRIOR (logits)"]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn adjective_matrix_averages_templates() {
        let b = toy_bundle();
        let gs = groups();
        let refs: Vec<&dyn Surface> = gs.iter().map(|g| g as &dyn Surface).collect();
        let ts = vec!["t1".to_string(), "t2".to_string()];
        let adjs = vec!["weak".to_string(), "strong".to_string()];
        let m = build_adjective_matrix(&b, &refs, &adjs, &ts, Measure::Ilps, &ScoringOptions::default()).unwrap();
        let e = (ilps(&b, "t1/b", "t1/PRIOR", "weak").unwrap() + ilps(&b, "t2/b", "t2/PRIOR", "weak").unwrap()) / 2.0;
        assert_eq!(m.get("b", "weak").unwrap(), e);
        assert_eq!(m.kind, ColumnKind::Adjective);
    }
}
