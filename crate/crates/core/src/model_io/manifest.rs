//! The manifest tells the extractor which prompts to run and which tensors
//! to keep.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bundle::BUNDLE_VERSION;
use crate::lexicon::{
    render_prompt, GroupRef, LexiconError, Prompt, Surface, Target, Template, TraitPair, MASK_SLOT,
};
use crate::provenance::Provenance;
use crate::scoring::Measure;

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_CEAT_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("no measures requested")]
    NoMeasures,
    #[error("ILPS★ needs an adjective tokenization (adjective → subword ids)")]
    TokenizationRequired,
    #[error("adjective `{0}` has no tokenization")]
    UntokenizedAdjective(String),
    #[error("adjective `{0}` tokenizes to zero subwords")]
    EmptyTokenization(String),
    #[error("duplicate prompt id `{0}`")]
    DuplicatePrompt(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// One subword of an adjective as the target tokenizer splits it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subword {
    pub id: usize,
    pub piece: String,
}

pub type Tokenization = BTreeMap<String, Vec<Subword>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRequest {
    Logits,
    Hidden,
    Both,
}

/// Filling-step context for a multi-subword adjective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillStep {
    pub adjective: String,
    /// 1-based step number; the subword predicted at this step is `step - 1`.
    pub step: usize,
    pub of: usize,
    /// Subwords already spelled out before the masked run.
    pub filled: Vec<Subword>,
    /// Mask markers left in the trait slot, including the predicted one.
    pub masked: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub text: String,
    pub group: GroupRef,
    pub template: String,
    /// Occurrence index (0-based) of the mask marker whose tensors are kept.
    pub trait_marker_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<FillStep>,
    pub tensors: TensorRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CeatRequest {
    pub word: String,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub bundle_version: u64,
    pub measures: Vec<Measure>,
    pub prompts: Vec<ManifestRecord>,
    pub ceat_words: Vec<CeatRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone)]
pub struct ManifestOptions {
    pub tokenization: Option<Tokenization>,
    pub aux_adjectives: bool,
    pub ceat_samples: usize,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        ManifestOptions {
            tokenization: None,
            aux_adjectives: false,
            ceat_samples: DEFAULT_CEAT_SAMPLES,
        }
    }
}

/// Id of the base prompt for `template` and a group id or `PRIOR`.
pub fn prompt_id(template: &str, group: &GroupRef) -> String {
    format!("{template}/{}", group.as_str())
}

/// Id of filling step `step` (1-based) of `k` for `adjective`.
pub fn step_prompt_id(template: &str, group: &GroupRef, adjective: &str, step: usize, k: usize) -> String {
    format!("{template}/{}/{adjective}/{step}of{k}", group.as_str())
}

/// Prompt ids whose logits give the chain-rule terms of `adjective`, in
/// subword order. A single-subword adjective uses the base prompt.
pub fn chain_prompt_ids(template: &str, group: &GroupRef, adjective: &str, k: usize) -> Vec<String> {
    if k == 1 {
        vec![prompt_id(template, group)]
    } else {
        (1..=k)
            .map(|i| step_prompt_id(template, group, adjective, i, k))
            .collect()
    }
}

fn replace_nth_marker(text: &str, n: usize, with: &str) -> String {
    let mut out = String::with_capacity(text.len() + with.len());
    let mut rest = text;
    let mut seen = 0;
    while let Some(pos) = rest.find(MASK_SLOT) {
        out.push_str(&rest[..pos]);
        if seen == n {
            out.push_str(with);
        } else {
            out.push_str(MASK_SLOT);
        }
        rest = &rest[pos + MASK_SLOT.len()..];
        seen += 1;
    }
    out.push_str(rest);
    out
}

/// Prompt text for one filling step: the trait slot becomes the filled
/// pieces followed by the remaining masks.
fn step_text(prompt: &Prompt, filled: &[Subword], masked: usize) -> String {
    let slot: Vec<&str> = filled
        .iter()
        .map(|s| s.piece.as_str())
        .chain(std::iter::repeat_n(MASK_SLOT, masked))
        .collect();
    replace_nth_marker(&prompt.text, prompt.trait_marker_index, &slot.join(" "))
}

/// Lists every prompt and embedding request needed by `measures`.
///
/// Records come out template by template, the prior first and then groups in
/// input order; ILPS★ filling steps follow all base prompts.
pub fn build_manifest(
    groups: &[&dyn Surface],
    trait_pairs: &[TraitPair],
    templates: &[Template],
    measures: &[Measure],
    options: &ManifestOptions,
) -> Result<Manifest, ManifestError> {
    if measures.is_empty() {
        return Err(ManifestError::NoMeasures);
    }
    let wants = |m: Measure| measures.contains(&m);
    let needs_prompts = wants(Measure::Ilps) || wants(Measure::IlpsStar) || wants(Measure::Set);
    let tensors = if wants(Measure::Set) {
        TensorRequest::Both
    } else {
        TensorRequest::Logits
    };

    let mut adjectives = Vec::new();
    let mut seen_adj = BTreeSet::new();
    let mains = trait_pairs.iter().flat_map(|p| [p.left.as_str(), p.right.as_str()]);
    let auxes = trait_pairs
        .iter()
        .flat_map(|p| p.aux_left.iter().chain(&p.aux_right).map(String::as_str))
        .filter(|_| options.aux_adjectives);
    for a in mains.chain(auxes) {
        if seen_adj.insert(a) {
            adjectives.push(a);
        }
    }

    let mut prompts = Vec::new();
    if needs_prompts {
        let mut base = Vec::new();
        for template in templates {
            let targets =
                std::iter::once(Target::Prior).chain(groups.iter().map(|g| Target::Group(*g)));
            for target in targets {
                let prompt = render_prompt(template, target)?;
                prompts.push(ManifestRecord {
                    id: prompt_id(&template.id, &prompt.group_ref),
                    text: prompt.text.clone(),
                    group: prompt.group_ref.clone(),
                    template: template.id.clone(),
                    trait_marker_index: prompt.trait_marker_index,
                    fill: None,
                    tensors,
                });
                base.push(prompt);
            }
        }

        if wants(Measure::IlpsStar) {
            let tokenization = options
                .tokenization
                .as_ref()
                .ok_or(ManifestError::TokenizationRequired)?;
            for prompt in &base {
                for adjective in &adjectives {
                    let subwords = tokenization
                        .get(*adjective)
                        .ok_or_else(|| ManifestError::UntokenizedAdjective(adjective.to_string()))?;
                    let k = subwords.len();
                    if k == 0 {
                        return Err(ManifestError::EmptyTokenization(adjective.to_string()));
                    }
                    if k == 1 {
                        continue;
                    }
                    for step in 1..=k {
                        let filled = subwords[..step - 1].to_vec();
                        let masked = k - step + 1;
                        prompts.push(ManifestRecord {
                            id: step_prompt_id(&prompt.template_id, &prompt.group_ref, adjective, step, k),
                            text: step_text(prompt, &filled, masked),
                            group: prompt.group_ref.clone(),
                            template: prompt.template_id.clone(),
                            // The predicted mask is the first of the masked run.
                            trait_marker_index: prompt.trait_marker_index,
                            fill: Some(FillStep {
                                adjective: adjective.to_string(),
                                step,
                                of: k,
                                filled,
                                masked,
                            }),
                            tensors: TensorRequest::Logits,
                        });
                    }
                }
            }
        }
    }

    let mut ids = BTreeSet::new();
    for r in &prompts {
        if !ids.insert(r.id.as_str()) {
            return Err(ManifestError::DuplicatePrompt(r.id.clone()));
        }
    }

    let mut ceat_words = Vec::new();
    if wants(Measure::Ceat) {
        let mut seen = BTreeSet::new();
        let words = adjectives.iter().copied().chain(groups.iter().map(|g| g.plural()));
        for w in words {
            if seen.insert(w) {
                ceat_words.push(CeatRequest {
                    word: w.to_string(),
                    samples: options.ceat_samples,
                });
            }
        }
    }

    Ok(Manifest {
        format_version: MANIFEST_VERSION,
        bundle_version: BUNDLE_VERSION,
        measures: measures.to_vec(),
        prompts,
        ceat_words,
        provenance: None,
    })
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        fs::write(path, self.to_json()).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let io = |message: String| ManifestError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

/// Reads a tokenization file: a JSON object mapping each adjective to its
/// subwords, `{"kind": [{"id": 3, "piece": "kind"}]}`.
pub fn read_tokenization(path: &Path) -> Result<Tokenization, ManifestError> {
    let io = |message: String| ManifestError::Io {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Dimension, Domain, Family, Number, SocialGroup};

    fn asians() -> SocialGroup {
        SocialGroup::new("asian", Domain::RaceEthnicity, "Asian person", "Asians", Some("Asian"))
    }

    fn t1() -> Template {
        Template::new("all_are", "All [group] are [trait].", Number::Plural, Family::Declarative).unwrap()
    }

    fn pair() -> TraitPair {
        TraitPair::new(Dimension::Agency, "powerless", "powerful")
    }

    fn build(measures: &[Measure], options: &ManifestOptions) -> Manifest {
        let g = asians();
        build_manifest(&[&g], &[pair()], &[t1()], measures, options).unwrap()
    }

    #[test]
    fn ilps_needs_group_and_prior_logits() {
        let m = build(&[Measure::Ilps], &ManifestOptions::default());
        assert_eq!(m.prompts.len(), 2);
        assert!(m.prompts.iter().all(|r| r.tensors == TensorRequest::Logits));
        assert_eq!(m.prompts[0].id, "all_are/PRIOR");
        assert_eq!(m.prompts[0].text, "All ⟨MASK⟩ are ⟨MASK⟩.");
        assert_eq!(m.prompts[0].trait_marker_index, 1);
        assert_eq!(m.prompts[1].text, "All Asians are ⟨MASK⟩.");
        assert!(m.ceat_words.is_empty());
    }

    #[test]
    fn set_requests_hidden_vectors() {
        let m = build(&[Measure::Set], &ManifestOptions::default());
        assert_eq!(m.prompts.len(), 2);
        assert!(m.prompts.iter().all(|r| r.tensors == TensorRequest::Both));
    }

    #[test]
    fn ceat_requests_adjectives_then_groups() {
        let m = build(&[Measure::Ceat], &ManifestOptions::default());
        assert!(m.prompts.is_empty());
        let words: Vec<_> = m.ceat_words.iter().map(|c| c.word.as_str()).collect();
        assert_eq!(words, ["powerless", "powerful", "Asians"]);
        assert!(m.ceat_words.iter().all(|c| c.samples == 1000));
    }

    #[test]
    fn empty_measures_rejected() {
        let g = asians();
        let err = build_manifest(&[&g], &[pair()], &[t1()], &[], &ManifestOptions::default());
        assert!(matches!(err, Err(ManifestError::NoMeasures)));
    }

    #[test]
    fn ilps_star_spells_out_filled_subwords() {
        let tok: Tokenization = BTreeMap::from([
            ("powerless".to_string(), vec![
                Subword { id: 4, piece: "power".into() },
                Subword { id: 5, piece: "less".into() },
            ]),
            ("powerful".to_string(), vec![Subword { id: 6, piece: "powerful".into() }]),
        ]);
        let opts = ManifestOptions {
            tokenization: Some(tok),
            ..ManifestOptions::default()
        };
        let m = build(&[Measure::IlpsStar], &opts);
        // 2 base prompts + 2 contexts × 2 steps for the two-piece adjective.
        assert_eq!(m.prompts.len(), 6);
        let step2 = m
            .prompts
            .iter()
            .find(|r| r.id == "all_are/asian/powerless/2of2")
            .unwrap();
        assert_eq!(step2.text, "All Asians are power ⟨MASK⟩.");
        let prior1 = m
            .prompts
            .iter()
            .find(|r| r.id == "all_are/PRIOR/powerless/1of2")
            .unwrap();
        assert_eq!(prior1.text, "All ⟨MASK⟩ are ⟨MASK⟩ ⟨MASK⟩.");
        assert_eq!(prior1.trait_marker_index, 1);
        assert_eq!(prior1.fill.as_ref().unwrap().masked, 2);
    }

    #[test]
    fn ilps_star_without_tokenization_fails() {
        let g = asians();
        let err = build_manifest(&[&g], &[pair()], &[t1()], &[Measure::IlpsStar], &ManifestOptions::default());
        assert!(matches!(err, Err(ManifestError::TokenizationRequired)));
    }

    #[test]
    fn json_round_trip() {
        let m = build(&[Measure::Ilps, Measure::Set, Measure::Ceat], &ManifestOptions::default());
        let back: Manifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        // Same input, same bytes.
        assert_eq!(m.to_json(), build(&[Measure::Ilps, Measure::Set, Measure::Ceat], &ManifestOptions::default()).to_json());
    }

    #[test]
    fn chain_ids_for_single_subword_reuse_base_prompt() {
        assert_eq!(chain_prompt_ids("t", &GroupRef::Prior, "kind", 1), ["t/PRIOR"]);
        assert_eq!(
            chain_prompt_ids("t", &GroupRef::Group("g".into()), "unkind", 2),
            ["t/g/unkind/1of2", "t/g/unkind/2of2"]
        );
    }
}
