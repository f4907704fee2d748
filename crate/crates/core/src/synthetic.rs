//! Seeded synthetic inputs: a small lexicon, a tensor bundle produced by a
//! linear toy "model", human ratings and emergent ground truth. Used by the
//! tests and shipped as the end-to-end fixture.
//!
//! The toy model maps each prompt to a hidden vector built from template,
//! group and filled-subword embeddings, and emits logits `A h + b`, so every
//! SeT cell can be checked against the brute-force squish oracle (V = 12).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::lexicon::{parse_exclusions, parse_groups, parse_templates, parse_traits, GroupRef, Lexicon, Surface};
use crate::model_io::{
    build_manifest, Manifest, ManifestOptions, Matrix, PromptTensors, Subword, TensorBundle, TensorRequest,
    Tokenization,
};
use crate::pipeline::{RunConfig, TemplateSelection};
use crate::scoring::Measure;

pub const DEFAULT_SEED: u64 = 20240611;
pub const HIDDEN_SIZE: usize = 5;
const CEAT_SAMPLES: usize = 4;
const ANNOTATORS: usize = 3;

pub const GROUPS_CSV: &str = "\
id,domain,singular,plural,adjectival
woman,gender_sexuality,woman,women,female
man,gender_sexuality,man,men,male
asian,race_ethnicity,Asian person,Asians,Asian
black,race_ethnicity,Black person,Black people,Black
teenager,age,teenager,teenagers,teenage
";

pub const TRAITS_CSV: &str = "\
dimension,left,right,aux_left,aux_right
agency,powerless,powerful,,
communion,cold,warm,,
beliefs,traditional,modern,,
communion,untrustworthy,trustworthy,,
";

pub const TEMPLATES_CSV: &str = "\
id,pattern,number,family
are,[Group] are [trait].,plural,declarative
all_are,All [group] are [trait].,plural,declarative
that_is,That [group] is [trait].,singular,declarative
";

pub const EXCLUSIONS_CSV: &str = "\
first,second,reason
teenager,man,grammatically awkward
";

/// Vocabulary: six whole-word adjectives, four pieces of the two split
/// adjectives, two fillers.
const VOCAB: [&str; 12] = [
    "powerless", "powerful", "cold", "warm", "traditional", "modern", "un", "##trust", "trust", "##worthy",
    "the", "people",
];

/// Selects the shape of the synthetic inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Split `untrustworthy` / `trustworthy` into two subwords each. When
    /// false every adjective maps to a single token.
    pub multi_subword: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: DEFAULT_SEED,
            multi_subword: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub spec: SyntheticSpec,
    pub lexicon: Lexicon,
    pub tokenization: Tokenization,
    pub manifest: Manifest,
    pub bundle: TensorBundle,
    pub human_csv: String,
    pub truth_csv: String,
}

pub fn synthetic_lexicon() -> Lexicon {
    Lexicon {
        groups: parse_groups(GROUPS_CSV.as_bytes()).expect("valid groups"),
        trait_pairs: parse_traits(TRAITS_CSV.as_bytes()).expect("valid traits"),
        templates: parse_templates(TEMPLATES_CSV.as_bytes()).expect("valid templates"),
        exclusions: parse_exclusions(EXCLUSIONS_CSV.as_bytes()).expect("valid exclusions"),
    }
}

fn tokenization(multi: bool) -> Tokenization {
    let sub = |id: usize| Subword {
        id,
        piece: VOCAB[id].to_string(),
    };
    let mut t: Tokenization = (0..6).map(|i| (VOCAB[i].to_string(), vec![sub(i)])).collect();
    if multi {
        t.insert("untrustworthy".into(), vec![sub(6), sub(7)]);
        t.insert("trustworthy".into(), vec![sub(8), sub(9)]);
    } else {
        t.insert("untrustworthy".into(), vec![sub(6)]);
        t.insert("trustworthy".into(), vec![sub(8)]);
    }
    t
}

/// Deterministic stream keyed by `(seed, key)`.
fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(key.as_bytes());
    let mut k = [0u8; 8];
    k.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(k))
}

fn vector(seed: u64, key: &str, scale: f64) -> Vec<f64> {
    let mut rng = keyed_rng(seed, key);
    (0..HIDDEN_SIZE).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

/// Hidden state of a group: single groups have their own vector; a pair
/// leans on its first component and carries a little of its own.
fn group_vector(seed: u64, group: &GroupRef) -> Vec<f64> {
    match group {
        GroupRef::Prior => vec![0.0; HIDDEN_SIZE],
        GroupRef::Group(id) => match id.split_once('+') {
            Some((a, b)) => {
                let mut v = vec![0.0; HIDDEN_SIZE];
                axpy(&mut v, 0.6, &vector(seed, &format!("group/{a}"), 1.0));
                axpy(&mut v, 0.4, &vector(seed, &format!("group/{b}"), 1.0));
                axpy(&mut v, 1.0, &vector(seed, &format!("pair/{id}"), 0.5));
                v
            }
            None => vector(seed, &format!("group/{id}"), 1.0),
        },
    }
}

/// Builds the fixture for `spec`.
pub fn generate(spec: SyntheticSpec) -> SyntheticFixture {
    let seed = spec.seed;
    let lexicon = synthetic_lexicon();
    let tok = tokenization(spec.multi_subword);
    let pairs = lexicon.paired_groups();
    let mut groups: Vec<&dyn Surface> = lexicon.groups.iter().map(|g| g as &dyn Surface).collect();
    groups.extend(pairs.iter().filter(|p| !p.is_excluded()).map(|p| p as &dyn Surface));
    let options = ManifestOptions {
        tokenization: Some(tok.clone()),
        ..ManifestOptions::default()
    };
    let manifest = build_manifest(&groups, &lexicon.trait_pairs, &lexicon.templates, &Measure::ALL, &options)
        .expect("synthetic manifest");

    let v = VOCAB.len();
    let mut rng = keyed_rng(seed, "output_matrix");
    let a: Vec<f32> = (0..v * HIDDEN_SIZE).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let bias: Vec<f32> = (0..v).map(|_| rng.gen_range(-0.25f32..0.25)).collect();
    let output_matrix = Matrix::new(v, HIDDEN_SIZE, a);

    let mut bundle = TensorBundle {
        vocabulary: VOCAB.iter().map(|s| s.to_string()).collect(),
        adjective_tokenization: tok.iter().map(|(k, s)| (k.clone(), s.iter().map(|x| x.id).collect())).collect(),
        output_matrix,
        output_bias: Some(bias),
        prompts: BTreeMap::new(),
        ceat_embeddings: BTreeMap::new(),
        metadata: BTreeMap::from([
            ("model".to_string(), serde_json::Value::from("synthetic-linear")),
            ("seed".to_string(), serde_json::Value::from(seed)),
        ]),
    };

    for record in &manifest.prompts {
        let mut h = vector(seed, &format!("template/{}", record.template), 0.8);
        axpy(&mut h, 1.0, &group_vector(seed, &record.group));
        if let Some(fill) = &record.fill {
            for s in &fill.filled {
                axpy(&mut h, 1.0, &vector(seed, &format!("piece/{}", s.piece), 0.7));
            }
            axpy(&mut h, 0.1 * fill.masked as f64, &vector(seed, "masked", 1.0));
        }
        let h32: Vec<f32> = h.iter().map(|&x| x as f32).collect();
        let logits: Vec<f32> = bundle.project(&h32).iter().map(|&x| x as f32).collect();
        let hidden = matches!(record.tensors, TensorRequest::Hidden | TensorRequest::Both).then_some(h32);
        bundle.prompts.insert(
            record.id.clone(),
            PromptTensors {
                logits: Some(logits),
                hidden,
            },
        );
    }

    for req in &manifest.ceat_words {
        let mut rng = keyed_rng(seed, &format!("ceat/{}", req.word));
        let rows: Vec<Vec<f32>> = (0..CEAT_SAMPLES)
            .map(|_| (0..HIDDEN_SIZE).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        bundle.ceat_embeddings.insert(req.word.clone(), Matrix::from_rows(&rows));
    }

    let mut human_csv = String::from("group,trait_left,trait_right,rating,annotator_id\n");
    for g in &lexicon.groups {
        for p in &lexicon.trait_pairs {
            let mut rng = keyed_rng(seed, &format!("human/{}/{}", g.id, p.id()));
            for k in 0..ANNOTATORS {
                let r: u32 = rng.gen_range(0..=100);
                let _ = writeln!(human_csv, "{},{},{},{r},a{k}", g.id, p.left, p.right);
            }
        }
    }

    let mut truth_csv = String::from("group,adjective,dimension\n");
    for p in pairs.iter().filter(|p| !p.is_excluded()) {
        for t in &lexicon.trait_pairs {
            for adj in [&t.left, &t.right] {
                let mut rng = keyed_rng(seed, &format!("truth/{}/{adj}", p.id));
                if rng.gen_bool(0.25) {
                    let _ = writeln!(truth_csv, "{},{adj},{}", p.id, t.dimension.as_str());
                }
            }
        }
    }

    SyntheticFixture {
        spec,
        lexicon,
        tokenization: tok,
        manifest,
        bundle,
        human_csv,
        truth_csv,
    }
}

impl SyntheticFixture {
    /// Writes `lexicon/`, `bundle/`, `manifest.json`, `tokenization.json`,
    /// `human.csv` and `truth.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let lex = dir.join("lexicon");
        fs::create_dir_all(&lex)?;
        fs::write(lex.join("groups.csv"), GROUPS_CSV)?;
        fs::write(lex.join("traits.csv"), TRAITS_CSV)?;
        fs::write(lex.join("templates.csv"), TEMPLATES_CSV)?;
        fs::write(lex.join("exclusions.csv"), EXCLUSIONS_CSV)?;
        self.bundle
            .write(&dir.join("bundle"))
            .map_err(|e| io::Error::other(e.to_string()))?;
        fs::write(dir.join("manifest.json"), self.manifest.to_json())?;
        let mut tok = serde_json::to_string_pretty(&self.tokenization).map_err(io::Error::other)?;
        tok.push('\n');
        fs::write(dir.join("tokenization.json"), tok)?;
        fs::write(dir.join("human.csv"), &self.human_csv)?;
        fs::write(dir.join("truth.csv"), &self.truth_csv)?;
        let mut run = serde_json::to_string_pretty(&self.run_config()).map_err(io::Error::other)?;
        run.push('\n');
        fs::write(dir.join("run.json"), run)?;
        Ok(())
    }

    /// Full-run config with paths relative to the fixture directory. ILPS is
    /// left out when some adjective spans several subwords.
    pub fn run_config(&self) -> RunConfig {
        let measures = if self.spec.multi_subword {
            vec![Measure::IlpsStar, Measure::Ceat, Measure::Set]
        } else {
            Measure::ALL.to_vec()
        };
        RunConfig {
            lexicon: Some("lexicon".into()),
            bundle: Some("bundle".into()),
            human: Some("human.csv".into()),
            truth: Some("truth.csv".into()),
            tokenization: Some("tokenization.json".into()),
            measures,
            templates: TemplateSelection::Pilot,
            output: "out".into(),
            ..RunConfig::default()
        }
    }
}

/// Two-position masked model over a tiny vocabulary with an explicit joint
/// distribution `p(x1, x2) ∝ exp(u[x1] + w[x1][x2])`. Every row of `w` is a
/// permutation of the same values, so the first-position marginal is exactly
/// `softmax(u)` and the exported step logits are exact in f32.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub vocab_size: usize,
    /// Per context: `u` and `w` (row-major `V × V`).
    pub contexts: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl JointModel {
    pub fn random(seed: u64, vocab_size: usize, contexts: &[&str]) -> Self {
        let mut out = BTreeMap::new();
        for c in contexts {
            let mut rng = keyed_rng(seed, &format!("joint/{c}"));
            // Multiples of 1/64 are exact in f32.
            let mut draw = || f32::from(rng.gen_range(-256i16..256)) / 64.0;
            let u: Vec<f32> = (0..vocab_size).map(|_| draw()).collect();
            let base: Vec<f32> = (0..vocab_size).map(|_| draw()).collect();
            let mut w = Vec::with_capacity(vocab_size * vocab_size);
            for x1 in 0..vocab_size {
                let shift = keyed_rng(seed, &format!("joint/{c}/{x1}")).gen_range(0..vocab_size);
                w.extend((0..vocab_size).map(|x2| base[(x2 + shift) % vocab_size]));
            }
            out.insert(c.to_string(), (u, w));
        }
        JointModel {
            vocab_size,
            contexts: out,
        }
    }

    /// Bundle with step prompts `<context>/1of2` (both masked) and
    /// `<context>/2of2` (first subword filled) for the adjective `adj`
    /// spelled `(first, second)`.
    pub fn bundle(&self, adjective: &str, first: usize, second: usize) -> TensorBundle {
        let v = self.vocab_size;
        let mut prompts = BTreeMap::new();
        for (c, (u, w)) in &self.contexts {
            prompts.insert(
                format!("{c}/1of2"),
                PromptTensors {
                    logits: Some(u.clone()),
                    hidden: None,
                },
            );
            prompts.insert(
                format!("{c}/2of2"),
                PromptTensors {
                    logits: Some(w[first * v..(first + 1) * v].to_vec()),
                    hidden: None,
                },
            );
        }
        TensorBundle {
            vocabulary: (0..v).map(|i| format!("w{i}")).collect(),
            adjective_tokenization: BTreeMap::from([(adjective.to_string(), vec![first, second])]),
            output_matrix: Matrix::new(v, 1, vec![0.0; v]),
            output_bias: None,
            prompts,
            ceat_embeddings: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::squish::{squish, squish_oracle, SquishProblem};

    #[test]
    fn generation_is_deterministic() {
        let a = generate(SyntheticSpec::default());
        let b = generate(SyntheticSpec::default());
        assert_eq!(a.bundle.content_hash(), b.bundle.content_hash());
        assert_eq!(a.human_csv, b.human_csv);
        let c = generate(SyntheticSpec {
            seed: 7,
            ..SyntheticSpec::default()
        });
        assert_ne!(a.bundle.content_hash(), c.bundle.content_hash());
    }

    #[test]
    fn bundle_is_valid_and_consistent() {
        let f = generate(SyntheticSpec::default());
        f.bundle.validate().unwrap();
        assert_eq!(f.bundle.vocab_size(), 12);
        let (_, gap) = f.bundle.max_projection_gap().unwrap();
        assert!(gap < 1e-4, "{gap}");
        // Every manifest record has tensors.
        for r in &f.manifest.prompts {
            assert!(f.bundle.logits(&r.id).is_some(), "{}", r.id);
        }
        assert!(!f.truth_csv.lines().skip(1).collect::<Vec<_>>().is_empty());
    }

    #[test]
    fn every_set_distance_matches_the_oracle() {
        let f = generate(SyntheticSpec::default());
        for (id, t) in f.bundle.prompts.iter().filter(|(id, _)| id.starts_with("are/")) {
            let Some(h) = &t.hidden else { continue };
            let logits = f.bundle.project(h);
            let norm: f64 = h.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            for target in 0..logits.len() {
                let p = SquishProblem::new(&logits, norm, target, 1.0);
                let g = squish(&p).unwrap().distance;
                let o = squish_oracle(&p).unwrap().distance;
                assert!((g - o).abs() <= 1e-9 * g.max(1.0), "{id} {target}: {g} vs {o}");
            }
        }
    }

    #[test]
    fn joint_model_first_marginal_is_softmax_u() {
        let m = JointModel::random(3, 6, &["ctx"]);
        let (u, w) = &m.contexts["ctx"];
        let row_sums: Vec<f64> = (0..6)
            .map(|x1| (0..6).map(|x2| f64::from(w[x1 * 6 + x2]).exp()).sum())
            .collect();
        for s in &row_sums {
            assert!((s - row_sums[0]).abs() < 1e-12);
        }
        assert_eq!(u.len(), 6);
    }
}
