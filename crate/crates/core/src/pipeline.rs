//! End-to-end runs driven by a JSON [`RunConfig`].
//!
//! Stages exchange data only through files in the output directory, so any
//! stage can be re-run on its own against earlier artifacts. A run writes into
//! a staging directory and moves the files into place only when every stage
//! succeeded; on failure nothing new is left behind.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::alignment::{align, pilot_select_templates, AlignError, AlignmentReport, HumanError, HumanRatings, PilotChoice, Pooling};
use crate::intersect::{
    detected_cells, dominance, dominance_csv, emergent, emergent_csv, evaluate_emergent, order_analysis, parse_truth,
    EmergentEvaluation, IntersectError, OrderSummary, Universe, DEFAULT_TOP_K,
};
use crate::lexicon::{Lexicon, LexiconError, PairedGroup, SocialGroup, Surface};
use crate::model_io::{build_manifest, read_bundle, read_tokenization, BundleError, ManifestError, ManifestOptions, TensorBundle};
use crate::provenance::{sha256_file, sha256_hex, Provenance};
use crate::scoring::{
    build_adjective_matrix, build_score_matrix, MatrixError, Measure, ScoreMatrix, ScoringError, ScoringOptions,
    SetOptions, DEFAULT_INFINITY_CAP, DEFAULT_MARGIN,
};

const STAGING_DIR: &str = ".stereo-meter-staging";
pub const WORKERS_ENV: &str = "STEREO_METER_WORKERS";

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Manifest,
    Pilot,
    Score,
    Align,
    Intersect,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Manifest,
        Stage::Pilot,
        Stage::Score,
        Stage::Align,
        Stage::Intersect,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Manifest => "manifest",
            Stage::Pilot => "pilot",
            Stage::Score => "score",
            Stage::Align => "align",
            Stage::Intersect => "intersect",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Data => 3,
            ErrorKind::Internal => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub stage: Option<Stage>,
    pub message: String,
}

impl PipelineError {
    pub fn validation(message: impl Into<String>) -> Self {
        PipelineError {
            kind: ErrorKind::Validation,
            stage: None,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        PipelineError {
            kind: ErrorKind::Data,
            stage: None,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        PipelineError {
            kind: ErrorKind::Internal,
            stage: None,
            message: message.into(),
        }
    }

    /// Tags the error with the stage it came from, unless already tagged.
    pub fn at(mut self, stage: Stage) -> Self {
        self.stage.get_or_insert(stage);
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Validation => "invalid configuration",
            ErrorKind::Data => "data error",
            ErrorKind::Internal => "internal error",
        };
        match self.stage {
            Some(s) => write!(f, "{kind} in stage `{s}`: {}", self.message),
            None => write!(f, "{kind}: {}", self.message),
        }
    }
}

impl std::error::Error for PipelineError {}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::data(e.to_string())
            }
        }
    )*};
}

data_errors!(LexiconError, BundleError, ScoringError, HumanError, AlignError, IntersectError, MatrixError);

impl From<ManifestError> for PipelineError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::NoMeasures | ManifestError::TokenizationRequired => PipelineError::validation(e.to_string()),
            _ => PipelineError::data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::internal(format!("{}: {e}", path.display()))
}

/// Which templates to score with.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum TemplateSelection {
    /// Every template in the lexicon, averaged.
    #[default]
    All,
    /// Chosen per measure by the pilot stage.
    Pilot,
    Ids(Vec<String>),
}

impl Serialize for TemplateSelection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TemplateSelection::All => s.serialize_str("all"),
            TemplateSelection::Pilot => s.serialize_str("pilot"),
            TemplateSelection::Ids(ids) => ids.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for TemplateSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(String),
            Many(Vec<String>),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::One(s) => s.parse().map_err(serde::de::Error::custom)?,
            Raw::Many(ids) => TemplateSelection::Ids(ids),
        })
    }
}

impl FromStr for TemplateSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(TemplateSelection::All),
            "pilot" => Ok(TemplateSelection::Pilot),
            "" => Err("empty template list".into()),
            list => Ok(TemplateSelection::Ids(list.split(',').map(|t| t.trim().to_string()).collect())),
        }
    }
}

/// Kendall τ variant. Only τ-b is implemented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauVariant {
    #[default]
    #[serde(rename = "b", alias = "tau_b", alias = "tau-b")]
    B,
}

impl FromStr for TauVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "b" | "tau_b" | "tau-b" => Ok(TauVariant::B),
            other => Err(format!("unsupported tau variant `{other}` (only `b`)")),
        }
    }
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_cap() -> f64 {
    DEFAULT_INFINITY_CAP
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_workers() -> usize {
    1
}
fn yes() -> bool {
    true
}

/// Everything a run needs. Paths are used as given (relative to the working
/// directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Lexicon directory; the built-in lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub human: Option<PathBuf>,
    /// Emergent-trait ground truth CSV.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Adjective tokenization JSON, needed to list ILPS★ filling prompts.
    #[serde(default)]
    pub tokenization: Option<PathBuf>,
    #[serde(default)]
    pub measures: Vec<Measure>,
    #[serde(default)]
    pub templates: TemplateSelection,
    /// Groups used for template selection; every rated single group when empty.
    #[serde(default)]
    pub pilot_groups: Vec<String>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_cap")]
    pub infinity_cap: f64,
    #[serde(default)]
    pub tau_variant: TauVariant,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default)]
    pub aux_adjectives: bool,
    /// Score paired groups and run the intersectional stage.
    #[serde(default = "yes")]
    pub intersectional: bool,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Stages to run; derived from the inputs when empty.
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub output: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

fn scores_file(m: Measure) -> String {
    format!("scores_{m}.csv")
}
fn adjectives_file(m: Measure) -> String {
    format!("adjectives_{m}.csv")
}
fn pilot_file(m: Measure) -> String {
    format!("pilot_{m}.json")
}
fn sidecar(name: &str) -> String {
    format!("{}.json", name.trim_end_matches(".csv"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::validation(format!("config: {e}")))
    }

    /// Reads a config file. Relative paths in it are taken relative to the
    /// file's directory.
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::validation(format!("config {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    /// Joins every relative path onto `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.lexicon, &mut self.bundle, &mut self.human, &mut self.truth, &mut self.tokenization]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output);
    }

    /// Hash of the configuration without `workers` and `output`, which do not
    /// affect results.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("workers");
            o.remove("output");
        }
        sha256_hex(v.to_string().as_bytes())
    }

    fn measures(&self) -> Vec<Measure> {
        let set: BTreeSet<Measure> = self.measures.iter().copied().collect();
        Measure::ALL.into_iter().filter(|m| set.contains(m)).collect()
    }

    fn scored_measures(&self) -> impl Iterator<Item = Measure> + '_ {
        self.measures().into_iter().filter(|&m| m != Measure::Ceat)
    }

    /// Stages that will run, in dependency order.
    pub fn resolved_stages(&self) -> Vec<Stage> {
        let mut set: BTreeSet<Stage> = self.stages.iter().copied().collect();
        if set.is_empty() {
            if self.bundle.is_none() {
                set.insert(Stage::Manifest);
            } else {
                if self.templates == TemplateSelection::Pilot {
                    set.insert(Stage::Pilot);
                }
                set.insert(Stage::Score);
                if self.human.is_some() {
                    set.insert(Stage::Align);
                }
                if self.intersectional {
                    set.insert(Stage::Intersect);
                }
                set.insert(Stage::Report);
            }
        }
        set.into_iter().collect()
    }

    /// Checks values, paths and stage prerequisites; returns the stages to run.
    pub fn validate(&self) -> Result<Vec<Stage>, PipelineError> {
        let bad = |m: String| Err(PipelineError::validation(m));
        if self.output.as_os_str().is_empty() {
            return bad("no output directory given".into());
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.infinity_cap.is_finite() && self.infinity_cap > 0.0) {
            return bad(format!("infinity cap must be positive, got {}", self.infinity_cap));
        }
        if self.workers == 0 {
            return bad("worker count must be at least 1".into());
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if self.measures.is_empty() {
            return bad("no measures requested".into());
        }
        if let TemplateSelection::Ids(ids) = &self.templates {
            if ids.is_empty() || ids.iter().any(String::is_empty) {
                return bad("empty template id".into());
            }
        }
        let dirs = [("lexicon", &self.lexicon), ("bundle", &self.bundle)];
        for (what, p) in dirs {
            if let Some(p) = p {
                if !p.is_dir() {
                    return bad(format!("{what} directory {} does not exist", p.display()));
                }
            }
        }
        let files = [
            ("human ratings", &self.human),
            ("ground truth", &self.truth),
            ("tokenization", &self.tokenization),
        ];
        for (what, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("{what} file {} does not exist", p.display()));
                }
            }
        }

        let stages = self.resolved_stages();
        let runs = |s: Stage| stages.contains(&s);
        let exists = |name: &str| self.output.join(name).is_file();
        for &stage in &stages {
            let need = |ok: bool, what: &str| {
                if ok {
                    Ok(())
                } else {
                    Err(PipelineError::validation(format!("stage `{stage}` needs {what}")))
                }
            };
            match stage {
                Stage::Manifest => need(
                    self.tokenization.is_some() || !self.measures.contains(&Measure::IlpsStar),
                    "a tokenization file for ILPS★",
                )?,
                Stage::Pilot => {
                    need(self.bundle.is_some(), "a bundle")?;
                    need(self.human.is_some(), "human ratings")?;
                    need(self.templates == TemplateSelection::Pilot, "`templates` set to \"pilot\"")?;
                }
                Stage::Score => {
                    need(self.bundle.is_some(), "a bundle")?;
                    if self.templates == TemplateSelection::Pilot && !runs(Stage::Pilot) {
                        for m in self.scored_measures() {
                            need(exists(&pilot_file(m)), &format!("{} from an earlier pilot run", pilot_file(m)))?;
                        }
                    }
                }
                Stage::Align | Stage::Intersect => {
                    if stage == Stage::Align {
                        need(self.human.is_some(), "human ratings")?;
                    } else {
                        need(self.intersectional, "`intersectional` enabled")?;
                    }
                    if !runs(Stage::Score) {
                        for m in self.measures() {
                            need(exists(&scores_file(m)), &format!("{} from an earlier score run", scores_file(m)))?;
                        }
                    }
                }
                Stage::Report => {}
            }
        }
        Ok(stages)
    }
}

/// Files a successful run wrote, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub stages: Vec<Stage>,
    pub written: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotArtifact {
    pub measure: Measure,
    pub pilot_groups: Vec<String>,
    pub choice: PilotChoice,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderArtifact {
    pub measure: Measure,
    pub summary: OrderSummary,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub measure: Measure,
    pub top_k: usize,
    pub evaluation: EmergentEvaluation,
    pub provenance: Provenance,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))
}

struct Run<'a> {
    config: &'a RunConfig,
    staging: PathBuf,
    lexicon: Lexicon,
    pairs: Vec<PairedGroup>,
    bundle: Option<TensorBundle>,
    provenance: Provenance,
    written: Vec<String>,
}

impl Run<'_> {
    /// Latest copy of an artifact: this run's, else an earlier run's.
    fn locate(&self, name: &str) -> PathBuf {
        let staged = self.staging.join(name);
        if staged.is_file() {
            staged
        } else {
            self.config.output.join(name)
        }
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.staging.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn put_matrix(&mut self, name: &str, m: &ScoreMatrix) -> Result<(), PipelineError> {
        m.write(&self.staging.join(name), &self.provenance)?;
        self.written.push(name.to_string());
        self.written.push(sidecar(name));
        Ok(())
    }

    fn bundle(&self) -> &TensorBundle {
        self.bundle.as_ref().expect("validated: bundle present")
    }

    fn human(&self) -> Result<HumanRatings, PipelineError> {
        let path = self.config.human.as_ref().expect("validated: ratings present");
        Ok(HumanRatings::read(path)?)
    }

    /// Single groups followed by the non-excluded pairs.
    fn groups(&self) -> Vec<&dyn Surface> {
        let mut g: Vec<&dyn Surface> = self.lexicon.groups.iter().map(|g| g as &dyn Surface).collect();
        if self.config.intersectional {
            g.extend(self.pairs.iter().map(|p| p as &dyn Surface));
        }
        g
    }

    fn scoring_options(&self) -> ScoringOptions {
        ScoringOptions {
            set: SetOptions {
                margin: self.config.margin,
                infinity_cap: self.config.infinity_cap,
            },
            aux_adjectives: self.config.aux_adjectives,
            workers: self.config.workers,
        }
    }

    fn templates_for(&self, m: Measure) -> Result<Vec<String>, PipelineError> {
        if m == Measure::Ceat {
            return Ok(Vec::new());
        }
        match &self.config.templates {
            TemplateSelection::All => Ok(self.lexicon.templates.iter().map(|t| t.id.clone()).collect()),
            TemplateSelection::Ids(ids) => {
                for id in ids {
                    self.lexicon.template(id)?;
                }
                Ok(ids.clone())
            }
            TemplateSelection::Pilot => {
                let a: PilotArtifact = read_json(&self.locate(&pilot_file(m)))?;
                Ok(a.choice.templates)
            }
        }
    }

    fn stage(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::Manifest => self.manifest(),
            Stage::Pilot => self.pilot(),
            Stage::Score => self.score(),
            Stage::Align => self.align(),
            Stage::Intersect => self.intersect(),
            Stage::Report => self.report(),
        }
    }

    fn manifest(&mut self) -> Result<(), PipelineError> {
        let tokenization = match &self.config.tokenization {
            Some(p) => Some(read_tokenization(p)?),
            None => None,
        };
        let options = ManifestOptions {
            tokenization,
            aux_adjectives: self.config.aux_adjectives,
            ..ManifestOptions::default()
        };
        let mut manifest = build_manifest(
            &self.groups(),
            &self.lexicon.trait_pairs,
            &self.lexicon.templates,
            &self.config.measures(),
            &options,
        )?;
        manifest.provenance = Some(self.provenance.clone());
        self.put("manifest.json", &manifest.to_json())
    }

    fn pilot(&mut self) -> Result<(), PipelineError> {
        let human = self.human()?;
        let pilot_groups: Vec<String> = if self.config.pilot_groups.is_empty() {
            human.groups().filter(|g| self.lexicon.group(g).is_some()).map(str::to_string).collect()
        } else {
            self.config.pilot_groups.clone()
        };
        let unknown: Vec<&str> = pilot_groups
            .iter()
            .filter(|g| self.lexicon.group(g).is_none())
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(PipelineError::data(format!("unknown pilot groups: {}", unknown.join(", "))));
        }
        if pilot_groups.is_empty() {
            return Err(PipelineError::data("no rated single group to pilot on"));
        }
        let members: Vec<&SocialGroup> = pilot_groups.iter().filter_map(|g| self.lexicon.group(g)).collect();
        let groups: Vec<&dyn Surface> = members.iter().map(|g| *g as &dyn Surface).collect();
        let human = human.restricted_to(&pilot_groups);
        let candidates: Vec<String> = self.lexicon.templates.iter().map(|t| t.id.clone()).collect();
        let options = self.scoring_options();
        let mut artifacts = Vec::new();
        for m in self.config.scored_measures() {
            let mut per_template = std::collections::BTreeMap::new();
            for t in &candidates {
                let matrix = build_score_matrix(
                    self.bundle(),
                    &groups,
                    &self.lexicon.trait_pairs,
                    std::slice::from_ref(t),
                    m,
                    &options,
                )?;
                per_template.insert(t.clone(), matrix);
            }
            let choice = pilot_select_templates(&candidates, &per_template, &human, self.config.pooling)?;
            log::info!("pilot {m}: {:?} (τ = {:?})", choice.templates, choice.tau);
            artifacts.push(PilotArtifact {
                measure: m,
                pilot_groups: pilot_groups.clone(),
                choice,
                provenance: self.provenance.clone(),
            });
        }
        for a in &artifacts {
            self.put(&pilot_file(a.measure), &to_json(a))?;
        }
        Ok(())
    }

    fn score(&mut self) -> Result<(), PipelineError> {
        let options = self.scoring_options();
        let adjectives = self.lexicon.adjectives(self.config.aux_adjectives);
        for m in self.config.measures() {
            let templates = self.templates_for(m)?;
            let groups = self.groups();
            let matrix = build_score_matrix(self.bundle(), &groups, &self.lexicon.trait_pairs, &templates, m, &options)?;
            let adj = (m != Measure::Ceat && self.config.intersectional)
                .then(|| build_adjective_matrix(self.bundle(), &groups, &adjectives, &templates, m, &options))
                .transpose()?;
            self.put_matrix(&scores_file(m), &matrix)?;
            if let Some(adj) = adj {
                self.put_matrix(&adjectives_file(m), &adj)?;
            }
        }
        Ok(())
    }

    fn align(&mut self) -> Result<(), PipelineError> {
        let human = self.human()?;
        for m in self.config.measures() {
            let (scores, _) = ScoreMatrix::read(&self.locate(&scores_file(m)))?;
            let mut report = align(&scores, &human, self.config.pooling)?;
            report.provenance = Some(self.provenance.clone());
            self.put(&format!("align_{m}.json"), &report.to_json())?;
            let table = format!("{}\n{}", self.provenance.comment_line(), report.to_table());
            self.put(&format!("align_{m}.txt"), &table)?;
        }
        Ok(())
    }

    fn intersect(&mut self) -> Result<(), PipelineError> {
        let truth = match &self.config.truth {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::data(format!("{}: {e}", p.display())))?;
                Some(parse_truth(&text)?)
            }
            None => None,
        };
        let header = self.provenance.comment_line();
        for m in self.config.measures() {
            let (scores, _) = ScoreMatrix::read(&self.locate(&scores_file(m)))?;
            let order = OrderArtifact {
                measure: m,
                summary: order_analysis(&scores, &self.pairs),
                provenance: self.provenance.clone(),
            };
            self.put(&format!("order_{m}.json"), &to_json(&order))?;
            let records = dominance(&scores, &self.pairs, &self.lexicon.groups);
            self.put(&format!("dominance_{m}.csv"), &format!("{header}\n{}", dominance_csv(&records)))?;

            if m == Measure::Ceat {
                continue;
            }
            let (adj, _) = ScoreMatrix::read(&self.locate(&adjectives_file(m)))?;
            let lists = emergent(&adj, &self.pairs, Some(self.config.top_k))?;
            self.put(&format!("emergent_{m}.csv"), &format!("{header}\n{}", emergent_csv(&lists)))?;
            if let Some(truth) = &truth {
                let universe = Universe {
                    groups: self
                        .pairs
                        .iter()
                        .filter(|p| adj.row_index(&p.id).is_some())
                        .map(|p| p.id.clone())
                        .collect(),
                    adjectives: adj.cols.iter().cloned().collect(),
                };
                let evaluation = evaluate_emergent(&detected_cells(&lists.above_max), truth, &universe)?;
                let artifact = EvaluationArtifact {
                    measure: m,
                    top_k: self.config.top_k,
                    evaluation,
                    provenance: self.provenance.clone(),
                };
                self.put(&format!("emergent_eval_{m}.json"), &to_json(&artifact))?;
            }
        }
        Ok(())
    }

    fn report(&mut self) -> Result<(), PipelineError> {
        let dirs = [self.staging.clone(), self.config.output.clone()];
        let text = render_report(&dirs, &self.config.measures(), &self.provenance)?;
        self.put("report.md", &text)
    }
}

fn find(dirs: &[PathBuf], name: &str) -> Option<PathBuf> {
    dirs.iter().map(|d| d.join(name)).find(|p| p.is_file())
}

fn fmt3(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.3}"))
}

/// Markdown summary of whatever artifacts exist for `measures`, looked up in
/// `dirs` in order.
pub fn render_report(dirs: &[PathBuf], measures: &[Measure], provenance: &Provenance) -> Result<String, PipelineError> {
    let mut out = String::from("# Stereotype measurement report\n\n");
    let _ = writeln!(out, "`{}`\n", provenance.comment_line());
    for &m in measures {
        let _ = writeln!(out, "## {m}\n");
        if let Some(p) = find(dirs, &pilot_file(m)) {
            let a: PilotArtifact = read_json(&p)?;
            let _ = writeln!(
                out,
                "Pilot on {}: templates {} (τ = {}).\n",
                a.pilot_groups.join(", "),
                a.choice.templates.join(" + "),
                fmt3(a.choice.tau)
            );
        }
        if let Some(p) = find(dirs, &format!("align_{m}.json")) {
            let r: AlignmentReport = read_json(&p)?;
            let _ = writeln!(out, "### Alignment with human ratings\n\n```\n{}```\n", r.to_table());
        }
        if let Some(p) = find(dirs, &format!("order_{m}.json")) {
            let a: OrderArtifact = read_json(&p)?;
            let s = &a.summary;
            let _ = writeln!(out, "### Order sensitivity\n");
            let _ = writeln!(out, "- pair vs first component: mean τ {}", fmt3(s.mean_first));
            let _ = writeln!(out, "- pair vs second component: mean τ {}", fmt3(s.mean_second));
            let _ = writeln!(out, "- pair vs reversed pair: mean τ {}", fmt3(s.mean_reversed));
            let _ = writeln!(out, "- pairs used: {}, skipped: {}\n", s.pairs_used, s.skipped);
        }
        if let Some(p) = find(dirs, &format!("dominance_{m}.csv")) {
            let _ = writeln!(out, "### Domain dominance\n");
            let _ = writeln!(out, "| domain a | domain b | corr a | corr b | diff | verdict |");
            let _ = writeln!(out, "|---|---|---|---|---|---|");
            for row in csv_rows(&p)? {
                let num = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok());
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    row.first().map_or("", String::as_str),
                    row.get(1).map_or("", String::as_str),
                    fmt3(num(2)),
                    fmt3(num(3)),
                    fmt3(num(4)),
                    row.get(5).map_or("", String::as_str)
                );
            }
            out.push('\n');
        }
        if let Some(p) = find(dirs, &format!("emergent_{m}.csv")) {
            let rows: Vec<Vec<String>> = csv_rows(&p)?
                .into_iter()
                .filter(|r| r.get(2).map(String::as_str) == Some("above-max"))
                .take(10)
                .collect();
            let _ = writeln!(out, "### Emergent traits (top {} above the component maximum)\n", rows.len());
            let _ = writeln!(out, "| group | adjective | increase |");
            let _ = writeln!(out, "|---|---|---|");
            for r in rows {
                let inc = r.get(3).and_then(|s| s.parse::<f64>().ok());
                let _ = writeln!(out, "| {} | {} | {} |", r[0], r[1], fmt3(inc));
            }
            out.push('\n');
        }
        if let Some(p) = find(dirs, &format!("emergent_eval_{m}.json")) {
            let a: EvaluationArtifact = read_json(&p)?;
            let e = &a.evaluation;
            let _ = writeln!(
                out,
                "Emergent-trait detection (top {}): precision {} vs baseline {}, recall {} vs baseline {} ({} hits, {} detected, {} true).\n",
                a.top_k,
                fmt3(Some(e.precision)),
                fmt3(Some(e.baseline_precision)),
                fmt3(Some(e.recall)),
                fmt3(Some(e.baseline_recall)),
                e.hits,
                e.detected,
                e.truth
            );
        }
    }
    Ok(out)
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, PipelineError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
    r.records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn hash_input(path: &Path) -> Result<String, PipelineError> {
    sha256_file(path).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))
}

/// Validates `config`, runs its stages and moves the artifacts into the
/// output directory. On error nothing from this run remains.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let stages = config.validate()?;

    let lexicon = match &config.lexicon {
        Some(dir) => Lexicon::load(dir)?,
        None => Lexicon::builtin(),
    };
    let pairs: Vec<PairedGroup> = lexicon.paired_groups().into_iter().filter(|p| !p.is_excluded()).collect();
    let bundle = match &config.bundle {
        Some(dir) if stages.iter().any(|s| matches!(s, Stage::Pilot | Stage::Score)) => Some(read_bundle(dir)?),
        _ => None,
    };
    let mut provenance = Provenance {
        config_sha256: Some(config.config_hash()),
        ..Provenance::new()
    };
    provenance.bundle_sha256 = match (&bundle, &config.bundle) {
        (Some(b), _) => Some(b.content_hash()),
        (None, Some(dir)) => Some(read_bundle(dir)?.content_hash()),
        (None, None) => None,
    };
    for (role, path) in [
        ("human", &config.human),
        ("truth", &config.truth),
        ("tokenization", &config.tokenization),
    ] {
        if let Some(p) = path {
            provenance.inputs.insert(role.to_string(), hash_input(p)?);
        }
    }

    let created = !config.output.exists();
    fs::create_dir_all(&config.output).map_err(|e| io_err(&config.output, e))?;
    let staging = config.output.join(STAGING_DIR);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| io_err(&staging, e))?;

    let mut run = Run {
        config,
        staging: staging.clone(),
        lexicon,
        pairs,
        bundle,
        provenance,
        written: Vec::new(),
    };
    let result = stages.iter().try_for_each(|&s| {
        log::info!("stage {s}");
        run.stage(s).map_err(|e| e.at(s))
    });
    let result = result.and_then(|()| {
        for name in &run.written {
            let (from, to) = (staging.join(name), config.output.join(name));
            fs::rename(&from, &to).map_err(|e| io_err(&to, e))?;
        }
        Ok(())
    });
    let _ = fs::remove_dir_all(&staging);
    match result {
        Ok(()) => Ok(RunOutcome {
            stages,
            written: run.written,
        }),
        Err(e) => {
            if created {
                let _ = fs::remove_dir_all(&config.output);
            }
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    #[test]
    fn config_defaults_and_parsing() {
        let c = RunConfig::from_json(r#"{"measures": ["set", "ilps"], "templates": "pilot", "output": "o"}"#).unwrap();
        assert_eq!(c.margin, 1.0);
        assert_eq!(c.workers, 1);
        assert_eq!(c.templates, TemplateSelection::Pilot);
        assert_eq!(c.measures(), [Measure::Ilps, Measure::Set]);
        let c = RunConfig::from_json(r#"{"templates": ["t1", "t2"]}"#).unwrap();
        assert_eq!(c.templates, TemplateSelection::Ids(vec!["t1".into(), "t2".into()]));
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"tau_variant": "a"}"#).is_err());
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let mut a = RunConfig::from_json(r#"{"measures": ["set"], "output": "x"}"#).unwrap();
        let h = a.config_hash();
        a.workers = 8;
        a.output = "elsewhere".into();
        assert_eq!(a.config_hash(), h);
        a.margin = 2.0;
        assert_ne!(a.config_hash(), h);
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let base = RunConfig {
            measures: vec![Measure::Set],
            output: dir.path().join("out"),
            ..RunConfig::default()
        };
        let v = |c: &RunConfig| c.validate().unwrap_err().kind;
        assert_eq!(v(&RunConfig { margin: 0.0, ..base.clone() }), ErrorKind::Validation);
        assert_eq!(v(&RunConfig { workers: 0, ..base.clone() }), ErrorKind::Validation);
        assert_eq!(
            v(&RunConfig {
                bundle: Some(dir.path().join("nope")),
                ..base.clone()
            }),
            ErrorKind::Validation
        );
        assert_eq!(
            v(&RunConfig {
                stages: vec![Stage::Align],
                ..base.clone()
            }),
            ErrorKind::Validation
        );
        assert_eq!(base.validate().unwrap(), [Stage::Manifest]);
        assert!(!base.output.exists());
    }

    #[test]
    fn full_run_on_synthetic_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let f = generate(SyntheticSpec::default());
        f.write(dir.path()).unwrap();
        let config = RunConfig {
            lexicon: Some(dir.path().join("lexicon")),
            bundle: Some(dir.path().join("bundle")),
            human: Some(dir.path().join("human.csv")),
            truth: Some(dir.path().join("truth.csv")),
            // ILPS rejects the two-subword adjectives of this fixture.
            measures: vec![Measure::IlpsStar, Measure::Ceat, Measure::Set],
            templates: TemplateSelection::Pilot,
            output: dir.path().join("out"),
            ..RunConfig::default()
        };
        let outcome = run_pipeline(&config).unwrap();
        assert_eq!(
            outcome.stages,
            [Stage::Pilot, Stage::Score, Stage::Align, Stage::Intersect, Stage::Report]
        );
        for name in ["scores_set.csv", "scores_set.json", "align_ceat.json", "emergent_eval_ilps_star.json", "report.md"] {
            assert!(config.output.join(name).is_file(), "{name}");
        }
        assert!(!config.output.join(STAGING_DIR).exists());
        let report = fs::read_to_string(config.output.join("report.md")).unwrap();
        assert!(report.contains("## set"), "{report}");
    }

    #[test]
    fn failure_leaves_no_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = generate(SyntheticSpec::default());
        f.bundle.prompts.retain(|id, _| !id.starts_with("are/woman"));
        f.write(dir.path()).unwrap();
        let config = RunConfig {
            lexicon: Some(dir.path().join("lexicon")),
            bundle: Some(dir.path().join("bundle")),
            measures: vec![Measure::Set],
            stages: vec![Stage::Score, Stage::Report],
            output: dir.path().join("out"),
            ..RunConfig::default()
        };
        let e = run_pipeline(&config).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Data);
        assert_eq!(e.stage, Some(Stage::Score));
        assert!(e.message.contains("are/woman"), "{e}");
        assert!(!config.output.exists());
    }
}
