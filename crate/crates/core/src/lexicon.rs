//! Social groups, paired identities, polar trait pairs and cloze templates.
//!
//! Everything here is data-driven: surface forms come from CSV files, and
//! prompts are rendered by plain placeholder substitution. The mask slot is an
//! abstract marker ([`MASK_SLOT`]); the extractor maps it onto the model's own
//! mask token.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Abstract mask-slot marker used in rendered prompt text.
pub const MASK_SLOT: &str = "⟨MASK⟩";

const GROUP_PLACEHOLDER: &str = "[group]";
const GROUP_PLACEHOLDER_INITIAL: &str = "[Group]";
const TRAIT_PLACEHOLDER: &str = "[trait]";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} row {row}: {message}")]
    Invalid {
        file: String,
        row: usize,
        message: String,
    },
    #[error("template `{template}` is malformed: {message}")]
    BadTemplate { template: String, message: String },
    #[error("template `{template}` needs a {number} surface form for `{group}`, which is empty")]
    MissingSurface {
        template: String,
        group: String,
        number: Number,
    },
    #[error("unknown group id `{0}`")]
    UnknownGroup(String),
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
}

/// The eight social domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    GenderSexuality,
    RaceEthnicity,
    Religion,
    SocioEconomic,
    Age,
    Disability,
    Politics,
    Nationality,
}

impl Domain {
    pub const ALL: [Domain; 8] = [
        Domain::GenderSexuality,
        Domain::RaceEthnicity,
        Domain::Religion,
        Domain::SocioEconomic,
        Domain::Age,
        Domain::Disability,
        Domain::Politics,
        Domain::Nationality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::GenderSexuality => "gender_sexuality",
            Domain::RaceEthnicity => "race_ethnicity",
            Domain::Religion => "religion",
            Domain::SocioEconomic => "socio_economic",
            Domain::Age => "age",
            Domain::Disability => "disability",
            Domain::Politics => "politics",
            Domain::Nationality => "nationality",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    /// Accepts the canonical snake-case names plus the short labels used in
    /// published tables ("gender", "race", "socio", "political stance", ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '/' || c == '-' || c == ' ' { '_' } else { c })
            .collect();
        let d = match norm.as_str() {
            "gender_sexuality" | "gender" | "sexuality" => Domain::GenderSexuality,
            "race_ethnicity" | "race" | "ethnicity" => Domain::RaceEthnicity,
            "religion" => Domain::Religion,
            "socio_economic" | "socio" | "social_economic" | "socioeconomic" => {
                Domain::SocioEconomic
            }
            "age" => Domain::Age,
            "disability" | "disability_status" => Domain::Disability,
            "politics" | "political_stance" | "political" => Domain::Politics,
            "nationality" => Domain::Nationality,
            _ => return Err(format!("unknown domain `{s}`")),
        };
        Ok(d)
    }
}

/// Grammatical number a template asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Number {
    Singular,
    Plural,
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Number::Singular => "singular",
            Number::Plural => "plural",
        })
    }
}

impl FromStr for Number {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "singular" => Ok(Number::Singular),
            "plural" => Ok(Number::Plural),
            other => Err(format!("unknown number `{other}`")),
        }
    }
}

/// Template family from the variation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Declarative,
    Interrogative,
    Adverbial,
    Belief,
    SocialExpectation,
    TraitFirst,
    Comparative,
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f = match s.trim() {
            "declarative" => Family::Declarative,
            "interrogative" => Family::Interrogative,
            "adverbial" => Family::Adverbial,
            "belief" => Family::Belief,
            "social-expectation" => Family::SocialExpectation,
            "trait-first" => Family::TraitFirst,
            "comparative" => Family::Comparative,
            other => return Err(format!("unknown template family `{other}`")),
        };
        Ok(f)
    }
}

/// ABC dimension of a trait pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Agency,
    Beliefs,
    Communion,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Agency => "agency",
            Dimension::Beliefs => "beliefs",
            Dimension::Communion => "communion",
        }
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agency" => Ok(Dimension::Agency),
            "beliefs" | "belief" => Ok(Dimension::Beliefs),
            "communion" => Ok(Dimension::Communion),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

/// How a group reads when it modifies another identity in a paired group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modifier {
    /// A dedicated adjectival form ("teenage", "female").
    Adjectival(String),
    /// No adjectival form: the singular noun is juxtaposed ("Democrat teenager").
    Noun,
    /// The group cannot modify another identity at all.
    Unavailable,
}

/// Anything with an id and singular/plural surface forms.
pub trait Surface: Sync {
    fn id(&self) -> &str;
    fn singular(&self) -> &str;
    fn plural(&self) -> &str;

    fn surface(&self, number: Number) -> &str {
        match number {
            Number::Singular => self.singular(),
            Number::Plural => self.plural(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialGroup {
    pub id: String,
    pub domain: Domain,
    pub singular: String,
    pub plural: String,
    pub modifier: Modifier,
}

impl SocialGroup {
    pub fn new(
        id: impl Into<String>,
        domain: Domain,
        singular: impl Into<String>,
        plural: impl Into<String>,
        adjectival: Option<&str>,
    ) -> Self {
        let modifier = match adjectival {
            Some(a) if !a.is_empty() => Modifier::Adjectival(a.to_string()),
            _ => Modifier::Noun,
        };
        SocialGroup {
            id: id.into(),
            domain,
            singular: singular.into(),
            plural: plural.into(),
            modifier,
        }
    }

    /// Text used when this group modifies a second identity.
    pub fn modifier_text(&self) -> Option<&str> {
        match &self.modifier {
            Modifier::Adjectival(a) => Some(a),
            Modifier::Noun => Some(&self.singular),
            Modifier::Unavailable => None,
        }
    }
}

impl Surface for SocialGroup {
    fn id(&self) -> &str {
        &self.id
    }
    fn singular(&self) -> &str {
        &self.singular
    }
    fn plural(&self) -> &str {
        &self.plural
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedGroup {
    pub id: String,
    pub first: String,
    pub second: String,
    pub singular: String,
    pub plural: String,
    /// Reason the pair is left out of analyses, when it is.
    pub exclusion: Option<String>,
}

impl PairedGroup {
    pub fn is_excluded(&self) -> bool {
        self.exclusion.is_some()
    }

    pub fn pair_id(first: &str, second: &str) -> String {
        format!("{first}+{second}")
    }
}

impl Surface for PairedGroup {
    fn id(&self) -> &str {
        &self.id
    }
    fn singular(&self) -> &str {
        &self.singular
    }
    fn plural(&self) -> &str {
        &self.plural
    }
}

/// A manually curated reason to drop one ordered pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub first: String,
    pub second: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pole {
    Left,
    Right,
}

/// A polar adjective pair; `left` is the low pole.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitPair {
    pub dimension: Dimension,
    pub left: String,
    pub right: String,
    pub aux_left: Vec<String>,
    pub aux_right: Vec<String>,
}

impl TraitPair {
    pub fn new(dimension: Dimension, left: &str, right: &str) -> Self {
        TraitPair {
            dimension,
            left: left.to_string(),
            right: right.to_string(),
            aux_left: Vec::new(),
            aux_right: Vec::new(),
        }
    }

    /// `left-right`, e.g. `powerless-powerful`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.left, self.right)
    }

    /// Adjectives scored for one pole. With `aux`, the auxiliary list follows
    /// the main adjective.
    pub fn pole(&self, pole: Pole, aux: bool) -> Vec<&str> {
        let (main, extra) = match pole {
            Pole::Left => (&self.left, &self.aux_left),
            Pole::Right => (&self.right, &self.aux_right),
        };
        let mut out = vec![main.as_str()];
        if aux {
            out.extend(extra.iter().map(String::as_str));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub pattern: String,
    pub number: Number,
    pub family: Family,
}

impl Template {
    pub fn new(
        id: impl Into<String>,
        pattern: impl Into<String>,
        number: Number,
        family: Family,
    ) -> Result<Self, LexiconError> {
        let t = Template {
            id: id.into(),
            pattern: pattern.into(),
            number,
            family,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), LexiconError> {
        let groups = self.pattern.matches(GROUP_PLACEHOLDER).count()
            + self.pattern.matches(GROUP_PLACEHOLDER_INITIAL).count();
        let traits = self.pattern.matches(TRAIT_PLACEHOLDER).count();
        if groups != 1 || traits != 1 {
            return Err(LexiconError::BadTemplate {
                template: self.id.clone(),
                message: format!(
                    "expected one group and one trait placeholder, found {groups} and {traits}"
                ),
            });
        }
        if self.pattern.contains(MASK_SLOT) {
            return Err(LexiconError::BadTemplate {
                template: self.id.clone(),
                message: "pattern must not contain the mask marker".into(),
            });
        }
        Ok(())
    }

    fn group_placeholder(&self) -> &'static str {
        if self.pattern.contains(GROUP_PLACEHOLDER_INITIAL) {
            GROUP_PLACEHOLDER_INITIAL
        } else {
            GROUP_PLACEHOLDER
        }
    }
}

/// Who fills the group slot of a template.
#[derive(Clone, Copy)]
pub enum Target<'a> {
    Group(&'a dyn Surface),
    /// The group slot is itself masked (the prior / denominator prompt).
    Prior,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRef {
    Group(String),
    Prior,
}

impl GroupRef {
    pub fn as_str(&self) -> &str {
        match self {
            GroupRef::Group(id) => id,
            GroupRef::Prior => "PRIOR",
        }
    }
}

impl fmt::Display for GroupRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub group_ref: GroupRef,
    pub template_id: String,
    /// Which occurrence of [`MASK_SLOT`] (0-based) is the trait slot.
    pub trait_marker_index: usize,
}

impl Prompt {
    pub fn mask_count(&self) -> usize {
        self.text.matches(MASK_SLOT).count()
    }
}

fn capitalize_first_alpha(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut done = false;
    for c in text.chars() {
        if !done && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            done = true;
        } else {
            out.push(c);
        }
    }
    out
}

/// Renders `template` for `target`, replacing the trait slot with the mask
/// marker. The prior target masks the group slot too.
pub fn render_prompt(template: &Template, target: Target<'_>) -> Result<Prompt, LexiconError> {
    template.validate()?;
    let placeholder = template.group_placeholder();
    let group_pos = template.pattern.find(placeholder).unwrap_or(0);
    let trait_pos = template.pattern.find(TRAIT_PLACEHOLDER).unwrap_or(0);

    let (group_text, group_ref) = match target {
        Target::Group(g) => {
            let s = g.surface(template.number);
            if s.trim().is_empty() {
                return Err(LexiconError::MissingSurface {
                    template: template.id.clone(),
                    group: g.id().to_string(),
                    number: template.number,
                });
            }
            (s.to_string(), GroupRef::Group(g.id().to_string()))
        }
        Target::Prior => (MASK_SLOT.to_string(), GroupRef::Prior),
    };

    let text = template
        .pattern
        .replacen(placeholder, &group_text, 1)
        .replacen(TRAIT_PLACEHOLDER, MASK_SLOT, 1);
    let trait_marker_index = match group_ref {
        GroupRef::Prior if group_pos < trait_pos => 1,
        _ => 0,
    };
    Ok(Prompt {
        text: capitalize_first_alpha(&text),
        group_ref,
        template_id: template.id.clone(),
        trait_marker_index,
    })
}

/// Composes every cross-domain ordered pair whose first identity can act as a
/// modifier. Pairs named in `exclusions` are kept but flagged.
pub fn generate_paired_groups(groups: &[SocialGroup], exclusions: &[Exclusion]) -> Vec<PairedGroup> {
    let excluded: BTreeMap<(&str, &str), &str> = exclusions
        .iter()
        .map(|e| ((e.first.as_str(), e.second.as_str()), e.reason.as_str()))
        .collect();
    let mut out = Vec::new();
    for a in groups {
        let Some(modifier) = a.modifier_text() else {
            continue;
        };
        for b in groups {
            if a.id == b.id || a.domain == b.domain {
                continue;
            }
            out.push(PairedGroup {
                id: PairedGroup::pair_id(&a.id, &b.id),
                first: a.id.clone(),
                second: b.id.clone(),
                singular: format!("{modifier} {}", b.singular),
                plural: format!("{modifier} {}", b.plural),
                exclusion: excluded
                    .get(&(a.id.as_str(), b.id.as_str()))
                    .map(|r| r.to_string()),
            });
        }
    }
    out
}

/// A loaded lexicon: groups, trait pairs, templates and pair exclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub groups: Vec<SocialGroup>,
    pub trait_pairs: Vec<TraitPair>,
    pub templates: Vec<Template>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Deserialize)]
struct GroupRow {
    id: String,
    domain: String,
    singular: String,
    plural: String,
    #[serde(default)]
    adjectival: Option<String>,
}

#[derive(Deserialize)]
struct TraitRow {
    dimension: String,
    left: String,
    right: String,
    #[serde(default)]
    aux_left: Option<String>,
    #[serde(default)]
    aux_right: Option<String>,
}

#[derive(Deserialize)]
struct TemplateRow {
    id: String,
    pattern: String,
    number: String,
    family: String,
}

fn read_rows<T, R>(file: &str, reader: R) -> Result<Vec<T>, LexiconError>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| LexiconError::Csv {
            file: file.to_string(),
            source,
        })
}

fn split_pipe(s: Option<String>) -> Vec<String> {
    s.map(|s| {
        s.split('|')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(str::to_string)
            .collect()
    })
    .unwrap_or_default()
}

fn invalid(file: &str, row: usize, message: impl Into<String>) -> LexiconError {
    LexiconError::Invalid {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

pub fn parse_groups<R: Read>(reader: R) -> Result<Vec<SocialGroup>, LexiconError> {
    const FILE: &str = "groups.csv";
    let rows: Vec<GroupRow> = read_rows(FILE, reader)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let row = i + 1;
        let domain = Domain::from_str(&r.domain).map_err(|m| invalid(FILE, row, m))?;
        if r.singular.is_empty() || r.plural.is_empty() {
            return Err(invalid(FILE, row, "surface forms must be non-empty"));
        }
        if !seen.insert(r.id.clone()) {
            return Err(invalid(FILE, row, format!("duplicate group id `{}`", r.id)));
        }
        let modifier = match r.adjectival.as_deref() {
            Some("-") => Modifier::Unavailable,
            Some(a) if !a.is_empty() => Modifier::Adjectival(a.to_string()),
            _ => Modifier::Noun,
        };
        out.push(SocialGroup {
            id: r.id,
            domain,
            singular: r.singular,
            plural: r.plural,
            modifier,
        });
    }
    Ok(out)
}

pub fn parse_traits<R: Read>(reader: R) -> Result<Vec<TraitPair>, LexiconError> {
    const FILE: &str = "traits.csv";
    let rows: Vec<TraitRow> = read_rows(FILE, reader)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let row = i + 1;
        let dimension = Dimension::from_str(&r.dimension).map_err(|m| invalid(FILE, row, m))?;
        if r.left.is_empty() || r.right.is_empty() || r.left == r.right {
            return Err(invalid(FILE, row, "poles must be distinct non-empty adjectives"));
        }
        let pair = TraitPair {
            dimension,
            left: r.left,
            right: r.right,
            aux_left: split_pipe(r.aux_left),
            aux_right: split_pipe(r.aux_right),
        };
        if !seen.insert(pair.id()) {
            return Err(invalid(FILE, row, format!("duplicate trait pair `{}`", pair.id())));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn parse_templates<R: Read>(reader: R) -> Result<Vec<Template>, LexiconError> {
    const FILE: &str = "templates.csv";
    let rows: Vec<TemplateRow> = read_rows(FILE, reader)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let row = i + 1;
        let number = Number::from_str(&r.number).map_err(|m| invalid(FILE, row, m))?;
        let family = Family::from_str(&r.family).map_err(|m| invalid(FILE, row, m))?;
        if !seen.insert(r.id.clone()) {
            return Err(invalid(FILE, row, format!("duplicate template id `{}`", r.id)));
        }
        out.push(Template::new(r.id, r.pattern, number, family)?);
    }
    Ok(out)
}

pub fn parse_exclusions<R: Read>(reader: R) -> Result<Vec<Exclusion>, LexiconError> {
    const FILE: &str = "exclusions.csv";
    let rows: Vec<Exclusion> = read_rows(FILE, reader)?;
    for (i, e) in rows.iter().enumerate() {
        if e.reason.trim().is_empty() {
            return Err(invalid(FILE, i + 1, "exclusion needs a reason"));
        }
    }
    Ok(rows)
}

const BUILTIN_GROUPS: &str = include_str!("../data/lexicon/groups.csv");
const BUILTIN_TRAITS: &str = include_str!("../data/lexicon/traits.csv");
const BUILTIN_TEMPLATES: &str = include_str!("../data/lexicon/templates.csv");
const BUILTIN_EXCLUSIONS: &str = include_str!("../data/lexicon/exclusions.csv");

impl Lexicon {
    /// The shipped lexicon: the full group list, the 16 ABC trait pairs and
    /// every template variation.
    pub fn builtin() -> Self {
        Lexicon {
            groups: parse_groups(BUILTIN_GROUPS.as_bytes()).expect("builtin groups.csv"),
            trait_pairs: parse_traits(BUILTIN_TRAITS.as_bytes()).expect("builtin traits.csv"),
            templates: parse_templates(BUILTIN_TEMPLATES.as_bytes())
                .expect("builtin templates.csv"),
            exclusions: parse_exclusions(BUILTIN_EXCLUSIONS.as_bytes())
                .expect("builtin exclusions.csv"),
        }
    }

    /// Loads `groups.csv`, `traits.csv`, `templates.csv` and (optionally)
    /// `exclusions.csv` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, LexiconError> {
        let open = |name: &str| {
            std::fs::File::open(dir.join(name)).map_err(|source| LexiconError::Io {
                file: dir.join(name).display().to_string(),
                source,
            })
        };
        let groups = parse_groups(open("groups.csv")?)?;
        let trait_pairs = parse_traits(open("traits.csv")?)?;
        let templates = parse_templates(open("templates.csv")?)?;
        let exclusions = if dir.join("exclusions.csv").exists() {
            parse_exclusions(open("exclusions.csv")?)?
        } else {
            Vec::new()
        };
        Ok(Lexicon {
            groups,
            trait_pairs,
            templates,
            exclusions,
        })
    }

    pub fn group(&self, id: &str) -> Option<&SocialGroup> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn template(&self, id: &str) -> Result<&Template, LexiconError> {
        self.templates
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| LexiconError::UnknownTemplate(id.to_string()))
    }

    pub fn paired_groups(&self) -> Vec<PairedGroup> {
        generate_paired_groups(&self.groups, &self.exclusions)
    }

    /// Every adjective the trait pairs reference, main poles first.
    pub fn adjectives(&self, aux: bool) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mains = self
            .trait_pairs
            .iter()
            .flat_map(|p| [p.left.as_str(), p.right.as_str()]);
        let auxes = self
            .trait_pairs
            .iter()
            .flat_map(|p| p.aux_left.iter().chain(&p.aux_right).map(String::as_str))
            .filter(|_| aux);
        for a in mains.chain(auxes) {
            if seen.insert(a) {
                out.push(a.to_string());
            }
        }
        out
    }

    /// True for the canonical ABC set: 16 pairs, 32 distinct adjectives.
    pub fn is_canonical_abc(&self) -> bool {
        self.trait_pairs.len() == 16 && self.adjectives(false).len() == 32
    }
}
