//! `stereo-meter` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stereo_meter::alignment::{align, HumanRatings, Pooling};
use stereo_meter::intersect::{
    detected_cells, dominance, dominance_csv, emergent, emergent_csv, evaluate_emergent, order_analysis, parse_truth,
    Universe,
};
use stereo_meter::lexicon::{Lexicon, PairedGroup};
use stereo_meter::pipeline::{
    run_pipeline, PipelineError, RunConfig, Stage, TauVariant, TemplateSelection, WORKERS_ENV,
};
use stereo_meter::provenance::{sha256_file, Provenance};
use stereo_meter::scoring::{sidecar_path, Measure, ScoreMatrix};
use stereo_meter::synthetic::{generate, SyntheticSpec, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "stereo-meter", version, about = "Group-trait stereotype measurement for masked language models")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the prompts and tensors an extractor must produce.
    Manifest {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a groups × trait-pairs score matrix (CSV plus JSON sidecar).
    Score {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        out: PathBuf,
        /// Also write the groups × adjectives matrix here.
        #[arg(long)]
        adjective_out: Option<PathBuf>,
    },
    /// Pick the template set that best matches the pilot ratings.
    Pilot {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a score matrix with human ratings.
    Align {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Order sensitivity, domain dominance and emergent traits.
    Intersect {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        adjective_scores: Option<PathBuf>,
        /// Directory for order.json, dominance.csv, emergent.csv and
        /// emergent_eval.json.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Render report.md from the artifacts in the output directory.
    Report {
        #[command(flatten)]
        flags: Flags,
    },
    /// Run the configured stages end to end.
    Run {
        #[command(flatten)]
        flags: Flags,
    },
    /// Write the seeded synthetic fixture (lexicon, bundle, ratings, run.json).
    SynthFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Map every adjective to a single subword.
        #[arg(long)]
        single_subword: bool,
    },
}

/// Overrides for [`RunConfig`] fields.
#[derive(Args, Default, Clone)]
struct Flags {
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    human: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    tokenization: Option<PathBuf>,
    #[arg(long, alias = "measure", value_delimiter = ',')]
    measures: Option<Vec<Measure>>,
    /// Comma-separated template ids, `all`, or `pilot`.
    #[arg(long)]
    templates: Option<TemplateSelection>,
    #[arg(long, value_delimiter = ',')]
    pilot_groups: Option<Vec<String>>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    infinity_cap: Option<f64>,
    #[arg(long)]
    tau_variant: Option<TauVariant>,
    #[arg(long)]
    pooling: Option<Pooling>,
    #[arg(long)]
    aux_adjectives: bool,
    /// Score single groups only.
    #[arg(long)]
    no_intersectional: bool,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<Stage>>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn workers_from_env() -> Result<Option<usize>, PipelineError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| PipelineError::validation(format!("{WORKERS_ENV}={v:?} is not a worker count"))),
        Err(_) => Ok(None),
    }
}

/// Config file, then flags; the worker count falls back to the environment
/// when neither sets it.
fn effective_config(path: Option<&Path>, flags: &Flags) -> Result<RunConfig, PipelineError> {
    let (mut c, file_sets_workers) = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| PipelineError::validation(format!("config {}: {e}", p.display())))?;
            let raw: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| PipelineError::validation(format!("config: {e}")))?;
            (RunConfig::read(p)?, raw.get("workers").is_some())
        }
        None => (RunConfig::default(), false),
    };
    let f = flags.clone();
    c.lexicon = f.lexicon.or(c.lexicon);
    c.bundle = f.bundle.or(c.bundle);
    c.human = f.human.or(c.human);
    c.truth = f.truth.or(c.truth);
    c.tokenization = f.tokenization.or(c.tokenization);
    if let Some(m) = f.measures {
        c.measures = m;
    }
    if let Some(t) = f.templates {
        c.templates = t;
    }
    if let Some(g) = f.pilot_groups {
        c.pilot_groups = g;
    }
    c.margin = f.margin.unwrap_or(c.margin);
    c.infinity_cap = f.infinity_cap.unwrap_or(c.infinity_cap);
    c.tau_variant = f.tau_variant.unwrap_or(c.tau_variant);
    c.pooling = f.pooling.unwrap_or(c.pooling);
    c.aux_adjectives |= f.aux_adjectives;
    c.intersectional &= !f.no_intersectional;
    c.top_k = f.top_k.unwrap_or(c.top_k);
    if let Some(s) = f.stages {
        c.stages = s;
    }
    if let Some(o) = f.output {
        c.output = o;
    }
    c.workers = match (f.workers, file_sets_workers) {
        (Some(w), _) => w,
        (None, true) => c.workers,
        (None, false) => workers_from_env()?.unwrap_or(c.workers),
    };
    Ok(c)
}

fn internal(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::internal(format!("{}: {e}", path.display()))
}

/// Files written next to their destinations under temporary names and
/// renamed together at the end; dropped unfinished, they are removed.
#[derive(Default)]
struct Outputs {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl Outputs {
    fn temp_name(dest: &Path) -> PathBuf {
        let mut name = dest.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".tmp-{}", std::process::id()));
        dest.with_file_name(name)
    }

    fn write(&mut self, dest: &Path, contents: &str) -> Result<(), PipelineError> {
        if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| internal(parent, e))?;
        }
        let tmp = Self::temp_name(dest);
        fs::write(&tmp, contents).map_err(|e| internal(&tmp, e))?;
        self.pending.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    /// Claims an existing file (e.g. from a scratch run) for `dest`.
    fn adopt(&mut self, src: &Path, dest: &Path) -> Result<(), PipelineError> {
        let text = fs::read_to_string(src).map_err(|e| internal(src, e))?;
        self.write(dest, &text)
    }

    fn commit(mut self) -> Result<(), PipelineError> {
        for (tmp, dest) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &dest).map_err(|e| internal(&dest, e))?;
        }
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}

/// Runs `stages` into a scratch directory next to `anchor` and hands the
/// scratch path to `collect`. The scratch directory is always removed.
fn scratch_run<T>(
    mut config: RunConfig,
    stages: &[Stage],
    anchor: &Path,
    collect: impl FnOnce(&Path) -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    let parent = anchor.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let scratch = parent.join(format!(".stereo-meter-scratch-{}", std::process::id()));
    config.output = scratch.clone();
    config.stages = stages.to_vec();
    let result = run_pipeline(&config).and_then(|_| collect(&scratch));
    let _ = fs::remove_dir_all(&scratch);
    result
}

fn single_measure(c: &RunConfig) -> Result<Measure, PipelineError> {
    match c.measures.as_slice() {
        [m] => Ok(*m),
        _ => Err(PipelineError::validation("give exactly one --measure")),
    }
}

fn require_file(p: &Path, what: &str) -> Result<(), PipelineError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(PipelineError::validation(format!("{what} {} does not exist", p.display())))
    }
}

fn hash(p: &Path) -> Result<String, PipelineError> {
    sha256_file(p).map_err(|e| PipelineError::data(format!("{}: {e}", p.display())))
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Manifest { flags, out } => {
            let c = effective_config(config_path, &flags)?;
            scratch_run(c, &[Stage::Manifest], &out, |dir| {
                let mut o = Outputs::default();
                o.adopt(&dir.join("manifest.json"), &out)?;
                o.commit()
            })
        }
        Command::Score {
            flags,
            out,
            adjective_out,
        } => {
            let mut c = effective_config(config_path, &flags)?;
            let m = single_measure(&c)?;
            c.intersectional |= adjective_out.is_some();
            if adjective_out.is_some() && m == Measure::Ceat {
                return Err(PipelineError::validation("CEAT has no adjective-level scores"));
            }
            if c.templates == TemplateSelection::Pilot {
                return Err(PipelineError::validation(
                    "`score` needs explicit templates; use `run` for pilot selection",
                ));
            }
            scratch_run(c, &[Stage::Score], &out, |dir| {
                let mut o = Outputs::default();
                o.adopt(&dir.join(format!("scores_{m}.csv")), &out)?;
                o.adopt(&dir.join(format!("scores_{m}.json")), &sidecar_path(&out))?;
                if let Some(adj) = &adjective_out {
                    o.adopt(&dir.join(format!("adjectives_{m}.csv")), adj)?;
                    o.adopt(&dir.join(format!("adjectives_{m}.json")), &sidecar_path(adj))?;
                }
                o.commit()
            })
        }
        Command::Pilot { flags, out } => {
            let mut c = effective_config(config_path, &flags)?;
            let m = single_measure(&c)?;
            c.templates = TemplateSelection::Pilot;
            scratch_run(c, &[Stage::Pilot], &out, |dir| {
                let mut o = Outputs::default();
                o.adopt(&dir.join(format!("pilot_{m}.json")), &out)?;
                o.commit()
            })
        }
        Command::Align { flags, scores, out } => {
            let c = effective_config(config_path, &flags)?;
            require_file(&scores, "scores file")?;
            let human_path = c
                .human
                .clone()
                .ok_or_else(|| PipelineError::validation("align needs --human"))?;
            require_file(&human_path, "human ratings file")?;
            let (matrix, prov) = ScoreMatrix::read(&scores)?;
            let human = HumanRatings::read(&human_path)?;
            let mut report = align(&matrix, &human, c.pooling)?;
            report.provenance = Some(prov.with_input("human", hash(&human_path)?).with_input("scores", hash(&scores)?));
            let mut o = Outputs::default();
            o.write(&out, &report.to_json())?;
            o.commit()?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Intersect {
            flags,
            scores,
            adjective_scores,
            out_dir,
        } => {
            let c = effective_config(config_path, &flags)?;
            require_file(&scores, "scores file")?;
            if let Some(a) = &adjective_scores {
                require_file(a, "adjective scores file")?;
            }
            if let Some(t) = &c.truth {
                require_file(t, "ground truth file")?;
                if adjective_scores.is_none() {
                    return Err(PipelineError::validation("--truth needs --adjective-scores"));
                }
            }
            let lexicon = match &c.lexicon {
                Some(d) => Lexicon::load(d)?,
                None => Lexicon::builtin(),
            };
            let pairs: Vec<PairedGroup> = lexicon.paired_groups().into_iter().filter(|p| !p.is_excluded()).collect();
            let (matrix, prov) = ScoreMatrix::read(&scores)?;
            let prov: Provenance = prov.with_input("scores", hash(&scores)?);
            let mut o = Outputs::default();

            let order = serde_json::json!({
                "measure": matrix.measure,
                "summary": order_analysis(&matrix, &pairs),
                "provenance": prov,
            });
            o.write(&out_dir.join("order.json"), &format!("{order:#}\n"))?;
            let records = dominance(&matrix, &pairs, &lexicon.groups);
            o.write(
                &out_dir.join("dominance.csv"),
                &format!("{}\n{}", prov.comment_line(), dominance_csv(&records)),
            )?;
            if let Some(adj_path) = &adjective_scores {
                let (adj, _) = ScoreMatrix::read(adj_path)?;
                let prov = prov.clone().with_input("adjective_scores", hash(adj_path)?);
                let lists = emergent(&adj, &pairs, Some(c.top_k))?;
                o.write(
                    &out_dir.join("emergent.csv"),
                    &format!("{}\n{}", prov.comment_line(), emergent_csv(&lists)),
                )?;
                if let Some(t) = &c.truth {
                    let text = fs::read_to_string(t).map_err(|e| PipelineError::data(format!("{}: {e}", t.display())))?;
                    let truth = parse_truth(&text)?;
                    let universe = Universe {
                        groups: pairs
                            .iter()
                            .filter(|p| adj.row_index(&p.id).is_some())
                            .map(|p| p.id.clone())
                            .collect(),
                        adjectives: adj.cols.iter().cloned().collect(),
                    };
                    let evaluation = evaluate_emergent(&detected_cells(&lists.above_max), &truth, &universe)?;
                    let v = serde_json::json!({
                        "measure": adj.measure,
                        "top_k": c.top_k,
                        "evaluation": evaluation,
                        "provenance": prov.with_input("truth", hash(t)?),
                    });
                    o.write(&out_dir.join("emergent_eval.json"), &format!("{v:#}\n"))?;
                }
            }
            o.commit()
        }
        Command::Report { flags } => {
            let mut c = effective_config(config_path, &flags)?;
            if c.measures.is_empty() {
                c.measures = Measure::ALL.to_vec();
            }
            c.stages = vec![Stage::Report];
            run_pipeline(&c)?;
            let path = c.output.join("report.md");
            print!("{}", fs::read_to_string(&path).map_err(|e| internal(&path, e))?);
            Ok(())
        }
        Command::Run { flags } => {
            let c = effective_config(config_path, &flags)?;
            let outcome = run_pipeline(&c)?;
            for name in outcome.written {
                println!("{}", c.output.join(name).display());
            }
            Ok(())
        }
        Command::SynthFixture {
            out,
            seed,
            single_subword,
        } => {
            let f = generate(SyntheticSpec {
                seed,
                multi_subword: !single_subword,
            });
            f.write(&out).map_err(|e| internal(&out, e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stereo-meter: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
