use std::ffi::OsString;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use coach_core::corpus::{parse_question_records, validate_taxonomy, Corpus, Redactor};
use coach_core::dataset::{
    balance_per_question, make_splits, render_stats_table, split_stats, SplitConfig, SplitManifest, SplitName,
    DEFAULT_MAX_RATIO,
};
use coach_core::eval::{ablation_run, render_ablation_table, render_metrics_table, AblationCell};
use coach_core::pipeline::{evaluate_model, train_model, ModelKind, PipelineConfig, TrainedModel};
use coach_core::synth::{generate, SynthKind};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::state::{load_corpus, RecommendationRequest};
use crate::{AppState, ErrorBody, ServiceConfig, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "coach", version, about = "Coachable call classification and review recommendations")]
struct Cli {
    /// Directory holding the corpus, splits, models, reports and event log.
    #[arg(long, global = true, env = "COACH_DATA_DIR", default_value = "coach-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Redact and store transcripts and grades from JSON Lines files.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// JSON array of question records.
        #[arg(long)]
        questions: PathBuf,
    },
    /// Balance the labelled pairs and split them into train/validation/test.
    BuildDataset {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, validation and test fractions.
        #[arg(long, default_value = "0.7,0.1,0.2")]
        fractions: String,
        #[arg(long, default_value_t = DEFAULT_MAX_RATIO)]
        max_ratio: f64,
        /// Assign whole questions to a single split.
        #[arg(long)]
        holdout_questions: bool,
    },
    /// Train a model on the train split.
    Train {
        /// nb, svm, tree, forest or transformer.
        #[arg(long)]
        model: String,
        /// Pipeline configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed; overrides the component seeds in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a split and write a metrics report.
    Evaluate {
        /// Model artifact; defaults to models/current.model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report id; defaults to the model kind.
        #[arg(long)]
        id: Option<String>,
    },
    /// Train and evaluate a grid of configuration variants.
    Ablate {
        /// JSON array of cells, or an object with `cells` and `seed`.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build one recommendation batch for a manager.
    Recommend {
        #[arg(long)]
        question: String,
        #[arg(long)]
        manager: String,
        /// Only consider this agent's calls.
        #[arg(long)]
        agent: Option<String>,
        /// Service configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a synthetic corpus into the data directory.
    Synth {
        /// marker, query-dependent or late-marker.
        #[arg(long, default_value = "marker")]
        kind: String,
        #[arg(long, default_value_t = 600)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit status for an error: 1 for bad input, 2 for runtime failures.
pub fn exit_code(e: &ServiceError) -> i32 {
    match e {
        ServiceError::Validation(_)
        | ServiceError::NotFound(_)
        | ServiceError::Corpus(_)
        | ServiceError::Dataset(_)
        | ServiceError::Recommend(_) => 1,
        ServiceError::Io { .. } | ServiceError::Pipeline(_) | ServiceError::Internal(_) => 2,
    }
}

fn write_error(stderr: &mut dyn Write, code: &str, message: &str) {
    let body = ErrorBody {
        code: code.into(),
        message: message.into(),
    };
    let _ = writeln!(stderr, "{}", serde_json::to_string(&body).expect("error body serializes"));
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            write_error(stderr, "usage", &e.kind().to_string());
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(v) => {
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&v).expect("output serializes"));
            0
        }
        Err(e) => {
            write_error(stderr, e.code(), &e.to_string());
            exit_code(&e)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, ServiceError> {
    std::fs::read(path).map_err(|e| ServiceError::io(path, e))
}

fn write(path: &Path, contents: &[u8]) -> Result<(), ServiceError> {
    if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| ServiceError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| ServiceError::io(path, e))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(bytes).map_err(|e| ServiceError::Validation(format!("{}: {e}", path.display())))
}

fn parse_arg<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, ServiceError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| ServiceError::Validation(format!("--{what}: {e}")))
}

fn parse_fractions(s: &str) -> Result<[f64; 3], ServiceError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| parse_arg::<f64>("fractions", p.trim()))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts)
        .map_err(|_| ServiceError::Validation("--fractions needs three comma-separated numbers".into()))
}

struct Layout {
    dir: PathBuf,
}

impl Layout {
    fn corpus(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }
    fn questions(&self) -> PathBuf {
        self.dir.join("questions.json")
    }
    fn splits(&self) -> PathBuf {
        self.dir.join("splits.json")
    }
    fn models(&self) -> PathBuf {
        self.dir.join("models")
    }
    fn reports(&self) -> PathBuf {
        self.dir.join("reports")
    }
    fn load_corpus(&self) -> Result<Corpus, ServiceError> {
        load_corpus(&self.corpus(), &self.questions())
    }
    fn load_manifest(&self) -> Result<SplitManifest, ServiceError> {
        Ok(SplitManifest::from_json_slice(&read(&self.splits())?)?)
    }
    fn store_corpus(&self, corpus: &Corpus) -> Result<(), ServiceError> {
        write(&self.corpus(), corpus.to_jsonl().as_bytes())?;
        let mut q = serde_json::to_string_pretty(&corpus.question_records()).expect("questions serialize");
        q.push('\n');
        write(&self.questions(), q.as_bytes())
    }
}

fn corpus_summary(corpus: &Corpus) -> Value {
    json!({
        "transcripts": corpus.transcripts.len(),
        "grades": corpus.grades.len(),
        "questions": corpus.questions.len(),
        "labeled_pairs": corpus.labeled_pairs().len(),
    })
}

fn pipeline_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, ServiceError> {
    let cfg = match path {
        Some(p) => parse_json(p, &read(p)?)?,
        None => PipelineConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn service_config(layout: &Layout, path: Option<&Path>) -> Result<ServiceConfig, ServiceError> {
    let mut cfg = match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::in_dir(&layout.dir),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    Ok(cfg)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridFile {
    Cells(Vec<AblationCell>),
    Seeded {
        cells: Vec<AblationCell>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn dispatch(cli: Cli) -> Result<Value, ServiceError> {
    let layout = Layout { dir: cli.data_dir };
    match cli.command {
        Command::Ingest { files, questions } => {
            let records = parse_question_records(&read(&questions)?)?;
            let taxonomy = validate_taxonomy(&records);
            if !taxonomy.is_valid() {
                return Err(ServiceError::Validation(format!(
                    "{}: unknown types {:?}, duplicate ids {:?}",
                    questions.display(),
                    taxonomy.unknown_types,
                    taxonomy.duplicate_ids
                )));
            }
            let mut corpus = Corpus::new();
            corpus.set_questions(records)?;
            let redactor = Redactor::default();
            for f in &files {
                let file = std::fs::File::open(f).map_err(|e| ServiceError::io(f, e))?;
                corpus
                    .read_jsonl(BufReader::new(file), &redactor)
                    .map_err(|e| ServiceError::Validation(format!("{}: {e}", f.display())))?;
            }
            layout.store_corpus(&corpus)?;
            Ok(corpus_summary(&corpus))
        }
        Command::Synth { kind, pairs, seed } => {
            let kind: SynthKind = parse_arg("kind", &kind)?;
            let corpus = generate(kind, pairs, seed);
            layout.store_corpus(&corpus)?;
            Ok(corpus_summary(&corpus))
        }
        Command::BuildDataset {
            seed,
            fractions,
            max_ratio,
            holdout_questions,
        } => {
            let cfg = SplitConfig {
                fractions: parse_fractions(&fractions)?,
                seed,
                max_ratio,
                holdout_questions,
            };
            let corpus = layout.load_corpus()?;
            let balanced = balance_per_question(&corpus.labeled_pairs(), max_ratio, seed)?;
            let splits = make_splits(&balanced, &cfg)?;
            let stats = splits
                .iter()
                .map(|s| split_stats(s, &corpus).map(|st| st.rounded()))
                .collect::<Result<Vec<_>, _>>()?;
            write(&layout.splits(), SplitManifest::new(&cfg, &splits).to_json_pretty().as_bytes())?;
            Ok(json!({
                "manifest": layout.splits(),
                "stats": stats,
                "table": render_stats_table(&stats),
            }))
        }
        Command::Train {
            model,
            config,
            seed,
            out,
        } => {
            let kind: ModelKind = parse_arg("model", &model)?;
            let cfg = pipeline_config(config.as_deref(), seed)?;
            let corpus = layout.load_corpus()?;
            let splits = layout.load_manifest()?.splits();
            let (trained, summary) = train_model(kind, &corpus, &splits, &cfg)?;
            let out = out.unwrap_or_else(|| layout.models().join(format!("{}.model", kind.short_name())));
            if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| ServiceError::io(parent, e))?;
            }
            std::fs::create_dir_all(layout.models()).map_err(|e| ServiceError::io(&layout.models(), e))?;
            let mut files = trained.save(&out)?;
            files.extend(trained.save(&layout.models().join("current.model"))?);
            let log_path = layout.models().join(format!("{}.train.jsonl", kind.short_name()));
            let log: String = summary
                .epochs
                .iter()
                .flatten()
                .map(|e| serde_json::to_string(e).expect("epoch log serializes") + "\n")
                .collect();
            write(&log_path, log.as_bytes())?;
            files.push(log_path);
            Ok(json!({ "summary": summary, "files": files }))
        }
        Command::Evaluate { model, split, id } => {
            let split_name: SplitName = parse_arg("split", &split)?;
            let model_path = model.unwrap_or_else(|| layout.models().join("current.model"));
            let trained = TrainedModel::load(&model_path)?;
            let corpus = layout.load_corpus()?;
            let splits = layout.load_manifest()?.splits();
            let id = id.unwrap_or_else(|| trained.kind().short_name().to_string());
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return Err(ServiceError::Validation(format!("--id {id:?} is not a valid report name")));
            }
            let config = json!({ "model": trained.kind(), "split": split_name });
            let report = evaluate_model(&id, &trained, &corpus, splits.get(split_name), config)?;
            let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
            body.push('\n');
            write(&layout.reports().join(format!("{id}.json")), body.as_bytes())?;
            write(&layout.reports().join("latest.json"), body.as_bytes())?;
            Ok(json!({ "report": report, "table": render_metrics_table(std::slice::from_ref(&report)) }))
        }
        Command::Ablate { grid, config, seed } => {
            let (cells, file_seed) = match parse_json::<GridFile>(&grid, &read(&grid)?)? {
                GridFile::Cells(c) => (c, None),
                GridFile::Seeded { cells, seed } => (cells, seed),
            };
            let seed = seed.or(file_seed).unwrap_or(0);
            let base = pipeline_config(config.as_deref(), None)?;
            let corpus = layout.load_corpus()?;
            let splits = layout.load_manifest()?.splits();
            let rows = ablation_run(&cells, &base, &corpus, &splits, seed)?;
            let mut body = serde_json::to_string_pretty(&rows).expect("rows serialize");
            body.push('\n');
            write(&layout.reports().join("ablation.json"), body.as_bytes())?;
            Ok(json!({ "rows": rows, "table": render_ablation_table(&rows) }))
        }
        Command::Recommend {
            question,
            manager,
            agent,
            config,
        } => {
            let state = AppState::load(service_config(&layout, config.as_deref())?)?;
            let batch = state.recommend(&RecommendationRequest {
                question_id: question,
                manager_id: manager,
                agent_id: agent,
            })?;
            Ok(serde_json::to_value(batch).expect("batch serializes"))
        }
        Command::Serve { config } => {
            let cfg = service_config(&layout, config.as_deref())?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            runtime.block_on(crate::http::serve(cfg))?;
            Ok(json!({ "status": "stopped" }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("coach").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, err) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("build-dataset"));
        assert!(err.is_empty());
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!(parse_fractions("0.7, 0.1,0.2").unwrap(), [0.7, 0.1, 0.2]);
        assert!(parse_fractions("0.7,0.3").is_err());
        assert!(parse_fractions("a,b,c").is_err());
    }

    #[test]
    fn bad_model_name_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (code, _, err) = run_args(&["--data-dir", d, "train", "--model", "gpt"]);
        assert_eq!(code, 1);
        let body: ErrorBody = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(body.code, "validation");
    }
}
