//! The `tvinna` binary: file-configured, reproducible pipeline runs.
//!
//! Every subcommand reads its settings from one YAML config file, validates
//! all referenced paths before doing any work, writes artifacts under the
//! output directory, and drops a manifest next to each artifact recording
//! SHA-256 hashes of every input and output. Manifests carry no timestamps
//! and nothing in the pipeline draws randomness, so identical inputs yield
//! byte-identical artifacts and manifests, at any `--jobs` setting.
//!
//! Exit codes: 0 success; 2 configuration error (bad flags or YAML, missing
//! files or sections, bad recipe parameters); 3 data error (malformed
//! checkpoints or records, incompatible tensors, i/o failures); 4 backend
//! error (external scorer unreachable or off-protocol).

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::{self, MergeError, MergeRecipe};
use crate::pairgen::{self, BuildStats, MinimalPair, PairgenError, WhitespaceTokenizer};
use crate::report::{self, Fraction, ReportError, ReportFormat, SetupResult, WinTally};
use crate::scoring::{self, Scorer, ScoringError};
use crate::tensorstore::{self, TensorStoreError};

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 2;
const EXIT_DATA: i32 = 3;
const EXIT_BACKEND: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "tvinna",
    version,
    about = "Merge language-adapted checkpoints and score minimal-pair benchmarks"
)]
struct Cli {
    /// YAML run configuration; every subcommand reads its section from it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Cap on worker threads. Affects speed only, never outputs.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Directory artifacts are written into; overrides the config's
    /// output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Execute a merge recipe or preset end to end.
    Merge,
    /// Difference a tuned checkpoint or adapter against a base model.
    TaskVector,
    /// Build a minimal-pair benchmark from raw records.
    BuildPairs,
    /// Score pair files and write per-benchmark accuracies.
    Eval,
    /// Aggregate eval results into tables and win tallies.
    Report,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{reason}")]
    Config { reason: String },

    #[error("input path does not exist: {}", path.display())]
    MissingInput { path: PathBuf },

    #[error(transparent)]
    Merge(#[from] MergeError),

    #[error(transparent)]
    Store(#[from] TensorStoreError),

    #[error(transparent)]
    Pairgen(#[from] PairgenError),

    #[error(transparent)]
    Scoring(#[from] ScoringError),

    #[error(transparent)]
    Report(#[from] ReportError),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::MissingInput { .. } => EXIT_CONFIG,
            // Recipe and preset mistakes are invocation problems, not data.
            CliError::Merge(
                MergeError::Recipe { .. }
                | MergeError::EmptySources
                | MergeError::BadDensity { .. }
                | MergeError::BadLambda { .. }
                | MergeError::BadWeight { .. }
                | MergeError::MissingLanguage { .. }
                | MergeError::UnknownPreset { .. },
            ) => EXIT_CONFIG,
            CliError::Merge(_) => EXIT_DATA,
            CliError::Scoring(
                ScoringError::Backend { .. } | ScoringError::Protocol { .. },
            ) => EXIT_BACKEND,
            CliError::Scoring(_) => EXIT_DATA,
            CliError::Store(_)
            | CliError::Pairgen(_)
            | CliError::Report(_)
            | CliError::Io { .. } => EXIT_DATA,
        }
    }

    fn category(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config error",
            EXIT_BACKEND => "backend error",
            _ => "data error",
        }
    }
}

/// Entry point behind `main`; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("tvinna: {}: {err}", err.category());
            err.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config {
                reason: "--jobs must be at least 1".to_string(),
            });
        }
        // A second initialization in the same process is harmless: the pool
        // only affects speed.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let config_path = cli.config.as_ref().ok_or_else(|| CliError::Config {
        reason: "--config FILE is required".to_string(),
    })?;
    let config = RunConfig::load(config_path)?;
    let out_dir = cli
        .output_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;
    match cli.command {
        Command::Merge => cmd_merge(section(config.merge, "merge")?, &out_dir),
        Command::TaskVector => cmd_task_vector(section(config.task_vector, "task_vector")?, &out_dir),
        Command::BuildPairs => cmd_build_pairs(section(config.build_pairs, "build_pairs")?, &out_dir),
        Command::Eval => cmd_eval(section(config.eval, "eval")?, &out_dir),
        Command::Report => cmd_report(section(config.report, "report")?, &out_dir),
    }
}

fn section<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config {
        reason: format!("config lacks a '{name}' section"),
    })
}

/// Place an artifact under the output directory. The default directory "."
/// is dropped so manifests record plain relative paths.
fn artifact_path(out_dir: &Path, rel: &Path) -> PathBuf {
    if out_dir == Path::new(".") {
        rel.to_path_buf()
    } else {
        out_dir.join(rel)
    }
}

fn require_input(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
        })
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty lines of a text file, in order, stripped of trailing `\r`.
fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_to_string(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact values serialize cleanly");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(scoring::sha256_hex(&bytes))
}

/// Provenance record written next to each artifact. Field order is fixed and
/// maps are sorted, so the rendered JSON is reproducible byte for byte.
#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    details: BTreeMap<String, serde_json::Value>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Manifest {
            command,
            details: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn detail(&mut self, key: &str, value: serde_json::Value) {
        self.details.insert(key.to_string(), value);
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    /// Write as `<artifact file name>.manifest.json` beside the artifact.
    fn write(&self, artifact: &Path) -> Result<(), CliError> {
        let mut name = artifact
            .file_name()
            .unwrap_or_default()
            .to_os_string();
        name.push(".manifest.json");
        write_json(&artifact.with_file_name(name), self)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    merge: Option<MergeSection>,
    #[serde(default)]
    task_vector: Option<TaskVectorSection>,
    #[serde(default)]
    build_pairs: Option<BuildPairsSection>,
    #[serde(default)]
    eval: Option<EvalSection>,
    #[serde(default)]
    report: Option<ReportSection>,
}

impl RunConfig {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Config {
            reason: format!("cannot read config {}: {source}", path.display()),
        })?;
        serde_yaml::from_str(&text).map_err(|e| CliError::Config {
            reason: format!("{}: {e}", path.display()),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeSection {
    base: PathBuf,
    /// Path to a merge recipe YAML; exclusive with `preset`.
    #[serde(default)]
    recipe: Option<PathBuf>,
    /// Name of a built-in preset; exclusive with `recipe`.
    #[serde(default)]
    preset: Option<String>,
    /// For presets: language code to checkpoint path.
    #[serde(default)]
    sources: BTreeMap<String, PathBuf>,
    output: PathBuf,
}

fn cmd_merge(section: MergeSection, out_dir: &Path) -> Result<(), CliError> {
    let recipe = match (&section.recipe, &section.preset) {
        (Some(path), None) => {
            require_input(path)?;
            MergeRecipe::from_yaml_str(&read_to_string(path)?)?
        }
        (None, Some(name)) => merge::build_recipe(name, &section.sources)?,
        _ => {
            return Err(CliError::Config {
                reason: "merge needs exactly one of 'recipe' or 'preset'".to_string(),
            })
        }
    };
    require_input(&section.base)?;
    for source in &recipe.sources {
        require_input(&source.path)?;
    }

    let base = tensorstore::load_checkpoint(&section.base)?;
    let mut vectors = Vec::with_capacity(recipe.sources.len());
    for source in &recipe.sources {
        vectors.push(merge::load_source_as_task_vector(
            &base,
            &source.path,
            &source.label,
            source.weight,
        )?);
    }
    let merged = merge::merge_with_recipe(&base, &vectors, &recipe)?;
    let output = artifact_path(out_dir, &section.output);
    tensorstore::save_checkpoint(&merged, &output)?;

    let mut manifest = Manifest::new("merge");
    manifest.detail(
        "recipe",
        serde_json::to_value(&recipe).expect("recipe serializes cleanly"),
    );
    manifest.input(&section.base)?;
    if let Some(path) = &section.recipe {
        manifest.input(path)?;
    }
    for source in &recipe.sources {
        manifest.input(&source.path)?;
    }
    manifest.output(&output)?;
    manifest.write(&output)?;
    println!("merged {} sources into {}", recipe.sources.len(), output.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskVectorSection {
    base: PathBuf,
    /// Fine-tuned checkpoint, stored task vector, or low-rank adapter; the
    /// container metadata decides how it is read.
    tuned: PathBuf,
    #[serde(default)]
    label: String,
    output: PathBuf,
}

fn cmd_task_vector(section: TaskVectorSection, out_dir: &Path) -> Result<(), CliError> {
    require_input(&section.base)?;
    require_input(&section.tuned)?;
    let base = tensorstore::load_checkpoint(&section.base)?;
    let label = if section.label.is_empty() {
        section
            .tuned
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        section.label.clone()
    };
    let vector = merge::load_source_as_task_vector(&base, &section.tuned, &label, 1.0)?;
    let output = artifact_path(out_dir, &section.output);
    tensorstore::save_checkpoint(&vector.to_tensor_map(), &output)?;

    let mut manifest = Manifest::new("task-vector");
    manifest.detail("label", serde_json::Value::String(label));
    manifest.input(&section.base)?;
    manifest.input(&section.tuned)?;
    manifest.output(&output)?;
    manifest.write(&output)?;
    println!("wrote task vector {}", output.display());
    Ok(())
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum BuilderKind {
    Scala,
    Germdetect,
    Translation,
    SentimentSentence,
    SentimentArticle,
    Topic,
    QaShuffle,
    QaAdversarial,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildPairsSection {
    builder: BuilderKind,
    /// scala: text file of correct sentences, one per line.
    #[serde(default)]
    correct: Option<PathBuf>,
    /// scala: text file of corrupted sentences, one per line.
    #[serde(default)]
    corrupted: Option<PathBuf>,
    /// scala: minimum alignment similarity; the original sets used 0.85.
    #[serde(default = "default_threshold")]
    threshold: f64,
    /// scala: benchmark tag stamped on the pairs.
    #[serde(default)]
    benchmark: Option<String>,
    /// JSONL records for every builder except scala.
    #[serde(default)]
    input: Option<PathBuf>,
    /// translation: required error-count gap between good and bad.
    #[serde(default)]
    min_gap: Option<u32>,
    /// translation: most errors tolerated on the good side.
    #[serde(default)]
    max_good_errors: Option<u32>,
    /// topic: JSON map from topic to its confusable topics.
    #[serde(default)]
    confusions: Option<PathBuf>,
    /// qa_adversarial: JSON map from sample id to the wrong answer.
    #[serde(default)]
    adversarial: Option<PathBuf>,
    output: PathBuf,
    /// Stats JSON path; defaults to `<output>.stats.json`.
    #[serde(default)]
    stats: Option<PathBuf>,
}

fn default_threshold() -> f64 {
    0.85
}

fn need<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a PathBuf, CliError> {
    value.as_ref().ok_or_else(|| CliError::Config {
        reason: format!("build_pairs is missing the '{field}' field"),
    })
}

fn cmd_build_pairs(section: BuildPairsSection, out_dir: &Path) -> Result<(), CliError> {
    let mut manifest = Manifest::new("build-pairs");
    let (pairs, stats) = match section.builder {
        BuilderKind::Scala => {
            let correct_path = need(&section.correct, "correct")?;
            let corrupted_path = need(&section.corrupted, "corrupted")?;
            let benchmark = section.benchmark.as_ref().ok_or_else(|| CliError::Config {
                reason: "build_pairs is missing the 'benchmark' field".to_string(),
            })?;
            require_input(correct_path)?;
            require_input(corrupted_path)?;
            manifest.input(correct_path)?;
            manifest.input(corrupted_path)?;
            let correct = read_lines(correct_path)?;
            let corrupted = read_lines(corrupted_path)?;
            let (pairs, unmatched) =
                pairgen::align_scala(&correct, &corrupted, section.threshold, benchmark)?;
            // One accounting unit per corrupted sentence: matched or not.
            let mut dropped = BTreeMap::new();
            if !unmatched.is_empty() {
                dropped.insert("unmatched".to_string(), unmatched.len() as u64);
            }
            let stats = BuildStats {
                ingested: corrupted.len() as u64,
                emitted: pairs.len() as u64,
                dropped,
            };
            (pairs, serde_json::to_value(&stats).expect("stats serialize"))
        }
        BuilderKind::Germdetect => {
            let input = need(&section.input, "input")?;
            require_input(input)?;
            manifest.input(input)?;
            let records: Vec<pairgen::GermDetectRecord> = pairgen::read_jsonl(input)?;
            let (pairs, stats) = pairgen::filter_germdetect(&records);
            (pairs, serde_json::to_value(&stats).expect("stats serialize"))
        }
        BuilderKind::Translation => {
            let input = need(&section.input, "input")?;
            let min_gap = section.min_gap.ok_or_else(|| CliError::Config {
                reason: "build_pairs is missing the 'min_gap' field".to_string(),
            })?;
            let max_good_errors = section.max_good_errors.ok_or_else(|| CliError::Config {
                reason: "build_pairs is missing the 'max_good_errors' field".to_string(),
            })?;
            require_input(input)?;
            manifest.input(input)?;
            let ratings: Vec<pairgen::RatedTranslation> = pairgen::read_jsonl(input)?;
            let (pairs, stats) = pairgen::build_translation_pairs(&ratings, min_gap, max_good_errors);
            (pairs, serde_json::to_value(&stats).expect("stats serialize"))
        }
        BuilderKind::SentimentSentence | BuilderKind::SentimentArticle => {
            let input = need(&section.input, "input")?;
            require_input(input)?;
            manifest.input(input)?;
            let docs: Vec<pairgen::SentimentDoc> = pairgen::read_jsonl(input)?;
            let level = if section.builder == BuilderKind::SentimentSentence {
                pairgen::SentimentLevel::Sentence
            } else {
                pairgen::SentimentLevel::Article
            };
            let (pairs, stats) = pairgen::build_sentiment_pairs(&docs, level);
            (pairs, serde_json::to_value(&stats).expect("stats serialize"))
        }
        BuilderKind::Topic => {
            let input = need(&section.input, "input")?;
            let confusions_path = need(&section.confusions, "confusions")?;
            require_input(input)?;
            require_input(confusions_path)?;
            manifest.input(input)?;
            manifest.input(confusions_path)?;
            let docs: Vec<pairgen::TopicDoc> = pairgen::read_jsonl(input)?;
            let confusions: BTreeMap<String, Vec<String>> =
                serde_json::from_str(&read_to_string(confusions_path)?).map_err(|e| {
                    CliError::Config {
                        reason: format!("{}: {e}", confusions_path.display()),
                    }
                })?;
            let (pairs, stats) = pairgen::build_topic_pairs(&docs, &confusions);
            (pairs, serde_json::to_value(&stats).expect("stats serialize"))
        }
        BuilderKind::QaShuffle => {
            let input = need(&section.input, "input")?;
            require_input(input)?;
            manifest.input(input)?;
            let samples: Vec<pairgen::QaSample> = pairgen::read_jsonl(input)?;
            let (pairs, stats) = pairgen::shuffle_qa_pairs(&samples, &WhitespaceTokenizer)?;
            (pairs, serde_json::to_value(&stats).expect("stats serialize"))
        }
        BuilderKind::QaAdversarial => {
            let input = need(&section.input, "input")?;
            let adversarial_path = need(&section.adversarial, "adversarial")?;
            require_input(input)?;
            require_input(adversarial_path)?;
            manifest.input(input)?;
            manifest.input(adversarial_path)?;
            let samples: Vec<pairgen::QaSample> = pairgen::read_jsonl(input)?;
            let adversarial: BTreeMap<String, String> =
                serde_json::from_str(&read_to_string(adversarial_path)?).map_err(|e| {
                    CliError::Config {
                        reason: format!("{}: {e}", adversarial_path.display()),
                    }
                })?;
            let (pairs, stats) =
                pairgen::validate_adversarial_answers(&samples, &adversarial, &WhitespaceTokenizer)?;
            (pairs, serde_json::to_value(&stats).expect("stats serialize"))
        }
    };

    let output = artifact_path(out_dir, &section.output);
    pairgen::write_pairs_jsonl(&pairs, &output)?;
    let stats_path = match &section.stats {
        Some(path) => artifact_path(out_dir, path),
        None => {
            let mut name = output.file_name().unwrap_or_default().to_os_string();
            name.push(".stats.json");
            output.with_file_name(name)
        }
    };
    write_json(&stats_path, &stats)?;

    manifest.output(&output)?;
    manifest.output(&stats_path)?;
    manifest.write(&output)?;
    println!("wrote {} pairs to {}", pairs.len(), output.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ScorerSpec {
    /// Analytic baseline: every character costs log(vocab_size).
    Uniform { vocab_size: u64 },
    /// Fixed score for every text; only useful for tie plumbing.
    Constant {
        logprob: f64,
        #[serde(default = "default_tokens")]
        tokens: u64,
    },
    /// Character n-gram model with add-alpha smoothing, trained on a text
    /// file of one document per line.
    Ngram { corpus: PathBuf, order: u32, alpha: f64 },
    /// Executable speaking the line-oriented JSON protocol, or a response
    /// file captured from one; file mode is detected by the executable bit.
    External { path: PathBuf },
    /// Response file only, never a process.
    Precomputed { path: PathBuf },
}

fn default_tokens() -> u64 {
    1
}

impl ScorerSpec {
    /// The file this scorer reads, if any, for validation and manifests.
    fn input_path(&self) -> Option<&PathBuf> {
        match self {
            ScorerSpec::Uniform { .. } | ScorerSpec::Constant { .. } => None,
            ScorerSpec::Ngram { corpus, .. } => Some(corpus),
            ScorerSpec::External { path } | ScorerSpec::Precomputed { path } => Some(path),
        }
    }

    fn build(&self) -> Result<Box<dyn Scorer>, CliError> {
        match self {
            ScorerSpec::Uniform { vocab_size } => Ok(Box::new(scoring::UniformScorer {
                vocab_size: *vocab_size,
            })),
            ScorerSpec::Constant { logprob, tokens } => Ok(Box::new(scoring::ConstantScorer {
                logprob: *logprob,
                tokens: *tokens,
            })),
            ScorerSpec::Ngram { corpus, order, alpha } => {
                let lines = read_lines(corpus)?;
                Ok(Box::new(scoring::ngram_reference_scorer(&lines, *order, *alpha)?))
            }
            ScorerSpec::External { path } => Ok(scoring::external_scorer(path)?),
            ScorerSpec::Precomputed { path } => {
                Ok(Box::new(scoring::PrecomputedScorer::load(path)?))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    /// Pair files to score; pairs are grouped by their benchmark tag.
    pairs: Vec<PathBuf>,
    scorer: ScorerSpec,
    /// Compare per-token mean log-probability instead of the total.
    #[serde(default)]
    normalize: bool,
    /// Setup id recorded in the result artifact.
    #[serde(default = "default_setup")]
    setup: String,
    /// Free-form attributes (source, method, size, ...) used for grouping.
    #[serde(default)]
    attrs: BTreeMap<String, String>,
    /// Optional text corpus (one document per line) for perplexity.
    #[serde(default)]
    perplexity_corpus: Option<PathBuf>,
    /// Output JSONL of per-pair outcomes.
    records: PathBuf,
    /// Output JSON holding the SetupResult.
    result: PathBuf,
}

fn default_setup() -> String {
    "eval".to_string()
}

fn cmd_eval(section: EvalSection, out_dir: &Path) -> Result<(), CliError> {
    for path in &section.pairs {
        require_input(path)?;
    }
    if let Some(path) = section.scorer.input_path() {
        require_input(path)?;
    }
    if let Some(path) = &section.perplexity_corpus {
        require_input(path)?;
    }
    let scorer = section.scorer.build()?;

    let mut by_tag: BTreeMap<String, Vec<MinimalPair>> = BTreeMap::new();
    for path in &section.pairs {
        for pair in pairgen::read_pairs_jsonl(path)? {
            by_tag.entry(pair.benchmark.clone()).or_default().push(pair);
        }
    }

    let mut records_text = String::new();
    let mut accuracies = BTreeMap::new();
    for (tag, pairs) in &by_tag {
        let (records, summary) = scoring::eval_pairs(pairs, scorer.as_ref(), section.normalize)?;
        for record in &records {
            let mut value =
                serde_json::to_value(record).expect("score records serialize cleanly");
            value
                .as_object_mut()
                .expect("a record is a json object")
                .insert("benchmark".to_string(), tag.clone().into());
            records_text
                .push_str(&serde_json::to_string(&value).expect("record value serializes"));
            records_text.push('\n');
        }
        accuracies.insert(tag.clone(), Fraction::new(summary.good_wins, summary.scored)?);
        println!(
            "{tag}: {}/{} correct, {} ties, {} errors",
            summary.good_wins, summary.scored, summary.ties, summary.errors
        );
    }

    let perplexity = match &section.perplexity_corpus {
        Some(path) => {
            let texts = read_lines(path)?;
            let value = scoring::perplexity(&texts, scorer.as_ref())?;
            println!("perplexity: {value:.4}");
            Some(value)
        }
        None => None,
    };

    let records_path = artifact_path(out_dir, &section.records);
    write_bytes(&records_path, records_text.as_bytes())?;
    let result = SetupResult {
        setup: section.setup.clone(),
        attrs: section.attrs.clone(),
        accuracies,
        perplexity,
    };
    let result_path = artifact_path(out_dir, &section.result);
    write_json(&result_path, &result)?;

    let mut manifest = Manifest::new("eval");
    for path in &section.pairs {
        manifest.input(path)?;
    }
    if let Some(path) = section.scorer.input_path() {
        manifest.input(path)?;
    }
    if let Some(path) = &section.perplexity_corpus {
        manifest.input(path)?;
    }
    manifest.output(&records_path)?;
    manifest.output(&result_path)?;
    manifest.write(&result_path)?;
    Ok(())
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum ReportFormatName {
    Csv,
    Markdown,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairwiseSpec {
    /// Label the tally is filed under, e.g. "is vs da".
    name: String,
    /// Attributes whose values define a comparison group.
    #[serde(default)]
    group_keys: Vec<String>,
    /// Attribute that tells the two contenders apart.
    contender_key: String,
    side_a: String,
    side_b: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportSection {
    /// SetupResult JSON files, one per evaluated setup.
    results: Vec<PathBuf>,
    #[serde(default = "default_formats")]
    formats: Vec<ReportFormatName>,
    #[serde(default)]
    pairwise: Vec<PairwiseSpec>,
    /// Output stem; the format extension is appended.
    output: PathBuf,
}

fn default_formats() -> Vec<ReportFormatName> {
    vec![ReportFormatName::Csv, ReportFormatName::Markdown]
}

fn cmd_report(section: ReportSection, out_dir: &Path) -> Result<(), CliError> {
    for path in &section.results {
        require_input(path)?;
    }
    let mut results: Vec<SetupResult> = Vec::with_capacity(section.results.len());
    for path in &section.results {
        let result = serde_json::from_str(&read_to_string(path)?).map_err(|e| {
            CliError::Pairgen(PairgenError::Jsonl {
                path: path.clone(),
                line: e.line(),
                reason: e.to_string(),
            })
        })?;
        results.push(result);
    }

    let mut tallies: BTreeMap<String, WinTally> = BTreeMap::new();
    for spec in &section.pairwise {
        let tally = report::pairwise_wins(
            &results,
            &spec.group_keys,
            &spec.contender_key,
            &spec.side_a,
            &spec.side_b,
        )?;
        tallies.insert(spec.name.clone(), tally);
    }

    let mut manifest = Manifest::new("report");
    for path in &section.results {
        manifest.input(path)?;
    }
    let stem = artifact_path(out_dir, &section.output);
    for format in &section.formats {
        let (extension, fmt) = match format {
            ReportFormatName::Csv => ("csv", ReportFormat::Csv),
            ReportFormatName::Markdown => ("md", ReportFormat::Markdown),
        };
        let path = stem.with_extension(extension);
        report::write_report(&results, &tallies, fmt, &path)?;
        manifest.output(&path)?;
        println!("wrote {}", path.display());
    }
    manifest.write(&stem)?;
    Ok(())
}
