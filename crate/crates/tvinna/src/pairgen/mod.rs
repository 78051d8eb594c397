//! Minimal-pair benchmark construction.
//!
//! Each builder turns one annotated source dataset into [`MinimalPair`]s: a
//! text the scorer should prefer (`good`) next to a close variant it should
//! not (`bad`). Builders are pure functions and account for every input:
//! `ingested == emitted + dropped` holds per builder, with drops categorized
//! by reason. What one "ingested" unit means varies by builder (records for
//! some, candidate combinations for others) and is documented on each.
//!
//! Input files are JSONL, one record per line; output is JSONL with fields
//! `good`, `bad`, `benchmark`, `provenance`.

mod builders;
mod levenshtein;

pub use builders::{
    align_scala, build_sentiment_pairs, build_topic_pairs, build_translation_pairs,
    filter_germdetect, shuffle_qa_pairs, validate_adversarial_answers, AdversarialStats,
    GermDetectRecord, Sentiment, SentimentDoc, SentimentLevel, TopicDoc,
};
pub use levenshtein::{levenshtein_distance, levenshtein_similarity};

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

// Benchmark tags, matching the file names the evaluation stage expects.
pub const TAG_MULTIBLIMP: &str = "multiblimp";
pub const TAG_SCALA_FLIP: &str = "scala_flip";
pub const TAG_SCALA_DELETE: &str = "scala_delete";
pub const TAG_GERMDETECT: &str = "germdetect";
pub const TAG_TRANSLATION: &str = "translation_pairs";
pub const TAG_SENTIMENT_SENTENCE: &str = "sentiment_sentence";
pub const TAG_SENTIMENT_ARTICLE: &str = "sentiment_article";
pub const TAG_TOPIC: &str = "topic";
pub const TAG_QA_SHUFFLED: &str = "qa_shuffled";
pub const TAG_QA_ADVERSARIAL: &str = "qa_adversarial";

/// Two texts differing in one aspect, with `good` the one a competent model
/// should find more probable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub good: String,
    pub bad: String,
    pub benchmark: String,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl MinimalPair {
    /// Both sides non-empty and distinct. Checked at JSONL boundaries.
    pub fn validate(&self) -> Result<(), String> {
        if self.good.is_empty() || self.bad.is_empty() {
            return Err("good and bad must be non-empty".to_string());
        }
        if self.good == self.bad {
            return Err("good and bad must differ".to_string());
        }
        Ok(())
    }
}

/// One human- or machine-rated translation of a source sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedTranslation {
    pub source_id: String,
    pub system: String,
    pub text: String,
    pub error_count: u32,
}

/// A question over a context whose answer is a span of that context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer: String,
}

impl QaSample {
    pub fn validate(&self) -> Result<(), PairgenError> {
        if !self.context.contains(&self.answer) {
            return Err(PairgenError::BadSample {
                id: self.id.clone(),
                reason: "answer is not a span of the context".to_string(),
            });
        }
        Ok(())
    }
}

/// Splits text into tokens; only token counts matter to the builders.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn token_len(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Default tokenizer: split on Unicode whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }
}

/// Per-builder accounting: every ingested unit is either emitted as a pair
/// or dropped under exactly one reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub ingested: u64,
    pub emitted: u64,
    pub dropped: BTreeMap<String, u64>,
}

impl BuildStats {
    pub(crate) fn ingest(&mut self) {
        self.ingested += 1;
    }

    pub(crate) fn emit(&mut self) {
        self.emitted += 1;
    }

    pub(crate) fn drop_one(&mut self, reason: &str) {
        *self.dropped.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.ingested == self.emitted + self.dropped_total()
    }
}

#[derive(Debug, Error)]
pub enum PairgenError {
    #[error("invalid pair at index {index}: {reason}")]
    InvalidPair { index: usize, reason: String },

    #[error("{path}:{line}: bad record: {reason}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("qa sample '{id}': {reason}")]
    BadSample { id: String, reason: String },

    #[error("similarity threshold must lie in [0, 1], got {threshold}")]
    BadThreshold { threshold: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// The prompt wrapped around a QA triple. Good and bad members of one pair
/// differ only in the answer span at the end.
pub fn qa_prompt(context: &str, question: &str, answer: &str) -> String {
    format!("{context}\n\nSpurningur: {question}\nSvar: {answer}")
}

/// The statement appended to an article to assert its topic.
pub fn topic_statement(text: &str, topic: &str) -> String {
    format!("{text}\n\nEvnið í hesi grein er: {topic}")
}

/// Read a JSONL file into typed records, reporting the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, PairgenError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PairgenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| PairgenError::Jsonl {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Serialize pairs to JSONL, one per line, validating each first.
pub fn pairs_to_jsonl(pairs: &[MinimalPair]) -> Result<String, PairgenError> {
    let mut out = String::new();
    for (index, pair) in pairs.iter().enumerate() {
        pair.validate()
            .map_err(|reason| PairgenError::InvalidPair { index, reason })?;
        out.push_str(&serde_json::to_string(pair).expect("pairs serialize cleanly"));
        out.push('\n');
    }
    Ok(out)
}

/// Write pairs as a JSONL file.
pub fn write_pairs_jsonl(
    pairs: &[MinimalPair],
    path: impl AsRef<Path>,
) -> Result<(), PairgenError> {
    let path = path.as_ref();
    let text = pairs_to_jsonl(pairs)?;
    std::fs::write(path, text).map_err(|source| PairgenError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load pairs from a JSONL file, enforcing the pair invariants.
pub fn read_pairs_jsonl(path: impl AsRef<Path>) -> Result<Vec<MinimalPair>, PairgenError> {
    let path = path.as_ref();
    let pairs: Vec<MinimalPair> = read_jsonl(path)?;
    for (index, pair) in pairs.iter().enumerate() {
        pair.validate()
            .map_err(|reason| PairgenError::InvalidPair { index, reason })?;
    }
    Ok(pairs)
}
