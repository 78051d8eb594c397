//! Log-likelihood scoring of minimal pairs and corpora.
//!
//! A [`Scorer`] maps a text to its total log-probability (natural log) and a
//! token count. Pairs are judged by strict comparison: the good side must
//! score strictly higher to count as a win, ties count against the model and
//! are tallied separately. A text the scorer cannot handle marks its pair
//! errored; errored pairs leave the accuracy denominator but stay visible in
//! the records.
//!
//! Two reference scorers ship with the crate so the whole pipeline runs
//! without any neural backend: a character n-gram model ([`ngram`]) and the
//! process/file bridges in [`external`].

pub mod external;
mod ngram;

pub use external::{external_scorer, ExternalProcessScorer, PrecomputedScorer};
pub use ngram::{ngram_reference_scorer, NgramScorer};

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairgen::MinimalPair;

/// What one text scored: total natural-log probability and token count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub logprob: f64,
    pub tokens: u64,
}

/// Assigns log-likelihoods to texts. Implementations must be deterministic
/// and report at least one token for non-empty text.
pub trait Scorer {
    fn score(&self, text: &str) -> Result<Score, ScoringError>;
}

impl Scorer for Box<dyn Scorer + '_> {
    fn score(&self, text: &str) -> Result<Score, ScoringError> {
        (**self).score(text)
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("cannot score empty text")]
    EmptyText,

    #[error("pairs list is empty")]
    EmptyPairs,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("corpus has zero total tokens")]
    ZeroTokens,

    #[error("n-gram order must be 1 or 2, got {order}")]
    BadOrder { order: u32 },

    #[error("smoothing alpha must be positive and finite, got {alpha}")]
    BadAlpha { alpha: f64 },

    #[error("backend protocol violation: {reason}")]
    Protocol { reason: String },

    #[error("backend failed: {reason}")]
    Backend { reason: String },

    #[error("no precomputed score for id {id}")]
    Missing { id: String },

    #[error("non-finite logprob for id {id}")]
    NonFinite { id: String },

    #[error("{path}:{line}: bad score line: {reason}")]
    BadScoreFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GoodWins,
    BadWins,
    Tie,
}

/// Per-pair scoring outcome, one JSONL line in the eval artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Scored {
        good_logprob: f64,
        bad_logprob: f64,
        good_tokens: u64,
        bad_tokens: u64,
        verdict: Verdict,
    },
    Errored {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Index of the pair in the input list, as a string.
    pub pair_id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

/// Counts behind an accuracy figure. `good_wins / scored` is the accuracy;
/// `scored` excludes errored pairs, ties stay in the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub good_wins: u64,
    pub bad_wins: u64,
    pub ties: u64,
    pub errors: u64,
    pub scored: u64,
}

impl EvalSummary {
    /// Fraction of scored pairs where the good side won strictly; 0.0 when
    /// nothing could be scored.
    pub fn accuracy(&self) -> f64 {
        if self.scored == 0 {
            0.0
        } else {
            self.good_wins as f64 / self.scored as f64
        }
    }
}

fn compare(good: Score, bad: Score, normalize: bool) -> Verdict {
    let (g, b) = if normalize {
        (
            good.logprob / good.tokens as f64,
            bad.logprob / bad.tokens as f64,
        )
    } else {
        (good.logprob, bad.logprob)
    };
    if g > b {
        Verdict::GoodWins
    } else if g < b {
        Verdict::BadWins
    } else {
        Verdict::Tie
    }
}

/// Score every pair and judge it. With `normalize` the comparison uses
/// per-token mean log-probability instead of the total. Records come back
/// in input order.
pub fn eval_pairs(
    pairs: &[MinimalPair],
    scorer: &dyn Scorer,
    normalize: bool,
) -> Result<(Vec<ScoreRecord>, EvalSummary), ScoringError> {
    if pairs.is_empty() {
        return Err(ScoringError::EmptyPairs);
    }
    let mut records = Vec::with_capacity(pairs.len());
    let mut summary = EvalSummary {
        good_wins: 0,
        bad_wins: 0,
        ties: 0,
        errors: 0,
        scored: 0,
    };
    for (index, pair) in pairs.iter().enumerate() {
        let outcome = match (scorer.score(&pair.good), scorer.score(&pair.bad)) {
            (Ok(good), Ok(bad)) => {
                let verdict = compare(good, bad, normalize);
                summary.scored += 1;
                match verdict {
                    Verdict::GoodWins => summary.good_wins += 1,
                    Verdict::BadWins => summary.bad_wins += 1,
                    Verdict::Tie => summary.ties += 1,
                }
                Outcome::Scored {
                    good_logprob: good.logprob,
                    bad_logprob: bad.logprob,
                    good_tokens: good.tokens,
                    bad_tokens: bad.tokens,
                    verdict,
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                summary.errors += 1;
                Outcome::Errored {
                    reason: e.to_string(),
                }
            }
        };
        records.push(ScoreRecord {
            pair_id: index.to_string(),
            outcome,
        });
    }
    Ok((records, summary))
}

/// Corpus-level perplexity: exp(−Σ logprob / Σ tokens), token-weighted
/// across all texts. A scorer failure on any text fails the computation.
pub fn perplexity(texts: &[String], scorer: &dyn Scorer) -> Result<f64, ScoringError> {
    if texts.is_empty() {
        return Err(ScoringError::EmptyCorpus);
    }
    let mut logprob_sum = 0.0f64;
    let mut token_sum = 0u64;
    for text in texts {
        let score = scorer.score(text)?;
        logprob_sum += score.logprob;
        token_sum += score.tokens;
    }
    if token_sum == 0 {
        return Err(ScoringError::ZeroTokens);
    }
    Ok((-logprob_sum / token_sum as f64).exp())
}

/// Every token is one of `vocab_size` equally likely choices; tokens are
/// characters. Perplexity against this scorer is exactly the vocabulary
/// size, handy as an analytic fixture.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub vocab_size: u64,
}

impl Scorer for UniformScorer {
    fn score(&self, text: &str) -> Result<Score, ScoringError> {
        let tokens = text.chars().count() as u64;
        if tokens == 0 {
            return Err(ScoringError::EmptyText);
        }
        Ok(Score {
            logprob: -(tokens as f64) * (self.vocab_size as f64).ln(),
            tokens,
        })
    }
}

/// Fixed score for every non-empty text. Only good for exercising the
/// comparison and tie logic.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub logprob: f64,
    pub tokens: u64,
}

impl Scorer for ConstantScorer {
    fn score(&self, text: &str) -> Result<Score, ScoringError> {
        if text.is_empty() {
            return Err(ScoringError::EmptyText);
        }
        Ok(Score {
            logprob: self.logprob,
            tokens: self.tokens,
        })
    }
}

/// Hex SHA-256 of a byte string; the id convention of the scorer protocol.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
