//! Aggregation of evaluation results into tables and win tallies.
//!
//! Accuracies travel as exact fractions (correct count over total count) and
//! are compared by integer cross-multiplication, so two setups tie exactly
//! when their fractions are equal as rationals, never because float
//! rendering collapsed them. Percentages appear only at emission time,
//! rounded to two decimals.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An accuracy as the exact ratio of two counts. `total` 0 renders and
/// compares as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub correct: u64,
    pub total: u64,
}

impl Fraction {
    pub fn new(correct: u64, total: u64) -> Result<Self, ReportError> {
        if correct > total {
            return Err(ReportError::BadFraction { correct, total });
        }
        Ok(Fraction { correct, total })
    }

    pub fn as_f64(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Percentage with two decimals, e.g. "92.81".
    pub fn percent(&self) -> String {
        format!("{:.2}", self.as_f64() * 100.0)
    }

    /// Exact comparison by cross-multiplication; no rounding involved.
    pub fn cmp_exact(&self, other: &Fraction) -> Ordering {
        let (ac, at) = if self.total == 0 {
            (0u128, 1u128)
        } else {
            (self.correct as u128, self.total as u128)
        };
        let (bc, bt) = if other.total == 0 {
            (0u128, 1u128)
        } else {
            (other.correct as u128, other.total as u128)
        };
        (ac * bt).cmp(&(bc * at))
    }
}

/// Everything measured for one experimental setup: identifying attributes
/// (e.g. source language, adaptation method, model size) and per-benchmark
/// accuracies, optionally with a corpus perplexity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupResult {
    pub setup: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
    pub accuracies: BTreeMap<String, Fraction>,
    #[serde(default)]
    pub perplexity: Option<f64>,
}

/// Outcome counts of one contender against another across all compared
/// cells. Ties are kept separate; the win rate credits them to both sides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinTally {
    pub wins: u64,
    pub ties: u64,
    pub losses: u64,
}

impl WinTally {
    pub fn comparisons(&self) -> u64 {
        self.wins + self.ties + self.losses
    }

    /// (wins + ties) / comparisons: a tie counts for both contenders.
    pub fn win_rate_counting_ties(&self) -> f64 {
        let n = self.comparisons();
        if n == 0 {
            0.0
        } else {
            (self.wins + self.ties) as f64 / n as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("fraction {correct}/{total} has more correct than total")]
    BadFraction { correct: u64, total: u64 },

    #[error("setup '{setup}' has no accuracy for benchmark '{tag}'")]
    MissingTag { setup: String, tag: String },

    #[error("setup '{setup}' lacks attribute '{attr}'")]
    MissingAttr { setup: String, attr: String },

    #[error("group '{group}' is incomplete: {reason}")]
    IncompleteGroup { group: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Unweighted arithmetic mean of the accuracies under `tags`.
pub fn benchmark_mean(result: &SetupResult, tags: &[String]) -> Result<f64, ReportError> {
    let mut sum = 0.0f64;
    for tag in tags {
        let fraction = result
            .accuracies
            .get(tag)
            .ok_or_else(|| ReportError::MissingTag {
                setup: result.setup.clone(),
                tag: tag.clone(),
            })?;
        sum += fraction.as_f64();
    }
    Ok(sum / tags.len() as f64)
}

fn group_id(keys: &[String], attrs: &BTreeMap<String, String>) -> String {
    keys.iter()
        .map(|k| format!("{k}={}", attrs.get(k).map(String::as_str).unwrap_or("")))
        .collect::<Vec<_>>()
        .join(",")
}

/// Pit two attribute values against each other across groups.
///
/// Results whose `contender_key` equals `side_a` or `side_b` take part;
/// they are grouped by the values of `group_keys`, and each group must hold
/// exactly one result per side. Within a group, every benchmark present on
/// both sides is compared exactly: side A strictly higher counts a win,
/// strictly lower a loss, equal a tie.
pub fn pairwise_wins(
    results: &[SetupResult],
    group_keys: &[String],
    contender_key: &str,
    side_a: &str,
    side_b: &str,
) -> Result<WinTally, ReportError> {
    let mut groups: BTreeMap<String, (Option<&SetupResult>, Option<&SetupResult>)> =
        BTreeMap::new();
    for result in results {
        let Some(value) = result.attrs.get(contender_key) else {
            continue;
        };
        let slot = if value == side_a {
            0
        } else if value == side_b {
            1
        } else {
            continue;
        };
        for key in group_keys {
            if !result.attrs.contains_key(key) {
                return Err(ReportError::MissingAttr {
                    setup: result.setup.clone(),
                    attr: key.clone(),
                });
            }
        }
        let id = group_id(group_keys, &result.attrs);
        let entry = groups.entry(id.clone()).or_default();
        let side = if slot == 0 { &mut entry.0 } else { &mut entry.1 };
        if side.is_some() {
            return Err(ReportError::IncompleteGroup {
                group: id,
                reason: format!("more than one result for {contender_key}={}",
                    if slot == 0 { side_a } else { side_b }),
            });
        }
        *side = Some(result);
    }

    let mut tally = WinTally::default();
    for (id, (a, b)) in &groups {
        let (Some(a), Some(b)) = (a, b) else {
            let missing = if a.is_none() { side_a } else { side_b };
            return Err(ReportError::IncompleteGroup {
                group: id.clone(),
                reason: format!("no result for {contender_key}={missing}"),
            });
        };
        let shared: Vec<&String> = a
            .accuracies
            .keys()
            .filter(|tag| b.accuracies.contains_key(*tag))
            .collect();
        for tag in shared {
            match a.accuracies[tag].cmp_exact(&b.accuracies[tag]) {
                Ordering::Greater => tally.wins += 1,
                Ordering::Less => tally.losses += 1,
                Ordering::Equal => tally.ties += 1,
            }
        }
    }
    Ok(tally)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

fn emit_csv(results: &[SetupResult], tallies: &BTreeMap<String, WinTally>) -> String {
    let mut out = String::from("setup,benchmark,correct,total,accuracy\n");
    let mut rows: Vec<(&str, &str, Fraction)> = results
        .iter()
        .flat_map(|r| {
            r.accuracies
                .iter()
                .map(move |(tag, f)| (r.setup.as_str(), tag.as_str(), *f))
        })
        .collect();
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for (setup, tag, fraction) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(setup),
            csv_field(tag),
            fraction.correct,
            fraction.total,
            fraction.percent()
        ));
    }
    if !tallies.is_empty() {
        out.push('\n');
        out.push_str("contender,wins,ties,losses\n");
        for (name, tally) in tallies {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(name),
                tally.wins,
                tally.ties,
                tally.losses
            ));
        }
    }
    out
}

// Attrs that drive the grid layout: transfer sources as rows, adaptation
// method and model size as columns.
const ATTR_SOURCE: &str = "source";
const ATTR_METHOD: &str = "method";
const ATTR_SIZE: &str = "size";

fn emit_markdown(results: &[SetupResult], tallies: &BTreeMap<String, WinTally>) -> String {
    let mut out = String::from("# Results\n");
    let grid = results.iter().all(|r| {
        [ATTR_SOURCE, ATTR_METHOD, ATTR_SIZE]
            .iter()
            .all(|a| r.attrs.contains_key(*a))
    });
    let tags: BTreeSet<&String> = results.iter().flat_map(|r| r.accuracies.keys()).collect();
    for tag in tags {
        out.push_str(&format!("\n## {tag}\n\n"));
        let with_tag: Vec<&SetupResult> = results
            .iter()
            .filter(|r| r.accuracies.contains_key(tag))
            .collect();
        if grid && !results.is_empty() {
            let columns: BTreeSet<String> = with_tag
                .iter()
                .map(|r| format!("{} {}", r.attrs[ATTR_METHOD], r.attrs[ATTR_SIZE]))
                .collect();
            let sources: BTreeSet<&String> =
                with_tag.iter().map(|r| &r.attrs[ATTR_SOURCE]).collect();
            out.push_str("| source |");
            for col in &columns {
                out.push_str(&format!(" {col} |"));
            }
            out.push('\n');
            out.push_str("| --- |");
            for _ in &columns {
                out.push_str(" --- |");
            }
            out.push('\n');
            for source in sources {
                out.push_str(&format!("| {source} |"));
                for col in &columns {
                    let cell = with_tag
                        .iter()
                        .find(|r| {
                            &r.attrs[ATTR_SOURCE] == source
                                && format!("{} {}", r.attrs[ATTR_METHOD], r.attrs[ATTR_SIZE])
                                    == *col
                        })
                        .map(|r| r.accuracies[tag].percent())
                        .unwrap_or_default();
                    out.push_str(&format!(" {cell} |"));
                }
                out.push('\n');
            }
        } else {
            out.push_str("| setup | accuracy |\n| --- | --- |\n");
            let mut rows: Vec<&SetupResult> = with_tag;
            rows.sort_by(|a, b| a.setup.cmp(&b.setup));
            for r in rows {
                out.push_str(&format!("| {} | {} |\n", r.setup, r.accuracies[tag].percent()));
            }
        }
    }
    if results.iter().any(|r| r.perplexity.is_some()) {
        out.push_str("\n## perplexity\n\n| setup | perplexity |\n| --- | --- |\n");
        let mut rows: Vec<&SetupResult> =
            results.iter().filter(|r| r.perplexity.is_some()).collect();
        rows.sort_by(|a, b| a.setup.cmp(&b.setup));
        for r in rows {
            out.push_str(&format!(
                "| {} | {:.2} |\n",
                r.setup,
                r.perplexity.expect("filtered to Some")
            ));
        }
    }
    if !tallies.is_empty() {
        out.push_str("\n## Pairwise wins\n\n| contender | wins | ties | losses |\n| --- | --- | --- | --- |\n");
        for (name, tally) in tallies {
            out.push_str(&format!(
                "| {name} | {} | {} | {} |\n",
                tally.wins, tally.ties, tally.losses
            ));
        }
    }
    out
}

/// Render the report; the same inputs always produce the same bytes.
pub fn emit_report(
    results: &[SetupResult],
    tallies: &BTreeMap<String, WinTally>,
    format: ReportFormat,
) -> String {
    match format {
        ReportFormat::Csv => emit_csv(results, tallies),
        ReportFormat::Markdown => emit_markdown(results, tallies),
    }
}

pub fn write_report(
    results: &[SetupResult],
    tallies: &BTreeMap<String, WinTally>,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    let path = path.as_ref();
    std::fs::write(path, emit_report(results, tallies, format)).map_err(|source| {
        ReportError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}
