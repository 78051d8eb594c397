//! The per-dataset pair construction procedures.
//!
//! Drop reasons are kebab-case strings; each builder documents its
//! accounting unit. Emission order is the deterministic input order (or
//! sorted group order where grouping applies), never thread-dependent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    levenshtein_similarity, qa_prompt, topic_statement, BuildStats, MinimalPair, PairgenError,
    QaSample, RatedTranslation, Tokenizer, TAG_QA_ADVERSARIAL, TAG_QA_SHUFFLED,
    TAG_SENTIMENT_ARTICLE, TAG_SENTIMENT_SENTENCE, TAG_TOPIC, TAG_TRANSLATION,
};

pub const SUFFIX_POSITIVE: &str = " Hetta er gott.";
pub const SUFFIX_NEGATIVE: &str = " Hetta er ringt.";

/// Re-align corrupted sentences to the correct sentences they were derived
/// from, by normalized Levenshtein similarity.
///
/// Greedy one-to-one matching: repeatedly take the highest remaining
/// similarity at or above `threshold` (lowest corrupted index on ties). If
/// that corrupted sentence has more than one unused correct sentence at its
/// best similarity, the match is ambiguous and the sentence goes to
/// `unmatched`. Every unpaired corrupted sentence is returned in `unmatched`,
/// in input order, for manual handling.
pub fn align_scala(
    correct: &[String],
    corrupted: &[String],
    threshold: f64,
    benchmark: &str,
) -> Result<(Vec<MinimalPair>, Vec<String>), PairgenError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PairgenError::BadThreshold { threshold });
    }
    let sims: Vec<Vec<f64>> = corrupted
        .iter()
        .map(|bad| {
            correct
                .iter()
                .map(|good| levenshtein_similarity(good, bad))
                .collect()
        })
        .collect();

    let mut used_correct = vec![false; correct.len()];
    let mut matched: Vec<Option<usize>> = vec![None; corrupted.len()];
    let mut remaining: BTreeSet<usize> = (0..corrupted.len()).collect();
    loop {
        let mut best: Option<(f64, usize)> = None;
        for &c in &remaining {
            for (r, used) in used_correct.iter().enumerate() {
                if *used {
                    continue;
                }
                let s = sims[c][r];
                if s >= threshold && best.is_none_or(|(bs, _)| s > bs) {
                    best = Some((s, c));
                }
            }
        }
        let Some((s, c)) = best else { break };
        let winners: Vec<usize> = (0..correct.len())
            .filter(|&r| !used_correct[r] && sims[c][r] == s)
            .collect();
        if let [only] = winners[..] {
            matched[c] = Some(only);
            used_correct[only] = true;
        }
        // More than one unused correct sentence at the best similarity:
        // ambiguous, leave the corrupted sentence unmatched.
        remaining.remove(&c);
    }

    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (c, bad) in corrupted.iter().enumerate() {
        match matched[c] {
            Some(r) => pairs.push(MinimalPair {
                good: correct[r].clone(),
                bad: bad.clone(),
                benchmark: benchmark.to_string(),
                provenance: [
                    ("correct_index".to_string(), r.to_string()),
                    ("corrupted_index".to_string(), c.to_string()),
                    ("similarity".to_string(), format!("{:.6}", sims[c][r])),
                ]
                .into(),
            }),
            None => unmatched.push(bad.clone()),
        }
    }
    Ok((pairs, unmatched))
}

/// A sentence next to a machine-corrupted version of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GermDetectRecord {
    pub original: String,
    pub corrupted: String,
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keep only records whose corruption actually changed the sentence, judged
/// after whitespace normalization. Unit: one record.
pub fn filter_germdetect(records: &[GermDetectRecord]) -> (Vec<MinimalPair>, BuildStats) {
    let mut stats = BuildStats::default();
    let mut pairs = Vec::new();
    for (idx, record) in records.iter().enumerate() {
        stats.ingest();
        let good = normalize_whitespace(&record.original);
        let bad = normalize_whitespace(&record.corrupted);
        if good.is_empty() || bad.is_empty() {
            stats.drop_one("empty_text");
            continue;
        }
        if good == bad {
            stats.drop_one("no_corruption");
            continue;
        }
        stats.emit();
        pairs.push(MinimalPair {
            good: record.original.clone(),
            bad: record.corrupted.clone(),
            benchmark: super::TAG_GERMDETECT.to_string(),
            provenance: [("record".to_string(), idx.to_string())].into(),
        });
    }
    (pairs, stats)
}

/// Characters we accept as "not a foreign script": ASCII, the Latin ranges
/// through Extended-B plus Extended Additional, general punctuation, and
/// currency signs. Anything else disqualifies the translation.
fn latin_script_only(text: &str) -> bool {
    text.chars().all(|c| {
        c.is_ascii()
            || ('\u{00A0}'..='\u{024F}').contains(&c)
            || ('\u{1E00}'..='\u{1EFF}').contains(&c)
            || ('\u{2000}'..='\u{206F}').contains(&c)
            || ('\u{20A0}'..='\u{20CF}').contains(&c)
    })
}

/// Pair better translations against clearly worse ones of the same source
/// sentence. Unit: one ordered pair of distinct translations sharing a
/// source_id. A pair survives when both sides are Latin-script, the bad
/// side has at least `min_gap` more errors, and the good side has at most
/// `max_good_errors`.
pub fn build_translation_pairs(
    ratings: &[RatedTranslation],
    min_gap: u32,
    max_good_errors: u32,
) -> (Vec<MinimalPair>, BuildStats) {
    let mut stats = BuildStats::default();
    let mut pairs = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, rating) in ratings.iter().enumerate() {
        groups.entry(&rating.source_id).or_default().push(idx);
    }
    for indices in groups.values() {
        for &gi in indices {
            for &bi in indices {
                if gi == bi {
                    continue;
                }
                stats.ingest();
                let good = &ratings[gi];
                let bad = &ratings[bi];
                if !latin_script_only(&good.text) || !latin_script_only(&bad.text) {
                    stats.drop_one("foreign_script");
                    continue;
                }
                if u64::from(bad.error_count) < u64::from(good.error_count) + u64::from(min_gap) {
                    stats.drop_one("gap_too_small");
                    continue;
                }
                if good.error_count > max_good_errors {
                    stats.drop_one("too_many_errors_in_good");
                    continue;
                }
                if good.text == bad.text {
                    stats.drop_one("identical_texts");
                    continue;
                }
                stats.emit();
                pairs.push(MinimalPair {
                    good: good.text.clone(),
                    bad: bad.text.clone(),
                    benchmark: TAG_TRANSLATION.to_string(),
                    provenance: [
                        ("source_id".to_string(), good.source_id.clone()),
                        ("good_system".to_string(), good.system.clone()),
                        ("bad_system".to_string(), bad.system.clone()),
                        ("good_errors".to_string(), good.error_count.to_string()),
                        ("bad_errors".to_string(), bad.error_count.to_string()),
                    ]
                    .into(),
                });
            }
        }
    }
    (pairs, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentDoc {
    pub text: String,
    pub label: Sentiment,
    #[serde(default)]
    pub annotator_labels: Vec<Sentiment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentimentLevel {
    Sentence,
    Article,
}

/// Turn labeled texts into pairs by appending a sentiment-bearing sentence:
/// the good side matches the label, the bad side contradicts it. Neutral
/// items and items whose annotators disagree are dropped. Unit: one doc.
pub fn build_sentiment_pairs(
    docs: &[SentimentDoc],
    level: SentimentLevel,
) -> (Vec<MinimalPair>, BuildStats) {
    let tag = match level {
        SentimentLevel::Sentence => TAG_SENTIMENT_SENTENCE,
        SentimentLevel::Article => TAG_SENTIMENT_ARTICLE,
    };
    let mut stats = BuildStats::default();
    let mut pairs = Vec::new();
    for (idx, doc) in docs.iter().enumerate() {
        stats.ingest();
        if doc.annotator_labels.iter().any(|l| *l != doc.label) {
            stats.drop_one("annotator_disagreement");
            continue;
        }
        let (good_suffix, label) = match doc.label {
            Sentiment::Neutral => {
                stats.drop_one("neutral");
                continue;
            }
            Sentiment::Positive => (SUFFIX_POSITIVE, "positive"),
            Sentiment::Negative => (SUFFIX_NEGATIVE, "negative"),
        };
        if doc.text.is_empty() {
            stats.drop_one("empty_text");
            continue;
        }
        let bad_suffix = if good_suffix == SUFFIX_POSITIVE {
            SUFFIX_NEGATIVE
        } else {
            SUFFIX_POSITIVE
        };
        stats.emit();
        pairs.push(MinimalPair {
            good: format!("{}{}", doc.text, good_suffix),
            bad: format!("{}{}", doc.text, bad_suffix),
            benchmark: tag.to_string(),
            provenance: [
                ("record".to_string(), idx.to_string()),
                ("label".to_string(), label.to_string()),
            ]
            .into(),
        });
    }
    (pairs, stats)
}

/// One topic assignment of one article. Multi-topic articles appear as
/// several records sharing the same text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicDoc {
    pub text: String,
    pub topic: String,
}

/// Pair each article's topic statement against statements of curated
/// confusable topics the article is *not* assigned to. Unit: one
/// (record, related-topic) slot; a record whose topic has no entry in the
/// confusion map counts as a single dropped slot.
pub fn build_topic_pairs(
    docs: &[TopicDoc],
    confusions: &BTreeMap<String, Vec<String>>,
) -> (Vec<MinimalPair>, BuildStats) {
    let mut assigned: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for doc in docs {
        assigned.entry(&doc.text).or_default().insert(&doc.topic);
    }
    let mut stats = BuildStats::default();
    let mut pairs = Vec::new();
    for (idx, doc) in docs.iter().enumerate() {
        let Some(related) = confusions.get(&doc.topic) else {
            stats.ingest();
            stats.drop_one("topic_not_in_config");
            continue;
        };
        for confused in related {
            stats.ingest();
            if assigned[doc.text.as_str()].contains(confused.as_str()) {
                stats.drop_one("related_topic_also_assigned");
                continue;
            }
            stats.emit();
            pairs.push(MinimalPair {
                good: topic_statement(&doc.text, &doc.topic),
                bad: topic_statement(&doc.text, confused),
                benchmark: TAG_TOPIC.to_string(),
                provenance: [
                    ("record".to_string(), idx.to_string()),
                    ("topic".to_string(), doc.topic.clone()),
                    ("confused_with".to_string(), confused.clone()),
                ]
                .into(),
            });
        }
    }
    (pairs, stats)
}

/// Build QA pairs by answer transplantation: for sample `s`, every other
/// sample's answer that already occurs inside `s.context`, has the same
/// token length as the real answer, and differs from it becomes a wrong but
/// plausible answer. Unit: one ordered (sample, donor) pair.
pub fn shuffle_qa_pairs(
    samples: &[QaSample],
    tok: &dyn Tokenizer,
) -> Result<(Vec<MinimalPair>, BuildStats), PairgenError> {
    for sample in samples {
        sample.validate()?;
    }
    let token_lens: Vec<usize> = samples.iter().map(|s| tok.token_len(&s.answer)).collect();
    let mut stats = BuildStats::default();
    let mut pairs = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        for (j, donor) in samples.iter().enumerate() {
            if i == j {
                continue;
            }
            stats.ingest();
            let candidate = &donor.answer;
            if !sample.context.contains(candidate.as_str()) {
                stats.drop_one("not_a_span");
                continue;
            }
            if token_lens[j] != token_lens[i] {
                stats.drop_one("token_length_mismatch");
                continue;
            }
            if *candidate == sample.answer {
                stats.drop_one("same_answer");
                continue;
            }
            stats.emit();
            pairs.push(MinimalPair {
                good: qa_prompt(&sample.context, &sample.question, &sample.answer),
                bad: qa_prompt(&sample.context, &sample.question, candidate),
                benchmark: TAG_QA_SHUFFLED.to_string(),
                provenance: [
                    ("id".to_string(), sample.id.clone()),
                    ("donor".to_string(), donor.id.clone()),
                ]
                .into(),
            });
        }
    }
    Ok((pairs, stats))
}

/// Length bookkeeping for externally supplied wrong answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdversarialStats {
    pub build: BuildStats,
    /// Pairs whose wrong answer has exactly the gold answer's token length.
    pub exact_length_matches: u64,
    /// Mean of (wrong − gold) token lengths over pairs whose lengths differ;
    /// 0.0 when every emitted pair matches exactly.
    pub mean_length_deviation: f64,
}

/// Check externally written wrong answers against their samples and emit
/// the surviving pairs. A wrong answer must be a span of the sample's
/// context and differ from the gold answer. Unit: one sample.
pub fn validate_adversarial_answers(
    samples: &[QaSample],
    adversarial: &BTreeMap<String, String>,
    tok: &dyn Tokenizer,
) -> Result<(Vec<MinimalPair>, AdversarialStats), PairgenError> {
    for sample in samples {
        sample.validate()?;
    }
    let mut stats = AdversarialStats::default();
    let mut pairs = Vec::new();
    let mut deviations: Vec<f64> = Vec::new();
    for sample in samples {
        stats.build.ingest();
        let Some(wrong) = adversarial.get(&sample.id) else {
            stats.build.drop_one("missing_adversarial");
            continue;
        };
        if !sample.context.contains(wrong.as_str()) {
            stats.build.drop_one("not_a_span");
            continue;
        }
        if wrong == &sample.answer {
            stats.build.drop_one("equals_gold");
            continue;
        }
        let gold_len = tok.token_len(&sample.answer);
        let wrong_len = tok.token_len(wrong);
        if gold_len == wrong_len {
            stats.exact_length_matches += 1;
        } else {
            deviations.push(wrong_len as f64 - gold_len as f64);
        }
        stats.build.emit();
        pairs.push(MinimalPair {
            good: qa_prompt(&sample.context, &sample.question, &sample.answer),
            bad: qa_prompt(&sample.context, &sample.question, wrong),
            benchmark: TAG_QA_ADVERSARIAL.to_string(),
            provenance: [("id".to_string(), sample.id.clone())].into(),
        });
    }
    if !deviations.is_empty() {
        stats.mean_length_deviation = deviations.iter().sum::<f64>() / deviations.len() as f64;
    }
    Ok((pairs, stats))
}
