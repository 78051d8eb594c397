//! Character n-gram scorer with add-alpha smoothing.
//!
//! Tokens are Unicode scalar values. The effective vocabulary is the set of
//! distinct corpus characters plus one reserved slot for unseen characters,
//! so every conditional distribution sums to one over seen characters plus
//! the unseen slot. As alpha approaches zero the model approaches the
//! unsmoothed corpus frequencies and the unseen slot loses all mass.

use std::collections::{BTreeMap, BTreeSet};

use super::{Score, Scorer, ScoringError};

/// Build the scorer from a training corpus. `order` 1 scores each character
/// unconditionally; order 2 conditions on the previous character, with a
/// begin-of-text context for the first one.
pub fn ngram_reference_scorer(
    corpus: &[String],
    order: u32,
    smoothing_alpha: f64,
) -> Result<NgramScorer, ScoringError> {
    if corpus.is_empty() {
        return Err(ScoringError::EmptyCorpus);
    }
    if !(order == 1 || order == 2) {
        return Err(ScoringError::BadOrder { order });
    }
    if !(smoothing_alpha > 0.0) || !smoothing_alpha.is_finite() {
        return Err(ScoringError::BadAlpha {
            alpha: smoothing_alpha,
        });
    }
    let mut vocab: BTreeSet<char> = BTreeSet::new();
    let mut unigram: BTreeMap<char, u64> = BTreeMap::new();
    let mut total: u64 = 0;
    // Bigram context None marks begin-of-text.
    let mut bigram: BTreeMap<(Option<char>, char), u64> = BTreeMap::new();
    let mut context: BTreeMap<Option<char>, u64> = BTreeMap::new();
    for text in corpus {
        let mut prev: Option<char> = None;
        for (i, c) in text.chars().enumerate() {
            vocab.insert(c);
            *unigram.entry(c).or_insert(0) += 1;
            total += 1;
            let ctx = if i == 0 { None } else { prev };
            *bigram.entry((ctx, c)).or_insert(0) += 1;
            *context.entry(ctx).or_insert(0) += 1;
            prev = Some(c);
        }
    }
    Ok(NgramScorer {
        order,
        alpha: smoothing_alpha,
        vocab_plus_unseen: vocab.len() as u64 + 1,
        unigram,
        total,
        bigram,
        context,
    })
}

#[derive(Debug, Clone)]
pub struct NgramScorer {
    order: u32,
    alpha: f64,
    /// Distinct corpus characters plus the reserved unseen slot.
    vocab_plus_unseen: u64,
    unigram: BTreeMap<char, u64>,
    total: u64,
    bigram: BTreeMap<(Option<char>, char), u64>,
    context: BTreeMap<Option<char>, u64>,
}

impl NgramScorer {
    fn log_p(&self, ctx: Option<char>, c: char) -> f64 {
        let v = self.vocab_plus_unseen as f64;
        let (count, ctx_count) = match self.order {
            1 => (
                self.unigram.get(&c).copied().unwrap_or(0),
                self.total,
            ),
            _ => (
                self.bigram.get(&(ctx, c)).copied().unwrap_or(0),
                self.context.get(&ctx).copied().unwrap_or(0),
            ),
        };
        let p = (count as f64 + self.alpha) / (ctx_count as f64 + self.alpha * v);
        p.ln()
    }
}

impl Scorer for NgramScorer {
    fn score(&self, text: &str) -> Result<Score, ScoringError> {
        let mut logprob = 0.0f64;
        let mut tokens = 0u64;
        let mut prev: Option<char> = None;
        for (i, c) in text.chars().enumerate() {
            let ctx = if i == 0 { None } else { prev };
            logprob += self.log_p(ctx, c);
            tokens += 1;
            prev = Some(c);
        }
        if tokens == 0 {
            return Err(ScoringError::EmptyText);
        }
        Ok(Score { logprob, tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_one_unigram_probability_on_tiny_corpus() {
        // Corpus "aa": count(a)=2, total=2, vocabulary {a} plus the unseen
        // slot → p(a) = (2+1)/(2+1·2) = 3/4.
        let scorer = ngram_reference_scorer(&["aa".to_string()], 1, 1.0).unwrap();
        let score = scorer.score("a").unwrap();
        assert!((score.logprob - (0.75f64).ln()).abs() < 1e-12);
        assert_eq!(score.tokens, 1);
    }

    #[test]
    fn unseen_character_gets_the_reserved_slot() {
        let scorer = ngram_reference_scorer(&["aa".to_string()], 1, 1.0).unwrap();
        // p(unseen) = 1/(2+2) = 1/4.
        let score = scorer.score("z").unwrap();
        assert!((score.logprob - (0.25f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bigram_uses_begin_of_text_context() {
        // Corpus "ab": V = 3 (a, b, unseen). p(a|BOS) = (1+1)/(1+3) = 1/2,
        // p(b|a) = (1+1)/(1+3) = 1/2 → total ln(1/4).
        let scorer = ngram_reference_scorer(&["ab".to_string()], 2, 1.0).unwrap();
        let score = scorer.score("ab").unwrap();
        assert!((score.logprob - (0.25f64).ln()).abs() < 1e-12);
        assert_eq!(score.tokens, 2);
    }

    #[test]
    fn empty_text_is_rejected() {
        let scorer = ngram_reference_scorer(&["abc".to_string()], 1, 1.0).unwrap();
        assert!(matches!(scorer.score(""), Err(ScoringError::EmptyText)));
    }

    #[test]
    fn scoring_is_deterministic() {
        let corpus = vec!["tann gamli maðurin".to_string(), "gamli báturin".to_string()];
        let scorer = ngram_reference_scorer(&corpus, 2, 0.5).unwrap();
        let a = scorer.score("gamli maðurin").unwrap();
        let b = scorer.score("gamli maðurin").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn construction_validates_arguments() {
        assert!(matches!(
            ngram_reference_scorer(&[], 1, 1.0),
            Err(ScoringError::EmptyCorpus)
        ));
        assert!(matches!(
            ngram_reference_scorer(&["a".to_string()], 3, 1.0),
            Err(ScoringError::BadOrder { order: 3 })
        ));
        assert!(matches!(
            ngram_reference_scorer(&["a".to_string()], 1, 0.0),
            Err(ScoringError::BadAlpha { .. })
        ));
    }

    #[test]
    fn probabilities_sum_to_one_over_vocab_and_unseen() {
        let corpus = vec!["abab".to_string(), "bcb".to_string()];
        for order in [1u32, 2] {
            let scorer = ngram_reference_scorer(&corpus, order, 0.7).unwrap();
            for ctx in [None, Some('a'), Some('b'), Some('z')] {
                if order == 1 && ctx.is_some() {
                    continue;
                }
                let seen: f64 = ['a', 'b', 'c']
                    .iter()
                    .map(|&c| scorer.log_p(ctx, c).exp())
                    .sum();
                // One unseen slot shares the remaining mass.
                let unseen = scorer.log_p(ctx, 'z').exp();
                assert!(
                    (seen + unseen - 1.0).abs() < 1e-12,
                    "order {order}, ctx {ctx:?}: {}",
                    seen + unseen
                );
            }
        }
    }
}
