use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{EmbedError, Result};

/// Splits text into one token per Unicode scalar value. Whitespace is
/// dropped unless `keep_whitespace` is set.
pub fn tokenize(text: &str, keep_whitespace: bool) -> Vec<String> {
    text.chars()
        .filter(|c| keep_whitespace || !c.is_whitespace())
        .map(String::from)
        .collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect()
}

/// Token inventory with counts and a smoothed unigram noise distribution.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

/// Counts tokens, drops those seen fewer than `min_count` times and builds
/// the noise table from `count^alpha`. Ids are assigned by descending count,
/// ties broken by token order, so the result does not depend on hash order.
pub fn build_vocab<I, S>(stream: I, min_count: u64, alpha: f64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for tok in stream {
        *counts.entry(tok.as_ref().to_string()).or_insert(0) += 1;
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
    if entries.is_empty() {
        return Err(EmbedError::EmptyVocabulary);
    }
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_counts(entries, alpha)
}

impl Vocabulary {
    pub fn from_counts(entries: Vec<(String, u64)>, alpha: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(EmbedError::EmptyVocabulary);
        }
        let weights: Vec<f64> = entries.iter().map(|(_, c)| (*c as f64).powf(alpha)).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sampler = WeightedIndex::new(&weights).map_err(|_| EmbedError::EmptyVocabulary)?;
        let tokens: Vec<String> = entries.iter().map(|(t, _)| t.clone()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let counts = entries.into_iter().map(|(_, c)| c).collect();
        Ok(Self { tokens, index, counts, probs, sampler })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// Noise probability of each id.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.sampler.sample(rng)
    }

    /// Maps tokens to ids, skipping anything outside the vocabulary.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_and_filtering() {
        let words = ["a", "b", "a"];
        let v = build_vocab(words, 1, 0.75).unwrap();
        assert_eq!(v.tokens(), &["a", "b"]);
        assert_eq!((v.count(0), v.count(1)), (2, 1));
        let v = build_vocab(words, 2, 0.75).unwrap();
        assert_eq!(v.tokens(), &["a"]);
        assert!(matches!(build_vocab(words, 3, 0.75), Err(EmbedError::EmptyVocabulary)));
        assert!(build_vocab(Vec::<String>::new(), 1, 0.75).is_err());
    }

    #[test]
    fn noise_table() {
        let v = build_vocab(["a", "a", "a", "b"], 1, 1.0).unwrap();
        assert_eq!(v.probabilities(), &[0.75, 0.25]);
        let v = build_vocab("the quick brown fox jumps over the lazy dog".split(' '), 1, 0.75).unwrap();
        assert!((v.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn character_tokens() {
        assert_eq!(tokenize("游泳", false), vec!["游", "泳"]);
        assert_eq!(tokenize("a b\n", false), vec!["a", "b"]);
        let s = "mixed 文本 with\ttabs\u{1F600}";
        assert_eq!(detokenize(&tokenize(s, true)), s);
    }
}
