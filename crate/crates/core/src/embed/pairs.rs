use rand::Rng;

use super::Vocabulary;

/// Attempts at drawing a negative distinct from the positive context before
/// the collision is kept.
pub const NEGATIVE_RETRIES: usize = 10;

/// A centre token, its observed context, and `m` noise tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub center: usize,
    pub context: usize,
    pub negatives: Vec<usize>,
}

impl TrainingPair {
    /// Context rows with their labels: the positive first, then negatives.
    pub fn samples(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        std::iter::once((self.context, 1.0)).chain(self.negatives.iter().map(|&w| (w, 0.0)))
    }
}

fn draw_negative(vocab: &Vocabulary, avoid: usize, rng: &mut impl Rng) -> usize {
    let mut w = vocab.sample(rng);
    for _ in 0..NEGATIVE_RETRIES {
        if w != avoid {
            break;
        }
        w = vocab.sample(rng);
    }
    w
}

/// Every (centre, context) pair within `window` positions, in corpus order,
/// each with `negatives` noise draws.
pub fn generate_pairs(
    tokens: &[usize],
    window: usize,
    negatives: usize,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Vec<TrainingPair> {
    assert!(window >= 1, "window radius must be at least 1");
    let mut out = Vec::with_capacity(tokens.len() * 2 * window);
    for (k, &center) in tokens.iter().enumerate() {
        let lo = k.saturating_sub(window);
        let hi = (k + window).min(tokens.len() - 1);
        for j in lo..=hi {
            if j == k {
                continue;
            }
            let context = tokens[j];
            let negs = (0..negatives).map(|_| draw_negative(vocab, context, rng)).collect();
            out.push(TrainingPair { center, context, negatives: negs });
        }
    }
    out
}
