use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, RunError};
use crate::embed::tokenize;
use crate::hypformer::{SequenceBatch, TokenTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub utterance: String,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

/// Labelled utterances with a fixed train / held-out assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentDataset {
    pub records: Vec<Record>,
    /// Sorted label names; a label's id is its position.
    pub labels: Vec<String>,
    pub split: Vec<Split>,
}

/// Parses `utterance<TAB>label` lines. Blank lines are skipped.
pub fn parse_tsv(text: &str, origin: &str) -> Result<Vec<Record>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: &str| RunError::Malformed { path: origin.to_string(), line: i + 1, msg: msg.to_string() };
        let (utt, label) = line.split_once('\t').ok_or_else(|| malformed("expected utterance<TAB>label"))?;
        if label.contains('\t') {
            return Err(malformed("more than two columns"));
        }
        let label = label.trim();
        if label.is_empty() {
            return Err(malformed("empty label"));
        }
        if utt.trim().is_empty() {
            return Err(malformed("empty utterance"));
        }
        out.push(Record { utterance: utt.to_string(), label: label.to_string() });
    }
    if out.is_empty() {
        return Err(RunError::EmptyInput(origin.to_string()));
    }
    Ok(out)
}

pub fn to_tsv(records: &[Record]) -> String {
    records.iter().map(|r| format!("{}\t{}\n", r.utterance, r.label)).collect()
}

impl IntentDataset {
    /// Stratified split: each label sends `round`-ed shares of its records to
    /// the held-out side, with remainders distributed so the total matches
    /// `round(n · holdout)`. Every label keeps at least one training record.
    pub fn new(records: Vec<Record>, holdout: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&holdout) {
            return Err(RunError::Config(format!("holdout must lie in [0, 1), got {holdout}")));
        }
        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_label.entry(r.label.as_str()).or_default().push(i);
        }
        let labels: Vec<String> = by_label.keys().map(|s| s.to_string()).collect();
        let target = (records.len() as f64 * holdout).round() as usize;
        let mut take: Vec<usize> = Vec::with_capacity(by_label.len());
        let mut frac: Vec<(f64, usize)> = Vec::new();
        for (k, idx) in by_label.values().enumerate() {
            let share = idx.len() as f64 * holdout;
            let t = (share.floor() as usize).min(idx.len() - 1);
            take.push(t);
            frac.push((share - share.floor(), k));
        }
        frac.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut assigned: usize = take.iter().sum();
        let sizes: Vec<usize> = by_label.values().map(Vec::len).collect();
        for (_, k) in frac.iter().cycle().take(frac.len() * 2) {
            if assigned >= target {
                break;
            }
            if take[*k] + 1 < sizes[*k] {
                take[*k] += 1;
                assigned += 1;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = vec![Split::Train; records.len()];
        for ((label, idx), t) in by_label.iter().zip(&take) {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            for &i in &idx[..*t] {
                split[i] = Split::Holdout;
            }
            if idx.len() == *t {
                return Err(RunError::EmptyLabel(label.to_string()));
            }
        }
        Ok(Self { records, labels, split })
    }

    pub fn load(path: &Path, holdout: f64, seed: u64) -> Result<Self> {
        let text = read_text(path)?;
        Self::new(parse_tsv(&text, &path.display().to_string())?, holdout, seed)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// Character-tokenized sequences of the chosen records, labelled by
    /// `labels` (which may come from a saved model).
    pub fn encode(
        &self,
        idx: &[usize],
        table: &TokenTable,
        labels: &[String],
        max_len: usize,
        keep_whitespace: bool,
    ) -> Result<SequenceBatch> {
        let mut batch = SequenceBatch::default();
        for &i in idx {
            let r = &self.records[i];
            let y = labels
                .iter()
                .position(|l| *l == r.label)
                .ok_or_else(|| RunError::Config(format!("label {:?} is unknown to the model", r.label)))?;
            let toks = tokenize(&r.utterance, keep_whitespace);
            if toks.is_empty() {
                return Err(RunError::Config(format!("utterance {:?} has no tokens", r.utterance)));
            }
            batch.sequences.push(table.encode(&toks, max_len));
            batch.labels.push(y);
        }
        Ok(batch)
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| RunError::Utf8 {
        path: path.display().to_string(),
        offset: e.utf8_error().valid_up_to() as u64,
    })
}

/// Shape of a generated intent dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// How many of `classes` are composites `a+b` of two base classes.
    pub composites: usize,
    pub per_class: usize,
    /// Total rows, spread as evenly as possible; `K · per_class` when unset.
    pub rows: Option<usize>,
    pub vocab_size: usize,
    /// Noise tokens per utterance are drawn from `0..=max_noise`.
    pub max_noise: usize,
    pub seed: u64,
}

/// First code point of the generated alphabet (CJK unified ideographs).
const ALPHABET_START: u32 = 0x4E00;

fn glyph(i: usize) -> String {
    char::from_u32(ALPHABET_START + i as u32).expect("inside the CJK block").to_string()
}

/// Intent data built from per-class signature tokens. Base class `i` owns 2 to
/// 4 signature tokens; a composite `a+b` mixes tokens of both parents; noise
/// tokens come from a pool disjoint from every signature.
pub fn generate_synthetic_intents(synth: &SyntheticSpec) -> Result<Vec<Record>> {
    let k = synth.classes;
    if k < 2 {
        return Err(RunError::Config("at least two classes are required".into()));
    }
    let base = k - synth.composites.min(k);
    let max_pairs = base * base.saturating_sub(1) / 2;
    if synth.composites > max_pairs || base < 2 && synth.composites > 0 {
        return Err(RunError::Config(format!("{} composites need more than {base} base classes", synth.composites)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(synth.seed);
    let sizes: Vec<usize> = (0..base).map(|_| rng.random_range(2..=4)).collect();
    let needed = sizes.iter().sum::<usize>() + usize::from(synth.max_noise > 0);
    if synth.vocab_size < needed {
        return Err(RunError::VocabTooSmall { needed, available: synth.vocab_size });
    }
    let mut next = 0;
    let signatures: Vec<Vec<String>> = sizes
        .iter()
        .map(|&s| {
            let sig = (next..next + s).map(glyph).collect();
            next += s;
            sig
        })
        .collect();
    let noise: Vec<String> = (next..synth.vocab_size).map(glyph).collect();
    let mut pairs: Vec<(usize, usize)> = (0..base).flat_map(|a| (a + 1..base).map(move |b| (a, b))).collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(synth.composites);
    pairs.sort();

    let total = synth.rows.unwrap_or(k * synth.per_class);
    let mut out = Vec::with_capacity(total);
    for class in 0..k {
        let count = total / k + usize::from(class < total % k);
        let parents: Vec<usize> = if class < base { vec![class] } else { vec![pairs[class - base].0, pairs[class - base].1] };
        let label = parents.iter().map(usize::to_string).collect::<Vec<_>>().join("+");
        for _ in 0..count {
            let mut toks: Vec<String> = Vec::new();
            for &p in &parents {
                let sig = &signatures[p];
                let lo = if parents.len() == 1 { 2 } else { 1 };
                let n = rng.random_range(lo..=sig.len());
                toks.extend(sig.choose_multiple(&mut rng, n).cloned());
            }
            if !noise.is_empty() {
                for _ in 0..rng.random_range(0..=synth.max_noise) {
                    toks.push(noise.choose(&mut rng).expect("non-empty").clone());
                }
            }
            toks.shuffle(&mut rng);
            out.push(Record { utterance: toks.concat(), label: label.clone() });
        }
    }
    Ok(out)
}

/// Signature tokens of each base class, as produced for `synth`.
pub fn synthetic_signatures(synth: &SyntheticSpec) -> Vec<Vec<String>> {
    let base = synth.classes - synth.composites.min(synth.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(synth.seed);
    let sizes: Vec<usize> = (0..base).map(|_| rng.random_range(2..=4)).collect();
    let mut next = 0;
    sizes
        .iter()
        .map(|&s| {
            let sig = (next..next + s).map(glyph).collect();
            next += s;
            sig
        })
        .collect()
}
