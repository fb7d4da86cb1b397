//! Ordering and degeneracy metrics: ShiftScore with permutation baselines,
//! DiversityScore curves, and the sliding-window verbatim-recall scan.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::LabeledGeneration;

/// Ordered fact labels f_1..f_n with values in {1, 2, 3}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactLabelSeq {
    values: Vec<u8>,
}

impl FactLabelSeq {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("fact label sequence".into()));
        }
        if let Some(v) = values.iter().find(|v| !(1..=3).contains(*v)) {
            return Err(Error::Config(format!("fact label {v} outside {{1,2,3}}")));
        }
        Ok(FactLabelSeq { values })
    }

    pub fn from_generation(gen: &LabeledGeneration) -> Result<Self> {
        Self::new(gen.label_values())
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which adjacent-pair inequality counts as "ordered".
///
/// The fallback hierarchy (correct=3 first, repetition=1 last) makes a
/// well-ordered generation non-increasing, so that is the default;
/// `PaperPrinted` counts non-decreasing pairs instead. The two are exact
/// mirrors: NonIncreasing(seq) = PaperPrinted(reverse(seq)).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    NonIncreasing,
    PaperPrinted,
}

impl Direction {
    pub fn from_cli_name(name: &str) -> Result<Self> {
        match name {
            "nonincreasing" => Ok(Direction::NonIncreasing),
            "paper" => Ok(Direction::PaperPrinted),
            other => Err(Error::Config(format!(
                "unknown direction `{other}` (expected nonincreasing|paper)"
            ))),
        }
    }
}

/// Fraction of adjacent pairs consistent with the fallback ordering.
pub fn shift_score(seq: &FactLabelSeq, direction: Direction) -> Result<f64> {
    shift_score_ints(&seq.values.iter().map(|&v| v as i64).collect::<Vec<_>>(), direction)
}

/// Same score over arbitrary integer labels; only their order matters.
pub fn shift_score_ints(values: &[i64], direction: Direction) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::ShortSequence(n));
    }
    let ordered = values
        .windows(2)
        .filter(|w| match direction {
            Direction::NonIncreasing => w[1] <= w[0],
            Direction::PaperPrinted => w[1] >= w[0],
        })
        .count();
    Ok(ordered as f64 / (n - 1) as f64)
}

/// ShiftScores of `n_perm` uniform random permutations of the sequence.
/// Deterministic under a fixed seed.
pub fn permutation_baseline(
    seq: &FactLabelSeq,
    n_perm: usize,
    seed: u64,
    direction: Direction,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permutation_baseline_with_rng(seq, n_perm, &mut rng, direction)
}

/// Variant that shares one RNG stream across many sequences.
pub fn permutation_baseline_with_rng(
    seq: &FactLabelSeq,
    n_perm: usize,
    rng: &mut ChaCha8Rng,
    direction: Direction,
) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::ShortSequence(seq.len()));
    }
    let original: Vec<i64> = seq.values.iter().map(|&v| v as i64).collect();
    let mut work = original.clone();
    let mut out = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        work.copy_from_slice(&original);
        work.shuffle(rng);
        out.push(shift_score_ints(&work, direction)?);
    }
    Ok(out)
}

// ── DiversityScore ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    ModelTokenIds,
    WordLevel,
}

/// Token units for diversity and verbatim-recall metrics: model token ids
/// when the transcript carries them, word-level units otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TokenSequence {
    Ids(Vec<u32>),
    Words(Vec<String>),
}

impl TokenSequence {
    /// Word-level fallback: lowercased maximal alphanumeric runs.
    pub fn words_from_text(text: &str) -> Self {
        let mut words = Vec::new();
        let mut cur = String::new();
        for c in text.chars() {
            if c.is_alphanumeric() {
                for lc in c.to_lowercase() {
                    cur.push(lc);
                }
            } else if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        TokenSequence::Words(words)
    }

    pub fn len(&self) -> usize {
        match self {
            TokenSequence::Ids(v) => v.len(),
            TokenSequence::Words(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unit_kind(&self) -> UnitKind {
        match self {
            TokenSequence::Ids(_) => UnitKind::ModelTokenIds,
            TokenSequence::Words(_) => UnitKind::WordLevel,
        }
    }

    pub fn prefix(&self, len: usize) -> TokenSequence {
        match self {
            TokenSequence::Ids(v) => TokenSequence::Ids(v[..len.min(v.len())].to_vec()),
            TokenSequence::Words(v) => TokenSequence::Words(v[..len.min(v.len())].to_vec()),
        }
    }
}

/// Distinct tokens divided by sequence length: ≈1 for fresh text, →0 for
/// loops.
pub fn diversity_score(x: &TokenSequence) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyInput("token sequence".into()));
    }
    let distinct = match x {
        TokenSequence::Ids(v) => v.iter().collect::<HashSet<_>>().len(),
        TokenSequence::Words(v) => v.iter().collect::<HashSet<_>>().len(),
    };
    Ok(distinct as f64 / x.len() as f64)
}

/// DiversityScore over prefixes of length step, 2·step, …, and finally n.
pub fn diversity_curve(x: &TokenSequence, step: usize) -> Result<Vec<(usize, f64)>> {
    if step == 0 {
        return Err(Error::Config("diversity curve step must be >= 1".into()));
    }
    let n = x.len();
    if n < step {
        return Err(Error::EmptyInput(format!(
            "sequence of {n} tokens is shorter than curve step {step}"
        )));
    }
    let mut out = Vec::new();
    match x {
        TokenSequence::Ids(v) => {
            let mut seen = HashSet::new();
            for (i, t) in v.iter().enumerate() {
                seen.insert(*t);
                let len = i + 1;
                if len % step == 0 || len == n {
                    out.push((len, seen.len() as f64 / len as f64));
                }
            }
        }
        TokenSequence::Words(v) => {
            let mut seen = HashSet::new();
            for (i, t) in v.iter().enumerate() {
                seen.insert(t.as_str());
                let len = i + 1;
                if len % step == 0 || len == n {
                    out.push((len, seen.len() as f64 / len as f64));
                }
            }
        }
    }
    Ok(out)
}

// ── Verbatim-recall scan ────────────────────────────────────────────────────

/// Exact membership over all corpus windows of the configured lengths
/// (default {8, 16}).
#[derive(Debug, Clone)]
pub struct NgramIndex {
    window_lengths: BTreeSet<usize>,
    id_windows: HashSet<Vec<u32>>,
    word_windows: HashSet<Vec<String>>,
    pub corpus_id: String,
}

pub fn default_window_lengths() -> BTreeSet<usize> {
    [8usize, 16].into_iter().collect()
}

pub fn build_ngram_index(
    corpus: &[TokenSequence],
    window_lengths: &BTreeSet<usize>,
    corpus_id: &str,
) -> Result<NgramIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("n-gram corpus".into()));
    }
    if window_lengths.is_empty() {
        return Err(Error::EmptyInput("window length set".into()));
    }
    if window_lengths.contains(&0) {
        return Err(Error::Config("window length 0 is not valid".into()));
    }
    let mut index = NgramIndex {
        window_lengths: window_lengths.clone(),
        id_windows: HashSet::new(),
        word_windows: HashSet::new(),
        corpus_id: corpus_id.to_string(),
    };
    for seq in corpus {
        for &len in window_lengths {
            match seq {
                TokenSequence::Ids(v) => {
                    for w in v.windows(len) {
                        index.id_windows.insert(w.to_vec());
                    }
                }
                TokenSequence::Words(v) => {
                    for w in v.windows(len) {
                        index.word_windows.insert(w.to_vec());
                    }
                }
            }
        }
    }
    Ok(index)
}

impl NgramIndex {
    pub fn window_lengths(&self) -> &BTreeSet<usize> {
        &self.window_lengths
    }

    pub fn contains_window(&self, x: &TokenSequence, start: usize, len: usize) -> bool {
        match x {
            TokenSequence::Ids(v) => self.id_windows.contains(&v[start..start + len]),
            TokenSequence::Words(v) => self.word_windows.contains(&v[start..start + len]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub start: usize,
    pub length: usize,
    pub window_length: usize,
}

/// Report every window of `x` present in the index, with overlapping or
/// adjacent hits of one window length merged into maximal spans.
pub fn verbatim_scan(x: &TokenSequence, idx: &NgramIndex) -> Vec<MatchSpan> {
    let n = x.len();
    let mut spans = Vec::new();
    for &len in &idx.window_lengths {
        if n < len {
            continue;
        }
        let mut current: Option<(usize, usize)> = None; // (start, end)
        for start in 0..=n - len {
            if !idx.contains_window(x, start, len) {
                continue;
            }
            let end = start + len;
            match current {
                Some((s, e)) if start <= e => current = Some((s, e.max(end))),
                Some((s, e)) => {
                    spans.push(MatchSpan { start: s, length: e - s, window_length: len });
                    current = Some((start, end));
                }
                None => current = Some((start, end)),
            }
        }
        if let Some((s, e)) = current {
            spans.push(MatchSpan { start: s, length: e - s, window_length: len });
        }
    }
    spans
}
