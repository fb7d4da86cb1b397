//! Answer correctness under the token-F1 rule.
//!
//! A produced answer counts as correct when its token F1 against some member
//! of a gold synonym set reaches the threshold (default 0.55), after both
//! sides go through the same normalization.

use std::collections::{BTreeSet, HashMap};

use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::corpus::SynonymSet;
use crate::error::{Error, Result};

pub const DEFAULT_F1_THRESHOLD: f64 = 0.55;

#[derive(Debug, Clone)]
pub struct MatchConfig {
    /// Minimum token F1 for a match, in [0, 1].
    pub f1_threshold: f64,
    /// Tokens dropped during normalization.
    pub article_stopwords: BTreeSet<String>,
    /// Remove parenthesized spans (content included) before tokenizing.
    pub strip_parentheticals: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            f1_threshold: DEFAULT_F1_THRESHOLD,
            article_stopwords: ["a", "an", "the"].iter().map(|s| s.to_string()).collect(),
            strip_parentheticals: true,
        }
    }
}

impl MatchConfig {
    pub fn with_threshold(f1_threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&f1_threshold) || f1_threshold.is_nan() {
            return Err(Error::Config(format!(
                "f1 threshold must be in [0, 1], got {f1_threshold}"
            )));
        }
        Ok(MatchConfig { f1_threshold, ..MatchConfig::default() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub matched: bool,
    /// Index of the matched synonym set; `None` when unmatched.
    pub gold_index: Option<usize>,
    /// Best token F1 over all synonym members.
    pub best_f1: f64,
}

fn is_punct_or_symbol(c: char) -> bool {
    matches!(
        c.general_category_group(),
        GeneralCategoryGroup::Punctuation | GeneralCategoryGroup::Symbol
    )
}

fn strip_parenthesized_spans(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

/// NFC → lowercase → drop parenthesized spans → strip punctuation/symbols →
/// drop articles → collapse whitespace.
pub fn normalize_for_match(answer: &str, cfg: &MatchConfig) -> String {
    let s: String = answer.nfc().collect::<String>().to_lowercase();
    let s = if cfg.strip_parentheticals { strip_parenthesized_spans(&s) } else { s };
    let s: String = s.chars().filter(|c| !is_punct_or_symbol(*c)).collect();
    s.split_whitespace()
        .filter(|t| !cfg.article_stopwords.contains(*t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token F1 over whitespace tokens with multiset intersection.
///
/// Both empty → 1.0; exactly one empty → 0.0. Inputs are expected to be
/// match-normalized already.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut budget: HashMap<&str, usize> = HashMap::new();
    for t in &ta {
        *budget.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &tb {
        if let Some(n) = budget.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / ta.len() as f64;
    let recall = common as f64 / tb.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best F1 over all synonym members of all sets; matched iff it reaches the
/// threshold. Ties between sets break toward the lowest index.
pub fn match_gold(answer: &str, gold: &[SynonymSet], cfg: &MatchConfig) -> MatchResult {
    let norm = normalize_for_match(answer, cfg);
    let mut best_f1 = 0.0f64;
    let mut best_idx: Option<usize> = None;
    for (i, set) in gold.iter().enumerate() {
        for member in &set.members {
            let f1 = token_f1(&norm, &normalize_for_match(member, cfg));
            if f1 > best_f1 {
                best_f1 = f1;
                best_idx = Some(i);
            }
        }
    }
    let matched = best_idx.is_some() && best_f1 >= cfg.f1_threshold;
    MatchResult { matched, gold_index: if matched { best_idx } else { None }, best_f1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(members: &[&str]) -> SynonymSet {
        SynonymSet { members: members.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn normalize_drops_parenthetical_and_article() {
        let cfg = MatchConfig::default();
        assert_eq!(
            normalize_for_match("The Antarctic Ocean (Southern Ocean)", &cfg),
            "antarctic ocean"
        );
    }

    #[test]
    fn normalize_strips_punctuation_and_whitespace() {
        let cfg = MatchConfig::default();
        assert_eq!(normalize_for_match("  Mars. ", &cfg), "mars");
    }

    #[test]
    fn normalize_all_stopwords_is_empty() {
        let cfg = MatchConfig::default();
        assert_eq!(normalize_for_match("a an the", &cfg), "");
    }

    #[test]
    fn normalize_is_idempotent() {
        let cfg = MatchConfig::default();
        let inputs = ["The Antarctic Ocean (Southern Ocean)", "  Mars. ", "a an the", "New  York"];
        for s in inputs {
            let once = normalize_for_match(s, &cfg);
            assert_eq!(normalize_for_match(&once, &cfg), once, "input {s:?}");
        }
    }

    #[test]
    fn f1_partial_overlap() {
        // precision 1/2, recall 1/1 → 2/3
        let f1 = token_f1("amazon river", "amazon");
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12, "got {f1}");
    }

    #[test]
    fn f1_identity_and_disjoint() {
        assert_eq!(token_f1("mars", "mars"), 1.0);
        assert_eq!(token_f1("mars", "venus"), 0.0);
    }

    #[test]
    fn f1_empty_rules() {
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("mars", ""), 0.0);
        assert_eq!(token_f1("", "mars"), 0.0);
    }

    #[test]
    fn f1_multiset_not_set() {
        // "b b" vs "b": common = 1 (multiset), precision 1/2, recall 1 → 2/3
        let f1 = token_f1("b b", "b");
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_symmetric_and_bounded_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vocab = ["red", "blue", "deep", "sea", "north", "york", "bay"];
        for _ in 0..500 {
            let mk = |rng: &mut ChaCha8Rng| {
                let n = rng.gen_range(0..6);
                (0..n).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let fab = token_f1(&a, &b);
            let fba = token_f1(&b, &a);
            assert_eq!(fab.to_bits(), fba.to_bits(), "asymmetric on {a:?} {b:?}");
            assert!((0.0..=1.0).contains(&fab));
            let mut sa: Vec<&str> = a.split_whitespace().collect();
            let mut sb: Vec<&str> = b.split_whitespace().collect();
            sa.sort_unstable();
            sb.sort_unstable();
            assert_eq!(fab == 1.0, sa == sb, "f1=1 iff equal multisets: {a:?} {b:?}");
        }
    }

    #[test]
    fn synonym_member_matches_exactly() {
        let gold = vec![set(&["Antarctic Ocean", "Southern Ocean"])];
        let r = match_gold("Southern Ocean", &gold, &MatchConfig::default());
        assert!(r.matched);
        assert_eq!(r.gold_index, Some(0));
        assert_eq!(r.best_f1, 1.0);
    }

    #[test]
    fn pluto_misses_eight_planet_gold() {
        let gold: Vec<SynonymSet> =
            ["Mercury", "Venus", "Earth", "Mars", "Jupiter", "Saturn", "Uranus", "Neptune"]
                .iter()
                .map(|p| set(&[p]))
                .collect();
        let r = match_gold("Pluto", &gold, &MatchConfig::default());
        assert!(!r.matched);
        assert_eq!(r.gold_index, None);
    }

    #[test]
    fn partial_overlap_clears_default_threshold() {
        let gold = vec![set(&["amazon"])];
        let r = match_gold("amazon river", &gold, &MatchConfig::default());
        assert!(r.matched);
        assert!((r.best_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lowering_threshold_never_unmatches() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let vocab = ["alpha", "beta", "gamma", "delta", "eps"];
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| {
                let n = rng.gen_range(1..4);
                (0..n).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
            };
            let answer = mk(&mut rng);
            let gold = vec![set(&[mk(&mut rng).as_str()]), set(&[mk(&mut rng).as_str()])];
            let hi = MatchConfig::with_threshold(0.8).unwrap();
            let lo = MatchConfig::with_threshold(0.3).unwrap();
            let r_hi = match_gold(&answer, &gold, &hi);
            let r_lo = match_gold(&answer, &gold, &lo);
            if r_hi.matched {
                assert!(r_lo.matched, "lowering threshold unmatched {answer:?}");
            }
        }
    }

    // Brute-force oracle: recompute best F1 from scratch with independent
    // token counting (sorted-merge intersection instead of hash counting).
    fn oracle_best_f1(answer: &str, gold: &[SynonymSet], cfg: &MatchConfig) -> f64 {
        let na = normalize_for_match(answer, cfg);
        let ta: Vec<&str> = na.split_whitespace().collect();
        let mut best = 0.0f64;
        for s in gold {
            for m in &s.members {
                let nb = normalize_for_match(m, cfg);
                let tb: Vec<&str> = nb.split_whitespace().collect();
                let f1 = if ta.is_empty() && tb.is_empty() {
                    1.0
                } else if ta.is_empty() || tb.is_empty() {
                    0.0
                } else {
                    let mut sa = ta.clone();
                    let mut sb = tb.clone();
                    sa.sort_unstable();
                    sb.sort_unstable();
                    let (mut i, mut j, mut common) = (0usize, 0usize, 0usize);
                    while i < sa.len() && j < sb.len() {
                        match sa[i].cmp(sb[j]) {
                            std::cmp::Ordering::Less => i += 1,
                            std::cmp::Ordering::Greater => j += 1,
                            std::cmp::Ordering::Equal => {
                                common += 1;
                                i += 1;
                                j += 1;
                            }
                        }
                    }
                    if common == 0 {
                        0.0
                    } else {
                        let precision = common as f64 / sa.len() as f64;
                        let recall = common as f64 / sb.len() as f64;
                        2.0 * precision * recall / (precision + recall)
                    }
                };
                if f1 > best {
                    best = f1;
                }
            }
        }
        best
    }

    #[test]
    fn oracle_agreement_bit_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vocab =
            ["river", "amazon", "nile", "blue", "mountain", "the", "sea", "red", "bay", "lake"];
        let cfg = MatchConfig::default();
        for _ in 0..1000 {
            let mk = |rng: &mut ChaCha8Rng| {
                let n = rng.gen_range(1..5);
                (0..n).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
            };
            let answer = mk(&mut rng);
            let n_sets = rng.gen_range(1..4);
            let gold: Vec<SynonymSet> = (0..n_sets)
                .map(|_| {
                    let n_mem = rng.gen_range(1..3);
                    SynonymSet { members: (0..n_mem).map(|_| mk(&mut rng)).collect() }
                })
                .collect();
            let got = match_gold(&answer, &gold, &cfg);
            let want = oracle_best_f1(&answer, &gold, &cfg);
            assert_eq!(got.best_f1.to_bits(), want.to_bits(), "answer {answer:?} gold {gold:?}");
            assert_eq!(got.matched, want >= cfg.f1_threshold);
        }
    }
}
