//! Completion parsing: ordered answer extraction and ending classification.
//!
//! The cascade tries, in order: a numbered-list scan tolerant of missing or
//! extra newlines, a comma split when the first sentence holds five or more
//! commas, and finally one answer per short non-empty line. Answers stop at
//! the first structure violation or topic-change trigger.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// How a generation stopped producing list items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndingKind {
    /// Produced every requested answer.
    Exhausted,
    Eos,
    TopicChange,
    BadFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ending {
    pub kind: EndingKind,
    /// The matched trigger text; empty for `Exhausted` and `Eos`.
    pub evidence: String,
}

impl Ending {
    fn new(kind: EndingKind, evidence: impl Into<String>) -> Self {
        Ending { kind, evidence: evidence.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedList {
    /// Raw surface forms in generation order, whitespace-trimmed.
    pub answers: Vec<String>,
    pub ending: Ending,
    /// `requested_count - |answers|`, attributed to the ending.
    pub missing_count: u32,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Lines at or above this many chars are no longer "short" for the
    /// newline fallback and count as a structure violation.
    pub short_line_max: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { short_line_max: 80 }
    }
}

fn marker_re() -> &'static Regex {
    // an item marker: a small integer followed by "." or ")", preceded by
    // start-of-text or whitespace (newlines may be missing entirely)
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s)(\d{1,4})[.)]").unwrap())
}

fn leading_one_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*1[.)]").unwrap())
}

fn leading_list_number(line: &str) -> Option<u32> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^(\d{1,4})\s*[.)]").unwrap());
    re.captures(line.trim_start()).and_then(|c| c[1].parse().ok())
}

/// Find the first line at or after `start_index` that abandons the current
/// list: either it begins with "The following", or it restarts numbering at
/// "1." after a higher item number was already seen.
pub fn detect_topic_change(lines: &[&str], start_index: usize) -> Option<(usize, String)> {
    let mut max_seen: u32 = 0;
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if i >= start_index {
            if line.starts_with("The following") {
                return Some((i, line.to_string()));
            }
            if let Some(n) = leading_list_number(line) {
                if n == 1 && max_seen > 1 {
                    return Some((i, line.to_string()));
                }
            }
        }
        if let Some(n) = leading_list_number(line) {
            max_seen = max_seen.max(n);
        }
    }
    None
}

/// Collapse whitespace runs to single spaces, trim, and lowercase. Used to
/// detect repeated answers.
pub fn normalize_for_repetition(answer: &str) -> String {
    answer.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Whitespace-only variant that keeps case, for callers that want
/// case-variant answers to count as distinct facts.
pub fn normalize_for_repetition_strict(answer: &str) -> String {
    answer.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One answer segment between two item markers: the first non-empty line is
/// the answer; any later non-empty line violates the structure.
fn take_answer(segment: &str) -> (Option<String>, Option<String>) {
    let mut answer = None;
    for line in segment.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if answer.is_none() {
            answer = Some(t.to_string());
        } else {
            return (answer, Some(t.to_string()));
        }
    }
    (answer, None)
}

/// Numbered-list scan. Applies when the text opens with a regurgitated "1."
/// marker or contains a "2." marker; the prompt's own "1." means the first
/// answer normally carries no number.
fn parse_numbered(region: &str, requested: usize) -> Option<(Vec<String>, Option<String>)> {
    let lead = leading_one_re().find(region);
    let body = match lead {
        Some(m) => &region[m.end()..],
        None => region,
    };
    let markers: Vec<(u32, usize, usize)> = marker_re()
        .captures_iter(body)
        .filter_map(|c| {
            let num: u32 = c[1].parse().ok()?;
            let whole = c.get(0).unwrap();
            Some((num, whole.start(), whole.end()))
        })
        .collect();
    if lead.is_none() && !markers.iter().any(|m| m.0 == 2) {
        return None;
    }

    let mut answers = Vec::new();
    let mut violation = None;
    let mut cursor = 0usize;
    let mut expected = 2u32;
    let mut done = false;
    for &(num, start, end) in &markers {
        if answers.len() == requested {
            done = true;
            break;
        }
        if num == expected && start >= cursor {
            let (ans, viol) = take_answer(&body[cursor..start]);
            if let Some(a) = ans {
                answers.push(a);
            }
            if viol.is_some() {
                violation = viol;
                done = true;
                break;
            }
            cursor = end;
            expected += 1;
        }
    }
    if !done && answers.len() < requested {
        let (ans, viol) = take_answer(&body[cursor..]);
        if let Some(a) = ans {
            answers.push(a);
        }
        violation = viol;
    }
    if answers.len() >= requested {
        // the list completed; anything after the final answer is post-list
        violation = None;
    }
    Some((answers, violation))
}

/// Comma split when the first sentence (up to the first newline or period)
/// contains at least five commas.
fn parse_comma(region: &str, requested: usize) -> Option<Vec<String>> {
    let cut = region.find(['\n', '.']).unwrap_or(region.len());
    let sentence = &region[..cut];
    if sentence.matches(',').count() < 5 {
        return None;
    }
    Some(
        sentence
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .take(requested)
            .map(String::from)
            .collect(),
    )
}

/// One answer per non-empty short line; a long line violates the structure.
fn parse_lines(region: &str, requested: usize, opts: &ParseOptions) -> (Vec<String>, Option<String>) {
    let mut answers = Vec::new();
    for line in region.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.chars().count() >= opts.short_line_max {
            return (answers, Some(t.to_string()));
        }
        answers.push(t.to_string());
        if answers.len() == requested {
            break;
        }
    }
    (answers, None)
}

pub fn parse_list_completion(text: &str, requested_count: u32, eos_emitted: bool) -> ParsedList {
    parse_list_completion_with(text, requested_count, eos_emitted, &ParseOptions::default())
}

/// Total and deterministic: every string parses to some `ParsedList`.
pub fn parse_list_completion_with(
    text: &str,
    requested_count: u32,
    eos_emitted: bool,
    opts: &ParseOptions,
) -> ParsedList {
    let requested = requested_count as usize;
    let lines: Vec<&str> = text.split('\n').collect();
    let topic_change = detect_topic_change(&lines, 0);
    let region: String = match &topic_change {
        Some((idx, _)) => lines[..*idx].join("\n"),
        None => text.to_string(),
    };

    let (mut answers, violation) = if let Some((a, v)) = parse_numbered(&region, requested) {
        (a, v)
    } else if let Some(a) = parse_comma(&region, requested) {
        (a, None)
    } else {
        parse_lines(&region, requested, opts)
    };
    answers.truncate(requested);

    let ending = if eos_emitted {
        Ending::new(EndingKind::Eos, "")
    } else if let Some((_, evidence)) = topic_change {
        Ending::new(EndingKind::TopicChange, evidence)
    } else if let Some(evidence) = violation {
        Ending::new(EndingKind::BadFormat, evidence)
    } else if answers.len() == requested {
        Ending::new(EndingKind::Exhausted, "")
    } else {
        Ending::new(EndingKind::BadFormat, "")
    };
    let missing_count = (requested - answers.len()) as u32;
    ParsedList { answers, ending, missing_count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planets_fixture_parses_to_25_answers_with_topic_change() {
        let parsed = parse_list_completion(fixtures::PLANETS_COMPLETION, 25, false);
        assert_eq!(parsed.answers.len(), 25);
        assert_eq!(parsed.answers[0], "Mercury");
        assert_eq!(parsed.answers[8], "Pluto");
        assert_eq!(parsed.answers[24], "Pallas");
        assert_eq!(parsed.ending.kind, EndingKind::TopicChange);
        assert_eq!(parsed.ending.evidence, "The following 25 planets are in our solar system");
        assert_eq!(parsed.missing_count, 0);
    }

    #[test]
    fn comma_fallback_splits_six_colors() {
        let parsed = parse_list_completion("Blue, Yellow, Black, Green, Red, Purple", 25, false);
        assert_eq!(
            parsed.answers,
            vec!["Blue", "Yellow", "Black", "Green", "Red", "Purple"]
        );
        assert_eq!(parsed.ending.kind, EndingKind::BadFormat);
        assert_eq!(parsed.missing_count, 19);
    }

    #[test]
    fn empty_completion_with_eos() {
        let parsed = parse_list_completion("", 25, true);
        assert!(parsed.answers.is_empty());
        assert_eq!(parsed.ending.kind, EndingKind::Eos);
        assert_eq!(parsed.missing_count, 25);
    }

    #[test]
    fn four_commas_do_not_trigger_comma_split() {
        let parsed = parse_list_completion("Blue, Yellow, Black, Green, Red", 25, false);
        // falls through to the newline fallback: one short line, one answer
        assert_eq!(parsed.answers, vec!["Blue, Yellow, Black, Green, Red"]);
    }

    #[test]
    fn numbered_with_missing_newlines() {
        let parsed = parse_list_completion("Mercury 2. Venus 3. Earth", 25, false);
        assert_eq!(parsed.answers, vec!["Mercury", "Venus", "Earth"]);
        assert_eq!(parsed.ending.kind, EndingKind::BadFormat);
        assert_eq!(parsed.missing_count, 22);
    }

    #[test]
    fn numbered_with_extra_newlines_and_regurgitated_one() {
        let parsed = parse_list_completion("1. Blue\n\n2. Yellow\n\n3. Black", 5, false);
        assert_eq!(parsed.answers, vec!["Blue", "Yellow", "Black"]);
    }

    #[test]
    fn stray_text_inside_numbered_list_is_a_violation() {
        let text = "Mercury\n2. Venus\nsome stray commentary\n3. Earth";
        let parsed = parse_list_completion(text, 25, false);
        assert_eq!(parsed.answers, vec!["Mercury", "Venus"]);
        assert_eq!(parsed.ending.kind, EndingKind::BadFormat);
        assert_eq!(parsed.ending.evidence, "some stray commentary");
    }

    #[test]
    fn trailing_junk_after_full_list_is_exhausted() {
        let text = "A\n2. B\n3. C\nrambling afterthought";
        let parsed = parse_list_completion(text, 3, false);
        assert_eq!(parsed.answers, vec!["A", "B", "C"]);
        assert_eq!(parsed.ending.kind, EndingKind::Exhausted);
        assert_eq!(parsed.missing_count, 0);
    }

    #[test]
    fn eos_takes_precedence_over_count_reached() {
        let parsed = parse_list_completion("A\n2. B", 2, true);
        assert_eq!(parsed.answers, vec!["A", "B"]);
        assert_eq!(parsed.ending.kind, EndingKind::Eos);
    }

    #[test]
    fn newline_fallback_collects_short_lines() {
        let parsed = parse_list_completion("Paris\nLondon\n\nMadrid", 25, false);
        assert_eq!(parsed.answers, vec!["Paris", "London", "Madrid"]);
        assert_eq!(parsed.ending.kind, EndingKind::BadFormat);
    }

    #[test]
    fn long_line_stops_newline_fallback() {
        let long = "x".repeat(90);
        let text = format!("Paris\n{long}");
        let parsed = parse_list_completion(&text, 25, false);
        assert_eq!(parsed.answers, vec!["Paris"]);
        assert_eq!(parsed.ending.kind, EndingKind::BadFormat);
        assert_eq!(parsed.ending.evidence, long);
    }

    #[test]
    fn short_line_threshold_is_configurable() {
        let opts = ParseOptions { short_line_max: 10 };
        let parsed = parse_list_completion_with("Paris\nConstantinople", 25, false, &opts);
        assert_eq!(parsed.answers, vec!["Paris"]);
    }

    #[test]
    fn topic_change_on_the_following_line() {
        let lines = vec!["Mercury", "2. Venus", "The following 25 planets are in our solar system"];
        let (idx, ev) = detect_topic_change(&lines, 0).unwrap();
        assert_eq!(idx, 2);
        assert_eq!(ev, "The following 25 planets are in our solar system");
    }

    #[test]
    fn topic_change_on_numbering_restart() {
        let lines = vec!["9. Juno", "10. Ceres", "1. Mercury"];
        let (idx, ev) = detect_topic_change(&lines, 0).unwrap();
        assert_eq!(idx, 2);
        assert_eq!(ev, "1. Mercury");
    }

    #[test]
    fn no_trigger_on_increasing_numbering() {
        let lines = vec!["1. A", "2. B", "3. C"];
        assert_eq!(detect_topic_change(&lines, 0), None);
    }

    #[test]
    fn fixture_topic_change_is_the_second_list_header() {
        let lines: Vec<&str> = fixtures::PLANETS_COMPLETION.split('\n').collect();
        let (idx, ev) = detect_topic_change(&lines, 0).unwrap();
        assert_eq!(ev, "The following 25 planets are in our solar system");
        // the restart "1. Mercury" sits right below and must not win
        assert!(lines[idx + 1].trim().starts_with("1."));
    }

    #[test]
    fn repetition_normalization_examples() {
        assert_eq!(normalize_for_repetition("Vesta "), "vesta");
        assert_eq!(normalize_for_repetition("New  York"), "new york");
        assert_eq!(normalize_for_repetition(""), "");
        assert_eq!(normalize_for_repetition_strict("New  York"), "New York");
    }

    #[test]
    fn repetition_normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pieces = ["Vesta", " ", "\t", "New", "YORK", "\n", "a"];
        for _ in 0..300 {
            let n = rng.gen_range(0..8);
            let s: String =
                (0..n).map(|_| *pieces.choose(&mut rng).unwrap()).collect::<Vec<_>>().join("");
            let once = normalize_for_repetition(&s);
            assert_eq!(normalize_for_repetition(&once), once);
        }
    }

    #[test]
    fn round_trip_oracle_numbered_then_topic_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let vocab = ["emerald", "falcon", "granite", "harbor", "indigo", "juniper", "krypton"];
        for _ in 0..200 {
            let k = rng.gen_range(1..=25usize);
            let answers: Vec<String> = (0..k)
                .map(|_| {
                    let w = rng.gen_range(1..3);
                    (0..w).map(|_| *vocab.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
                })
                .collect();
            let mut text = String::new();
            for (i, a) in answers.iter().enumerate() {
                text.push_str(&format!("{}. {}\n", i + 1, a));
            }
            text.push_str("The following 25 things are something else\n1. other");
            let parsed = parse_list_completion(&text, 25, false);
            assert_eq!(parsed.answers, answers);
            assert_eq!(parsed.ending.kind, EndingKind::TopicChange);
        }
    }

    #[test]
    fn parsing_never_exceeds_requested_count_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pieces =
            ["1.", "2.", "3.", "word", "The following", ",", "\n", " ", "a b c", "25.", ")"];
        for _ in 0..500 {
            let n = rng.gen_range(0..30);
            let s: String =
                (0..n).map(|_| *pieces.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
            let requested = rng.gen_range(1..6u32);
            let p1 = parse_list_completion(&s, requested, false);
            let p2 = parse_list_completion(&s, requested, false);
            assert_eq!(p1, p2);
            assert!(p1.answers.len() <= requested as usize);
            assert_eq!(p1.answers.len() as u32 + p1.missing_count, requested);
        }
    }
}
