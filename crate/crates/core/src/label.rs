//! Fact labeling (correct / hallucination / repetition), biography
//! segmentation, and the pluggable atomic-fact judge.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{BioTopic, SynonymSet};
use crate::error::{Error, Result};
use crate::listparse::{normalize_for_repetition, Ending, ParsedList};
use crate::matching::{match_gold, MatchConfig};

/// Label values follow the fallback hierarchy: repetition is the simplest
/// behavior, correct the most demanding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactLabelValue {
    Repetition = 1,
    Hallucination = 2,
    Correct = 3,
}

impl FactLabelValue {
    pub fn as_int(self) -> u8 {
        self as u8
    }

    pub fn letter(self) -> char {
        match self {
            FactLabelValue::Correct => 'C',
            FactLabelValue::Hallucination => 'H',
            FactLabelValue::Repetition => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'C' => Some(FactLabelValue::Correct),
            'H' => Some(FactLabelValue::Hallucination),
            'R' => Some(FactLabelValue::Repetition),
            _ => None,
        }
    }
}

impl fmt::Display for FactLabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactLabel {
    pub value: FactLabelValue,
    /// Index of the synonym set this answer matched, when it matched one.
    pub matched_gold: Option<usize>,
    /// For repetitions: index of the earlier answer being duplicated (same
    /// normalized form), or of the answer that first covered the same gold
    /// set when the phrasing differs.
    pub repeated_index: Option<usize>,
}

impl FactLabel {
    fn correct(gold: usize) -> Self {
        FactLabel { value: FactLabelValue::Correct, matched_gold: Some(gold), repeated_index: None }
    }

    fn hallucination() -> Self {
        FactLabel { value: FactLabelValue::Hallucination, matched_gold: None, repeated_index: None }
    }

    fn repetition(earlier: usize, gold: Option<usize>) -> Self {
        FactLabel {
            value: FactLabelValue::Repetition,
            matched_gold: gold,
            repeated_index: Some(earlier),
        }
    }
}

// On the wire a label is just its letter; match detail stays in-process.
impl Serialize for FactLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.value.letter().to_string())
    }
}

impl<'de> Deserialize<'de> for FactLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut chars = s.chars();
        match (chars.next().and_then(FactLabelValue::from_letter), chars.next()) {
            (Some(value), None) => {
                Ok(FactLabel { value, matched_gold: None, repeated_index: None })
            }
            _ => Err(D::Error::custom(format!("label must be one of C|H|R, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledGeneration {
    pub question_id: String,
    pub model_id: String,
    pub sample_index: u32,
    pub labels: Vec<FactLabel>,
    pub ending: Ending,
    #[serde(rename = "missing")]
    pub missing_count: u32,
    /// Distinct synonym sets with at least one correct answer.
    pub gold_covered: usize,
    /// Distinct repetition-normalized answer forms; drives the eligibility
    /// filter for the ordering test.
    pub distinct_answers: usize,
}

impl LabeledGeneration {
    pub fn with_source(
        mut self,
        question_id: impl Into<String>,
        model_id: impl Into<String>,
        sample_index: u32,
    ) -> Self {
        self.question_id = question_id.into();
        self.model_id = model_id.into();
        self.sample_index = sample_index;
        self
    }

    pub fn requested_count(&self) -> u32 {
        self.labels.len() as u32 + self.missing_count
    }

    pub fn label_values(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.value.as_int()).collect()
    }

    pub fn count(&self, value: FactLabelValue) -> usize {
        self.labels.iter().filter(|l| l.value == value).count()
    }
}

/// Label parsed answers in order.
///
/// An answer whose repetition-normalized form already appeared is a
/// repetition regardless of correctness. Otherwise a match against a
/// not-yet-covered gold set is correct; re-matching an already-covered set
/// under a different surface form is a repetition (duplicate fact, new
/// phrasing); everything else is a hallucination.
pub fn label_facts(
    parsed: &ParsedList,
    gold: &[SynonymSet],
    cfg: &MatchConfig,
) -> LabeledGeneration {
    let mut forms_seen: HashMap<String, usize> = HashMap::new();
    let mut covered_by: HashMap<usize, usize> = HashMap::new(); // gold idx → answer idx
    let mut labels = Vec::with_capacity(parsed.answers.len());
    for (i, answer) in parsed.answers.iter().enumerate() {
        let form = normalize_for_repetition(answer);
        if let Some(&earlier) = forms_seen.get(&form) {
            labels.push(FactLabel::repetition(earlier, None));
            continue;
        }
        forms_seen.insert(form, i);
        let m = match_gold(answer, gold, cfg);
        match m.gold_index {
            Some(g) => {
                if let Some(&first) = covered_by.get(&g) {
                    labels.push(FactLabel::repetition(first, Some(g)));
                } else {
                    covered_by.insert(g, i);
                    labels.push(FactLabel::correct(g));
                }
            }
            None => labels.push(FactLabel::hallucination()),
        }
    }
    LabeledGeneration {
        question_id: String::new(),
        model_id: String::new(),
        sample_index: 0,
        labels,
        ending: parsed.ending.clone(),
        missing_count: parsed.missing_count,
        gold_covered: covered_by.len(),
        distinct_answers: forms_seen.len(),
    }
}

pub fn write_labeled_jsonl(gens: &[LabeledGeneration], mut w: impl Write) -> Result<()> {
    for g in gens {
        let line = serde_json::to_string(g)
            .map_err(|e| Error::record(&g.question_id, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<labeled jsonl>", e))?;
    }
    Ok(())
}

pub fn read_labeled_jsonl(r: impl BufRead) -> Result<Vec<LabeledGeneration>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<labeled jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: LabeledGeneration = serde_json::from_str(&line)
            .map_err(|e| Error::record(format!("line {}", i + 1), e.to_string()))?;
        out.push(g);
    }
    Ok(out)
}

// ── Biography segmentation ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutReason {
    Eos,
    TopicChange,
    KeywordSection,
    TitleLine,
    BlankGap,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiographySegment {
    pub body: String,
    pub cut_reason: CutReason,
    pub cut_evidence: String,
}

const SECTION_KEYWORDS: [&str; 6] =
    ["references", "discography", "external links", "see also", "filmography", "bibliography"];

const CONTINUATION_PRONOUNS: [&str; 7] = ["he", "she", "they", "his", "her", "their", "it"];

fn first_word_lower(line: &str) -> String {
    line.split_whitespace()
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase()
}

fn is_section_keyword(line: &str) -> bool {
    let t = line.trim().trim_end_matches(':').to_lowercase();
    SECTION_KEYWORDS.contains(&t.as_str())
}

fn is_title_like(line: &str) -> bool {
    let words = line.split_whitespace().count();
    words >= 1 && words <= 6 && !line.trim_end().ends_with('.')
}

/// Extract the biography proper from a completion, cutting at the first
/// new-biography prefix, section keyword, fresh title-like line, or gap of
/// two or more blank lines. Lines opening with the subject's name tokens or
/// a pronoun continue the biography.
pub fn segment_biography(text: &str, subject: &str, eos_emitted: bool) -> BiographySegment {
    let lines: Vec<&str> = text.split('\n').collect();
    let subject_tokens: Vec<String> =
        subject.split_whitespace().map(|t| t.to_lowercase()).collect();

    let mut blank_run = 0usize;
    let mut cut: Option<(usize, CutReason, String)> = None;
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            blank_run += 1;
            if blank_run >= 2 {
                cut = Some((i + 1 - blank_run, CutReason::BlankGap, String::new()));
                break;
            }
            continue;
        }
        blank_run = 0;
        if line.starts_with("The following is a bio of") {
            cut = Some((i, CutReason::TopicChange, line.to_string()));
            break;
        }
        if is_section_keyword(line) {
            cut = Some((i, CutReason::KeywordSection, line.to_string()));
            break;
        }
        let first = first_word_lower(line);
        let continues = subject_tokens.contains(&first)
            || CONTINUATION_PRONOUNS.contains(&first.as_str());
        if !continues && i > 0 && is_title_like(line) {
            cut = Some((i, CutReason::TitleLine, line.to_string()));
            break;
        }
    }

    match cut {
        Some((end, cut_reason, cut_evidence)) => BiographySegment {
            body: lines[..end].join("\n").trim_end().to_string(),
            cut_reason,
            cut_evidence,
        },
        None => BiographySegment {
            body: text.trim_end().to_string(),
            cut_reason: if eos_emitted { CutReason::Eos } else { CutReason::BudgetExhausted },
            cut_evidence: String::new(),
        },
    }
}

// ── Atomic-fact judge ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct JudgeRequest<'a> {
    pub body: &'a str,
    pub subject: &'a str,
    pub reference_text: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedFact {
    pub text: String,
    pub correct: bool,
}

#[derive(Debug, Deserialize)]
struct JudgeResponse {
    facts: Vec<JudgedFact>,
}

/// Decomposes a biography into atomic facts and verifies each one. The judge
/// only answers correct/incorrect; repetition labels are computed locally.
pub trait Judge {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Vec<JudgedFact>>;
}

/// POSTs `{ body, subject, reference_text }` and expects
/// `{ "facts": [ { "text", "correct" }, ... ] }` back. See docs/judge.md.
pub struct HttpJudge {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpJudge { endpoint: endpoint.into(), client: reqwest::blocking::Client::new() }
    }
}

impl Judge for HttpJudge {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Vec<JudgedFact>> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(req)
            .send()
            .map_err(|e| Error::Judge(format!("transport: {e}")))?;
        let status = resp.status();
        let payload = resp.text().map_err(|e| Error::Judge(format!("read body: {e}")))?;
        if !status.is_success() {
            return Err(Error::Judge(format!("status {status}; payload: {payload}")));
        }
        let parsed: JudgeResponse = serde_json::from_str(&payload)
            .map_err(|e| Error::Judge(format!("malformed response ({e}); payload: {payload}")))?;
        Ok(parsed.facts)
    }
}

/// Replays fixture fact lists keyed by subject, so the biography path runs
/// offline.
pub struct StubJudge {
    subjects: HashMap<String, Vec<JudgedFact>>,
}

#[derive(Deserialize)]
struct StubFixtureFile {
    subjects: HashMap<String, Vec<JudgedFact>>,
}

impl StubJudge {
    pub fn from_fixture_json(json: &str) -> Result<Self> {
        let file: StubFixtureFile =
            serde_json::from_str(json).map_err(|e| Error::Judge(format!("fixture: {e}")))?;
        Ok(StubJudge { subjects: file.subjects })
    }

    pub fn bundled_pataky() -> Self {
        Self::from_fixture_json(crate::fixtures::PATAKY_FACTS_JSON)
            .expect("bundled fixture parses")
    }
}

impl Judge for StubJudge {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Vec<JudgedFact>> {
        self.subjects
            .get(req.subject)
            .cloned()
            .ok_or_else(|| Error::Judge(format!("no fixture for subject `{}`", req.subject)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicFactLabel {
    pub fact_text: String,
    pub value: FactLabelValue,
}

/// Run the judge over a biography body and attach labels. Facts whose
/// normalized text already appeared earlier become repetitions; the rest
/// carry the judge's verdict.
pub fn verify_atomic_facts(
    body: &str,
    subject: &BioTopic,
    judge: &dyn Judge,
) -> Result<Vec<AtomicFactLabel>> {
    if body.trim().is_empty() {
        return Ok(Vec::new());
    }
    let req = JudgeRequest {
        body,
        subject: &subject.subject,
        reference_text: subject.reference_text.as_deref(),
    };
    let facts = judge.judge(&req)?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(facts.len());
    for (i, fact) in facts.into_iter().enumerate() {
        let form = normalize_for_repetition(&fact.text);
        let value = if seen.contains_key(&form) {
            FactLabelValue::Repetition
        } else {
            seen.insert(form, i);
            if fact.correct { FactLabelValue::Correct } else { FactLabelValue::Hallucination }
        };
        out.push(AtomicFactLabel { fact_text: fact.text, value });
    }
    Ok(out)
}
