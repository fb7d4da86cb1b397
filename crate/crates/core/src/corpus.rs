//! Datasets, gold answers, and prompt rendering.
//!
//! List datasets are one JSON document:
//! `{ "dataset": str, "questions": [ { "id", "template", "requested_count",
//! "answerable", "gold": [[synonym, ...], ...], "domain" } ] }`.
//!
//! Templates mark the removable count phrase with `[[count: ...]]` brackets
//! and carry a `{n}` slot inside it, e.g.
//! `"The following [[count:{n} ]]colors are in the Olympic rings"`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{normalize_for_match, MatchConfig};

/// Appended to every rendered list prompt so the completion starts at item 1.
pub const LIST_SUFFIX: &str = "\n1.";

/// Instruction sentence prepended by the `IdkPrefix` variant.
pub const IDK_PREFIX: &str = "Complete the following list with facts you are sure of, and stop when you cannot recall additional facts";

/// Default in-context demonstrations for the `IclPrefix` variant.
pub const DEFAULT_ICL_PREFIX: &str = include_str!("../assets/icl_prefix.txt");

/// All surface forms accepted as the same gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymSet {
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "template")]
    pub prompt_template: String,
    pub requested_count: u32,
    pub answerable: bool,
    #[serde(rename = "gold")]
    pub gold_answers: Vec<SynonymSet>,
    #[serde(rename = "domain")]
    pub domain_tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ListDataset {
    pub dataset: String,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariantKind {
    Standard25,
    NoCount,
    ColonSuffix,
    IdkPrefix,
    IclPrefix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptVariant {
    pub kind: PromptVariantKind,
    /// Override for the `IclPrefix` demonstrations. Must be `None` for
    /// `IdkPrefix`, which carries exactly the fixed instruction sentence.
    pub prefix_text: Option<String>,
}

impl PromptVariant {
    pub fn standard() -> Self {
        PromptVariant { kind: PromptVariantKind::Standard25, prefix_text: None }
    }

    pub fn no_count() -> Self {
        PromptVariant { kind: PromptVariantKind::NoCount, prefix_text: None }
    }

    pub fn colon_suffix() -> Self {
        PromptVariant { kind: PromptVariantKind::ColonSuffix, prefix_text: None }
    }

    pub fn idk_prefix() -> Self {
        PromptVariant { kind: PromptVariantKind::IdkPrefix, prefix_text: None }
    }

    pub fn icl_prefix(prefix_text: Option<String>) -> Self {
        PromptVariant { kind: PromptVariantKind::IclPrefix, prefix_text }
    }

    /// CLI spelling: standard25 | nocount | colon | idk | icl.
    pub fn from_cli_name(name: &str) -> Result<Self> {
        match name {
            "standard25" => Ok(Self::standard()),
            "nocount" => Ok(Self::no_count()),
            "colon" => Ok(Self::colon_suffix()),
            "idk" => Ok(Self::idk_prefix()),
            "icl" => Ok(Self::icl_prefix(None)),
            other => Err(Error::PromptVariant(format!(
                "unknown variant `{other}` (expected standard25|nocount|colon|idk|icl)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PromptVariantKind::IdkPrefix => {
                if self.prefix_text.is_some() {
                    return Err(Error::PromptVariant(
                        "IdkPrefix carries exactly the fixed instruction sentence; \
                         prefix_text must not be set"
                            .into(),
                    ));
                }
            }
            PromptVariantKind::IclPrefix => {
                let prefix = self.prefix_text.as_deref().unwrap_or(DEFAULT_ICL_PREFIX);
                if !(prefix.contains("The following") && prefix.contains("1.")) {
                    return Err(Error::PromptVariant(
                        "IclPrefix prefix must contain at least one complete demonstration list"
                            .into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularityLevel {
    VeryRare,
    Rare,
    Medium,
    Frequent,
    VeryFrequent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BioTopic {
    pub subject: String,
    #[serde(rename = "level")]
    pub popularity_level: PopularityLevel,
    /// Encyclopedia entry used as the human baseline; kept byte-exact.
    pub reference_text: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BioTopicsFile {
    topics: Vec<BioTopic>,
}

fn count_bracket_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\[count:(.*?)\]\]").unwrap())
}

fn collapse_spaces(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev_space = false;
    for c in s.chars() {
        if c == ' ' {
            if !prev_space {
                out.push(c);
            }
            prev_space = true;
        } else {
            prev_space = false;
            out.push(c);
        }
    }
    out.trim().to_string()
}

fn check_no_slots(id: &str, s: &str) -> Result<()> {
    if let Some(start) = s.find('{') {
        let slot: String = s[start..].chars().take_while(|c| *c != '}').skip(1).collect();
        return Err(Error::TemplateSlot { id: id.into(), slot });
    }
    Ok(())
}

fn fill_count(q: &Question) -> Result<String> {
    let kept = count_bracket_re().replace_all(&q.prompt_template, "$1");
    let filled = kept.replace("{n}", &q.requested_count.to_string());
    check_no_slots(&q.id, &filled)?;
    Ok(collapse_spaces(&filled))
}

fn remove_count(q: &Question) -> Result<String> {
    if !count_bracket_re().is_match(&q.prompt_template) && q.prompt_template.contains("{n}") {
        return Err(Error::TemplateSlot { id: q.id.clone(), slot: "n".into() });
    }
    let removed = count_bracket_re().replace_all(&q.prompt_template, "");
    check_no_slots(&q.id, &removed)?;
    Ok(collapse_spaces(&removed))
}

/// Render the full prompt for a question under a variant. Deterministic:
/// identical inputs yield byte-identical output.
pub fn render_prompt(q: &Question, v: &PromptVariant) -> Result<String> {
    v.validate()?;
    let body = match v.kind {
        PromptVariantKind::Standard25
        | PromptVariantKind::IdkPrefix
        | PromptVariantKind::IclPrefix => format!("{}{LIST_SUFFIX}", fill_count(q)?),
        PromptVariantKind::ColonSuffix => format!("{}:{LIST_SUFFIX}", fill_count(q)?),
        PromptVariantKind::NoCount => format!("{}:{LIST_SUFFIX}", remove_count(q)?),
    };
    Ok(match v.kind {
        PromptVariantKind::IdkPrefix => format!("{IDK_PREFIX}\n\n{body}"),
        PromptVariantKind::IclPrefix => {
            let prefix = v.prefix_text.as_deref().unwrap_or(DEFAULT_ICL_PREFIX);
            format!("{}\n\n{body}", prefix.trim_end())
        }
        _ => body,
    })
}

/// Prompt for an open-ended biography generation.
pub fn render_bio_prompt(topic: &BioTopic) -> String {
    format!("The following is a bio of {0}:\n{0}", topic.subject)
}

fn validate_question(q: &Question) -> Result<()> {
    if q.requested_count < 1 {
        return Err(Error::invariant(&q.id, "requested_count must be >= 1"));
    }
    if q.answerable && q.gold_answers.is_empty() {
        return Err(Error::invariant(&q.id, "answerable question with empty gold answers"));
    }
    if !q.answerable && !q.gold_answers.is_empty() {
        return Err(Error::invariant(&q.id, "unanswerable question with non-empty gold answers"));
    }
    let cfg = MatchConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, set) in q.gold_answers.iter().enumerate() {
        if set.members.is_empty() {
            return Err(Error::invariant(&q.id, format!("synonym set {i} is empty")));
        }
        let mut in_set: HashSet<String> = HashSet::new();
        for member in &set.members {
            let norm = normalize_for_match(member, &cfg);
            if !in_set.insert(norm.clone()) {
                return Err(Error::invariant(
                    &q.id,
                    format!("synonym set {i} has duplicate member `{member}` after normalization"),
                ));
            }
            if let Some(other) = seen.get(&norm) {
                return Err(Error::invariant(
                    &q.id,
                    format!(
                        "synonym sets {other} and {i} share member `{member}` after normalization"
                    ),
                ));
            }
            seen.insert(norm, i);
        }
    }
    Ok(())
}

impl ListDataset {
    pub fn load(path: &Path) -> Result<ListDataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: ListDataset =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let mut ids = HashSet::new();
        for q in &ds.questions {
            if !ids.insert(q.id.clone()) {
                return Err(Error::DuplicateId { id: q.id.clone() });
            }
            validate_question(q)?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

pub fn load_list_dataset(path: &Path) -> Result<Vec<Question>> {
    Ok(ListDataset::load(path)?.questions)
}

pub fn load_bio_topics(path: &Path) -> Result<Vec<BioTopic>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: BioTopicsFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(file.topics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn olympic_rings() -> Question {
        Question {
            id: "triv-001".into(),
            prompt_template: "The following [[count:{n} ]]colors are in the Olympic rings".into(),
            requested_count: 25,
            answerable: true,
            gold_answers: ["Blue", "Yellow", "Black", "Green", "Red"]
                .iter()
                .map(|m| SynonymSet { members: vec![m.to_string()] })
                .collect(),
            domain_tag: "sports".into(),
        }
    }

    #[test]
    fn standard_variant_renders_count_and_suffix() {
        let q = olympic_rings();
        let p = render_prompt(&q, &PromptVariant::standard()).unwrap();
        assert_eq!(p, "The following 25 colors are in the Olympic rings\n1.");
    }

    #[test]
    fn standard_prompt_ends_with_list_opener() {
        let q = olympic_rings();
        let p = render_prompt(&q, &PromptVariant::standard()).unwrap();
        assert!(p.ends_with("\n1."));
    }

    #[test]
    fn no_count_removes_phrase_and_keeps_suffix() {
        let q = olympic_rings();
        let p = render_prompt(&q, &PromptVariant::no_count()).unwrap();
        assert_eq!(p, "The following colors are in the Olympic rings:\n1.");
    }

    #[test]
    fn colon_variant_appends_colon_before_suffix() {
        let q = olympic_rings();
        let p = render_prompt(&q, &PromptVariant::colon_suffix()).unwrap();
        assert_eq!(p, "The following 25 colors are in the Olympic rings:\n1.");
    }

    #[test]
    fn idk_variant_prepends_instruction_and_blank_line() {
        let q = olympic_rings();
        let p = render_prompt(&q, &PromptVariant::idk_prefix()).unwrap();
        assert_eq!(
            p,
            format!("{IDK_PREFIX}\n\nThe following 25 colors are in the Olympic rings\n1.")
        );
    }

    #[test]
    fn icl_variant_uses_bundled_demonstrations_by_default() {
        let q = olympic_rings();
        let p = render_prompt(&q, &PromptVariant::icl_prefix(None)).unwrap();
        assert!(p.starts_with("The following 25 are known moons of Mars\n1. Phobos"));
        assert!(p.ends_with("The following 25 colors are in the Olympic rings\n1."));
    }

    #[test]
    fn render_is_deterministic() {
        let q = olympic_rings();
        for v in [
            PromptVariant::standard(),
            PromptVariant::no_count(),
            PromptVariant::colon_suffix(),
            PromptVariant::idk_prefix(),
            PromptVariant::icl_prefix(None),
        ] {
            assert_eq!(render_prompt(&q, &v).unwrap(), render_prompt(&q, &v).unwrap());
        }
    }

    #[test]
    fn unresolved_slot_is_an_error() {
        let mut q = olympic_rings();
        q.prompt_template = "The following {n} things about {subject}".into();
        let err = render_prompt(&q, &PromptVariant::standard()).unwrap_err();
        assert!(matches!(err, Error::TemplateSlot { .. }), "got {err:?}");
    }

    #[test]
    fn idk_with_prefix_override_is_rejected() {
        let q = olympic_rings();
        let v = PromptVariant { kind: PromptVariantKind::IdkPrefix, prefix_text: Some("x".into()) };
        assert!(render_prompt(&q, &v).is_err());
    }

    fn write_dataset(json: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), json).unwrap();
        f
    }

    #[test]
    fn load_olympic_rings_dataset() {
        let f = write_dataset(
            r#"{ "dataset": "triv-mini", "questions": [ {
                "id": "triv-001",
                "template": "The following [[count:{n} ]]colors are in the Olympic rings",
                "requested_count": 25,
                "answerable": true,
                "gold": [["Blue"], ["Yellow"], ["Black"], ["Green"], ["Red"]],
                "domain": "sports"
            } ] }"#,
        );
        let qs = load_list_dataset(f.path()).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].gold_answers.len(), 5);
    }

    #[test]
    fn empty_question_array_loads_empty() {
        let f = write_dataset(r#"{ "dataset": "empty", "questions": [] }"#);
        assert!(load_list_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn shared_normalized_member_is_rejected_naming_the_question() {
        let f = write_dataset(
            r#"{ "dataset": "bad", "questions": [ {
                "id": "triv-dup",
                "template": "The following [[count:{n} ]]colors",
                "requested_count": 25,
                "answerable": true,
                "gold": [["Red"], ["red."]],
                "domain": "misc"
            } ] }"#,
        );
        let err = load_list_dataset(f.path()).unwrap_err();
        match err {
            Error::Invariant { id, .. } => assert_eq!(id, "triv-dup"),
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_question_id_is_rejected() {
        let q = r#"{
            "id": "same", "template": "The following [[count:{n} ]]things",
            "requested_count": 25, "answerable": true, "gold": [["x"]], "domain": "misc"
        }"#;
        let f = write_dataset(&format!(r#"{{ "dataset": "d", "questions": [{q}, {q}] }}"#));
        assert!(matches!(load_list_dataset(f.path()).unwrap_err(), Error::DuplicateId { .. }));
    }

    #[test]
    fn dataset_round_trips() {
        let ds = ListDataset { dataset: "triv-mini".into(), questions: vec![olympic_rings()] };
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.save(f.path()).unwrap();
        let back = ListDataset::load(f.path()).unwrap();
        assert_eq!(back.questions, ds.questions);
        let f2 = tempfile::NamedTempFile::new().unwrap();
        back.save(f2.path()).unwrap();
        assert_eq!(
            std::fs::read_to_string(f.path()).unwrap(),
            std::fs::read_to_string(f2.path()).unwrap()
        );
    }

    #[test]
    fn bio_topics_load_and_validate_levels() {
        let f = write_dataset(
            r#"{ "topics": [
                { "subject": "Elsa Pataky", "level": "frequent", "reference_text": "Elsa Pataky is a Spanish actress." },
                { "subject": "Obscure Person", "level": "very_rare", "reference_text": null }
            ] }"#,
        );
        let topics = load_bio_topics(f.path()).unwrap();
        assert_eq!(topics.len(), 2);
        assert_eq!(topics[0].popularity_level, PopularityLevel::Frequent);
        assert_eq!(topics[0].reference_text.as_deref(), Some("Elsa Pataky is a Spanish actress."));
        assert_eq!(topics[1].reference_text, None);
    }

    #[test]
    fn unknown_popularity_level_is_an_error() {
        let f = write_dataset(r#"{ "topics": [ { "subject": "X", "level": "legendary", "reference_text": null } ] }"#);
        assert!(matches!(load_bio_topics(f.path()).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn bio_prompt_repeats_subject() {
        let t = BioTopic {
            subject: "Harrison Ford".into(),
            popularity_level: PopularityLevel::VeryFrequent,
            reference_text: None,
        };
        assert_eq!(render_bio_prompt(&t), "The following is a bio of Harrison Ford:\nHarrison Ford");
    }
}
