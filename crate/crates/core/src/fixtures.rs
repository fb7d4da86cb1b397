//! Bundled fixtures: a fully worked planets completion with its gold set, an
//! atomic-fact replay file for the stub judge, and a human reference text for
//! the diversity baseline.

use chrono::TimeZone;

use crate::corpus::{ListDataset, Question};
use crate::harness::{DecodeConfig, FinishReason, Transcript};

/// A completion that lists 25 "planets" (numbered, with repetitions) and then
/// restarts the same list — the canonical topic-change ending.
pub const PLANETS_COMPLETION: &str = include_str!("../fixtures/planets_completion.txt");

/// Dataset holding the matching question with its 8-planet gold.
pub const PLANETS_GOLD_JSON: &str = include_str!("../fixtures/planets_gold.json");

/// Replay data for the stub judge: the Elsa Pataky fact list with verdicts.
pub const PATAKY_FACTS_JSON: &str = include_str!("../fixtures/pataky_facts.json");

/// 512+ words of encyclopedic prose; the human baseline for DiversityScore.
pub const HUMAN_REFERENCE_TEXT: &str = include_str!("../assets/human_reference.txt");

pub fn planets_dataset() -> ListDataset {
    serde_json::from_str(PLANETS_GOLD_JSON).expect("bundled dataset parses")
}

pub fn planets_question() -> Question {
    planets_dataset().questions.into_iter().next().expect("dataset has one question")
}

/// The planets completion wrapped as a transcript with a fixed timestamp, so
/// downstream files stay byte-reproducible.
pub fn planets_transcript() -> Transcript {
    let q = planets_question();
    Transcript {
        question_id: q.id.clone(),
        model_id: "fixture-model".into(),
        prompt: crate::corpus::render_prompt(&q, &crate::corpus::PromptVariant::colon_suffix())
            .expect("fixture prompt renders"),
        decode: DecodeConfig::greedy(),
        sample_index: 0,
        completion_text: PLANETS_COMPLETION.to_string(),
        finish_reason: FinishReason::Length,
        timestamp: chrono::Utc.timestamp_opt(0, 0).unwrap(),
        token_ids: None,
    }
}
