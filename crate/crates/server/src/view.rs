//! Payloads sent to the browser. Task pages never reveal which system wrote
//! a response or which slot is the attention check.

use serde::{Deserialize, Serialize};

use crseval::ingest::{scan_item_markup, ItemSpan};
use crseval::{QuestionnaireItem, RatingScale, SituationId, Speaker, Study, TaskPage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceView {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    /// Quoted item titles, for highlighting.
    pub titles: Vec<ItemSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseView {
    pub slot: usize,
    pub text: String,
    pub titles: Vec<ItemSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageView {
    pub task_index: usize,
    pub task_count: usize,
    pub situation_id: SituationId,
    pub utterances: Vec<UtteranceView>,
    /// In display order; `slot` is the key for the submitted rating.
    pub responses: Vec<ResponseView>,
    pub scale: RatingScale,
}

fn titles(text: &str) -> Vec<ItemSpan> {
    // Texts are validated at ingestion, so this only fails on corrupt pools.
    scan_item_markup(text).unwrap_or_default()
}

impl From<TaskPage> for PageView {
    fn from(page: TaskPage) -> Self {
        Self {
            task_index: page.task_index,
            task_count: page.task_count,
            situation_id: page.situation.situation_id,
            utterances: page
                .situation
                .utterances
                .into_iter()
                .map(|u| UtteranceView {
                    index: u.index,
                    speaker: u.speaker,
                    titles: titles(&u.text),
                    text: u.text,
                })
                .collect(),
            responses: page
                .ordered_responses
                .into_iter()
                .map(|r| ResponseView {
                    slot: r.slot,
                    titles: titles(&r.text),
                    text: r.text,
                })
                .collect(),
            scale: page.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireView {
    pub questionnaire: Vec<QuestionnaireItem>,
    pub demographics: Vec<QuestionnaireItem>,
}

impl QuestionnaireView {
    pub fn of(study: &Study) -> Self {
        Self {
            questionnaire: study.questionnaire.clone(),
            demographics: study.demographics.clone(),
        }
    }
}

/// What the participant should see next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "next", rename_all = "snake_case")]
pub enum NextStep {
    Instructions { instructions_text: String },
    Task { page: PageView },
    Questionnaire(QuestionnaireView),
    Complete { hit_code: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub worker_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub instructions_text: String,
    pub task_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTimings {
    /// Intervals between page load, each rating click and submit.
    pub events_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSubmission {
    /// Rating per display slot.
    pub ratings: std::collections::BTreeMap<usize, u8>,
    #[serde(default)]
    pub timings: ClientTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireSubmission {
    pub answers: std::collections::BTreeMap<String, crseval::Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub hit_code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
