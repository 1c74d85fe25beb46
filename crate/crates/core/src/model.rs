//! Domain vocabulary shared by every other module.
//!
//! All types here are plain values: cloning and sharing them across threads is
//! always safe. Mutation of sessions happens only through [`crate::session`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_newtype!(
    /// Stable identifier of a dialog situation, derived from `(dialog_id, cut_index)`.
    SituationId
);
id_newtype!(
    /// Unguessable token identifying one participant session.
    SessionId
);
id_newtype!(StudyId);

pub const DEFAULT_SCALE_LABELS: [&str; 5] = [
    "Entirely meaningless",
    "Mostly meaningless",
    "Partially meaningful",
    "Mostly meaningful",
    "Perfectly meaningful",
];

/// An ordered, labeled rating scale. Ratings are coded `1..=points`, where 1
/// is the leftmost (most negative) label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    pub points: u8,
    pub labels: Vec<String>,
    pub attention_target_allowed: bool,
}

impl Default for RatingScale {
    fn default() -> Self {
        Self {
            points: 5,
            labels: DEFAULT_SCALE_LABELS.iter().map(|s| s.to_string()).collect(),
            attention_target_allowed: true,
        }
    }
}

impl RatingScale {
    pub fn contains(&self, rating: u8) -> bool {
        (1..=self.points).contains(&rating)
    }

    /// Label for a 1-based rating, if it is on the scale.
    pub fn label(&self, rating: u8) -> Option<&str> {
        if self.contains(rating) {
            self.labels.get(rating as usize - 1).map(String::as_str)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Speaker {
    Seeker,
    Recommender,
}

impl Speaker {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "SEEKER" => Some(Self::Seeker),
            "RECOMMENDER" => Some(Self::Recommender),
            _ => None,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Seeker => "SEEKER",
            Self::Recommender => "RECOMMENDER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
}

/// True when `text` contains an even number of double-quote characters.
pub fn quotes_balanced(text: &str) -> bool {
    text.bytes().filter(|&b| b == b'"').count() % 2 == 0
}

/// A dialog prefix that ends in a seeker turn, plus the candidate responses
/// of each system under comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogSituation {
    pub situation_id: SituationId,
    pub source_dialog_id: String,
    pub utterances: Vec<Utterance>,
    /// Keyed by system id. Slot indices used in sessions refer to the
    /// position of a system in this map's (sorted) key order.
    pub responses: BTreeMap<String, String>,
}

impl DialogSituation {
    pub fn system_ids(&self) -> Vec<&str> {
        self.responses.keys().map(String::as_str).collect()
    }

    /// Checks the situation invariants; `expected_systems` is the study's
    /// `systems_per_situation`, or `None` to skip the count check.
    pub fn violations(&self, expected_systems: Option<usize>) -> Vec<String> {
        let mut out = Vec::new();
        match self.utterances.first() {
            None => out.push("utterances: empty".to_owned()),
            Some(first) if first.index != 0 => {
                out.push(format!("utterances[0].index: expected 0, got {}", first.index))
            }
            _ => {}
        }
        for (pos, u) in self.utterances.iter().enumerate() {
            if u.index != pos {
                out.push(format!("utterances[{pos}].index: expected {pos}, got {}", u.index));
            }
            if u.text.is_empty() {
                out.push(format!("utterances[{pos}].text: empty"));
            } else if !quotes_balanced(&u.text) {
                out.push(format!("utterances[{pos}].text: unbalanced double quotes"));
            }
        }
        if let Some(last) = self.utterances.last() {
            if last.speaker != Speaker::Seeker {
                out.push(format!("utterances: last speaker is {}, expected SEEKER", last.speaker));
            }
        }
        if let Some(n) = expected_systems {
            if self.responses.len() != n {
                out.push(format!("responses: expected {n} entries, got {}", self.responses.len()));
            }
        }
        for (system, text) in &self.responses {
            if text.is_empty() {
                out.push(format!("responses[{system}]: empty"));
            } else if !quotes_balanced(text) {
                out.push(format!("responses[{system}]: unbalanced double quotes"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemKind {
    #[serde(rename = "LIKERT_5")]
    Likert5,
    #[serde(rename = "SINGLE_CHOICE")]
    SingleChoice,
    #[serde(rename = "FREE_TEXT")]
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub item_id: String,
    pub prompt: String,
    pub kind: ItemKind,
    #[serde(default)]
    pub options: Vec<String>,
}

impl QuestionnaireItem {
    pub fn likert(item_id: &str, prompt: &str) -> Self {
        Self {
            item_id: item_id.to_owned(),
            prompt: prompt.to_owned(),
            kind: ItemKind::Likert5,
            options: Vec::new(),
        }
    }

    pub fn choice(item_id: &str, prompt: &str, options: &[&str]) -> Self {
        Self {
            item_id: item_id.to_owned(),
            prompt: prompt.to_owned(),
            kind: ItemKind::SingleChoice,
            options: options.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn free_text(item_id: &str, prompt: &str) -> Self {
        Self {
            item_id: item_id.to_owned(),
            prompt: prompt.to_owned(),
            kind: ItemKind::FreeText,
            options: Vec::new(),
        }
    }

    fn violations(&self, field: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.item_id.is_empty() {
            out.push(format!("{field}.item_id: empty"));
        }
        match self.kind {
            ItemKind::SingleChoice => {
                let distinct: HashSet<&String> = self.options.iter().collect();
                if distinct.len() < 2 || distinct.len() != self.options.len() {
                    out.push(format!(
                        "{field}.options: SINGLE_CHOICE needs at least 2 distinct options"
                    ));
                }
            }
            ItemKind::Likert5 | ItemKind::FreeText => {
                if !self.options.is_empty() {
                    out.push(format!("{field}.options: must be empty for {:?}", self.kind));
                }
            }
        }
        out
    }
}

/// A questionnaire answer. Likert items take a number, choice and free-text
/// items take a string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Scale(u8),
    Text(String),
}

/// Timing bounds for implicit reliability checks, all in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitThresholds {
    pub min_event_ms: u64,
    pub min_task_ms: u64,
    pub min_total_ms: u64,
    pub max_total_ms: u64,
}

impl Default for ImplicitThresholds {
    fn default() -> Self {
        Self {
            min_event_ms: 300,
            min_task_ms: 3_000,
            min_total_ms: 120_000,
            max_total_ms: 3_600_000,
        }
    }
}

/// Full configuration of one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Study {
    pub study_id: StudyId,
    pub scale: RatingScale,
    pub situations_per_session: usize,
    pub systems_per_situation: usize,
    pub attention_checks_per_session: usize,
    pub attention_required_rating: u8,
    pub questionnaire: Vec<QuestionnaireItem>,
    pub demographics: Vec<QuestionnaireItem>,
    pub instructions_text: String,
    pub implicit_thresholds: ImplicitThresholds,
    pub rng_seed: u64,
}

pub const DEFAULT_INSTRUCTIONS: &str = "You will read short movie-recommendation dialogs. \
Each dialog ends with a message from the user. Below it you will see three possible replies. \
Rate each reply on its own: how meaningful is it as the next turn of this dialog? \
A meaningful reply is a logical continuation of the conversation. If it recommends movies \
(shown in double quotes), they should fit what the user asked for. If it recommends nothing, \
judge it as an answer to the user's last message given the whole conversation. \
There are no right or wrong answers; we are interested in your own judgement.";

impl Default for Study {
    fn default() -> Self {
        Self {
            study_id: StudyId::from("default"),
            scale: RatingScale::default(),
            situations_per_session: 10,
            systems_per_situation: 3,
            attention_checks_per_session: 1,
            attention_required_rating: 2,
            questionnaire: default_questionnaire(),
            demographics: default_demographics(),
            instructions_text: DEFAULT_INSTRUCTIONS.to_owned(),
            implicit_thresholds: ImplicitThresholds::default(),
            rng_seed: 0,
        }
    }
}

impl Study {
    /// Questionnaire followed by demographics, in presentation order.
    pub fn all_items(&self) -> impl Iterator<Item = &QuestionnaireItem> {
        self.questionnaire.iter().chain(self.demographics.iter())
    }

    pub fn item(&self, item_id: &str) -> Option<&QuestionnaireItem> {
        self.all_items().find(|i| i.item_id == item_id)
    }
}

/// Post-task dialog-quality items, answered on a 5-point agreement scale.
pub fn default_questionnaire() -> Vec<QuestionnaireItem> {
    vec![
        QuestionnaireItem::likert("q1", "I found the presented dialogues natural."),
        QuestionnaireItem::likert("q2", "The presented dialogue situations look realistic."),
        QuestionnaireItem::likert(
            "q3",
            "I could imagine that such dialogues also happen between humans.",
        ),
        QuestionnaireItem::likert(
            "q4",
            "Considering only the best responses found in each dialogue, I would find the chat-bot useful.",
        ),
        QuestionnaireItem::likert(
            "q5",
            "Considering only the best responses found in each dialogue, I would probably use such a movie recommendation chat-bot in the future.",
        ),
        QuestionnaireItem::free_text("remarks", "Any remarks or suggestions?"),
    ]
}

pub fn default_demographics() -> Vec<QuestionnaireItem> {
    vec![
        QuestionnaireItem::choice("gender", "Gender", &["Male", "Female", "Other"]),
        QuestionnaireItem::choice("age", "Age", &["18-25", "25-30", "30-35", "35-45", "45-70"]),
        QuestionnaireItem::choice(
            "english_fluency",
            "English fluency level",
            &["Beginner", "Intermediate", "Fluent", "Advanced"],
        ),
        QuestionnaireItem::choice(
            "education",
            "Education level",
            &["High school or less", "Bachelor's", "Master's", "Doctorate", "Other"],
        ),
        QuestionnaireItem::choice(
            "movie_frequency",
            "Frequency of watching movies",
            &[
                "Everyday",
                "Several times a week",
                "Once in a week",
                "Once every few weeks",
                "Less frequent",
            ],
        ),
        QuestionnaireItem::choice("chatbot_used", "Ever interacted with a chat-bot", &["Yes", "No"]),
        QuestionnaireItem::choice(
            "chatbot_movies_used",
            "Ever interacted with a chat-bot for getting movie recommendations",
            &["Yes", "No"],
        ),
    ]
}

/// Returns every violated [`Study`] invariant; an empty list means the study
/// is usable. Each message starts with the offending field path.
pub fn validate_study(study: &Study) -> Vec<String> {
    let mut out = Vec::new();
    let scale = &study.scale;
    if scale.points < 2 {
        out.push(format!("scale.points: must be >= 2, got {}", scale.points));
    }
    if scale.labels.len() != scale.points as usize {
        out.push(format!(
            "scale.labels: expected {} labels, got {}",
            scale.points,
            scale.labels.len()
        ));
    }
    if scale.labels.iter().any(String::is_empty) {
        out.push("scale.labels: labels must be non-empty".to_owned());
    }
    let distinct: HashSet<&String> = scale.labels.iter().collect();
    if distinct.len() != scale.labels.len() {
        out.push("scale.labels: labels must be pairwise distinct".to_owned());
    }
    if study.situations_per_session < 1 {
        out.push("situations_per_session: must be >= 1".to_owned());
    }
    if study.systems_per_situation < 1 {
        out.push("systems_per_situation: must be >= 1".to_owned());
    }
    if study.situations_per_session >= 1
        && study.attention_checks_per_session >= study.situations_per_session
    {
        out.push(format!(
            "attention_checks_per_session: must be < situations_per_session ({}), got {}",
            study.situations_per_session, study.attention_checks_per_session
        ));
    }
    if !scale.contains(study.attention_required_rating) {
        out.push(format!(
            "attention_required_rating: must be in [1, {}], got {}",
            scale.points, study.attention_required_rating
        ));
    }
    if study.attention_checks_per_session > 0 && !scale.attention_target_allowed {
        out.push(
            "scale.attention_target_allowed: attention checks configured on a scale that forbids them"
                .to_owned(),
        );
    }
    let mut seen = HashSet::new();
    for (field, items) in [("questionnaire", &study.questionnaire), ("demographics", &study.demographics)] {
        for (i, item) in items.iter().enumerate() {
            let path = format!("{field}[{i}]");
            out.extend(item.violations(&path));
            if !seen.insert(item.item_id.as_str()) {
                out.push(format!("{path}.item_id: duplicate id {:?}", item.item_id));
            }
        }
    }
    let t = &study.implicit_thresholds;
    if t.min_total_ms > t.max_total_ms {
        out.push(format!(
            "implicit_thresholds: min_total_ms ({}) exceeds max_total_ms ({})",
            t.min_total_ms, t.max_total_ms
        ));
    }
    out
}

/// Position of a session in the participant workflow. Transitions are
/// strictly forward; see [`crate::session`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Landing,
    Instructions,
    Task(usize),
    Questionnaire,
    Complete,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Landing => f.write_str("LANDING"),
            Self::Instructions => f.write_str("INSTRUCTIONS"),
            Self::Task(k) => write!(f, "TASK({k})"),
            Self::Questionnaire => f.write_str("QUESTIONNAIRE"),
            Self::Complete => f.write_str("COMPLETE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub situation_id: SituationId,
    /// `display_order[pos]` is the index (in sorted system-id order) of the
    /// response shown at display position `pos`.
    pub display_order: Vec<usize>,
    pub is_attention: bool,
    /// Display position whose text is replaced by the attention instruction.
    pub attention_slot: Option<usize>,
}

pub fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    for &i in order {
        match seen.get_mut(i) {
            Some(s) if !*s => *s = true,
            _ => return false,
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImplicitFlag {
    EventTooFast,
    TaskTooFast,
    TotalTooFast,
    TotalTooSlow,
}

impl ImplicitFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EventTooFast => "EVENT_TOO_FAST",
            Self::TaskTooFast => "TASK_TOO_FAST",
            Self::TotalTooFast => "TOTAL_TOO_FAST",
            Self::TotalTooSlow => "TOTAL_TOO_SLOW",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReliabilityVerdict {
    pub attention_passed: bool,
    pub implicit_flags: BTreeSet<ImplicitFlag>,
    pub discarded: bool,
}

/// Outcome of one rating page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_index: usize,
    pub situation_id: SituationId,
    /// The rated dialog situation with all candidate responses, inlined so a
    /// record is self-contained.
    pub situation: DialogSituation,
    pub display_order: Vec<usize>,
    pub is_attention: bool,
    pub attention_slot: Option<usize>,
    /// system_id → rating. The system displaced by an attention check has no entry.
    pub ratings: BTreeMap<String, u8>,
    pub attention_rating: Option<u8>,
    pub per_event_times_ms: Vec<u64>,
    pub task_total_ms: u64,
    /// Wall time between page delivery and submission as seen by the server.
    #[serde(default)]
    pub server_elapsed_ms: Option<u64>,
}

/// The persisted outcome of a completed session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub study_id: StudyId,
    pub session_id: SessionId,
    pub worker_id: String,
    pub hit_code: String,
    pub created_at_ms: u64,
    pub completed_at_ms: u64,
    pub tasks: Vec<TaskResult>,
    pub questionnaire_answers: BTreeMap<String, Answer>,
    pub total_duration_ms: u64,
    pub reliability: ReliabilityVerdict,
}

impl SessionRecord {
    /// Checks the record invariants against the study scale.
    pub fn violations(&self, scale: &RatingScale) -> Vec<String> {
        let mut out = Vec::new();
        if !self.reliability.attention_passed && !self.reliability.discarded {
            out.push("reliability.discarded: must be true when attention failed".to_owned());
        }
        for (i, task) in self.tasks.iter().enumerate() {
            let path = format!("tasks[{i}]");
            if !is_permutation(&task.display_order) {
                out.push(format!("{path}.display_order: not a permutation"));
            }
            let slots = task.display_order.len();
            let expected = slots - usize::from(task.is_attention && slots > 0);
            if task.ratings.len() != expected {
                out.push(format!(
                    "{path}.ratings: expected {expected} ratings, got {}",
                    task.ratings.len()
                ));
            }
            for (system, &r) in &task.ratings {
                if !scale.contains(r) {
                    out.push(format!("{path}.ratings[{system}]: {r} outside [1, {}]", scale.points));
                }
                if !task.situation.responses.contains_key(system) {
                    out.push(format!("{path}.ratings[{system}]: unknown system"));
                }
            }
            match (task.is_attention, task.attention_rating) {
                (true, Some(r)) if !scale.contains(r) => {
                    out.push(format!("{path}.attention_rating: {r} outside [1, {}]", scale.points))
                }
                (false, Some(_)) => {
                    out.push(format!("{path}.attention_rating: present on a non-attention task"))
                }
                _ => {}
            }
        }
        out
    }

    /// Number of non-attention ratings in this record.
    pub fn rating_count(&self) -> usize {
        self.tasks.iter().map(|t| t.ratings.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_study_is_valid() {
        let study = Study::default();
        assert_eq!(validate_study(&study), Vec::<String>::new());
        assert_eq!(study.situations_per_session, 10);
        assert_eq!(study.systems_per_situation, 3);
        assert_eq!(study.attention_checks_per_session, 1);
        assert_eq!(study.scale.points, 5);
        assert_eq!(study.scale.labels[0], "Entirely meaningless");
        assert_eq!(study.scale.labels[4], "Perfectly meaningful");
    }

    #[test]
    fn zero_situations_is_one_violation() {
        let study = Study {
            situations_per_session: 0,
            attention_checks_per_session: 0,
            ..Study::default()
        };
        let v = validate_study(&study);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].starts_with("situations_per_session"));
    }

    #[test]
    fn attention_checks_equal_to_situations_is_one_violation() {
        let study = Study {
            attention_checks_per_session: 10,
            ..Study::default()
        };
        let v = validate_study(&study);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].starts_with("attention_checks_per_session"));
    }

    #[test]
    fn scale_and_item_violations_name_fields() {
        let mut study = Study::default();
        study.scale.labels[1] = study.scale.labels[0].clone();
        study.attention_required_rating = 9;
        study.demographics[0].options.truncate(1);
        study.questionnaire[0].options.push("x".into());
        let v = validate_study(&study);
        assert!(v.iter().any(|m| m.starts_with("scale.labels")));
        assert!(v.iter().any(|m| m.starts_with("attention_required_rating")));
        assert!(v.iter().any(|m| m.starts_with("demographics[0].options")));
        assert!(v.iter().any(|m| m.starts_with("questionnaire[0].options")));
    }

    #[test]
    fn thresholds_order_checked() {
        let mut study = Study::default();
        study.implicit_thresholds.min_total_ms = study.implicit_thresholds.max_total_ms + 1;
        let v = validate_study(&study);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("implicit_thresholds"));
    }

    #[test]
    fn scale_labels_and_bounds() {
        let scale = RatingScale::default();
        assert_eq!(scale.label(2), Some("Mostly meaningless"));
        assert_eq!(scale.label(0), None);
        assert_eq!(scale.label(6), None);
    }

    #[test]
    fn permutation_check() {
        assert!(is_permutation(&[2, 0, 1]));
        assert!(is_permutation(&[]));
        assert!(!is_permutation(&[0, 0, 1]));
        assert!(!is_permutation(&[0, 3, 1]));
    }

    #[test]
    fn answer_json_shape() {
        let a: Answer = serde_json::from_str("4").unwrap();
        assert_eq!(a, Answer::Scale(4));
        let b: Answer = serde_json::from_str("\"Yes\"").unwrap();
        assert_eq!(b, Answer::Text("Yes".into()));
        assert_eq!(serde_json::to_string(&SessionState::Task(3)).unwrap(), r#"{"TASK":3}"#);
        assert_eq!(serde_json::to_string(&ItemKind::Likert5).unwrap(), r#""LIKERT_5""#);
    }
}
