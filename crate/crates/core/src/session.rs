//! Participant sessions: sampling, response-order randomization,
//! attention-check placement and the forward-only workflow
//!
//! ```text
//! LANDING → INSTRUCTIONS → TASK(0) → … → TASK(n−1) → QUESTIONNAIRE → COMPLETE
//! ```
//!
//! Every accepted transition is appended to [`Session::events`], and
//! [`SessionEngine::replay`] rebuilds an identical session from that log.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ingest::SituationPool;
use crate::model::{
    validate_study, Answer, DialogSituation, ItemKind, RatingScale, SessionId, SessionRecord,
    SessionState, SituationId, Study, StudyId, TaskAssignment, TaskResult,
};
use crate::reliability;
use crate::rng::{derive_seed, generate_hit_code, Rng};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("invalid study: {}", .0.join("; "))]
    InvalidStudy(Vec<String>),
    #[error("pool too small: need {needed} situations from distinct dialogs, have {available}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("situation {situation_id} has {found} responses, study expects {expected}")]
    SituationShape {
        situation_id: SituationId,
        expected: usize,
        found: usize,
    },
    #[error("wrong state: {attempted} not allowed in state {state}")]
    WrongState {
        state: SessionState,
        attempted: String,
    },
    #[error("unknown situation {0}")]
    UnknownSituation(SituationId),
    #[error("missing rating for slot {slot}")]
    MissingRating { slot: usize },
    #[error("rating {rating} for slot {slot} outside [1, {points}]")]
    OutOfRangeRating { slot: usize, rating: u8, points: u8 },
    #[error("slot {slot} does not exist on this page")]
    UnknownSlot { slot: usize },
    #[error("unknown questionnaire item {0:?}")]
    UnknownItem(String),
    #[error("missing answer for item {0:?}")]
    MissingAnswer(String),
    #[error("invalid answer for item {item_id:?}: {reason}")]
    InvalidOption { item_id: String, reason: String },
}

/// Client-reported per-event intervals plus the server's own measurement of
/// the page dwell time, when known.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTimings {
    pub events_ms: Vec<u64>,
    #[serde(default)]
    pub server_elapsed_ms: Option<u64>,
}

impl TaskTimings {
    pub fn client(events_ms: Vec<u64>) -> Self {
        Self {
            events_ms,
            server_elapsed_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionEvent {
    InstructionsShown,
    InstructionsAcknowledged,
    TaskSubmitted {
        task_index: usize,
        ratings: BTreeMap<usize, u8>,
        timings: TaskTimings,
    },
    QuestionnaireSubmitted {
        answers: BTreeMap<String, Answer>,
        completed_at_ms: u64,
    },
}

/// Identity and seed of a session; everything else follows deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionGenesis {
    pub session_id: SessionId,
    pub worker_id: String,
    pub seed: u64,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub study_id: StudyId,
    pub worker_id: String,
    pub seed: u64,
    pub tasks: Vec<TaskAssignment>,
    pub state: SessionState,
    pub created_at_ms: u64,
    pub hit_code: Option<String>,
    pub completed_at_ms: Option<u64>,
    pub results: Vec<TaskResult>,
    pub questionnaire_answers: BTreeMap<String, Answer>,
    pub events: Vec<SessionEvent>,
}

impl Session {
    pub fn genesis(&self) -> SessionGenesis {
        SessionGenesis {
            session_id: self.session_id.clone(),
            worker_id: self.worker_id.clone(),
            seed: self.seed,
            created_at_ms: self.created_at_ms,
        }
    }

    pub fn attention_task_indices(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_attention)
            .map(|(i, _)| i)
            .collect()
    }

    fn wrong_state(&self, attempted: impl Into<String>) -> SessionError {
        SessionError::WrongState {
            state: self.state,
            attempted: attempted.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResponseSource {
    System(String),
    Attention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSlot {
    pub slot: usize,
    pub source: ResponseSource,
    pub text: String,
}

/// Everything the rating page shows for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPage {
    pub task_index: usize,
    pub task_count: usize,
    pub situation: DialogSituation,
    pub ordered_responses: Vec<ResponseSlot>,
    pub scale: RatingScale,
}

pub fn attention_instruction(scale: &RatingScale, required: u8) -> String {
    let label = scale.label(required).unwrap_or("?");
    format!("Please select '{label}' for this response.")
}

/// Binds a study to its situation pool and runs sessions against them.
#[derive(Debug, Clone, Copy)]
pub struct SessionEngine<'a> {
    pub study: &'a Study,
    pub pool: &'a SituationPool,
}

impl<'a> SessionEngine<'a> {
    pub fn new(study: &'a Study, pool: &'a SituationPool) -> Self {
        Self { study, pool }
    }

    /// Creates a session whose id is derived from the seed and whose creation
    /// time is zero; see [`SessionEngine::open`] to supply both.
    pub fn create_session(&self, worker_id: &str, seed: u64) -> Result<Session, SessionError> {
        self.open(SessionGenesis {
            session_id: SessionId(format!("{:016x}", derive_seed(seed, "session-id"))),
            worker_id: worker_id.to_owned(),
            seed,
            created_at_ms: 0,
        })
    }

    pub fn open(&self, genesis: SessionGenesis) -> Result<Session, SessionError> {
        let study = self.study;
        let violations = validate_study(study);
        if !violations.is_empty() {
            return Err(SessionError::InvalidStudy(violations));
        }
        let n = study.situations_per_session;
        let systems = study.systems_per_situation;
        let available = self.pool.distinct_dialogs();
        if available < n {
            return Err(SessionError::PoolTooSmall {
                needed: n,
                available,
            });
        }

        let mut rng = Rng::new(genesis.seed);
        let mut order: Vec<usize> = (0..self.pool.len()).collect();
        rng.shuffle(&mut order);
        let situations = self.pool.situations();
        let mut used_dialogs = HashSet::new();
        let mut chosen = Vec::with_capacity(n);
        for i in order {
            let s = &situations[i];
            if used_dialogs.insert(s.source_dialog_id.as_str()) {
                chosen.push(s);
                if chosen.len() == n {
                    break;
                }
            }
        }

        let mut tasks = Vec::with_capacity(n);
        for s in chosen {
            if s.responses.len() != systems {
                return Err(SessionError::SituationShape {
                    situation_id: s.situation_id.clone(),
                    expected: systems,
                    found: s.responses.len(),
                });
            }
            tasks.push(TaskAssignment {
                situation_id: s.situation_id.clone(),
                display_order: rng.permutation(systems),
                is_attention: false,
                attention_slot: None,
            });
        }
        for k in rng.choose_indices(n, study.attention_checks_per_session) {
            tasks[k].is_attention = true;
            tasks[k].attention_slot = Some(rng.below(systems));
        }

        Ok(Session {
            session_id: genesis.session_id,
            study_id: study.study_id.clone(),
            worker_id: genesis.worker_id,
            seed: genesis.seed,
            tasks,
            state: SessionState::Landing,
            created_at_ms: genesis.created_at_ms,
            hit_code: None,
            completed_at_ms: None,
            results: Vec::new(),
            questionnaire_answers: BTreeMap::new(),
            events: Vec::new(),
        })
    }

    /// LANDING → INSTRUCTIONS.
    pub fn show_instructions(&self, session: &mut Session) -> Result<(), SessionError> {
        if session.state != SessionState::Landing {
            return Err(session.wrong_state("show instructions"));
        }
        session.state = SessionState::Instructions;
        session.events.push(SessionEvent::InstructionsShown);
        Ok(())
    }

    /// INSTRUCTIONS → TASK(0).
    pub fn acknowledge_instructions(&self, session: &mut Session) -> Result<(), SessionError> {
        if session.state != SessionState::Instructions {
            return Err(session.wrong_state("acknowledge instructions"));
        }
        session.state = SessionState::Task(0);
        session.events.push(SessionEvent::InstructionsAcknowledged);
        Ok(())
    }

    pub fn render_task(&self, session: &Session, task_index: usize) -> Result<TaskPage, SessionError> {
        if session.state != SessionState::Task(task_index) {
            return Err(session.wrong_state(format!("render task {task_index}")));
        }
        let task = &session.tasks[task_index];
        let situation = self.situation(&task.situation_id)?;
        let systems = situation.system_ids();
        let ordered_responses = task
            .display_order
            .iter()
            .enumerate()
            .map(|(slot, &sys)| {
                if task.attention_slot == Some(slot) {
                    ResponseSlot {
                        slot,
                        source: ResponseSource::Attention,
                        text: attention_instruction(
                            &self.study.scale,
                            self.study.attention_required_rating,
                        ),
                    }
                } else {
                    let id = systems[sys];
                    ResponseSlot {
                        slot,
                        source: ResponseSource::System(id.to_owned()),
                        text: situation.responses[id].clone(),
                    }
                }
            })
            .collect();
        Ok(TaskPage {
            task_index,
            task_count: session.tasks.len(),
            situation: situation.clone(),
            ordered_responses,
            scale: self.study.scale.clone(),
        })
    }

    /// Records the ratings for `TASK(task_index)` and advances. `ratings` is
    /// keyed by display slot and must cover every slot, including an
    /// attention slot. On error the session is left untouched.
    pub fn submit_task(
        &self,
        session: &mut Session,
        task_index: usize,
        ratings: BTreeMap<usize, u8>,
        timings: TaskTimings,
    ) -> Result<(), SessionError> {
        if session.state != SessionState::Task(task_index) {
            return Err(session.wrong_state(format!("submit task {task_index}")));
        }
        let task = &session.tasks[task_index];
        let slots = task.display_order.len();
        if let Some(&slot) = ratings.keys().find(|&&s| s >= slots) {
            return Err(SessionError::UnknownSlot { slot });
        }
        let scale = &self.study.scale;
        for slot in 0..slots {
            match ratings.get(&slot) {
                None => return Err(SessionError::MissingRating { slot }),
                Some(&rating) if !scale.contains(rating) => {
                    return Err(SessionError::OutOfRangeRating {
                        slot,
                        rating,
                        points: scale.points,
                    })
                }
                Some(_) => {}
            }
        }
        let situation = self.situation(&task.situation_id)?;
        let systems = situation.system_ids();

        let mut by_system = BTreeMap::new();
        let mut attention_rating = None;
        for (&slot, &rating) in &ratings {
            if task.attention_slot == Some(slot) {
                attention_rating = Some(rating);
            } else {
                by_system.insert(systems[task.display_order[slot]].to_owned(), rating);
            }
        }
        let client_total: u64 = timings.events_ms.iter().sum();
        let task_total_ms = match timings.server_elapsed_ms {
            Some(server) => client_total.min(server),
            None => client_total,
        };
        let result = TaskResult {
            task_index,
            situation_id: task.situation_id.clone(),
            situation: situation.clone(),
            display_order: task.display_order.clone(),
            is_attention: task.is_attention,
            attention_slot: task.attention_slot,
            ratings: by_system,
            attention_rating,
            per_event_times_ms: timings.events_ms.clone(),
            task_total_ms,
            server_elapsed_ms: timings.server_elapsed_ms,
        };

        session.results.push(result);
        session.state = if task_index + 1 < session.tasks.len() {
            SessionState::Task(task_index + 1)
        } else {
            SessionState::Questionnaire
        };
        session.events.push(SessionEvent::TaskSubmitted {
            task_index,
            ratings,
            timings,
        });
        Ok(())
    }

    /// Validates and records the questionnaire, completes the session and
    /// issues its hit code.
    pub fn submit_questionnaire(
        &self,
        session: &mut Session,
        answers: BTreeMap<String, Answer>,
        completed_at_ms: u64,
    ) -> Result<(), SessionError> {
        if session.state != SessionState::Questionnaire {
            return Err(session.wrong_state("submit questionnaire"));
        }
        self.validate_answers(&answers)?;
        let mut rng = Rng::new(derive_seed(session.seed, "hit-code"));
        session.hit_code = Some(generate_hit_code(&mut rng));
        session.questionnaire_answers = answers.clone();
        session.completed_at_ms = Some(completed_at_ms);
        session.state = SessionState::Complete;
        session.events.push(SessionEvent::QuestionnaireSubmitted {
            answers,
            completed_at_ms,
        });
        Ok(())
    }

    pub fn validate_answers(&self, answers: &BTreeMap<String, Answer>) -> Result<(), SessionError> {
        if let Some(id) = answers.keys().find(|id| self.study.item(id).is_none()) {
            return Err(SessionError::UnknownItem(id.clone()));
        }
        for item in self.study.all_items() {
            let invalid = |reason: &str| SessionError::InvalidOption {
                item_id: item.item_id.clone(),
                reason: reason.to_owned(),
            };
            match (item.kind, answers.get(&item.item_id)) {
                (ItemKind::FreeText, None) | (ItemKind::FreeText, Some(Answer::Text(_))) => {}
                (ItemKind::FreeText, Some(_)) => return Err(invalid("expected text")),
                (_, None) => return Err(SessionError::MissingAnswer(item.item_id.clone())),
                (ItemKind::Likert5, Some(Answer::Scale(v))) if (1..=5).contains(v) => {}
                (ItemKind::Likert5, Some(_)) => return Err(invalid("expected an integer in [1, 5]")),
                (ItemKind::SingleChoice, Some(Answer::Text(t))) if item.options.contains(t) => {}
                (ItemKind::SingleChoice, Some(a)) => {
                    return Err(invalid(&format!("{a:?} is not one of {:?}", item.options)))
                }
            }
        }
        Ok(())
    }

    /// Applies a logged event, as if the corresponding call had been made.
    pub fn apply(&self, session: &mut Session, event: SessionEvent) -> Result<(), SessionError> {
        match event {
            SessionEvent::InstructionsShown => self.show_instructions(session),
            SessionEvent::InstructionsAcknowledged => self.acknowledge_instructions(session),
            SessionEvent::TaskSubmitted {
                task_index,
                ratings,
                timings,
            } => self.submit_task(session, task_index, ratings, timings),
            SessionEvent::QuestionnaireSubmitted {
                answers,
                completed_at_ms,
            } => self.submit_questionnaire(session, answers, completed_at_ms),
        }
    }

    pub fn replay(
        &self,
        genesis: SessionGenesis,
        events: impl IntoIterator<Item = SessionEvent>,
    ) -> Result<Session, SessionError> {
        let mut session = self.open(genesis)?;
        for event in events {
            self.apply(&mut session, event)?;
        }
        Ok(session)
    }

    /// Builds the persisted record of a completed session, with its
    /// reliability verdict computed against the study thresholds.
    pub fn finish(&self, session: &Session) -> Result<SessionRecord, SessionError> {
        let (Some(hit_code), Some(completed_at_ms)) = (&session.hit_code, session.completed_at_ms)
        else {
            return Err(session.wrong_state("finish"));
        };
        let mut record = SessionRecord {
            study_id: session.study_id.clone(),
            session_id: session.session_id.clone(),
            worker_id: session.worker_id.clone(),
            hit_code: hit_code.clone(),
            created_at_ms: session.created_at_ms,
            completed_at_ms,
            tasks: session.results.clone(),
            questionnaire_answers: session.questionnaire_answers.clone(),
            total_duration_ms: completed_at_ms.saturating_sub(session.created_at_ms),
            reliability: Default::default(),
        };
        record.reliability = reliability::assess(&record, self.study);
        Ok(record)
    }

    fn situation(&self, id: &SituationId) -> Result<&'a DialogSituation, SessionError> {
        self.pool
            .get(id)
            .ok_or_else(|| SessionError::UnknownSituation(id.clone()))
    }
}
