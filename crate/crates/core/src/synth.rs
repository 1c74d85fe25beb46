//! Synthetic corpora and simulated judges for load tests, fixtures and demos.

use std::collections::BTreeMap;

use crate::ingest::{build_situation_pool, Dialog, DialogCorpus, ResponseSet, SituationPool};
use crate::model::{Answer, ItemKind, Speaker, Study, Utterance};
use crate::rng::Rng;
use crate::session::{Session, SessionEngine, SessionError, SessionGenesis, TaskTimings};
use crate::SessionId;

const TITLES: [&str; 8] = [
    "The Matrix (1999)",
    "Up (2009)",
    "Coco (2017)",
    "Heat (1995)",
    "Alien (1979)",
    "Amélie (2001)",
    "Se7en (1995)",
    "Big Fish (2003)",
];

const WORDS: [&str; 10] = [
    "movie", "really", "like", "funny", "scary", "something", "tonight", "seen", "great", "maybe",
];

fn sentence(rng: &mut Rng) -> String {
    let mut parts = Vec::new();
    for _ in 0..(2 + rng.below(6)) {
        if rng.below(5) == 0 {
            parts.push(format!("\"{}\"", TITLES[rng.below(TITLES.len())]));
        } else {
            parts.push(WORDS[rng.below(WORDS.len())].to_owned());
        }
    }
    parts.join(" ")
}

/// A corpus of `dialogs` random dialogs and a response set with one entry per
/// dialog (cut at a random seeker turn) for `systems` systems.
pub fn corpus_and_responses(dialogs: usize, systems: usize, seed: u64) -> (DialogCorpus, ResponseSet) {
    let mut rng = Rng::new(seed);
    let mut corpus = DialogCorpus::default();
    let mut responses = ResponseSet::default();
    for d in 0..dialogs {
        let len = 1 + rng.below(12);
        let utterances: Vec<Utterance> = (0..len)
            .map(|index| Utterance {
                speaker: if index == 0 || rng.below(2) == 0 {
                    Speaker::Seeker
                } else {
                    Speaker::Recommender
                },
                text: sentence(&mut rng),
                index,
            })
            .collect();
        let seeker_turns: Vec<usize> = utterances
            .iter()
            .filter(|u| u.speaker == Speaker::Seeker)
            .map(|u| u.index)
            .collect();
        let cut = seeker_turns[rng.below(seeker_turns.len())];
        let dialog_id = format!("dialog-{d:05}");
        let answers: BTreeMap<String, String> = (0..systems)
            .map(|s| (format!("system-{s}"), sentence(&mut rng)))
            .collect();
        responses.entries.insert((dialog_id.clone(), cut), answers);
        corpus.dialogs.push(Dialog {
            dialog_id,
            utterances,
        });
    }
    (corpus, responses)
}

/// Random pool with one situation per dialog, built through ingestion.
pub fn random_pool(size: usize, systems: usize, seed: u64) -> SituationPool {
    let (corpus, responses) = corpus_and_responses(size, systems, seed);
    build_situation_pool(&corpus, &responses, seed, None).expect("synthetic pool is valid")
}

/// How a simulated judge behaves.
#[derive(Debug, Clone, Copy)]
pub struct Judge {
    /// Answers attention checks correctly.
    pub attentive: bool,
    /// Rates every real response with this value; random when `None`.
    pub fixed_rating: Option<u8>,
    /// Per-event interval in milliseconds.
    pub event_ms: u64,
}

impl Default for Judge {
    fn default() -> Self {
        Self {
            attentive: true,
            fixed_rating: None,
            event_ms: 2_500,
        }
    }
}

impl Judge {
    /// Slot ratings for task `k` of a session in state `TASK(k)`.
    pub fn ratings_for(&self, study: &Study, session: &Session, k: usize, rng: &mut Rng) -> BTreeMap<usize, u8> {
        let task = &session.tasks[k];
        (0..task.display_order.len())
            .map(|slot| {
                let rating = if task.attention_slot == Some(slot) {
                    if self.attentive {
                        study.attention_required_rating
                    } else {
                        (study.attention_required_rating % study.scale.points) + 1
                    }
                } else {
                    self.fixed_rating
                        .unwrap_or_else(|| 1 + rng.below(study.scale.points as usize) as u8)
                };
                (slot, rating)
            })
            .collect()
    }

    pub fn timings_for(&self, slots: usize) -> TaskTimings {
        TaskTimings::client(vec![self.event_ms; slots + 1])
    }
}

/// Answers every questionnaire item: Likert items and choices at random,
/// free text with a short remark.
pub fn questionnaire_answers(study: &Study, rng: &mut Rng) -> BTreeMap<String, Answer> {
    study
        .all_items()
        .map(|item| {
            let a = match item.kind {
                ItemKind::Likert5 => Answer::Scale(1 + rng.below(5) as u8),
                ItemKind::SingleChoice => Answer::Text(item.options[rng.below(item.options.len())].clone()),
                ItemKind::FreeText => Answer::Text(format!("remark {}", rng.below(1000))),
            };
            (item.item_id.clone(), a)
        })
        .collect()
}

/// Drives a session from creation to completion. The session starts at
/// `start_ms` and each page takes `(slots + 1) · judge.event_ms`.
pub fn complete_session(
    engine: &SessionEngine<'_>,
    session_id: &str,
    worker_id: &str,
    seed: u64,
    judge: Judge,
    start_ms: u64,
) -> Result<Session, SessionError> {
    let study = engine.study;
    let mut rng = Rng::new(seed ^ 0x5eed);
    let mut session = engine.open(SessionGenesis {
        session_id: SessionId::from(session_id),
        worker_id: worker_id.to_owned(),
        seed,
        created_at_ms: start_ms,
    })?;
    engine.show_instructions(&mut session)?;
    engine.acknowledge_instructions(&mut session)?;
    let mut elapsed = 0;
    for k in 0..session.tasks.len() {
        let ratings = judge.ratings_for(study, &session, k, &mut rng);
        let timings = judge.timings_for(ratings.len());
        elapsed += timings.events_ms.iter().sum::<u64>();
        engine.submit_task(&mut session, k, ratings, timings)?;
    }
    let answers = questionnaire_answers(study, &mut rng);
    engine.submit_questionnaire(&mut session, answers, start_ms + elapsed + 30_000)?;
    Ok(session)
}
