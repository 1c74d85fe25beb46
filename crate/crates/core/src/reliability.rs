//! Attention-check verdicts, timing flags and the discard policy.
//!
//! Only a failed attention check discards data, and it discards every record
//! of that worker. Timing flags are annotations for the analyst.

use std::collections::{BTreeSet, HashSet};

use crate::model::{ImplicitFlag, ImplicitThresholds, ReliabilityVerdict, SessionRecord, Study};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReliabilityError {
    #[error("session {session_id}: attention task {task_index} has no attention rating")]
    MissingAttentionRating { session_id: String, task_index: usize },
    #[error("session {0}: no attention task found but the study requires one")]
    NoAttentionTask(String),
}

/// True iff every attention task was answered with the required rating.
/// Vacuously true when the study has no attention checks.
pub fn check_explicit_attention(record: &SessionRecord, study: &Study) -> Result<bool, ReliabilityError> {
    if study.attention_checks_per_session == 0 {
        return Ok(true);
    }
    let mut found = false;
    let mut passed = true;
    for task in record.tasks.iter().filter(|t| t.is_attention) {
        found = true;
        match task.attention_rating {
            Some(r) => passed &= r == study.attention_required_rating,
            None => {
                return Err(ReliabilityError::MissingAttentionRating {
                    session_id: record.session_id.to_string(),
                    task_index: task.task_index,
                })
            }
        }
    }
    if !found {
        return Err(ReliabilityError::NoAttentionTask(record.session_id.to_string()));
    }
    Ok(passed)
}

pub fn compute_implicit_flags(record: &SessionRecord, t: &ImplicitThresholds) -> BTreeSet<ImplicitFlag> {
    let mut flags = BTreeSet::new();
    if record
        .tasks
        .iter()
        .flat_map(|task| &task.per_event_times_ms)
        .any(|&ms| ms < t.min_event_ms)
    {
        flags.insert(ImplicitFlag::EventTooFast);
    }
    if record.tasks.iter().any(|task| task.task_total_ms < t.min_task_ms) {
        flags.insert(ImplicitFlag::TaskTooFast);
    }
    if record.total_duration_ms < t.min_total_ms {
        flags.insert(ImplicitFlag::TotalTooFast);
    }
    if record.total_duration_ms > t.max_total_ms {
        flags.insert(ImplicitFlag::TotalTooSlow);
    }
    flags
}

/// Verdict for a single record in isolation. A record whose attention
/// rating is missing counts as failed.
pub fn assess(record: &SessionRecord, study: &Study) -> ReliabilityVerdict {
    let attention_passed = check_explicit_attention(record, study).unwrap_or(false);
    ReliabilityVerdict {
        attention_passed,
        implicit_flags: compute_implicit_flags(record, &study.implicit_thresholds),
        discarded: !attention_passed,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub kept: Vec<SessionRecord>,
    pub discarded: Vec<SessionRecord>,
}

/// Splits records into kept and discarded. Any worker with at least one
/// failed attention check loses all of their records. Verdicts on the
/// returned records are updated; implicit flags are left as they are.
pub fn apply_discard_policy(records: Vec<SessionRecord>, study: &Study) -> Partition {
    let passed: Vec<bool> = records
        .iter()
        .map(|r| check_explicit_attention(r, study).unwrap_or(false))
        .collect();
    let failing: HashSet<String> = records
        .iter()
        .zip(&passed)
        .filter(|(_, &ok)| !ok)
        .map(|(r, _)| r.worker_id.clone())
        .collect();

    let mut out = Partition::default();
    for (mut record, ok) in records.into_iter().zip(passed) {
        record.reliability.attention_passed = ok;
        record.reliability.discarded = failing.contains(&record.worker_id);
        if record.reliability.discarded {
            out.discarded.push(record);
        } else {
            out.kept.push(record);
        }
    }
    out
}
