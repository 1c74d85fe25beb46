//! Study statistics over exported records.
//!
//! Filtering always happens first: [`compute_stats`] runs the discard policy
//! and only then looks at ratings. Standard deviations are population
//! (divide by `n`) throughout.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::export::ExportDocument;
use crate::model::{Answer, ImplicitThresholds, ItemKind, QuestionnaireItem, RatingScale, SessionRecord};
use crate::reliability::{apply_discard_policy, compute_implicit_flags, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub n: usize,
    /// `None` when `n = 0`.
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub sd_population: Option<f64>,
    /// Count per scale point `1..=points`, zeros included.
    pub histogram: BTreeMap<u8, usize>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn summarize(ratings: &[u8], scale: &RatingScale) -> SystemSummary {
    let mut histogram: BTreeMap<u8, usize> = (1..=scale.points).map(|p| (p, 0)).collect();
    for &r in ratings {
        *histogram.entry(r).or_default() += 1;
    }
    if ratings.is_empty() {
        return SystemSummary {
            n: 0,
            mean: None,
            median: None,
            sd_population: None,
            histogram,
        };
    }
    let mut values: Vec<f64> = ratings.iter().map(|&r| f64::from(r)).collect();
    values.sort_by(f64::total_cmp);
    let m = mean(&values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    SystemSummary {
        n: values.len(),
        mean: Some(m),
        median: Some(median(&values)),
        sd_population: Some(var.sqrt()),
        histogram,
    }
}

/// Per-system summaries over every non-attention rating. Every system that
/// appears in a rated situation gets an entry, possibly with `n = 0`.
pub fn system_rating_summary(
    records: &[SessionRecord],
    scale: &RatingScale,
) -> BTreeMap<String, SystemSummary> {
    let mut by_system: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for task in records.iter().flat_map(|r| &r.tasks) {
        for system in task.situation.responses.keys() {
            by_system.entry(system.clone()).or_default();
        }
        for (system, &rating) in &task.ratings {
            by_system.entry(system.clone()).or_default().push(rating);
        }
    }
    by_system
        .into_iter()
        .map(|(system, ratings)| (system, summarize(&ratings, scale)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IccError {
    #[error("need at least 2 participants, got {0}")]
    TooFewParticipants(usize),
    #[error("need at least 2 ratings per participant, got {0}")]
    TooFewRatings(usize),
    #[error("unbalanced design: participant {participant} has {found} ratings, expected {expected}")]
    Unbalanced {
        participant: usize,
        expected: usize,
        found: usize,
    },
    #[error("degenerate data: all values identical")]
    Degenerate,
}

/// One-way random-effects ICC(1) for a balanced participants × ratings
/// matrix: `(MSB − MSW) / (MSB + (k − 1)·MSW)`.
///
/// The result lies in `[−1/(k−1), 1]`.
pub fn icc_oneway(matrix: &[Vec<f64>]) -> Result<f64, IccError> {
    let n = matrix.len();
    if n < 2 {
        return Err(IccError::TooFewParticipants(n));
    }
    let k = matrix[0].len();
    if k < 2 {
        return Err(IccError::TooFewRatings(k));
    }
    if let Some((participant, row)) = matrix.iter().enumerate().find(|(_, r)| r.len() != k) {
        return Err(IccError::Unbalanced {
            participant,
            expected: k,
            found: row.len(),
        });
    }

    // Shifting by any constant leaves the sums of squares unchanged and keeps
    // the raw-moment formulas below well conditioned.
    let shift = matrix[0][0];
    let total_n = (n * k) as f64;
    let kf = k as f64;
    let mut grand = 0.0;
    let mut sum_sq = 0.0;
    let mut row_totals_sq = 0.0;
    for row in matrix {
        let t: f64 = row.iter().map(|x| x - shift).sum();
        grand += t;
        row_totals_sq += t * t;
        sum_sq += row.iter().map(|x| (x - shift).powi(2)).sum::<f64>();
    }
    let correction = grand * grand / total_n;
    let ss_total = sum_sq - correction;
    if ss_total <= 0.0 {
        return Err(IccError::Degenerate);
    }
    let ss_between = (row_totals_sq / kf - correction).max(0.0);
    let ss_within = (ss_total - ss_between).max(0.0);

    let ms_between = ss_between / (n as f64 - 1.0);
    let ms_within = ss_within / (n as f64 * (kf - 1.0));
    Ok((ms_between - ms_within) / (ms_between + (kf - 1.0) * ms_within))
}

/// Per-participant rating vectors for ICC: all non-attention ratings of a
/// worker, in task order and display order within a task.
pub fn participant_matrix(records: &[SessionRecord]) -> Vec<Vec<f64>> {
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for record in records {
        let pos = match rows.iter().position(|(w, _)| *w == record.worker_id) {
            Some(p) => p,
            None => {
                rows.push((record.worker_id.clone(), Vec::new()));
                rows.len() - 1
            }
        };
        for task in &record.tasks {
            let systems = task.situation.system_ids();
            for &idx in &task.display_order {
                if let Some(&r) = systems.get(idx).and_then(|s| task.ratings.get(*s)) {
                    rows[pos].1.push(f64::from(r));
                }
            }
        }
    }
    rows.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ItemDistribution {
    #[serde(rename = "LIKERT_5")]
    Likert {
        n: usize,
        mean: Option<f64>,
        histogram: BTreeMap<u8, usize>,
    },
    SingleChoice {
        /// Declared options first, in order, then any unexpected answers.
        counts: Vec<(String, usize)>,
    },
    FreeText {
        responses: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: String,
    pub prompt: String,
    pub distribution: ItemDistribution,
}

pub fn questionnaire_summary(records: &[SessionRecord], items: &[QuestionnaireItem]) -> Vec<ItemSummary> {
    items
        .iter()
        .map(|item| {
            let answers = records
                .iter()
                .filter_map(|r| r.questionnaire_answers.get(&item.item_id));
            let distribution = match item.kind {
                ItemKind::Likert5 => {
                    let mut histogram: BTreeMap<u8, usize> = (1..=5).map(|p| (p, 0)).collect();
                    let values: Vec<f64> = answers
                        .filter_map(|a| match a {
                            Answer::Scale(v) => Some(*v),
                            Answer::Text(_) => None,
                        })
                        .inspect(|v| *histogram.entry(*v).or_default() += 1)
                        .map(f64::from)
                        .collect();
                    ItemDistribution::Likert {
                        n: values.len(),
                        mean: (!values.is_empty()).then(|| mean(&values)),
                        histogram,
                    }
                }
                ItemKind::SingleChoice => {
                    let mut counts: Vec<(String, usize)> =
                        item.options.iter().map(|o| (o.clone(), 0)).collect();
                    for a in answers {
                        let text = match a {
                            Answer::Text(t) => t.clone(),
                            Answer::Scale(v) => v.to_string(),
                        };
                        match counts.iter_mut().find(|(o, _)| *o == text) {
                            Some((_, c)) => *c += 1,
                            None => counts.push((text, 1)),
                        }
                    }
                    ItemDistribution::SingleChoice { counts }
                }
                ItemKind::FreeText => ItemDistribution::FreeText {
                    responses: answers
                        .filter_map(|a| match a {
                            Answer::Text(t) if !t.is_empty() => Some(t.clone()),
                            _ => None,
                        })
                        .collect(),
                },
            };
            ItemSummary {
                item_id: item.item_id.clone(),
                prompt: item.prompt.clone(),
                distribution,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerCounts {
    pub kept: usize,
    pub discarded: usize,
    /// Workers with at least one implicit timing flag (kept or not).
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyStats {
    pub study_id: String,
    pub includes_discarded: bool,
    pub records_used: usize,
    pub systems: BTreeMap<String, SystemSummary>,
    pub icc: Option<f64>,
    /// Why `icc` is absent, if it is.
    pub icc_note: Option<String>,
    pub questionnaire: Vec<ItemSummary>,
    pub demographics: Vec<ItemSummary>,
    pub workers: WorkerCounts,
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    pub include_discarded: bool,
    /// Recompute timing flags with these thresholds instead of keeping the
    /// flags stored in the export.
    pub thresholds: Option<ImplicitThresholds>,
}

/// Recomputes flags if requested and applies the discard policy.
pub fn filter_records(doc: &ExportDocument, opts: &AnalysisOptions) -> Partition {
    let mut records = doc.records.clone();
    if let Some(t) = &opts.thresholds {
        for r in &mut records {
            r.reliability.implicit_flags = compute_implicit_flags(r, t);
        }
    }
    apply_discard_policy(records, &doc.study)
}

/// Records that statistics should see under `opts`.
pub fn records_for_analysis(partition: &Partition, opts: &AnalysisOptions) -> Vec<SessionRecord> {
    let mut used = partition.kept.clone();
    if opts.include_discarded {
        used.extend(partition.discarded.iter().cloned());
    }
    used
}

pub fn compute_stats(doc: &ExportDocument, opts: &AnalysisOptions) -> StudyStats {
    let partition = filter_records(doc, opts);
    let used = records_for_analysis(&partition, opts);

    let (icc, icc_note) = match icc_oneway(&participant_matrix(&used)) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let workers = |rs: &[SessionRecord]| rs.iter().map(|r| r.worker_id.as_str()).collect::<BTreeSet<_>>().len();
    let flagged = partition
        .kept
        .iter()
        .chain(&partition.discarded)
        .filter(|r| !r.reliability.implicit_flags.is_empty())
        .map(|r| r.worker_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();

    StudyStats {
        study_id: doc.study.study_id.to_string(),
        includes_discarded: opts.include_discarded,
        records_used: used.len(),
        systems: system_rating_summary(&used, &doc.study.scale),
        icc,
        icc_note,
        questionnaire: questionnaire_summary(&used, &doc.study.questionnaire),
        demographics: questionnaire_summary(&used, &doc.study.demographics),
        workers: WorkerCounts {
            kept: workers(&partition.kept),
            discarded: workers(&partition.discarded),
            flagged,
        },
    }
}
