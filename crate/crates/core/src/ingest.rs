//! Corpus and response-file loading, item markup scanning and situation-pool
//! construction.
//!
//! File formats (all UTF-8, one JSON object per line, blank lines ignored):
//!
//! * corpus: `{"dialog_id": "...", "utterances": [{"speaker": "SEEKER"|"RECOMMENDER", "text": "..."}]}`
//! * responses: `{"dialog_id": "...", "cut_index": 4, "responses": {"<system_id>": "..."}}`
//!
//! The pool file written by [`write_pool_file`] is a JSON array of
//! [`DialogSituation`] objects.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{quotes_balanced, DialogSituation, SituationId, Speaker, Study, Utterance};
use crate::rng::{stable_hash, Rng};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: dialog {dialog_id:?} has no utterances or no SEEKER utterance")]
    EmptyDialog { line: usize, dialog_id: String },
    #[error("line {line}: unknown speaker {speaker:?} (expected SEEKER or RECOMMENDER)")]
    UnknownSpeaker { line: usize, speaker: String },
    #[error("line {line}: dialog {dialog_id:?} utterance {index}: {problem}")]
    BadUtterance {
        line: usize,
        dialog_id: String,
        index: usize,
        problem: String,
    },
    #[error("line {line}: duplicate dialog id {dialog_id:?}")]
    DuplicateDialog { line: usize, dialog_id: String },
    #[error("line {line}: duplicate response entry ({dialog_id:?}, {cut_index})")]
    DuplicateResponse {
        line: usize,
        dialog_id: String,
        cut_index: usize,
    },
    #[error("line {line}: systems {found:?} differ from the first entry's {expected:?}")]
    InconsistentSystems {
        line: usize,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("unbalanced item markup: {quotes} double quotes")]
    UnbalancedQuotes { quotes: usize },
    #[error("dialog {dialog_id:?}: utterance {cut_index} is not a SEEKER turn")]
    CutNotSeeker { dialog_id: String, cut_index: usize },
    #[error("dialog {dialog_id:?}: cut index {cut_index} out of range for {len} utterances")]
    CutOutOfRange {
        dialog_id: String,
        cut_index: usize,
        len: usize,
    },
    #[error("response entry ({dialog_id:?}, {cut_index}) refers to an unknown dialog")]
    DanglingReference { dialog_id: String, cut_index: usize },
    #[error("situation {situation_id}: {}", violations.join("; "))]
    InvalidSituation {
        situation_id: SituationId,
        violations: Vec<String>,
    },
    #[error("pool: duplicate situation id {0}")]
    DuplicateSituation(SituationId),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub dialog_id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DialogCorpus {
    pub dialogs: Vec<Dialog>,
}

impl DialogCorpus {
    pub fn get(&self, dialog_id: &str) -> Option<&Dialog> {
        self.dialogs.iter().find(|d| d.dialog_id == dialog_id)
    }
}

#[derive(Deserialize)]
struct RawUtterance {
    speaker: String,
    text: String,
}

#[derive(Deserialize)]
struct RawDialog {
    dialog_id: String,
    utterances: Vec<RawUtterance>,
}

/// Non-blank lines with their 1-based line numbers.
fn records(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_dialog_corpus(content: &str) -> Result<DialogCorpus, IngestError> {
    let mut dialogs = Vec::new();
    let mut ids = HashSet::new();
    for (line, text) in records(content) {
        let raw: RawDialog = serde_json::from_str(text).map_err(|e| IngestError::Parse {
            line,
            message: e.to_string(),
        })?;
        let mut utterances = Vec::with_capacity(raw.utterances.len());
        for (index, u) in raw.utterances.into_iter().enumerate() {
            let speaker = Speaker::parse(&u.speaker).ok_or_else(|| IngestError::UnknownSpeaker {
                line,
                speaker: u.speaker.clone(),
            })?;
            let problem = if u.text.is_empty() {
                Some("empty text")
            } else if !quotes_balanced(&u.text) {
                Some("unbalanced double quotes")
            } else {
                None
            };
            if let Some(problem) = problem {
                return Err(IngestError::BadUtterance {
                    line,
                    dialog_id: raw.dialog_id,
                    index,
                    problem: problem.to_owned(),
                });
            }
            utterances.push(Utterance {
                speaker,
                text: u.text,
                index,
            });
        }
        if !utterances.iter().any(|u| u.speaker == Speaker::Seeker) {
            return Err(IngestError::EmptyDialog {
                line,
                dialog_id: raw.dialog_id,
            });
        }
        if !ids.insert(raw.dialog_id.clone()) {
            return Err(IngestError::DuplicateDialog {
                line,
                dialog_id: raw.dialog_id,
            });
        }
        dialogs.push(Dialog {
            dialog_id: raw.dialog_id,
            utterances,
        });
    }
    Ok(DialogCorpus { dialogs })
}

pub fn load_dialog_corpus(path: impl AsRef<Path>) -> Result<DialogCorpus, IngestError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dialog_corpus(&content)
}

/// Precomputed system responses, keyed by `(dialog_id, cut_index)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResponseSet {
    pub entries: BTreeMap<(String, usize), BTreeMap<String, String>>,
}

impl ResponseSet {
    pub fn system_ids(&self) -> Vec<String> {
        self.entries
            .values()
            .next()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }
}

#[derive(Deserialize)]
struct RawResponseEntry {
    dialog_id: String,
    cut_index: usize,
    responses: BTreeMap<String, String>,
}

pub fn parse_response_set(content: &str) -> Result<ResponseSet, IngestError> {
    let mut set = ResponseSet::default();
    let mut expected: Option<Vec<String>> = None;
    for (line, text) in records(content) {
        let raw: RawResponseEntry = serde_json::from_str(text).map_err(|e| IngestError::Parse {
            line,
            message: e.to_string(),
        })?;
        let found: Vec<String> = raw.responses.keys().cloned().collect();
        match &expected {
            None => expected = Some(found),
            Some(exp) if *exp != found => {
                return Err(IngestError::InconsistentSystems {
                    line,
                    expected: exp.clone(),
                    found,
                })
            }
            _ => {}
        }
        let key = (raw.dialog_id, raw.cut_index);
        if set.entries.contains_key(&key) {
            return Err(IngestError::DuplicateResponse {
                line,
                dialog_id: key.0,
                cut_index: key.1,
            });
        }
        set.entries.insert(key, raw.responses);
    }
    Ok(set)
}

pub fn load_response_set(path: impl AsRef<Path>) -> Result<ResponseSet, IngestError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    parse_response_set(&content)
}

/// A double-quoted item mention. `start..end` is the byte range of the title,
/// excluding the surrounding quotes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSpan {
    pub start: usize,
    pub end: usize,
    pub title: String,
}

/// Finds the item titles marked up as `"..."`, left to right.
pub fn scan_item_markup(text: &str) -> Result<Vec<ItemSpan>, IngestError> {
    let quotes: Vec<usize> = text.match_indices('"').map(|(i, _)| i).collect();
    if !quotes.len().is_multiple_of(2) {
        return Err(IngestError::UnbalancedQuotes {
            quotes: quotes.len(),
        });
    }
    Ok(quotes
        .chunks_exact(2)
        .map(|pair| {
            let (start, end) = (pair[0] + 1, pair[1]);
            ItemSpan {
                start,
                end,
                title: text[start..end].to_owned(),
            }
        })
        .collect())
}

/// Derives the stable situation id: hex of a SHA-256 prefix over
/// `(dialog_id, cut_index)`.
pub fn situation_id_for(dialog_id: &str, cut_index: usize) -> SituationId {
    let h = stable_hash(&[dialog_id.as_bytes(), cut_index.to_string().as_bytes()]);
    SituationId(format!("{h:016x}"))
}

/// The dialog prefix `utterances[0..=cut_index]`, with no responses attached.
pub fn truncate_to_situation(
    dialog: &Dialog,
    cut_index: usize,
) -> Result<DialogSituation, IngestError> {
    let len = dialog.utterances.len();
    let cut = dialog
        .utterances
        .get(cut_index)
        .ok_or_else(|| IngestError::CutOutOfRange {
            dialog_id: dialog.dialog_id.clone(),
            cut_index,
            len,
        })?;
    if cut.speaker != Speaker::Seeker {
        return Err(IngestError::CutNotSeeker {
            dialog_id: dialog.dialog_id.clone(),
            cut_index,
        });
    }
    Ok(DialogSituation {
        situation_id: situation_id_for(&dialog.dialog_id, cut_index),
        source_dialog_id: dialog.dialog_id.clone(),
        utterances: dialog.utterances[..=cut_index].to_vec(),
        responses: BTreeMap::new(),
    })
}

/// The set of situations sessions are sampled from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DialogSituation>", into = "Vec<DialogSituation>")]
pub struct SituationPool {
    situations: Vec<DialogSituation>,
    by_id: HashMap<SituationId, usize>,
}

impl SituationPool {
    pub fn new(situations: Vec<DialogSituation>) -> Result<Self, IngestError> {
        let mut by_id = HashMap::with_capacity(situations.len());
        for (i, s) in situations.iter().enumerate() {
            if by_id.insert(s.situation_id.clone(), i).is_some() {
                return Err(IngestError::DuplicateSituation(s.situation_id.clone()));
            }
        }
        Ok(Self { situations, by_id })
    }

    pub fn situations(&self) -> &[DialogSituation] {
        &self.situations
    }

    pub fn len(&self) -> usize {
        self.situations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.situations.is_empty()
    }

    pub fn get(&self, id: &SituationId) -> Option<&DialogSituation> {
        self.by_id.get(id).map(|&i| &self.situations[i])
    }

    /// Checks every situation against the study's response count.
    pub fn validate_for(&self, study: &Study) -> Result<(), IngestError> {
        for s in &self.situations {
            let violations = s.violations(Some(study.systems_per_situation));
            if !violations.is_empty() {
                return Err(IngestError::InvalidSituation {
                    situation_id: s.situation_id.clone(),
                    violations,
                });
            }
        }
        Ok(())
    }

    /// Number of distinct source dialogs; sessions draw at most one situation
    /// per dialog.
    pub fn distinct_dialogs(&self) -> usize {
        self.situations
            .iter()
            .map(|s| s.source_dialog_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

impl TryFrom<Vec<DialogSituation>> for SituationPool {
    type Error = IngestError;

    fn try_from(v: Vec<DialogSituation>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SituationPool> for Vec<DialogSituation> {
    fn from(p: SituationPool) -> Self {
        p.situations
    }
}

/// Builds one situation per response entry, in sorted `(dialog_id, cut_index)`
/// order. With `sample_size` set, that many entries are drawn uniformly
/// without replacement using `rng_seed` (order stays sorted).
pub fn build_situation_pool(
    corpus: &DialogCorpus,
    responses: &ResponseSet,
    rng_seed: u64,
    sample_size: Option<usize>,
) -> Result<SituationPool, IngestError> {
    let index: HashMap<&str, &Dialog> = corpus
        .dialogs
        .iter()
        .map(|d| (d.dialog_id.as_str(), d))
        .collect();
    let keys: Vec<&(String, usize)> = responses.entries.keys().collect();
    let chosen: Vec<usize> = match sample_size {
        Some(k) if k < keys.len() => Rng::new(rng_seed).choose_indices(keys.len(), k),
        _ => (0..keys.len()).collect(),
    };

    let expected_systems = responses.system_ids().len();
    let mut situations = Vec::with_capacity(chosen.len());
    for i in chosen {
        let key = keys[i];
        let (dialog_id, cut_index) = (key.0.as_str(), key.1);
        let dialog = index
            .get(dialog_id)
            .ok_or_else(|| IngestError::DanglingReference {
                dialog_id: dialog_id.to_owned(),
                cut_index,
            })?;
        let mut situation = truncate_to_situation(dialog, cut_index)?;
        situation.responses = responses.entries[key].clone();
        let violations = situation.violations(Some(expected_systems));
        if !violations.is_empty() {
            return Err(IngestError::InvalidSituation {
                situation_id: situation.situation_id,
                violations,
            });
        }
        situations.push(situation);
    }
    SituationPool::new(situations)
}

pub fn load_pool_file(path: impl AsRef<Path>) -> Result<SituationPool, IngestError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let pool: SituationPool = serde_json::from_str(&content).map_err(|e| IngestError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    for s in pool.situations() {
        let violations = s.violations(None);
        if !violations.is_empty() {
            return Err(IngestError::InvalidSituation {
                situation_id: s.situation_id.clone(),
                violations,
            });
        }
    }
    Ok(pool)
}

pub fn write_pool_file(pool: &SituationPool, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(pool).expect("pool serializes");
    fs::write(path, json + "\n").map_err(io_err(path))
}
