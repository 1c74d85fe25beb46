//! Document storage for studies and completed session records.
//!
//! [`RecordStore`] is the storage boundary. Two backends ship here:
//! [`MemoryStore`] and [`FileStore`], a single append-only log file.
//!
//! Log format: one entry per line, `<crc32 as 8 hex digits> <json>\n`, where
//! the JSON is `{"study": {...}}` or `{"record": {...}}`. Every append is a
//! single write followed by `fsync`. On open, a torn or corrupt final line is
//! dropped and the log is compacted; damage anywhere else is an error.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::export::ExportDocument;
use crate::model::{SessionId, SessionRecord, Study, StudyId};
use crate::rng::{generate_hit_code, stable_hash, Rng};

/// 1-based position of a record in the store.
pub type RecordId = u64;

const MAX_HIT_CODE_ATTEMPTS: u64 = 64;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    Unavailable(#[from] io::Error),
    #[error("log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("session {0} is already stored")]
    DuplicateSession(SessionId),
    #[error("unknown study {0}")]
    UnknownStudy(StudyId),
    #[error("study {0} is already stored with a different configuration")]
    StudyConflict(StudyId),
    #[error("invalid record: {}", .0.join("; "))]
    InvalidRecord(Vec<String>),
    #[error("could not find a free hit code after {MAX_HIT_CODE_ATTEMPTS} attempts")]
    HitCodesExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PutOutcome {
    pub id: RecordId,
    /// The code actually stored; differs from the submitted one only after
    /// a collision.
    pub hit_code: String,
}

pub trait RecordStore: Send + Sync {
    /// Registers a study. Re-registering an identical study is a no-op.
    fn put_study(&self, study: &Study) -> Result<(), StoreError>;
    fn study(&self, id: &StudyId) -> Result<Option<Study>, StoreError>;
    /// Durably stores a completed session record.
    fn put_record(&self, record: SessionRecord) -> Result<PutOutcome, StoreError>;
    fn get_record(&self, id: RecordId) -> Result<Option<SessionRecord>, StoreError>;
    /// Records of one study in storage order.
    fn records_for_study(&self, id: &StudyId) -> Result<Vec<SessionRecord>, StoreError>;
    fn has_completed(&self, study: &StudyId, worker_id: &str) -> Result<bool, StoreError>;

    fn export_study(&self, id: &StudyId) -> Result<ExportDocument, StoreError> {
        let study = self
            .study(id)?
            .ok_or_else(|| StoreError::UnknownStudy(id.clone()))?;
        Ok(ExportDocument::new(study, self.records_for_study(id)?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LogEntry {
    Study(Study),
    Record(SessionRecord),
}

#[derive(Debug, Default)]
struct Index {
    studies: BTreeMap<StudyId, Study>,
    records: Vec<SessionRecord>,
    sessions: HashSet<SessionId>,
    hit_codes: HashSet<(StudyId, String)>,
    workers: HashSet<(StudyId, String)>,
}

impl Index {
    /// Returns `true` when the study is new and must be written.
    fn check_study(&self, study: &Study) -> Result<bool, StoreError> {
        match self.studies.get(&study.study_id) {
            None => Ok(true),
            Some(existing) if existing == study => Ok(false),
            Some(_) => Err(StoreError::StudyConflict(study.study_id.clone())),
        }
    }

    fn prepare_record(&self, mut record: SessionRecord) -> Result<SessionRecord, StoreError> {
        let study = self
            .studies
            .get(&record.study_id)
            .ok_or_else(|| StoreError::UnknownStudy(record.study_id.clone()))?;
        let violations = record.violations(&study.scale);
        if !violations.is_empty() {
            return Err(StoreError::InvalidRecord(violations));
        }
        if self.sessions.contains(&record.session_id) {
            return Err(StoreError::DuplicateSession(record.session_id));
        }
        let mut attempt = 0;
        while self
            .hit_codes
            .contains(&(record.study_id.clone(), record.hit_code.clone()))
        {
            attempt += 1;
            if attempt > MAX_HIT_CODE_ATTEMPTS {
                return Err(StoreError::HitCodesExhausted);
            }
            let seed = stable_hash(&[record.session_id.as_str().as_bytes(), &attempt.to_be_bytes()]);
            record.hit_code = generate_hit_code(&mut Rng::new(seed));
        }
        Ok(record)
    }

    fn apply(&mut self, entry: LogEntry) -> Option<RecordId> {
        match entry {
            LogEntry::Study(study) => {
                self.studies.insert(study.study_id.clone(), study);
                None
            }
            LogEntry::Record(record) => {
                self.sessions.insert(record.session_id.clone());
                self.hit_codes
                    .insert((record.study_id.clone(), record.hit_code.clone()));
                self.workers
                    .insert((record.study_id.clone(), record.worker_id.clone()));
                self.records.push(record);
                Some(self.records.len() as RecordId)
            }
        }
    }

    fn get(&self, id: RecordId) -> Option<SessionRecord> {
        let pos = usize::try_from(id).ok()?.checked_sub(1)?;
        self.records.get(pos).cloned()
    }

    fn for_study(&self, id: &StudyId) -> Vec<SessionRecord> {
        self.records
            .iter()
            .filter(|r| &r.study_id == id)
            .cloned()
            .collect()
    }

    fn entries(&self) -> impl Iterator<Item = LogEntry> + '_ {
        self.studies
            .values()
            .cloned()
            .map(LogEntry::Study)
            .chain(self.records.iter().cloned().map(LogEntry::Record))
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Volatile store for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemoryStore {
    index: Mutex<Index>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl RecordStore for MemoryStore {
    fn put_study(&self, study: &Study) -> Result<(), StoreError> {
        let mut index = lock(&self.index);
        if index.check_study(study)? {
            index.apply(LogEntry::Study(study.clone()));
        }
        Ok(())
    }

    fn study(&self, id: &StudyId) -> Result<Option<Study>, StoreError> {
        Ok(lock(&self.index).studies.get(id).cloned())
    }

    fn put_record(&self, record: SessionRecord) -> Result<PutOutcome, StoreError> {
        let mut index = lock(&self.index);
        let record = index.prepare_record(record)?;
        let hit_code = record.hit_code.clone();
        let id = index.apply(LogEntry::Record(record)).expect("record id");
        Ok(PutOutcome { id, hit_code })
    }

    fn get_record(&self, id: RecordId) -> Result<Option<SessionRecord>, StoreError> {
        Ok(lock(&self.index).get(id))
    }

    fn records_for_study(&self, id: &StudyId) -> Result<Vec<SessionRecord>, StoreError> {
        Ok(lock(&self.index).for_study(id))
    }

    fn has_completed(&self, study: &StudyId, worker_id: &str) -> Result<bool, StoreError> {
        Ok(lock(&self.index)
            .workers
            .contains(&(study.clone(), worker_id.to_owned())))
    }
}

fn encode_line(entry: &LogEntry) -> Vec<u8> {
    let json = serde_json::to_string(entry).expect("log entry serializes");
    let mut line = format!("{:08x} ", crc32fast::hash(json.as_bytes())).into_bytes();
    line.extend_from_slice(json.as_bytes());
    line.push(b'\n');
    line
}

fn decode_line(line: &[u8]) -> Result<LogEntry, String> {
    let text = std::str::from_utf8(line).map_err(|e| e.to_string())?;
    let (crc, json) = text.split_once(' ').ok_or("missing checksum")?;
    let expected = u32::from_str_radix(crc, 16).map_err(|e| e.to_string())?;
    if crc32fast::hash(json.as_bytes()) != expected {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

#[derive(Debug)]
struct FileInner {
    index: Index,
    file: File,
}

/// Append-log store backed by a single file.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    inner: Mutex<FileInner>,
}

impl FileStore {
    /// Opens (or creates) the log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_owned();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };

        let mut index = Index::default();
        let mut torn = false;
        let mut offset = 0;
        let mut line_no = 0;
        while offset < bytes.len() {
            line_no += 1;
            let rest = &bytes[offset..];
            let (line, complete) = match rest.iter().position(|&b| b == b'\n') {
                Some(n) => (&rest[..n], true),
                None => (rest, false),
            };
            let next = offset + line.len() + usize::from(complete);
            match decode_line(line) {
                Ok(entry) if complete => {
                    index.apply(entry);
                    offset = next;
                }
                result => {
                    if next < bytes.len() {
                        let reason = result.err().unwrap_or_else(|| "missing newline".into());
                        return Err(StoreError::Corrupt {
                            line: line_no,
                            reason,
                        });
                    }
                    torn = true;
                    break;
                }
            }
        }

        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let store = Self {
            path,
            inner: Mutex::new(FileInner { index, file }),
        };
        if torn {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rewrites the log from the in-memory index into a temporary file and
    /// atomically renames it over the original.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut inner = lock(&self.inner);
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut out = File::create(&tmp)?;
            for entry in inner.index.entries() {
                out.write_all(&encode_line(&entry))?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            // Persist the rename; not every platform allows syncing directories.
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        inner.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }

    fn append(inner: &mut FileInner, entry: &LogEntry) -> Result<(), StoreError> {
        inner.file.write_all(&encode_line(entry))?;
        inner.file.sync_data()?;
        Ok(())
    }
}

impl RecordStore for FileStore {
    fn put_study(&self, study: &Study) -> Result<(), StoreError> {
        let mut inner = lock(&self.inner);
        if inner.index.check_study(study)? {
            let entry = LogEntry::Study(study.clone());
            Self::append(&mut inner, &entry)?;
            inner.index.apply(entry);
        }
        Ok(())
    }

    fn study(&self, id: &StudyId) -> Result<Option<Study>, StoreError> {
        Ok(lock(&self.inner).index.studies.get(id).cloned())
    }

    fn put_record(&self, record: SessionRecord) -> Result<PutOutcome, StoreError> {
        let mut inner = lock(&self.inner);
        let record = inner.index.prepare_record(record)?;
        let hit_code = record.hit_code.clone();
        let entry = LogEntry::Record(record);
        Self::append(&mut inner, &entry)?;
        let id = inner.index.apply(entry).expect("record id");
        Ok(PutOutcome { id, hit_code })
    }

    fn get_record(&self, id: RecordId) -> Result<Option<SessionRecord>, StoreError> {
        Ok(lock(&self.inner).index.get(id))
    }

    fn records_for_study(&self, id: &StudyId) -> Result<Vec<SessionRecord>, StoreError> {
        Ok(lock(&self.inner).index.for_study(id))
    }

    fn has_completed(&self, study: &StudyId, worker_id: &str) -> Result<bool, StoreError> {
        Ok(lock(&self.inner)
            .index
            .workers
            .contains(&(study.clone(), worker_id.to_owned())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ReliabilityVerdict, StudyId};
    use std::collections::BTreeMap;

    fn record(session: &str, hit: &str) -> SessionRecord {
        SessionRecord {
            study_id: StudyId::from("default"),
            session_id: SessionId::from(session),
            worker_id: format!("worker-{session}"),
            hit_code: hit.to_owned(),
            created_at_ms: 0,
            completed_at_ms: 1,
            tasks: vec![],
            questionnaire_answers: BTreeMap::new(),
            total_duration_ms: 1,
            reliability: ReliabilityVerdict {
                attention_passed: true,
                ..Default::default()
            },
        }
    }

    fn stores() -> (tempfile::TempDir, Vec<Box<dyn RecordStore>>) {
        let dir = tempfile::tempdir().unwrap();
        let file = FileStore::open(dir.path().join("log")).unwrap();
        (dir, vec![Box::new(MemoryStore::new()), Box::new(file)])
    }

    #[test]
    fn round_trip_and_duplicates() {
        let (_dir, stores) = stores();
        for store in stores {
            store.put_study(&Study::default()).unwrap();
            store.put_study(&Study::default()).unwrap();
            let r = record("a", "AAAAAAAA");
            let out = store.put_record(r.clone()).unwrap();
            assert_eq!(store.get_record(out.id).unwrap(), Some(r.clone()));
            assert!(matches!(store.put_record(r), Err(StoreError::DuplicateSession(_))));
            assert!(store.has_completed(&StudyId::from("default"), "worker-a").unwrap());
            assert!(!store.has_completed(&StudyId::from("default"), "worker-b").unwrap());
        }
    }

    #[test]
    fn unknown_study_and_conflict() {
        let (_dir, stores) = stores();
        for store in stores {
            assert!(matches!(
                store.put_record(record("a", "X")),
                Err(StoreError::UnknownStudy(_))
            ));
            store.put_study(&Study::default()).unwrap();
            let changed = Study {
                rng_seed: 9,
                ..Study::default()
            };
            assert!(matches!(store.put_study(&changed), Err(StoreError::StudyConflict(_))));
            assert!(matches!(
                store.export_study(&StudyId::from("nope")),
                Err(StoreError::UnknownStudy(_))
            ));
        }
    }

    #[test]
    fn invalid_record_rejected() {
        let store = MemoryStore::new();
        store.put_study(&Study::default()).unwrap();
        let mut r = record("a", "X");
        r.reliability.attention_passed = false;
        assert!(matches!(store.put_record(r), Err(StoreError::InvalidRecord(_))));
    }

    #[test]
    fn hit_code_collision_is_redrawn() {
        let (_dir, stores) = stores();
        for store in stores {
            store.put_study(&Study::default()).unwrap();
            let first = store.put_record(record("a", "SAMECODE")).unwrap();
            let second = store.put_record(record("b", "SAMECODE")).unwrap();
            assert_eq!(first.hit_code, "SAMECODE");
            assert_ne!(second.hit_code, "SAMECODE");
            assert_eq!(second.hit_code.len(), 8);
            assert_eq!(store.get_record(second.id).unwrap().unwrap().hit_code, second.hit_code);
        }
    }

    #[test]
    fn thousand_sequential_puts() {
        let (_dir, stores) = stores();
        for store in stores {
            store.put_study(&Study::default()).unwrap();
            let mut ids = HashSet::new();
            let mut put = Vec::new();
            for i in 0..1000 {
                let r = record(&format!("s{i}"), &format!("C{i:07}"));
                let out = store.put_record(r.clone()).unwrap();
                assert!(ids.insert(out.id));
                put.push((out.id, r));
            }
            assert_eq!(ids.len(), 1000);
            for (id, r) in put {
                assert_eq!(store.get_record(id).unwrap(), Some(r));
            }
            assert_eq!(store.get_record(0).unwrap(), None);
            assert_eq!(store.get_record(1001).unwrap(), None);
        }
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        {
            let s = FileStore::open(&path).unwrap();
            s.put_study(&Study::default()).unwrap();
            s.put_record(record("a", "AAAAAAAA")).unwrap();
            s.put_record(record("b", "BBBBBBBB")).unwrap();
        }
        let s = FileStore::open(&path).unwrap();
        let export = s.export_study(&StudyId::from("default")).unwrap();
        assert_eq!(export.records.len(), 2);
        assert!(matches!(
            s.put_record(record("a", "CCCCCCCC")),
            Err(StoreError::DuplicateSession(_))
        ));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        {
            let s = FileStore::open(&path).unwrap();
            s.put_study(&Study::default()).unwrap();
            s.put_record(record("a", "AAAAAAAA")).unwrap();
        }
        let intact = fs::read(&path).unwrap();
        let partial = encode_line(&LogEntry::Record(record("b", "BBBBBBBB")));
        for cut in [1, partial.len() / 2, partial.len() - 1] {
            let mut bytes = intact.clone();
            bytes.extend_from_slice(&partial[..cut]);
            fs::write(&path, &bytes).unwrap();
            let s = FileStore::open(&path).unwrap();
            let records = s.records_for_study(&StudyId::from("default")).unwrap();
            assert_eq!(records, vec![record("a", "AAAAAAAA")]);
            assert_eq!(fs::read(&path).unwrap(), intact, "compaction restores the clean log");
            s.put_record(record("b", "BBBBBBBB")).unwrap();
            drop(s);
            assert_eq!(FileStore::open(&path).unwrap().records_for_study(&StudyId::from("default")).unwrap().len(), 2);
            fs::write(&path, &intact).unwrap();
        }
    }

    #[test]
    fn corruption_in_the_middle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        {
            let s = FileStore::open(&path).unwrap();
            s.put_study(&Study::default()).unwrap();
            s.put_record(record("a", "AAAAAAAA")).unwrap();
        }
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(FileStore::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn exports_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let s = FileStore::open(&path).unwrap();
        s.put_study(&Study::default()).unwrap();
        s.put_record(record("a", "AAAAAAAA")).unwrap();
        let id = StudyId::from("default");
        let first = s.export_study(&id).unwrap().to_json();
        drop(s);
        let again = FileStore::open(&path).unwrap().export_study(&id).unwrap().to_json();
        assert_eq!(first, again);
    }
}
