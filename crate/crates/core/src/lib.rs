//! Human evaluation of conversational recommender systems.
//!
//! Judges read a dialog prefix that ends with the seeker's turn and rate the
//! candidate replies of several systems on a labeled scale. This crate holds
//! everything except the HTTP layer:
//!
//! * [`model`]: shared domain types and study validation.
//! * [`ingest`]: dialog corpus and response files, item markup, situation pools.
//! * [`session`]: sampling, randomization, attention checks and the
//!   participant workflow.
//! * [`reliability`]: attention verdicts, timing flags, discard policy.
//! * [`store`] and [`export`]: durable record storage and the export document.
//! * [`analysis`] and [`tables`]: statistics and CSV output.
//! * [`synth`]: synthetic corpora and simulated judges.

pub mod analysis;
pub mod export;
pub mod ingest;
pub mod model;
pub mod reliability;
pub mod rng;
pub mod session;
pub mod store;
pub mod synth;
pub mod tables;

pub use export::{parse_export, ExportDocument, FORMAT_VERSION};
pub use model::{
    validate_study, Answer, DialogSituation, ImplicitFlag, ImplicitThresholds, ItemKind,
    QuestionnaireItem, RatingScale, ReliabilityVerdict, SessionId, SessionRecord, SessionState,
    SituationId, Speaker, Study, StudyId, TaskAssignment, TaskResult, Utterance,
};
pub use session::{Session, SessionEngine, SessionError, SessionEvent, TaskPage, TaskTimings};
pub use store::{FileStore, MemoryStore, RecordStore, StoreError};
