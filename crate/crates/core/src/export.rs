//! The versioned export document: one study configuration plus every session
//! record collected for it.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "study": { ...Study... },
//!   "records": [ { ...SessionRecord... }, ... ]
//! }
//! ```
//!
//! Records appear in storage order. All maps are ordered, so the same store
//! content always serializes to the same bytes.

use serde::{Deserialize, Serialize};

use crate::model::{SessionRecord, Study};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportDocument {
    pub format_version: u32,
    pub study: Study,
    pub records: Vec<SessionRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("unsupported export format version {found:?} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: Option<serde_json::Value> },
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExportDocument {
    pub fn new(study: Study, records: Vec<SessionRecord>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            study,
            records,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("export serializes");
        s.push('\n');
        s
    }
}

/// Parses and version-checks an export document.
pub fn parse_export(json: &str) -> Result<ExportDocument, ExportError> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    let version = value.get("format_version");
    if version.and_then(|v| v.as_u64()) != Some(u64::from(FORMAT_VERSION)) {
        return Err(ExportError::VersionMismatch {
            found: version.cloned(),
        });
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ExportError::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })
}
