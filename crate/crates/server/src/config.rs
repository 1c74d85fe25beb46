use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;

use crseval::ingest::{load_pool_file, IngestError, SituationPool};
use crseval::{validate_study, FileStore, ImplicitThresholds, RecordStore, StoreError, Study};

use crate::api::AppState;

/// Serves rating sessions over HTTP and stores completed records.
#[derive(Debug, Clone, Parser)]
#[command(name = "crseval-server", version)]
pub struct Config {
    /// Address to listen on. Port 0 picks a free port.
    #[arg(long, env = "CRSEVAL_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Study configuration (JSON). Defaults to the built-in study.
    #[arg(long, env = "CRSEVAL_STUDY")]
    pub study: Option<PathBuf>,
    /// Situation pool (JSON), as written by `crseval build-pool`.
    #[arg(long, env = "CRSEVAL_POOL")]
    pub pool: PathBuf,
    /// Append-log file for completed records. Created if missing.
    #[arg(long, env = "CRSEVAL_STORE")]
    pub store: PathBuf,
    /// Implicit-check thresholds (JSON) overriding the study's own.
    #[arg(long, env = "CRSEVAL_THRESHOLDS")]
    pub thresholds: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid study: {}", .0.join("; "))]
    InvalidStudy(Vec<String>),
    #[error(transparent)]
    Pool(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_owned(),
        source,
    })
}

impl Config {
    pub fn load_study(&self) -> Result<Study, ConfigError> {
        let mut study = match &self.study {
            Some(p) => read_json(p)?,
            None => Study::default(),
        };
        if let Some(p) = &self.thresholds {
            study.implicit_thresholds = read_json::<ImplicitThresholds>(p)?;
        }
        let violations = validate_study(&study);
        if !violations.is_empty() {
            return Err(ConfigError::InvalidStudy(violations));
        }
        Ok(study)
    }

    pub fn load_pool(&self, study: &Study) -> Result<SituationPool, ConfigError> {
        let pool = load_pool_file(&self.pool)?;
        pool.validate_for(study)?;
        Ok(pool)
    }

    /// Loads everything and registers the study with the store.
    pub fn build_state(&self) -> Result<AppState, ConfigError> {
        let study = self.load_study()?;
        let pool = self.load_pool(&study)?;
        if pool.distinct_dialogs() < study.situations_per_session {
            tracing::warn!(
                available = pool.distinct_dialogs(),
                needed = study.situations_per_session,
                "pool too small; session creation will fail"
            );
        }
        let store = FileStore::open(&self.store)?;
        store.put_study(&study)?;
        Ok(AppState::new(study, pool, Arc::new(store)))
    }
}
