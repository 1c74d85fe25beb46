//! CSV tables for external statistics tools. Column order is fixed and
//! quoting follows RFC 4180 (via the `csv` crate).

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::analysis::{ItemDistribution, ItemSummary, StudyStats};
use crate::model::{RatingScale, SessionRecord};

pub const RATINGS_HEADER: [&str; 11] = [
    "worker_id",
    "session_id",
    "task_index",
    "situation_id",
    "system_id",
    "slot",
    "rating",
    "task_total_ms",
    "event_times_ms",
    "flags",
    "discarded",
];

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Long format: one row per non-attention rating.
pub fn write_ratings<W: Write>(records: &[SessionRecord], out: W) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATINGS_HEADER)?;
    for r in records {
        let flags: Vec<&str> = r.reliability.implicit_flags.iter().map(|f| f.as_str()).collect();
        let flags = flags.join(";");
        for task in &r.tasks {
            let systems = task.situation.system_ids();
            let events: Vec<String> = task.per_event_times_ms.iter().map(u64::to_string).collect();
            let events = events.join(";");
            for (slot, &idx) in task.display_order.iter().enumerate() {
                let Some(system) = systems.get(idx) else { continue };
                let Some(rating) = task.ratings.get(*system) else { continue };
                w.write_record([
                    r.worker_id.as_str(),
                    r.session_id.as_str(),
                    &task.task_index.to_string(),
                    task.situation_id.as_str(),
                    system,
                    &slot.to_string(),
                    &rating.to_string(),
                    &task.task_total_ms.to_string(),
                    &events,
                    &flags,
                    &r.reliability.discarded.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per system. `sd_population` divides by n.
pub fn write_system_summary<W: Write>(
    stats: &StudyStats,
    scale: &RatingScale,
    out: W,
) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["system_id".to_owned(), "n".into(), "mean".into(), "median".into(), "sd_population".into()];
    header.extend((1..=scale.points).map(|p| format!("count_{p}")));
    w.write_record(&header)?;
    for (system, s) in &stats.systems {
        let mut row = vec![
            system.clone(),
            s.n.to_string(),
            opt(s.mean),
            opt(s.median),
            opt(s.sd_population),
        ];
        row.extend((1..=scale.points).map(|p| s.histogram.get(&p).copied().unwrap_or(0).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Rows of `section,item_id,kind,value,count` for questionnaire and
/// demographics items. Free-text answers appear one per row with count 1.
pub fn write_questionnaire<W: Write>(stats: &StudyStats, out: W) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["section", "item_id", "kind", "value", "count"])?;
    let sections: [(&str, &[ItemSummary]); 2] =
        [("questionnaire", &stats.questionnaire), ("demographics", &stats.demographics)];
    for (section, items) in sections {
        for item in items {
            match &item.distribution {
                ItemDistribution::Likert { histogram, .. } => {
                    for (v, c) in histogram {
                        w.write_record([section, &item.item_id, "LIKERT_5", &v.to_string(), &c.to_string()])?;
                    }
                }
                ItemDistribution::SingleChoice { counts } => {
                    for (o, c) in counts {
                        w.write_record([section, &item.item_id, "SINGLE_CHOICE", o, &c.to_string()])?;
                    }
                }
                ItemDistribution::FreeText { responses } => {
                    for t in responses {
                        w.write_record([section, &item.item_id, "FREE_TEXT", t, "1"])?;
                    }
                }
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Which tables [`export_csv`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Ratings,
    Summary,
    Questionnaire,
    All,
}

fn create(path: PathBuf) -> Result<(File, PathBuf), TableError> {
    File::create(&path)
        .map(|f| (f, path.clone()))
        .map_err(|source| TableError::Io { path, source })
}

/// Writes the requested tables into `dir` and returns the paths written:
/// `ratings.csv`, `system_summary.csv`, `questionnaire.csv`.
pub fn export_csv(
    dir: &Path,
    kind: TableKind,
    records: &[SessionRecord],
    stats: &StudyStats,
    scale: &RatingScale,
) -> Result<Vec<PathBuf>, TableError> {
    std::fs::create_dir_all(dir).map_err(|source| TableError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    if matches!(kind, TableKind::Ratings | TableKind::All) {
        let (f, p) = create(dir.join("ratings.csv"))?;
        write_ratings(records, f)?;
        written.push(p);
    }
    if matches!(kind, TableKind::Summary | TableKind::All) {
        let (f, p) = create(dir.join("system_summary.csv"))?;
        write_system_summary(stats, scale, f)?;
        written.push(p);
    }
    if matches!(kind, TableKind::Questionnaire | TableKind::All) {
        let (f, p) = create(dir.join("questionnaire.csv"))?;
        write_questionnaire(stats, f)?;
        written.push(p);
    }
    Ok(written)
}
