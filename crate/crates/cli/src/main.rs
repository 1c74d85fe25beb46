//! `crseval`: study analysis and data preparation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crseval::analysis::{
    compute_stats, filter_records, icc_oneway, participant_matrix, records_for_analysis, AnalysisOptions,
};
use crseval::export::ExportError;
use crseval::ingest::{build_situation_pool, load_dialog_corpus, load_response_set, write_pool_file, IngestError};
use crseval::tables::{export_csv, TableError, TableKind};
use crseval::{parse_export, ExportDocument, FileStore, ImplicitThresholds, RecordStore, StoreError, StudyId};

#[derive(Debug, Parser)]
#[command(name = "crseval", version, about = "Analyze rating-study exports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct AnalysisArgs {
    /// Export document (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Directory for output files; results go to stdout when omitted.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also analyze workers that failed the attention check.
    #[arg(long)]
    include_discarded: bool,
    /// Recompute timing flags with these thresholds (JSON).
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Ratings,
    Summary,
    Questionnaire,
    All,
}

impl From<Kind> for TableKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Ratings => TableKind::Ratings,
            Kind::Summary => TableKind::Summary,
            Kind::Questionnaire => TableKind::Questionnaire,
            Kind::All => TableKind::All,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-system summaries, ICC, questionnaire tallies and worker counts (JSON).
    Summarize(AnalysisArgs),
    /// One-way ICC(1) over each participant's ratings in task order.
    Icc(AnalysisArgs),
    /// Write kept.json and discarded.json export documents.
    Filter(AnalysisArgs),
    /// Write CSV tables.
    Csv {
        #[command(flatten)]
        args: AnalysisArgs,
        #[arg(long, value_enum, default_value = "all")]
        kind: Kind,
    },
    /// Build a situation pool from a dialog corpus and a response file.
    BuildPool {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep a random subset of this many situations.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Export one study from a record store file.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "default")]
        study_id: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Export {
        path: PathBuf,
        #[source]
        source: ExportError,
    },
    #[error("{path}: {source}")]
    Thresholds {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("--output-dir is required for this command")]
    NeedOutputDir,
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, content).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn emit(output_dir: Option<&Path>, file: &str, content: &str) -> Result<(), CliError> {
    match output_dir {
        Some(dir) => {
            let path = dir.join(file);
            write(&path, content)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(content.as_bytes());
            Ok(())
        }
    }
}

fn load(args: &AnalysisArgs) -> Result<(ExportDocument, AnalysisOptions), CliError> {
    let doc = parse_export(&read(&args.input)?).map_err(|source| CliError::Export {
        path: args.input.clone(),
        source,
    })?;
    let thresholds = match &args.thresholds {
        Some(p) => Some(
            serde_json::from_str::<ImplicitThresholds>(&read(p)?).map_err(|source| CliError::Thresholds {
                path: p.clone(),
                source,
            })?,
        ),
        None => None,
    };
    let opts = AnalysisOptions {
        include_discarded: args.include_discarded,
        thresholds,
    };
    Ok((doc, opts))
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Summarize(args) => {
            let (doc, opts) = load(&args)?;
            let stats = compute_stats(&doc, &opts);
            emit(args.output_dir.as_deref(), "stats.json", &pretty(&stats))
        }
        Command::Icc(args) => {
            let (doc, opts) = load(&args)?;
            let used = records_for_analysis(&filter_records(&doc, &opts), &opts);
            let matrix = participant_matrix(&used);
            let result = match icc_oneway(&matrix) {
                Ok(v) => serde_json::json!({
                    "icc": v,
                    "participants": matrix.len(),
                    "ratings_per_participant": matrix.first().map_or(0, Vec::len),
                }),
                Err(e) => serde_json::json!({ "icc": null, "note": e.to_string() }),
            };
            emit(args.output_dir.as_deref(), "icc.json", &pretty(&result))
        }
        Command::Filter(args) => {
            let (doc, opts) = load(&args)?;
            let dir = args.output_dir.as_deref().ok_or(CliError::NeedOutputDir)?;
            let partition = filter_records(&doc, &opts);
            let (kept, discarded) = (partition.kept.len(), partition.discarded.len());
            let kept_doc = ExportDocument::new(doc.study.clone(), partition.kept);
            let discarded_doc = ExportDocument::new(doc.study, partition.discarded);
            emit(Some(dir), "kept.json", &kept_doc.to_json())?;
            emit(Some(dir), "discarded.json", &discarded_doc.to_json())?;
            println!("kept {kept} records, discarded {discarded}");
            Ok(())
        }
        Command::Csv { args, kind } => {
            let (doc, opts) = load(&args)?;
            let dir = args.output_dir.as_deref().ok_or(CliError::NeedOutputDir)?;
            let stats = compute_stats(&doc, &opts);
            let used = records_for_analysis(&filter_records(&doc, &opts), &opts);
            for path in export_csv(dir, kind.into(), &used, &stats, &doc.study.scale)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::BuildPool {
            corpus,
            responses,
            output,
            seed,
            sample,
        } => {
            let corpus = load_dialog_corpus(&corpus)?;
            let responses = load_response_set(&responses)?;
            let pool = build_situation_pool(&corpus, &responses, seed, sample)?;
            write_pool_file(&pool, &output)?;
            println!(
                "{} situations from {} dialogs -> {}",
                pool.len(),
                pool.distinct_dialogs(),
                output.display()
            );
            Ok(())
        }
        Command::Export {
            store,
            study_id,
            output,
        } => {
            let doc = FileStore::open(&store)?.export_study(&StudyId::from(study_id.as_str()))?;
            match output {
                Some(p) => write(&p, &doc.to_json()),
                None => emit(None, "", &doc.to_json()),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
