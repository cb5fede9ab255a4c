//! The `gridqa` command line.
//!
//! Exit codes: 0 success, 1 partial failure, 2 configuration error, 3 every
//! inference request failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{self, DatasetError};
use crate::inference::{self, BackendKind};
use crate::pipeline::{Pipeline, PipelineError, RunConfig};
use crate::prompt::PromptMode;
use crate::scoring::{self, EvalReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ALL_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gridqa", version, about = "Grid-image video QA: preprocess, evaluate, score")]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output location: run directory, or output file for `adapt` and `export-finetune`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Ingest worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Grid side N (N×N frames per grid).
    #[arg(long, global = true)]
    pub n: Option<u32>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Direct,
    Explain,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Nextqa,
    Star,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Http,
    MockFixed,
    MockOracle,
}

#[derive(Debug, Args, Default)]
pub struct InputArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Root for relative video paths.
    #[arg(long)]
    pub videos: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Response of the mock-fixed backend.
    #[arg(long)]
    pub fixed_answer: Option<String>,
    /// First retry delay in milliseconds.
    #[arg(long)]
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a NExT-QA CSV or STAR JSON file into a manifest.
    Adapt {
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        videos: PathBuf,
    },
    /// Sample frames and write one grid image per video.
    Preprocess {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Run inference over preprocessed grids.
    Eval {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        grids: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score a record file against a manifest.
    Score {
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Full runs for several grid sides, tabulated side by side.
    Ablate {
        #[arg(long, value_delimiter = ',', required = true)]
        ns: Vec<u32>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Compare report files; deltas are against the first.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Row labels, in report order.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
    },
    /// Write visual-instruction-tuning records for a manifest.
    ExportFinetune {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        grids: Option<PathBuf>,
        /// Leave the answer-format sentence out of the prompts.
        #[arg(long)]
        no_suffix: bool,
    },
    /// Preprocess, eval and score in one go.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

/// Failure carrying the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::Dataset(
                DatasetError::ParseFailure { .. }
                | DatasetError::DuplicateQid { .. }
                | DatasetError::BadAnswerIndex { .. }
                | DatasetError::MissingColumn(_),
            ) => EXIT_CONFIG,
            PipelineError::Dataset(DatasetError::Io { .. }) => EXIT_CONFIG,
            _ => EXIT_PARTIAL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<scoring::ScoringError> for Failure {
    fn from(e: scoring::ScoringError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<inference::InferenceError> for Failure {
    fn from(e: inference::InferenceError) -> Self {
        PipelineError::from(e).into()
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_file(path).map_err(|e| config_error(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(w) = cli.workers {
        cfg.ingest.workers = w;
    }
    if let Some(n) = cli.n {
        cfg.grid.n = Some(n);
    }
    if let Some(m) = cli.mode {
        cfg.mode = match m {
            ModeArg::Direct => PromptMode::Direct,
            ModeArg::Explain => PromptMode::Explain,
        };
    }
    Ok(cfg)
}

fn apply_input(cfg: &mut RunConfig, input: &InputArgs) {
    if let Some(m) = &input.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(v) = &input.videos {
        cfg.videos = Some(v.clone());
    }
}

fn apply_backend(cfg: &mut RunConfig, b: &BackendArgs) {
    let be = &mut cfg.backend;
    if let Some(kind) = b.backend {
        be.kind = match kind {
            BackendArg::Http => BackendKind::HttpChat,
            BackendArg::MockFixed => BackendKind::MockFixed,
            BackendArg::MockOracle => BackendKind::MockOracle,
        };
    }
    if let Some(e) = &b.endpoint {
        be.endpoint = Some(e.clone());
    }
    if let Some(m) = &b.model {
        be.model_name = m.clone();
    }
    if let Some(k) = b.max_in_flight {
        be.max_in_flight = k;
    }
    if let Some(r) = b.retries {
        be.retries = r;
    }
    if let Some(t) = b.timeout {
        be.timeout_secs = t;
    }
    if let Some(t) = b.temperature {
        be.temperature = t;
    }
    if let Some(a) = &b.fixed_answer {
        be.fixed_answer = a.clone();
    }
    if let Some(ms) = b.backoff_ms {
        be.backoff_ms = ms;
    }
}

fn report_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if stem == "report" {
        if let Some(parent) = path.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

fn outcome_code(out: &crate::pipeline::RunOutcome) -> i32 {
    if out.all_failed {
        EXIT_ALL_FAILED
    } else if !out.preprocess_failures.is_empty() || out.transport_errors() > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::Adapt { format, input, videos } => {
            let out = cli.out.clone().ok_or_else(|| config_error("adapt needs --out"))?;
            let adapted = match format {
                FormatArg::Nextqa => dataset::adapt_nextqa(input, videos)?,
                FormatArg::Star => dataset::adapt_star(input, videos)?,
            };
            adapted.manifest.save(&out)?;
            for r in &adapted.rejected {
                let _ = writeln!(stderr, "rejected: {}", r.error);
            }
            let _ = writeln!(
                stdout,
                "wrote {} items to {} ({} rejected)",
                adapted.manifest.len(),
                out.display(),
                adapted.rejected.len()
            );
            Ok(if adapted.rejected.is_empty() {
                EXIT_OK
            } else {
                EXIT_PARTIAL
            })
        }
        Command::Preprocess { input } => {
            apply_input(&mut cfg, input);
            let p = Pipeline::new(cfg)?;
            let s = p.preprocess()?;
            let _ = writeln!(
                stdout,
                "preprocess: {} grids generated, {} up to date, {} failed ({} plans)",
                s.generated,
                s.skipped,
                s.failures.len(),
                s.plans.len()
            );
            for f in &s.failures {
                let _ = writeln!(stderr, "failed {}: {}", f.qid, f.message);
            }
            Ok(if s.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
        }
        Command::Eval { input, grids, backend } => {
            apply_input(&mut cfg, input);
            apply_backend(&mut cfg, backend);
            if let Some(g) = grids {
                cfg.grids = Some(g.clone());
            }
            let p = Pipeline::new(cfg)?;
            let (records, all_failed) = p.eval()?;
            let failed = records
                .iter()
                .filter(|r| r.status == inference::RecordStatus::TransportError)
                .count();
            let _ = writeln!(
                stdout,
                "eval: {} records, {} transport errors -> {}",
                records.len(),
                failed,
                p.config.out.join("records.jsonl").display()
            );
            Ok(if all_failed {
                EXIT_ALL_FAILED
            } else if failed > 0 {
                EXIT_PARTIAL
            } else {
                EXIT_OK
            })
        }
        Command::Score { records, input } => {
            apply_input(&mut cfg, input);
            let p = Pipeline::new(cfg)?;
            let records = inference::read_records(records)?;
            let report = if cli.out.is_some() {
                p.score(&records)?
            } else {
                scoring::score(&records, &p.manifest, &p.fingerprint())?
            };
            let _ = write!(stdout, "{}", report.render(&p.manifest.name));
            Ok(EXIT_OK)
        }
        Command::Ablate { ns, input, backend } => {
            apply_input(&mut cfg, input);
            apply_backend(&mut cfg, backend);
            let p = Pipeline::new(cfg)?;
            let (runs, table) = p.ablate(ns)?;
            let _ = write!(stdout, "{}", table.render());
            Ok(runs.iter().map(|(_, o)| outcome_code(o)).max().unwrap_or(EXIT_OK))
        }
        Command::Compare { reports, labels } => {
            if !labels.is_empty() && labels.len() != reports.len() {
                return Err(config_error("--labels must name every report"));
            }
            let loaded = reports
                .iter()
                .enumerate()
                .map(|(i, path)| {
                    let label = labels.get(i).cloned().unwrap_or_else(|| report_label(path));
                    EvalReport::load(path).map(|r| (label, r))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let table = scoring::compare(&loaded)?;
            let _ = write!(stdout, "{}", table.render());
            Ok(EXIT_OK)
        }
        Command::ExportFinetune {
            input,
            grids,
            no_suffix,
        } => {
            apply_input(&mut cfg, input);
            if let Some(g) = grids {
                cfg.grids = Some(g.clone());
            }
            if *no_suffix {
                cfg.export.include_suffix = false;
            }
            let out = cli
                .out
                .clone()
                .ok_or_else(|| config_error("export-finetune needs --out"))?;
            let p = Pipeline::new(cfg)?;
            let n = p.export_finetune(&out)?;
            let _ = writeln!(stdout, "wrote {n} finetune records to {}", out.display());
            Ok(EXIT_OK)
        }
        Command::Run { input, backend } => {
            apply_input(&mut cfg, input);
            apply_backend(&mut cfg, backend);
            let p = Pipeline::new(cfg)?;
            let out = p.run_all()?;
            for f in &out.preprocess_failures {
                let _ = writeln!(stderr, "failed {}: {}", f.qid, f.message);
            }
            let _ = write!(stdout, "{}", out.report.render(&p.manifest.name));
            Ok(outcome_code(&out))
        }
    }
}
