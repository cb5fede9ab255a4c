//! End-to-end runs: preprocess, eval, score, ablate.
//!
//! A run directory holds everything needed to re-score without re-running
//! inference:
//!
//! ```text
//! <out>/config.toml    effective configuration
//! <out>/grids/         <video_id>_N<k>.png
//! <out>/plans.jsonl    one sampling plan per question
//! <out>/records.jsonl  one inference record per question (resume file)
//! <out>/report.json    exact fractions and rendered percents
//! <out>/report.txt     accuracy table
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compositor::{self, grid_file_name, ComposeError, Filter, GridOptions};
use crate::dataset::{self, DatasetError, Manifest, QaItem};
use crate::inference::{self, BackendConfig, BatchItem, InferenceError, InferenceRecord};
use crate::ingest::{DecoderConfig, Ingest, IngestConfig, IngestError, VideoRef};
use crate::pool::for_each_bounded;
use crate::prompt::{self, PromptMode};
use crate::sampler::{FramePlan, SamplerError};
use crate::scoring::{self, Comparison, EvalReport, ScoringError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Grid settings; `n` falls back to the manifest's dataset-family default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(flatten)]
    pub options: GridOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportSection {
    /// Include the answer-format sentence in finetune prompts.
    pub include_suffix: bool,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { include_suffix: true }
    }
}

/// Everything one run needs. Loaded from TOML; CLI flags override fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Root for relative video paths; defaults to the manifest's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub videos: Option<PathBuf>,
    pub out: PathBuf,
    /// Grid directory; defaults to `<out>/grids`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grids: Option<PathBuf>,
    pub mode: PromptMode,
    pub grid: GridSection,
    pub decoder: DecoderConfig,
    pub ingest: IngestConfig,
    pub backend: BackendConfig,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            videos: None,
            out: PathBuf::from("run"),
            grids: None,
            mode: PromptMode::Direct,
            grid: GridSection::default(),
            decoder: DecoderConfig::default(),
            ingest: IngestConfig::default(),
            backend: BackendConfig::default(),
            export: ExportSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grids_dir(&self) -> PathBuf {
        self.grids.clone().unwrap_or_else(|| self.out.join("grids"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.n == Some(0) {
            return Err(PipelineError::Config("grid.n must be at least 1".into()));
        }
        if self.grid.options.side_px == 0 {
            return Err(PipelineError::Config("grid.side_px must be at least 1".into()));
        }
        if let Some(n) = self.grid.n {
            if self.grid.options.side_px < n {
                return Err(PipelineError::Config(format!(
                    "grid.side_px {} is smaller than grid.n {n}",
                    self.grid.options.side_px
                )));
            }
        }
        if self.ingest.workers == 0 {
            return Err(PipelineError::Config("ingest.workers must be at least 1".into()));
        }
        self.backend
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Sidecar record written for every question by [`Pipeline::preprocess`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub qid: String,
    pub video_id: String,
    pub total_frames: u64,
    pub grid_side: u32,
    pub indices: Vec<u64>,
    pub grid: String,
    pub side_px: u32,
    pub cell_px: u32,
    pub letterbox: bool,
    pub filter: Filter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFailure {
    pub qid: String,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct PreprocessSummary {
    pub generated: usize,
    pub skipped: usize,
    pub plans: Vec<PlanRecord>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Error)]
enum VideoJobError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error("creating {0}: {1}")]
    Io(PathBuf, std::io::Error),
}

/// All questions that share one video.
struct VideoJob<'m> {
    video: &'m VideoRef,
    items: Vec<&'m QaItem>,
}

enum JobOutcome {
    Generated(FramePlan, u32),
    Skipped(FramePlan, u32),
}

/// Result of [`Pipeline::run_all`].
#[derive(Debug)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub records: Vec<InferenceRecord>,
    pub preprocess_failures: Vec<ItemFailure>,
    pub all_failed: bool,
}

impl RunOutcome {
    pub fn transport_errors(&self) -> u64 {
        self.report.transport_error_count
    }
}

/// A configured pipeline over one manifest.
pub struct Pipeline {
    pub config: RunConfig,
    pub manifest: Manifest,
    ingest: Arc<Ingest>,
}

impl Pipeline {
    /// Loads the manifest named in `config`, resolving video paths.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let path = config
            .manifest
            .clone()
            .ok_or_else(|| PipelineError::Config("no manifest given".into()))?;
        let manifest = dataset::load_manifest(&path)?;
        let root = config
            .videos
            .clone()
            .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
        Self::with_manifest(config, manifest.resolved(&root))
    }

    pub fn with_manifest(config: RunConfig, manifest: Manifest) -> Result<Self> {
        config.validate()?;
        let ingest = Arc::new(Ingest::new(config.decoder.clone(), config.ingest.clone()));
        Ok(Self {
            config,
            manifest,
            ingest,
        })
    }

    /// Same manifest and decoder state with a different grid side. Probe
    /// results and decoded-frame caches are shared.
    fn with_grid_side(&self, n: u32, out: PathBuf) -> Pipeline {
        let mut config = self.config.clone();
        config.grid.n = Some(n);
        config.out = out;
        config.grids = None;
        Pipeline {
            config,
            manifest: self.manifest.clone(),
            ingest: self.ingest.clone(),
        }
    }

    pub fn grid_side(&self) -> u32 {
        self.config.grid.n.unwrap_or(self.manifest.default_grid_side)
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "N={} side_px={} backend={} mode={}",
            self.grid_side(),
            self.config.grid.options.side_px,
            self.config.backend.describe(),
            self.config.mode
        )
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.config.out).map_err(PipelineError::io(&self.config.out))
    }

    pub fn snapshot_config(&self) -> Result<()> {
        self.ensure_out()?;
        let path = self.out_path("config.toml");
        fs::write(&path, self.config.to_toml()).map_err(PipelineError::io(&path))
    }

    /// Samples, composites and saves one grid per video and writes a plan
    /// record per question. Grids whose plan is unchanged and whose file
    /// exists are skipped.
    pub fn preprocess(&self) -> Result<PreprocessSummary> {
        let grids = self.config.grids_dir();
        fs::create_dir_all(&grids).map_err(PipelineError::io(&grids))?;
        self.ensure_out()?;
        let plans_path = self.out_path("plans.jsonl");
        let previous = read_plans(&plans_path)?;
        let n = self.grid_side();
        let opts = &self.config.grid.options;

        let mut jobs: Vec<VideoJob<'_>> = Vec::new();
        let mut by_source: HashMap<&Path, usize> = HashMap::new();
        for item in &self.manifest.items {
            let key = item.video.source.path();
            match by_source.get(key) {
                Some(&j) => jobs[j].items.push(item),
                None => {
                    by_source.insert(key, jobs.len());
                    jobs.push(VideoJob {
                        video: &item.video,
                        items: vec![item],
                    });
                }
            }
        }

        let plan_record = |item: &QaItem, plan: &FramePlan, cell_px: u32| PlanRecord {
            qid: item.qid.clone(),
            video_id: plan.video_id.clone(),
            total_frames: plan.total_frames,
            grid_side: plan.grid_side,
            indices: plan.indices.clone(),
            grid: grid_file_name(&plan.video_id, n),
            side_px: opts.side_px,
            cell_px,
            letterbox: opts.letterbox,
            filter: opts.filter,
        };

        let work = |_, job: &VideoJob<'_>| -> Result<JobOutcome, VideoJobError> {
            let total = self.ingest.probe(job.video)?;
            let plan = FramePlan::new(job.video.id.clone(), total, n)?;
            let cell_px = opts.side_px / n;
            let grid_path = grids.join(grid_file_name(&job.video.id, n));
            let up_to_date = grid_path.is_file()
                && job
                    .items
                    .iter()
                    .all(|item| previous.get(&item.qid) == Some(&plan_record(item, &plan, cell_px)));
            if up_to_date {
                return Ok(JobOutcome::Skipped(plan, cell_px));
            }
            let frames = self.ingest.fetch_frames(job.video, &plan.indices)?;
            let mut grid = compositor::compose(&frames, n, opts)?;
            grid.video_id = job.video.id.clone();
            // write-then-rename so an interrupted run never leaves a torn grid
            let tmp = grid_path.with_extension("png.tmp");
            compositor::save(&grid, &tmp)?;
            fs::rename(&tmp, &grid_path).map_err(|e| VideoJobError::Io(grid_path.clone(), e))?;
            Ok(JobOutcome::Generated(plan, grid.cell_px))
        };

        let mut summary = PreprocessSummary::default();
        let mut plans: BTreeMap<usize, Vec<PlanRecord>> = BTreeMap::new();
        for_each_bounded(&jobs, self.ingest.workers(), work, |j, outcome| {
            let job = &jobs[j];
            let (plan, cell_px) = match outcome {
                Ok(JobOutcome::Generated(plan, cell_px)) => {
                    summary.generated += 1;
                    (plan, cell_px)
                }
                Ok(JobOutcome::Skipped(plan, cell_px)) => {
                    summary.skipped += 1;
                    (plan, cell_px)
                }
                Err(e) => {
                    summary.failures.extend(job.items.iter().map(|i| ItemFailure {
                        qid: i.qid.clone(),
                        message: e.to_string(),
                    }));
                    return;
                }
            };
            plans.insert(j, job.items.iter().map(|i| plan_record(i, &plan, cell_px)).collect());
        });

        let mut by_qid: HashMap<String, PlanRecord> =
            plans.into_values().flatten().map(|p| (p.qid.clone(), p)).collect();
        summary.plans = self
            .manifest
            .items
            .iter()
            .filter_map(|i| by_qid.remove(&i.qid))
            .collect();
        let order: HashMap<&str, usize> = self
            .manifest
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.qid.as_str(), i))
            .collect();
        summary.failures.sort_by_key(|f| order.get(f.qid.as_str()).copied());
        write_plans(&plans_path, &summary.plans)?;
        Ok(summary)
    }

    fn batch(&self) -> Vec<BatchItem<'_>> {
        let grids = self.config.grids_dir();
        let n = self.grid_side();
        self.manifest
            .items
            .iter()
            .map(|item| BatchItem {
                item,
                image: grids.join(grid_file_name(&item.video.id, n)),
                prompt: prompt::build(item, self.config.mode),
            })
            .collect()
    }

    /// Runs inference for every question, resuming from `records.jsonl`.
    /// Returns the records and whether every request failed.
    pub fn eval(&self) -> Result<(Vec<InferenceRecord>, bool)> {
        self.ensure_out()?;
        let records_path = self.out_path("records.jsonl");
        match inference::run_batch_resumable(&self.batch(), &self.config.backend, &records_path) {
            Ok(records) => Ok((records, false)),
            Err(InferenceError::AllItemsFailed { records }) => Ok((records, true)),
            Err(e) => Err(e.into()),
        }
    }

    /// Scores records and writes `report.json` and `report.txt`.
    pub fn score(&self, records: &[InferenceRecord]) -> Result<EvalReport> {
        self.ensure_out()?;
        let report = scoring::score(records, &self.manifest, &self.fingerprint())?;
        report.save(&self.out_path("report.json"))?;
        let table = self.out_path("report.txt");
        fs::write(&table, report.render(&self.manifest.name)).map_err(PipelineError::io(&table))?;
        Ok(report)
    }

    /// Preprocess, eval and score in one go.
    pub fn run_all(&self) -> Result<RunOutcome> {
        self.snapshot_config()?;
        let pre = self.preprocess()?;
        let (records, all_failed) = self.eval()?;
        let report = self.score(&records)?;
        Ok(RunOutcome {
            report,
            records,
            preprocess_failures: pre.failures,
            all_failed,
        })
    }

    /// One full run per grid side under `<out>/ablate/N<k>`, plus an
    /// ablation table in `<out>/ablation.txt`.
    pub fn ablate(&self, grid_sides: &[u32]) -> Result<(Vec<(u32, RunOutcome)>, Comparison)> {
        if grid_sides.is_empty() {
            return Err(ScoringError::InvalidArgument("no grid sides to ablate".into()).into());
        }
        if let Some(bad) = grid_sides
            .iter()
            .find(|&&n| n == 0 || n > self.config.grid.options.side_px)
        {
            return Err(ScoringError::InvalidArgument(format!("invalid grid side {bad}")).into());
        }
        self.ensure_out()?;
        let mut base = self.config.clone();
        if base.ingest.cache_dir.is_none() {
            base.ingest.cache_dir = Some(self.out_path("frame_cache"));
        }
        let shared = Pipeline {
            ingest: Arc::new(Ingest::new(base.decoder.clone(), base.ingest.clone())),
            config: base,
            manifest: self.manifest.clone(),
        };
        let mut runs = Vec::with_capacity(grid_sides.len());
        for &n in grid_sides {
            let sub = shared.with_grid_side(n, self.out_path(&format!("ablate/N{n}")));
            let outcome = sub.run_all()?;
            runs.push((n, outcome));
        }
        let table = scoring::ablation_table(&runs.iter().map(|(n, o)| (*n, o.report.clone())).collect::<Vec<_>>())?;
        let path = self.out_path("ablation.txt");
        fs::write(&path, table.render()).map_err(PipelineError::io(&path))?;
        Ok((runs, table))
    }

    /// Finetune records for every question, written to `path`.
    pub fn export_finetune(&self, path: &Path) -> Result<usize> {
        let records = dataset::export_finetune(
            &self.manifest,
            &self.config.grids_dir(),
            self.grid_side(),
            self.config.export.include_suffix,
        )?;
        dataset::write_finetune(&records, path)?;
        Ok(records.len())
    }
}

pub fn read_plans(path: &Path) -> Result<HashMap<String, PlanRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(PipelineError::io(path)(e)),
    };
    let mut out = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(PipelineError::io(path))?;
        // unreadable lines only cost a regenerated grid
        if let Ok(p) = serde_json::from_str::<PlanRecord>(&line) {
            out.insert(p.qid.clone(), p);
        }
    }
    Ok(out)
}

fn write_plans(path: &Path, plans: &[PlanRecord]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    let mut w = BufWriter::new(File::create(&tmp).map_err(PipelineError::io(&tmp))?);
    for p in plans {
        let line = serde_json::to_string(p).expect("plans serialize");
        writeln!(w, "{line}").map_err(PipelineError::io(&tmp))?;
    }
    w.flush().map_err(PipelineError::io(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(PipelineError::io(path))
}
