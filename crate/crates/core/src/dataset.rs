//! Multi-choice QA manifests, source-format adapters and the finetune exporter.
//!
//! The canonical manifest is line-delimited JSON, one question per line:
//!
//! ```text
//! {"qid": "...", "video": "...", "fps": 30.0, "frame_count": 300, "question": "...",
//!  "options": ["...", "..."], "answer_idx": 1, "qtype": "Causal", "split": "val"}
//! ```
//!
//! `fps` and `frame_count` are optional. Relative `video` paths are resolved
//! against the manifest's directory at run time.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::compositor::grid_file_name;
use crate::ingest::{VideoRef, VideoSource};
use crate::letter::{OptionLetter, MAX_OPTIONS, MIN_OPTIONS};
use crate::prompt::{self, PromptMode};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    ParseFailure { line: usize, message: String },
    #[error("duplicate qid {qid:?} on lines {first_line} and {line}")]
    DuplicateQid {
        qid: String,
        first_line: usize,
        line: usize,
    },
    #[error("line {line}: answer index {answer_idx} out of range for {options} options (qid {qid:?})")]
    BadAnswerIndex {
        line: usize,
        qid: String,
        answer_idx: usize,
        options: usize,
    },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("record {line}: missing field {field:?}")]
    MissingField { line: usize, field: String },
    #[error("record {line}: unknown question type code {code:?}")]
    UnknownTypeCode { line: usize, code: String },
    #[error("grid image for {qid:?} not found at {path}")]
    MissingGridImage { qid: String, path: PathBuf },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    Causal,
    Temporal,
    Descriptive,
    Interaction,
    Sequence,
    Prediction,
    Feasibility,
    Other,
}

impl QuestionType {
    pub const ALL: [QuestionType; 8] = [
        QuestionType::Causal,
        QuestionType::Temporal,
        QuestionType::Descriptive,
        QuestionType::Interaction,
        QuestionType::Sequence,
        QuestionType::Prediction,
        QuestionType::Feasibility,
        QuestionType::Other,
    ];

    /// Column heading used in report tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            QuestionType::Causal => "Cau.",
            QuestionType::Temporal => "Tem.",
            QuestionType::Descriptive => "Des.",
            QuestionType::Interaction => "Int.",
            QuestionType::Sequence => "Seq.",
            QuestionType::Prediction => "Pre.",
            QuestionType::Feasibility => "Fea.",
            QuestionType::Other => "Oth.",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::Causal => "Causal",
            QuestionType::Temporal => "Temporal",
            QuestionType::Descriptive => "Descriptive",
            QuestionType::Interaction => "Interaction",
            QuestionType::Sequence => "Sequence",
            QuestionType::Prediction => "Prediction",
            QuestionType::Feasibility => "Feasibility",
            QuestionType::Other => "Other",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuestionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuestionType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown question type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

/// Dataset family, which fixes the default grid side and report columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFamily {
    Star,
    NextQa,
    Mixed,
}

impl DatasetFamily {
    pub fn of_types(types: impl IntoIterator<Item = QuestionType>) -> Self {
        use QuestionType::*;
        let mut star = false;
        let mut next = false;
        let mut other = false;
        for t in types {
            match t {
                Interaction | Sequence | Prediction | Feasibility => star = true,
                Causal | Temporal | Descriptive => next = true,
                Other => other = true,
            }
        }
        match (star, next, other) {
            (false, true, false) => DatasetFamily::NextQa,
            (true, false, false) | (false, false, false) => DatasetFamily::Star,
            _ => DatasetFamily::Mixed,
        }
    }

    /// Grid side: 3×3 for STAR, 4×4 for NExT-QA.
    pub fn default_grid_side(self) -> u32 {
        match self {
            DatasetFamily::NextQa => 4,
            DatasetFamily::Star | DatasetFamily::Mixed => 3,
        }
    }

    /// Question-type columns in report order, or `None` when the columns
    /// depend on which types are present.
    pub fn columns(self) -> Option<&'static [QuestionType]> {
        use QuestionType::*;
        match self {
            DatasetFamily::Star => Some(&[Interaction, Sequence, Prediction, Feasibility]),
            DatasetFamily::NextQa => Some(&[Causal, Temporal, Descriptive]),
            DatasetFamily::Mixed => None,
        }
    }
}

/// One multi-choice question.
#[derive(Debug, Clone, PartialEq)]
pub struct QaItem {
    pub qid: String,
    pub video: VideoRef,
    pub question: String,
    pub options: Vec<String>,
    pub answer_idx: usize,
    pub qtype: QuestionType,
    pub split: Split,
}

impl QaItem {
    pub fn answer_letter(&self) -> OptionLetter {
        OptionLetter::from_index(self.answer_idx).expect("validated answer index")
    }

    fn check(&self, line: usize) -> Result<()> {
        if self.qid.is_empty() {
            return Err(DatasetError::ParseFailure {
                line,
                message: "empty qid".into(),
            });
        }
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&self.options.len()) {
            return Err(DatasetError::ParseFailure {
                line,
                message: format!(
                    "expected {MIN_OPTIONS}..={MAX_OPTIONS} options, got {}",
                    self.options.len()
                ),
            });
        }
        if self.options.iter().any(|o| o.trim().is_empty()) {
            return Err(DatasetError::ParseFailure {
                line,
                message: "empty option text".into(),
            });
        }
        if self.answer_idx >= self.options.len() {
            return Err(DatasetError::BadAnswerIndex {
                line,
                qid: self.qid.clone(),
                answer_idx: self.answer_idx,
                options: self.options.len(),
            });
        }
        self.video.validate().map_err(|e| DatasetError::ParseFailure {
            line,
            message: e.to_string(),
        })
    }
}

/// Wire shape of one manifest line.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    qid: String,
    video: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<u64>,
    question: String,
    options: Vec<String>,
    answer_idx: usize,
    qtype: String,
    split: String,
}

impl ManifestRecord {
    fn into_item(self, line: usize) -> Result<QaItem> {
        let fail = |message: String| DatasetError::ParseFailure { line, message };
        let mut video = VideoRef::from_path(&self.video);
        video.fps = self.fps;
        video.frame_count_hint = self.frame_count;
        Ok(QaItem {
            qtype: self.qtype.parse().map_err(fail)?,
            split: self.split.parse().map_err(fail)?,
            qid: self.qid,
            video,
            question: self.question,
            options: self.options,
            answer_idx: self.answer_idx,
        })
    }

    fn from_item(item: &QaItem) -> Self {
        let split = match item.split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        Self {
            qid: item.qid.clone(),
            video: item.video.source.path().to_string_lossy().into_owned(),
            fps: item.video.fps,
            frame_count: item.video.frame_count_hint,
            question: item.question.clone(),
            options: item.options.clone(),
            answer_idx: item.answer_idx,
            qtype: item.qtype.name().to_string(),
            split: split.to_string(),
        }
    }
}

/// An ordered, validated set of questions.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub default_grid_side: u32,
    pub items: Vec<QaItem>,
}

impl Manifest {
    /// Builds a manifest, checking every item and qid uniqueness. The grid
    /// side defaults from the dataset family.
    pub fn new(name: impl Into<String>, items: Vec<QaItem>) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, item) in items.iter().enumerate() {
            item.check(i + 1)?;
            if let Some(first) = seen.insert(&item.qid, i + 1) {
                return Err(DatasetError::DuplicateQid {
                    qid: item.qid.clone(),
                    first_line: first,
                    line: i + 1,
                });
            }
        }
        let family = DatasetFamily::of_types(items.iter().map(|i| i.qtype));
        Ok(Self {
            name: name.into(),
            default_grid_side: family.default_grid_side(),
            items,
        })
    }

    pub fn family(&self) -> DatasetFamily {
        DatasetFamily::of_types(self.items.iter().map(|i| i.qtype))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, qid: &str) -> Option<&QaItem> {
        self.items.iter().find(|i| i.qid == qid)
    }

    /// Copy with every relative video path resolved against `root`.
    pub fn resolved(&self, root: &Path) -> Manifest {
        Manifest {
            items: self
                .items
                .iter()
                .map(|i| QaItem {
                    video: i.video.resolved(root),
                    ..i.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        for item in &self.items {
            let line = serde_json::to_string(&ManifestRecord::from_item(item)).expect("manifest records serialize");
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }
}

/// Reads a canonical manifest. The manifest name is the file stem.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| DatasetError::ParseFailure {
            line: line_no,
            message: e.to_string(),
        })?;
        let item = record.into_item(line_no)?;
        item.check(line_no)?;
        if let Some(&first_line) = seen.get(&item.qid) {
            return Err(DatasetError::DuplicateQid {
                qid: item.qid,
                first_line,
                line: line_no,
            });
        }
        seen.insert(item.qid.clone(), line_no);
        items.push(item);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Manifest {
        name,
        default_grid_side: DatasetFamily::of_types(items.iter().map(|i| i.qtype)).default_grid_side(),
        items,
    })
}

/// A source row an adapter could not convert.
#[derive(Debug)]
pub struct Rejected {
    pub line: usize,
    pub error: DatasetError,
}

/// Adapter output: the converted manifest plus every rejected row.
#[derive(Debug)]
pub struct Adapted {
    pub manifest: Manifest,
    pub rejected: Vec<Rejected>,
}

fn split_from_stem(path: &Path) -> Split {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if stem.contains("train") {
        Split::Train
    } else if stem.contains("test") {
        Split::Test
    } else {
        Split::Val
    }
}

/// `<root>/<id>` when that is a frame directory, else `<root>/<id>.mp4`.
fn video_under(root: &Path, id: &str) -> VideoRef {
    let dir = root.join(id);
    let source = if dir.is_dir() {
        VideoSource::FrameDir(dir)
    } else {
        VideoSource::File(root.join(format!("{id}.mp4")))
    };
    VideoRef::new(id, source)
}

const NEXTQA_OPTION_COLUMNS: [&str; 5] = ["a0", "a1", "a2", "a3", "a4"];

/// Converts a NExT-QA style CSV (`video, question, answer, type, a0..a4`,
/// optional `qid` and `frame_count`). Type codes map by their first letter:
/// `C*` causal, `T*` temporal, `D*` descriptive.
pub fn adapt_nextqa(csv_path: &Path, video_root: &Path) -> Result<Adapted> {
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| DatasetError::Io {
        path: csv_path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::ParseFailure {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| col(name).ok_or_else(|| DatasetError::MissingColumn(name.to_string()));
    let video_col = need("video")?;
    let question_col = need("question")?;
    let answer_col = need("answer")?;
    let type_col = need("type")?;
    let option_cols = NEXTQA_OPTION_COLUMNS
        .iter()
        .map(|c| need(c))
        .collect::<Result<Vec<_>>>()?;
    let qid_col = col("qid");
    let count_col = col("frame_count");
    let split = split_from_stem(csv_path);

    let mut items = Vec::new();
    let mut rejected = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected.push(Rejected {
                    line,
                    error: DatasetError::ParseFailure {
                        line,
                        message: e.to_string(),
                    },
                });
                continue;
            }
        };
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let converted = (|| {
            let video_id = field(video_col);
            if video_id.is_empty() {
                return Err(DatasetError::MissingField {
                    line,
                    field: "video".into(),
                });
            }
            let code = field(type_col);
            let qtype = match code.chars().next().map(|c| c.to_ascii_uppercase()) {
                Some('C') => QuestionType::Causal,
                Some('T') => QuestionType::Temporal,
                Some('D') => QuestionType::Descriptive,
                _ => {
                    return Err(DatasetError::UnknownTypeCode {
                        line,
                        code: code.to_string(),
                    })
                }
            };
            let answer_idx: usize = field(answer_col).parse().map_err(|_| DatasetError::MissingField {
                line,
                field: "answer".into(),
            })?;
            let options: Vec<String> = option_cols.iter().map(|&c| field(c).to_string()).collect();
            let qid = match qid_col.map(field) {
                Some(q) if !q.is_empty() => format!("{video_id}_{q}"),
                _ => format!("{video_id}_{row}"),
            };
            let mut video = video_under(video_root, video_id);
            video.frame_count_hint = count_col.and_then(|c| field(c).parse().ok()).filter(|&n| n > 0);
            let item = QaItem {
                qid,
                video,
                question: field(question_col).to_string(),
                options,
                answer_idx,
                qtype,
                split,
            };
            item.check(line)?;
            Ok(item)
        })();
        match converted {
            Ok(item) => items.push((line, item)),
            Err(error) => rejected.push(Rejected { line, error }),
        }
    }
    finish_adapt(csv_path, items, rejected, DatasetFamily::NextQa)
}

fn finish_adapt(
    source: &Path,
    items: Vec<(usize, QaItem)>,
    mut rejected: Vec<Rejected>,
    family: DatasetFamily,
) -> Result<Adapted> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut kept = Vec::with_capacity(items.len());
    for (line, item) in items {
        if let Some(&first_line) = seen.get(&item.qid) {
            rejected.push(Rejected {
                line,
                error: DatasetError::DuplicateQid {
                    qid: item.qid,
                    first_line,
                    line,
                },
            });
            continue;
        }
        seen.insert(item.qid.clone(), line);
        kept.push(item);
    }
    rejected.sort_by_key(|r| r.line);
    let name = source
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Adapted {
        manifest: Manifest {
            name,
            default_grid_side: family.default_grid_side(),
            items: kept,
        },
        rejected,
    })
}

fn star_type(question_id: &str) -> Option<QuestionType> {
    let prefix = question_id.split('_').next()?;
    match prefix {
        "Interaction" => Some(QuestionType::Interaction),
        "Sequence" => Some(QuestionType::Sequence),
        "Prediction" => Some(QuestionType::Prediction),
        "Feasibility" => Some(QuestionType::Feasibility),
        _ => None,
    }
}

/// Converts a STAR style JSON array. The question type is the
/// `question_id` prefix (`Interaction_T1_13` is an interaction question) and
/// the answer index is the choice whose text equals `answer`.
pub fn adapt_star(json_path: &Path, video_root: &Path) -> Result<Adapted> {
    let text = std::fs::read_to_string(json_path).map_err(io_err(json_path))?;
    let records: Vec<Value> = serde_json::from_str(&text).map_err(|e| DatasetError::ParseFailure {
        line: e.line(),
        message: e.to_string(),
    })?;
    let split = split_from_stem(json_path);
    let mut items = Vec::new();
    let mut rejected = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let line = i + 1;
        let str_field = |name: &str| -> Result<&str> {
            rec.get(name)
                .and_then(Value::as_str)
                .ok_or_else(|| DatasetError::MissingField {
                    line,
                    field: name.to_string(),
                })
        };
        let converted = (|| {
            let qid = str_field("question_id")?;
            let qtype = star_type(qid).ok_or_else(|| DatasetError::UnknownTypeCode {
                line,
                code: qid.to_string(),
            })?;
            let question = str_field("question")?;
            let video_id = str_field("video_id")?;
            let choices = rec
                .get("choices")
                .and_then(Value::as_array)
                .ok_or_else(|| DatasetError::MissingField {
                    line,
                    field: "choices".into(),
                })?;
            let options = choices
                .iter()
                .map(|c| match c {
                    Value::String(s) => Some(s.trim().to_string()),
                    Value::Object(o) => o.get("choice").and_then(Value::as_str).map(|s| s.trim().to_string()),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| DatasetError::MissingField {
                    line,
                    field: "choices".into(),
                })?;
            let answer = str_field("answer")?.trim();
            let answer_idx = options
                .iter()
                .position(|o| o == answer)
                .ok_or_else(|| DatasetError::MissingField {
                    line,
                    field: "answer".into(),
                })?;
            let item = QaItem {
                qid: qid.to_string(),
                video: video_under(video_root, video_id),
                question: question.trim().to_string(),
                options,
                answer_idx,
                qtype,
                split,
            };
            item.check(line)?;
            Ok(item)
        })();
        match converted {
            Ok(item) => items.push((line, item)),
            Err(error) => rejected.push(Rejected { line, error }),
        }
    }
    finish_adapt(json_path, items, rejected, DatasetFamily::Star)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

/// One visual-instruction-tuning conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub id: String,
    pub image: String,
    pub conversations: Vec<Turn>,
}

/// Image placeholder token expected by visual-instruction trainers.
pub const IMAGE_TOKEN: &str = "<image>";

/// One record per item: the prompt as the human turn and the gold letter as
/// the reply. `image` is the grid file name relative to `grid_dir`.
pub fn export_finetune(
    manifest: &Manifest,
    grid_dir: &Path,
    grid_side: u32,
    include_suffix: bool,
) -> Result<Vec<FinetuneRecord>> {
    manifest
        .items
        .iter()
        .map(|item| {
            let image = grid_file_name(&item.video.id, grid_side);
            let path = grid_dir.join(&image);
            if !path.is_file() {
                return Err(DatasetError::MissingGridImage {
                    qid: item.qid.clone(),
                    path,
                });
            }
            let prompt_text = if include_suffix {
                prompt::build(item, PromptMode::Direct).text
            } else {
                prompt::body(&item.question, &item.options)
            };
            Ok(FinetuneRecord {
                id: item.qid.clone(),
                image,
                conversations: vec![
                    Turn {
                        from: "human".into(),
                        value: format!("{IMAGE_TOKEN}\n{prompt_text}"),
                    },
                    Turn {
                        from: "gpt".into(),
                        value: item.answer_letter().to_string(),
                    },
                ],
            })
        })
        .collect()
}

/// Writes records as a JSON array, or one record per line when `path` ends
/// in `.jsonl`.
pub fn write_finetune(records: &[FinetuneRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let result = if jsonl {
        records.iter().try_for_each(|r| {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(serde_json::Error::io)
        })
    } else {
        serde_json::to_writer_pretty(&mut w, records).and_then(|_| w.write_all(b"\n").map_err(serde_json::Error::io))
    };
    result.map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    w.flush().map_err(io_err(path))
}
