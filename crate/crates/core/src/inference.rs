//! Batch inference against a model backend.
//!
//! [`run_batch`] fans requests out over at most `max_in_flight` workers,
//! retries transient failures with exponential backoff, and returns exactly
//! one [`InferenceRecord`] per item sorted by qid. With a resume file, every
//! finished record is appended as it completes and a re-run only repeats the
//! qids that did not finish with status `ok`.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::QaItem;
use crate::letter::OptionLetter;
use crate::pool::for_each_bounded;
use crate::prompt::PromptText;
use crate::scoring::parse_letter;

/// Environment variable holding the bearer token for HTTP backends.
pub const API_KEY_ENV: &str = "GRIDQA_API_KEY";

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid backend config: {0}")]
    ConfigInvalid(String),
    #[error("i/o failure on {path}: {message}")]
    IoFailure { path: PathBuf, message: String },
    #[error("all {} requests failed", records.len())]
    AllItemsFailed { records: Vec<InferenceRecord> },
}

pub type Result<T, E = InferenceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "http")]
    HttpChat,
    #[serde(rename = "mock-fixed")]
    MockFixed,
    #[default]
    #[serde(rename = "mock-oracle")]
    MockOracle,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" | "http_chat" => Ok(BackendKind::HttpChat),
            "mock-fixed" | "mock_fixed" => Ok(BackendKind::MockFixed),
            "mock-oracle" | "mock_oracle" => Ok(BackendKind::MockOracle),
            _ => Err(format!(
                "unknown backend {s:?} (expected http, mock-fixed or mock-oracle)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL; requests go to `<endpoint>/chat/completions`.
    pub endpoint: Option<String>,
    pub model_name: String,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
    pub retries: u32,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Response returned by the `mock-fixed` backend.
    pub fixed_answer: String,
    /// First retry delay; doubles on every further attempt, with ±20% jitter.
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::MockOracle,
            endpoint: None,
            model_name: "llava".into(),
            max_in_flight: 4,
            timeout_secs: 60.0,
            retries: 3,
            temperature: 0.0,
            max_tokens: None,
            fixed_answer: "A".into(),
            backoff_ms: 1000,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(InferenceError::ConfigInvalid(m.to_string()));
        if self.kind == BackendKind::HttpChat && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return bad("the http backend needs an endpoint");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite number >= 0");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout must be positive");
        }
        Ok(())
    }

    /// Short description used in report fingerprints. Leaves out the
    /// endpoint so the same model behind different addresses scores alike.
    pub fn describe(&self) -> String {
        match self.kind {
            BackendKind::HttpChat => format!("http:{}", self.model_name),
            BackendKind::MockFixed => format!("mock-fixed:{}", self.fixed_answer),
            BackendKind::MockOracle => "mock-oracle".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    ParseError,
    TransportError,
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordStatus::Ok => "ok",
            RecordStatus::ParseError => "parse_error",
            RecordStatus::TransportError => "transport_error",
        })
    }
}

/// Outcome of one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub qid: String,
    pub prompt: String,
    pub raw_response: String,
    pub parsed: Option<OptionLetter>,
    pub status: RecordStatus,
    pub latency_ms: u64,
    pub attempt_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One question ready to send: the item, its grid image and its prompt.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub item: &'a QaItem,
    pub image: PathBuf,
    pub prompt: PromptText,
}

/// Failure of a single request attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    Transient(String),
    Permanent(String),
}

impl fmt::Display for AttemptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptError::Transient(m) | AttemptError::Permanent(m) => f.write_str(m),
        }
    }
}

/// A model that answers one request. Called from several workers at once.
pub trait Backend: Sync {
    fn complete(&self, request: &BatchItem<'_>) -> Result<String, AttemptError>;
}

/// Always answers the same text.
pub struct MockFixed(pub String);

impl Backend for MockFixed {
    fn complete(&self, _request: &BatchItem<'_>) -> Result<String, AttemptError> {
        Ok(self.0.clone())
    }
}

/// Answers the gold letter.
pub struct MockOracle;

impl Backend for MockOracle {
    fn complete(&self, request: &BatchItem<'_>) -> Result<String, AttemptError> {
        Ok(request.item.answer_letter().to_string())
    }
}

/// OpenAI-style `chat/completions` client.
pub struct HttpChat {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    cfg: BackendConfig,
}

impl HttpChat {
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let endpoint = cfg.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{endpoint}/chat/completions"),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            cfg: cfg.clone(),
        })
    }
}

impl Backend for HttpChat {
    fn complete(&self, request: &BatchItem<'_>) -> Result<String, AttemptError> {
        let payload = render_request(&request.image, &request.prompt.text, &self.cfg)
            .map_err(|e| AttemptError::Permanent(e.to_string()))?;
        let mut req = self.agent.post(&self.url).content_type("application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send(payload.as_bytes()).map_err(|e| match e {
            ureq::Error::BadUri(_) | ureq::Error::Http(_) => AttemptError::Permanent(e.to_string()),
            other => AttemptError::Transient(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .into_body()
            .read_to_string()
            .map_err(|e| AttemptError::Transient(format!("reading response body: {e}")))?;
        match status {
            200..=299 => extract_content(&body).map_err(AttemptError::Permanent),
            429 | 500..=599 => Err(AttemptError::Transient(format!("http {status}: {}", snippet(&body)))),
            _ => Err(AttemptError::Permanent(format!("http {status}: {}", snippet(&body)))),
        }
    }
}

fn snippet(body: &str) -> &str {
    let end = body.char_indices().nth(200).map(|(i, _)| i).unwrap_or(body.len());
    &body[..end]
}

/// Pulls `choices[0].message.content` out of a completion response. The
/// content may be a string or a list of text parts.
fn extract_content(body: &str) -> Result<String, String> {
    let json: Value = serde_json::from_str(body).map_err(|e| format!("unparseable response: {e}"))?;
    let content = json
        .pointer("/choices/0/message/content")
        .ok_or_else(|| format!("response has no choices[0].message.content: {}", snippet(body)))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(format!("unexpected content {other}")),
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: [ContentPart<'a>; 2],
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ContentPart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Serialize)]
struct ImageUrl {
    url: String,
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        _ => "image/png",
    }
}

/// The JSON request body for one question: a single user message holding
/// the prompt text and the image as a base64 data URI.
pub fn render_request(image: &Path, prompt: &str, cfg: &BackendConfig) -> Result<String> {
    let bytes = fs::read(image).map_err(|e| InferenceError::IoFailure {
        path: image.to_path_buf(),
        message: e.to_string(),
    })?;
    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
    let request = ChatRequest {
        model: &cfg.model_name,
        messages: [ChatMessage {
            role: "user",
            content: [
                ContentPart::Text { text: prompt },
                ContentPart::ImageUrl {
                    image_url: ImageUrl {
                        url: format!("data:{};base64,{data}", mime_for(image)),
                    },
                },
            ],
        }],
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
    };
    Ok(serde_json::to_string(&request).expect("request serializes"))
}

/// Instantiates the backend named by `cfg`.
pub fn backend_for(cfg: &BackendConfig) -> Result<Box<dyn Backend>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::HttpChat => Box::new(HttpChat::new(cfg)?),
        BackendKind::MockFixed => Box::new(MockFixed(cfg.fixed_answer.clone())),
        BackendKind::MockOracle => Box::new(MockOracle),
    })
}

fn backoff_delay(base_ms: u64, attempt: u32) -> Duration {
    let nominal = base_ms as f64 * 2f64.powi(attempt.saturating_sub(1) as i32);
    let jitter = rand::rng().random_range(0.8..=1.2);
    Duration::from_secs_f64(nominal * jitter / 1000.0)
}

/// Sends one request with retries and turns the outcome into a record.
pub fn run_one(backend: &dyn Backend, request: &BatchItem<'_>, cfg: &BackendConfig) -> InferenceRecord {
    let start = Instant::now();
    let mut attempts = 0;
    let outcome = if !request.image.is_file() {
        Err(AttemptError::Permanent(format!(
            "grid image not found: {}",
            request.image.display()
        )))
    } else {
        loop {
            attempts += 1;
            match backend.complete(request) {
                Ok(text) => break Ok(text),
                Err(AttemptError::Transient(_)) if attempts <= cfg.retries => {
                    thread::sleep(backoff_delay(cfg.backoff_ms, attempts));
                }
                Err(e) => break Err(e),
            }
        }
    };
    let latency_ms = start.elapsed().as_millis() as u64;
    let base = InferenceRecord {
        qid: request.item.qid.clone(),
        prompt: request.prompt.text.clone(),
        raw_response: String::new(),
        parsed: None,
        status: RecordStatus::TransportError,
        latency_ms,
        attempt_count: attempts,
        error: None,
    };
    match outcome {
        Ok(raw) => match parse_letter(&raw, &request.prompt.letters_in_play, &request.item.options) {
            Ok(letter) => InferenceRecord {
                raw_response: raw,
                parsed: Some(letter),
                status: RecordStatus::Ok,
                ..base
            },
            Err(e) => InferenceRecord {
                raw_response: raw,
                status: RecordStatus::ParseError,
                error: Some(e.to_string()),
                ..base
            },
        },
        Err(e) => InferenceRecord {
            error: Some(e.to_string()),
            ..base
        },
    }
}

/// Runs every item through the configured backend.
pub fn run_batch(items: &[BatchItem<'_>], cfg: &BackendConfig) -> Result<Vec<InferenceRecord>> {
    let backend = backend_for(cfg)?;
    run_batch_with(items, backend.as_ref(), cfg, None)
}

/// Like [`run_batch`], resuming from and appending to `resume`.
pub fn run_batch_resumable(
    items: &[BatchItem<'_>],
    cfg: &BackendConfig,
    resume: &Path,
) -> Result<Vec<InferenceRecord>> {
    let backend = backend_for(cfg)?;
    run_batch_with(items, backend.as_ref(), cfg, Some(resume))
}

/// Batch runner over an explicit backend.
pub fn run_batch_with(
    items: &[BatchItem<'_>],
    backend: &dyn Backend,
    cfg: &BackendConfig,
    resume: Option<&Path>,
) -> Result<Vec<InferenceRecord>> {
    cfg.validate()?;
    let mut done: HashMap<String, InferenceRecord> = HashMap::new();
    if let Some(path) = resume {
        let wanted: HashMap<&str, &str> = items
            .iter()
            .map(|b| (b.item.qid.as_str(), b.prompt.text.as_str()))
            .collect();
        for r in read_records_lenient(path)? {
            if r.status == RecordStatus::Ok && wanted.get(r.qid.as_str()) == Some(&r.prompt.as_str()) {
                done.insert(r.qid.clone(), r);
            }
        }
    }
    let pending: Vec<&BatchItem<'_>> = items.iter().filter(|b| !done.contains_key(&b.item.qid)).collect();

    let mut log = match resume {
        Some(path) => {
            let mut kept: Vec<&InferenceRecord> = done.values().collect();
            kept.sort_by(|a, b| a.qid.cmp(&b.qid));
            write_records_to(path, kept.into_iter())?;
            let file = OpenOptions::new().append(true).open(path).map_err(io_failure(path))?;
            Some((path, BufWriter::new(file)))
        }
        None => None,
    };

    let mut log_error = None;
    for_each_bounded(
        &pending,
        cfg.max_in_flight,
        |_, request| run_one(backend, request, cfg),
        |_, record| {
            if let Some((path, w)) = log.as_mut() {
                let line = serde_json::to_string(&record).expect("records serialize");
                if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                    log_error.get_or_insert_with(|| io_failure(path)(e));
                }
            }
            done.insert(record.qid.clone(), record);
        },
    );
    drop(log);
    if let Some(e) = log_error {
        return Err(e);
    }

    let mut records: Vec<InferenceRecord> = items
        .iter()
        .map(|b| done.remove(&b.item.qid).expect("one record per item"))
        .collect();
    records.sort_by(|a, b| a.qid.cmp(&b.qid));
    if let Some(path) = resume {
        write_records(path, &records)?;
    }
    if !records.is_empty() && records.iter().all(|r| r.status == RecordStatus::TransportError) {
        return Err(InferenceError::AllItemsFailed { records });
    }
    Ok(records)
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> InferenceError + '_ {
    move |e| InferenceError::IoFailure {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_records_to<'r>(path: &Path, records: impl Iterator<Item = &'r InferenceRecord>) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    let file = File::create(&tmp).map_err(io_failure(&tmp))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io_failure(&tmp))?;
    }
    w.flush().map_err(io_failure(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_failure(path))
}

/// Replaces `path` with `records`, one per line.
pub fn write_records(path: &Path, records: &[InferenceRecord]) -> Result<()> {
    write_records_to(path, records.iter())
}

/// Reads a record file. Fails on any malformed line.
pub fn read_records(path: &Path) -> Result<Vec<InferenceRecord>> {
    let file = File::open(path).map_err(io_failure(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_failure(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| InferenceError::IoFailure {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Reads a resume file, tolerating a missing file and a torn last line. A
/// later record for the same qid replaces an earlier one.
fn read_records_lenient(path: &Path) -> Result<Vec<InferenceRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_failure(path)(e)),
    };
    let mut latest: HashMap<String, InferenceRecord> = HashMap::new();
    for line in text.lines() {
        if let Ok(r) = serde_json::from_str::<InferenceRecord>(line) {
            latest.insert(r.qid.clone(), r);
        }
    }
    Ok(latest.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{QuestionType, Split};
    use crate::ingest::VideoRef;
    use crate::prompt::{build, PromptMode};
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    fn item(qid: &str, answer: usize) -> QaItem {
        QaItem {
            qid: qid.into(),
            video: VideoRef::from_path(format!("v/{qid}")),
            question: format!("question {qid}?"),
            options: vec!["red".into(), "green".into(), "blue".into(), "white".into()],
            answer_idx: answer,
            qtype: QuestionType::Interaction,
            split: Split::Val,
        }
    }

    fn batch(items: &[QaItem]) -> Vec<BatchItem<'_>> {
        items
            .iter()
            .map(|i| BatchItem {
                item: i,
                image: PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("Cargo.toml"),
                prompt: build(i, PromptMode::Direct),
            })
            .collect()
    }

    fn fast(kind: BackendKind) -> BackendConfig {
        BackendConfig {
            kind,
            backoff_ms: 1,
            ..BackendConfig::default()
        }
    }

    #[test]
    fn oracle_answers_gold() {
        let items: Vec<QaItem> = (0..10).map(|i| item(&format!("q{i:02}"), i % 4)).collect();
        let records = run_batch(&batch(&items), &fast(BackendKind::MockOracle)).unwrap();
        assert_eq!(records.len(), 10);
        for (r, i) in records.iter().zip(&items) {
            assert_eq!(r.status, RecordStatus::Ok);
            assert_eq!(r.parsed, Some(i.answer_letter()));
            assert_eq!(r.attempt_count, 1);
        }
    }

    #[test]
    fn fixed_answers_and_sorting() {
        let items: Vec<QaItem> = ["d", "b", "a", "c"].iter().map(|q| item(q, 1)).collect();
        let records = run_batch(&batch(&items), &fast(BackendKind::MockFixed)).unwrap();
        assert_eq!(
            records.iter().map(|r| r.qid.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c", "d"]
        );
        assert!(records.iter().all(|r| r.parsed.map(|l| l.as_char()) == Some('A')));
    }

    struct Flaky {
        fail_first: u32,
        calls: Mutex<HashMap<String, u32>>,
        permanent: bool,
    }

    impl Backend for Flaky {
        fn complete(&self, request: &BatchItem<'_>) -> Result<String, AttemptError> {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(request.item.qid.clone()).or_default();
            *n += 1;
            if *n <= self.fail_first {
                if self.permanent {
                    return Err(AttemptError::Permanent("http 400".into()));
                }
                return Err(AttemptError::Transient("http 503".into()));
            }
            Ok("B".into())
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let items = vec![item("q", 1)];
        let flaky = Flaky {
            fail_first: 2,
            calls: Mutex::default(),
            permanent: false,
        };
        let cfg = BackendConfig {
            retries: 3,
            ..fast(BackendKind::MockFixed)
        };
        let r = &run_batch_with(&batch(&items), &flaky, &cfg, None).unwrap()[0];
        assert_eq!(r.status, RecordStatus::Ok);
        assert_eq!(r.attempt_count, 3);
    }

    #[test]
    fn gives_up_after_retries() {
        let items = vec![item("q", 1)];
        let flaky = Flaky {
            fail_first: 10,
            calls: Mutex::default(),
            permanent: false,
        };
        let cfg = BackendConfig {
            retries: 2,
            ..fast(BackendKind::MockFixed)
        };
        match run_batch_with(&batch(&items), &flaky, &cfg, None) {
            Err(InferenceError::AllItemsFailed { records }) => {
                assert_eq!(records.len(), 1);
                assert_eq!(records[0].attempt_count, 3);
                assert_eq!(records[0].status, RecordStatus::TransportError);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let items = vec![item("q", 1)];
        let flaky = Flaky {
            fail_first: 1,
            calls: Mutex::default(),
            permanent: true,
        };
        let cfg = BackendConfig {
            retries: 5,
            ..fast(BackendKind::MockFixed)
        };
        let Err(InferenceError::AllItemsFailed { records }) = run_batch_with(&batch(&items), &flaky, &cfg, None) else {
            panic!("expected all items to fail");
        };
        assert_eq!(records[0].attempt_count, 1);
    }

    #[test]
    fn unparseable_answer_is_parse_error() {
        let items = vec![item("q", 1)];
        let cfg = BackendConfig {
            fixed_answer: "Z".into(),
            ..fast(BackendKind::MockFixed)
        };
        let r = &run_batch(&batch(&items), &cfg).unwrap()[0];
        assert_eq!(r.status, RecordStatus::ParseError);
        assert_eq!(r.parsed, None);
        assert_eq!(r.raw_response, "Z");
    }

    #[test]
    fn resume_skips_ok_records() {
        struct Counting(AtomicU32);
        impl Backend for Counting {
            fn complete(&self, r: &BatchItem<'_>) -> Result<String, AttemptError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(r.item.answer_letter().to_string())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let items: Vec<QaItem> = (0..6).map(|i| item(&format!("q{i}"), i % 4)).collect();
        let b = batch(&items);
        let cfg = fast(BackendKind::MockOracle);
        let first = run_batch_with(&b[..4], &Counting(AtomicU32::new(0)), &cfg, Some(&path)).unwrap();
        assert_eq!(first.len(), 4);
        // torn trailing line from an interrupted write
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"qid\": \"q5\", \"pro").unwrap();
        drop(f);
        let counter = Counting(AtomicU32::new(0));
        let all = run_batch_with(&b, &counter, &cfg, Some(&path)).unwrap();
        assert_eq!(counter.0.load(Ordering::SeqCst), 2);
        assert_eq!(all.len(), 6);
        assert_eq!(read_records(&path).unwrap(), all);
    }

    #[test]
    fn config_validation() {
        let http = BackendConfig {
            kind: BackendKind::HttpChat,
            ..BackendConfig::default()
        };
        assert!(matches!(http.validate(), Err(InferenceError::ConfigInvalid(_))));
        let cold = BackendConfig {
            temperature: -0.5,
            ..BackendConfig::default()
        };
        assert!(cold.validate().is_err());
        let zero = BackendConfig {
            max_in_flight: 0,
            ..BackendConfig::default()
        };
        assert!(zero.validate().is_err());
        assert_eq!("mock-fixed".parse::<BackendKind>().unwrap(), BackendKind::MockFixed);
    }

    #[test]
    fn content_extraction() {
        assert_eq!(
            extract_content(r#"{"choices":[{"message":{"content":"B"}}]}"#).unwrap(),
            "B"
        );
        assert_eq!(
            extract_content(r#"{"choices":[{"message":{"content":[{"type":"text","text":"C."}]}}]}"#).unwrap(),
            "C."
        );
        assert!(extract_content(r#"{"error":"x"}"#).is_err());
    }

    #[test]
    fn backoff_grows_with_jitter() {
        for attempt in 1..5 {
            let d = backoff_delay(1000, attempt).as_secs_f64();
            let nominal = 2f64.powi(attempt as i32 - 1);
            assert!(d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9, "{attempt}: {d}");
        }
    }

    #[test]
    fn request_io_failure() {
        let cfg = BackendConfig::default();
        assert!(matches!(
            render_request(Path::new("/nonexistent/grid.png"), "p", &cfg),
            Err(InferenceError::IoFailure { .. })
        ));
    }
}
