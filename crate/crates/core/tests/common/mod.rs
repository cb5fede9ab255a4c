#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use gridqa::dataset::Manifest;
use gridqa::ingest::DecoderConfig;
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Compares `actual` with a stored fixture. With `GRIDQA_BLESS=1` the
/// fixture is rewritten instead.
pub fn assert_golden(name: &str, actual: &str) {
    let path = fixtures().join(name);
    if std::env::var_os("GRIDQA_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

/// Decoder and probe templates for concatenated-PPM clips.
pub fn ppm_decoder(count_in_probe: bool) -> DecoderConfig {
    let dir = fixtures();
    let probe = if count_in_probe {
        format!("sh {} {{input}}", dir.join("probe.sh").display())
    } else {
        format!("sh {} {{input}} --no-count", dir.join("probe.sh").display())
    };
    DecoderConfig {
        command: format!("sh {} {{input}} {{index}} {{output}}", dir.join("decode.sh").display()),
        probe,
    }
}

pub fn has_command(name: &str) -> bool {
    std::process::Command::new(name)
        .arg("-version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

pub enum Reply {
    Content(String),
    Status(u16),
    /// Never answer.
    Hang,
}

#[derive(Default)]
pub struct Stats {
    pub requests: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub bodies: Mutex<Vec<String>>,
    pub headers: Mutex<Vec<String>>,
    attempts: Mutex<HashMap<String, usize>>,
}

impl Stats {
    pub fn distinct_prompts(&self) -> usize {
        self.attempts.lock().unwrap().len()
    }
}

type Handler = dyn Fn(&Value, usize) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 chat-completions stand-in. The handler sees the parsed
/// request body and the 1-based attempt number for its prompt.
pub struct StubServer {
    pub base_url: String,
    pub stats: Arc<Stats>,
}

impl StubServer {
    pub fn start(delay: Duration, handler: impl Fn(&Value, usize) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let stats = Arc::new(Stats::default());
        let handler: Arc<Handler> = Arc::new(handler);
        let st = stats.clone();
        thread::spawn(move || {
            for conn in listener.incoming().flatten() {
                let (st, h) = (st.clone(), handler.clone());
                thread::spawn(move || serve(conn, delay, &st, h.as_ref()));
            }
        });
        StubServer { base_url, stats }
    }
}

fn serve(conn: TcpStream, delay: Duration, stats: &Stats, handler: &Handler) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut writer = conn;
    loop {
        let mut head = String::new();
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) | Err(_) => return,
                Ok(_) => {}
            }
            if line == "\r\n" || line == "\n" {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
            head.push_str(&line);
        }
        let mut body = vec![0u8; content_length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let body = String::from_utf8_lossy(&body).into_owned();
        stats.requests.fetch_add(1, Ordering::SeqCst);
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        stats.headers.lock().unwrap().push(head);
        stats.bodies.lock().unwrap().push(body.clone());
        let request: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
        let attempt = {
            let mut a = stats.attempts.lock().unwrap();
            let n = a.entry(prompt_text(&request).to_string()).or_default();
            *n += 1;
            *n
        };
        let reply = handler(&request, attempt);
        thread::sleep(delay);
        stats.in_flight.fetch_sub(1, Ordering::SeqCst);
        let (status, payload) = match reply {
            Reply::Content(text) => (
                200,
                json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string(),
            ),
            Reply::Status(code) => (code, json!({"error": {"message": "unavailable"}}).to_string()),
            Reply::Hang => loop {
                thread::sleep(Duration::from_secs(3600));
            },
        };
        let response = format!(
            "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
            payload.len()
        );
        if writer
            .write_all(response.as_bytes())
            .and_then(|_| writer.flush())
            .is_err()
        {
            return;
        }
    }
}

/// Text part of a chat request.
pub fn prompt_text(request: &Value) -> &str {
    request
        .pointer("/messages/0/content/0/text")
        .and_then(Value::as_str)
        .unwrap_or_default()
}

/// Question line -> gold letter, for stubs that answer correctly.
pub fn gold_by_question(manifest: &Manifest) -> HashMap<String, String> {
    manifest
        .items
        .iter()
        .map(|i| (i.question.clone(), i.answer_letter().to_string()))
        .collect()
}

pub fn answer_for(gold: &HashMap<String, String>, request: &Value) -> String {
    let question = prompt_text(request).lines().next().unwrap_or_default();
    gold.get(question).cloned().unwrap_or_else(|| "Z".into())
}

pub const BUNDLED_MANIFEST: &str = "synthetic_48.jsonl";

/// Copies the bundled 48-question manifest into `dir` and writes its videos
/// next to it. Returns the manifest path.
pub fn bundled_corpus(dir: &Path) -> PathBuf {
    let src = fixtures().join(BUNDLED_MANIFEST);
    let dst = dir.join(BUNDLED_MANIFEST);
    std::fs::copy(&src, &dst).unwrap();
    let m = gridqa::dataset::load_manifest(&dst).unwrap();
    gridqa::synthetic::materialize(&m, dir).unwrap();
    dst
}

pub fn gridqa_command(args: &[&str]) -> std::process::Command {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_gridqa"));
    cmd.args(args).env_remove(gridqa::inference::API_KEY_ENV);
    cmd
}

pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn gridqa(args: &[&str]) -> CliOutput {
    let out = gridqa_command(args).output().unwrap();
    CliOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
