mod common;

use std::sync::atomic::Ordering;
use std::time::Duration;

use common::{answer_for, gold_by_question, Reply, StubServer};
use gridqa::dataset::{DatasetFamily, Manifest};
use gridqa::inference::{self, BackendConfig, BackendKind, BatchItem, InferenceError, RecordStatus};
use gridqa::prompt::{self, PromptMode};
use gridqa::synthetic;

fn batch(m: &Manifest) -> Vec<BatchItem<'_>> {
    m.items
        .iter()
        .map(|item| BatchItem {
            item,
            image: common::fixtures().join("tiny.png"),
            prompt: prompt::build(item, PromptMode::Direct),
        })
        .collect()
}

fn http_cfg(stub: &StubServer) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::HttpChat,
        endpoint: Some(stub.base_url.clone()),
        timeout_secs: 10.0,
        backoff_ms: 5,
        ..BackendConfig::default()
    }
}

#[test]
fn transient_failures_are_retried() {
    let m = synthetic::manifest(DatasetFamily::Star, 6);
    let gold = gold_by_question(&m);
    let stub = StubServer::start(Duration::ZERO, move |req, attempt| {
        if attempt <= 2 {
            Reply::Status(503)
        } else {
            Reply::Content(answer_for(&gold, req))
        }
    });
    let records = inference::run_batch(&batch(&m), &http_cfg(&stub)).unwrap();
    assert_eq!(records.len(), 6);
    for (r, item) in records.iter().zip(&m.items) {
        assert_eq!(r.status, RecordStatus::Ok);
        assert_eq!(r.attempt_count, 3);
        assert_eq!(r.parsed, Some(item.answer_letter()));
    }
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 18);
}

#[test]
fn exhausted_retries_become_transport_errors() {
    let m = synthetic::manifest(DatasetFamily::Star, 3);
    let stub = StubServer::start(Duration::ZERO, |_, _| Reply::Status(503));
    match inference::run_batch(&batch(&m), &http_cfg(&stub)) {
        Err(InferenceError::AllItemsFailed { records }) => {
            assert_eq!(records.len(), 3);
            assert!(records
                .iter()
                .all(|r| r.status == RecordStatus::TransportError && r.attempt_count == 4));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let m = synthetic::manifest(DatasetFamily::Star, 2);
    let gold = gold_by_question(&m);
    let first_qid_question = m.items[0].question.clone();
    let stub = StubServer::start(Duration::ZERO, move |req, _| {
        if common::prompt_text(req).starts_with(&first_qid_question) {
            Reply::Status(400)
        } else {
            Reply::Content(answer_for(&gold, req))
        }
    });
    let records = inference::run_batch(&batch(&m), &http_cfg(&stub)).unwrap();
    assert_eq!(records[0].status, RecordStatus::TransportError);
    assert_eq!(records[0].attempt_count, 1);
    assert!(records[0].error.as_deref().unwrap().contains("400"));
    assert_eq!(records[1].status, RecordStatus::Ok);
}

#[test]
fn in_flight_requests_stay_bounded() {
    let m = synthetic::manifest(DatasetFamily::NextQa, 16);
    let gold = gold_by_question(&m);
    let stub = StubServer::start(Duration::from_millis(40), move |req, _| {
        Reply::Content(answer_for(&gold, req))
    });
    let cfg = BackendConfig {
        max_in_flight: 3,
        ..http_cfg(&stub)
    };
    let records = inference::run_batch(&batch(&m), &cfg).unwrap();
    assert!(records.iter().all(|r| r.status == RecordStatus::Ok));
    let peak = stub.stats.max_in_flight.load(Ordering::SeqCst);
    assert!((2..=3).contains(&peak), "peak {peak}");
}

#[test]
fn request_body_is_the_rendered_payload() {
    let m = synthetic::manifest(DatasetFamily::Star, 1);
    let stub = StubServer::start(Duration::ZERO, |_, _| Reply::Content("(B) sofa".into()));
    let cfg = http_cfg(&stub);
    let items = batch(&m);
    let records = inference::run_batch(&items, &cfg).unwrap();
    assert_eq!(records[0].raw_response, "(B) sofa");
    assert_eq!(records[0].parsed.unwrap().as_char(), 'B');
    let sent = stub.stats.bodies.lock().unwrap()[0].clone();
    assert_eq!(
        sent,
        inference::render_request(&items[0].image, &items[0].prompt.text, &cfg).unwrap()
    );
    let head = stub.stats.headers.lock().unwrap()[0].to_ascii_lowercase();
    assert!(head.starts_with("post /v1/chat/completions "), "{head}");
}

#[test]
fn unparseable_answers_are_parse_errors() {
    let m = synthetic::manifest(DatasetFamily::Star, 2);
    let stub = StubServer::start(Duration::ZERO, |_, _| Reply::Content("I cannot tell.".into()));
    let records = inference::run_batch(&batch(&m), &http_cfg(&stub)).unwrap();
    assert!(records
        .iter()
        .all(|r| r.status == RecordStatus::ParseError && r.parsed.is_none()));
}

#[test]
fn resume_skips_finished_items_and_tolerates_a_torn_line() {
    let m = synthetic::manifest(DatasetFamily::Star, 8);
    let gold = gold_by_question(&m);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let items = batch(&m);

    let first = inference::run_batch(&items[..5], &BackendConfig::default()).unwrap();
    let mut text: String = first[..4]
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    text.push_str(&serde_json::to_string(&first[4]).unwrap()[..30]);
    std::fs::write(&path, text).unwrap();

    let stub = StubServer::start(Duration::ZERO, move |req, _| Reply::Content(answer_for(&gold, req)));
    let records = inference::run_batch_resumable(&items, &http_cfg(&stub), &path).unwrap();
    assert_eq!(records.len(), 8);
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 4);
    assert_eq!(&records[..4], &first[..4]);
    assert_eq!(inference::read_records(&path).unwrap(), records);
}
