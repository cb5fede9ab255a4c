//! Evaluates a generated corpus against an OpenAI-compatible
//! chat-completions server. The API key, if any, comes from GRIDQA_API_KEY.
//!
//!     cargo run --example http_eval -- http://localhost:8000/v1 llava-v1.6-34b

use gridqa::dataset::DatasetFamily;
use gridqa::inference::{BackendConfig, BackendKind};
use gridqa::pipeline::{Pipeline, RunConfig};
use gridqa::synthetic;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let endpoint = args.next().unwrap_or_else(|| "http://localhost:8000/v1".into());
    let model = args.next().unwrap_or_else(|| "llava".into());
    let root = std::env::temp_dir().join("gridqa-http-eval");
    let manifest = synthetic::write_corpus(&root, DatasetFamily::NextQa, 12)?;
    let pipeline = Pipeline::new(RunConfig {
        manifest: Some(manifest),
        out: root.join("run"),
        backend: BackendConfig {
            kind: BackendKind::HttpChat,
            endpoint: Some(endpoint),
            model_name: model,
            max_in_flight: 2,
            ..BackendConfig::default()
        },
        ..RunConfig::default()
    })?;
    let outcome = pipeline.run_all()?;
    print!("{}", outcome.report.render(&pipeline.manifest.name));
    println!(
        "{} transport errors, {} unparseable answers; records in {}",
        outcome.report.transport_error_count,
        outcome.report.parse_error_count,
        root.join("run/records.jsonl").display()
    );
    Ok(())
}
