//! End-to-end run on a generated corpus with the offline mock backends:
//! preprocess, evaluate, score and compare.
//!
//!     cargo run --example mock_eval -- [out-dir]

use gridqa::dataset::DatasetFamily;
use gridqa::inference::{BackendConfig, BackendKind};
use gridqa::pipeline::{Pipeline, RunConfig};
use gridqa::{scoring, synthetic};

fn main() -> anyhow::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gridqa-mock-eval"));
    let manifest = synthetic::write_corpus(&root, DatasetFamily::Star, 48)?;
    let mut reports = Vec::new();
    for (label, kind) in [
        ("oracle", BackendKind::MockOracle),
        ("always-A", BackendKind::MockFixed),
    ] {
        let pipeline = Pipeline::new(RunConfig {
            manifest: Some(manifest.clone()),
            out: root.join(label),
            grids: Some(root.join("grids")),
            backend: BackendConfig {
                kind,
                ..BackendConfig::default()
            },
            ..RunConfig::default()
        })?;
        let outcome = pipeline.run_all()?;
        reports.push((label.to_string(), outcome.report));
    }
    print!("{}", scoring::compare(&reports)?.render());
    println!("\nartifacts under {}", root.display());
    Ok(())
}
