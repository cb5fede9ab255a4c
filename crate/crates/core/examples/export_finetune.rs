//! Builds grids for a generated corpus and writes instruction-tuning
//! conversations whose reply is the gold option letter.
//!
//!     cargo run --example export_finetune -- train.json

use gridqa::dataset::DatasetFamily;
use gridqa::pipeline::{Pipeline, RunConfig};
use gridqa::synthetic;

fn main() -> anyhow::Result<()> {
    let root = std::env::temp_dir().join("gridqa-finetune");
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| root.join("train.json"));
    let manifest = synthetic::write_corpus(&root, DatasetFamily::NextQa, 12)?;
    let pipeline = Pipeline::new(RunConfig {
        manifest: Some(manifest),
        out: root.join("run"),
        ..RunConfig::default()
    })?;
    let summary = pipeline.preprocess()?;
    anyhow::ensure!(summary.failures.is_empty(), "preprocessing failed");
    let n = pipeline.export_finetune(&out)?;
    println!(
        "{n} records -> {} (images in {})",
        out.display(),
        pipeline.config.grids_dir().display()
    );
    Ok(())
}
