//! Grid-size ablation: the same questions with 1, 9 and 16 frames per grid.
//!
//!     cargo run --example ablate_grid

use gridqa::dataset::DatasetFamily;
use gridqa::pipeline::{Pipeline, RunConfig};
use gridqa::synthetic;

fn main() -> anyhow::Result<()> {
    let root = std::env::temp_dir().join("gridqa-ablate");
    let manifest = synthetic::write_corpus(&root, DatasetFamily::Star, 24)?;
    let pipeline = Pipeline::new(RunConfig {
        manifest: Some(manifest),
        out: root.join("run"),
        ..RunConfig::default()
    })?;
    let (_, table) = pipeline.ablate(&[1, 3, 4])?;
    print!("{}", table.render());
    Ok(())
}
