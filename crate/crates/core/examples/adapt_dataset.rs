//! Converts a NExT-QA CSV or STAR JSON annotation file into a manifest.
//!
//!     cargo run --example adapt_dataset -- val.csv videos/ val.jsonl

use std::path::Path;

use gridqa::dataset;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, videos, out] = args.as_slice() else {
        anyhow::bail!("usage: adapt_dataset <annotations.csv|.json> <video-root> <out.jsonl>");
    };
    let input = Path::new(input);
    let adapted = if input.extension().is_some_and(|e| e == "json") {
        dataset::adapt_star(input, videos.as_ref())?
    } else {
        dataset::adapt_nextqa(input, videos.as_ref())?
    };
    for r in &adapted.rejected {
        eprintln!("skipped: {}", r.error);
    }
    adapted.manifest.save(out.as_ref())?;
    println!(
        "{}: {} questions ({:?} family), {} rows skipped",
        out,
        adapted.manifest.len(),
        adapted.manifest.family(),
        adapted.rejected.len()
    );
    Ok(())
}
