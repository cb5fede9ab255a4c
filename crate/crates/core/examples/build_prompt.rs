//! Renders the prompt for the first questions of a manifest, or of a small
//! synthetic one.
//!
//!     cargo run --example build_prompt -- [manifest.jsonl] [--explain]

use gridqa::dataset::{self, DatasetFamily};
use gridqa::prompt::{self, PromptMode};
use gridqa::synthetic;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = if args.iter().any(|a| a == "--explain") {
        PromptMode::Explain
    } else {
        PromptMode::Direct
    };
    let manifest = match args.iter().find(|a| !a.starts_with("--")) {
        Some(path) => dataset::load_manifest(path.as_ref())?,
        None => synthetic::manifest(DatasetFamily::NextQa, 2),
    };
    for item in manifest.items.iter().take(2) {
        let p = prompt::build(item, mode);
        println!("--- {} (gold {})\n{}\n", item.qid, item.answer_letter(), p.text);
    }
    Ok(())
}
