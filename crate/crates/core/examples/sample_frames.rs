//! Prints the middle-of-segment frame indices for a video of M frames.
//!
//!     cargo run --example sample_frames -- 100 3

use gridqa::sampler::FramePlan;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let total: u64 = args.first().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let sides: Vec<u32> = match args.get(1) {
        Some(n) => vec![n.parse()?],
        None => vec![1, 2, 3, 4],
    };
    for n in sides {
        let plan = FramePlan::new("clip", total, n)?;
        println!("M={total} N={n} ({} frames): {:?}", plan.cell_count(), plan.indices);
    }
    Ok(())
}
