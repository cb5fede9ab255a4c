//! Tiles N×N solid-colour frames into a 336 px grid image.
//!
//!     cargo run --example compose_grid -- 3 grid.png

use gridqa::compositor::{self, GridOptions};
use gridqa::ingest::Frame;
use gridqa::synthetic;
use image::{Rgb, RgbImage};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: u32 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let out = args.next().unwrap_or_else(|| format!("grid_N{n}.png"));
    let frames: Vec<Frame> = (0..(n * n) as u64)
        .map(|k| Frame {
            index: k,
            image: RgbImage::from_pixel(64, 48, Rgb(synthetic::frame_color(0, k * 12))),
        })
        .collect();
    let grid = compositor::compose(&frames, n, &GridOptions::default())?;
    grid.save(out.as_ref())?;
    println!(
        "{out}: {n}x{n} cells of {} px, {} patches of {} px",
        grid.cell_px,
        compositor::patch_count(grid.side_px),
        compositor::PATCH_PX
    );
    Ok(())
}
