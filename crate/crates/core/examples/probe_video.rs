//! Probes a video (or a directory of frame_NNNNNN images), samples N×N
//! frames and writes the grid. Decoding goes through ffmpeg by default.
//!
//!     cargo run --example probe_video -- clip.mp4 3 clip_N3.png

use gridqa::compositor::{self, GridOptions};
use gridqa::ingest::{DecoderConfig, Ingest, IngestConfig, VideoRef};
use gridqa::sampler;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .ok_or_else(|| anyhow::anyhow!("usage: probe_video <video|frame-dir> [N] [out.png]"))?;
    let n: u32 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let video = VideoRef::from_path(&path);
    let ingest = Ingest::new(DecoderConfig::default(), IngestConfig::default());
    let meta = ingest.probe_meta(&video)?;
    println!("{}: {meta:?}", video.id);
    let indices = sampler::plan(meta.total_frames, n)?;
    println!("sampling {indices:?}");
    let frames = ingest.fetch_frames(&video, &indices)?;
    let out = args.next().unwrap_or_else(|| compositor::grid_file_name(&video.id, n));
    compositor::compose(&frames, n, &GridOptions::default())?.save(out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
