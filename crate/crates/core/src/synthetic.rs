//! Deterministic synthetic corpus: solid-colour videos and matching
//! manifests, for demos and end-to-end tests without real datasets.
//!
//! Every frame of every synthetic video is a single flat colour, so sampled
//! frames can be identified exactly from grid pixels.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::dataset::{DatasetFamily, Manifest, QaItem, QuestionType, Split};
use crate::ingest::{VideoRef, VideoSource};

pub const FRAME_WIDTH: u32 = 32;
pub const FRAME_HEIGHT: u32 = 24;

/// Colour of frame `frame` of synthetic video `video`. Distinct for every
/// frame of a video up to 256 frames.
pub fn frame_color(video: usize, frame: u64) -> [u8; 3] {
    let f = frame as usize;
    [
        (f * 5 % 256) as u8,
        ((video * 47 + f * 3) % 256) as u8,
        ((video * 29 + 255 - f) % 256) as u8,
    ]
}

/// Frame count of synthetic video `video`: between 9 and 48.
pub fn frame_count(video: usize) -> u64 {
    9 + (video as u64 * 17) % 40
}

const STAR_OPTIONS: [&str; 4] = [
    "The person opened the door.",
    "The person sat on the sofa.",
    "The person picked up a cup.",
    "The person put down a book.",
];

const NEXTQA_OPTIONS: [&str; 5] = [
    "to get the ball",
    "because it is raining",
    "wave at the camera",
    "feed the horse with grass",
    "walk away slowly",
];

/// `count` questions over `count` distinct synthetic videos stored under
/// `videos/syn_NNN`. Every four consecutive STAR items cover all four answer
/// positions, so exactly a quarter of a 48-item STAR manifest has answer `A`.
pub fn manifest(family: DatasetFamily, count: usize) -> Manifest {
    use QuestionType::*;
    let items = (0..count)
        .map(|i| {
            let (qtype, options, answer_idx): (QuestionType, &[&str], usize) = match family {
                DatasetFamily::NextQa => ([Causal, Temporal, Descriptive][i % 3], &NEXTQA_OPTIONS, (2 * i + 1) % 5),
                _ => (
                    [Interaction, Sequence, Prediction, Feasibility][(i / 3) % 4],
                    &STAR_OPTIONS,
                    (i + i / 4) % 4,
                ),
            };
            let id = format!("syn_{i:03}");
            let mut video = VideoRef::new(id.clone(), VideoSource::FrameDir(format!("videos/{id}").into()));
            video.frame_count_hint = Some(frame_count(i));
            QaItem {
                qid: format!("q{i:03}"),
                video,
                question: format!("What happened in synthetic clip {i}?"),
                options: options.iter().map(|s| s.to_string()).collect(),
                answer_idx,
                qtype,
                split: Split::Val,
            }
        })
        .collect();
    Manifest::new(format!("synthetic_{count}"), items).expect("synthetic manifests are valid")
}

/// Writes the frame directory of each item's video under `root`. Item `i`
/// gets synthetic video `i`, with as many frames as its frame-count hint.
pub fn materialize(manifest: &Manifest, root: &Path) -> std::io::Result<()> {
    for (i, item) in manifest.items.iter().enumerate() {
        let dir = root.join(item.video.source.path());
        std::fs::create_dir_all(&dir)?;
        let frames = item.video.frame_count_hint.unwrap_or_else(|| frame_count(i));
        for f in 0..frames {
            let path = dir.join(format!("frame_{f:06}.png"));
            if path.exists() {
                continue;
            }
            RgbImage::from_pixel(FRAME_WIDTH, FRAME_HEIGHT, Rgb(frame_color(i, f)))
                .save(&path)
                .map_err(std::io::Error::other)?;
        }
    }
    Ok(())
}

/// Writes a synthetic manifest plus its videos under `root` and returns the
/// manifest path.
pub fn write_corpus(root: &Path, family: DatasetFamily, count: usize) -> std::io::Result<std::path::PathBuf> {
    let m = manifest(family, count);
    materialize(&m, root)?;
    let path = root.join(format!("{}.jsonl", m.name));
    m.save(&path).map_err(std::io::Error::other)?;
    Ok(path)
}

/// Writes a raw clip: concatenated binary PPM frames of identical size, one
/// solid colour each. Useful as input for a shell-level decoder in tests.
pub fn write_ppm_clip(path: &Path, colors: &[[u8; 3]], width: u32, height: u32) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in colors {
        write!(w, "P6\n{width} {height}\n255\n")?;
        for _ in 0..width * height {
            w.write_all(c)?;
        }
    }
    w.flush()
}
