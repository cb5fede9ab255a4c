mod common;

use gridqa::ingest::{DecoderConfig, Ingest, IngestConfig, IngestError, VideoRef, VideoSource};
use gridqa::sampler;
use gridqa::synthetic::{self, FRAME_HEIGHT, FRAME_WIDTH};

fn clip(dir: &std::path::Path, video: usize, frames: u64) -> (VideoRef, Vec<[u8; 3]>) {
    let colors: Vec<[u8; 3]> = (0..frames).map(|f| synthetic::frame_color(video, f)).collect();
    let path = dir.join(format!("clip{video}.ppm"));
    synthetic::write_ppm_clip(&path, &colors, FRAME_WIDTH, FRAME_HEIGHT).unwrap();
    (VideoRef::from_path(path), colors)
}

fn as_f64(c: [u8; 3]) -> [f64; 3] {
    c.map(f64::from)
}

#[test]
fn probe_and_fetch_from_decoder_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (video, colors) = clip(dir.path(), 5, 48);
    let ingest = Ingest::new(common::ppm_decoder(true), IngestConfig::default());
    assert_eq!(ingest.probe(&video).unwrap(), 48);
    let indices: [u64; 4] = [2, 6, 10, 14];
    let frames = ingest.fetch_frames(&video, &indices).unwrap();
    for (frame, &i) in frames.iter().zip(&indices) {
        assert_eq!(frame.index, i);
        assert_eq!((frame.width(), frame.height()), (FRAME_WIDTH, FRAME_HEIGHT));
        assert_eq!(frame.mean_color(), as_f64(colors[i as usize]));
    }
    let sampled = ingest.fetch_frames(&video, &sampler::plan(48, 2).unwrap()).unwrap();
    assert_eq!(sampled.iter().map(|f| f.index).collect::<Vec<_>>(), vec![6, 18, 30, 42]);
}

#[test]
fn count_falls_back_to_rate_times_duration() {
    let dir = tempfile::tempdir().unwrap();
    let (video, _) = clip(dir.path(), 1, 37);
    let ingest = Ingest::new(common::ppm_decoder(false), IngestConfig::default());
    let meta = ingest.probe_meta(&video).unwrap();
    assert_eq!(meta.declared_frames, None);
    assert_eq!(meta.fps, Some(25.0));
    assert_eq!(meta.derived_frames, Some(37));
    assert_eq!(meta.total_frames, 37);
}

#[test]
fn disk_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let (video, colors) = clip(dir.path(), 2, 20);
    let cfg = IngestConfig {
        workers: 2,
        cache_dir: Some(cache.clone()),
    };
    let first = Ingest::new(common::ppm_decoder(true), cfg.clone());
    first.fetch_frames(&video, &[3, 3, 7]).unwrap();
    // a decoder that always fails proves the second fetch never runs it
    let broken = DecoderConfig {
        command: "false".into(),
        ..common::ppm_decoder(true)
    };
    let second = Ingest::new(broken, cfg);
    let frames = second.fetch_frames(&video, &[7, 3]).unwrap();
    assert_eq!(frames[0].mean_color(), as_f64(colors[7]));
    assert_eq!(frames[1].mean_color(), as_f64(colors[3]));
}

#[test]
fn out_of_range_and_missing_sources() {
    let dir = tempfile::tempdir().unwrap();
    let (video, _) = clip(dir.path(), 0, 10);
    let ingest = Ingest::new(common::ppm_decoder(true), IngestConfig::default());
    assert!(matches!(
        ingest.fetch_frames(&video, &[10]),
        Err(IngestError::IndexOutOfRange {
            index: 10,
            total: 10,
            ..
        })
    ));
    let missing = VideoRef::from_path(dir.path().join("nope.mp4"));
    assert!(matches!(ingest.probe(&missing), Err(IngestError::SourceNotFound(_))));
}

#[test]
fn frame_directory_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic::manifest(gridqa::dataset::DatasetFamily::Star, 3);
    synthetic::materialize(&m, dir.path()).unwrap();
    let ingest = Ingest::new(DecoderConfig::default(), IngestConfig::default());
    for (v, item) in m.resolved(dir.path()).items.iter().enumerate() {
        assert!(matches!(item.video.source, VideoSource::FrameDir(_)));
        let total = ingest.probe(&item.video).unwrap();
        assert_eq!(total, synthetic::frame_count(v));
        let indices = sampler::plan(total, 3).unwrap();
        for f in ingest.fetch_frames(&item.video, &indices).unwrap() {
            assert_eq!(f.mean_color(), as_f64(synthetic::frame_color(v, f.index)));
        }
    }
}

#[test]
fn real_ffmpeg_when_available() {
    if !common::has_command("ffmpeg") || !common::has_command("ffprobe") {
        eprintln!("ffmpeg not installed; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let video_path = dir.path().join("ramp.mkv");
    let status = std::process::Command::new("ffmpeg")
        .args([
            "-v",
            "error",
            "-f",
            "lavfi",
            "-i",
            "color=c=red:s=64x48:r=25:d=1.92",
            "-c:v",
            "ffv1",
        ])
        .arg(&video_path)
        .status()
        .unwrap();
    assert!(status.success());
    let ingest = Ingest::new(DecoderConfig::default(), IngestConfig::default());
    let video = VideoRef::from_path(&video_path);
    let total = ingest.probe(&video).unwrap();
    assert_eq!(total, 48);
    let frames = ingest.fetch_frames(&video, &[2, 6, 10, 14]).unwrap();
    for f in frames {
        let [r, g, b] = f.mean_color();
        assert!(r > 200.0 && g < 60.0 && b < 60.0, "{:?}", f.mean_color());
    }
}
