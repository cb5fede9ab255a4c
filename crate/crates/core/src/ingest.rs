//! Video ingest: frame counts and pixel data for requested frame indices.
//!
//! Two kinds of source are supported. A frame directory holds pre-extracted
//! images named `frame_000000.png`, `frame_000001.png`, ... and the `k`-th
//! file in lexicographic order is frame `k`. A video file is handled by an
//! external decoder and prober, both configured as command templates, so the
//! crate never links a codec.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Image extensions accepted in a frame directory.
const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "ppm"];

pub const DEFAULT_DECODER_COMMAND: &str =
    "ffmpeg -nostdin -v error -y -i {input} -vf select=eq(n\\,{index}) -vsync 0 -frames:v 1 {output}";

pub const DEFAULT_PROBE_COMMAND: &str = "ffprobe -v error -select_streams v:0 \
    -show_entries stream=nb_frames,avg_frame_rate,r_frame_rate,duration:format=duration -of json {input}";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("video source not found: {0}")]
    SourceNotFound(PathBuf),
    #[error("video {0} has no frames")]
    EmptyVideo(String),
    #[error("no frame count or fps/duration available for video {0}")]
    MetadataUnavailable(String),
    #[error("frame index {index} out of range for video {video} with {total} frames")]
    IndexOutOfRange { video: String, index: u64, total: u64 },
    #[error("decode failure: {0}")]
    DecodeFailure(String),
    #[error("invalid video reference: {0}")]
    InvalidRef(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VideoSource {
    FrameDir(PathBuf),
    File(PathBuf),
}

impl VideoSource {
    /// A path with an extension names a video file; anything else is taken
    /// to be a frame directory.
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        if path.extension().is_some() {
            VideoSource::File(path)
        } else {
            VideoSource::FrameDir(path)
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            VideoSource::FrameDir(p) | VideoSource::File(p) => p,
        }
    }

    fn with_path(&self, path: PathBuf) -> Self {
        match self {
            VideoSource::FrameDir(_) => VideoSource::FrameDir(path),
            VideoSource::File(_) => VideoSource::File(path),
        }
    }
}

/// A reference to one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub id: String,
    pub source: VideoSource,
    pub fps: Option<f64>,
    pub frame_count_hint: Option<u64>,
}

impl VideoRef {
    pub fn new(id: impl Into<String>, source: VideoSource) -> Self {
        Self {
            id: id.into(),
            source,
            fps: None,
            frame_count_hint: None,
        }
    }

    /// Builds a reference whose id is the source path's file stem.
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let source = VideoSource::from_path(path);
        let id = video_id_for(source.path());
        Self::new(id, source)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(IngestError::InvalidRef("empty video id".into()));
        }
        if let Some(fps) = self.fps {
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(IngestError::InvalidRef(format!("fps must be positive, got {fps}")));
            }
        }
        if self.frame_count_hint == Some(0) {
            return Err(IngestError::InvalidRef("frame count hint must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolves a relative source path against `root`.
    pub fn resolved(&self, root: &Path) -> VideoRef {
        let p = self.source.path();
        if p.is_absolute() {
            return self.clone();
        }
        VideoRef {
            source: self.source.with_path(root.join(p)),
            ..self.clone()
        }
    }
}

/// File stem of a video path, used as its id.
pub fn video_id_for(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// One decoded RGB frame.
#[derive(Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub image: RgbImage,
}

impl Frame {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn pixels(&self) -> &[u8] {
        self.image.as_raw()
    }

    /// Mean colour over the whole frame, per channel.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut sum = [0u64; 3];
        for p in self.image.pixels() {
            for (s, &v) in sum.iter_mut().zip(&p.0) {
                *s += v as u64;
            }
        }
        let n = (self.width() as u64 * self.height() as u64).max(1) as f64;
        sum.map(|s| s as f64 / n)
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("index", &self.index)
            .field("width", &self.width())
            .field("height", &self.height())
            .finish()
    }
}

/// Loads an image file as RGB, guessing the format from its content.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let reader = image::ImageReader::open(path)?
        .with_guessed_format()
        .map_err(IngestError::Io)?;
    let img = reader
        .decode()
        .map_err(|e| IngestError::DecodeFailure(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Frame extraction template; placeholders `{input}`, `{index}`,
    /// `{output}` and `{time}` (seconds, needs an fps).
    pub command: String,
    /// Metadata template; must print ffprobe-style JSON to stdout.
    pub probe: String,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            command: DEFAULT_DECODER_COMMAND.into(),
            probe: DEFAULT_PROBE_COMMAND.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            cache_dir: None,
        }
    }
}

/// Metadata gathered by [`Ingest::probe_meta`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoMeta {
    /// Exact count reported by the container, when it reports one.
    pub declared_frames: Option<u64>,
    pub fps: Option<f64>,
    pub duration: Option<f64>,
    /// `round(fps × duration)` when both are known.
    pub derived_frames: Option<u64>,
    /// The count used for sampling.
    pub total_frames: u64,
}

#[derive(Debug)]
struct Probed {
    meta: VideoMeta,
    frame_files: Option<Arc<Vec<PathBuf>>>,
}

/// Probes and decodes videos, caching probe results for the lifetime of
/// the value.
#[derive(Debug, Default)]
pub struct Ingest {
    decoder: DecoderConfig,
    config: IngestConfig,
    probes: Mutex<HashMap<VideoSource, Arc<Probed>>>,
    locks: Mutex<HashMap<VideoSource, Arc<Mutex<()>>>>,
}

impl Ingest {
    pub fn new(decoder: DecoderConfig, config: IngestConfig) -> Self {
        Self {
            decoder,
            config,
            ..Self::default()
        }
    }

    pub fn workers(&self) -> usize {
        self.config.workers.max(1)
    }

    /// Total frame count `M` of a video.
    pub fn probe(&self, video: &VideoRef) -> Result<u64> {
        Ok(self.probed(video)?.meta.total_frames)
    }

    pub fn probe_meta(&self, video: &VideoRef) -> Result<VideoMeta> {
        Ok(self.probed(video)?.meta.clone())
    }

    fn probed(&self, video: &VideoRef) -> Result<Arc<Probed>> {
        if let Some(p) = self.probes.lock().unwrap().get(&video.source) {
            return Ok(p.clone());
        }
        video.validate()?;
        let path = video.source.path();
        if !path.exists() {
            return Err(IngestError::SourceNotFound(path.to_path_buf()));
        }
        let probed = match &video.source {
            VideoSource::FrameDir(dir) => {
                let files = list_frame_files(dir)?;
                if files.is_empty() {
                    return Err(IngestError::EmptyVideo(video.id.clone()));
                }
                Probed {
                    meta: VideoMeta {
                        declared_frames: Some(files.len() as u64),
                        fps: video.fps,
                        duration: None,
                        derived_frames: None,
                        total_frames: files.len() as u64,
                    },
                    frame_files: Some(Arc::new(files)),
                }
            }
            VideoSource::File(file) => Probed {
                meta: self.probe_file(video, file)?,
                frame_files: None,
            },
        };
        let probed = Arc::new(probed);
        self.probes.lock().unwrap().insert(video.source.clone(), probed.clone());
        Ok(probed)
    }

    fn probe_file(&self, video: &VideoRef, file: &Path) -> Result<VideoMeta> {
        let args = expand_template(&self.decoder.probe, &[("input", &file.to_string_lossy())]);
        let stdout = run_command(&args)?;
        let json: Value = serde_json::from_slice(&stdout)
            .map_err(|e| IngestError::DecodeFailure(format!("unparseable probe output for {}: {e}", video.id)))?;
        let mut meta = meta_from_probe_json(&json);
        if meta.fps.is_none() {
            meta.fps = video.fps;
        }
        resolve_total(video, meta)
    }

    /// Frames at `indices`, in request order. Duplicate indices are decoded
    /// once and returned as identical frames.
    pub fn fetch_frames(&self, video: &VideoRef, indices: &[u64]) -> Result<Vec<Frame>> {
        let probed = self.probed(video)?;
        let total = probed.meta.total_frames;
        if let Some(&bad) = indices.iter().find(|&&i| i >= total) {
            return Err(IngestError::IndexOutOfRange {
                video: video.id.clone(),
                index: bad,
                total,
            });
        }
        let unique: BTreeSet<u64> = indices.iter().copied().collect();
        let mut decoded: HashMap<u64, RgbImage> = HashMap::with_capacity(unique.len());
        match (&video.source, &probed.frame_files) {
            (VideoSource::FrameDir(_), Some(files)) => {
                for &i in &unique {
                    decoded.insert(i, load_rgb(&files[i as usize])?);
                }
            }
            (VideoSource::File(file), _) => {
                // one decoder at a time per video
                let lock = self
                    .locks
                    .lock()
                    .unwrap()
                    .entry(video.source.clone())
                    .or_default()
                    .clone();
                let _guard = lock.lock().unwrap();
                let scratch;
                let out_dir = match &self.config.cache_dir {
                    Some(root) => {
                        let d = root.join(cache_key(video));
                        std::fs::create_dir_all(&d)?;
                        d
                    }
                    None => {
                        scratch = tempfile::tempdir()?;
                        scratch.path().to_path_buf()
                    }
                };
                for &i in &unique {
                    let out = out_dir.join(format!("frame_{i:06}.png"));
                    if !out.exists() {
                        self.decode_one(file, i, probed.meta.fps, &out)?;
                    }
                    decoded.insert(i, load_rgb(&out)?);
                }
            }
            (VideoSource::FrameDir(_), None) => unreachable!("frame directories are always listed"),
        }
        Ok(indices
            .iter()
            .map(|&i| Frame {
                index: i,
                image: decoded[&i].clone(),
            })
            .collect())
    }

    fn decode_one(&self, file: &Path, index: u64, fps: Option<f64>, out: &Path) -> Result<()> {
        let time = fps.map(|f| format!("{:.6}", index as f64 / f)).unwrap_or_default();
        let args = expand_template(
            &self.decoder.command,
            &[
                ("input", &file.to_string_lossy()),
                ("index", &index.to_string()),
                ("output", &out.to_string_lossy()),
                ("time", &time),
            ],
        );
        run_command(&args)?;
        if !out.exists() {
            return Err(IngestError::DecodeFailure(format!(
                "decoder produced no output for frame {index} of {}",
                file.display()
            )));
        }
        Ok(())
    }
}

fn cache_key(video: &VideoRef) -> String {
    // FNV-1a keeps the key stable across runs and toolchains
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in video.source.path().to_string_lossy().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let id: String = video
        .id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{id}-{h:016x}")
}

/// Sorted `frame_NNNNNN.<ext>` files in `dir`.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(is_frame_file_name))
        .collect();
    files.sort();
    Ok(files)
}

fn is_frame_file_name(name: &str) -> bool {
    let Some(rest) = name.strip_prefix("frame_") else {
        return false;
    };
    let Some((digits, ext)) = rest.split_once('.') else {
        return false;
    };
    digits.len() >= 6
        && digits.bytes().all(|b| b.is_ascii_digit())
        && FRAME_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str())
}

/// Splits a template on whitespace and substitutes `{name}` placeholders in
/// each argument. Substituted values are never re-split.
pub fn expand_template(template: &str, vars: &[(&str, &str)]) -> Vec<String> {
    template
        .split_whitespace()
        .map(|arg| {
            vars.iter()
                .fold(arg.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
        })
        .collect()
}

fn run_command(args: &[String]) -> Result<Vec<u8>> {
    let (prog, rest) = args
        .split_first()
        .ok_or_else(|| IngestError::DecodeFailure("empty command template".into()))?;
    let output = Command::new(prog)
        .args(rest)
        .output()
        .map_err(|e| IngestError::DecodeFailure(format!("failed to run {prog}: {e}")))?;
    if !output.status.success() {
        return Err(IngestError::DecodeFailure(format!(
            "{prog} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(output.stdout)
}

fn json_number(v: Option<&Value>) -> Option<f64> {
    match v? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn json_rate(v: Option<&Value>) -> Option<f64> {
    let s = v?.as_str()?;
    let rate = match s.split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.trim().parse().ok()?, d.trim().parse().ok()?);
            if d == 0.0 {
                return None;
            }
            n / d
        }
        None => s.trim().parse().ok()?,
    };
    (rate > 0.0 && rate.is_finite()).then_some(rate)
}

fn meta_from_probe_json(json: &Value) -> VideoMeta {
    let stream = json.get("streams").and_then(|s| s.get(0));
    let declared = json_number(stream.and_then(|s| s.get("nb_frames")))
        .filter(|n| *n >= 1.0)
        .map(|n| n as u64);
    let fps = json_rate(stream.and_then(|s| s.get("avg_frame_rate")))
        .or_else(|| json_rate(stream.and_then(|s| s.get("r_frame_rate"))));
    let duration = json_number(stream.and_then(|s| s.get("duration")))
        .or_else(|| json_number(json.get("format").and_then(|f| f.get("duration"))))
        .filter(|d| *d > 0.0);
    VideoMeta {
        declared_frames: declared,
        fps,
        duration,
        derived_frames: None,
        total_frames: 0,
    }
}

/// Declared counts win over `round(fps × duration)`; the manifest hint sits
/// between the two.
fn resolve_total(video: &VideoRef, mut meta: VideoMeta) -> Result<VideoMeta> {
    meta.derived_frames = match (meta.fps, meta.duration) {
        (Some(f), Some(d)) => Some((f * d).round() as u64),
        _ => None,
    };
    meta.total_frames = meta
        .declared_frames
        .or(video.frame_count_hint)
        .or(meta.derived_frames)
        .ok_or_else(|| IngestError::MetadataUnavailable(video.id.clone()))?;
    if meta.total_frames == 0 {
        return Err(IngestError::EmptyVideo(video.id.clone()));
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use serde_json::json;

    fn solid(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(c))
    }

    fn frame_dir(n: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..n {
            solid(8, 6, [i as u8 * 5, 100, 255 - i as u8])
                .save(dir.path().join(format!("frame_{i:06}.png")))
                .unwrap();
        }
        dir
    }

    #[test]
    fn probe_counts_frame_files() {
        let dir = frame_dir(48);
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        std::fs::write(dir.path().join("frame_12.png"), "x").unwrap();
        let ingest = Ingest::default();
        let v = VideoRef::new("v", VideoSource::FrameDir(dir.path().into()));
        assert_eq!(ingest.probe(&v).unwrap(), 48);
        assert_eq!(ingest.probe(&v).unwrap(), 48);
    }

    #[test]
    fn empty_and_missing_sources() {
        let dir = tempfile::tempdir().unwrap();
        let ingest = Ingest::default();
        let v = VideoRef::new("v", VideoSource::FrameDir(dir.path().into()));
        assert!(matches!(ingest.probe(&v), Err(IngestError::EmptyVideo(_))));
        let missing = VideoRef::new("m", VideoSource::FrameDir(dir.path().join("nope")));
        assert!(matches!(ingest.probe(&missing), Err(IngestError::SourceNotFound(_))));
    }

    #[test]
    fn fetch_in_request_order_with_duplicates() {
        let dir = frame_dir(48);
        let ingest = Ingest::default();
        let v = VideoRef::new("v", VideoSource::FrameDir(dir.path().into()));
        let frames = ingest.fetch_frames(&v, &[10, 0, 0, 47]).unwrap();
        assert_eq!(frames.iter().map(|f| f.index).collect::<Vec<_>>(), vec![10, 0, 0, 47]);
        assert_eq!(frames[1].pixels(), frames[2].pixels());
        assert_eq!(frames[0].image.get_pixel(0, 0).0, [50, 100, 245]);
        assert_eq!((frames[0].width(), frames[0].height()), (8, 6));
        let direct = image::open(dir.path().join("frame_000047.png")).unwrap().to_rgb8();
        assert_eq!(frames[3].pixels(), direct.as_raw().as_slice());
    }

    #[test]
    fn fetch_out_of_range() {
        let dir = frame_dir(48);
        let ingest = Ingest::default();
        let v = VideoRef::new("v", VideoSource::FrameDir(dir.path().into()));
        match ingest.fetch_frames(&v, &[3, 48]) {
            Err(IngestError::IndexOutOfRange { index, total, .. }) => assert_eq!((index, total), (48, 48)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        image::RgbaImage::from_pixel(4, 4, image::Rgba([10, 20, 30, 7]))
            .save(dir.path().join("frame_000000.png"))
            .unwrap();
        let ingest = Ingest::default();
        let v = VideoRef::new("v", VideoSource::FrameDir(dir.path().into()));
        let f = &ingest.fetch_frames(&v, &[0]).unwrap()[0];
        assert_eq!(f.pixels().len(), 4 * 4 * 3);
        assert_eq!(f.image.get_pixel(1, 1).0, [10, 20, 30]);
    }

    #[test]
    fn frame_name_convention() {
        assert!(is_frame_file_name("frame_000000.png"));
        assert!(is_frame_file_name("frame_1234567.JPG"));
        assert!(!is_frame_file_name("frame_00001.png"));
        assert!(!is_frame_file_name("frame_00000a.png"));
        assert!(!is_frame_file_name("img_000000.png"));
        assert!(!is_frame_file_name("frame_000000.txt"));
    }

    #[test]
    fn template_substitutes_without_resplitting() {
        let args = expand_template(
            "dec -i {input} -n {index} {output}",
            &[("input", "/a b/c.mp4"), ("index", "7"), ("output", "/o/frame.png")],
        );
        assert_eq!(args, vec!["dec", "-i", "/a b/c.mp4", "-n", "7", "/o/frame.png"]);
    }

    #[test]
    fn count_from_fps_and_duration() {
        let v = VideoRef::new("v", VideoSource::File("v.mp4".into()));
        let meta = meta_from_probe_json(&json!({
            "streams": [{"r_frame_rate": "30/1", "avg_frame_rate": "0/0", "duration": "10.000000"}]
        }));
        let meta = resolve_total(&v, meta).unwrap();
        assert_eq!(meta.total_frames, 300);
        assert_eq!(meta.derived_frames, Some(300));
        assert_eq!(meta.declared_frames, None);
    }

    #[test]
    fn declared_count_wins() {
        let v = VideoRef::new("v", VideoSource::File("v.mp4".into()));
        let meta = meta_from_probe_json(&json!({
            "streams": [{"nb_frames": "297", "avg_frame_rate": "30000/1001", "duration": "10.0"}],
            "format": {"duration": "10.01"}
        }));
        let meta = resolve_total(&v, meta).unwrap();
        assert_eq!(meta.total_frames, 297);
        assert_eq!(meta.derived_frames, Some(300));
    }

    #[test]
    fn metadata_fallbacks() {
        let mut v = VideoRef::new("v", VideoSource::File("v.mp4".into()));
        let bare = meta_from_probe_json(&json!({"streams": [{"nb_frames": "N/A"}]}));
        assert!(matches!(
            resolve_total(&v, bare.clone()),
            Err(IngestError::MetadataUnavailable(_))
        ));
        v.frame_count_hint = Some(120);
        assert_eq!(resolve_total(&v, bare).unwrap().total_frames, 120);
        let fmt_only =
            meta_from_probe_json(&json!({"streams": [{"r_frame_rate": "25"}], "format": {"duration": "2.0"}}));
        assert_eq!(fmt_only.fps, Some(25.0));
        assert_eq!(fmt_only.duration, Some(2.0));
    }

    #[test]
    fn ref_validation() {
        let mut v = VideoRef::from_path("videos/abc.mp4");
        assert_eq!(v.id, "abc");
        assert!(matches!(v.source, VideoSource::File(_)));
        assert!(v.validate().is_ok());
        v.fps = Some(0.0);
        assert!(v.validate().is_err());
        v.fps = None;
        v.frame_count_hint = Some(0);
        assert!(v.validate().is_err());
        assert!(VideoRef::new("", VideoSource::FrameDir("x".into())).validate().is_err());
        assert!(matches!(
            VideoRef::from_path("frames/abc").source,
            VideoSource::FrameDir(_)
        ));
    }

    #[test]
    fn resolve_relative_paths() {
        let v = VideoRef::from_path("clips/a.mp4");
        assert_eq!(
            v.resolved(Path::new("/data")).source.path(),
            Path::new("/data/clips/a.mp4")
        );
        let abs = VideoRef::from_path("/x/a.mp4");
        assert_eq!(abs.resolved(Path::new("/data")), abs);
    }
}
