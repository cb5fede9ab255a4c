//! Grid composition: `N²` frames tiled row-major into one square image.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Frame;

/// Input resolution of the visual encoder.
pub const DEFAULT_SIDE_PX: u32 = 336;
/// Patch edge of the visual encoder; 336 / 14 = 24 patches per side.
pub const PATCH_PX: u32 = 14;

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("expected {expected} frames for a {n}x{n} grid, got {got}")]
    WrongFrameCount { n: u32, expected: usize, got: usize },
    #[error("grid of side {side_px}px cannot hold {n} cells per row")]
    DegenerateCell { n: u32, side_px: u32 },
    #[error("unknown resampling filter {0:?}")]
    UnknownFilter(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    Nearest,
    #[default]
    Bilinear,
    Bicubic,
    Gaussian,
    Lanczos3,
}

impl Filter {
    fn as_filter_type(self) -> FilterType {
        match self {
            Filter::Nearest => FilterType::Nearest,
            Filter::Bilinear => FilterType::Triangle,
            Filter::Bicubic => FilterType::CatmullRom,
            Filter::Gaussian => FilterType::Gaussian,
            Filter::Lanczos3 => FilterType::Lanczos3,
        }
    }
}

impl FromStr for Filter {
    type Err = ComposeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Filter::Nearest),
            "bilinear" | "triangle" => Ok(Filter::Bilinear),
            "bicubic" | "catmullrom" => Ok(Filter::Bicubic),
            "gaussian" => Ok(Filter::Gaussian),
            "lanczos3" | "lanczos" => Ok(Filter::Lanczos3),
            _ => Err(ComposeError::UnknownFilter(s.to_string())),
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Filter::Nearest => "nearest",
            Filter::Bilinear => "bilinear",
            Filter::Bicubic => "bicubic",
            Filter::Gaussian => "gaussian",
            Filter::Lanczos3 => "lanczos3",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridOptions {
    pub side_px: u32,
    /// Fit each frame inside its cell and pad with black instead of stretching.
    pub letterbox: bool,
    pub filter: Filter,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            side_px: DEFAULT_SIDE_PX,
            letterbox: false,
            filter: Filter::Bilinear,
        }
    }
}

/// A composited grid and its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    pub video_id: String,
    pub side_px: u32,
    pub grid_side: u32,
    pub cell_px: u32,
    pub source_indices: Vec<u64>,
    pub image: RgbImage,
}

impl GridImage {
    pub fn pixels(&self) -> &[u8] {
        self.image.as_raw()
    }

    /// Pixel rectangle `(x, y, w, h)` of cell `(row, col)` before any final
    /// resample, which only happens when `side_px` is not a multiple of `N`.
    pub fn cell_rect(&self, row: u32, col: u32) -> (u32, u32, u32, u32) {
        (col * self.cell_px, row * self.cell_px, self.cell_px, self.cell_px)
    }

    pub fn save(&self, path: &Path) -> Result<(), ComposeError> {
        save(self, path)
    }
}

/// File name of a video's grid for a given `N`.
pub fn grid_file_name(video_id: &str, grid_side: u32) -> String {
    format!("{video_id}_N{grid_side}.png")
}

/// Number of encoder patches an image of `side_px` square is cut into.
pub fn patch_count(side_px: u32) -> u32 {
    let per_side = side_px / PATCH_PX;
    per_side * per_side
}

/// Tiles `frames` into an `n × n` grid. Frame `k` lands in row `k / n`,
/// column `k % n`.
pub fn compose(frames: &[Frame], n: u32, opts: &GridOptions) -> Result<GridImage, ComposeError> {
    let expected = n as usize * n as usize;
    if n == 0 || frames.len() != expected {
        return Err(ComposeError::WrongFrameCount {
            n,
            expected,
            got: frames.len(),
        });
    }
    let cell_px = opts.side_px / n;
    if cell_px == 0 {
        return Err(ComposeError::DegenerateCell {
            n,
            side_px: opts.side_px,
        });
    }
    let filter = opts.filter.as_filter_type();
    let canvas_px = cell_px * n;
    let mut canvas = RgbImage::new(canvas_px, canvas_px);
    for (k, frame) in frames.iter().enumerate() {
        let (row, col) = (k as u32 / n, k as u32 % n);
        let cell = if opts.letterbox {
            letterbox(&frame.image, cell_px, filter)
        } else {
            fit_exact(&frame.image, cell_px, cell_px, filter)
        };
        imageops::replace(&mut canvas, &cell, (col * cell_px) as i64, (row * cell_px) as i64);
    }
    let image = if canvas_px == opts.side_px {
        canvas
    } else {
        imageops::resize(&canvas, opts.side_px, opts.side_px, filter)
    };
    Ok(GridImage {
        video_id: String::new(),
        side_px: opts.side_px,
        grid_side: n,
        cell_px,
        source_indices: frames.iter().map(|f| f.index).collect(),
        image,
    })
}

fn fit_exact(img: &RgbImage, w: u32, h: u32, filter: FilterType) -> RgbImage {
    if img.dimensions() == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, w, h, filter)
    }
}

fn letterbox(img: &RgbImage, cell_px: u32, filter: FilterType) -> RgbImage {
    let (w, h) = img.dimensions();
    let scale = cell_px as f64 / w.max(h) as f64;
    let fw = ((w as f64 * scale).round() as u32).clamp(1, cell_px);
    let fh = ((h as f64 * scale).round() as u32).clamp(1, cell_px);
    let fitted = fit_exact(img, fw, fh, filter);
    let mut cell = RgbImage::from_pixel(cell_px, cell_px, Rgb([0, 0, 0]));
    imageops::replace(
        &mut cell,
        &fitted,
        ((cell_px - fw) / 2) as i64,
        ((cell_px - fh) / 2) as i64,
    );
    cell
}

/// Writes the grid as PNG.
pub fn save(grid: &GridImage, path: &Path) -> Result<(), ComposeError> {
    grid.image
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| ComposeError::IoFailure {
            path: path.display().to_string(),
            source,
        })
}

pub fn load(path: &Path) -> Result<RgbImage, ComposeError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| ComposeError::IoFailure {
            path: path.display().to_string(),
            source,
        })
}
