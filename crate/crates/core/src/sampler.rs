//! Middle-frame sampling.
//!
//! A video of `M` frames is split into `N²` equal real-valued intervals
//! `[i·M/N², (i+1)·M/N²)` and the frame holding the midpoint of each interval
//! is selected: `index_i = floor((i + 0.5) · M / N²)`. When `M < N²` some
//! frames are selected more than once so the grid always has `N²` cells.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// The frames chosen for one video's grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    pub video_id: String,
    pub total_frames: u64,
    pub grid_side: u32,
    pub indices: Vec<u64>,
}

impl FramePlan {
    pub fn new(video_id: impl Into<String>, total_frames: u64, grid_side: u32) -> Result<Self, SamplerError> {
        Ok(Self {
            video_id: video_id.into(),
            total_frames,
            grid_side,
            indices: plan(total_frames, grid_side)?,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.grid_side as usize * self.grid_side as usize
    }
}

/// Middle-frame indices for `total_frames` frames on an `grid_side × grid_side` grid.
pub fn plan(total_frames: u64, grid_side: u32) -> Result<Vec<u64>, SamplerError> {
    if total_frames < 1 {
        return Err(SamplerError::InvalidArgument(
            "total frame count must be at least 1".into(),
        ));
    }
    if grid_side < 1 {
        return Err(SamplerError::InvalidArgument("grid side must be at least 1".into()));
    }
    let cells = grid_side as u128 * grid_side as u128;
    let m = total_frames as u128;
    // floor((2i + 1)·M / 2N²), exact in integers
    Ok((0..cells).map(|i| ((2 * i + 1) * m / (2 * cells)) as u64).collect())
}
