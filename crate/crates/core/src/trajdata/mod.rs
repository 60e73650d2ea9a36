//! Trajectory ingestion and preprocessing.
//!
//! Raw recordings are CSV files with one row per (frame, agent) observation
//! plus a TOML sidecar carrying the frame rate, recording id and the agent
//! type labels. The pipeline is `ingest -> resample -> fit/apply standardizer
//! -> split folds -> window`; every stage is a pure function.

mod dataset;
mod folds;
mod ingest;
mod resample;
mod standardize;
mod window;

pub use dataset::{Dataset, Recording, RecordingMeta};
pub use folds::{split_folds, FoldSegment, FoldSplit, DEFAULT_FOLDS, DEFAULT_VALIDATION_FRACTION};
pub use ingest::{ingest, write_tracks, TypeLabels, CSV_HEADER};
pub use resample::{resample, DEFAULT_TARGET_RATE};
pub use standardize::StandardizationStats;
pub use window::{
    window, AgentSeries, RobotSeries, SequenceWindow, WindowConfig, WindowingOutcome,
    MIN_PRESENCE_FRACTION,
};

use serde::{Deserialize, Serialize};

/// 2-D position `[x, y]`.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

impl Sample {
    pub fn new(frame: i64, x: f64, y: f64) -> Self {
        Self { frame, x, y }
    }

    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

/// All observations of one agent in a recording, ordered by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrack {
    pub agent_id: u32,
    pub agent_type: usize,
    pub controlled: bool,
    pub samples: Vec<Sample>,
}

impl RawTrack {
    pub fn first_frame(&self) -> Option<i64> {
        self.samples.first().map(|s| s.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.samples.last().map(|s| s.frame)
    }

    /// Position at an exact frame, if observed.
    pub fn at(&self, frame: i64) -> Option<Point> {
        self.samples
            .binary_search_by_key(&frame, |s| s.frame)
            .ok()
            .map(|i| self.samples[i].point())
    }
}
