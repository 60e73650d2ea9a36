use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

/// A contiguous frame range `[start_frame, end_frame)` of one recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSegment {
    pub recording_id: String,
    pub fold: usize,
    pub start_frame: i64,
    pub end_frame: i64,
}

impl FoldSegment {
    pub fn len(&self) -> i64 {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0
    }
}

/// Assignment of recording time ranges to disjoint folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: usize,
    pub test_fold: usize,
    pub validation_fraction: f64,
    pub segments: Vec<FoldSegment>,
}

/// Cuts each recording's frame span `[first, last]` into `folds` contiguous,
/// non-overlapping segments of (near) equal length; segment `f` belongs to fold `f`.
pub fn split_folds(spans: &[(String, i64, i64)], folds: usize, test_fold: usize) -> Result<FoldSplit> {
    if folds == 0 {
        return Err(Error::config("folds", "must be positive"));
    }
    if test_fold >= folds {
        return Err(Error::config("test_fold", format!("must be below {folds}")));
    }
    let mut segments = Vec::with_capacity(spans.len() * folds);
    for (id, first, last) in spans {
        let total = last - first + 1;
        if total < folds as i64 {
            return Err(Error::Data(format!(
                "recording {id} has {total} frames, fewer than {folds} folds"
            )));
        }
        for f in 0..folds {
            let start = first + total * f as i64 / folds as i64;
            let end = first + total * (f as i64 + 1) / folds as i64;
            segments.push(FoldSegment {
                recording_id: id.clone(),
                fold: f,
                start_frame: start,
                end_frame: end,
            });
        }
    }
    Ok(FoldSplit {
        folds,
        test_fold,
        validation_fraction: DEFAULT_VALIDATION_FRACTION,
        segments,
    })
}

impl FoldSplit {
    pub fn training_folds(&self) -> Vec<usize> {
        (0..self.folds).filter(|&f| f != self.test_fold).collect()
    }

    pub fn segments_in<'a>(&'a self, folds: &'a [usize]) -> impl Iterator<Item = &'a FoldSegment> + 'a {
        self.segments.iter().filter(move |s| folds.contains(&s.fold))
    }

    /// Same split with a different held-out fold.
    pub fn with_test_fold(&self, test_fold: usize) -> Result<Self> {
        if test_fold >= self.folds {
            return Err(Error::config("test_fold", format!("must be below {}", self.folds)));
        }
        Ok(Self {
            test_fold,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_fold >= self.folds {
            return Err(Error::config("test_fold", "out of range"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must be in [0, 1)"));
        }
        let mut by_rec: std::collections::BTreeMap<&str, Vec<&FoldSegment>> = Default::default();
        for s in &self.segments {
            if s.fold >= self.folds {
                return Err(Error::config("segments.fold", format!("fold {} out of range", s.fold)));
            }
            if s.is_empty() {
                return Err(Error::config("segments", "empty segment"));
            }
            by_rec.entry(&s.recording_id).or_default().push(s);
        }
        for (id, mut segs) in by_rec {
            segs.sort_by_key(|s| s.start_frame);
            if segs.windows(2).any(|w| w[0].end_frame > w[1].start_frame) {
                return Err(Error::Data(format!("overlapping fold segments in recording {id}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("cannot encode fold manifest: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        split.validate()?;
        Ok(split)
    }
}
