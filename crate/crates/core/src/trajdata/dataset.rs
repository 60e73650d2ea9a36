use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ingest, resample, split_folds, window, write_tracks, FoldSplit, RawTrack, SequenceWindow,
    StandardizationStats, TypeLabels, WindowConfig, DEFAULT_FOLDS,
};
use crate::error::{Error, Result};

/// Sidecar metadata stored next to each recording CSV as `<id>.meta.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub recording_id: String,
    pub frame_rate: f64,
    pub labels: TypeLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub tracks: Vec<RawTrack>,
}

impl Recording {
    pub fn frame_span(&self) -> Option<(i64, i64)> {
        let first = self.tracks.iter().filter_map(RawTrack::first_frame).min()?;
        let last = self.tracks.iter().filter_map(RawTrack::last_frame).max()?;
        Some((first, last))
    }

    pub fn csv_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.csv"))
    }

    pub fn meta_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.meta.toml"))
    }

    pub fn load(csv: &Path) -> Result<Self> {
        let meta_path = csv.with_extension("meta.toml");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RecordingMeta = toml::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        let tracks = ingest(csv, &meta.labels)?;
        Ok(Self { meta, tracks })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let id = &self.meta.recording_id;
        write_tracks(&Self::csv_path(dir, id), &self.tracks, &self.meta.labels)?;
        let meta = toml::to_string(&self.meta)
            .map_err(|e| Error::Data(format!("cannot encode metadata: {e}")))?;
        let meta_path = Self::meta_path(dir, id);
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn resampled(&self, target_rate: f64) -> Result<Self> {
        let tracks = resample(&self.tracks, self.meta.frame_rate, target_rate)?;
        Ok(Self {
            meta: RecordingMeta {
                frame_rate: target_rate,
                ..self.meta.clone()
            },
            tracks,
        })
    }
}

/// A directory of recordings sharing one label set, plus its fold manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub labels: TypeLabels,
    pub frame_rate: f64,
    pub recordings: Vec<Recording>,
    pub folds: FoldSplit,
}

pub const FOLD_MANIFEST: &str = "folds.toml";

impl Dataset {
    /// Builds a dataset from recordings, resampling each to `target_rate` and
    /// splitting them into the default number of folds.
    pub fn from_recordings(recordings: Vec<Recording>, target_rate: f64, test_fold: usize) -> Result<Self> {
        let labels = recordings
            .first()
            .map(|r| r.meta.labels.clone())
            .ok_or_else(|| Error::Data("dataset has no recordings".into()))?;
        let mut resampled = Vec::with_capacity(recordings.len());
        for r in &recordings {
            if r.meta.labels != labels {
                return Err(Error::Data(format!(
                    "recording {} uses a different label set",
                    r.meta.recording_id
                )));
            }
            resampled.push(r.resampled(target_rate)?);
        }
        let spans: Vec<(String, i64, i64)> = resampled
            .iter()
            .filter_map(|r| r.frame_span().map(|(a, b)| (r.meta.recording_id.clone(), a, b)))
            .collect();
        let folds = split_folds(&spans, DEFAULT_FOLDS, test_fold)?;
        Ok(Self {
            labels,
            frame_rate: target_rate,
            recordings: resampled,
            folds,
        })
    }

    /// Loads every `*.csv` with a metadata sidecar in `dir`. If a fold
    /// manifest is present it is used as is; otherwise folds are derived.
    pub fn load(dir: &Path, target_rate: f64) -> Result<Self> {
        let mut csvs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .filter(|p| p.with_extension("meta.toml").exists())
            .collect();
        csvs.sort();
        let recordings = csvs.iter().map(|p| Recording::load(p)).collect::<Result<Vec<_>>>()?;
        let mut ds = Self::from_recordings(recordings, target_rate, DEFAULT_FOLDS - 1)?;
        let manifest = dir.join(FOLD_MANIFEST);
        if manifest.exists() {
            ds.folds = FoldSplit::load(&manifest)?;
        }
        Ok(ds)
    }

    /// Writes recordings and the fold manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for r in &self.recordings {
            r.save(dir)?;
        }
        self.folds.save(&dir.join(FOLD_MANIFEST))
    }

    pub fn recording(&self, id: &str) -> Option<&Recording> {
        self.recordings.iter().find(|r| r.meta.recording_id == id)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    fn clipped_tracks(&self, folds: &[usize]) -> Vec<(String, i64, i64, Vec<RawTrack>)> {
        self.folds
            .segments_in(folds)
            .filter_map(|seg| {
                let rec = self.recording(&seg.recording_id)?;
                let tracks = rec
                    .tracks
                    .iter()
                    .map(|t| RawTrack {
                        samples: t
                            .samples
                            .iter()
                            .filter(|s| s.frame >= seg.start_frame && s.frame < seg.end_frame)
                            .copied()
                            .collect(),
                        ..t.clone()
                    })
                    .filter(|t| !t.samples.is_empty())
                    .collect();
                Some((seg.recording_id.clone(), seg.start_frame, seg.end_frame, tracks))
            })
            .collect()
    }

    /// Standardization stats over the samples of the given folds.
    pub fn fit_stats(&self, folds: &[usize]) -> Result<StandardizationStats> {
        let tracks: Vec<RawTrack> = self
            .clipped_tracks(folds)
            .into_iter()
            .flat_map(|(_, _, _, t)| t)
            .collect();
        StandardizationStats::fit(&tracks)
    }

    /// Standardized windows cut from the given folds; windows never straddle
    /// fold boundaries. Returns the windows and the skip count.
    pub fn windows(
        &self,
        folds: &[usize],
        stats: &StandardizationStats,
        cfg: &WindowConfig,
    ) -> Result<(Vec<SequenceWindow>, usize)> {
        let mut windows = Vec::new();
        let mut skipped = 0;
        for (id, start, end, tracks) in self.clipped_tracks(folds) {
            let standardized = stats.apply_tracks(&tracks);
            let out = window(&id, &standardized, start, end, cfg, self.dt())?;
            windows.extend(out.windows);
            skipped += out.skipped;
        }
        Ok((windows, skipped))
    }
}
