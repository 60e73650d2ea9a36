use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RawTrack, Sample};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["frame", "agent_id", "agent_type", "controlled", "x", "y"];

/// Bidirectional mapping between agent type labels and type indices `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeLabels(Vec<String>);

impl TypeLabels {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Data("at least one agent type label is required".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Data(format!("duplicate agent type label `{l}`")));
            }
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.0.get(index).map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

/// Reads a trajectory CSV into one [`RawTrack`] per agent id.
///
/// Rows may appear in any order; samples are sorted by frame. Tracks are
/// returned ordered by agent id.
pub fn ingest(path: &Path, labels: &TypeLabels) -> Result<Vec<RawTrack>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "expected header `{}`, found `{}`",
                CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut tracks: BTreeMap<u32, RawTrack> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |name: &str, value: &str| -> Error {
            parse_err(line, format!("invalid {name} `{value}`"))
        };
        let col = |i: usize| record.get(i).unwrap_or("");
        let (frame_s, id_s, type_s, ctrl_s, x_s, y_s) = (col(0), col(1), col(2), col(3), col(4), col(5));

        let frame: i64 = frame_s.parse().map_err(|_| field("frame", frame_s))?;
        let agent_id: u32 = id_s.parse().map_err(|_| field("agent_id", id_s))?;
        let agent_type = labels
            .index_of(type_s)
            .ok_or_else(|| field("agent_type", type_s))?;
        let controlled = match ctrl_s {
            "0" => false,
            "1" => true,
            other => return Err(field("controlled", other)),
        };
        let x: f64 = x_s.parse().map_err(|_| field("x", x_s))?;
        let y: f64 = y_s.parse().map_err(|_| field("y", y_s))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(parse_err(line, "non-finite position".into()));
        }

        let track = tracks.entry(agent_id).or_insert_with(|| RawTrack {
            agent_id,
            agent_type,
            controlled,
            samples: Vec::new(),
        });
        if track.agent_type != agent_type || track.controlled != controlled {
            return Err(parse_err(
                line,
                format!("agent {agent_id} changes type or controlled flag"),
            ));
        }
        track.samples.push(Sample::new(frame, x, y));
    }

    let mut out = Vec::with_capacity(tracks.len());
    for (id, mut track) in tracks {
        track.samples.sort_by_key(|s| s.frame);
        if let Some(w) = track.samples.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::Data(format!(
                "{}: duplicate observation for agent {id} at frame {}",
                path.display(),
                w[0].frame
            )));
        }
        out.push(track);
    }
    Ok(out)
}

/// Writes tracks in the CSV layout read by [`ingest`], rows ordered by
/// (frame, agent id).
pub fn write_tracks(path: &Path, tracks: &[RawTrack], labels: &TypeLabels) -> Result<()> {
    let mut rows: Vec<(i64, u32, usize, bool, f64, f64)> = tracks
        .iter()
        .flat_map(|t| {
            t.samples
                .iter()
                .map(move |s| (s.frame, t.agent_id, t.agent_type, t.controlled, s.x, s.y))
        })
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));

    let mut buf = String::with_capacity(rows.len() * 32);
    buf.push_str(&CSV_HEADER.join(","));
    buf.push('\n');
    for (frame, id, k, controlled, x, y) in rows {
        let label = labels
            .label(k)
            .ok_or_else(|| Error::Data(format!("agent type index {k} has no label")))?;
        buf.push_str(&format!(
            "{frame},{id},{label},{},{x},{y}\n",
            u8::from(controlled)
        ));
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}
