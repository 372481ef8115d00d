use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::metrics::FrameObject;
use crate::tracker::TrackOutput;

/// One line of a MOT-style file, minus the frame number (which is the
/// record's position in the per-frame list).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub id: i64,
    pub bbox: BoundingBox,
    pub score: f64,
    pub category: u32,
}

impl MotRecord {
    pub fn new(id: i64, bbox: BoundingBox, score: f64, category: u32) -> Self {
        Self {
            id,
            bbox,
            score,
            category,
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} `{raw}`")))
}

/// Parses `frame,id,x,y,w,h,score,category,visibility` lines.
///
/// Frames are 1-based; all records of a frame must be adjacent and frames
/// must not go backwards. Missing frames (gaps) yield empty entries. The
/// visibility column is read and discarded.
pub fn parse_mot(text: &str, path: &Path) -> Result<Vec<Vec<MotRecord>>> {
    let mut frames: Vec<Vec<MotRecord>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 9 {
            return Err(parse_err(
                path,
                line,
                format!("expected 9 fields, found {}", cols.len()),
            ));
        }
        let frame: usize = field(path, line, "frame", cols[0])?;
        if frame == 0 {
            return Err(parse_err(path, line, "frames are 1-based"));
        }
        if frame < frames.len() {
            return Err(parse_err(
                path,
                line,
                format!("frame {frame} appears after frame {}", frames.len()),
            ));
        }
        let id: i64 = field(path, line, "id", cols[1])?;
        let x: f64 = field(path, line, "x", cols[2])?;
        let y: f64 = field(path, line, "y", cols[3])?;
        let w: f64 = field(path, line, "w", cols[4])?;
        let h: f64 = field(path, line, "h", cols[5])?;
        let score: f64 = field(path, line, "score", cols[6])?;
        let category: u32 = field(path, line, "category", cols[7])?;
        let visibility: f64 = field(path, line, "visibility", cols[8])?;
        if !score.is_finite() || !visibility.is_finite() {
            return Err(parse_err(path, line, "non-finite score or visibility"));
        }
        let bbox = BoundingBox::new(x, y, w, h).map_err(|e| parse_err(path, line, e.to_string()))?;
        frames.resize_with(frame, Vec::new);
        frames[frame - 1].push(MotRecord::new(id, bbox, score, category));
    }
    Ok(frames)
}

pub fn read_mot(path: &Path) -> Result<Vec<Vec<MotRecord>>> {
    let text = super::read_text(path)?;
    parse_mot(&text, path)
}

/// Renders records with shortest round-trip reals and visibility `1.0`.
pub fn format_mot(frames: &[Vec<MotRecord>]) -> String {
    let mut out = String::new();
    for (f, recs) in frames.iter().enumerate() {
        for r in recs {
            let b = r.bbox;
            writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?},{:?},{},1.0",
                f + 1,
                r.id,
                b.x,
                b.y,
                b.w,
                b.h,
                r.score,
                r.category
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}

pub fn write_mot(path: &Path, frames: &[Vec<MotRecord>]) -> Result<()> {
    super::write_text(path, &format_mot(frames))
}

/// Tracker output as MOT records.
pub fn tracks_to_mot(frames: &[Vec<TrackOutput>]) -> Vec<Vec<MotRecord>> {
    frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|t| MotRecord::new(t.id as i64, t.detection.bbox, t.detection.score, t.detection.category))
                .collect()
        })
        .collect()
}

/// Evaluation view of MOT records; negative ids are rejected.
pub fn mot_to_objects(frames: &[Vec<MotRecord>]) -> Result<Vec<Vec<FrameObject>>> {
    frames
        .iter()
        .enumerate()
        .map(|(f, recs)| {
            recs.iter()
                .map(|r| {
                    u64::try_from(r.id)
                        .map(|id| FrameObject::new(id, r.category, r.bbox))
                        .map_err(|_| {
                            Error::invalid(format!("frame {}: negative id {} cannot be evaluated", f + 1, r.id))
                        })
                })
                .collect()
        })
        .collect()
}

pub fn objects_to_mot(frames: &[Vec<FrameObject>]) -> Vec<Vec<MotRecord>> {
    frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|o| MotRecord::new(o.id as i64, o.bbox, 1.0, o.category))
                .collect()
        })
        .collect()
}
