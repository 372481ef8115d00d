use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};

pub const DETECTIONS_FORMAT: &str = "quasitrack-detections";
pub const DETECTIONS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    frames: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    frame: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
    category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    identity: Option<u32>,
    embedding: Vec<f64>,
}

/// Per-frame detections with embeddings of one fixed dimension, plus
/// optional ground-truth identity labels (absent for clutter).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub dim: usize,
    pub frames: Vec<Vec<Detection>>,
    pub identities: Vec<Vec<Option<u32>>>,
}

impl DetectionSet {
    /// Unlabeled set; `dim` is taken from the first embedding found.
    pub fn new(frames: Vec<Vec<Detection>>) -> Self {
        let dim = frames
            .iter()
            .flatten()
            .find_map(|d| d.embedding.as_ref().map(Embedding::dim))
            .unwrap_or(0);
        let identities = frames.iter().map(|f| vec![None; f.len()]).collect();
        Self {
            dim,
            frames,
            identities,
        }
    }

    pub fn with_identities(mut self, identities: Vec<Vec<Option<u32>>>) -> Result<Self> {
        if identities.len() != self.frames.len() || identities.iter().zip(&self.frames).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::invalid("identity labels do not line up with detections"));
        }
        self.identities = identities;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses the line-delimited format. A completely empty text is an empty
/// set with dimension 0.
pub fn parse_detections(text: &str, path: &Path) -> Result<DetectionSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, head)) = lines.next() else {
        return Ok(DetectionSet::default());
    };
    let header: Header = serde_json::from_str(head).map_err(|e| parse_err(path, 1, format!("header: {e}")))?;
    if header.format != DETECTIONS_FORMAT || header.version != DETECTIONS_VERSION {
        return Err(parse_err(
            path,
            1,
            format!("unsupported format `{}` version {}", header.format, header.version),
        ));
    }
    let mut set = DetectionSet {
        dim: header.dim,
        frames: vec![Vec::new(); header.frames],
        identities: vec![Vec::new(); header.frames],
    };
    let mut last_frame = 1;
    for (i, raw) in lines {
        let line = i + 1;
        let rec: Record = serde_json::from_str(raw).map_err(|e| parse_err(path, line, format!("record: {e}")))?;
        if rec.frame == 0 || rec.frame > header.frames {
            return Err(parse_err(
                path,
                line,
                format!("frame {} outside 1..={}", rec.frame, header.frames),
            ));
        }
        if rec.frame < last_frame {
            return Err(parse_err(
                path,
                line,
                format!("frame {} appears after frame {last_frame}", rec.frame),
            ));
        }
        last_frame = rec.frame;
        if rec.embedding.len() != header.dim {
            return Err(parse_err(
                path,
                line,
                format!(
                    "record has {} embedding components, header declares {}",
                    rec.embedding.len(),
                    header.dim
                ),
            ));
        }
        if !rec.score.is_finite() || rec.embedding.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line, "non-finite value"));
        }
        let bbox = BoundingBox::new(rec.x, rec.y, rec.w, rec.h).map_err(|e| parse_err(path, line, e.to_string()))?;
        let det = Detection::new(bbox, rec.score, rec.category).with_embedding(Embedding::new(rec.embedding));
        set.frames[rec.frame - 1].push(det);
        set.identities[rec.frame - 1].push(rec.identity);
    }
    Ok(set)
}

pub fn read_detections(path: &Path) -> Result<DetectionSet> {
    let text = super::read_text(path)?;
    parse_detections(&text, path)
}

/// Header line then one record per detection in frame order. Reals use
/// shortest round-trip rendering.
pub fn format_detections(set: &DetectionSet) -> Result<String> {
    if set.identities.len() != set.frames.len() {
        return Err(Error::invalid("identity labels do not line up with detections"));
    }
    let header = Header {
        format: DETECTIONS_FORMAT.to_string(),
        version: DETECTIONS_VERSION,
        dim: set.dim,
        frames: set.frames.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for (f, (dets, ids)) in set.frames.iter().zip(&set.identities).enumerate() {
        if ids.len() != dets.len() {
            return Err(Error::invalid(format!(
                "frame {}: identity labels do not line up",
                f + 1
            )));
        }
        for (k, (d, id)) in dets.iter().zip(ids).enumerate() {
            let emb = d.embedding.as_ref().ok_or(Error::MissingEmbedding { index: k })?;
            if emb.dim() != set.dim {
                return Err(Error::DimensionMismatch {
                    expected: set.dim,
                    got: emb.dim(),
                });
            }
            if !d.score.is_finite() || !emb.is_finite() || !d.bbox.is_valid() {
                return Err(Error::invalid(format!(
                    "frame {}: detection {k} has non-finite values",
                    f + 1
                )));
            }
            let rec = Record {
                frame: f + 1,
                x: d.bbox.x,
                y: d.bbox.y,
                w: d.bbox.w,
                h: d.bbox.h,
                score: d.score,
                category: d.category,
                identity: *id,
                embedding: emb.as_slice().to_vec(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes")).expect("String write");
        }
    }
    Ok(out)
}

pub fn write_detections(path: &Path, set: &DetectionSet) -> Result<()> {
    super::write_text(path, &format_detections(set)?)
}
