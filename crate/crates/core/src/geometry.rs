//! Box arithmetic: IoU, per-class NMS and the confidence-dependent
//! cross-class duplicate removal applied before association.

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// Axis-aligned box in MOTChallenge layout: top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        if !b.is_valid() {
            return Err(Error::invalid(format!(
                "box ({x}, {y}, {w}, {h}) needs finite coordinates and positive size"
            )));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Builds a box from corner coordinates; `None` when degenerate.
    pub(crate) fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        let b = Self {
            x: x1,
            y: y1,
            w: x2 - x1,
            h: y2 - y1,
        };
        b.is_valid().then_some(b)
    }

    fn intersection(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// A detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, category: u32) -> Self {
        Self {
            bbox,
            score,
            category,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Embedding) -> Self {
        self.embedding = Some(embedding);
        self
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Indices sorted by descending score, lower index first on ties.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));
    order
}

/// Greedy per-category non-maximum suppression.
///
/// Returns the kept indices in descending score order. A box is dropped when
/// it overlaps an already kept box of the same category by more than
/// `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let suppressed = kept
            .iter()
            .any(|&k| dets[k].category == dets[i].category && iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// IoU above which a candidate of the given confidence counts as a duplicate.
pub fn duplicate_iou_threshold(score: f64) -> f64 {
    if score > 0.5 {
        0.7
    } else {
        0.3
    }
}

/// Category-agnostic duplicate removal.
///
/// Detections are visited by descending score; each one is dropped if it
/// overlaps any kept detection by more than the threshold picked by its own
/// score (see [`duplicate_iou_threshold`]). Kept indices come back in visit
/// order.
pub fn remove_inter_class_duplicates(dets: &[Detection]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let thr = duplicate_iou_threshold(dets[i].score);
        if !kept.iter().any(|&k| iou(&dets[k].bbox, &dets[i].bbox) > thr) {
            kept.push(i);
        }
    }
    kept
}
