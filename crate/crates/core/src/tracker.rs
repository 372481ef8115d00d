//! Online tracking by appearance.
//!
//! Each frame the tracker removes cross-class duplicates, scores the
//! detections against recent tracks and last frame's unmatched detections
//! ("backdrops"), assigns greedily, and then births, extends and retires
//! tracks.

use serde::{Deserialize, Serialize};

use crate::association::{self, AssignMethod, SimilarityKind, SimilarityMatrix};
use crate::embedding::{check_dim, Embedding};
use crate::error::{Error, Result};
use crate::geometry::{iou, remove_inter_class_duplicates, BoundingBox, Detection};

pub type TrackId = u64;

/// How a matched detection's embedding is folded into its track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumConvention {
    /// `m · old + (1 - m) · new`
    #[default]
    WeightOld,
    /// `(1 - m) · old + m · new`
    WeightNew,
}

/// Which unmatched detections may start a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitSource {
    /// Any confident detection.
    #[default]
    Internal,
    /// Only confident detections overlapping an externally supplied box.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Confidence a detection must exceed to start a track.
    pub init_threshold: f64,
    /// Confidence below which a detection cannot extend a track.
    pub obj_threshold: f64,
    /// Similarity a pair must exceed to associate.
    pub match_threshold: f64,
    /// Frames a track stays matchable after it was last seen.
    pub memory_frames: u64,
    pub momentum: f64,
    pub momentum_convention: MomentumConvention,
    pub similarity: SimilarityKind,
    pub assign_method: AssignMethod,
    pub use_backdrops: bool,
    pub inter_class_dedup: bool,
    pub init_source: InitSource,
    /// Overlap with an external box required for births in external mode.
    pub external_iou: f64,
    /// Associate by ground-truth identity labels instead of appearance.
    pub identity_oracle: bool,
    /// Detections absorbed by a backdrop join the next backdrop pool too.
    pub recycle_absorbed: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            init_threshold: 0.8,
            obj_threshold: 0.5,
            match_threshold: association::DEFAULT_MATCH_THRESHOLD,
            memory_frames: 10,
            momentum: 0.8,
            momentum_convention: MomentumConvention::WeightOld,
            similarity: SimilarityKind::BiSoftmax,
            assign_method: AssignMethod::Greedy,
            use_backdrops: true,
            inter_class_dedup: true,
            init_source: InitSource::Internal,
            external_iou: 0.5,
            identity_oracle: false,
            recycle_absorbed: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(self.obj_threshold) && in_unit(self.init_threshold) && self.obj_threshold <= self.init_threshold) {
            return Err(Error::invalid(format!(
                "thresholds need 0 <= obj ({}) <= init ({}) <= 1",
                self.obj_threshold, self.init_threshold
            )));
        }
        if !in_unit(self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        if !self.match_threshold.is_finite() {
            return Err(Error::invalid("match threshold must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub embedding: Embedding,
    pub category: u32,
    pub last_box: BoundingBox,
    pub last_score: f64,
    pub last_seen: u64,
    pub hits: u64,
    label: Option<u32>,
}

/// An unmatched detection kept as a matching candidate for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Backdrop {
    pub embedding: Embedding,
    pub category: u32,
    pub bbox: BoundingBox,
    pub frame: u64,
    label: Option<u32>,
}

/// One emitted `(track id, detection)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub id: TrackId,
    /// Position of the detection in the frame's input list.
    pub index: usize,
    pub detection: Detection,
}

pub fn momentum_update(old: &Embedding, new: &Embedding, momentum: f64) -> Result<Embedding> {
    momentum_update_with(old, new, momentum, MomentumConvention::WeightOld)
}

pub fn momentum_update_with(
    old: &Embedding,
    new: &Embedding,
    momentum: f64,
    convention: MomentumConvention,
) -> Result<Embedding> {
    check_dim(old.dim(), new.dim())?;
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum {momentum} outside [0, 1]")));
    }
    let w_old = match convention {
        MomentumConvention::WeightOld => momentum,
        MomentumConvention::WeightNew => 1.0 - momentum,
    };
    let mut out = old.scaled(w_old);
    out.add_scaled(1.0 - w_old, new);
    Ok(out)
}

enum Candidate {
    Track(usize),
    Backdrop(usize),
}

/// Per-sequence tracker state. Single writer: [`Tracker::step`] takes
/// `&mut self`.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    backdrops: Vec<Backdrop>,
    frame: Option<u64>,
    next_id: TrackId,
    dim: Option<usize>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            backdrops: Vec::new(),
            frame: None,
            next_id: 1,
            dim: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Tracks still in memory, ordered by id.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn backdrops(&self) -> &[Backdrop] {
        &self.backdrops
    }

    pub fn frame_index(&self) -> Option<u64> {
        self.frame
    }

    pub fn step(
        &mut self,
        frame: u64,
        detections: &[Detection],
        external_inits: Option<&[BoundingBox]>,
    ) -> Result<Vec<TrackOutput>> {
        self.step_labeled(frame, detections, external_inits, None)
    }

    /// [`Tracker::step`] with optional ground-truth identity labels per
    /// detection. Labels drive association only when the config enables the
    /// identity oracle; otherwise they are ignored.
    pub fn step_labeled(
        &mut self,
        frame: u64,
        detections: &[Detection],
        external_inits: Option<&[BoundingBox]>,
        labels: Option<&[Option<u32>]>,
    ) -> Result<Vec<TrackOutput>> {
        if let Some(last) = self.frame {
            if frame <= last {
                return Err(Error::NonIncreasingFrame { last, got: frame });
            }
        }
        let mut dim = self.dim;
        for (index, d) in detections.iter().enumerate() {
            let e = d.embedding.as_ref().ok_or(Error::MissingEmbedding { index })?;
            match dim {
                Some(expected) => check_dim(expected, e.dim())?,
                None => dim = Some(e.dim()),
            }
        }
        if let Some(l) = labels {
            if l.len() != detections.len() {
                return Err(Error::invalid(format!(
                    "{} identity labels for {} detections",
                    l.len(),
                    detections.len()
                )));
            }
        }
        let oracle = self.config.identity_oracle;
        if oracle && labels.is_none() {
            return Err(Error::invalid("identity oracle needs per-detection labels"));
        }
        self.dim = dim;
        self.frame = Some(frame);
        let label_of = |i: usize| labels.and_then(|l| l[i]);

        let mut working: Vec<usize> = if self.config.inter_class_dedup {
            remove_inter_class_duplicates(detections)
        } else {
            (0..detections.len()).collect()
        };
        working.sort_unstable();

        let mut candidates: Vec<Candidate> = self
            .tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| frame - t.last_seen <= self.config.memory_frames)
            .map(|(k, _)| Candidate::Track(k))
            .collect();
        if self.config.use_backdrops {
            candidates.extend((0..self.backdrops.len()).map(Candidate::Backdrop));
        }

        let cand_of = if working.is_empty() || candidates.is_empty() {
            vec![None; working.len()]
        } else {
            let sim = self.score(detections, &working, &candidates, label_of)?;
            let scores: Vec<f64> = working.iter().map(|&i| detections[i].score).collect();
            let obj = self.config.obj_threshold;
            let assignment = association::assign_masked(
                &sim,
                &scores,
                self.config.match_threshold,
                self.config.assign_method,
                |r, c| {
                    let det = &detections[working[r]];
                    match candidates[c] {
                        Candidate::Track(k) => self.tracks[k].category == det.category && det.score >= obj,
                        Candidate::Backdrop(k) => self.backdrops[k].category == det.category,
                    }
                },
            );
            assignment.candidate_of(working.len())
        };

        let mut outputs = Vec::new();
        let mut next_backdrops = Vec::new();
        for (r, &i) in working.iter().enumerate() {
            let det = &detections[i];
            let emb = det.embedding.as_ref().expect("validated above");
            let mut absorbed = false;
            let tracked = match cand_of[r].map(|c| &candidates[c]) {
                Some(Candidate::Track(k)) => {
                    let t = &mut self.tracks[*k];
                    t.embedding =
                        momentum_update_with(&t.embedding, emb, self.config.momentum, self.config.momentum_convention)?;
                    t.last_box = det.bbox;
                    t.last_score = det.score;
                    t.last_seen = frame;
                    t.hits += 1;
                    Some(t.id)
                }
                // matched to clutter from the previous frame: absorbed
                Some(Candidate::Backdrop(_)) => {
                    absorbed = true;
                    None
                }
                None if self.may_start(det, external_inits) => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.tracks.push(Track {
                        id,
                        embedding: emb.clone(),
                        category: det.category,
                        last_box: det.bbox,
                        last_score: det.score,
                        last_seen: frame,
                        hits: 1,
                        label: label_of(i),
                    });
                    Some(id)
                }
                None => None,
            };
            match tracked {
                Some(id) => outputs.push(TrackOutput {
                    id,
                    index: i,
                    detection: det.clone(),
                }),
                None if self.config.use_backdrops && (!absorbed || self.config.recycle_absorbed) => next_backdrops
                    .push(Backdrop {
                        embedding: emb.clone(),
                        category: det.category,
                        bbox: det.bbox,
                        frame,
                        label: label_of(i),
                    }),
                None => {}
            }
        }

        self.backdrops = next_backdrops;
        let memory = self.config.memory_frames;
        self.tracks.retain(|t| frame - t.last_seen <= memory);
        Ok(outputs)
    }

    fn may_start(&self, det: &Detection, external_inits: Option<&[BoundingBox]>) -> bool {
        if det.score <= self.config.init_threshold {
            return false;
        }
        match self.config.init_source {
            InitSource::Internal => true,
            InitSource::External => external_inits
                .unwrap_or(&[])
                .iter()
                .any(|b| iou(b, &det.bbox) > self.config.external_iou),
        }
    }

    fn score(
        &self,
        detections: &[Detection],
        working: &[usize],
        candidates: &[Candidate],
        label_of: impl Fn(usize) -> Option<u32>,
    ) -> Result<SimilarityMatrix> {
        if self.config.identity_oracle {
            let cand_labels: Vec<Option<u32>> = candidates
                .iter()
                .map(|c| match c {
                    Candidate::Track(k) => self.tracks[*k].label,
                    Candidate::Backdrop(k) => self.backdrops[*k].label,
                })
                .collect();
            let rows = working
                .iter()
                .map(|&i| {
                    let l = label_of(i);
                    cand_labels
                        .iter()
                        .map(|c| if l.is_some() && *c == l { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            return SimilarityMatrix::from_rows(rows);
        }
        let dets: Vec<Embedding> = working
            .iter()
            .map(|&i| detections[i].embedding.clone().expect("validated"))
            .collect();
        let cands: Vec<Embedding> = candidates
            .iter()
            .map(|c| match c {
                Candidate::Track(k) => self.tracks[*k].embedding.clone(),
                Candidate::Backdrop(k) => self.backdrops[*k].embedding.clone(),
            })
            .collect();
        association::similarity(self.config.similarity, &dets, &cands)
    }
}

/// Runs a fresh tracker over frames numbered from 1.
pub fn run_sequence(config: &TrackerConfig, frames: &[Vec<Detection>]) -> Result<Vec<Vec<TrackOutput>>> {
    run_sequence_with(config, frames, None, None)
}

pub fn run_sequence_with(
    config: &TrackerConfig,
    frames: &[Vec<Detection>],
    external_inits: Option<&[Vec<BoundingBox>]>,
    labels: Option<&[Vec<Option<u32>>]>,
) -> Result<Vec<Vec<TrackOutput>>> {
    let mut tracker = Tracker::new(config.clone())?;
    frames
        .iter()
        .enumerate()
        .map(|(f, dets)| {
            let ext = external_inits.map(|e| e.get(f).map_or(&[][..], Vec::as_slice));
            let lab = labels.and_then(|l| l.get(f)).map(Vec::as_slice);
            tracker.step_labeled(f as u64 + 1, dets, ext, lab)
        })
        .collect()
}
