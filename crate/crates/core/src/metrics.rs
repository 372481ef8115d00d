//! CLEAR-MOT and identity (IDF1) evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::lap;

/// Minimum IoU for a ground-truth/prediction correspondence.
pub const DEFAULT_IOU_GATE: f64 = 0.5;

/// One annotated or predicted object in a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameObject {
    pub id: u64,
    pub category: u32,
    pub bbox: BoundingBox,
}

impl FrameObject {
    pub fn new(id: u64, category: u32, bbox: BoundingBox) -> Self {
        Self { id, category, bbox }
    }
}

/// Counts and scores for one evaluation scope.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Counts {
    /// `1 - (fp + fn + idsw) / num_gt`; the denominator is clamped to 1 for
    /// an empty ground truth.
    pub mota: f64,
    /// Mean IoU over matched pairs (higher is better).
    pub motp: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
    pub num_gt: usize,
    pub num_pred: usize,
    pub num_matches: usize,
    pub num_gt_ids: usize,
    pub idtp: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub overall: Counts,
    /// Breakdown per ground-truth category.
    pub per_category: BTreeMap<u32, Counts>,
    /// Mean MOTA over ground-truth categories.
    pub macro_mota: f64,
    /// Mean IDF1 over ground-truth categories.
    pub macro_idf1: f64,
}

impl EvalReport {
    pub fn mota(&self) -> f64 {
        self.overall.mota
    }

    pub fn idf1(&self) -> f64 {
        self.overall.idf1
    }

    pub fn id_switches(&self) -> usize {
        self.overall.id_switches
    }
}

/// Evaluates predicted tracks against ground truth frame by frame.
///
/// Per frame, last frame's correspondences are kept while still gated, and
/// the rest are matched by maximum cardinality then maximum total IoU.
/// Objects only ever match within their own category.
pub fn evaluate(gt: &[Vec<FrameObject>], pred: &[Vec<FrameObject>], iou_gate: f64) -> Result<EvalReport> {
    if gt.len() != pred.len() {
        return Err(Error::FrameMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    if !(iou_gate > 0.0 && iou_gate < 1.0) {
        return Err(Error::invalid(format!("IoU gate {iou_gate} outside (0, 1)")));
    }
    let overall = evaluate_scope(gt, pred, iou_gate);

    let categories: BTreeSet<u32> = gt.iter().flatten().map(|o| o.category).collect();
    let mut per_category = BTreeMap::new();
    for c in categories {
        let only = |seq: &[Vec<FrameObject>]| -> Vec<Vec<FrameObject>> {
            seq.iter()
                .map(|f| f.iter().filter(|o| o.category == c).copied().collect())
                .collect()
        };
        per_category.insert(c, evaluate_scope(&only(gt), &only(pred), iou_gate));
    }
    let n = per_category.len().max(1) as f64;
    let macro_mota = per_category.values().map(|c| c.mota).sum::<f64>() / n;
    let macro_idf1 = per_category.values().map(|c| c.idf1).sum::<f64>() / n;
    Ok(EvalReport {
        overall,
        per_category,
        macro_mota,
        macro_idf1,
    })
}

fn gated_iou(a: &FrameObject, b: &FrameObject, gate: f64) -> Option<f64> {
    if a.category != b.category {
        return None;
    }
    let v = iou(&a.bbox, &b.bbox);
    (v >= gate).then_some(v)
}

fn evaluate_scope(gt: &[Vec<FrameObject>], pred: &[Vec<FrameObject>], gate: f64) -> Counts {
    let mut c = Counts::default();
    let mut previous: HashMap<u64, u64> = HashMap::new();
    let mut last_matched: HashMap<u64, u64> = HashMap::new();
    let mut gt_frames: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    let mut iou_sum = 0.0;

    for (g_frame, p_frame) in gt.iter().zip(pred) {
        c.num_gt += g_frame.len();
        c.num_pred += p_frame.len();
        let mut g_used = vec![false; g_frame.len()];
        let mut p_used = vec![false; p_frame.len()];
        let mut matches: Vec<(usize, usize, f64)> = Vec::new();

        for (gi, g) in g_frame.iter().enumerate() {
            let Some(&pid) = previous.get(&g.id) else { continue };
            if let Some(pi) = p_frame.iter().position(|p| p.id == pid) {
                if p_used[pi] {
                    continue;
                }
                if let Some(v) = gated_iou(g, &p_frame[pi], gate) {
                    g_used[gi] = true;
                    p_used[pi] = true;
                    matches.push((gi, pi, v));
                }
            }
        }

        let free_g: Vec<usize> = (0..g_frame.len()).filter(|&i| !g_used[i]).collect();
        let free_p: Vec<usize> = (0..p_frame.len()).filter(|&i| !p_used[i]).collect();
        if !free_g.is_empty() && !free_p.is_empty() {
            // cardinality first, then IoU
            let bonus = (free_g.len().min(free_p.len()) + 1) as f64;
            let weights: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&gi| {
                    free_p
                        .iter()
                        .map(|&pi| gated_iou(&g_frame[gi], &p_frame[pi], gate).map_or(0.0, |v| bonus + v))
                        .collect()
                })
                .collect();
            for (r, col) in lap::max_weight_matching(&weights).into_iter().enumerate() {
                if let Some(col) = col {
                    let (gi, pi) = (free_g[r], free_p[col]);
                    matches.push((gi, pi, weights[r][col] - bonus));
                }
            }
        }

        previous.clear();
        for &(gi, pi, v) in &matches {
            let (gid, pid) = (g_frame[gi].id, p_frame[pi].id);
            if last_matched.get(&gid).is_some_and(|&old| old != pid) {
                c.id_switches += 1;
            }
            last_matched.insert(gid, pid);
            previous.insert(gid, pid);
            iou_sum += v;
        }
        for g in g_frame {
            gt_frames.entry(g.id).or_default().0 += 1;
        }
        for &(gi, _, _) in &matches {
            gt_frames.entry(g_frame[gi].id).or_default().1 += 1;
        }
        c.num_matches += matches.len();
        c.misses += g_frame.len() - matches.len();
        c.false_positives += p_frame.len() - matches.len();
    }

    c.num_gt_ids = gt_frames.len();
    for &(present, tracked) in gt_frames.values() {
        let ratio = tracked as f64 / present as f64;
        if ratio >= 0.8 {
            c.mostly_tracked += 1;
        } else if ratio <= 0.2 {
            c.mostly_lost += 1;
        }
    }
    let errors = c.false_positives + c.misses + c.id_switches;
    c.mota = 1.0 - errors as f64 / c.num_gt.max(1) as f64;
    c.motp = if c.num_matches > 0 {
        iou_sum / c.num_matches as f64
    } else {
        0.0
    };

    c.idtp = identity_true_positives(gt, pred, gate);
    let denom = (c.num_gt + c.num_pred) as f64;
    c.idf1 = if denom > 0.0 { 2.0 * c.idtp as f64 / denom } else { 1.0 };
    c.idp = if c.num_pred > 0 {
        c.idtp as f64 / c.num_pred as f64
    } else {
        0.0
    };
    c.idr = if c.num_gt > 0 {
        c.idtp as f64 / c.num_gt as f64
    } else {
        0.0
    };
    c
}

/// Per (gt id, pred id) count of frames where both are present and overlap
/// within the gate.
pub fn identity_overlap(
    gt: &[Vec<FrameObject>],
    pred: &[Vec<FrameObject>],
    gate: f64,
) -> (Vec<u64>, Vec<u64>, Vec<Vec<usize>>) {
    let gt_ids: Vec<u64> = gt
        .iter()
        .flatten()
        .map(|o| o.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pred_ids: Vec<u64> = pred
        .iter()
        .flatten()
        .map(|o| o.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let g_index: HashMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let p_index: HashMap<u64, usize> = pred_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut overlap = vec![vec![0usize; pred_ids.len()]; gt_ids.len()];
    for (g_frame, p_frame) in gt.iter().zip(pred) {
        for g in g_frame {
            for p in p_frame {
                if gated_iou(g, p, gate).is_some() {
                    overlap[g_index[&g.id]][p_index[&p.id]] += 1;
                }
            }
        }
    }
    (gt_ids, pred_ids, overlap)
}

/// Identity true positives under the best one-to-one id correspondence.
fn identity_true_positives(gt: &[Vec<FrameObject>], pred: &[Vec<FrameObject>], gate: f64) -> usize {
    let (_, _, overlap) = identity_overlap(gt, pred, gate);
    let weights: Vec<Vec<f64>> = overlap.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    lap::max_weight_matching(&weights)
        .into_iter()
        .enumerate()
        .filter_map(|(g, p)| p.map(|p| overlap[g][p]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: u64, x: f64) -> FrameObject {
        FrameObject::new(id, 1, BoundingBox::new(x, 0.0, 10.0, 10.0).unwrap())
    }

    fn single_object(frames: usize) -> Vec<Vec<FrameObject>> {
        (0..frames).map(|f| vec![obj(1, f as f64)]).collect()
    }

    #[test]
    fn perfect_tracking() {
        let gt = single_object(10);
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!(r.mota(), 1.0);
        assert_eq!(r.idf1(), 1.0);
        assert_eq!(r.overall.false_positives + r.overall.misses + r.overall.id_switches, 0);
        assert_eq!(r.overall.mostly_tracked, 1);
        assert_eq!(r.overall.motp, 1.0);
    }

    #[test]
    fn one_switch_halfway() {
        let gt = single_object(10);
        let pred: Vec<Vec<FrameObject>> = (0..10)
            .map(|f| vec![obj(if f < 5 { 1 } else { 2 }, f as f64)])
            .collect();
        let r = evaluate(&gt, &pred, 0.5).unwrap();
        assert_eq!(r.overall.id_switches, 1);
        assert!((r.mota() - 0.9).abs() < 1e-15);
        assert_eq!(r.idf1(), 0.5);
        assert_eq!(r.overall.idtp, 5);
    }

    #[test]
    fn everything_missed() {
        let gt = single_object(10);
        let pred = vec![Vec::new(); 10];
        let r = evaluate(&gt, &pred, 0.5).unwrap();
        assert_eq!(r.overall.misses, 10);
        assert_eq!(r.mota(), 0.0);
        assert_eq!(r.idf1(), 0.0);
        assert_eq!(r.overall.mostly_lost, 1);
    }

    #[test]
    fn frame_mismatch_is_an_error() {
        let gt = single_object(3);
        assert!(matches!(
            evaluate(&gt, &single_object(2), 0.5),
            Err(Error::FrameMismatch { gt: 3, pred: 2 })
        ));
        assert!(evaluate(&gt, &gt, 1.0).is_err());
    }

    #[test]
    fn categories_never_cross_match() {
        let gt = vec![vec![obj(1, 0.0)]];
        let mut p = obj(1, 0.0);
        p.category = 2;
        let r = evaluate(&gt, &[vec![p]], 0.5).unwrap();
        assert_eq!(r.overall.false_positives, 1);
        assert_eq!(r.overall.misses, 1);
        assert_eq!(r.per_category.len(), 1);
    }

    #[test]
    fn persistence_beats_better_overlap() {
        // gt 1 sits at x=0; pred 7 tracks it, then pred 8 lands exactly on it
        // while 7 drifts but stays gated. The correspondence stays with 7.
        let gt = vec![vec![obj(1, 0.0)], vec![obj(1, 0.0)]];
        let pred = vec![vec![obj(7, 0.0)], vec![obj(7, 2.0), obj(8, 0.0)]];
        let r = evaluate(&gt, &pred, 0.5).unwrap();
        assert_eq!(r.overall.id_switches, 0);
        assert_eq!(r.overall.false_positives, 1);
    }

    #[test]
    fn macro_average_over_gt_categories() {
        let mut a = obj(1, 0.0);
        a.category = 0;
        let b = obj(2, 50.0);
        let gt = vec![vec![a, b]];
        let pred = vec![vec![a]];
        let r = evaluate(&gt, &pred, 0.5).unwrap();
        assert_eq!(r.per_category[&0].mota, 1.0);
        assert_eq!(r.per_category[&1].mota, 0.0);
        assert_eq!(r.macro_mota, 0.5);
        assert_eq!(r.macro_idf1, 0.5);
    }
}
