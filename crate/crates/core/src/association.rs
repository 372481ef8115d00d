//! Detection-to-candidate similarity and one-to-one assignment.

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dim, Embedding};
use crate::error::{Error, Result};
use crate::lap;

/// Default score a pair must exceed to be associated.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

/// Pairwise scores, detections along rows and candidates along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    scores: Vec<Vec<f64>>,
    cols: usize,
}

impl SimilarityMatrix {
    pub fn from_rows(scores: Vec<Vec<f64>>) -> Result<Self> {
        let cols = scores.first().map_or(0, Vec::len);
        if scores.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged similarity matrix"));
        }
        Ok(Self { scores, cols })
    }

    pub fn rows(&self) -> usize {
        self.scores.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i][j]
    }

    pub fn as_rows(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let scores = (0..self.cols)
            .map(|j| self.scores.iter().map(|r| r[j]).collect())
            .collect();
        SimilarityMatrix {
            scores,
            cols: self.rows(),
        }
    }
}

/// How detections are scored against candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    BiSoftmax,
    Cosine,
}

impl SimilarityKind {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::BiSoftmax => "bisoftmax",
            SimilarityKind::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bisoftmax" => Ok(Self::BiSoftmax),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::invalid(format!("unknown similarity `{other}`"))),
        }
    }
}

fn check_sets(dets: &[Embedding], cands: &[Embedding]) -> Result<()> {
    if dets.is_empty() {
        return Err(Error::Empty("detection embeddings"));
    }
    if cands.is_empty() {
        return Err(Error::Empty("candidate embeddings"));
    }
    let d = dets[0].dim();
    for e in dets.iter().chain(cands) {
        check_dim(d, e.dim())?;
    }
    Ok(())
}

/// Raw dot-product logits `n_i · m_j`.
pub fn logit_matrix(dets: &[Embedding], cands: &[Embedding]) -> Result<Vec<Vec<f64>>> {
    check_sets(dets, cands)?;
    Ok(dets.iter().map(|n| cands.iter().map(|m| n.dot(m)).collect()).collect())
}

fn softmax_into(values: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax of every row (over candidates).
pub fn row_softmax(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits.iter().map(|r| softmax_into(r.iter().copied())).collect()
}

/// Softmax of every column (over detections), laid out like `logits`.
pub fn column_softmax(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = logits.len();
    let cols = logits.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; cols]; rows];
    for j in 0..cols {
        let col = softmax_into(logits.iter().map(|r| r[j]));
        for (i, v) in col.into_iter().enumerate() {
            out[i][j] = v;
        }
    }
    out
}

/// Mean of the row and column softmax of a logit matrix.
pub fn bisoftmax_from_logits(logits: &[Vec<f64>]) -> SimilarityMatrix {
    let rows = row_softmax(logits);
    let cols = column_softmax(logits);
    let scores = rows
        .into_iter()
        .zip(cols)
        .map(|(r, c)| r.into_iter().zip(c).map(|(a, b)| 0.5 * (a + b)).collect())
        .collect();
    SimilarityMatrix {
        scores,
        cols: logits.first().map_or(0, Vec::len),
    }
}

/// Bi-directional softmax similarity. A pair scores highly only when each
/// side is the other's dominant match.
pub fn bisoftmax(dets: &[Embedding], cands: &[Embedding]) -> Result<SimilarityMatrix> {
    Ok(bisoftmax_from_logits(&logit_matrix(dets, cands)?))
}

pub fn cosine_matrix(dets: &[Embedding], cands: &[Embedding]) -> Result<SimilarityMatrix> {
    check_sets(dets, cands)?;
    let unit = |v: &[Embedding]| v.iter().map(Embedding::normalized).collect::<Result<Vec<_>>>();
    let (a, b) = (unit(dets)?, unit(cands)?);
    let scores = a
        .iter()
        .map(|n| b.iter().map(|m| n.dot(m).clamp(-1.0, 1.0)).collect())
        .collect();
    SimilarityMatrix::from_rows(scores)
}

pub fn similarity(kind: SimilarityKind, dets: &[Embedding], cands: &[Embedding]) -> Result<SimilarityMatrix> {
    match kind {
        SimilarityKind::BiSoftmax => bisoftmax(dets, cands),
        SimilarityKind::Cosine => cosine_matrix(dets, cands),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub detection: usize,
    pub candidate: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub pairs: Vec<Match>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_candidates: Vec<usize>,
}

impl Assignment {
    fn from_pairs(pairs: Vec<Match>, rows: usize, cols: usize) -> Self {
        let mut det_used = vec![false; rows];
        let mut cand_used = vec![false; cols];
        for m in &pairs {
            det_used[m.detection] = true;
            cand_used[m.candidate] = true;
        }
        Assignment {
            pairs,
            unmatched_detections: (0..rows).filter(|&i| !det_used[i]).collect(),
            unmatched_candidates: (0..cols).filter(|&j| !cand_used[j]).collect(),
        }
    }

    /// Candidate matched to each detection.
    pub fn candidate_of(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for m in &self.pairs {
            out[m.detection] = Some(m.candidate);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMethod {
    /// Detections in descending confidence each take their best free candidate.
    #[default]
    Greedy,
    /// Globally optimal total score over the admissible pairs.
    Hungarian,
}

/// Greedy nearest-neighbour assignment.
///
/// Detections are visited by descending confidence (lower index first on
/// ties). Each takes the highest-scoring free candidate of its own category
/// whose score exceeds `threshold`; equal scores go to the lower candidate
/// index.
pub fn greedy_assign(
    sim: &SimilarityMatrix,
    det_scores: &[f64],
    det_categories: &[u32],
    cand_categories: &[u32],
    threshold: f64,
) -> Assignment {
    assign_masked(sim, det_scores, threshold, AssignMethod::Greedy, |i, j| {
        det_categories[i] == cand_categories[j]
    })
}

/// Same admissibility rules as [`greedy_assign`] but maximising the summed
/// score of the assignment.
pub fn hungarian_assign(
    sim: &SimilarityMatrix,
    det_scores: &[f64],
    det_categories: &[u32],
    cand_categories: &[u32],
    threshold: f64,
) -> Assignment {
    assign_masked(sim, det_scores, threshold, AssignMethod::Hungarian, |i, j| {
        det_categories[i] == cand_categories[j]
    })
}

/// Assignment restricted to pairs for which `admissible(det, cand)` holds and
/// whose score exceeds `threshold`.
pub fn assign_masked(
    sim: &SimilarityMatrix,
    det_scores: &[f64],
    threshold: f64,
    method: AssignMethod,
    admissible: impl Fn(usize, usize) -> bool,
) -> Assignment {
    let (rows, cols) = (sim.rows(), sim.cols());
    let ok = |i: usize, j: usize| admissible(i, j) && sim.get(i, j) > threshold;
    let pairs = match method {
        AssignMethod::Greedy => {
            let mut order: Vec<usize> = (0..rows).collect();
            order.sort_by(|&a, &b| det_scores[b].total_cmp(&det_scores[a]).then(a.cmp(&b)));
            let mut taken = vec![false; cols];
            let mut pairs = Vec::new();
            for i in order {
                let mut best: Option<usize> = None;
                for (j, &t) in taken.iter().enumerate() {
                    if t || !ok(i, j) {
                        continue;
                    }
                    if best.is_none_or(|b| sim.get(i, j) > sim.get(i, b)) {
                        best = Some(j);
                    }
                }
                if let Some(j) = best {
                    taken[j] = true;
                    pairs.push(Match {
                        detection: i,
                        candidate: j,
                        score: sim.get(i, j),
                    });
                }
            }
            pairs
        }
        AssignMethod::Hungarian => {
            let weights: Vec<Vec<f64>> = (0..rows)
                .map(|i| {
                    (0..cols)
                        .map(|j| if ok(i, j) { sim.get(i, j) - threshold } else { 0.0 })
                        .collect()
                })
                .collect();
            let mut pairs: Vec<Match> = lap::max_weight_matching(&weights)
                .into_iter()
                .enumerate()
                .filter_map(|(i, j)| {
                    j.map(|j| Match {
                        detection: i,
                        candidate: j,
                        score: sim.get(i, j),
                    })
                })
                .collect();
            pairs.sort_by(|a, b| {
                det_scores[b.detection]
                    .total_cmp(&det_scores[a.detection])
                    .then(a.detection.cmp(&b.detection))
            });
            pairs
        }
    };
    Assignment::from_pairs(pairs, rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    fn random_logits(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let n = rng.random_range(1..=16);
        let m = rng.random_range(1..=16);
        (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-8.0..8.0)).collect())
            .collect()
    }

    #[test]
    fn bisoftmax_examples() {
        let s = bisoftmax(&[e(&[3.0, -2.0])], &[e(&[0.1, 7.0])]).unwrap();
        assert_eq!(s.get(0, 0), 1.0);

        let s = bisoftmax(&[e(&[1.0, 0.0]), e(&[1.0, 0.0])], &[e(&[2.0, 5.0]), e(&[2.0, -3.0])]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(s.get(i, j), 0.5);
            }
        }

        let s = bisoftmax_from_logits(&[vec![10.0, 0.0], vec![0.0, 10.0]]);
        let expect = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((s.get(0, 0) - expect).abs() < 1e-15);
        assert!((s.get(1, 1) - 0.999_954_602_131_297_6).abs() < 1e-15);
    }

    #[test]
    fn bisoftmax_rejects_bad_shapes() {
        assert!(matches!(
            bisoftmax(&[e(&[1.0])], &[e(&[1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(bisoftmax(&[], &[e(&[1.0])]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let s = cosine_matrix(&[e(&[1.0, 2.0])], &[e(&[1.0, 2.0]), e(&[-2.0, 1.0]), e(&[-1.0, -2.0])]).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(s.get(0, 1).abs() < 1e-15);
        assert!((s.get(0, 2) + 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_matrix(&[e(&[0.0, 0.0])], &[e(&[1.0, 0.0])]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn directional_softmaxes_normalise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let l = random_logits(&mut rng);
            let r = row_softmax(&l);
            let c = column_softmax(&l);
            for row in &r {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for j in 0..l[0].len() {
                assert!((c.iter().map(|row| row[j]).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_duality_and_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let l = random_logits(&mut rng);
            let f = bisoftmax_from_logits(&l);
            let lt: Vec<Vec<f64>> = (0..l[0].len()).map(|j| l.iter().map(|r| r[j]).collect()).collect();
            let ft = bisoftmax_from_logits(&lt).transpose();
            let shift = rng.random_range(-50.0..50.0);
            let ls: Vec<Vec<f64>> = l.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
            let fs = bisoftmax_from_logits(&ls);
            for i in 0..f.rows() {
                for j in 0..f.cols() {
                    assert!((f.get(i, j) - ft.get(i, j)).abs() < 1e-12);
                    assert!((f.get(i, j) - fs.get(i, j)).abs() < 1e-12);
                    assert!(f.get(i, j) > 0.0 && f.get(i, j) <= 1.0);
                }
            }
        }
    }

    /// A score above one half forces at least one direction to be that
    /// pair's argmax; above three quarters forces both.
    #[test]
    fn high_scores_imply_directional_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let l = random_logits(&mut rng);
            let f = bisoftmax_from_logits(&l);
            for i in 0..f.rows() {
                for j in 0..f.cols() {
                    let is_row_max = l[i].iter().all(|&x| x <= l[i][j]);
                    let is_col_max = l.iter().all(|r| r[j] <= l[i][j]);
                    if f.get(i, j) > 0.5 {
                        assert!(is_row_max || is_col_max);
                    }
                    if f.get(i, j) > 0.75 {
                        assert!(is_row_max && is_col_max);
                    }
                }
            }
        }
    }

    #[test]
    fn greedy_examples() {
        let s = SimilarityMatrix::from_rows(vec![vec![0.9]]).unwrap();
        let a = greedy_assign(&s, &[0.9], &[1], &[1], 0.5);
        assert_eq!(a.pairs.len(), 1);
        let a = greedy_assign(&s, &[0.9], &[1], &[2], 0.5);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_detections, vec![0]);
        assert_eq!(a.unmatched_candidates, vec![0]);
        let s = SimilarityMatrix::from_rows(vec![vec![0.4]]).unwrap();
        assert!(greedy_assign(&s, &[0.9], &[1], &[1], 0.5).pairs.is_empty());
    }

    #[test]
    fn greedy_visits_confident_detections_first() {
        // both want candidate 0; the more confident detection wins it
        let s = SimilarityMatrix::from_rows(vec![vec![0.9, 0.6], vec![0.8, 0.2]]).unwrap();
        let a = greedy_assign(&s, &[0.3, 0.95], &[0, 0], &[0, 0], 0.5);
        assert_eq!(a.candidate_of(2), vec![Some(1), Some(0)]);
    }

    #[test]
    fn hungarian_maximises_total_score() {
        let s = SimilarityMatrix::from_rows(vec![vec![0.9, 0.6], vec![0.85, 0.2]]).unwrap();
        let g = greedy_assign(&s, &[0.95, 0.3], &[0, 0], &[0, 0], 0.5);
        assert_eq!(g.candidate_of(2), vec![Some(0), None]);
        let h = hungarian_assign(&s, &[0.95, 0.3], &[0, 0], &[0, 0], 0.5);
        assert_eq!(h.candidate_of(2), vec![Some(1), Some(0)]);
    }

    #[test]
    fn greedy_ties_prefer_lower_candidate() {
        let s = SimilarityMatrix::from_rows(vec![vec![0.7, 0.7]]).unwrap();
        let a = greedy_assign(&s, &[0.9], &[0], &[0, 0], 0.5);
        assert_eq!(a.pairs[0].candidate, 0);
    }

    #[test]
    fn assignments_are_one_to_one_and_thresholded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let l = random_logits(&mut rng);
            let s = bisoftmax_from_logits(&l);
            let scores: Vec<f64> = (0..s.rows()).map(|_| rng.random()).collect();
            let dc: Vec<u32> = (0..s.rows()).map(|_| rng.random_range(0..2)).collect();
            let cc: Vec<u32> = (0..s.cols()).map(|_| rng.random_range(0..2)).collect();
            for a in [
                greedy_assign(&s, &scores, &dc, &cc, 0.3),
                hungarian_assign(&s, &scores, &dc, &cc, 0.3),
            ] {
                let mut dets = std::collections::HashSet::new();
                let mut cands = std::collections::HashSet::new();
                for m in &a.pairs {
                    assert!(dets.insert(m.detection) && cands.insert(m.candidate));
                    assert!(m.score > 0.3);
                    assert_eq!(dc[m.detection], cc[m.candidate]);
                }
                assert_eq!(a.pairs.len() + a.unmatched_detections.len(), s.rows());
                assert_eq!(a.pairs.len() + a.unmatched_candidates.len(), s.cols());
            }
        }
    }
}
