//! Quasi-dense training pair construction.
//!
//! Proposals on a key frame and a nearby reference frame are labeled
//! against ground truth by IoU, sub-sampled to fixed quotas, and every key
//! sample is matched against every reference sample.

use std::ops::RangeInclusive;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedloss::{ContrastiveKind, IndexedInstance};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

pub const DEFAULT_POSITIVE_IOU: f64 = 0.7;
pub const DEFAULT_NEGATIVE_IOU: f64 = 0.3;
pub const DEFAULT_KEY_SAMPLES: usize = 128;
pub const DEFAULT_REF_SAMPLES: usize = 256;
pub const DEFAULT_NEGATIVE_BINS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Ignored,
}

/// A region proposal labeled against the frame's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    /// Identity of the best-overlapping ground truth; set only for positives.
    pub assigned_gt: Option<u32>,
    pub label: Label,
    pub max_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub positive_iou: f64,
    pub negative_iou: f64,
    pub key_samples: usize,
    pub ref_samples: usize,
    pub ref_positive_fraction: f64,
    pub negative_bins: usize,
    /// Negative aux pairs drawn per positive aux pair.
    pub aux_negative_ratio: usize,
    /// Allowed key-to-reference frame offsets.
    pub frame_offsets: RangeInclusive<i64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            positive_iou: DEFAULT_POSITIVE_IOU,
            negative_iou: DEFAULT_NEGATIVE_IOU,
            key_samples: DEFAULT_KEY_SAMPLES,
            ref_samples: DEFAULT_REF_SAMPLES,
            ref_positive_fraction: 0.5,
            negative_bins: DEFAULT_NEGATIVE_BINS,
            aux_negative_ratio: 3,
            frame_offsets: -3..=3,
        }
    }
}

/// Labels every proposal: positive above `alpha_pos`, negative below
/// `alpha_neg`, ignored otherwise (including exact equality with either).
pub fn assign_labels(
    proposals: &[BoundingBox],
    gts: &[(BoundingBox, u32)],
    alpha_pos: f64,
    alpha_neg: f64,
) -> Result<Vec<Proposal>> {
    if !(0.0 <= alpha_neg && alpha_neg <= alpha_pos && alpha_pos <= 1.0) {
        return Err(Error::invalid(format!(
            "label thresholds need 0 <= {alpha_neg} <= {alpha_pos} <= 1"
        )));
    }
    Ok(proposals
        .iter()
        .map(|b| {
            // strict `>` keeps the lowest gt index on ties
            let mut best: Option<(usize, f64)> = None;
            for (g, (gt, _)) in gts.iter().enumerate() {
                let v = iou(b, gt);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            let max_iou = best.map_or(0.0, |(_, v)| v);
            let (label, assigned_gt) = match best {
                Some((g, v)) if v > alpha_pos => (Label::Positive, Some(gts[g].1)),
                _ if max_iou < alpha_neg => (Label::Negative, None),
                None => (Label::Negative, None),
                _ => (Label::Ignored, None),
            };
            Proposal {
                bbox: *b,
                assigned_gt,
                label,
                max_iou,
            }
        })
        .collect())
}

fn indices_with(proposals: &[Proposal], label: Label) -> Vec<usize> {
    proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| p.label == label)
        .map(|(i, _)| i)
        .collect()
}

fn take_random(mut pool: Vec<usize>, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

/// Draws `quota` negatives spread evenly over equal-width `max_iou` bins
/// covering `[0, upper)`. Bins that run short hand their remaining quota to
/// the others one slot at a time, in bin order.
fn iou_balanced(
    proposals: &[Proposal],
    negatives: &[usize],
    quota: usize,
    upper: f64,
    bins: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let bins = bins.max(1);
    let width = upper / bins as f64;
    let mut pools = vec![Vec::new(); bins];
    for &i in negatives {
        let b = if width > 0.0 {
            ((proposals[i].max_iou / width) as usize).min(bins - 1)
        } else {
            0
        };
        pools[b].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }

    let mut take: Vec<usize> = (0..bins)
        .map(|b| (quota / bins + usize::from(b < quota % bins)).min(pools[b].len()))
        .collect();
    let mut left = quota - take.iter().sum::<usize>();
    while left > 0 {
        let mut progressed = false;
        for b in 0..bins {
            if left > 0 && take[b] < pools[b].len() {
                take[b] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    pools
        .into_iter()
        .zip(take)
        .flat_map(|(pool, t)| pool.into_iter().take(t))
        .collect()
}

/// Key-frame samples: all positives first (capped at `n`), then negatives
/// by IoU-balanced sampling below `negative_iou`. Ignored proposals are
/// never drawn.
pub fn sample_key(proposals: &[Proposal], n: usize, negative_iou: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = take_random(indices_with(proposals, Label::Positive), n, &mut rng);
    let quota = n - out.len();
    let negatives = indices_with(proposals, Label::Negative);
    out.extend(iou_balanced(
        proposals,
        &negatives,
        quota,
        negative_iou,
        DEFAULT_NEGATIVE_BINS,
        &mut rng,
    ));
    out
}

/// Reference-frame samples with a target positive share; whichever side
/// runs short is filled from the other.
pub fn sample_ref(proposals: &[Proposal], n: usize, positive_fraction: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives = indices_with(proposals, Label::Positive);
    let negatives = indices_with(proposals, Label::Negative);
    let target_pos = ((n as f64) * positive_fraction).round() as usize;
    let n_pos = target_pos.min(positives.len());
    let n_neg = (n - n_pos).min(negatives.len());
    let n_pos = (n - n_neg).min(positives.len());
    let mut out = take_random(positives, n_pos, &mut rng);
    out.extend(take_random(negatives, n_neg, &mut rng));
    out
}

/// Dense key × reference matching for one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    /// Indices into the key frame's proposals.
    pub key_samples: Vec<usize>,
    /// Indices into the reference frame's proposals.
    pub ref_samples: Vec<usize>,
    /// `matches[i][j]`: key sample `i` and reference sample `j` are both
    /// positive for the same identity.
    pub matches: Vec<Vec<bool>>,
    /// `(key position, ref position, positive)` pairs for the aux loss.
    pub aux_pairs: Vec<(usize, usize, bool)>,
}

impl PairBatch {
    /// Contrastive instances over sample positions: keys index `0..V`,
    /// references index `V..V+K`. Keys without any positive are skipped.
    ///
    /// For [`ContrastiveKind::Single`] only the reference positive with the
    /// highest ground-truth overlap is kept; other positives are left out
    /// of the instance entirely rather than treated as negatives.
    pub fn instances(&self, reference: &[Proposal], kind: ContrastiveKind) -> Vec<IndexedInstance> {
        let offset = self.key_samples.len();
        let mut out = Vec::new();
        for (i, row) in self.matches.iter().enumerate() {
            let mut positives: Vec<usize> = Vec::new();
            let mut negatives: Vec<usize> = Vec::new();
            for (j, &m) in row.iter().enumerate() {
                if m {
                    positives.push(j);
                } else {
                    negatives.push(j);
                }
            }
            if positives.is_empty() {
                continue;
            }
            if kind == ContrastiveKind::Single {
                let best = positives
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        let (ia, ib) = (
                            reference[self.ref_samples[a]].max_iou,
                            reference[self.ref_samples[b]].max_iou,
                        );
                        ia.total_cmp(&ib).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                positives = vec![best];
            }
            out.push(IndexedInstance {
                anchor: i,
                positives: positives.into_iter().map(|j| j + offset).collect(),
                negatives: negatives.into_iter().map(|j| j + offset).collect(),
            });
        }
        out
    }
}

/// Samples both frames, builds the match matrix and draws aux pairs (every
/// positive pair plus `aux_negative_ratio` times as many negatives).
pub fn build_pair_batch(key: &[Proposal], reference: &[Proposal], cfg: &SamplingConfig, seed: u64) -> PairBatch {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let key_samples = sample_key(key, cfg.key_samples, cfg.negative_iou, seeds.random());
    let ref_samples = sample_ref(reference, cfg.ref_samples, cfg.ref_positive_fraction, seeds.random());

    let matches: Vec<Vec<bool>> = key_samples
        .iter()
        .map(|&i| {
            ref_samples
                .iter()
                .map(|&j| match (key[i].assigned_gt, reference[j].assigned_gt) {
                    (Some(a), Some(b)) => a == b,
                    _ => false,
                })
                .collect()
        })
        .collect();

    let mut aux_pairs = Vec::new();
    let mut negative_pairs = Vec::new();
    for (i, row) in matches.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            if m {
                aux_pairs.push((i, j, true));
            } else {
                negative_pairs.push((i, j));
            }
        }
    }
    let wanted = (aux_pairs.len() * cfg.aux_negative_ratio).min(negative_pairs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.random());
    let mut picked = index::sample(&mut rng, negative_pairs.len(), wanted).into_vec();
    picked.sort_unstable();
    aux_pairs.extend(
        picked
            .into_iter()
            .map(|p| (negative_pairs[p].0, negative_pairs[p].1, false)),
    );

    PairBatch {
        key_samples,
        ref_samples,
        matches,
        aux_pairs,
    }
}

/// Uniform draw of a reference frame within `offsets` of `key`, clipped to
/// the sequence.
pub fn pick_reference_frame(key: usize, num_frames: usize, offsets: RangeInclusive<i64>, seed: u64) -> Result<usize> {
    if num_frames == 0 || key >= num_frames {
        return Err(Error::invalid(format!(
            "key frame {key} outside a {num_frames}-frame sequence"
        )));
    }
    let choices: Vec<usize> = offsets
        .filter_map(|k| {
            let f = key as i64 + k;
            (0..num_frames as i64).contains(&f).then_some(f as usize)
        })
        .collect();
    if choices.is_empty() {
        return Ok(key);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(choices[rng.random_range(0..choices.len())])
}
