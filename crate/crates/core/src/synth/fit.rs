use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::proposals::{generate_proposals, ProposalSpec};
use super::scenario::Scenario;
use crate::embedding::Embedding;
use crate::embedloss::{batch_embedding_objective, AuxPair, ContrastiveKind, IndexedInstance, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::sampling::{
    assign_labels, build_pair_batch, pick_reference_frame, Label, PairBatch, Proposal, SamplingConfig,
};

/// How key frames are paired with reference frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FramePairing {
    /// One uniformly drawn reference per key frame.
    #[default]
    Sampled,
    /// Every other frame within the offsets (the key itself for a
    /// single-frame set).
    Exhaustive,
}

/// Key/reference frame pair with its sampled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePairBatch {
    pub key_frame: usize,
    pub ref_frame: usize,
    pub batch: PairBatch,
}

/// Labeled proposals for a set of frames plus the pair batches drawn from
/// them. Every proposal owns one slot in a flat vector table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub frames: Vec<Vec<Proposal>>,
    pub batches: Vec<FramePairBatch>,
    offsets: Vec<usize>,
}

impl TrainingSet {
    pub fn new(frames: Vec<Vec<Proposal>>, batches: Vec<FramePairBatch>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(frames.len());
        let mut total = 0;
        for f in &frames {
            offsets.push(total);
            total += f.len();
        }
        for b in &batches {
            if b.key_frame >= frames.len() || b.ref_frame >= frames.len() {
                return Err(Error::invalid(format!(
                    "batch frames ({}, {}) outside {} frames",
                    b.key_frame,
                    b.ref_frame,
                    frames.len()
                )));
            }
            let key_ok = b.batch.key_samples.iter().all(|&i| i < frames[b.key_frame].len());
            let ref_ok = b.batch.ref_samples.iter().all(|&j| j < frames[b.ref_frame].len());
            if !key_ok || !ref_ok {
                return Err(Error::invalid("batch samples index past the frame's proposals"));
            }
        }
        Ok(Self {
            frames,
            batches,
            offsets,
        })
    }

    /// Proposals and labels for `frames` of the scenario, with pair batches
    /// chosen by `pairing` (reference frames stay within the configured
    /// offsets).
    pub fn from_scenario(
        scn: &Scenario,
        frames: std::ops::Range<usize>,
        spec: &ProposalSpec,
        sampling: &SamplingConfig,
        pairing: FramePairing,
        seed: u64,
    ) -> Result<Self> {
        if frames.end > scn.frames || frames.is_empty() {
            return Err(Error::invalid(format!(
                "frame range {frames:?} not inside a {}-frame scenario",
                scn.frames
            )));
        }
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let mut labeled = Vec::with_capacity(frames.len());
        for f in frames.clone() {
            let gts: Vec<_> = scn.frame_truth(f).into_iter().map(|(b, id, _)| (b, id)).collect();
            let boxes = generate_proposals(&gts, spec, (scn.width, scn.height), seeds.random())?;
            labeled.push(assign_labels(
                &boxes,
                &gts,
                sampling.positive_iou,
                sampling.negative_iou,
            )?);
        }
        let n = labeled.len();
        let mut pairs = Vec::new();
        for key in 0..n {
            match pairing {
                FramePairing::Sampled => {
                    pairs.push((
                        key,
                        pick_reference_frame(key, n, sampling.frame_offsets.clone(), seeds.random())?,
                    ));
                }
                FramePairing::Exhaustive => {
                    for k in sampling.frame_offsets.clone().filter(|&k| k != 0) {
                        let r = key as i64 + k;
                        if (0..n as i64).contains(&r) {
                            pairs.push((key, r as usize));
                        }
                    }
                    if n == 1 {
                        pairs.push((key, key));
                    }
                }
            }
        }
        let batches = pairs
            .into_iter()
            .map(|(key, reference)| FramePairBatch {
                key_frame: key,
                ref_frame: reference,
                batch: build_pair_batch(&labeled[key], &labeled[reference], sampling, seeds.random()),
            })
            .collect();
        Self::new(labeled, batches)
    }

    pub fn num_vectors(&self) -> usize {
        self.offsets
            .last()
            .map_or(0, |o| o + self.frames.last().map_or(0, Vec::len))
    }

    /// Table slot of proposal `index` in frame `frame`.
    pub fn slot(&self, frame: usize, index: usize) -> usize {
        self.offsets[frame] + index
    }

    /// Proposal owning a table slot.
    pub fn proposal_at(&self, slot: usize) -> &Proposal {
        let frame = self.offsets.partition_point(|&o| o <= slot) - 1;
        &self.frames[frame][slot - self.offsets[frame]]
    }

    /// Identity of a table slot, when the proposal is a positive.
    pub fn identity_of_slot(&self, slot: usize) -> Option<u32> {
        let p = self.proposal_at(slot);
        (p.label == Label::Positive).then_some(p.assigned_gt).flatten()
    }

    /// Every batch's instances and aux pairs, re-indexed onto the table.
    pub fn objective_terms(&self, kind: ContrastiveKind) -> (Vec<IndexedInstance>, Vec<AuxPair>) {
        let mut instances = Vec::new();
        let mut aux = Vec::new();
        for fb in &self.batches {
            let b = &fb.batch;
            let v = b.key_samples.len();
            let map = |pos: usize| {
                if pos < v {
                    self.slot(fb.key_frame, b.key_samples[pos])
                } else {
                    self.slot(fb.ref_frame, b.ref_samples[pos - v])
                }
            };
            for inst in b.instances(&self.frames[fb.ref_frame], kind) {
                instances.push(IndexedInstance {
                    anchor: map(inst.anchor),
                    positives: inst.positives.into_iter().map(map).collect(),
                    negatives: inst.negatives.into_iter().map(map).collect(),
                });
            }
            for &(i, j, positive) in &b.aux_pairs {
                aux.push(AuxPair {
                    a: map(i),
                    b: map(v + j),
                    positive,
                });
            }
        }
        (instances, aux)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub kind: ContrastiveKind,
    pub steps: usize,
    pub lr: f64,
    pub dim: usize,
    /// Standard deviation of the Gaussian initial components.
    pub init_sigma: f64,
    pub weights: ObjectiveWeights,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: ContrastiveKind::Multi,
            steps: 500,
            lr: 1.0,
            dim: 16,
            init_sigma: 0.1,
            weights: ObjectiveWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// One vector per table slot; see [`TrainingSet::slot`].
    pub vectors: Vec<Embedding>,
    /// Objective before each update, followed by the final value.
    pub loss_trajectory: Vec<f64>,
}

/// Plain full-batch gradient descent on free per-proposal vectors.
pub fn fit_embeddings(set: &TrainingSet, cfg: &FitConfig) -> Result<FitResult> {
    if cfg.steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate {} must be finite and non-negative",
            cfg.lr
        )));
    }
    if cfg.dim == 0 || cfg.init_sigma.is_nan() || cfg.init_sigma <= 0.0 {
        return Err(Error::invalid("dim and init_sigma must be positive"));
    }
    let (instances, aux) = set.objective_terms(cfg.kind);
    if instances.is_empty() {
        return Err(Error::Empty("training instances (no key proposal has a positive)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vectors: Vec<Embedding> = (0..set.num_vectors())
        .map(|_| {
            Embedding::new(
                (0..cfg.dim)
                    .map(|_| cfg.init_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        })
        .collect();

    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let loss =
            batch_embedding_objective(&vectors, &instances, &aux, cfg.weights, cfg.kind).map_err(|e| match e {
                Error::ZeroNorm => Error::Diverged { step },
                other => other,
            })?;
        if !loss.value.is_finite() {
            return Err(Error::Diverged { step });
        }
        trajectory.push(loss.value);
        if step == cfg.steps {
            break;
        }
        for (v, g) in vectors.iter_mut().zip(&loss.grads) {
            v.add_scaled(-cfg.lr, g);
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: step + 1 });
        }
    }
    Ok(FitResult {
        vectors,
        loss_trajectory: trajectory,
    })
}

/// Mean cosine over same-identity and different-identity pairs of positive
/// proposals, as `(intra, inter)`.
pub fn identity_cosines(set: &TrainingSet, vectors: &[Embedding]) -> Result<(f64, f64)> {
    let labeled: Vec<(u32, &Embedding)> = (0..vectors.len())
        .filter_map(|s| set.identity_of_slot(s).map(|id| (id, &vectors[s])))
        .collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for (a, (ia, va)) in labeled.iter().enumerate() {
        for (ib, vb) in &labeled[a + 1..] {
            let c = va.cosine(vb)?;
            if ia == ib {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(Error::Empty("identity pairs"));
    }
    Ok((intra / n_intra as f64, inter / n_inter as f64))
}
