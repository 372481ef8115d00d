//! Benchmark drivers: noisy and clean synthetic runs, oracle modes, learned
//! appearance and the ablation grid.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::association::SimilarityKind;
use crate::embedding::Embedding;
use crate::embedloss::ContrastiveKind;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, DEFAULT_IOU_GATE};
use crate::sampling::{Label, SamplingConfig};
use crate::synth::{
    corrupt, fit_embeddings, generate_scenario, ClutterEmbedding, FitConfig, FitResult, FramePairing, NoiseModel,
    ProposalSpec, Scenario, ScenarioSpec, SyntheticDetections, TrainingSet,
};
use crate::tracker::{run_sequence_with, TrackOutput, TrackerConfig};

/// Norm given to benchmark embeddings so raw-dot logits separate identities.
pub const BENCHMARK_EMBED_SCALE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub scenario: ScenarioSpec,
    pub noise: NoiseModel,
}

impl Benchmark {
    /// Ten identities alive for 200 frames, perfect boxes, near-exact latents.
    pub fn clean() -> Self {
        Self {
            scenario: ScenarioSpec {
                frames: 200,
                objects: 10,
                min_lifespan: 1.0,
                ..ScenarioSpec::default()
            },
            noise: NoiseModel {
                embed_sigma: 0.05,
                embed_scale: BENCHMARK_EMBED_SCALE,
                ..NoiseModel::default()
            },
        }
    }

    /// Misses, jitter, cross-class duplicates and appearance-matched clutter.
    pub fn standard() -> Self {
        Self {
            scenario: ScenarioSpec {
                frames: 200,
                objects: 10,
                dim: 64,
                ..ScenarioSpec::default()
            },
            noise: NoiseModel {
                miss_rate: 0.1,
                fp_rate: 1.0,
                jitter_sigma: 2.0,
                score_range_tp: (0.6, 1.0),
                score_range_fp: (0.3, 0.9),
                embed_sigma: 0.15,
                fp_embed_mode: ClutterEmbedding::NearObject,
                fp_embed_sigma: 0.3,
                embed_scale: BENCHMARK_EMBED_SCALE,
                dup_rate: 0.1,
            },
        }
    }

    /// Scenario and detections for one seed.
    pub fn simulate(&self, mode: RunMode, seed: u64) -> Result<(Scenario, SyntheticDetections)> {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let scn = generate_scenario(&self.scenario, seeds.random())?;
        let noise = match mode {
            RunMode::DetectionOracle => NoiseModel {
                miss_rate: 0.0,
                fp_rate: 0.0,
                jitter_sigma: 0.0,
                dup_rate: 0.0,
                ..self.noise.clone()
            },
            _ => self.noise.clone(),
        };
        let dets = corrupt(&scn, &noise, seeds.random())?;
        Ok((scn, dets))
    }
}

/// Which subsystem, if any, is replaced by ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RunMode {
    Normal,
    /// Ground-truth boxes with noisy latent embeddings.
    DetectionOracle,
    /// Noisy detections associated by ground-truth identity.
    TrackingOracle,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Normal => "default",
            RunMode::DetectionOracle => "detection",
            RunMode::TrackingOracle => "tracking",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" | "none" => Ok(RunMode::Normal),
            "detection" => Ok(RunMode::DetectionOracle),
            "tracking" => Ok(RunMode::TrackingOracle),
            other => Err(Error::invalid(format!("unknown oracle `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: EvalReport,
    /// Emitted track outputs whose detection is clutter or a duplicate.
    pub fp_associations: usize,
    pub outputs: usize,
}

/// Emitted outputs that came from a false-positive detection.
pub fn fp_associations(outputs: &[Vec<TrackOutput>], dets: &SyntheticDetections) -> usize {
    outputs
        .iter()
        .zip(&dets.sources)
        .map(|(outs, srcs)| outs.iter().filter(|o| srcs[o.index].is_false_positive()).count())
        .sum()
}

/// Tracks `dets` and scores the result against the scenario.
pub fn track_and_score(
    scn: &Scenario,
    dets: &SyntheticDetections,
    config: &TrackerConfig,
    mode: RunMode,
) -> Result<RunOutcome> {
    let mut cfg = config.clone();
    let labels = (mode == RunMode::TrackingOracle).then(|| dets.identity_labels());
    if labels.is_some() {
        cfg.identity_oracle = true;
    }
    let outputs = run_sequence_with(&cfg, &dets.frames, None, labels.as_deref())?;
    let pred: Vec<Vec<_>> = outputs
        .iter()
        .map(|f| {
            f.iter()
                .map(|o| crate::metrics::FrameObject::new(o.id, o.detection.category, o.detection.bbox))
                .collect()
        })
        .collect();
    let report = evaluate(&scn.ground_truth(), &pred, DEFAULT_IOU_GATE)?;
    Ok(RunOutcome {
        report,
        fp_associations: fp_associations(&outputs, dets),
        outputs: outputs.iter().map(Vec::len).sum(),
    })
}

pub fn run_benchmark(bench: &Benchmark, config: &TrackerConfig, mode: RunMode, seed: u64) -> Result<RunOutcome> {
    let (scn, dets) = bench.simulate(mode, seed)?;
    track_and_score(&scn, &dets, config, mode)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

/// Scenario, noise and trainer settings for runs whose appearance comes
/// from fitted vectors rather than latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedBenchmark {
    pub base: Benchmark,
    /// Leading frames used to build training proposals.
    pub train_frames: usize,
    pub proposals: ProposalSpec,
    pub sampling: SamplingConfig,
    pub pairing: FramePairing,
    pub fit: FitConfig,
    /// Detections whose embedding has a lower cosine than this with every
    /// latent are treated as unidentified.
    pub identity_min_cosine: f64,
    /// Train the single-positive kind on ground-truth boxes only.
    pub sparse_single: bool,
}

impl Default for LearnedBenchmark {
    fn default() -> Self {
        let mut base = Benchmark::standard();
        base.scenario.objects = 8;
        base.scenario.frames = 100;
        base.scenario.min_lifespan = 1.0;
        Self {
            base,
            train_frames: 4,
            proposals: ProposalSpec::default(),
            sampling: SamplingConfig::default(),
            pairing: FramePairing::Exhaustive,
            fit: FitConfig::default(),
            identity_min_cosine: 0.5,
            sparse_single: true,
        }
    }
}

impl LearnedBenchmark {
    /// A small variant for smoke tests.
    pub fn tiny() -> Self {
        let mut b = Self::default();
        b.base.scenario.objects = 3;
        b.base.scenario.frames = 20;
        b.train_frames = 2;
        b.fit.steps = 20;
        b
    }
}

/// Fitted vectors grouped by the identity of their proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedAppearance {
    pub by_identity: BTreeMap<u32, Vec<Embedding>>,
    /// Vectors of negative (background) proposals.
    pub background: Vec<Embedding>,
    pub min_cosine: f64,
    /// Norm of the embeddings handed to the tracker.
    pub scale: f64,
    pub fit: FitResult,
}

/// Fits free vectors on the scenario's leading frames.
pub fn learn_appearance(
    scn: &Scenario,
    bench: &LearnedBenchmark,
    kind: ContrastiveKind,
    seed: u64,
) -> Result<LearnedAppearance> {
    let frames = 0..bench.train_frames.min(scn.frames);
    let sparse = ProposalSpec::sparse();
    let proposals = if bench.sparse_single && kind == ContrastiveKind::Single {
        &sparse
    } else {
        &bench.proposals
    };
    let set = TrainingSet::from_scenario(scn, frames, proposals, &bench.sampling, bench.pairing, seed)?;
    let cfg = FitConfig {
        kind,
        seed,
        ..bench.fit.clone()
    };
    let fit = fit_embeddings(&set, &cfg)?;
    let mut by_identity: BTreeMap<u32, Vec<Embedding>> = BTreeMap::new();
    let mut background = Vec::new();
    for (slot, v) in fit.vectors.iter().enumerate() {
        if let Some(id) = set.identity_of_slot(slot) {
            by_identity.entry(id).or_default().push(v.clone());
        } else if set.proposal_at(slot).label == Label::Negative {
            background.push(v.clone());
        }
    }
    if by_identity.is_empty() {
        return Err(Error::Empty("positive training proposals"));
    }
    Ok(LearnedAppearance {
        by_identity,
        background,
        min_cosine: bench.identity_min_cosine,
        scale: bench.base.noise.embed_scale,
        fit,
    })
}

impl LearnedAppearance {
    /// Replaces every detection embedding with a fitted vector drawn from
    /// the identity whose latent is nearest to the detection's embedding,
    /// rescaled to norm `scale`. When that nearest latent is less similar
    /// than `min_cosine`, the vector comes from the background pool instead.
    pub fn apply(&self, scn: &Scenario, dets: &SyntheticDetections, seed: u64) -> Result<SyntheticDetections> {
        let candidates: Vec<(u32, &Embedding)> = scn
            .objects
            .iter()
            .filter(|o| self.by_identity.contains_key(&o.identity))
            .map(|o| (o.identity, &o.latent))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = dets.clone();
        for frame in out.frames.iter_mut() {
            for (k, d) in frame.iter_mut().enumerate() {
                let e = d.embedding.as_ref().ok_or(Error::MissingEmbedding { index: k })?;
                let mut best: Option<(u32, f64)> = None;
                for &(id, latent) in &candidates {
                    let s = e.cosine(latent)?;
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((id, s));
                    }
                }
                let (id, cos) = best.ok_or(Error::Empty("identities with fitted vectors"))?;
                let pool = if cos < self.min_cosine && !self.background.is_empty() {
                    &self.background
                } else {
                    &self.by_identity[&id]
                };
                let v = &pool[rng.random_range(0..pool.len())];
                d.embedding = Some(v.normalized()?.scaled(self.scale));
            }
        }
        Ok(out)
    }
}

/// One configuration of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AblationCell {
    pub kind: ContrastiveKind,
    pub similarity: SimilarityKind,
    pub backdrops: bool,
    pub dedup: bool,
}

impl AblationCell {
    pub fn tracker_config(&self, base: &TrackerConfig) -> TrackerConfig {
        TrackerConfig {
            similarity: self.similarity,
            use_backdrops: self.backdrops,
            inter_class_dedup: self.dedup,
            ..base.clone()
        }
    }
}

/// Every loss × similarity × backdrops × dedup combination, in output order.
pub fn ablation_cells() -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for kind in ContrastiveKind::ALL {
        for similarity in [SimilarityKind::Cosine, SimilarityKind::BiSoftmax] {
            for backdrops in [false, true] {
                for dedup in [false, true] {
                    cells.push(AblationCell {
                        kind,
                        similarity,
                        backdrops,
                        dedup,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub mota: f64,
    pub idf1: f64,
    pub fp_associations: usize,
}

impl SeedResult {
    fn from_outcome(seed: u64, o: &RunOutcome) -> Self {
        Self {
            seed,
            mota: o.report.mota(),
            idf1: o.report.idf1(),
            fp_associations: o.fp_associations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSummary {
    pub mota: Summary,
    pub idf1: Summary,
    pub fp_associations: Summary,
    pub runs: Vec<SeedResult>,
}

impl RowSummary {
    pub fn from_runs(runs: Vec<SeedResult>) -> Self {
        let pick = |f: fn(&SeedResult) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            mota: pick(|r| r.mota),
            idf1: pick(|r| r.idf1),
            fp_associations: pick(|r| r.fp_associations as f64),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub summary: RowSummary,
}

/// Runs the full grid on every seed. Seeds run in parallel; rows come back
/// in [`ablation_cells`] order with runs in seed order.
pub fn run_ablation(bench: &LearnedBenchmark, base: &TrackerConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let cells = ablation_cells();
    let per_seed: Vec<Vec<SeedResult>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SeedResult>> {
            let (scn, dets) = bench.base.simulate(RunMode::Normal, seed)?;
            let mut learned = BTreeMap::new();
            for kind in ContrastiveKind::ALL {
                let app = learn_appearance(&scn, bench, kind, seed)?;
                learned.insert(kind, app.apply(&scn, &dets, seed)?);
            }
            cells
                .iter()
                .map(|cell| {
                    let o = track_and_score(&scn, &learned[&cell.kind], &cell.tracker_config(base), RunMode::Normal)?;
                    Ok(SeedResult::from_outcome(seed, &o))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &cell)| AblationRow {
            cell,
            summary: RowSummary::from_runs(per_seed.iter().map(|runs| runs[c]).collect()),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub mode: RunMode,
    pub summary: RowSummary,
}

/// Latent-appearance runs in each requested mode, seeds in parallel.
pub fn run_oracles(
    bench: &Benchmark,
    config: &TrackerConfig,
    modes: &[RunMode],
    seeds: &[u64],
) -> Result<Vec<OracleRow>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    modes
        .iter()
        .map(|&mode| {
            let runs = seeds
                .par_iter()
                .map(|&seed| {
                    Ok(SeedResult::from_outcome(
                        seed,
                        &run_benchmark(bench, config, mode, seed)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(OracleRow {
                mode,
                summary: RowSummary::from_runs(runs),
            })
        })
        .collect()
}
