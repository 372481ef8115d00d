use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenario::{random_unit, Scenario};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};

/// Appearance of injected false positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClutterEmbedding {
    /// Fresh random direction.
    #[default]
    Random,
    /// A live object's latent plus extra noise, carrying that object's category.
    NearObject,
}

impl std::str::FromStr for ClutterEmbedding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "near-object" => Ok(Self::NearObject),
            other => Err(Error::invalid(format!("unknown clutter embedding mode `{other}`"))),
        }
    }
}

/// Detector imperfections applied to ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Probability a ground-truth box is not detected.
    pub miss_rate: f64,
    /// Mean number of false positives per frame (Poisson).
    pub fp_rate: f64,
    /// Gaussian corner jitter in pixels.
    pub jitter_sigma: f64,
    pub score_range_tp: (f64, f64),
    pub score_range_fp: (f64, f64),
    /// Per-component Gaussian noise on true-detection embeddings before
    /// normalisation.
    pub embed_sigma: f64,
    pub fp_embed_mode: ClutterEmbedding,
    /// Per-component noise for near-object clutter embeddings.
    pub fp_embed_sigma: f64,
    /// Norm of every emitted embedding.
    pub embed_scale: f64,
    /// Probability a detected object also yields a same-place detection of
    /// another category.
    pub dup_rate: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            miss_rate: 0.0,
            fp_rate: 0.0,
            jitter_sigma: 0.0,
            score_range_tp: (0.9, 0.9),
            score_range_fp: (0.5, 0.5),
            embed_sigma: 0.0,
            fp_embed_mode: ClutterEmbedding::Random,
            fp_embed_sigma: 0.0,
            embed_scale: 1.0,
            dup_rate: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        let range = |(lo, hi): (f64, f64)| prob(lo) && prob(hi) && lo <= hi;
        if !prob(self.miss_rate) || !prob(self.dup_rate) {
            return Err(Error::invalid("miss_rate and dup_rate must lie in [0, 1]"));
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return Err(Error::invalid("fp_rate must be a finite non-negative rate"));
        }
        if !(self.jitter_sigma >= 0.0 && self.embed_sigma >= 0.0 && self.fp_embed_sigma >= 0.0) {
            return Err(Error::invalid("noise sigmas must be non-negative"));
        }
        if !range(self.score_range_tp) || !range(self.score_range_fp) {
            return Err(Error::invalid("score ranges need 0 <= lo <= hi <= 1"));
        }
        if !(self.embed_scale > 0.0 && self.embed_scale.is_finite()) {
            return Err(Error::invalid("embed_scale must be positive"));
        }
        Ok(())
    }
}

/// Where a synthetic detection came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Object(u32),
    /// Cross-category duplicate of an object detection.
    Duplicate(u32),
    Clutter,
}

impl Source {
    /// Ground-truth identity for a true detection.
    pub fn identity(self) -> Option<u32> {
        match self {
            Source::Object(id) => Some(id),
            _ => None,
        }
    }

    pub fn is_false_positive(self) -> bool {
        !matches!(self, Source::Object(_))
    }
}

/// Per-frame detections with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDetections {
    pub frames: Vec<Vec<Detection>>,
    pub sources: Vec<Vec<Source>>,
}

impl SyntheticDetections {
    /// Identity labels per detection, as consumed by the identity oracle.
    pub fn identity_labels(&self) -> Vec<Vec<Option<u32>>> {
        self.sources
            .iter()
            .map(|f| f.iter().map(|s| s.identity()).collect())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn noisy_embedding(rng: &mut ChaCha8Rng, latent: &Embedding, sigma: f64, scale: f64) -> Embedding {
    if sigma == 0.0 {
        return latent.normalized().unwrap_or_else(|_| latent.clone()).scaled(scale);
    }
    let noisy = Embedding::new(
        latent
            .as_slice()
            .iter()
            .map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    );
    noisy.normalized().unwrap_or_else(|_| latent.clone()).scaled(scale)
}

fn jitter(rng: &mut ChaCha8Rng, b: &BoundingBox, sigma: f64, width: f64, height: f64) -> BoundingBox {
    if sigma == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    let mut c = [b.x, b.y, b.right(), b.bottom()];
    for v in &mut c {
        *v += n.sample(rng);
    }
    let x1 = c[0].clamp(0.0, width);
    let y1 = c[1].clamp(0.0, height);
    let x2 = c[2].clamp(0.0, width);
    let y2 = c[3].clamp(0.0, height);
    match BoundingBox::from_corners(x1, y1, x2, y2) {
        Some(j) if j.w >= 1.0 && j.h >= 1.0 => j,
        _ => *b,
    }
}

/// Turns ground truth into detector output.
///
/// Each visible object is missed with `miss_rate`; otherwise it yields a
/// jittered box with a noisy copy of its latent. Optionally a duplicate of
/// another category is emitted at the same place. Every frame then receives
/// `Poisson(fp_rate)` clutter detections at random positions.
pub fn corrupt(scn: &Scenario, noise: &NoiseModel, seed: u64) -> Result<SyntheticDetections> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = (noise.fp_rate > 0.0)
        .then(|| Poisson::new(noise.fp_rate).map_err(|e| Error::invalid(e.to_string())))
        .transpose()?;
    let (w_img, h_img) = (scn.width, scn.height);
    let mut frames = Vec::with_capacity(scn.frames);
    let mut sources = Vec::with_capacity(scn.frames);

    for f in 0..scn.frames {
        let mut dets = Vec::new();
        let mut src = Vec::new();
        let live: Vec<usize> = (0..scn.objects.len())
            .filter(|&k| scn.objects[k].boxes[f].is_some())
            .collect();
        for &k in &live {
            let obj = &scn.objects[k];
            let b = obj.boxes[f].expect("live");
            if rng.random_bool(noise.miss_rate) {
                continue;
            }
            let bbox = jitter(&mut rng, &b, noise.jitter_sigma, w_img, h_img);
            let score = uniform(&mut rng, noise.score_range_tp);
            let emb = noisy_embedding(&mut rng, &obj.latent, noise.embed_sigma, noise.embed_scale);
            dets.push(Detection::new(bbox, score, obj.category).with_embedding(emb));
            src.push(Source::Object(obj.identity));

            if scn.categories > 1 && noise.dup_rate > 0.0 && rng.random_bool(noise.dup_rate) {
                let shift = rng.random_range(1..scn.categories);
                let category = (obj.category + shift) % scn.categories;
                let dup_box = jitter(&mut rng, &bbox, noise.jitter_sigma.max(1.0), w_img, h_img);
                let dup_score = score * rng.random_range(0.6..=1.0);
                let dup_emb = noisy_embedding(&mut rng, &obj.latent, noise.embed_sigma, noise.embed_scale);
                dets.push(Detection::new(dup_box, dup_score, category).with_embedding(dup_emb));
                src.push(Source::Duplicate(obj.identity));
            }
        }

        let n_fp = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_fp {
            let (sw, sh) = (scn.size_range, scn.aspect_range);
            let w = uniform(&mut rng, sw).min(w_img);
            let h = (w * uniform(&mut rng, sh)).min(h_img);
            let x = uniform(&mut rng, (0.0, w_img - w));
            let y = uniform(&mut rng, (0.0, h_img - h));
            let bbox = BoundingBox { x, y, w, h };
            let score = uniform(&mut rng, noise.score_range_fp);
            let (category, emb) = match noise.fp_embed_mode {
                ClutterEmbedding::NearObject if !live.is_empty() => {
                    let obj = &scn.objects[live[rng.random_range(0..live.len())]];
                    let e = noisy_embedding(&mut rng, &obj.latent, noise.fp_embed_sigma, noise.embed_scale);
                    (obj.category, e)
                }
                _ => {
                    let c = rng.random_range(0..scn.categories);
                    (c, random_unit(&mut rng, scn.dim).scaled(noise.embed_scale))
                }
            };
            dets.push(Detection::new(bbox, score, category).with_embedding(emb));
            src.push(Source::Clutter);
        }
        frames.push(dets);
        sources.push(src);
    }
    Ok(SyntheticDetections { frames, sources })
}
