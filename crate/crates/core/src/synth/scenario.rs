use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::metrics::FrameObject;

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub frames: usize,
    pub width: f64,
    pub height: f64,
    pub objects: usize,
    pub categories: u32,
    pub dim: usize,
    /// Box width range in pixels.
    pub min_size: f64,
    pub max_size: f64,
    /// Height-to-width ratio range.
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Per-axis speed bound in pixels per frame.
    pub max_speed: f64,
    /// Shortest lifespan as a fraction of the sequence; 1 keeps every
    /// object alive throughout.
    pub min_lifespan: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            frames: 100,
            width: 1280.0,
            height: 720.0,
            objects: 10,
            categories: 2,
            dim: 32,
            min_size: 30.0,
            max_size: 90.0,
            min_aspect: 1.0,
            max_aspect: 2.5,
            max_speed: 6.0,
            min_lifespan: 0.5,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("scenario needs at least one frame"));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invalid(format!(
                "image size {}x{} must be positive",
                self.width, self.height
            )));
        }
        if self.dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if self.categories == 0 {
            return Err(Error::invalid("need at least one category"));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return Err(Error::invalid("box sizes need 0 < min_size <= max_size"));
        }
        if !(self.min_aspect > 0.0 && self.min_aspect <= self.max_aspect) {
            return Err(Error::invalid("aspect ratios need 0 < min_aspect <= max_aspect"));
        }
        if self.max_size > self.width || self.max_size * self.max_aspect > self.height {
            return Err(Error::invalid("largest box does not fit inside the image"));
        }
        if self.max_speed.is_nan() || self.max_speed < 0.0 {
            return Err(Error::invalid("max_speed must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.min_lifespan) {
            return Err(Error::invalid("min_lifespan must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioObject {
    /// 1-based, unique within the scenario.
    pub identity: u32,
    pub category: u32,
    /// Box per frame, `None` outside the object's lifespan.
    pub boxes: Vec<Option<BoundingBox>>,
    /// Unit-norm appearance latent.
    pub latent: Embedding,
}

/// Ground-truth trajectories with appearance latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub frames: usize,
    pub width: f64,
    pub height: f64,
    pub categories: u32,
    pub dim: usize,
    pub size_range: (f64, f64),
    pub aspect_range: (f64, f64),
    pub objects: Vec<ScenarioObject>,
}

impl Scenario {
    /// `(box, identity, category)` for every object visible in frame `f` (0-based).
    pub fn frame_truth(&self, f: usize) -> Vec<(BoundingBox, u32, u32)> {
        self.objects
            .iter()
            .filter_map(|o| o.boxes[f].map(|b| (b, o.identity, o.category)))
            .collect()
    }

    /// Per-frame ground truth in evaluation form.
    pub fn ground_truth(&self) -> Vec<Vec<FrameObject>> {
        (0..self.frames)
            .map(|f| {
                self.frame_truth(f)
                    .into_iter()
                    .map(|(b, id, c)| FrameObject::new(u64::from(id), c, b))
                    .collect()
            })
            .collect()
    }

    pub fn latent_of(&self, identity: u32) -> Option<&Embedding> {
        self.objects.iter().find(|o| o.identity == identity).map(|o| &o.latent)
    }
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v = Embedding::new((0..dim).map(|_| rng.sample(StandardNormal)).collect());
        if let Ok(u) = v.normalized() {
            return u;
        }
    }
}

/// Reflects a coordinate back into `[0, limit]`, flipping velocity on a bounce.
fn reflect(pos: &mut f64, vel: &mut f64, limit: f64) {
    if limit <= 0.0 {
        *pos = 0.0;
        return;
    }
    for _ in 0..4 {
        if *pos < 0.0 {
            *pos = -*pos;
            *vel = -*vel;
        } else if *pos > limit {
            *pos = 2.0 * limit - *pos;
            *vel = -*vel;
        } else {
            return;
        }
    }
    *pos = pos.clamp(0.0, limit);
}

/// Constant-velocity objects bouncing off the image borders.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::with_capacity(spec.objects);
    for k in 0..spec.objects {
        let w = rng.random_range(spec.min_size..=spec.max_size);
        let h = w * rng.random_range(spec.min_aspect..=spec.max_aspect);
        let (lim_x, lim_y) = (spec.width - w, spec.height - h);
        let mut x = rng.random_range(0.0..=lim_x);
        let mut y = rng.random_range(0.0..=lim_y);
        let mut vx = rng.random_range(-spec.max_speed..=spec.max_speed);
        let mut vy = rng.random_range(-spec.max_speed..=spec.max_speed);
        let min_len = ((spec.min_lifespan * spec.frames as f64).ceil() as usize).clamp(1, spec.frames);
        let len = rng.random_range(min_len..=spec.frames);
        let start = rng.random_range(0..=spec.frames - len);
        let category = rng.random_range(0..spec.categories);
        let latent = random_unit(&mut rng, spec.dim);

        let mut boxes = vec![None; spec.frames];
        for slot in boxes.iter_mut().skip(start).take(len) {
            *slot = Some(BoundingBox { x, y, w, h });
            x += vx;
            y += vy;
            reflect(&mut x, &mut vx, lim_x);
            reflect(&mut y, &mut vy, lim_y);
        }
        objects.push(ScenarioObject {
            identity: k as u32 + 1,
            category,
            boxes,
            latent,
        });
    }
    Ok(Scenario {
        frames: spec.frames,
        width: spec.width,
        height: spec.height,
        categories: spec.categories,
        dim: spec.dim,
        size_range: (spec.min_size, spec.max_size),
        aspect_range: (spec.min_aspect, spec.max_aspect),
        objects,
    })
}
