use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Proposal counts and perturbation magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    /// Tightly perturbed copies per ground-truth box.
    pub positives_per_gt: usize,
    /// Moderately shifted copies per ground-truth box.
    pub ignored_per_gt: usize,
    /// Uniform boxes anywhere in the image.
    pub background: usize,
    /// Largest tight shift, as a fraction of box size.
    pub tight_shift: f64,
    /// Moderate shift range, as a fraction of box size.
    pub moderate_shift: (f64, f64),
    /// Side length range for background boxes.
    pub background_size: (f64, f64),
}

impl Default for ProposalSpec {
    fn default() -> Self {
        Self {
            positives_per_gt: 6,
            ignored_per_gt: 3,
            background: 24,
            tight_shift: 0.04,
            moderate_shift: (0.15, 0.3),
            background_size: (20.0, 120.0),
        }
    }
}

impl ProposalSpec {
    /// Ground-truth boxes only: one unshifted copy each, no background.
    pub fn sparse() -> Self {
        Self {
            positives_per_gt: 1,
            ignored_per_gt: 0,
            background: 0,
            tight_shift: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.moderate_shift;
        if !(self.tight_shift >= 0.0 && lo >= 0.0 && lo <= hi) {
            return Err(Error::invalid("proposal shifts need 0 <= tight and 0 <= lo <= hi"));
        }
        let (s_lo, s_hi) = self.background_size;
        if !(s_lo >= 1.0 && s_lo <= s_hi) {
            return Err(Error::invalid("background sizes need 1 <= lo <= hi"));
        }
        Ok(())
    }
}

fn clamp_box(x1: f64, y1: f64, x2: f64, y2: f64, (w, h): (f64, f64)) -> Option<BoundingBox> {
    BoundingBox::from_corners(x1.clamp(0.0, w), y1.clamp(0.0, h), x2.clamp(0.0, w), y2.clamp(0.0, h))
}

fn perturb(rng: &mut ChaCha8Rng, b: &BoundingBox, shift: (f64, f64), image: (f64, f64)) -> BoundingBox {
    let mut draw = |scale: f64| {
        let mag = if shift.1 > shift.0 {
            rng.random_range(shift.0..=shift.1)
        } else {
            shift.0
        };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * mag * scale
    };
    let dx = draw(b.w);
    let dy = draw(b.h);
    let dw = draw(b.w) * 0.5;
    let dh = draw(b.h) * 0.5;
    let x1 = b.x + dx - dw / 2.0;
    let y1 = b.y + dy - dh / 2.0;
    clamp_box(x1, y1, x1 + b.w + dw, y1 + b.h + dh, image).unwrap_or(*b)
}

/// Region proposals for one frame.
///
/// Output order: per ground truth, its tight copies then its moderate
/// copies; background boxes last.
pub fn generate_proposals(
    frame_gts: &[(BoundingBox, u32)],
    spec: &ProposalSpec,
    image: (f64, f64),
    seed: u64,
) -> Result<Vec<BoundingBox>> {
    spec.validate()?;
    if !(image.0 >= 1.0 && image.1 >= 1.0) {
        return Err(Error::invalid(format!("image size {}x{} too small", image.0, image.1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frame_gts.len() * (spec.positives_per_gt + spec.ignored_per_gt) + spec.background);
    for (b, _) in frame_gts {
        for _ in 0..spec.positives_per_gt {
            out.push(perturb(&mut rng, b, (0.0, spec.tight_shift), image));
        }
        for _ in 0..spec.ignored_per_gt {
            out.push(perturb(&mut rng, b, spec.moderate_shift, image));
        }
    }
    let (s_lo, s_hi) = spec.background_size;
    for _ in 0..spec.background {
        let w = rng.random_range(s_lo..=s_hi).min(image.0);
        let h = rng.random_range(s_lo..=s_hi).min(image.1);
        let x = rng.random_range(0.0..=image.0 - w);
        let y = rng.random_range(0.0..=image.1 - h);
        out.push(BoundingBox { x, y, w, h });
    }
    Ok(out)
}
