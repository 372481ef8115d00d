//! Finite-difference and identity checks for the embedding losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::Embedding;
use crate::embedloss::{aux_loss, contrastive_loss, ContrastiveInstance, ContrastiveKind};
use crate::error::{Error, Result};

/// Denominator floor for relative errors.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Gaussian components with variance `1 / dim`, so norms are near 1.
pub fn random_embedding(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let sd = 1.0 / (dim as f64).sqrt();
    Embedding::new((0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Instance with Gaussian components; `dim` in 4..=64, 1..=4 positives and
/// 1..=8 negatives unless `positives` is given.
pub fn random_instance(rng: &mut ChaCha8Rng, positives: Option<usize>) -> ContrastiveInstance {
    let dim = rng.random_range(4..=64);
    let n_pos = positives.unwrap_or_else(|| rng.random_range(1..=4));
    let n_neg = rng.random_range(1..=8);
    let anchor = random_embedding(rng, dim);
    let pos = (0..n_pos).map(|_| random_embedding(rng, dim)).collect();
    let neg = (0..n_neg).map(|_| random_embedding(rng, dim)).collect();
    ContrastiveInstance::new(anchor, pos, neg)
}

/// `max|a - n| / max(max|a|, max|n|, ABSOLUTE_FLOOR)` over one gradient block.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(ABSOLUTE_FLOOR, f64::max);
    diff / scale
}

fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

fn central_difference(x: &mut Embedding, f: &mut dyn FnMut(&Embedding) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.dim());
    for c in 0..x.dim() {
        let orig = x[c];
        let h = step(orig);
        x[c] = orig + h;
        let up = f(x)?;
        x[c] = orig - h;
        let down = f(x)?;
        x[c] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Worst relative error between analytic and central-difference gradients
/// over the anchor, every positive and every negative.
pub fn contrastive_gradient_error(kind: ContrastiveKind, inst: &ContrastiveInstance, fault: f64) -> Result<f64> {
    let analytic = contrastive_loss(kind, inst)?;
    let mut work = inst.clone();
    let mut worst = 0.0f64;

    let numeric = central_difference(&mut work.anchor.clone(), &mut |a| {
        let probe = ContrastiveInstance::new(a.clone(), inst.positives.clone(), inst.negatives.clone());
        Ok(contrastive_loss(kind, &probe)?.value)
    })?;
    let grad: Vec<f64> = analytic
        .grad_anchor
        .as_slice()
        .iter()
        .map(|g| g * (1.0 + fault))
        .collect();
    worst = worst.max(relative_error(&grad, &numeric));

    for (p, g) in analytic.grad_positives.iter().enumerate() {
        let mut x = work.positives[p].clone();
        let numeric = central_difference(&mut x, &mut |k| {
            work.positives[p] = k.clone();
            Ok(contrastive_loss(kind, &work)?.value)
        })?;
        work.positives[p] = inst.positives[p].clone();
        worst = worst.max(relative_error(g.as_slice(), &numeric));
    }
    for (q, g) in analytic.grad_negatives.iter().enumerate() {
        let mut x = work.negatives[q].clone();
        let numeric = central_difference(&mut x, &mut |k| {
            work.negatives[q] = k.clone();
            Ok(contrastive_loss(kind, &work)?.value)
        })?;
        work.negatives[q] = inst.negatives[q].clone();
        worst = worst.max(relative_error(g.as_slice(), &numeric));
    }
    Ok(worst)
}

/// Worst relative gradient error of the aux loss for one pair.
pub fn aux_gradient_error(v: &Embedding, k: &Embedding, positive: bool) -> Result<f64> {
    let analytic = aux_loss(v, k, positive)?;
    let nv = central_difference(&mut v.clone(), &mut |x| Ok(aux_loss(x, k, positive)?.value))?;
    let nk = central_difference(&mut k.clone(), &mut |x| Ok(aux_loss(v, x, positive)?.value))?;
    Ok(relative_error(analytic.grad_v.as_slice(), &nv).max(relative_error(analytic.grad_k.as_slice(), &nk)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheckConfig {
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    /// Relative perturbation applied to analytic anchor gradients, to prove
    /// the harness catches a wrong gradient. Zero in normal runs.
    pub fault: f64,
}

impl Default for LossCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            tolerance: DEFAULT_TOLERANCE,
            fault: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckFailure {
    pub trial: usize,
    pub check: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCheckReport {
    pub trials: usize,
    pub max_gradient_error: f64,
    pub max_identity_gap: f64,
    pub failures: Vec<CheckFailure>,
}

impl LossCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every loss invariant on `trials` random instances:
/// gradients of all contrastive kinds and of the aux loss against central
/// differences, multi-positive equal to single-positive with one positive,
/// non-negative values, and multi-positive never above the naive sum.
pub fn loss_check(cfg: &LossCheckConfig) -> Result<LossCheckReport> {
    if cfg.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = LossCheckReport {
        trials: cfg.trials,
        ..Default::default()
    };
    let fail = |report: &mut LossCheckReport, trial, check, detail: String| {
        report.failures.push(CheckFailure { trial, check, detail });
    };
    for trial in 0..cfg.trials {
        let inst = random_instance(&mut rng, None);
        let describe = |i: &ContrastiveInstance| {
            format!(
                "dim {} positives {} negatives {} anchor[0..2] {:?}",
                i.anchor.dim(),
                i.positives.len(),
                i.negatives.len(),
                &i.anchor.as_slice()[..2]
            )
        };
        for kind in [ContrastiveKind::Multi, ContrastiveKind::Naive] {
            let err = contrastive_gradient_error(kind, &inst, cfg.fault)?;
            report.max_gradient_error = report.max_gradient_error.max(err);
            if err.is_nan() || err >= cfg.tolerance {
                fail(
                    &mut report,
                    trial,
                    kind.name(),
                    format!("gradient error {err:e}; {}", describe(&inst)),
                );
            }
        }
        let multi = contrastive_loss(ContrastiveKind::Multi, &inst)?.value;
        let naive = contrastive_loss(ContrastiveKind::Naive, &inst)?.value;
        if multi.is_nan() || multi < 0.0 || multi > naive + 1e-12 * naive.abs().max(1.0) {
            fail(
                &mut report,
                trial,
                "ordering",
                format!("multi {multi} naive {naive}; {}", describe(&inst)),
            );
        }

        let single_inst = ContrastiveInstance::new(
            inst.anchor.clone(),
            vec![inst.positives[0].clone()],
            inst.negatives.clone(),
        );
        let err = contrastive_gradient_error(ContrastiveKind::Single, &single_inst, cfg.fault)?;
        report.max_gradient_error = report.max_gradient_error.max(err);
        if err.is_nan() || err >= cfg.tolerance {
            fail(
                &mut report,
                trial,
                "single",
                format!("gradient error {err:e}; {}", describe(&single_inst)),
            );
        }
        let s = contrastive_loss(ContrastiveKind::Single, &single_inst)?.value;
        let m = contrastive_loss(ContrastiveKind::Multi, &single_inst)?.value;
        let gap = (s - m).abs();
        report.max_identity_gap = report.max_identity_gap.max(gap);
        if gap.is_nan() || gap >= IDENTITY_TOLERANCE {
            fail(
                &mut report,
                trial,
                "identity",
                format!("single {s} multi {m}; {}", describe(&single_inst)),
            );
        }

        for positive in [true, false] {
            let err = aux_gradient_error(&inst.anchor, &inst.positives[0], positive)?;
            report.max_gradient_error = report.max_gradient_error.max(err);
            if err.is_nan() || err >= cfg.tolerance {
                fail(
                    &mut report,
                    trial,
                    "aux",
                    format!("gradient error {err:e}; {}", describe(&inst)),
                );
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_losses_pass() {
        let report = loss_check(&LossCheckConfig {
            trials: 20,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        assert!(report.max_gradient_error < 1e-5);
        assert!(report.max_identity_gap < 1e-12);
    }

    #[test]
    fn injected_fault_is_caught() {
        let report = loss_check(&LossCheckConfig {
            trials: 3,
            fault: 1e-3,
            ..Default::default()
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert!(loss_check(&LossCheckConfig {
            trials: 0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn relative_error_uses_the_floor() {
        assert_eq!(relative_error(&[0.0], &[1e-10]), 1e-2);
        assert_eq!(relative_error(&[2.0], &[1.0]), 0.5);
    }
}
