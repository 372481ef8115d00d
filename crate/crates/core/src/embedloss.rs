//! Contrastive embedding objectives and their analytic gradients.
//!
//! All contrastive forms work on raw dot products `v·k`. Every
//! `log(1 + Σ exp(·))` is evaluated as a log-sum-exp with the implicit `1`
//! entered as an `exp(0)` logit, so logits in the thousands stay finite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dim, dot, Embedding};
use crate::error::{Error, Result};

/// Weight on the contrastive term of the combined objective.
pub const DEFAULT_CONTRASTIVE_WEIGHT: f64 = 0.25;
/// Weight on the cosine regression term of the combined objective.
pub const DEFAULT_AUX_WEIGHT: f64 = 1.0;

/// An anchor with its positive and negative targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveInstance {
    pub anchor: Embedding,
    pub positives: Vec<Embedding>,
    pub negatives: Vec<Embedding>,
}

/// Loss value plus the gradient with respect to every input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_anchor: Embedding,
    pub grad_positives: Vec<Embedding>,
    pub grad_negatives: Vec<Embedding>,
}

/// Cosine regression loss for one pair, with gradients for both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_v: Embedding,
    pub grad_k: Embedding,
}

/// Which contrastive formulation to optimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ContrastiveKind {
    /// One positive against all negatives (softmax cross-entropy).
    Single,
    /// Sum of single-positive terms, one per positive.
    Naive,
    /// All positive/negative logit gaps inside one log-sum-exp.
    Multi,
}

impl ContrastiveKind {
    pub const ALL: [ContrastiveKind; 3] = [ContrastiveKind::Single, ContrastiveKind::Naive, ContrastiveKind::Multi];

    pub fn name(self) -> &'static str {
        match self {
            ContrastiveKind::Single => "single",
            ContrastiveKind::Naive => "naive",
            ContrastiveKind::Multi => "multi",
        }
    }
}

impl std::str::FromStr for ContrastiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "naive" => Ok(Self::Naive),
            "multi" => Ok(Self::Multi),
            other => Err(Error::invalid(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Value and logit gradients of a contrastive loss given the positive and
/// negative logits of a single anchor.
#[derive(Debug, Clone)]
pub(crate) struct LogitGrad {
    pub value: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-log(exp(p) / (exp(p) + Σ exp(n)))`
fn single_logits(pos: f64, neg: &[f64]) -> LogitGrad {
    let all = std::iter::once(pos).chain(neg.iter().copied());
    let lse = log_sum_exp(all);
    let value = lse - pos;
    LogitGrad {
        value,
        d_pos: vec![(pos - lse).exp() - 1.0],
        d_neg: neg.iter().map(|n| (n - lse).exp()).collect(),
    }
}

fn naive_logits(pos: &[f64], neg: &[f64]) -> LogitGrad {
    let mut d_neg = vec![0.0; neg.len()];
    let mut d_pos = Vec::with_capacity(pos.len());
    let mut value = 0.0;
    for &p in pos {
        let term = single_logits(p, neg);
        value += term.value;
        d_pos.push(term.d_pos[0]);
        for (acc, d) in d_neg.iter_mut().zip(&term.d_neg) {
            *acc += d;
        }
    }
    LogitGrad { value, d_pos, d_neg }
}

/// `log(1 + Σ_p Σ_n exp(n - p))`
fn multi_logits(pos: &[f64], neg: &[f64]) -> LogitGrad {
    let gaps = pos.iter().flat_map(|p| neg.iter().map(move |n| n - p));
    let value = log_sum_exp(std::iter::once(0.0).chain(gaps));
    let mut d_pos = vec![0.0; pos.len()];
    let mut d_neg = vec![0.0; neg.len()];
    for (a, p) in pos.iter().enumerate() {
        for (b, n) in neg.iter().enumerate() {
            let w = (n - p - value).exp();
            d_pos[a] -= w;
            d_neg[b] += w;
        }
    }
    LogitGrad { value, d_pos, d_neg }
}

pub(crate) fn contrastive_logits(kind: ContrastiveKind, pos: &[f64], neg: &[f64]) -> Result<LogitGrad> {
    if pos.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(match kind {
        ContrastiveKind::Single => {
            if pos.len() != 1 {
                return Err(Error::invalid(format!(
                    "single-positive loss needs exactly one positive, got {}",
                    pos.len()
                )));
            }
            single_logits(pos[0], neg)
        }
        ContrastiveKind::Naive => naive_logits(pos, neg),
        ContrastiveKind::Multi => multi_logits(pos, neg),
    })
}

impl ContrastiveInstance {
    pub fn new(anchor: Embedding, positives: Vec<Embedding>, negatives: Vec<Embedding>) -> Self {
        Self {
            anchor,
            positives,
            negatives,
        }
    }

    fn check(&self) -> Result<()> {
        let d = self.anchor.dim();
        for k in self.positives.iter().chain(&self.negatives) {
            check_dim(d, k.dim())?;
        }
        if self.positives.is_empty() {
            return Err(Error::NoPositives);
        }
        Ok(())
    }
}

fn evaluate(kind: ContrastiveKind, inst: &ContrastiveInstance) -> Result<LossResult> {
    inst.check()?;
    let v = &inst.anchor;
    let pos: Vec<f64> = inst.positives.iter().map(|k| v.dot(k)).collect();
    let neg: Vec<f64> = inst.negatives.iter().map(|k| v.dot(k)).collect();
    let g = contrastive_logits(kind, &pos, &neg)?;

    let mut grad_anchor = Embedding::zeros(v.dim());
    for (d, k) in g.d_pos.iter().zip(&inst.positives) {
        grad_anchor.add_scaled(*d, k);
    }
    for (d, k) in g.d_neg.iter().zip(&inst.negatives) {
        grad_anchor.add_scaled(*d, k);
    }
    Ok(LossResult {
        value: g.value,
        grad_anchor,
        grad_positives: g.d_pos.iter().map(|d| v.scaled(*d)).collect(),
        grad_negatives: g.d_neg.iter().map(|d| v.scaled(*d)).collect(),
    })
}

/// Softmax cross-entropy of one positive against all negatives.
pub fn loss_single_positive(inst: &ContrastiveInstance) -> Result<LossResult> {
    evaluate(ContrastiveKind::Single, inst)
}

/// Sum over positives of the single-positive loss, each against every negative.
pub fn loss_multi_naive(inst: &ContrastiveInstance) -> Result<LossResult> {
    evaluate(ContrastiveKind::Naive, inst)
}

/// Multi-positive loss: every (positive, negative) logit gap accumulated in
/// one `log(1 + Σ exp(v·k⁻ − v·k⁺))`.
pub fn loss_multi_positive(inst: &ContrastiveInstance) -> Result<LossResult> {
    evaluate(ContrastiveKind::Multi, inst)
}

pub fn contrastive_loss(kind: ContrastiveKind, inst: &ContrastiveInstance) -> Result<LossResult> {
    evaluate(kind, inst)
}

/// `(cos(v, k) - c)²` where `c` is 1 for a positive pair and 0 otherwise.
pub fn aux_loss(v: &Embedding, k: &Embedding, positive: bool) -> Result<PairLoss> {
    check_dim(v.dim(), k.dim())?;
    let (value, gv, gk) = aux_raw(v.as_slice(), k.as_slice(), positive)?;
    Ok(PairLoss {
        value,
        grad_v: gv.into(),
        grad_k: gk.into(),
    })
}

fn aux_raw(v: &[f64], k: &[f64], positive: bool) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let nv = dot(v, v).sqrt();
    let nk = dot(k, k).sqrt();
    if nv == 0.0 || nk == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cos = dot(v, k) / (nv * nk);
    let target = if positive { 1.0 } else { 0.0 };
    let r = cos - target;
    let scale = 2.0 * r;
    // d cos / dv = k / (|v||k|) - cos · v / |v|²
    let gv = v
        .iter()
        .zip(k)
        .map(|(vi, ki)| scale * (ki / (nv * nk) - cos * vi / (nv * nv)))
        .collect();
    let gk = v
        .iter()
        .zip(k)
        .map(|(vi, ki)| scale * (vi / (nv * nk) - cos * ki / (nk * nk)))
        .collect();
    Ok((r * r, gv, gk))
}

/// Contrastive instance whose vectors live in a shared table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedInstance {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Cosine regression pair over table indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxPair {
    pub a: usize,
    pub b: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub contrastive: f64,
    pub aux: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            contrastive: DEFAULT_CONTRASTIVE_WEIGHT,
            aux: DEFAULT_AUX_WEIGHT,
        }
    }
}

/// Combined objective over a vector table.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// `contrastive_weight · contrastive + aux_weight · aux`
    pub value: f64,
    /// Mean contrastive loss over instances.
    pub contrastive: f64,
    /// Mean aux loss over pairs (0 with no pairs).
    pub aux: f64,
    /// Gradient of `value` for every table entry.
    pub grads: Vec<Embedding>,
}

struct InstanceTerm {
    value: f64,
    grad_anchor: Vec<f64>,
    d_pos: Vec<f64>,
    d_neg: Vec<f64>,
}

/// Weighted mean contrastive loss plus weighted mean aux loss.
///
/// Instances are evaluated in parallel but gradients are reduced
/// sequentially in input order, so results are bitwise reproducible.
/// A vector that appears in several instances or pairs receives the sum of
/// its contributions.
pub fn batch_embedding_objective(
    table: &[Embedding],
    instances: &[IndexedInstance],
    aux_pairs: &[AuxPair],
    weights: ObjectiveWeights,
    kind: ContrastiveKind,
) -> Result<BatchLoss> {
    if instances.is_empty() {
        return Err(Error::Empty("contrastive instances"));
    }
    let dim = table.first().map(Embedding::dim).unwrap_or(0);
    for e in table {
        check_dim(dim, e.dim())?;
    }
    let get = |i: usize| -> Result<&Embedding> {
        table
            .get(i)
            .ok_or_else(|| Error::invalid(format!("vector index {i} outside table of {}", table.len())))
    };

    let terms: Vec<InstanceTerm> = instances
        .par_iter()
        .map(|inst| -> Result<InstanceTerm> {
            let v = get(inst.anchor)?;
            let pos = inst
                .positives
                .iter()
                .map(|&j| Ok(v.dot(get(j)?)))
                .collect::<Result<Vec<_>>>()?;
            let neg = inst
                .negatives
                .iter()
                .map(|&j| Ok(v.dot(get(j)?)))
                .collect::<Result<Vec<_>>>()?;
            let g = contrastive_logits(kind, &pos, &neg)?;
            let mut ga = Embedding::zeros(dim);
            for (d, &j) in g.d_pos.iter().zip(&inst.positives) {
                ga.add_scaled(*d, &table[j]);
            }
            for (d, &j) in g.d_neg.iter().zip(&inst.negatives) {
                ga.add_scaled(*d, &table[j]);
            }
            Ok(InstanceTerm {
                value: g.value,
                grad_anchor: ga.into_vec(),
                d_pos: g.d_pos,
                d_neg: g.d_neg,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grads = vec![Embedding::zeros(dim); table.len()];
    let wc = weights.contrastive / instances.len() as f64;
    let mut contrastive = 0.0;
    for (inst, term) in instances.iter().zip(&terms) {
        contrastive += term.value;
        let anchor = &table[inst.anchor];
        grads[inst.anchor].add_scaled(wc, &Embedding::new(term.grad_anchor.clone()));
        for (d, &j) in term.d_pos.iter().zip(&inst.positives) {
            grads[j].add_scaled(wc * d, anchor);
        }
        for (d, &j) in term.d_neg.iter().zip(&inst.negatives) {
            grads[j].add_scaled(wc * d, anchor);
        }
    }
    contrastive /= instances.len() as f64;

    let mut aux = 0.0;
    if !aux_pairs.is_empty() {
        let wa = weights.aux / aux_pairs.len() as f64;
        for p in aux_pairs {
            let (value, gv, gk) = aux_raw(get(p.a)?.as_slice(), get(p.b)?.as_slice(), p.positive)?;
            aux += value;
            grads[p.a].add_scaled(wa, &Embedding::new(gv));
            grads[p.b].add_scaled(wa, &Embedding::new(gk));
        }
        aux /= aux_pairs.len() as f64;
    }

    Ok(BatchLoss {
        value: weights.contrastive * contrastive + weights.aux * aux,
        contrastive,
        aux,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    fn inst(a: &[f64], pos: &[&[f64]], neg: &[&[f64]]) -> ContrastiveInstance {
        ContrastiveInstance::new(
            e(a),
            pos.iter().map(|p| e(p)).collect(),
            neg.iter().map(|n| e(n)).collect(),
        )
    }

    #[test]
    fn single_positive_examples() {
        let r = loss_single_positive(&inst(&[1.0, 2.0], &[&[3.0, -1.0]], &[])).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_anchor.as_slice().iter().all(|g| *g == 0.0));
        assert!(r.grad_positives[0].as_slice().iter().all(|g| *g == 0.0));

        let r = loss_single_positive(&inst(&[1.0, 1.0], &[&[1.0, 0.0]], &[&[0.0, 1.0]])).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-15);

        let r = loss_single_positive(&inst(&[1.0, 0.0], &[&[1.0, 0.0]], &[&[0.0, 1.0]])).unwrap();
        assert!((r.value - 0.313_261_687_518_222_8).abs() < 1e-15);
    }

    #[test]
    fn single_positive_rejects_bad_input() {
        assert!(matches!(
            loss_single_positive(&inst(&[1.0], &[], &[&[1.0]])),
            Err(Error::NoPositives)
        ));
        assert!(matches!(
            loss_single_positive(&inst(&[1.0, 0.0], &[&[1.0]], &[])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(loss_single_positive(&inst(&[1.0], &[&[1.0], &[2.0]], &[])).is_err());
    }

    #[test]
    fn naive_examples() {
        let one = inst(&[0.3, -0.2], &[&[1.0, 0.5]], &[&[0.1, 0.9], &[-1.0, 0.2]]);
        let a = loss_multi_naive(&one).unwrap().value;
        let b = loss_single_positive(&one).unwrap().value;
        assert_eq!(a, b);

        let zero = [0.0, 0.0];
        let r = loss_multi_naive(&inst(&zero, &[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 1.0]])).unwrap();
        assert!((r.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        let r = loss_multi_naive(&inst(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], &[])).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn multi_positive_examples() {
        let zero = [0.0, 0.0];
        let r = loss_multi_positive(&inst(&zero, &[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 1.0]])).unwrap();
        assert!((r.value - 3.0f64.ln()).abs() < 1e-15);

        let r = loss_multi_positive(&inst(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], &[])).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_anchor.as_slice().iter().all(|g| *g == 0.0));

        let one = inst(&[0.3, -0.2], &[&[1.0, 0.5]], &[&[0.1, 0.9], &[-1.0, 0.2]]);
        let a = loss_multi_positive(&one).unwrap().value;
        let b = loss_single_positive(&one).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let r = loss_multi_positive(&inst(&[100.0], &[&[-100.0], &[50.0]], &[&[100.0]])).unwrap();
        assert!(r.value.is_finite());
        assert!((r.value - 20_000.0).abs() < 1e-6);
        let r = loss_single_positive(&inst(&[100.0], &[&[100.0]], &[&[-100.0]])).unwrap();
        assert!(r.value.is_finite() && r.value >= 0.0);
        let r = loss_multi_naive(&inst(&[100.0], &[&[-100.0]], &[&[100.0]])).unwrap();
        assert!((r.value - 20_000.0).abs() < 1e-6);
    }

    #[test]
    fn aux_examples() {
        let v = e(&[0.3, -1.2, 2.0]);
        assert!(aux_loss(&v, &v, true).unwrap().value.abs() < 1e-15);
        let a = e(&[1.0, 0.0]);
        let b = e(&[0.0, 2.0]);
        assert_eq!(aux_loss(&a, &b, false).unwrap().value, 0.0);
        assert_eq!(aux_loss(&a, &b, true).unwrap().value, 1.0);
        assert!(matches!(aux_loss(&a, &e(&[0.0, 0.0]), true), Err(Error::ZeroNorm)));
    }

    #[test]
    fn monotone_in_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let pos: Vec<f64> = (0..rng.random_range(1..5))
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let neg: Vec<f64> = (0..rng.random_range(1..5))
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let base = multi_logits(&pos, &neg).value;
            let mut up = neg.clone();
            up[0] += 0.1;
            assert!(multi_logits(&pos, &up).value > base);
            let mut up = pos.clone();
            up[0] += 0.1;
            assert!(multi_logits(&up, &neg).value < base);
        }
    }

    fn table(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Embedding> {
        (0..n)
            .map(|_| Embedding::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    #[test]
    fn batch_objective_examples() {
        let t = vec![e(&[0.2, 0.5]), e(&[1.0, 0.1]), e(&[-0.4, 0.3])];
        let inst = IndexedInstance {
            anchor: 0,
            positives: vec![1],
            negatives: vec![2],
        };
        let single = loss_multi_positive(&ContrastiveInstance::new(
            t[0].clone(),
            vec![t[1].clone()],
            vec![t[2].clone()],
        ))
        .unwrap();
        let b = batch_embedding_objective(
            &t,
            std::slice::from_ref(&inst),
            &[],
            ObjectiveWeights::default(),
            ContrastiveKind::Multi,
        )
        .unwrap();
        assert!((b.value - 0.25 * single.value).abs() < 1e-15);
        assert!((b.grads[0][0] - 0.25 * single.grad_anchor[0]).abs() < 1e-15);

        let zero = ObjectiveWeights {
            contrastive: 0.0,
            aux: 0.0,
        };
        let pairs = [AuxPair {
            a: 0,
            b: 1,
            positive: true,
        }];
        let b = batch_embedding_objective(&t, &[inst], &pairs, zero, ContrastiveKind::Multi).unwrap();
        assert_eq!(b.value, 0.0);

        assert!(matches!(
            batch_embedding_objective(&t, &[], &[], ObjectiveWeights::default(), ContrastiveKind::Multi),
            Err(Error::Empty(_))
        ));
        assert_eq!(
            ObjectiveWeights::default(),
            ObjectiveWeights {
                contrastive: 0.25,
                aux: 1.0
            }
        );
    }

    #[test]
    fn shared_vectors_accumulate_and_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = table(&mut rng, 6, 5);
        let instances = vec![
            IndexedInstance {
                anchor: 0,
                positives: vec![1, 2],
                negatives: vec![3, 4, 5],
            },
            IndexedInstance {
                anchor: 3,
                positives: vec![4],
                negatives: vec![0, 1, 2],
            },
        ];
        let pairs = vec![
            AuxPair {
                a: 0,
                b: 1,
                positive: true,
            },
            AuxPair {
                a: 0,
                b: 3,
                positive: false,
            },
            AuxPair {
                a: 3,
                b: 4,
                positive: true,
            },
        ];
        let w = ObjectiveWeights::default();
        for kind in ContrastiveKind::ALL {
            let inst: Vec<IndexedInstance> = if kind == ContrastiveKind::Single {
                instances
                    .iter()
                    .map(|i| IndexedInstance {
                        positives: vec![i.positives[0]],
                        ..i.clone()
                    })
                    .collect()
            } else {
                instances.clone()
            };
            let base = batch_embedding_objective(&t, &inst, &pairs, w, kind).unwrap();
            let h = 1e-6;
            for v in 0..t.len() {
                for c in 0..t[v].dim() {
                    let orig = t[v][c];
                    t[v][c] = orig + h;
                    let up = batch_embedding_objective(&t, &inst, &pairs, w, kind).unwrap().value;
                    t[v][c] = orig - h;
                    let dn = batch_embedding_objective(&t, &inst, &pairs, w, kind).unwrap().value;
                    t[v][c] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let a = base.grads[v][c];
                    assert!((a - fd).abs() < 1e-7, "{kind:?} v{v}[{c}]: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn batch_objective_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = table(&mut rng, 40, 8);
        let instances: Vec<IndexedInstance> = (0..20)
            .map(|i| IndexedInstance {
                anchor: i,
                positives: vec![20 + i, 20 + (i + 1) % 20],
                negatives: (20..40).filter(|j| *j != 20 + i && *j != 20 + (i + 1) % 20).collect(),
            })
            .collect();
        let a = batch_embedding_objective(&t, &instances, &[], ObjectiveWeights::default(), ContrastiveKind::Multi)
            .unwrap();
        let b = batch_embedding_objective(&t, &instances, &[], ObjectiveWeights::default(), ContrastiveKind::Multi)
            .unwrap();
        assert_eq!(a, b);
    }
}
