//! Seeded fixtures shared by the benchmarks.

use quasitrack::embedloss::ContrastiveInstance;
use quasitrack::losscheck::random_embedding;
use quasitrack::Embedding;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn embeddings(seed: u64, n: usize, dim: usize) -> Vec<Embedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_embedding(&mut rng, dim)).collect()
}

pub fn instance(seed: u64, dim: usize, positives: usize, negatives: usize) -> ContrastiveInstance {
    let mut v = embeddings(seed, 1 + positives + negatives, dim).into_iter();
    let anchor = v.next().expect("anchor");
    let pos = v.by_ref().take(positives).collect();
    ContrastiveInstance::new(anchor, pos, v.collect())
}
