use rand::seq::SliceRandom;
use rand::Rng;

use crate::classes::{WeatherClass, NUM_CLASSES};
use crate::losses::{PairKind, PairSet, PositivePair};

/// All unordered same-class pairs `(i, j)`, `i < j`, over `batch_labels`,
/// then one `(m, n + r)` pair for the `r`-th error member `m`, where `n` is
/// the batch length and row `n + r` holds the translation of `m`.
pub fn build_pair_set(batch_labels: &[WeatherClass], error_members_in_batch: &[usize]) -> PairSet {
    let n = batch_labels.len();
    let mut positive_pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if batch_labels[i] == batch_labels[j] {
                positive_pairs.push(PositivePair {
                    anchor: i,
                    positive: j,
                    kind: PairKind::SameClass,
                });
            }
        }
    }
    for (r, &m) in error_members_in_batch.iter().enumerate() {
        positive_pairs.push(PositivePair {
            anchor: m,
            positive: n + r,
            kind: PairKind::Translated,
        });
    }
    PairSet { positive_pairs }
}

/// Shuffles within each class and deals the classes round-robin, so every
/// batch mixes classes whenever more than one remains. A trailing batch of
/// one sample is merged into its predecessor.
pub fn stratified_batches<R: Rng + ?Sized>(
    labels: &[WeatherClass],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, y) in labels.iter().enumerate() {
        pools[y.index()].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let mut order = Vec::with_capacity(labels.len());
    let mut start = rng.random_range(0..NUM_CLASSES);
    let longest = pools.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..longest {
        for c in 0..NUM_CLASSES {
            if let Some(&i) = pools[(start + c) % NUM_CLASSES].get(k) {
                order.push(i);
            }
        }
        start = (start + 1) % NUM_CLASSES;
    }

    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}
