//! Per-step branch layout.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One source video of the batch with its Siamese branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanItem {
    pub source: usize,
    /// Transform indices applied to `source` (distinct).
    pub b1: Vec<usize>,
    /// `(source, transform)` of LR videos from other sources.
    pub b2: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub items: Vec<PlanItem>,
}

impl BatchPlan {
    /// Every branch as `(source, transform)`, item by item, b1 before b2.
    pub fn branches(&self) -> Vec<(usize, usize)> {
        self.items
            .iter()
            .flat_map(|it| it.b1.iter().map(|&k| (it.source, k)).chain(it.b2.iter().copied()))
            .collect()
    }
}

/// For each source in `batch`: `n` distinct transforms out of
/// `num_transforms`, and `n` LR videos drawn uniformly from the other
/// sources in `pool` (any transform).
pub fn build_batch_plan(
    batch: &[usize],
    pool: &[usize],
    num_transforms: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchPlan> {
    if n == 0 || n > num_transforms {
        return Err(Error::invalid(format!("n = {n} must be in 1..={num_transforms}")));
    }
    let mut items = Vec::with_capacity(batch.len());
    for &s in batch {
        let others: Vec<usize> = pool.iter().copied().filter(|&o| o != s).collect();
        if others.is_empty() {
            return Err(Error::invalid("a Siamese batch needs at least two distinct source videos"));
        }
        let b1 = sample(rng, num_transforms, n).into_vec();
        let b2 = (0..n)
            .map(|_| (*others.choose(rng).unwrap(), rng.gen_range(0..num_transforms)))
            .collect();
        items.push(PlanItem { source: s, b1, b2 });
    }
    Ok(BatchPlan { items })
}

/// Shuffled, `batch_size`-sized chunks of `train`; each source once.
pub fn epoch_batches(train: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
