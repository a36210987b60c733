use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Batch sizes for one pass over `n` rows: `ceil(n / batch_size)` batches
/// whose sizes sum to `n`, except that a one-row tail is merged into the
/// previous batch (a single row cannot form a pair).
fn batch_sizes(n: usize, batch_size: usize) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if batch_size > n {
        return Err(Error::invalid(format!("batch size {batch_size} exceeds {n} rows")));
    }
    let mut sizes = vec![batch_size; n / batch_size];
    let tail = n % batch_size;
    if tail == 1 {
        *sizes.last_mut().expect("n >= batch_size") += 1;
    } else if tail > 0 {
        sizes.push(tail);
    }
    Ok(sizes)
}

/// One epoch of class-balanced batches over positions `0..labels.len()`.
///
/// Every row of class `c` has sampling weight `1/N_c`, so each draw lands in
/// a class chosen uniformly at random; the row within that class is uniform
/// over rows not yet drawn into the current batch. Rows repeat across
/// batches but never within one. A class whose rows are all in the current
/// batch drops out of the class draw until the next batch.
pub fn balanced_batches<R: Rng>(labels: &[usize], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let sizes = batch_sizes(labels.len(), batch_size)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut pools: Vec<Vec<usize>> = by_class.into_values().collect();
    let mut taken = vec![0usize; pools.len()];
    let mut open: Vec<usize> = Vec::with_capacity(pools.len());
    let mut batches = Vec::with_capacity(sizes.len());
    for size in sizes {
        taken.fill(0);
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size {
            open.clear();
            open.extend((0..pools.len()).filter(|&c| taken[c] < pools[c].len()));
            let c = open[rng.random_range(0..open.len())];
            // Partial Fisher-Yates: the first `taken[c]` entries are in the batch.
            let pool = &mut pools[c];
            let j = rng.random_range(taken[c]..pool.len());
            pool.swap(taken[c], j);
            batch.push(pool[taken[c]]);
            taken[c] += 1;
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// One epoch of shuffled batches: a permutation of `0..n` cut into chunks.
pub fn uniform_batches<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let sizes = batch_sizes(n, batch_size)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}
