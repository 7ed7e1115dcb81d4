//! Seeded row splits shared by every model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of a seeded generator. Used to give every
/// work item its own RNG so parallel and sequential runs agree.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    idx
}

/// Shuffle `0..n` and cut it at `round(n * train_fraction)`, keeping at
/// least one row on each side when `n >= 2`.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::domain(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 rows to split, got {n}")));
    }
    let mut idx = shuffled_indices(n, seed);
    let cut = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(cut);
    Ok((idx, test))
}

/// Stratified k-fold assignment: rows of each class are shuffled and dealt
/// round-robin, so every fold sees every class with at least `k` rows.
/// Returns the fold index of each row.
pub fn stratified_folds<L: Ord + Copy>(labels: &[L], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::domain(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::domain(format!("{} rows is fewer than {k} folds", labels.len())));
    }
    let mut by_class: std::collections::BTreeMap<L, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut r = rng(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for rows in by_class.values_mut() {
        rows.shuffle(&mut r);
        for &i in rows.iter() {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}
