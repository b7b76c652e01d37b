use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

pub const TRAIN_SHARE_NUM: usize = 4;
pub const TRAIN_SHARE_DEN: usize = 5;

/// Number of training samples for an 80:20 split, rounded to nearest.
pub fn train_count(n: usize) -> usize {
    (n * TRAIN_SHARE_NUM + TRAIN_SHARE_DEN / 2) / TRAIN_SHARE_DEN
}

/// Seeded shuffle of `ids`; the first 80% train, the rest test.
pub fn split_shuffle(ids: &[u64], seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if ids.len() < 5 {
        return Err(Error::Config(format!("need at least 5 samples to split, got {}", ids.len())));
    }
    let mut perm = ids.to_vec();
    perm.shuffle(&mut rng::keyed(seed, rng::name_hash("split"), 0));
    let test = perm.split_off(train_count(ids.len()));
    Ok((perm, test))
}

/// Sample indices sorted by (lat, lon) and chunked into batches.
pub fn batch_by_latlon(coords: &[(f64, f64)], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| {
        coords[a]
            .0
            .total_cmp(&coords[b].0)
            .then(coords[a].1.total_cmp(&coords[b].1))
    });
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
