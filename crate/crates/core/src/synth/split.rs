use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = u32> + '_ {
        self.train.iter().chain(&self.val).chain(&self.test).copied()
    }
}

/// Splits `total` items by integer `ratios` with the largest-remainder
/// rule; leftover items go to the largest fractional parts, earlier parts
/// first on ties.
pub fn largest_remainder(total: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    let denom: u64 = ratios.iter().map(|&r| r as u64).sum();
    if denom == 0 {
        return Err(Error::InvalidArgument("split ratios sum to zero".into()));
    }
    let mut sizes = [0usize; 3];
    let mut rems = [(0u64, 0usize); 3];
    for (i, &r) in ratios.iter().enumerate() {
        let num = total as u64 * r as u64;
        sizes[i] = (num / denom) as usize;
        rems[i] = (num % denom, i);
    }
    let mut left = total - sizes.iter().sum::<usize>();
    // Stable sort: equal remainders keep index order.
    rems.sort_by(|a, b| b.0.cmp(&a.0));
    for &(_, i) in rems.iter() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Seeded shuffle of `case_ids`, then train/val/test by `ratios`
/// (8:1:1 by default).
pub fn split_dataset(case_ids: &[u32], ratios: [u32; 3], seed: u64) -> Result<DatasetSplit> {
    if case_ids.len() < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 cases to split, got {}", case_ids.len())));
    }
    let mut ids = case_ids.to_vec();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate case ids".into()));
    }
    ids.shuffle(&mut rng_for(seed, "split", 0));
    let [n_train, n_val, _] = largest_remainder(ids.len(), ratios)?;
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(DatasetSplit { train: ids, val, test })
}
