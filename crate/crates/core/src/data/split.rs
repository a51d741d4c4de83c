use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl DatasetSplit {
    pub fn part(&self, name: &SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Seeded shuffle of the (sorted) id set, then a contiguous train/val/test
/// partition. Val and test sizes are floored; the remainder goes to train.
pub fn split_dataset(ids: &[String], seed: u64, ratios: [f64; 3]) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::arg("split_dataset on an empty id list"));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::arg(format!("split ratios {ratios:?} must be non-negative")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("split ratios {ratios:?} must sum to 1")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg("split_dataset ids must be unique"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len();
    // The epsilon keeps e.g. 100 × 0.29 from flooring to 28.
    let floor = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let n_val = floor(ratios[1]);
    let n_test = floor(ratios[2]);
    let n_train = n - n_val - n_test;

    let test = sorted.split_off(n_train + n_val);
    let val = sorted.split_off(n_train);
    Ok(DatasetSplit {
        train: sorted,
        val,
        test,
        seed,
        ratios,
    })
}
