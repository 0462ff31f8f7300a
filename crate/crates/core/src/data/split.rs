use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const STANDARD: SplitRatios = SplitRatios {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::validation("ratios", format!("must be non-negative: {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation("ratios", format!("sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Assigns split labels by a seeded shuffle. Validation and test sizes are
/// `round(ratio · n)`; the remainder goes to training.
pub fn split_dataset(m: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    let n = m.len();
    let n_val = (ratios.val * n as f64).round() as usize;
    let n_test = ((ratios.test * n as f64).round() as usize).min(n - n_val.min(n));
    let n_val = n_val.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Some(Split::Train); n];
    for &i in &order[..n_val] {
        splits[i] = Some(Split::Val);
    }
    for &i in &order[n_val..n_val + n_test] {
        splits[i] = Some(Split::Test);
    }
    Ok(DatasetManifest {
        records: m.records.clone(),
        splits,
    })
}
