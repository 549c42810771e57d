use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::window::Window;
use crate::error::{Error, Result};

/// Disjoint, sorted index sets into a window list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits windows stratified by (activity, person). Each stratum of size
/// `n` gives `round(f_train·n)` windows to train, `round(f_val·n)` (capped
/// by what remains) to validation and the rest to test.
pub fn split_train_val_test(windows: &[Window], fractions: [f64; 3], seed: u64) -> Result<Split> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    if windows.is_empty() {
        return Err(Error::Degenerate("no windows to split".into()));
    }
    let mut strata: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        strata.entry((w.activity, w.person)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for mut members in strata.into_values() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split
            .val
            .extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
