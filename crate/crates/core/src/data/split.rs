use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

/// Deterministic shuffle of `subjects`, first `n_train` go to training.
pub fn make_split(
    subjects: &[String],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if subjects.len() != n_train + n_test {
        return Err(Error::Config(format!(
            "split needs exactly {} subjects ({n_train} train + {n_test} test), got {}",
            n_train + n_test,
            subjects.len()
        )));
    }
    let unique: HashSet<&String> = subjects.iter().collect();
    if unique.len() != subjects.len() {
        return Err(Error::Data("duplicate subject ids in split input".into()));
    }
    let mut shuffled = subjects.to_vec();
    shuffled.shuffle(&mut rng(seed));
    let test_subjects = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train_subjects: shuffled,
        test_subjects,
    })
}
