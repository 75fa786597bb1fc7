use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Minimum number of units (documents) a split accepts.
pub const MIN_SPLIT_UNITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            test_fraction: 0.2,
            validation_fraction: 0.1,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fr = [self.train_fraction, self.test_fraction, self.validation_fraction];
        if fr.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(DatasetError::InvalidSplit(format!("fractions must be non-negative, got {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!("fractions sum to {sum}, expected 1.0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit<K> {
    pub train: Vec<K>,
    pub test: Vec<K>,
    pub validation: Vec<K>,
}

/// Seeded shuffle of the distinct keys, then cut into test and validation
/// sets of `round(fraction * n)`; the remainder is the training set.
pub fn split<K: Clone + Ord>(keys: &[K], spec: &SplitSpec) -> Result<DatasetSplit<K>, DatasetError> {
    spec.validate()?;
    let mut units: Vec<K> = keys.to_vec();
    units.sort();
    units.dedup();
    let n = units.len();
    if n < MIN_SPLIT_UNITS {
        return Err(DatasetError::TooFewDocuments {
            needed: MIN_SPLIT_UNITS,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    units.shuffle(&mut rng);

    let n_test = ((spec.test_fraction * n as f64).round() as usize).min(n);
    let n_val = ((spec.validation_fraction * n as f64).round() as usize).min(n - n_test);
    let validation = units.split_off(n - n_val);
    let test = units.split_off(n - n_val - n_test);
    Ok(DatasetSplit {
        train: units,
        test,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn docs(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("doc-{i:03}")).collect()
    }

    #[test]
    fn ten_documents_split_seven_two_one() {
        let spec = SplitSpec { seed: 42, ..Default::default() };
        let s = split(&docs(10), &spec).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (7, 2, 1));
        let all: HashSet<_> = s.train.iter().chain(&s.test).chain(&s.validation).collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn deterministic_by_seed() {
        let spec = SplitSpec::default();
        assert_eq!(split(&docs(37), &spec).unwrap(), split(&docs(37), &spec).unwrap());
        let mut shuffled = docs(37);
        shuffled.reverse();
        assert_eq!(split(&docs(37), &spec).unwrap(), split(&shuffled, &spec).unwrap());
        let other = SplitSpec { seed: 7, ..spec };
        assert_ne!(split(&docs(37), &spec).unwrap(), split(&docs(37), &other).unwrap());
    }

    #[test]
    fn remainder_goes_to_train() {
        let s = split(&docs(13), &SplitSpec::default()).unwrap();
        // round(2.6) = 3 test, round(1.3) = 1 validation
        assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (9, 3, 1));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            split(&docs(9), &SplitSpec::default()),
            Err(DatasetError::TooFewDocuments { needed: 10, got: 9 })
        ));
        let bad = SplitSpec { train_fraction: 0.8, ..Default::default() };
        assert!(matches!(split(&docs(20), &bad), Err(DatasetError::InvalidSplit(_))));
    }
}
