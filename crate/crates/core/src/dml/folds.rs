use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DmlError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

/// Shuffles `0..n` with the seed and deals rows round-robin into `k` folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan, DmlError> {
    if k < 2 || k > n {
        return Err(DmlError::BadK { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldPlan { n, k, assignment, seed })
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn even_and_remainder_splits() {
        assert_eq!(kfold_split(10, 5, 1).unwrap().sizes(), vec![2; 5]);
        let mut s = kfold_split(11, 5, 1).unwrap().sizes();
        s.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(s, vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 9).unwrap());
        assert_ne!(kfold_split(50, 5, 9).unwrap().assignment, kfold_split(50, 5, 10).unwrap().assignment);
    }

    #[test]
    fn bad_k() {
        assert_eq!(kfold_split(10, 1, 0).unwrap_err(), DmlError::BadK { n: 10, k: 1 });
        assert!(kfold_split(3, 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_rows(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let plan = kfold_split(n, k, seed).unwrap();
            let sizes = plan.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..k {
                let mut all = plan.test_rows(f);
                all.extend(plan.train_rows(f));
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
