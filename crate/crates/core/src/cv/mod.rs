//! Stratified folds, leave-k-out splits, training and classification metrics.

pub mod metrics;
pub mod run;
pub mod train;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{DataError, DatasetIndex, Label, LabeledPatch};
use crate::model::ModelError;
use crate::tensor::TensorError;
use crate::ConfigError;

pub use metrics::{aggregate_reports, evaluate, evaluate_predictions, ClassMetrics, ClassificationReport};
pub use run::{run_cross_validation, CvOutcome, CvRequest, SplitOutcome};
pub use train::{train_model, Epoch, Plateau, Progress, TrainConfig, Trained};

#[derive(Debug, Error)]
pub enum CvError {
    #[error("cannot stratify: class {label} has {count} members for {folds} folds")]
    Stratification { label: Label, count: usize, folds: usize },
    #[error("k = {k} must lie in 1..={max}")]
    SplitRange { k: usize, max: usize },
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A reference to `index.class(label)[position]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchRef {
    pub label: Label,
    pub position: usize,
}

impl PatchRef {
    pub fn resolve(self, index: &DatasetIndex) -> &LabeledPatch {
        &index.class(self.label)[self.position]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<PatchRef>>,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Members of `label` in each fold.
    pub fn class_counts(&self, label: Label) -> Vec<usize> {
        self.folds
            .iter()
            .map(|f| f.iter().filter(|r| r.label == label).count())
            .collect()
    }

    pub fn gather(&self, fold_ids: &[usize]) -> Vec<PatchRef> {
        fold_ids.iter().flat_map(|&f| self.folds[f].iter().copied()).collect()
    }
}

/// Shuffles each class with its own stream of `seed`, then deals members
/// round-robin. The dealer position carries over from class to class, so
/// fold totals also differ by at most one.
pub fn stratified_folds(index: &DatasetIndex, n_folds: usize, seed: u64) -> Result<FoldPlan, CvError> {
    if n_folds < 2 {
        return Err(ConfigError(format!("need at least 2 folds, got {n_folds}")).into());
    }
    let mut folds = vec![Vec::new(); n_folds];
    let mut dealer = 0;
    for label in Label::ALL {
        let count = index.class(label).len();
        if count < n_folds {
            return Err(CvError::Stratification {
                label,
                count,
                folds: n_folds,
            });
        }
        let mut order: Vec<usize> = (0..count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.index() as u64);
        order.shuffle(&mut rng);
        for position in order {
            folds[dealer % n_folds].push(PatchRef { label, position });
            dealer += 1;
        }
    }
    Ok(FoldPlan { folds })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub validation: Vec<usize>,
    pub training: Vec<usize>,
}

/// Every choice of `k` validation folds, in lexicographic order.
pub fn enumerate_splits(plan: &FoldPlan, k: usize) -> Result<Vec<Split>, CvError> {
    let n = plan.n_folds();
    if k == 0 || k >= n {
        return Err(CvError::SplitRange {
            k,
            max: n.saturating_sub(1),
        });
    }
    Ok((0..n)
        .combinations(k)
        .map(|validation| Split {
            training: (0..n).filter(|f| !validation.contains(f)).collect(),
            validation,
        })
        .collect())
}

/// `n! / (k! (n − k)!)`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (1..=k.min(n - k)).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn index(counts: [usize; 5]) -> DatasetIndex {
        let mut idx = DatasetIndex::new();
        for (l, &c) in Label::ALL.iter().zip(&counts) {
            for i in 0..c {
                idx.push(LabeledPatch::new(Tensor::zeros(&[1, 1, 3]), *l, format!("{l}{i}")));
            }
        }
        idx
    }

    #[test]
    fn divisible_classes_split_evenly() {
        let plan = stratified_folds(&index([100; 5]), 5, 1).unwrap();
        for l in Label::ALL {
            assert_eq!(plan.class_counts(l), vec![20; 5]);
        }
    }

    #[test]
    fn remainders_differ_by_one() {
        let plan = stratified_folds(&index([101, 100, 100, 100, 100]), 5, 9).unwrap();
        let mut c = plan.class_counts(Label::Weed);
        c.sort();
        assert_eq!(c, vec![20, 20, 20, 20, 21]);
    }

    #[test]
    fn paper_scale_counts() {
        // only counts matter, so use tiny images
        let plan = stratified_folds(&index([4000, 4000, 3265, 4000, 4000]), 5, 0).unwrap();
        assert_eq!(plan.class_counts(Label::OffTypeBeet), vec![653; 5]);
        assert!(plan.folds.iter().all(|f| f.len() == 3853));
    }

    #[test]
    fn too_few_members_names_the_class() {
        let err = stratified_folds(&index([5, 5, 4, 5, 5]), 5, 0).unwrap_err();
        assert!(err.to_string().contains("off_type_beet"));
    }

    #[test]
    fn split_counts_follow_the_binomial() {
        let plan = stratified_folds(&index([10; 5]), 5, 0).unwrap();
        for (k, want) in [(1, 5), (2, 10), (3, 10), (4, 5)] {
            let splits = enumerate_splits(&plan, k).unwrap();
            assert_eq!(splits.len(), want);
            assert_eq!(binomial(5, k), want);
            for s in &splits {
                let mut all: Vec<usize> = s.validation.iter().chain(&s.training).copied().collect();
                all.sort();
                assert_eq!(all, vec![0, 1, 2, 3, 4]);
            }
        }
        assert_eq!(enumerate_splits(&plan, 2).unwrap()[1].validation, vec![0, 2]);
        assert!(enumerate_splits(&plan, 0).is_err());
        assert!(enumerate_splits(&plan, 5).is_err());
    }
}
