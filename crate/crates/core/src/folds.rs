//! Deterministic k-fold splits and the cross-labeling plan.
//!
//! Each fold is labeled by a decoder trained on the remaining folds, so no
//! instance is ever labeled by a model that saw it during training.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::InstanceId;

pub const DEFAULT_FOLD_SEED: u64 = 13;

/// Fold index per instance, keyed by the id's canonical string form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub seed: u64,
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FoldError {
    #[error("k must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("{count} ids cannot fill {k} folds")]
    TooFewIds { count: usize, k: usize },
    #[error("duplicate ids: {0:?}")]
    DuplicateIds(Vec<String>),
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &InstanceId) -> Option<usize> {
        self.assignment.get(&id.key()).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Keys of the ids in fold `f`.
    pub fn ids_in_fold(&self, f: usize) -> BTreeSet<&str> {
        self.assignment.iter().filter(|(_, &v)| v == f).map(|(k, _)| k.as_str()).collect()
    }
}

/// Shuffles the sorted ids with `seed` and deals them round-robin into `k`
/// folds. The result does not depend on input order.
pub fn split(ids: &[InstanceId], k: usize, seed: u64) -> Result<FoldAssignment, FoldError> {
    if k < 2 {
        return Err(FoldError::TooFewFolds(k));
    }
    if ids.len() < k {
        return Err(FoldError::TooFewIds { count: ids.len(), k });
    }
    let mut sorted: Vec<&InstanceId> = ids.iter().collect();
    sorted.sort();
    let mut seen = HashSet::new();
    let dups: Vec<String> = sorted.iter().map(|id| id.key()).filter(|key| !seen.insert(key.clone())).collect();
    if !dups.is_empty() {
        return Err(FoldError::DuplicateIds(dups));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let assignment = sorted.iter().enumerate().map(|(i, id)| (id.key(), i % k)).collect();
    Ok(FoldAssignment { seed, k, assignment })
}

/// One labeling job: train on `train_folds`, label `predict_fold`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub train_folds: Vec<usize>,
    pub predict_fold: usize,
}

pub fn cross_label_plan(assignment: &FoldAssignment) -> Vec<PlanEntry> {
    (0..assignment.k)
        .map(|f| PlanEntry {
            train_folds: (0..assignment.k).filter(|&g| g != f).collect(),
            predict_fold: f,
        })
        .collect()
}
