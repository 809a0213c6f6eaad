use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Kfold,
    LeaveOneOperatorOut,
    FolderHoldout,
    Holdout,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kfold" => Ok(Protocol::Kfold),
            "loo" | "leave-one-operator-out" => Ok(Protocol::LeaveOneOperatorOut),
            "folder-holdout" => Ok(Protocol::FolderHoldout),
            "holdout" => Ok(Protocol::Holdout),
            _ => Err(format!("unknown protocol {s:?} (kfold, loo, folder-holdout, holdout)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    /// Train and test sides are disjoint in every split.
    pub fn is_disjoint(&self) -> bool {
        self.splits.iter().all(|s| {
            let train: BTreeSet<_> = s.train.iter().collect();
            s.test.iter().all(|i| !train.contains(i))
        })
    }
}

/// Indices grouped by key, each group shuffled with `rng`, groups in key order.
fn shuffled_groups<K: Ord + Copy>(keys: &[K], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    groups
        .into_values()
        .map(|mut g| {
            g.shuffle(rng);
            g
        })
        .collect()
}

/// Deals every group round-robin across `n` bins, continuing the dealer
/// position across groups so bin sizes differ by at most one.
fn deal(groups: &[Vec<usize>], n: usize) -> Vec<Vec<usize>> {
    let mut bins = vec![Vec::new(); n];
    let mut pos = 0;
    for g in groups {
        for &i in g {
            bins[pos % n].push(i);
            pos += 1;
        }
    }
    bins.iter_mut().for_each(|b| b.sort_unstable());
    bins
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let held: BTreeSet<_> = test.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

/// Stratified k-fold: per-class counts in each fold differ by at most one.
pub fn kfold(labels: &[usize], k: usize, seed: u64) -> Result<SplitPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::Protocol(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > labels.len() {
        return Err(EvalError::Protocol(format!(
            "k = {k} exceeds dataset size {}",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = deal(&shuffled_groups(labels, &mut rng), k);
    Ok(SplitPlan {
        protocol: Protocol::Kfold,
        splits: folds
            .into_iter()
            .map(|test| Split {
                train: complement(labels.len(), &test),
                test,
            })
            .collect(),
    })
}

/// One split per group of `group_size` consecutive operator ids (sorted); the
/// last group may be smaller.
pub fn leave_one_operator_out(operators: &[usize], group_size: usize) -> Result<SplitPlan, EvalError> {
    let ids: Vec<usize> = operators.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < 2 {
        return Err(EvalError::Protocol(format!(
            "leave-one-operator-out needs at least 2 operators, found {}",
            ids.len()
        )));
    }
    if group_size == 0 || group_size >= ids.len() {
        return Err(EvalError::Protocol(format!(
            "group size {group_size} must lie in 1..{}",
            ids.len()
        )));
    }
    let splits = ids
        .chunks(group_size)
        .map(|group| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..operators.len()).partition(|&i| group.contains(&operators[i]));
            Split { train, test }
        })
        .collect();
    Ok(SplitPlan {
        protocol: Protocol::LeaveOneOperatorOut,
        splits,
    })
}

/// Samples dealt into `n_folders` folders stratified by (class, operator);
/// `n_test` randomly chosen folders form the test side of a single split.
pub fn folder_holdout(
    labels: &[usize],
    operators: &[usize],
    n_folders: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitPlan, EvalError> {
    if labels.len() != operators.len() {
        return Err(EvalError::LengthMismatch {
            preds: operators.len(),
            labels: labels.len(),
        });
    }
    if n_folders < 2 || n_test == 0 || n_test >= n_folders || n_folders > labels.len() {
        return Err(EvalError::Protocol(format!(
            "cannot hold out {n_test} of {n_folders} folders over {} samples",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<(usize, usize)> = labels.iter().copied().zip(operators.iter().copied()).collect();
    let folders = deal(&shuffled_groups(&keys, &mut rng), n_folders);
    let mut order: Vec<usize> = (0..n_folders).collect();
    order.shuffle(&mut rng);
    let mut test: Vec<usize> = order[..n_test].iter().flat_map(|&f| folders[f].iter().copied()).collect();
    test.sort_unstable();
    Ok(SplitPlan {
        protocol: Protocol::FolderHoldout,
        splits: vec![Split {
            train: complement(labels.len(), &test),
            test,
        }],
    })
}

/// Single stratified split with exactly `n_test` test samples. Per-class
/// quotas follow class proportions by largest remainder.
pub fn stratified_holdout(labels: &[usize], n_test: usize, seed: u64) -> Result<SplitPlan, EvalError> {
    if n_test == 0 || n_test >= labels.len() {
        return Err(EvalError::Protocol(format!(
            "test size {n_test} must lie in 1..{}",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_groups(labels, &mut rng);
    let n = labels.len() as f64;
    let exact: Vec<f64> = groups.iter().map(|g| g.len() as f64 * n_test as f64 / n).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n_test - quota.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..groups.len()).collect();
    by_remainder.shuffle(&mut rng);
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &g in &by_remainder {
        if rest == 0 {
            break;
        }
        if quota[g] < groups[g].len() {
            quota[g] += 1;
            rest -= 1;
        }
    }
    let mut test: Vec<usize> = groups.iter().zip(&quota).flat_map(|(g, &q)| g[..q].iter().copied()).collect();
    test.sort_unstable();
    Ok(SplitPlan {
        protocol: Protocol::Holdout,
        splits: vec![Split {
            train: complement(labels.len(), &test),
            test,
        }],
    })
}
