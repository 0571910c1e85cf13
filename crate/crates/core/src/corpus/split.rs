//! Train/validation/test splits and 99-negative candidate lists.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, InteractionRecord, QueryRecord, Task, UserHistory};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Target plus sampled negatives.
pub const CANDIDATE_COUNT: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub user_id: u64,
    pub history_prefix: UserHistory,
    pub target: InteractionRecord,
    /// Ascending item ids, target included.
    pub candidates: Vec<u64>,
    pub task: Task,
    pub query: Option<QueryRecord>,
}

impl EvalInstance {
    pub fn target_item(&self) -> u64 {
        self.target.item_id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_histories: Vec<UserHistory>,
    pub valid: Vec<EvalInstance>,
    pub test: Vec<EvalInstance>,
}

impl DatasetSplit {
    /// Every interaction that may be used for fitting.
    pub fn train_interactions(&self) -> impl Iterator<Item = &InteractionRecord> {
        self.train_histories.iter().flat_map(|h| h.interactions.iter())
    }
}

/// `k` distinct negatives outside `user_positives`, plus the target, sorted.
pub fn sample_candidates(
    user_id: u64,
    target: u64,
    user_positives: &HashSet<u64>,
    all_items: &[u64],
    k: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    let mut pool: Vec<u64> = all_items.iter().copied().filter(|i| !user_positives.contains(i) && *i != target).collect();
    pool.sort_unstable();
    if pool.len() < k {
        return Err(Error::User {
            user_id,
            reason: format!("only {} non-interacted items available, {k} negatives required", pool.len()),
        });
    }
    let mut rng = seed::rng(seed, &[stream::CANDIDATES, user_id, target]);
    // Partial Fisher–Yates.
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut out: Vec<u64> = pool[..k].to_vec();
    out.push(target);
    out.sort_unstable();
    Ok(out)
}

fn instance(
    corpus: &Corpus,
    positives: &HashSet<u64>,
    all_items: &[u64],
    prefix: &[InteractionRecord],
    target: &InteractionRecord,
    seed: u64,
) -> Result<EvalInstance> {
    let candidates = sample_candidates(target.user_id, target.item_id, positives, all_items, CANDIDATE_COUNT - 1, seed)?;
    let query = match target.query_id {
        Some(q) => Some(corpus.query(q).cloned().ok_or_else(|| Error::Data(format!("unknown query_id {q}")))?),
        None => None,
    };
    Ok(EvalInstance {
        user_id: target.user_id,
        history_prefix: UserHistory { user_id: target.user_id, interactions: prefix.to_vec() },
        target: target.clone(),
        candidates,
        task: target.behavior.into(),
        query,
    })
}

/// Last interaction → test, second-to-last → validation, the rest → training.
pub fn split_leave_one_out(corpus: &Corpus, seed: u64) -> Result<DatasetSplit> {
    let all_items = corpus.item_ids();
    let positives = corpus.user_positives();
    let empty = HashSet::new();
    let mut split = DatasetSplit { train_histories: Vec::new(), valid: Vec::new(), test: Vec::new() };
    for h in corpus.histories() {
        let n = h.len();
        if n < 3 {
            return Err(Error::User { user_id: h.user_id, reason: format!("{n} interactions, leave-one-out needs at least 3") });
        }
        let pos = positives.get(&h.user_id).unwrap_or(&empty);
        let rows = &h.interactions;
        split.valid.push(instance(corpus, pos, &all_items, &rows[..n - 2], &rows[n - 2], seed)?);
        split.test.push(instance(corpus, pos, &all_items, &rows[..n - 1], &rows[n - 1], seed)?);
        split.train_histories.push(UserHistory { user_id: h.user_id, interactions: rows[..n - 2].to_vec() });
    }
    Ok(split)
}

/// Windows are half-open: with `end = max timestamp + 1`, test covers
/// `[end − test_window, end)`, validation the `valid_window` before it, and
/// training everything earlier. Evaluation instances are built from window
/// interactions that have at least one earlier interaction of the same user.
pub fn split_temporal(corpus: &Corpus, test_window: i64, valid_window: i64, seed: u64) -> Result<DatasetSplit> {
    if test_window <= 0 || valid_window <= 0 {
        return Err(Error::Config("temporal windows must be positive".into()));
    }
    let stamps: BTreeSet<i64> = corpus.interactions().iter().map(|r| r.timestamp).collect();
    let (Some(&first), Some(&last)) = (stamps.first(), stamps.last()) else {
        return Err(Error::Data("temporal split of an empty corpus".into()));
    };
    let end = last + 1;
    let test_start = end - test_window;
    let valid_start = test_start - valid_window;
    if first >= valid_start {
        return Err(Error::Data(format!(
            "timestamps span [{first}, {last}] leave no training window before {valid_start}"
        )));
    }
    if !stamps.iter().any(|&t| (valid_start..test_start).contains(&t)) {
        return Err(Error::Data("validation window is empty".into()));
    }
    let all_items = corpus.item_ids();
    let positives = corpus.user_positives();
    let empty = HashSet::new();
    let mut split = DatasetSplit { train_histories: Vec::new(), valid: Vec::new(), test: Vec::new() };
    for h in corpus.histories() {
        let pos = positives.get(&h.user_id).unwrap_or(&empty);
        let rows = &h.interactions;
        let train: Vec<InteractionRecord> = rows.iter().filter(|r| r.timestamp < valid_start).cloned().collect();
        if !train.is_empty() {
            split.train_histories.push(UserHistory { user_id: h.user_id, interactions: train });
        }
        for (j, r) in rows.iter().enumerate() {
            if j == 0 || r.timestamp < valid_start {
                continue;
            }
            let inst = instance(corpus, pos, &all_items, &rows[..j], r, seed)?;
            if r.timestamp >= test_start {
                split.test.push(inst);
            } else {
                split.valid.push(inst);
            }
        }
    }
    if split.test.is_empty() {
        return Err(Error::Data("test window contains no evaluable interactions".into()));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, Behavior, GeneratorConfig, ItemRecord};
    use crate::par::Exec;

    fn items(n: u64) -> Vec<ItemRecord> {
        (0..n)
            .map(|i| ItemRecord { item_id: i, category_path: vec!["Books".into()], description_tokens: vec!["books".into()] })
            .collect()
    }

    fn rec(user: u64, item: u64, ts: i64) -> InteractionRecord {
        InteractionRecord { user_id: user, item_id: item, behavior: Behavior::Rec, query_id: None, timestamp: ts, label: true }
    }

    #[test]
    fn forced_candidate_set() {
        let all: Vec<u64> = (0..101).collect();
        let positives: HashSet<u64> = [0, 1].into_iter().collect();
        let c = sample_candidates(5, 0, &positives, &all, 99, 3).unwrap();
        let expected: Vec<u64> = std::iter::once(0).chain(2..101).collect();
        assert_eq!(c, expected);
    }

    #[test]
    fn insufficient_negatives_names_the_user() {
        let all: Vec<u64> = (0..50).collect();
        let err = sample_candidates(42, 0, &HashSet::new(), &all, 99, 0).unwrap_err();
        assert!(err.to_string().contains("user 42"));
    }

    #[test]
    fn sampling_is_seeded() {
        let all: Vec<u64> = (0..10_000).collect();
        let p = HashSet::new();
        let a = sample_candidates(1, 7, &p, &all, 99, 0).unwrap();
        assert_eq!(a, sample_candidates(1, 7, &p, &all, 99, 0).unwrap());
        assert_ne!(a, sample_candidates(1, 7, &p, &all, 99, 1).unwrap());
    }

    #[test]
    fn three_item_history_leave_one_out() {
        let c = Corpus::new(items(150), vec![], vec![rec(0, 10, 1), rec(0, 11, 2), rec(0, 12, 3)]).unwrap();
        let s = split_leave_one_out(&c, 0).unwrap();
        assert_eq!(s.train_histories[0].item_ids().collect::<Vec<_>>(), vec![10]);
        assert_eq!(s.valid[0].target_item(), 11);
        assert_eq!(s.test[0].target_item(), 12);
        assert_eq!(s.test[0].history_prefix.item_ids().collect::<Vec<_>>(), vec![10, 11]);
    }

    #[test]
    fn short_history_is_rejected_with_id() {
        let c = Corpus::new(items(150), vec![], vec![rec(9, 1, 1), rec(9, 2, 2)]).unwrap();
        assert!(split_leave_one_out(&c, 0).unwrap_err().to_string().contains("user 9"));
    }

    #[test]
    fn leave_one_out_is_a_partition_and_instances_are_valid() {
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 20, ..Default::default() }, Exec::Sequential).unwrap();
        let s = split_leave_one_out(&c, 11).unwrap();
        let mut merged: Vec<InteractionRecord> = s.train_interactions().cloned().collect();
        merged.extend(s.valid.iter().map(|i| i.target.clone()));
        merged.extend(s.test.iter().map(|i| i.target.clone()));
        let key = |r: &InteractionRecord| (r.user_id, r.timestamp, r.item_id);
        merged.sort_by_key(key);
        let mut orig = c.interactions().to_vec();
        orig.sort_by_key(key);
        assert_eq!(merged, orig);
        let positives = c.user_positives();
        for inst in s.valid.iter().chain(&s.test) {
            assert_eq!(inst.candidates.len(), CANDIDATE_COUNT);
            assert!(inst.candidates.contains(&inst.target_item()));
            let pos = &positives[&inst.user_id];
            assert!(inst.candidates.iter().all(|c| *c == inst.target_item() || !pos.contains(c)));
            assert_eq!(inst.query.is_some(), inst.task == Task::Search);
            assert!(inst.history_prefix.interactions.iter().all(|r| r.timestamp < inst.target.timestamp));
        }
    }

    #[test]
    fn unit_windows_split_three_timestamps() {
        let c = Corpus::new(items(150), vec![], vec![rec(0, 1, 1), rec(0, 2, 2), rec(0, 3, 3)]).unwrap();
        let s = split_temporal(&c, 1, 1, 0).unwrap();
        assert_eq!(s.train_histories[0].item_ids().collect::<Vec<_>>(), vec![1]);
        assert_eq!(s.valid.iter().map(|i| i.target_item()).collect::<Vec<_>>(), vec![2]);
        assert_eq!(s.test.iter().map(|i| i.target_item()).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn window_boundaries_are_half_open() {
        // end = 21, test = [16, 21), valid = [11, 16), train < 11.
        let c = Corpus::new(
            items(150),
            vec![],
            vec![rec(0, 1, 5), rec(0, 2, 10), rec(0, 3, 11), rec(0, 4, 15), rec(0, 5, 16), rec(0, 6, 20)],
        )
        .unwrap();
        let s = split_temporal(&c, 5, 5, 0).unwrap();
        assert_eq!(s.train_histories[0].item_ids().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(s.valid.iter().map(|i| i.target_item()).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(s.test.iter().map(|i| i.target_item()).collect::<Vec<_>>(), vec![5, 6]);
    }

    #[test]
    fn empty_test_window_is_an_error() {
        // Nothing evaluable falls in [3, 4): the only event there opens a user's history.
        let c = Corpus::new(items(150), vec![], vec![rec(0, 1, 1), rec(0, 2, 2), rec(1, 3, 3)]).unwrap();
        assert!(split_temporal(&c, 1, 1, 0).is_err());
    }

    #[test]
    fn degenerate_span_is_rejected() {
        let c = Corpus::new(items(150), vec![], vec![rec(0, 1, 1), rec(0, 2, 2)]).unwrap();
        assert!(split_temporal(&c, 1, 1, 0).is_err());
    }
}
