use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, DatasetSplit, Task};
use crate::error::{Error, Result};
use crate::features::{truncate, Example};
use crate::genmodel::Mode;
use crate::seed::{self, stream};

/// One optimiser step's examples. `negatives[i]` shares history and task
/// with `positives[i]`; it is empty in full-ranking mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub step: usize,
    pub positives: Vec<Example>,
    pub negatives: Vec<Example>,
}

impl Batch {
    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn count(&self, task: Task) -> usize {
        self.examples().filter(|e| e.task == task).count()
    }
}

/// Deterministic per-epoch batches shared by both paradigms.
#[derive(Clone, Debug)]
pub struct ExampleStream {
    search: Vec<Example>,
    rec: Vec<Example>,
    positives: BTreeMap<u64, HashSet<u64>>,
    item_ids: Vec<u64>,
    batch_size: usize,
    mode: Mode,
    seed: u64,
}

impl ExampleStream {
    /// Every training interaction with at least one earlier interaction
    /// becomes a positive example.
    pub fn new(corpus: &Corpus, split: &DatasetSplit, max_history: usize, batch_size: usize, mode: Mode, seed: u64) -> Result<Self> {
        let mut search = Vec::new();
        let mut rec = Vec::new();
        for h in &split.train_histories {
            let ids: Vec<u64> = h.item_ids().collect();
            for (j, r) in h.interactions.iter().enumerate().skip(1) {
                let query = match r.query_id {
                    Some(q) => Some(corpus.query(q).ok_or_else(|| Error::Data(format!("unknown query_id {q}")))?.tokens.clone()),
                    None => None,
                };
                let ex = Example {
                    user_id: h.user_id,
                    history: truncate(&ids[..j], max_history),
                    item: r.item_id,
                    label: true,
                    task: r.behavior.into(),
                    query,
                };
                match ex.task {
                    Task::Search => search.push(ex),
                    Task::Rec => rec.push(ex),
                }
            }
        }
        if search.is_empty() && rec.is_empty() {
            return Err(Error::Data("no training examples".into()));
        }
        Ok(Self { search, rec, positives: corpus.user_positives(), item_ids: corpus.item_ids(), batch_size, mode, seed })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self, task: Task) -> usize {
        match task {
            Task::Search => self.search.len(),
            Task::Rec => self.rec.len(),
        }
    }

    fn split_counts(&self, step: usize) -> (usize, usize) {
        let b = self.batch_size;
        let s = b / 2 + (b % 2) * (step % 2 == 0) as usize;
        match (self.search.is_empty(), self.rec.is_empty()) {
            (true, _) => (0, b),
            (_, true) => (b, 0),
            _ => (s, b - s),
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        let b = self.batch_size;
        let (s, r) = (self.search.len(), self.rec.len());
        if s == 0 || r == 0 {
            return (s + r).div_ceil(b);
        }
        // Each task gets b/2 slots per step on average.
        (2 * s).div_ceil(b).max((2 * r).div_ceil(b))
    }

    /// Batches of one epoch. Each task stream is shuffled separately; the
    /// shorter one wraps around until the longer one is exhausted.
    pub fn epoch(&self, epoch: usize, first_step: usize) -> Vec<Batch> {
        let mut rng = seed::rng(self.seed, &[stream::EXAMPLES, epoch as u64]);
        let mut s_order: Vec<usize> = (0..self.search.len()).collect();
        let mut r_order: Vec<usize> = (0..self.rec.len()).collect();
        s_order.shuffle(&mut rng);
        r_order.shuffle(&mut rng);
        let (mut si, mut ri) = (0usize, 0usize);
        let mut out = Vec::new();
        for k in 0..self.steps_per_epoch() {
            let step = first_step + k;
            let (ns, nr) = self.split_counts(step);
            let mut positives = Vec::with_capacity(ns + nr);
            for _ in 0..ns {
                positives.push(self.search[s_order[si % s_order.len()]].clone());
                si += 1;
            }
            for _ in 0..nr {
                positives.push(self.rec[r_order[ri % r_order.len()]].clone());
                ri += 1;
            }
            let negatives = match self.mode {
                Mode::Rerank => positives.iter().enumerate().map(|(slot, p)| self.negative(p, epoch, k, slot)).collect(),
                Mode::Fullrank => Vec::new(),
            };
            out.push(Batch { step, positives, negatives });
        }
        out
    }

    fn negative(&self, p: &Example, epoch: usize, k: usize, slot: usize) -> Example {
        let mut rng = seed::rng(self.seed, &[stream::EXAMPLES, epoch as u64, k as u64, slot as u64]);
        let seen = self.positives.get(&p.user_id);
        let mut item = self.item_ids[rng.random_range(0..self.item_ids.len())];
        for _ in 0..1000 {
            if !seen.is_some_and(|s| s.contains(&item)) {
                break;
            }
            item = self.item_ids[rng.random_range(0..self.item_ids.len())];
        }
        Example { item, label: false, ..p.clone() }
    }
}
