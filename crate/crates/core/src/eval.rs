//! Recall@K / NDCG@K over re-ranking and full-ranking instances.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{EvalInstance, Task};
use crate::error::{Error, Result};
use crate::features::{Example, Features};
use crate::genmodel::GenSr;
use crate::par::Exec;
use crate::training::DiscModel;

/// Cut-offs reported for every task.
pub const KS: [usize; 2] = [5, 10];

/// Items with scores, best first; ties broken by ascending id.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    entries: Vec<(u64, f64)>,
}

impl RankedList {
    pub fn from_scores(ids: &[u64], scores: &[f64]) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::Shape(format!("{} ids vs {} scores", ids.len(), scores.len())));
        }
        if let Some(s) = scores.iter().find(|s| s.is_nan()) {
            return Err(Error::Numerical(format!("score {s} cannot be ranked")));
        }
        let mut entries: Vec<(u64, f64)> = ids.iter().copied().zip(scores.iter().copied()).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Data("duplicate ids in ranked list".into()));
        }
        Ok(Self { entries })
    }

    /// Already ordered list (e.g. beam output); scores must be non-increasing.
    pub fn from_ordered(entries: Vec<(u64, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::Data("ranked scores must be non-increasing".into()));
        }
        let mut ids: Vec<u64> = entries.iter().map(|e| e.0).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data("duplicate ids in ranked list".into()));
        }
        Ok(Self { entries })
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: u64) -> Option<usize> {
        self.entries.iter().position(|e| e.0 == id).map(|p| p + 1)
    }

    fn target_rank(&self, target: u64) -> Result<usize> {
        self.rank_of(target).ok_or_else(|| Error::Data(format!("target {target} is not in the ranked list")))
    }
}

pub fn recall_at_k(ranked: &RankedList, target: u64, k: usize) -> Result<f64> {
    Ok(if ranked.target_rank(target)? <= k { 1.0 } else { 0.0 })
}

pub fn ndcg_at_k(ranked: &RankedList, target: u64, k: usize) -> Result<f64> {
    let r = ranked.target_rank(target)?;
    Ok(if r <= k { 1.0 / ((r + 1) as f64).log2() } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Recall,
    Ndcg,
}

/// Expected metric under a uniformly random ranking of `n` candidates with
/// one relevant item.
pub fn random_baseline_expectation(n: usize, k: usize, metric: Metric) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::Config(format!("need 0 < K ≤ n, got K = {k}, n = {n}")));
    }
    Ok(match metric {
        Metric::Recall => k as f64 / n as f64,
        Metric::Ndcg => (1..=k).map(|r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / n as f64,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub instances: usize,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
}

impl TaskMetrics {
    pub fn recall(&self, k: usize) -> f64 {
        if k == 5 { self.recall_at_5 } else { self.recall_at_10 }
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        if k == 5 { self.ndcg_at_5 } else { self.ndcg_at_10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub paradigm: String,
    pub mode: String,
    pub search: TaskMetrics,
    pub rec: TaskMetrics,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn task(&self, task: Task) -> &TaskMetrics {
        match task {
            Task::Search => &self.search,
            Task::Rec => &self.rec,
        }
    }

    /// SHA-256 of the canonical JSON of `config`.
    pub fn with_config_hash<C: Serialize>(mut self, config: &C) -> Result<Self> {
        self.config_hash = sha256_hex(serde_json::to_string(config)?.as_bytes());
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Averages per-instance metrics in instance order.
pub fn aggregate(rows: &[(Task, RankedList, u64)]) -> Result<(TaskMetrics, TaskMetrics)> {
    let mut out = [TaskMetrics::default(), TaskMetrics::default()];
    for (task, ranked, target) in rows {
        let m = &mut out[(*task == Task::Rec) as usize];
        m.instances += 1;
        m.recall_at_5 += recall_or_zero(ranked, *target, 5);
        m.recall_at_10 += recall_or_zero(ranked, *target, 10);
        m.ndcg_at_5 += ndcg_or_zero(ranked, *target, 5);
        m.ndcg_at_10 += ndcg_or_zero(ranked, *target, 10);
    }
    for m in &mut out {
        if m.instances > 0 {
            let n = m.instances as f64;
            m.recall_at_5 /= n;
            m.recall_at_10 /= n;
            m.ndcg_at_5 /= n;
            m.ndcg_at_10 /= n;
        }
    }
    let [s, r] = out;
    Ok((s, r))
}

// Full-ranking lists may not contain the target at all.
fn recall_or_zero(ranked: &RankedList, target: u64, k: usize) -> f64 {
    recall_at_k(ranked, target, k).unwrap_or(0.0)
}

fn ndcg_or_zero(ranked: &RankedList, target: u64, k: usize) -> f64 {
    ndcg_at_k(ranked, target, k).unwrap_or(0.0)
}

/// Anything that scores a (history, candidate) example for re-ranking.
pub trait Scorer: Sync {
    fn paradigm(&self) -> &'static str;
    fn score(&self, f: &Features<'_>, ex: &Example) -> Result<f64>;
}

impl Scorer for GenSr {
    fn paradigm(&self) -> &'static str {
        "gensr"
    }

    fn score(&self, f: &Features<'_>, ex: &Example) -> Result<f64> {
        self.score_yes_no(f, ex)
    }
}

impl Scorer for DiscModel {
    fn paradigm(&self) -> &'static str {
        "discriminative"
    }

    fn score(&self, f: &Features<'_>, ex: &Example) -> Result<f64> {
        DiscModel::score(self, f, ex)
    }
}

/// Scores every candidate of every instance and ranks them.
pub fn rank_instances<S: Scorer + ?Sized>(
    scorer: &S,
    f: &Features<'_>,
    instances: &[EvalInstance],
    max_history: usize,
    exec: Exec,
) -> Result<Vec<RankedList>> {
    exec.try_map(instances, |inst| {
        if !inst.candidates.contains(&inst.target_item()) {
            return Err(Error::Data(format!("user {}: target missing from candidates", inst.user_id)));
        }
        let scores = inst
            .candidates
            .iter()
            .map(|&c| scorer.score(f, &Example::from_instance(inst, c, max_history)))
            .collect::<Result<Vec<f64>>>()?;
        RankedList::from_scores(&inst.candidates, &scores)
    })
}

pub fn evaluate_reranking<S: Scorer + ?Sized>(
    scorer: &S,
    f: &Features<'_>,
    instances: &[EvalInstance],
    max_history: usize,
    exec: Exec,
) -> Result<MetricsReport> {
    let ranked = rank_instances(scorer, f, instances, max_history, exec)?;
    let rows: Vec<_> = instances.iter().zip(ranked).map(|(i, r)| (i.task, r, i.target_item())).collect();
    let (search, rec) = aggregate(&rows)?;
    Ok(MetricsReport { paradigm: scorer.paradigm().into(), mode: "rerank".into(), search, rec, config_hash: String::new() })
}

/// Default beam width for full ranking.
pub const DEFAULT_BEAM: usize = 20;

/// Constrained beam search over every corpus item; the top-`beam` list is
/// scored and targets outside it count as misses.
pub fn evaluate_fullranking(model: &GenSr, f: &Features<'_>, instances: &[EvalInstance], beam: usize, exec: Exec) -> Result<MetricsReport> {
    let allowed = f.corpus.item_ids();
    let ranked = exec.try_map(instances, |inst| {
        let ex = Example::from_instance(inst, inst.target_item(), model.cfg.max_history);
        let hyps = model.constrained_beam_search(f, &ex, &allowed, beam, 1)?;
        RankedList::from_ordered(hyps.into_iter().map(|(ids, lp)| (ids[0], lp)).collect())
    })?;
    let rows: Vec<_> = instances.iter().zip(ranked).map(|(i, r)| (i.task, r, i.target_item())).collect();
    let (search, rec) = aggregate(&rows)?;
    Ok(MetricsReport { paradigm: "gensr".into(), mode: "fullrank".into(), search, rec, config_hash: String::new() })
}
