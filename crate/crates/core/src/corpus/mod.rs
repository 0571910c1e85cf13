//! Unified search & recommendation corpora: records, validation, statistics.

mod generate;
mod io;
mod query;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_synthetic_corpus, GeneratorConfig};
pub use io::{read_corpus, write_corpus, write_stats, ITEMS_FILE, INTERACTIONS_FILE, QUERIES_FILE, STATS_FILE};
pub use query::{derive_query_from_categories, query_terms, STOP_TERMS};
pub use split::{sample_candidates, split_leave_one_out, split_temporal, DatasetSplit, EvalInstance, CANDIDATE_COUNT};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: u64,
    pub category_path: Vec<String>,
    pub description_tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub tokens: Vec<String>,
    pub source_category_path: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Src,
    Rec,
}

/// The two unified tasks. A `src` interaction is a search instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Search,
    Rec,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Search, Task::Rec];

    pub fn name(self) -> &'static str {
        match self {
            Task::Search => "search",
            Task::Rec => "rec",
        }
    }
}

impl From<Behavior> for Task {
    fn from(b: Behavior) -> Self {
        match b {
            Behavior::Src => Task::Search,
            Behavior::Rec => Task::Rec,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: u64,
    pub item_id: u64,
    pub behavior: Behavior,
    #[serde(default)]
    pub query_id: Option<u64>,
    pub timestamp: i64,
    pub label: bool,
}

/// One user's interactions in chronological order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: u64,
    pub interactions: Vec<InteractionRecord>,
}

impl UserHistory {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.interactions.iter().map(|r| r.item_id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub queries: usize,
    pub inter_s: usize,
    pub inter_r: usize,
}

/// A validated corpus. Items are kept sorted by id; interactions are kept
/// grouped by user and ordered by timestamp, ties by insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    items: Vec<ItemRecord>,
    queries: Vec<QueryRecord>,
    interactions: Vec<InteractionRecord>,
    item_index: HashMap<u64, usize>,
    query_index: HashMap<u64, usize>,
}

impl Corpus {
    pub fn new(
        mut items: Vec<ItemRecord>,
        mut queries: Vec<QueryRecord>,
        interactions: Vec<InteractionRecord>,
    ) -> Result<Self> {
        items.sort_by_key(|i| i.item_id);
        queries.sort_by_key(|q| q.query_id);
        let mut item_index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item_index.insert(item.item_id, i).is_some() {
                return Err(Error::Data(format!("duplicate item_id {}", item.item_id)));
            }
            if item.category_path.is_empty() {
                return Err(Error::Data(format!("item {} has an empty category_path", item.item_id)));
            }
            if item.description_tokens.is_empty() {
                return Err(Error::Data(format!("item {} has no description tokens", item.item_id)));
            }
        }
        let mut query_index = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if query_index.insert(q.query_id, i).is_some() {
                return Err(Error::Data(format!("duplicate query_id {}", q.query_id)));
            }
            if q.tokens.is_empty() {
                return Err(Error::Data(format!("query {} has no tokens", q.query_id)));
            }
        }
        for r in &interactions {
            if !item_index.contains_key(&r.item_id) {
                return Err(Error::UnknownItem(r.item_id));
            }
            match (r.behavior, r.query_id) {
                (Behavior::Src, None) => {
                    return Err(Error::User { user_id: r.user_id, reason: "search interaction without query_id".into() })
                }
                (Behavior::Rec, Some(_)) => {
                    return Err(Error::User { user_id: r.user_id, reason: "recommendation interaction with query_id".into() })
                }
                (Behavior::Src, Some(q)) if !query_index.contains_key(&q) => {
                    return Err(Error::Data(format!("interaction references unknown query_id {q}")))
                }
                _ => {}
            }
        }
        // Stable sort keeps insertion order for equal timestamps.
        let mut interactions = interactions;
        interactions.sort_by_key(|r| (r.user_id, r.timestamp));
        Ok(Self { items, queries, interactions, item_index, query_index })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), Vec::new()).expect("empty corpus is valid")
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn interactions(&self) -> &[InteractionRecord] {
        &self.interactions
    }

    /// Dense row index of an item (position in id order).
    pub fn item_index(&self, item_id: u64) -> Option<usize> {
        self.item_index.get(&item_id).copied()
    }

    pub fn item(&self, item_id: u64) -> Option<&ItemRecord> {
        self.item_index(item_id).map(|i| &self.items[i])
    }

    pub fn query(&self, query_id: u64) -> Option<&QueryRecord> {
        self.query_index.get(&query_id).map(|&i| &self.queries[i])
    }

    pub fn item_ids(&self) -> Vec<u64> {
        self.items.iter().map(|i| i.item_id).collect()
    }

    /// Distinct user ids in ascending order.
    pub fn user_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.interactions.iter().map(|r| r.user_id).collect();
        ids.dedup();
        ids
    }

    /// Per-user chronological histories in user id order.
    pub fn histories(&self) -> Vec<UserHistory> {
        let mut out: Vec<UserHistory> = Vec::new();
        for r in &self.interactions {
            match out.last_mut() {
                Some(h) if h.user_id == r.user_id => h.interactions.push(r.clone()),
                _ => out.push(UserHistory { user_id: r.user_id, interactions: vec![r.clone()] }),
            }
        }
        out
    }

    /// Items each user interacted with positively.
    pub fn user_positives(&self) -> BTreeMap<u64, HashSet<u64>> {
        let mut map: BTreeMap<u64, HashSet<u64>> = BTreeMap::new();
        for r in self.interactions.iter().filter(|r| r.label) {
            map.entry(r.user_id).or_default().insert(r.item_id);
        }
        map
    }
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let inter_s = corpus.interactions.iter().filter(|r| r.behavior == Behavior::Src).count();
    CorpusStats {
        users: corpus.user_ids().len(),
        items: corpus.items.len(),
        queries: corpus.queries.len(),
        inter_s,
        inter_r: corpus.interactions.len() - inter_s,
    }
}
