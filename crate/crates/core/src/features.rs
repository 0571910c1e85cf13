//! Model-agnostic training and scoring examples, and the lookups both
//! paradigms use to turn them into input features.

use crate::cf::CfTable;
use crate::corpus::{Corpus, EvalInstance, Task};
use crate::error::{Error, Result};
use crate::genmodel::Vocabulary;
use crate::tensor::Mat;

/// One (history, item) pair with its click label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub user_id: u64,
    /// Most recent interactions last, truncated to the model's window.
    pub history: Vec<u64>,
    pub item: u64,
    pub label: bool,
    pub task: Task,
    pub query: Option<Vec<String>>,
}

impl Example {
    pub fn from_instance(inst: &EvalInstance, item: u64, max_history: usize) -> Self {
        let ids: Vec<u64> = inst.history_prefix.item_ids().collect();
        Self {
            user_id: inst.user_id,
            history: truncate(&ids, max_history),
            item,
            label: item == inst.target_item(),
            task: inst.task,
            query: inst.query.as_ref().map(|q| q.tokens.clone()),
        }
    }
}

/// The last `max` entries.
pub fn truncate(ids: &[u64], max: usize) -> Vec<u64> {
    ids[ids.len().saturating_sub(max)..].to_vec()
}

/// Lookups from item ids to CF rows and description token ids.
pub struct Features<'a> {
    pub corpus: &'a Corpus,
    pub cf: &'a CfTable,
    pub vocab: &'a Vocabulary,
    desc: Vec<Vec<usize>>,
}

impl<'a> Features<'a> {
    pub fn new(corpus: &'a Corpus, cf: &'a CfTable, vocab: &'a Vocabulary) -> Result<Self> {
        if cf.item_ids != corpus.item_ids() {
            return Err(Error::Data("CF table items do not match the corpus".into()));
        }
        if vocab.item_ids() != cf.item_ids.as_slice() {
            return Err(Error::Data("vocabulary items do not match the corpus".into()));
        }
        let desc = corpus.items().iter().map(|i| vocab.words(&i.description_tokens)).collect();
        Ok(Self { corpus, cf, vocab, desc })
    }

    pub fn description(&self, item_id: u64) -> Result<&[usize]> {
        let i = self.corpus.item_index(item_id).ok_or(Error::UnknownItem(item_id))?;
        Ok(&self.desc[i])
    }

    pub fn descriptions(&self, item_ids: &[u64]) -> Result<Vec<Vec<usize>>> {
        item_ids.iter().map(|&i| self.description(i).map(<[usize]>::to_vec)).collect()
    }

    pub fn cf_rows(&self, item_ids: &[u64]) -> Result<Mat> {
        crate::dual::lookup_cf_history(item_ids, self.cf)
    }

    pub fn query_ids(&self, ex: &Example) -> Vec<usize> {
        ex.query.as_deref().map(|q| self.vocab.words(q)).unwrap_or_default()
    }
}
