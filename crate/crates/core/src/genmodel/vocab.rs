use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::prompt::template_words;
use crate::corpus::Corpus;

/// Reserved token ids.
pub mod special {
    pub const PH1: usize = 0;
    pub const PH2: usize = 1;
    pub const PH3: usize = 2;
    pub const PH4: usize = 3;
    pub const YES: usize = 4;
    pub const NO: usize = 5;
    pub const BOS: usize = 6;
    pub const EOS: usize = 7;
    pub const UNK: usize = 8;
    pub const COUNT: usize = 9;
    pub const NAMES: [&str; COUNT] = ["⟨PH1⟩", "⟨PH2⟩", "⟨PH3⟩", "⟨PH4⟩", "⟨yes⟩", "⟨no⟩", "⟨bos⟩", "⟨eos⟩", "⟨unk⟩"];
}

/// Specials, then one token per item in id order, then words in order of
/// first occurrence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    item_ids: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub fn item_token_name(item_id: u64) -> String {
    format!("⟨item:{item_id}⟩")
}

impl Vocabulary {
    /// Word sources in order: item descriptions, queries, prompt templates.
    pub fn build(corpus: &Corpus) -> Self {
        let item_ids = corpus.item_ids();
        let mut tokens: Vec<String> = special::NAMES.iter().map(|s| s.to_string()).collect();
        tokens.extend(item_ids.iter().map(|&i| item_token_name(i)));
        let mut v = Self::from_parts(tokens, item_ids);
        let words = corpus
            .items()
            .iter()
            .flat_map(|i| i.description_tokens.iter().cloned())
            .chain(corpus.queries().iter().flat_map(|q| q.tokens.iter().cloned()))
            .chain(template_words());
        for w in words {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.tokens.len());
                v.tokens.push(w);
            }
        }
        v
    }

    /// Rebuilds the lookup index from a token list.
    pub fn from_parts(tokens: Vec<String>, item_ids: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, item_ids, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Word id, `⟨unk⟩` when absent.
    pub fn word(&self, w: &str) -> usize {
        self.index.get(w).copied().unwrap_or(special::UNK)
    }

    pub fn words(&self, ws: &[String]) -> Vec<usize> {
        ws.iter().map(|w| self.word(w)).collect()
    }

    pub fn item_token(&self, item_id: u64) -> Option<usize> {
        self.item_ids.binary_search(&item_id).ok().map(|i| special::COUNT + i)
    }

    pub fn token_item(&self, token: usize) -> Option<u64> {
        token.checked_sub(special::COUNT).and_then(|i| self.item_ids.get(i).copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, GeneratorConfig};
    use crate::par::Exec;

    #[test]
    fn layout_is_deterministic_with_reserved_slots() {
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 3, ..Default::default() }, Exec::Sequential).unwrap();
        let a = Vocabulary::build(&c);
        assert_eq!(a, Vocabulary::build(&c));
        assert_eq!(a.tokens()[special::YES], "⟨yes⟩");
        assert_eq!(a.tokens()[special::NO], "⟨no⟩");
        let item_tokens = a.tokens().iter().filter(|t| t.starts_with("⟨item:")).count();
        assert_eq!(item_tokens, c.items().len());
        assert_eq!(a.item_token(0), Some(special::COUNT));
        assert_eq!(a.token_item(special::COUNT + 4), Some(4));
        assert_eq!(a.word("no-such-word"), special::UNK);
        // the first word is the first description token of item 0
        assert_eq!(a.tokens()[special::COUNT + c.items().len()], c.items()[0].description_tokens[0]);
    }
}
