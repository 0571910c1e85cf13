//! Synthetic corpora with planted user–item affinities.
//!
//! Items hang off the leaves of a category tree and carry latent factors
//! clustered around a per-leaf centroid. Each user draws clicks by rejection
//! sampling: a uniformly proposed item is accepted with probability
//! `σ(sharpness · ⟨u, v⟩ / √dim − offset)`. Search clicks carry the query
//! built from the clicked item's category path.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::query::query_terms;
use super::{Behavior, Corpus, InteractionRecord, ItemRecord, QueryRecord};
use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::seed::{self, stream};
use crate::tensor::Mat;

/// Minimum per-user interaction count accepted by the generator.
pub const MIN_INTERACTIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub users: usize,
    pub items: usize,
    pub category_depth: usize,
    pub category_branching: usize,
    /// Per-user interaction counts are uniform in `mean ± spread`.
    pub mean_interactions: usize,
    pub interaction_spread: usize,
    /// Fraction of interactions that are recommendation clicks.
    pub rec_ratio: f64,
    pub latent_dim: usize,
    pub affinity_sharpness: f64,
    pub affinity_offset: f64,
    /// Attribute words appended to each description after the category terms.
    pub filler_tokens: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            users: 50,
            items: 300,
            category_depth: 2,
            category_branching: 4,
            mean_interactions: 20,
            interaction_spread: 5,
            rec_ratio: 0.5,
            latent_dim: 8,
            affinity_sharpness: 8.0,
            affinity_offset: 8.0,
            filler_tokens: 2,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.items < 100 {
            return bad(format!("items = {} but at least 100 are needed for 99-negative candidate lists", self.items));
        }
        if self.users == 0 {
            return bad("users must be positive".into());
        }
        if self.mean_interactions < self.interaction_spread + MIN_INTERACTIONS {
            return bad(format!(
                "mean_interactions - interaction_spread = {} < {MIN_INTERACTIONS}: some users would have fewer than {MIN_INTERACTIONS} interactions",
                self.mean_interactions as i64 - self.interaction_spread as i64
            ));
        }
        if self.mean_interactions + self.interaction_spread > self.items {
            return bad("users cannot click more distinct items than exist".into());
        }
        if self.category_depth == 0 || self.category_branching == 0 {
            return bad("category tree needs depth >= 1 and branching >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.rec_ratio) {
            return bad(format!("rec_ratio {} outside [0, 1]", self.rec_ratio));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        Ok(())
    }
}

const TOP_LEVEL: &[&str] = &[
    "Books", "Electronics", "Garden", "Kitchen", "Toys", "Sports", "Music", "Movies", "Beauty", "Health", "Office",
    "Pets", "Automotive", "Tools", "Clothing", "Games",
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

/// A pronounceable, capitalised pseudo-word unique to `index`.
fn pseudo_word(mut index: usize, syllables: usize) -> String {
    let mut s = String::new();
    for _ in 0..syllables {
        let o = index % ONSETS.len();
        index /= ONSETS.len();
        let n = index % NUCLEI.len();
        index /= NUCLEI.len();
        s.push_str(ONSETS[o]);
        s.push_str(NUCLEI[n]);
    }
    // Disambiguate anything the syllables could not encode.
    if index > 0 {
        s.push_str(&index.to_string());
    }
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => s,
    }
}

/// Leaf category paths of a complete tree, in depth-first order.
fn category_leaves(depth: usize, branching: usize) -> Vec<Vec<String>> {
    let mut paths: Vec<Vec<String>> = vec![Vec::new()];
    let mut counter = 0usize;
    for level in 0..depth {
        let mut next = Vec::with_capacity(paths.len() * branching);
        for p in &paths {
            for b in 0..branching {
                let name = if level == 0 && b < TOP_LEVEL.len() {
                    TOP_LEVEL[b].to_string()
                } else {
                    counter += 1;
                    pseudo_word(counter, 3)
                };
                let mut q = p.clone();
                q.push(name);
                next.push(q);
            }
        }
        paths = next;
    }
    paths
}

fn filler_pool() -> Vec<String> {
    (0..30).map(|i| pseudo_word(10_000 + i * 7, 2).to_lowercase()).collect()
}

struct Catalog {
    items: Vec<ItemRecord>,
    factors: Mat,
    leaf_of_item: Vec<usize>,
    queries: Vec<QueryRecord>,
}

fn build_catalog(cfg: &GeneratorConfig) -> Catalog {
    let mut rng = seed::rng(cfg.seed, &[stream::CORPUS_ITEMS]);
    let leaves = category_leaves(cfg.category_depth, cfg.category_branching);
    let centroids = Mat::randn(leaves.len(), cfg.latent_dim, 1.0, &mut rng);
    let fillers = filler_pool();
    let mut items = Vec::with_capacity(cfg.items);
    let mut factors = Mat::zeros(cfg.items, cfg.latent_dim);
    let mut leaf_of_item = Vec::with_capacity(cfg.items);
    for i in 0..cfg.items {
        // Round-robin over leaves keeps every leaf populated.
        let leaf = if i < leaves.len() { i } else { rng.random_range(0..leaves.len()) };
        leaf_of_item.push(leaf);
        for k in 0..cfg.latent_dim {
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            factors.set(i, k, centroids.at(leaf, k) + 0.5 * noise);
        }
        let mut tokens = query_terms(&leaves[leaf]);
        for _ in 0..cfg.filler_tokens {
            tokens.push(fillers.choose(&mut rng).expect("non-empty pool").clone());
        }
        items.push(ItemRecord { item_id: i as u64, category_path: leaves[leaf].clone(), description_tokens: tokens });
    }
    let queries = leaves
        .iter()
        .enumerate()
        .map(|(q, path)| QueryRecord { query_id: q as u64, tokens: query_terms(path), source_category_path: path.clone() })
        .collect();
    Catalog { items, factors, leaf_of_item, queries }
}

fn generate_user(cfg: &GeneratorConfig, catalog: &Catalog, user: usize) -> Vec<InteractionRecord> {
    let mut rng = seed::rng(cfg.seed, &[stream::CORPUS_USER, user as u64]);
    let lo = cfg.mean_interactions - cfg.interaction_spread;
    let hi = cfg.mean_interactions + cfg.interaction_spread;
    let count = rng.random_range(lo..=hi);
    let latent = Mat::randn(1, cfg.latent_dim, 1.0, &mut rng);
    let norm = (cfg.latent_dim as f64).sqrt();
    let mut clicked = vec![false; cfg.items];
    let mut out = Vec::with_capacity(count);
    let mut timestamp: i64 = rng.random_range(0..1000);
    while out.len() < count {
        let item = rng.random_range(0..cfg.items);
        if clicked[item] {
            continue;
        }
        let affinity = crate::tensor::dot(latent.row(0), catalog.factors.row(item)) / norm;
        let accept = sigmoid(cfg.affinity_sharpness * affinity - cfg.affinity_offset);
        if rng.random::<f64>() >= accept {
            continue;
        }
        clicked[item] = true;
        let behavior = if rng.random::<f64>() < cfg.rec_ratio { Behavior::Rec } else { Behavior::Src };
        let query_id = match behavior {
            Behavior::Src => Some(catalog.leaf_of_item[item] as u64),
            Behavior::Rec => None,
        };
        timestamp += rng.random_range(1..=50);
        out.push(InteractionRecord { user_id: user as u64, item_id: item as u64, behavior, query_id, timestamp, label: true });
    }
    out
}

/// Builds a corpus as a pure function of the configuration.
pub fn generate_synthetic_corpus(cfg: &GeneratorConfig, exec: Exec) -> Result<Corpus> {
    cfg.validate()?;
    let catalog = build_catalog(cfg);
    let users: Vec<usize> = (0..cfg.users).collect();
    let per_user = exec.map(&users, |&u| generate_user(cfg, &catalog, u));
    let interactions: Vec<InteractionRecord> = per_user.into_iter().flatten().collect();
    Corpus::new(catalog.items, catalog.queries, interactions)
}
