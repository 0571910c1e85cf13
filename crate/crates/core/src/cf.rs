//! Collaborative-filtering pretraining: LightGCN-style propagation over the
//! user–item click graph, trained with BPR.
//!
//! Node embeddings are stacked users-first into one `(users + items) × d`
//! matrix. Propagation is a fixed linear map with a symmetric operator, so the
//! gradient with respect to the base embeddings is the propagated gradient of
//! the output.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus};
use crate::corpus::{Behavior, Corpus, InteractionRecord};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::tensor::{dot, Mat};

#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    /// `(user_index, item_index)`, sorted, no duplicates.
    edges: Vec<(usize, usize)>,
    user_degree: Vec<usize>,
    item_degree: Vec<usize>,
}

impl BipartiteGraph {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users() + self.n_items()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn user_degree(&self) -> &[usize] {
        &self.user_degree
    }

    pub fn item_degree(&self) -> &[usize] {
        &self.item_degree
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }
}

/// Graph over the given node sets from recommendation clicks. Every
/// interaction must be a positive `rec` record on known nodes.
pub fn build_graph(interactions: &[InteractionRecord], user_ids: &[u64], item_ids: &[u64]) -> Result<BipartiteGraph> {
    let uidx: HashMap<u64, usize> = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let iidx: HashMap<u64, usize> = item_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut set = BTreeSet::new();
    for r in interactions {
        if r.behavior != Behavior::Rec || !r.label {
            return Err(Error::Data(format!("graph edges must be rec positives (user {}, item {})", r.user_id, r.item_id)));
        }
        let u = *uidx.get(&r.user_id).ok_or_else(|| Error::User { user_id: r.user_id, reason: "not a graph node".into() })?;
        let i = *iidx.get(&r.item_id).ok_or(Error::UnknownItem(r.item_id))?;
        set.insert((u, i));
    }
    if set.is_empty() {
        return Err(Error::Data("no recommendation positives to build the CF graph from".into()));
    }
    let edges: Vec<(usize, usize)> = set.into_iter().collect();
    let mut user_degree = vec![0; user_ids.len()];
    let mut item_degree = vec![0; item_ids.len()];
    for &(u, i) in &edges {
        user_degree[u] += 1;
        item_degree[i] += 1;
    }
    Ok(BipartiteGraph { user_ids: user_ids.to_vec(), item_ids: item_ids.to_vec(), edges, user_degree, item_degree })
}

/// Mean over layers `0..=layers` of repeated symmetric-normalised neighbour sums.
pub fn propagate(graph: &BipartiteGraph, e0: &Mat, layers: usize) -> Mat {
    assert_eq!(e0.rows(), graph.n_nodes(), "one embedding row per node");
    let nu = graph.n_users();
    let d = e0.cols();
    let mut total = e0.clone();
    let mut cur = e0.clone();
    for _ in 0..layers {
        let mut next = Mat::zeros(e0.rows(), d);
        for &(u, i) in &graph.edges {
            let w = 1.0 / ((graph.user_degree[u] * graph.item_degree[i]) as f64).sqrt();
            for k in 0..d {
                let (cu, ci) = (cur.at(u, k), cur.at(nu + i, k));
                next.data_mut()[u * d + k] += w * ci;
                next.data_mut()[(nu + i) * d + k] += w * cu;
            }
        }
        total.add_assign(&next);
        cur = next;
    }
    total.scale_in_place(1.0 / (layers + 1) as f64);
    total
}

/// `(user, positive item, negative item)` as dense graph indices.
pub type Triple = (usize, usize, usize);

/// Summed BPR loss over `triples` and its gradient with respect to `e0`.
pub fn bpr_loss_and_grad(graph: &BipartiteGraph, e0: &Mat, layers: usize, triples: &[Triple]) -> (f64, Mat) {
    let p = propagate(graph, e0, layers);
    let nu = graph.n_users();
    let d = e0.cols();
    let mut g = Mat::zeros(p.rows(), d);
    let mut loss = 0.0;
    for &(u, ip, ineg) in triples {
        let (ru, rp, rn) = (u, nu + ip, nu + ineg);
        let x = dot(p.row(ru), p.row(rp)) - dot(p.row(ru), p.row(rn));
        loss += softplus(-x);
        let c = -sigmoid(-x);
        for k in 0..d {
            let (pu, pp, pn) = (p.at(ru, k), p.at(rp, k), p.at(rn, k));
            g.data_mut()[ru * d + k] += c * (pp - pn);
            g.data_mut()[rp * d + k] += c * pu;
            g.data_mut()[rn * d + k] -= c * pu;
        }
    }
    (loss, propagate(graph, &g, layers))
}

/// One SGD step on a single triple; returns the pre-step loss.
pub fn bpr_step(graph: &BipartiteGraph, e0: &mut Mat, layers: usize, triple: Triple, lr: f64) -> f64 {
    let (loss, g) = bpr_loss_and_grad(graph, e0, layers, &[triple]);
    e0.axpy(-lr, &g);
    loss
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfConfig {
    pub dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub init_std: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self { dim: 32, layers: 2, epochs: 60, lr: 0.05, batch: 32, init_std: 0.1, weight_decay: 1e-4, seed: 0 }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch == 0 {
            return Err(Error::Config("cf dim and batch must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.init_std > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("cf lr, init_std and weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Pretrained, propagated user and item embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct CfTable {
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    pub users: Mat,
    pub items: Mat,
    pub seed: u64,
    pub layers: usize,
}

impl CfTable {
    pub fn dim(&self) -> usize {
        self.items.cols()
    }

    pub fn item_row_index(&self, item_id: u64) -> Result<usize> {
        self.item_ids.binary_search(&item_id).map_err(|_| Error::UnknownItem(item_id))
    }

    pub fn item_row(&self, item_id: u64) -> Result<&[f64]> {
        Ok(self.items.row(self.item_row_index(item_id)?))
    }

    pub fn user_row(&self, user_id: u64) -> Option<&[f64]> {
        self.user_ids.binary_search(&user_id).ok().map(|r| self.users.row(r))
    }

    pub fn score(&self, user_id: u64, item_id: u64) -> Result<f64> {
        let u = self.user_row(user_id).ok_or_else(|| Error::User { user_id, reason: "not in CF table".into() })?;
        Ok(dot(u, self.item_row(item_id)?))
    }
}

pub fn init_embeddings(n_nodes: usize, cfg: &CfConfig) -> Mat {
    Mat::randn(n_nodes, cfg.dim, cfg.init_std, &mut seed::rng(cfg.seed, &[stream::CF_INIT]))
}

/// Trains on the rec positives among `training`; rows cover every corpus
/// user and item.
pub fn train_cf(corpus: &Corpus, training: &[InteractionRecord], cfg: &CfConfig) -> Result<CfTable> {
    cfg.validate()?;
    let positives: Vec<InteractionRecord> =
        training.iter().filter(|r| r.behavior == Behavior::Rec && r.label).cloned().collect();
    let user_ids = corpus.user_ids();
    let item_ids = corpus.item_ids();
    let graph = build_graph(&positives, &user_ids, &item_ids)?;
    let mut seen: Vec<HashSet<usize>> = vec![HashSet::new(); graph.n_users()];
    let uidx: HashMap<u64, usize> = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    for r in training {
        if let (Some(&u), Some(i)) = (uidx.get(&r.user_id), corpus.item_index(r.item_id)) {
            seen[u].insert(i);
        }
    }
    let n_items = graph.n_items();
    let mut e0 = init_embeddings(graph.n_nodes(), cfg);
    let mut edges = graph.edges().to_vec();
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.seed, &[stream::CF_TRAIN, epoch as u64]);
        edges.sort_unstable();
        edges.shuffle(&mut rng);
        for chunk in edges.chunks(cfg.batch) {
            let triples: Vec<Triple> = chunk
                .iter()
                .map(|&(u, i)| {
                    let mut j = rng.random_range(0..n_items);
                    // A user who has seen every item keeps j; the triple is then uninformative.
                    for _ in 0..100 {
                        if !seen[u].contains(&j) {
                            break;
                        }
                        j = rng.random_range(0..n_items);
                    }
                    (u, i, j)
                })
                .collect();
            let (_, g) = bpr_loss_and_grad(&graph, &e0, cfg.layers, &triples);
            e0.scale_in_place(1.0 - cfg.lr * cfg.weight_decay);
            e0.axpy(-cfg.lr, &g);
        }
        if !e0.is_finite() {
            return Err(Error::Numerical(format!("CF embeddings became non-finite in epoch {epoch}")));
        }
    }
    let p = propagate(&graph, &e0, cfg.layers);
    let nu = graph.n_users();
    let d = cfg.dim;
    let users = Mat::from_vec(nu, d, p.data()[..nu * d].to_vec());
    let items = Mat::from_vec(n_items, d, p.data()[nu * d..].to_vec());
    if !(users.is_finite() && items.is_finite()) {
        return Err(Error::Numerical("propagated CF embeddings are non-finite".into()));
    }
    Ok(CfTable { user_ids, item_ids, users, items, seed: cfg.seed, layers: cfg.layers })
}

const CF_MAGIC: &[u8; 8] = b"GSRCF001";

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn take_u64(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let b = buf.get(*pos..*pos + 8).ok_or_else(|| Error::Checkpoint("truncated CF checkpoint".into()))?;
    *pos += 8;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

impl CfTable {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(48 + 8 * (self.users.len() + self.items.len() + self.user_ids.len() + self.item_ids.len()));
        w.extend_from_slice(CF_MAGIC);
        for v in [self.user_ids.len() as u64, self.item_ids.len() as u64, self.dim() as u64, self.seed, self.layers as u64] {
            put_u64(&mut w, v);
        }
        for &id in self.user_ids.iter().chain(&self.item_ids) {
            put_u64(&mut w, id);
        }
        for x in self.users.data().iter().chain(self.items.data()) {
            w.extend_from_slice(&x.to_le_bytes());
        }
        w
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.get(..8) != Some(CF_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a CF checkpoint".into()));
        }
        let mut pos = 8;
        let nu = take_u64(buf, &mut pos)? as usize;
        let ni = take_u64(buf, &mut pos)? as usize;
        let d = take_u64(buf, &mut pos)? as usize;
        let seed = take_u64(buf, &mut pos)?;
        let layers = take_u64(buf, &mut pos)? as usize;
        let expected = pos + 8 * (nu + ni) * (1 + d);
        if buf.len() != expected {
            return Err(Error::Checkpoint(format!("CF checkpoint has {} bytes, header implies {expected}", buf.len())));
        }
        let mut ids = Vec::with_capacity(nu + ni);
        for _ in 0..nu + ni {
            ids.push(take_u64(buf, &mut pos)?);
        }
        let floats: Vec<f64> =
            buf[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let item_ids = ids.split_off(nu);
        Ok(Self {
            user_ids: ids,
            item_ids,
            users: Mat::from_vec(nu, d, floats[..nu * d].to_vec()),
            items: Mat::from_vec(ni, d, floats[nu * d..].to_vec()),
            seed,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, split_leave_one_out, GeneratorConfig};
    use crate::par::Exec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn click(u: u64, i: u64) -> InteractionRecord {
        InteractionRecord { user_id: u, item_id: i, behavior: Behavior::Rec, query_id: None, timestamp: 0, label: true }
    }

    #[test]
    fn single_edge_graph() {
        let g = build_graph(&[click(0, 0)], &[0], &[0]).unwrap();
        assert_eq!(g.edges(), &[(0, 0)]);
        assert_eq!((g.user_degree()[0], g.item_degree()[0]), (1, 1));
        let e0 = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        // layer 1 swaps the rows; mean of layers 0 and 1
        let p = propagate(&g, &e0, 1);
        assert_eq!(p.row(0), &[2.0, 3.0]);
        assert_eq!(propagate(&g, &e0, 0), e0);
    }

    #[test]
    fn duplicate_clicks_collapse() {
        let g = build_graph(&[click(0, 0), click(0, 0)], &[0], &[0]).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn clique_degrees() {
        let clicks: Vec<_> = (0..3).flat_map(|u| (0..3).map(move |i| click(u, i))).collect();
        let g = build_graph(&clicks, &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(g.edges().len(), 9);
        assert!(g.user_degree().iter().chain(g.item_degree()).all(|&d| d == 3));
    }

    #[test]
    fn empty_and_search_edges_are_rejected() {
        assert!(build_graph(&[], &[0], &[0]).is_err());
        let mut s = click(0, 0);
        s.behavior = Behavior::Src;
        s.query_id = Some(0);
        assert!(build_graph(&[s], &[0], &[0]).is_err());
    }

    #[test]
    fn path_graph_matches_dense_adjacency_powers() {
        // u0 - i0 - u1 - i1; node order u0, u1, i0, i1
        let g = build_graph(&[click(0, 0), click(1, 0), click(1, 1)], &[0, 1], &[0, 1]).unwrap();
        let deg = [1.0, 2.0, 2.0, 1.0];
        let adj = [(0, 2), (1, 2), (1, 3)];
        let mut a = Mat::zeros(4, 4);
        for (x, y) in adj {
            let w = 1.0 / f64::sqrt(deg[x] * deg[y]);
            a.set(x, y, w);
            a.set(y, x, w);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e0 = Mat::randn(4, 3, 1.0, &mut rng);
        let a1 = a.matmul(&e0);
        let a2 = a.matmul(&a1);
        let mut expected = e0.clone();
        expected.add_assign(&a1);
        expected.add_assign(&a2);
        expected.scale_in_place(1.0 / 3.0);
        assert!(propagate(&g, &e0, 2).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn bpr_loss_reference_values() {
        let g = build_graph(&[click(0, 0)], &[0], &[0, 1]).unwrap();
        // user row, positive, negative; no propagation
        let e0 = Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (loss, _) = bpr_loss_and_grad(&g, &e0, 0, &[(0, 0, 1)]);
        assert!(loss < 2f64.ln());
        let tie = Mat::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.0]]);
        let (loss, _) = bpr_loss_and_grad(&g, &tie, 0, &[(0, 0, 1)]);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bpr_gradient_matches_central_differences() {
        let clicks = [click(0, 0), click(0, 1), click(1, 1), click(1, 2), click(2, 3)];
        let g = build_graph(&clicks, &[0, 1, 2], &[0, 1, 2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e0 = Mat::randn(g.n_nodes(), 4, 0.5, &mut rng);
        let triples = [(0, 0, 2), (1, 2, 3), (2, 3, 0)];
        let (_, grad) = bpr_loss_and_grad(&g, &e0, 2, &triples);
        let h = 1e-6;
        for idx in 0..e0.len() {
            let mut plus = e0.clone();
            plus.data_mut()[idx] += h;
            let mut minus = e0.clone();
            minus.data_mut()[idx] -= h;
            let fd = (bpr_loss_and_grad(&g, &plus, 2, &triples).0 - bpr_loss_and_grad(&g, &minus, 2, &triples).0) / (2.0 * h);
            let a = grad.data()[idx];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - a).abs() < 1e-9, "coord {idx}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn bpr_step_lowers_the_loss() {
        let g = build_graph(&[click(0, 0)], &[0], &[0, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut e0 = Mat::randn(3, 4, 0.3, &mut rng);
        let before = bpr_step(&g, &mut e0, 1, (0, 0, 1), 0.1);
        let (after, _) = bpr_loss_and_grad(&g, &e0, 1, &[(0, 0, 1)]);
        assert!(after < before);
    }

    fn small_setup() -> (Corpus, Vec<InteractionRecord>) {
        let c = generate_synthetic_corpus(&GeneratorConfig::default(), Exec::Sequential).unwrap();
        let s = split_leave_one_out(&c, 0).unwrap();
        let train = s.train_interactions().cloned().collect();
        (c, train)
    }

    #[test]
    fn zero_epochs_is_propagated_initialisation_and_reruns_are_identical() {
        let (c, train) = small_setup();
        let cfg = CfConfig { epochs: 0, ..Default::default() };
        let t = train_cf(&c, &train, &cfg).unwrap();
        let rec: Vec<_> = train.iter().filter(|r| r.behavior == Behavior::Rec).cloned().collect();
        let g = build_graph(&rec, &c.user_ids(), &c.item_ids()).unwrap();
        let p = propagate(&g, &init_embeddings(g.n_nodes(), &cfg), cfg.layers);
        assert_eq!(t.users.data(), &p.data()[..t.users.len()]);
        let cfg = CfConfig { epochs: 3, ..Default::default() };
        assert_eq!(train_cf(&c, &train, &cfg).unwrap().to_bytes(), train_cf(&c, &train, &cfg).unwrap().to_bytes());
    }

    #[test]
    fn held_out_positives_outscore_random_items() {
        let c = generate_synthetic_corpus(&GeneratorConfig::default(), Exec::Sequential).unwrap();
        let s = split_leave_one_out(&c, 0).unwrap();
        let train: Vec<_> = s.train_interactions().cloned().collect();
        let t = train_cf(&c, &train, &CfConfig::default()).unwrap();
        let mut pos = 0.0;
        let mut neg = 0.0;
        let mut n = 0.0;
        for inst in s.valid.iter().chain(&s.test) {
            pos += t.score(inst.user_id, inst.target_item()).unwrap();
            let others: Vec<u64> = inst.candidates.iter().copied().filter(|&i| i != inst.target_item()).collect();
            neg += others.iter().map(|&i| t.score(inst.user_id, i).unwrap()).sum::<f64>() / others.len() as f64;
            n += 1.0;
        }
        assert!(pos / n > neg / n, "positives {} vs negatives {}", pos / n, neg / n);
    }

    #[test]
    fn checkpoint_bytes_round_trip_and_reject_truncation() {
        let t = CfTable {
            user_ids: vec![3],
            item_ids: vec![1, 4],
            users: Mat::from_rows(&[vec![0.5, -1.0]]),
            items: Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
            seed: 9,
            layers: 2,
        };
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 8 + 5 * 8 + 3 * 8 + 6 * 8);
        assert_eq!(CfTable::from_bytes(&bytes).unwrap(), t);
        assert!(CfTable::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(matches!(t.item_row(7), Err(Error::UnknownItem(7))));
    }
}
