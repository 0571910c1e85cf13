//! Dual-view history representations and candidate-conditioned soft filtering.
//!
//! The CF view encodes rows of the pretrained CF table at width `d`; the
//! semantic view encodes mean-pooled description-token embeddings at the
//! model width `d′`. Each view is `C = FFN(MSA(E + P))` with bidirectional
//! attention and no residual path. Soft filtering weighs the encoded rows by a
//! softmax over head-averaged scaled dot products against the candidate.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::cf::CfTable;
use crate::error::Result;
use crate::nn::{init_weight, FeedForward, Linear, MultiHeadAttention};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Mat;

/// `N × d` CF rows of a history, in chronological order.
pub fn lookup_cf_history(item_ids: &[u64], table: &CfTable) -> Result<Mat> {
    let mut rows = Vec::with_capacity(item_ids.len());
    for &id in item_ids {
        rows.push(table.item_row(id)?.to_vec());
    }
    Ok(Mat::from_rows(&rows))
}

/// `N × d′` semantic rows: mean of each item's description-token embeddings.
pub fn embed_semantic_history(t: &mut Tape<'_>, token_table: Var, token_groups: &[Vec<usize>]) -> Var {
    t.segment_mean(token_table, token_groups)
}

#[derive(Clone, Debug)]
pub struct ViewEncoder {
    pub positions: Option<ParamId>,
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
}

impl ViewEncoder {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        width: usize,
        heads: usize,
        max_len: usize,
        positional: bool,
        rng: &mut R,
    ) -> Self {
        let positions = positional.then(|| ps.add(format!("{name}.pos"), Mat::randn(max_len, width, 0.1, rng)));
        Self {
            positions,
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), width, heads, rng),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), width, 2 * width, width, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape<'_>, e: Var) -> Var {
        let x = match self.positions {
            Some(p) => {
                let n = t.value(e).rows();
                let table = t.param(p);
                assert!(n <= t.value(table).rows(), "history longer than the positional table");
                let pos = t.slice_rows(table, 0, n);
                t.add(e, pos)
            }
            None => e,
        };
        let a = self.attn.forward(t, x, x, false);
        self.ffn.forward(t, a)
    }
}

/// Candidate-to-history cross-attention scoring plus the value projection.
#[derive(Clone, Debug)]
pub struct SoftFilter {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub heads: usize,
    pub width: usize,
}

impl SoftFilter {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && width % heads == 0, "head count {heads} must divide width {width}");
        Self {
            wq: ps.add(format!("{name}.wq"), init_weight(width, width, rng)),
            wk: ps.add(format!("{name}.wk"), init_weight(width, width, rng)),
            wv: ps.add(format!("{name}.wv"), init_weight(width, width, rng)),
            heads,
            width,
        }
    }

    /// Head-averaged scaled dot-product scores, `1 × N`.
    pub fn scores(&self, t: &mut Tape<'_>, query: Var, h: Var) -> Var {
        let (wq, wk) = (t.param(self.wq), t.param(self.wk));
        let q = t.matmul(query, wq);
        let k = t.matmul(h, wk);
        let dh = self.width / self.heads;
        let mut total = None;
        for head in 0..self.heads {
            let (qh, kh) = (t.slice_cols(q, head * dh, dh), t.slice_cols(k, head * dh, dh));
            let s = t.matmul_nt(qh, kh);
            total = Some(match total {
                None => s,
                Some(acc) => t.add(acc, s),
            });
        }
        let total = total.expect("at least one head");
        t.scale(total, 1.0 / (self.heads as f64 * (dh as f64).sqrt()))
    }

    /// Importance weights `α`, a `1 × N` probability row.
    pub fn importance(&self, t: &mut Tape<'_>, query: Var, h: Var) -> Var {
        let s = self.scores(t, query, h);
        t.softmax_rows(s)
    }

    /// `Σ_j α_j · (h_j W_V)`, a `1 × width` row.
    pub fn filter(&self, t: &mut Tape<'_>, alpha: Var, h: Var) -> Var {
        let wv = t.param(self.wv);
        let v = t.matmul(h, wv);
        t.matmul(alpha, v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualConfig {
    pub cf_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub max_history: usize,
    pub positional: bool,
}

/// Both views, both filters and the CF-to-model-width projection.
#[derive(Clone, Debug)]
pub struct DualRepr {
    pub cfg: DualConfig,
    pub cf_encoder: ViewEncoder,
    pub sem_encoder: ViewEncoder,
    pub cf_filter: SoftFilter,
    pub sem_filter: SoftFilter,
    pub proj: Linear,
}

/// Width-`d′` vectors inserted into a prompt.
#[derive(Clone, Copy, Debug)]
pub struct Views {
    pub cf: Var,
    pub sem: Var,
}

impl DualRepr {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, cfg: DualConfig, rng: &mut R) -> Self {
        Self {
            cf_encoder: ViewEncoder::new(ps, "dual.cf_enc", cfg.cf_dim, cfg.heads, cfg.max_history, cfg.positional, rng),
            sem_encoder: ViewEncoder::new(ps, "dual.sem_enc", cfg.width, cfg.heads, cfg.max_history, cfg.positional, rng),
            cf_filter: SoftFilter::new(ps, "dual.cf_filter", cfg.cf_dim, cfg.heads, rng),
            sem_filter: SoftFilter::new(ps, "dual.sem_filter", cfg.width, cfg.heads, rng),
            proj: Linear::new(ps, "dual.proj", cfg.cf_dim, cfg.width, true, rng),
            cfg,
        }
    }

    /// Encoded histories `(C_u, S_u)`.
    pub fn encode(&self, t: &mut Tape<'_>, cf_history: Var, sem_history: Var) -> (Var, Var) {
        (self.cf_encoder.forward(t, cf_history), self.sem_encoder.forward(t, sem_history))
    }

    pub fn project(&self, t: &mut Tape<'_>, v: Var) -> Var {
        self.proj.forward(t, v)
    }

    /// Candidate-filtered summaries, CF side projected to `d′`.
    pub fn filtered(&self, t: &mut Tape<'_>, c_u: Var, s_u: Var, cand_cf: Var, cand_sem: Var) -> Views {
        let a = self.cf_filter.importance(t, cand_cf, c_u);
        let cf = self.cf_filter.filter(t, a, c_u);
        let b = self.sem_filter.importance(t, cand_sem, s_u);
        let sem = self.sem_filter.filter(t, b, s_u);
        Views { cf: self.project(t, cf), sem }
    }

    /// Mean-pooled summaries for candidate-free prompts.
    pub fn pooled(&self, t: &mut Tape<'_>, c_u: Var, s_u: Var) -> Views {
        let cf = t.mean_rows(c_u);
        let sem = t.mean_rows(s_u);
        Views { cf: self.project(t, cf), sem }
    }
}
