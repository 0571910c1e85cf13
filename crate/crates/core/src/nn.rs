//! Layer building blocks shared by the dual-view encoders, the generative
//! backbone and the discriminative baseline.
//!
//! Row convention throughout: a sequence is an `n × width` matrix and a linear
//! map is `x · W`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Mat;

/// Weight matrix with `1/sqrt(fan_in)` normal initialisation.
pub fn init_weight<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::randn(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        let w = ps.add(format!("{name}.w"), init_weight(input, output, rng));
        let b = bias.then(|| ps.add(format!("{name}.b"), Mat::zeros(1, output)));
        Self { w, b }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let w = t.param(self.w);
        let y = t.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, width: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::new(ps, &format!("{name}.inner"), width, hidden, true, rng),
            outer: Linear::new(ps, &format!("{name}.outer"), hidden, out, true, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let h = self.inner.forward(t, x);
        let h = t.gelu(h);
        self.outer.forward(t, h)
    }
}

#[derive(Clone, Debug)]
pub struct RmsNorm {
    pub gain: ParamId,
}

impl RmsNorm {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize) -> Self {
        Self { gain: ps.add(format!("{name}.gain"), Mat::filled(1, width, 1.0)) }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let g = t.param(self.gain);
        t.rms_norm(x, g)
    }
}

/// Scaled dot-product multi-head attention with an output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && width % heads == 0, "head count {heads} must divide width {width}");
        Self {
            wq: ps.add(format!("{name}.wq"), init_weight(width, width, rng)),
            wk: ps.add(format!("{name}.wk"), init_weight(width, width, rng)),
            wv: ps.add(format!("{name}.wv"), init_weight(width, width, rng)),
            wo: ps.add(format!("{name}.wo"), init_weight(width, width, rng)),
            heads,
            width,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.wq, self.wk, self.wv, self.wo]
    }

    /// Attention of `queries` over `memory`; `causal` masks future positions.
    pub fn forward(&self, t: &mut Tape<'_>, queries: Var, memory: Var, causal: bool) -> Var {
        let (wq, wk, wv, wo) = (t.param(self.wq), t.param(self.wk), t.param(self.wv), t.param(self.wo));
        let q = t.matmul(queries, wq);
        let k = t.matmul(memory, wk);
        let v = t.matmul(memory, wv);
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (t.slice_cols(q, h * dh, dh), t.slice_cols(k, h * dh, dh), t.slice_cols(v, h * dh, dh))
            };
            let s = t.matmul_nt(qh, kh);
            let s = t.scale(s, scale);
            let a = if causal { t.causal_softmax_rows(s) } else { t.softmax_rows(s) };
            outs.push(t.matmul(a, vh));
        }
        let o = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        t.matmul(o, wo)
    }
}

/// Pre-norm residual encoder block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm_attn: RmsNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: RmsNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, width: usize, heads: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            norm_attn: RmsNorm::new(ps, &format!("{name}.norm_attn"), width),
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), width, heads, rng),
            norm_ffn: RmsNorm::new(ps, &format!("{name}.norm_ffn"), width),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), width, hidden, width, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let n = self.norm_attn.forward(t, x);
        let a = self.attn.forward(t, n, n, false);
        let x = t.add(x, a);
        let n = self.norm_ffn.forward(t, x);
        let f = self.ffn.forward(t, n);
        t.add(x, f)
    }
}

/// Pre-norm residual decoder block: masked self-attention, cross-attention, FFN.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm_self: RmsNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: RmsNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ffn: RmsNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, width: usize, heads: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            norm_self: RmsNorm::new(ps, &format!("{name}.norm_self"), width),
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self_attn"), width, heads, rng),
            norm_cross: RmsNorm::new(ps, &format!("{name}.norm_cross"), width),
            cross_attn: MultiHeadAttention::new(ps, &format!("{name}.cross_attn"), width, heads, rng),
            norm_ffn: RmsNorm::new(ps, &format!("{name}.norm_ffn"), width),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), width, hidden, width, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var, memory: Var) -> Var {
        let n = self.norm_self.forward(t, x);
        let a = self.self_attn.forward(t, n, n, true);
        let x = t.add(x, a);
        let n = self.norm_cross.forward(t, x);
        let c = self.cross_attn.forward(t, n, memory, false);
        let x = t.add(x, c);
        let n = self.norm_ffn.forward(t, x);
        let f = self.ffn.forward(t, n);
        t.add(x, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn causal_attention_ignores_future_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let attn = MultiHeadAttention::new(&mut ps, "a", 8, 2, &mut rng);
        let x = Mat::randn(4, 8, 1.0, &mut rng);
        let mut y = x.clone();
        y.row_mut(3).iter_mut().for_each(|v| *v += 5.0);
        let run = |m: &Mat| {
            let mut t = Tape::new(&ps);
            let v = t.input(m.clone());
            let o = attn.forward(&mut t, v, v, true);
            t.value(o).clone()
        };
        let (a, b) = (run(&x), run(&y));
        for i in 0..3 {
            assert_eq!(a.row(i), b.row(i));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    #[should_panic(expected = "must divide")]
    fn head_count_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        MultiHeadAttention::new(&mut ParamSet::new(), "a", 10, 4, &mut rng);
    }
}
