//! Encoder–decoder transformer with a tied, scaled output projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::special;
use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{DecoderBlock, EncoderBlock, RmsNorm};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_input: usize,
    pub max_target: usize,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub tokens: ParamId,
    pub enc_pos: ParamId,
    pub dec_pos: ParamId,
    pub encoder: Vec<EncoderBlock>,
    pub enc_norm: RmsNorm,
    pub decoder: Vec<DecoderBlock>,
    pub dec_norm: RmsNorm,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, cfg: BackboneConfig, rng: &mut R) -> Self {
        assert!(cfg.enc_layers >= 1 && cfg.dec_layers >= 1, "backbone needs at least one layer per stack");
        let w = cfg.width;
        let tokens = ps.add("bb.tokens", Mat::randn(cfg.vocab_size, w, 1.0, rng));
        let enc_pos = ps.add("bb.enc_pos", Mat::randn(cfg.max_input, w, 0.1, rng));
        let dec_pos = ps.add("bb.dec_pos", Mat::randn(cfg.max_target, w, 0.1, rng));
        let encoder = (0..cfg.enc_layers).map(|l| EncoderBlock::new(ps, &format!("bb.enc{l}"), w, cfg.heads, cfg.ffn, rng)).collect();
        let enc_norm = RmsNorm::new(ps, "bb.enc_norm", w);
        let decoder = (0..cfg.dec_layers).map(|l| DecoderBlock::new(ps, &format!("bb.dec{l}"), w, cfg.heads, cfg.ffn, rng)).collect();
        let dec_norm = RmsNorm::new(ps, "bb.dec_norm", w);
        Self { cfg, tokens, enc_pos, dec_pos, encoder, enc_norm, decoder, dec_norm }
    }

    /// Final encoder states for an assembled `M × width` input.
    pub fn encode(&self, t: &mut Tape<'_>, input: Var) -> Result<Var> {
        let m = t.value(input).rows();
        if m > self.cfg.max_input {
            return Err(Error::Shape(format!("assembled input of {m} positions exceeds the limit of {}", self.cfg.max_input)));
        }
        let table = t.param(self.enc_pos);
        let pos = t.slice_rows(table, 0, m);
        let mut x = t.add(input, pos);
        for block in &self.encoder {
            x = block.forward(t, x);
        }
        Ok(self.enc_norm.forward(t, x))
    }

    /// Next-token logits for each decoder position, `T × |V|`.
    pub fn decode_logits(&self, t: &mut Tape<'_>, memory: Var, decoder_input: &[usize]) -> Result<Var> {
        let n = decoder_input.len();
        if n == 0 || n > self.cfg.max_target {
            return Err(Error::Shape(format!("decoder input length {n} outside 1..={}", self.cfg.max_target)));
        }
        let table = t.param(self.tokens);
        let emb = t.gather_rows(table, decoder_input);
        let pt = t.param(self.dec_pos);
        let pos = t.slice_rows(pt, 0, n);
        let mut x = t.add(emb, pos);
        for block in &self.decoder {
            x = block.forward(t, x, memory);
        }
        let h = self.dec_norm.forward(t, x);
        let logits = t.matmul_nt(h, table);
        Ok(t.scale(logits, 1.0 / (self.cfg.width as f64).sqrt()))
    }

    /// Teacher-forced `−Σ log P(y_t | y_<t, x)` and the logits.
    pub fn forward_nll(&self, t: &mut Tape<'_>, memory: Var, targets: &[usize]) -> Result<(Var, Var)> {
        if targets.is_empty() {
            return Err(Error::Shape("empty target sequence".into()));
        }
        let mut dec_in = vec![special::BOS];
        dec_in.extend_from_slice(&targets[..targets.len() - 1]);
        let logits = self.decode_logits(t, memory, &dec_in)?;
        Ok((t.nll(logits, targets), logits))
    }
}

/// Softmax restricted to the two verbalizer tokens.
pub fn yes_probability(logits_row: &[f64]) -> f64 {
    sigmoid(logits_row[special::YES] - logits_row[special::NO])
}
