//! The generative model: dual-view features inserted into task prompts and
//! fed to an encoder–decoder that answers with `⟨yes⟩`/`⟨no⟩` (re-ranking) or
//! an item token (full ranking).

mod backbone;
mod beam;
mod prompt;
mod vocab;

use serde::{Deserialize, Serialize};

pub use backbone::{yes_probability, Backbone, BackboneConfig};
pub use beam::{constrained_beam, restricted_log_softmax, Hypothesis};
pub use prompt::{assemble_embeddings, build_prompt, layout, parse_template, template_text, Assembled, Mode, PromptTemplate, Slot, QUERY_MARKER};
pub use vocab::{item_token_name, special, Vocabulary};

use crate::autodiff::{Tape, Var};
use crate::dual::{DualConfig, DualRepr, Views};
use crate::error::{Error, Result};
use crate::features::{Example, Features};
use crate::params::{ParamId, ParamSet};
use crate::seed::{self, stream};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_history: usize,
    pub max_input: usize,
    pub positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { width: 64, heads: 4, ffn: 128, enc_layers: 2, dec_layers: 2, max_history: 20, max_input: 128, positional: true }
    }
}

impl ModelConfig {
    pub fn validate(&self, cf_dim: usize) -> Result<()> {
        if self.heads == 0 || self.width % self.heads != 0 || cf_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must divide both widths ({cf_dim}, {})",
                self.heads, self.width
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.max_history == 0 {
            return Err(Error::Config("layer counts and history window must be positive".into()));
        }
        Ok(())
    }
}

pub struct GenSr {
    pub cfg: ModelConfig,
    pub mode: Mode,
    pub cf_dim: usize,
    pub backbone: Backbone,
    pub dual: DualRepr,
    pub params: ParamSet,
}

/// Nodes of one forward pass.
pub struct GenPass {
    pub memory: Var,
    /// First-step next-token logits, `1 × |V|`.
    pub logits: Var,
    pub loss: Var,
    pub views: Views,
    pub input_len: usize,
}

impl GenSr {
    pub fn new(cfg: ModelConfig, mode: Mode, vocab_size: usize, cf_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate(cf_dim)?;
        let mut rng = seed::rng(seed, &[stream::MODEL_INIT, 0]);
        let mut params = ParamSet::new();
        let backbone = Backbone::new(
            &mut params,
            BackboneConfig {
                vocab_size,
                width: cfg.width,
                heads: cfg.heads,
                ffn: cfg.ffn,
                enc_layers: cfg.enc_layers,
                dec_layers: cfg.dec_layers,
                max_input: cfg.max_input,
                max_target: 2,
            },
            &mut rng,
        );
        let dual = DualRepr::new(
            &mut params,
            DualConfig { cf_dim, width: cfg.width, heads: cfg.heads, max_history: cfg.max_history, positional: cfg.positional },
            &mut rng,
        );
        Ok(Self { cfg, mode, cf_dim, backbone, dual, params })
    }

    /// Parameters of the first encoder self-attention block.
    pub fn probe_params(&self) -> Vec<ParamId> {
        self.backbone.encoder[0].attn.param_ids()
    }

    pub fn target(&self, f: &Features<'_>, ex: &Example) -> Result<usize> {
        Ok(match self.mode {
            Mode::Rerank if ex.label => special::YES,
            Mode::Rerank => special::NO,
            Mode::Fullrank => f.vocab.item_token(ex.item).ok_or(Error::UnknownItem(ex.item))?,
        })
    }

    /// Builds the prompt input and runs the encoder and the first decoder step.
    pub fn forward(&self, t: &mut Tape<'_>, f: &Features<'_>, ex: &Example) -> Result<GenPass> {
        if ex.history.is_empty() {
            return Err(Error::User { user_id: ex.user_id, reason: "empty history".into() });
        }
        let table = t.param(self.backbone.tokens);
        let cf_rows = t.input(f.cf_rows(&ex.history)?);
        let sem_rows = t.segment_mean(table, &f.descriptions(&ex.history)?);
        let (c_u, s_u) = self.dual.encode(t, cf_rows, sem_rows);
        let prompt = build_prompt(ex.task, self.mode, ex.query.as_deref())?;
        let segments = prompt.segment_ids(f.vocab);
        let (views, inserted) = match self.mode {
            Mode::Rerank => {
                let cand_cf = t.input(Mat::row_vector(f.cf.item_row(ex.item)?.to_vec()));
                let cand_sem = t.segment_mean(table, &[f.description(ex.item)?.to_vec()]);
                let views = self.dual.filtered(t, c_u, s_u, cand_cf, cand_sem);
                let cand_proj = self.dual.project(t, cand_cf);
                (views, vec![views.cf, views.sem, cand_proj, cand_sem])
            }
            Mode::Fullrank => {
                let views = self.dual.pooled(t, c_u, s_u);
                (views, vec![views.cf, views.sem])
            }
        };
        let assembled = assemble_embeddings(t, table, &segments, &inserted)?;
        let memory = self.backbone.encode(t, assembled.embeddings)?;
        let target = self.target(f, ex)?;
        let (loss, logits) = self.backbone.forward_nll(t, memory, &[target])?;
        Ok(GenPass { memory, logits, loss, views, input_len: assembled.map.len() })
    }

    pub fn score_yes_no(&self, f: &Features<'_>, ex: &Example) -> Result<f64> {
        let mut t = Tape::new(&self.params);
        let pass = self.forward(&mut t, f, ex)?;
        Ok(yes_probability(t.value(pass.logits).row(0)))
    }

    /// Mean-pooled final encoder states and the yes-probability.
    pub fn probe(&self, f: &Features<'_>, ex: &Example) -> Result<(Vec<f64>, f64)> {
        let mut t = Tape::new(&self.params);
        let pass = self.forward(&mut t, f, ex)?;
        let x = t.value(pass.memory).mean_rows().into_data();
        Ok((x, yes_probability(t.value(pass.logits).row(0))))
    }

    /// Items ranked by constrained beam search over `allowed`; each entry is
    /// an item id sequence of length `len` with its log-probability.
    pub fn constrained_beam_search(
        &self,
        f: &Features<'_>,
        ex: &Example,
        allowed: &[u64],
        beam: usize,
        len: usize,
    ) -> Result<Vec<(Vec<u64>, f64)>> {
        let allowed_tokens =
            allowed.iter().map(|&i| f.vocab.item_token(i).ok_or(Error::UnknownItem(i))).collect::<Result<Vec<_>>>()?;
        let mut t = Tape::new(&self.params);
        let pass = self.forward(&mut t, f, ex)?;
        let first = t.value(pass.logits).row(0).to_vec();
        let memory = pass.memory;
        let hyps = constrained_beam(
            |prefix| {
                if prefix.is_empty() {
                    return Ok(first.clone());
                }
                let mut dec_in = vec![special::BOS];
                dec_in.extend_from_slice(prefix);
                let l = self.backbone.decode_logits(&mut t, memory, &dec_in)?;
                Ok(t.value(l).row(dec_in.len() - 1).to_vec())
            },
            &allowed_tokens,
            beam,
            len,
        )?;
        Ok(hyps
            .into_iter()
            .map(|h| (h.tokens.iter().map(|&k| f.vocab.token_item(k).expect("allowed tokens are items")).collect(), h.log_prob))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{train_cf, CfConfig};
    use crate::corpus::{generate_synthetic_corpus, split_leave_one_out, GeneratorConfig};
    use crate::par::Exec;

    fn tiny() -> ModelConfig {
        ModelConfig { width: 16, heads: 2, ffn: 32, enc_layers: 1, dec_layers: 1, max_history: 5, max_input: 96, positional: true }
    }

    #[test]
    fn rerank_and_fullrank_lengths() {
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 4, ..Default::default() }, Exec::Sequential).unwrap();
        let s = split_leave_one_out(&c, 0).unwrap();
        let cf = train_cf(&c, &s.train_interactions().cloned().collect::<Vec<_>>(), &CfConfig { dim: 8, epochs: 1, ..Default::default() }).unwrap();
        let vocab = Vocabulary::build(&c);
        let f = Features::new(&c, &cf, &vocab).unwrap();
        for inst in &s.test {
            let ex = Example::from_instance(inst, inst.candidates[0], 5);
            for mode in [Mode::Rerank, Mode::Fullrank] {
                let m = GenSr::new(tiny(), mode, vocab.len(), 8, 1).unwrap();
                let mut t = Tape::new(&m.params);
                let pass = m.forward(&mut t, &f, &ex).unwrap();
                let prompt = build_prompt(ex.task, mode, ex.query.as_deref()).unwrap();
                let text: usize = prompt.segments.iter().map(Vec::len).sum();
                assert_eq!(pass.input_len, text + mode.insertions());
                assert_eq!(t.value(pass.memory).rows(), pass.input_len);
            }
            let m = GenSr::new(tiny(), Mode::Fullrank, vocab.len(), 8, 1).unwrap();
            let allowed = [inst.candidates[3], inst.candidates[1], inst.candidates[2]];
            let ranked = m.constrained_beam_search(&f, &ex, &allowed, 3, 1).unwrap();
            assert_eq!(ranked.len(), 3);
            assert!(ranked.iter().all(|(ids, _)| allowed.contains(&ids[0])));
            let p = m.score_yes_no(&f, &ex).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn pooled_views_of_single_row_history_are_the_projected_row() {
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 2, ..Default::default() }, Exec::Sequential).unwrap();
        let cf = train_cf(&c, c.interactions(), &CfConfig { dim: 8, epochs: 0, ..Default::default() }).unwrap();
        let vocab = Vocabulary::build(&c);
        let f = Features::new(&c, &cf, &vocab).unwrap();
        let m = GenSr::new(tiny(), Mode::Fullrank, vocab.len(), 8, 2).unwrap();
        let ex = Example { user_id: 0, history: vec![7], item: 3, label: true, task: crate::corpus::Task::Rec, query: None };
        let mut t = Tape::new(&m.params);
        let pass = m.forward(&mut t, &f, &ex).unwrap();
        let cf_rows = t.input(f.cf_rows(&[7]).unwrap());
        let c_u = m.dual.cf_encoder.forward(&mut t, cf_rows);
        let proj = m.dual.project(&mut t, c_u);
        assert!(t.value(pass.views.cf).max_abs_diff(t.value(proj)) < 1e-12);
    }
}
