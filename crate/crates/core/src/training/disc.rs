//! Shared-encoder baseline with one click head per task.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::features::{Example, Features};
use crate::genmodel::{Mode, ModelConfig};
use crate::nn::{EncoderBlock, FeedForward, Linear, RmsNorm};
use crate::par::Exec;
use crate::params::{Grads, ParamId, ParamSet};
use crate::seed::{self, stream};
use crate::tensor::Mat;

use super::{gradient_cosine, Batch, ExampleStream, StepRecord, TrainConfig, TrainTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    pub max_history: usize,
    pub head_hidden: usize,
}

impl DiscConfig {
    /// Same width and depth budget as the generative model; the head width is
    /// chosen so the total parameter count lands as close as possible to
    /// `target_params`.
    pub fn matched(model: &ModelConfig, vocab_size: usize, cf_dim: usize, target_params: usize) -> Result<Self> {
        let mut cfg = Self {
            width: model.width,
            heads: model.heads,
            ffn: model.ffn,
            layers: model.enc_layers + model.dec_layers,
            max_history: model.max_history,
            head_hidden: 1,
        };
        let base = DiscModel::new(cfg.clone(), vocab_size, cf_dim, 0)?.params.scalar_count();
        // Each extra hidden unit adds 2w + 2 weights per head.
        let per_unit = 2 * (2 * cfg.width + 2);
        let extra = target_params.saturating_sub(base);
        cfg.head_hidden = 1 + (extra + per_unit / 2) / per_unit;
        Ok(cfg)
    }
}

pub struct DiscModel {
    pub cfg: DiscConfig,
    pub cf_dim: usize,
    pub tokens: ParamId,
    pub input: Linear,
    pub positions: ParamId,
    pub encoder: Vec<EncoderBlock>,
    pub norm: RmsNorm,
    /// Search head first.
    pub heads: [FeedForward; 2],
    pub params: ParamSet,
}

pub struct DiscPass {
    pub pooled: Var,
    /// Click logit, `1 × 1`.
    pub logit: Var,
    /// Binary cross-entropy of the logit against the label.
    pub loss: Var,
}

/// Loss terms and gradient of one baseline batch.
pub struct DiscStep {
    pub search_loss: f64,
    pub rec_loss: f64,
    pub loss: f64,
    pub grads: Grads,
    /// Probe-layer gradient of each task's loss, search first.
    pub probe: [Vec<f64>; 2],
}

fn head_index(task: Task) -> usize {
    match task {
        Task::Search => 0,
        Task::Rec => 1,
    }
}

impl DiscModel {
    pub fn new(cfg: DiscConfig, vocab_size: usize, cf_dim: usize, seed: u64) -> Result<Self> {
        if cfg.heads == 0 || cfg.width % cfg.heads != 0 || cfg.layers == 0 || cfg.head_hidden == 0 {
            return Err(Error::Config(format!("invalid baseline shape {cfg:?}")));
        }
        let mut rng = seed::rng(seed, &[stream::MODEL_INIT, 1]);
        let mut ps = ParamSet::new();
        let w = cfg.width;
        let tokens = ps.add("disc.tokens", Mat::randn(vocab_size, w, 1.0, &mut rng));
        let input = Linear::new(&mut ps, "disc.input", cf_dim + w, w, true, &mut rng);
        let positions = ps.add("disc.pos", Mat::randn(cfg.max_history + 2, w, 0.1, &mut rng));
        let encoder = (0..cfg.layers).map(|l| EncoderBlock::new(&mut ps, &format!("disc.enc{l}"), w, cfg.heads, cfg.ffn, &mut rng)).collect();
        let norm = RmsNorm::new(&mut ps, "disc.norm", w);
        let heads = [
            FeedForward::new(&mut ps, "disc.head_s", 2 * w, cfg.head_hidden, 1, &mut rng),
            FeedForward::new(&mut ps, "disc.head_r", 2 * w, cfg.head_hidden, 1, &mut rng),
        ];
        Ok(Self { cfg, cf_dim, tokens, input, positions, encoder, norm, heads, params: ps })
    }

    pub fn probe_params(&self) -> Vec<ParamId> {
        self.encoder[0].attn.param_ids()
    }

    pub fn head_params(&self, task: Task) -> Vec<ParamId> {
        let h = &self.heads[head_index(task)];
        h.inner.param_ids().into_iter().chain(h.outer.param_ids()).collect()
    }

    /// Rows are the history items, the query (search only) and the
    /// candidate, each as `[cf | semantic]` mapped to the model width.
    pub fn forward(&self, t: &mut Tape<'_>, f: &Features<'_>, ex: &Example) -> Result<DiscPass> {
        if ex.history.is_empty() {
            return Err(Error::User { user_id: ex.user_id, reason: "empty history".into() });
        }
        if ex.history.len() > self.cfg.max_history {
            return Err(Error::Shape(format!("history of {} exceeds {}", ex.history.len(), self.cfg.max_history)));
        }
        let table = t.param(self.tokens);
        let mut items = ex.history.clone();
        items.push(ex.item);
        let cf = t.input(f.cf_rows(&items)?);
        let sem = t.segment_mean(table, &f.descriptions(&items)?);
        let rows = t.concat_cols(&[cf, sem]);
        let n_hist = ex.history.len();
        let hist = t.slice_rows(rows, 0, n_hist);
        let cand = t.slice_rows(rows, n_hist, 1);
        let q = f.query_ids(ex);
        let x = if q.is_empty() {
            t.concat_rows(&[hist, cand])
        } else {
            let zeros = t.input(Mat::zeros(1, self.cf_dim));
            let qs = t.segment_mean(table, &[q]);
            let qrow = t.concat_cols(&[zeros, qs]);
            t.concat_rows(&[hist, qrow, cand])
        };
        let n = t.value(x).rows();
        let h = self.input.forward(t, x);
        let pos = t.param(self.positions);
        let pos = t.slice_rows(pos, 0, n);
        let mut h = t.add(h, pos);
        for block in &self.encoder {
            h = block.forward(t, h);
        }
        let h = self.norm.forward(t, h);
        let pooled = t.mean_rows(h);
        let cand_state = t.slice_rows(h, n - 1, 1);
        let head_in = t.concat_cols(&[pooled, cand_state]);
        let logit = self.heads[head_index(ex.task)].forward(t, head_in);
        // BCE(z, y) = softplus(−z) for y = 1, softplus(z) for y = 0.
        let signed = t.scale(logit, if ex.label { -1.0 } else { 1.0 });
        let loss = t.softplus(signed);
        Ok(DiscPass { pooled, logit, loss })
    }

    /// Click probability of the example's candidate.
    pub fn score(&self, f: &Features<'_>, ex: &Example) -> Result<f64> {
        Ok(self.probe(f, ex)?.1)
    }

    /// Mean-pooled final encoder states and the click probability.
    pub fn probe(&self, f: &Features<'_>, ex: &Example) -> Result<(Vec<f64>, f64)> {
        let mut t = Tape::new(&self.params);
        let pass = self.forward(&mut t, f, ex)?;
        Ok((t.value(pass.pooled).data().to_vec(), sigmoid(t.scalar(pass.logit))))
    }
}

fn task_weight(task: Task, gamma: f64) -> f64 {
    match task {
        Task::Search => 1.0,
        Task::Rec => gamma,
    }
}

/// `(1/n)·(Σ_S BCE + γ·Σ_R BCE)` under `params`.
pub fn disc_batch_loss(model: &DiscModel, params: &ParamSet, f: &Features<'_>, batch: &Batch, gamma: f64, exec: Exec) -> Result<f64> {
    let examples: Vec<&Example> = batch.examples().collect();
    let n = examples.len() as f64;
    let losses = exec.try_map(&examples, |ex| {
        let mut t = Tape::new(params);
        let pass = model.forward(&mut t, f, ex)?;
        Ok::<_, Error>(task_weight(ex.task, gamma) * t.scalar(pass.loss))
    })?;
    Ok(losses.iter().sum::<f64>() / n)
}

pub fn disc_batch_gradients(model: &DiscModel, params: &ParamSet, f: &Features<'_>, batch: &Batch, gamma: f64, exec: Exec) -> Result<DiscStep> {
    let examples: Vec<&Example> = batch.examples().collect();
    let n = examples.len() as f64;
    let probe_ids = model.probe_params();
    let per_example = exec.try_map(&examples, |ex| {
        let mut t = Tape::new(params);
        let pass = model.forward(&mut t, f, ex)?;
        let w = task_weight(ex.task, gamma) / n;
        let g = t.backward_seeded(&[(pass.loss, Mat::from_vec(1, 1, vec![w]))]).into_params();
        Ok::<_, Error>((t.scalar(pass.loss), g))
    })?;
    let probe_len: usize = probe_ids.iter().map(|&id| params.get(id).len()).sum();
    let mut probe = [vec![0.0; probe_len], vec![0.0; probe_len]];
    let mut sums = [0.0; 2];
    let mut grads = Grads::for_params(params);
    for ((l, g), ex) in per_example.iter().zip(&examples) {
        let k = head_index(ex.task);
        sums[k] += l;
        grads.axpy(1.0, g);
        for (acc, x) in probe[k].iter_mut().zip(g.flatten(params, &probe_ids)) {
            *acc += x;
        }
    }
    let (search_loss, rec_loss) = (sums[0] / n, sums[1] / n);
    let loss = search_loss + gamma * rec_loss;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::Numerical(format!("non-finite baseline loss {loss}")));
    }
    Ok(DiscStep { search_loss, rec_loss, loss, grads, probe })
}

/// Trains the baseline on the same batches as [`super::train_gensr`].
pub fn train_discriminative(model: &mut DiscModel, f: &Features<'_>, stream: &ExampleStream, cfg: &TrainConfig, exec: Exec) -> Result<TrainTrace> {
    if stream.mode() != Mode::Rerank {
        return Err(Error::Config("the discriminative baseline needs re-ranking batches".into()));
    }
    let mut trace = TrainTrace {
        paradigm: "discriminative".into(),
        header: vec![("params".into(), model.params.scalar_count().to_string())],
        steps: Vec::new(),
    };
    let mut step = 0;
    'outer: for epoch in 0..cfg.epochs {
        for batch in stream.epoch(epoch, step) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            let s = disc_batch_gradients(model, &model.params, f, &batch, cfg.gamma, exec).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("step {step}: {m}")),
                other => other,
            })?;
            model.params.sgd_step(&s.grads, cfg.lr);
            trace.steps.push(StepRecord {
                step,
                search_examples: batch.count(Task::Search),
                rec_examples: batch.count(Task::Rec),
                gen_loss: s.loss,
                contrastive_loss: 0.0,
                total_loss: s.loss,
                probe_cosine: gradient_cosine(&s.probe[0], &s.probe[1]),
            });
            step += 1;
        }
    }
    Ok(trace)
}
