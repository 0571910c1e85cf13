use crate::autodiff::Tape;
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::features::{Example, Features};
use crate::genmodel::{GenPass, GenSr};
use crate::par::Exec;
use crate::params::{Grads, ParamSet};
use crate::tensor::Mat;

use super::{contrastive_loss_and_grads, gradient_cosine, total_loss, Batch, ExampleStream, StepRecord, TrainConfig, TrainTrace};

/// Loss terms and parameter gradient of one batch.
pub struct BatchGradients {
    pub gen_loss: f64,
    pub contrastive_loss: f64,
    pub total_loss: f64,
    pub grads: Grads,
    /// Probe-layer gradient of each task's share of the loss, search first.
    pub probe: [Vec<f64>; 2],
}

fn forward_all<'p>(
    model: &GenSr,
    params: &'p ParamSet,
    f: &Features<'_>,
    examples: &[&Example],
    exec: Exec,
) -> Result<Vec<(Tape<'p>, GenPass)>> {
    exec.try_map(examples, |ex| {
        let mut t = Tape::new(params);
        let pass = model.forward(&mut t, f, ex)?;
        Ok((t, pass))
    })
}

fn stack_rows(rows: &[&Mat]) -> Mat {
    let data: Vec<Vec<f64>> = rows.iter().map(|m| m.row(0).to_vec()).collect();
    Mat::from_rows(&data)
}

/// Forward-only batch loss under `params`; matches [`gensr_batch_gradients`].
pub fn gensr_batch_loss(model: &GenSr, params: &ParamSet, f: &Features<'_>, batch: &Batch, cfg: &TrainConfig, exec: Exec) -> Result<f64> {
    let examples: Vec<&Example> = batch.examples().collect();
    let passes = forward_all(model, params, f, &examples, exec)?;
    let n = examples.len() as f64;
    let gen: f64 = passes.iter().map(|(t, p)| t.scalar(p.loss)).sum::<f64>() / n;
    let npos = batch.positives.len();
    let c = stack_rows(&passes[..npos].iter().map(|(t, p)| t.value(p.views.cf)).collect::<Vec<_>>());
    let s = stack_rows(&passes[..npos].iter().map(|(t, p)| t.value(p.views.sem)).collect::<Vec<_>>());
    let con = super::contrastive_loss(&c, &s, cfg.tau)?;
    total_loss(gen, con, cfg.beta)
}

/// Gradient of `mean NLL + β·L_c` over the batch. The contrastive term pairs
/// the filtered views of the positive examples.
pub fn gensr_batch_gradients(
    model: &GenSr,
    params: &ParamSet,
    f: &Features<'_>,
    batch: &Batch,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<BatchGradients> {
    let examples: Vec<&Example> = batch.examples().collect();
    let passes = forward_all(model, params, f, &examples, exec)?;
    let n = examples.len() as f64;
    let gen_loss: f64 = passes.iter().map(|(t, p)| t.scalar(p.loss)).sum::<f64>() / n;
    let npos = batch.positives.len();
    let c = stack_rows(&passes[..npos].iter().map(|(t, p)| t.value(p.views.cf)).collect::<Vec<_>>());
    let s = stack_rows(&passes[..npos].iter().map(|(t, p)| t.value(p.views.sem)).collect::<Vec<_>>());
    let (con, gc, gs) = contrastive_loss_and_grads(&c, &s, cfg.tau)?;
    let total = total_loss(gen_loss, con, cfg.beta)?;

    let idx: Vec<usize> = (0..passes.len()).collect();
    let per_example: Vec<Grads> = exec.map(&idx, |&i| {
        let (t, p) = &passes[i];
        let mut seeds = vec![(p.loss, Mat::from_vec(1, 1, vec![1.0 / n]))];
        if i < npos && cfg.beta > 0.0 {
            seeds.push((p.views.cf, Mat::row_vector(gc.row(i).to_vec()).scaled(cfg.beta)));
            seeds.push((p.views.sem, Mat::row_vector(gs.row(i).to_vec()).scaled(cfg.beta)));
        }
        t.backward_seeded(&seeds).into_params()
    });

    let probe_ids = model.probe_params();
    let probe_len: usize = probe_ids.iter().map(|&id| params.get(id).len()).sum();
    let mut probe = [vec![0.0; probe_len], vec![0.0; probe_len]];
    let mut grads = Grads::for_params(params);
    for (g, ex) in per_example.iter().zip(&examples) {
        grads.axpy(1.0, g);
        let slot = match ex.task {
            Task::Search => 0,
            Task::Rec => 1,
        };
        for (acc, x) in probe[slot].iter_mut().zip(g.flatten(params, &probe_ids)) {
            *acc += x;
        }
    }
    if !grads.all_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok(BatchGradients { gen_loss, contrastive_loss: con, total_loss: total, grads, probe })
}

/// Runs SGD on the joint objective over `stream` and records one trace row
/// per step. On a non-finite loss the step is not applied and the error is
/// returned, leaving the model at its last good parameters.
pub fn train_gensr(model: &mut GenSr, f: &Features<'_>, stream: &ExampleStream, cfg: &TrainConfig, exec: Exec) -> Result<TrainTrace> {
    let mut trace = TrainTrace {
        paradigm: "gensr".into(),
        header: vec![("params".into(), model.params.scalar_count().to_string())],
        steps: Vec::new(),
    };
    let mut step = 0;
    'outer: for epoch in 0..cfg.epochs {
        for batch in stream.epoch(epoch, step) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            let bg = gensr_batch_gradients(model, &model.params, f, &batch, cfg, exec)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("step {step}: {m}")),
                    other => other,
                })?;
            model.params.sgd_step(&bg.grads, cfg.lr);
            trace.steps.push(StepRecord {
                step,
                search_examples: batch.count(Task::Search),
                rec_examples: batch.count(Task::Rec),
                gen_loss: bg.gen_loss,
                contrastive_loss: bg.contrastive_loss,
                total_loss: bg.total_loss,
                probe_cosine: gradient_cosine(&bg.probe[0], &bg.probe[1]),
            });
            step += 1;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{train_cf, CfConfig};
    use crate::corpus::{generate_synthetic_corpus, split_leave_one_out, GeneratorConfig};
    use crate::genmodel::{Mode, ModelConfig, Vocabulary};
    use crate::training::finite_difference_audit;

    fn tiny() -> ModelConfig {
        ModelConfig { width: 8, heads: 2, ffn: 16, enc_layers: 1, dec_layers: 1, max_history: 4, max_input: 96, positional: true }
    }

    #[test]
    fn joint_gradient_matches_central_differences() {
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 6, ..Default::default() }, Exec::Sequential).unwrap();
        let s = split_leave_one_out(&c, 0).unwrap();
        let cf = train_cf(&c, &s.train_interactions().cloned().collect::<Vec<_>>(), &CfConfig { dim: 8, epochs: 2, ..Default::default() }).unwrap();
        let v = Vocabulary::build(&c);
        let f = Features::new(&c, &cf, &v).unwrap();
        let st = ExampleStream::new(&c, &s, 4, 4, Mode::Rerank, 0).unwrap();
        let batch = &st.epoch(0, 0)[0];
        let m = GenSr::new(tiny(), Mode::Rerank, v.len(), 8, 1).unwrap();
        let cfg = TrainConfig { tau: 0.5, beta: 0.3, ..Default::default() };
        let bg = gensr_batch_gradients(&m, &m.params, &f, batch, &cfg, Exec::Sequential).unwrap();
        let loss = |p: &ParamSet| gensr_batch_loss(&m, p, &f, batch, &cfg, Exec::Sequential).unwrap();
        assert!((loss(&m.params) - bg.total_loss).abs() < 1e-12);
        let report = finite_difference_audit(loss, &m.params, &bg.grads, 40, 1e-5, 2);
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn zero_beta_leaves_contrastive_only_parameters_untouched() {
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 6, ..Default::default() }, Exec::Sequential).unwrap();
        let s = split_leave_one_out(&c, 0).unwrap();
        let cf = train_cf(&c, &s.train_interactions().cloned().collect::<Vec<_>>(), &CfConfig { dim: 8, epochs: 1, ..Default::default() }).unwrap();
        let v = Vocabulary::build(&c);
        let f = Features::new(&c, &cf, &v).unwrap();
        // Full ranking never feeds the candidate-side filter, so only the
        // contrastive term can reach the pooled views' encoders through β.
        let st = ExampleStream::new(&c, &s, 4, 4, Mode::Rerank, 0).unwrap();
        let batch = &st.epoch(0, 0)[0];
        let mut m = GenSr::new(tiny(), Mode::Rerank, v.len(), 8, 1).unwrap();
        let base = TrainConfig { beta: 0.0, ..Default::default() };
        let g0 = gensr_batch_gradients(&m, &m.params, &f, batch, &base, Exec::Sequential).unwrap();
        let g1 = gensr_batch_gradients(&m, &m.params, &f, batch, &TrainConfig { beta: 0.1, ..base.clone() }, Exec::Sequential).unwrap();
        assert_eq!(g0.gen_loss, g1.gen_loss);
        let ids: Vec<_> = m.params.ids().collect();
        let (a, b) = (g0.grads.flatten(&m.params, &ids), g1.grads.flatten(&m.params, &ids));
        assert_ne!(a, b);
        // The probe layer sits downstream of the views, so β never reaches it.
        assert_eq!(g0.probe, g1.probe);

        let before = m.params.clone();
        m.params.sgd_step(&g0.grads, 0.0);
        assert!(m.params.iter().zip(before.iter()).all(|(x, y)| x.2.data() == y.2.data()));
    }

    #[test]
    fn modes_agree_bitwise() {
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 6, ..Default::default() }, Exec::Sequential).unwrap();
        let s = split_leave_one_out(&c, 0).unwrap();
        let cf = train_cf(&c, &s.train_interactions().cloned().collect::<Vec<_>>(), &CfConfig { dim: 8, epochs: 1, ..Default::default() }).unwrap();
        let v = Vocabulary::build(&c);
        let f = Features::new(&c, &cf, &v).unwrap();
        let st = ExampleStream::new(&c, &s, 4, 4, Mode::Rerank, 0).unwrap();
        let cfg = TrainConfig { max_steps: Some(3), model: tiny(), ..Default::default() };
        let mut a = GenSr::new(tiny(), Mode::Rerank, v.len(), 8, 1).unwrap();
        let mut b = GenSr::new(tiny(), Mode::Rerank, v.len(), 8, 1).unwrap();
        let ta = train_gensr(&mut a, &f, &st, &cfg, Exec::Sequential).unwrap();
        let tb = train_gensr(&mut b, &f, &st, &cfg, Exec::Parallel).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ta.steps.len(), 3);
        assert!(a.params.iter().zip(b.params.iter()).all(|(x, y)| x.2.data() == y.2.data()));
    }
}
