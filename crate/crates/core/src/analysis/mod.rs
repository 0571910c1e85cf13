//! Diagnostics: MINE estimates on frozen models, gradient-conflict traces,
//! PCA/KDE exports and the linear-Gaussian sandbox.

pub mod mine;
pub mod projection;
pub mod sandbox;

pub use mine::{estimate_mi, gaussian_mi, mine_bound, MiEstimate, MineConfig, MineCritic};
pub use projection::{kde_density, pca_project, scott_bandwidth, KdeGrid, Projection, DEFAULT_GRID};
pub use sandbox::{mi_from_w, run_separability_experiment, GaussianSandboxConfig, MiMode, SandboxReport, TrialResult};
pub use crate::training::gradient_cosine;

use crate::corpus::{EvalInstance, Task};
use crate::error::{Error, Result};
use crate::features::{Example, Features};
use crate::genmodel::GenSr;
use crate::par::Exec;
use crate::tensor::Mat;
use crate::training::{train_discriminative, train_gensr, DiscModel, ExampleStream, TrainConfig, TrainTrace};

/// Minimum number of (instance, candidate) samples per task for a model MI
/// estimate.
pub const MIN_MI_SAMPLES: usize = 500;

/// A frozen model exposing its pooled encoder states and output probability.
pub trait Probe: Sync {
    fn paradigm(&self) -> &'static str;
    fn max_history(&self) -> usize;
    fn probe(&self, f: &Features<'_>, ex: &Example) -> Result<(Vec<f64>, f64)>;
}

impl Probe for GenSr {
    fn paradigm(&self) -> &'static str {
        "gensr"
    }

    fn max_history(&self) -> usize {
        self.cfg.max_history
    }

    fn probe(&self, f: &Features<'_>, ex: &Example) -> Result<(Vec<f64>, f64)> {
        GenSr::probe(self, f, ex)
    }
}

impl Probe for DiscModel {
    fn paradigm(&self) -> &'static str {
        "discriminative"
    }

    fn max_history(&self) -> usize {
        self.cfg.max_history
    }

    fn probe(&self, f: &Features<'_>, ex: &Example) -> Result<(Vec<f64>, f64)> {
        DiscModel::probe(self, f, ex)
    }
}

/// Pooled states (rows of X) and output probabilities (Y) for every candidate
/// of every `task` instance.
pub fn collect_probe_samples<P: Probe + ?Sized>(
    model: &P,
    f: &Features<'_>,
    instances: &[EvalInstance],
    task: Task,
    exec: Exec,
) -> Result<(Mat, Mat)> {
    let selected: Vec<&EvalInstance> = instances.iter().filter(|i| i.task == task).collect();
    let per_instance = exec.try_map(&selected, |inst| {
        inst.candidates
            .iter()
            .map(|&c| model.probe(f, &Example::from_instance(inst, c, model.max_history())))
            .collect::<Result<Vec<_>>>()
    })?;
    let samples: Vec<(Vec<f64>, f64)> = per_instance.into_iter().flatten().collect();
    let Some(width) = samples.first().map(|s| s.0.len()) else {
        return Ok((Mat::zeros(0, 0), Mat::zeros(0, 1)));
    };
    let mut x = Vec::with_capacity(samples.len() * width);
    let mut y = Vec::with_capacity(samples.len());
    for (xs, p) in &samples {
        x.extend_from_slice(xs);
        y.push(*p);
    }
    Ok((Mat::from_vec(samples.len(), width, x), Mat::from_vec(samples.len(), 1, y)))
}

/// MINE estimate of I(pooled encoder state; output probability) for one task.
pub fn estimate_model_mi<P: Probe + ?Sized>(
    model: &P,
    f: &Features<'_>,
    instances: &[EvalInstance],
    task: Task,
    cfg: &MineConfig,
    exec: Exec,
) -> Result<MiEstimate> {
    let (x, y) = collect_probe_samples(model, f, instances, task, exec)?;
    if x.rows() < MIN_MI_SAMPLES {
        return Err(Error::Data(format!(
            "{} {} samples for MI estimation, need at least {MIN_MI_SAMPLES}",
            x.rows(),
            task.name()
        )));
    }
    let mut est = estimate_mi(&x, &y, cfg)?;
    est.task = Some(task.name().into());
    Ok(est)
}

/// Per-step probe-gradient cosines for both paradigms trained on the same stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ConflictTraces {
    pub gensr: TrainTrace,
    pub disc: TrainTrace,
}

/// Trains both models on identical batches and returns their traces.
pub fn track_conflict(
    gensr: &mut GenSr,
    disc: &mut DiscModel,
    f: &Features<'_>,
    stream: &ExampleStream,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<ConflictTraces> {
    let g = train_gensr(gensr, f, stream, cfg, exec)?;
    let d = train_discriminative(disc, f, stream, cfg, exec)?;
    Ok(ConflictTraces { gensr: g, disc: d })
}
