//! Joint GenSR optimisation and the discriminative shared-encoder baseline.

mod audit;
mod disc;
mod gensr;
mod stream;
mod trace;

use serde::{Deserialize, Serialize};

pub use audit::{finite_difference_audit, relative_error, AuditReport, AUDIT_FLOOR};
pub use disc::{disc_batch_gradients, disc_batch_loss, train_discriminative, DiscConfig, DiscModel, DiscPass, DiscStep};
pub use gensr::{gensr_batch_gradients, gensr_batch_loss, train_gensr, BatchGradients};
pub use stream::{Batch, ExampleStream};
pub use trace::{gradient_cosine, write_gradient_trace, write_step_trace, StepRecord, TrainTrace};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::genmodel::{Mode, ModelConfig};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the contrastive term.
    pub beta: f64,
    /// Weight of the recommendation loss in the discriminative baseline.
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Stops early once this many optimiser steps ran.
    pub max_steps: Option<usize>,
    /// Positive examples per step, split evenly between the two tasks; each
    /// positive brings one sampled negative in re-ranking mode.
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            beta: 0.1,
            gamma: 1.0,
            lr: 0.05,
            epochs: 20,
            max_steps: None,
            batch_size: 8,
            seed: 0,
            mode: Mode::Rerank,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Errors for invalid settings; warnings for legal but degenerate ones.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0 && self.lr >= 0.0) {
            return Err(Error::Config("beta, gamma and lr must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        if self.batch_size == 1 && self.beta > 0.0 {
            warnings.push("batch_size = 1: the contrastive term is constant ln 2 and contributes no gradient".into());
        }
        Ok(warnings)
    }
}

fn check_nonzero(m: &Mat, what: &str) -> Result<()> {
    for i in 0..m.rows() {
        if m.row(i).iter().all(|&x| x == 0.0) {
            return Err(Error::Numerical(format!("{what} row {i} has zero norm; cosine similarity is undefined")));
        }
    }
    Ok(())
}

/// Contrastive alignment loss over paired rows of `c` and `s` on a tape.
///
/// For each `u`: `−ln( e^{sim(c_u,s_u)/τ} / (Σ_{u′} e^{sim(c_u,s_u′)/τ} + Σ_{u′} e^{sim(s_u,c_u′)/τ}) )`,
/// cosine similarity, self terms included in both sums, averaged over rows.
pub fn contrastive_loss_on_tape(t: &mut Tape<'_>, c: Var, s: Var, tau: f64) -> Result<Var> {
    let (cm, sm) = (t.value(c), t.value(s));
    if cm.shape() != sm.shape() || cm.rows() == 0 {
        return Err(Error::Shape(format!("contrastive pairs {:?} vs {:?}", cm.shape(), sm.shape())));
    }
    check_nonzero(cm, "CF view")?;
    check_nonzero(sm, "semantic view")?;
    let b = cm.rows();
    let cn = t.normalize_rows(c);
    let sn = t.normalize_rows(s);
    let sims = t.matmul_nt(cn, sn);
    let m = t.scale(sims, 1.0 / tau);
    // Every similarity is at most 1/τ; shifting by it keeps exp in range.
    let shift = t.input(Mat::filled(b, b, 1.0 / tau));
    let shifted = t.sub(m, shift);
    let e = t.exp(shifted);
    let row = t.sum_rows(e);
    let col = t.sum_cols(e);
    let col = t.transpose(col);
    let denom = t.add(row, col);
    let log_denom = t.log(denom);
    let eye = t.input(Mat::identity(b));
    let diag = t.mul(shifted, eye);
    let diag = t.sum_rows(diag);
    let per = t.sub(log_denom, diag);
    Ok(t.mean_all(per))
}

/// Value-only contrastive loss for rows of `c` and `s`.
pub fn contrastive_loss(c: &Mat, s: &Mat, tau: f64) -> Result<f64> {
    let ps = crate::params::ParamSet::new();
    let mut t = Tape::new(&ps);
    let (cv, sv) = (t.input(c.clone()), t.input(s.clone()));
    let l = contrastive_loss_on_tape(&mut t, cv, sv, tau)?;
    Ok(t.scalar(l))
}

/// Contrastive loss and its gradients with respect to `c` and `s`.
pub fn contrastive_loss_and_grads(c: &Mat, s: &Mat, tau: f64) -> Result<(f64, Mat, Mat)> {
    let ps = crate::params::ParamSet::new();
    let mut t = Tape::new(&ps);
    let (cv, sv) = (t.input(c.clone()), t.input(s.clone()));
    let l = contrastive_loss_on_tape(&mut t, cv, sv, tau)?;
    let back = t.backward(l);
    let gc = back.wrt(cv).cloned().unwrap_or_else(|| Mat::zeros(c.rows(), c.cols()));
    let gs = back.wrt(sv).cloned().unwrap_or_else(|| Mat::zeros(s.rows(), s.cols()));
    Ok((t.scalar(l), gc, gs))
}

/// `L_S&R + β·L_c`.
pub fn total_loss(gen_loss: f64, contrastive: f64, beta: f64) -> Result<f64> {
    if !(gen_loss.is_finite() && contrastive.is_finite()) {
        return Err(Error::Numerical(format!("non-finite loss terms ({gen_loss}, {contrastive})")));
    }
    Ok(gen_loss + beta * contrastive)
}

/// Token-level negative log-likelihood of `targets` under row-wise `logits`.
pub fn generation_loss(logits: &Mat, targets: &[usize]) -> f64 {
    targets
        .iter()
        .enumerate()
        .map(|(t, &y)| crate::autodiff::log_sum_exp(logits.row(t)) - logits.at(t, y))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pair_is_ln2() {
        let c = Mat::row_vector(vec![0.3, -1.0, 2.0]);
        let s = Mat::row_vector(vec![-4.0, 0.1, 0.5]);
        let (l, gc, gs) = contrastive_loss_and_grads(&c, &s, 0.05).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!(gc.data().iter().chain(gs.data()).all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn orthogonal_pairs_reference_value() {
        let c = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let e = std::f64::consts::E;
        let expected = -(e / (2.0 * (e + 1.0))).ln();
        assert!((contrastive_loss(&c, &c, 1.0).unwrap() - expected).abs() < 1e-12);
        // ln(2(e + 1)/e) = 1.006409…, a little below the loosely rounded 1.0066.
        assert!((expected - 1.006409).abs() < 1e-6);
    }

    #[test]
    fn rescaling_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Mat::randn(5, 4, 1.0, &mut rng);
        let s = Mat::randn(5, 4, 1.0, &mut rng);
        let a = contrastive_loss(&c, &s, 0.1).unwrap();
        let b = contrastive_loss(&c.scaled(5.0), &s.scaled(5.0), 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn small_temperature_does_not_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = Mat::randn(4, 3, 1.0, &mut rng);
        assert!(contrastive_loss(&c, &c, 1e-4).unwrap().is_finite());
    }

    #[test]
    fn zero_vector_is_rejected() {
        let c = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(contrastive_loss(&c, &c, 1.0).is_err());
    }

    #[test]
    fn contrastive_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = Mat::randn(3, 4, 1.0, &mut rng);
        let s = Mat::randn(3, 4, 1.0, &mut rng);
        let (_, gc, _) = contrastive_loss_and_grads(&c, &s, 0.3).unwrap();
        for k in 0..c.len() {
            let h = 1e-6;
            let mut p = c.clone();
            p.data_mut()[k] += h;
            let mut m = c.clone();
            m.data_mut()[k] -= h;
            let fd = (contrastive_loss(&p, &s, 0.3).unwrap() - contrastive_loss(&m, &s, 0.3).unwrap()) / (2.0 * h);
            assert!(relative_error(fd, gc.data()[k]) < 1e-6);
        }
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(1.3, 0.7, 0.0).unwrap(), 1.3);
        assert!((total_loss(1.0, 2f64.ln(), 1.0).unwrap() - 1.6931).abs() < 1e-4);
        let h = 1e-6;
        let d = (total_loss(1.0, 0.4, 0.1 + h).unwrap() - total_loss(1.0, 0.4, 0.1 - h).unwrap()) / (2.0 * h);
        assert!((d - 0.4).abs() < 1e-9);
        assert!(total_loss(f64::NAN, 0.0, 0.1).is_err());
    }

    #[test]
    fn generation_loss_matches_uniform_case() {
        let logits = Mat::zeros(1, 7);
        assert!((generation_loss(&logits, &[3]) - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().unwrap().is_empty());
        assert_eq!(TrainConfig { batch_size: 1, ..Default::default() }.validate().unwrap().len(), 1);
    }
}
