//! Donsker–Varadhan mutual-information lower bound with a small critic.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Grads, ParamSet};
use crate::seed::{self, stream};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Exponential moving-average factor applied to the held-out curve.
    pub ema: f64,
    /// Fraction of samples held out for the reported bound.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self { hidden: 64, steps: 600, batch_size: 256, lr: 2e-3, ema: 0.9, holdout: 0.3, seed: 0 }
    }
}

/// `f(x, y)`: two GELU hidden layers on the concatenated pair.
pub struct MineCritic {
    pub params: ParamSet,
    l1: Linear,
    l2: Linear,
    out: Linear,
}

impl MineCritic {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[stream::MINE, 1]);
        let mut params = ParamSet::new();
        let l1 = Linear::new(&mut params, "critic.l1", input, hidden, true, &mut rng);
        let l2 = Linear::new(&mut params, "critic.l2", hidden, hidden, true, &mut rng);
        let out = Linear::new(&mut params, "critic.out", hidden, 1, true, &mut rng);
        Self { params, l1, l2, out }
    }

    pub fn forward(&self, t: &mut Tape<'_>, pairs: Var) -> Var {
        let h = self.l1.forward(t, pairs);
        let h = t.gelu(h);
        let h = self.l2.forward(t, h);
        let h = t.gelu(h);
        self.out.forward(t, h)
    }

    /// Critic values for each row of `pairs`.
    pub fn values(&self, pairs: &Mat) -> Vec<f64> {
        let mut t = Tape::new(&self.params);
        let x = t.input(pairs.clone());
        let f = self.forward(&mut t, x);
        t.value(f).data().to_vec()
    }
}

/// `mean f(joint) − ln mean exp f(marginal)` on a tape; the log-mean-exp is
/// max-shifted.
pub fn mine_bound_on_tape(t: &mut Tape<'_>, critic: &MineCritic, joint: &Mat, marginal: &Mat) -> Var {
    let j = t.input(joint.clone());
    let m = t.input(marginal.clone());
    let fj = critic.forward(t, j);
    let fm = critic.forward(t, m);
    let a = t.mean_all(fj);
    let b = t.log_mean_exp(fm);
    t.sub(a, b)
}

/// Value of the bound for given critic outputs.
pub fn mine_bound(joint_values: &[f64], marginal_values: &[f64]) -> Result<f64> {
    if joint_values.is_empty() || marginal_values.is_empty() {
        return Err(Error::Data("MINE needs non-empty sample sets".into()));
    }
    let mean = joint_values.iter().sum::<f64>() / joint_values.len() as f64;
    let lme = crate::autodiff::log_sum_exp(marginal_values) - (marginal_values.len() as f64).ln();
    let v = mean - lme;
    if !v.is_finite() {
        return Err(Error::Numerical(format!("MINE bound is {v}")));
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub task: Option<String>,
    /// Best EMA-smoothed held-out bound, in nats.
    pub bound: f64,
    /// Held-out bound after every optimisation step.
    pub curve: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub n_train: usize,
    pub n_heldout: usize,
}

/// Columns scaled to unit variance after centring; constant columns are only
/// centred.
pub fn standardize(m: &Mat) -> Mat {
    let (n, d) = m.shape();
    let mut out = m.clone();
    for c in 0..d {
        let mean = (0..n).map(|r| m.at(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (m.at(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for r in 0..n {
            let v = m.at(r, c) - mean;
            out.set(r, c, if sd > 1e-12 { v / sd } else { 0.0 });
        }
    }
    out
}

fn pairs(x: &Mat, y: &Mat, rows: &[usize], y_rows: &[usize]) -> Mat {
    let (dx, dy) = (x.cols(), y.cols());
    Mat::from_fn(rows.len(), dx + dy, |r, c| if c < dx { x.at(rows[r], c) } else { y.at(y_rows[r], c - dx) })
}

struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, _, p)| Mat::zeros(p.rows(), p.cols())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// Gradient ascent step.
    fn ascend(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) {
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(self.m[k].data_mut()).zip(self.v[k].data_mut()) {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *w += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Trains a fresh critic on paired rows of `x` and `y` and reports the best
/// smoothed held-out bound. Marginal samples come from shuffling `y` within
/// each batch.
pub fn estimate_mi(x: &Mat, y: &Mat, cfg: &MineConfig) -> Result<MiEstimate> {
    let n = x.rows();
    if n != y.rows() {
        return Err(Error::Shape(format!("{} inputs vs {} outputs", n, y.rows())));
    }
    if n < 20 || cfg.steps == 0 || cfg.batch_size < 2 || !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::Config(format!("MINE needs ≥ 20 samples and a valid config, got n = {n}, {cfg:?}")));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Numerical("non-finite MINE samples".into()));
    }
    let (xs, ys) = (standardize(x), standardize(y));
    let mut rng = seed::rng(cfg.seed, &[stream::MINE, 0]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_held = ((n as f64 * cfg.holdout).round() as usize).clamp(2, n - 2);
    let (held, train) = order.split_at(n_held);
    let mut held_perm = held.to_vec();
    held_perm.shuffle(&mut rng);
    let held_joint = pairs(&xs, &ys, held, held);
    let held_marg = pairs(&xs, &ys, held, &held_perm);

    let mut critic = MineCritic::new(xs.cols() + ys.cols(), cfg.hidden, cfg.seed);
    let mut adam = Adam::new(&critic.params);
    let b = cfg.batch_size.min(train.len());
    let mut pool = train.to_vec();
    let mut cursor = pool.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut smoothed = Vec::with_capacity(cfg.steps);
    let mut ema: Option<f64> = None;
    for _ in 0..cfg.steps {
        if cursor + b > pool.len() {
            pool.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = &pool[cursor..cursor + b];
        cursor += b;
        let mut perm = rows.to_vec();
        perm.shuffle(&mut rng);
        let joint = pairs(&xs, &ys, rows, rows);
        let marg = pairs(&xs, &ys, rows, &perm);
        let grads = {
            let mut t = Tape::new(&critic.params);
            let bound = mine_bound_on_tape(&mut t, &critic, &joint, &marg);
            if !t.scalar(bound).is_finite() {
                return Err(Error::Numerical("MINE training bound is not finite".into()));
            }
            t.backward(bound).into_params()
        };
        adam.ascend(&mut critic.params, &grads, cfg.lr);
        let h = mine_bound(&critic.values(&held_joint), &critic.values(&held_marg))?;
        curve.push(h);
        let s = match ema {
            None => h,
            Some(e) => cfg.ema * e + (1.0 - cfg.ema) * h,
        };
        ema = Some(s);
        smoothed.push(s);
    }
    let bound = smoothed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MiEstimate { task: None, bound, curve, smoothed, n_train: train.len(), n_heldout: n_held })
}

/// Closed-form mutual information of a bivariate Gaussian with correlation ρ.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_critic_gives_zero() {
        assert!(mine_bound(&[1.7; 4], &[1.7; 9]).unwrap().abs() < 1e-12);
        assert!(mine_bound(&[], &[1.0]).is_err());
        // Large values must not overflow the log-mean-exp.
        assert!((mine_bound(&[800.0], &[800.0, 800.0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn standardize_handles_constant_columns() {
        let m = Mat::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        let s = standardize(&m);
        assert_eq!(s.data(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn independent_and_constant_outputs_give_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::randn(2000, 3, 1.0, &mut rng);
        let y = Mat::randn(2000, 1, 1.0, &mut rng);
        let cfg = MineConfig { steps: 200, ..Default::default() };
        let e = estimate_mi(&x, &y, &cfg).unwrap();
        assert!(e.bound < 0.05, "{}", e.bound);
        assert_eq!(e.curve.len(), 200);
        let c = estimate_mi(&x, &Mat::filled(2000, 1, 0.3), &cfg).unwrap();
        assert!(c.bound.abs() < 0.05, "{}", c.bound);
        assert_eq!(estimate_mi(&x, &y, &cfg).unwrap(), e);
    }
}
