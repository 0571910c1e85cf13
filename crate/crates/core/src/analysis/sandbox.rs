//! Linear-Gaussian sandbox comparing a generative (shared-covariance class
//! means) and a discriminative (logistic regression) estimate of the same
//! discriminant direction, for two tasks at once.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::seed::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MiMode {
    /// `½·ln(1 + w²σ_X²/σ_ε²)`, the exact MI of the linear-Gaussian channel.
    Analytic,
    /// `½·ln(1 + w·σ_X²/σ_ε²)`, the printed form.
    Literal,
}

/// Mutual information of `Y = w·X + b + ε` with `Var X = σ_X²`, `Var ε = σ_ε²`.
pub fn mi_from_w(w: f64, var_x: f64, var_eps: f64, mode: MiMode) -> Result<f64> {
    if !(var_eps > 0.0) {
        return Err(Error::Config(format!("noise variance must be positive, got {var_eps}")));
    }
    let arg = match mode {
        MiMode::Analytic => w * w * var_x / var_eps,
        MiMode::Literal => w * var_x / var_eps,
    };
    if arg <= -1.0 {
        return Err(Error::Numerical(format!("literal MI undefined for w·σ_X²/σ_ε² = {arg} ≤ −1")));
    }
    Ok(0.5 * arg.ln_1p())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSandboxConfig {
    pub dim: usize,
    /// Input mean μ; class means sit at `μ ± δ/2`.
    pub mean: Vec<f64>,
    /// Row-major `dim × dim` shared covariance Σ.
    pub covariance: Vec<f64>,
    /// Class-mean offsets δ for the search and recommendation tasks.
    pub delta_search: Vec<f64>,
    pub delta_rec: Vec<f64>,
    /// Prior probability of class 1.
    pub prior: f64,
    /// Noise variance σ_ε² of the score channel used for the MI conversion.
    pub noise_var: f64,
    pub n: usize,
    pub trials: usize,
    pub mi_mode: MiMode,
    pub seed: u64,
}

impl GaussianSandboxConfig {
    /// AR(0.5) covariance with two distinct task directions.
    pub fn with_size(dim: usize, n: usize, trials: usize) -> Self {
        let covariance = (0..dim * dim).map(|k| 0.5f64.powi((k / dim).abs_diff(k % dim) as i32)).collect();
        let delta_search = (0..dim).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let delta_rec = (0..dim).map(|i| 1.0 / (1.0 + i as f64)).collect();
        Self {
            dim,
            mean: vec![0.0; dim],
            covariance,
            delta_search,
            delta_rec,
            prior: 0.5,
            noise_var: 1.0,
            n,
            trials,
            mi_mode: MiMode::Analytic,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || self.mean.len() != d || self.covariance.len() != d * d || self.delta_search.len() != d || self.delta_rec.len() != d {
            return Err(Error::Config("sandbox vectors must match the dimension".into()));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) || !(self.noise_var > 0.0) || self.n < 4 || self.trials == 0 {
            return Err(Error::Config("need 0 < prior < 1, σ_ε² > 0, n ≥ 4, trials ≥ 1".into()));
        }
        if Cholesky::new(self.sigma()).is_none() {
            return Err(Error::Config("covariance is not positive definite".into()));
        }
        Ok(())
    }

    fn sigma(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.covariance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub gen_error: f64,
    pub disc_error: f64,
    pub gen_mi_sum: f64,
    pub disc_mi_sum: f64,
    pub resampled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandboxReport {
    pub config: GaussianSandboxConfig,
    /// Mean over trials and both tasks of `‖ŵ − w*‖`.
    pub mean_gen_error: f64,
    pub mean_disc_error: f64,
    pub mean_gen_mi_sum: f64,
    pub mean_disc_mi_sum: f64,
    /// MI of the true direction summed over tasks (upper bound for both).
    pub true_mi_sum: f64,
    /// Fraction of trials with discriminative MI sum ≤ generative MI sum.
    pub inequality_fraction: f64,
    pub resampled: usize,
    pub trials: Vec<TrialResult>,
}

/// Labelled sample: rows of X and labels in {0, 1}.
struct Sample {
    x: DMatrix<f64>,
    y: Vec<u8>,
}

fn draw<R: Rng>(cfg: &GaussianSandboxConfig, chol: &DMatrix<f64>, delta: &[f64], rng: &mut R) -> Sample {
    let d = cfg.dim;
    let mut x = DMatrix::zeros(cfg.n, d);
    let mut y = Vec::with_capacity(cfg.n);
    for r in 0..cfg.n {
        let label = (rng.random::<f64>() < cfg.prior) as u8;
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let v = chol * z;
        let sign = if label == 1 { 0.5 } else { -0.5 };
        for c in 0..d {
            x[(r, c)] = cfg.mean[c] + sign * delta[c] + v[c];
        }
        y.push(label);
    }
    Sample { x, y }
}

/// Σ̂⁻¹(m₁ − m₀) from class means and the pooled covariance.
fn generative_fit(s: &Sample) -> Option<DVector<f64>> {
    let (n, d) = s.x.shape();
    let mut means = [DVector::zeros(d), DVector::zeros(d)];
    let mut counts = [0usize; 2];
    for r in 0..n {
        let k = s.y[r] as usize;
        counts[k] += 1;
        means[k] += s.x.row(r).transpose();
    }
    if counts.iter().any(|&c| c < 2) {
        return None;
    }
    for k in 0..2 {
        means[k] /= counts[k] as f64;
    }
    let mut pooled = DMatrix::zeros(d, d);
    for r in 0..n {
        let c = s.x.row(r).transpose() - &means[s.y[r] as usize];
        pooled += &c * c.transpose();
    }
    pooled /= (n - 2) as f64;
    let chol = Cholesky::new(pooled)?;
    Some(chol.solve(&(&means[1] - &means[0])))
}

/// Logistic regression with intercept by full-batch gradient descent; step
/// `1/L` with `L = λ_max(X̃ᵀX̃)/(4n)`.
fn discriminative_fit(s: &Sample) -> DVector<f64> {
    let (n, d) = s.x.shape();
    let xt = DMatrix::from_fn(n, d + 1, |r, c| if c < d { s.x[(r, c)] } else { 1.0 });
    let gram = xt.transpose() * &xt;
    let lmax = nalgebra::SymmetricEigen::new(gram).eigenvalues.max();
    let step = 4.0 * n as f64 / lmax;
    let y = DVector::from_fn(n, |r, _| s.y[r] as f64);
    let mut w = DVector::zeros(d + 1);
    for _ in 0..20_000 {
        let z = &xt * &w;
        let p = z.map(crate::autodiff::sigmoid);
        let g = xt.transpose() * (p - &y) / n as f64;
        if g.norm() < 1e-8 {
            break;
        }
        w -= step * g;
    }
    w.rows(0, d).into_owned()
}

/// MI between the prediction `ŵᵀX` and the score `w*ᵀX + ε`, written as the
/// linear-Gaussian channel from the prediction to the score.
fn prediction_mi(w_hat: &DVector<f64>, w_star: &DVector<f64>, sigma: &DMatrix<f64>, noise_var: f64, mode: MiMode) -> Result<f64> {
    let var_pred = (w_hat.transpose() * sigma * w_hat)[0];
    if var_pred <= 0.0 {
        return Ok(0.0);
    }
    let cov = (w_star.transpose() * sigma * w_hat)[0];
    let var_score = (w_star.transpose() * sigma * w_star)[0];
    let w_eff = cov / var_pred;
    let resid = noise_var + var_score - cov * cov / var_pred;
    mi_from_w(w_eff, var_pred, resid, mode)
}

fn run_trial(cfg: &GaussianSandboxConfig, trial: usize, sigma: &DMatrix<f64>, chol: &DMatrix<f64>) -> Result<TrialResult> {
    let sigma_inv = sigma.clone().try_inverse().ok_or_else(|| Error::Config("singular covariance".into()))?;
    let mut out = TrialResult { gen_error: 0.0, disc_error: 0.0, gen_mi_sum: 0.0, disc_mi_sum: 0.0, resampled: 0 };
    for (k, delta) in [&cfg.delta_search, &cfg.delta_rec].into_iter().enumerate() {
        let w_star = &sigma_inv * DVector::from_column_slice(delta);
        let mut attempt = 0u64;
        let (sample, w_gen) = loop {
            let mut rng = seed::rng(cfg.seed, &[stream::SANDBOX, trial as u64, k as u64, attempt]);
            let s = draw(cfg, chol, delta, &mut rng);
            match generative_fit(&s) {
                Some(w) => break (s, w),
                None if attempt < 100 => {
                    attempt += 1;
                    out.resampled += 1;
                }
                None => return Err(Error::Numerical(format!("trial {trial}: covariance stayed singular"))),
            }
        };
        let w_disc = discriminative_fit(&sample);
        out.gen_error += (&w_gen - &w_star).norm() / 2.0;
        out.disc_error += (&w_disc - &w_star).norm() / 2.0;
        out.gen_mi_sum += prediction_mi(&w_gen, &w_star, sigma, cfg.noise_var, cfg.mi_mode)?;
        out.disc_mi_sum += prediction_mi(&w_disc, &w_star, sigma, cfg.noise_var, cfg.mi_mode)?;
    }
    Ok(out)
}

pub fn run_separability_experiment(cfg: &GaussianSandboxConfig, exec: Exec) -> Result<SandboxReport> {
    cfg.validate()?;
    let sigma = cfg.sigma();
    let chol = Cholesky::new(sigma.clone()).expect("validated").l();
    let ids: Vec<usize> = (0..cfg.trials).collect();
    let trials = exec.try_map(&ids, |&t| run_trial(cfg, t, &sigma, &chol))?;
    let n = trials.len() as f64;
    let mean = |f: fn(&TrialResult) -> f64| trials.iter().map(f).sum::<f64>() / n;
    let sigma_inv = sigma.clone().try_inverse().expect("positive definite");
    let mut true_mi_sum = 0.0;
    for delta in [&cfg.delta_search, &cfg.delta_rec] {
        let w = &sigma_inv * DVector::from_column_slice(delta);
        true_mi_sum += prediction_mi(&w, &w, &sigma, cfg.noise_var, cfg.mi_mode)?;
    }
    Ok(SandboxReport {
        config: cfg.clone(),
        mean_gen_error: mean(|t| t.gen_error),
        mean_disc_error: mean(|t| t.disc_error),
        mean_gen_mi_sum: mean(|t| t.gen_mi_sum),
        mean_disc_mi_sum: mean(|t| t.disc_mi_sum),
        true_mi_sum,
        inequality_fraction: trials.iter().filter(|t| t.disc_mi_sum <= t.gen_mi_sum).count() as f64 / n,
        resampled: trials.iter().map(|t| t.resampled).sum(),
        trials,
    })
}
