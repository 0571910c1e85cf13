use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamId, ParamSet};
use crate::seed::{self, stream};

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Gradient magnitude below which central differences are dominated by
/// rounding (about `ε·|L|/h` for step `h`); the audit divides by at least this.
pub const AUDIT_FLOOR: f64 = 1e-6;

fn audit_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(AUDIT_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub coords: Vec<(String, usize)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Relative error with the denominator floored at [`AUDIT_FLOOR`].
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

/// Compares `grads` with central differences of `loss` at `n_coords`
/// coordinates. A parameter block is drawn uniformly first, then a coordinate
/// within it, so small blocks are not drowned out by the embedding tables.
pub fn finite_difference_audit<F>(loss: F, params: &ParamSet, grads: &Grads, n_coords: usize, step: f64, seed: u64) -> AuditReport
where
    F: Fn(&ParamSet) -> f64,
{
    let mut rng = seed::rng(seed, &[stream::AUDIT]);
    let ids: Vec<ParamId> = params.ids().collect();
    let mut probe = params.clone();
    let mut report = AuditReport { coords: Vec::new(), analytic: Vec::new(), numeric: Vec::new(), max_relative_error: 0.0, max_abs_error: 0.0 };
    for _ in 0..n_coords {
        let id = ids[rng.random_range(0..ids.len())];
        let k = rng.random_range(0..params.get(id).len());
        let x = params.get(id).data()[k];
        probe.get_mut(id).data_mut()[k] = x + step;
        let up = loss(&probe);
        probe.get_mut(id).data_mut()[k] = x - step;
        let down = loss(&probe);
        probe.get_mut(id).data_mut()[k] = x;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads.coord(id, k);
        report.max_relative_error = report.max_relative_error.max(audit_error(numeric, analytic));
        report.max_abs_error = report.max_abs_error.max((numeric - analytic).abs());
        report.coords.push((params.name(id).to_string(), k));
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;

    fn quad() -> (ParamSet, Grads) {
        let mut ps = ParamSet::new();
        let a = ps.add("a", Mat::row_vector(vec![1.0, -2.0, 0.5]));
        let b = ps.add("b", Mat::row_vector(vec![3.0]));
        let mut g = Grads::for_params(&ps);
        // f = Σ a_i² + 3 b²
        g.accumulate(a, &Mat::row_vector(vec![2.0, -4.0, 1.0]));
        g.accumulate(b, &Mat::row_vector(vec![18.0]));
        (ps, g)
    }

    fn f(p: &ParamSet) -> f64 {
        p.iter().map(|(_, name, m)| m.data().iter().map(|x| x * x).sum::<f64>() * if name == "b" { 3.0 } else { 1.0 }).sum()
    }

    #[test]
    fn quadratic_is_exact() {
        let (ps, g) = quad();
        assert!(finite_difference_audit(f, &ps, &g, 20, 1e-3, 0).max_relative_error < 1e-8);
    }

    #[test]
    fn halving_the_step_quarters_the_error() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Mat::row_vector(vec![0.7]));
        let mut g = Grads::for_params(&ps);
        g.accumulate(x, &Mat::row_vector(vec![0.7f64.cos()]));
        let sin = |p: &ParamSet| p.get(ParamId(0)).data()[0].sin();
        let e1 = finite_difference_audit(sin, &ps, &g, 1, 1e-2, 0).max_relative_error;
        let e2 = finite_difference_audit(sin, &ps, &g, 1, 5e-3, 0).max_relative_error;
        assert!((e1 / e2 - 4.0).abs() < 0.05, "ratio {}", e1 / e2);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let (ps, mut g) = quad();
        g.scale(1.5);
        assert!(finite_difference_audit(f, &ps, &g, 20, 1e-3, 0).max_relative_error > 0.3);
    }
}
