//! PCA projections of hidden states and Gaussian KDE grids.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `M × 2` projected points.
    pub points: Vec<[f64; 2]>,
    /// Variances along the two components (top-2 eigenvalues).
    pub explained: [f64; 2],
    /// Principal directions, one `d`-vector per component.
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

/// Sample covariance (`n − 1` denominator) and column means.
pub fn covariance(h: &Mat) -> (DMatrix<f64>, Vec<f64>) {
    let (n, d) = h.shape();
    let mean: Vec<f64> = (0..d).map(|c| (0..n).map(|r| h.at(r, c)).sum::<f64>() / n as f64).collect();
    let centred = DMatrix::from_fn(n, d, |r, c| h.at(r, c) - mean[c]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    (cov, mean)
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue, each
/// vector signed so its first non-negligible entry is positive.
pub fn sorted_eigen(cov: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..eig.eigenvalues.len())
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            if v.iter().find(|x| x.abs() > 1e-12).is_some_and(|x| *x < 0.0) {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[k].max(0.0), v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Mean-centred projection onto the top two principal directions.
pub fn pca_project(h: &Mat) -> Result<Projection> {
    let (n, d) = h.shape();
    if n < 3 || d == 0 {
        return Err(Error::Data(format!("PCA needs at least 3 rows, got {n} × {d}")));
    }
    if !h.is_finite() {
        return Err(Error::Numerical("non-finite hidden states".into()));
    }
    let (cov, mean) = covariance(h);
    let pairs = sorted_eigen(cov);
    let scale = pairs[0].0;
    if scale <= 1e-12 * (1.0 + mean.iter().map(|m| m * m).sum::<f64>()) {
        return Err(Error::Data("rank-0 input: all rows are identical".into()));
    }
    let comp = |k: usize| -> Vec<f64> { pairs.get(k).map_or_else(|| vec![0.0; d], |p| p.1.clone()) };
    let components = [comp(0), comp(1)];
    let explained = [pairs[0].0, pairs.get(1).map_or(0.0, |p| p.0)];
    let points = (0..n)
        .map(|r| {
            let mut p = [0.0; 2];
            for (k, c) in components.iter().enumerate() {
                p[k] = (0..d).map(|j| (h.at(r, j) - mean[j]) * c[j]).sum();
            }
            p
        })
        .collect();
    Ok(Projection { points, explained, components, mean })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeGrid {
    pub bandwidth: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row `i` holds the density at `ys[i]` across `xs`.
    pub density: Vec<Vec<f64>>,
}

impl KdeGrid {
    /// Riemann sum of the density over the grid.
    pub fn integral(&self) -> f64 {
        let dx = (self.xs[self.xs.len() - 1] - self.xs[0]) / (self.xs.len() - 1) as f64;
        let dy = (self.ys[self.ys.len() - 1] - self.ys[0]) / (self.ys.len() - 1) as f64;
        self.density.iter().flatten().sum::<f64>() * dx * dy
    }

    /// Grid coordinates of the maximum density.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, row) in self.density.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        (self.xs[best.1], self.ys[best.0])
    }
}

pub const DEFAULT_GRID: usize = 80;

/// Scott's rule for 2-D data: `n^{−1/6}` times the mean per-axis standard
/// deviation.
pub fn scott_bandwidth(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let sd = |k: usize| {
        let m = points.iter().map(|p| p[k]).sum::<f64>() / n;
        (points.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    };
    0.5 * (sd(0) + sd(1)) * n.powf(-1.0 / 6.0)
}

/// Isotropic Gaussian KDE on a `grid × grid` lattice spanning the points with
/// three-bandwidth margins.
pub fn kde_density(points: &[[f64; 2]], bandwidth: f64, grid: usize) -> Result<KdeGrid> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if points.is_empty() || grid < 2 {
        return Err(Error::Data("KDE needs points and a grid of at least 2".into()));
    }
    let axis = |k: usize| -> Vec<f64> {
        let lo = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
        let hi = points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
        (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect()
    };
    let (xs, ys) = (axis(0), axis(1));
    let norm = 1.0 / (2.0 * std::f64::consts::PI * bandwidth * bandwidth * points.len() as f64);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let density = ys
        .iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| norm * points.iter().map(|p| (-((x - p[0]).powi(2) + (y - p[1]).powi(2)) * inv).exp()).sum::<f64>())
                .collect()
        })
        .collect();
    Ok(KdeGrid { bandwidth, xs, ys, density })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent check: power iteration with deflation.
    fn power_top2(cov: &DMatrix<f64>) -> [f64; 2] {
        let mut a = cov.clone();
        let mut out = [0.0; 2];
        for slot in &mut out {
            let mut v = nalgebra::DVector::from_element(a.nrows(), 1.0);
            for _ in 0..5000 {
                let w = &a * &v;
                let n = w.norm();
                if n == 0.0 {
                    break;
                }
                v = w / n;
            }
            let lambda = (v.transpose() * &a * &v)[0];
            *slot = lambda;
            a -= lambda * &v * v.transpose();
        }
        out
    }

    #[test]
    fn explained_variance_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Mat::randn(40, 4, 1.0, &mut rng);
        let stretched = Mat::from_fn(40, 4, |r, c| h.at(r, c) * [3.0, 1.5, 0.5, 0.2][c]);
        let p = pca_project(&stretched).unwrap();
        let (cov, _) = covariance(&stretched);
        let oracle = power_top2(&cov);
        assert!((p.explained[0] - oracle[0]).abs() < 1e-9 && (p.explained[1] - oracle[1]).abs() < 1e-9);
        // The projected sample variances equal the eigenvalues.
        for k in 0..2 {
            let var = p.points.iter().map(|q| q[k] * q[k]).sum::<f64>() / 39.0;
            assert!((var - p.explained[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_points_have_no_second_component() {
        let h = Mat::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], vec![-1.0, -2.0, -3.0]]);
        let p = pca_project(&h).unwrap();
        assert!(p.explained[1].abs() < 1e-12);
        assert!(p.components[0][0] > 0.0);
    }

    #[test]
    fn translation_invariant_and_rank_zero_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = Mat::randn(10, 3, 1.0, &mut rng);
        let shifted = h.map(|x| x + 7.0);
        let (a, b) = (pca_project(&h).unwrap(), pca_project(&shifted).unwrap());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
        assert!(pca_project(&Mat::filled(5, 3, 2.0)).is_err());
        assert!(pca_project(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn two_component_reconstruction_loses_the_discarded_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = Mat::randn(12, 4, 1.0, &mut rng);
        let p = pca_project(&h).unwrap();
        let (cov, mean) = covariance(&h);
        let eig = sorted_eigen(cov);
        let mut err = 0.0;
        for r in 0..12 {
            for j in 0..4 {
                let rec = mean[j] + p.points[r][0] * p.components[0][j] + p.points[r][1] * p.components[1][j];
                err += (h.at(r, j) - rec).powi(2);
            }
        }
        let discarded: f64 = eig[2..].iter().map(|e| e.0).sum();
        assert!((err / 11.0 - discarded).abs() < 1e-9);
    }

    #[test]
    fn kde_properties() {
        let single = kde_density(&[[1.0, -2.0]], 0.5, 81).unwrap();
        let (x, y) = single.argmax();
        assert!((x - 1.0).abs() < 1e-9 && (y + 2.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 2]> = (0..200).map(|_| {
            let m = Mat::randn(1, 2, 1.0, &mut rng);
            [m.at(0, 0), m.at(0, 1)]
        }).collect();
        let h = scott_bandwidth(&pts);
        let g = kde_density(&pts, h, DEFAULT_GRID).unwrap();
        assert!((g.integral() - 1.0).abs() < 0.02, "{}", g.integral());
        assert!(g.density.iter().flatten().all(|&v| v >= 0.0));
        let peak = |g: &KdeGrid| g.density.iter().flatten().copied().fold(0.0, f64::max);
        assert!(peak(&kde_density(&pts, 2.0 * h, DEFAULT_GRID).unwrap()) < peak(&g));
        assert!(kde_density(&pts, 0.0, 10).is_err());
    }
}
