//! Comparator estimators: entry-adaptive hard thresholding with cross-validated
//! tuning, and a simplified POET (top-K spectral part plus thresholded residual).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::{center_columns, DataMatrix, SymMat};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtConfig {
    pub delta_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for AtConfig {
    fn default() -> Self {
        Self {
            delta_grid: log_grid(0.05, 5.0, 50),
            folds: 5,
        }
    }
}

impl AtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(invalid(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.delta_grid.is_empty() {
            return Err(invalid("delta grid is empty"));
        }
        if self.delta_grid.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(invalid("delta grid values must be finite and >= 0"));
        }
        if self.delta_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("delta grid must be strictly increasing"));
        }
        Ok(())
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Sample covariance (denominator `n`) and the entry scales
/// `sqrt(theta_ij log p / n)`, where `theta_ij` is the empirical variance of
/// the products `x_i x_j`.
#[derive(Debug, Clone)]
pub struct ThresholdStats {
    pub cov: SymMat,
    pub scale: DMatrix<f64>,
}

impl ThresholdStats {
    pub fn new(x: &DataMatrix) -> Result<Self> {
        let xc = center_columns(x)?;
        let m = xc.as_matrix();
        let (p, n) = (m.nrows(), m.ncols() as f64);
        let cov = SymMat::new(m * m.transpose() / n)?;
        let sq = m.component_mul(m);
        let fourth = &sq * sq.transpose() / n;
        let logp = (p as f64).ln();
        let scale = DMatrix::from_fn(p, p, |i, j| {
            let (a, b) = (i.min(j), i.max(j));
            let s = cov.get(a, b);
            let theta = (fourth[(a, b)] - s * s).max(0.0);
            (theta * logp / n).sqrt()
        });
        Ok(Self { cov, scale })
    }

    /// Entries whose threshold collapses to 0 because the product variance is 0.
    pub fn zero_scale_entries(&self) -> usize {
        let p = self.cov.dim();
        (0..p)
            .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
            .filter(|&(i, j)| self.scale[(i, j)] == 0.0)
            .count()
    }

    /// Hard-threshold off-diagonal entries at `delta * scale`; the diagonal is kept.
    pub fn threshold(&self, delta: f64) -> SymMat {
        apply_threshold(&self.cov, &self.scale, delta)
    }
}

pub fn apply_threshold(s: &SymMat, scale: &DMatrix<f64>, delta: f64) -> SymMat {
    SymMat::from_fn(s.dim(), |i, j| {
        let v = s.get(i, j);
        if i == j || v.abs() > delta * scale[(i, j)] {
            v
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct AtFit {
    pub estimate: SymMat,
    pub delta: f64,
    pub stats: ThresholdStats,
}

/// Fold membership: a seeded permutation cut into near-equal consecutive parts.
fn fold_indices(n: usize, folds: usize, seed: RngSeed) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut fold = perm[start..start + len].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += len;
    }
    out
}

/// Grid value of `delta` minimizing the mean squared Frobenius distance between
/// the thresholded training-fold covariance and the validation-fold covariance.
pub fn cross_validate_delta(x: &DataMatrix, cfg: &AtConfig, seed: RngSeed) -> Result<f64> {
    cfg.validate()?;
    if cfg.delta_grid.len() == 1 {
        return Ok(cfg.delta_grid[0]);
    }
    let n = x.n();
    if n < 2 * cfg.folds {
        return Err(invalid(format!(
            "{}-fold cross-validation needs n >= {}, got {n}",
            cfg.folds,
            2 * cfg.folds
        )));
    }
    let folds = fold_indices(n, cfg.folds, seed);
    let mut loss = vec![0.0; cfg.delta_grid.len()];
    for fold in &folds {
        let train: Vec<usize> = (0..n).filter(|i| fold.binary_search(i).is_err()).collect();
        let stats = ThresholdStats::new(&x.select_columns(&train))?;
        let valid = center_columns(&x.select_columns(fold))?;
        let vm = valid.as_matrix();
        let vcov = vm * vm.transpose() / fold.len() as f64;
        for (l, &delta) in loss.iter_mut().zip(&cfg.delta_grid) {
            let est = stats.threshold(delta);
            *l += (est.as_matrix() - &vcov).norm_squared();
        }
    }
    Ok(cfg.delta_grid[crate::sure::argmin(&loss)])
}

pub fn adaptive_threshold(x: &DataMatrix, cfg: &AtConfig, seed: RngSeed) -> Result<AtFit> {
    let delta = cross_validate_delta(x, cfg, seed)?;
    let stats = ThresholdStats::new(x)?;
    let zeros = stats.zero_scale_entries();
    if zeros > 0 {
        log::debug!("{zeros} entries have zero product variance and are not thresholded");
    }
    Ok(AtFit {
        estimate: stats.threshold(delta),
        delta,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoetConfig {
    pub factors: usize,
    pub residual: AtConfig,
}

#[derive(Debug, Clone)]
pub struct PoetFit {
    pub estimate: SymMat,
    pub low_rank: SymMat,
    pub residual: AtFit,
}

/// Top-`factors` spectral part of the sample covariance plus adaptive
/// thresholding of the residual data `X - V V^T X`. `factors = 0` reduces to
/// [`adaptive_threshold`].
pub fn poet(x: &DataMatrix, cfg: &PoetConfig, seed: RngSeed) -> Result<PoetFit> {
    let xc = center_columns(x)?;
    let (p, n) = (xc.p(), xc.n());
    if cfg.factors >= p.min(n) && cfg.factors > 0 {
        return Err(invalid(format!(
            "POET needs factors < min(n, p) = {}, got {}",
            p.min(n),
            cfg.factors
        )));
    }
    let m = xc.as_matrix();
    let cov = SymMat::new(m * m.transpose() / n as f64)?;
    let (vals, vecs) = cov.eigen()?;
    let tol = 1e-10 * vals[0].abs().max(f64::MIN_POSITIVE);
    let rank = vals.iter().filter(|v| **v > tol).count();
    if cfg.factors > rank {
        return Err(invalid(format!(
            "POET factors {} exceed sample covariance rank {rank}",
            cfg.factors
        )));
    }
    let v = vecs.columns(0, cfg.factors).into_owned();
    let lam = nalgebra::DVector::from_iterator(cfg.factors, vals.iter().take(cfg.factors).copied());
    let low = &v * DMatrix::from_diagonal(&lam) * v.transpose();
    let low_rank = SymMat::new(low)?;
    let resid = DataMatrix::new(m - &v * (v.transpose() * m))?;
    let residual = adaptive_threshold(&resid, &cfg.residual, seed)?;
    let estimate = low_rank.axpby(1.0, &residual.estimate, 1.0)?;
    Ok(PoetFit {
        estimate,
        low_rank,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::draw_data;

    fn sample(p: usize, n: usize, seed: u64) -> DataMatrix {
        let s0 = SymMat::from_fn(p, |i, j| if i == j { 1.0 } else { 0.3f64.powi((j - i) as i32) });
        center_columns(&draw_data(&s0, n, RngSeed::new(seed)).unwrap()).unwrap()
    }

    #[test]
    fn zero_delta_returns_sample_covariance() {
        let x = sample(6, 30, 1);
        let cfg = AtConfig { delta_grid: vec![0.0], folds: 5 };
        let fit = adaptive_threshold(&x, &cfg, RngSeed::new(0)).unwrap();
        assert_eq!(fit.estimate, fit.stats.cov);
    }

    #[test]
    fn huge_delta_returns_diagonal() {
        let x = sample(6, 30, 2);
        let cfg = AtConfig { delta_grid: vec![1e12], folds: 5 };
        let fit = adaptive_threshold(&x, &cfg, RngSeed::new(0)).unwrap();
        assert_eq!(fit.estimate, SymMat::from_diagonal(&fit.stats.cov.diagonal()));
    }

    #[test]
    fn thresholding_is_idempotent_and_keeps_survivors() {
        let x = sample(8, 40, 3);
        let stats = ThresholdStats::new(&x).unwrap();
        let once = stats.threshold(1.0);
        let twice = apply_threshold(&once, &stats.scale, 1.0);
        assert_eq!(once, twice);
        for i in 0..8 {
            for j in 0..8 {
                let v = once.get(i, j);
                assert!(v == 0.0 || v == stats.cov.get(i, j));
            }
        }
    }

    #[test]
    fn cv_singleton_and_determinism() {
        let x = sample(5, 25, 4);
        let single = AtConfig { delta_grid: vec![0.7], folds: 5 };
        assert_eq!(cross_validate_delta(&x, &single, RngSeed::new(1)).unwrap(), 0.7);
        let cfg = AtConfig::default();
        let a = cross_validate_delta(&x, &cfg, RngSeed::new(9)).unwrap();
        let b = cross_validate_delta(&x, &cfg, RngSeed::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn folds_partition_observations() {
        let folds = fold_indices(23, 5, RngSeed::new(2));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
    }

    #[test]
    fn config_validation() {
        assert!(AtConfig { delta_grid: vec![], folds: 5 }.validate().is_err());
        assert!(AtConfig { delta_grid: vec![1.0, 0.5], folds: 5 }.validate().is_err());
        assert!(AtConfig { delta_grid: vec![1.0], folds: 1 }.validate().is_err());
        let g = log_grid(0.05, 5.0, 50);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 0.05).abs() < 1e-15 && (g[49] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn poet_without_factors_is_adaptive_threshold() {
        let x = sample(6, 30, 5);
        let at = AtConfig::default();
        let fit = poet(&x, &PoetConfig { factors: 0, residual: at.clone() }, RngSeed::new(3)).unwrap();
        let direct = adaptive_threshold(&x, &at, RngSeed::new(3)).unwrap();
        assert_eq!(fit.estimate, direct.estimate);
    }

    #[test]
    fn poet_rank_one_is_exact() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let z: Vec<f64> = (0..12).map(|i| ((i as f64) * 1.7).sin()).collect();
        let x = DataMatrix::new(DMatrix::from_fn(4, 12, |i, j| u[i] * z[j])).unwrap();
        let xc = center_columns(&x).unwrap();
        let m = xc.as_matrix();
        let cov = SymMat::new(m * m.transpose() / 12.0).unwrap();
        let fit = poet(&x, &PoetConfig { factors: 1, residual: AtConfig::default() }, RngSeed::new(4)).unwrap();
        let diff = fit.estimate.sub(&cov).unwrap().as_matrix().amax();
        assert!(diff < 1e-12 * cov.as_matrix().amax(), "{diff}");
        assert!(poet(&x, &PoetConfig { factors: 2, residual: AtConfig::default() }, RngSeed::new(4)).is_err());
    }

    #[test]
    fn poet_with_infinite_delta_keeps_diagonal() {
        let x = sample(7, 30, 6);
        let cfg = PoetConfig { factors: 2, residual: AtConfig { delta_grid: vec![1e12], folds: 5 } };
        let fit = poet(&x, &cfg, RngSeed::new(5)).unwrap();
        let xc = center_columns(&x).unwrap();
        let m = xc.as_matrix();
        let cov = SymMat::new(m * m.transpose() / 30.0).unwrap();
        for i in 0..7 {
            assert!((fit.estimate.get(i, i) - cov.get(i, i)).abs() < 1e-12);
        }
    }
}
