//! Synthetic factor-model experiments and their aggregation.
//!
//! Setting 1: `Sigma0 = L L^T + sigma0^2 I`. Setting 2: `Sigma0 = L L^T + Omega0`
//! with `Omega0` the covariance of a stationary AR(1) sequence. `L` is
//! `p x ktr` with exactly `floor(s p ktr)` entries set to zero and the rest
//! standard normal; it is redrawn for every replicate.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{adaptive_threshold, poet, AtConfig, PoetConfig};
use crate::cd::cd_estimate;
use crate::error::{invalid, CovError, Result};
use crate::matrix::{center_columns, cov_pair, frob_norm, op_norm, DataMatrix, SymMat, OP_NORM_TOL};
use crate::rng::RngSeed;
use crate::sure::{argmin, cd_loss_curve, default_grid, select_k};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "1")]
    FactorPlusIdentity,
    #[serde(rename = "2")]
    FactorPlusAr,
}

impl Setting {
    pub fn number(self) -> u8 {
        match self {
            Setting::FactorPlusIdentity => 1,
            Setting::FactorPlusAr => 2,
        }
    }

    pub fn from_number(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::FactorPlusIdentity),
            2 => Ok(Setting::FactorPlusAr),
            _ => Err(invalid(format!("setting must be 1 or 2, got {v}"))),
        }
    }
}

/// How `ar_error_var` is read in setting 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArVariance {
    /// Innovation variance: marginal variance is `v / (1 - rho^2)`.
    #[default]
    Innovation,
    /// Marginal variance is `v`.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub setting: Setting,
    pub n: usize,
    pub p: usize,
    pub ktr: usize,
    pub s: f64,
    pub sigma0_sq: f64,
    pub ar_error_var: f64,
    pub ar_coef: f64,
    pub ar_variance: ArVariance,
    pub replicates: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(setting: Setting, n: usize, p: usize, ktr: usize, s: f64, replicates: usize, seed: u64) -> Self {
        Self {
            setting,
            n,
            p,
            ktr,
            s,
            sigma0_sq: 1.0,
            ar_error_var: 0.4,
            ar_coef: 0.1,
            ar_variance: ArVariance::Innovation,
            replicates,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(invalid(format!("sparsity s must lie in (0, 1), got {}", self.s)));
        }
        if self.ktr == 0 || self.ktr >= self.p {
            return Err(invalid(format!("need 1 <= ktr < p, got ktr={} p={}", self.ktr, self.p)));
        }
        if !(self.ar_coef.abs() < 1.0) {
            return Err(invalid(format!("|ar_coef| must be < 1, got {}", self.ar_coef)));
        }
        if !(self.sigma0_sq >= 0.0) || !(self.ar_error_var >= 0.0) {
            return Err(invalid("variances must be >= 0"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be >= 1"));
        }
        if self.n < 2 {
            return Err(invalid(format!("n must be >= 2, got {}", self.n)));
        }
        Ok(())
    }

    /// AR(1) covariance `Omega0`.
    pub fn omega0(&self) -> SymMat {
        let marginal = match self.ar_variance {
            ArVariance::Innovation => self.ar_error_var / (1.0 - self.ar_coef * self.ar_coef),
            ArVariance::Marginal => self.ar_error_var,
        };
        SymMat::from_fn(self.p, |i, j| marginal * self.ar_coef.powi((j - i) as i32))
    }
}

/// Draw `Sigma0` for one replicate.
pub fn make_sigma0(cfg: &SimConfig, seed: RngSeed) -> Result<SymMat> {
    cfg.validate()?;
    let mut rng = seed.rng();
    let (p, ktr) = (cfg.p, cfg.ktr);
    let mut loadings: Vec<f64> = (0..p * ktr).map(|_| rng.sample(StandardNormal)).collect();
    let zeros = (cfg.s * (p * ktr) as f64).floor() as usize;
    for idx in rand::seq::index::sample(&mut rng, p * ktr, zeros) {
        loadings[idx] = 0.0;
    }
    let l = DMatrix::from_row_slice(p, ktr, &loadings);
    let low = SymMat::new(&l * l.transpose())?;
    Ok(match cfg.setting {
        Setting::FactorPlusIdentity => low.add_identity(cfg.sigma0_sq),
        Setting::FactorPlusAr => low.axpby(1.0, &cfg.omega0(), 1.0)?,
    })
}

/// `n` i.i.d. `N(0, sigma0)` columns via `V diag(sqrt(lambda)) Z`. Eigenvalues
/// below `1e-12 lambda_max` are clamped to zero; clearly negative ones are an
/// error.
pub fn draw_data(sigma0: &SymMat, n: usize, seed: RngSeed) -> Result<DataMatrix> {
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let p = sigma0.dim();
    let (vals, vecs) = sigma0.eigen()?;
    let top = vals[0].max(0.0);
    if vals[p - 1] < -1e-8 * top.max(f64::MIN_POSITIVE) {
        return Err(invalid(format!(
            "covariance is not positive semidefinite (min eigenvalue {})",
            vals[p - 1]
        )));
    }
    let roots: Vec<f64> = vals
        .iter()
        .map(|&v| if v > 1e-12 * top { v.sqrt() } else { 0.0 })
        .collect();
    let factor = DMatrix::from_fn(p, p, |i, j| vecs[(i, j)] * roots[j]);
    let mut rng = seed.rng();
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    DataMatrix::new(factor * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cd,
    At,
    Poet,
    Sample,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cd => "cd",
            Method::At => "at",
            Method::Poet => "poet",
            Method::Sample => "sample",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let list = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse())
            .collect::<Result<Vec<Method>>>()?;
        if list.is_empty() {
            return Err(invalid("method list is empty"));
        }
        Ok(list)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CovError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(Method::Cd),
            "at" => Ok(Method::At),
            "poet" => Ok(Method::Poet),
            "sample" => Ok(Method::Sample),
            other => Err(invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Tuning shared by all cells of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOptions {
    pub grid_step: usize,
    pub at: AtConfig,
    /// POET factor count; `None` uses the true `ktr`.
    pub poet_factors: Option<usize>,
    /// Also compute the oracle dimension `k_opt` for the C-D estimator.
    pub oracle: bool,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            grid_step: 10,
            at: AtConfig::default(),
            poet_factors: None,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub setting: u8,
    pub n: usize,
    pub p: usize,
    pub ktr: usize,
    pub s: f64,
    pub replicates: usize,
    /// Replicates that produced an estimate.
    pub used: usize,
    pub op_err_mean: f64,
    pub op_err_se: f64,
    pub fro_err_mean: f64,
    pub fro_err_se: f64,
    pub k_hat_mode: Option<usize>,
    pub k_opt: Option<usize>,
}

/// Mean and standard error `sd / sqrt(len)` (sample sd; 0 for a single value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Smallest most frequent value.
fn mode(values: &[usize]) -> Option<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, usize)> = None;
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, c)| chunk.len() > c) {
            best = Some((chunk[0], chunk.len()));
        }
    }
    best.map(|(v, _)| v)
}

struct ReplicateOutcome {
    errors: Vec<Result<(f64, f64)>>,
    k_hat: Option<usize>,
    loss: Option<Vec<f64>>,
}

fn run_replicate(
    cfg: &SimConfig,
    methods: &[Method],
    opts: &MethodOptions,
    grid: &[usize],
    r: usize,
) -> Result<ReplicateOutcome> {
    let base = RngSeed::new(cfg.seed).child(r as u64);
    let sigma0 = make_sigma0(cfg, base.child(0))?;
    let x = center_columns(&draw_data(&sigma0, cfg.n, base.child(1))?)?;
    let cov = cov_pair(&x)?;
    let p = cfg.p as f64;
    let mut k_hat = None;
    let errors = methods
        .iter()
        .map(|m| {
            let est = match m {
                Method::Cd => {
                    let curve = select_k(&cov, grid)?;
                    k_hat = Some(curve.k_hat);
                    cd_estimate(&cov.unbiased, curve.k_hat)?
                }
                Method::At => adaptive_threshold(&x, &opts.at, base.child(2))?.estimate,
                Method::Poet => {
                    let pc = PoetConfig {
                        factors: opts.poet_factors.unwrap_or(cfg.ktr),
                        residual: opts.at.clone(),
                    };
                    poet(&x, &pc, base.child(3))?.estimate
                }
                Method::Sample => cov.unbiased.clone(),
            };
            let diff = est.sub(&sigma0)?;
            Ok((op_norm(&diff, OP_NORM_TOL)? / p, frob_norm(&diff) / p))
        })
        .collect();
    let loss = if opts.oracle {
        Some(cd_loss_curve(&cov, &sigma0, grid)?)
    } else {
        None
    };
    Ok(ReplicateOutcome { errors, k_hat, loss })
}

/// Run every replicate of one configuration and aggregate per method.
///
/// A method failing on a replicate skips that replicate for that method; the
/// cell fails when more than 10% of replicates are skipped.
pub fn run_cell(cfg: &SimConfig, methods: &[Method], opts: &MethodOptions) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(invalid("no methods requested"));
    }
    let grid = default_grid(cfg.p, opts.grid_step);
    let outcomes = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, methods, opts, &grid, r))
        .collect::<Result<Vec<_>>>()?;

    let k_opt = if opts.oracle {
        let mut total = vec![0.0; grid.len()];
        for o in &outcomes {
            for (t, v) in total.iter_mut().zip(o.loss.as_ref().expect("oracle requested")) {
                *t += v;
            }
        }
        Some(grid[argmin(&total)])
    } else {
        None
    };
    let k_hats: Vec<usize> = outcomes.iter().filter_map(|o| o.k_hat).collect();

    methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let mut op = Vec::new();
            let mut fro = Vec::new();
            for (r, o) in outcomes.iter().enumerate() {
                match &o.errors[mi] {
                    Ok((a, b)) => {
                        op.push(*a);
                        fro.push(*b);
                    }
                    Err(e) => log::warn!("replicate {r}: {method} skipped: {e}"),
                }
            }
            let skipped = cfg.replicates - op.len();
            if skipped * 10 > cfg.replicates {
                return Err(invalid(format!(
                    "{method}: {skipped} of {} replicates failed",
                    cfg.replicates
                )));
            }
            let (op_err_mean, op_err_se) = mean_se(&op);
            let (fro_err_mean, fro_err_se) = mean_se(&fro);
            let is_cd = method == Method::Cd;
            Ok(BenchRecord {
                method,
                setting: cfg.setting.number(),
                n: cfg.n,
                p: cfg.p,
                ktr: cfg.ktr,
                s: cfg.s,
                replicates: cfg.replicates,
                used: op.len(),
                op_err_mean,
                op_err_se,
                fro_err_mean,
                fro_err_se,
                k_hat_mode: if is_cd { mode(&k_hats) } else { None },
                k_opt: if is_cd { k_opt } else { None },
            })
        })
        .collect()
}

/// `run_cell` for each sparsity level, sharing the base seed.
pub fn sparsity_sweep(
    base: &SimConfig,
    s_values: &[f64],
    methods: &[Method],
    opts: &MethodOptions,
) -> Result<Vec<BenchRecord>> {
    if s_values.is_empty() {
        return Err(invalid("no sparsity levels given"));
    }
    let mut out = Vec::new();
    for &s in s_values {
        let cfg = SimConfig { s, ..base.clone() };
        out.extend(run_cell(&cfg, methods, opts)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_hand_case() {
        // values 1, 2, 4: mean 7/3, sample var = (16/9 + 1/9 + 25/9)/2 = 7/3.
        let (m, se) = mean_se(&[1.0, 2.0, 4.0]);
        assert!((m - 7.0 / 3.0).abs() < 1e-15);
        assert!((se - (7.0f64 / 9.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn mode_prefers_smaller_on_ties() {
        assert_eq!(mode(&[30, 20, 30, 20, 10]), Some(20));
        assert_eq!(mode(&[]), None);
    }

    #[test]
    fn config_guards() {
        let mut cfg = SimConfig::new(Setting::FactorPlusIdentity, 20, 10, 2, 0.5, 3, 1);
        assert!(cfg.validate().is_ok());
        cfg.s = 1.0;
        assert!(make_sigma0(&cfg, RngSeed::new(0)).is_err());
        cfg.s = 0.5;
        cfg.replicates = 0;
        assert!(run_cell(&cfg, &[Method::Sample], &MethodOptions::default()).is_err());
        cfg.replicates = 2;
        assert!(run_cell(&cfg, &[], &MethodOptions::default()).is_err());
        cfg.ktr = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ar_diagonal() {
        let cfg = SimConfig::new(Setting::FactorPlusAr, 20, 6, 2, 0.5, 1, 1);
        let om = cfg.omega0();
        assert!((om.get(0, 0) - 0.4 / 0.99).abs() < 1e-15);
        assert!((om.get(0, 2) - 0.4 / 0.99 * 0.01).abs() < 1e-15);
        let marginal = SimConfig { ar_variance: ArVariance::Marginal, ..cfg };
        assert_eq!(marginal.omega0().get(3, 3), 0.4);
    }

    #[test]
    fn exact_zero_count_in_loadings() {
        let cfg = SimConfig::new(Setting::FactorPlusIdentity, 20, 30, 4, 0.5, 1, 1);
        // Setting 1 with sigma0^2 = 0 exposes L L^T; count zero rows via the
        // diagonal is not enough, so rebuild L directly with the same stream.
        let mut rng = RngSeed::new(5).rng();
        let mut l: Vec<f64> = (0..120).map(|_| rng.sample(StandardNormal)).collect();
        for idx in rand::seq::index::sample(&mut rng, 120, 60) {
            l[idx] = 0.0;
        }
        assert_eq!(l.iter().filter(|v| **v == 0.0).count(), 60);
        let s0 = make_sigma0(&cfg, RngSeed::new(5)).unwrap();
        let lm = DMatrix::from_row_slice(30, 4, &l);
        let expect = SymMat::new(&lm * lm.transpose()).unwrap().add_identity(1.0);
        assert_eq!(s0, expect);
    }

    #[test]
    fn sigma0_min_eigenvalue_bounds() {
        let mut cfg = SimConfig::new(Setting::FactorPlusIdentity, 20, 40, 5, 0.3, 1, 1);
        cfg.sigma0_sq = 0.7;
        let s0 = make_sigma0(&cfg, RngSeed::new(2)).unwrap();
        assert!(s0.min_eigenvalue().unwrap() >= 0.7 - 1e-9);
        let cfg2 = SimConfig { setting: Setting::FactorPlusAr, ..cfg };
        let om_min = cfg2.omega0().min_eigenvalue().unwrap();
        assert!(om_min > 0.0);
        let s0 = make_sigma0(&cfg2, RngSeed::new(2)).unwrap();
        assert!(s0.min_eigenvalue().unwrap() >= om_min - 1e-9);
    }

    #[test]
    fn draw_data_determinism_and_guards() {
        let s0 = SymMat::from_fn(3, |i, j| if i == j { 2.0 } else { 0.5 });
        let a = draw_data(&s0, 7, RngSeed::new(11)).unwrap();
        let b = draw_data(&s0, 7, RngSeed::new(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(draw_data(&s0, 1, RngSeed::new(1)).unwrap().n(), 1);
        let indefinite = SymMat::from_diagonal(&[1.0, -1.0]);
        assert!(draw_data(&indefinite, 5, RngSeed::new(1)).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse_list("cd, at,poet").unwrap(), vec![Method::Cd, Method::At, Method::Poet]);
        assert!(Method::parse_list("cd,foo").is_err());
        assert!(Method::parse_list("").is_err());
    }

    #[test]
    fn sweep_shape_and_singleton() {
        let base = SimConfig::new(Setting::FactorPlusIdentity, 30, 12, 2, 0.5, 3, 4);
        let opts = MethodOptions { grid_step: 2, ..MethodOptions::default() };
        let methods = [Method::Cd, Method::Sample];
        let sweep = sparsity_sweep(&base, &[0.1, 0.3, 0.7], &methods, &opts).unwrap();
        assert_eq!(sweep.len(), 6);
        let single = sparsity_sweep(&base, &[0.1], &methods, &opts).unwrap();
        let cell = run_cell(&SimConfig { s: 0.1, ..base }, &methods, &opts).unwrap();
        assert_eq!(single, cell);
    }
}
