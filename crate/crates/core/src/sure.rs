//! Stein's unbiased risk estimate for the C-D estimator and selection of the
//! compressed dimension.
//!
//! For an estimator built from the unbiased sample covariance `S` (denominator
//! `n - 1`), the Frobenius risk satisfies
//!
//! ```text
//! R(k) = E|S_cd(k) - S|_F^2 - sum_ij var(s_ij) + 2 sum_ij cov(s_cd(k)_ij, s_ij)
//! ```
//!
//! The middle term does not depend on `k`, so `SURE(k)` keeps the apparent error
//! plus twice an unbiased estimate of the covariance ("optimism") term. The
//! variances and covariances are estimated from the denominator-`n` covariance
//! through [`MomentCoeffs`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cd::{apply, cd_coeffs, CdCoeffs};
use crate::error::{invalid, Result};
use crate::matrix::{center_columns, cov_pair, CovPair, SymMat};
use crate::rng::RngSeed;
use crate::sim::draw_data;

/// Coefficients of the quadratic moment estimators
///
/// ```text
/// var^(s_ij)       = a * t_ij^2 + b * t_ii t_jj      (i != j)
/// var^(s_ii)       = c * t_ii^2
/// cov^(s_ii, s_ll) = d * t_il^2 + e * t_ii t_ll      (i != l)
/// ```
///
/// where `t` is the denominator-`n` covariance and `s` the denominator-`n-1` one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCoeffs {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentConvention {
    /// Exactly unbiased under Gaussian sampling with an estimated mean.
    #[default]
    Unbiased,
    /// The closed forms solved from the published second-moment identities.
    Published,
}

impl MomentCoeffs {
    pub fn new(n: usize, convention: MomentConvention) -> Result<Self> {
        match convention {
            MomentConvention::Unbiased => Self::unbiased(n),
            MomentConvention::Published => Self::published(n),
        }
    }

    /// Unbiased under `n * t ~ Wishart(n - 1, Sigma)`.
    ///
    /// With `m = n - 1` and `W = n t`, the identities
    /// `E W_ij^2 = m(m+1) s_ij^2 + m s_ii s_jj` and
    /// `E W_ii W_jj = m^2 s_ii s_jj + 2m s_ij^2` are inverted for the two
    /// products, which are then plugged into `var(s_ij) = (s_ij^2 + s_ii s_jj)/m`,
    /// `var(s_ii) = 2 s_ii^2 / m` and `cov(s_ii, s_ll) = 2 s_il^2 / m`.
    pub fn unbiased(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(invalid(format!("moment estimators need n >= 3, got {n}")));
        }
        let nf = n as f64;
        let m = nf - 1.0;
        let core = m * (m + 2.0) * (m - 1.0);
        let n2 = nf * nf;
        Ok(Self {
            n,
            a: n2 * (m - 2.0) / (m * core),
            b: n2 / core,
            c: 2.0 * n2 / (m * m * (m + 2.0)),
            d: 2.0 * n2 / core,
            e: -2.0 * n2 / (m * core),
        })
    }

    /// The published coefficients, shared denominator `n^3 + n^2 - 2n - 4`.
    pub fn published(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(invalid(format!("moment estimators need n >= 3, got {n}")));
        }
        let nf = n as f64;
        let big = nf.powi(3) + nf * nf - 2.0 * nf - 4.0;
        let m = nf - 1.0;
        if big == 0.0 {
            return Err(invalid(format!("zero moment denominator at n={n}")));
        }
        Ok(Self {
            n,
            a: nf * nf * (nf * nf - nf - 4.0) / (m * m * big),
            b: nf.powi(3) / (m * big),
            c: nf * nf * (2.0 * nf * nf - 2.0 * nf - 4.0) / (m * m * big),
            d: 2.0 * nf * nf * (nf + 2.0) / (m * big),
            e: 2.0 * (nf - 2.0) * nf * nf / (m * big),
        })
    }
}

/// Estimate of `var(s_ij)`, `i != j`, from denominator-`n` entries.
pub fn var_hat_off(t_ij: f64, t_ii: f64, t_jj: f64, c: &MomentCoeffs) -> f64 {
    c.a * t_ij * t_ij + c.b * t_ii * t_jj
}

/// Estimate of `var(s_ii)`.
pub fn var_hat_diag(t_ii: f64, c: &MomentCoeffs) -> f64 {
    c.c * t_ii * t_ii
}

/// Estimate of `cov(s_ii, s_ll)`, `i != l`.
pub fn cov_hat_diag_pair(t_il: f64, t_ii: f64, t_ll: f64, c: &MomentCoeffs) -> f64 {
    c.d * t_il * t_il + c.e * t_ii * t_ll
}

/// One point of a SURE curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SureTerms {
    pub k: usize,
    /// `|S_cd(k) - S|_F^2`.
    pub discrepancy: f64,
    /// Estimated `sum_ij cov(s_cd(k)_ij, s_ij)`.
    pub optimism: f64,
    /// `discrepancy + 2 * optimism`.
    pub sure: f64,
}

fn check_sure_input(cov: &CovPair, k: usize) -> Result<CdCoeffs> {
    if cov.n < 3 {
        return Err(invalid(format!("SURE needs n >= 3, got {}", cov.n)));
    }
    cd_coeffs(cov.p(), k)
}

/// Reference SURE: explicit `O(p^2)` sums over entries.
pub fn sure_direct(cov: &CovPair, k: usize, mc: &MomentCoeffs) -> Result<SureTerms> {
    let cd = check_sure_input(cov, k)?;
    let p = cov.p();
    let s = &cov.unbiased;
    let t = &cov.mle;
    let est = apply(s, &cd);
    let mut discrepancy = 0.0;
    for i in 0..p {
        for j in 0..p {
            let d = est.get(i, j) - s.get(i, j);
            discrepancy += d * d;
        }
    }
    let (eta, gamma) = (cd.eta, cd.gamma);
    let mut optimism = 0.0;
    for i in 0..p {
        let t_ii = t.get(i, i);
        let mut trace_cov = 0.0;
        for j in 0..p {
            if j == i {
                continue;
            }
            let t_jj = t.get(j, j);
            optimism += eta * var_hat_off(t.get(i, j), t_ii, t_jj, mc);
            trace_cov += cov_hat_diag_pair(t.get(i, j), t_ii, t_jj, mc);
        }
        optimism += (eta + gamma) * var_hat_diag(t_ii, mc) + gamma * trace_cov;
    }
    Ok(SureTerms {
        k,
        discrepancy,
        optimism,
        sure: discrepancy + 2.0 * optimism,
    })
}

/// Sufficient statistics for the closed-form SURE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SureStats {
    pub p: usize,
    pub n: usize,
    /// `sum_ij s_ij^2`.
    pub s_sq: f64,
    /// `Tr(S)`.
    pub s_trace: f64,
    /// `sum_{i != j} t_ij^2`.
    pub t_off_sq: f64,
    /// `Tr(T)^2 - Tr(T o T)`, i.e. `sum_{i != j} t_ii t_jj`.
    pub t_diag_cross: f64,
    /// `Tr(T o T)`.
    pub t_diag_sq: f64,
}

impl SureStats {
    pub fn new(cov: &CovPair) -> Self {
        let t = &cov.mle;
        let diag_sq: f64 = t.diagonal().iter().map(|v| v * v).sum();
        let tt = t.trace();
        Self {
            p: cov.p(),
            n: cov.n,
            s_sq: cov.unbiased.sum_squares(),
            s_trace: cov.unbiased.trace(),
            t_off_sq: t.sum_squares() - diag_sq,
            t_diag_cross: tt * tt - diag_sq,
            t_diag_sq: diag_sq,
        }
    }

    /// Estimated `sum_ij var(s_ij)`: the `k`-free term left out of SURE.
    pub fn variance_sum(&self, mc: &MomentCoeffs) -> f64 {
        mc.a * self.t_off_sq + mc.b * self.t_diag_cross + mc.c * self.t_diag_sq
    }
}

/// Closed-form SURE from traces and entry sums; `O(p^2)` once, then `O(1)` per `k`.
pub fn sure_closed(cov: &CovPair, k: usize, mc: &MomentCoeffs) -> Result<SureTerms> {
    check_sure_input(cov, k)?;
    sure_from_stats(&SureStats::new(cov), k, mc)
}

pub fn sure_from_stats(st: &SureStats, k: usize, mc: &MomentCoeffs) -> Result<SureTerms> {
    let CdCoeffs { eta, gamma, .. } = cd_coeffs(st.p, k)?;
    let p = st.p as f64;
    let tr = st.s_trace;
    let discrepancy = (eta - 1.0).powi(2) * st.s_sq + tr * tr * (2.0 * gamma * (eta - 1.0) + p * gamma * gamma);
    let optimism = (mc.a * eta + mc.d * gamma) * st.t_off_sq
        + (mc.b * eta + mc.e * gamma) * st.t_diag_cross
        + mc.c * (eta + gamma) * st.t_diag_sq;
    Ok(SureTerms {
        k,
        discrepancy,
        optimism,
        sure: discrepancy + 2.0 * optimism,
    })
}

/// `step, 2 step, ...` up to `max`, starting at `min`. The usual default is
/// `k_grid(step, p, step)` with `step = 10`.
pub fn k_grid(min: usize, max: usize, step: usize) -> Result<Vec<usize>> {
    if min == 0 || step == 0 || min > max {
        return Err(invalid(format!("bad grid min={min} max={max} step={step}")));
    }
    Ok((min..=max).step_by(step).collect())
}

/// Default grid for dimension `p`: multiples of `step` up to `p`, or `{1..p}`
/// when `p < step`.
pub fn default_grid(p: usize, step: usize) -> Vec<usize> {
    if p < step {
        (1..=p).collect()
    } else {
        (step..=p).step_by(step).collect()
    }
}

fn check_grid(grid: &[usize], p: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("k grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("k grid must be strictly increasing"));
    }
    if grid[0] == 0 || *grid.last().expect("nonempty") > p {
        return Err(invalid(format!("k grid must lie in [1, {p}]")));
    }
    Ok(())
}

/// First index of the minimum; ties go to the smaller `k`.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SureCurve {
    pub p: usize,
    pub n: usize,
    pub k_grid: Vec<usize>,
    pub sure_values: Vec<f64>,
    pub k_hat: usize,
    pub terms: Vec<SureTerms>,
    /// Estimated `sum_ij var(s_ij)`; `sure - variance_sum` estimates `R(k)` itself.
    pub variance_sum: f64,
    pub moments: MomentConvention,
}

pub fn select_k(cov: &CovPair, grid: &[usize]) -> Result<SureCurve> {
    select_k_with(cov, grid, MomentConvention::Unbiased)
}

pub fn select_k_with(cov: &CovPair, grid: &[usize], convention: MomentConvention) -> Result<SureCurve> {
    check_grid(grid, cov.p())?;
    let mc = MomentCoeffs::new(cov.n, convention)?;
    let terms = grid
        .iter()
        .map(|&k| sure_direct(cov, k, &mc))
        .collect::<Result<Vec<_>>>()?;
    let sure_values: Vec<f64> = terms.iter().map(|t| t.sure).collect();
    let k_hat = grid[argmin(&sure_values)];
    Ok(SureCurve {
        p: cov.p(),
        n: cov.n,
        k_grid: grid.to_vec(),
        sure_values,
        k_hat,
        terms,
        variance_sum: SureStats::new(cov).variance_sum(&mc),
        moments: convention,
    })
}

/// `|S_cd(k) - Sigma0|_F^2` over the grid for the C-D estimator built from
/// `cov.unbiased`.
pub fn cd_loss_curve(cov: &CovPair, sigma0: &SymMat, grid: &[usize]) -> Result<Vec<f64>> {
    check_grid(grid, cov.p())?;
    let s = &cov.unbiased;
    let p = s.dim() as f64;
    let tr = s.trace();
    let ss = s.sum_squares();
    let s0s0 = sigma0.sum_squares();
    let s_s0 = s.dot(sigma0)?;
    let tr0 = sigma0.trace();
    grid.iter()
        .map(|&k| {
            let c = cd_coeffs(s.dim(), k)?;
            let (e, g) = (c.eta, c.gamma * tr);
            Ok(e * e * ss + p * g * g + s0s0 + 2.0 * e * g * tr - 2.0 * e * s_s0 - 2.0 * g * tr0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCurve {
    pub k_grid: Vec<usize>,
    pub risk_values: Vec<f64>,
    pub risk_se: Vec<f64>,
    pub replicates: usize,
    pub k_opt: usize,
}

/// Monte-Carlo Frobenius risk of the C-D estimator under `N(0, sigma0)`.
/// Replicate `r` draws from stream `seed.child(r)`.
pub fn risk_oracle(sigma0: &SymMat, n: usize, grid: &[usize], reps: usize, seed: RngSeed) -> Result<RiskCurve> {
    if reps == 0 {
        return Err(invalid("risk oracle needs reps >= 1"));
    }
    if n < 2 {
        return Err(invalid(format!("risk oracle needs n >= 2, got {n}")));
    }
    check_grid(grid, sigma0.dim())?;
    let curves = (0..reps)
        .into_par_iter()
        .map(|r| {
            let x = draw_data(sigma0, n, seed.child(r as u64))?;
            let cov = cov_pair(&center_columns(&x)?)?;
            cd_loss_curve(&cov, sigma0, grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let (risk_values, risk_se) = (0..grid.len())
        .map(|g| {
            let col: Vec<f64> = curves.iter().map(|c| c[g]).collect();
            crate::sim::mean_se(&col)
        })
        .unzip::<_, _, Vec<f64>, Vec<f64>>();
    let k_opt = grid[argmin(&risk_values)];
    Ok(RiskCurve {
        k_grid: grid.to_vec(),
        risk_values,
        risk_se,
        replicates: reps,
        k_opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    use crate::matrix::DataMatrix;

    fn random_cov(p: usize, n: usize, vals: &[f64]) -> CovPair {
        let x = DMatrix::from_fn(p, n, |i, j| vals[(i * 7 + j * 3) % vals.len()] * (1.0 + ((i * n + j) as f64).sin()));
        cov_pair(&center_columns(&DataMatrix::new(x).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn published_coefficients_at_n10() {
        let c = MomentCoeffs::published(10).unwrap();
        assert!((c.a - 8600.0 / 87156.0).abs() < 1e-15);
        // (n^3 + n^2 - 2n - 4) = 1076 at n = 10.
        assert!((c.b - 1000.0 / (9.0 * 1076.0)).abs() < 1e-15);
        assert!((c.c - 100.0 * 176.0 / (81.0 * 1076.0)).abs() < 1e-15);
        assert!((c.d - 2400.0 / (9.0 * 1076.0)).abs() < 1e-15);
        assert!((c.e - 1600.0 / (9.0 * 1076.0)).abs() < 1e-15);
    }

    #[test]
    fn coefficients_small_and_large_n() {
        for conv in [MomentConvention::Published, MomentConvention::Unbiased] {
            let c = MomentCoeffs::new(3, conv).unwrap();
            assert!([c.a, c.b, c.c, c.d, c.e].iter().all(|v| v.is_finite()));
            assert!(MomentCoeffs::new(2, conv).is_err());
            assert!(MomentCoeffs::new(1_000_000, conv).unwrap().a < 1e-5);
        }
    }

    #[test]
    fn unbiased_coefficients_by_hand_n10() {
        // m = 9: core = 9 * 11 * 8 = 792.
        let c = MomentCoeffs::unbiased(10).unwrap();
        assert!((c.a - 100.0 * 7.0 / (9.0 * 792.0)).abs() < 1e-15);
        assert!((c.b - 100.0 / 792.0).abs() < 1e-15);
        assert!((c.c - 200.0 / (81.0 * 11.0)).abs() < 1e-15);
        assert!((c.d - 200.0 / 792.0).abs() < 1e-15);
        assert!((c.e + 200.0 / (9.0 * 792.0)).abs() < 1e-15);
        // The off-diagonal form evaluated at i == j agrees with the diagonal one.
        assert!((c.a + c.b - c.c).abs() < 1e-15);
    }

    #[test]
    fn linear_forms() {
        let c = MomentCoeffs::published(10).unwrap();
        assert_eq!(var_hat_off(0.0, 0.0, 0.0, &c), 0.0);
        assert_eq!(var_hat_off(1.0, 1.0, 1.0, &c), c.a + c.b);
        assert_eq!(var_hat_diag(0.0, &c), 0.0);
        assert_eq!(var_hat_diag(2.0, &c), 4.0 * c.c);
        assert_eq!(cov_hat_diag_pair(0.0, 0.0, 0.0, &c), 0.0);
        assert_eq!(cov_hat_diag_pair(1.0, 1.0, 1.0, &c), c.d + c.e);
    }

    #[test]
    fn zero_data_gives_zero_sure() {
        let cov = CovPair {
            n: 10,
            mle: SymMat::zeros(4),
            unbiased: SymMat::zeros(4),
        };
        let mc = MomentCoeffs::unbiased(10).unwrap();
        for k in 1..=4 {
            assert_eq!(sure_direct(&cov, k, &mc).unwrap().sure, 0.0);
            assert_eq!(sure_closed(&cov, k, &mc).unwrap().sure, 0.0);
        }
    }

    #[test]
    fn full_dimension_has_zero_discrepancy() {
        let cov = random_cov(6, 12, &[0.3, -1.2, 2.0, 0.7, -0.4]);
        let mc = MomentCoeffs::unbiased(12).unwrap();
        let t = sure_direct(&cov, 6, &mc).unwrap();
        assert_eq!(t.discrepancy, 0.0);
        assert_eq!(t.sure, 2.0 * t.optimism);
    }

    #[test]
    fn p2_n10_identity_is_pinned() {
        // S = I, T = 0.9 I. Hand evaluation (unbiased coefficients, k = 1):
        // eta = gamma = 1/6, discrepancy = 2 (1/6 - 1 + 2/6)^2 = 0.5,
        // optimism = 2 * c (eta + gamma) * 0.81 + 2 * gamma * e * 0.81
        //          + 2 * eta * b * 0.81 = 13/88, so SURE = 1/2 + 13/44 = 35/44.
        let cov = CovPair {
            n: 10,
            mle: SymMat::identity(2).scale(0.9),
            unbiased: SymMat::identity(2),
        };
        let mc = MomentCoeffs::unbiased(10).unwrap();
        let t = sure_direct(&cov, 1, &mc).unwrap();
        let (eta, gamma) = (1.0 / 6.0, 1.0 / 6.0);
        let opt = 0.81 * (2.0 * mc.c * (eta + gamma) + 2.0 * gamma * mc.e + 2.0 * eta * mc.b);
        assert!((t.discrepancy - 0.5).abs() < 1e-14);
        assert!((t.optimism - opt).abs() < 1e-14);
        assert!((t.sure - 35.0 / 44.0).abs() < 1e-14, "{}", t.sure);
    }

    #[test]
    fn singleton_grid() {
        let cov = random_cov(5, 9, &[1.0, -0.5, 0.25]);
        let curve = select_k(&cov, &[5]).unwrap();
        assert_eq!(curve.k_hat, 5);
        assert!(select_k(&cov, &[]).is_err());
        assert!(select_k(&cov, &[3, 2]).is_err());
        assert!(select_k(&cov, &[6]).is_err());
    }

    #[test]
    fn argmin_ties_go_low() {
        assert_eq!(argmin(&[3.0, 1.0, 1.0, 2.0]), 1);
    }

    #[test]
    fn grids() {
        assert_eq!(k_grid(10, 35, 10).unwrap(), vec![10, 20, 30]);
        assert_eq!(default_grid(250, 10).len(), 25);
        assert_eq!(default_grid(4, 10), vec![1, 2, 3, 4]);
        assert!(k_grid(0, 5, 1).is_err());
    }

    #[test]
    fn risk_oracle_is_deterministic() {
        let s0 = SymMat::identity(4);
        let a = risk_oracle(&s0, 10, &[1, 2, 3, 4], 1, RngSeed::new(3)).unwrap();
        let b = risk_oracle(&s0, 10, &[1, 2, 3, 4], 1, RngSeed::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_curve_matches_direct_norm() {
        let cov = random_cov(5, 8, &[0.2, 1.1, -0.7]);
        let s0 = SymMat::from_fn(5, |i, j| if i == j { 2.0 } else { 0.3 });
        let grid = [1, 3, 5];
        let curve = cd_loss_curve(&cov, &s0, &grid).unwrap();
        for (k, v) in grid.iter().zip(curve) {
            let direct = crate::cd::cd_estimate(&cov.unbiased, *k).unwrap().sub(&s0).unwrap().sum_squares();
            assert!((v - direct).abs() < 1e-10 * (1.0 + direct));
        }
    }

    proptest! {
        #[test]
        fn direct_and_closed_agree(vals in prop::collection::vec(-3.0f64..3.0, 11), p in 2usize..9, n in 3usize..15, kf in 0.0f64..1.0) {
            let cov = random_cov(p, n, &vals);
            let k = 1 + ((p - 1) as f64 * kf) as usize;
            for conv in [MomentConvention::Unbiased, MomentConvention::Published] {
                let mc = MomentCoeffs::new(n, conv).unwrap();
                let a = sure_direct(&cov, k, &mc).unwrap();
                let b = sure_closed(&cov, k, &mc).unwrap();
                let scale = a.discrepancy.abs() + a.optimism.abs() + 1e-300;
                prop_assert!((a.sure - b.sure).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn terms_scale_with_fourth_power(vals in prop::collection::vec(-3.0f64..3.0, 7), c in 0.1f64..10.0) {
            // X -> cX multiplies every covariance entry by c^2, so both terms
            // pick up c^4.
            let cov = random_cov(4, 9, &vals);
            let scaled = CovPair { n: 9, mle: cov.mle.scale(c * c), unbiased: cov.unbiased.scale(c * c) };
            let mc = MomentCoeffs::unbiased(9).unwrap();
            for k in 1..=4 {
                let a = sure_direct(&cov, k, &mc).unwrap();
                let b = sure_direct(&scaled, k, &mc).unwrap();
                let c4 = c.powi(4);
                prop_assert!((b.discrepancy - c4 * a.discrepancy).abs() <= 1e-9 * (1.0 + b.discrepancy.abs()));
                prop_assert!((b.optimism - c4 * a.optimism).abs() <= 1e-9 * (1.0 + b.optimism.abs()));
            }
        }
    }
}
