//! Compression-decompression (C-D) covariance estimation.
//!
//! A sample covariance is projected onto random `k`-dimensional subspaces and
//! lifted back; averaging over Haar-distributed subspaces gives a closed-form
//! linear shrinkage towards a scaled identity. The compression dimension `k` is
//! chosen by minimising Stein's unbiased risk estimate (SURE). Adaptive
//! thresholding and a simplified POET are provided as baselines, together with
//! the factor-model simulation engine used to compare them.
// Negated comparisons are used deliberately so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cd;
pub mod error;
pub mod haar;
pub mod matrix;
pub mod rng;
pub mod sim;
pub mod sure;

pub use baselines::{adaptive_threshold, poet, AtConfig, AtFit, PoetConfig, PoetFit};
pub use cd::{cd_coeffs, cd_estimate, shrinkage_compare, CdCoeffs, GammaConvention};
pub use error::{CovError, Result};
pub use haar::{haar_mc_oracle, HaarSampleReport, HaarScheme};
pub use matrix::{center_columns, cov_pair, frob_norm, op_norm, CovPair, DataMatrix, SymMat, OP_NORM_TOL};
pub use rng::RngSeed;
pub use sim::{make_sigma0, run_cell, sparsity_sweep, BenchRecord, Method, MethodOptions, Setting, SimConfig};
pub use sure::{risk_oracle, select_k, MomentCoeffs, MomentConvention, RiskCurve, SureCurve, SureTerms};
