//! Monte-Carlo Haar average of the compress-decompress map.
//!
//! Draws Haar-distributed `k x p` unitary compressions `phi` and averages
//! `phi^* (phi S phi^*) phi`, which must converge to [`crate::cd::cd_estimate`].
//!
//! A Haar unitary is produced by Gram-Schmidt on the rows of a complex Gaussian
//! (Ginibre) matrix. Gram-Schmidt returns the QR factor whose triangular part has
//! a positive real diagonal, which is exactly the phase normalization that makes
//! the orthonormal factor Haar distributed.
//!
//! Two variance reductions are available, both preserving the Haar average:
//! rows of one unitary are split into `floor(p/k)` disjoint `k`-row blocks (each
//! block is itself Haar), and each block is paired with its complex conjugate
//! (also Haar). With conjugate pairing the imaginary parts of a pair cancel.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cd::cd_estimate;
use crate::error::{invalid, CovError, Result};
use crate::matrix::{frob_norm, SymMat};
use crate::rng::{CovRng, RngSeed};

/// Imaginary residue allowed in the averaged estimate, relative to its
/// Frobenius norm.
pub const MAX_IMAG_REL: f64 = 1e-6;

const CHUNK: usize = 128;
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaarScheme {
    pub split_blocks: bool,
    pub conjugate_pairs: bool,
}

impl Default for HaarScheme {
    fn default() -> Self {
        Self {
            split_blocks: true,
            conjugate_pairs: true,
        }
    }
}

impl HaarScheme {
    /// One independent `k x p` draw per sample, no pairing.
    pub fn plain() -> Self {
        Self {
            split_blocks: false,
            conjugate_pairs: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HaarSampleReport {
    pub p: usize,
    pub k: usize,
    /// Number of unitary draws.
    pub samples: usize,
    /// Number of `k x p` compressions averaged (blocks and conjugates included).
    pub projections: usize,
    /// Draws rejected because Gram-Schmidt broke down.
    pub resampled: usize,
    pub scheme: HaarScheme,
    pub mc_estimate: SymMat,
    pub closed_form: SymMat,
    pub rel_frob_gap: f64,
    pub max_imag: f64,
}

/// Orthonormalize `rows` Gaussian rows of length `p` (row-major). Returns `None`
/// if a row collapses numerically.
pub fn haar_rows(p: usize, rows: usize, rng: &mut CovRng) -> Option<Vec<Complex64>> {
    debug_assert!(rows <= p);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut q: Vec<Complex64> = (0..rows * p)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    for r in 0..rows {
        let (done, rest) = q.split_at_mut(r * p);
        let row = &mut rest[..p];
        let original = norm(row);
        // Two projection passes keep the rows orthogonal to working precision.
        for _ in 0..2 {
            for prev in done.chunks_exact(p) {
                let coef = dot_conj(prev, row);
                for (x, a) in row.iter_mut().zip(prev) {
                    *x -= coef * a;
                }
            }
        }
        let len = norm(row);
        if !(len > 1e-10 * original) {
            return None;
        }
        for x in row.iter_mut() {
            *x /= len;
        }
    }
    Some(q)
}

/// `sum conj(a) * b`, split over independent accumulators so the loop pipelines.
fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = [0.0f64; 4];
    let mut im = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            re[j] += x[j].re * y[j].re + x[j].im * y[j].im;
            im[j] += x[j].re * y[j].im - x[j].im * y[j].re;
        }
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        re[0] += x.re * y.re + x.im * y.im;
        im[0] += x.re * y.im - x.im * y.re;
    }
    Complex64::new((re[0] + re[1]) + (re[2] + re[3]), (im[0] + im[1]) + (im[2] + im[3]))
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Scratch buffers reused across blocks.
struct Workspace {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
}

impl Workspace {
    fn new(k: usize, p: usize) -> Self {
        Self {
            a: vec![Complex64::default(); k * p],
            b: vec![Complex64::default(); k * p],
            c: vec![Complex64::default(); k * k],
        }
    }
}

/// Add `phi^* (phi S phi^*) phi` (and its conjugate when `pair`) into `acc`.
/// `phi` is `k x p` row-major, `s` and `acc` are `p x p` row-major; only the
/// upper triangle of `acc` is written.
fn accumulate_block(
    phi: &[Complex64],
    k: usize,
    p: usize,
    s: &[f64],
    pair: bool,
    ws: &mut Workspace,
    acc: &mut [Complex64],
) {
    let Workspace { a, b, c } = ws;
    a.fill(Complex64::default());
    b.fill(Complex64::default());
    for r in 0..k {
        let phi_r = &phi[r * p..(r + 1) * p];
        let a_r = &mut a[r * p..(r + 1) * p];
        for (l, &f) in phi_r.iter().enumerate() {
            let s_l = &s[l * p..(l + 1) * p];
            for (x, &sv) in a_r.iter_mut().zip(s_l) {
                *x += f * sv;
            }
        }
    }
    for r in 0..k {
        for t in r..k {
            let v: Complex64 = a[r * p..(r + 1) * p]
                .iter()
                .zip(&phi[t * p..(t + 1) * p])
                .map(|(x, f)| x * f.conj())
                .sum();
            c[r * k + t] = v;
            c[t * k + r] = v.conj();
        }
    }
    for r in 0..k {
        let b_r = &mut b[r * p..(r + 1) * p];
        for t in 0..k {
            let coef = c[r * k + t];
            for (x, f) in b_r.iter_mut().zip(&phi[t * p..(t + 1) * p]) {
                *x += coef * f;
            }
        }
    }
    for r in 0..k {
        let phi_r = &phi[r * p..(r + 1) * p];
        let b_r = &b[r * p..(r + 1) * p];
        for i in 0..p {
            let fi = phi_r[i].conj();
            let row = &mut acc[i * p + i..(i + 1) * p];
            if pair {
                // z + conj(z) = 2 Re z.
                for (x, bv) in row.iter_mut().zip(&b_r[i..]) {
                    x.re += 2.0 * (fi.re * bv.re - fi.im * bv.im);
                }
            } else {
                for (x, bv) in row.iter_mut().zip(&b_r[i..]) {
                    *x += fi * bv;
                }
            }
        }
    }
}

/// Monte-Carlo check of the closed-form C-D estimator.
///
/// Draws are split into fixed chunks with their own RNG streams and the chunk
/// sums are combined in chunk order, so the result does not depend on how
/// chunks are scheduled across threads.
pub fn haar_mc_oracle(
    s: &SymMat,
    k: usize,
    samples: usize,
    seed: RngSeed,
    scheme: HaarScheme,
) -> Result<HaarSampleReport> {
    let p = s.dim();
    let closed_form = cd_estimate(s, k)?;
    if samples == 0 {
        return Err(invalid("Haar oracle needs at least one sample"));
    }
    let blocks = if scheme.split_blocks { p / k } else { 1 };
    let per_draw = blocks * if scheme.conjugate_pairs { 2 } else { 1 };
    let s_flat: Vec<f64> = (0..p * p).map(|idx| s.get(idx / p, idx % p)).collect();

    let n_chunks = samples.div_ceil(CHUNK);
    let partials: Vec<Result<(Vec<Complex64>, usize)>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = seed.child(chunk as u64).rng();
            let mut acc = vec![Complex64::default(); p * p];
            let mut ws = Workspace::new(k, p);
            let mut resampled = 0;
            let draws = CHUNK.min(samples - chunk * CHUNK);
            for _ in 0..draws {
                let q = loop {
                    match haar_rows(p, blocks * k, &mut rng) {
                        Some(q) => break q,
                        None => {
                            resampled += 1;
                            if resampled > MAX_RESAMPLES {
                                return Err(CovError::NumericalFailure {
                                    message: "Gram-Schmidt kept breaking down".into(),
                                    best: f64::NAN,
                                });
                            }
                        }
                    }
                };
                for blk in q.chunks_exact(k * p) {
                    accumulate_block(blk, k, p, &s_flat, scheme.conjugate_pairs, &mut ws, &mut acc);
                }
            }
            Ok((acc, resampled))
        })
        .collect();

    let mut total = vec![Complex64::default(); p * p];
    let mut resampled = 0;
    for part in partials {
        let (acc, r) = part?;
        resampled += r;
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    // Fill the lower triangle from the upper one (the block sums are Hermitian).
    for i in 0..p {
        for j in 0..i {
            total[i * p + j] = total[j * p + i].conj();
        }
    }
    if resampled > 0 {
        log::info!("Haar oracle resampled {resampled} rank-deficient draws");
    }
    let projections = samples * per_draw;
    let inv = 1.0 / projections as f64;
    let max_imag = total.iter().map(|z| (z.im * inv).abs()).fold(0.0, f64::max);
    let mc_estimate = SymMat::from_fn(p, |i, j| 0.5 * (total[i * p + j].re + total[j * p + i].re) * inv);
    let scale = frob_norm(&mc_estimate);
    if max_imag > MAX_IMAG_REL * scale {
        return Err(CovError::NumericalFailure {
            message: format!(
                "imaginary residue {max_imag:e} exceeds {MAX_IMAG_REL:e} x Frobenius norm {scale:e}"
            ),
            best: max_imag,
        });
    }
    let rel_frob_gap = frob_norm(&mc_estimate.sub(&closed_form)?) / frob_norm(&closed_form).max(f64::MIN_POSITIVE);
    Ok(HaarSampleReport {
        p,
        k,
        samples,
        projections,
        resampled,
        scheme,
        mc_estimate,
        closed_form,
        rel_frob_gap,
        max_imag,
    })
}

/// Random PSD test matrix `A A^T / p` with Gaussian `A`.
pub fn random_psd(p: usize, seed: RngSeed) -> SymMat {
    let mut rng = seed.rng();
    let a = nalgebra::DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMat::mirror_upper(&a * a.transpose() / p as f64)
}
