//! Dense symmetric matrices, data matrices and sample covariances.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, CovError, Result};

/// Default relative tolerance for [`op_norm`].
pub const OP_NORM_TOL: f64 = 1e-8;

/// Dense symmetric `p x p` matrix. Entries are finite and `a[(i,j)] == a[(j,i)]`
/// bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(DMatrix<f64>);

impl SymMat {
    /// Accepts a square, finite matrix whose asymmetry is at rounding level and
    /// mirrors the upper triangle onto the lower one.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(invalid("matrix has dimension 0"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let p = m.nrows();
        for j in 0..p {
            for i in 0..j {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                    return Err(invalid(format!("matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self::mirror_upper(m))
    }

    /// Build from a function evaluated on the upper triangle `i <= j`.
    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(p, p);
        for j in 0..p {
            for i in 0..=j {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub(crate) fn mirror_upper(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for j in 0..p {
            for i in 0..j {
                m[(j, i)] = m[(i, j)];
            }
        }
        Self(m)
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        Self(DMatrix::zeros(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    /// Sum of squared entries, i.e. the squared Frobenius norm.
    pub fn sum_squares(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &SymMat, b: f64) -> Result<Self> {
        check_same_dim(self, other)?;
        Ok(Self(&self.0 * a + &other.0 * b))
    }

    pub fn sub(&self, other: &SymMat) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    /// `self + c * I`.
    pub fn add_identity(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        Self(m)
    }

    /// Frobenius inner product `sum_ij a_ij b_ij`.
    pub fn dot(&self, other: &SymMat) -> Result<f64> {
        check_same_dim(self, other)?;
        Ok(self.0.dot(&other.0))
    }

    /// Eigenvalues in decreasing order with matching eigenvector columns.
    pub fn eigen(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let p = self.dim();
        let eig = SymmetricEigen::try_new(self.0.clone(), f64::EPSILON, 100 * p.max(10))
            .ok_or_else(|| CovError::NumericalFailure {
                message: "symmetric eigensolver did not converge".into(),
                best: f64::NAN,
            })?;
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok((values, vectors))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eigen()?.0.last().expect("dimension >= 1"))
    }

    /// Write the full square matrix as CSV, 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|j| fmt_f64(self.get(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| CovError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let m = read_csv_matrix(path, false)?;
        SymMat::new(m)
    }
}

/// Locale-free float formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v:.16e}").expect("write to string");
    s
}

impl serde::Serialize for SymMat {
    /// Serialized as a list of rows.
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = ser.serialize_seq(Some(self.dim()))?;
        for i in 0..self.dim() {
            let row: Vec<f64> = (0..self.dim()).map(|j| self.get(i, j)).collect();
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

fn check_same_dim(a: &SymMat, b: &SymMat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `p x n` data matrix: rows are variables, columns are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(invalid("data matrix must have p >= 1 and n >= 1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data matrix has non-finite entries"));
        }
        Ok(Self(m))
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Keep the given observations (columns), in order.
    pub fn select_columns(&self, cols: &[usize]) -> DataMatrix {
        DataMatrix(self.0.select_columns(cols))
    }

    /// Parse CSV with rows = variables and columns = observations.
    pub fn read_csv(path: &Path, header: bool) -> Result<Self> {
        Self::new(read_csv_matrix(path, header)?)
    }
}

fn read_csv_matrix(path: &Path, header: bool) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|source| CovError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if (header && lineno == 0) || line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| CovError::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("{e}: {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CovError::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CovError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no data rows".into(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Sample covariance under both denominator conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct CovPair {
    pub n: usize,
    /// Denominator `n`.
    pub mle: SymMat,
    /// Denominator `n - 1`.
    pub unbiased: SymMat,
}

impl CovPair {
    pub fn p(&self) -> usize {
        self.mle.dim()
    }
}

/// Subtract each variable's empirical mean.
pub fn center_columns(x: &DataMatrix) -> Result<DataMatrix> {
    if x.n() < 2 {
        return Err(invalid(format!("centering needs n >= 2, got {}", x.n())));
    }
    let mut m = x.0.clone();
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / row.len() as f64;
        row.add_scalar_mut(-mean);
    }
    Ok(DataMatrix(m))
}

/// `XX^T/n` and `XX^T/(n-1)` for column-centered `X`.
pub fn cov_pair(x: &DataMatrix) -> Result<CovPair> {
    let n = x.n();
    if n < 2 {
        return Err(invalid(format!("covariance needs n >= 2, got {n}")));
    }
    let gram = SymMat::mirror_upper(&x.0 * x.0.transpose());
    Ok(CovPair {
        n,
        mle: gram.scale(1.0 / n as f64),
        unbiased: gram.scale(1.0 / (n - 1) as f64),
    })
}

pub fn frob_norm(a: &SymMat) -> f64 {
    a.sum_squares().sqrt()
}

/// Largest absolute eigenvalue of `a`.
///
/// The dominant eigenpair `(lambda, v)` is certified with the residual bound
/// `|A v - lambda v| <= tol * |lambda|`; for symmetric `A` some eigenvalue lies
/// within that residual of `lambda`.
pub fn op_norm(a: &SymMat, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(invalid(format!("op_norm tolerance must be > 0, got {tol}")));
    }
    let scale = a.0.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let p = a.dim();
    let Some(eig) = SymmetricEigen::try_new(a.0.clone(), f64::EPSILON, 100 * p.max(10)) else {
        return Err(CovError::NumericalFailure {
            message: "eigensolver did not converge".into(),
            best: power_iteration(a, 500),
        });
    };
    let idx = eig.eigenvalues.iamax();
    let lambda = eig.eigenvalues[idx];
    let v = eig.eigenvectors.column(idx);
    let residual = (&a.0 * v - v * lambda).norm();
    if residual > tol * lambda.abs().max(scale * f64::EPSILON) {
        return Err(CovError::NumericalFailure {
            message: format!("eigenpair residual {residual:e} exceeds tolerance"),
            best: lambda.abs(),
        });
    }
    Ok(lambda.abs())
}

fn power_iteration(a: &SymMat, iters: usize) -> f64 {
    let p = a.dim();
    let mut v = DVector::from_fn(p, |i, _| 1.0 + i as f64 / p as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = &a.0 * &v;
        est = w.norm();
        if est == 0.0 {
            break;
        }
        v = w / est;
    }
    est
}

/// Entrywise (Schur) product.
pub fn schur(a: &SymMat, b: &SymMat) -> Result<SymMat> {
    check_same_dim(a, b)?;
    Ok(SymMat(a.0.component_mul(&b.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
        }
    }

    fn data(rows: &[&[f64]]) -> DataMatrix {
        let p = rows.len();
        let n = rows[0].len();
        DataMatrix::new(DMatrix::from_fn(p, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn center_already_centered_is_fixed_point() {
        let x = data(&[&[1.0, -1.0, 0.0], &[2.0, -3.0, 1.0]]);
        assert_eq!(center_columns(&x).unwrap(), x);
    }

    #[test]
    fn center_two_values() {
        let x = data(&[&[1.0, 3.0]]);
        let c = center_columns(&x).unwrap();
        assert_eq!(c.as_matrix().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn center_rejects_single_observation() {
        let x = data(&[&[1.0]]);
        assert!(matches!(center_columns(&x), Err(CovError::InvalidInput(_))));
    }

    #[test]
    fn cov_pair_hand_example() {
        let x = data(&[&[1.0, -1.0], &[0.0, 0.0]]);
        let c = cov_pair(&x).unwrap();
        assert_eq!(c.mle, SymMat::from_diagonal(&[1.0, 0.0]));
        assert_eq!(c.unbiased, SymMat::from_diagonal(&[2.0, 0.0]));
    }

    #[test]
    fn frob_examples() {
        assert!(close(frob_norm(&SymMat::identity(3)), 3f64.sqrt(), 1e-15));
        assert_eq!(frob_norm(&SymMat::zeros(4)), 0.0);
        assert_eq!(frob_norm(&SymMat::from_diagonal(&[3.0, 4.0])), 5.0);
    }

    #[test]
    fn op_norm_examples() {
        assert!(close(op_norm(&SymMat::from_diagonal(&[3.0, 1.0]), OP_NORM_TOL).unwrap(), 3.0, 1e-12));
        for p in [1, 2, 7, 30] {
            assert!(close(op_norm(&SymMat::identity(p), OP_NORM_TOL).unwrap(), 1.0, 1e-12));
        }
        assert!(close(op_norm(&SymMat::from_diagonal(&[1.0, -5.0]), OP_NORM_TOL).unwrap(), 5.0, 1e-12));
        assert!(op_norm(&SymMat::identity(2), 0.0).is_err());
    }

    #[test]
    fn schur_examples() {
        let a = SymMat::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])).unwrap();
        let b = SymMat::new(DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 6.0, 7.0])).unwrap();
        let expect = SymMat::new(DMatrix::from_row_slice(2, 2, &[5.0, 12.0, 12.0, 21.0])).unwrap();
        assert_eq!(schur(&a, &b).unwrap(), expect);
        assert_eq!(
            schur(&a, &SymMat::identity(2)).unwrap(),
            SymMat::from_diagonal(&[1.0, 3.0])
        );
        assert_eq!(schur(&a, &SymMat::zeros(2)).unwrap(), SymMat::zeros(2));
        assert!(schur(&a, &SymMat::identity(3)).is_err());
    }

    #[test]
    fn rejects_asymmetric_and_nonfinite() {
        assert!(SymMat::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0])).is_err());
        assert!(SymMat::new(DMatrix::from_row_slice(1, 1, &[f64::NAN])).is_err());
        assert!(SymMat::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eigen_sorted_descending() {
        let (vals, _) = SymMat::from_diagonal(&[1.0, 4.0, -2.0]).eigen().unwrap();
        assert_eq!(vals, vec![4.0, 1.0, -2.0]);
    }
}
