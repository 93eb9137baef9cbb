//! Dense symmetric linear algebra and Gaussian helpers.
//!
//! Everything here works on small `DMatrix`/`DVector` values; the collision
//! code uses n = 2 and the pose filter n = 3.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Eigenvalues in [-PSD_CLAMP, 0] are treated as roundoff and clamped.
pub const PSD_CLAMP: f64 = 1e-10;
const SYM_RTOL: f64 = 1e-12;

/// Multivariate normal `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector,
    pub cov: Matrix,
}

impl Gaussian {
    /// Validates dimensions, symmetry and positive semidefiniteness.
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::Dimension { expected: cov.nrows(), got: cov.ncols() });
        }
        if mean.len() != cov.nrows() {
            return Err(Error::Dimension { expected: cov.nrows(), got: mean.len() });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        check_symmetric(&cov)?;
        let (vals, _) = sym_eig(&cov)?;
        if vals[0] < -PSD_CLAMP {
            return Err(Error::NotPsd(vals[0]));
        }
        Ok(Self { mean, cov: symmetrize(&cov) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Point mass at `mean`.
    pub fn certain(mean: Vector) -> Self {
        let n = mean.len();
        Self { mean, cov: Matrix::zeros(n, n) }
    }

    /// Convenience constructor for planar positions.
    pub fn planar(x: f64, y: f64, cxx: f64, cxy: f64, cyy: f64) -> Result<Self> {
        Self::new(Vector::from_vec(vec![x, y]), Matrix::from_row_slice(2, 2, &[cxx, cxy, cxy, cyy]))
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn check_symmetric(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matrix entry".into()));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYM_RTOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Symmetric eigendecomposition with ascending eigenvalues.
///
/// Returns `(lambda, P)` with `M = P diag(lambda) P^T`.
pub fn sym_eig(m: &Matrix) -> Result<(Vector, Matrix)> {
    check_symmetric(m)?;
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((vals, vecs))
}

fn spectral_map(vals: &Vector, vecs: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let d = Matrix::from_diagonal(&vals.map(f));
    symmetrize(&(vecs * d * vecs.transpose()))
}

/// Principal square root of a PSD matrix.
pub fn sym_sqrt(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = sym_eig(m)?;
    if vals[0] < -PSD_CLAMP {
        return Err(Error::NotPsd(vals[0]));
    }
    Ok(spectral_map(&vals, &vecs, |l| l.max(0.0).sqrt()))
}

fn check_pd(vals: &Vector) -> Result<()> {
    let max = vals[vals.len() - 1];
    let min = vals[0];
    if !(min > 0.0) || min <= max * 1e-15 {
        return Err(Error::Singular(min));
    }
    Ok(())
}

/// Inverse of a positive definite matrix through its eigendecomposition.
pub fn sym_inv(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = sym_eig(m)?;
    check_pd(&vals)?;
    Ok(spectral_map(&vals, &vecs, |l| 1.0 / l))
}

/// Inverse principal square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = sym_eig(m)?;
    check_pd(&vals)?;
    Ok(spectral_map(&vals, &vecs, |l| 1.0 / l.sqrt()))
}

/// Density of `g` at `x`.
pub fn gaussian_pdf(x: &Vector, g: &Gaussian) -> Result<f64> {
    Ok(gaussian_log_pdf(x, g)?.exp())
}

pub fn gaussian_log_pdf(x: &Vector, g: &Gaussian) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::Dimension { expected: g.dim(), got: x.len() });
    }
    let (vals, vecs) = sym_eig(&g.cov)?;
    check_pd(&vals)?;
    let proj = vecs.transpose() * (x - &g.mean);
    let maha: f64 = proj.iter().zip(vals.iter()).map(|(p, l)| p * p / l).sum();
    let logdet: f64 = vals.iter().map(|l| (2.0 * std::f64::consts::PI * l).ln()).sum();
    Ok(-0.5 * (logdet + maha))
}

/// `x^T S x`.
pub fn mahalanobis_sq(x: &Vector, s: &Matrix) -> f64 {
    debug_assert_eq!(x.len(), s.nrows());
    (x.transpose() * s * x)[(0, 0)]
}

/// Distribution of `a - b` for independent `a`, `b`.
pub fn gaussian_difference(a: &Gaussian, b: &Gaussian) -> Result<Gaussian> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension { expected: a.dim(), got: b.dim() });
    }
    Ok(Gaussian { mean: &a.mean - &b.mean, cov: symmetrize(&(&a.cov + &b.cov)) })
}
