//! Symmetric and SPD matrix calculus.
//!
//! Everything the adaptation methods need reduces to a handful of primitives:
//! a deterministic symmetric eigendecomposition, ZCA-style matrix powers,
//! simultaneous diagonalization of a (reference, developer) covariance pair,
//! and the `gamma_max` operator that combines two covariances into one that
//! dominates both in PSD order.
//!
//! Eigenvalues are always returned in descending order and every eigenvector
//! is sign-normalized so that its first non-negligible component is positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when validating symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default relative eigenvalue floor: eigenvalues at or below
/// `DEFAULT_EIG_FLOOR * max_eigenvalue` are treated as zero.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

/// A real symmetric matrix with finite entries.
///
/// Construction symmetrizes the input exactly, so downstream code can rely on
/// `m[(i, j)] == m[(j, i)]` bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validate and wrap a square matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("matrix has zero dimension".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric (max asymmetry {asym:e}, scale {scale:e})"
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Wrap `(m + mᵀ) / 2` without validation. `m` must be square.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("matrix rows are ragged".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    /// `a · self · aᵀ`, the covariance of `a·x` when `x` has covariance `self`.
    pub fn conjugate(&self, a: &DMatrix<f64>) -> Self {
        Self::symmetrize(a * &self.0 * a.transpose())
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> DVector<f64> {
        evd_sym(self).values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let v = self.eigenvalues();
        v[v.len() - 1]
    }

    pub fn check_dim(&self, expected: usize, context: &str) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::dim(expected, self.dim(), context));
        }
        Ok(())
    }

    /// Inverse of a strictly positive definite matrix via Cholesky.
    pub fn inverse_spd(&self) -> Result<SymMatrix> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
        Ok(Self::symmetrize(chol.inverse()))
    }

    /// `ln det` of a strictly positive definite matrix.
    pub fn logdet_spd(&self) -> Result<f64> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
        Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }
}

impl std::ops::Add<&SymMatrix> for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl std::ops::Sub<&SymMatrix> for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

/// Eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Orthogonal matrix whose columns are eigenvectors.
    pub vectors: DMatrix<f64>,
    /// Eigenvalues, descending.
    pub values: DVector<f64>,
}

impl SymEigen {
    /// `Q · diag(f(λ)) · Qᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        SymMatrix::symmetrize(scaled * self.vectors.transpose())
    }
}

/// Symmetric eigendecomposition with descending eigenvalues and a
/// deterministic sign convention.
pub fn evd_sym(m: &SymMatrix) -> SymEigen {
    let n = m.dim();
    let eig = SymmetricEigen::new(m.0.clone());
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in solver order, which is itself deterministic.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = DMatrix::zeros(n, n);
    let mut values = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let pivot = col.iter().copied().find(|v| v.abs() > 1e-10).unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    SymEigen { vectors, values }
}

/// Validate a general matrix as symmetric, then decompose it.
pub fn evd_matrix(m: &DMatrix<f64>) -> Result<SymEigen> {
    Ok(evd_sym(&SymMatrix::new(m.clone())?))
}

fn psd_slack(values: &DVector<f64>) -> f64 {
    1e-8 * values.amax().max(f64::MIN_POSITIVE)
}

/// Symmetric (ZCA) matrix power `Q · diag(λ^p) · Qᵀ` of a PSD matrix.
///
/// Negative powers require every eigenvalue to exceed
/// `rel_floor * max_eigenvalue`.
pub fn spd_power_with_floor(m: &SymMatrix, p: f64, rel_floor: f64) -> Result<SymMatrix> {
    let eig = evd_sym(m);
    let max = eig.values[0];
    let min = eig.values[eig.values.len() - 1];
    if min < -psd_slack(&eig.values) {
        return Err(Error::InvalidInput(format!(
            "matrix is not positive semi-definite (eigenvalue {min:e})"
        )));
    }
    if p < 0.0 {
        let floor = rel_floor * max.max(0.0);
        if let Some(bad) = eig.values.iter().find(|&&v| v <= floor) {
            return Err(Error::Singular(format!(
                "eigenvalue {bad:e} is at or below the floor {floor:e}; cannot take power {p}"
            )));
        }
    }
    Ok(eig.reconstruct_with(|l| if p >= 0.0 { l.max(0.0).powf(p) } else { l.powf(p) }))
}

pub fn spd_power(m: &SymMatrix, p: f64) -> Result<SymMatrix> {
    spd_power_with_floor(m, p, DEFAULT_EIG_FLOOR)
}

pub fn spd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    spd_power(m, 0.5)
}

pub fn spd_inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    spd_power(m, -0.5)
}

/// Result of simultaneously diagonalizing a (reference, developer) pair.
///
/// `Bᵀ·Φ_ref·B = I` and `Bᵀ·Φ_dev·B = diag(E)` with `E` descending.
#[derive(Debug, Clone)]
pub struct SimDiag {
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
    /// `B^{-ᵀ} = Φ_ref·B`, cached for recoloring.
    b_inv_t: DMatrix<f64>,
}

impl SimDiag {
    /// `B^{-1}`, which equals `Bᵀ·Φ_ref`.
    pub fn b_inv(&self) -> DMatrix<f64> {
        self.b_inv_t.transpose()
    }

    /// Map a diagonal from the joint eigenbasis back to the input space:
    /// `B^{-ᵀ} · diag(d) · B^{-1}`.
    pub fn recolor(&self, d: &[f64]) -> SymMatrix {
        let mut scaled = self.b_inv_t.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= d[j];
        }
        SymMatrix::symmetrize(scaled * self.b_inv_t.transpose())
    }

    /// `B^{-ᵀ} · max(E − I, 0) · B^{-1}`, the variance excess of the developer
    /// over the reference.
    pub fn excess(&self) -> SymMatrix {
        let d: Vec<f64> = self.e.iter().map(|&v| (v - 1.0).max(0.0)).collect();
        self.recolor(&d)
    }
}

/// Simultaneous diagonalization by whitening the reference and decomposing
/// the whitened developer covariance.
pub fn sim_diag(phi_ref: &SymMatrix, phi_dev: &SymMatrix) -> Result<SimDiag> {
    phi_dev.check_dim(phi_ref.dim(), "sim_diag developer covariance")?;
    let ref_eig = evd_sym(phi_ref);
    let max = ref_eig.values[0];
    let floor = DEFAULT_EIG_FLOOR * max.max(0.0);
    if max <= 0.0 || ref_eig.values.iter().any(|&v| v <= floor) {
        return Err(Error::Singular(format!(
            "reference covariance is not positive definite (smallest eigenvalue {:e})",
            ref_eig.values[ref_eig.values.len() - 1]
        )));
    }
    // W = Q·Λ^{-1/2}
    let mut whiten = ref_eig.vectors.clone();
    for (j, mut col) in whiten.column_iter_mut().enumerate() {
        col /= ref_eig.values[j].sqrt();
    }
    let inner = SymMatrix::symmetrize(whiten.transpose() * phi_dev.as_matrix() * &whiten);
    let inner_eig = evd_sym(&inner);
    let b = whiten * &inner_eig.vectors;
    let b_inv_t = phi_ref.as_matrix() * &b;
    let slack = 1e-12 * inner_eig.values.amax();
    let e = inner_eig
        .values
        .map(|v| if v < 0.0 && v > -slack { 0.0 } else { v });
    Ok(SimDiag { b, e, b_inv_t })
}

/// Covariance that dominates both `phi_dev` and `phi_ref` in PSD order:
/// `B^{-ᵀ}·max(E, I)·B^{-1}` with `{B, E} = sim_diag(phi_ref, phi_dev)`.
///
/// Computed as `phi_ref + B^{-ᵀ}·max(E − I, 0)·B^{-1}`, which is the same
/// matrix and returns `phi_ref` exactly when the developer never exceeds it.
pub fn gamma_max(phi_dev: &SymMatrix, phi_ref: &SymMatrix) -> Result<SymMatrix> {
    let sd = sim_diag(phi_ref, phi_dev)?;
    Ok(phi_ref + &sd.excess())
}

/// Normalization of an empirical covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovNorm {
    /// Divide by `N`.
    #[default]
    MaxLikelihood,
    /// Divide by `N − 1`.
    Unbiased,
}

/// Column means of an `N×D` data matrix.
pub fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Covariance of the rows of `x` about their own mean.
pub fn empirical_total_cov(x: &DMatrix<f64>, norm: CovNorm) -> Result<SymMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let mean = column_mean(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = match norm {
        CovNorm::MaxLikelihood => n as f64,
        CovNorm::Unbiased => (n - 1) as f64,
    };
    Ok(SymMatrix::symmetrize(centered.transpose() * centered / denom))
}

/// Smallest eigenvalue of `a − b` divided by `trace(a) + trace(b)`; a
/// non-negative value (up to rounding) means `a ⪰ b`.
pub fn relative_dominance_margin(a: &SymMatrix, b: &SymMatrix) -> f64 {
    let diff = a - b;
    let scale = (a.trace().abs() + b.trace().abs()).max(f64::MIN_POSITIVE);
    diff.min_eigenvalue() / scale
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Smallest singular value over largest; zero for singular matrices.
pub fn inverse_condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}
