//! Simplified heavy-tailed PLDA with parameters `(ν, F, W)`.
//!
//! Embeddings are modeled as `φ ~ N(F·h, (λW)^{-1})` with `h ~ N(0, I)` and a
//! per-utterance precision scale `λ ~ Gamma(ν/2, ν/2)`. Inputs are assumed to
//! be mean-removed. Each utterance reduces to a pair `(a, b)`; trials are
//! scored by combining the resulting Gaussian likelihoods for `h`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::gplda;
use crate::linalg::{self, SymEigen, SymMatrix};

/// Default degrees of freedom.
pub const DEFAULT_NU: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct HtPldaModel {
    nu: f64,
    f: DMatrix<f64>,
    w: SymMatrix,
    b0: SymMatrix,
    g: SymMatrix,
    /// `Fᵀ·W`, `d_h×D`.
    ftw: DMatrix<f64>,
    b0_eig: SymEigen,
}

impl PartialEq for HtPldaModel {
    fn eq(&self, other: &Self) -> bool {
        self.nu == other.nu && self.f == other.f && self.w == other.w
    }
}

/// Per-utterance statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct UttStats {
    pub a: DVector<f64>,
    pub b: f64,
}

/// Build a model and cache `B0 = FᵀWF` and `G = W − W·F·B0^{-1}·Fᵀ·W`.
pub fn ht_precompute(nu: f64, f: DMatrix<f64>, w: SymMatrix) -> Result<HtPldaModel> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidModel(format!("degrees of freedom must be > 0, got {nu}")));
    }
    let d = f.nrows();
    let d_h = f.ncols();
    if d_h == 0 || d_h >= d {
        return Err(Error::InvalidModel(format!(
            "speaker dimension {d_h} must satisfy 1 <= d_h < D = {d}"
        )));
    }
    w.check_dim(d, "precision matrix W")?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("loading matrix has non-finite entries".into()));
    }
    if w.as_matrix().clone().cholesky().is_none() {
        return Err(Error::InvalidModel("precision matrix W is not positive definite".into()));
    }
    let ftw = f.transpose() * w.as_matrix();
    let b0 = SymMatrix::symmetrize(&ftw * &f);
    let b0_eig = linalg::evd_sym(&b0);
    let max = b0_eig.values[0];
    if max.is_nan() || max <= 0.0 || b0_eig.values[d_h - 1] <= linalg::DEFAULT_EIG_FLOOR * max {
        return Err(Error::InvalidModel("FᵀWF is rank deficient".into()));
    }
    let b0_inv = b0_eig.reconstruct_with(|v| 1.0 / v);
    let g = SymMatrix::symmetrize(w.as_matrix() - ftw.transpose() * b0_inv.as_matrix() * &ftw);
    Ok(HtPldaModel {
        nu,
        f,
        w,
        b0,
        g,
        ftw,
        b0_eig,
    })
}

impl HtPldaModel {
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn w(&self) -> &SymMatrix {
        &self.w
    }

    pub fn b0(&self) -> &SymMatrix {
        &self.b0
    }

    pub fn g(&self) -> &SymMatrix {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.f.ncols()
    }

    /// Approximate between-speaker covariance `F·Fᵀ`.
    pub fn phi_b(&self) -> SymMatrix {
        SymMatrix::symmetrize(&self.f * self.f.transpose())
    }

    /// `W^{-1}`, the within-speaker covariance at unit precision scale.
    pub fn w_inv(&self) -> Result<SymMatrix> {
        self.w.inverse_spd()
    }

    pub fn utt_stats(&self, phi: &DVector<f64>) -> Result<UttStats> {
        if phi.len() != self.dim() {
            return Err(Error::dim(self.dim(), phi.len(), "embedding for utterance statistics"));
        }
        let b = self.precision_scale(phi.dot(&(self.g.as_matrix() * phi)));
        Ok(UttStats {
            a: (&self.ftw * phi) * b,
            b,
        })
    }

    fn precision_scale(&self, quad: f64) -> f64 {
        let dof = self.nu + (self.dim() - self.d_h()) as f64;
        dof / (self.nu + quad.max(0.0))
    }

    /// `ζ(a, β·B0) = ½aᵀ(I + βB0)^{-1}a − ½ln det(I + βB0)`, with `a` already
    /// rotated into the eigenbasis of `B0`.
    fn log_partition(&self, a_rot: &DVector<f64>, beta: f64) -> f64 {
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for (k, s) in self.b0_eig.values.iter().enumerate() {
            let denom = 1.0 + beta * s;
            quad += a_rot[k] * a_rot[k] / denom;
            logdet += denom.ln();
        }
        0.5 * quad - 0.5 * logdet
    }

    fn rotated(&self, st: &UttStats) -> DVector<f64> {
        self.b0_eig.vectors.transpose() * &st.a
    }

    fn llr_rotated(&self, ae: &DVector<f64>, be: f64, at: &DVector<f64>, bt: f64) -> f64 {
        let joint = ae + at;
        self.log_partition(&joint, be + bt) - self.log_partition(ae, be) - self.log_partition(at, bt)
    }

    pub fn llr(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        let se = self.utt_stats(enroll)?;
        let st = self.utt_stats(test)?;
        Ok(self.llr_rotated(&self.rotated(&se), se.b, &self.rotated(&st), st.b))
    }

    pub fn score_pairs(&self, x: &EmbeddingSet, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        if x.dim() != self.dim() {
            return Err(Error::dim(self.dim(), x.dim(), "embedding dimension for scoring"));
        }
        let stats: Vec<(DVector<f64>, f64)> = (0..x.len())
            .into_par_iter()
            .map(|i| {
                let phi = x.row(i);
                let b = self.precision_scale(phi.dot(&(self.g.as_matrix() * &phi)));
                let a = (&self.ftw * &phi) * b;
                (self.b0_eig.vectors.transpose() * a, b)
            })
            .collect();
        Ok(pairs
            .par_iter()
            .map(|&(e, t)| self.llr_rotated(&stats[e].0, stats[e].1, &stats[t].0, stats[t].1))
            .collect())
    }
}

pub fn ht_utt_stats(model: &HtPldaModel, phi: &DVector<f64>) -> Result<UttStats> {
    model.utt_stats(phi)
}

pub fn ht_llr(model: &HtPldaModel, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
    model.llr(enroll, test)
}

/// Top-`k` eigenpairs of a PSD matrix as a loading matrix `V·diag(√λ)`.
pub(crate) fn loading_from_cov(cov: &SymMatrix, k: usize) -> DMatrix<f64> {
    let eig = linalg::evd_sym(cov);
    let mut f = eig.vectors.columns(0, k).clone_owned();
    for (j, mut col) in f.column_iter_mut().enumerate() {
        col *= eig.values[j].max(0.0).sqrt();
    }
    f
}

/// Moment-based initializer.
///
/// `F` spans the leading `d_h` eigenpairs of the bias-corrected between-speaker
/// scatter. `W` inverts the within scatter after removing the heavy-tail
/// inflation `E[1/λ] = ν/(ν−2)`, which only exists for `ν > 2`.
pub fn ht_init(x: &EmbeddingSet, nu: f64, d_h: usize) -> Result<HtPldaModel> {
    if d_h == 0 || d_h >= x.dim() {
        return Err(Error::InvalidConfig(format!(
            "speaker dimension {d_h} must satisfy 1 <= d_h < D = {}",
            x.dim()
        )));
    }
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidConfig(format!("degrees of freedom must be > 0, got {nu}")));
    }
    let sc = gplda::speaker_scatter(x)?;
    let total_trace = sc.within.trace() + sc.means.trace();
    let within = gplda::floor_if_singular(sc.within, total_trace)?;
    let raw_b = &sc.means - &within.scaled(sc.mean_inv_count);
    let phi_b = gplda::clip_psd_relative(&raw_b, &within)?;
    let f = loading_from_cov(&phi_b, d_h);
    let correction = if nu > 2.0 { (nu - 2.0) / nu } else { 1.0 };
    let w = within.scaled(correction).inverse_spd()?;
    ht_precompute(nu, f, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> HtPldaModel {
        ht_precompute(2.0, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), SymMatrix::identity(2)).unwrap()
    }

    #[test]
    fn precompute_hand_case() {
        let m = toy();
        assert_eq!(m.b0().as_matrix()[(0, 0)], 1.0);
        assert!((m.g().as_matrix() - SymMatrix::from_diagonal(&[0.0, 1.0]).as_matrix()).amax() < 1e-15);
    }

    #[test]
    fn precompute_projector_identity() {
        // orthonormal columns spanning a 2-D subspace of R^4
        let s = 0.5f64.sqrt();
        let f = DMatrix::from_column_slice(4, 2, &[s, s, 0.0, 0.0, 0.0, 0.0, s, -s]);
        let m = ht_precompute(3.0, f.clone(), SymMatrix::identity(4)).unwrap();
        assert!((m.b0().as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-14);
        let proj = DMatrix::identity(4, 4) - &f * f.transpose();
        assert!((m.g().as_matrix() - proj).amax() < 1e-14);
        assert!((m.g().as_matrix() * m.f()).amax() < 1e-14);
    }

    #[test]
    fn precompute_rejects_bad_models() {
        let w = SymMatrix::identity(2);
        assert!(ht_precompute(2.0, DMatrix::zeros(2, 1), w.clone()).is_err());
        assert!(ht_precompute(2.0, DMatrix::identity(2, 2), w.clone()).is_err());
        assert!(ht_precompute(0.0, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), w).is_err());
    }

    #[test]
    fn utt_stats_hand_case_and_boundaries() {
        let m = toy();
        let st = m.utt_stats(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((st.b - 1.0).abs() < 1e-15);
        assert!((st.a[0] - 1.0).abs() < 1e-15);

        let in_span = m.utt_stats(&DVector::from_vec(vec![5.0, 0.0])).unwrap();
        assert!((in_span.b - 1.5).abs() < 1e-15);

        let mut prev = f64::INFINITY;
        for c in [1.0, 10.0, 100.0, 1e4] {
            let b = m.utt_stats(&DVector::from_vec(vec![c, c])).unwrap().b;
            assert!(b < prev && b > 0.0);
            prev = b;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn zero_statistics_llr_reduces_to_logdets() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.0, 0.8, 0.3, -0.1]);
        let w = SymMatrix::from_rows(&[vec![2.0, 0.1, 0.0], vec![0.1, 1.0, 0.2], vec![0.0, 0.2, 1.5]]).unwrap();
        let m = ht_precompute(4.0, f, w).unwrap();
        // φ = 0 gives a = 0 and b = (ν + D − d_h)/ν.
        let zero = DVector::zeros(3);
        let b = (4.0 + 1.0) / 4.0;
        let eye = DMatrix::<f64>::identity(2, 2);
        let ld = |beta: f64| SymMatrix::symmetrize(&eye + m.b0().as_matrix() * beta).logdet_spd().unwrap();
        let expect = 0.5 * (ld(b) + ld(b) - ld(2.0 * b));
        assert!((m.llr(&zero, &zero).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn eigenbasis_llr_matches_direct_form() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.0, 0.8, 0.3, -0.1]);
        let w = SymMatrix::from_rows(&[vec![2.0, 0.1, 0.0], vec![0.1, 1.0, 0.2], vec![0.0, 0.2, 1.5]]).unwrap();
        let m = ht_precompute(3.0, f, w).unwrap();
        let zeta = |a: &DVector<f64>, b: &DMatrix<f64>| {
            let ib = SymMatrix::symmetrize(DMatrix::identity(2, 2) + b);
            0.5 * a.dot(&(ib.inverse_spd().unwrap().as_matrix() * a)) - 0.5 * ib.logdet_spd().unwrap()
        };
        let e = DVector::from_vec(vec![0.4, -1.0, 2.0]);
        let t = DVector::from_vec(vec![1.0, 0.5, -0.3]);
        let se = m.utt_stats(&e).unwrap();
        let st = m.utt_stats(&t).unwrap();
        let be = m.b0().as_matrix() * se.b;
        let bt = m.b0().as_matrix() * st.b;
        let direct = zeta(&(&se.a + &st.a), &(&be + &bt)) - zeta(&se.a, &be) - zeta(&st.a, &bt);
        let fast = m.llr(&e, &t).unwrap();
        assert!((direct - fast).abs() < 1e-12, "{direct} {fast}");
        assert!((fast - m.llr(&t, &e).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn init_rejects_full_rank_speaker_space() {
        let data = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.1, 0.1, -1.0, 0.5, -0.9, 0.4]);
        let x = EmbeddingSet::new(
            (0..4).map(|i| format!("u{i}")).collect(),
            Some(vec!["a".into(), "a".into(), "b".into(), "b".into()]),
            data,
        )
        .unwrap();
        assert!(matches!(ht_init(&x, 2.0, 2), Err(Error::InvalidConfig(_))));
        assert!(ht_init(&x, 2.0, 1).is_ok());
    }
}
