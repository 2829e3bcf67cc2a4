//! Two-covariance Gaussian PLDA: moment estimation and trial scoring.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

/// Relative PD floor added to the within-speaker covariance when the scatter
/// estimate is not positive definite.
pub const WITHIN_PD_FLOOR: f64 = 1e-8;

/// Global mean plus between/within speaker covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GPldaModel {
    pub mu: DVector<f64>,
    pub phi_b: SymMatrix,
    pub phi_w: SymMatrix,
}

impl GPldaModel {
    /// Checks dims, `phi_b ⪰ 0` and `phi_w ≻ 0`.
    pub fn new(mu: DVector<f64>, phi_b: SymMatrix, phi_w: SymMatrix) -> Result<Self> {
        let d = mu.len();
        phi_b.check_dim(d, "between-speaker covariance")?;
        phi_w.check_dim(d, "within-speaker covariance")?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("mean has non-finite entries".into()));
        }
        let eb = phi_b.eigenvalues();
        if eb[d - 1] < -1e-8 * eb.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidModel(format!(
                "between-speaker covariance is not PSD (eigenvalue {:e})",
                eb[d - 1]
            )));
        }
        if phi_w.as_matrix().clone().cholesky().is_none() {
            return Err(Error::InvalidModel(
                "within-speaker covariance is not positive definite".into(),
            ));
        }
        Ok(Self { mu, phi_b, phi_w })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `Φ_B + Φ_W`.
    pub fn total(&self) -> SymMatrix {
        &self.phi_b + &self.phi_w
    }

    /// Model of `a·φ` when `φ` follows `self`: `μ → aμ`, `Φ → aΦaᵀ`.
    pub fn conjugate(&self, a: &DMatrix<f64>) -> Self {
        Self {
            mu: a * &self.mu,
            phi_b: self.phi_b.conjugate(a),
            phi_w: self.phi_w.conjugate(a),
        }
    }

    pub fn scorer(&self) -> Result<GPldaScorer> {
        GPldaScorer::new(self)
    }
}

/// Precomputed quadratic form of the two-covariance log-likelihood ratio:
/// `llr = ½eᵀQe + ½tᵀQt + eᵀPt + c` on mean-removed vectors.
#[derive(Debug, Clone)]
pub struct GPldaScorer {
    mu: DVector<f64>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    offset: f64,
}

impl GPldaScorer {
    pub fn new(model: &GPldaModel) -> Result<Self> {
        let total = model.total();
        let same = &total + &model.phi_b;
        let singular = |what: &str| Error::Singular(format!("{what} is not positive definite; stacked trial covariance is singular"));
        let total_inv = total.inverse_spd().map_err(|_| singular("total covariance"))?;
        let same_inv = same.inverse_spd().map_err(|_| singular("Φ_W + 2Φ_B"))?;
        let within_inv = model.phi_w.inverse_spd().map_err(|_| singular("within covariance"))?;
        let q = total_inv.as_matrix() - (same_inv.as_matrix() + within_inv.as_matrix()) * 0.5;
        let p = (within_inv.as_matrix() - same_inv.as_matrix()) * 0.5;
        let offset = -0.5 * same.logdet_spd()? - 0.5 * model.phi_w.logdet_spd()? + total.logdet_spd()?;
        Ok(Self {
            mu: model.mu.clone(),
            q: SymMatrix::symmetrize(q).into_matrix(),
            p: SymMatrix::symmetrize(p).into_matrix(),
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn llr(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        if enroll.len() != self.dim() || test.len() != self.dim() {
            return Err(Error::dim(self.dim(), enroll.len().max(test.len()), "trial vector"));
        }
        let e = enroll - &self.mu;
        let t = test - &self.mu;
        Ok(0.5 * e.dot(&(&self.q * &e)) + 0.5 * t.dot(&(&self.q * &t)) + e.dot(&(&self.p * &t)) + self.offset)
    }

    /// Score many `(enroll_row, test_row)` pairs from one set.
    pub fn score_pairs(&self, x: &EmbeddingSet, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        if x.dim() != self.dim() {
            return Err(Error::dim(self.dim(), x.dim(), "embedding dimension for scoring"));
        }
        let mut centered = x.data().clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mu.transpose();
        }
        // Per-utterance ½xᵀQx and P·x.
        let qx = &centered * &self.q;
        let self_terms: Vec<f64> = (0..centered.nrows())
            .map(|i| 0.5 * centered.row(i).dot(&qx.row(i)))
            .collect();
        let px = &centered * self.p.transpose();
        Ok(pairs
            .par_iter()
            .map(|&(e, t)| self_terms[e] + self_terms[t] + centered.row(e).dot(&px.row(t)) + self.offset)
            .collect())
    }
}

/// Log-likelihood ratio of the same-speaker vs different-speaker hypotheses.
pub fn gplda_llr(model: &GPldaModel, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
    model.scorer()?.llr(enroll, test)
}

/// Scatter statistics shared by the Gaussian and heavy-tailed estimators.
#[derive(Debug, Clone)]
pub(crate) struct SpeakerScatter {
    pub mu: DVector<f64>,
    /// Pooled within-speaker scatter, normalized by `N − S`.
    pub within: SymMatrix,
    /// Scatter of speaker means about `mu`, normalized by `S`.
    pub means: SymMatrix,
    /// Average of `1/n_s` over speakers.
    pub mean_inv_count: f64,
}

pub(crate) fn speaker_scatter(x: &EmbeddingSet) -> Result<SpeakerScatter> {
    let groups = x.speaker_groups()?;
    let n_spk = groups.len();
    if n_spk < 2 {
        return Err(Error::InsufficientData(format!(
            "PLDA training needs at least 2 speakers, got {n_spk}"
        )));
    }
    let dof: usize = groups.iter().map(|(_, r)| r.len() - 1).sum();
    if dof == 0 {
        return Err(Error::InsufficientData(
            "within-speaker covariance is unestimable: no speaker has 2 or more utterances".into(),
        ));
    }
    let d = x.dim();
    let mu = x.mean();
    let data = x.data();
    let mut within = DMatrix::<f64>::zeros(d, d);
    let mut means = DMatrix::<f64>::zeros(d, d);
    let mut inv_count = 0.0;
    for (_, rows) in &groups {
        let mut m = DVector::zeros(d);
        for &r in rows {
            m += data.row(r).transpose();
        }
        m /= rows.len() as f64;
        for &r in rows {
            let c = data.row(r).transpose() - &m;
            within += &c * c.transpose();
        }
        let dm = &m - &mu;
        means += &dm * dm.transpose();
        inv_count += 1.0 / rows.len() as f64;
    }
    Ok(SpeakerScatter {
        mu,
        within: SymMatrix::symmetrize(within / dof as f64),
        means: SymMatrix::symmetrize(means / n_spk as f64),
        mean_inv_count: inv_count / n_spk as f64,
    })
}

/// Adds `WITHIN_PD_FLOOR·scale/D·I` when `m` is not safely positive definite.
pub(crate) fn floor_if_singular(m: SymMatrix, fallback_trace: f64) -> Result<SymMatrix> {
    let ev = m.eigenvalues();
    let d = m.dim();
    if ev[0] > 0.0 && ev[d - 1] > linalg::DEFAULT_EIG_FLOOR * ev[0] {
        return Ok(m);
    }
    let scale = m.trace().max(fallback_trace);
    if scale <= 0.0 {
        return Err(Error::InsufficientData(
            "all embeddings are identical; covariances are zero".into(),
        ));
    }
    Ok(&m + &SymMatrix::identity(d).scaled(WITHIN_PD_FLOOR * scale / d as f64))
}

/// Clip `m` to PSD in the frame that whitens `reference`:
/// `B^{-ᵀ}·max(E, 0)·B^{-1}` with `{B, E} = sim_diag(reference, m)`.
pub(crate) fn clip_psd_relative(m: &SymMatrix, reference: &SymMatrix) -> Result<SymMatrix> {
    let sd = linalg::sim_diag(reference, m)?;
    if sd.e.iter().all(|&v| v >= 0.0) {
        return Ok(m.clone());
    }
    let d: Vec<f64> = sd.e.iter().map(|&v| v.max(0.0)).collect();
    Ok(sd.recolor(&d))
}

/// Moment estimate of `(μ, Φ_B, Φ_W)` from labeled embeddings.
///
/// `Φ_W` is the pooled within-speaker scatter. `Φ_B` is the scatter of the
/// speaker means minus the expected contribution of within-speaker noise to
/// those means, clipped to PSD in the `Φ_W`-whitened frame. Both steps commute
/// with invertible linear maps of the data.
pub fn train_gplda(x: &EmbeddingSet) -> Result<GPldaModel> {
    let sc = speaker_scatter(x)?;
    let total_trace = sc.within.trace() + sc.means.trace();
    let phi_w = floor_if_singular(sc.within, total_trace)?;
    let raw_b = &sc.means - &phi_w.scaled(sc.mean_inv_count);
    let phi_b = clip_psd_relative(&raw_b, &phi_w)?;
    GPldaModel::new(sc.mu, phi_b, phi_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the stacked-Gaussian definition.
    fn llr_oracle(m: &GPldaModel, e: &DVector<f64>, t: &DVector<f64>) -> f64 {
        fn log_normal(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
            let chol = cov.clone().cholesky().unwrap();
            let sol = chol.solve(x);
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            -0.5 * (x.dot(&sol) + logdet + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
        }
        let d = m.dim();
        let tot = m.total().into_matrix();
        let b = m.phi_b.as_matrix();
        let mut stacked = DMatrix::zeros(2 * d, 2 * d);
        stacked.view_mut((0, 0), (d, d)).copy_from(&tot);
        stacked.view_mut((d, d), (d, d)).copy_from(&tot);
        stacked.view_mut((0, d), (d, d)).copy_from(b);
        stacked.view_mut((d, 0), (d, d)).copy_from(b);
        let ec = e - &m.mu;
        let tc = t - &m.mu;
        let mut joint = DVector::zeros(2 * d);
        joint.rows_mut(0, d).copy_from(&ec);
        joint.rows_mut(d, d).copy_from(&tc);
        log_normal(&joint, &stacked) - log_normal(&ec, &tot) - log_normal(&tc, &tot)
    }

    fn model_3d() -> GPldaModel {
        let b = SymMatrix::from_rows(&[vec![2.0, 0.3, 0.1], vec![0.3, 1.0, -0.2], vec![0.1, -0.2, 0.5]]).unwrap();
        let w = SymMatrix::from_rows(&[vec![1.0, 0.1, 0.0], vec![0.1, 0.8, 0.05], vec![0.0, 0.05, 1.2]]).unwrap();
        GPldaModel::new(DVector::from_vec(vec![0.5, -1.0, 0.2]), b, w).unwrap()
    }

    #[test]
    fn llr_matches_stacked_gaussian_oracle() {
        let m = model_3d();
        let s = m.scorer().unwrap();
        let pairs = [
            ([0.1, 0.2, 0.3], [0.0, -0.4, 1.0]),
            ([2.0, -1.0, 0.5], [1.5, -1.2, 0.4]),
            ([-3.0, 0.0, 0.0], [3.0, 0.0, 0.0]),
        ];
        for (e, t) in pairs {
            let e = DVector::from_row_slice(&e);
            let t = DVector::from_row_slice(&t);
            let fast = s.llr(&e, &t).unwrap();
            let slow = llr_oracle(&m, &e, &t);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
            assert!((fast - s.llr(&t, &e).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn llr_zero_between_covariance_is_zero() {
        let m = GPldaModel::new(DVector::zeros(2), SymMatrix::zeros(2), SymMatrix::from_diagonal(&[1.0, 2.0])).unwrap();
        let s = m.scorer().unwrap();
        let v = s.llr(&DVector::from_vec(vec![1.0, -2.0]), &DVector::from_vec(vec![0.3, 4.0])).unwrap();
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn llr_one_dim_closed_form_and_quadrature() {
        let m = GPldaModel::new(DVector::zeros(1), SymMatrix::from_diagonal(&[1.0]), SymMatrix::from_diagonal(&[1.0])).unwrap();
        let v = gplda_llr(&m, &DVector::zeros(1), &DVector::zeros(1)).unwrap();
        let closed = -0.5 * (0.75f64).ln();
        assert!((v - closed).abs() < 1e-14);

        // p(e,t|same) = ∫ N(e;y,w) N(t;y,w) N(y;0,b) dy by composite Simpson.
        let npdf = |x: f64, var: f64| (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let (lo, hi, n) = (-12.0, 12.0, 4000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let y = lo + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * npdf(0.0 - y, 1.0) * npdf(0.0 - y, 1.0) * npdf(y, 1.0);
        }
        let same = acc * h / 3.0;
        let diff = npdf(0.0, 2.0) * npdf(0.0, 2.0);
        assert!(((same / diff).ln() - v).abs() < 1e-10);
    }

    #[test]
    fn scoring_invariant_under_joint_linear_map() {
        let m = model_3d();
        let a = DMatrix::from_row_slice(3, 3, &[1.2, 0.3, -0.1, 0.0, 0.7, 0.4, 0.2, -0.5, 1.5]);
        let mc = m.conjugate(&a);
        let e = DVector::from_vec(vec![0.3, 1.0, -0.7]);
        let t = DVector::from_vec(vec![-0.2, 0.8, -0.4]);
        let lhs = gplda_llr(&m, &e, &t).unwrap();
        let rhs = gplda_llr(&mc, &(&a * &e), &(&a * &t)).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn batch_scoring_matches_single() {
        let m = model_3d();
        let s = m.scorer().unwrap();
        let data = DMatrix::from_row_slice(3, 3, &[0.1, 0.2, 0.3, 1.0, -1.0, 0.0, -0.5, 0.4, 2.0]);
        let x = EmbeddingSet::new(vec!["a".into(), "b".into(), "c".into()], None, data).unwrap();
        let pairs = [(0, 1), (1, 2), (2, 0), (1, 1)];
        let batch = s.score_pairs(&x, &pairs).unwrap();
        for (k, &(i, j)) in pairs.iter().enumerate() {
            assert!((batch[k] - s.llr(&x.row(i), &x.row(j)).unwrap()).abs() < 1e-11);
        }
    }

    fn labeled(rows: &[[f64; 2]], spk: &[&str]) -> EmbeddingSet {
        let data = DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]);
        EmbeddingSet::new(
            (0..rows.len()).map(|i| format!("u{i}")).collect(),
            Some(spk.iter().map(|s| s.to_string()).collect()),
            data,
        )
        .unwrap()
    }

    #[test]
    fn identical_utterances_give_floored_within() {
        let x = labeled(&[[1.0, 0.0], [1.0, 0.0], [-1.0, 2.0], [-1.0, 2.0]], &["a", "a", "b", "b"]);
        let m = train_gplda(&x).unwrap();
        let w = m.phi_w.as_matrix();
        assert!(w[(0, 1)].abs() < 1e-20);
        assert!(w[(0, 0)] > 0.0 && w[(0, 0)] < 1e-7);
    }

    #[test]
    fn training_errors() {
        let one_spk = labeled(&[[1.0, 0.0], [0.0, 1.0]], &["a", "a"]);
        assert!(matches!(train_gplda(&one_spk), Err(Error::InsufficientData(_))));
        let singletons = labeled(&[[1.0, 0.0], [0.0, 1.0]], &["a", "b"]);
        let err = train_gplda(&singletons).unwrap_err();
        assert!(err.to_string().contains("unestimable"));
    }

    #[test]
    fn training_is_translation_invariant() {
        let rows = [[1.0, 0.5], [1.4, 0.2], [0.9, 0.9], [-1.0, 2.0], [-1.3, 2.5], [0.2, -0.3], [0.5, -0.1]];
        let spk = ["a", "a", "a", "b", "b", "c", "c"];
        let x = labeled(&rows, &spk);
        let shifted: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] + 10.0, r[1] - 3.0]).collect();
        let y = labeled(&shifted, &spk);
        let mx = train_gplda(&x).unwrap();
        let my = train_gplda(&y).unwrap();
        assert!((&my.mu - &mx.mu - DVector::from_vec(vec![10.0, -3.0])).amax() < 1e-12);
        assert!((my.phi_b.as_matrix() - mx.phi_b.as_matrix()).amax() < 1e-10);
        assert!((my.phi_w.as_matrix() - mx.phi_w.as_matrix()).amax() < 1e-10);
    }

    #[test]
    fn singular_within_rejected_by_scorer() {
        let m = GPldaModel {
            mu: DVector::zeros(2),
            phi_b: SymMatrix::identity(2),
            phi_w: SymMatrix::from_diagonal(&[1.0, 0.0]),
        };
        assert!(matches!(m.scorer(), Err(Error::Singular(_))));
    }
}
