//! Embedding sets and the preprocessing chain applied before PLDA training.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, CovNorm, SymMatrix};

/// `N×D` matrix of embeddings (one row per utterance) with utterance ids and
/// optional speaker labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    speakers: Option<Vec<String>>,
    data: DMatrix<f64>,
    preprocessed: bool,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, speakers: Option<Vec<String>>, data: DMatrix<f64>) -> Result<Self> {
        if ids.len() != data.nrows() {
            return Err(Error::dim(data.nrows(), ids.len(), "number of utterance ids"));
        }
        if let Some(s) = &speakers {
            if s.len() != ids.len() {
                return Err(Error::dim(ids.len(), s.len(), "number of speaker labels"));
            }
        }
        if let Some(i) = data.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "embedding `{}` has non-finite values",
                ids[i]
            )));
        }
        let mut seen = HashMap::with_capacity(ids.len());
        for id in &ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(Error::InvalidInput(format!("duplicate utterance id `{id}`")));
            }
        }
        Ok(Self {
            ids,
            speakers,
            data,
            preprocessed: false,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn speakers(&self) -> Option<&[String]> {
        self.speakers.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.speakers.is_some()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    pub fn mean(&self) -> DVector<f64> {
        linalg::column_mean(&self.data)
    }

    pub fn total_cov(&self, norm: CovNorm) -> Result<SymMatrix> {
        linalg::empirical_total_cov(&self.data, norm)
    }

    /// Same ids and labels, new data. The row count must match.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        let mut out = Self::new(self.ids.clone(), self.speakers.clone(), data)?;
        out.preprocessed = self.preprocessed;
        Ok(out)
    }

    pub fn without_labels(&self) -> Self {
        Self {
            speakers: None,
            ..self.clone()
        }
    }

    /// Row indices grouped by speaker, in order of first appearance.
    pub fn speaker_groups(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let speakers = self
            .speakers
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("embedding set has no speaker labels".into()))?;
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (row, spk) in speakers.iter().enumerate() {
            match index.get(spk.as_str()) {
                Some(&g) => groups[g].1.push(row),
                None => {
                    index.insert(spk.as_str(), groups.len());
                    groups.push((spk.clone(), vec![row]));
                }
            }
        }
        Ok(groups)
    }

    /// Map from utterance id to row index.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }
}

/// Subtract `mean` from every row.
pub fn center(x: &EmbeddingSet, mean: &DVector<f64>) -> Result<EmbeddingSet> {
    if mean.len() != x.dim() {
        return Err(Error::dim(x.dim(), mean.len(), "centering mean"));
    }
    let mut data = x.data.clone();
    for mut row in data.row_iter_mut() {
        row -= mean.transpose();
    }
    x.with_data(data)
}

/// `φ → a·φ` for every row.
pub fn apply_transform(a: &DMatrix<f64>, x: &EmbeddingSet) -> Result<EmbeddingSet> {
    if a.ncols() != x.dim() {
        return Err(Error::dim(a.ncols(), x.dim(), "transform input dimension"));
    }
    x.with_data(&x.data * a.transpose())
}

/// Scale every row to Euclidean norm `target` (`√D` by default).
pub fn length_normalize(x: &EmbeddingSet, target: Option<f64>) -> Result<EmbeddingSet> {
    let target = target.unwrap_or_else(|| (x.dim() as f64).sqrt());
    let mut data = x.data.clone();
    for (i, mut row) in data.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            return Err(Error::InvalidInput(format!(
                "embedding `{}` has zero norm and cannot be length-normalized",
                x.ids[i]
            )));
        }
        row *= target / norm;
    }
    x.with_data(data)
}

/// Fitted LDA projection.
#[derive(Debug, Clone)]
pub struct Lda {
    /// `d×D`; rows are discriminant directions in descending Fisher ratio.
    pub projection: DMatrix<f64>,
    /// Fisher ratio of each retained direction.
    pub ratios: Vec<f64>,
}

/// Fisher LDA on a labeled set.
///
/// Solves the between-scatter eigenproblem in the frame that whitens the
/// within-class scatter, so projected within-class covariance is the
/// identity. A near-singular within scatter is regularized by
/// `1e-6·trace/D·I`.
pub fn fit_lda(x: &EmbeddingSet, out_dim: usize) -> Result<Lda> {
    let groups = x.speaker_groups()?;
    let n_spk = groups.len();
    if n_spk < 2 {
        return Err(Error::InsufficientData(format!(
            "LDA needs at least 2 speakers, got {n_spk}"
        )));
    }
    let max_dim = x.dim().min(n_spk - 1);
    if out_dim == 0 || out_dim > max_dim {
        return Err(Error::InvalidConfig(format!(
            "LDA output dimension {out_dim} must be in 1..={max_dim} (D = {}, speakers = {n_spk})",
            x.dim()
        )));
    }
    let d = x.dim();
    let n = x.len() as f64;
    let mu = x.mean();
    let mut sw = DMatrix::<f64>::zeros(d, d);
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for (_, rows) in &groups {
        let mut m = DVector::zeros(d);
        for &r in rows {
            m += x.data.row(r).transpose();
        }
        m /= rows.len() as f64;
        for &r in rows {
            let c = x.data.row(r).transpose() - &m;
            sw += &c * c.transpose();
        }
        let dm = &m - &mu;
        sb += (&dm * dm.transpose()) * rows.len() as f64;
    }
    let mut sw = SymMatrix::symmetrize(sw / n);
    let sb = SymMatrix::symmetrize(sb / n);

    let eig = sw.eigenvalues();
    if eig[d - 1] <= 1e-10 * eig[0].max(0.0) {
        let reg = 1e-6 * sw.trace().max(sb.trace()).max(f64::MIN_POSITIVE) / d as f64;
        sw = &sw + &SymMatrix::identity(d).scaled(reg);
    }
    let sd = linalg::sim_diag(&sw, &sb)?;
    let projection = sd.b.columns(0, out_dim).transpose();
    let ratios = sd.e.iter().take(out_dim).copied().collect();
    Ok(Lda { projection, ratios })
}

/// Centering, optional LDA and optional length normalization, always in that
/// order.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub mean: DVector<f64>,
    pub lda: Option<DMatrix<f64>>,
    /// Target norm for length normalization; `None` disables it.
    pub length_norm: Option<f64>,
}

impl Preprocessor {
    pub fn centering(mean: DVector<f64>) -> Self {
        Self {
            mean,
            lda: None,
            length_norm: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.lda.as_ref().map_or(self.mean.len(), |l| l.nrows())
    }

    pub fn apply(&self, x: &EmbeddingSet) -> Result<EmbeddingSet> {
        if x.preprocessed {
            return Err(Error::InvalidInput(
                "embedding set has already been preprocessed".into(),
            ));
        }
        let mut out = center(x, &self.mean)?;
        if let Some(lda) = &self.lda {
            out = x.with_data(&out.data * lda.transpose())?;
        }
        if let Some(target) = self.length_norm {
            out = length_normalize(&out, Some(target))?;
        }
        out.preprocessed = true;
        Ok(out)
    }
}
