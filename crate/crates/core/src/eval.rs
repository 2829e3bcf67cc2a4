//! Trial lists, threshold-swept detection metrics and interpolation sweeps.
//!
//! Operating points are taken at thresholds strictly between consecutive
//! distinct scores, plus one below the minimum (accept all) and one above
//! the maximum (reject all). A trial is accepted when `score ≥ threshold`.
//!
//! EER: walking the operating points in increasing threshold order, `P_miss`
//! rises and `P_fa` falls. The EER is read off the straight segment joining
//! the last point with `P_fa > P_miss` and the first with `P_fa ≤ P_miss`,
//! at the parameter where the two rates are equal.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::adapt;
use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::gplda::{GPldaModel, GPldaScorer};
use crate::htplda::HtPldaModel;

pub const P_TARGET_PRIMARY: [f64; 2] = [0.01, 0.005];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub pairs: Vec<(String, String)>,
    pub labels: Option<Vec<bool>>,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Map ids to row indices of `x`.
    pub fn resolve(&self, x: &EmbeddingSet) -> Result<Vec<(usize, usize)>> {
        let index = x.id_index();
        let find = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("trial references unknown utterance id {id:?}")))
        };
        self.pairs.iter().map(|(e, t)| Ok((find(e)?, find(t)?))).collect()
    }

    /// Attach labels to a score vector aligned with `pairs`.
    pub fn labeled_scores(&self, scores: &[f64]) -> Result<Vec<(f64, bool)>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("trial list has no labels".into()))?;
        if scores.len() != labels.len() {
            return Err(Error::dim(labels.len(), scores.len(), "score count"));
        }
        Ok(scores.iter().copied().zip(labels.iter().copied()).collect())
    }
}

/// Anything that can score index pairs of an embedding set.
pub trait TrialScorer {
    fn score_pairs(&self, x: &EmbeddingSet, pairs: &[(usize, usize)]) -> Result<Vec<f64>>;
}

impl TrialScorer for GPldaScorer {
    fn score_pairs(&self, x: &EmbeddingSet, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        GPldaScorer::score_pairs(self, x, pairs)
    }
}

impl TrialScorer for HtPldaModel {
    fn score_pairs(&self, x: &EmbeddingSet, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        HtPldaModel::score_pairs(self, x, pairs)
    }
}

/// Score every trial of `trials` against `x`, in trial order.
pub fn score_trials(scorer: &dyn TrialScorer, x: &EmbeddingSet, trials: &TrialSet) -> Result<Vec<f64>> {
    let pairs = trials.resolve(x)?;
    scorer.score_pairs(x, &pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub eer: f64,
    pub min_dcf_001: f64,
    pub min_dcf_0005: f64,
    pub minc_primary: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

fn check_scores(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {s} is not a number")));
    }
    let n_tar = scores.iter().filter(|(_, l)| *l).count();
    let n_non = scores.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::InsufficientData(format!(
            "metrics need both classes, got {n_tar} target and {n_non} nontarget trials"
        )));
    }
    Ok((n_tar, n_non))
}

/// All operating points, ordered by increasing threshold.
pub fn det_points(scores: &[(f64, bool)]) -> Result<Vec<DetPoint>> {
    let (n_tar, n_non) = check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::with_capacity(sorted.len() + 1);
    let (mut miss, mut fa) = (0usize, n_non);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        p_miss: 0.0,
        p_fa: 1.0,
    });
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                miss += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        let threshold = match sorted.get(i) {
            Some(&(next, _)) => value + (next - value) / 2.0,
            None => f64::INFINITY,
        };
        points.push(DetPoint {
            threshold,
            p_miss: miss as f64 / n_tar as f64,
            p_fa: fa as f64 / n_non as f64,
        });
    }
    Ok(points)
}

/// EER from a sorted operating-point list (see module docs).
pub fn eer_from_points(points: &[DetPoint]) -> f64 {
    let k = points
        .iter()
        .position(|p| p.p_fa <= p.p_miss)
        .expect("reject-all point has p_fa = 0");
    if k == 0 {
        return points[0].p_fa;
    }
    let (p0, p1) = (points[k - 1], points[k]);
    let d0 = p0.p_fa - p0.p_miss;
    let d1 = p1.p_fa - p1.p_miss;
    let t = d0 / (d0 - d1);
    p0.p_miss + t * (p1.p_miss - p0.p_miss)
}

pub fn compute_eer(scores: &[(f64, bool)]) -> Result<f64> {
    Ok(eer_from_points(&det_points(scores)?))
}

pub fn min_dcf_from_points(points: &[DetPoint], p_target: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    points
        .iter()
        .map(|p| (c_miss * p_target * p.p_miss + c_fa * (1.0 - p_target) * p.p_fa) / norm)
        .fold(f64::INFINITY, f64::min)
}

pub fn compute_min_dcf(scores: &[(f64, bool)], p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::InvalidConfig(format!("p_target must be in (0, 1), got {p_target}")));
    }
    if !(c_miss > 0.0 && c_fa > 0.0) {
        return Err(Error::InvalidConfig("detection costs must be positive".into()));
    }
    Ok(min_dcf_from_points(&det_points(scores)?, p_target, c_miss, c_fa))
}

pub fn compute_metrics(scores: &[(f64, bool)]) -> Result<Metrics> {
    let points = det_points(scores)?;
    let n_target = scores.iter().filter(|(_, l)| *l).count();
    let min_dcf_001 = min_dcf_from_points(&points, P_TARGET_PRIMARY[0], 1.0, 1.0);
    let min_dcf_0005 = min_dcf_from_points(&points, P_TARGET_PRIMARY[1], 1.0, 1.0);
    Ok(Metrics {
        eer: eer_from_points(&points),
        min_dcf_001,
        min_dcf_0005,
        minc_primary: (min_dcf_001 + min_dcf_0005) / 2.0,
        n_target,
        n_nontarget: scores.len() - n_target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub eer: f64,
    pub minc_primary: f64,
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("weight grid is empty".into()));
    }
    let mut seen = HashSet::new();
    for &a in grid {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidConfig(format!("grid weight {a} is outside [0, 1]")));
        }
        if !seen.insert(a.to_bits()) {
            return Err(Error::InvalidConfig(format!("grid weight {a} appears more than once")));
        }
    }
    Ok(())
}

/// Evaluate `lip(base, dev, α, regularize)` at each grid weight.
///
/// `α = 1` reproduces `base`; with `regularize = false`, `α = 0` reproduces
/// `dev`.
pub fn weight_sweep(
    base: &GPldaModel,
    dev: &GPldaModel,
    x: &EmbeddingSet,
    trials: &TrialSet,
    grid: &[f64],
    regularize: bool,
) -> Result<Vec<SweepRow>> {
    validate_grid(grid)?;
    let pairs = trials.resolve(x)?;
    grid.iter()
        .map(|&alpha| {
            let model = adapt::lip(base, dev, alpha, regularize)?;
            let scores = model.scorer()?.score_pairs(x, &pairs)?;
            let m = compute_metrics(&trials.labeled_scores(&scores)?)?;
            Ok(SweepRow {
                alpha,
                eer: m.eer,
                minc_primary: m.minc_primary,
            })
        })
        .collect()
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Exhaustive oracle: every candidate threshold counted from scratch.
    pub(crate) fn brute_force(scores: &[(f64, bool)], p_target: f64) -> (f64, f64) {
        let mut values: Vec<f64> = scores.iter().map(|s| s.0).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut thresholds = vec![f64::NEG_INFINITY];
        thresholds.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        thresholds.push(f64::INFINITY);
        let n_tar = scores.iter().filter(|s| s.1).count() as f64;
        let n_non = scores.len() as f64 - n_tar;
        let rates: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let miss = scores.iter().filter(|s| s.1 && s.0 < t).count() as f64 / n_tar;
                let fa = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64 / n_non;
                (miss, fa)
            })
            .collect();
        let mut eer = f64::NAN;
        for k in 0..rates.len() {
            let (m1, f1) = rates[k];
            if f1 <= m1 {
                eer = if k == 0 {
                    f1
                } else {
                    let (m0, f0) = rates[k - 1];
                    let t = (f0 - m0) / ((f0 - m0) - (f1 - m1));
                    m0 + t * (m1 - m0)
                };
                break;
            }
        }
        let norm = p_target.min(1.0 - p_target);
        let dcf = rates
            .iter()
            .map(|(m, f)| (p_target * m + (1.0 - p_target) * f) / norm)
            .fold(f64::INFINITY, f64::min);
        (eer, dcf)
    }

    fn mk(tar: &[f64], non: &[f64]) -> Vec<(f64, bool)> {
        tar.iter().map(|&s| (s, true)).chain(non.iter().map(|&s| (s, false))).collect()
    }

    #[test]
    fn eer_cases() {
        assert_eq!(compute_eer(&mk(&[5.0, 6.0], &[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(compute_eer(&mk(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])).unwrap(), 0.5);
        let s = mk(&[1.0, 3.0, 4.0], &[0.0, 2.0]);
        let eer = compute_eer(&s).unwrap();
        assert!((eer - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(eer, brute_force(&s, 0.01).0);
        assert!(compute_eer(&mk(&[1.0], &[])).is_err());
        assert!(compute_eer(&[(f64::NAN, true), (0.0, false)]).is_err());
    }

    #[test]
    fn min_dcf_cases() {
        assert_eq!(compute_min_dcf(&mk(&[5.0], &[1.0]), 0.01, 1.0, 1.0).unwrap(), 0.0);
        // the only target scores below the only nontarget: best is reject all
        assert_eq!(compute_min_dcf(&mk(&[0.0], &[1.0]), 0.01, 1.0, 1.0).unwrap(), 1.0);
        let s = mk(&[0.3, 0.9], &[0.5, 0.1]);
        let got = compute_min_dcf(&s, 0.3, 1.0, 1.0).unwrap();
        assert!((got - brute_force(&s, 0.3).1).abs() < 1e-12);
        assert!(compute_min_dcf(&s, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn metrics_primary_is_mean() {
        let s = mk(&[0.3, 0.9, 0.4, 2.0], &[0.5, 0.1, -1.0, 0.45, 0.35]);
        let m = compute_metrics(&s).unwrap();
        assert_eq!(m.minc_primary, (m.min_dcf_001 + m.min_dcf_0005) / 2.0);
        assert_eq!((m.n_target, m.n_nontarget), (4, 5));
        let sep = compute_metrics(&mk(&[3.0, 4.0], &[1.0, 2.0])).unwrap();
        assert_eq!((sep.eer, sep.min_dcf_001, sep.min_dcf_0005, sep.minc_primary), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn det_points_shape() {
        let p = det_points(&mk(&[1.0, 3.0], &[1.0, 2.0])).unwrap();
        let thr: Vec<f64> = p.iter().map(|d| d.threshold).collect();
        assert_eq!(thr, vec![f64::NEG_INFINITY, 1.5, 2.5, f64::INFINITY]);
        assert_eq!((p[3].p_miss, p[3].p_fa), (1.0, 0.0));
        assert_eq!((p[1].p_miss, p[1].p_fa), (0.5, 0.5));
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[0.0, 0.5, 0.5]).is_err());
        assert!(validate_grid(&[1.5]).is_err());
        assert!(validate_grid(&[]).is_err());
        validate_grid(&[0.0, 1.0]).unwrap();
    }

    #[test]
    fn std_dev_hand() {
        assert!((std_dev(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
