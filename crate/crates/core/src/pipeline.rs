//! End-to-end experiment: load → preprocess → train → adapt → score →
//! evaluate → write.
//!
//! Preprocessing centers the OOD set by its own mean (or by the in-domain
//! mean when `center_source` is off) and the in-domain and evaluation sets by
//! the in-domain mean. With LDA enabled, the embedding-transform methods
//! (coral, fda, kaldi*) are applied to the raw OOD embeddings before the
//! projection; all other methods adapt the trained model in the projected
//! space.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{self, AdaptPlan, Method, Role};
use crate::dataset::{self, EmbeddingSet};
use crate::error::{Error, Result};
use crate::eval::{self, Metrics, TrialSet};
use crate::gplda::{self, GPldaModel};
use crate::htplda::{self, DEFAULT_NU};
use crate::io::{self, Model};
use crate::linalg::{CovNorm, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Labeled out-of-domain training embeddings.
    pub ood: PathBuf,
    /// In-domain adaptation embeddings; labels needed by supervised methods.
    #[serde(default)]
    pub ind: Option<PathBuf>,
    /// Enrollment and test embeddings.
    pub eval: PathBuf,
    pub trials: PathBuf,
    /// Where model, scores, metrics and DET files go; nothing is written when
    /// absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LdaSource {
    /// Fit LDA on the embeddings before any embedding-level adaptation.
    #[default]
    Raw,
    /// Fit LDA on the adapted OOD embeddings.
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub center_source: bool,
    pub lda_dim: Option<usize>,
    pub lda_source: LdaSource,
    pub length_norm: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            center_source: true,
            lda_dim: None,
            lda_source: LdaSource::Raw,
            length_norm: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Gplda,
    Htplda,
}

fn default_nu() -> f64 {
    DEFAULT_NU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub backend: Backend,
    /// No adaptation when absent.
    #[serde(default)]
    pub adapt: Option<AdaptPlan>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// HT-PLDA speaker dimension; defaults to half the embedding dimension.
    #[serde(default)]
    pub d_h: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Read a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&io::read_text(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&bytes)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if let Some(plan) = &self.adapt {
            plan.validate()?;
            let ht_ok = matches!(plan.method, Method::HtW | Method::Coral | Method::Fda | Method::KaldiStar);
            match self.backend {
                Backend::Htplda if !ht_ok => {
                    return Err(Error::InvalidConfig(format!(
                        "adapt.method: {} is not available for the htplda back-end",
                        plan.method
                    )))
                }
                Backend::Gplda if plan.method == Method::HtW => {
                    return Err(Error::InvalidConfig("adapt.method: ht-w needs backend htplda".into()))
                }
                _ => {}
            }
            if self.paths.ind.is_none() {
                return Err(Error::InvalidConfig("paths.ind: adaptation needs in-domain embeddings".into()));
            }
        }
        if self.preprocess.lda_dim == Some(0) {
            return Err(Error::InvalidConfig("preprocess.lda_dim must be positive".into()));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::InvalidConfig(format!("nu must be positive, got {}", self.nu)));
        }
        if self.d_h == Some(0) {
            return Err(Error::InvalidConfig("d_h must be positive".into()));
        }
        Ok(())
    }

    fn needs_ind_model(&self) -> bool {
        self.adapt.as_ref().is_some_and(|p| match p.method {
            Method::Lip | Method::Cip | Method::LipReg | Method::CipReg | Method::HtW => true,
            Method::Generalized => p.roles.contains(&Role::Ind),
            _ => false,
        })
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config_hash: String,
    pub model: Model,
    pub trials: TrialSet,
    pub scores: Vec<f64>,
    pub metrics: Option<Metrics>,
    pub files: Vec<PathBuf>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn load_set(cfg: &ExperimentConfig, field: &str, p: &Path) -> Result<EmbeddingSet> {
    let path = cfg.resolve(p);
    io::read_embeddings(&path).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(format!("paths.{field} ({})", path.display()), source),
        other => Error::InvalidInput(format!("paths.{field}: {other}")),
    })
}

fn project(x: &EmbeddingSet, lda: Option<&DMatrix<f64>>, length_norm: bool) -> Result<EmbeddingSet> {
    let mut out = match lda {
        Some(p) => x.with_data(x.data() * p.transpose())?,
        None => x.clone(),
    };
    if length_norm {
        out = dataset::length_normalize(&out, None)?;
    }
    Ok(out)
}

struct Prepared {
    ood: EmbeddingSet,
    ind: Option<EmbeddingSet>,
    eval: EmbeddingSet,
    adapted_by_transform: bool,
}

fn preprocess(cfg: &ExperimentConfig, ood: &EmbeddingSet, ind: Option<&EmbeddingSet>, eval_set: &EmbeddingSet) -> Result<Prepared> {
    let pp = &cfg.preprocess;
    let ind_mean = ind.map_or_else(|| ood.mean(), EmbeddingSet::mean);
    let ood_mean = if pp.center_source { ood.mean() } else { ind_mean.clone() };
    let ood_raw = dataset::center(ood, &ood_mean)?;
    let ind_c = ind.map(|x| dataset::center(x, &ind_mean)).transpose()?;
    let eval_c = dataset::center(eval_set, &ind_mean)?;

    let mut ood_c = ood_raw.clone();
    let mut adapted_by_transform = false;
    if let (Some(_), Some(plan), Some(ind_c)) = (pp.lda_dim, &cfg.adapt, &ind_c) {
        if matches!(plan.method, Method::Coral | Method::Fda | Method::KaldiStar) {
            let c_o = ood_raw.total_cov(CovNorm::MaxLikelihood)?;
            let c_i = ind_c.total_cov(CovNorm::MaxLikelihood)?;
            let a = match cfg.backend {
                Backend::Gplda => adapt::plan_transform(plan, &gplda::train_gplda(&ood_raw)?, &c_o, &c_i)?,
                Backend::Htplda => {
                    let ht = htplda::ht_init(&ood_raw, cfg.nu, d_h_for(cfg, ood_raw.dim()))?;
                    let total = GPldaModel::new(DVector::zeros(ht.dim()), ht.phi_b(), ht.w_inv()?)?;
                    adapt::plan_transform(plan, &total, &c_o, &c_i)?
                }
            };
            if let Some(a) = a {
                ood_c = dataset::apply_transform(&a, &ood_raw)?;
                adapted_by_transform = true;
            }
        }
    }

    let lda = match pp.lda_dim {
        None => None,
        Some(k) => {
            let fit_on = if cfg.needs_ind_model() {
                ind_c.as_ref().expect("validated")
            } else if pp.lda_source == LdaSource::Adapted {
                &ood_c
            } else {
                &ood_raw
            };
            Some(dataset::fit_lda(fit_on, k)?.projection)
        }
    };
    Ok(Prepared {
        ood: project(&ood_c, lda.as_ref(), pp.length_norm)?,
        ind: ind_c.map(|x| project(&x, lda.as_ref(), pp.length_norm)).transpose()?,
        eval: project(&eval_c, lda.as_ref(), pp.length_norm)?,
        adapted_by_transform,
    })
}

fn d_h_for(cfg: &ExperimentConfig, dim: usize) -> usize {
    cfg.d_h.unwrap_or((dim / 2).max(1))
}

fn train(cfg: &ExperimentConfig, x: &EmbeddingSet) -> Result<Model> {
    if !x.is_labeled() {
        return Err(Error::InvalidInput("training embeddings need speaker labels".into()));
    }
    Ok(match cfg.backend {
        Backend::Gplda => Model::Gplda(gplda::train_gplda(x)?),
        Backend::Htplda => Model::Htplda(htplda::ht_init(x, cfg.nu, d_h_for(cfg, x.dim()))?),
    })
}

fn adapt_model(cfg: &ExperimentConfig, prep: &Prepared, ood_model: Model, ind_model: Option<Model>) -> Result<Model> {
    let (Some(plan), Some(ind)) = (&cfg.adapt, &prep.ind) else {
        return Ok(ood_model);
    };
    let mut model = if prep.adapted_by_transform {
        ood_model
    } else {
        let c_o = prep.ood.total_cov(CovNorm::MaxLikelihood)?;
        let c_i = ind.total_cov(CovNorm::MaxLikelihood)?;
        match (ood_model, ind_model) {
            (Model::Gplda(o), i) => {
                let i = match i {
                    Some(Model::Gplda(m)) => Some(m),
                    _ => None,
                };
                Model::Gplda(adapt::apply_plan(plan, &o, i.as_ref(), &c_o, &c_i)?)
            }
            (Model::Htplda(o), i) => {
                let i = match i {
                    Some(Model::Htplda(m)) => Some(m),
                    _ => None,
                };
                Model::Htplda(adapt::apply_plan_ht(plan, &o, i.as_ref(), &c_o, &c_i)?)
            }
        }
    };
    if let Model::Gplda(m) = &mut model {
        m.mu = ind.mean();
    }
    Ok(model)
}

/// Score `trials` on `x` with either back-end.
pub fn score_with(model: &Model, x: &EmbeddingSet, trials: &TrialSet) -> Result<Vec<f64>> {
    if model.dim() != x.dim() {
        return Err(Error::dim(model.dim(), x.dim(), "embedding dimension for scoring"));
    }
    match model {
        Model::Gplda(m) => eval::score_trials(&m.scorer()?, x, trials),
        Model::Htplda(m) => eval::score_trials(m, x, trials),
    }
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    stage("config", cfg.validate())?;
    let config_hash = cfg.hash();

    let (ood, ind, eval_set, trials) = stage(
        "load",
        (|| {
            let ood = load_set(cfg, "ood", &cfg.paths.ood)?;
            if !ood.is_labeled() {
                return Err(Error::InvalidInput("paths.ood: training embeddings need speaker labels".into()));
            }
            let ind = cfg.paths.ind.as_ref().map(|p| load_set(cfg, "ind", p)).transpose()?;
            let eval_set = load_set(cfg, "eval", &cfg.paths.eval)?;
            let trials = io::read_trials(&cfg.resolve(&cfg.paths.trials)).map_err(|e| match e {
                Error::Io { path, source } => Error::io(format!("paths.trials ({path})"), source),
                other => Error::InvalidInput(format!("paths.trials: {other}")),
            })?;
            for (field, x) in [("ind", ind.as_ref()), ("eval", Some(&eval_set))] {
                if let Some(x) = x {
                    if x.dim() != ood.dim() {
                        return Err(Error::dim(ood.dim(), x.dim(), format!("paths.{field} embedding dimension")));
                    }
                }
            }
            Ok((ood, ind, eval_set, trials))
        })(),
    )?;

    let prep = stage("preprocess", preprocess(cfg, &ood, ind.as_ref(), &eval_set))?;
    let (ood_model, ind_model) = stage(
        "train",
        (|| {
            let o = train(cfg, &prep.ood)?;
            let i = if cfg.needs_ind_model() {
                let ind = prep.ind.as_ref().expect("validated");
                Some(train(cfg, ind).map_err(|e| Error::InvalidInput(format!("paths.ind: {e}")))?)
            } else {
                None
            };
            Ok((o, i))
        })(),
    )?;
    let model = stage("adapt", adapt_model(cfg, &prep, ood_model, ind_model))?;
    let scores = stage("score", score_with(&model, &prep.eval, &trials))?;
    let (metrics, det) = stage(
        "eval",
        (|| {
            if trials.labels.is_none() {
                return Ok((None, None));
            }
            let labeled = trials.labeled_scores(&scores)?;
            Ok((Some(eval::compute_metrics(&labeled)?), Some(eval::det_points(&labeled)?)))
        })(),
    )?;

    let mut files = Vec::new();
    if let Some(dir) = &cfg.paths.output_dir {
        stage(
            "write",
            (|| {
                let dir = cfg.resolve(dir);
                let h = Some(config_hash.as_str());
                let mut put = |name: &str, text: String| -> Result<()> {
                    let p = dir.join(name);
                    io::write_text(&p, &text)?;
                    files.push(p);
                    Ok(())
                };
                put("model.json", io::format_model(&model, h)?)?;
                put("scores.csv", io::format_scores(&trials, &scores, h)?)?;
                if let (Some(m), Some(d)) = (&metrics, &det) {
                    put("metrics.json", io::format_metrics(m, h)?)?;
                    put("det.csv", io::format_det(d, h)?)?;
                }
                put("config.json", cfg.to_json() + "\n")
            })(),
        )?;
    }

    Ok(PipelineOutput {
        config_hash,
        model,
        trials,
        scores,
        metrics,
        files,
    })
}

/// Total covariance helper shared by the CLI.
pub fn total_cov(x: &EmbeddingSet) -> Result<SymMatrix> {
    x.total_cov(CovNorm::MaxLikelihood)
}
