//! Covariance-based PLDA domain adaptation.
//!
//! Every method here is an instance of
//!
//! ```text
//! Φ⁺ = α·Φ₀ + β·gamma_max(Φ₁, Φ₂)
//! ```
//!
//! applied per covariance (between and within), or an embedding-level
//! transform `A` whose model-level form is the conjugation `Φ → A·Φ·Aᵀ`.
//!
//! | method   | Φ₀   | Φ₁        | Φ₂        |
//! |----------|------|-----------|-----------|
//! | lip      | Φ_I  | Φ_O       | Φ_O       |
//! | coral    | 0    | Φ_CORAL   | Φ_CORAL   |
//! | cip      | Φ_I  | Φ_CORAL   | Φ_CORAL   |
//! | coral+   | Φ_O  | Φ_CORAL   | Φ_O       |
//! | kaldi    | Φ_O  | C_I       | Φ_tot,O   |
//! | lip-reg  | Φ_I  | Φ_O       | Φ_I       |
//! | cip-reg  | Φ_I  | Φ_CORAL   | Φ_I       |
//! | fda      | 0    | Φ_pseudo1 | Φ_pseudo1 |
//! | kaldi*   | 0    | Φ_pseudo2 | Φ_pseudo2 |

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gplda::GPldaModel;
use crate::htplda::{self, HtPldaModel};
use crate::linalg::{self, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "generalized")]
    Generalized,
    #[serde(rename = "lip")]
    Lip,
    #[serde(rename = "cip")]
    Cip,
    #[serde(rename = "coral")]
    Coral,
    #[serde(rename = "coral+")]
    CoralPlus,
    #[serde(rename = "kaldi")]
    Kaldi,
    #[serde(rename = "kaldi*")]
    KaldiStar,
    #[serde(rename = "fda")]
    Fda,
    #[serde(rename = "lip-reg")]
    LipReg,
    #[serde(rename = "cip-reg")]
    CipReg,
    #[serde(rename = "ht-w")]
    HtW,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Generalized,
        Method::Lip,
        Method::Cip,
        Method::Coral,
        Method::CoralPlus,
        Method::Kaldi,
        Method::KaldiStar,
        Method::Fda,
        Method::LipReg,
        Method::CipReg,
        Method::HtW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Generalized => "generalized",
            Method::Lip => "lip",
            Method::Cip => "cip",
            Method::Coral => "coral",
            Method::CoralPlus => "coral+",
            Method::Kaldi => "kaldi",
            Method::KaldiStar => "kaldi*",
            Method::Fda => "fda",
            Method::LipReg => "lip-reg",
            Method::CipReg => "cip-reg",
            Method::HtW => "ht-w",
        }
    }

    /// Whether the method needs a labeled in-domain model.
    pub fn is_supervised(self) -> bool {
        matches!(self, Method::Lip | Method::Cip | Method::LipReg | Method::CipReg | Method::HtW | Method::Generalized)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidConfig(format!("unknown method `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Source of one covariance slot in the generalized form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// The all-zero matrix (only meaningful for Φ₀).
    Zero,
    /// Out-of-domain model.
    Ood,
    /// In-domain model.
    Ind,
    /// CORAL-conjugated out-of-domain model.
    Coral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptPlan {
    pub method: Method,
    pub alpha: f64,
    /// Weight of the regularized term (generalized only).
    pub beta: f64,
    pub beta_b: f64,
    pub beta_w: f64,
    pub gamma_b: f64,
    pub gamma_w: f64,
    /// Apply `gamma_max` regularization (lip/cip/ht-w; implied by lip-reg and cip-reg).
    pub regularize: bool,
    pub fda_regularize: bool,
    /// Covariance slots for the generalized form.
    pub roles: [Role; 3],
    /// CORAL-conjugate the out-of-domain HT-PLDA before interpolation.
    pub ht_conjugate_dev: bool,
}

impl Default for AdaptPlan {
    fn default() -> Self {
        Self::new(Method::Lip)
    }
}

impl AdaptPlan {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            alpha: 0.5,
            beta: 0.5,
            beta_b: 0.5,
            beta_w: 0.5,
            gamma_b: 1.0,
            gamma_w: 1.0,
            regularize: matches!(method, Method::LipReg | Method::CipReg),
            fda_regularize: true,
            roles: [Role::Ind, Role::Ood, Role::Ood],
            ht_conjugate_dev: true,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Regularization actually applied, accounting for the `-reg` variants.
    pub fn regularized(&self) -> bool {
        self.regularize || matches!(self.method, Method::LipReg | Method::CipReg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::InvalidConfig(format!("{what} = {v} is out of range for method {}", self.method));
        let weights = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("beta_b", self.beta_b),
            ("beta_w", self.beta_w),
            ("gamma_b", self.gamma_b),
            ("gamma_w", self.gamma_w),
        ];
        if let Some((name, v)) = weights.iter().find(|(_, v)| !v.is_finite()) {
            return Err(bad(name, *v));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(bad("alpha", self.alpha));
        }
        match self.method {
            Method::Generalized => {
                if self.beta < 0.0 {
                    return Err(bad("beta", self.beta));
                }
                if self.roles[1] == Role::Zero || self.roles[2] == Role::Zero {
                    return Err(Error::InvalidConfig("generalized roles Φ₁ and Φ₂ cannot be zero".into()));
                }
            }
            Method::Kaldi => {
                if self.beta_b < 0.0 {
                    return Err(bad("beta_b", self.beta_b));
                }
                if self.beta_w < 0.0 {
                    return Err(bad("beta_w", self.beta_w));
                }
                if self.beta_b + self.beta_w > 1.0 + 1e-12 {
                    return Err(Error::InvalidConfig(format!(
                        "kaldi requires beta_b + beta_w <= 1, got {} + {} = {}",
                        self.beta_b,
                        self.beta_w,
                        self.beta_b + self.beta_w
                    )));
                }
            }
            Method::CoralPlus => {
                if self.gamma_b < 0.0 {
                    return Err(bad("gamma_b", self.gamma_b));
                }
                if self.gamma_w < 0.0 {
                    return Err(bad("gamma_w", self.gamma_w));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn check_model_dims(a: &GPldaModel, b: &GPldaModel) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(a.dim(), b.dim(), "model dimension"));
    }
    Ok(())
}

/// `α·Φ₀ + β·gamma_max(Φ₁, Φ₂)`.
pub fn generalized_adapt(phi0: &SymMatrix, phi1: &SymMatrix, phi2: &SymMatrix, alpha: f64, beta: f64) -> Result<SymMatrix> {
    phi1.check_dim(phi0.dim(), "Φ₁")?;
    phi2.check_dim(phi0.dim(), "Φ₂")?;
    let reg = linalg::gamma_max(phi1, phi2)?;
    Ok(&phi0.scaled(alpha) + &reg.scaled(beta))
}

/// Linear interpolation of two G-PLDA models, optionally regularized against
/// the base: `α·Φ_base + (1−α)·[Φ_dev | gamma_max(Φ_dev, Φ_base)]` for each of
/// the between and within covariances. The mean comes from the base.
///
/// With `dev` the OOD model this is LIP / LIP-reg; with `dev` the CORAL
/// pseudo-in-domain model it is CIP / CIP-reg.
pub fn lip(base: &GPldaModel, dev: &GPldaModel, alpha: f64, regularize: bool) -> Result<GPldaModel> {
    check_model_dims(base, dev)?;
    let mix = |b: &SymMatrix, d: &SymMatrix| -> Result<SymMatrix> {
        let other = if regularize { linalg::gamma_max(d, b)? } else { d.clone() };
        Ok(&b.scaled(alpha) + &other.scaled(1.0 - alpha))
    };
    Ok(GPldaModel {
        mu: base.mu.clone(),
        phi_b: mix(&base.phi_b, &dev.phi_b)?,
        phi_w: mix(&base.phi_w, &dev.phi_w)?,
    })
}

/// CORAL transform `A = C_I^{1/2}·C_O^{-1/2}` (ZCA whitening then ZCA
/// re-coloring), so that `A·C_O·Aᵀ = C_I`.
pub fn coral_transform(c_o: &SymMatrix, c_i: &SymMatrix) -> Result<DMatrix<f64>> {
    c_i.check_dim(c_o.dim(), "in-domain covariance")?;
    let whiten = linalg::spd_inv_sqrt(c_o)?;
    let recolor = linalg::spd_sqrt(c_i)?;
    if c_i.min_eigenvalue() <= linalg::DEFAULT_EIG_FLOOR * c_i.eigenvalues()[0] {
        return Err(Error::Singular("in-domain covariance is not positive definite".into()));
    }
    Ok(recolor.as_matrix() * whiten.as_matrix())
}

/// Pseudo-in-domain model: both covariances (and the mean) conjugated by the
/// CORAL transform.
pub fn coral_model(model_o: &GPldaModel, c_o: &SymMatrix, c_i: &SymMatrix) -> Result<GPldaModel> {
    c_o.check_dim(model_o.dim(), "out-of-domain covariance")?;
    let a = coral_transform(c_o, c_i)?;
    Ok(model_o.conjugate(&a))
}

/// CORAL+: each OOD covariance grows by `γ` times its variance deficit with
/// respect to the CORAL pseudo-in-domain covariance, with the OOD model's own
/// total covariance as `C_O`.
pub fn coral_plus(model_o: &GPldaModel, c_i: &SymMatrix, gamma_b: f64, gamma_w: f64) -> Result<GPldaModel> {
    c_i.check_dim(model_o.dim(), "in-domain covariance")?;
    let a = coral_transform(&model_o.total(), c_i)?;
    let step = |phi: &SymMatrix, gamma: f64| -> Result<SymMatrix> {
        if gamma == 0.0 {
            return Ok(phi.clone());
        }
        let pseudo = phi.conjugate(&a);
        let sd = linalg::sim_diag(phi, &pseudo)?;
        Ok(phi + &sd.excess().scaled(gamma))
    };
    Ok(GPldaModel {
        mu: model_o.mu.clone(),
        phi_b: step(&model_o.phi_b, gamma_b)?,
        phi_w: step(&model_o.phi_w, gamma_w)?,
    })
}

/// Kaldi-style adaptation: the excess of `C_I` over the OOD total covariance,
/// found by simultaneous diagonalization, is split between the within and
/// between covariances with weights `β_W` and `β_B`.
pub fn kaldi_adapt(model_o: &GPldaModel, c_i: &SymMatrix, beta_b: f64, beta_w: f64) -> Result<GPldaModel> {
    let mut plan = AdaptPlan::new(Method::Kaldi);
    plan.beta_b = beta_b;
    plan.beta_w = beta_w;
    plan.validate()?;
    c_i.check_dim(model_o.dim(), "in-domain covariance")?;
    let sd = linalg::sim_diag(&model_o.total(), c_i)?;
    let excess = sd.excess();
    Ok(GPldaModel {
        mu: model_o.mu.clone(),
        phi_b: &model_o.phi_b + &excess.scaled(beta_b),
        phi_w: &model_o.phi_w + &excess.scaled(beta_w),
    })
}

/// `C^{1/2}·P·Δ̂^{1/2}·Pᵀ·C^{-1/2}` with `P·Δ·Pᵀ = C^{-1/2}·C_I·C^{-1/2}` and
/// `Δ̂ = max(Δ, I)` when regularized.
fn whitened_alignment(c_o: &SymMatrix, c_i: &SymMatrix, regularize: bool) -> Result<DMatrix<f64>> {
    c_i.check_dim(c_o.dim(), "in-domain covariance")?;
    let root = linalg::spd_sqrt(c_o)?;
    let inv_root = linalg::spd_inv_sqrt(c_o)?;
    let inner = c_i.conjugate(inv_root.as_matrix());
    let eig = linalg::evd_sym(&inner);
    if eig.values.iter().any(|&v| v < -1e-8 * eig.values.amax()) {
        return Err(Error::InvalidInput("in-domain covariance is not PSD".into()));
    }
    let mid = eig.reconstruct_with(|d| if regularize { d.max(1.0).sqrt() } else { d.max(0.0).sqrt() });
    Ok(root.as_matrix() * mid.as_matrix() * inv_root.as_matrix())
}

/// FDA embedding transform; the unregularized form achieves exact alignment,
/// the regularized form only ever inflates variance.
pub fn fda_transform(c_o: &SymMatrix, c_i: &SymMatrix, regularize: bool) -> Result<DMatrix<f64>> {
    whitened_alignment(c_o, c_i, regularize)
}

/// FDA with the OOD model's total covariance in place of the empirical `C_O`.
/// `P·Δ̂·Pᵀ` is taken from `gamma_max(Φ_tot^{-1/2}·C_I·Φ_tot^{-1/2}, I)`.
pub fn kaldi_star_transform(model_o: &GPldaModel, c_i: &SymMatrix) -> Result<DMatrix<f64>> {
    c_i.check_dim(model_o.dim(), "in-domain covariance")?;
    let total = model_o.total();
    let root = linalg::spd_sqrt(&total)?;
    let inv_root = linalg::spd_inv_sqrt(&total)?;
    let whitened = c_i.conjugate(inv_root.as_matrix());
    let reg = linalg::gamma_max(&whitened, &SymMatrix::identity(total.dim()))?;
    let mid = linalg::spd_sqrt(&reg)?;
    Ok(root.as_matrix() * mid.as_matrix() * inv_root.as_matrix())
}

/// Model-level Kaldi*: the OOD model conjugated by `kaldi_star_transform`.
pub fn kaldi_star_model(model_o: &GPldaModel, c_i: &SymMatrix) -> Result<GPldaModel> {
    let a = kaldi_star_transform(model_o, c_i)?;
    Ok(model_o.conjugate(&a))
}

/// Model-level FDA: the OOD model conjugated by `fda_transform`.
pub fn fda_model(model_o: &GPldaModel, c_o: &SymMatrix, c_i: &SymMatrix, regularize: bool) -> Result<GPldaModel> {
    c_o.check_dim(model_o.dim(), "out-of-domain covariance")?;
    let a = fda_transform(c_o, c_i, regularize)?;
    Ok(model_o.conjugate(&a))
}

/// Adapt an HT-PLDA within-speaker covariance `W^{-1}`:
/// `α·W⁻¹_base + (1−α)·[dev | gamma_max(dev, reference)]`. `ν` and `F` are
/// carried over.
pub fn ht_adapt_w(
    model_o: &HtPldaModel,
    dev_winv: &SymMatrix,
    alpha: f64,
    regularize: bool,
    reference_winv: &SymMatrix,
) -> Result<HtPldaModel> {
    let d = model_o.dim();
    dev_winv.check_dim(d, "developer W⁻¹")?;
    reference_winv.check_dim(d, "reference W⁻¹")?;
    let base = model_o.w_inv()?;
    let other = if regularize {
        linalg::gamma_max(dev_winv, reference_winv)?
    } else {
        dev_winv.clone()
    };
    let adapted = &base.scaled(alpha) + &other.scaled(1.0 - alpha);
    let w = adapted
        .inverse_spd()
        .map_err(|_| Error::Singular("adapted W⁻¹ is not positive definite".into()))?;
    htplda::ht_precompute(model_o.nu(), model_o.f().clone(), w)
}

/// Interpolate the between-speaker covariances `F·Fᵀ` of two HT-PLDA models
/// and refactor the result to rank `d_h`. `ν` and `W` come from the base.
pub fn ht_lip_f(base: &HtPldaModel, dev: &HtPldaModel, alpha: f64) -> Result<HtPldaModel> {
    if base.dim() != dev.dim() {
        return Err(Error::dim(base.dim(), dev.dim(), "HT-PLDA dimension"));
    }
    if base.d_h() != dev.d_h() {
        return Err(Error::dim(base.d_h(), dev.d_h(), "HT-PLDA speaker dimension"));
    }
    let mixed = &base.phi_b().scaled(alpha) + &dev.phi_b().scaled(1.0 - alpha);
    let f = htplda::loading_from_cov(&mixed, base.d_h());
    htplda::ht_precompute(base.nu(), f, base.w().clone())
}

/// HT-PLDA model of `a·φ`: `F → a·F`, `W⁻¹ → a·W⁻¹·aᵀ`.
pub fn ht_conjugate(model: &HtPldaModel, a: &DMatrix<f64>) -> Result<HtPldaModel> {
    let winv = model.w_inv()?.conjugate(a);
    let w = winv
        .inverse_spd()
        .map_err(|_| Error::Singular("conjugating transform is singular".into()))?;
    htplda::ht_precompute(model.nu(), a * model.f(), w)
}

/// Embedding-level transform of the methods that have one (coral, fda,
/// kaldi*); `None` for the others.
pub fn plan_transform(plan: &AdaptPlan, model_o: &GPldaModel, c_o: &SymMatrix, c_i: &SymMatrix) -> Result<Option<DMatrix<f64>>> {
    match plan.method {
        Method::Coral => coral_transform(c_o, c_i).map(Some),
        Method::Fda => fda_transform(c_o, c_i, plan.fda_regularize).map(Some),
        Method::KaldiStar => kaldi_star_transform(model_o, c_i).map(Some),
        _ => Ok(None),
    }
}

/// Model-level G-PLDA adaptation for any method except `ht-w`.
///
/// `c_o` and `c_i` are the empirical total covariances of the OOD and
/// in-domain data. Supervised methods (lip, cip, their `-reg` forms and
/// `generalized` with an `ind` role) need `model_i`.
pub fn apply_plan(
    plan: &AdaptPlan,
    model_o: &GPldaModel,
    model_i: Option<&GPldaModel>,
    c_o: &SymMatrix,
    c_i: &SymMatrix,
) -> Result<GPldaModel> {
    plan.validate()?;
    let need_ind = || {
        model_i.ok_or_else(|| Error::InvalidConfig(format!("method {} needs a labeled in-domain model", plan.method)))
    };
    let reg = plan.regularized();
    match plan.method {
        Method::Lip | Method::LipReg => lip(need_ind()?, model_o, plan.alpha, reg),
        Method::Cip | Method::CipReg => lip(need_ind()?, &coral_model(model_o, c_o, c_i)?, plan.alpha, reg),
        Method::Coral => coral_model(model_o, c_o, c_i),
        Method::CoralPlus => coral_plus(model_o, c_i, plan.gamma_b, plan.gamma_w),
        Method::Kaldi => kaldi_adapt(model_o, c_i, plan.beta_b, plan.beta_w),
        Method::Fda => fda_model(model_o, c_o, c_i, plan.fda_regularize),
        Method::KaldiStar => kaldi_star_model(model_o, c_i),
        Method::Generalized => {
            let coral = if plan.roles.contains(&Role::Coral) {
                Some(coral_model(model_o, c_o, c_i)?)
            } else {
                None
            };
            let pick = |role: Role| -> Result<Option<&GPldaModel>> {
                Ok(match role {
                    Role::Zero => None,
                    Role::Ood => Some(model_o),
                    Role::Ind => Some(need_ind()?),
                    Role::Coral => coral.as_ref(),
                })
            };
            let [r0, r1, r2] = plan.roles;
            let (m0, m1, m2) = (pick(r0)?, pick(r1)?.expect("validated"), pick(r2)?.expect("validated"));
            let d = model_o.dim();
            let mix = |f: fn(&GPldaModel) -> &SymMatrix| -> Result<SymMatrix> {
                let zero = SymMatrix::zeros(d);
                let phi0 = m0.map_or(&zero, f);
                generalized_adapt(phi0, f(m1), f(m2), plan.alpha, plan.beta)
            };
            Ok(GPldaModel {
                mu: m0.unwrap_or(m1).mu.clone(),
                phi_b: mix(|m| &m.phi_b)?,
                phi_w: mix(|m| &m.phi_w)?,
            })
        }
        Method::HtW => Err(Error::InvalidConfig("ht-w applies to the htplda back-end only".into())),
    }
}

/// HT-PLDA adaptation: `ht-w` (needs the in-domain model as base) or one of
/// the embedding-transform methods applied by conjugation.
pub fn apply_plan_ht(
    plan: &AdaptPlan,
    model_o: &HtPldaModel,
    model_i: Option<&HtPldaModel>,
    c_o: &SymMatrix,
    c_i: &SymMatrix,
) -> Result<HtPldaModel> {
    plan.validate()?;
    let total = || -> Result<GPldaModel> {
        GPldaModel::new(nalgebra::DVector::zeros(model_o.dim()), model_o.phi_b(), model_o.w_inv()?)
    };
    match plan.method {
        Method::HtW => {
            let base = model_i.ok_or_else(|| Error::InvalidConfig("ht-w needs a labeled in-domain model".into()))?;
            let dev = if plan.ht_conjugate_dev {
                ht_conjugate(model_o, &coral_transform(c_o, c_i)?)?
            } else {
                model_o.clone()
            };
            let mixed = ht_lip_f(base, &dev, plan.alpha)?;
            let base_winv = base.w_inv()?;
            ht_adapt_w(&mixed, &dev.w_inv()?, plan.alpha, plan.regularize, &base_winv)
        }
        Method::Coral => ht_conjugate(model_o, &coral_transform(c_o, c_i)?),
        Method::Fda => ht_conjugate(model_o, &fda_transform(c_o, c_i, plan.fda_regularize)?),
        Method::KaldiStar => ht_conjugate(model_o, &kaldi_star_transform(&total()?, c_i)?),
        m => Err(Error::InvalidConfig(format!("method {m} applies to the gplda back-end only"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn diag(d: &[f64]) -> SymMatrix {
        SymMatrix::from_diagonal(d)
    }

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        let d = (a - b).amax();
        assert!(d <= tol, "diff {d:e}\n{a}\n{b}");
    }

    fn model(b: &[f64], w: &[f64]) -> GPldaModel {
        GPldaModel::new(DVector::zeros(b.len()), diag(b), diag(w)).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("coral++".parse::<Method>().is_err());
    }

    #[test]
    fn generalized_hand_cases() {
        let i = SymMatrix::identity(2);
        let dev = diag(&[4.0, 0.25]);
        let out = generalized_adapt(&i, &dev, &i, 0.5, 0.5).unwrap();
        close(out.as_matrix(), diag(&[2.5, 1.0]).as_matrix(), 1e-14);

        let p0 = diag(&[3.0, 2.0]);
        close(generalized_adapt(&p0, &dev, &i, 1.0, 0.0).unwrap().as_matrix(), p0.as_matrix(), 0.0);
        let same = generalized_adapt(&p0, &dev, &dev, 0.3, 0.7).unwrap();
        close(same.as_matrix(), (&p0.scaled(0.3) + &dev.scaled(0.7)).as_matrix(), 1e-12);
    }

    #[test]
    fn lip_endpoints_and_collapse() {
        let base = model(&[2.0, 1.0], &[1.0, 1.0]);
        let dev = model(&[1.0, 3.0], &[0.5, 2.0]);
        assert_eq!(lip(&base, &dev, 1.0, false).unwrap(), base);
        let at0 = lip(&base, &dev, 0.0, false).unwrap();
        assert_eq!(at0.phi_b, dev.phi_b);
        assert_eq!(at0.phi_w, dev.phi_w);

        let smaller = model(&[1.0, 0.5], &[0.5, 0.9]);
        for a in [0.0, 0.3, 0.8] {
            let out = lip(&base, &smaller, a, true).unwrap();
            close(out.phi_b.as_matrix(), base.phi_b.as_matrix(), 1e-14);
            close(out.phi_w.as_matrix(), base.phi_w.as_matrix(), 1e-14);
        }
    }

    #[test]
    fn coral_cases() {
        let c = diag(&[2.0, 3.0]);
        close(&coral_transform(&c, &c).unwrap(), &DMatrix::identity(2, 2), 1e-14);
        let a = coral_transform(&diag(&[4.0, 1.0]), &diag(&[1.0, 4.0])).unwrap();
        close(&a, diag(&[0.5, 2.0]).as_matrix(), 1e-14);

        let m = model(&[2.0, 0.5], &[2.0, 0.5]);
        let pseudo = coral_model(&m, &diag(&[4.0, 1.0]), &diag(&[1.0, 4.0])).unwrap();
        close(pseudo.phi_b.as_matrix(), diag(&[0.5, 2.0]).as_matrix(), 1e-14);
        close(pseudo.phi_w.as_matrix(), diag(&[0.5, 2.0]).as_matrix(), 1e-14);
        assert!(coral_transform(&diag(&[1.0, 0.0]), &c).is_err());
    }

    #[test]
    fn coral_plus_cases() {
        let m = model(&[0.5, 0.5], &[0.5, 0.5]);
        let ci = diag(&[4.0, 1.0]);
        assert_eq!(coral_plus(&m, &ci, 0.0, 0.0).unwrap(), m);
        let out = coral_plus(&m, &ci, 1.0, 1.0).unwrap();
        close(out.phi_b.as_matrix(), diag(&[2.0, 0.5]).as_matrix(), 1e-12);
        close(out.phi_w.as_matrix(), diag(&[2.0, 0.5]).as_matrix(), 1e-12);

        let aligned = coral_plus(&m, &m.total(), 0.7, 0.4).unwrap();
        close(aligned.phi_b.as_matrix(), m.phi_b.as_matrix(), 1e-12);
    }

    #[test]
    fn kaldi_cases() {
        let m = model(&[0.5, 0.5], &[0.5, 0.5]);
        let out = kaldi_adapt(&m, &diag(&[4.0, 1.0]), 0.5, 0.5).unwrap();
        close(out.phi_b.as_matrix(), diag(&[2.0, 0.5]).as_matrix(), 1e-12);
        close(out.phi_w.as_matrix(), diag(&[2.0, 0.5]).as_matrix(), 1e-12);

        let same = kaldi_adapt(&m, &diag(&[0.9, 0.3]), 0.5, 0.5).unwrap();
        assert_eq!(same, m);

        assert!(matches!(kaldi_adapt(&m, &diag(&[4.0, 1.0]), 0.9, 0.2), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn fda_cases() {
        let a = fda_transform(&diag(&[4.0, 1.0]), &diag(&[1.0, 4.0]), true).unwrap();
        close(&a, diag(&[1.0, 2.0]).as_matrix(), 1e-14);
        let a = fda_transform(&diag(&[4.0, 1.0]), &diag(&[1.0, 4.0]), false).unwrap();
        close(&a, diag(&[0.5, 2.0]).as_matrix(), 1e-14);

        let co = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let smaller = co.scaled(0.5);
        close(&fda_transform(&co, &smaller, true).unwrap(), &DMatrix::identity(2, 2), 1e-14);

        let ci = SymMatrix::from_rows(&[vec![3.0, -0.4], vec![-0.4, 0.7]]).unwrap();
        let a = fda_transform(&SymMatrix::identity(2), &ci, false).unwrap();
        close(&a, linalg::spd_sqrt(&ci).unwrap().as_matrix(), 1e-14);
    }

    #[test]
    fn kaldi_star_matches_fda_on_model_total() {
        let m = GPldaModel::new(
            DVector::zeros(2),
            SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 0.5]]).unwrap(),
            SymMatrix::from_rows(&[vec![1.0, -0.1], vec![-0.1, 0.8]]).unwrap(),
        )
        .unwrap();
        let ci = SymMatrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 4.0]]).unwrap();
        let ks = kaldi_star_transform(&m, &ci).unwrap();
        let fda = fda_transform(&m.total(), &ci, true).unwrap();
        close(&ks, &fda, 1e-10);

        let diag_m = model(&[2.0, 0.5], &[2.0, 0.5]);
        close(&kaldi_star_transform(&diag_m, &diag(&[1.0, 4.0])).unwrap(), diag(&[1.0, 2.0]).as_matrix(), 1e-14);
        close(&kaldi_star_transform(&m, &m.total()).unwrap(), &DMatrix::identity(2, 2), 1e-12);
    }

    fn ht_model() -> HtPldaModel {
        htplda::ht_precompute(2.0, DMatrix::from_column_slice(2, 1, &[1.0, 0.5]), SymMatrix::identity(2)).unwrap()
    }

    #[test]
    fn ht_w_cases() {
        let m = ht_model();
        let i = SymMatrix::identity(2);
        let dev = diag(&[4.0, 0.25]);
        let same = ht_adapt_w(&m, &dev, 1.0, true, &i).unwrap();
        close(same.w().as_matrix(), m.w().as_matrix(), 1e-14);
        let fixed = ht_adapt_w(&m, &i, 0.3, true, &i).unwrap();
        close(fixed.w().as_matrix(), m.w().as_matrix(), 1e-14);

        let out = ht_adapt_w(&m, &dev, 0.5, true, &i).unwrap();
        close(out.w_inv().unwrap().as_matrix(), diag(&[2.5, 1.0]).as_matrix(), 1e-13);
        assert_eq!(out.f(), m.f());
        assert_eq!(out.nu(), m.nu());
    }

    #[test]
    fn ht_lip_f_cases() {
        let m = ht_model();
        let other = htplda::ht_precompute(2.0, DMatrix::from_column_slice(2, 1, &[-0.2, 1.0]), SymMatrix::identity(2)).unwrap();
        let out = ht_lip_f(&m, &other, 1.0).unwrap();
        close(out.phi_b().as_matrix(), m.phi_b().as_matrix(), 1e-14);
        let same = ht_lip_f(&m, &m, 0.4).unwrap();
        close(same.phi_b().as_matrix(), m.phi_b().as_matrix(), 1e-14);
        let mixed = ht_lip_f(&m, &other, 0.5).unwrap();
        assert_eq!(mixed.d_h(), 1);
    }

    #[test]
    fn plan_validation() {
        let mut p = AdaptPlan::new(Method::Kaldi);
        p.beta_b = 0.9;
        p.beta_w = 0.2;
        assert!(p.validate().is_err());
        let p = AdaptPlan::new(Method::Lip).with_alpha(1.5);
        assert!(p.validate().is_err());
        assert!(AdaptPlan::new(Method::CoralPlus).validate().is_ok());
        assert!(AdaptPlan::new(Method::LipReg).regularized());
    }
}
