//! The seeded "bench-small" domain-shift scenario and the heavy-tail
//! scenario, with helpers that run every adaptation method on them.
//!
//! bench-small: in-domain data follow a G-PLDA model whose covariances are
//! drawn from the seed. The OOD training set comes from the same model pushed
//! through `φ → R·diag(s)·φ + o` with `R` a random rotation, scales `s`
//! log-uniform in `[0.5, 2]` and `|o| = 2`. The in-domain adaptation set and
//! the evaluation set are unshifted and use disjoint speakers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adapt::{self, AdaptPlan, Method};
use crate::dataset::{self, EmbeddingSet};
use crate::error::Result;
use crate::eval::{self, Metrics, SweepRow, TrialSet};
use crate::gplda::{self, GPldaModel};
use crate::htplda::{self, HtPldaModel};
use crate::linalg::{CovNorm, SymMatrix};
use crate::synth::{self, DomainSpec, GenModel, SeededStream, Shift};

pub const SWEEP_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub dim: usize,
    pub ood_speakers: usize,
    pub ood_utts: usize,
    pub ind_speakers: usize,
    pub ind_utts: usize,
    pub eval_speakers: usize,
    pub eval_utts: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// Range of the between-speaker eigenvalues (log-uniform).
    pub between_range: (f64, f64),
    /// Range of the within-speaker eigenvalues (log-uniform).
    pub within_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub offset_norm: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_521,
            dim: 32,
            ood_speakers: 200,
            ood_utts: 10,
            ind_speakers: 100,
            ind_utts: 6,
            eval_speakers: 300,
            eval_utts: 6,
            n_target: 3000,
            n_nontarget: 30_000,
            between_range: (1.0, 1.5),
            within_range: (1.0, 1.5),
            scale_range: (0.5, 2.0),
            offset_norm: 2.0,
        }
    }
}

fn log_uniform(stream: &mut SeededStream, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + stream.uniform() * (hi.ln() - lo.ln())).exp()
}

/// `R·diag(λ)·Rᵀ` with a random rotation and log-uniform spectrum.
pub fn random_covariance(dim: usize, range: (f64, f64), stream: &mut SeededStream) -> SymMatrix {
    let r = synth::random_rotation(dim, stream);
    let d: Vec<f64> = (0..dim).map(|_| log_uniform(stream, range)).collect();
    SymMatrix::from_diagonal(&d).conjugate(&r)
}

/// Generated sets plus the ground truth behind them.
#[derive(Debug, Clone)]
pub struct BenchData {
    pub phi_b: SymMatrix,
    pub phi_w: SymMatrix,
    pub shift_a: DMatrix<f64>,
    pub shift_offset: DVector<f64>,
    pub ood: EmbeddingSet,
    pub ind: EmbeddingSet,
    pub eval: EmbeddingSet,
    pub trials: TrialSet,
}

pub fn bench_small_data(cfg: &BenchConfig) -> Result<BenchData> {
    let mut master = SeededStream::new(cfg.seed);
    let phi_b = random_covariance(cfg.dim, cfg.between_range, &mut master);
    let phi_w = random_covariance(cfg.dim, cfg.within_range, &mut master);
    let rot = synth::random_rotation(cfg.dim, &mut master);
    let scales: Vec<f64> = (0..cfg.dim).map(|_| log_uniform(&mut master, cfg.scale_range)).collect();
    let shift_a = rot * DMatrix::from_diagonal(&DVector::from_vec(scales));
    let dir = master.normal_vector(cfg.dim);
    let shift_offset = dir.normalize() * cfg.offset_norm;
    let seeds: Vec<u64> = (0..4).map(|_| master.next_u64()).collect();

    let model = GenModel::Gplda {
        phi_b: phi_b.to_rows(),
        phi_w: phi_w.to_rows(),
    };
    let spec = |n_speakers, utts, shift: Option<Shift>, seed, prefix: &str| DomainSpec {
        dim: cfg.dim,
        n_speakers,
        utts_per_speaker: utts,
        model: model.clone(),
        shift,
        seed,
        id_prefix: prefix.to_string(),
    };
    let shift = Shift {
        a: synth::matrix_to_rows(&shift_a),
        offset: shift_offset.iter().copied().collect(),
    };
    let ood = synth::gen_gplda(&spec(cfg.ood_speakers, cfg.ood_utts, Some(shift), seeds[0], "ood-"))?;
    let ind = synth::gen_gplda(&spec(cfg.ind_speakers, cfg.ind_utts, None, seeds[1], "ind-"))?;
    let eval_set = synth::gen_gplda(&spec(cfg.eval_speakers, cfg.eval_utts, None, seeds[2], "eval-"))?;
    let trials = synth::make_trials(&eval_set, cfg.n_target, cfg.n_nontarget, seeds[3])?;
    Ok(BenchData {
        phi_b,
        phi_w,
        shift_a,
        shift_offset,
        ood,
        ind,
        eval: eval_set,
        trials,
    })
}

/// Centered sets, covariances and the two single-domain models.
#[derive(Debug, Clone)]
pub struct BenchPrepared {
    pub ood: EmbeddingSet,
    pub ind: EmbeddingSet,
    pub eval: EmbeddingSet,
    pub trials: TrialSet,
    pub pairs: Vec<(usize, usize)>,
    pub c_o: SymMatrix,
    pub c_i: SymMatrix,
    pub model_o: GPldaModel,
    pub model_i: GPldaModel,
}

pub fn prepare(data: &BenchData) -> Result<BenchPrepared> {
    let ood = dataset::center(&data.ood, &data.ood.mean())?;
    let ind_mean = data.ind.mean();
    let ind = dataset::center(&data.ind, &ind_mean)?;
    let eval_set = dataset::center(&data.eval, &ind_mean)?;
    let pairs = data.trials.resolve(&eval_set)?;
    Ok(BenchPrepared {
        c_o: ood.total_cov(CovNorm::MaxLikelihood)?,
        c_i: ind.total_cov(CovNorm::MaxLikelihood)?,
        model_o: gplda::train_gplda(&ood)?,
        model_i: gplda::train_gplda(&ind)?,
        ood,
        ind,
        eval: eval_set,
        trials: data.trials.clone(),
        pairs,
    })
}

impl BenchPrepared {
    pub fn evaluate(&self, model: &GPldaModel) -> Result<Metrics> {
        let scores = model.scorer()?.score_pairs(&self.eval, &self.pairs)?;
        eval::compute_metrics(&self.trials.labeled_scores(&scores)?)
    }

    pub fn adapted(&self, plan: &AdaptPlan) -> Result<GPldaModel> {
        adapt::apply_plan(plan, &self.model_o, Some(&self.model_i), &self.c_o, &self.c_i)
    }

    pub fn sweep(&self, use_coral: bool, regularize: bool) -> Result<Vec<SweepRow>> {
        let dev = if use_coral {
            adapt::coral_model(&self.model_o, &self.c_o, &self.c_i)?
        } else {
            self.model_o.clone()
        };
        eval::weight_sweep(&self.model_i, &dev, &self.eval, &self.trials, &SWEEP_GRID, regularize)
    }
}

/// Methods compared against the unadapted OOD model.
pub const BENCH_METHODS: [Method; 9] = [
    Method::Coral,
    Method::Fda,
    Method::CoralPlus,
    Method::Kaldi,
    Method::KaldiStar,
    Method::Lip,
    Method::Cip,
    Method::LipReg,
    Method::CipReg,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub ood: Metrics,
    pub ind: Metrics,
    pub methods: Vec<MethodResult>,
    pub sweeps: Vec<SweepResult>,
}

impl BenchReport {
    pub fn method(&self, m: Method) -> Option<&Metrics> {
        self.methods.iter().find(|r| r.method == m).map(|r| &r.metrics)
    }

    pub fn sweep(&self, name: &str) -> Option<&[SweepRow]> {
        self.sweeps.iter().find(|s| s.name == name).map(|s| s.rows.as_slice())
    }
}

/// Every method at its default weights plus the four weight sweeps.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let prep = prepare(&bench_small_data(cfg)?)?;
    let methods = BENCH_METHODS
        .iter()
        .map(|&method| {
            let model = prep.adapted(&AdaptPlan::new(method))?;
            Ok(MethodResult {
                method,
                metrics: prep.evaluate(&model)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sweeps = Vec::new();
    for (name, coral, reg) in [("lip", false, false), ("lip-reg", false, true), ("cip", true, false), ("cip-reg", true, true)] {
        sweeps.push(SweepResult {
            name: name.to_string(),
            rows: prep.sweep(coral, reg)?,
        });
    }
    Ok(BenchReport {
        config: cfg.clone(),
        ood: prep.evaluate(&prep.model_o)?,
        ind: prep.evaluate(&prep.model_i)?,
        methods,
        sweeps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeavyTailConfig {
    pub seed: u64,
    pub dim: usize,
    pub d_h: usize,
    pub nu: f64,
    pub train_speakers: usize,
    pub train_utts: usize,
    pub eval_speakers: usize,
    pub eval_utts: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// Range of the loading column norms (log-uniform).
    pub loading_range: (f64, f64),
}

impl Default for HeavyTailConfig {
    fn default() -> Self {
        Self {
            seed: 7_031_977,
            dim: 32,
            d_h: 16,
            nu: 3.0,
            train_speakers: 300,
            train_utts: 10,
            eval_speakers: 300,
            eval_utts: 6,
            n_target: 3000,
            n_nontarget: 30_000,
            loading_range: (1.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailReport {
    pub config: HeavyTailConfig,
    pub gplda: Metrics,
    pub htplda: Metrics,
}

/// Train both back-ends on heavy-tailed data and score one shared trial list.
pub fn run_heavy_tail(cfg: &HeavyTailConfig) -> Result<HeavyTailReport> {
    let mut master = SeededStream::new(cfg.seed);
    let loading = synth::random_rotation(cfg.dim, &mut master).columns(0, cfg.d_h).into_owned();
    let spread: Vec<f64> = (0..cfg.d_h).map(|_| log_uniform(&mut master, cfg.loading_range)).collect();
    let f = loading * DMatrix::from_diagonal(&DVector::from_vec(spread));
    let w = random_covariance(cfg.dim, (0.5, 2.0), &mut master);
    let seeds: Vec<u64> = (0..3).map(|_| master.next_u64()).collect();
    let model = GenModel::Htplda {
        nu: cfg.nu,
        f: synth::matrix_to_rows(&f),
        w: w.to_rows(),
    };
    let spec = |n_speakers, utts, seed, prefix: &str| DomainSpec {
        dim: cfg.dim,
        n_speakers,
        utts_per_speaker: utts,
        model: model.clone(),
        shift: None,
        seed,
        id_prefix: prefix.to_string(),
    };
    let train = synth::gen_htplda(&spec(cfg.train_speakers, cfg.train_utts, seeds[0], "tr-"))?;
    let eval_set = synth::gen_htplda(&spec(cfg.eval_speakers, cfg.eval_utts, seeds[1], "ev-"))?;
    let trials = synth::make_trials(&eval_set, cfg.n_target, cfg.n_nontarget, seeds[2])?;

    let mean = train.mean();
    let train = dataset::center(&train, &mean)?;
    let eval_set = dataset::center(&eval_set, &mean)?;
    let pairs = trials.resolve(&eval_set)?;
    let g = gplda::train_gplda(&train)?;
    let h: HtPldaModel = htplda::ht_init(&train, cfg.nu, cfg.d_h)?;
    let g_scores = g.scorer()?.score_pairs(&eval_set, &pairs)?;
    let h_scores = h.score_pairs(&eval_set, &pairs)?;
    Ok(HeavyTailReport {
        config: cfg.clone(),
        gplda: eval::compute_metrics(&trials.labeled_scores(&g_scores)?)?,
        htplda: eval::compute_metrics(&trials.labeled_scores(&h_scores)?)?,
    })
}

/// Outcome of one direction check on the benchmark reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn beats(a: &Metrics, b: &Metrics) -> bool {
    a.eer < b.eer && a.minc_primary < b.minc_primary
}

fn pair(m: &Metrics) -> String {
    format!("{:.4}/{:.4}", m.eer, m.minc_primary)
}

fn sweep_summary(rows: &[SweepRow]) -> (f64, f64) {
    let v: Vec<f64> = rows.iter().map(|r| r.minc_primary).collect();
    (eval::std_dev(&v), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Expected orderings: transform methods beat the OOD model, interpolation
/// beats both of its inputs, regularized sweeps are flatter, HT-PLDA wins on
/// heavy-tailed data. Metrics are shown as `EER/minC_primary`.
pub fn direction_checks(report: &BenchReport, ht: &HeavyTailReport) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: String, pass: bool, detail: String| out.push(Check { name, pass, detail });
    for m in [Method::Coral, Method::Fda, Method::CoralPlus, Method::Kaldi, Method::KaldiStar] {
        match report.method(m) {
            Some(x) => push(format!("{m} < ood"), beats(x, &report.ood), format!("{} vs {}", pair(x), pair(&report.ood))),
            None => push(format!("{m} < ood"), false, "not run".into()),
        }
    }
    let coral = report.method(Method::Coral);
    for (m, other) in [(Method::Lip, Some(&report.ood)), (Method::Cip, coral)] {
        match (report.method(m), other) {
            (Some(x), Some(o)) => push(
                format!("{m} < ind, dev"),
                beats(x, &report.ind) && beats(x, o),
                format!("{} vs {}, {}", pair(x), pair(&report.ind), pair(o)),
            ),
            _ => push(format!("{m} < ind, dev"), false, "not run".into()),
        }
    }
    for (plain, reg) in [("lip", "lip-reg"), ("cip", "cip-reg")] {
        match (report.sweep(plain), report.sweep(reg)) {
            (Some(p), Some(r)) => {
                let ((s0, m0), (s1, m1)) = (sweep_summary(p), sweep_summary(r));
                push(
                    format!("{reg} flatter than {plain}"),
                    s1 <= s0 && m1 <= m0,
                    format!("std {s1:.4} vs {s0:.4}, max {m1:.4} vs {m0:.4}"),
                );
            }
            _ => push(format!("{reg} flatter than {plain}"), false, "not run".into()),
        }
    }
    push(
        "htplda <= gplda on heavy tails".into(),
        ht.htplda.eer <= ht.gplda.eer,
        format!("EER {:.4} vs {:.4}", ht.htplda.eer, ht.gplda.eer),
    );
    out
}
