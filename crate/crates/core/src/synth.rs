//! Seeded generative sampling from both PLDA models, domain-shift injection
//! and trial-list construction.
//!
//! # Random stream
//!
//! All randomness comes from [`SeededStream`], which is pinned so that other
//! implementations can reproduce datasets draw for draw:
//!
//! * generator: ChaCha20 (RFC 8439 block function, 20 rounds, 64-bit block
//!   counter starting at 0, stream id 0), keyed with the 64-bit seed in
//!   little-endian order followed by 24 zero bytes. Each `u64` is two
//!   consecutive 32-bit output words, low word first.
//! * uniform: `((u64 >> 11) + 0.5) · 2⁻⁵³`, always strictly inside `(0, 1)`.
//! * normal: one uniform pushed through the inverse normal CDF (Wichura's
//!   AS241 `PPND16`, about 16 significant digits).
//! * gamma: Marsaglia–Tsang squeeze/rejection; each attempt draws one normal
//!   then one uniform. Shapes below 1 draw `Gamma(shape + 1)` first and then
//!   one uniform `u`, returning `g·u^{1/shape}`.
//! * bounded integer `below(n)`: Lemire's multiply-shift with rejection.
//!
//! # Draw order
//!
//! Speakers are generated in order. For each speaker the speaker variable is
//! drawn first (`D` normals for G-PLDA, `d_h` normals for HT-PLDA), then each
//! utterance in order: for HT-PLDA one gamma draw for `λ` followed by `D`
//! normals, for G-PLDA just `D` normals.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::eval::TrialSet;
use crate::linalg::{self, SymMatrix};

/// Portable seeded random stream; see the module docs for the exact recipe.
#[derive(Debug, Clone)]
pub struct SeededStream {
    rng: ChaCha20Rng,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.normal()))
    }

    /// `Gamma(shape, rate)`, mean `shape / rate`.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0, 1.0);
            let u = self.uniform();
            return g * u.powf(1.0 / shape) / rate;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v / rate;
            }
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }
}

/// Inverse of the standard normal CDF (Wichura 1988, AS241 `PPND16`).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608_0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083_0e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061_0e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561_0e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_90,
        5.769_497_221_460_691_405_50,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_70e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_40e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_40,
        6.897_673_349_851_000_045_50e-1,
        1.481_039_764_274_800_745_90e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946_00e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_20,
        5.463_784_911_164_114_369_90,
        1.784_826_539_917_291_335_80,
        2.965_605_718_285_048_912_30e-1,
        2.653_218_952_657_612_309_30e-2,
        1.242_660_947_388_078_438_60e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_90e-1,
        1.369_298_809_227_358_053_10e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591_00e-4,
        1.846_318_317_510_054_681_80e-5,
        1.421_511_758_316_445_888_70e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Generative model of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GenModel {
    /// Speaker offset `~ N(0, Φ_B)`, utterance noise `~ N(0, Φ_W)`.
    Gplda { phi_b: Vec<Vec<f64>>, phi_w: Vec<Vec<f64>> },
    /// `h ~ N(0, I)`, `λ ~ Gamma(ν/2, ν/2)`, `φ ~ N(F·h, (λW)^{-1})`.
    Htplda { nu: f64, f: Vec<Vec<f64>>, w: Vec<Vec<f64>> },
}

/// Affine shift `φ → A·φ + offset` applied after sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub a: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

/// Everything needed to reproduce a synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub model: GenModel,
    #[serde(default)]
    pub shift: Option<Shift>,
    pub seed: u64,
    /// Prefix for speaker and utterance ids.
    #[serde(default)]
    pub id_prefix: String,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!("{what} must be {nrows}x{ncols}")));
    }
    let m = DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(m)
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn psd_root(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<SymMatrix> {
    let m = SymMatrix::new(matrix_from_rows(rows, dim, dim, what)?)?;
    linalg::spd_sqrt(&m).map_err(|e| Error::InvalidInput(format!("{what}: {e}")))
}

fn utt_ids(prefix: &str, s: usize, k: usize) -> (String, String) {
    let spk = format!("{prefix}spk{s:05}");
    let utt = format!("{spk}-u{k:03}");
    (spk, utt)
}

fn finish(spec: &DomainSpec, ids: Vec<String>, speakers: Vec<String>, data: DMatrix<f64>) -> Result<EmbeddingSet> {
    let set = EmbeddingSet::new(ids, Some(speakers), data)?;
    match &spec.shift {
        None => Ok(set),
        Some(shift) => {
            let a = matrix_from_rows(&shift.a, spec.dim, spec.dim, "shift matrix")?;
            if shift.offset.len() != spec.dim {
                return Err(Error::dim(spec.dim, shift.offset.len(), "shift offset"));
            }
            apply_domain_shift(&set, &a, &DVector::from_column_slice(&shift.offset))
        }
    }
}

/// Sample a labeled set from a Gaussian PLDA model.
pub fn gen_gplda(spec: &DomainSpec) -> Result<EmbeddingSet> {
    let GenModel::Gplda { phi_b, phi_w } = &spec.model else {
        return Err(Error::InvalidInput("gen_gplda needs a gplda generative model".into()));
    };
    let d = spec.dim;
    let root_b = psd_root(phi_b, d, "between-speaker covariance")?;
    let root_w = psd_root(phi_w, d, "within-speaker covariance")?;
    let n = spec.n_speakers * spec.utts_per_speaker;
    let mut stream = SeededStream::new(spec.seed);
    let mut data = DMatrix::zeros(n, d);
    let mut ids = Vec::with_capacity(n);
    let mut speakers = Vec::with_capacity(n);
    for s in 0..spec.n_speakers {
        let y = root_b.as_matrix() * stream.normal_vector(d);
        for k in 0..spec.utts_per_speaker {
            let x = &y + root_w.as_matrix() * stream.normal_vector(d);
            let row = s * spec.utts_per_speaker + k;
            data.set_row(row, &x.transpose());
            let (spk, utt) = utt_ids(&spec.id_prefix, s, k);
            ids.push(utt);
            speakers.push(spk);
        }
    }
    finish(spec, ids, speakers, data)
}

/// Sample a labeled set from a heavy-tailed PLDA model.
pub fn gen_htplda(spec: &DomainSpec) -> Result<EmbeddingSet> {
    let GenModel::Htplda { nu, f, w } = &spec.model else {
        return Err(Error::InvalidInput("gen_htplda needs an htplda generative model".into()));
    };
    if !(nu.is_finite() && *nu > 0.0) {
        return Err(Error::InvalidInput(format!("degrees of freedom must be > 0, got {nu}")));
    }
    let d = spec.dim;
    let d_h = f.first().map_or(0, |r| r.len());
    let f = matrix_from_rows(f, d, d_h, "loading matrix F")?;
    let w = SymMatrix::new(matrix_from_rows(w, d, d, "precision matrix W")?)?;
    let noise_root = linalg::spd_inv_sqrt(&w).map_err(|e| Error::InvalidInput(format!("precision matrix W: {e}")))?;
    let n = spec.n_speakers * spec.utts_per_speaker;
    let mut stream = SeededStream::new(spec.seed);
    let mut data = DMatrix::zeros(n, d);
    let mut ids = Vec::with_capacity(n);
    let mut speakers = Vec::with_capacity(n);
    for s in 0..spec.n_speakers {
        let y = &f * stream.normal_vector(d_h);
        for k in 0..spec.utts_per_speaker {
            let lambda = stream.gamma(nu / 2.0, nu / 2.0);
            let noise = noise_root.as_matrix() * stream.normal_vector(d) / lambda.sqrt();
            let row = s * spec.utts_per_speaker + k;
            data.set_row(row, &(&y + noise).transpose());
            let (spk, utt) = utt_ids(&spec.id_prefix, s, k);
            ids.push(utt);
            speakers.push(spk);
        }
    }
    finish(spec, ids, speakers, data)
}

/// Dispatch on the spec's generative model.
pub fn generate(spec: &DomainSpec) -> Result<EmbeddingSet> {
    match spec.model {
        GenModel::Gplda { .. } => gen_gplda(spec),
        GenModel::Htplda { .. } => gen_htplda(spec),
    }
}

/// `φ → a·φ + offset` for every row; `a` must be invertible.
pub fn apply_domain_shift(x: &EmbeddingSet, a: &DMatrix<f64>, offset: &DVector<f64>) -> Result<EmbeddingSet> {
    if a.nrows() != x.dim() || a.ncols() != x.dim() {
        return Err(Error::dim(x.dim(), a.ncols(), "shift matrix"));
    }
    if offset.len() != x.dim() {
        return Err(Error::dim(x.dim(), offset.len(), "shift offset"));
    }
    if linalg::inverse_condition(a) <= 1e-12 {
        return Err(Error::Singular("domain shift matrix is singular".into()));
    }
    let mut data = x.data() * a.transpose();
    for mut row in data.row_iter_mut() {
        row += offset.transpose();
    }
    x.with_data(data)
}

/// Haar-random rotation (QR of a Gaussian matrix with the sign of `R`'s
/// diagonal folded into `Q`).
pub fn random_rotation(dim: usize, stream: &mut SeededStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| 0.0).map(|_: f64| stream.normal());
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Sample disjoint target and nontarget trials from a labeled set.
///
/// Targets are drawn without replacement from all same-speaker pairs.
/// Nontargets are drawn by rejection over random different-speaker pairs,
/// or from the full enumeration when more than half of them are requested.
pub fn make_trials(x: &EmbeddingSet, n_target: usize, n_nontarget: usize, seed: u64) -> Result<TrialSet> {
    let groups = x.speaker_groups()?;
    let speakers = x.speakers().expect("labeled set");
    let mut targets = Vec::new();
    for (_, rows) in &groups {
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                targets.push((i, j));
            }
        }
    }
    if targets.len() < n_target {
        return Err(Error::InsufficientData(format!(
            "requested {n_target} target trials but only {} same-speaker pairs exist",
            targets.len()
        )));
    }
    let n = x.len();
    let all_pairs = n * n.saturating_sub(1) / 2;
    let available = all_pairs - targets.len();
    if available < n_nontarget {
        return Err(Error::InsufficientData(format!(
            "requested {n_nontarget} nontarget trials but only {available} different-speaker pairs exist"
        )));
    }

    let mut stream = SeededStream::new(seed);
    let mut chosen = partial_shuffle(targets, n_target, &mut stream);

    let nontargets = if n_nontarget * 2 > available {
        let mut all = Vec::with_capacity(available);
        for i in 0..n {
            for j in i + 1..n {
                if speakers[i] != speakers[j] {
                    all.push((i, j));
                }
            }
        }
        partial_shuffle(all, n_nontarget, &mut stream)
    } else {
        let mut seen = HashSet::with_capacity(n_nontarget);
        let mut out = Vec::with_capacity(n_nontarget);
        while out.len() < n_nontarget {
            let i = stream.below(n);
            let j = stream.below(n);
            if i == j || speakers[i] == speakers[j] {
                continue;
            }
            let pair = (i.min(j), i.max(j));
            if seen.insert(pair) {
                out.push(pair);
            }
        }
        out
    };

    let mut labels = vec![true; chosen.len()];
    labels.extend(std::iter::repeat_n(false, nontargets.len()));
    chosen.extend(nontargets);
    let ids = x.ids();
    Ok(TrialSet {
        pairs: chosen.into_iter().map(|(i, j)| (ids[i].clone(), ids[j].clone())).collect(),
        labels: Some(labels),
    })
}

fn partial_shuffle<T>(mut items: Vec<T>, k: usize, stream: &mut SeededStream) -> Vec<T> {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = i + stream.below(n - i);
        items.swap(i, j);
    }
    items.truncate(k);
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_reference_values() {
        // reference values from an independent double-precision implementation
        let cases = [
            (0.5, 0.0),
            (0.975, 1.959963984540054),
            (0.025, -1.9599639845400545),
            (0.3, -0.5244005127080409),
            (0.01, -2.3263478740408408),
            (1e-5, -4.264890793922825),
            (1e-10, -6.361340902404056),
            (1.0 - 1e-12, 7.0344869100478356),
            (5.551115123125783e-17, -8.292361075813597),
        ];
        for (p, z) in cases {
            let got = inverse_normal_cdf(p);
            assert!((got - z).abs() <= 1e-13 * z.abs().max(1.0), "p={p}: {got} vs {z}");
        }
    }

    #[test]
    fn stream_is_deterministic_and_in_range() {
        let mut a = SeededStream::new(42);
        let mut b = SeededStream::new(42);
        for _ in 0..1000 {
            let u = a.uniform();
            assert_eq!(u, b.uniform());
            assert!(u > 0.0 && u < 1.0);
        }
        let mut c = SeededStream::new(43);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn gamma_mean_is_one() {
        let mut s = SeededStream::new(7);
        for nu in [2.0, 3.0, 0.8] {
            let n = 100_000;
            let mean: f64 = (0..n).map(|_| s.gamma(nu / 2.0, nu / 2.0)).sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() < 0.02, "nu={nu} mean={mean}");
        }
    }

    #[test]
    fn below_is_uniform_enough() {
        let mut s = SeededStream::new(1);
        let mut counts = [0usize; 6];
        for _ in 0..60_000 {
            counts[s.below(6)] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 400.0, "{counts:?}");
        }
    }

    fn tiny_spec(n_spk: usize, utts: usize) -> DomainSpec {
        DomainSpec {
            dim: 2,
            n_speakers: n_spk,
            utts_per_speaker: utts,
            model: GenModel::Gplda {
                phi_b: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
                phi_w: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            },
            shift: None,
            seed: 3,
            id_prefix: String::new(),
        }
    }

    #[test]
    fn trials_cases() {
        let x = gen_gplda(&tiny_spec(1, 5)).unwrap();
        assert!(make_trials(&x, 3, 1, 0).is_err());

        let x = gen_gplda(&tiny_spec(20, 4)).unwrap();
        let t = make_trials(&x, 50, 200, 9).unwrap();
        let labels = t.labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l).count(), 50);
        assert_eq!(labels.iter().filter(|&&l| !l).count(), 200);
        assert_eq!(make_trials(&x, 50, 200, 9).unwrap(), t);

        let spk = x.speakers().unwrap();
        let idx = x.id_index();
        let mut seen = HashSet::new();
        for ((e, tt), &l) in t.pairs.iter().zip(labels) {
            assert_eq!(spk[idx[e.as_str()]] == spk[idx[tt.as_str()]], l);
            assert!(seen.insert((e.clone(), tt.clone())));
        }
        // dense request goes through the enumeration branch
        let all = 80 * 79 / 2 - 20 * 6;
        let dense = make_trials(&x, 0, all, 2).unwrap();
        assert_eq!(dense.pairs.len(), all);
    }

    #[test]
    fn shift_rejects_singular_matrix() {
        let x = gen_gplda(&tiny_spec(2, 2)).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(apply_domain_shift(&x, &a, &DVector::zeros(2)), Err(Error::Singular(_))));
        let same = apply_domain_shift(&x, &DMatrix::identity(2, 2), &DVector::zeros(2)).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut s = SeededStream::new(5);
        let q = random_rotation(6, &mut s);
        assert!((q.transpose() * &q - DMatrix::identity(6, 6)).amax() < 1e-12);
    }
}
