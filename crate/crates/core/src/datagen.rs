//! Synthetic and semi-synthetic instances: low-rank Gaussian designs, linear
//! and one-hidden-layer ReLU signals calibrated to a signal-to-noise ratio,
//! MCAR and censoring masks, and adversarial reassignment of mask rows.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::data::{unique_patterns, MaskedDataset};
use crate::error::{invalid, Error, Result};
use crate::float::{floor, sqrt};
use crate::matrix::Matrix;
use crate::seed;

/// Largest `n` for which [`adversarial_permute`] solves the assignment
/// problem exactly.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 2000;

const HIDDEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Linear,
    NeuralNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mechanism {
    Mcar { p: f64 },
    Censoring { p: f64 },
}

impl Mechanism {
    pub fn p(&self) -> f64 {
        match *self {
            Self::Mcar { p } | Self::Censoring { p } => p,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mcar { .. } => "mcar",
            Self::Censoring { .. } => "censoring",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub eps: f64,
    pub signal: SignalKind,
    pub k: usize,
    pub snr: f64,
    pub mechanism: Mechanism,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 10,
            r: 5,
            eps: 0.1,
            signal: SignalKind::Linear,
            k: 5,
            snr: 2.0,
            mechanism: Mechanism::Mcar { p: 0.5 },
            seed: 0,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", "must lie in (0, 1)"));
    }
    Ok(())
}

fn check_snr(snr: f64) -> Result<()> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(invalid("snr", "must be positive and finite"));
    }
    Ok(())
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be positive"));
        }
        if self.r == 0 {
            return Err(invalid("r", "must be positive"));
        }
        if self.k == 0 || self.k > self.d {
            return Err(invalid("k", "must satisfy 1 <= k <= d"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid("eps", "must be positive and finite"));
        }
        check_snr(self.snr)?;
        check_p(self.mechanism.p())
    }

    fn stream(&self, tag: u64) -> ChaCha8Rng {
        seed::rng(seed::derive(self.seed, &[tag]))
    }
}

/// `d x r` loading matrix `B` with standard Gaussian entries.
pub fn gen_loadings(spec: &GeneratorSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = spec.stream(1);
    let data = (0..spec.d * spec.r).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(spec.d, spec.r, data)
}

/// Population covariance `B B^T + eps I`.
pub fn covariance(spec: &GeneratorSpec) -> Result<Matrix> {
    let b = gen_loadings(spec)?;
    let mut s = Matrix::zeros(spec.d, spec.d);
    for i in 0..spec.d {
        for j in 0..spec.d {
            let v: f64 = b.row(i).iter().zip(b.row(j)).map(|(a, c)| a * c).sum();
            s[(i, j)] = v + if i == j { spec.eps } else { 0.0 };
        }
    }
    Ok(s)
}

/// `n x d` design with i.i.d. rows `x = B z + sqrt(eps) u`, `z, u` standard
/// Gaussian, so `Cov(x) = B B^T + eps I`.
pub fn gen_design(spec: &GeneratorSpec) -> Result<Matrix> {
    let b = gen_loadings(spec)?;
    let mut rng = spec.stream(2);
    let noise = sqrt(spec.eps);
    let mut x = Matrix::zeros(spec.n, spec.d);
    let mut z = vec![0.0; spec.r];
    for i in 0..spec.n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for j in 0..spec.d {
            let u: f64 = rng.sample(StandardNormal);
            x[(i, j)] = b.row(j).iter().zip(&z).map(|(a, c)| a * c).sum::<f64>() + noise * u;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SignalForm {
    /// `bias + weights . inputs`
    Linear { bias: f64, weights: Vec<f64> },
    /// `output . relu(hidden * inputs + hidden_bias) + output_bias`;
    /// `hidden` is row-major `HIDDEN x inputs`.
    NeuralNet {
        hidden: Vec<f64>,
        hidden_bias: Vec<f64>,
        output: Vec<f64>,
        output_bias: f64,
    },
}

/// Ground-truth regression function. Inputs are `x[support]` followed by
/// `m[mask_inputs]`; the raw output is mapped to `(raw - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub support: Vec<usize>,
    pub mask_inputs: Vec<usize>,
    pub form: SignalForm,
    pub shift: f64,
    pub scale: f64,
}

impl Signal {
    fn inputs(&self) -> usize {
        self.support.len() + self.mask_inputs.len()
    }

    fn raw(&self, x: &[f64], m: &[u8]) -> f64 {
        let input = |t: usize| {
            if t < self.support.len() {
                x[self.support[t]]
            } else {
                m[self.mask_inputs[t - self.support.len()]] as f64
            }
        };
        match &self.form {
            SignalForm::Linear { bias, weights } => bias + weights.iter().enumerate().map(|(t, w)| w * input(t)).sum::<f64>(),
            SignalForm::NeuralNet {
                hidden,
                hidden_bias,
                output,
                output_bias,
            } => {
                let p = self.inputs();
                let mut out = *output_bias;
                for (h, (&b, &o)) in hidden_bias.iter().zip(output).enumerate() {
                    let a = b + (0..p).map(|t| hidden[h * p + t] * input(t)).sum::<f64>();
                    out += o * a.max(0.0);
                }
                out
            }
        }
    }

    /// Noise-free response for one row. `m` is only read when the signal
    /// has mask inputs.
    pub fn evaluate(&self, x: &[f64], m: &[u8]) -> f64 {
        (self.raw(x, m) - self.shift) / self.scale
    }

    pub fn evaluate_all(&self, x: &Matrix, mask: Option<&[u8]>) -> Vec<f64> {
        let d = x.cols();
        let none = vec![0u8; d];
        (0..x.rows())
            .map(|i| {
                let m = mask.map_or(&none[..], |mk| &mk[i * d..(i + 1) * d]);
                self.evaluate(x.row(i), m)
            })
            .collect()
    }
}

/// Draws a signal on the given support. Mask-input weights are drawn after
/// every base parameter, so an empty `mask_inputs` reproduces the pure
/// feature signal from the same stream.
pub fn draw_signal(kind: SignalKind, support: Vec<usize>, mask_inputs: Vec<usize>, rng: &mut ChaCha8Rng) -> Signal {
    let k = support.len();
    let km = mask_inputs.len();
    let form = match kind {
        SignalKind::Linear => {
            let bias: f64 = rng.sample(StandardNormal);
            let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            let mut weights: Vec<f64> = (0..k).map(|_| unif.sample(rng)).collect();
            weights.extend((0..km).map(|_| unif.sample(rng)));
            SignalForm::Linear { bias, weights }
        }
        SignalKind::NeuralNet => {
            let base: Vec<f64> = (0..HIDDEN * k).map(|_| rng.sample(StandardNormal)).collect();
            let hidden_bias: Vec<f64> = (0..HIDDEN).map(|_| rng.sample(StandardNormal)).collect();
            let output: Vec<f64> = (0..HIDDEN).map(|_| rng.sample(StandardNormal)).collect();
            let output_bias: f64 = rng.sample(StandardNormal);
            let extra: Vec<f64> = (0..HIDDEN * km).map(|_| rng.sample(StandardNormal)).collect();
            let p = k + km;
            let mut hidden = vec![0.0; HIDDEN * p];
            for h in 0..HIDDEN {
                hidden[h * p..h * p + k].copy_from_slice(&base[h * k..(h + 1) * k]);
                hidden[h * p + k..(h + 1) * p].copy_from_slice(&extra[h * km..(h + 1) * km]);
            }
            SignalForm::NeuralNet {
                hidden,
                hidden_bias,
                output,
                output_bias,
            }
        }
    };
    Signal {
        support,
        mask_inputs,
        form,
        shift: 0.0,
        scale: 1.0,
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n)
}

/// Noisy response `f(x) + e` with `Var(e) = Var_emp(f) / snr`. Neural-net
/// signals are first standardised to zero mean and unit variance on this
/// sample (the shift and scale are written back into `signal`).
pub fn gen_response(
    x: &Matrix,
    mask: Option<&[u8]>,
    signal: &mut Signal,
    snr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64)> {
    check_snr(snr)?;
    if x.rows() < 2 {
        return Err(invalid("n", "need at least two rows to calibrate noise"));
    }
    signal.shift = 0.0;
    signal.scale = 1.0;
    let raw = signal.evaluate_all(x, mask);
    let (m, var) = mean_var(&raw);
    if !var.is_finite() || var <= 1e-12 * (1.0 + m * m) {
        return Err(Error::Degenerate("signal has zero empirical variance".into()));
    }
    let (f, var) = match signal.form {
        SignalForm::NeuralNet { .. } => {
            signal.shift = m;
            signal.scale = sqrt(var);
            (signal.evaluate_all(x, mask), 1.0)
        }
        SignalForm::Linear { .. } => (raw, var),
    };
    let sd = sqrt(var / snr);
    let noise = Normal::new(0.0, sd).map_err(|_| Error::Degenerate("noise scale".into()))?;
    let y = f.iter().map(|v| v + noise.sample(rng)).collect();
    Ok((y, sd))
}

/// Response for a synthetic design: a uniformly random `k`-subset of
/// features feeds the signal. Returns `(y, signal, noise_sd)`.
pub fn gen_signal(x: &Matrix, spec: &GeneratorSpec) -> Result<(Vec<f64>, Signal, f64)> {
    spec.validate()?;
    if x.cols() != spec.d {
        return Err(Error::DimensionMismatch {
            what: "design columns",
            expected: spec.d,
            got: x.cols(),
        });
    }
    let mut rng = spec.stream(3);
    let mut support = index::sample(&mut rng, spec.d, spec.k).into_vec();
    support.sort_unstable();
    let mut signal = draw_signal(spec.signal, support, Vec::new(), &mut rng);
    let mut noise_rng = spec.stream(4);
    let (y, sd) = gen_response(x, None, &mut signal, spec.snr, &mut noise_rng)?;
    Ok((y, signal, sd))
}

/// Row-major `n x d` mask with i.i.d. `Bernoulli(p)` entries.
pub fn apply_mcar(n: usize, d: usize, p: f64, seed: u64) -> Result<Vec<u8>> {
    check_p(p)?;
    let bern = Bernoulli::new(p).map_err(|_| invalid("p", "must lie in (0, 1)"))?;
    let mut rng = seed::rng(seed);
    Ok((0..n * d).map(|_| bern.sample(&mut rng) as u8).collect())
}

/// Type-7 (linearly interpolated) empirical quantile.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("q", "must lie in [0, 1]"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Per-column `(1 - p)` quantiles of the given rows.
pub fn censoring_thresholds(x: &Matrix, rows: &[usize], p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    (0..x.cols())
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|&i| x[(i, j)]).collect();
            quantile(&col, 1.0 - p)
        })
        .collect()
}

/// Masks every entry strictly above its column threshold.
pub fn censor_with(x: &Matrix, thresholds: &[f64]) -> Result<Vec<u8>> {
    if thresholds.len() != x.cols() {
        return Err(Error::DimensionMismatch {
            what: "thresholds",
            expected: x.cols(),
            got: thresholds.len(),
        });
    }
    Ok(x.iter_rows()
        .flat_map(|r| r.iter().zip(thresholds).map(|(v, t)| (v > t) as u8))
        .collect())
}

/// Censoring mask with thresholds computed on all rows of `x`.
pub fn apply_censoring(x: &Matrix, p: f64) -> Result<Vec<u8>> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    censor_with(x, &censoring_thresholds(x, &rows, p)?)
}

/// Copies `x` with masked entries set to zero.
pub fn hide(x: &Matrix, mask: &[u8]) -> Matrix {
    let mut out = x.clone();
    for (v, &m) in out.as_mut_slice().iter_mut().zip(mask) {
        if m != 0 {
            *v = 0.0;
        }
    }
    out
}

/// A fully observed design, its response and the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteInstance {
    pub x_full: Matrix,
    pub y: Vec<f64>,
    pub signal: Signal,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Masked entries are stored as 0.
    pub data: MaskedDataset,
    pub x_full: Matrix,
    pub signal: Signal,
    pub noise_sd: f64,
    /// Censoring thresholds, when the mechanism is censoring.
    pub thresholds: Option<Vec<f64>>,
}

pub fn generate_complete(spec: &GeneratorSpec) -> Result<CompleteInstance> {
    let x_full = gen_design(spec)?;
    let (y, signal, noise_sd) = gen_signal(&x_full, spec)?;
    Ok(CompleteInstance {
        x_full,
        y,
        signal,
        noise_sd,
    })
}

/// Mask for `x_full` under `spec.mechanism`. Censoring thresholds come
/// from `fit_rows` only and are applied to every row.
pub fn mask_for(spec: &GeneratorSpec, x_full: &Matrix, fit_rows: &[usize]) -> Result<(Vec<u8>, Option<Vec<f64>>)> {
    match spec.mechanism {
        Mechanism::Mcar { p } => Ok((apply_mcar(x_full.rows(), x_full.cols(), p, seed::derive(spec.seed, &[5]))?, None)),
        Mechanism::Censoring { p } => {
            if fit_rows.is_empty() {
                return Err(Error::Empty);
            }
            let t = censoring_thresholds(x_full, fit_rows, p)?;
            Ok((censor_with(x_full, &t)?, Some(t)))
        }
    }
}

impl CompleteInstance {
    pub fn into_instance(self, mask: Vec<u8>, thresholds: Option<Vec<f64>>) -> Result<Instance> {
        let data = MaskedDataset::new(hide(&self.x_full, &mask), mask, self.y)?;
        Ok(Instance {
            data,
            x_full: self.x_full,
            signal: self.signal,
            noise_sd: self.noise_sd,
            thresholds,
        })
    }
}

/// Full synthetic instance; censoring thresholds use every row.
pub fn generate(spec: &GeneratorSpec) -> Result<Instance> {
    let complete = generate_complete(spec)?;
    let rows: Vec<usize> = (0..spec.n).collect();
    let (mask, thresholds) = mask_for(spec, &complete.x_full, &rows)?;
    complete.into_instance(mask, thresholds)
}

/// Row permutation of a mask: row `i` of the reassigned mask is row
/// `sigma[i]` of the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Permutation {
    pub sigma: Vec<usize>,
    pub objective: f64,
    pub identity_objective: f64,
    pub exact: bool,
}

fn check_shapes(x_full: &Matrix, mask: &[u8]) -> Result<()> {
    if mask.len() != x_full.rows() * x_full.cols() {
        return Err(Error::DimensionMismatch {
            what: "mask entries",
            expected: x_full.rows() * x_full.cols(),
            got: mask.len(),
        });
    }
    Ok(())
}

fn score(x: &[f64], m: &[u8]) -> f64 {
    x.iter().zip(m).filter(|(_, &b)| b != 0).map(|(v, _)| v).sum()
}

fn objective(x_full: &Matrix, mask: &[u8], sigma: &[usize]) -> f64 {
    let d = x_full.cols();
    sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| score(x_full.row(i), &mask[s * d..(s + 1) * d]))
        .sum()
}

/// Permutation of mask rows maximising `sum_i <x_full_i, m_sigma(i)>`:
/// exact assignment up to [`EXACT_ASSIGNMENT_LIMIT`] rows, otherwise a
/// greedy pass over rows in descending order of their best pattern score,
/// each taking its best pattern that still has copies left.
pub fn adversarial_permute(x_full: &Matrix, mask: &[u8]) -> Result<Permutation> {
    check_shapes(x_full, mask)?;
    if !x_full.is_finite() {
        return Err(Error::NonFinite("x_full"));
    }
    let n = x_full.rows();
    let d = x_full.cols();
    let identity: Vec<usize> = (0..n).collect();
    let identity_objective = objective(x_full, mask, &identity);
    let (sigma, exact) = if n <= EXACT_ASSIGNMENT_LIMIT {
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for s in 0..n {
                w[(i, s)] = score(x_full.row(i), &mask[s * d..(s + 1) * d]);
            }
        }
        (max_weight_assignment(&w)?.perm, true)
    } else {
        (greedy_permute(x_full, mask), false)
    };
    let mut objective = objective(x_full, mask, &sigma);
    let mut sigma = sigma;
    if objective < identity_objective {
        sigma = identity;
        objective = identity_objective;
    }
    Ok(Permutation {
        sigma,
        objective,
        identity_objective,
        exact,
    })
}

fn greedy_permute(x_full: &Matrix, mask: &[u8]) -> Vec<usize> {
    let n = x_full.rows();
    let d = x_full.cols();
    let ds = MaskedDataset::new(Matrix::zeros(n, d), mask.to_vec(), vec![0.0; n]).expect("shapes checked");
    let groups = unique_patterns(&ds);
    let patterns: Vec<Vec<u8>> = groups.iter().map(|(k, _)| k.to_mask()).collect();
    let mut pools: Vec<Vec<usize>> = groups.into_iter().map(|(_, rows)| rows.into_iter().rev().collect()).collect();
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|i| patterns.iter().map(|p| score(x_full.row(i), p)).collect())
        .collect();
    let best = |i: usize| scores[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| best(b).total_cmp(&best(a)).then(a.cmp(&b)));
    let mut sigma = vec![0usize; n];
    for i in order {
        let mut pick: Option<usize> = None;
        for (g, pool) in pools.iter().enumerate() {
            if !pool.is_empty() && pick.is_none_or(|p| scores[i][g] > scores[i][p]) {
                pick = Some(g);
            }
        }
        let g = pick.expect("pools hold exactly n rows");
        sigma[i] = pools[g].pop().expect("non-empty pool");
    }
    sigma
}

/// Applies a row permutation to a row-major mask.
pub fn permute_rows(mask: &[u8], d: usize, sigma: &[usize]) -> Vec<u8> {
    sigma.iter().flat_map(|&s| mask[s * d..(s + 1) * d].iter().copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Mar,
    Nmar,
    Am,
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mar => "mar",
            Self::Nmar => "nmar",
            Self::Am => "am",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSyntheticSpec {
    pub setting: Setting,
    /// Signal features; `None` means `k_missing` plus as many never-missing
    /// columns as exist, capped at 10 in total.
    pub k: Option<usize>,
    pub k_missing: usize,
    pub signal: SignalKind,
    pub snr: f64,
    pub seed: u64,
}

impl Default for SemiSyntheticSpec {
    fn default() -> Self {
        Self {
            setting: Setting::Mar,
            k: None,
            k_missing: 0,
            signal: SignalKind::Linear,
            snr: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSynthetic {
    pub y: Vec<f64>,
    pub mask: Vec<u8>,
    pub signal: Signal,
    pub noise_sd: f64,
    pub permutation: Option<Permutation>,
}

/// Synthetic response on a user-supplied complete design `x_full` with its
/// real mask. The `k` signal features contain exactly `k_missing` columns
/// that have missing entries; under NMAR the masks of those columns are
/// extra signal inputs; under AM the mask rows are adversarially reassigned
/// after the response is drawn.
pub fn gen_semisynthetic(x_full: &Matrix, mask: &[u8], spec: &SemiSyntheticSpec) -> Result<SemiSynthetic> {
    check_shapes(x_full, mask)?;
    if !x_full.is_finite() {
        return Err(Error::NonFinite("x_full"));
    }
    let d = x_full.cols();
    let mut affected = vec![false; d];
    for (t, &m) in mask.iter().enumerate() {
        if m > 1 {
            return Err(invalid("mask", "entries must be 0 or 1"));
        }
        affected[t % d] |= m == 1;
    }
    let missing_cols: Vec<usize> = (0..d).filter(|&j| affected[j]).collect();
    let clean_cols: Vec<usize> = (0..d).filter(|&j| !affected[j]).collect();
    if spec.k_missing > missing_cols.len() {
        return Err(invalid("k_missing", "exceeds the number of columns with missing entries"));
    }
    let k = spec
        .k
        .unwrap_or_else(|| (spec.k_missing + clean_cols.len()).min(10).max(spec.k_missing));
    if k == 0 || k > d {
        return Err(invalid("k", "must satisfy 1 <= k <= d"));
    }
    if spec.k_missing > k {
        return Err(invalid("k_missing", "must not exceed k"));
    }
    if k - spec.k_missing > clean_cols.len() {
        return Err(invalid("k", "not enough never-missing columns for k - k_missing"));
    }
    let mut rng = seed::rng(seed::derive(spec.seed, &[3]));
    let chosen_missing: Vec<usize> = index::sample(&mut rng, missing_cols.len(), spec.k_missing)
        .into_iter()
        .map(|t| missing_cols[t])
        .collect();
    let chosen_clean: Vec<usize> = index::sample(&mut rng, clean_cols.len(), k - spec.k_missing)
        .into_iter()
        .map(|t| clean_cols[t])
        .collect();
    let mut support: Vec<usize> = chosen_missing.iter().chain(&chosen_clean).copied().collect();
    support.sort_unstable();
    let mut mask_inputs = match spec.setting {
        Setting::Nmar => chosen_missing,
        Setting::Mar | Setting::Am => Vec::new(),
    };
    mask_inputs.sort_unstable();
    let mut signal = draw_signal(spec.signal, support, mask_inputs, &mut rng);
    let mut noise_rng = seed::rng(seed::derive(spec.seed, &[4]));
    let (y, noise_sd) = gen_response(x_full, Some(mask), &mut signal, spec.snr, &mut noise_rng)?;
    let (mask, permutation) = match spec.setting {
        Setting::Am => {
            let perm = adversarial_permute(x_full, mask)?;
            (permute_rows(mask, d, &perm.sigma), Some(perm))
        }
        _ => (mask.to_vec(), None),
    };
    Ok(SemiSynthetic {
        y,
        mask,
        signal,
        noise_sd,
        permutation,
    })
}

/// Multiset of mask rows, for permutation checks.
pub fn row_multiset(mask: &[u8], d: usize) -> BTreeMap<Vec<u8>, usize> {
    let mut out = BTreeMap::new();
    for row in mask.chunks(d.max(1)) {
        *out.entry(row.to_vec()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> GeneratorSpec {
        GeneratorSpec {
            n,
            seed: 7,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for s in [
            GeneratorSpec { k: 0, ..spec(10) },
            GeneratorSpec { k: 11, ..spec(10) },
            GeneratorSpec { eps: 0.0, ..spec(10) },
            GeneratorSpec { snr: -1.0, ..spec(10) },
            GeneratorSpec { mechanism: Mechanism::Mcar { p: 1.5 }, ..spec(10) },
            GeneratorSpec { mechanism: Mechanism::Censoring { p: 0.0 }, ..spec(10) },
        ] {
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn design_is_deterministic_and_centred() {
        let s = spec(5000);
        let x = gen_design(&s).unwrap();
        assert_eq!(x, gen_design(&s).unwrap());
        let sigma = covariance(&s).unwrap();
        for j in 0..s.d {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 3.0 * sqrt(sigma[(j, j)] / s.n as f64), "column {j} mean {m}");
        }
        let other = gen_design(&GeneratorSpec { seed: 8, ..s }).unwrap();
        assert_ne!(x, other);
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert!((quantile(&v, 0.5).unwrap() - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.25).unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn censoring_fraction_and_order() {
        let s = spec(997);
        let x = gen_design(&s).unwrap();
        for p in [0.1, 0.3, 0.5, 0.8] {
            let m = apply_censoring(&x, p).unwrap();
            assert_eq!(m, apply_censoring(&x, p).unwrap());
            for j in 0..s.d {
                let missing = (0..s.n).filter(|&i| m[i * s.d + j] == 1).count();
                assert!((missing as f64 / s.n as f64 - p).abs() <= 1.0 / s.n as f64);
                let max_obs = (0..s.n).filter(|&i| m[i * s.d + j] == 0).map(|i| x[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
                let min_mis = (0..s.n).filter(|&i| m[i * s.d + j] == 1).map(|i| x[(i, j)]).fold(f64::INFINITY, f64::min);
                assert!(max_obs <= min_mis);
            }
        }
    }

    #[test]
    fn mcar_fraction() {
        let (n, d, p) = (2000, 10, 0.3);
        let m = apply_mcar(n, d, p, 3).unwrap();
        let frac = m.iter().map(|&v| v as f64).sum::<f64>() / (n * d) as f64;
        assert!((frac - p).abs() < 3.0 * sqrt(p * (1.0 - p) / (n * d) as f64));
        assert_eq!(m, apply_mcar(n, d, p, 3).unwrap());
        assert!(apply_mcar(n, d, 1.0, 3).is_err());
    }

    #[test]
    fn mcar_small_p_counts_draws() {
        let m = apply_mcar(50, 4, 0.02, 11).unwrap();
        let mut rng = seed::rng(11);
        let bern = Bernoulli::new(0.02).unwrap();
        let expect: usize = (0..200).filter(|_| bern.sample(&mut rng)).count();
        assert_eq!(m.iter().filter(|&&v| v == 1).count(), expect);
    }

    #[test]
    fn zero_weight_signal_is_an_error() {
        let x = gen_design(&spec(100)).unwrap();
        let mut signal = Signal {
            support: vec![0, 1, 2],
            mask_inputs: vec![],
            form: SignalForm::Linear {
                bias: 0.7,
                weights: vec![0.0; 3],
            },
            shift: 0.0,
            scale: 1.0,
        };
        let err = gen_response(&x, None, &mut signal, 2.0, &mut seed::rng(0));
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn signal_ignores_non_support_columns() {
        for kind in [SignalKind::Linear, SignalKind::NeuralNet] {
            let s = GeneratorSpec { signal: kind, ..spec(200) };
            let x = gen_design(&s).unwrap();
            let (_, signal, _) = gen_signal(&x, &s).unwrap();
            assert_eq!(signal.support.len(), s.k);
            let mut x2 = x.clone();
            for j in (0..s.d).filter(|j| !signal.support.contains(j)) {
                for i in 0..s.n {
                    x2[(i, j)] += 3.0 + i as f64;
                }
            }
            assert_eq!(signal.evaluate_all(&x, None), signal.evaluate_all(&x2, None));
        }
    }

    #[test]
    fn nn_signal_is_standardised() {
        let s = GeneratorSpec { signal: SignalKind::NeuralNet, ..spec(3000) };
        let x = gen_design(&s).unwrap();
        let (_, signal, sd) = gen_signal(&x, &s).unwrap();
        let (m, v) = mean_var(&signal.evaluate_all(&x, None));
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        assert!((sd - sqrt(0.5)).abs() < 1e-12);
    }

    #[test]
    fn adversarial_small_cases() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = adversarial_permute(&x, &[1, 0]).unwrap();
        assert_eq!(p.sigma, vec![0]);
        let x = Matrix::from_rows(&[[5.0, 0.0], [0.0, 5.0]]).unwrap();
        let p = adversarial_permute(&x, &[0, 1, 1, 0]).unwrap();
        assert_eq!(p.sigma, vec![1, 0]);
        assert_eq!((p.objective, p.identity_objective), (10.0, 0.0));
    }

    #[test]
    fn greedy_is_a_permutation_and_beats_identity() {
        let s = GeneratorSpec { mechanism: Mechanism::Mcar { p: 0.3 }, ..spec(300) };
        let inst = generate(&s).unwrap();
        let sigma = greedy_permute(&inst.x_full, inst.data.mask());
        let mut sorted = sigma.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..300).collect::<Vec<_>>());
        let exact = adversarial_permute(&inst.x_full, inst.data.mask()).unwrap();
        let g = objective(&inst.x_full, inst.data.mask(), &sigma);
        assert!(g >= exact.identity_objective);
        assert!(g <= exact.objective + 1e-9);
    }

    fn semi_input(n: usize) -> (Matrix, Vec<u8>) {
        let s = GeneratorSpec { d: 6, k: 3, mechanism: Mechanism::Mcar { p: 0.3 }, ..spec(n) };
        let x = gen_design(&s).unwrap();
        let mut m = apply_mcar(n, 6, 0.3, 1).unwrap();
        for i in 0..n {
            for j in 3..6 {
                m[i * 6 + j] = 0;
            }
        }
        (x, m)
    }

    #[test]
    fn semisynthetic_settings() {
        let (x, m) = semi_input(60);
        let base = SemiSyntheticSpec { k: Some(3), k_missing: 0, seed: 5, ..SemiSyntheticSpec::default() };
        let mar = gen_semisynthetic(&x, &m, &base).unwrap();
        let nmar = gen_semisynthetic(&x, &m, &SemiSyntheticSpec { setting: Setting::Nmar, ..base.clone() }).unwrap();
        assert_eq!(mar.y, nmar.y);
        assert_eq!(mar.mask, m);

        let two = SemiSyntheticSpec { k_missing: 2, ..base.clone() };
        let s = gen_semisynthetic(&x, &m, &two).unwrap();
        assert_eq!(s.signal.support.iter().filter(|&&j| j < 3).count(), 2);
        assert!(gen_semisynthetic(&x, &m, &SemiSyntheticSpec { k_missing: 4, ..base.clone() }).is_err());
        assert!(gen_semisynthetic(&x, &m, &SemiSyntheticSpec { k_missing: 0, k: Some(5), ..base.clone() }).is_err());

        let am = gen_semisynthetic(&x, &m, &SemiSyntheticSpec { setting: Setting::Am, k_missing: 2, ..base }).unwrap();
        assert_eq!(am.y, s.y);
        assert_eq!(row_multiset(&am.mask, 6), row_multiset(&m, 6));
        let perm = am.permutation.unwrap();
        assert!(perm.exact && perm.objective >= perm.identity_objective);
    }

    #[test]
    fn nmar_depends_on_mask() {
        let (x, m) = semi_input(40);
        let mut signal = Signal {
            support: vec![0],
            mask_inputs: vec![1],
            form: SignalForm::Linear { bias: 0.0, weights: vec![0.0, 5.0] },
            shift: 0.0,
            scale: 1.0,
        };
        let a = signal.evaluate_all(&x, Some(&m));
        let mut m2 = m.clone();
        for i in 0..40 {
            m2[i * 6 + 1] = m[((i + 1) % 40) * 6 + 1];
        }
        assert_ne!(a, signal.evaluate_all(&x, Some(&m2)));
        assert!(gen_response(&x, Some(&m), &mut signal, 2.0, &mut seed::rng(1)).is_ok());
    }
}
