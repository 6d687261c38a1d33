//! Joint impute-then-regress: alternate between refitting a downstream
//! regressor on `mu`-imputed data and moving each `mu_j` by `-sigma_j`, `0`
//! or `+sigma_j` with the regressor held fixed.
//!
//! Loop structure (limits from [`JointLimits`]):
//!
//! ```text
//! mu_j    <- mean of observed X_j       (0 if never observed)
//! sigma_j <- std of observed X_j / sqrt(n)   (1 if never observed)
//! repeat up to max_outer times:
//!     f <- contract.fit(X^mu, y)         (rejected if it raises the error)
//!     repeat up to max_cycles sweeps:
//!         for j in 1..=d: mu_j += eps_j sigma_j, eps_j in {-1, 0, +1}
//!         stop the sweeps on no change or relative gain < min_rel_improve
//!     stop on no change or outer relative gain < min_rel_improve
//! ```

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adaptive::MaskedPredictor;
use crate::data::MaskedDataset;
use crate::elasticnet::{self, ElasticNetSpec, LinearFit};
use crate::error::{invalid, Error, Result};
use crate::float::sqrt;
use crate::learners::{fit_cart_mia, fit_forest, Forest, MiaTree, TreeParams};
use crate::matrix::Matrix;
use crate::metrics;
use crate::seed;

/// `X^mu`: observed entries kept, missing entries of column `j` set to `mu[j]`.
pub fn impute_with(ds: &MaskedDataset, mu: &[f64]) -> Result<Matrix> {
    if mu.len() != ds.d() {
        return Err(Error::DimensionMismatch {
            what: "imputation vector",
            expected: ds.d(),
            got: mu.len(),
        });
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("imputation vector"));
    }
    let mut out = ds.x().clone();
    for i in 0..ds.n() {
        let m = ds.mask_row(i);
        for (j, slot) in out.row_mut(i).iter_mut().enumerate() {
            if m[j] != 0 {
                *slot = mu[j];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractLabel {
    Linear,
    Tree,
    Forest,
}

impl ContractLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Tree => "tree",
            Self::Forest => "forest",
        }
    }
}

/// A downstream regressor family with its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contract {
    Linear(ElasticNetSpec),
    Tree(TreeParams),
    Forest(TreeParams),
}

impl Contract {
    pub fn label(&self) -> ContractLabel {
        match self {
            Self::Linear(_) => ContractLabel::Linear,
            Self::Tree(_) => ContractLabel::Tree,
            Self::Forest(_) => ContractLabel::Forest,
        }
    }

    /// Fits on a fully numeric design. `seed` is mixed into the forest's
    /// own seed; linear and tree fits do not use randomness.
    pub fn fit(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<FittedPredictor> {
        match self {
            Self::Linear(spec) => Ok(FittedPredictor::Linear(elasticnet::fit(x, y, spec)?)),
            Self::Tree(params) => {
                let ds = MaskedDataset::complete(x.clone(), y.to_vec())?;
                Ok(FittedPredictor::Tree(fit_cart_mia(&ds, params)?))
            }
            Self::Forest(params) => {
                let ds = MaskedDataset::complete(x.clone(), y.to_vec())?;
                let params = TreeParams {
                    seed: seed::derive(params.seed, &[seed]),
                    ..*params
                };
                Ok(FittedPredictor::Forest(fit_forest(&ds, &params)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedPredictor {
    Linear(LinearFit),
    Tree(MiaTree),
    Forest(Forest),
}

impl FittedPredictor {
    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            Self::Linear(f) => f.predict_row(x),
            Self::Tree(t) => t.predict_dense(x),
            Self::Forest(f) => f.predict_dense(x),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn label(&self) -> ContractLabel {
        match self {
            Self::Linear(_) => ContractLabel::Linear,
            Self::Tree(_) => ContractLabel::Tree,
            Self::Forest(_) => ContractLabel::Forest,
        }
    }
}

/// Training error minimised by the coordinate search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    Mse,
    /// `1 - AUC` of the predictions used as scores.
    OneMinusAuc,
}

impl ErrorMetric {
    /// MSE for continuous targets, `1 - AUC` for 0/1 targets.
    pub fn for_dataset(ds: &MaskedDataset) -> Self {
        if ds.has_binary_target() {
            Self::OneMinusAuc
        } else {
            Self::Mse
        }
    }

    pub fn eval(&self, y: &[f64], pred: &[f64]) -> Result<f64> {
        match self {
            Self::Mse => metrics::mse(y, pred),
            Self::OneMinusAuc => Ok(1.0 - metrics::auc(y, pred)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub max_outer: usize,
    pub max_cycles: usize,
    pub min_rel_improve: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            max_outer: 20,
            max_cycles: 10,
            min_rel_improve: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Iteration limit reached.
    Limit,
    /// Relative improvement fell below `min_rel_improve`.
    RelativeImprovement,
    /// No coordinate moved.
    NoChange,
    /// The refit predictor had a higher training error than the previous one.
    RefitRejected,
}

/// One outer iteration of the joint fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStep {
    pub refit_error: f64,
    pub end_error: f64,
    pub cycles: usize,
    pub phase_stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub contract: ContractLabel,
    pub predictor: FittedPredictor,
    /// Training error at the end of each accepted outer iteration.
    pub error_trace: Vec<f64>,
    pub steps: Vec<OuterStep>,
    pub stop: StopReason,
    pub refits: usize,
    /// Candidate evaluations made by the coordinate search.
    pub evaluations: usize,
}

impl MaskedPredictor for JointModel {
    fn d(&self) -> usize {
        self.mu.len()
    }

    fn predict_unchecked(&self, x: &[f64], m: &[u8]) -> f64 {
        let row: Vec<f64> = x
            .iter()
            .zip(m)
            .zip(&self.mu)
            .map(|((&v, &mj), &mu)| if mj != 0 { mu } else { v })
            .collect();
        self.predictor.predict_row(&row)
    }
}

/// Initial step sizes: standard deviation of observed entries over `sqrt(n)`.
pub fn initial_sigma(ds: &MaskedDataset) -> Vec<f64> {
    let n = ds.n().max(1) as f64;
    (0..ds.d())
        .map(|j| {
            let obs: Vec<f64> = (0..ds.n())
                .filter(|&i| !ds.is_missing(i, j))
                .map(|i| ds.x()[(i, j)])
                .collect();
            if obs.is_empty() {
                return 1.0;
            }
            let m = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = obs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / obs.len() as f64;
            sqrt(var) / sqrt(n)
        })
        .collect()
}

/// Result of one coordinate update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub epsilon: i8,
    pub error: f64,
}

struct SearchState<'a> {
    ds: &'a MaskedDataset,
    metric: ErrorMetric,
    xmu: Matrix,
    pred: Vec<f64>,
    error: f64,
    missing_rows: Vec<Vec<usize>>,
    evaluations: usize,
}

impl<'a> SearchState<'a> {
    fn new(ds: &'a MaskedDataset, mu: &[f64], predictor: &FittedPredictor, metric: ErrorMetric) -> Result<Self> {
        let xmu = impute_with(ds, mu)?;
        let pred = predictor.predict(&xmu);
        let error = metric.eval(ds.y(), &pred)?;
        let missing_rows = (0..ds.d())
            .map(|j| (0..ds.n()).filter(|&i| ds.is_missing(i, j)).collect())
            .collect();
        Ok(Self {
            ds,
            metric,
            xmu,
            pred,
            error,
            missing_rows,
            evaluations: 0,
        })
    }

    fn candidate(&mut self, j: usize, value: f64, predictor: &FittedPredictor) -> Result<(f64, Vec<f64>)> {
        let mut pred = self.pred.clone();
        let mut row = vec![0.0; self.ds.d()];
        for &i in &self.missing_rows[j] {
            row.copy_from_slice(self.xmu.row(i));
            row[j] = value;
            pred[i] = predictor.predict_row(&row);
        }
        self.evaluations += 1;
        Ok((self.metric.eval(self.ds.y(), &pred)?, pred))
    }

    /// Tries `mu_j - sigma`, `mu_j`, `mu_j + sigma`; keeps the strictly best,
    /// preferring 0 then -1 on ties. Applies the move.
    fn step(&mut self, mu: &mut [f64], j: usize, sigma: f64, predictor: &FittedPredictor) -> Result<Step> {
        if sigma == 0.0 || self.missing_rows[j].is_empty() {
            return Ok(Step {
                epsilon: 0,
                error: self.error,
            });
        }
        let mut best = (0i8, self.error, None);
        for eps in [-1i8, 1] {
            let value = mu[j] + eps as f64 * sigma;
            let (err, pred) = self.candidate(j, value, predictor)?;
            if err < best.1 {
                best = (eps, err, Some(pred));
            }
        }
        if let (eps, err, Some(pred)) = best {
            mu[j] += eps as f64 * sigma;
            for &i in &self.missing_rows[j] {
                self.xmu[(i, j)] = mu[j];
            }
            self.pred = pred;
            self.error = err;
        }
        Ok(Step {
            epsilon: best.0,
            error: self.error,
        })
    }
}

/// One coordinate update of `mu_j` with the predictor held fixed. Returns
/// the chosen `epsilon` and the resulting training error; `mu` is not
/// modified.
pub fn coordinate_step(
    mu: &[f64],
    j: usize,
    sigma_j: f64,
    predictor: &FittedPredictor,
    ds: &MaskedDataset,
    metric: ErrorMetric,
) -> Result<Step> {
    if j >= ds.d() {
        return Err(invalid("j", "feature index out of range"));
    }
    if sigma_j.is_nan() || sigma_j < 0.0 {
        return Err(invalid("sigma_j", "must be non-negative"));
    }
    let mut state = SearchState::new(ds, mu, predictor, metric)?;
    let mut scratch = mu.to_vec();
    state.step(&mut scratch, j, sigma_j, predictor)
}

fn rel_gain(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        (before - after) / before
    } else {
        0.0
    }
}

/// Jointly fits an imputation vector and a downstream predictor.
pub fn joint_fit(
    ds: &MaskedDataset,
    contract: &Contract,
    limits: &JointLimits,
    metric: ErrorMetric,
    seed: u64,
) -> Result<JointModel> {
    ds.validate()?;
    if ds.n() == 0 {
        return Err(Error::Empty);
    }
    if limits.max_outer == 0 || limits.max_cycles == 0 {
        return Err(invalid("limits", "iteration limits must be positive"));
    }
    let d = ds.d();
    let mut mu: Vec<f64> = (0..d).map(|j| ds.observed_mean(j).unwrap_or(0.0)).collect();
    let sigma = initial_sigma(ds);

    let mut predictor: Option<FittedPredictor> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut steps = Vec::new();
    let mut refits = 0;
    let mut evaluations = 0;
    let mut stop = StopReason::Limit;

    for outer in 0..limits.max_outer {
        let xmu = impute_with(ds, &mu)?;
        let candidate = contract.fit(&xmu, ds.y(), seed::derive(seed, &[outer as u64]))?;
        refits += 1;
        let mut state = SearchState::new(ds, &mu, &candidate, metric)?;
        let refit_error = state.error;
        if let Some(&last) = trace.last() {
            if refit_error > last {
                stop = StopReason::RefitRejected;
                break;
            }
        }

        let mut phase_stop = StopReason::Limit;
        let mut cycles = 0;
        let mut moved = false;
        let mut before = state.error;
        for _ in 0..limits.max_cycles {
            cycles += 1;
            let mut changed = false;
            for j in 0..d {
                changed |= state.step(&mut mu, j, sigma[j], &candidate)?.epsilon != 0;
            }
            moved |= changed;
            if !changed {
                phase_stop = StopReason::NoChange;
                break;
            }
            let gain = rel_gain(before, state.error);
            before = state.error;
            if gain < limits.min_rel_improve {
                phase_stop = StopReason::RelativeImprovement;
                break;
            }
        }
        evaluations += state.evaluations;
        let end_error = state.error;
        let previous = trace.last().copied();
        trace.push(end_error);
        steps.push(OuterStep {
            refit_error,
            end_error,
            cycles,
            phase_stop,
        });
        predictor = Some(candidate);

        if !moved {
            stop = StopReason::NoChange;
            break;
        }
        if let Some(prev) = previous {
            if rel_gain(prev, end_error) < limits.min_rel_improve {
                stop = StopReason::RelativeImprovement;
                break;
            }
        }
    }

    Ok(JointModel {
        mu,
        sigma,
        contract: contract.label(),
        predictor: predictor.expect("first refit is always accepted"),
        error_trace: trace,
        steps,
        stop,
        refits,
        evaluations,
    })
}
