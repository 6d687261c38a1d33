//! The benchmark's method catalogue: hyper-parameter grids, cross-validated
//! tuning, fitting and prediction behind one interface.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adaptive::{
    expanded_design, fit_adaptive, fit_finite_adaptive, AdaptiveModel, ExpansionMode, MaskedPredictor, PartitionParams,
    PartitionTree,
};
use crate::cv::{kfold_cv, CvMetric};
use crate::data::MaskedDataset;
use crate::elasticnet::{self, ElasticNetSpec, LinearFit};
use crate::error::{invalid, Error, Result};
use crate::joint::{impute_with, joint_fit, Contract, ContractLabel, ErrorMetric, FittedPredictor, JointLimits, JointModel};
use crate::learners::{fit_cart_mia, fit_forest, mean_impute, Forest, MiaTree, TreeParams};
use crate::matrix::Matrix;
use crate::metrics;
use crate::seed;

/// Downstream model of an impute-then-regress method. `Best` selects among
/// the other three by cross-validation on the same folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContractChoice {
    Linear,
    Tree,
    Forest,
    Best,
}

impl ContractChoice {
    fn suffix(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Tree => "tree",
            Self::Forest => "forest",
            Self::Best => "best",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "linear" => Self::Linear,
            "tree" => Self::Tree,
            "forest" => Self::Forest,
            "best" => Self::Best,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Adaptive(ExpansionMode),
    /// Finitely adaptive partition of mask space.
    Finite,
    /// Best of AffineIntercept, Affine and Finite by cross-validation.
    AdaptiveBest,
    Joint(ContractChoice),
    MeanImpute(ContractChoice),
    CartMia,
    RfMia,
    /// Regression on the never-missing columns only.
    CompleteFeatures,
    /// Linear regression on the fully observed design and the mask.
    Oracle,
}

/// Every accepted method name, in catalogue order.
pub const METHOD_NAMES: &[&str] = &[
    "static",
    "affine_intercept",
    "affine",
    "polynomial<t>",
    "fully_adaptive",
    "finite",
    "adaptive_best",
    "joint_linear",
    "joint_tree",
    "joint_forest",
    "joint_best",
    "mean_linear",
    "mean_tree",
    "mean_forest",
    "mean_best",
    "cart_mia",
    "rf_mia",
    "complete_features",
    "oracle",
];

impl Method {
    pub fn name(&self) -> String {
        match self {
            Self::Adaptive(mode) => mode.name(),
            Self::Finite => "finite".into(),
            Self::AdaptiveBest => "adaptive_best".into(),
            Self::Joint(c) => format!("joint_{}", c.suffix()),
            Self::MeanImpute(c) => format!("mean_{}", c.suffix()),
            Self::CartMia => "cart_mia".into(),
            Self::RfMia => "rf_mia".into(),
            Self::CompleteFeatures => "complete_features".into(),
            Self::Oracle => "oracle".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let m = match s {
            "static" => Self::Adaptive(ExpansionMode::Static),
            "affine_intercept" => Self::Adaptive(ExpansionMode::AffineIntercept),
            "affine" => Self::Adaptive(ExpansionMode::Affine),
            "fully_adaptive" => Self::Adaptive(ExpansionMode::FullyAdaptive),
            "finite" => Self::Finite,
            "adaptive_best" => Self::AdaptiveBest,
            "cart_mia" => Self::CartMia,
            "rf_mia" => Self::RfMia,
            "complete_features" => Self::CompleteFeatures,
            "oracle" => Self::Oracle,
            _ => {
                if let Some(t) = s.strip_prefix("polynomial") {
                    match t.parse::<usize>() {
                        Ok(t) if t >= 1 => Self::Adaptive(ExpansionMode::Polynomial(t)),
                        _ => return Err(unknown(s)),
                    }
                } else if let Some(c) = s.strip_prefix("joint_").and_then(ContractChoice::parse) {
                    Self::Joint(c)
                } else if let Some(c) = s.strip_prefix("mean_").and_then(ContractChoice::parse) {
                    Self::MeanImpute(c)
                } else {
                    return Err(unknown(s));
                }
            }
        };
        Ok(m)
    }

    pub fn needs_ground_truth(&self) -> bool {
        matches!(self, Self::Oracle)
    }
}

fn unknown(s: &str) -> Error {
    invalid("method", format!("unknown method `{s}`; valid names: {}", METHOD_NAMES.join(", ")))
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name()
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.name())
    }
}

/// Hyper-parameter grids searched by cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Points on the geometric lambda path of each linear model.
    pub n_lambda: usize,
    pub alphas: Vec<f64>,
    pub tree_max_depth: Vec<usize>,
    pub tree_min_leaf: Vec<usize>,
    pub forest_trees: usize,
    pub forest_max_depth: usize,
    pub forest_min_leaf: usize,
    pub partition_max_depth: Vec<usize>,
    pub partition_min_leaf: usize,
    pub joint: JointLimits,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            n_lambda: 10,
            alphas: vec![1.0],
            tree_max_depth: vec![3, 6],
            tree_min_leaf: vec![5, 20],
            forest_trees: 50,
            forest_max_depth: 8,
            forest_min_leaf: 5,
            partition_max_depth: vec![1, 2, 3],
            partition_min_leaf: 20,
            joint: JointLimits::default(),
        }
    }
}

impl Grids {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambda < 2 {
            return Err(invalid("n_lambda", "must be at least 2"));
        }
        let nonempty = [
            ("alphas", self.alphas.is_empty()),
            ("tree_max_depth", self.tree_max_depth.is_empty()),
            ("tree_min_leaf", self.tree_min_leaf.is_empty()),
            ("partition_max_depth", self.partition_max_depth.is_empty()),
        ];
        if let Some((name, _)) = nonempty.iter().find(|(_, e)| *e) {
            return Err(invalid(name, "must not be empty"));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("alphas", "entries must lie in [0, 1]"));
        }
        if self.forest_trees == 0 {
            return Err(invalid("forest_trees", "must be positive"));
        }
        Ok(())
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Candidate {
    Linear { lambda: f64, alpha: f64 },
    Adaptive { mode: ExpansionMode, lambda: f64, alpha: f64 },
    Partition { max_depth: usize, lambda: f64, alpha: f64 },
    Tree { max_depth: usize, min_leaf: usize },
    Forest { max_depth: usize, min_leaf: usize, n_trees: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FittedModel {
    Adaptive(AdaptiveModel),
    Partition(PartitionTree),
    Joint(JointModel),
    MeanImpute { mu: Vec<f64>, predictor: FittedPredictor },
    Tree(MiaTree),
    Forest(Forest),
    /// `means` fill test entries that are missing in a training-complete
    /// column.
    Complete { d: usize, columns: Vec<usize>, means: Vec<f64>, fit: LinearFit },
    Oracle(LinearFit),
}

impl FittedModel {
    /// Predictions for `data`; the oracle also needs the complete design.
    pub fn predict(&self, data: &MaskedDataset, x_full: Option<&Matrix>) -> Result<Vec<f64>> {
        match self {
            Self::Adaptive(m) => m.predict_dataset(data),
            Self::Partition(m) => m.predict_dataset(data),
            Self::Joint(m) => m.predict_dataset(data),
            Self::Tree(m) => m.predict_dataset(data),
            Self::Forest(m) => m.predict_dataset(data),
            Self::MeanImpute { mu, predictor } => Ok(predictor.predict(&impute_with(data, mu)?)),
            Self::Complete { d, columns, means, fit } => {
                if data.d() != *d {
                    return Err(Error::DimensionMismatch {
                        what: "dataset features",
                        expected: *d,
                        got: data.d(),
                    });
                }
                let mut row = vec![0.0; columns.len()];
                Ok((0..data.n())
                    .map(|i| {
                        for (t, &j) in columns.iter().enumerate() {
                            row[t] = if data.is_missing(i, j) { means[t] } else { data.x()[(i, j)] };
                        }
                        fit.predict_row(&row)
                    })
                    .collect())
            }
            Self::Oracle(fit) => {
                let x = x_full.ok_or_else(|| invalid("x_full", "the oracle needs the fully observed design"))?;
                Ok(fit.predict(&oracle_design(data, x)?))
            }
        }
    }
}

/// `[X_full, M]` as one numeric design.
pub fn oracle_design(data: &MaskedDataset, x_full: &Matrix) -> Result<Matrix> {
    if x_full.rows() != data.n() || x_full.cols() != data.d() {
        return Err(Error::DimensionMismatch {
            what: "x_full shape",
            expected: data.n() * data.d(),
            got: x_full.rows() * x_full.cols(),
        });
    }
    let m = Matrix::from_vec(data.n(), data.d(), data.mask().iter().map(|&v| v as f64).collect())?;
    x_full.hcat(&m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    pub folds: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { folds: 5, seed: 0 }
    }
}

/// A tuned and refitted method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub method: Method,
    pub choice: Candidate,
    /// Mean validation score of `choice`; `None` when the grid had a
    /// single point and no search was run.
    pub cv_score: Option<f64>,
    pub model: FittedModel,
}

fn linear_points(x: &Matrix, y: &[f64], grids: &Grids) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for &alpha in &grids.alphas {
        let spec = ElasticNetSpec {
            alpha,
            ..ElasticNetSpec::default()
        };
        for lambda in elasticnet::lambda_grid(x, y, &spec, grids.n_lambda)? {
            out.push((lambda, alpha));
        }
    }
    Ok(out)
}

fn linear_candidates(x: &Matrix, y: &[f64], grids: &Grids) -> Result<Vec<Candidate>> {
    Ok(linear_points(x, y, grids)?
        .into_iter()
        .map(|(lambda, alpha)| Candidate::Linear { lambda, alpha })
        .collect())
}

fn tree_candidates(grids: &Grids) -> Vec<Candidate> {
    let mut out = Vec::new();
    for &max_depth in &grids.tree_max_depth {
        for &min_leaf in &grids.tree_min_leaf {
            out.push(Candidate::Tree { max_depth, min_leaf });
        }
    }
    out
}

fn forest_candidate(grids: &Grids) -> Candidate {
    Candidate::Forest {
        max_depth: grids.forest_max_depth,
        min_leaf: grids.forest_min_leaf,
        n_trees: grids.forest_trees,
    }
}

fn contract_candidates(choice: ContractChoice, x: &Matrix, y: &[f64], grids: &Grids) -> Result<Vec<Candidate>> {
    Ok(match choice {
        ContractChoice::Linear => linear_candidates(x, y, grids)?,
        ContractChoice::Tree => tree_candidates(grids),
        ContractChoice::Forest => vec![forest_candidate(grids)],
        ContractChoice::Best => {
            let mut all = linear_candidates(x, y, grids)?;
            all.extend(tree_candidates(grids));
            all.push(forest_candidate(grids));
            all
        }
    })
}

fn adaptive_candidates(ds: &MaskedDataset, mode: ExpansionMode, grids: &Grids) -> Result<Vec<Candidate>> {
    let x = expanded_design(ds, grid_mode(mode))?;
    Ok(linear_points(&x, ds.y(), grids)?
        .into_iter()
        .map(|(lambda, alpha)| Candidate::Adaptive { mode, lambda, alpha })
        .collect())
}

fn partition_candidates(ds: &MaskedDataset, grids: &Grids) -> Result<Vec<Candidate>> {
    let points = linear_points(&ds.zero_imputed(), ds.y(), grids)?;
    let mut out = Vec::new();
    for &max_depth in &grids.partition_max_depth {
        for &(lambda, alpha) in &points {
            out.push(Candidate::Partition { max_depth, lambda, alpha });
        }
    }
    Ok(out)
}

/// Mode whose design sets the lambda grid: fully adaptive models are
/// collections of Static fits.
fn grid_mode(mode: ExpansionMode) -> ExpansionMode {
    match mode {
        ExpansionMode::FullyAdaptive => ExpansionMode::Static,
        m => m,
    }
}

/// Candidate grid of `method` on the training set.
pub fn candidates(method: Method, train: &MaskedDataset, x_full: Option<&Matrix>, grids: &Grids) -> Result<Vec<Candidate>> {
    grids.validate()?;
    match method {
        Method::Adaptive(mode) => adaptive_candidates(train, mode, grids),
        Method::Finite => partition_candidates(train, grids),
        Method::AdaptiveBest => {
            let mut all = adaptive_candidates(train, ExpansionMode::AffineIntercept, grids)?;
            all.extend(adaptive_candidates(train, ExpansionMode::Affine, grids)?);
            all.extend(partition_candidates(train, grids)?);
            Ok(all)
        }
        Method::Joint(c) | Method::MeanImpute(c) => {
            let imp = mean_impute(train)?;
            contract_candidates(c, &imp.matrix, train.y(), grids)
        }
        Method::CartMia => Ok(tree_candidates(grids)),
        Method::RfMia => Ok(vec![forest_candidate(grids)]),
        Method::CompleteFeatures => {
            let cols = train.never_missing_columns();
            if cols.is_empty() {
                Ok(vec![Candidate::Linear { lambda: 0.0, alpha: 1.0 }])
            } else {
                linear_candidates(&train.x().select_cols(&cols), train.y(), grids)
            }
        }
        Method::Oracle => {
            let x = x_full.ok_or_else(|| invalid("x_full", "the oracle needs the fully observed design"))?;
            linear_candidates(&oracle_design(train, x)?, train.y(), grids)
        }
    }
}

fn tree_params(max_depth: usize, min_leaf: usize, n_trees: usize, seed: u64) -> TreeParams {
    TreeParams {
        max_depth,
        min_leaf,
        n_trees,
        seed,
        ..TreeParams::default()
    }
}

fn contract_of(c: &Candidate, seed: u64) -> Result<Contract> {
    Ok(match *c {
        Candidate::Linear { lambda, alpha } => Contract::Linear(ElasticNetSpec::with_lambda(lambda, alpha)),
        Candidate::Tree { max_depth, min_leaf } => Contract::Tree(tree_params(max_depth, min_leaf, 1, seed)),
        Candidate::Forest {
            max_depth,
            min_leaf,
            n_trees,
        } => Contract::Forest(tree_params(max_depth, min_leaf, n_trees, seed)),
        _ => return Err(invalid("candidate", "not a downstream regressor")),
    })
}

fn mismatch(method: Method) -> Error {
    invalid("candidate", format!("does not apply to method `{}`", method.name()))
}

/// Fits one grid point of `method` on `train`.
pub fn fit_candidate(
    method: Method,
    candidate: &Candidate,
    train: &MaskedDataset,
    x_full: Option<&Matrix>,
    grids: &Grids,
    seed: u64,
) -> Result<FittedModel> {
    match (method, candidate) {
        (Method::Adaptive(_) | Method::AdaptiveBest, &Candidate::Adaptive { mode, lambda, alpha }) => {
            Ok(FittedModel::Adaptive(fit_adaptive(train, mode, &ElasticNetSpec::with_lambda(lambda, alpha))?))
        }
        (
            Method::Finite | Method::AdaptiveBest,
            &Candidate::Partition {
                max_depth,
                lambda,
                alpha,
            },
        ) => {
            let params = PartitionParams {
                max_depth,
                min_leaf: grids.partition_min_leaf,
                ..PartitionParams::default()
            };
            Ok(FittedModel::Partition(fit_finite_adaptive(
                train,
                &ElasticNetSpec::with_lambda(lambda, alpha),
                &params,
            )?))
        }
        (Method::Joint(_), c) => {
            let contract = contract_of(c, seed)?;
            let metric = ErrorMetric::for_dataset(train);
            Ok(FittedModel::Joint(joint_fit(train, &contract, &grids.joint, metric, seed)?))
        }
        (Method::MeanImpute(_), c) => {
            let imp = mean_impute(train)?;
            let predictor = contract_of(c, seed)?.fit(&imp.matrix, train.y(), seed)?;
            Ok(FittedModel::MeanImpute { mu: imp.mu, predictor })
        }
        (Method::CartMia, &Candidate::Tree { max_depth, min_leaf }) => {
            Ok(FittedModel::Tree(fit_cart_mia(train, &tree_params(max_depth, min_leaf, 1, seed))?))
        }
        (
            Method::RfMia,
            &Candidate::Forest {
                max_depth,
                min_leaf,
                n_trees,
            },
        ) => Ok(FittedModel::Forest(fit_forest(train, &tree_params(max_depth, min_leaf, n_trees, seed))?)),
        (Method::CompleteFeatures, &Candidate::Linear { lambda, alpha }) => {
            train.validate()?;
            let columns = train.never_missing_columns();
            let x = train.x().select_cols(&columns);
            let means = columns.iter().map(|&j| train.observed_mean(j).unwrap_or(0.0)).collect();
            let fit = if columns.is_empty() {
                let mean = train.y().iter().sum::<f64>() / train.n().max(1) as f64;
                LinearFit::constant(mean, 0)
            } else {
                elasticnet::fit(&x, train.y(), &ElasticNetSpec::with_lambda(lambda, alpha))?
            };
            Ok(FittedModel::Complete {
                d: train.d(),
                columns,
                means,
                fit,
            })
        }
        (Method::Oracle, &Candidate::Linear { lambda, alpha }) => {
            let x = x_full.ok_or_else(|| invalid("x_full", "the oracle needs the fully observed design"))?;
            let design = oracle_design(train, x)?;
            Ok(FittedModel::Oracle(elasticnet::fit(
                &design,
                train.y(),
                &ElasticNetSpec::with_lambda(lambda, alpha),
            )?))
        }
        _ => Err(mismatch(method)),
    }
}

/// Tunes `method` by k-fold cross-validation on `train` and refits the
/// chosen grid point on all of `train`. Fold assignment and every fit are
/// seeded from `opts.seed`.
pub fn fit_method(
    method: Method,
    train: &MaskedDataset,
    x_full: Option<&Matrix>,
    grids: &Grids,
    opts: &FitOptions,
) -> Result<Tuned> {
    train.validate()?;
    if method.needs_ground_truth() && x_full.is_none() {
        return Err(invalid("x_full", "the oracle needs the fully observed design"));
    }
    let grid = candidates(method, train, x_full, grids)?;
    let fit_seed = seed::derive(opts.seed, &[1]);
    let (choice, cv_score) = if grid.len() == 1 {
        (grid[0].clone(), None)
    } else {
        let cv_seed = seed::derive(opts.seed, &[0]);
        // the oracle's complete design travels with the rows through the
        // folds as extra columns
        let ds = match x_full {
            Some(x) if method.needs_ground_truth() => append_observed(train, x)?,
            _ => train.clone(),
        };
        let d = train.d();
        let metric = CvMetric::for_dataset(train);
        let result = kfold_cv(&ds, &grid, opts.folds, cv_seed, metric, |c, tr, va| {
            if method.needs_ground_truth() {
                let (tr, xt) = split_padded(tr, d)?;
                let (va, xv) = split_padded(va, d)?;
                fit_candidate(method, c, &tr, Some(&xt), grids, fit_seed)?.predict(&va, Some(&xv))
            } else {
                fit_candidate(method, c, tr, None, grids, fit_seed)?.predict(va, None)
            }
        })?;
        (result.best, Some(result.score))
    };
    let model = fit_candidate(method, &choice, train, x_full, grids, fit_seed)?;
    Ok(Tuned {
        method,
        choice,
        cv_score,
        model,
    })
}

/// `train` with the columns of `extra` appended as always-observed features.
fn append_observed(train: &MaskedDataset, extra: &Matrix) -> Result<MaskedDataset> {
    let (n, d) = (train.n(), train.d());
    let x = train.x().hcat(extra)?;
    let wide = x.cols();
    let mut mask = vec![0u8; n * wide];
    for i in 0..n {
        mask[i * wide..i * wide + d].copy_from_slice(train.mask_row(i));
    }
    MaskedDataset::new(x, mask, train.y().to_vec())
}

fn split_padded(ds: &MaskedDataset, d: usize) -> Result<(MaskedDataset, Matrix)> {
    let first: Vec<usize> = (0..d).collect();
    let rest: Vec<usize> = (d..2 * d).collect();
    let x_full = ds.x().select_cols(&rest);
    Ok((ds.select_features(&first), x_full))
}

/// Out-of-sample score: `2 AUC - 1` for 0/1 targets, `R^2` otherwise.
pub fn test_metric(y: &[f64], pred: &[f64]) -> Result<(&'static str, f64)> {
    let binary = y.iter().all(|&v| v == 0.0 || v == 1.0);
    if binary {
        Ok(("scaled_auc", metrics::scaled_auc(y, pred)?))
    } else {
        Ok(("r2", metrics::r_squared(y, pred)?))
    }
}

/// Contract label of a joint or mean-impute model, if any.
pub fn contract_label(model: &FittedModel) -> Option<ContractLabel> {
    match model {
        FittedModel::Joint(m) => Some(m.contract),
        FittedModel::MeanImpute { predictor, .. } => Some(predictor.label()),
        _ => None,
    }
}

impl core::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}
