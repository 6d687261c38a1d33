//! Adaptive linear regression: models whose coefficients `w_j(m)` depend on
//! the missingness pattern `m`.
//!
//! Each mode is fitted as an ordinary penalised regression over an expanded
//! feature vector. Expanded terms have the form
//!
//! ```text
//! (1 - m_j') x_j' * prod_{j in J} m_j      (coefficient terms, j' not in J)
//! prod_{j in J} m_j                        (intercept terms, |J| >= 1)
//! ```
//!
//! The intercept is treated as an always-observed constant feature, so the
//! intercept adapts through the same class as the coefficients. Term order:
//!
//! - `Static`: `[(1 - m_j) x_j]_j` (`d` terms)
//! - `AffineIntercept`: Static `++ [m_j]_j` (`2d`)
//! - `Affine`: AffineIntercept `++ [m_k (1 - m_j) x_j]` for `j`, then
//!   `k != j` (`d + d^2`; the identically-zero `k = j` terms are the slots
//!   taken by the `m_j` intercept terms)
//! - `Polynomial(t)`: Static, then for each degree `s = 1..=t` the intercept
//!   monomials of degree `s` followed by the coefficient terms of degree `s`
//!   (feature-major, subsets in lexicographic order). `Polynomial(1)` is
//!   exactly `Affine`.
//! - `FullyAdaptive`: one Static model per observed pattern, plus a Static
//!   model over all rows used for patterns never seen in training.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{unique_patterns, MaskedDataset, PatternKey};
use crate::elasticnet::{self, support_penalty_weights, ElasticNetSpec, LinearFit};
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    Static,
    AffineIntercept,
    Affine,
    Polynomial(usize),
    FullyAdaptive,
}

impl ExpansionMode {
    pub fn name(&self) -> alloc::string::String {
        match self {
            Self::Static => "static".into(),
            Self::AffineIntercept => "affine_intercept".into(),
            Self::Affine => "affine".into(),
            Self::Polynomial(t) => format!("polynomial{t}"),
            Self::FullyAdaptive => "fully_adaptive".into(),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        if let Self::Polynomial(t) = *self {
            if t == 0 || t > d {
                return Err(invalid("polynomial degree", format!("{t} is outside [1, {d}]")));
            }
        }
        Ok(())
    }
}

/// One expanded column: `(1 - m_f) x_f` (or 1 without a feature) times the
/// product of the listed mask entries.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Term {
    feature: Option<usize>,
    missing: Vec<usize>,
}

impl Term {
    #[inline]
    fn eval(&self, x: &[f64], m: &[u8]) -> f64 {
        if self.missing.iter().any(|&j| m[j] == 0) {
            return 0.0;
        }
        match self.feature {
            Some(f) if m[f] == 0 => x[f],
            Some(_) => 0.0,
            None => 1.0,
        }
    }
}

/// Lexicographic `k`-subsets of `items`.
fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    if k > n {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // rightmost position that can still advance
        let Some(i) = (0..k).rev().find(|&i| idx[i] < i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for l in i + 1..k {
            idx[l] = idx[l - 1] + 1;
        }
    }
}

fn terms_for(mode: ExpansionMode, d: usize) -> Result<Vec<Term>> {
    mode.check(d)?;
    let static_terms = (0..d).map(|j| Term {
        feature: Some(j),
        missing: Vec::new(),
    });
    let mut terms: Vec<Term> = static_terms.collect();
    let degree = match mode {
        ExpansionMode::Static | ExpansionMode::FullyAdaptive => return Ok(terms),
        ExpansionMode::AffineIntercept => {
            terms.extend((0..d).map(|j| Term {
                feature: None,
                missing: vec![j],
            }));
            return Ok(terms);
        }
        ExpansionMode::Affine => 1,
        ExpansionMode::Polynomial(t) => t,
    };
    let all: Vec<usize> = (0..d).collect();
    for s in 1..=degree {
        terms.extend(subsets(&all, s).into_iter().map(|set| Term {
            feature: None,
            missing: set,
        }));
        for f in 0..d {
            let others: Vec<usize> = all.iter().copied().filter(|&j| j != f).collect();
            terms.extend(subsets(&others, s).into_iter().map(|set| Term {
                feature: Some(f),
                missing: set,
            }));
        }
    }
    Ok(terms)
}

/// Number of expanded columns for a mode (per pattern for `FullyAdaptive`).
pub fn expansion_len(mode: ExpansionMode, d: usize) -> Result<usize> {
    Ok(terms_for(mode, d)?.len())
}

/// Expanded feature vector of one observation. `FullyAdaptive` returns the
/// Static expansion.
pub fn expand(x: &[f64], m: &[u8], mode: ExpansionMode) -> Result<Vec<f64>> {
    if x.len() != m.len() {
        return Err(Error::DimensionMismatch {
            what: "mask length",
            expected: x.len(),
            got: m.len(),
        });
    }
    Ok(terms_for(mode, x.len())?
        .iter()
        .map(|t| t.eval(x, m))
        .collect())
}

fn design_from_terms(ds: &MaskedDataset, terms: &[Term]) -> Matrix {
    let mut out = Matrix::zeros(ds.n(), terms.len());
    for i in 0..ds.n() {
        let (x, m) = (ds.x_row(i), ds.mask_row(i));
        for (slot, t) in out.row_mut(i).iter_mut().zip(terms) {
            *slot = t.eval(x, m);
        }
    }
    out
}

/// Row-wise expansion of a whole dataset.
pub fn expanded_design(ds: &MaskedDataset, mode: ExpansionMode) -> Result<Matrix> {
    Ok(design_from_terms(ds, &terms_for(mode, ds.d())?))
}

/// A fitted model that predicts from an observation `x` and its mask `m`.
pub trait MaskedPredictor {
    /// Number of original features.
    fn d(&self) -> usize;

    /// Prediction without the dimension check.
    fn predict_unchecked(&self, x: &[f64], m: &[u8]) -> f64;

    fn predict(&self, x: &[f64], m: &[u8]) -> Result<f64> {
        if x.len() != self.d() || m.len() != self.d() {
            return Err(Error::DimensionMismatch {
                what: "observation length",
                expected: self.d(),
                got: if x.len() != self.d() { x.len() } else { m.len() },
            });
        }
        Ok(self.predict_unchecked(x, m))
    }

    fn predict_dataset(&self, ds: &MaskedDataset) -> Result<Vec<f64>> {
        if ds.d() != self.d() {
            return Err(Error::DimensionMismatch {
                what: "dataset features",
                expected: self.d(),
                got: ds.d(),
            });
        }
        Ok((0..ds.n())
            .map(|i| self.predict_unchecked(ds.x_row(i), ds.mask_row(i)))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternModel {
    pub pattern: PatternKey,
    pub rows: usize,
    pub fit: LinearFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveModel {
    pub mode: ExpansionMode,
    pub d: usize,
    /// Number of fitted coefficients, `p(F)`.
    pub expansion_size: usize,
    /// Model over the expanded design; for `FullyAdaptive`, the Static
    /// model used for unseen patterns.
    pub fit: LinearFit,
    /// Per-pattern models (`FullyAdaptive` only), sorted by pattern.
    #[serde(default)]
    pub patterns: Vec<PatternModel>,
}

impl MaskedPredictor for AdaptiveModel {
    fn d(&self) -> usize {
        self.d
    }

    fn predict_unchecked(&self, x: &[f64], m: &[u8]) -> f64 {
        if self.mode == ExpansionMode::FullyAdaptive {
            let key = PatternKey::from_mask(m);
            let fit = self
                .patterns
                .binary_search_by(|p| p.pattern.cmp(&key))
                .map_or(&self.fit, |i| &self.patterns[i].fit);
            return static_predict(fit, x, m);
        }
        // terms are cheap to rebuild relative to a fit, but predicting many
        // rows should go through predict_dataset
        let terms = terms_for(self.mode, self.d).expect("mode validated at fit time");
        let z: Vec<f64> = terms.iter().map(|t| t.eval(x, m)).collect();
        self.fit.predict_row(&z)
    }

    fn predict_dataset(&self, ds: &MaskedDataset) -> Result<Vec<f64>> {
        if ds.d() != self.d {
            return Err(Error::DimensionMismatch {
                what: "dataset features",
                expected: self.d,
                got: ds.d(),
            });
        }
        if self.mode == ExpansionMode::FullyAdaptive {
            return Ok((0..ds.n())
                .map(|i| self.predict_unchecked(ds.x_row(i), ds.mask_row(i)))
                .collect());
        }
        Ok(self.fit.predict(&expanded_design(ds, self.mode)?))
    }
}

#[inline]
fn static_predict(fit: &LinearFit, x: &[f64], m: &[u8]) -> f64 {
    fit.intercept + crate::data::masked_dot_unchecked(&fit.coefficients, x, m)
}

fn fit_static_rows(ds: &MaskedDataset, spec: &ElasticNetSpec) -> Result<LinearFit> {
    let design = ds.zero_imputed();
    let spec = ElasticNetSpec {
        penalty_weights: Some(support_penalty_weights(&design)),
        ..spec.clone()
    };
    elasticnet::fit(&design, ds.y(), &spec)
}

/// Fits an adaptive model. Penalty weights are recomputed from the support
/// of each expanded column, overriding `spec.penalty_weights`.
pub fn fit_adaptive(ds: &MaskedDataset, mode: ExpansionMode, spec: &ElasticNetSpec) -> Result<AdaptiveModel> {
    ds.validate()?;
    if ds.n() == 0 {
        return Err(Error::Empty);
    }
    if ds.n() < 2 {
        return Err(invalid("dataset", "needs at least two rows"));
    }
    let d = ds.d();
    let terms = terms_for(mode, d)?;
    if mode == ExpansionMode::FullyAdaptive {
        let fallback = fit_static_rows(ds, spec)?;
        let mut patterns = Vec::new();
        for (pattern, rows) in unique_patterns(ds) {
            let fit = fit_static_rows(&ds.subset(&rows), spec)?;
            patterns.push(PatternModel {
                pattern,
                rows: rows.len(),
                fit,
            });
        }
        return Ok(AdaptiveModel {
            mode,
            d,
            expansion_size: d * patterns.len(),
            fit: fallback,
            patterns,
        });
    }
    let design = design_from_terms(ds, &terms);
    let spec = ElasticNetSpec {
        penalty_weights: Some(support_penalty_weights(&design)),
        ..spec.clone()
    };
    let fit = elasticnet::fit(&design, ds.y(), &spec)?;
    Ok(AdaptiveModel {
        mode,
        d,
        expansion_size: terms.len(),
        fit,
        patterns: Vec::new(),
    })
}

/// Imputed value for one feature read off an affine-intercept model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputedValue {
    /// `b_j / w_j`, or 0 when invalid.
    pub value: f64,
    /// False when `|w_j| < 1e-8`: the missingness indicator then carries
    /// signal on its own and no imputed value reproduces it.
    pub valid: bool,
}

/// Reads `mu_j = b_j / w_j` off a model with mode `AffineIntercept`, where
/// `w_j` multiplies `(1 - m_j) x_j` and `b_j` multiplies `m_j`.
pub fn extract_imputation(model: &AdaptiveModel) -> Result<Vec<ImputedValue>> {
    if model.mode != ExpansionMode::AffineIntercept {
        return Err(Error::WrongMode {
            expected: "affine_intercept",
            got: model.mode.name(),
        });
    }
    let d = model.d;
    let c = &model.fit.coefficients;
    Ok((0..d)
        .map(|j| {
            let (w, b) = (c[j], c[d + j]);
            if w.abs() < 1e-8 {
                ImputedValue {
                    value: 0.0,
                    valid: false,
                }
            } else {
                ImputedValue {
                    value: b / w,
                    valid: true,
                }
            }
        })
        .collect())
}

/// Stopping rules for finitely adaptive regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Minimum relative reduction of in-sample squared error for a split.
    pub min_gain: f64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf: 20,
            min_gain: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionNode {
    Leaf {
        fit: LinearFit,
        rows: usize,
    },
    /// Patterns with `m_feature = 0` go to `observed`, the rest to `missing`.
    Split {
        feature: usize,
        observed: Box<PartitionNode>,
        missing: Box<PartitionNode>,
    },
}

impl PartitionNode {
    pub fn depth(&self) -> usize {
        match self {
            Self::Leaf { .. } => 0,
            Self::Split {
                observed, missing, ..
            } => 1 + observed.depth().max(missing.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<&PartitionNode> {
        match self {
            Self::Leaf { .. } => vec![self],
            Self::Split {
                observed, missing, ..
            } => {
                let mut v = observed.leaves();
                v.extend(missing.leaves());
                v
            }
        }
    }
}

/// Partition of pattern space with one Static model per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub d: usize,
    pub root: PartitionNode,
}

impl PartitionTree {
    /// Leaf index (in [`PartitionNode::leaves`] order) reached by `m`.
    pub fn route(&self, m: &[u8]) -> usize {
        fn go(node: &PartitionNode, m: &[u8], offset: usize) -> usize {
            match node {
                PartitionNode::Leaf { .. } => offset,
                PartitionNode::Split {
                    feature,
                    observed,
                    missing,
                } => {
                    if m[*feature] == 0 {
                        go(observed, m, offset)
                    } else {
                        go(missing, m, offset + observed.leaves().len())
                    }
                }
            }
        }
        go(&self.root, m, 0)
    }

    fn leaf_fit(&self, m: &[u8]) -> &LinearFit {
        let mut node = &self.root;
        loop {
            match node {
                PartitionNode::Leaf { fit, .. } => return fit,
                PartitionNode::Split {
                    feature,
                    observed,
                    missing,
                } => node = if m[*feature] == 0 { observed } else { missing },
            }
        }
    }
}

impl MaskedPredictor for PartitionTree {
    fn d(&self) -> usize {
        self.d
    }

    fn predict_unchecked(&self, x: &[f64], m: &[u8]) -> f64 {
        static_predict(self.leaf_fit(m), x, m)
    }
}

/// Score of splitting a set of rows on the missingness of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    /// Summed in-sample squared error of the two Static fits; `None` when
    /// one side would hold fewer than `min_leaf` rows.
    pub sse: Option<f64>,
}

fn sse(fit: &LinearFit, ds: &MaskedDataset) -> f64 {
    (0..ds.n())
        .map(|i| {
            let e = ds.y()[i] - static_predict(fit, ds.x_row(i), ds.mask_row(i));
            e * e
        })
        .sum()
}

/// Evaluates every feature as a split of `ds` (in feature order).
pub fn split_candidates(ds: &MaskedDataset, spec: &ElasticNetSpec, min_leaf: usize) -> Result<Vec<SplitCandidate>> {
    let min_leaf = min_leaf.max(1);
    let mut out = Vec::with_capacity(ds.d());
    for j in 0..ds.d() {
        let (obs, mis): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| !ds.is_missing(i, j));
        if obs.len() < min_leaf || mis.len() < min_leaf {
            out.push(SplitCandidate {
                feature: j,
                sse: None,
            });
            continue;
        }
        let (a, b) = (ds.subset(&obs), ds.subset(&mis));
        let total = sse(&fit_static_rows(&a, spec)?, &a) + sse(&fit_static_rows(&b, spec)?, &b);
        out.push(SplitCandidate {
            feature: j,
            sse: Some(total),
        });
    }
    Ok(out)
}

/// Greedy recursive partitioning of pattern space: each cell is split on the
/// feature whose missingness gives the lowest summed squared error of two
/// Static fits, lowest index on ties.
pub fn fit_finite_adaptive(ds: &MaskedDataset, spec: &ElasticNetSpec, params: &PartitionParams) -> Result<PartitionTree> {
    ds.validate()?;
    if ds.n() == 0 {
        return Err(Error::Empty);
    }
    let root = grow(ds, spec, params, 0)?;
    Ok(PartitionTree { d: ds.d(), root })
}

fn grow(ds: &MaskedDataset, spec: &ElasticNetSpec, params: &PartitionParams, depth: usize) -> Result<PartitionNode> {
    let fit = fit_static_rows(ds, spec)?;
    let leaf_sse = sse(&fit, ds);
    let leaf = PartitionNode::Leaf { fit, rows: ds.n() };
    if depth >= params.max_depth || ds.n() < 2 * params.min_leaf.max(1) || leaf_sse <= 0.0 {
        return Ok(leaf);
    }
    let best = split_candidates(ds, spec, params.min_leaf)?
        .into_iter()
        .filter_map(|c| c.sse.map(|s| (c.feature, s)))
        .fold(None, |acc: Option<(usize, f64)>, (j, s)| match acc {
            Some((_, bs)) if bs <= s => acc,
            _ => Some((j, s)),
        });
    let Some((feature, split_sse)) = best else {
        return Ok(leaf);
    };
    if (leaf_sse - split_sse) / leaf_sse < params.min_gain {
        return Ok(leaf);
    }
    let (obs, mis): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| !ds.is_missing(i, feature));
    Ok(PartitionNode::Split {
        feature,
        observed: Box::new(grow(&ds.subset(&obs), spec, params, depth + 1)?),
        missing: Box::new(grow(&ds.subset(&mis), spec, params, depth + 1)?),
    })
}
