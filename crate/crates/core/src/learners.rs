//! Tree learners that consume missing data directly through MIA ("missing
//! incorporated in attribute") splits, and the mean-imputation baseline.
//!
//! At each node the candidates for feature `j` are the midpoints between
//! consecutive distinct observed values, each paired with both choices of
//! the side that missing values take, plus the split "observed vs missing".
//! Candidates are scanned in the order
//! `(j ascending, threshold ascending, missing-left before missing-right)`
//! followed by the observed-vs-missing split of `j`; only a strictly better
//! impurity replaces the incumbent.
//!
//! Leaves store the mean training target. For 0/1 targets that is the
//! class-1 frequency, and the squared-error impurity is half the Gini
//! impurity times the node size, so regression and classification trees
//! pick the same splits.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::MaskedPredictor;
use crate::data::MaskedDataset;
use crate::error::{invalid, Error, Result};
use crate::float::{ceil, sqrt};
use crate::joint::impute_with;
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Forest size; ignored by single trees.
    pub n_trees: usize,
    /// Features sampled per split; `None` means `ceil(sqrt(d))` for forests
    /// and all features for single trees.
    pub mtry: Option<usize>,
    /// Bootstrap resampling per tree. Off only for testing.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf: 5,
            n_trees: 100,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TreeParams {
    fn check(&self, d: usize) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(invalid("min_leaf", "must be positive"));
        }
        if self.max_depth == 0 {
            return Err(invalid("max_depth", "must be positive"));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > d {
                return Err(invalid("mtry", alloc::format!("{m} is outside [1, {d}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Observed `x <= threshold` goes left; missing values go left iff
    /// `missing_left`.
    Threshold { threshold: f64, missing_left: bool },
    /// Observed values go left, missing values go right.
    IsMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiaNode {
    Leaf {
        value: f64,
        rows: usize,
    },
    Split {
        feature: usize,
        rule: SplitRule,
        left: Box<MiaNode>,
        right: Box<MiaNode>,
    },
}

impl MiaNode {
    pub fn depth(&self) -> usize {
        match self {
            Self::Leaf { .. } => 0,
            Self::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Self::Leaf { .. } => 1,
            Self::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

#[inline]
fn goes_left(rule: &SplitRule, x: f64, missing: bool) -> bool {
    match *rule {
        SplitRule::Threshold {
            threshold,
            missing_left,
        } => {
            if missing {
                missing_left
            } else {
                x <= threshold
            }
        }
        SplitRule::IsMissing => !missing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaTree {
    pub d: usize,
    pub root: MiaNode,
}

impl MiaTree {
    /// Leaf reached by `(x, m)`.
    pub fn leaf(&self, x: &[f64], m: &[u8]) -> &MiaNode {
        let mut node = &self.root;
        while let MiaNode::Split {
            feature,
            rule,
            left,
            right,
        } = node
        {
            node = if goes_left(rule, x[*feature], m[*feature] != 0) {
                left
            } else {
                right
            };
        }
        node
    }

    /// Prediction for a fully observed row.
    pub fn predict_dense(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                MiaNode::Leaf { value, .. } => return *value,
                MiaNode::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => node = if goes_left(rule, x[*feature], false) { left } else { right },
            }
        }
    }
}

impl MaskedPredictor for MiaTree {
    fn d(&self) -> usize {
        self.d
    }

    fn predict_unchecked(&self, x: &[f64], m: &[u8]) -> f64 {
        match self.leaf(x, m) {
            MiaNode::Leaf { value, .. } => *value,
            MiaNode::Split { .. } => unreachable!("leaf() stops at leaves"),
        }
    }
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSplit {
    pub feature: usize,
    pub rule: SplitRule,
    /// Summed squared error of the two children.
    pub child_sse: f64,
}

#[derive(Clone, Copy, Default)]
struct Stats {
    n: usize,
    sum: f64,
    sq: f64,
}

impl Stats {
    fn push(&mut self, y: f64) {
        self.n += 1;
        self.sum += y;
        self.sq += y * y;
    }

    fn plus(self, o: Stats) -> Stats {
        Stats {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sq: self.sq + o.sq,
        }
    }

    fn minus(self, o: Stats) -> Stats {
        Stats {
            n: self.n - o.n,
            sum: self.sum - o.sum,
            sq: self.sq - o.sq,
        }
    }

    fn sse(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sq - self.sum * self.sum / self.n as f64).max(0.0)
        }
    }
}

/// Best MIA split of `rows` over `features` (which must be ascending), or
/// `None` when no admissible split reduces the squared error.
pub fn best_split(ds: &MaskedDataset, rows: &[usize], features: &[usize], min_leaf: usize) -> Option<NodeSplit> {
    let y = ds.y();
    let mut total = Stats::default();
    rows.iter().for_each(|&i| total.push(y[i]));
    let parent = total.sse();
    let mut best: Option<NodeSplit> = None;
    let mut best_sse = parent - 1e-12 * parent.max(1e-300);
    let mut consider = |feature: usize, rule: SplitRule, left: Stats, right: Stats| {
        if left.n < min_leaf || right.n < min_leaf {
            return;
        }
        let s = left.sse() + right.sse();
        if s < best_sse {
            best_sse = s;
            best = Some(NodeSplit {
                feature,
                rule,
                child_sse: s,
            });
        }
    };
    let mut observed: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for &j in features {
        observed.clear();
        let mut missing = Stats::default();
        for &i in rows {
            if ds.is_missing(i, j) {
                missing.push(y[i]);
            } else {
                observed.push((ds.x()[(i, j)], y[i]));
            }
        }
        observed.sort_by(|a, b| a.0.total_cmp(&b.0));
        let obs_total = total.minus(missing);
        let mut prefix = Stats::default();
        for k in 0..observed.len().saturating_sub(1) {
            prefix.push(observed[k].1);
            let (lo, hi) = (observed[k].0, observed[k + 1].0);
            if lo == hi {
                continue;
            }
            let threshold = lo + (hi - lo) / 2.0;
            let rest = obs_total.minus(prefix);
            consider(
                j,
                SplitRule::Threshold {
                    threshold,
                    missing_left: true,
                },
                prefix.plus(missing),
                rest,
            );
            consider(
                j,
                SplitRule::Threshold {
                    threshold,
                    missing_left: false,
                },
                prefix,
                rest.plus(missing),
            );
        }
        consider(j, SplitRule::IsMissing, obs_total, missing);
    }
    best
}

struct Grower<'a> {
    ds: &'a MaskedDataset,
    params: &'a TreeParams,
    mtry: usize,
    rng: Option<ChaCha8Rng>,
}

impl Grower<'_> {
    fn features(&mut self) -> Vec<usize> {
        let d = self.ds.d();
        match self.rng.as_mut() {
            Some(rng) if self.mtry < d => {
                let mut f = index::sample(rng, d, self.mtry).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> MiaNode {
        let y = self.ds.y();
        let value = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        let leaf = MiaNode::Leaf {
            value,
            rows: rows.len(),
        };
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return leaf;
        }
        let features = self.features();
        let Some(split) = best_split(self.ds, &rows, &features, self.params.min_leaf) else {
            return leaf;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| {
            goes_left(
                &split.rule,
                self.ds.x()[(i, split.feature)],
                self.ds.is_missing(i, split.feature),
            )
        });
        MiaNode::Split {
            feature: split.feature,
            rule: split.rule,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
        }
    }
}

fn check_dataset(ds: &MaskedDataset, params: &TreeParams) -> Result<()> {
    ds.validate()?;
    if ds.n() == 0 {
        return Err(Error::Empty);
    }
    params.check(ds.d())
}

/// Single CART tree with MIA splits over all features.
pub fn fit_cart_mia(ds: &MaskedDataset, params: &TreeParams) -> Result<MiaTree> {
    check_dataset(ds, params)?;
    let mut grower = Grower {
        ds,
        params,
        mtry: params.mtry.unwrap_or(ds.d()),
        rng: params.mtry.map(|_| seed::rng(params.seed)),
    };
    let root = grower.grow((0..ds.n()).collect(), 0);
    Ok(MiaTree { d: ds.d(), root })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub d: usize,
    pub trees: Vec<MiaTree>,
    pub seeds: Vec<u64>,
    pub mtry: usize,
}

impl MaskedPredictor for Forest {
    fn d(&self) -> usize {
        self.d
    }

    fn predict_unchecked(&self, x: &[f64], m: &[u8]) -> f64 {
        self.trees
            .iter()
            .map(|t| t.predict_unchecked(x, m))
            .sum::<f64>()
            / self.trees.len() as f64
    }
}

impl Forest {
    pub fn predict_dense(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_dense(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Bagged MIA trees. Tree `t` uses the seed `derive(params.seed, [t])` for
/// both its bootstrap sample and its per-split feature sampling.
pub fn fit_forest(ds: &MaskedDataset, params: &TreeParams) -> Result<Forest> {
    check_dataset(ds, params)?;
    if params.n_trees == 0 {
        return Err(invalid("n_trees", "must be positive"));
    }
    let d = ds.d();
    let mtry = params
        .mtry
        .unwrap_or_else(|| (ceil(sqrt(d as f64)) as usize).clamp(1, d.max(1)));
    let n = ds.n();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut seeds = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let s = seed::derive(params.seed, &[t as u64]);
        let mut rng = seed::rng(s);
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut grower = Grower {
            ds,
            params,
            mtry,
            rng: Some(rng),
        };
        let root = grower.grow(rows, 0);
        trees.push(MiaTree { d, root });
        seeds.push(s);
    }
    Ok(Forest {
        d,
        trees,
        seeds,
        mtry,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanImputation {
    pub mu: Vec<f64>,
    /// Columns with no observed entry; their `mu` is 0.
    pub all_missing: Vec<bool>,
    pub matrix: Matrix,
}

/// Imputes each missing entry by the observed mean of its column.
pub fn mean_impute(ds: &MaskedDataset) -> Result<MeanImputation> {
    let means: Vec<Option<f64>> = (0..ds.d()).map(|j| ds.observed_mean(j)).collect();
    let mu: Vec<f64> = means.iter().map(|m| m.unwrap_or(0.0)).collect();
    let matrix = impute_with(ds, &mu)?;
    Ok(MeanImputation {
        all_missing: means.iter().map(Option::is_none).collect(),
        mu,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand_distr::StandardNormal;

    fn random_masked(n: usize, d: usize, p: f64, seed: u64) -> MaskedDataset {
        let mut rng = seed::rng(seed);
        let mut x = Matrix::zeros(n, d);
        let mut m = vec![0u8; n * d];
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = (rng.sample::<f64, _>(StandardNormal) * 4.0).round() / 4.0;
                m[i * d + j] = rng.random_bool(p) as u8;
            }
            y[i] = x[(i, 0)] - 2.0 * m[i * d + 1] as f64 + rng.sample::<f64, _>(StandardNormal);
        }
        MaskedDataset::new(x, m, y).unwrap()
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let ds = MaskedDataset::from_rows(&[[1.0], [2.0], [3.0], [4.0]], &[[0u8]; 4], &[5.0; 4]).unwrap();
        let tree = fit_cart_mia(&ds, &TreeParams { min_leaf: 1, ..Default::default() }).unwrap();
        assert_eq!(tree.root, MiaNode::Leaf { value: 5.0, rows: 4 });
    }

    #[test]
    fn isolates_missingness_signal() {
        let mut rng = seed::rng(3);
        let (mut x, mut m, mut y) = (vec![], vec![], vec![]);
        for _ in 0..200 {
            let miss = rng.random_bool(0.5) as u8;
            x.push([rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]);
            m.push([miss, 0u8]);
            y.push(10.0 * miss as f64 + 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
        let ds = MaskedDataset::from_rows(&x, &m, &y).unwrap();
        let tree = fit_cart_mia(&ds, &TreeParams { max_depth: 1, min_leaf: 5, ..Default::default() }).unwrap();
        let MiaNode::Split { feature, rule, left, right } = &tree.root else {
            panic!("expected split")
        };
        assert_eq!(*feature, 0);
        let routed_missing = if goes_left(rule, 0.0, true) { left } else { right };
        let routed_observed = if goes_left(rule, 0.0, true) { right } else { left };
        let value = |n: &MiaNode| match n {
            MiaNode::Leaf { value, .. } => *value,
            _ => panic!(),
        };
        assert!((value(routed_missing) - 10.0).abs() < 0.5);
        assert!(value(routed_observed).abs() < 0.5);
    }

    /// Direct two-pass SSE of a candidate.
    fn candidate_sse(ds: &MaskedDataset, feature: usize, rule: SplitRule) -> Option<f64> {
        let (mut l, mut r) = (vec![], vec![]);
        for i in 0..ds.n() {
            if goes_left(&rule, ds.x()[(i, feature)], ds.is_missing(i, feature)) {
                l.push(ds.y()[i]);
            } else {
                r.push(ds.y()[i]);
            }
        }
        if l.is_empty() || r.is_empty() {
            return None;
        }
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m) * (a - m)).sum::<f64>()
        };
        Some(sse(&l) + sse(&r))
    }

    #[test]
    fn root_split_matches_brute_force() {
        for s in 0..10 {
            let ds = random_masked(50, 3, 0.25, 100 + s);
            let found = best_split(&ds, &(0..50).collect::<Vec<_>>(), &[0, 1, 2], 1).unwrap();
            // enumerate every (j, tau, side) candidate independently
            let mut all = vec![];
            for j in 0..3 {
                let mut vals: Vec<f64> = (0..50).filter(|&i| !ds.is_missing(i, j)).map(|i| ds.x()[(i, j)]).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                for w in vals.windows(2) {
                    let t = w[0] + (w[1] - w[0]) / 2.0;
                    for side in [true, false] {
                        let rule = SplitRule::Threshold { threshold: t, missing_left: side };
                        if let Some(v) = candidate_sse(&ds, j, rule) {
                            all.push((v, j, rule));
                        }
                    }
                }
                if let Some(v) = candidate_sse(&ds, j, SplitRule::IsMissing) {
                    all.push((v, j, SplitRule::IsMissing));
                }
            }
            let best = all.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            assert!((found.child_sse - best).abs() < 1e-9, "seed {s}");
            let first = all.iter().find(|c| c.0 <= best + 1e-9).unwrap();
            assert_eq!((found.feature, found.rule), (first.1, first.2), "seed {s}");
        }
    }

    #[test]
    fn leaf_values_are_training_means() {
        let ds = random_masked(120, 3, 0.2, 8);
        let tree = fit_cart_mia(&ds, &TreeParams { max_depth: 3, min_leaf: 5, ..Default::default() }).unwrap();
        let mut sums = alloc::collections::BTreeMap::new();
        for i in 0..ds.n() {
            let leaf = tree.leaf(ds.x_row(i), ds.mask_row(i)) as *const MiaNode as usize;
            let e = sums.entry(leaf).or_insert((0.0, 0usize));
            e.0 += ds.y()[i];
            e.1 += 1;
        }
        for i in 0..ds.n() {
            let leaf = tree.leaf(ds.x_row(i), ds.mask_row(i));
            let (s, c) = sums[&(leaf as *const MiaNode as usize)];
            let MiaNode::Leaf { value, rows } = leaf else { panic!() };
            assert_eq!(*rows, c);
            assert!((value - s / c as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let ds = random_masked(80, 4, 0.3, 21);
        let params = TreeParams { max_depth: 4, min_leaf: 3, n_trees: 1, mtry: Some(4), bootstrap: false, seed: 5 };
        let forest = fit_forest(&ds, &params).unwrap();
        let tree = fit_cart_mia(&ds, &TreeParams { mtry: None, ..params }).unwrap();
        assert_eq!(forest.trees[0], tree);
        assert_eq!(forest.predict_dataset(&ds).unwrap(), tree.predict_dataset(&ds).unwrap());
    }

    #[test]
    fn forest_is_seed_deterministic_and_ignores_masked_values() {
        let ds = random_masked(60, 3, 0.3, 2);
        let params = TreeParams { n_trees: 10, max_depth: 4, min_leaf: 2, ..Default::default() };
        let a = fit_forest(&ds, &params).unwrap();
        assert_eq!(a, fit_forest(&ds, &params).unwrap());
        let mut scrambled = ds.x().clone();
        for i in 0..ds.n() {
            for j in 0..ds.d() {
                if ds.is_missing(i, j) {
                    scrambled[(i, j)] = 1e6 * (i + j) as f64;
                }
            }
        }
        let ds2 = ds.with_x(scrambled).unwrap();
        let b = fit_forest(&ds2, &params).unwrap();
        assert_eq!(a.predict_dataset(&ds).unwrap(), b.predict_dataset(&ds2).unwrap());
    }

    #[test]
    fn routing_is_total_for_unseen_patterns() {
        let ds = random_masked(60, 3, 0.0, 4);
        let tree = fit_cart_mia(&ds, &TreeParams { max_depth: 5, min_leaf: 2, ..Default::default() }).unwrap();
        for bits in 0..8u8 {
            let m = [bits & 1, (bits >> 1) & 1, (bits >> 2) & 1];
            assert!(matches!(tree.leaf(&[0.1, -0.2, 0.3], &m), MiaNode::Leaf { .. }));
        }
    }

    #[test]
    fn mean_impute_examples() {
        let ds = MaskedDataset::from_rows(&[[1.0, 4.0], [99.0, 5.0], [3.0, 6.0]], &[[0u8, 0], [1, 0], [0, 0]], &[0.0; 3]).unwrap();
        let imp = mean_impute(&ds).unwrap();
        assert_eq!(imp.mu, vec![2.0, 5.0]);
        assert_eq!(imp.matrix.column(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(imp.matrix.column(1), vec![4.0, 5.0, 6.0]);
        let all = MaskedDataset::from_rows(&[[1.0], [2.0]], &[[1u8], [1]], &[0.0; 2]).unwrap();
        let imp = mean_impute(&all).unwrap();
        assert_eq!(imp.mu, vec![0.0]);
        assert_eq!(imp.all_missing, vec![true]);
    }
}
