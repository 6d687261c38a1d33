//! Penalised least squares by cyclic coordinate descent.
//!
//! Minimises, over an intercept `b` and coefficients `w`,
//!
//! ```text
//! (1/2n) ||y - b - X w||^2 + lambda * sum_j c_j * (alpha |w_j| + (1 - alpha)/2 w_j^2)
//! ```
//!
//! where `c_j` are per-feature penalty weights. With `standardize` set (the
//! default) the penalty applies to coefficients of the standardised columns,
//! as glmnet does, and the result is mapped back to the original scale.
//!
//! The solver works on the Gram matrix of the centred (and scaled) design,
//! so each sweep costs `O(p^2)` regardless of `n`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::float::{powf, sqrt};
use crate::matrix::Matrix;

/// Columns whose scale falls below this are treated as constant.
const ZERO_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetSpec {
    pub lambda: f64,
    /// Weight of the l1 term, in `[0, 1]`.
    pub alpha: f64,
    /// Per-column penalty multipliers; `None` means all ones.
    pub penalty_weights: Option<Vec<f64>>,
    pub fit_intercept: bool,
    pub standardize: bool,
    pub max_iters: usize,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
}

impl Default for ElasticNetSpec {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha: 1.0,
            penalty_weights: None,
            fit_intercept: true,
            standardize: true,
            max_iters: 10_000,
            tol: 1e-7,
        }
    }
}

impl ElasticNetSpec {
    pub fn with_lambda(lambda: f64, alpha: f64) -> Self {
        Self {
            lambda,
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("lambda", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha", "must lie in [0, 1]"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be positive"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if let Some(w) = &self.penalty_weights {
            if w.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "penalty weights",
                    expected: p,
                    got: w.len(),
                });
            }
            if w.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(invalid("penalty_weights", "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn weight(&self, j: usize) -> f64 {
        self.penalty_weights.as_ref().map_or(1.0, |w| w[j])
    }
}

/// Fitted linear model on the original column scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Objective after each full sweep (solver scale). Non-increasing.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl LinearFit {
    pub fn constant(intercept: f64, p: usize) -> Self {
        Self {
            intercept,
            coefficients: vec![0.0; p],
            objective_trace: Vec::new(),
            converged: true,
            iterations: 0,
        }
    }

    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn nonzeros(&self) -> usize {
        self.coefficients.iter().filter(|w| **w != 0.0).count()
    }
}

/// `sign(z) * max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Per-column penalty multipliers from column support: `n / nnz_j`,
/// clamped to `[1, 100]`. Columns that are rarely non-zero (such as
/// missingness indicators of rarely missing features) are penalised more.
pub fn support_penalty_weights(x: &Matrix) -> Vec<f64> {
    let n = x.rows() as f64;
    (0..x.cols())
        .map(|j| {
            let nnz = x.iter_rows().filter(|r| r[j] != 0.0).count();
            if nnz == 0 {
                100.0
            } else {
                (n / nnz as f64).clamp(1.0, 100.0)
            }
        })
        .collect()
}

/// Centred/scaled problem in Gram form.
struct Prepared {
    p: usize,
    x_mean: Vec<f64>,
    y_mean: f64,
    scale: Vec<f64>,
    active: Vec<bool>,
    gram: Vec<f64>,
    xty: Vec<f64>,
    yy: f64,
}

impl Prepared {
    fn new(x: &Matrix, y: &[f64], spec: &ElasticNetSpec) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        if n == 0 {
            return Err(Error::Empty);
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "target length",
                expected: n,
                got: y.len(),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("design matrix"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        let nf = n as f64;
        let (x_mean, y_mean) = if spec.fit_intercept {
            let mut m = vec![0.0; p];
            for r in x.iter_rows() {
                for (mj, v) in m.iter_mut().zip(r) {
                    *mj += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= nf);
            (m, y.iter().sum::<f64>() / nf)
        } else {
            (vec![0.0; p], 0.0)
        };

        let mut scale = vec![0.0; p];
        for r in x.iter_rows() {
            for j in 0..p {
                let c = r[j] - x_mean[j];
                scale[j] += c * c;
            }
        }
        let mut active = vec![true; p];
        for j in 0..p {
            let s = sqrt(scale[j] / nf);
            if s <= ZERO_SCALE * (1.0 + x_mean[j].abs()) {
                active[j] = false;
                scale[j] = 1.0;
            } else {
                scale[j] = if spec.standardize { s } else { 1.0 };
            }
        }

        let mut gram = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut yy = 0.0;
        let mut z = vec![0.0; p];
        for (i, r) in x.iter_rows().enumerate() {
            for j in 0..p {
                z[j] = if active[j] {
                    (r[j] - x_mean[j]) / scale[j]
                } else {
                    0.0
                };
            }
            let yc = y[i] - y_mean;
            yy += yc * yc;
            for j in 0..p {
                let zj = z[j];
                if zj == 0.0 {
                    continue;
                }
                xty[j] += zj * yc;
                let row = &mut gram[j * p..(j + 1) * p];
                for k in j..p {
                    row[k] += zj * z[k];
                }
            }
        }
        for j in 0..p {
            xty[j] /= nf;
            for k in j..p {
                let v = gram[j * p + k] / nf;
                gram[j * p + k] = v;
                gram[k * p + j] = v;
            }
        }
        Ok(Self {
            p,
            x_mean,
            y_mean,
            scale,
            active,
            gram,
            xty,
            yy: yy / nf,
        })
    }

    fn refresh_gradient(&self, beta: &[f64], grad: &mut [f64]) {
        let p = self.p;
        for j in 0..p {
            let row = &self.gram[j * p..(j + 1) * p];
            grad[j] = self.xty[j] - row.iter().zip(beta).map(|(g, b)| g * b).sum::<f64>();
        }
    }

    fn objective(&self, spec: &ElasticNetSpec, beta: &[f64], grad: &[f64]) -> f64 {
        // (1/2n)||r||^2 = 0.5 * (yy - c.b - g.b) since g = c - G b
        let cb: f64 = self.xty.iter().zip(beta).map(|(c, b)| c * b).sum();
        let gb: f64 = grad.iter().zip(beta).map(|(g, b)| g * b).sum();
        let loss = 0.5 * (self.yy - cb - gb);
        let pen: f64 = beta
            .iter()
            .enumerate()
            .map(|(j, b)| {
                spec.weight(j) * (spec.alpha * b.abs() + 0.5 * (1.0 - spec.alpha) * b * b)
            })
            .sum();
        loss.max(0.0) + spec.lambda * pen
    }

    /// Runs descent from `beta` (warm start) at `spec.lambda`.
    fn descend(&self, spec: &ElasticNetSpec, beta: &mut [f64]) -> (Vec<f64>, bool, usize) {
        let p = self.p;
        let mut grad = vec![0.0; p];
        self.refresh_gradient(beta, &mut grad);
        let mut trace = Vec::new();
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < spec.max_iters {
            sweeps += 1;
            let mut max_delta = 0.0f64;
            for j in 0..p {
                if !self.active[j] {
                    continue;
                }
                let gjj = self.gram[j * p + j];
                let cj = spec.weight(j);
                let u = grad[j] + gjj * beta[j];
                let denom = gjj + spec.lambda * cj * (1.0 - spec.alpha);
                if denom <= 0.0 {
                    continue;
                }
                let new = soft_threshold(u, spec.lambda * cj * spec.alpha) / denom;
                let delta = new - beta[j];
                if delta != 0.0 {
                    beta[j] = new;
                    let col = &self.gram[j * p..(j + 1) * p];
                    for (g, gk) in grad.iter_mut().zip(col) {
                        *g -= gk * delta;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if sweeps % 64 == 0 {
                self.refresh_gradient(beta, &mut grad);
            }
            trace.push(self.objective(spec, beta, &grad));
            if max_delta < spec.tol {
                converged = true;
                break;
            }
        }
        (trace, converged, sweeps)
    }

    fn to_fit(&self, beta: &[f64], trace: Vec<f64>, converged: bool, iterations: usize) -> LinearFit {
        let coefficients: Vec<f64> = (0..self.p)
            .map(|j| if self.active[j] { beta[j] / self.scale[j] } else { 0.0 })
            .collect();
        let intercept = self.y_mean
            - coefficients
                .iter()
                .zip(&self.x_mean)
                .map(|(w, m)| w * m)
                .sum::<f64>();
        LinearFit {
            intercept,
            coefficients,
            objective_trace: trace,
            converged,
            iterations,
        }
    }

    fn lambda_max(&self, alpha: f64) -> f64 {
        let m = (0..self.p)
            .filter(|&j| self.active[j])
            .map(|j| self.xty[j].abs())
            .fold(0.0, f64::max);
        m / alpha.max(1e-3)
    }
}

/// Fits one model. Non-convergence within `max_iters` is reported through
/// [`LinearFit::converged`], not as an error.
pub fn fit(x: &Matrix, y: &[f64], spec: &ElasticNetSpec) -> Result<LinearFit> {
    spec.validate(x.cols())?;
    let prep = Prepared::new(x, y, spec)?;
    let mut beta = vec![0.0; prep.p];
    let (trace, converged, it) = prep.descend(spec, &mut beta);
    Ok(prep.to_fit(&beta, trace, converged, it))
}

/// Fits a sequence of penalties, warm-starting each from the previous one.
/// `spec.lambda` is ignored.
pub fn fit_path(x: &Matrix, y: &[f64], spec: &ElasticNetSpec, lambdas: &[f64]) -> Result<Vec<LinearFit>> {
    spec.validate(x.cols())?;
    let prep = Prepared::new(x, y, spec)?;
    let mut beta = vec![0.0; prep.p];
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let s = ElasticNetSpec {
            lambda,
            ..spec.clone()
        };
        s.validate(prep.p)?;
        let (trace, converged, it) = prep.descend(&s, &mut beta);
        out.push(prep.to_fit(&beta, trace, converged, it));
    }
    Ok(out)
}

/// Smallest penalty at which every coefficient is zero under unit weights.
pub fn lambda_max(x: &Matrix, y: &[f64], spec: &ElasticNetSpec) -> Result<f64> {
    let unit = ElasticNetSpec {
        penalty_weights: None,
        ..spec.clone()
    };
    unit.validate(x.cols())?;
    Ok(Prepared::new(x, y, &unit)?.lambda_max(spec.alpha))
}

/// Geometric grid from `lambda_max` down to `lambda_max * 1e-3`. A constant
/// target (or design) gives the single-point grid `[0]`.
pub fn lambda_grid(x: &Matrix, y: &[f64], spec: &ElasticNetSpec, n_lambdas: usize) -> Result<Vec<f64>> {
    if n_lambdas < 2 {
        return Err(invalid("n_lambdas", "must be at least 2"));
    }
    let top = lambda_max(x, y, spec)?;
    if top <= 0.0 {
        return Ok(vec![0.0]);
    }
    let ratio = 1e-3f64;
    Ok((0..n_lambdas)
        .map(|i| {
            if i == 0 {
                top
            } else if i == n_lambdas - 1 {
                top * ratio
            } else {
                top * powf(ratio, i as f64 / (n_lambdas - 1) as f64)
            }
        })
        .collect())
}

/// Objective of `fit` on the original scale, with unstandardised penalty.
pub fn objective(x: &Matrix, y: &[f64], spec: &ElasticNetSpec, fit: &LinearFit) -> f64 {
    let n = x.rows() as f64;
    let rss: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, yi)| {
            let e = yi - fit.predict_row(r);
            e * e
        })
        .sum();
    let pen: f64 = fit
        .coefficients
        .iter()
        .enumerate()
        .map(|(j, w)| spec.weight(j) * (spec.alpha * w.abs() + 0.5 * (1.0 - spec.alpha) * w * w))
        .sum();
    rss / (2.0 * n) + spec.lambda * pen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = crate::seed::rng(seed);
        let mut x = Matrix::zeros(n, p);
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in 0..p {
                x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
            y[i] = x.row(i).iter().enumerate().map(|(j, v)| (j as f64 - 1.0) * v).sum::<f64>()
                + 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
        (x, y)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-4.0, 1.5), -2.5);
    }

    #[test]
    fn ols_closed_form_single_feature() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let f = fit(&x, &[1.0, 3.0, 5.0], &ElasticNetSpec::default()).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((f.intercept - 1.0).abs() < 1e-9);
        assert!(f.converged);
    }

    #[test]
    fn critical_lambda_zeroes_everything() {
        let (x, y) = random_problem(20, 5, 11);
        // oracle: max_j |<x_j, y - ybar>| / n on standardised columns
        let n = 20.0;
        let ybar = y.iter().sum::<f64>() / n;
        let mut crit = 0.0f64;
        for j in 0..5 {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let s = sqrt(col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n);
            let ip: f64 = col.iter().zip(&y).map(|(v, t)| (v - m) / s * (t - ybar)).sum();
            crit = crit.max(ip.abs() / n);
        }
        let lm = lambda_max(&x, &y, &ElasticNetSpec::default()).unwrap();
        assert!((lm - crit).abs() < 1e-12);
        let at = fit(&x, &y, &ElasticNetSpec::with_lambda(crit, 1.0)).unwrap();
        assert!(at.coefficients.iter().all(|w| *w == 0.0));
        let below = fit(&x, &y, &ElasticNetSpec::with_lambda(crit * 0.99, 1.0)).unwrap();
        assert!(below.nonzeros() >= 1);
    }

    #[test]
    fn zero_penalty_weight_leaves_column_unpenalised() {
        let mut rng = crate::seed::rng(5);
        let n = 30;
        let mut x = Matrix::zeros(n, 2);
        let mut y = vec![0.0; n];
        for i in 0..n {
            x[(i, 0)] = rng.sample::<f64, _>(StandardNormal);
            x[(i, 1)] = rng.sample::<f64, _>(StandardNormal);
            y[i] = 1.5 * x[(i, 0)] - 0.7 * x[(i, 1)] + 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let spec = ElasticNetSpec {
            lambda: 10.0,
            alpha: 1.0,
            penalty_weights: Some(vec![0.0, 1.0]),
            standardize: false,
            ..Default::default()
        };
        let f = fit(&x, &y, &spec).unwrap();
        assert_eq!(f.coefficients[1], 0.0);
        // brute-force grid minimiser of the objective over (w1, w2) with the
        // intercept profiled out
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let (mut lo1, mut hi1, mut lo2, mut hi2) = (-5.0, 5.0, -5.0, 5.0);
        for _ in 0..12 {
            let steps = 40;
            for a in 0..=steps {
                for b in 0..=steps {
                    let w1 = lo1 + (hi1 - lo1) * a as f64 / steps as f64;
                    let w2 = lo2 + (hi2 - lo2) * b as f64 / steps as f64;
                    let resid: Vec<f64> =
                        (0..n).map(|i| y[i] - w1 * x[(i, 0)] - w2 * x[(i, 1)]).collect();
                    let b0 = resid.iter().sum::<f64>() / n as f64;
                    let rss: f64 = resid.iter().map(|r| (r - b0) * (r - b0)).sum();
                    let obj = rss / (2.0 * n as f64) + 10.0 * w2.abs();
                    if obj < best.0 {
                        best = (obj, w1, w2);
                    }
                }
            }
            let (w1, w2) = (best.1, best.2);
            let (r1, r2) = ((hi1 - lo1) / 8.0, (hi2 - lo2) / 8.0);
            lo1 = w1 - r1;
            hi1 = w1 + r1;
            lo2 = w2 - r2;
            hi2 = w2 + r2;
        }
        assert!((f.coefficients[0] - best.1).abs() < 1e-4, "{} vs {}", f.coefficients[0], best.1);
        assert!(best.2.abs() < 1e-4);
    }

    #[test]
    fn grid_shape() {
        let (x, y) = random_problem(40, 4, 3);
        let spec = ElasticNetSpec::default();
        let g2 = lambda_grid(&x, &y, &spec, 2).unwrap();
        let top = lambda_max(&x, &y, &spec).unwrap();
        assert_eq!(g2, vec![top, top * 1e-3]);
        let g10 = lambda_grid(&x, &y, &spec, 10).unwrap();
        assert!(g10.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(lambda_grid(&x, &[2.0; 40], &spec, 5).unwrap(), vec![0.0]);
        assert!(lambda_grid(&x, &y, &spec, 1).is_err());
    }

    #[test]
    fn sparsity_monotone_along_path() {
        let (x, y) = random_problem(60, 8, 21);
        let spec = ElasticNetSpec::default();
        let grid = lambda_grid(&x, &y, &spec, 12).unwrap();
        let path = fit_path(&x, &y, &spec, &grid).unwrap();
        let counts: Vec<usize> = path.iter().map(LinearFit::nonzeros).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
        assert_eq!(counts[0], 0);
    }

    #[test]
    fn constant_column_gets_zero() {
        let x = Matrix::from_rows(&[[1.0, 3.0], [2.0, 3.0], [3.0, 3.0], [4.0, 3.0]]).unwrap();
        let f = fit(&x, &[2.0, 4.0, 6.0, 8.0], &ElasticNetSpec::default()).unwrap();
        assert_eq!(f.coefficients[1], 0.0);
        assert!((f.coefficients[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Matrix::from_rows(&[[f64::NAN], [1.0]]).unwrap();
        assert!(matches!(
            fit(&x, &[0.0, 1.0], &ElasticNetSpec::default()),
            Err(Error::NonFinite(_))
        ));
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(fit(&x, &[0.0, 1.0], &ElasticNetSpec::with_lambda(0.1, 1.5)).is_err());
        assert!(fit(&x, &[0.0, 1.0], &ElasticNetSpec::with_lambda(-0.1, 1.0)).is_err());
    }

    #[test]
    fn flags_non_convergence() {
        let (x, y) = random_problem(30, 6, 8);
        let spec = ElasticNetSpec {
            max_iters: 1,
            tol: 1e-14,
            ..Default::default()
        };
        let f = fit(&x, &y, &spec).unwrap();
        assert!(!f.converged);
        assert_eq!(f.iterations, 1);
    }
}
