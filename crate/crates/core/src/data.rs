//! Masked datasets: a dense feature matrix `X`, a parallel binary mask `M`
//! (`M[i][j] = 1` when feature `j` is missing in row `i`) and targets `y`.
//!
//! Stored values at masked positions are kept but carry no meaning. Every
//! routine in this crate reads `X[i][j]` only when `M[i][j] = 0`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Masked inner product: `sum_j w_j (1 - m_j) x_j`.
pub fn masked_dot(w: &[f64], x: &[f64], m: &[u8]) -> Result<f64> {
    if w.len() != x.len() || w.len() != m.len() {
        return Err(Error::DimensionMismatch {
            what: "masked_dot operands",
            expected: w.len(),
            got: if x.len() != w.len() { x.len() } else { m.len() },
        });
    }
    Ok(masked_dot_unchecked(w, x, m))
}

#[inline]
pub(crate) fn masked_dot_unchecked(w: &[f64], x: &[f64], m: &[u8]) -> f64 {
    w.iter()
        .zip(x)
        .zip(m)
        .filter(|(_, &mj)| mj == 0)
        .map(|((wj, xj), _)| wj * xj)
        .sum()
}

/// Identifies a missingness pattern. Equal mask rows give equal keys.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternKey {
    len: usize,
    words: Vec<u64>,
}

impl PatternKey {
    pub fn from_mask(m: &[u8]) -> Self {
        let mut words = alloc::vec![0u64; m.len().div_ceil(64)];
        for (j, &mj) in m.iter().enumerate() {
            if mj != 0 {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        Self {
            len: m.len(),
            words,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_missing(&self, j: usize) -> bool {
        j < self.len && self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn missing_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_mask(&self) -> Vec<u8> {
        (0..self.len).map(|j| self.is_missing(j) as u8).collect()
    }
}

impl core::fmt::Display for PatternKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for j in 0..self.len {
            f.write_str(if self.is_missing(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// `(X, M, y)` triple with optional feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedDataset {
    x: Matrix,
    mask: Vec<u8>,
    y: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl MaskedDataset {
    /// Checks shapes only; call [`MaskedDataset::validate`] for the value
    /// checks. `mask` is row-major with the same shape as `x`.
    pub fn new(x: Matrix, mask: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        if mask.len() != x.rows() * x.cols() {
            return Err(Error::DimensionMismatch {
                what: "mask entries",
                expected: x.rows() * x.cols(),
                got: mask.len(),
            });
        }
        if y.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                what: "target length",
                expected: x.rows(),
                got: y.len(),
            });
        }
        Ok(Self {
            x,
            mask,
            y,
            feature_names: None,
        })
    }

    pub fn from_rows<X: AsRef<[f64]>, M: AsRef<[u8]>>(x: &[X], m: &[M], y: &[f64]) -> Result<Self> {
        let x = Matrix::from_rows(x)?;
        if m.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                what: "mask rows",
                expected: x.rows(),
                got: m.len(),
            });
        }
        let mut mask = Vec::with_capacity(x.rows() * x.cols());
        for r in m {
            let r = r.as_ref();
            if r.len() != x.cols() {
                return Err(Error::DimensionMismatch {
                    what: "mask row length",
                    expected: x.cols(),
                    got: r.len(),
                });
            }
            mask.extend_from_slice(r);
        }
        Self::new(x, mask, y.to_vec())
    }

    /// Fully observed dataset.
    pub fn complete(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let mask = alloc::vec![0; x.rows() * x.cols()];
        Self::new(x, mask, y)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d() {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: self.d(),
                got: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Validates mask values and finiteness of observed entries and targets.
    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        for i in 0..self.n() {
            for j in 0..d {
                let m = self.mask[i * d + j];
                if m > 1 {
                    return Err(Error::InvalidMask {
                        row: i,
                        col: j,
                        value: m,
                    });
                }
                if m == 0 && !self.x[(i, j)].is_finite() {
                    return Err(Error::NonFiniteObserved { row: i, col: j });
                }
            }
            if !self.y[i].is_finite() {
                return Err(Error::NonFiniteTarget { row: i });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    #[inline]
    pub fn x_row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    #[inline]
    pub fn mask_row(&self, i: usize) -> &[u8] {
        let d = self.d();
        &self.mask[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.d() + j] != 0
    }

    pub fn missing_count(&self, j: usize) -> usize {
        (0..self.n()).filter(|&i| self.is_missing(i, j)).count()
    }

    pub fn missing_fraction(&self, j: usize) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        self.missing_count(j) as f64 / self.n() as f64
    }

    /// Mean of the observed entries of column `j`, `None` if all are missing.
    pub fn observed_mean(&self, j: usize) -> Option<f64> {
        let (sum, count) = (0..self.n())
            .filter(|&i| !self.is_missing(i, j))
            .fold((0.0, 0usize), |(s, c), i| (s + self.x[(i, j)], c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    /// Columns with no missing entry.
    pub fn never_missing_columns(&self) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.missing_count(j) == 0).collect()
    }

    /// Whether every target is 0 or 1.
    pub fn has_binary_target(&self) -> bool {
        !self.y.is_empty() && self.y.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let d = self.d();
        let mut mask = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            mask.extend_from_slice(self.mask_row(i));
        }
        Self {
            x: self.x.select_rows(rows),
            mask,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn select_features(&self, cols: &[usize]) -> Self {
        let d = self.d();
        let mut mask = Vec::with_capacity(self.n() * cols.len());
        for i in 0..self.n() {
            mask.extend(cols.iter().map(|&j| self.mask[i * d + j]));
        }
        Self {
            x: self.x.select_cols(cols),
            mask,
            y: self.y.clone(),
            feature_names: self
                .feature_names
                .as_ref()
                .map(|names| cols.iter().map(|&j| names[j].clone()).collect()),
        }
    }

    /// Same mask and targets, different stored values.
    pub fn with_x(&self, x: Matrix) -> Result<Self> {
        let mut out = Self::new(x, self.mask.clone(), self.y.clone())?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.x.clone(), self.mask.clone(), y)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    pub fn with_mask(&self, mask: Vec<u8>) -> Result<Self> {
        let mut out = Self::new(self.x.clone(), mask, self.y.clone())?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Zero-imputed design: `(1 - m_ij) x_ij`.
    pub fn zero_imputed(&self) -> Matrix {
        let mut out = self.x.clone();
        for i in 0..self.n() {
            let d = self.d();
            for j in 0..d {
                if self.mask[i * d + j] != 0 {
                    out[(i, j)] = 0.0;
                }
            }
        }
        out
    }
}

/// Groups row indices by missingness pattern. Groups come out in key order
/// and each group lists its rows in increasing order.
pub fn unique_patterns(dataset: &MaskedDataset) -> Vec<(PatternKey, Vec<usize>)> {
    let mut groups: BTreeMap<PatternKey, Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.n() {
        groups
            .entry(PatternKey::from_mask(dataset.mask_row(i)))
            .or_default()
            .push(i);
    }
    groups.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn masked_dot_examples() {
        assert_eq!(masked_dot(&[1.0, 2.0], &[3.0, 4.0], &[0, 0]).unwrap(), 11.0);
        assert_eq!(masked_dot(&[1.0, 2.0], &[3.0, 4.0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(
            masked_dot(&[1.0, 2.0, -1.0], &[5.0, 7.0, 2.0], &[0, 1, 0]).unwrap(),
            3.0
        );
        assert!(matches!(
            masked_dot(&[1.0], &[1.0, 2.0], &[0, 0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validate_examples() {
        let ok = MaskedDataset::from_rows(
            &[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            &[[0u8, 0], [1, 0], [0, 1]],
            &[1.0, 2.0, 3.0],
        )
        .unwrap();
        ok.validate().unwrap();

        let bad = MaskedDataset::from_rows(&[[1.0, 2.0]], &[[0u8, 2]], &[0.0]).unwrap();
        assert_eq!(
            bad.validate(),
            Err(Error::InvalidMask {
                row: 0,
                col: 1,
                value: 2
            })
        );

        let nan_obs = MaskedDataset::from_rows(&[[f64::NAN, 2.0]], &[[0u8, 0]], &[0.0]).unwrap();
        assert_eq!(
            nan_obs.validate(),
            Err(Error::NonFiniteObserved { row: 0, col: 0 })
        );
        let nan_missing =
            MaskedDataset::from_rows(&[[f64::NAN, 2.0]], &[[1u8, 0]], &[0.0]).unwrap();
        nan_missing.validate().unwrap();
    }

    #[test]
    fn shape_checks() {
        let x = Matrix::zeros(2, 2);
        assert!(MaskedDataset::new(x.clone(), vec![0; 3], vec![0.0; 2]).is_err());
        assert!(MaskedDataset::new(x, vec![0; 4], vec![0.0; 3]).is_err());
    }

    #[test]
    fn pattern_groups() {
        let ds = MaskedDataset::from_rows(
            &[[0.0, 0.0]; 3],
            &[[0u8, 0], [0, 0], [1, 0]],
            &[0.0; 3],
        )
        .unwrap();
        let groups = unique_patterns(&ds);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0.to_mask(), vec![0, 0]);
        assert_eq!(groups[0].1, vec![0, 1]);
        assert_eq!(groups[1].0.to_mask(), vec![1, 0]);
        assert_eq!(groups[1].1, vec![2]);

        let full = MaskedDataset::complete(Matrix::zeros(5, 3), vec![0.0; 5]).unwrap();
        let groups = unique_patterns(&full);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].1.len(), 5);
    }

    #[test]
    fn pattern_key_wide() {
        let mut m = vec![0u8; 130];
        m[0] = 1;
        m[64] = 1;
        m[129] = 1;
        let k = PatternKey::from_mask(&m);
        assert_eq!(k.missing_count(), 3);
        assert!(k.is_missing(129) && !k.is_missing(128));
        assert_eq!(k.to_mask(), m);
    }

    #[test]
    fn observed_statistics() {
        let ds = MaskedDataset::from_rows(
            &[[1.0, 5.0], [99.0, 5.0], [3.0, 5.0]],
            &[[0u8, 0], [1, 0], [0, 0]],
            &[0.0; 3],
        )
        .unwrap();
        assert_eq!(ds.observed_mean(0), Some(2.0));
        assert_eq!(ds.never_missing_columns(), vec![1]);
        assert_eq!(ds.zero_imputed().column(0), vec![1.0, 0.0, 3.0]);
    }
}
