//! Training activation banks and exact cosine search over them.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm, Mat};
use crate::subspace::SubspaceSplit;

/// Lloyd iteration cap used for prototype banks.
pub const PROTOTYPE_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct BankMeta {
    pub source: String,
    pub sample_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for BankMeta {
    fn default() -> Self {
        Self {
            source: "raw".to_string(),
            sample_fraction: 1.0,
            seed: None,
        }
    }
}

/// `N x d` activations, one sample per row, with cached row norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBank {
    features: Mat,
    labels: Option<Vec<u32>>,
    norms: Vec<f64>,
    pub meta: BankMeta,
}

impl ActivationBank {
    pub fn new(features: Mat, labels: Option<Vec<u32>>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::invalid(
                "activation bank must contain at least one row",
            ));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::invalid(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
        }
        let norms = features.row_iter().map(norm).collect();
        Ok(Self {
            features,
            labels,
            norms,
            meta: BankMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: BankMeta) -> Self {
        self.meta = meta;
        self
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn features(&self) -> &Mat {
        &self.features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Keeps the listed rows (in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols());
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        let features = Mat::new(indices.len(), self.cols(), data)?;
        Ok(Self::new(features, labels)?.with_meta(self.meta.clone()))
    }

    /// Uniform sample without replacement of `round(fraction * N)` rows
    /// (at least one), kept in their original order.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "sample fraction {fraction} outside (0, 1]"
            )));
        }
        let n = self.rows();
        let count = ((fraction * n as f64).round() as usize).clamp(1, n);
        let mut idx = if count == n {
            (0..n).collect::<Vec<_>>()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, n, count).into_vec()
        };
        idx.sort_unstable();
        let mut out = self.select(&idx)?;
        out.meta = BankMeta {
            source: format!("{} | subsample", self.meta.source),
            sample_fraction: self.meta.sample_fraction * count as f64 / n as f64,
            seed: Some(seed),
        };
        Ok(out)
    }

    /// Replaces every row by its insignificant component.
    pub fn project_insignificant(&self, split: &SubspaceSplit) -> Result<Self> {
        self.map_rows(split, "insignificant", |a| split.project_insignificant(a))
    }

    /// Replaces every row by its decisive component.
    pub fn project_decisive(&self, split: &SubspaceSplit) -> Result<Self> {
        self.map_rows(split, "decisive", |a| split.project_decisive(a))
    }

    fn map_rows<F>(&self, split: &SubspaceSplit, tag: &str, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        if split.dim() != self.cols() {
            return Err(Error::invalid(format!(
                "bank has {} features, split dimension is {}",
                self.cols(),
                split.dim()
            )));
        }
        let rows: Vec<Vec<f64>> = (0..self.rows())
            .into_par_iter()
            .map(|i| f(self.row(i)))
            .collect::<Result<_>>()?;
        let features = Mat::from_rows(&rows, self.cols())?;
        let mut meta = self.meta.clone();
        meta.source = format!("{} | {tag}", meta.source);
        Ok(Self::new(features, self.labels.clone())?.with_meta(meta))
    }

    /// Cosine similarity of `query` against every row; zero-norm operands
    /// give 0.
    pub fn cosines(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.cols() {
            return Err(Error::invalid(format!(
                "query has length {}, bank rows have {}",
                query.len(),
                self.cols()
            )));
        }
        let qn = norm(query);
        Ok((0..self.rows())
            .into_par_iter()
            .map(|i| {
                let rn = self.norms[i];
                if qn == 0.0 || rn == 0.0 {
                    0.0
                } else {
                    (dot(self.row(i), query) / (rn * qn)).clamp(-1.0, 1.0)
                }
            })
            .collect())
    }

    /// Exact top-`n` cosine similarities in descending order; ties are
    /// resolved by the lower row index.
    pub fn top_n_cosine(&self, query: &[f64], n: usize) -> Result<Vec<f64>> {
        if n > self.rows() {
            return Err(Error::invalid(format!(
                "requested top {n} of a bank with {} rows",
                self.rows()
            )));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let sims = self.cosines(query)?;
        let mut idx: Vec<usize> = (0..sims.len()).collect();
        let order =
            |a: &usize, b: &usize| -> Ordering { sims[*b].total_cmp(&sims[*a]).then(a.cmp(b)) };
        if n < idx.len() {
            idx.select_nth_unstable_by(n - 1, order);
            idx.truncate(n);
        }
        idx.sort_unstable_by(order);
        Ok(idx.into_iter().map(|i| sims[i]).collect())
    }

    /// Compresses the bank to `k` k-means centroids. Labels are dropped.
    pub fn prototypes(&self, k: usize, seed: u64) -> Result<Self> {
        let centroids = linalg::kmeans(&self.features, k, seed, PROTOTYPE_MAX_ITER)?;
        let meta = BankMeta {
            source: format!("{} | kmeans prototypes k={k}", self.meta.source),
            sample_fraction: self.meta.sample_fraction * k as f64 / self.rows() as f64,
            seed: Some(seed),
        };
        Ok(Self::new(centroids, None)?.with_meta(meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::{factorize, split, WeightHead};
    use rand::Rng;

    fn bank(rows: &[Vec<f64>]) -> ActivationBank {
        ActivationBank::new(Mat::from_rows(rows, rows[0].len()).unwrap(), None).unwrap()
    }

    fn random_bank(seed: u64, n: usize, d: usize) -> ActivationBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        bank(&rows)
    }

    #[test]
    fn rejects_empty_and_mismatched_labels() {
        assert!(ActivationBank::new(Mat::zeros(0, 3), None).is_err());
        assert!(ActivationBank::new(Mat::zeros(2, 3), Some(vec![1])).is_err());
    }

    #[test]
    fn norms_are_cached() {
        let b = bank(&[vec![3.0, 4.0], vec![0.0, 0.0]]);
        assert_eq!(b.norms(), &[5.0, 0.0]);
    }

    #[test]
    fn subsample_full_is_identity() {
        let b = random_bank(1, 10, 3);
        let s = b.subsample(1.0, 5).unwrap();
        assert_eq!(s.features(), b.features());
    }

    #[test]
    fn subsample_half_distinct_and_deterministic() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let b = bank(&rows);
        let s = b.subsample(0.5, 3).unwrap();
        assert_eq!(s.rows(), 5);
        let mut vals: Vec<f64> = s.features().data().to_vec();
        vals.dedup();
        assert_eq!(vals.len(), 5);
        assert_eq!(s.features(), b.subsample(0.5, 3).unwrap().features());
        assert_eq!(b.subsample(0.01, 3).unwrap().rows(), 1);
        assert!(b.subsample(0.0, 3).is_err());
    }

    #[test]
    fn top_n_examples() {
        let b = bank(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(b.top_n_cosine(&[1.0, 0.0], 1).unwrap(), vec![1.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let t = b.top_n_cosine(&[h, h], 2).unwrap();
        assert!(t.iter().all(|x| (x - h).abs() < 1e-12));
        assert!(matches!(
            b.top_n_cosine(&[1.0, 0.0], 3),
            Err(Error::InvalidInput(_))
        ));
        assert_eq!(b.top_n_cosine(&[0.0, 0.0], 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn top_n_full_matches_sort() {
        let b = random_bank(7, 30, 5);
        let q = [0.3, -0.2, 0.9, 0.1, 0.0];
        let mut all: Vec<f64> = b
            .features()
            .row_iter()
            .map(|r| linalg::cosine(r, &q))
            .collect();
        all.sort_by(|a, b| b.total_cmp(a));
        let got = b.top_n_cosine(&q, 30).unwrap();
        for (x, y) in got.iter().zip(&all) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_with_k0_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Mat::new(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f = factorize(&WeightHead::new(w, None).unwrap()).unwrap();
        let b = random_bank(3, 6, 4);
        let p = b.project_insignificant(&split(&f, 0).unwrap()).unwrap();
        assert!(p.features().max_abs_diff(b.features()) < 1e-10);
        let s1 = split(&f, 1).unwrap();
        let p1 = b.project_insignificant(&s1).unwrap();
        for i in 0..b.rows() {
            assert_eq!(p1.row(i), &s1.project_insignificant(b.row(i)).unwrap()[..]);
        }
        let twice = p1.project_insignificant(&s1).unwrap();
        assert!(twice.features().max_abs_diff(p1.features()) < 1e-10);
    }

    #[test]
    fn prototypes() {
        let b = bank(&[
            vec![0.0, 0.0],
            vec![0.0, 2.0],
            vec![9.0, 9.0],
            vec![11.0, 9.0],
        ]);
        let p = b.prototypes(2, 1).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..2).map(|i| p.row(i).to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![10.0, 9.0]]);
        let one = b.prototypes(1, 1).unwrap();
        assert_eq!(one.row(0), &[5.0, 5.0]);
        let all = b.prototypes(4, 1).unwrap();
        let mut got: Vec<Vec<f64>> = (0..4).map(|i| all.row(i).to_vec()).collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let mut want: Vec<Vec<f64>> = (0..4).map(|i| b.row(i).to_vec()).collect();
        want.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        assert_eq!(got, want);
        assert!(all.labels().is_none());
        assert_eq!(b.prototypes(3, 8).unwrap(), b.prototypes(3, 8).unwrap());
    }
}
