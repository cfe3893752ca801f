//! Dense linear algebra kernels.
//!
//! Everything here works in `f64` on row-major storage and is fully
//! deterministic: the SVD uses a cyclic one-sided Jacobi sweep in a fixed
//! pair order, k-means is driven by a seeded ChaCha stream.

use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Singular values at or below `ZERO_SV_RTOL * sigma_max` count as zero.
pub const ZERO_SV_RTOL: f64 = 1e-6;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite matrix entry at ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from equally sized rows. An empty slice yields a
    /// `0 x cols` matrix, so the column count has to be given explicitly.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Mat {
        Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.cols {
            return Err(Error::invalid(format!(
                "cannot stack {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Mat {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::invalid(format!(
                "matvec expects length {}, got {}",
                self.cols,
                x.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    /// `self^T * y`.
    pub fn t_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::invalid(format!(
                "transposed matvec expects length {}, got {}",
                self.rows,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &w) in self.row_iter().zip(y) {
            axpy(w, r, &mut out);
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cosine similarity; zero-norm operands give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Thin SVD `m = u * diag(sigma) * vt`, `r = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub vt: Mat,
}

impl SvdResult {
    /// Number of singular values above the zero tolerance.
    pub fn rank(&self) -> usize {
        let cutoff = self.zero_cutoff();
        self.sigma.iter().filter(|&&s| s > cutoff).count()
    }

    pub fn zero_cutoff(&self) -> f64 {
        ZERO_SV_RTOL * self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factor shapes agree")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Operates on the orientation with at least as many rows as columns so the
/// rotations act on the short side. Right singular vectors are sign-fixed so
/// that their largest-magnitude entry (lowest index on ties) is positive.
pub fn svd(m: &Mat) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    if m.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("svd input contains non-finite entries"));
    }
    let transposed = m.rows() < m.cols();
    let a = if transposed { m.transpose() } else { m.clone() };
    let (tall, p) = (a.rows(), a.cols());

    // Column-major working copies: g holds A*V, v accumulates the rotations.
    let mut g: Vec<Vec<f64>> = (0..p).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * tall as f64;
    let max_sweeps = 100 * p;
    let mut converged = p < 2;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..p - 1 {
            for j in i + 1..p {
                let alpha = dot(&g[i], &g[i]);
                let beta = dot(&g[j], &g[j]);
                let gamma = dot(&g[i], &g[j]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = g.split_at_mut(j);
                rotate(&mut left[i], &mut right[0], c, s);
                let (left, right) = v.split_at_mut(j);
                rotate(&mut left[i], &mut right[0], c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "jacobi svd did not converge within {max_sweeps} sweeps"
        )));
    }

    let norms: Vec<f64> = g.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = sigma[0];
    let null_cut = smax * 1e-13;

    // Left vectors (tall side): normalized columns of A*V, completed to an
    // orthonormal set where the column has collapsed to zero.
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut missing = Vec::new();
    for (pos, &j) in order.iter().enumerate() {
        if smax > 0.0 && norms[j] > null_cut {
            left.push(g[j].iter().map(|x| x / norms[j]).collect());
        } else {
            missing.push(pos);
            left.push(Vec::new());
        }
    }
    if !missing.is_empty() {
        let have: Vec<Vec<f64>> = left.iter().filter(|c| !c.is_empty()).cloned().collect();
        let basis = Mat::from_rows(&have, tall)?;
        let comp = orthonormal_complement(&basis);
        for (slot, pos) in missing.into_iter().enumerate() {
            left[pos] = comp.row(slot).to_vec();
        }
    }
    let right: Vec<&Vec<f64>> = order.iter().map(|&j| &v[j]).collect();

    // left: p vectors of length `tall`; right: p vectors of length p.
    let (mut u, mut vt) = if transposed {
        // A = m^T = L S R^T  =>  m = R S L^T
        let mut u = Mat::zeros(p, p);
        for (col, r) in right.iter().enumerate() {
            for (row, &x) in r.iter().enumerate() {
                u[(row, col)] = x;
            }
        }
        let vt = Mat::from_rows(&left, tall)?;
        (u, vt)
    } else {
        let mut u = Mat::zeros(tall, p);
        for (col, l) in left.iter().enumerate() {
            for (row, &x) in l.iter().enumerate() {
                u[(row, col)] = x;
            }
        }
        let vt_rows: Vec<Vec<f64>> = right.iter().map(|r| r.to_vec()).collect();
        let vt = Mat::from_rows(&vt_rows, p)?;
        (u, vt)
    };

    for i in 0..vt.rows() {
        let row = vt.row(i);
        let mut best = 0;
        for (j, x) in row.iter().enumerate() {
            if x.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            vt.row_mut(i).iter_mut().for_each(|x| *x = -*x);
            for r in 0..u.rows() {
                u[(r, i)] = -u[(r, i)];
            }
        }
    }

    Ok(SvdResult { u, sigma, vt })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Applies the pseudoinverse of the factorized matrix: `V * Sigma^+ * U^T * y`.
pub fn pinv_apply(f: &SvdResult, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != f.u.rows() {
        return Err(Error::invalid(format!(
            "pseudoinverse expects length {}, got {}",
            f.u.rows(),
            y.len()
        )));
    }
    let cutoff = f.zero_cutoff();
    let mut x = vec![0.0; f.vt.cols()];
    for (i, &s) in f.sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let coeff: f64 = (0..f.u.rows()).map(|r| f.u[(r, i)] * y[r]).sum::<f64>() / s;
        axpy(coeff, f.vt.row(i), &mut x);
    }
    Ok(x)
}

/// Orthonormal basis (as rows) of the orthogonal complement of the row space
/// of `rows`, whose rows must be orthonormal. Built from Householder QR so the
/// result is deterministic and orthogonal to working precision.
pub fn orthonormal_complement(rows: &Mat) -> Mat {
    let n = rows.cols();
    let m = rows.rows();
    assert!(m <= n, "more rows than dimensions");
    // Columns of A are the given rows.
    let mut a: Vec<Vec<f64>> = (0..m).map(|i| rows.row(i).to_vec()).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let x = &a[j][j..];
        let alpha = norm(x);
        let mut v = x.to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = norm(&v);
        if vn > 0.0 {
            v.iter_mut().for_each(|t| *t /= vn);
        }
        for col in a.iter_mut().skip(j) {
            let tail = &mut col[j..];
            let proj = 2.0 * dot(&v, tail);
            axpy(-proj, &v, tail);
        }
        reflectors.push(v);
    }
    let mut out = Mat::zeros(n - m, n);
    for (slot, t) in (m..n).enumerate() {
        let mut q = vec![0.0; n];
        q[t] = 1.0;
        for (j, v) in reflectors.iter().enumerate().rev() {
            let tail = &mut q[j..];
            let proj = 2.0 * dot(v, tail);
            axpy(-proj, v, tail);
        }
        out.row_mut(slot).copy_from_slice(&q);
    }
    out
}

/// Nearest-rank percentile: the element at index `ceil(p * len) - 1` of the
/// ascending sort, clamped into range.
pub fn percentile(v: &[f64], p: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("percentile of an empty vector"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!(
            "percentile fraction {p} outside [0, 1]"
        )));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(p, sorted.len())])
}

/// `ceil(p * len) - 1` clamped to `[0, len - 1]`, tolerant of representation
/// error in `p * len` (0.7 * 10 must give rank 7, not 8).
pub(crate) fn nearest_rank_index(p: f64, len: usize) -> usize {
    let rank = (p * len as f64 - 1e-9).ceil();
    if rank < 1.0 {
        0
    } else {
        (rank as usize - 1).min(len - 1)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Stops when no assignment changes or after `max_iter` iterations. A cluster
/// that ends up empty is re-seeded with the point farthest from its current
/// centroid.
pub fn kmeans(points: &Mat, k: usize, seed: u64, max_iter: usize) -> Result<Mat> {
    let n = points.rows();
    let d = points.cols();
    if k == 0 {
        return Err(Error::invalid("kmeans needs k >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("kmeans k={k} exceeds {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Mat::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dist: Vec<f64> = points
        .row_iter()
        .map(|p| sq_dist(p, points.row(first)))
        .collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // Rounding can run past the end; fall back to the last positive weight.
            pick.unwrap_or_else(|| dist.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            // All remaining points coincide with a centroid.
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.row_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, centroids.row(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.row_iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = sq_dist(p, centroids.row(c));
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, p) in points.row_iter().enumerate() {
            axpy(1.0, p, sums.row_mut(assign[i]));
            counts[assign[i]] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                continue;
            }
            let mut far = 0;
            let mut far_d = -1.0;
            for (i, p) in points.row_iter().enumerate() {
                let dd = sq_dist(p, centroids.row(assign[i]));
                if dd > far_d {
                    far_d = dd;
                    far = i;
                }
            }
            centroids.row_mut(c).copy_from_slice(points.row(far));
            assign[far] = c;
        }
    }
    Ok(centroids)
}
