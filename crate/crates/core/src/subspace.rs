//! Decisive / insignificant decomposition of the activation space.
//!
//! The right singular vectors of the head, ordered by descending singular
//! value and completed with an orthonormal nullspace basis, give a full
//! basis of the activation space. The first `k` rows span the decisive
//! subspace, the rest the insignificant one.

use rayon::prelude::*;

use crate::bank::ActivationBank;
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, norm, Mat, SvdResult};
use crate::store::config::BasisKind;

/// Rows per work unit when reducing over a bank; fixed so sums do not depend
/// on the thread count.
const REDUCE_CHUNK: usize = 256;

/// Linear classification head `l = W a (+ b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHead {
    pub w: Mat,
    pub bias: Option<Vec<f64>>,
}

impl WeightHead {
    pub fn new(w: Mat, bias: Option<Vec<f64>>) -> Result<Self> {
        if w.rows() == 0 || w.cols() == 0 {
            return Err(Error::invalid("weight head must be at least 1x1"));
        }
        if let Some(b) = &bias {
            if b.len() != w.rows() {
                return Err(Error::invalid(format!(
                    "bias length {} does not match {} classes",
                    b.len(),
                    w.rows()
                )));
            }
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("bias contains non-finite values"));
            }
        }
        Ok(Self { w, bias })
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn features(&self) -> usize {
        self.w.cols()
    }

    /// `W a`, plus the bias when `with_bias` is set and a bias exists.
    pub fn logits(&self, a: &[f64], with_bias: bool) -> Result<Vec<f64>> {
        let mut l = self.w.matvec(a)?;
        if with_bias {
            if let Some(b) = &self.bias {
                l.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        Ok(l)
    }
}

/// SVD of the head plus the derived softmax-invariant direction and a full
/// orthonormal basis of the activation space.
#[derive(Debug, Clone)]
pub struct HeadFactorization {
    pub head: WeightHead,
    pub svd: SvdResult,
    /// `W^+ 1`: adding any multiple of it to an activation leaves the softmax
    /// output unchanged.
    pub p: Vec<f64>,
    /// Number of singular values above the zero tolerance.
    pub rank: usize,
    pub nullspace_dim: usize,
    /// `n x n`; rows are the right singular vectors in descending order
    /// followed by the orthonormal completion of the nullspace.
    pub basis: Mat,
}

impl HeadFactorization {
    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn features(&self) -> usize {
        self.head.features()
    }

    /// Orthonormal nullspace basis `Q` as rows.
    pub fn nullspace_basis(&self) -> Mat {
        self.basis.row_range(self.rank, self.features())
    }

    /// Row-space basis as rows.
    pub fn rowspace_basis(&self) -> Mat {
        self.basis.row_range(0, self.rank)
    }
}

pub fn factorize(head: &WeightHead) -> Result<HeadFactorization> {
    if head.classes() < 2 {
        return Err(Error::invalid(format!(
            "subspace decomposition needs at least 2 classes, got {}",
            head.classes()
        )));
    }
    let svd = linalg::svd(&head.w)?;
    let ones = vec![1.0; head.classes()];
    let p = linalg::pinv_apply(&svd, &ones)?;
    let rank = svd.rank();
    let n = head.features();
    let complement = linalg::orthonormal_complement(&svd.vt);
    let basis = svd.vt.vstack(&complement)?;
    Ok(HeadFactorization {
        head: head.clone(),
        svd,
        p,
        rank,
        nullspace_dim: n - rank,
        basis,
    })
}

/// Orthonormal decisive and insignificant bases (as rows) that jointly span
/// the activation space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSplit {
    pub k: usize,
    pub v_dec: Mat,
    pub v_insig: Mat,
    pub kind: BasisKind,
}

impl SubspaceSplit {
    pub fn dim(&self) -> usize {
        self.v_dec.cols()
    }

    pub fn project_decisive(&self, a: &[f64]) -> Result<Vec<f64>> {
        project_onto(&self.v_dec, a)
    }

    pub fn project_insignificant(&self, a: &[f64]) -> Result<Vec<f64>> {
        project_onto(&self.v_insig, a)
    }

    /// Projects `a` onto the span of the decisive basis; used to re-project a
    /// shaped vector before recomputing logits.
    pub fn decisive_reproject(&self, v: &[f64]) -> Result<Vec<f64>> {
        project_onto(&self.v_dec, v)
    }
}

/// `B^T B a` for a basis `B` stored as rows.
fn project_onto(basis: &Mat, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != basis.cols() {
        return Err(Error::invalid(format!(
            "activation has length {}, subspace dimension is {}",
            a.len(),
            basis.cols()
        )));
    }
    let mut out = vec![0.0; a.len()];
    for row in basis.row_iter() {
        axpy(dot(row, a), row, &mut out);
    }
    Ok(out)
}

/// Splits the SVD basis after the first `k` singular directions.
pub fn split(fac: &HeadFactorization, k: usize) -> Result<SubspaceSplit> {
    if k > fac.rank {
        return Err(Error::invalid(format!(
            "k={k} exceeds the head rank {}",
            fac.rank
        )));
    }
    let n = fac.features();
    Ok(SubspaceSplit {
        k,
        v_dec: fac.basis.row_range(0, k),
        v_insig: fac.basis.row_range(k, n),
        kind: BasisKind::Svd,
    })
}

/// Mean of `||a_insig|| - ||a_dec||` over the bank for every `k` in
/// `0..=rank`.
///
/// Per sample the squared coefficients along the singular directions are
/// accumulated once; the decisive norm at `k` is the prefix sum and the
/// insignificant norm is the remainder of `||a||^2`.
pub fn norm_balance_curve(fac: &HeadFactorization, train: &Mat) -> Result<Vec<f64>> {
    if train.rows() == 0 {
        return Err(Error::invalid("norm balance needs a non-empty bank"));
    }
    if train.cols() != fac.features() {
        return Err(Error::invalid(format!(
            "bank has {} features, head expects {}",
            train.cols(),
            fac.features()
        )));
    }
    let rank = fac.rank;
    let partials: Vec<Vec<f64>> = (0..train.rows())
        .step_by(REDUCE_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + REDUCE_CHUNK).min(train.rows());
            let mut acc = vec![0.0; rank + 1];
            for i in start..end {
                let a = train.row(i);
                let total = dot(a, a);
                let mut prefix = 0.0;
                for (k, slot) in acc.iter_mut().enumerate() {
                    if k > 0 {
                        let c = dot(fac.basis.row(k - 1), a);
                        prefix += c * c;
                    }
                    let dec = prefix.sqrt();
                    let insig = (total - prefix).max(0.0).sqrt();
                    *slot += insig - dec;
                }
            }
            acc
        })
        .collect();
    let mut curve = vec![0.0; rank + 1];
    for part in &partials {
        for (c, p) in curve.iter_mut().zip(part) {
            *c += p;
        }
    }
    let inv = 1.0 / train.rows() as f64;
    curve.iter_mut().for_each(|c| *c *= inv);
    Ok(curve)
}

/// Picks `k` so that decisive and insignificant norms of the training
/// activations are as close as possible on average.
///
/// Minimizes the absolute mean difference over `k` in `1..=rank` (an empty
/// decisive subspace would make the decisive score constant); ties go to the
/// smaller `k`. A rank-0 head yields `k = 0`.
pub fn select_k(fac: &HeadFactorization, train: &ActivationBank) -> Result<usize> {
    let curve = norm_balance_curve(fac, train.features())?;
    Ok(argmin_abs_from(&curve, 1))
}

pub(crate) fn argmin_abs_from(curve: &[f64], first: usize) -> usize {
    if curve.len() <= first {
        return 0;
    }
    let mut best = first;
    for k in first + 1..curve.len() {
        if curve[k].abs() < curve[best].abs() {
            best = k;
        }
    }
    best
}

/// Checks that the rows of `basis` are orthonormal within `tol`.
pub fn check_orthonormal_rows(basis: &Mat, tol: f64) -> Result<()> {
    let m = basis.rows();
    let worst = (0..m)
        .into_par_iter()
        .map(|i| {
            let ri = basis.row(i);
            (i..m)
                .map(|j| {
                    let d = dot(ri, basis.row(j));
                    if i == j {
                        (d - 1.0).abs()
                    } else {
                        d.abs()
                    }
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    if worst > tol {
        return Err(Error::invalid(format!(
            "basis rows are not orthonormal (max deviation {worst:.3e})"
        )));
    }
    Ok(())
}

/// `|b_i . p / ||p|||` for every basis row `b_i`.
pub fn alignment_profile(fac: &HeadFactorization, basis: &Mat) -> Result<Vec<f64>> {
    if basis.cols() != fac.features() {
        return Err(Error::invalid(format!(
            "basis has {} columns, head has {} features",
            basis.cols(),
            fac.features()
        )));
    }
    check_orthonormal_rows(basis, 1e-6)?;
    let pn = norm(&fac.p);
    if pn == 0.0 {
        return Err(Error::DegenerateBasis(
            "softmax-invariant direction is zero".into(),
        ));
    }
    Ok(basis
        .row_iter()
        .map(|b| (dot(b, &fac.p) / pn).abs())
        .collect())
}

/// How the decisive and insignificant bases are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisStrategy {
    /// Right singular vectors of the head; `k = None` selects `k` by norm
    /// balance on the training bank.
    Svd { k: Option<usize> },
    /// Top-`d` covariance eigenvectors of the training activations as the
    /// decisive part, residual as insignificant.
    Pca { d: Option<usize> },
    /// PCA after zeroing the activation variance along the softmax-invariant
    /// direction.
    SiPca { d: Option<usize> },
    /// Nullspace of the head as insignificant, row space as decisive.
    Nullspace,
}

impl BasisStrategy {
    pub fn kind(&self) -> BasisKind {
        match self {
            BasisStrategy::Svd { .. } => BasisKind::Svd,
            BasisStrategy::Pca { .. } => BasisKind::Pca,
            BasisStrategy::SiPca { .. } => BasisKind::SiPca,
            BasisStrategy::Nullspace => BasisKind::Nullspace,
        }
    }
}

/// Covariance eigenbasis of the (optionally filtered) centered bank.
/// Returns the eigenvectors as rows in descending eigenvalue order together
/// with the eigenvalues.
pub fn pca_basis(train: &Mat, remove_direction: Option<&[f64]>) -> Result<(Mat, Vec<f64>)> {
    let (n_rows, n) = (train.rows(), train.cols());
    if n_rows == 0 {
        return Err(Error::invalid("pca needs a non-empty bank"));
    }
    let mut mean = vec![0.0; n];
    for r in train.row_iter() {
        axpy(1.0, r, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n_rows as f64);
    let unit = remove_direction.and_then(|d| {
        let dn = norm(d);
        (dn > 0.0).then(|| d.iter().map(|x| x / dn).collect::<Vec<f64>>())
    });

    let partials: Vec<Mat> = (0..n_rows)
        .step_by(REDUCE_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + REDUCE_CHUNK).min(n_rows);
            let mut acc = Mat::zeros(n, n);
            let mut x = vec![0.0; n];
            for i in start..end {
                for (xj, (a, m)) in x.iter_mut().zip(train.row(i).iter().zip(&mean)) {
                    *xj = a - m;
                }
                if let Some(u) = &unit {
                    let c = dot(&x, u);
                    axpy(-c, u, &mut x);
                }
                for r in 0..n {
                    let xr = x[r];
                    if xr == 0.0 {
                        continue;
                    }
                    axpy(xr, &x, acc.row_mut(r));
                }
            }
            acc
        })
        .collect();
    let mut cov = Mat::zeros(n, n);
    for part in &partials {
        for r in 0..n {
            axpy(1.0, part.row(r), cov.row_mut(r));
        }
    }
    let denom = (n_rows.max(2) - 1) as f64;
    for r in 0..n {
        cov.row_mut(r).iter_mut().for_each(|x| *x /= denom);
    }
    // Covariance is symmetric PSD, so its singular vectors are eigenvectors
    // and its singular values are the eigenvalues.
    let f = linalg::svd(&cov)?;
    Ok((f.vt, f.sigma))
}

/// Smallest number of leading eigenvalues covering `fraction` of the total.
pub fn components_for_variance(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, e) in eigenvalues.iter().enumerate() {
        acc += e;
        if acc >= fraction * total - 1e-12 * total {
            return i + 1;
        }
    }
    eigenvalues.len()
}

fn default_pca_dims(n: usize, eigenvalues: &[f64]) -> usize {
    if n == 2048 {
        512
    } else {
        components_for_variance(eigenvalues, 0.95)
    }
}

pub fn build_basis(
    strategy: BasisStrategy,
    fac: &HeadFactorization,
    train: &ActivationBank,
) -> Result<SubspaceSplit> {
    let n = fac.features();
    if train.cols() != n {
        return Err(Error::invalid(format!(
            "bank has {} features, head expects {n}",
            train.cols()
        )));
    }
    match strategy {
        BasisStrategy::Svd { k } => {
            let k = match k {
                Some(k) => k,
                None => select_k(fac, train)?,
            };
            split(fac, k)
        }
        BasisStrategy::Pca { d } | BasisStrategy::SiPca { d } => {
            if let Some(d) = d {
                if d > n {
                    return Err(Error::invalid(format!(
                        "pca direction count {d} exceeds feature dimension {n}"
                    )));
                }
            }
            let remove = matches!(strategy, BasisStrategy::SiPca { .. }).then_some(&fac.p[..]);
            let (eig, values) = pca_basis(train.features(), remove)?;
            let d = d.unwrap_or_else(|| default_pca_dims(n, &values));
            Ok(SubspaceSplit {
                k: d,
                v_dec: eig.row_range(0, d),
                v_insig: eig.row_range(d, n),
                kind: strategy.kind(),
            })
        }
        BasisStrategy::Nullspace => {
            if fac.nullspace_dim == 0 {
                return Err(Error::DegenerateBasis(
                    "head has a trivial nullspace".into(),
                ));
            }
            Ok(SubspaceSplit {
                k: fac.rank,
                v_dec: fac.rowspace_basis(),
                v_insig: fac.nullspace_basis(),
                kind: BasisKind::Nullspace,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head(rows: usize, cols: usize, data: &[f64]) -> WeightHead {
        WeightHead::new(Mat::new(rows, cols, data.to_vec()).unwrap(), None).unwrap()
    }

    fn bank(rows: &[Vec<f64>]) -> ActivationBank {
        ActivationBank::new(Mat::from_rows(rows, rows[0].len()).unwrap(), None).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_head(rng: &mut ChaCha8Rng, c: usize, n: usize) -> WeightHead {
        let data = (0..c * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        WeightHead::new(Mat::new(c, n, data).unwrap(), None).unwrap()
    }

    #[test]
    fn factorize_identity_and_scaled() {
        let f = factorize(&head(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((f.p[0] - 1.0).abs() < 1e-15 && (f.p[1] - 1.0).abs() < 1e-15);
        assert_eq!(f.nullspace_dim, 0);
        let f = factorize(&head(2, 2, &[2.0, 0.0, 0.0, 2.0])).unwrap();
        assert!((f.p[0] - 0.5).abs() < 1e-15 && (f.p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn factorize_wide_head_has_nullspace() {
        let h = head(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let f = factorize(&h).unwrap();
        let wp = h.w.matvec(&f.p).unwrap();
        assert!(wp.iter().all(|x| (x - 1.0).abs() < 1e-14));
        assert!(f.p[2].abs() < 1e-15);
        assert_eq!(f.nullspace_dim, 1);
        let q = f.nullspace_basis();
        assert_eq!(q.rows(), 1);
        assert!(h
            .w
            .matvec(q.row(0))
            .unwrap()
            .iter()
            .all(|x| x.abs() < 1e-14));
        assert!((q.row(0)[2].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn factorize_rejects_single_class() {
        assert!(matches!(
            factorize(&head(1, 3, &[1.0, 2.0, 3.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn select_k_symmetric_energy() {
        let f = factorize(&head(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = bank(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(select_k(&f, &b).unwrap(), 1);
    }

    #[test]
    fn select_k_one_sided_energy() {
        let f = factorize(&head(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = bank(&vec![vec![2.0, 0.0]; 3]);
        // brute force over k, full projections
        let curve = norm_balance_curve(&f, b.features()).unwrap();
        for (k, c) in curve.iter().enumerate() {
            let s = split(&f, k).unwrap();
            let a = b.features().row(0);
            let want =
                norm(&s.project_insignificant(a).unwrap()) - norm(&s.project_decisive(a).unwrap());
            assert!((c - want).abs() < 1e-12);
        }
        assert_eq!(select_k(&f, &b).unwrap(), 1);
    }

    #[test]
    fn select_k_matches_brute_force_on_random_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = random_head(&mut rng, 16, 64);
        let f = factorize(&h).unwrap();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..64).map(|_| rng.random_range(0.0..2.0)).collect())
            .collect();
        let b = bank(&rows);
        let curve = norm_balance_curve(&f, b.features()).unwrap();
        let mut brute = Vec::new();
        for k in 0..=f.rank {
            let s = split(&f, k).unwrap();
            let mean = rows
                .iter()
                .map(|a| {
                    norm(&s.project_insignificant(a).unwrap())
                        - norm(&s.project_decisive(a).unwrap())
                })
                .sum::<f64>()
                / rows.len() as f64;
            brute.push(mean);
        }
        for (c, b) in curve.iter().zip(&brute) {
            assert!((c - b).abs() < 1e-10);
        }
        let best = (1..=f.rank)
            .min_by(|&x, &y| brute[x].abs().total_cmp(&brute[y].abs()).then(x.cmp(&y)))
            .unwrap();
        assert_eq!(select_k(&f, &b).unwrap(), best);
        // decisive norms grow and insignificant norms shrink with k
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn split_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = factorize(&random_head(&mut rng, 3, 3)).unwrap();
        let a = random_vec(&mut rng, 3);
        let s0 = split(&f, 0).unwrap();
        assert!(s0.project_decisive(&a).unwrap().iter().all(|&x| x == 0.0));
        let insig = s0.project_insignificant(&a).unwrap();
        assert!(insig.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-12));
        let sf = split(&f, 3).unwrap();
        assert!(sf
            .project_insignificant(&a)
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        assert!(matches!(split(&f, 4), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn split_wide_head_k1() {
        let f = factorize(&head(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        let s = split(&f, 1).unwrap();
        assert_eq!((s.v_dec.rows(), s.v_insig.rows()), (1, 2));
        let d = s.v_dec.row(0);
        assert!(
            d[2].abs() < 1e-14
                && ((d[0].abs() - 1.0).abs() < 1e-14 || (d[1].abs() - 1.0).abs() < 1e-14)
        );
        let all = s.v_dec.vstack(&s.v_insig).unwrap();
        check_orthonormal_rows(&all, 1e-12).unwrap();
    }

    #[test]
    fn projection_axis_aligned() {
        let s = SubspaceSplit {
            k: 1,
            v_dec: Mat::new(1, 2, vec![1.0, 0.0]).unwrap(),
            v_insig: Mat::new(1, 2, vec![0.0, 1.0]).unwrap(),
            kind: BasisKind::Svd,
        };
        assert_eq!(s.project_decisive(&[3.0, 4.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(
            s.project_insignificant(&[3.0, 4.0]).unwrap(),
            vec![0.0, 4.0]
        );
        assert!(s.project_decisive(&[1.0]).is_err());
    }

    #[test]
    fn softmax_invariance_along_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let h = random_head(&mut rng, 5, 12);
            let f = factorize(&h).unwrap();
            let a = random_vec(&mut rng, 12);
            let base = softmax(&h.w.matvec(&a).unwrap());
            for alpha in [-10.0, -1.0, 1.0, 10.0] {
                let moved: Vec<f64> = a.iter().zip(&f.p).map(|(x, p)| x + alpha * p).collect();
                let s = softmax(&h.w.matvec(&moved).unwrap());
                for (x, y) in base.iter().zip(&s) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn logit_approximation_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let h = random_head(&mut rng, 6, 10);
            let f = factorize(&h).unwrap();
            let k = rng.random_range(0..=f.rank);
            let s = split(&f, k).unwrap();
            let a = random_vec(&mut rng, 10);
            let a_dec = s.project_decisive(&a).unwrap();
            let a_insig = s.project_insignificant(&a).unwrap();
            let full = h.w.matvec(&a).unwrap();
            let approx = h.w.matvec(&a_dec).unwrap();
            let err: f64 = norm(
                &full
                    .iter()
                    .zip(&approx)
                    .map(|(x, y)| x - y)
                    .collect::<Vec<_>>(),
            );
            let tail = norm(&f.svd.sigma[k..]);
            assert!(err <= tail * norm(&a_insig) + 1e-10);
        }
    }

    #[test]
    fn alignment_profile_examples() {
        let f = factorize(&head(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        let pn = norm(&f.p);
        let self_basis = Mat::new(1, 3, f.p.iter().map(|x| x / pn).collect()).unwrap();
        let prof = alignment_profile(&f, &self_basis).unwrap();
        assert!((prof[0] - 1.0).abs() < 1e-12);
        let orth = Mat::new(1, 3, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(alignment_profile(&f, &orth).unwrap(), vec![0.0]);
        let bad = Mat::new(1, 3, vec![2.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            alignment_profile(&f, &bad),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn pca_rank_one_data() {
        let f = factorize(&head(2, 2, &[1.0, 0.5, 0.0, 1.0])).unwrap();
        let b = bank(&[
            vec![1.0, 0.0],
            vec![-2.0, 0.0],
            vec![3.0, 0.0],
            vec![0.5, 0.0],
        ]);
        let s = build_basis(BasisStrategy::Pca { d: Some(1) }, &f, &b).unwrap();
        assert!((s.v_dec.row(0)[0].abs() - 1.0).abs() < 1e-12);
        assert!(matches!(
            build_basis(BasisStrategy::Pca { d: Some(3) }, &f, &b),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn si_pca_forces_p_into_residual() {
        let h = head(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let f = factorize(&h).unwrap();
        // most variance along p = (1, 1, 0), some along (1, -1, 0)
        let rows: Vec<Vec<f64>> = [
            (-2.0, 0.3),
            (-1.0, -0.2),
            (0.5, 0.1),
            (1.0, -0.3),
            (3.0, 0.2),
        ]
        .iter()
        .map(|(t, u)| vec![1.0 + t + u, 1.0 + t - u, 0.2])
        .collect();
        let pca = build_basis(BasisStrategy::Pca { d: Some(1) }, &f, &bank(&rows)).unwrap();
        assert!(dot(pca.v_dec.row(0), &f.p).abs() > 1.0);
        let s = build_basis(BasisStrategy::SiPca { d: Some(1) }, &f, &bank(&rows)).unwrap();
        assert!(dot(s.v_dec.row(0), &f.p).abs() < 1e-10);
    }

    #[test]
    fn nullspace_basis_strategy() {
        let h = head(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let f = factorize(&h).unwrap();
        let b = bank(&[vec![1.0, 2.0, 3.0]]);
        let s = build_basis(BasisStrategy::Nullspace, &f, &b).unwrap();
        assert_eq!(s.v_insig.rows(), 1);
        for q in s.v_insig.row_iter() {
            assert!(h.w.matvec(q).unwrap().iter().all(|x| x.abs() < 1e-14));
        }
        let sq = factorize(&head(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(matches!(
            build_basis(BasisStrategy::Nullspace, &sq, &bank(&[vec![1.0, 1.0]])),
            Err(Error::DegenerateBasis(_))
        ));
    }

    #[test]
    fn variance_coverage() {
        assert_eq!(components_for_variance(&[5.0, 3.0, 1.5, 0.5], 0.95), 3);
        assert_eq!(components_for_variance(&[1.0, 0.0], 0.95), 1);
        assert_eq!(components_for_variance(&[0.0, 0.0], 0.95), 0);
    }
}
