//! Scalar OOD scores. Every score here is "higher = more in-distribution".

use std::fmt;
use std::str::FromStr;

use crate::bank::ActivationBank;
use crate::error::{Error, Result};
use crate::shaping::{shape, ShapingConfig};
use crate::subspace::{HeadFactorization, SubspaceSplit};

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const COS_CLAMP_EPS: f64 = 1e-12;

/// Score functions exposed end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMethod {
    /// Fused `insignificant^lambda * decisive`.
    ActSub,
    /// logsumexp of the raw logits.
    Energy,
    /// Maximum softmax probability of the raw logits.
    Msp,
    /// Energy of the shaped decisive component.
    Decisive,
    /// Top-N cosine score of the insignificant component.
    Insignificant,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 5] = [
        ScoreMethod::ActSub,
        ScoreMethod::Energy,
        ScoreMethod::Msp,
        ScoreMethod::Decisive,
        ScoreMethod::Insignificant,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMethod::ActSub => "actsub",
            ScoreMethod::Energy => "energy",
            ScoreMethod::Msp => "msp",
            ScoreMethod::Decisive => "decisive",
            ScoreMethod::Insignificant => "insignificant",
        }
    }

    /// Whether the method needs the subspace decomposition at all.
    pub fn needs_subspace(&self) -> bool {
        !matches!(self, ScoreMethod::Energy | ScoreMethod::Msp)
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown score method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    /// Exponent on the insignificant score in the fused score.
    pub lambda: f64,
    /// Number of nearest bank rows averaged in the insignificant score.
    pub top_n: usize,
    pub shaping: ShapingConfig,
    pub use_bias_in_logits: bool,
    pub cos_clamp_eps: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            top_n: DEFAULT_TOP_N,
            shaping: ShapingConfig::default(),
            use_bias_in_logits: false,
            cos_clamp_eps: COS_CLAMP_EPS,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.cos_clamp_eps > 0.0 && self.cos_clamp_eps < 1.0) {
            return Err(Error::Config("cos_clamp_eps must lie in (0, 1)".into()));
        }
        self.shaping.validate()
    }
}

/// Per-sample scores for one method together with where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub method: String,
    pub scores: Vec<f64>,
    /// Rendered configuration the scores were produced with.
    pub config: String,
    pub seed: u64,
}

fn check_finite(l: &[f64]) -> Result<()> {
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("logits contain non-finite values"));
    }
    Ok(())
}

/// Max-shifted softmax.
pub fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Maximum softmax probability.
pub fn msp_score(l: &[f64]) -> Result<f64> {
    if l.is_empty() {
        return Err(Error::invalid("msp of empty logits"));
    }
    check_finite(l)?;
    Ok(softmax(l).into_iter().fold(0.0, f64::max))
}

/// `logsumexp(l)`, the negative free energy at unit temperature.
pub fn energy_score(l: &[f64]) -> Result<f64> {
    if l.is_empty() {
        return Err(Error::invalid("energy of empty logits"));
    }
    check_finite(l)?;
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = l.iter().map(|x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// `-log(1 - m)` where `m` is the clamped mean of the `top_n` highest cosine
/// similarities between the query and the bank rows.
pub fn insignificant_score(
    a_insig: &[f64],
    bank_insig: &ActivationBank,
    cfg: &ScoreConfig,
) -> Result<f64> {
    if bank_insig.rows() < cfg.top_n {
        return Err(Error::invalid(format!(
            "bank has {} rows, top_n is {}",
            bank_insig.rows(),
            cfg.top_n
        )));
    }
    let top = bank_insig.top_n_cosine(a_insig, cfg.top_n)?;
    let m = top.iter().sum::<f64>() / top.len() as f64;
    Ok(similarity_to_score(m, cfg.cos_clamp_eps))
}

/// The range-expanding map `m -> -log(1 - m)` after clamping `m` into
/// `[-1 + eps, 1 - eps]`.
pub fn similarity_to_score(m: f64, eps: f64) -> f64 {
    let m = m.clamp(-1.0 + eps, 1.0 - eps);
    -(1.0 - m).ln()
}

/// Energy of the logits recomputed from the shaped decisive component.
///
/// The shaped vector is re-projected onto the decisive basis before the head
/// is applied; for the SVD basis this is exactly `U S V_dec^T shape(a_dec)`.
pub fn decisive_score(
    a: &[f64],
    split: &SubspaceSplit,
    fac: &HeadFactorization,
    cfg: &ScoreConfig,
) -> Result<f64> {
    let a_dec = split.project_decisive(a)?;
    let shaped = shape(&cfg.shaping, &a_dec)?;
    let y = split.decisive_reproject(&shaped)?;
    let logits = fac.head.logits(&y, cfg.use_bias_in_logits)?;
    energy_score(&logits)
}

/// `s_insig^lambda * s_dec`, with `lambda = 0` returning `s_dec` exactly.
pub fn fuse(s_insig: f64, s_dec: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return s_dec;
    }
    if s_dec <= 0.0 {
        log::warn!("decisive score {s_dec} is not positive; fused ranking may invert");
    }
    s_insig.powf(lambda) * s_dec
}

pub fn actsub_score(
    a: &[f64],
    split: &SubspaceSplit,
    fac: &HeadFactorization,
    bank_insig: &ActivationBank,
    cfg: &ScoreConfig,
) -> Result<f64> {
    let s_dec = decisive_score(a, split, fac, cfg)?;
    if cfg.lambda == 0.0 {
        return Ok(s_dec);
    }
    let a_insig = split.project_insignificant(a)?;
    let s_insig = insignificant_score(&a_insig, bank_insig, cfg)?;
    Ok(fuse(s_insig, s_dec, cfg.lambda))
}

/// Threshold decision: `true` flags the input as OOD. Scores are ID-positive,
/// so a sample is flagged when its score falls strictly below `tau`; a score
/// equal to `tau` counts as in-distribution.
pub fn decide(score: f64, tau: f64) -> bool {
    score < tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, Mat};
    use crate::subspace::{factorize, split, WeightHead};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank(rows: &[Vec<f64>]) -> ActivationBank {
        ActivationBank::new(Mat::from_rows(rows, rows[0].len()).unwrap(), None).unwrap()
    }

    fn identity_cfg(top_n: usize) -> ScoreConfig {
        ScoreConfig {
            top_n,
            shaping: ShapingConfig::Identity,
            ..ScoreConfig::default()
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(softmax(&[7.3]), vec![1.0]);
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
        let s = softmax(&[1.0, -2.0, 3.5, 0.0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn msp_examples() {
        assert_eq!(msp_score(&[0.0, 0.0]).unwrap(), 0.5);
        let want = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((msp_score(&[10.0, 0.0]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.9999546).abs() < 1e-7);
        assert_eq!(msp_score(&[3.0]).unwrap(), 1.0);
    }

    #[test]
    fn energy_examples() {
        assert!((energy_score(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(energy_score(&[-4.25]).unwrap(), -4.25);
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((energy_score(&[1.0, 2.0, 3.0]).unwrap() - direct).abs() < 1e-14);
        assert!((direct - 3.40761).abs() < 1e-5);
        assert!(energy_score(&[f64::NAN]).is_err());
    }

    #[test]
    fn energy_shift_covariance() {
        let l = [0.3, -1.2, 4.0];
        let shifted: Vec<f64> = l.iter().map(|x| x + 17.5).collect();
        let d = energy_score(&shifted).unwrap() - energy_score(&l).unwrap();
        assert!((d - 17.5).abs() < 1e-10);
    }

    #[test]
    fn insignificant_score_examples() {
        let b = bank(&[vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let s = insignificant_score(&[1.0, 2.0, 0.0], &b, &identity_cfg(1)).unwrap();
        assert!((s - 27.631).abs() < 1e-3);
        assert!((s + (1e-12f64).ln()).abs() < 1e-3);

        let orth = bank(&[vec![0.0, 1.0], vec![0.0, -1.0]]);
        assert_eq!(
            insignificant_score(&[1.0, 0.0], &orth, &identity_cfg(2)).unwrap(),
            0.0
        );

        let m = 1.0 - (-1.0f64).exp();
        assert!((similarity_to_score(m, COS_CLAMP_EPS) - 1.0).abs() < 1e-12);

        assert!(matches!(
            insignificant_score(&[1.0, 0.0], &orth, &identity_cfg(3)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn insignificant_score_scale_invariant_and_monotone() {
        let b = bank(&[
            vec![1.0, 0.2, 0.0],
            vec![0.3, 1.0, 0.5],
            vec![0.0, 0.1, 1.0],
        ]);
        let cfg = identity_cfg(2);
        let q = [0.4, 0.6, 0.1];
        let base = insignificant_score(&q, &b, &cfg).unwrap();
        let scaled: Vec<f64> = q.iter().map(|x| x * 37.0).collect();
        assert!((insignificant_score(&scaled, &b, &cfg).unwrap() - base).abs() < 1e-9);
        let mut prev = similarity_to_score(0.0, COS_CLAMP_EPS);
        for i in 1..=100 {
            let s = similarity_to_score(i as f64 / 100.0 * (1.0 - 1e-12), COS_CLAMP_EPS);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn decisive_score_full_rank_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Mat::new(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let head = WeightHead::new(w.clone(), None).unwrap();
        let f = factorize(&head).unwrap();
        let s = split(&f, f.rank).unwrap();
        let a = [0.3, 1.1, -0.4, 2.0];
        let want = energy_score(&w.matvec(&a).unwrap()).unwrap();
        let got = decisive_score(&a, &s, &f, &identity_cfg(1)).unwrap();
        assert!((got - want).abs() < 1e-8);
    }

    #[test]
    fn decisive_score_empty_decisive_is_log_c() {
        let w = Mat::new(3, 5, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let f = factorize(&WeightHead::new(w, None).unwrap()).unwrap();
        let s = split(&f, 0).unwrap();
        let got = decisive_score(&[1.0, 2.0, 3.0, 4.0, 5.0], &s, &f, &identity_cfg(1)).unwrap();
        assert!((got - 3f64.ln()).abs() < 1e-15);
    }

    /// Dense path: builds U, diag(S) and the zero-padded V_dec^T explicitly.
    #[test]
    fn decisive_score_matches_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let (c, n) = (5, 9);
            let w = Mat::new(
                c,
                n,
                (0..c * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let f = factorize(&WeightHead::new(w, None).unwrap()).unwrap();
            let k = rng.random_range(0..=f.rank);
            let s = split(&f, k).unwrap();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();

            let r = f.svd.sigma.len();
            let mut vdec_t = Mat::zeros(r, n);
            for i in 0..k {
                vdec_t.row_mut(i).copy_from_slice(f.svd.vt.row(i));
            }
            let proj = vdec_t.transpose().matmul(&vdec_t).unwrap();
            let a_dec = proj.matvec(&a).unwrap();
            let us = f.svd.u.matmul(&Mat::diag(&f.svd.sigma)).unwrap();
            let logits = us.matmul(&vdec_t).unwrap().matvec(&a_dec).unwrap();
            let want = energy_score(&logits).unwrap();

            let got = decisive_score(&a, &s, &f, &identity_cfg(1)).unwrap();
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse(3.0, 5.0, 2.0), 45.0);
        assert_eq!(fuse(0.0, 5.0, 1.0), 0.0);
        assert_eq!(fuse(0.0, 5.0, 0.0), 5.0);
        assert_eq!(fuse(f64::NAN, 5.0, 0.0), 5.0);
    }

    #[test]
    fn actsub_lambda_zero_is_decisive() {
        let w = Mat::new(2, 3, vec![1.0, 0.5, 0.0, -0.3, 1.0, 0.2]).unwrap();
        let f = factorize(&WeightHead::new(w, None).unwrap()).unwrap();
        let s = split(&f, 1).unwrap();
        let b = bank(&[vec![1.0, 1.0, 1.0]])
            .project_insignificant(&s)
            .unwrap();
        let cfg = ScoreConfig {
            lambda: 0.0,
            top_n: 1,
            shaping: ShapingConfig::Identity,
            ..ScoreConfig::default()
        };
        let a = [0.2, 0.7, 1.5];
        assert_eq!(
            actsub_score(&a, &s, &f, &b, &cfg).unwrap(),
            decisive_score(&a, &s, &f, &cfg).unwrap()
        );
        let cfg1 = ScoreConfig { lambda: 1.0, ..cfg };
        let want = insignificant_score(&s.project_insignificant(&a).unwrap(), &b, &cfg1).unwrap()
            * decisive_score(&a, &s, &f, &cfg1).unwrap();
        assert!((actsub_score(&a, &s, &f, &b, &cfg1).unwrap() - want).abs() < 1e-12);
        assert!(norm(&a) > 0.0);
    }

    #[test]
    fn decision_rule() {
        assert!(!decide(5.0, 3.0));
        assert!(decide(2.0, 3.0));
        assert!(!decide(3.0, 3.0));
    }

    #[test]
    fn config_validation() {
        assert!(ScoreConfig::default().validate().is_ok());
        assert!(ScoreConfig {
            top_n: 0,
            ..ScoreConfig::default()
        }
        .validate()
        .is_err());
        assert!(ScoreConfig {
            lambda: -1.0,
            ..ScoreConfig::default()
        }
        .validate()
        .is_err());
    }
}
