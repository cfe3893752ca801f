//! End-to-end detector: a fitted head decomposition, the insignificant bank
//! and batch scoring for every score method.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bank::ActivationBank;
use crate::error::{Error, Result};
use crate::eval::{self, Calibration, DEFAULT_LAMBDA_GRID, DEFAULT_PRUNE_GRID};
use crate::linalg::Mat;
use crate::scoring::{self, ScoreConfig, ScoreMethod, ScoreReport};
use crate::shaping::{self, ShapingConfig};
use crate::store::config::{BasisKind, RunConfig, Setting};
use crate::subspace::{self, HeadFactorization, SubspaceSplit, WeightHead};

/// Which part of the activation feeds the cosine score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SArrowComponent {
    /// The full activation `a`.
    Activation,
    Decisive,
    #[default]
    Insignificant,
}

impl SArrowComponent {
    pub const ALL: [SArrowComponent; 3] = [
        SArrowComponent::Activation,
        SArrowComponent::Decisive,
        SArrowComponent::Insignificant,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SArrowComponent::Activation => "a",
            SArrowComponent::Decisive => "a_dec",
            SArrowComponent::Insignificant => "a_insig",
        }
    }
}

impl fmt::Display for SArrowComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SArrowComponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "activation" | "full" => Ok(SArrowComponent::Activation),
            "a_dec" | "dec" | "decisive" => Ok(SArrowComponent::Decisive),
            "a_insig" | "insig" | "insignificant" => Ok(SArrowComponent::Insignificant),
            other => Err(Error::Config(format!("unknown component {other:?}"))),
        }
    }
}

/// Borrowed view of the fitted pieces.
#[derive(Debug, Clone, Copy)]
pub struct DetectorParts<'a> {
    pub head: &'a WeightHead,
    pub factorization: Option<&'a HeadFactorization>,
    pub split: Option<&'a SubspaceSplit>,
    /// Subsampled raw training activations.
    pub train_sample: &'a ActivationBank,
    /// Bank queried by the cosine score.
    pub bank: Option<&'a ActivationBank>,
}

#[derive(Debug, Clone)]
struct Fitted {
    fac: HeadFactorization,
    split: SubspaceSplit,
    bank: ActivationBank,
}

#[derive(Debug, Clone)]
pub struct Detector {
    head: WeightHead,
    config: RunConfig,
    score: ScoreConfig,
    component: SArrowComponent,
    train_sample: ActivationBank,
    fitted: Option<Fitted>,
}

impl Detector {
    pub fn fit(head: &WeightHead, train: &ActivationBank, config: &RunConfig) -> Result<Self> {
        Self::fit_with(head, train, config, SArrowComponent::Insignificant)
    }

    /// Fits the decomposition and bank. A head with fewer than two classes
    /// only supports the logit baselines.
    pub fn fit_with(
        head: &WeightHead,
        train: &ActivationBank,
        config: &RunConfig,
        component: SArrowComponent,
    ) -> Result<Self> {
        config.validate()?;
        if train.cols() != head.features() {
            return Err(Error::invalid(format!(
                "train bank has {} features, head expects {}",
                train.cols(),
                head.features()
            )));
        }
        let mut config = config.clone();
        if config.shaping_method == shaping::ShapingMethod::React && config.clamp_value.is_none() {
            config.clamp_value = Some(shaping::calibrate_react(train, config.clamp_percentile)?);
        }
        let train_sample = train.subsample(config.sample_fraction, config.seed)?;

        let fitted = if head.classes() >= 2 {
            Some(fit_subspace(head, &train_sample, &mut config, component)?)
        } else if config.method.needs_subspace() {
            return Err(Error::invalid(format!(
                "method {} needs at least 2 classes, head has {}",
                config.method,
                head.classes()
            )));
        } else {
            None
        };
        let score = config.score_config();
        score.validate()?;
        Ok(Self {
            head: head.clone(),
            config,
            score,
            component,
            train_sample,
            fitted,
        })
    }

    /// The configuration with every value that fitting resolved filled in.
    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn score_config(&self) -> &ScoreConfig {
        &self.score
    }

    pub fn component(&self) -> SArrowComponent {
        self.component
    }

    pub fn parts(&self) -> DetectorParts<'_> {
        DetectorParts {
            head: &self.head,
            factorization: self.fitted.as_ref().map(|f| &f.fac),
            split: self.fitted.as_ref().map(|f| &f.split),
            train_sample: &self.train_sample,
            bank: self.fitted.as_ref().map(|f| &f.bank),
        }
    }

    /// Same fit with different scoring parameters.
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.config.lambda = Setting::Fixed(lambda);
        self.score.lambda = lambda;
        self.score.validate()?;
        Ok(self)
    }

    pub fn with_shaping(mut self, shaping: ShapingConfig) -> Result<Self> {
        shaping.validate()?;
        if let Some(p) = shaping.prune_fraction() {
            self.config.shaping_p = Setting::Fixed(p);
        }
        self.config.shaping_method = shaping.method();
        if let ShapingConfig::React {
            clamp_value,
            clamp_percentile,
        } = shaping
        {
            self.config.clamp_value = clamp_value;
            self.config.clamp_percentile = clamp_percentile;
        }
        self.score.shaping = shaping;
        Ok(self)
    }

    fn fitted(&self) -> Result<&Fitted> {
        self.fitted
            .as_ref()
            .ok_or_else(|| Error::invalid("subspace scores need a head with at least 2 classes"))
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.head.features() {
            return Err(Error::invalid(format!(
                "input has {} features, head expects {}",
                x.cols(),
                self.head.features()
            )));
        }
        Ok(())
    }

    /// Scores every row of `x`; output order follows the input order.
    pub fn score_batch(&self, x: &Mat, method: ScoreMethod) -> Result<Vec<f64>> {
        self.check_input(x)?;
        match method {
            ScoreMethod::Energy | ScoreMethod::Msp => {
                let bias = self.config.use_bias;
                par_rows(x, |a| {
                    let l = self.head.logits(a, bias)?;
                    if method == ScoreMethod::Energy {
                        scoring::energy_score(&l)
                    } else {
                        scoring::msp_score(&l)
                    }
                })
            }
            ScoreMethod::Decisive => self.decisive_batch(x, &self.score.shaping),
            ScoreMethod::Insignificant => self.insignificant_batch(x),
            ScoreMethod::ActSub => {
                let dec = self.decisive_batch(x, &self.score.shaping)?;
                if self.score.lambda == 0.0 {
                    return Ok(dec);
                }
                let ins = self.insignificant_batch(x)?;
                Ok(ins
                    .iter()
                    .zip(&dec)
                    .map(|(&i, &d)| scoring::fuse(i, d, self.score.lambda))
                    .collect())
            }
        }
    }

    pub fn score_one(&self, a: &[f64], method: ScoreMethod) -> Result<f64> {
        let x = Mat::new(1, a.len(), a.to_vec())?;
        Ok(self.score_batch(&x, method)?[0])
    }

    pub fn report(&self, x: &Mat, method: ScoreMethod) -> Result<ScoreReport> {
        Ok(ScoreReport {
            method: method.to_string(),
            scores: self.score_batch(x, method)?,
            config: self.config.render(),
            seed: self.config.seed,
        })
    }

    /// Shaped-energy scores of the decisive component under `shaping`.
    pub fn decisive_batch(&self, x: &Mat, shaping: &ShapingConfig) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let f = self.fitted()?;
        let cfg = ScoreConfig {
            shaping: *shaping,
            ..self.score.clone()
        };
        par_rows(x, |a| scoring::decisive_score(a, &f.split, &f.fac, &cfg))
    }

    /// Cosine scores of the configured component against the bank.
    pub fn insignificant_batch(&self, x: &Mat) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let f = self.fitted()?;
        par_rows(x, |a| {
            let q = match self.component {
                SArrowComponent::Activation => a.to_vec(),
                SArrowComponent::Decisive => f.split.project_decisive(a)?,
                SArrowComponent::Insignificant => f.split.project_insignificant(a)?,
            };
            scoring::insignificant_score(&q, &f.bank, &self.score)
        })
    }
}

fn par_rows<F>(x: &Mat, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    (0..x.rows()).into_par_iter().map(|i| f(x.row(i))).collect()
}

fn fit_subspace(
    head: &WeightHead,
    sample: &ActivationBank,
    config: &mut RunConfig,
    component: SArrowComponent,
) -> Result<Fitted> {
    let fac = subspace::factorize(head)?;
    let split = subspace::build_basis(config.basis_strategy(), &fac, sample)?;
    match config.basis {
        BasisKind::Svd => config.k = Setting::Fixed(split.k),
        BasisKind::Pca | BasisKind::SiPca => config.pca_d = Setting::Fixed(split.k),
        BasisKind::Nullspace => {}
    }
    let projected = match component {
        SArrowComponent::Activation => sample.clone(),
        SArrowComponent::Decisive => sample.project_decisive(&split)?,
        SArrowComponent::Insignificant => sample.project_insignificant(&split)?,
    };
    let bank = if config.prototype_fraction > 0.0 {
        let k = ((config.prototype_fraction * projected.rows() as f64).round() as usize)
            .clamp(1, projected.rows());
        projected.prototypes(k, config.seed)?
    } else {
        projected
    };
    if bank.rows() < config.top_n {
        return Err(Error::Config(format!(
            "bank has {} rows after sampling, top_n is {}",
            bank.rows(),
            config.top_n
        )));
    }
    Ok(Fitted { fac, split, bank })
}

/// Validation activations used to resolve `auto` values.
#[derive(Debug, Clone, Copy)]
pub struct ValidationSplit<'a> {
    pub id: &'a Mat,
    pub ood: &'a Mat,
}

#[derive(Debug, Clone)]
pub struct Calibrated {
    pub detector: Detector,
    pub prune: Option<Calibration>,
    pub lambda: Option<Calibration>,
}

/// Fits a detector and resolves `auto` lambda and prune fraction by grid
/// search on the validation split. The prune fraction is chosen first, on the
/// decisive score alone; lambda is then chosen for the fused score.
pub fn calibrate(
    head: &WeightHead,
    train: &ActivationBank,
    config: &RunConfig,
    val: Option<ValidationSplit<'_>>,
    lambda_grid: Option<&[f64]>,
    prune_grid: Option<&[f64]>,
) -> Result<Calibrated> {
    let prunes = matches!(
        config.shaping_method,
        shaping::ShapingMethod::AshS | shaping::ShapingMethod::Scale
    );
    let need_p = config.shaping_p.is_auto() && prunes;
    let need_lambda = config.lambda.is_auto();
    if (need_p || need_lambda) && val.is_none() {
        return Err(Error::Config(
            "auto lambda or shaping.p needs validation splits".into(),
        ));
    }
    let mut fit_cfg = config.clone();
    if fit_cfg.lambda.is_auto() {
        fit_cfg.lambda = Setting::Fixed(scoring::DEFAULT_LAMBDA);
    }
    if fit_cfg.shaping_p.is_auto() {
        fit_cfg.shaping_p = Setting::Fixed(shaping::DEFAULT_PRUNE_FRACTION);
    }
    let mut det = Detector::fit(head, train, &fit_cfg)?;

    let mut prune = None;
    if need_p {
        let v = val.expect("checked above");
        let grid = prune_grid.unwrap_or(&DEFAULT_PRUNE_GRID);
        let base = det.score.shaping;
        let cal = eval::calibrate_shaping(grid, |p| {
            let s = base.with_prune_fraction(p);
            Ok((
                det.decisive_batch(v.id, &s)?,
                det.decisive_batch(v.ood, &s)?,
            ))
        })?;
        det = det.with_shaping(base.with_prune_fraction(cal.best))?;
        prune = Some(cal);
    }

    let mut lambda = None;
    if need_lambda {
        let v = val.expect("checked above");
        let grid = lambda_grid.unwrap_or(&DEFAULT_LAMBDA_GRID);
        let parts = |x: &Mat| -> Result<(Vec<f64>, Vec<f64>)> {
            Ok((
                det.insignificant_batch(x)?,
                det.decisive_batch(x, &det.score.shaping)?,
            ))
        };
        let (id_ins, id_dec) = parts(v.id)?;
        let (ood_ins, ood_dec) = parts(v.ood)?;
        let fused = |ins: &[f64], dec: &[f64], l: f64| -> Vec<f64> {
            ins.iter()
                .zip(dec)
                .map(|(&i, &d)| scoring::fuse(i, d, l))
                .collect()
        };
        let cal = eval::calibrate_lambda(grid, |l| {
            Ok((fused(&id_ins, &id_dec, l), fused(&ood_ins, &ood_dec, l)))
        })?;
        det = det.with_lambda(cal.best)?;
        lambda = Some(cal);
    }

    Ok(Calibrated {
        detector: det,
        prune,
        lambda,
    })
}
