//! Synthetic worlds: Gaussian class clusters in a low-dimensional semantic
//! subspace, label-independent nuisance variation, and OOD sets shifted along
//! either part. Also a small softmax-regression trainer.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bank::{ActivationBank, BankMeta};
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, norm, Mat};
use crate::scoring::softmax;
use crate::store::config::{parse_pairs, parse_value};
use crate::subspace::WeightHead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShiftMode {
    /// OOD class signal is weaker than ID.
    Decisive,
    /// OOD samples move along the nuisance subspace.
    Insignificant,
    Mixed,
}

impl ShiftMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShiftMode::Decisive => "decisive",
            ShiftMode::Insignificant => "insignificant",
            ShiftMode::Mixed => "mixed",
        }
    }
}

impl fmt::Display for ShiftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "decisive" => Ok(ShiftMode::Decisive),
            "insignificant" => Ok(ShiftMode::Insignificant),
            "mixed" => Ok(ShiftMode::Mixed),
            other => Err(Error::Config(format!("unknown shift mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub c: usize,
    pub n_train: usize,
    pub n_id_test: usize,
    pub n_ood_test: usize,
    /// Size of each validation split (ID and OOD); 0 skips them.
    pub n_val: usize,
    pub shift_mode: ShiftMode,
    pub shift_magnitude: f64,
    /// Decisive share of the squared shift in mixed mode.
    pub mixed_share: f64,
    pub nuisance_dim: usize,
    pub seed: u64,
    /// Distance of every class mean from the common offset.
    pub class_scale: f64,
    /// Isotropic per-coordinate noise.
    pub noise_std: f64,
    /// Per-direction noise inside the nuisance subspace.
    pub nuisance_std: f64,
    /// Constant added to every coordinate before the ReLU.
    pub base_level: f64,
    /// Training epochs for the exported head; 0 exports the planted head.
    pub epochs: usize,
    pub lr: f64,
    pub init_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 64,
            c: 8,
            n_train: 5000,
            n_id_test: 1000,
            n_ood_test: 1000,
            n_val: 0,
            shift_mode: ShiftMode::Insignificant,
            shift_magnitude: 4.0,
            mixed_share: 0.5,
            nuisance_dim: 16,
            seed: 0,
            class_scale: 4.0,
            noise_std: 0.5,
            nuisance_std: 1.0,
            base_level: 2.0,
            epochs: 300,
            lr: 1.0,
            init_std: 0.01,
        }
    }
}

pub const SPEC_KEYS: [&str; 18] = [
    "n",
    "c",
    "n_train",
    "n_id_test",
    "n_ood_test",
    "n_val",
    "shift_mode",
    "shift_magnitude",
    "mixed_share",
    "nuisance_dim",
    "seed",
    "class_scale",
    "noise_std",
    "nuisance_std",
    "base_level",
    "epochs",
    "lr",
    "init_std",
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {}",
                self.c
            )));
        }
        if self.c >= self.n {
            return Err(Error::invalid(format!(
                "classes ({}) must be fewer than features ({})",
                self.c, self.n
            )));
        }
        if self.nuisance_dim > self.n - self.c {
            return Err(Error::invalid(format!(
                "nuisance_dim {} exceeds n - c = {}",
                self.nuisance_dim,
                self.n - self.c
            )));
        }
        if self.n_train == 0 || self.n_id_test == 0 || self.n_ood_test == 0 {
            return Err(Error::invalid("sample counts must be positive"));
        }
        if self.nuisance_dim == 0
            && self.shift_mode != ShiftMode::Decisive
            && self.shift_magnitude != 0.0
        {
            return Err(Error::invalid("nuisance shift needs nuisance_dim >= 1"));
        }
        let finite = [
            self.shift_magnitude,
            self.class_scale,
            self.noise_std,
            self.nuisance_std,
            self.base_level,
            self.lr,
            self.init_std,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("spec contains non-finite values"));
        }
        if !(0.0..=1.0).contains(&self.mixed_share) {
            return Err(Error::invalid("mixed_share must lie in [0, 1]"));
        }
        if self.noise_std < 0.0 || self.nuisance_std < 0.0 || self.init_std < 0.0 || self.lr <= 0.0
        {
            return Err(Error::invalid(
                "standard deviations must be >= 0 and lr > 0",
            ));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = SynthSpec::default();
        for (line, key, value) in parse_pairs(text)? {
            let v = value.as_str();
            let k = key.as_str();
            match k {
                "n" => s.n = parse_value(line, k, v)?,
                "c" => s.c = parse_value(line, k, v)?,
                "n_train" => s.n_train = parse_value(line, k, v)?,
                "n_id_test" => s.n_id_test = parse_value(line, k, v)?,
                "n_ood_test" => s.n_ood_test = parse_value(line, k, v)?,
                "n_val" => s.n_val = parse_value(line, k, v)?,
                "shift_mode" => s.shift_mode = parse_value(line, k, v)?,
                "shift_magnitude" => s.shift_magnitude = parse_value(line, k, v)?,
                "mixed_share" => s.mixed_share = parse_value(line, k, v)?,
                "nuisance_dim" => s.nuisance_dim = parse_value(line, k, v)?,
                "seed" => s.seed = parse_value(line, k, v)?,
                "class_scale" => s.class_scale = parse_value(line, k, v)?,
                "noise_std" => s.noise_std = parse_value(line, k, v)?,
                "nuisance_std" => s.nuisance_std = parse_value(line, k, v)?,
                "base_level" => s.base_level = parse_value(line, k, v)?,
                "epochs" => s.epochs = parse_value(line, k, v)?,
                "lr" => s.lr = parse_value(line, k, v)?,
                "init_std" => s.init_std = parse_value(line, k, v)?,
                other => {
                    return Err(crate::error::FormatError::Text {
                        line,
                        msg: format!("unknown key {other:?}"),
                    }
                    .into())
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn render(&self) -> String {
        let values = [
            self.n.to_string(),
            self.c.to_string(),
            self.n_train.to_string(),
            self.n_id_test.to_string(),
            self.n_ood_test.to_string(),
            self.n_val.to_string(),
            self.shift_mode.to_string(),
            self.shift_magnitude.to_string(),
            self.mixed_share.to_string(),
            self.nuisance_dim.to_string(),
            self.seed.to_string(),
            self.class_scale.to_string(),
            self.noise_std.to_string(),
            self.nuisance_std.to_string(),
            self.base_level.to_string(),
            self.epochs.to_string(),
            self.lr.to_string(),
            self.init_std.to_string(),
        ];
        SPEC_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            epochs: self.epochs,
            lr: self.lr,
            init_std: self.init_std,
            seed: self.seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }
}

/// A generated experiment. `head` is the planted head whose rows are the
/// semantic directions.
#[derive(Debug, Clone)]
pub struct World {
    pub head: WeightHead,
    /// Rows `0..c` semantic, `c..c+nuisance_dim` nuisance, rest unused.
    pub frame: Mat,
    pub train: ActivationBank,
    pub id_test: ActivationBank,
    pub ood_test: ActivationBank,
    pub val_id: Option<ActivationBank>,
    pub val_ood: Option<ActivationBank>,
}

struct Sampler<'a> {
    spec: &'a SynthSpec,
    frame: &'a Mat,
    /// Unit vector in the nuisance subspace used for OOD shifts.
    shift_dir: Vec<f64>,
}

impl Sampler<'_> {
    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        count: usize,
        ood: bool,
        tag: &str,
    ) -> Result<ActivationBank> {
        let s = self.spec;
        let (dec_shift, insig_shift) = if !ood {
            (0.0, 0.0)
        } else {
            match s.shift_mode {
                ShiftMode::Decisive => (s.shift_magnitude, 0.0),
                ShiftMode::Insignificant => (0.0, s.shift_magnitude),
                ShiftMode::Mixed => (
                    s.shift_magnitude * s.mixed_share.sqrt(),
                    s.shift_magnitude * (1.0 - s.mixed_share).sqrt(),
                ),
            }
        };
        let mut data = Vec::with_capacity(count * s.n);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = rng.random_range(0..s.c);
            let mut a = vec![s.base_level; s.n];
            axpy(s.class_scale - dec_shift, self.frame.row(y), &mut a);
            for j in 0..s.nuisance_dim {
                let z: f64 = StandardNormal.sample(rng);
                axpy(s.nuisance_std * z, self.frame.row(s.c + j), &mut a);
            }
            if insig_shift != 0.0 {
                axpy(insig_shift, &self.shift_dir, &mut a);
            }
            for x in a.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x = (*x + s.noise_std * z).max(0.0);
            }
            data.extend_from_slice(&a);
            labels.push(y as u32);
        }
        let bank = ActivationBank::new(Mat::new(count, s.n, data)?, Some(labels))?;
        Ok(bank.with_meta(BankMeta {
            source: format!("synth:{tag}"),
            sample_fraction: 1.0,
            seed: Some(s.seed),
        }))
    }
}

/// Random orthonormal `n x n` frame from the SVD of a Gaussian matrix.
fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Result<Mat> {
    let g: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    let f = linalg::svd(&Mat::new(n, n, g)?)?;
    if f.rank() < n {
        return Err(Error::NumericalFailure(
            "random frame is rank deficient".into(),
        ));
    }
    Ok(f.vt)
}

pub fn gen_world(spec: &SynthSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frame = random_frame(&mut rng, spec.n)?;

    let mut shift_dir = vec![0.0; spec.n];
    if spec.nuisance_dim > 0 {
        for j in 0..spec.nuisance_dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            axpy(z, frame.row(spec.c + j), &mut shift_dir);
        }
        let len = norm(&shift_dir);
        shift_dir.iter_mut().for_each(|x| *x /= len);
    }

    let head = WeightHead::new(frame.row_range(0, spec.c), None)?;
    let sampler = Sampler {
        spec,
        frame: &frame,
        shift_dir,
    };
    let train = sampler.draw(&mut rng, spec.n_train, false, "train")?;
    let id_test = sampler.draw(&mut rng, spec.n_id_test, false, "id_test")?;
    let ood_test = sampler.draw(&mut rng, spec.n_ood_test, true, "ood_test")?;
    let (val_id, val_ood) = if spec.n_val > 0 {
        (
            Some(sampler.draw(&mut rng, spec.n_val, false, "val_id")?),
            Some(sampler.draw(&mut rng, spec.n_val, true, "val_ood")?),
        )
    } else {
        (None, None)
    };
    Ok(World {
        head,
        frame,
        train,
        id_test,
        ood_test,
        val_id,
        val_ood,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1.0,
            init_std: 0.01,
            seed: 0,
        }
    }
}

/// Mean cross-entropy and its gradient with respect to `W`.
fn loss_and_grad(w: &Mat, x: &Mat, labels: &[u32]) -> Result<(f64, Mat)> {
    let (c, n) = (w.rows(), w.cols());
    let mut grad = vec![0.0; c * n];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let a = x.row(i);
        let l = w.matvec(a)?;
        let mut p = softmax(&l);
        loss -= p[y as usize].max(f64::MIN_POSITIVE).ln();
        p[y as usize] -= 1.0;
        for (j, pj) in p.iter().enumerate() {
            axpy(*pj, a, &mut grad[j * n..(j + 1) * n]);
        }
    }
    let inv = 1.0 / labels.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    if !loss.is_finite() {
        return Err(Error::NumericalFailure(
            "training loss is not finite".into(),
        ));
    }
    Ok((loss * inv, Mat::new(c, n, grad)?))
}

/// Full-batch gradient descent on softmax cross-entropy without bias.
///
/// A step that raises the loss is undone and the learning rate halved, so the
/// recorded loss never increases. Returns the head and the loss history
/// (initial loss first).
pub fn train_head_with_history(
    train: &ActivationBank,
    classes: usize,
    spec: &TrainSpec,
) -> Result<(WeightHead, Vec<f64>)> {
    let labels = train
        .labels()
        .ok_or_else(|| Error::invalid("training bank has no labels"))?;
    if classes < 1 {
        return Err(Error::invalid("need at least one class"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    let n = train.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let init: Vec<f64> = (0..classes * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.init_std * z
        })
        .collect();
    let mut w = Mat::new(classes, n, init)?;
    if spec.epochs == 0 {
        return Ok((WeightHead::new(w, None)?, Vec::new()));
    }
    let x = train.features();
    let (mut loss, mut grad) = loss_and_grad(&w, x, labels)?;
    let mut history = vec![loss];
    let mut lr = spec.lr;
    for _ in 0..spec.epochs {
        let mut step = w.data().to_vec();
        axpy(-lr, grad.data(), &mut step);
        let cand = match Mat::new(classes, n, step) {
            Ok(m) => m,
            Err(_) => return Err(Error::NumericalFailure("weights diverged".into())),
        };
        let (l2, g2) = loss_and_grad(&cand, x, labels)?;
        if l2 <= loss {
            w = cand;
            loss = l2;
            grad = g2;
        } else {
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        }
        history.push(loss);
    }
    Ok((WeightHead::new(w, None)?, history))
}

pub fn train_head(train: &ActivationBank, classes: usize, spec: &TrainSpec) -> Result<WeightHead> {
    train_head_with_history(train, classes, spec).map(|(h, _)| h)
}

/// Fraction of rows whose largest logit is the label.
pub fn accuracy(head: &WeightHead, bank: &ActivationBank) -> Result<f64> {
    let labels = bank
        .labels()
        .ok_or_else(|| Error::invalid("bank has no labels"))?;
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let l = head.logits(bank.row(i), false)?;
        let arg = (0..l.len())
            .max_by(|&a, &b| l[a].total_cmp(&l[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        hits += usize::from(arg == y as usize);
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn small(mode: ShiftMode, magnitude: f64) -> SynthSpec {
        SynthSpec {
            n: 24,
            c: 4,
            n_train: 400,
            n_id_test: 300,
            n_ood_test: 300,
            shift_mode: mode,
            shift_magnitude: magnitude,
            nuisance_dim: 8,
            epochs: 0,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn spec_round_trip_and_validation() {
        let s = small(ShiftMode::Mixed, 1.5);
        assert_eq!(SynthSpec::parse(&s.render()).unwrap(), s);
        assert!(SynthSpec { c: 24, ..s.clone() }.validate().is_err());
        assert!(SynthSpec {
            nuisance_dim: 21,
            ..s.clone()
        }
        .validate()
        .is_err());
        assert!(SynthSpec::parse("n=8\nwhat=1\n").is_err());
    }

    #[test]
    fn deterministic_and_non_negative() {
        let s = small(ShiftMode::Insignificant, 3.0);
        let a = gen_world(&s).unwrap();
        let b = gen_world(&s).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.ood_test, b.ood_test);
        assert!(a.train.features().data().iter().all(|&x| x >= 0.0));
        assert!(a.id_test.features().data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn insignificant_shift_stays_in_nuisance_subspace() {
        // No ReLU clipping: large base level, no isotropic noise.
        let s = SynthSpec {
            n_id_test: 4000,
            n_ood_test: 4000,
            base_level: 50.0,
            noise_std: 0.0,
            ..small(ShiftMode::Insignificant, 10.0)
        };
        let w = gen_world(&s).unwrap();
        let mean = |b: &ActivationBank| -> Vec<f64> {
            let mut m = vec![0.0; s.n];
            for i in 0..b.rows() {
                axpy(1.0 / b.rows() as f64, b.row(i), &mut m);
            }
            m
        };
        let (mi, mo) = (mean(&w.id_test), mean(&w.ood_test));
        let d: Vec<f64> = mo.iter().zip(&mi).map(|(o, i)| o - i).collect();
        let mut in_nuisance = 0.0;
        for j in 0..s.nuisance_dim {
            in_nuisance += dot(w.frame.row(s.c + j), &d).powi(2);
        }
        let total = dot(&d, &d);
        assert!((norm(&d) - 10.0).abs() < 0.5);
        assert!(in_nuisance / total > 0.99, "{}", in_nuisance / total);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let x = Mat::new(4, 2, vec![2.0, 0.1, 1.5, 0.3, 0.1, 2.0, 0.2, 1.7]).unwrap();
        let bank = ActivationBank::new(x, Some(vec![0, 0, 1, 1])).unwrap();
        let (h, hist) = train_head_with_history(&bank, 2, &TrainSpec::default()).unwrap();
        assert_eq!(accuracy(&h, &bank).unwrap(), 1.0);
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let w = gen_world(&small(ShiftMode::Decisive, 1.0)).unwrap();
        let spec = TrainSpec {
            epochs: 0,
            seed: 3,
            ..TrainSpec::default()
        };
        let a = train_head(&w.train, 4, &spec).unwrap();
        let b = train_head(&w.train, 4, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.w.data().iter().all(|x| x.abs() < 0.1));
    }
}
