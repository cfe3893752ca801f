//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are rejected. [`RunConfig::render`] always writes every key in a fixed
//! order, so rendering a parsed canonical file reproduces it byte for byte.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, FormatError, Result};
use crate::scoring::{ScoreConfig, ScoreMethod, COS_CLAMP_EPS, DEFAULT_LAMBDA, DEFAULT_TOP_N};
use crate::shaping::{
    ShapingConfig, ShapingMethod, DEFAULT_CLAMP_PERCENTILE, DEFAULT_PRUNE_FRACTION,
};
use crate::subspace::BasisStrategy;

use super::write_atomic;

/// A value that is either fixed or left for calibration to resolve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting<T> {
    Auto,
    Fixed(T),
}

impl<T: Copy> Setting<T> {
    pub fn fixed(&self) -> Option<T> {
        match self {
            Setting::Auto => None,
            Setting::Fixed(v) => Some(*v),
        }
    }

    pub fn is_auto(&self) -> bool {
        matches!(self, Setting::Auto)
    }
}

impl<T: fmt::Display> fmt::Display for Setting<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Auto => f.write_str("auto"),
            Setting::Fixed(v) => v.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Svd,
    Pca,
    SiPca,
    Nullspace,
}

impl BasisKind {
    pub const ALL: [BasisKind; 4] = [
        BasisKind::Svd,
        BasisKind::Pca,
        BasisKind::SiPca,
        BasisKind::Nullspace,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BasisKind::Svd => "svd",
            BasisKind::Pca => "pca",
            BasisKind::SiPca => "si-pca",
            BasisKind::Nullspace => "nullspace",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svd" => Ok(BasisKind::Svd),
            "pca" => Ok(BasisKind::Pca),
            "si-pca" | "si_pca" | "sipca" => Ok(BasisKind::SiPca),
            "nullspace" | "null-space" | "null_space" => Ok(BasisKind::Nullspace),
            other => Err(Error::Config(format!("unknown basis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: ScoreMethod,
    pub k: Setting<usize>,
    pub lambda: Setting<f64>,
    pub top_n: usize,
    pub shaping_method: ShapingMethod,
    pub shaping_p: Setting<f64>,
    pub clamp_percentile: f64,
    /// ReAct clamp; filled in by calibration.
    pub clamp_value: Option<f64>,
    pub sample_fraction: f64,
    /// Fraction of the training set kept as k-means prototypes; 0 disables.
    pub prototype_fraction: f64,
    pub seed: u64,
    pub basis: BasisKind,
    pub pca_d: Setting<usize>,
    pub use_bias: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: ScoreMethod::ActSub,
            k: Setting::Auto,
            lambda: Setting::Fixed(DEFAULT_LAMBDA),
            top_n: DEFAULT_TOP_N,
            shaping_method: ShapingMethod::Scale,
            shaping_p: Setting::Fixed(DEFAULT_PRUNE_FRACTION),
            clamp_percentile: DEFAULT_CLAMP_PERCENTILE,
            clamp_value: None,
            sample_fraction: 0.1,
            prototype_fraction: 0.0,
            seed: 0,
            basis: BasisKind::Svd,
            pca_d: Setting::Auto,
            use_bias: false,
        }
    }
}

pub const KEYS: [&str; 14] = [
    "method",
    "k",
    "lambda",
    "top_n",
    "shaping.method",
    "shaping.p",
    "shaping.clamp_percentile",
    "shaping.clamp_value",
    "sample_fraction",
    "prototype_fraction",
    "seed",
    "basis",
    "pca.d",
    "use_bias",
];

/// Splits `key=value` text into `(line number, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, FormatError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| FormatError::Text {
            line,
            msg: format!("expected key=value, got {t:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if out.iter().any(|(_, prev, _)| prev == k) {
            return Err(FormatError::Text {
                line,
                msg: format!("duplicate key {k:?}"),
            });
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn bad(line: usize, key: &str, value: &str, why: impl fmt::Display) -> Error {
    FormatError::Text {
        line,
        msg: format!("{key}={value}: {why}"),
    }
    .into()
}

pub(crate) fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(line, key, value, e))
}

fn parse_setting<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Setting<T>>
where
    T::Err: fmt::Display,
{
    if value.eq_ignore_ascii_case("auto") {
        Ok(Setting::Auto)
    } else {
        parse_value(line, key, value).map(Setting::Fixed)
    }
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(line, key, value, "expected true or false")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (line, key, value) in parse_pairs(text)? {
            let v = value.as_str();
            match key.as_str() {
                "method" => cfg.method = parse_value(line, &key, v)?,
                "k" => cfg.k = parse_setting(line, &key, v)?,
                "lambda" => cfg.lambda = parse_setting(line, &key, v)?,
                "top_n" => cfg.top_n = parse_value(line, &key, v)?,
                "shaping.method" => cfg.shaping_method = parse_value(line, &key, v)?,
                "shaping.p" => cfg.shaping_p = parse_setting(line, &key, v)?,
                "shaping.clamp_percentile" => cfg.clamp_percentile = parse_value(line, &key, v)?,
                "shaping.clamp_value" => {
                    cfg.clamp_value = if v.eq_ignore_ascii_case("none") {
                        None
                    } else {
                        Some(parse_value(line, &key, v)?)
                    }
                }
                "sample_fraction" => cfg.sample_fraction = parse_value(line, &key, v)?,
                "prototype_fraction" => cfg.prototype_fraction = parse_value(line, &key, v)?,
                "seed" => cfg.seed = parse_value(line, &key, v)?,
                "basis" => cfg.basis = parse_value(line, &key, v)?,
                "pca.d" => cfg.pca_d = parse_setting(line, &key, v)?,
                "use_bias" => cfg.use_bias = parse_bool(line, &key, v)?,
                other => {
                    return Err(FormatError::Text {
                        line,
                        msg: format!("unknown key {other:?}"),
                    }
                    .into())
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.top_n == 0 {
            return err("top_n must be at least 1".into());
        }
        if let Setting::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return err(format!("lambda must be non-negative, got {l}"));
            }
        }
        if let Setting::Fixed(p) = self.shaping_p {
            if !(0.0..1.0).contains(&p) {
                return err(format!("shaping.p must lie in [0, 1), got {p}"));
            }
        }
        if !(self.clamp_percentile > 0.0 && self.clamp_percentile <= 1.0) {
            return err(format!(
                "shaping.clamp_percentile must lie in (0, 1], got {}",
                self.clamp_percentile
            ));
        }
        if self.clamp_value.is_some_and(|c| !c.is_finite()) {
            return err("shaping.clamp_value must be finite".into());
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return err(format!(
                "sample_fraction must lie in (0, 1], got {}",
                self.sample_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.prototype_fraction) {
            return err(format!(
                "prototype_fraction must lie in [0, 1], got {}",
                self.prototype_fraction
            ));
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order, shortest round-trip floats.
    pub fn render(&self) -> String {
        let clamp = self
            .clamp_value
            .map_or_else(|| "none".to_string(), |c| c.to_string());
        let values: [String; 14] = [
            self.method.to_string(),
            self.k.to_string(),
            self.lambda.to_string(),
            self.top_n.to_string(),
            self.shaping_method.to_string(),
            self.shaping_p.to_string(),
            self.clamp_percentile.to_string(),
            clamp,
            self.sample_fraction.to_string(),
            self.prototype_fraction.to_string(),
            self.seed.to_string(),
            self.basis.to_string(),
            self.pca_d.to_string(),
            self.use_bias.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    /// Shaping function for this config; `auto` prune fractions fall back to
    /// the default.
    pub fn shaping(&self) -> ShapingConfig {
        let p = self.shaping_p.fixed().unwrap_or(DEFAULT_PRUNE_FRACTION);
        match self.shaping_method {
            ShapingMethod::Identity => ShapingConfig::Identity,
            ShapingMethod::React => ShapingConfig::React {
                clamp_percentile: self.clamp_percentile,
                clamp_value: self.clamp_value,
            },
            ShapingMethod::AshS => ShapingConfig::AshS { prune_fraction: p },
            ShapingMethod::Scale => ShapingConfig::Scale { prune_fraction: p },
        }
    }

    /// Scoring parameters; `auto` lambda falls back to the default.
    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            lambda: self.lambda.fixed().unwrap_or(DEFAULT_LAMBDA),
            top_n: self.top_n,
            shaping: self.shaping(),
            use_bias_in_logits: self.use_bias,
            cos_clamp_eps: COS_CLAMP_EPS,
        }
    }

    pub fn basis_strategy(&self) -> BasisStrategy {
        match self.basis {
            BasisKind::Svd => BasisStrategy::Svd { k: self.k.fixed() },
            BasisKind::Pca => BasisStrategy::Pca {
                d: self.pca_d.fixed(),
            },
            BasisKind::SiPca => BasisStrategy::SiPca {
                d: self.pca_d.fixed(),
            },
            BasisKind::Nullspace => BasisStrategy::Nullspace,
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let text = RunConfig::default().render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, RunConfig::default());
        assert_eq!(back.render(), text);
    }

    #[test]
    fn parses_partial_file_with_comments() {
        let cfg = RunConfig::parse("# run\n\nlambda = 2\nk=auto\nshaping.method=ash-s\nshaping.p=0.9\nbasis=si-pca\npca.d=12\n").unwrap();
        assert_eq!(cfg.lambda, Setting::Fixed(2.0));
        assert_eq!(
            cfg.shaping(),
            ShapingConfig::AshS {
                prune_fraction: 0.9
            }
        );
        assert_eq!(cfg.basis_strategy(), BasisStrategy::SiPca { d: Some(12) });
    }

    #[test]
    fn rejects_unknown_duplicate_and_bad_values() {
        let e = RunConfig::parse("lambda=1\nbogus=3\n").unwrap_err();
        assert!(matches!(
            e,
            Error::Format(FormatError::Text { line: 2, .. })
        ));
        assert!(RunConfig::parse("seed=1\nseed=2\n").is_err());
        assert!(RunConfig::parse("top_n=ten\n").is_err());
        assert!(RunConfig::parse("top_n=0\n").is_err());
        assert!(RunConfig::parse("shaping.p=1.0\n").is_err());
        assert!(RunConfig::parse("sample_fraction\n").is_err());
        assert!(RunConfig::parse("basis=ica\n").is_err());
    }

    #[test]
    fn clamp_value_round_trip() {
        let cfg = RunConfig {
            shaping_method: ShapingMethod::React,
            clamp_value: Some(1.2345678901234567),
            lambda: Setting::Auto,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    }
}
