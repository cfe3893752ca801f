//! Activation shaping applied to the decisive component before energy
//! scoring.

use std::fmt;
use std::str::FromStr;

use crate::bank::ActivationBank;
use crate::error::{Error, Result};
use crate::linalg::percentile;

pub const DEFAULT_PRUNE_FRACTION: f64 = 0.85;
pub const DEFAULT_CLAMP_PERCENTILE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapingMethod {
    Identity,
    React,
    AshS,
    Scale,
}

impl ShapingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapingMethod::Identity => "identity",
            ShapingMethod::React => "react",
            ShapingMethod::AshS => "ash-s",
            ShapingMethod::Scale => "scale",
        }
    }
}

impl fmt::Display for ShapingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(ShapingMethod::Identity),
            "react" => Ok(ShapingMethod::React),
            "ash-s" | "ash_s" | "ashs" => Ok(ShapingMethod::AshS),
            "scale" => Ok(ShapingMethod::Scale),
            other => Err(Error::Config(format!("unknown shaping method {other:?}"))),
        }
    }
}

/// A shaping function with exactly the parameters its method uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapingConfig {
    Identity,
    /// Clamp every coordinate at `clamp_value`, itself the `clamp_percentile`
    /// of all training activation entries.
    React {
        clamp_percentile: f64,
        clamp_value: Option<f64>,
    },
    /// Prune everything at or below the `prune_fraction` percentile and
    /// rescale the survivors.
    AshS {
        prune_fraction: f64,
    },
    /// Same scale factor as ASH-S, but no pruning.
    Scale {
        prune_fraction: f64,
    },
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig::Scale {
            prune_fraction: DEFAULT_PRUNE_FRACTION,
        }
    }
}

impl ShapingConfig {
    pub fn method(&self) -> ShapingMethod {
        match self {
            ShapingConfig::Identity => ShapingMethod::Identity,
            ShapingConfig::React { .. } => ShapingMethod::React,
            ShapingConfig::AshS { .. } => ShapingMethod::AshS,
            ShapingConfig::Scale { .. } => ShapingMethod::Scale,
        }
    }

    pub fn prune_fraction(&self) -> Option<f64> {
        match *self {
            ShapingConfig::AshS { prune_fraction } | ShapingConfig::Scale { prune_fraction } => {
                Some(prune_fraction)
            }
            _ => None,
        }
    }

    /// Same method with a different prune fraction; no-op for methods that do
    /// not prune.
    pub fn with_prune_fraction(self, p: f64) -> Self {
        match self {
            ShapingConfig::AshS { .. } => ShapingConfig::AshS { prune_fraction: p },
            ShapingConfig::Scale { .. } => ShapingConfig::Scale { prune_fraction: p },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ShapingConfig::Identity => Ok(()),
            ShapingConfig::React {
                clamp_percentile,
                clamp_value,
            } => {
                if !(clamp_percentile > 0.0 && clamp_percentile <= 1.0) {
                    return Err(Error::Config(format!(
                        "clamp percentile {clamp_percentile} outside (0, 1]"
                    )));
                }
                if clamp_value.is_some_and(|c| !c.is_finite()) {
                    return Err(Error::Config("clamp value must be finite".into()));
                }
                Ok(())
            }
            ShapingConfig::AshS { prune_fraction } | ShapingConfig::Scale { prune_fraction } => {
                if !(0.0..1.0).contains(&prune_fraction) {
                    return Err(Error::Config(format!(
                        "prune fraction {prune_fraction} outside [0, 1)"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// ReAct clamp value: nearest-rank percentile of all entries of the bank.
pub fn calibrate_react(train: &ActivationBank, clamp_percentile: f64) -> Result<f64> {
    if train.features().data().is_empty() {
        return Err(Error::invalid("cannot calibrate on an empty bank"));
    }
    percentile(train.features().data(), clamp_percentile)
}

/// Threshold, full sum and survivor sum shared by ASH-S and SCALE.
fn scale_factor(v: &[f64], prune_fraction: f64) -> Result<(f64, f64)> {
    let t = percentile(v, prune_fraction)?;
    let s1: f64 = v.iter().sum();
    let s2: f64 = v.iter().filter(|&&x| x > t).sum();
    if s2 <= 0.0 {
        return Err(Error::DegenerateActivation(format!(
            "no positive mass above the {prune_fraction} percentile (survivor sum {s2})"
        )));
    }
    let factor = (s1 / s2).exp();
    if !factor.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "shaping scale exp({s1}/{s2}) overflows"
        )));
    }
    Ok((t, factor))
}

pub fn shape(cfg: &ShapingConfig, v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("cannot shape a non-finite activation"));
    }
    match *cfg {
        ShapingConfig::Identity => Ok(v.to_vec()),
        ShapingConfig::React { clamp_value, .. } => {
            let c = clamp_value
                .ok_or_else(|| Error::Config("ReAct clamp value has not been calibrated".into()))?;
            Ok(v.iter().map(|&x| x.min(c)).collect())
        }
        ShapingConfig::AshS { prune_fraction } => {
            let (t, factor) = scale_factor(v, prune_fraction)?;
            Ok(v.iter()
                .map(|&x| if x > t { x * factor } else { 0.0 })
                .collect())
        }
        ShapingConfig::Scale { prune_fraction } => {
            let (_, factor) = scale_factor(v, prune_fraction)?;
            Ok(v.iter().map(|&x| x * factor).collect())
        }
    }
}
