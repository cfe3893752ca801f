//! `--grid name=values` parsing: `a,b,c` lists or `a..b[:step]` ranges.

use actsub_core::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub name: String,
    pub values: Vec<f64>,
}

fn num(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad grid value {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("grid value {s:?} is not finite")));
    }
    Ok(v)
}

pub fn parse_values(spec: &str) -> Result<Vec<f64>> {
    if let Some((a, rest)) = spec.split_once("..") {
        let (b, step) = match rest.split_once(':') {
            Some((b, s)) => (num(b)?, num(s)?),
            None => (num(rest)?, DEFAULT_STEP),
        };
        let a = num(a)?;
        if step <= 0.0 || b < a {
            return Err(Error::Config(format!("empty or reversed range {spec:?}")));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        // Rounded to 1e-12 so 0.75 + 2 * 0.05 prints as 0.85.
        return Ok((0..count)
            .map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12)
            .collect());
    }
    let values = spec.split(',').map(num).collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    Ok(values)
}

pub fn parse(arg: &str) -> Result<Grid> {
    let (name, values) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid {arg:?} is not name=values")))?;
    let name = name.trim().to_ascii_lowercase();
    if !matches!(name.as_str(), "lambda" | "p") {
        return Err(Error::Config(format!(
            "unknown grid {name:?}; use lambda or p"
        )));
    }
    Ok(Grid {
        name,
        values: parse_values(values)?,
    })
}
