//! Minimal CSV output and score-file parsing.

use std::fmt::Write as _;
use std::path::Path;

use actsub_core::error::{Error, FormatError, Result};
use actsub_core::store::write_atomic;

pub const SCORE_HEADER: &str = "index,score,method";

/// 17 significant digits, round-trips every f64.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Table {
    out: String,
    cols: usize,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut out = header.join(",");
        out.push('\n');
        Self {
            out,
            cols: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.cols);
        let _ = writeln!(self.out, "{}", cells.join(","));
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, self.out.as_bytes())
    }
}

pub fn score_table(scores: &[f64], method: &str) -> Table {
    let mut t = Table::new(&["index", "score", "method"]);
    for (i, s) in scores.iter().enumerate() {
        t.row(&[i.to_string(), float(*s), method.to_string()]);
    }
    t
}

fn text_err(line: usize, msg: impl Into<String>) -> Error {
    FormatError::Text {
        line,
        msg: msg.into(),
    }
    .into()
}

/// Reads the `score` column of a file written by `actsub score`.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_scores(&text)
}

pub fn parse_scores(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == SCORE_HEADER => {}
        Some(h) => {
            return Err(text_err(
                1,
                format!("expected header {SCORE_HEADER:?}, got {h:?}"),
            ))
        }
        None => return Err(text_err(1, "empty score file")),
    }
    let mut out = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        let l = raw.trim_end_matches('\r');
        if l.is_empty() {
            continue;
        }
        let cells: Vec<&str> = l.split(',').collect();
        if cells.len() != 3 {
            return Err(text_err(
                line,
                format!("expected 3 columns, got {}", cells.len()),
            ));
        }
        let score: f64 = cells[1]
            .parse()
            .map_err(|_| text_err(line, format!("bad score {:?}", cells[1])))?;
        if !score.is_finite() {
            return Err(text_err(line, "score is not finite"));
        }
        out.push(score);
    }
    Ok(out)
}
