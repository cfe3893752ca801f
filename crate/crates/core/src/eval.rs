//! Detection metrics and grid calibration.
//!
//! ID samples are the positive class and are expected to score higher.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::nearest_rank_index;

pub const DEFAULT_TPR: f64 = 0.95;
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];
pub const DEFAULT_PRUNE_GRID: [f64; 5] = [0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub auroc: f64,
    pub fpr_at_tpr: f64,
    pub tpr_target: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::invalid(
            "metrics need non-empty ID and OOD score sets",
        ));
    }
    if id.iter().chain(ood).any(|x| !x.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

/// Mann-Whitney AUROC with half credit for ties.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut sorted = ood.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Doubled win count keeps the tie half-credit integral.
    let mut twice_wins: u128 = 0;
    for &s in id {
        let below = sorted.partition_point(|&o| o < s);
        let not_above = sorted.partition_point(|&o| o <= s);
        twice_wins += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = id.len() as u128 * ood.len() as u128;
    Ok(twice_wins as f64 / (2 * pairs) as f64)
}

/// FPR at the threshold that keeps `tpr_target` of the ID scores.
///
/// The threshold is the `ceil(tpr_target * n_id)`-th largest ID score; an OOD
/// sample is a false positive when its score is at or above it.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr_target: f64) -> Result<f64> {
    check_scores(id, ood)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::invalid(format!(
            "tpr target {tpr_target} outside (0, 1]"
        )));
    }
    let tau = tpr_threshold(id, tpr_target);
    let accepted = ood.iter().filter(|&&o| o >= tau).count();
    Ok(accepted as f64 / ood.len() as f64)
}

pub(crate) fn tpr_threshold(id: &[f64], tpr_target: f64) -> f64 {
    let mut desc = id.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    desc[nearest_rank_index(tpr_target, desc.len())]
}

pub fn evaluate(id: &[f64], ood: &[f64], tpr_target: f64) -> Result<EvalResult> {
    Ok(EvalResult {
        auroc: auroc(id, ood)?,
        fpr_at_tpr: fpr_at_tpr(id, ood, tpr_target)?,
        tpr_target,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

/// What a calibration grid maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    AucMinusFpr,
    AucOnly,
}

impl Objective {
    pub fn value(&self, r: &EvalResult) -> f64 {
        match self {
            Objective::AucMinusFpr => r.auroc - r.fpr_at_tpr,
            Objective::AucOnly => r.auroc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub candidate: f64,
    pub result: EvalResult,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub best: f64,
    pub grid: Vec<GridPoint>,
}

/// Evaluates every candidate on the validation split and returns the one with
/// the highest objective; ties go to the smaller candidate.
///
/// `scorer` maps a candidate to `(id_scores, ood_scores)`.
pub fn calibrate_grid<F>(candidates: &[f64], objective: Objective, scorer: F) -> Result<Calibration>
where
    F: Fn(f64) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::invalid("calibration grid is empty"));
    }
    let grid: Vec<GridPoint> = candidates
        .par_iter()
        .map(|&c| {
            let (id, ood) = scorer(c)?;
            let result = evaluate(&id, &ood, DEFAULT_TPR)?;
            Ok(GridPoint {
                candidate: c,
                objective: objective.value(&result),
                result,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = &grid[0];
    for g in &grid[1..] {
        if g.objective > best.objective
            || (g.objective == best.objective && g.candidate < best.candidate)
        {
            best = g;
        }
    }
    Ok(Calibration {
        best: best.candidate,
        grid,
    })
}

pub fn calibrate_lambda<F>(candidates: &[f64], scorer: F) -> Result<Calibration>
where
    F: Fn(f64) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
{
    calibrate_grid(candidates, Objective::AucMinusFpr, scorer)
}

pub fn calibrate_shaping<F>(candidates: &[f64], scorer: F) -> Result<Calibration>
where
    F: Fn(f64) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
{
    if let Some(bad) = candidates.iter().find(|p| !(0.0..1.0).contains(*p)) {
        return Err(Error::invalid(format!(
            "prune fraction {bad} outside [0, 1)"
        )));
    }
    calibrate_grid(candidates, Objective::AucMinusFpr, scorer)
}

/// One histogram bin of the ID and OOD score distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

/// Shared-range histogram of both score sets, for external plotting.
pub fn histogram(id: &[f64], ood: &[f64], bins: usize) -> Result<Vec<HistBin>> {
    check_scores(id, ood)?;
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let lo = id.iter().chain(ood).copied().fold(f64::INFINITY, f64::min);
    let hi = id
        .iter()
        .chain(ood)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let slot = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
    let mut out: Vec<HistBin> = (0..bins)
        .map(|b| HistBin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            id_count: 0,
            ood_count: 0,
        })
        .collect();
    for &x in id {
        out[slot(x)].id_count += 1;
    }
    for &x in ood {
        out[slot(x)].ood_count += 1;
    }
    Ok(out)
}
