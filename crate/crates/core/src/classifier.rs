//! Sparsity-ratio classification against rival class dictionaries.
//!
//! A beat is coded on both dictionaries at the same PRD bound; the PVC
//! dictionary winning by a wide enough margin in atom count (ratio below
//! `tau`) marks the beat as PVC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beat::{BeatClass, BeatVector};
use crate::error::{Error, Result};
use crate::sparse::{omp_solve, Dictionary, FidelityTarget, SparseCode};

pub const DEFAULT_PRD_CLASS: f64 = 0.09;

/// Both dictionaries plus the coding fidelity; everything but the threshold.
#[derive(Debug, Clone)]
pub struct SparsityScorer {
    d_normal: Dictionary,
    d_pvc: Dictionary,
    prd_class: FidelityTarget,
}

impl SparsityScorer {
    pub fn new(d_normal: Dictionary, d_pvc: Dictionary, prd_class: FidelityTarget) -> Result<Self> {
        if d_normal.rows() != d_pvc.rows() {
            return Err(Error::usage(format!(
                "dictionaries disagree on signal dimension ({} vs {})",
                d_normal.rows(),
                d_pvc.rows()
            )));
        }
        Ok(SparsityScorer {
            d_normal,
            d_pvc,
            prd_class,
        })
    }

    pub fn d_normal(&self) -> &Dictionary {
        &self.d_normal
    }

    pub fn d_pvc(&self) -> &Dictionary {
        &self.d_pvc
    }

    pub fn dictionary(&self, class: BeatClass) -> &Dictionary {
        match class {
            BeatClass::Normal => &self.d_normal,
            BeatClass::Pvc => &self.d_pvc,
        }
    }

    pub fn prd_class(&self) -> FidelityTarget {
        self.prd_class
    }

    /// `(alpha_V, alpha_N)` at the classification fidelity.
    pub fn codes(&self, x: &BeatVector) -> Result<(SparseCode, SparseCode)> {
        let m = self.d_normal.rows();
        if x.len() != m {
            return Err(Error::usage(format!(
                "beat length {} does not match dictionary dimension {m}",
                x.len()
            )));
        }
        let v = omp_solve(&self.d_pvc, x.samples(), self.prd_class, m)?;
        let n = omp_solve(&self.d_normal, x.samples(), self.prd_class, m)?;
        Ok((v, n))
    }

    pub fn sparsity_ratio(&self, x: &BeatVector) -> Result<f64> {
        let (v, n) = self.codes(x)?;
        Ok(ratio_from_codes(&v, &n))
    }

    pub fn with_tau(self, tau: f64) -> Result<ClassifierModel> {
        ClassifierModel::new(self, tau)
    }
}

/// `|support(alpha_V)| / |support(alpha_N)|`.
///
/// A code that never reached the fidelity bound counts as infinitely
/// non-sparse. `0/0` and `inf/inf` give 1; `k/0` and `inf/k` give +inf.
pub fn ratio_from_codes(pvc: &SparseCode, normal: &SparseCode) -> f64 {
    let count = |c: &SparseCode| c.target_met.then_some(c.sparsity());
    ratio_from_counts(count(pvc), count(normal))
}

/// Ratio from support sizes; `None` marks an unmet fidelity bound.
pub fn ratio_from_counts(pvc: Option<usize>, normal: Option<usize>) -> f64 {
    match (pvc, normal) {
        (None, None) => 1.0,
        (None, Some(_)) => f64::INFINITY,
        (Some(_), None) => 0.0,
        (Some(0), Some(0)) => 1.0,
        (Some(_), Some(0)) => f64::INFINITY,
        (Some(v), Some(n)) => v as f64 / n as f64,
    }
}

/// PVC iff `ratio < tau` (strict).
pub fn decide(ratio: f64, tau: f64) -> BeatClass {
    if ratio < tau {
        BeatClass::Pvc
    } else {
        BeatClass::Normal
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    scorer: SparsityScorer,
    tau: f64,
}

impl ClassifierModel {
    /// `tau = 0` is accepted and labels every beat Normal.
    pub fn new(scorer: SparsityScorer, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::usage(format!("tau must be non-negative, got {tau}")));
        }
        Ok(ClassifierModel { scorer, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn scorer(&self) -> &SparsityScorer {
        &self.scorer
    }

    pub fn sparsity_ratio(&self, x: &BeatVector) -> Result<f64> {
        self.scorer.sparsity_ratio(x)
    }

    pub fn classify_beat(&self, x: &BeatVector) -> Result<BeatClass> {
        Ok(decide(self.sparsity_ratio(x)?, self.tau))
    }

    pub fn classify_all(&self, beats: &[BeatVector]) -> Result<Vec<BeatClass>> {
        beats.par_iter().map(|b| self.classify_beat(b)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    /// `None` when the test set has no PVC beats.
    pub se: Option<f64>,
    /// `None` when the test set has no normal beats.
    pub sp: Option<f64>,
}

/// Observed finite ratios, their midpoints, and one point above the largest.
pub fn tau_grid(ratios: &[f64]) -> Vec<f64> {
    let mut finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    finite.dedup();
    let mut grid = Vec::with_capacity(2 * finite.len() + 1);
    for (i, &r) in finite.iter().enumerate() {
        if i > 0 {
            grid.push(0.5 * (finite[i - 1] + r));
        }
        grid.push(r);
    }
    grid.push(finite.last().map_or(1.0, |m| m + 1.0));
    grid
}

/// Se/Sp per threshold from precomputed `(ratio, truth)` pairs.
pub fn roc_from_ratios(scored: &[(f64, BeatClass)], grid: &[f64]) -> Vec<RocPoint> {
    let positives = scored.iter().filter(|(_, c)| *c == BeatClass::Pvc).count();
    let negatives = scored.len() - positives;
    grid.iter()
        .map(|&tau| {
            let mut tp = 0usize;
            let mut tn = 0usize;
            for &(r, truth) in scored {
                match (truth, decide(r, tau)) {
                    (BeatClass::Pvc, BeatClass::Pvc) => tp += 1,
                    (BeatClass::Normal, BeatClass::Normal) => tn += 1,
                    _ => {}
                }
            }
            RocPoint {
                tau,
                se: (positives > 0).then(|| tp as f64 / positives as f64),
                sp: (negatives > 0).then(|| tn as f64 / negatives as f64),
            }
        })
        .collect()
}

/// Labeled beats with their sparsity ratios, ready for any number of thresholds.
pub fn score_beats(scorer: &SparsityScorer, beats: &[BeatVector]) -> Result<Vec<(f64, BeatClass)>> {
    beats
        .par_iter()
        .filter_map(|b| b.class().map(|c| (b, c)))
        .map(|(b, c)| Ok((scorer.sparsity_ratio(b)?, c)))
        .collect()
}

/// ROC over `grid`, or over [`tau_grid`] of the observed ratios when `grid` is `None`.
/// Beats without a N/V label are ignored.
pub fn roc_sweep(
    scorer: &SparsityScorer,
    beats: &[BeatVector],
    grid: Option<&[f64]>,
) -> Result<Vec<RocPoint>> {
    let scored = score_beats(scorer, beats)?;
    let own;
    let grid = match grid {
        Some(g) => g,
        None => {
            own = tau_grid(&scored.iter().map(|s| s.0).collect::<Vec<_>>());
            &own
        }
    };
    Ok(roc_from_ratios(&scored, grid))
}

/// Smallest-tau point reaching `target_se`, maximizing specificity among those.
pub fn pick_tau_for_sensitivity(roc: &[RocPoint], target_se: f64) -> Result<RocPoint> {
    if roc.is_empty() {
        return Err(Error::usage("empty ROC"));
    }
    if roc.iter().all(|p| p.se.is_none()) {
        return Err(Error::Constraint(
            "sensitivity undefined: no PVC beats in the calibration data".into(),
        ));
    }
    let best = roc
        .iter()
        .filter(|p| p.se.is_some_and(|se| se >= target_se))
        .min_by(|a, b| {
            let sp = |p: &RocPoint| p.sp.unwrap_or(0.0);
            sp(b).total_cmp(&sp(a)).then(a.tau.total_cmp(&b.tau))
        });
    match best {
        Some(p) => Ok(*p),
        None => {
            let max_se = roc.iter().filter_map(|p| p.se).fold(0.0, f64::max);
            Err(Error::Constraint(format!(
                "target sensitivity {target_se} unreachable; best achievable is {max_se}"
            )))
        }
    }
}
