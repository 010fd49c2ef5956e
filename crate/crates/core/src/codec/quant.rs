//! Rank-indexed uniform quantization of sparse coefficients.
//!
//! Coefficients of a code are ranked by descending magnitude. Each rank has
//! its own signed range `[w_min, w_max)` learned from training codes; the
//! step `delta` is shared by every rank. In-range values snap to the centre
//! of their `delta` cell on a grid anchored at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseCode;

/// Symbol reserved for values below `w_min` of their rank.
pub const UNDERFLOW_SYMBOL: i64 = i64::MIN;
/// Symbol reserved for values at or above `w_max` of their rank.
pub const OVERFLOW_SYMBOL: i64 = i64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantLevel {
    Under,
    /// Cell `k`: values in `[(k-1) delta, k delta)`.
    Level(i64),
    Over,
}

impl QuantLevel {
    pub fn symbol(self) -> i64 {
        match self {
            QuantLevel::Under => UNDERFLOW_SYMBOL,
            QuantLevel::Over => OVERFLOW_SYMBOL,
            QuantLevel::Level(k) => k,
        }
    }

    pub fn from_symbol(s: i64) -> Self {
        match s {
            UNDERFLOW_SYMBOL => QuantLevel::Under,
            OVERFLOW_SYMBOL => QuantLevel::Over,
            k => QuantLevel::Level(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTable {
    w_min: Vec<f64>,
    w_max: Vec<f64>,
    delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub level: QuantLevel,
    pub value: f64,
}

impl QuantTable {
    pub fn new(w_min: Vec<f64>, w_max: Vec<f64>, delta: f64) -> Result<Self> {
        if w_min.len() != w_max.len() || w_min.is_empty() {
            return Err(Error::usage("quantization ranges must be non-empty and paired"));
        }
        if w_min.iter().zip(&w_max).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::usage("quantization range with w_min > w_max"));
        }
        let t = QuantTable {
            w_min,
            w_max,
            delta: 1.0,
        };
        t.with_delta(delta)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::usage(format!("step size must be positive, got {delta}")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of ranks with a learned range.
    pub fn max_rank(&self) -> usize {
        self.w_min.len()
    }

    /// `(w_min, w_max)` of a zero-based rank, clamped to the last known rank.
    pub fn range(&self, rank: usize) -> (f64, f64) {
        let r = self.clamp_rank(rank);
        (self.w_min[r], self.w_max[r])
    }

    pub fn clamp_rank(&self, rank: usize) -> usize {
        rank.min(self.max_rank() - 1)
    }

    pub fn dequantize(&self, level: QuantLevel, rank: usize) -> f64 {
        let (lo, hi) = self.range(rank);
        let d = self.delta;
        match level {
            QuantLevel::Under => lo - d / 2.0,
            QuantLevel::Over => hi + d / 2.0,
            QuantLevel::Level(k) => k as f64 * d - d / 2.0,
        }
    }
}

/// `Q^i(x; delta)` for zero-based rank `rank`.
pub fn quantize_value(x: f64, rank: usize, table: &QuantTable) -> Quantized {
    let (lo, hi) = table.range(rank);
    let level = if x < lo {
        QuantLevel::Under
    } else if x >= hi {
        QuantLevel::Over
    } else {
        QuantLevel::Level((x / table.delta).floor() as i64 + 1)
    };
    Quantized {
        level,
        value: table.dequantize(level, rank),
    }
}

/// `(atom, value)` pairs sorted by descending magnitude; ties keep selection order.
pub fn ranked_entries(code: &SparseCode) -> Vec<(usize, f64)> {
    let mut e: Vec<(usize, f64)> = code.entries().collect();
    e.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    e
}

/// Per-rank signed ranges observed over `codes`.
pub fn build_quant_tables(codes: &[SparseCode], delta: f64) -> Result<QuantTable> {
    if codes.is_empty() {
        return Err(Error::usage("no training codes for quantization tables"));
    }
    let mut w_min: Vec<f64> = Vec::new();
    let mut w_max: Vec<f64> = Vec::new();
    for code in codes {
        for (rank, (_, v)) in ranked_entries(code).into_iter().enumerate() {
            if rank == w_min.len() {
                w_min.push(v);
                w_max.push(v);
            } else {
                w_min[rank] = w_min[rank].min(v);
                w_max[rank] = w_max[rank].max(v);
            }
        }
    }
    if w_min.is_empty() {
        return Err(Error::usage("training codes carry no coefficients"));
    }
    QuantTable::new(w_min, w_max, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn code(values: &[f64]) -> SparseCode {
        SparseCode {
            support: (0..values.len()).collect(),
            values: values.to_vec(),
            achieved_prd: 0.0,
            target_met: true,
        }
    }

    fn wide_table(delta: f64) -> QuantTable {
        QuantTable::new(vec![-100.0], vec![100.0], delta).unwrap()
    }

    #[test]
    fn piecewise_examples() {
        let t = wide_table(2.0);
        let q = quantize_value(1.3, 0, &t);
        assert_eq!(q.level, QuantLevel::Level(1));
        assert_abs_diff_eq!(q.value, 1.0);
        let q = quantize_value(-0.7, 0, &t);
        assert_eq!(q.level, QuantLevel::Level(0));
        assert_abs_diff_eq!(q.value, -1.0);
        let q = quantize_value(1e9, 0, &t);
        assert_eq!(q.level, QuantLevel::Over);
        assert_abs_diff_eq!(q.value, 101.0);
        let q = quantize_value(-1e9, 0, &t);
        assert_eq!(q.level, QuantLevel::Under);
        assert_abs_diff_eq!(q.value, -101.0);
    }

    #[test]
    fn table_ranges() {
        let t = build_quant_tables(&[code(&[5.0, -3.0, 1.0])], 1.0).unwrap();
        assert_eq!(t.max_rank(), 3);
        assert_eq!(t.range(0), (5.0, 5.0));
        assert_eq!(t.range(1), (-3.0, -3.0));
        assert_eq!(t.range(2), (1.0, 1.0));
        let t = build_quant_tables(&[code(&[5.0]), code(&[-6.0])], 1.0).unwrap();
        assert_eq!(t.range(0), (-6.0, 5.0));
        // Ranks beyond the table reuse the last range.
        assert_eq!(t.range(7), (-6.0, 5.0));
        assert_eq!(t.clamp_rank(7), 0);
        assert!(build_quant_tables(&[], 1.0).is_err());
        assert!(build_quant_tables(&[SparseCode::empty()], 1.0).is_err());
    }

    #[test]
    fn ranking_by_magnitude() {
        let r = ranked_entries(&code(&[0.5, -3.0, 2.0]));
        assert_eq!(r, vec![(1, -3.0), (2, 2.0), (0, 0.5)]);
    }

    #[test]
    fn level_symbols_round_trip() {
        for l in [QuantLevel::Under, QuantLevel::Over, QuantLevel::Level(-4), QuantLevel::Level(0)] {
            assert_eq!(QuantLevel::from_symbol(l.symbol()), l);
        }
    }

    proptest! {
        #[test]
        fn in_range_error_bounded(x in -50.0f64..50.0, delta in 0.01f64..10.0) {
            let t = wide_table(delta);
            let q = quantize_value(x, 0, &t);
            prop_assert!((q.value - x).abs() <= delta / 2.0 + 1e-9);
        }

        #[test]
        fn monotone(a in -20.0f64..20.0, b in -20.0f64..20.0, delta in 0.05f64..5.0,
                    lo in -10.0f64..0.0, hi in 0.0f64..10.0) {
            let t = QuantTable::new(vec![lo], vec![hi], delta).unwrap();
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_value(x, 0, &t).value <= quantize_value(y, 0, &t).value);
        }
    }
}
