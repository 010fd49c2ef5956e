//! Closed-form bandwidth fractions and monitoring cost for the three system
//! configurations: classification only, compression only, and both (beat trios).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per kilobyte in the tariff (decimal).
pub const BYTES_PER_KB: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub se: f64,
    pub sp: f64,
    /// PVC prevalence.
    pub rho: f64,
    pub beta_n: f64,
    pub beta_v: f64,
}

impl OperatingPoint {
    pub fn new(se: f64, sp: f64, rho: f64, beta_n: f64, beta_v: f64) -> Result<Self> {
        for (name, v) in [("se", se), ("sp", sp), ("rho", rho)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::usage(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("beta_n", beta_n), ("beta_v", beta_v)] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::usage(format!("{name} must be a finite ratio >= 1, got {v}")));
            }
        }
        Ok(OperatingPoint {
            se,
            sp,
            rho,
            beta_n,
            beta_v,
        })
    }

    /// Fraction of beats the classifier labels PVC.
    pub fn detection_rate(&self) -> f64 {
        self.se * self.rho + (1.0 - self.sp) * (1.0 - self.rho)
    }
}

/// `3 (Se rho + (1 - Sp)(1 - rho))`: uncompressed trios around every detection.
pub fn b_classification_only(op: &OperatingPoint) -> f64 {
    3.0 * op.detection_rate()
}

/// `rho / beta_V + (1 - rho) / beta_N`: every beat, compressed.
pub fn b_compression_only(op: &OperatingPoint) -> f64 {
    op.rho / op.beta_v + (1.0 - op.rho) / op.beta_n
}

/// `(Se rho + (1 - Sp)(1 - rho)) (1 / beta_V + 2 / beta_N)`: compressed trios.
pub fn b_trio(op: &OperatingPoint) -> f64 {
    op.detection_rate() * (1.0 / op.beta_v + 2.0 / op.beta_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub fs: f64,
    pub adc_bits: f64,
    /// Currency units (US cents by default) per 100 kB.
    pub tariff: f64,
    pub hours: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            fs: 360.0,
            adc_bits: 11.0,
            tariff: 1.5,
            hours: 1.0,
        }
    }
}

impl CostModel {
    pub fn new(fs: f64, adc_bits: f64, tariff: f64, hours: f64) -> Result<Self> {
        for (name, v) in [("fs", fs), ("adc_bits", adc_bits), ("tariff", tariff), ("hours", hours)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(CostModel {
            fs,
            adc_bits,
            tariff,
            hours,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitoringCost {
    pub bytes: f64,
    /// In tariff currency units.
    pub cost: f64,
}

pub fn monitoring_cost(b: f64, cm: &CostModel) -> MonitoringCost {
    let bytes = cm.fs * cm.adc_bits * 3600.0 * cm.hours / 8.0 * b;
    MonitoringCost {
        bytes,
        cost: bytes / (100.0 * BYTES_PER_KB) * cm.tariff,
    }
}

/// One row of the reliability-vs-cost plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneRow {
    /// Missed PVCs per beat detected, `1 - Se`.
    pub miss_rate: f64,
    pub b_classification: f64,
    pub b_trio: f64,
    pub cost_classification: f64,
    pub cost_trio: f64,
}

/// Sweeps sensitivity with everything else fixed.
pub fn reliability_cost_plane(
    op: &OperatingPoint,
    cm: &CostModel,
    se_grid: &[f64],
) -> Result<Vec<PlaneRow>> {
    se_grid
        .iter()
        .map(|&se| {
            let p = OperatingPoint::new(se, op.sp, op.rho, op.beta_n, op.beta_v)?;
            let bc = b_classification_only(&p);
            let bt = b_trio(&p);
            Ok(PlaneRow {
                miss_rate: 1.0 - se,
                b_classification: bc,
                b_trio: bt,
                cost_classification: monitoring_cost(bc, cm).cost,
                cost_trio: monitoring_cost(bt, cm).cost,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ideal_and_degenerate_classifiers() {
        let ideal = OperatingPoint::new(1.0, 1.0, 0.1, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(b_classification_only(&ideal), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(b_trio(&ideal), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(b_compression_only(&ideal), 1.0, epsilon = 1e-15);
        let silent = OperatingPoint::new(0.0, 1.0, 0.1, 50.0, 50.0).unwrap();
        assert_eq!(b_classification_only(&silent), 0.0);
        assert_eq!(b_trio(&silent), 0.0);
        let no_pvc = OperatingPoint::new(0.9, 0.9, 0.0, 40.0, 20.0).unwrap();
        assert_abs_diff_eq!(b_compression_only(&no_pvc), 1.0 / 40.0, epsilon = 1e-15);
    }

    #[test]
    fn reference_hour() {
        let c = monitoring_cost(1.0, &CostModel::default());
        assert_abs_diff_eq!(c.bytes, 1_782_000.0, epsilon = 1e-6);
        assert_abs_diff_eq!(c.cost, 26.73, epsilon = 1e-9);
    }

    #[test]
    fn validation() {
        assert!(OperatingPoint::new(1.1, 0.5, 0.1, 2.0, 2.0).is_err());
        assert!(OperatingPoint::new(0.5, 0.5, 0.1, 0.5, 2.0).is_err());
        assert!(CostModel::new(360.0, 11.0, 1.5, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn trio_overhead_bounded(bn in 1.0f64..200.0, bv in 1.0f64..200.0) {
            prop_assert!(1.0 / bv + 2.0 / bn <= 3.0 + 1e-12);
        }

        #[test]
        fn monotone_in_se_and_rho(se in 0.0f64..0.99, sp in 0.0f64..1.0, rho in 0.0f64..0.99,
                                  bn in 1.0f64..100.0, bv in 1.0f64..100.0) {
            let h = 0.01;
            let p = OperatingPoint::new(se, sp, rho, bn, bv).unwrap();
            let q = OperatingPoint::new(se + h, sp, rho, bn, bv).unwrap();
            prop_assert!(b_classification_only(&q) >= b_classification_only(&p));
            prop_assert!(b_trio(&q) >= b_trio(&p));
            // d/d rho of the detection rate is Se - (1 - Sp).
            let r = OperatingPoint::new(se, sp, rho + h, bn, bv).unwrap();
            let slope = se - (1.0 - sp);
            let diff = b_classification_only(&r) - b_classification_only(&p);
            prop_assert!(diff * slope >= -1e-12);
        }

        #[test]
        fn cost_is_linear(b in 0.0f64..1.0, hours in 0.1f64..100.0) {
            let one = monitoring_cost(b, &CostModel { hours: 1.0, ..CostModel::default() }).cost;
            let many = monitoring_cost(b, &CostModel { hours, ..CostModel::default() }).cost;
            prop_assert!((many - one * hours).abs() <= 1e-9 * (1.0 + many));
            let double = monitoring_cost(2.0 * b, &CostModel::default()).cost;
            prop_assert!((double - 2.0 * one).abs() <= 1e-9 * (1.0 + double));
        }
    }
}
