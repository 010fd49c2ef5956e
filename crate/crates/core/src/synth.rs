//! Synthetic ECG-like records for desk-scale runs and tests.
//!
//! Every beat is a sum of Gaussian waves around its R-peak. Normal beats use a
//! P-QRS-T template; PVCs are premature, have no P wave, a wide QRS and an
//! inverted T wave, and are followed by a compensatory pause. Each record gets
//! its own morphology scaling, per-beat jitter, baseline drift and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beat::AnnotationLabel;
use crate::error::{Error, Result};
use crate::evaluate::AAMI_RECORDS;
use crate::preprocess::{Annotation, RawRecord, DEFAULT_ADC_BITS, DEFAULT_FS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_records: usize,
    pub beats_per_record: usize,
    /// Probability that a beat is a PVC.
    pub pvc_rate: f64,
    /// Per-record PVC rates are drawn uniformly from `pvc_rate * [1 - s, 1 + s]`.
    pub pvc_rate_spread: f64,
    pub fs: f64,
    /// Amplitude quantum in mV (ADC resolution).
    pub lsb: f64,
    pub noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_records: 44,
            beats_per_record: 500,
            pvc_rate: 0.1,
            pvc_rate_spread: 0.0,
            fs: DEFAULT_FS,
            lsb: 0.005,
            noise_sd: 0.005,
        }
    }
}

/// `(amplitude mV, centre s, width s)` relative to the R-peak.
type Wave = (f64, f64, f64);

const NORMAL_WAVES: [Wave; 5] = [
    (0.15, -0.20, 0.025),
    (-0.10, -0.030, 0.010),
    (1.00, 0.0, 0.012),
    (-0.25, 0.030, 0.012),
    (0.30, 0.25, 0.050),
];

const PVC_WAVES: [Wave; 4] = [
    (-0.30, -0.050, 0.025),
    (1.30, 0.0, 0.040),
    (-0.60, 0.080, 0.040),
    (-0.40, 0.30, 0.070),
];

const NORMAL_RR_S: f64 = 0.8;

/// Record ids: the AAMI record numbers when they suffice, `s000`, `s001`, ... otherwise.
pub fn record_ids(n: usize) -> Vec<String> {
    if n <= AAMI_RECORDS.len() {
        AAMI_RECORDS[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }
}

fn record_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<(RawRecord, Vec<Annotation>)>> {
    if !(0.0..=1.0).contains(&cfg.pvc_rate) {
        return Err(Error::usage(format!("pvc_rate must lie in [0, 1], got {}", cfg.pvc_rate)));
    }
    if !(0.0..=1.0).contains(&cfg.pvc_rate_spread) {
        return Err(Error::usage("pvc_rate_spread must lie in [0, 1]"));
    }
    if !(cfg.fs > 0.0) || !(cfg.lsb >= 0.0) || !(cfg.noise_sd >= 0.0) {
        return Err(Error::usage("fs must be positive; lsb and noise_sd non-negative"));
    }
    record_ids(cfg.n_records)
        .into_iter()
        .enumerate()
        .map(|(i, id)| generate_record(cfg, &id, record_seed(cfg.seed, i)))
        .collect()
}

pub fn generate_record(cfg: &SynthConfig, id: &str, seed: u64) -> Result<(RawRecord, Vec<Annotation>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let fs = cfg.fs;
    let spread = cfg.pvc_rate_spread;
    let rate = (cfg.pvc_rate * rng.random_range(1.0 - spread..=1.0 + spread)).clamp(0.0, 1.0);
    let rr = NORMAL_RR_S * rng.random_range(0.9..1.1);
    let amp_scale = rng.random_range(0.8..1.2);
    let pvc_scale = rng.random_range(0.8..1.2);

    let mut anns = Vec::with_capacity(cfg.beats_per_record);
    let mut t = 0.6;
    for _ in 0..cfg.beats_per_record {
        let pvc = rng.random_bool(rate);
        let label = if pvc { AnnotationLabel::Pvc } else { AnnotationLabel::Normal };
        let gap = if pvc { 0.7 * rr } else { rr * (1.0 + 0.03 * std.sample(&mut rng)) };
        // After a PVC, the compensatory pause.
        let gap = if anns.last().is_some_and(|a: &Annotation| a.label == AnnotationLabel::Pvc) {
            1.3 * rr
        } else {
            gap
        };
        t += gap.max(0.3);
        anns.push(Annotation {
            r_peak: (t * fs).round() as u64,
            label,
        });
    }
    if let Some(first) = anns.first_mut() {
        // Keep the first beat after the lead-in.
        first.r_peak = first.r_peak.max((0.6 * fs) as u64);
    }
    let len = anns.last().map_or((fs * 2.0) as usize, |a| a.r_peak as usize + (0.8 * fs) as usize);

    let mut x = vec![0.0; len];
    for a in &anns {
        let (waves, scale): (&[Wave], f64) = match a.label {
            AnnotationLabel::Pvc => (&PVC_WAVES, amp_scale * pvc_scale),
            _ => (&NORMAL_WAVES, amp_scale),
        };
        let r = a.r_peak as f64 / fs;
        for &(amp, centre, width) in waves {
            let amp = amp * scale * (1.0 + 0.05 * std.sample(&mut rng));
            let width = width * (1.0 + 0.05 * std.sample(&mut rng));
            let centre = r + centre + 0.002 * std.sample(&mut rng);
            let lo = (((centre - 5.0 * width) * fs).floor().max(0.0)) as usize;
            let hi = (((centre + 5.0 * width) * fs).ceil() as usize).min(len);
            for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                let d = (i as f64 / fs - centre) / width;
                *v += amp * (-0.5 * d * d).exp();
            }
        }
    }
    let phase1 = rng.random_range(0.0..std::f64::consts::TAU);
    let phase2 = rng.random_range(0.0..std::f64::consts::TAU);
    let offset = rng.random_range(-0.2..0.2);
    for (i, v) in x.iter_mut().enumerate() {
        let s = i as f64 / fs;
        *v += offset
            + 0.10 * (std::f64::consts::TAU * 0.3 * s + phase1).sin()
            + 0.05 * (std::f64::consts::TAU * 0.05 * s + phase2).sin()
            + cfg.noise_sd * std.sample(&mut rng);
        if cfg.lsb > 0.0 {
            *v = (*v / cfg.lsb).round() * cfg.lsb;
        }
    }
    Ok((RawRecord::new(id, fs, DEFAULT_ADC_BITS, x)?, anns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::validate_annotations;

    fn small(seed: u64, rate: f64) -> SynthConfig {
        SynthConfig {
            seed,
            n_records: 2,
            beats_per_record: 60,
            pvc_rate: rate,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_corpus(&small(3, 0.2)).unwrap(), generate_corpus(&small(3, 0.2)).unwrap());
        assert_ne!(generate_corpus(&small(3, 0.2)).unwrap(), generate_corpus(&small(4, 0.2)).unwrap());
    }

    #[test]
    fn annotations_valid() {
        for (rec, anns) in generate_corpus(&small(1, 0.3)).unwrap() {
            assert_eq!(anns.len(), 60);
            validate_annotations(&anns, rec.samples.len()).unwrap();
        }
    }

    #[test]
    fn no_pvcs_at_zero_rate() {
        for (_, anns) in generate_corpus(&small(9, 0.0)).unwrap() {
            assert!(anns.iter().all(|a| a.label == AnnotationLabel::Normal));
        }
    }

    #[test]
    fn ids() {
        assert_eq!(record_ids(2), vec!["100", "101"]);
        assert_eq!(record_ids(45)[44], "s044");
    }

    #[test]
    fn bad_rate() {
        assert!(generate_corpus(&small(0, 1.5)).is_err());
    }
}
