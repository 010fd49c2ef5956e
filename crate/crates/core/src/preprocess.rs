//! Baseline-wander removal and R-peak anchored segmentation.

use serde::{Deserialize, Serialize};

use crate::beat::{norm, AnnotationLabel, BeatVector, BEAT_LEN, HALF_WINDOW};
use crate::error::{Error, Result};

pub const DEFAULT_FS: f64 = 360.0;
pub const DEFAULT_ADC_BITS: u32 = 11;
/// First (QRS/P-wave suppressing) median window.
pub const SHORT_WINDOW_MS: f64 = 200.0;
/// Second (T-wave suppressing) median window.
pub const LONG_WINDOW_MS: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub record_id: String,
    /// Samples per second.
    pub fs: f64,
    pub adc_bits: u32,
    pub samples: Vec<f64>,
}

impl RawRecord {
    pub fn new(record_id: impl Into<String>, fs: f64, adc_bits: u32, samples: Vec<f64>) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::usage(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.is_empty() {
            return Err(Error::usage("record has no samples"));
        }
        Ok(RawRecord {
            record_id: record_id.into(),
            fs,
            adc_bits,
            samples,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub r_peak: u64,
    pub label: AnnotationLabel,
}

/// Annotations must lie inside the record and be strictly increasing.
pub fn validate_annotations(anns: &[Annotation], record_len: usize) -> Result<()> {
    for (i, a) in anns.iter().enumerate() {
        if a.r_peak as usize >= record_len {
            return Err(Error::format(format!(
                "annotation {i} at sample {} lies beyond the record ({record_len} samples)",
                a.r_peak
            )));
        }
        if i > 0 && anns[i - 1].r_peak >= a.r_peak {
            return Err(Error::format(format!(
                "annotations not strictly increasing at entry {i} (sample {})",
                a.r_peak
            )));
        }
    }
    Ok(())
}

/// Window length in samples for a duration, rounded up to the next odd count.
pub fn window_samples(ms: f64, fs: f64) -> usize {
    let w = (ms * fs / 1000.0).round().max(1.0) as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Sliding median with boundary replication; output length equals input length.
/// Even windows are rounded up to odd.
pub fn median_filter(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::usage("median filter input is empty"));
    }
    let window = if window % 2 == 0 { window + 1 } else { window };
    if window > x.len() {
        return Err(Error::usage(format!(
            "median window {window} exceeds signal length {}",
            x.len()
        )));
    }
    let half = (window / 2) as isize;
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];

    let mut sorted: Vec<f64> = (-half..=half).map(at).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(x.len());
    out.push(sorted[half as usize]);
    for i in 1..n {
        let outgoing = at(i - half - 1);
        let pos = sorted
            .binary_search_by(|v| v.total_cmp(&outgoing))
            .expect("outgoing sample is in the window");
        sorted.remove(pos);
        let incoming = at(i + half);
        let pos = sorted
            .binary_search_by(|v| v.total_cmp(&incoming))
            .unwrap_or_else(|p| p);
        sorted.insert(pos, incoming);
        out.push(sorted[half as usize]);
    }
    Ok(out)
}

/// Subtracts the baseline estimated by a 200 ms then 600 ms median cascade.
pub fn remove_baseline(rec: &RawRecord) -> Result<Vec<f64>> {
    let short = window_samples(SHORT_WINDOW_MS, rec.fs);
    let long = window_samples(LONG_WINDOW_MS, rec.fs);
    if rec.samples.len() < long {
        return Err(Error::usage(format!(
            "record {} is shorter than 600 ms ({} samples)",
            rec.record_id,
            rec.samples.len()
        )));
    }
    let baseline = median_filter(&median_filter(&rec.samples, short)?, long)?;
    Ok(rec
        .samples
        .iter()
        .zip(&baseline)
        .map(|(x, b)| x - b)
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub beats: Vec<BeatVector>,
    /// Annotations without full context at the record edges, or with a flat window.
    pub skipped: usize,
}

/// Cuts one 301-sample beat around every annotated R-peak.
pub fn segment_beats(clean: &[f64], anns: &[Annotation]) -> Segmentation {
    let mut seg = Segmentation::default();
    for a in anns {
        let r = a.r_peak as usize;
        if r < HALF_WINDOW || r + HALF_WINDOW >= clean.len() {
            seg.skipped += 1;
            continue;
        }
        let window = &clean[r - HALF_WINDOW..r - HALF_WINDOW + BEAT_LEN];
        if norm(window) == 0.0 {
            seg.skipped += 1;
            continue;
        }
        match BeatVector::new(window.to_vec(), a.r_peak, Some(a.label)) {
            Ok(b) => seg.beats.push(b),
            Err(_) => seg.skipped += 1,
        }
    }
    seg
}

/// A record after baseline removal and segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedRecord {
    pub record_id: String,
    pub fs: f64,
    pub adc_bits: u32,
    pub beats: Vec<BeatVector>,
    pub skipped: usize,
}

impl ProcessedRecord {
    pub fn pvc_count(&self) -> usize {
        self.beats.iter().filter(|b| b.class() == Some(crate::beat::BeatClass::Pvc)).count()
    }
}

pub fn process_record(rec: &RawRecord, anns: &[Annotation]) -> Result<ProcessedRecord> {
    validate_annotations(anns, rec.samples.len())?;
    let clean = remove_baseline(rec)?;
    let seg = segment_beats(&clean, anns);
    Ok(ProcessedRecord {
        record_id: rec.record_id.clone(),
        fs: rec.fs,
        adc_bits: rec.adc_bits,
        beats: seg.beats,
        skipped: seg.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn window_rounding() {
        assert_eq!(window_samples(200.0, 360.0), 73);
        assert_eq!(window_samples(600.0, 360.0), 217);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_filter(&[2.0; 7], 3).unwrap(), vec![2.0; 7]);
        assert_eq!(
            median_filter(&[0.0, 0.0, 9.0, 0.0, 0.0], 3).unwrap(),
            vec![0.0; 5]
        );
        // Impulses every 5 samples with window 7 (< window/2 per window).
        let mut x = vec![0.0; 40];
        for i in (2..40).step_by(5) {
            x[i] = 4.0;
        }
        assert_eq!(median_filter(&x, 7).unwrap(), vec![0.0; 40]);
    }

    #[test]
    fn median_matches_brute_force() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 - 0.5 * i as f64).collect();
        for w in [1, 3, 4, 9, 21] {
            let fast = median_filter(&x, w).unwrap();
            let w = if w % 2 == 0 { w + 1 } else { w };
            let h = (w / 2) as isize;
            for (i, &got) in fast.iter().enumerate() {
                let mut win: Vec<f64> = (i as isize - h..=i as isize + h)
                    .map(|j| x[j.clamp(0, 49) as usize])
                    .collect();
                win.sort_by(f64::total_cmp);
                assert_eq!(got, win[h as usize]);
            }
        }
    }

    #[test]
    fn median_errors() {
        assert!(median_filter(&[], 3).is_err());
        assert!(median_filter(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn baseline_of_zero_and_ramp() {
        let zero = RawRecord::new("z", 360.0, 11, vec![0.0; 1000]).unwrap();
        assert_eq!(remove_baseline(&zero).unwrap(), vec![0.0; 1000]);

        let ramp: Vec<f64> = (0..3600).map(|i| 0.001 * i as f64).collect();
        let rec = RawRecord::new("r", 360.0, 11, ramp).unwrap();
        let out = remove_baseline(&rec).unwrap();
        // Away from the edges the median of a ramp is the ramp itself.
        for v in &out[217..3600 - 217] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn baseline_shift_invariance() {
        let x: Vec<f64> = (0..2000)
            .map(|i| {
                let t = i as f64;
                (-((t % 300.0) - 150.0).powi(2) / 20.0).exp() + 0.1 * (t / 50.0).sin()
            })
            .collect();
        let a = remove_baseline(&RawRecord::new("a", 360.0, 11, x.clone()).unwrap()).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 3.25).collect();
        let b = remove_baseline(&RawRecord::new("b", 360.0, 11, shifted).unwrap()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn short_record_rejected() {
        let rec = RawRecord::new("s", 360.0, 11, vec![1.0; 100]).unwrap();
        assert!(matches!(remove_baseline(&rec), Err(Error::Usage(_))));
    }

    #[test]
    fn segmentation_windows() {
        let clean: Vec<f64> = (0..1000).map(|i| i as f64 + 1.0).collect();
        let ann = |r, label| Annotation { r_peak: r, label };
        let seg = segment_beats(
            &clean,
            &[
                ann(100, AnnotationLabel::Normal),
                ann(150, AnnotationLabel::Normal),
                ann(350, AnnotationLabel::Pvc),
                ann(900, AnnotationLabel::Other),
            ],
        );
        assert_eq!(seg.skipped, 2);
        assert_eq!(seg.beats.len(), 2);
        assert_eq!(seg.beats[0].samples(), &clean[0..301]);
        assert_eq!(seg.beats[1].timestamp, 350);
        assert_eq!(seg.beats[1].label, Some(AnnotationLabel::Pvc));
        // 200 samples apart: the windows share 101 samples.
        let shared = seg.beats[0]
            .samples()
            .iter()
            .filter(|v| seg.beats[1].samples().contains(v))
            .count();
        assert_eq!(shared, 101);
    }

    #[test]
    fn annotation_validation() {
        let a = |r| Annotation {
            r_peak: r,
            label: AnnotationLabel::Normal,
        };
        assert!(validate_annotations(&[a(1), a(5)], 10).is_ok());
        assert!(validate_annotations(&[a(5), a(5)], 10).is_err());
        assert!(validate_annotations(&[a(10)], 10).is_err());
    }
}
