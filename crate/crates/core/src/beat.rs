use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Samples on each side of the R-peak.
pub const HALF_WINDOW: usize = 150;
/// Beat vector length: 150 samples before, the R-peak, 150 after.
pub const BEAT_LEN: usize = 2 * HALF_WINDOW + 1;

/// The two classes the detector distinguishes. PVC is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BeatClass {
    Normal,
    Pvc,
}

impl BeatClass {
    /// Single-letter code used in CSV files (`N` / `V`).
    pub fn code(self) -> char {
        match self {
            BeatClass::Normal => 'N',
            BeatClass::Pvc => 'V',
        }
    }

    /// The label bit carried by every encoded beat (0 = N, 1 = V).
    pub fn bit(self) -> bool {
        matches!(self, BeatClass::Pvc)
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            BeatClass::Pvc
        } else {
            BeatClass::Normal
        }
    }
}

impl fmt::Display for BeatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for BeatClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "N" | "n" | "normal" | "Normal" => Ok(BeatClass::Normal),
            "V" | "v" | "pvc" | "PVC" | "Pvc" => Ok(BeatClass::Pvc),
            other => Err(Error::format(format!("unknown beat class {other:?}"))),
        }
    }
}

/// Ground-truth annotation label. `Other` beats keep their place on the
/// timeline but never enter training or classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnotationLabel {
    Normal,
    Pvc,
    Other,
}

impl AnnotationLabel {
    pub fn class(self) -> Option<BeatClass> {
        match self {
            AnnotationLabel::Normal => Some(BeatClass::Normal),
            AnnotationLabel::Pvc => Some(BeatClass::Pvc),
            AnnotationLabel::Other => None,
        }
    }

    pub fn code(self) -> char {
        match self {
            AnnotationLabel::Normal => 'N',
            AnnotationLabel::Pvc => 'V',
            AnnotationLabel::Other => 'O',
        }
    }
}

impl From<BeatClass> for AnnotationLabel {
    fn from(c: BeatClass) -> Self {
        match c {
            BeatClass::Normal => AnnotationLabel::Normal,
            BeatClass::Pvc => AnnotationLabel::Pvc,
        }
    }
}

impl fmt::Display for AnnotationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for AnnotationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "N" => Ok(AnnotationLabel::Normal),
            "V" => Ok(AnnotationLabel::Pvc),
            "O" => Ok(AnnotationLabel::Other),
            other => Err(Error::format(format!("unknown annotation label {other:?}"))),
        }
    }
}

/// One segmented heartbeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatVector {
    samples: Vec<f64>,
    /// Sample index of the R-peak in the source record.
    pub timestamp: u64,
    pub label: Option<AnnotationLabel>,
}

impl BeatVector {
    /// Fails on empty or all-zero sample vectors.
    pub fn new(samples: Vec<f64>, timestamp: u64, label: Option<AnnotationLabel>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::usage("beat has no samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("beat contains non-finite samples"));
        }
        if norm(&samples) == 0.0 {
            return Err(Error::domain("beat has zero euclidean norm"));
        }
        Ok(BeatVector {
            samples,
            timestamp,
            label,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class(&self) -> Option<BeatClass> {
        self.label.and_then(AnnotationLabel::class)
    }

    /// Same beat multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        BeatVector::new(
            self.samples.iter().map(|v| v * c).collect(),
            self.timestamp,
            self.label,
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_beat_rejected() {
        assert!(matches!(
            BeatVector::new(vec![0.0; 5], 0, None),
            Err(Error::Domain(_))
        ));
        assert!(matches!(BeatVector::new(vec![], 0, None), Err(Error::Usage(_))));
    }

    #[test]
    fn label_codes_round_trip() {
        for l in [AnnotationLabel::Normal, AnnotationLabel::Pvc, AnnotationLabel::Other] {
            assert_eq!(l.code().to_string().parse::<AnnotationLabel>().unwrap(), l);
        }
        assert_eq!(BeatClass::from_bit(BeatClass::Pvc.bit()), BeatClass::Pvc);
        assert_eq!(AnnotationLabel::Other.class(), None);
    }
}
