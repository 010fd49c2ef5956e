//! Patient-specific partitions, the end-to-end pipeline and Monte Carlo cross
//! validation.
//!
//! Training for a partition uses every beat of the training records plus the
//! leading minutes of each test record. Those carve-out beats never count in
//! test metrics. The trailing part of each class's training beats is held out
//! to calibrate the threshold.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::{info, warn};
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{b_trio, OperatingPoint};
use crate::beat::{BeatClass, BeatVector};
use crate::classifier::{
    decide, pick_tau_for_sensitivity, roc_from_ratios, roc_sweep, tau_grid, ClassifierModel,
    RocPoint, SparsityScorer,
};
use crate::codec::{
    timestamp_deltas, train_codec_model, BeatDecoder, ClassBeats, BeatEncoder, CodecModel, DeltaCalibration,
    ORIGINAL_BITS_PER_BEAT,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ksvd::{train_dictionary, KsvdConfig, TrainingSet};
use crate::preprocess::ProcessedRecord;
use crate::sparse::{prd, FidelityTarget};
use crate::streamer::{flag_label, simulate, status_flags};

/// The 44 non-paced records of the arrhythmia database.
pub const AAMI_RECORDS: [&str; 44] = [
    "100", "101", "103", "105", "106", "108", "109", "111", "112", "113", "114", "115", "116",
    "117", "118", "119", "121", "122", "123", "124", "200", "201", "202", "203", "205", "207",
    "208", "209", "210", "212", "213", "214", "215", "219", "220", "221", "222", "223", "228",
    "230", "231", "232", "233", "234",
];

/// Records with paced beats; never used.
pub const EXCLUDED_RECORDS: [&str; 4] = ["102", "104", "107", "217"];

pub const MAX_PARTITION_DRAWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub name: String,
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
    /// Leading minutes of each test record moved into training.
    pub patient_specific_minutes: f64,
    /// Bounds on the test set's share of all PVC beats.
    pub pvc_share_bounds: Option<(f64, f64)>,
    /// Problems found in the source lists and how they were resolved.
    pub discrepancies: Vec<String>,
}

impl PartitionSpec {
    pub fn new(
        name: impl Into<String>,
        train_records: Vec<String>,
        test_records: Vec<String>,
        patient_specific_minutes: f64,
    ) -> Result<Self> {
        let name = name.into();
        let mut seen = BTreeSet::new();
        for id in train_records.iter().chain(&test_records) {
            if EXCLUDED_RECORDS.contains(&id.as_str()) {
                return Err(Error::usage(format!("partition {name}: record {id} is excluded (paced)")));
            }
            if !seen.insert(id) {
                return Err(Error::usage(format!("partition {name}: record {id} listed twice")));
            }
        }
        if train_records.is_empty() || test_records.is_empty() {
            return Err(Error::usage(format!("partition {name}: empty training or test set")));
        }
        if !(patient_specific_minutes >= 0.0) {
            return Err(Error::usage("patient_specific_minutes must be non-negative"));
        }
        Ok(PartitionSpec {
            name,
            train_records,
            test_records,
            patient_specific_minutes,
            pvc_share_bounds: None,
            discrepancies: Vec::new(),
        })
    }

    /// Ids the partition names that `available` lacks.
    pub fn missing_records(&self, available: &[String]) -> Vec<String> {
        self.train_records
            .iter()
            .chain(&self.test_records)
            .filter(|id| !available.contains(id))
            .cloned()
            .collect()
    }
}

const P1_TRAIN: &[&str] = &[
    "100", "105", "106", "108", "109", "111", "114", "116", "118", "119", "121", "123", "124",
];
const P1_TEST: &[&str] = &[
    "200", "201", "202", "203", "205", "207", "208", "209", "210", "213", "124", "215", "219",
    "221", "223", "228", "230", "231", "233", "234",
];
const P2_TRAIN: &[&str] = &[
    "100", "101", "103", "105", "106", "108", "109", "111", "112", "113", "114", "115", "116",
    "118", "119", "121", "122", "123", "124",
];
const P2_TEST: &[&str] = &[
    "200", "201", "202", "203", "205", "207", "208", "209", "210", "212", "213", "214", "215",
    "219", "220", "221", "222", "223", "228", "230", "231", "232", "233", "234",
];
const P3_TRAIN: &[&str] = &[
    "101", "106", "108", "109", "112", "114", "115", "116", "118", "119", "122", "124", "201",
    "203", "205", "207", "208", "209", "215", "220", "223", "230",
];
const P3_TEST: &[&str] = &[
    "100", "103", "105", "111", "113", "117", "121", "123", "200", "202", "210", "212", "213",
    "214", "219", "221", "222", "228", "231", "232", "233", "234",
];
const P4_TRAIN: &[&str] = &[
    "105", "106", "108", "109", "111", "116", "118", "124", "200", "201", "202", "203", "205",
    "207", "209", "210", "212", "214", "215", "223", "228", "232",
];
const P4_TEST: &[&str] = &[
    "100", "101", "103", "112", "113", "114", "115", "117", "119", "121", "122", "123", "208",
    "213", "219", "220", "221", "222", "230", "231", "233", "234",
];

/// One of the hand-picked partitions `P1`..`P4`, with the default carve-out.
///
/// The published Partition-1 test list names record 124, which is also a
/// training record; it is dropped from the test set and noted in
/// `discrepancies`.
pub fn fixed_partition(name: &str) -> Result<PartitionSpec> {
    let key = name.trim().to_ascii_uppercase().replace("PARTITION-", "P");
    let (train, listed) = match key.as_str() {
        "P1" | "1" => (P1_TRAIN, P1_TEST),
        "P2" | "2" => (P2_TRAIN, P2_TEST),
        "P3" | "3" => (P3_TRAIN, P3_TEST),
        "P4" | "4" => (P4_TRAIN, P4_TEST),
        _ => return Err(Error::usage(format!("unknown partition {name:?} (expected P1..P4)"))),
    };
    let name = format!("P{}", key.trim_start_matches('P'));
    let train: Vec<String> = train.iter().map(|s| s.to_string()).collect();
    let mut test = Vec::new();
    let mut notes = Vec::new();
    for id in listed.iter().map(|s| s.to_string()) {
        if train.contains(&id) {
            notes.push(format!("test record {id} also listed for training; dropped from test"));
        } else if test.contains(&id) {
            notes.push(format!("test record {id} listed twice; kept once"));
        } else {
            test.push(id);
        }
    }
    for n in &notes {
        warn!("partition {name}: {n}");
    }
    let mut spec = PartitionSpec::new(name, train, test, 5.0)?;
    spec.discrepancies = notes;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proposal {
    /// Fixed Partition-4.
    One,
    /// Half the records for testing, 45%-55% of PVC beats in the test set.
    Two,
    /// Four test records, 10%-20% of PVC beats in the test set.
    Three,
}

impl Proposal {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Proposal::One),
            2 => Ok(Proposal::Two),
            3 => Ok(Proposal::Three),
            _ => Err(Error::usage(format!("unknown proposal {n} (expected 1, 2 or 3)"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Proposal::One => 1,
            Proposal::Two => 2,
            Proposal::Three => 3,
        }
    }

    pub fn test_size(self, n_records: usize) -> usize {
        match self {
            Proposal::One => P4_TEST.len(),
            Proposal::Two => n_records / 2,
            Proposal::Three => 4,
        }
    }

    pub fn share_bounds(self) -> Option<(f64, f64)> {
        match self {
            Proposal::One => None,
            Proposal::Two => Some((0.45, 0.55)),
            Proposal::Three => Some((0.10, 0.20)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub beats: usize,
    pub pvc: usize,
}

pub fn record_meta(corpus: &[ProcessedRecord]) -> Vec<RecordMeta> {
    corpus
        .iter()
        .map(|r| RecordMeta {
            id: r.record_id.clone(),
            beats: r.beats.len(),
            pvc: r.pvc_count(),
        })
        .collect()
}

/// Uniformly random split of the given size, redrawn until the test set's
/// PVC share meets the proposal's bounds.
pub fn make_random_partition(
    records: &[RecordMeta],
    proposal: Proposal,
    seed: u64,
    patient_specific_minutes: f64,
) -> Result<PartitionSpec> {
    let (lo, hi) = proposal
        .share_bounds()
        .ok_or_else(|| Error::usage("proposal 1 uses the fixed Partition-4"))?;
    let eligible: Vec<&RecordMeta> = records
        .iter()
        .filter(|r| !EXCLUDED_RECORDS.contains(&r.id.as_str()))
        .collect();
    let n = eligible.len();
    let k = proposal.test_size(n);
    if k == 0 || k >= n {
        return Err(Error::usage(format!(
            "proposal {} needs more than {k} records, have {n}",
            proposal.number()
        )));
    }
    let total: usize = eligible.iter().map(|r| r.pvc).sum();
    if total == 0 {
        return Err(Error::Constraint("no PVC beats in the corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_PARTITION_DRAWS {
        let mut is_test = vec![false; n];
        for i in sample(&mut rng, n, k) {
            is_test[i] = true;
        }
        let test_pvc: usize = (0..n).filter(|&i| is_test[i]).map(|i| eligible[i].pvc).sum();
        let share = test_pvc as f64 / total as f64;
        if share < lo || share > hi {
            continue;
        }
        let pick = |t: bool| -> Vec<String> {
            (0..n)
                .filter(|&i| is_test[i] == t)
                .map(|i| eligible[i].id.clone())
                .collect()
        };
        let mut spec = PartitionSpec::new(
            format!("proposal-{}/seed-{seed}", proposal.number()),
            pick(false),
            pick(true),
            patient_specific_minutes,
        )?;
        spec.pvc_share_bounds = Some((lo, hi));
        return Ok(spec);
    }
    Err(Error::Constraint(format!(
        "no admissible proposal-{} partition in {MAX_PARTITION_DRAWS} draws",
        proposal.number()
    )))
}

/// Test-set share of PVC beats under `spec`.
pub fn pvc_share(records: &[RecordMeta], spec: &PartitionSpec) -> f64 {
    let total: usize = records.iter().map(|r| r.pvc).sum();
    let test: usize = records
        .iter()
        .filter(|r| spec.test_records.contains(&r.id))
        .map(|r| r.pvc)
        .sum();
    test as f64 / total as f64
}

/// PVC is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, truth: BeatClass, predicted: BeatClass) {
        match (truth, predicted) {
            (BeatClass::Pvc, BeatClass::Pvc) => self.tp += 1,
            (BeatClass::Pvc, BeatClass::Normal) => self.fn_ += 1,
            (BeatClass::Normal, BeatClass::Normal) => self.tn += 1,
            (BeatClass::Normal, BeatClass::Pvc) => self.fp += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn se(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    pub fn sp(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }

    /// PVC prevalence.
    pub fn rho(&self) -> Option<f64> {
        (self.total() > 0).then(|| (self.tp + self.fn_) as f64 / self.total() as f64)
    }
}

/// A contiguous run of one record's beats.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub record_id: &'a str,
    pub beats: &'a [BeatVector],
}

pub type BeatKey = (String, u64);

fn keys<'a>(record_id: &str, beats: impl IntoIterator<Item = &'a BeatVector>) -> Vec<BeatKey> {
    beats
        .into_iter()
        .map(|b| (record_id.to_string(), b.timestamp))
        .collect()
}

/// Classifier and codec trained from a set of segments.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub classifier: ClassifierModel,
    /// ROC over the calibration beats.
    pub calibration_roc: Vec<RocPoint>,
    pub codec: CodecModel,
    pub delta_calibration: [DeltaCalibration; 2],
    /// `(record, R-peak)` of every beat that reached any trained structure.
    pub training_keys: BTreeSet<BeatKey>,
}

fn split_tail(beats: Vec<BeatVector>, fraction: f64) -> (Vec<BeatVector>, Vec<BeatVector>) {
    let n = beats.len();
    let hold = if n < 2 {
        0
    } else {
        ((n as f64 * fraction).round() as usize).clamp(usize::from(fraction > 0.0), n - 1)
    };
    let mut fit = beats;
    let tail = fit.split_off(n - hold);
    (fit, tail)
}

/// Trains both dictionaries, the threshold and the codec. Dictionaries are
/// fitted on the leading beats of each class. The threshold and the
/// quantization step are set on the trailing `holdout_fraction`, or on the
/// fitting beats if a class has only one beat. Quantization ranges and
/// codebooks use all training beats.
pub fn train_models(segments: &[Segment<'_>], cfg: &PipelineConfig, name: &str) -> Result<TrainedModels> {
    cfg.validate()?;
    let mut training_keys = BTreeSet::new();
    let mut normal = Vec::new();
    let mut pvc = Vec::new();
    let mut ts_examples = Vec::new();
    for seg in segments {
        let mut labeled_keys = Vec::new();
        for b in seg.beats {
            match b.class() {
                Some(BeatClass::Normal) => normal.push(b.clone()),
                Some(BeatClass::Pvc) => pvc.push(b.clone()),
                None => continue,
            }
            labeled_keys.push((seg.record_id.to_string(), b.timestamp));
        }
        training_keys.extend(labeled_keys);
        let labels: Vec<BeatClass> = seg
            .beats
            .iter()
            .map(|b| b.label.map_or(BeatClass::Normal, flag_label))
            .collect();
        let flagged: Vec<&BeatVector> = seg
            .beats
            .iter()
            .zip(status_flags(&labels))
            .filter_map(|(b, f)| f.then_some(b))
            .collect();
        training_keys.extend(keys(seg.record_id, flagged.iter().copied()));
        ts_examples.extend(timestamp_deltas(flagged));
    }
    if normal.is_empty() || pvc.is_empty() {
        let class = if normal.is_empty() { BeatClass::Normal } else { BeatClass::Pvc };
        return Err(Error::domain(format!("partition {name}: no {class} beats in training")));
    }
    info!("{name}: training on {} normal and {} PVC beats", normal.len(), pvc.len());

    let (fit_n, hold_n) = split_tail(normal.clone(), cfg.holdout_fraction);
    let (fit_v, hold_v) = split_tail(pvc.clone(), cfg.holdout_fraction);
    let ksvd_n = KsvdConfig {
        seed: cfg.ksvd.seed,
        ..cfg.ksvd.clone()
    };
    let ksvd_v = KsvdConfig {
        seed: cfg.ksvd.seed.wrapping_add(1),
        ..cfg.ksvd.clone()
    };
    let d_normal = train_dictionary(&TrainingSet::from_beats(&fit_n)?, &ksvd_n, Some(BeatClass::Normal))?;
    let d_pvc = train_dictionary(&TrainingSet::from_beats(&fit_v)?, &ksvd_v, Some(BeatClass::Pvc))?;

    let scorer = SparsityScorer::new(d_normal.clone(), d_pvc.clone(), FidelityTarget::new(cfg.prd_class)?)?;
    let mut calibration = if hold_n.is_empty() { fit_n.clone() } else { hold_n.clone() };
    calibration.extend(if hold_v.is_empty() { fit_v.clone() } else { hold_v.clone() });
    let calibration_roc = roc_sweep(&scorer, &calibration, None)?;
    let tau = match cfg.tau {
        Some(t) => t,
        None => pick_tau_for_sensitivity(&calibration_roc, cfg.target_se)?.tau,
    };

    let (codec, delta_calibration) = train_codec_model(
        ClassBeats {
            train: &normal,
            calibrate: &hold_n,
        },
        ClassBeats {
            train: &pvc,
            calibrate: &hold_v,
        },
        &d_normal,
        &d_pvc,
        FidelityTarget::new(cfg.prd_int)?,
        FidelityTarget::new(cfg.prd_compr)?,
        &ts_examples,
    )?;
    Ok(TrainedModels {
        classifier: ClassifierModel::new(scorer, tau)?,
        calibration_roc,
        codec,
        delta_calibration,
        training_keys,
    })
}

/// Metrics of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub partition: String,
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
    pub tau: f64,
    pub confusion: ConfusionCounts,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub rho: Option<f64>,
    /// Compression ratio of test beats coded as Normal / as PVC.
    pub beta_n: Option<f64>,
    pub beta_v: Option<f64>,
    /// Transmitted trio bits over the raw bits of every streamed beat.
    pub b_tr_measured: f64,
    /// Closed-form trio fraction at the measured operating point.
    pub b_tr_model: Option<f64>,
    /// Bits with every test beat compressed, over raw bits.
    pub b_co_measured: f64,
    /// Mean end-to-end PRD over all compressed test beats.
    pub mean_prd: f64,
    pub delta_normal: f64,
    pub delta_pvc: f64,
    pub n_training_beats: usize,
    pub n_test_beats: usize,
    pub n_streamed_beats: usize,
    pub n_transmitted_beats: usize,
    /// Decoded symbols equal encoded symbols for every beat.
    pub lossless: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub result: IterationResult,
    pub models: TrainedModels,
    /// ROC over the scored test beats.
    pub test_roc: Vec<RocPoint>,
}

/// Fails if a test beat reached any trained structure.
pub fn leak_check(training_keys: &BTreeSet<BeatKey>, test_keys: &[BeatKey]) -> Result<()> {
    match test_keys.iter().find(|k| training_keys.contains(*k)) {
        Some((id, ts)) => Err(Error::domain(format!(
            "test beat at sample {ts} of record {id} was used in training"
        ))),
        None => Ok(()),
    }
}

pub fn run_pipeline(corpus: &[ProcessedRecord], spec: &PartitionSpec, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let find = |id: &String| {
        corpus.iter().find(|r| &r.record_id == id).ok_or_else(|| {
            Error::usage(format!("partition {} references unavailable record {id}", spec.name))
        })
    };
    let mut segments = Vec::new();
    for id in &spec.train_records {
        let r = find(id)?;
        segments.push(Segment {
            record_id: &r.record_id,
            beats: &r.beats,
        });
    }
    let mut tests = Vec::new();
    for id in &spec.test_records {
        let r = find(id)?;
        let cut = spec.patient_specific_minutes * 60.0 * r.fs;
        let split = r.beats.partition_point(|b| (b.timestamp as f64) < cut);
        segments.push(Segment {
            record_id: &r.record_id,
            beats: &r.beats[..split],
        });
        tests.push(Segment {
            record_id: &r.record_id,
            beats: &r.beats[split..],
        });
    }
    let n_training_beats = segments.iter().map(|s| s.beats.len()).sum();
    let models = train_models(&segments, cfg, &spec.name)?;
    let test_keys: Vec<BeatKey> = tests.iter().flat_map(|s| keys(s.record_id, s.beats)).collect();
    leak_check(&models.training_keys, &test_keys)?;

    let scorer = models.classifier.scorer();
    let tau = models.classifier.tau();
    let d_n = scorer.d_normal();
    let d_v = scorer.d_pvc();
    let codec = &models.codec;

    let mut confusion = ConfusionCounts::default();
    let mut scored = Vec::new();
    let mut trio_bits = 0usize;
    let mut n_streamed = 0usize;
    let mut n_transmitted = 0usize;
    let mut class_bits = [0usize; 2];
    let mut class_beats = [0usize; 2];
    let mut prd_sum = 0.0;
    let mut n_coded = 0usize;
    let mut lossless = true;

    for seg in &tests {
        let ratios: Vec<f64> = seg
            .beats
            .par_iter()
            .map(|b| scorer.sparsity_ratio(b))
            .collect::<Result<_>>()?;
        let preds: Vec<BeatClass> = ratios.iter().map(|&r| decide(r, tau)).collect();
        for ((b, &r), &p) in seg.beats.iter().zip(&ratios).zip(&preds) {
            if let Some(truth) = b.class() {
                confusion.add(truth, p);
                scored.push((r, truth));
            }
        }

        let sim = simulate(seg.beats.iter().zip(preds.iter().copied()), cfg.streamer());
        n_streamed += sim.trace.len();
        let mut enc = BeatEncoder::new(codec, d_n, d_v);
        for f in &sim.transmitted {
            trio_bits += enc.encode(f.item, f.label)?.0.bit_count();
        }
        n_transmitted += sim.transmitted.len();

        let mut enc = BeatEncoder::new(codec, d_n, d_v);
        let mut dec = BeatDecoder::new(codec, d_n, d_v);
        for (b, &p) in seg.beats.iter().zip(&preds) {
            let (e, symbols, _) = enc.encode(b, p)?;
            let (d, ts) = dec.decode(&e)?;
            lossless &= d.entries == symbols.entries && d.class == p && ts == b.timestamp as i64;
            let slot = usize::from(p.bit());
            class_bits[slot] += e.bit_count();
            class_beats[slot] += 1;
            prd_sum += prd(b.samples(), &d.reconstruction)?;
            n_coded += 1;
        }
    }

    let beta = |slot: usize| {
        (class_beats[slot] > 0)
            .then(|| (ORIGINAL_BITS_PER_BEAT * class_beats[slot]) as f64 / class_bits[slot] as f64)
    };
    let (se, sp, rho) = (confusion.se(), confusion.sp(), confusion.rho());
    let (beta_n, beta_v) = (beta(0), beta(1));
    let b_tr_model = match (se, sp, rho) {
        (Some(se), Some(sp), Some(rho)) => {
            // A class nobody was assigned contributes nothing; any valid ratio works.
            OperatingPoint::new(se, sp, rho, beta_n.unwrap_or(1.0), beta_v.unwrap_or(1.0))
                .ok()
                .map(|op| b_trio(&op))
        }
        _ => None,
    };
    let raw_bits = |beats: usize| (beats * ORIGINAL_BITS_PER_BEAT) as f64;
    let result = IterationResult {
        partition: spec.name.clone(),
        train_records: spec.train_records.clone(),
        test_records: spec.test_records.clone(),
        tau,
        confusion,
        se,
        sp,
        rho,
        beta_n,
        beta_v,
        b_tr_measured: if n_streamed > 0 { trio_bits as f64 / raw_bits(n_streamed) } else { 0.0 },
        b_tr_model,
        b_co_measured: if n_coded > 0 {
            (class_bits[0] + class_bits[1]) as f64 / raw_bits(n_coded)
        } else {
            0.0
        },
        mean_prd: if n_coded > 0 { prd_sum / n_coded as f64 } else { 0.0 },
        delta_normal: models.delta_calibration[0].delta,
        delta_pvc: models.delta_calibration[1].delta,
        n_training_beats,
        n_test_beats: test_keys.len(),
        n_streamed_beats: n_streamed,
        n_transmitted_beats: n_transmitted,
        lossless,
    };
    let test_roc = roc_from_ratios(&scored, &tau_grid(&scored.iter().map(|s| s.0).collect::<Vec<_>>()));
    Ok(PipelineOutput {
        result,
        models,
        test_roc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub seed: u64,
    pub result: Option<IterationResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccvReport {
    pub proposal: u8,
    pub master_seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub summary: Vec<MetricSummary>,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn summarize(iterations: &[IterationRecord]) -> Vec<MetricSummary> {
    type Getter = fn(&IterationResult) -> Option<f64>;
    let metrics: [(&str, Getter); 7] = [
        ("se", |r| r.se),
        ("sp", |r| r.sp),
        ("beta_n", |r| r.beta_n),
        ("beta_v", |r| r.beta_v),
        ("b_tr", |r| Some(r.b_tr_measured)),
        ("b_tr_model", |r| r.b_tr_model),
        ("mean_prd", |r| Some(r.mean_prd)),
    ];
    metrics
        .iter()
        .map(|(name, get)| {
            let vals: Vec<f64> = iterations
                .iter()
                .filter_map(|it| it.result.as_ref().and_then(get))
                .collect();
            let (mean, sd) = mean_sd(&vals);
            MetricSummary {
                metric: name.to_string(),
                mean,
                sd,
                n: vals.len(),
            }
        })
        .collect()
}

/// Seeds for each iteration, drawn from the master seed.
pub fn iteration_seeds(master_seed: u64, iterations: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..iterations).map(|_| rng.next_u64()).collect()
}

/// Runs the pipeline over `iterations` partitions in parallel. Failed
/// iterations are recorded; the call fails only if all of them do.
pub fn mccv(
    corpus: &[ProcessedRecord],
    proposal: Proposal,
    iterations: usize,
    master_seed: u64,
    cfg: &PipelineConfig,
) -> Result<MccvReport> {
    if iterations == 0 {
        return Err(Error::usage("MCCV needs at least one iteration"));
    }
    cfg.validate()?;
    let meta = record_meta(corpus);
    let seeds = iteration_seeds(master_seed, iterations);
    let records: Vec<IterationRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            let run = || -> Result<IterationResult> {
                let spec = match proposal {
                    Proposal::One => {
                        let mut p = fixed_partition("P4")?;
                        p.patient_specific_minutes = cfg.patient_specific_minutes;
                        p
                    }
                    _ => make_random_partition(&meta, proposal, seed, cfg.patient_specific_minutes)?,
                };
                Ok(run_pipeline(corpus, &spec, cfg)?.result)
            };
            match run() {
                Ok(r) => IterationRecord {
                    index,
                    seed,
                    result: Some(r),
                    error: None,
                },
                Err(e) => {
                    warn!("MCCV iteration {index} failed: {e}");
                    IterationRecord {
                        index,
                        seed,
                        result: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    if records.iter().all(|r| r.result.is_none()) {
        return Err(Error::Constraint(format!(
            "all {iterations} MCCV iterations failed; first: {}",
            records[0].error.as_deref().unwrap_or("")
        )));
    }
    Ok(MccvReport {
        proposal: proposal.number(),
        master_seed,
        summary: summarize(&records),
        iterations: records,
    })
}

impl MccvReport {
    /// One JSON object per iteration.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for it in &self.iterations {
            out.push_str(&serde_json::to_string(it)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,mean,sd,n\n");
        for m in &self.summary {
            let _ = writeln!(out, "{},{},{},{}", m.metric, m.mean, m.sd, m.n);
        }
        out
    }

    /// Rebuilds a report from its JSON-lines form.
    pub fn from_jsonl(text: &str, proposal: u8, master_seed: u64) -> Result<Self> {
        let iterations = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<IterationRecord>, _>>()?;
        Ok(MccvReport {
            proposal,
            master_seed,
            summary: summarize(&iterations),
            iterations,
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// `tau,se,sp` with empty cells for undefined rates.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("tau,se,sp\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.tau, opt(p.se), opt(p.sp));
    }
    out
}

pub fn parse_roc_csv(text: &str) -> Result<Vec<RocPoint>> {
    let cell = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::format(format!("bad ROC value {s:?}")))
        }
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(Error::format(format!("ROC row {l:?} needs 3 fields")));
            }
            Ok(RocPoint {
                tau: cell(f[0])?.ok_or_else(|| Error::format("ROC row lacks tau"))?,
                se: cell(f[1])?,
                sp: cell(f[2])?,
            })
        })
        .collect()
}
