#![allow(dead_code)]

use beattrio_core::config::PipelineConfig;
use beattrio_core::ksvd::KsvdConfig;
use beattrio_core::preprocess::{process_record, ProcessedRecord};
use beattrio_core::synth::{generate_corpus, SynthConfig};

pub fn corpus(seed: u64, n_records: usize, beats: usize, pvc_rate: f64, spread: f64) -> Vec<ProcessedRecord> {
    let cfg = SynthConfig {
        seed,
        n_records,
        beats_per_record: beats,
        pvc_rate,
        pvc_rate_spread: spread,
        ..SynthConfig::default()
    };
    generate_corpus(&cfg)
        .unwrap()
        .iter()
        .map(|(r, a)| process_record(r, a).unwrap())
        .collect()
}

/// Smallest admissible dictionaries and a short carve-out, for desk-scale runs.
pub fn fast_config() -> PipelineConfig {
    PipelineConfig {
        patient_specific_minutes: 0.25,
        ksvd: KsvdConfig {
            n_atoms: 301,
            sparsity: 4,
            iterations: 4,
            seed: 0,
            convergence_tol: 1e-6,
        },
        ..PipelineConfig::default()
    }
}
