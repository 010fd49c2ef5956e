use beattrio_core::io::{list_records, load_record, save_record};
use beattrio_core::preprocess::process_record;
use beattrio_core::synth::{generate_corpus, SynthConfig};
use beattrio_core::AnnotationLabel;

/// Smallest and largest counts inside the central 99% of Binomial(n, p).
fn binomial_99(n: u64, p: f64) -> (u64, u64) {
    let ln_fact = |k: u64| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let pmf = |k: u64| (ln_fact(n) - ln_fact(k) - ln_fact(n - k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    let mut cdf = 0.0;
    let mut lo = None;
    for k in 0..=n {
        cdf += pmf(k);
        if lo.is_none() && cdf >= 0.005 {
            lo = Some(k);
        }
        if cdf >= 0.995 {
            return (lo.unwrap(), k);
        }
    }
    (lo.unwrap_or(0), n)
}

#[test]
fn pvc_count_within_binomial_interval() {
    let (lo, hi) = binomial_99(1000, 0.1);
    assert!(lo > 70 && hi < 130);
    let cfg = SynthConfig {
        seed: 4,
        n_records: 1,
        beats_per_record: 1000,
        pvc_rate: 0.1,
        ..SynthConfig::default()
    };
    let (_, anns) = &generate_corpus(&cfg).unwrap()[0];
    let pvcs = anns.iter().filter(|a| a.label == AnnotationLabel::Pvc).count() as u64;
    assert!((lo..=hi).contains(&pvcs), "{pvcs} outside [{lo}, {hi}]");
}

#[test]
fn files_round_trip_and_bytes_are_stable() {
    let cfg = SynthConfig {
        seed: 8,
        n_records: 3,
        beats_per_record: 30,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (rec, anns) in &corpus {
        save_record(a.path(), rec, anns).unwrap();
    }
    for (rec, anns) in &generate_corpus(&cfg).unwrap() {
        save_record(b.path(), rec, anns).unwrap();
    }
    let ids = list_records(a.path()).unwrap();
    assert_eq!(ids, vec!["100", "101", "103"]);
    for ((rec, anns), id) in corpus.iter().zip(&ids) {
        let (r2, a2) = load_record(a.path(), id).unwrap();
        assert_eq!(&r2, rec);
        assert_eq!(&a2, anns);
        assert_eq!(process_record(&r2, &a2).unwrap(), process_record(rec, anns).unwrap());
        for name in [format!("{id}.csv"), format!("{id}.ann.csv")] {
            assert_eq!(
                std::fs::read(a.path().join(&name)).unwrap(),
                std::fs::read(b.path().join(&name)).unwrap()
            );
        }
    }
}

#[test]
fn segmentation_keeps_every_interior_beat() {
    let cfg = SynthConfig {
        seed: 2,
        n_records: 1,
        beats_per_record: 50,
        ..SynthConfig::default()
    };
    let (rec, anns) = &generate_corpus(&cfg).unwrap()[0];
    let p = process_record(rec, anns).unwrap();
    assert_eq!(p.beats.len() + p.skipped, anns.len());
    assert!(p.beats.iter().all(|b| b.len() == 301));
    assert!(p.skipped <= 1);
}
