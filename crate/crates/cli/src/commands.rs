use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context};
use beattrio_core::bandwidth::{
    b_classification_only, b_compression_only, b_trio, monitoring_cost, reliability_cost_plane, CostModel,
    OperatingPoint,
};
use beattrio_core::classifier::{roc_from_ratios, tau_grid, ClassifierModel, SparsityScorer};
use beattrio_core::codec::stream::EncodedStream;
use beattrio_core::codec::{envelope_search, BeatDecoder, BeatEncoder, CodecModel, ORIGINAL_BITS_PER_BEAT};
use beattrio_core::config::RunConfig;
use beattrio_core::evaluate::{fixed_partition, mccv, roc_csv, run_pipeline, train_models, Proposal, Segment};
use beattrio_core::io::{list_records, load_codec, load_record, parse_label_script, save_codec, save_dictionary, save_record, DictionaryMeta};
use beattrio_core::preprocess::{process_record, ProcessedRecord};
use beattrio_core::streamer::{flag_label, simulate as run_streamer};
use beattrio_core::synth::{generate_corpus, SynthConfig};
use beattrio_core::{prd, BeatClass, BeatVector, Error, FidelityTarget};
use clap::Args;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::files::{self, DecodedRow, LabelRow, Threshold};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

fn load_corpus(cfg: &RunConfig, ids: &[String]) -> anyhow::Result<Vec<ProcessedRecord>> {
    let dir = &cfg.paths.records;
    let ids = if ids.is_empty() {
        list_records(dir).with_context(|| format!("listing records in {}", dir.display()))?
    } else {
        ids.to_vec()
    };
    if ids.is_empty() {
        bail!(Error::Domain(format!("no records found in {}", dir.display())));
    }
    ids.par_iter()
        .map(|id| {
            let (rec, anns) = load_record(dir, id).with_context(|| format!("loading record {id} from {}", dir.display()))?;
            process_record(&rec, &anns).with_context(|| format!("preprocessing record {id}"))
        })
        .collect()
}

struct Models {
    classifier: ClassifierModel,
    codec: CodecModel,
}

impl Models {
    fn load(cfg: &RunConfig) -> anyhow::Result<Self> {
        let (d_n, d_v) = files::dictionaries(&cfg.paths)?;
        let threshold: Threshold = files::read_json(&cfg.paths.resolve(&cfg.paths.classifier))?;
        let codec_path = cfg.paths.resolve(&cfg.paths.codec);
        let codec = load_codec(&codec_path).with_context(|| format!("loading codec {}", codec_path.display()))?;
        let tau = cfg.pipeline.tau.unwrap_or(threshold.tau);
        let scorer = SparsityScorer::new(d_n, d_v, FidelityTarget::new(threshold.prd_class)?)?;
        Ok(Models {
            classifier: ClassifierModel::new(scorer, tau)?,
            codec,
        })
    }

    fn encoder(&self) -> BeatEncoder<'_> {
        let s = self.classifier.scorer();
        BeatEncoder::new(&self.codec, s.d_normal(), s.d_pvc())
    }

    fn decoder(&self) -> BeatDecoder<'_> {
        let s = self.classifier.scorer();
        BeatDecoder::new(&self.codec, s.d_normal(), s.d_pvc())
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 44)]
    n_records: usize,
    #[arg(long, default_value_t = 500)]
    beats: usize,
    #[arg(long, default_value_t = 0.1)]
    pvc_rate: f64,
    /// Spread of per-record PVC rates around `pvc_rate`, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pvc_spread: f64,
}

pub fn synth(cfg: &RunConfig, a: SynthArgs) -> anyhow::Result<()> {
    let sc = SynthConfig {
        seed: a.seed,
        n_records: a.n_records,
        beats_per_record: a.beats,
        pvc_rate: a.pvc_rate,
        pvc_rate_spread: a.pvc_spread,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&sc)?;
    let dir = &cfg.paths.records;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut pvcs = 0;
    for (rec, anns) in &corpus {
        save_record(dir, rec, anns)?;
        pvcs += anns.iter().filter(|a| a.label.class() == Some(BeatClass::Pvc)).count();
    }
    println!(
        "wrote {} records ({} beats, {pvcs} PVC) to {}",
        corpus.len(),
        corpus.iter().map(|(_, a)| a.len()).sum::<usize>(),
        dir.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Records to train on; all records in the directory by default.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    /// Also write the rate/PRD curves and their envelope for the normal class.
    #[arg(long)]
    envelope: bool,
}

pub fn train(cfg: &RunConfig, a: TrainArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(cfg, &a.ids)?;
    let segments: Vec<Segment<'_>> = corpus
        .iter()
        .map(|r| Segment {
            record_id: &r.record_id,
            beats: &r.beats,
        })
        .collect();
    let models = train_models(&segments, &cfg.pipeline, "train")?;
    let paths = &cfg.paths;
    let scorer = models.classifier.scorer();
    let meta = DictionaryMeta {
        seed: cfg.pipeline.ksvd.seed,
        t0: cfg.pipeline.ksvd.sparsity,
        iterations: cfg.pipeline.ksvd.iterations,
    };
    std::fs::create_dir_all(&paths.output).with_context(|| format!("creating {}", paths.output.display()))?;
    save_dictionary(&paths.resolve(&paths.d_normal), scorer.d_normal(), &meta)?;
    save_dictionary(
        &paths.resolve(&paths.d_pvc),
        scorer.d_pvc(),
        &DictionaryMeta {
            seed: meta.seed.wrapping_add(1),
            ..meta.clone()
        },
    )?;
    save_codec(&paths.resolve(&paths.codec), &models.codec)?;
    files::write_json(
        &paths.resolve(&paths.classifier),
        &Threshold {
            tau: models.classifier.tau(),
            prd_class: cfg.pipeline.prd_class,
        },
    )?;
    files::write(&paths.output.join("calibration_roc.csv"), roc_csv(&models.calibration_roc))?;

    println!("training beats: {}", models.training_keys.len());
    println!("tau: {}", models.classifier.tau());
    for (class, cal) in [BeatClass::Normal, BeatClass::Pvc].iter().zip(&models.delta_calibration) {
        println!(
            "delta {class}: {} (mean PRD {:.4}{})",
            cal.delta,
            cal.mean_prd,
            if cal.feasible { "" } else { ", bound not met" }
        );
    }

    if a.envelope {
        let normal: Vec<BeatVector> = corpus
            .iter()
            .flat_map(|r| &r.beats)
            .filter(|b| b.class() == Some(BeatClass::Normal))
            .take(300)
            .cloned()
            .collect();
        let prd_int_grid = [0.02, 0.04, 0.06, 0.08];
        let axis: Vec<f64> = (1..=10).map(|i| i as f64 * 0.01).collect();
        let env = envelope_search(&normal, scorer.d_normal(), &prd_int_grid, &axis, ORIGINAL_BITS_PER_BEAT)?;
        let mut curves = String::from("prd_int,delta,mean_prd,ratio\n");
        for c in &env.curves {
            for p in &c.points {
                let _ = writeln!(curves, "{},{},{},{}", c.prd_int, p.delta, p.mean_prd, p.ratio);
            }
        }
        let mut envelope = String::from("prd_compr,ratio,prd_int,delta\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for p in &env.points {
            let _ = writeln!(envelope, "{},{},{},{}", p.prd_compr, opt(p.ratio), opt(p.prd_int), opt(p.delta));
        }
        files::write(&paths.output.join("rate_curves.csv"), curves)?;
        files::write(&paths.output.join("envelope.csv"), envelope)?;
    }
    println!("models written to {}", paths.output.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Records to classify; all records in the directory by default.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
}

pub fn classify(cfg: &RunConfig, a: ClassifyArgs) -> anyhow::Result<()> {
    let models = Models::load(cfg)?;
    let corpus = load_corpus(cfg, &a.ids)?;
    let clf = &models.classifier;
    let mut rows = Vec::new();
    for rec in &corpus {
        let ratios = rec
            .beats
            .par_iter()
            .map(|b| clf.sparsity_ratio(b))
            .collect::<beattrio_core::Result<Vec<f64>>>()?;
        for (b, ratio) in rec.beats.iter().zip(ratios) {
            rows.push(LabelRow {
                record: rec.record_id.clone(),
                timestamp: b.timestamp,
                truth: b.label,
                ratio,
                predicted: beattrio_core::classifier::decide(ratio, clf.tau()),
            });
        }
    }
    let scored: Vec<(f64, BeatClass)> = rows
        .iter()
        .filter_map(|r| r.truth.and_then(|t| t.class()).map(|c| (r.ratio, c)))
        .collect();
    let ratios: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let roc = roc_from_ratios(&scored, &tau_grid(&ratios));
    let out = &cfg.paths.output;
    files::write(&out.join("labels.csv"), files::format_labels(&rows))?;
    files::write(&out.join("roc.csv"), roc_csv(&roc))?;
    let pvc = rows.iter().filter(|r| r.predicted == BeatClass::Pvc).count();
    println!("classified {} beats at tau {}: {pvc} PVC", rows.len(), clf.tau());
    println!("wrote {} and {}", out.join("labels.csv").display(), out.join("roc.csv").display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CompressReport {
    record: String,
    labels: &'static str,
    beats: usize,
    bits: usize,
    raw_bits: usize,
    ratio: f64,
    mean_prd: f64,
    max_prd: f64,
    lossless: bool,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long)]
    record: String,
    /// Output stream; `<output>/<record>.btr` by default.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Choose each beat's dictionary from the annotations instead of the classifier.
    #[arg(long)]
    truth_labels: bool,
}

pub fn compress(cfg: &RunConfig, a: CompressArgs) -> anyhow::Result<()> {
    let models = Models::load(cfg)?;
    let rec = load_corpus(cfg, std::slice::from_ref(&a.record))?.remove(0);
    let classes: Vec<BeatClass> = if a.truth_labels {
        rec.beats.iter().map(|b| b.label.map_or(BeatClass::Normal, flag_label)).collect()
    } else {
        models.classifier.classify_all(&rec.beats)?
    };
    let mut enc = models.encoder();
    let mut dec = models.decoder();
    let mut encoded = Vec::with_capacity(rec.beats.len());
    let mut lossless = true;
    let mut prds = Vec::with_capacity(rec.beats.len());
    for (b, &class) in rec.beats.iter().zip(&classes) {
        let (e, symbols, _) = enc.encode(b, class)?;
        let (d, ts) = dec.decode(&e)?;
        lossless &= d.entries == symbols.entries && d.class == class && ts == b.timestamp as i64;
        prds.push(prd(b.samples(), &d.reconstruction)?);
        encoded.push(e);
    }
    let stream = EncodedStream::from_beats(&rec.record_id, &encoded);
    let bits: usize = encoded.iter().map(|e| e.bit_count()).sum();
    let raw_bits = ORIGINAL_BITS_PER_BEAT * encoded.len();
    let report = CompressReport {
        record: rec.record_id.clone(),
        labels: if a.truth_labels { "annotations" } else { "classifier" },
        beats: encoded.len(),
        bits,
        raw_bits,
        ratio: raw_bits as f64 / bits.max(1) as f64,
        mean_prd: prds.iter().sum::<f64>() / prds.len().max(1) as f64,
        max_prd: prds.iter().cloned().fold(0.0, f64::max),
        lossless,
    };
    let path = a.stream.unwrap_or_else(|| cfg.paths.output.join(format!("{}.btr", rec.record_id)));
    files::write(&path, stream.to_bytes()?)?;
    files::write_json(&path.with_extension("btr.json"), &report)?;
    println!("stream: {}", path.display());
    println!("beats: {}", report.beats);
    println!("bits: {}", report.bits);
    println!("ratio: {:.2}", report.ratio);
    println!("mean_prd: {:.4}", report.mean_prd);
    println!("max_prd: {:.4}", report.max_prd);
    println!("lossless: {}", report.lossless);
    if !lossless {
        bail!(Error::Domain("decoded symbols differ from encoded symbols".into()));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    stream: PathBuf,
    /// Reconstructed beats; `<output>/<record>.decoded.csv` by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare against the stream's source record in the records directory.
    #[arg(long)]
    reference: bool,
}

pub fn decode(cfg: &RunConfig, a: DecodeArgs) -> anyhow::Result<()> {
    let (d_n, d_v) = files::dictionaries(&cfg.paths)?;
    let codec_path = cfg.paths.resolve(&cfg.paths.codec);
    let codec = load_codec(&codec_path).with_context(|| format!("loading codec {}", codec_path.display()))?;
    let bytes = std::fs::read(&a.stream).with_context(|| format!("reading {}", a.stream.display()))?;
    let stream = EncodedStream::read_from(&mut bytes.as_slice())?;
    let mut dec = BeatDecoder::new(&codec, &d_n, &d_v);
    let mut rows = Vec::with_capacity(stream.frames.len());
    for e in stream.beats(&codec)? {
        let (d, ts) = dec.decode(&e)?;
        rows.push(DecodedRow {
            timestamp: ts,
            class: d.class,
            samples: d.reconstruction,
        });
    }
    let path = a
        .out
        .unwrap_or_else(|| cfg.paths.output.join(format!("{}.decoded.csv", stream.record_id)));
    files::write(&path, files::format_decoded(&rows))?;
    println!("record: {}", stream.record_id);
    println!("beats: {}", rows.len());
    println!("bits: {}", stream.total_bits());
    if a.reference {
        let rec = load_corpus(cfg, std::slice::from_ref(&stream.record_id))?.remove(0);
        let mut sum = 0.0;
        let mut worst: f64 = 0.0;
        for r in &rows {
            let b = rec
                .beats
                .iter()
                .find(|b| b.timestamp as i64 == r.timestamp)
                .ok_or_else(|| Error::Domain(format!("no source beat at sample {}", r.timestamp)))?;
            let p = prd(b.samples(), &r.samples)?;
            sum += p;
            worst = worst.max(p);
        }
        println!("mean_prd: {:.4}", sum / rows.len().max(1) as f64);
        println!("max_prd: {worst:.4}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Label script such as `NNVNN`.
    #[arg(long, conflicts_with_all = ["labels_file", "record"])]
    labels: Option<String>,
    /// Record to stream; beats are classified unless another label source is given.
    #[arg(long)]
    record: Option<String>,
    /// Drive the streamer with the record's annotations.
    #[arg(long, requires = "record")]
    labels_from_annotations: bool,
    /// Predicted labels written by `classify`.
    #[arg(long, requires = "record", conflicts_with = "labels_from_annotations")]
    labels_file: Option<PathBuf>,
    /// Write the trace here instead of stdout.
    #[arg(long)]
    trace: Option<PathBuf>,
}

pub fn simulate(cfg: &RunConfig, a: SimulateArgs) -> anyhow::Result<()> {
    let scfg = cfg.pipeline.streamer();
    let mut summary = Vec::new();
    let trace = if let Some(script) = &a.labels {
        let labels = parse_label_script(script).map_err(|e| usage(format!("--labels: {e}")))?;
        let sim = run_streamer(labels.iter().copied().enumerate(), scfg);
        summary.push(format!("transmitted_beats: {}", sim.transmitted.len()));
        if let Some(n) = sim.notified_at {
            summary.push(format!("notified_at: {n}"));
        }
        sim.trace
    } else {
        let Some(id) = &a.record else {
            return Err(usage("simulate needs --labels or --record"));
        };
        let models = Models::load(cfg)?;
        let rec = load_corpus(cfg, std::slice::from_ref(id))?.remove(0);
        let labels: Vec<BeatClass> = if a.labels_from_annotations {
            rec.beats.iter().map(|b| b.label.map_or(BeatClass::Normal, flag_label)).collect()
        } else if let Some(path) = &a.labels_file {
            let rows = files::parse_labels(&files::read(path)?)?;
            rec.beats
                .iter()
                .map(|b| {
                    rows.iter()
                        .find(|r| &r.record == id && r.timestamp == b.timestamp)
                        .map(|r| r.predicted)
                        .ok_or_else(|| Error::Domain(format!("{} has no label for beat {} of {id}", path.display(), b.timestamp)))
                })
                .collect::<Result<_, _>>()?
        } else {
            models.classifier.classify_all(&rec.beats)?
        };
        let sim = run_streamer(rec.beats.iter().zip(labels), scfg);
        let mut enc = models.encoder();
        let mut bits = 0;
        for f in &sim.transmitted {
            bits += enc.encode(f.item, f.label)?.0.bit_count();
        }
        let raw = ORIGINAL_BITS_PER_BEAT * rec.beats.len();
        summary.push(format!("transmitted_beats: {}", sim.transmitted.len()));
        summary.push(format!("transmitted_bits: {bits}"));
        summary.push(format!("raw_bits: {raw}"));
        summary.push(format!("bandwidth_fraction: {:.6}", bits as f64 / raw as f64));
        if let Some(n) = sim.notified_at {
            summary.push(format!("notified_at: {n}"));
        }
        if let Some(n) = sim.stopped_at {
            summary.push(format!("stopped_at: {n}"));
        }
        sim.trace
    };
    let mut text = files::format_trace(&trace);
    match &a.trace {
        Some(path) => {
            files::write(path, &text)?;
            for s in &summary {
                println!("{s}");
            }
        }
        None => {
            for s in &summary {
                let _ = writeln!(text, "# {s}");
            }
            print!("{text}");
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Monte Carlo proposal 1, 2 or 3.
    #[arg(long)]
    proposal: Option<u8>,
    /// Single fixed partition, P1 to P4.
    #[arg(long, conflicts_with = "proposal")]
    partition: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Master seed for the partition draws.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn eval(cfg: &RunConfig, a: EvalArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(cfg, &[])?;
    let out = &cfg.paths.output;
    if let Some(name) = &a.partition {
        let mut spec = fixed_partition(name)?;
        spec.patient_specific_minutes = cfg.pipeline.patient_specific_minutes;
        let res = run_pipeline(&corpus, &spec, &cfg.pipeline)?;
        let stem = spec.name.to_lowercase();
        files::write_json(&out.join(format!("{stem}.json")), &res.result)?;
        files::write(&out.join(format!("{stem}_roc.csv")), roc_csv(&res.test_roc))?;
        let r = &res.result;
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!("partition: {}", spec.name);
        for d in &spec.discrepancies {
            println!("note: {d}");
        }
        println!("tau: {}", r.tau);
        println!("se: {}", opt(r.se));
        println!("sp: {}", opt(r.sp));
        println!("beta_n: {}", opt(r.beta_n));
        println!("beta_v: {}", opt(r.beta_v));
        println!("b_tr: {:.6}", r.b_tr_measured);
        println!("mean_prd: {:.4}", r.mean_prd);
        return Ok(());
    }
    let proposal = Proposal::from_number(a.proposal.unwrap_or(cfg.mccv.proposal))?;
    let iterations = a.iterations.unwrap_or(cfg.mccv.iterations);
    let seed = a.seed.unwrap_or(cfg.mccv.seed);
    info!("MCCV proposal {} x {iterations}, seed {seed}", proposal.number());
    let report = mccv(&corpus, proposal, iterations, seed, &cfg.pipeline)?;
    files::write(&out.join("mccv.jsonl"), report.to_jsonl()?)?;
    files::write(&out.join("mccv_summary.csv"), report.summary_csv())?;
    let failed = report.iterations.iter().filter(|i| i.error.is_some()).count();
    println!("proposal {} over {iterations} iterations ({failed} failed)", proposal.number());
    println!("{:<12} {:>10} {:>10} {:>4}", "metric", "mean", "sd", "n");
    for m in &report.summary {
        println!("{:<12} {:>10.4} {:>10.4} {:>4}", m.metric, m.mean, m.sd, m.n);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BandwidthArgs {
    #[arg(long, default_value_t = 0.99)]
    se: f64,
    #[arg(long, default_value_t = 0.953)]
    sp: f64,
    /// PVC prevalence.
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 49.7)]
    beta_n: f64,
    #[arg(long, default_value_t = 50.8)]
    beta_v: f64,
    #[arg(long, default_value_t = 1.0)]
    hours: f64,
    /// US cents per 100 kB.
    #[arg(long, default_value_t = 1.5)]
    tariff: f64,
    #[arg(long, default_value_t = 360.0)]
    fs: f64,
    #[arg(long, default_value_t = 11.0)]
    adc_bits: f64,
    /// Print the table as CSV.
    #[arg(long)]
    csv: bool,
    /// Write the reliability-vs-cost plane (Se from 0.90 to 1.00) to this file.
    #[arg(long)]
    plane: Option<PathBuf>,
}

pub fn bandwidth(a: BandwidthArgs) -> anyhow::Result<()> {
    let op = OperatingPoint::new(a.se, a.sp, a.rho, a.beta_n, a.beta_v)?;
    let cm = CostModel::new(a.fs, a.adc_bits, a.tariff, a.hours)?;
    let rows = [
        ("raw", 1.0),
        ("classification", b_classification_only(&op)),
        ("compression", b_compression_only(&op)),
        ("trio", b_trio(&op)),
    ];
    if a.csv {
        println!("config,b,bytes,cost_cents");
    } else {
        println!("{:<16} {:>8} {:>12} {:>10}", "config", "b", "bytes", "cost (¢)");
    }
    for (name, b) in rows {
        let c = monitoring_cost(b, &cm);
        if a.csv {
            println!("{name},{b},{},{}", c.bytes, c.cost);
        } else {
            println!("{name:<16} {b:>8.4} {:>12.0} {:>10.2}", c.bytes, c.cost);
        }
    }
    if let Some(path) = a.plane {
        let grid: Vec<f64> = (0..=100).map(|i| 0.90 + i as f64 * 0.001).collect();
        let plane = reliability_cost_plane(&op, &cm, &grid)?;
        let mut text = String::from("miss_rate,b_classification,b_trio,cost_classification,cost_trio\n");
        for r in plane {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                r.miss_rate, r.b_classification, r.b_trio, r.cost_classification, r.cost_trio
            );
        }
        files::write(&path, text)?;
    }
    Ok(())
}
