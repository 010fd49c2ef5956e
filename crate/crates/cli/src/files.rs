//! Text formats written by the subcommands, each with its reader.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use beattrio_core::config::PathsConfig;
use beattrio_core::io::load_dictionary;
use beattrio_core::streamer::TraceRow;
use beattrio_core::{AnnotationLabel, BeatClass, Dictionary};
use serde::{Deserialize, Serialize};

/// Stored classification threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub prd_class: f64,
}

pub fn write(path: &Path, text: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = read(path)?;
    serde_json::from_str(&text)
        .map_err(beattrio_core::Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn dictionaries(paths: &PathsConfig) -> anyhow::Result<(Dictionary, Dictionary)> {
    let load = |p: &Path| {
        let p = paths.resolve(p);
        load_dictionary(&p)
            .map(|(d, _)| d)
            .with_context(|| format!("loading dictionary {}", p.display()))
    };
    Ok((load(&paths.d_normal)?, load(&paths.d_pvc)?))
}

fn label_code(l: Option<AnnotationLabel>) -> char {
    l.map_or('-', AnnotationLabel::code)
}

fn parse_class(s: &str) -> anyhow::Result<BeatClass> {
    Ok(s.parse::<BeatClass>()?)
}

/// One row of the per-beat label file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub record: String,
    pub timestamp: u64,
    pub truth: Option<AnnotationLabel>,
    pub ratio: f64,
    pub predicted: BeatClass,
}

pub fn format_labels(rows: &[LabelRow]) -> String {
    let mut out = String::from("record,timestamp,truth,ratio,predicted\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.record,
            r.timestamp,
            label_code(r.truth),
            r.ratio,
            r.predicted
        );
    }
    out
}

pub fn parse_labels(text: &str) -> anyhow::Result<Vec<LabelRow>> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 5 {
                bail!(beattrio_core::Error::Format(format!("label file line {}: expected 5 fields", i + 1)));
            }
            let truth = match f[2] {
                "-" => None,
                s => Some(s.parse::<AnnotationLabel>()?),
            };
            Ok(LabelRow {
                record: f[0].to_string(),
                timestamp: f[1]
                    .parse()
                    .map_err(|_| beattrio_core::Error::Format(format!("label file line {}: bad timestamp", i + 1)))?,
                truth,
                ratio: f[3]
                    .parse()
                    .map_err(|_| beattrio_core::Error::Format(format!("label file line {}: bad ratio", i + 1)))?,
                predicted: parse_class(f[4])?,
            })
        })
        .collect()
}

pub fn format_trace(rows: &[TraceRow]) -> String {
    let mut out = String::from("index,label,flag,transmitted\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.index, r.label, r.flag as u8, r.transmitted as u8);
    }
    out
}

/// Reads a trace, skipping `#` summary lines.
pub fn parse_trace(text: &str) -> anyhow::Result<Vec<TraceRow>> {
    let bit = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(beattrio_core::Error::Format(format!("bad flag {s:?}"))),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 4 {
                bail!(beattrio_core::Error::Format(format!("trace line {l:?}: expected 4 fields")));
            }
            Ok(TraceRow {
                index: f[0]
                    .parse()
                    .map_err(|_| beattrio_core::Error::Format(format!("bad index {:?}", f[0])))?,
                label: parse_class(f[1])?,
                flag: bit(f[2])?,
                transmitted: bit(f[3])?,
            })
        })
        .collect()
}

/// A reconstructed beat.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedRow {
    pub timestamp: i64,
    pub class: BeatClass,
    pub samples: Vec<f64>,
}

pub fn format_decoded(rows: &[DecodedRow]) -> String {
    let mut out = String::from("timestamp,class,samples...\n");
    for r in rows {
        let _ = write!(out, "{},{}", r.timestamp, r.class);
        for v in &r.samples {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_decoded(text: &str) -> anyhow::Result<Vec<DecodedRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut f = l.split(',').map(str::trim);
            let bad = || beattrio_core::Error::Format(format!("decoded beat line {:?}", l.chars().take(40).collect::<String>()));
            let timestamp = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let class = parse_class(f.next().ok_or_else(bad)?)?;
            let samples = f.map(|s| s.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad())?;
            Ok(DecodedRow {
                timestamp,
                class,
                samples,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let rows = vec![
            LabelRow {
                record: "100".into(),
                timestamp: 77,
                truth: Some(AnnotationLabel::Pvc),
                ratio: 0.25,
                predicted: BeatClass::Pvc,
            },
            LabelRow {
                record: "100".into(),
                timestamp: 370,
                truth: None,
                ratio: f64::INFINITY,
                predicted: BeatClass::Normal,
            },
        ];
        let text = format_labels(&rows);
        assert_eq!(parse_labels(&text).unwrap(), rows);
        assert_eq!(format_labels(&parse_labels(&text).unwrap()), text);
    }

    #[test]
    fn trace_round_trip_skips_summary() {
        let rows = vec![TraceRow {
            index: 0,
            label: BeatClass::Pvc,
            flag: true,
            transmitted: false,
        }];
        let text = format_trace(&rows) + "# transmitted_beats: 0\n";
        assert_eq!(parse_trace(&text).unwrap(), rows);
    }

    #[test]
    fn decoded_round_trip() {
        let rows = vec![DecodedRow {
            timestamp: -3,
            class: BeatClass::Normal,
            samples: vec![0.1, -2.5e-7, 3.0],
        }];
        assert_eq!(parse_decoded(&format_decoded(&rows)).unwrap(), rows);
        assert!(parse_decoded("h\n1,Q,0.5\n").is_err());
    }
}
