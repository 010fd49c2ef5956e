//! On-disk formats.
//!
//! Record file: `# key=value` header lines (`fs`, `adc_bits`, optionally
//! `gain` and `zero` for raw ADC units), then one sample per line.
//!
//! Annotation file: CSV `sample_index,label` with labels `N`, `V` or `O`;
//! the header row is optional.
//!
//! Dictionary file: `# key=value` header (`m`, `n`, `class`, `seed`, `t0`,
//! `iterations`), then `m` rows of `n` comma-separated atom entries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beat::{AnnotationLabel, BeatClass};
use crate::codec::CodecModel;
use crate::error::{Error, Result};
use crate::preprocess::{validate_annotations, Annotation, RawRecord, DEFAULT_ADC_BITS, DEFAULT_FS};
use crate::sparse::Dictionary;

fn parse_header(line: &str) -> Option<(&str, &str)> {
    let body = line.strip_prefix('#')?.trim();
    let (k, v) = body.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::format(format!("bad value {v:?} for header {key}")))
}

pub fn parse_record(text: &str, record_id: &str) -> Result<RawRecord> {
    let mut fs = DEFAULT_FS;
    let mut adc_bits = DEFAULT_ADC_BITS;
    let mut gain: Option<f64> = None;
    let mut zero = 0.0;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some((k, v)) = parse_header(line) {
                match k {
                    "fs" => fs = parse_num(k, v)?,
                    "adc_bits" => adc_bits = parse_num(k, v)?,
                    "gain" => gain = Some(parse_num(k, v)?),
                    "zero" => zero = parse_num(k, v)?,
                    _ => {}
                }
            }
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::format(format!("record {record_id}, line {}: bad sample {line:?}", lineno + 1))
        })?;
        samples.push(v);
    }
    if let Some(g) = gain {
        if g == 0.0 {
            return Err(Error::format("gain must be non-zero"));
        }
        samples.iter_mut().for_each(|s| *s = (*s - zero) / g);
    }
    RawRecord::new(record_id, fs, adc_bits, samples)
}

pub fn format_record(rec: &RawRecord) -> String {
    let mut out = String::with_capacity(rec.samples.len() * 10 + 64);
    let _ = writeln!(out, "# record={}", rec.record_id);
    let _ = writeln!(out, "# fs={}", rec.fs);
    let _ = writeln!(out, "# adc_bits={}", rec.adc_bits);
    for s in &rec.samples {
        let _ = writeln!(out, "{s}");
    }
    out
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut anns = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("sample_index") {
            continue;
        }
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| Error::format(format!("annotation line {}: expected index,label", lineno + 1)))?;
        let r_peak: u64 = idx
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("annotation line {}: bad index {idx:?}", lineno + 1)))?;
        anns.push(Annotation {
            r_peak,
            label: label.parse()?,
        });
    }
    Ok(anns)
}

pub fn format_annotations(anns: &[Annotation]) -> String {
    let mut out = String::from("sample_index,label\n");
    for a in anns {
        let _ = writeln!(out, "{},{}", a.r_peak, a.label);
    }
    out
}

pub fn record_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.csv"))
}

pub fn annotation_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ann.csv"))
}

/// Reads `<id>.csv` and `<id>.ann.csv` from `dir`, validating annotation order and bounds.
pub fn load_record(dir: &Path, id: &str) -> Result<(RawRecord, Vec<Annotation>)> {
    let rec = parse_record(&fs::read_to_string(record_path(dir, id))?, id)?;
    let anns = parse_annotations(&fs::read_to_string(annotation_path(dir, id))?)?;
    validate_annotations(&anns, rec.samples.len())?;
    Ok((rec, anns))
}

pub fn save_record(dir: &Path, rec: &RawRecord, anns: &[Annotation]) -> Result<()> {
    fs::write(record_path(dir, &rec.record_id), format_record(rec))?;
    fs::write(annotation_path(dir, &rec.record_id), format_annotations(anns))?;
    Ok(())
}

/// Record ids with both files present, numerically sorted where possible.
pub fn list_records(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".ann.csv") {
            if record_path(dir, id).exists() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort_by(|a, b| match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    });
    Ok(ids)
}

/// Training provenance stored in a dictionary file header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DictionaryMeta {
    pub seed: u64,
    pub t0: usize,
    pub iterations: usize,
}

pub fn format_dictionary(d: &Dictionary, meta: &DictionaryMeta) -> String {
    let mut out = String::new();
    let class = d.class_tag().map_or("-".to_string(), |c| c.to_string());
    let _ = writeln!(out, "# beattrio dictionary");
    let _ = writeln!(out, "# m={}", d.rows());
    let _ = writeln!(out, "# n={}", d.n_atoms());
    let _ = writeln!(out, "# class={class}");
    let _ = writeln!(out, "# seed={}", meta.seed);
    let _ = writeln!(out, "# t0={}", meta.t0);
    let _ = writeln!(out, "# iterations={}", meta.iterations);
    for r in 0..d.rows() {
        for c in 0..d.n_atoms() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", d.get(r, c));
        }
        out.push('\n');
    }
    out
}

pub fn parse_dictionary(text: &str) -> Result<(Dictionary, DictionaryMeta)> {
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some((k, v)) = parse_header(line) {
                header.insert(k.to_string(), v.to_string());
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(format!("dictionary row {}: bad number", rows.len() + 1)))?;
        rows.push(row);
    }
    let get = |k: &str| -> Result<&String> {
        header
            .get(k)
            .ok_or_else(|| Error::format(format!("dictionary header lacks {k}")))
    };
    let m: usize = parse_num("m", get("m")?)?;
    let n: usize = parse_num("n", get("n")?)?;
    let class_tag = match get("class")?.as_str() {
        "-" => None,
        c => Some(c.parse::<BeatClass>()?),
    };
    let meta = DictionaryMeta {
        seed: header.get("seed").map(|v| parse_num("seed", v)).transpose()?.unwrap_or(0),
        t0: header.get("t0").map(|v| parse_num("t0", v)).transpose()?.unwrap_or(0),
        iterations: header
            .get("iterations")
            .map(|v| parse_num("iterations", v))
            .transpose()?
            .unwrap_or(0),
    };
    if rows.len() != m || rows.iter().any(|r| r.len() != n) {
        return Err(Error::format(format!("dictionary payload is not {m}x{n}")));
    }
    let mut cols = vec![0.0; m * n];
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            cols[c * m + r] = *v;
        }
    }
    Ok((Dictionary::from_columns(m, cols, class_tag)?, meta))
}

pub fn save_dictionary(path: &Path, d: &Dictionary, meta: &DictionaryMeta) -> Result<()> {
    fs::write(path, format_dictionary(d, meta))?;
    Ok(())
}

pub fn load_dictionary(path: &Path) -> Result<(Dictionary, DictionaryMeta)> {
    parse_dictionary(&fs::read_to_string(path)?)
}

pub fn save_codec(path: &Path, model: &CodecModel) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(model)?)?;
    Ok(())
}

pub fn load_codec(path: &Path) -> Result<CodecModel> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Labels from a compact script such as `"NNVNN"` or `"N N V N N"`.
pub fn parse_label_script(script: &str) -> Result<Vec<BeatClass>> {
    script
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            'O' => Ok(BeatClass::Normal),
            _ => c.to_string().parse::<AnnotationLabel>().map(crate::streamer::flag_label),
        })
        .collect()
}
