//! Beat compression: OMP at an intermediate fidelity, rank-indexed
//! quantization, and Huffman coding of coefficient values, atom locations and
//! differential timestamps.
//!
//! An encoded beat is `class bit | timestamp | payload`. The payload lists
//! `(location, level)` pairs in rank order and ends with an end-of-block
//! location symbol. Tables and codebooks are trained offline and shared by
//! encoder and decoder, so they never count toward per-beat bits.

pub mod bits;
pub mod huffman;
pub mod quant;
pub mod stream;

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beat::{BeatClass, BeatVector, BEAT_LEN};
use crate::error::{Error, Result};
use crate::preprocess::DEFAULT_ADC_BITS;
use crate::sparse::{omp_solve, prd, reconstruct_entries, Dictionary, FidelityTarget, SparseCode};

pub use bits::{BitReader, BitString};
pub use huffman::HuffmanBook;
pub use quant::{build_quant_tables, quantize_value, ranked_entries, QuantLevel, QuantTable, Quantized};

pub const DEFAULT_PRD_INT: f64 = 0.088;
pub const DEFAULT_PRD_COMPR: f64 = 0.09;
/// Raw bits of one beat: 301 samples of 11 bits.
pub const ORIGINAL_BITS_PER_BEAT: usize = BEAT_LEN * DEFAULT_ADC_BITS as usize;
/// Points on the geometric step-size grid.
pub const DELTA_GRID_POINTS: usize = 64;
/// Smallest grid step relative to the largest training coefficient.
pub const DELTA_GRID_MIN_FRACTION: f64 = 1e-4;

/// End-of-block marker in the location alphabet.
const END_OF_BLOCK: i64 = -1;
const LEVEL_LITERAL_BITS: u32 = 32;
const TIMESTAMP_LITERAL_BITS: u32 = 40;

/// Quantization table and codebooks for one class dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCodec {
    table: QuantTable,
    /// One value codebook per rank.
    values: Vec<HuffmanBook>,
    locations: HuffmanBook,
    n_atoms: usize,
}

impl ClassCodec {
    /// Learns ranges and empirical symbol frequencies from training codes.
    pub fn train(codes: &[SparseCode], delta: f64, n_atoms: usize) -> Result<Self> {
        let table = build_quant_tables(codes, delta)?;
        let mut value_counts: Vec<BTreeMap<i64, u64>> = vec![BTreeMap::new(); table.max_rank()];
        let mut location_counts: BTreeMap<i64, u64> = BTreeMap::new();
        for code in codes {
            for (rank, (loc, v)) in ranked_entries(code).into_iter().enumerate() {
                if loc >= n_atoms {
                    return Err(Error::usage(format!("atom {loc} out of range")));
                }
                let q = quantize_value(v, rank, &table);
                *value_counts[rank].entry(q.level.symbol()).or_default() += 1;
                *location_counts.entry(loc as i64).or_default() += 1;
            }
            *location_counts.entry(END_OF_BLOCK).or_default() += 1;
        }
        let always = [quant::UNDERFLOW_SYMBOL, quant::OVERFLOW_SYMBOL];
        let values = value_counts
            .iter()
            .map(|c| HuffmanBook::train(c, &always, LEVEL_LITERAL_BITS))
            .collect::<Result<_>>()?;
        let locations = HuffmanBook::train(
            &location_counts,
            &[END_OF_BLOCK],
            signed_width(n_atoms as i64),
        )?;
        Ok(ClassCodec {
            table,
            values,
            locations,
            n_atoms,
        })
    }

    pub fn table(&self) -> &QuantTable {
        &self.table
    }

    pub fn value_books(&self) -> &[HuffmanBook] {
        &self.values
    }

    pub fn location_book(&self) -> &HuffmanBook {
        &self.locations
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Rank-ordered `(location, level)` pairs, plus how many ranks fell beyond the table.
    pub fn quantize_code(&self, code: &SparseCode) -> (Vec<(usize, QuantLevel)>, usize) {
        let mut clamped = 0;
        let entries = ranked_entries(code)
            .into_iter()
            .enumerate()
            .map(|(rank, (loc, v))| {
                if rank >= self.table.max_rank() {
                    clamped += 1;
                }
                (loc, quantize_value(v, rank, &self.table).level)
            })
            .collect();
        (entries, clamped)
    }

    pub fn dequantize(&self, entries: &[(usize, QuantLevel)]) -> Vec<(usize, f64)> {
        entries
            .iter()
            .enumerate()
            .map(|(rank, &(loc, level))| (loc, self.table.dequantize(level, rank)))
            .collect()
    }

    fn value_book(&self, rank: usize) -> &HuffmanBook {
        &self.values[self.table.clamp_rank(rank)]
    }

    /// Payload length in bits without materializing it.
    pub fn payload_cost(&self, entries: &[(usize, QuantLevel)]) -> Result<usize> {
        let mut bits = self.locations.cost(END_OF_BLOCK)?;
        for (rank, &(loc, level)) in entries.iter().enumerate() {
            bits += self.locations.cost(loc as i64)?;
            bits += self.value_book(rank).cost(level.symbol())?;
        }
        Ok(bits)
    }

    /// Returns the number of escaped symbols.
    pub fn encode_payload(&self, entries: &[(usize, QuantLevel)], out: &mut BitString) -> Result<usize> {
        let mut escapes = 0;
        for (rank, &(loc, level)) in entries.iter().enumerate() {
            if loc >= self.n_atoms {
                return Err(Error::usage(format!("atom {loc} out of range")));
            }
            escapes += self.locations.encode(loc as i64, out)? as usize;
            escapes += self.value_book(rank).encode(level.symbol(), out)? as usize;
        }
        self.locations.encode(END_OF_BLOCK, out)?;
        Ok(escapes)
    }

    pub fn decode_payload(&self, r: &mut BitReader<'_>) -> Result<Vec<(usize, QuantLevel)>> {
        let mut entries = Vec::new();
        loop {
            let at = r.position();
            let loc = self.locations.decode(r)?;
            if loc == END_OF_BLOCK {
                return Ok(entries);
            }
            if loc < 0 || loc as usize >= self.n_atoms {
                return Err(Error::Decode {
                    offset: at,
                    reason: format!("atom index {loc} out of range"),
                });
            }
            if entries.len() >= self.n_atoms {
                return Err(Error::Decode {
                    offset: at,
                    reason: "more coefficients than atoms".into(),
                });
            }
            let level = QuantLevel::from_symbol(self.value_book(entries.len()).decode(r)?);
            entries.push((loc as usize, level));
        }
    }
}

fn signed_width(max_value: i64) -> u32 {
    65 - max_value.max(1).leading_zeros()
}

/// Everything needed to encode and decode beats of both classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecModel {
    pub normal: ClassCodec,
    pub pvc: ClassCodec,
    pub timestamps: HuffmanBook,
    pub prd_int: f64,
    pub prd_compr: f64,
}

impl CodecModel {
    pub fn class_codec(&self, class: BeatClass) -> &ClassCodec {
        match class {
            BeatClass::Normal => &self.normal,
            BeatClass::Pvc => &self.pvc,
        }
    }

    pub fn prd_int_target(&self) -> Result<FidelityTarget> {
        FidelityTarget::new(self.prd_int)
    }
}

/// Timestamp codebook from example differential timestamps.
pub fn train_timestamp_book(deltas: &[i64]) -> Result<HuffmanBook> {
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for &d in deltas {
        *counts.entry(d).or_default() += 1;
    }
    HuffmanBook::train(&counts, &[], TIMESTAMP_LITERAL_BITS)
}

/// Lossless content of an encoded beat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeatSymbols {
    pub class: BeatClass,
    /// R-peak index minus that of the previously transmitted beat (absolute for the first).
    pub timestamp_delta: i64,
    /// `(atom, level)` in rank order.
    pub entries: Vec<(usize, QuantLevel)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBeat {
    pub class: BeatClass,
    pub timestamp_bits: BitString,
    pub payload_bits: BitString,
}

impl EncodedBeat {
    /// Payload + timestamp + the class bit.
    pub fn bit_count(&self) -> usize {
        self.payload_bits.len() + self.timestamp_bits.len() + 1
    }

    /// `class bit | timestamp | payload` as one bit string.
    pub fn to_frame(&self) -> BitString {
        let mut f = BitString::new();
        f.push(self.class.bit());
        f.extend(&self.timestamp_bits);
        f.extend(&self.payload_bits);
        f
    }

    /// Splits a frame back into its fields; the whole frame must be consumed.
    pub fn from_frame(frame: &BitString, model: &CodecModel) -> Result<Self> {
        let mut r = frame.reader();
        let class = BeatClass::from_bit(r.read_bit()?);
        model.timestamps.decode(&mut r)?;
        let ts_end = r.position();
        model.class_codec(class).decode_payload(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::Decode {
                offset: r.position(),
                reason: format!("{} trailing bits after end of block", r.remaining()),
            });
        }
        Ok(EncodedBeat {
            class,
            timestamp_bits: frame.slice(1, ts_end),
            payload_bits: frame.slice(ts_end, frame.len()),
        })
    }
}

pub fn encode_symbols(symbols: &BeatSymbols, model: &CodecModel) -> Result<(EncodedBeat, usize)> {
    let mut timestamp_bits = BitString::new();
    let mut escapes = model
        .timestamps
        .encode(symbols.timestamp_delta, &mut timestamp_bits)? as usize;
    let mut payload_bits = BitString::new();
    escapes += model
        .class_codec(symbols.class)
        .encode_payload(&symbols.entries, &mut payload_bits)?;
    Ok((
        EncodedBeat {
            class: symbols.class,
            timestamp_bits,
            payload_bits,
        },
        escapes,
    ))
}

pub fn decode_symbols(enc: &EncodedBeat, model: &CodecModel) -> Result<BeatSymbols> {
    let mut r = enc.timestamp_bits.reader();
    let timestamp_delta = model.timestamps.decode(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Decode {
            offset: r.position(),
            reason: "trailing bits in timestamp field".into(),
        });
    }
    let mut r = enc.payload_bits.reader();
    let entries = model.class_codec(enc.class).decode_payload(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Decode {
            offset: r.position(),
            reason: "trailing bits in payload".into(),
        });
    }
    Ok(BeatSymbols {
        class: enc.class,
        timestamp_delta,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeDiagnostics {
    /// PRD of the unquantized OMP code.
    pub prd_int_achieved: f64,
    pub target_met: bool,
    /// Coefficients whose rank exceeded the quantization table.
    pub clamped_ranks: usize,
    pub escapes: usize,
}

/// Codes `x` on the dictionary of `class` at `prd_int`, quantizes and entropy
/// codes it. An unmet fidelity target is reported, not fatal.
pub fn encode_beat(
    x: &BeatVector,
    class: BeatClass,
    dict: &Dictionary,
    prd_int: FidelityTarget,
    model: &CodecModel,
    timestamp_delta: i64,
) -> Result<(EncodedBeat, BeatSymbols, EncodeDiagnostics)> {
    let codec = model.class_codec(class);
    if dict.n_atoms() != codec.n_atoms() {
        return Err(Error::usage(format!(
            "dictionary has {} atoms but the {class} codec was trained for {}",
            dict.n_atoms(),
            codec.n_atoms()
        )));
    }
    let code = omp_solve(dict, x.samples(), prd_int, dict.rows())?;
    if !code.target_met {
        warn!(
            "beat at {} missed PRD_int {} (achieved {:.4})",
            x.timestamp,
            prd_int.prd_limit(),
            code.achieved_prd
        );
    }
    let (entries, clamped_ranks) = codec.quantize_code(&code);
    let symbols = BeatSymbols {
        class,
        timestamp_delta,
        entries,
    };
    let (enc, escapes) = encode_symbols(&symbols, model)?;
    Ok((
        enc,
        symbols,
        EncodeDiagnostics {
            prd_int_achieved: code.achieved_prd,
            target_met: code.target_met,
            clamped_ranks,
            escapes,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedBeat {
    pub class: BeatClass,
    pub timestamp_delta: i64,
    pub entries: Vec<(usize, QuantLevel)>,
    pub reconstruction: Vec<f64>,
}

pub fn decode_beat(
    enc: &EncodedBeat,
    d_normal: &Dictionary,
    d_pvc: &Dictionary,
    model: &CodecModel,
) -> Result<DecodedBeat> {
    let symbols = decode_symbols(enc, model)?;
    let dict = match symbols.class {
        BeatClass::Normal => d_normal,
        BeatClass::Pvc => d_pvc,
    };
    let values = model.class_codec(symbols.class).dequantize(&symbols.entries);
    let reconstruction = reconstruct_entries(dict, values)?;
    Ok(DecodedBeat {
        class: symbols.class,
        timestamp_delta: symbols.timestamp_delta,
        entries: symbols.entries,
        reconstruction,
    })
}

/// `original_bits / bit_count`.
pub fn compression_ratio(original_bits: usize, enc: &EncodedBeat) -> f64 {
    original_bits as f64 / enc.bit_count() as f64
}

/// Stateful encoder for one record stream; tracks the differential timestamp chain.
pub struct BeatEncoder<'a> {
    model: &'a CodecModel,
    d_normal: &'a Dictionary,
    d_pvc: &'a Dictionary,
    previous: Option<u64>,
}

impl<'a> BeatEncoder<'a> {
    pub fn new(model: &'a CodecModel, d_normal: &'a Dictionary, d_pvc: &'a Dictionary) -> Self {
        BeatEncoder {
            model,
            d_normal,
            d_pvc,
            previous: None,
        }
    }

    pub fn encode(
        &mut self,
        beat: &BeatVector,
        class: BeatClass,
    ) -> Result<(EncodedBeat, BeatSymbols, EncodeDiagnostics)> {
        let delta = match self.previous {
            None => beat.timestamp as i64,
            Some(p) => beat.timestamp as i64 - p as i64,
        };
        let dict = match class {
            BeatClass::Normal => self.d_normal,
            BeatClass::Pvc => self.d_pvc,
        };
        let out = encode_beat(beat, class, dict, self.model.prd_int_target()?, self.model, delta)?;
        self.previous = Some(beat.timestamp);
        Ok(out)
    }
}

/// Stateful decoder mirroring [`BeatEncoder`].
pub struct BeatDecoder<'a> {
    model: &'a CodecModel,
    d_normal: &'a Dictionary,
    d_pvc: &'a Dictionary,
    previous: Option<i64>,
}

impl<'a> BeatDecoder<'a> {
    pub fn new(model: &'a CodecModel, d_normal: &'a Dictionary, d_pvc: &'a Dictionary) -> Self {
        BeatDecoder {
            model,
            d_normal,
            d_pvc,
            previous: None,
        }
    }

    /// Decoded beat and its absolute timestamp.
    pub fn decode(&mut self, enc: &EncodedBeat) -> Result<(DecodedBeat, i64)> {
        let d = decode_beat(enc, self.d_normal, self.d_pvc, self.model)?;
        let ts = self.previous.unwrap_or(0) + d.timestamp_delta;
        self.previous = Some(ts);
        Ok((d, ts))
    }
}

/// Differential timestamps of a beat sequence (first one absolute).
pub fn timestamp_deltas<'a>(beats: impl IntoIterator<Item = &'a BeatVector>) -> Vec<i64> {
    let mut prev: Option<u64> = None;
    beats
        .into_iter()
        .map(|b| {
            let d = match prev {
                None => b.timestamp as i64,
                Some(p) => b.timestamp as i64 - p as i64,
            };
            prev = Some(b.timestamp);
            d
        })
        .collect()
}

/// Codes every beat at `prd_int`.
pub fn code_beats(beats: &[BeatVector], dict: &Dictionary, prd_int: FidelityTarget) -> Result<Vec<SparseCode>> {
    beats
        .par_iter()
        .map(|b| omp_solve(dict, b.samples(), prd_int, dict.rows()))
        .collect()
}

/// `DELTA_GRID_POINTS` geometric steps spanning `[1e-4, 1] * max |coefficient|`.
pub fn delta_grid(codes: &[SparseCode]) -> Vec<f64> {
    let amax = codes
        .iter()
        .flat_map(|c| c.values.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let amax = if amax > 0.0 { amax } else { 1.0 };
    let lo = DELTA_GRID_MIN_FRACTION.ln();
    (0..DELTA_GRID_POINTS)
        .map(|i| {
            let t = i as f64 / (DELTA_GRID_POINTS - 1) as f64;
            amax * (lo * (1.0 - t)).exp()
        })
        .collect()
}

/// Mean end-to-end PRD after quantizing `codes` with `table`.
pub fn mean_quantized_prd(
    beats: &[BeatVector],
    codes: &[SparseCode],
    dict: &Dictionary,
    table: &QuantTable,
) -> Result<f64> {
    if beats.is_empty() || beats.len() != codes.len() {
        return Err(Error::usage("beats and codes must be non-empty and paired"));
    }
    let total: f64 = beats
        .par_iter()
        .zip(codes)
        .map(|(b, c)| {
            let entries = ranked_entries(c)
                .into_iter()
                .enumerate()
                .map(|(rank, (loc, v))| (loc, quantize_value(v, rank, table).value));
            prd(b.samples(), &reconstruct_entries(dict, entries)?)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / beats.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCalibration {
    pub delta: f64,
    pub mean_prd: f64,
    /// False when no grid step met `prd_compr` and the smallest one was returned.
    pub feasible: bool,
    /// `(delta, mean PRD)` over the whole grid, ascending in delta.
    pub sweep: Vec<(f64, f64)>,
}

/// Largest grid step whose mean end-to-end PRD stays within `prd_compr`.
pub fn calibrate_delta(
    beats: &[BeatVector],
    dict: &Dictionary,
    prd_int: FidelityTarget,
    prd_compr: FidelityTarget,
) -> Result<DeltaCalibration> {
    if prd_int.prd_limit() > prd_compr.prd_limit() {
        return Err(Error::usage("PRD_int must not exceed PRD_compr"));
    }
    let codes = code_beats(beats, dict, prd_int)?;
    calibrate_delta_from_codes(beats, &codes, dict, prd_compr)
}

pub fn calibrate_delta_from_codes(
    beats: &[BeatVector],
    codes: &[SparseCode],
    dict: &Dictionary,
    prd_compr: FidelityTarget,
) -> Result<DeltaCalibration> {
    let grid = delta_grid(codes);
    let table = build_quant_tables(codes, grid[0])?;
    let mut sweep = Vec::with_capacity(grid.len());
    for &d in &grid {
        let t = table.clone().with_delta(d)?;
        sweep.push((d, mean_quantized_prd(beats, codes, dict, &t)?));
    }
    let best = sweep
        .iter()
        .rev()
        .find(|(_, p)| *p <= prd_compr.prd_limit());
    Ok(match best {
        Some(&(delta, mean_prd)) => DeltaCalibration {
            delta,
            mean_prd,
            feasible: true,
            sweep,
        },
        None => {
            warn!(
                "no step size reaches PRD_compr {}; using the smallest",
                prd_compr.prd_limit()
            );
            DeltaCalibration {
                delta: sweep[0].0,
                mean_prd: sweep[0].1,
                feasible: false,
                sweep,
            }
        }
    })
}

/// Beats of one class for codec training. Quantization ranges and codebooks
/// come from `train`; the step size is calibrated on `calibrate`, or on
/// `train` when that is empty.
#[derive(Debug, Clone, Copy)]
pub struct ClassBeats<'a> {
    pub train: &'a [BeatVector],
    pub calibrate: &'a [BeatVector],
}

/// Trains the full codec from per-class beats.
pub fn train_codec_model(
    normal: ClassBeats<'_>,
    pvc: ClassBeats<'_>,
    d_normal: &Dictionary,
    d_pvc: &Dictionary,
    prd_int: FidelityTarget,
    prd_compr: FidelityTarget,
    timestamp_examples: &[i64],
) -> Result<(CodecModel, [DeltaCalibration; 2])> {
    if prd_int.prd_limit() > prd_compr.prd_limit() {
        return Err(Error::usage("PRD_int must not exceed PRD_compr"));
    }
    let train_class = |beats: ClassBeats<'_>, dict: &Dictionary| -> Result<(ClassCodec, DeltaCalibration)> {
        if beats.train.is_empty() {
            return Err(Error::usage("no training beats for a codec class"));
        }
        let codes = code_beats(beats.train, dict, prd_int)?;
        let cal = if beats.calibrate.is_empty() {
            calibrate_delta_from_codes(beats.train, &codes, dict, prd_compr)?
        } else {
            calibrate_delta(beats.calibrate, dict, prd_int, prd_compr)?
        };
        Ok((ClassCodec::train(&codes, cal.delta, dict.n_atoms())?, cal))
    };
    let (normal, cal_n) = train_class(normal, d_normal)?;
    let (pvc, cal_v) = train_class(pvc, d_pvc)?;
    Ok((
        CodecModel {
            normal,
            pvc,
            timestamps: train_timestamp_book(timestamp_examples)?,
            prd_int: prd_int.prd_limit(),
            prd_compr: prd_compr.prd_limit(),
        },
        [cal_n, cal_v],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: f64,
    pub mean_prd: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub prd_int: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub prd_compr: f64,
    /// Best ratio among all curve points with mean PRD within `prd_compr`.
    pub ratio: Option<f64>,
    pub prd_int: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub curves: Vec<RateCurve>,
    pub points: Vec<EnvelopePoint>,
}

/// Ratio-vs-PRD curves for each `prd_int`, swept over the step grid, and
/// their upper envelope at each requested `prd_compr`. Codebooks are trained
/// in-sample on `beats`; timestamps follow the beats' own order.
pub fn envelope_search(
    beats: &[BeatVector],
    dict: &Dictionary,
    prd_int_grid: &[f64],
    prd_compr_axis: &[f64],
    original_bits: usize,
) -> Result<Envelope> {
    if beats.is_empty() || prd_int_grid.is_empty() || prd_compr_axis.is_empty() {
        return Err(Error::usage("envelope search needs beats and non-empty grids"));
    }
    let ts_deltas = timestamp_deltas(beats);
    let ts_book = train_timestamp_book(&ts_deltas)?;
    let ts_bits: usize = ts_deltas
        .iter()
        .map(|&d| ts_book.cost(d))
        .sum::<Result<usize>>()?;

    let mut curves = Vec::with_capacity(prd_int_grid.len());
    for &pi in prd_int_grid {
        let codes = code_beats(beats, dict, FidelityTarget::new(pi)?)?;
        let mut points = Vec::new();
        for delta in delta_grid(&codes) {
            let codec = ClassCodec::train(&codes, delta, dict.n_atoms())?;
            let mean_prd = mean_quantized_prd(beats, &codes, dict, &codec.table)?;
            let payload: usize = codes
                .iter()
                .map(|c| codec.payload_cost(&codec.quantize_code(c).0))
                .sum::<Result<usize>>()?;
            let total_bits = payload + ts_bits + beats.len();
            points.push(CurvePoint {
                delta,
                mean_prd,
                ratio: (original_bits * beats.len()) as f64 / total_bits as f64,
            });
        }
        curves.push(RateCurve { prd_int: pi, points });
    }

    let points = prd_compr_axis
        .iter()
        .map(|&target| {
            let mut best: Option<(f64, f64, f64)> = None;
            for c in &curves {
                for p in c.points.iter().filter(|p| p.mean_prd <= target) {
                    if best.is_none_or(|b| p.ratio > b.0) {
                        best = Some((p.ratio, c.prd_int, p.delta));
                    }
                }
            }
            EnvelopePoint {
                prd_compr: target,
                ratio: best.map(|b| b.0),
                prd_int: best.map(|b| b.1),
                delta: best.map(|b| b.2),
            }
        })
        .collect();
    Ok(Envelope { curves, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(entries: &[(usize, f64)]) -> SparseCode {
        SparseCode {
            support: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.1).collect(),
            achieved_prd: 0.0,
            target_met: true,
        }
    }

    fn toy_model() -> CodecModel {
        let codes = vec![
            code(&[(0, 4.0), (2, -1.0)]),
            code(&[(1, 3.0)]),
            code(&[(3, -5.0), (0, 0.5), (2, 0.2)]),
        ];
        let c = ClassCodec::train(&codes, 0.5, 4).unwrap();
        CodecModel {
            normal: c.clone(),
            pvc: c,
            timestamps: train_timestamp_book(&[100, 290, 290, 300]).unwrap(),
            prd_int: 0.05,
            prd_compr: 0.09,
        }
    }

    #[test]
    fn ratio_arithmetic() {
        let enc = |payload: usize, ts: usize| {
            let mut p = BitString::new();
            p.push_bits(0, payload as u32);
            let mut t = BitString::new();
            t.push_bits(0, ts as u32);
            EncodedBeat {
                class: BeatClass::Normal,
                timestamp_bits: t,
                payload_bits: p,
            }
        };
        assert_eq!(ORIGINAL_BITS_PER_BEAT, 3311);
        let e = enc(40, 10);
        assert_eq!(e.bit_count(), 51);
        assert!((compression_ratio(3311, &e) - 3311.0 / 51.0).abs() < 1e-12);
        assert!((compression_ratio(3311, &enc(55, 10)) - 3311.0 / 66.0).abs() < 1e-12);
    }

    #[test]
    fn symbols_round_trip_and_frame() {
        let model = toy_model();
        let symbols = BeatSymbols {
            class: BeatClass::Pvc,
            timestamp_delta: 400,
            entries: vec![(3, QuantLevel::Level(-9)), (0, QuantLevel::Over), (1, QuantLevel::Level(77))],
        };
        let (enc, escapes) = encode_symbols(&symbols, &model).unwrap();
        // 400 was never seen by the timestamp book; 77 never seen by its rank.
        assert!(escapes >= 2);
        assert_eq!(decode_symbols(&enc, &model).unwrap(), symbols);
        let frame = enc.to_frame();
        assert_eq!(frame.len(), enc.bit_count());
        assert_eq!(EncodedBeat::from_frame(&frame, &model).unwrap(), enc);
    }

    #[test]
    fn empty_payload_is_end_of_block_only() {
        let model = toy_model();
        let symbols = BeatSymbols {
            class: BeatClass::Normal,
            timestamp_delta: 290,
            entries: vec![],
        };
        let (enc, _) = encode_symbols(&symbols, &model).unwrap();
        assert_eq!(enc.payload_bits.len(), model.normal.locations.cost(END_OF_BLOCK).unwrap());
        let d = Dictionary::normalized(
            4,
            (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect(),
            None,
        )
        .unwrap();
        let out = decode_beat(&enc, &d, &d, &model).unwrap();
        assert_eq!(out.reconstruction, vec![0.0; 4]);
    }

    #[test]
    fn malformed_frames_rejected() {
        let model = toy_model();
        let (enc, _) = encode_symbols(
            &BeatSymbols {
                class: BeatClass::Normal,
                timestamp_delta: 290,
                entries: vec![(1, QuantLevel::Level(6))],
            },
            &model,
        )
        .unwrap();
        let mut frame = enc.to_frame();
        let truncated = frame.slice(0, frame.len() - 1);
        assert!(matches!(
            EncodedBeat::from_frame(&truncated, &model),
            Err(Error::Decode { .. })
        ));
        frame.push(true);
        assert!(matches!(
            EncodedBeat::from_frame(&frame, &model),
            Err(Error::Decode { .. })
        ));
    }

    #[test]
    fn codec_serde_round_trip() {
        let model = toy_model();
        let json = serde_json::to_string(&model).unwrap();
        let back: CodecModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn delta_grid_shape() {
        let g = delta_grid(&[code(&[(0, -2.0), (1, 1.0)])]);
        assert_eq!(g.len(), DELTA_GRID_POINTS);
        assert!((g[0] - 2e-4).abs() < 1e-15);
        assert!((g[63] - 2.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn timestamp_differencing() {
        let beat = |t| BeatVector::new(vec![1.0], t, None).unwrap();
        let beats = [beat(150), beat(550), beat(900)];
        assert_eq!(timestamp_deltas(&beats), vec![150, 400, 350]);
    }
}
