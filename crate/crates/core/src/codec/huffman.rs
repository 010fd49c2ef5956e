//! Canonical Huffman codebooks over integer symbols, with an escape code for
//! symbols that never occurred in training.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::bits::{BitReader, BitString};
use crate::error::{Error, Result};

const MAX_CODE_LEN: u8 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Entry {
    Escape,
    Symbol(i64),
}

/// Serialized form: symbol code lengths plus the escape length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BookRepr {
    literal_bits: u32,
    escape_len: u8,
    lengths: Vec<(i64, u8)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BookRepr", into = "BookRepr")]
pub struct HuffmanBook {
    literal_bits: u32,
    codes: BTreeMap<Entry, (u64, u8)>,
    /// Canonical order: by (length, entry).
    canonical: Vec<Entry>,
    /// Per code length: (first code, index of first entry in `canonical`, count).
    by_len: Vec<(u64, usize, usize)>,
}

impl HuffmanBook {
    /// Builds a book from empirical counts. Zero-count symbols are dropped,
    /// `always` symbols are kept with a count of at least one, and the escape
    /// code gets a count of one. Escaped symbols are written as
    /// `literal_bits`-wide two's complement literals.
    pub fn train(counts: &BTreeMap<i64, u64>, always: &[i64], literal_bits: u32) -> Result<Self> {
        if literal_bits == 0 || literal_bits > 64 {
            return Err(Error::usage("literal width must be in 1..=64"));
        }
        let mut weights: BTreeMap<Entry, u64> = BTreeMap::new();
        weights.insert(Entry::Escape, 1);
        for (&s, &c) in counts {
            if c > 0 {
                weights.insert(Entry::Symbol(s), c);
            }
        }
        for &s in always {
            let w = weights.entry(Entry::Symbol(s)).or_insert(0);
            *w = (*w).max(1);
        }
        let lengths = code_lengths(&weights)?;
        Self::from_lengths(literal_bits, lengths)
    }

    fn from_lengths(literal_bits: u32, lengths: BTreeMap<Entry, u8>) -> Result<Self> {
        if !lengths.contains_key(&Entry::Escape) {
            return Err(Error::format("codebook has no escape code"));
        }
        let mut canonical: Vec<(u8, Entry)> = lengths.iter().map(|(&e, &l)| (l, e)).collect();
        if canonical.iter().any(|&(l, _)| l == 0 || l > MAX_CODE_LEN) {
            return Err(Error::format("codebook has an invalid code length"));
        }
        canonical.sort();
        let max_len = canonical.last().map_or(0, |c| c.0) as usize;
        let mut by_len = vec![(0u64, 0usize, 0usize); max_len + 1];
        let mut codes = BTreeMap::new();
        let mut code: u64 = 0;
        let mut prev_len = canonical[0].0;
        for (idx, &(len, entry)) in canonical.iter().enumerate() {
            if idx > 0 {
                code = (code + 1) << (len - prev_len);
            }
            prev_len = len;
            if code >> len != 0 {
                return Err(Error::format("code lengths violate the Kraft inequality"));
            }
            let slot = &mut by_len[len as usize];
            if slot.2 == 0 {
                *slot = (code, idx, 0);
            }
            slot.2 += 1;
            codes.insert(entry, (code, len));
        }
        Ok(HuffmanBook {
            literal_bits,
            codes,
            canonical: canonical.into_iter().map(|(_, e)| e).collect(),
            by_len,
        })
    }

    pub fn literal_bits(&self) -> u32 {
        self.literal_bits
    }

    /// Symbols with a dedicated codeword (escape excluded).
    pub fn symbols(&self) -> impl Iterator<Item = i64> + '_ {
        self.codes.keys().filter_map(|e| match e {
            Entry::Symbol(s) => Some(*s),
            Entry::Escape => None,
        })
    }

    pub fn contains(&self, symbol: i64) -> bool {
        self.codes.contains_key(&Entry::Symbol(symbol))
    }

    /// Codeword of a known symbol as a bit string.
    pub fn codeword(&self, symbol: i64) -> Option<BitString> {
        self.codes.get(&Entry::Symbol(symbol)).map(|&(c, l)| {
            let mut s = BitString::new();
            s.push_bits(c, l as u32);
            s
        })
    }

    /// `sum 2^-len` over every codeword, escape included.
    pub fn kraft_sum(&self) -> f64 {
        self.codes.values().map(|&(_, l)| (-(l as f64)).exp2()).sum()
    }

    /// Bits needed for `symbol`, escape literal included.
    pub fn cost(&self, symbol: i64) -> Result<usize> {
        match self.codes.get(&Entry::Symbol(symbol)) {
            Some(&(_, l)) => Ok(l as usize),
            None => {
                self.check_literal(symbol)?;
                Ok(self.codes[&Entry::Escape].1 as usize + self.literal_bits as usize)
            }
        }
    }

    /// Writes `symbol`; returns true when it had to be escaped.
    pub fn encode(&self, symbol: i64, out: &mut BitString) -> Result<bool> {
        match self.codes.get(&Entry::Symbol(symbol)) {
            Some(&(c, l)) => {
                out.push_bits(c, l as u32);
                Ok(false)
            }
            None => {
                self.check_literal(symbol)?;
                let (c, l) = self.codes[&Entry::Escape];
                out.push_bits(c, l as u32);
                out.push_bits(symbol as u64, self.literal_bits);
                Ok(true)
            }
        }
    }

    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<i64> {
        let start = r.position();
        let mut code: u64 = 0;
        for len in 1..self.by_len.len() {
            code = (code << 1) | r.read_bit()? as u64;
            let (first, idx, count) = self.by_len[len];
            if count > 0 && code >= first && code - first < count as u64 {
                return match self.canonical[idx + (code - first) as usize] {
                    Entry::Symbol(s) => Ok(s),
                    Entry::Escape => {
                        let raw = r.read_bits(self.literal_bits)?;
                        Ok(sign_extend(raw, self.literal_bits))
                    }
                };
            }
        }
        Err(Error::Decode {
            offset: start,
            reason: "no codeword matches".into(),
        })
    }

    fn check_literal(&self, symbol: i64) -> Result<()> {
        let w = self.literal_bits;
        let fits = w == 64 || {
            let lo = -(1i128 << (w - 1));
            let hi = (1i128 << (w - 1)) - 1;
            (lo..=hi).contains(&(symbol as i128))
        };
        if fits {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "symbol {symbol} does not fit a {w}-bit escape literal"
            )))
        }
    }
}

fn sign_extend(raw: u64, width: u32) -> i64 {
    if width == 64 {
        raw as i64
    } else {
        let shift = 64 - width;
        ((raw << shift) as i64) >> shift
    }
}

/// Huffman code lengths; ties are broken by creation order so the result is
/// deterministic.
fn code_lengths(weights: &BTreeMap<Entry, u64>) -> Result<BTreeMap<Entry, u8>> {
    let entries: Vec<Entry> = weights.keys().copied().collect();
    if entries.len() == 1 {
        return Ok(entries.into_iter().map(|e| (e, 1)).collect());
    }
    // Node i < entries.len() is a leaf; internal nodes record their children.
    let mut parent: Vec<usize> = vec![usize::MAX; 2 * entries.len() - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| Reverse((weights[e], i)))
        .collect();
    let mut next = entries.len();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let mut lengths = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        let mut depth = 0u32;
        let mut node = i;
        while parent[node] != usize::MAX {
            node = parent[node];
            depth += 1;
        }
        if depth > MAX_CODE_LEN as u32 {
            return Err(Error::usage("Huffman code exceeds 63 bits"));
        }
        lengths.insert(*e, depth as u8);
    }
    Ok(lengths)
}

impl From<HuffmanBook> for BookRepr {
    fn from(b: HuffmanBook) -> Self {
        BookRepr {
            literal_bits: b.literal_bits,
            escape_len: b.codes[&Entry::Escape].1,
            lengths: b
                .codes
                .iter()
                .filter_map(|(e, &(_, l))| match e {
                    Entry::Symbol(s) => Some((*s, l)),
                    Entry::Escape => None,
                })
                .collect(),
        }
    }
}

impl TryFrom<BookRepr> for HuffmanBook {
    type Error = Error;

    fn try_from(r: BookRepr) -> Result<Self> {
        let mut lengths: BTreeMap<Entry, u8> = BTreeMap::new();
        lengths.insert(Entry::Escape, r.escape_len);
        for (s, l) in r.lengths {
            if lengths.insert(Entry::Symbol(s), l).is_some() {
                return Err(Error::format(format!("duplicate symbol {s} in codebook")));
            }
        }
        HuffmanBook::from_lengths(r.literal_bits, lengths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(pairs: &[(i64, u64)]) -> BTreeMap<i64, u64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn skewed_frequencies_get_short_codes() {
        let book = HuffmanBook::train(&counts(&[(0, 100), (1, 10), (2, 5), (3, 1)]), &[], 16).unwrap();
        assert_eq!(book.cost(0).unwrap(), 1);
        assert!(book.cost(3).unwrap() >= book.cost(2).unwrap());
        assert!((book.kraft_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn escape_round_trip() {
        let book = HuffmanBook::train(&counts(&[(5, 3), (7, 1)]), &[], 12).unwrap();
        let mut bits = BitString::new();
        assert!(!book.encode(5, &mut bits).unwrap());
        assert!(book.encode(-300, &mut bits).unwrap());
        assert!(book.encode(2047, &mut bits).unwrap());
        let mut r = bits.reader();
        assert_eq!(book.decode(&mut r).unwrap(), 5);
        assert_eq!(book.decode(&mut r).unwrap(), -300);
        assert_eq!(book.decode(&mut r).unwrap(), 2047);
        assert!(book.encode(2048, &mut BitString::new()).is_err());
    }

    #[test]
    fn always_symbols_present() {
        let book = HuffmanBook::train(&counts(&[(1, 10)]), &[i64::MIN, i64::MAX], 8).unwrap();
        assert!(book.contains(i64::MIN) && book.contains(i64::MAX));
    }

    #[test]
    fn only_escape() {
        let book = HuffmanBook::train(&BTreeMap::new(), &[], 8).unwrap();
        let mut bits = BitString::new();
        book.encode(-3, &mut bits).unwrap();
        assert_eq!(bits.len(), 9);
        assert_eq!(book.decode(&mut bits.reader()).unwrap(), -3);
    }

    #[test]
    fn serde_round_trip() {
        let book = HuffmanBook::train(&counts(&[(0, 9), (4, 2), (-1, 7)]), &[], 10).unwrap();
        let json = serde_json::to_string(&book).unwrap();
        let back: HuffmanBook = serde_json::from_str(&json).unwrap();
        assert_eq!(back, book);
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let book = HuffmanBook::train(&counts(&[(0, 1), (1, 1), (2, 1), (3, 1)]), &[], 8).unwrap();
        let mut bits = BitString::new();
        book.encode(3, &mut bits).unwrap();
        let cut = bits.slice(0, bits.len() - 1);
        assert!(matches!(
            book.decode(&mut cut.reader()),
            Err(Error::Decode { .. })
        ));
    }

    proptest! {
        #[test]
        fn prefix_free_and_lossless(
            freqs in prop::collection::btree_map(-50i64..50, 1u64..1000, 1..40),
            message in prop::collection::vec(-80i64..80, 0..200),
        ) {
            let book = HuffmanBook::train(&freqs, &[], 16).unwrap();
            prop_assert!(book.kraft_sum() <= 1.0 + 1e-12);
            let words: Vec<String> = book.symbols().map(|s| book.codeword(s).unwrap().to_string()).collect();
            for (i, a) in words.iter().enumerate() {
                for (j, b) in words.iter().enumerate() {
                    prop_assert!(i == j || !b.starts_with(a.as_str()));
                }
            }
            let mut bits = BitString::new();
            for &s in &message {
                book.encode(s, &mut bits).unwrap();
            }
            let total: usize = message.iter().map(|&s| book.cost(s).unwrap()).sum();
            prop_assert_eq!(total, bits.len());
            let mut r = bits.reader();
            let decoded: Vec<i64> = message.iter().map(|_| book.decode(&mut r).unwrap()).collect();
            prop_assert_eq!(decoded, message);
            prop_assert_eq!(r.remaining(), 0);
        }
    }
}
