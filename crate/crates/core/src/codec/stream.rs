//! Encoded stream files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic      4 bytes  "BTRS"
//! version    u16      1
//! id_len     u16      record id length in bytes
//! record_id  id_len bytes, UTF-8
//! frames     u32      frame count
//! frame*     u32 bit length, then ceil(bits / 8) bytes, MSB-first, zero padded
//! ```
//!
//! Each frame is one [`EncodedBeat`] laid out as `class bit | timestamp | payload`.

use std::io::{Read, Write};

use super::bits::BitString;
use super::{CodecModel, EncodedBeat};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BTRS";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedStream {
    pub record_id: String,
    pub frames: Vec<BitString>,
}

impl EncodedStream {
    pub fn from_beats<'a>(record_id: &str, beats: impl IntoIterator<Item = &'a EncodedBeat>) -> Self {
        EncodedStream {
            record_id: record_id.to_string(),
            frames: beats.into_iter().map(EncodedBeat::to_frame).collect(),
        }
    }

    pub fn beats(&self, model: &CodecModel) -> Result<Vec<EncodedBeat>> {
        self.frames
            .iter()
            .map(|f| EncodedBeat::from_frame(f, model))
            .collect()
    }

    /// Sum of frame bit lengths.
    pub fn total_bits(&self) -> usize {
        self.frames.iter().map(BitString::len).sum()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let id = self.record_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::usage("record id too long"))?;
        let count = u32::try_from(self.frames.len()).map_err(|_| Error::usage("too many frames"))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&count.to_le_bytes())?;
        for f in &self.frames {
            let bits = u32::try_from(f.len()).map_err(|_| Error::usage("frame too long"))?;
            w.write_all(&bits.to_le_bytes())?;
            w.write_all(f.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::format("not an encoded beat stream (bad magic)"));
        }
        let version = read_u16(r, "version")?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported stream version {version}")));
        }
        let id_len = read_u16(r, "record id length")? as usize;
        let mut id = vec![0u8; id_len];
        read_exact(r, &mut id, "record id")?;
        let record_id =
            String::from_utf8(id).map_err(|_| Error::format("record id is not UTF-8"))?;
        let count = read_u32(r, "frame count")? as usize;
        let mut frames = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let bits = read_u32(r, "frame length")? as usize;
            let mut bytes = vec![0u8; bits.div_ceil(8)];
            read_exact(r, &mut bytes, &format!("frame {i}"))?;
            frames.push(BitString::from_bytes(bytes, bits)?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format(format!("{} trailing bytes after last frame", rest.len())));
        }
        Ok(EncodedStream { record_id, frames })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(format!("stream truncated in {what}")),
        _ => Error::Io(e),
    })
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(bits: &str) -> BitString {
        let mut s = BitString::new();
        for c in bits.chars() {
            s.push(c == '1');
        }
        s
    }

    #[test]
    fn byte_layout() {
        let s = EncodedStream {
            record_id: "100".into(),
            frames: vec![frame("101"), frame("111111111")],
        };
        let bytes = s.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"BTRS");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[3, 0]);
        assert_eq!(&bytes[8..11], b"100");
        assert_eq!(&bytes[11..15], &[2, 0, 0, 0]);
        assert_eq!(&bytes[15..19], &[3, 0, 0, 0]);
        assert_eq!(bytes[19], 0b1010_0000);
        assert_eq!(&bytes[20..24], &[9, 0, 0, 0]);
        assert_eq!(&bytes[24..26], &[0xff, 0x80]);
        let back = EncodedStream::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs() {
        assert!(EncodedStream::read_from(&mut &b"XXXX"[..]).is_err());
        let s = EncodedStream {
            record_id: "7".into(),
            frames: vec![frame("1")],
        };
        let bytes = s.to_bytes().unwrap();
        assert!(EncodedStream::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(EncodedStream::read_from(&mut extra.as_slice()).is_err());
    }
}
