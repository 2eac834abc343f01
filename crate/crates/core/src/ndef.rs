//! NDEF text-record codec for the weight stored in the tag's data block.
//!
//! The record is a single short NDEF text record wrapped in an NDEF message
//! TLV, laid out so that it fits one 16-byte block:
//!
//! ```text
//! offset  0     1     2     3     4     5     6     7     8     9..=12   13    14 15
//!        03    0B    D1    01    07    54    02    65    6E    d d . d  FE    00 00
//!        TLV   len   hdr   tlen  plen  'T'   stat  'e'   'n'   payload  term  pad
//! ```
//!
//! Only the three digit bytes ever change. Any other byte that differs from
//! the layout above is reported as a framing error at its offset.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rounding::round_tenths;

/// Bytes per tag block.
pub const BLOCK_SIZE: usize = 16;
/// First data block of a 1K classic tag; holds the weight record.
pub const DEFAULT_DATA_BLOCK: usize = 4;
/// Block count of the emulated 1K tag.
pub const DEFAULT_BLOCK_COUNT: usize = 64;

const NDEF_TLV: u8 = 0x03;
const TERMINATOR_TLV: u8 = 0xFE;
/// MB | ME | SR, TNF = well-known.
const RECORD_HEADER: u8 = 0xD1;
const TEXT_TYPE: u8 = b'T';
/// UTF-8, language code length 2.
const TEXT_STATUS: u8 = 0x02;
const LANG: [u8; 2] = *b"en";
const PAYLOAD_LEN: usize = 4;
const TEXT_PAYLOAD_LEN: u8 = 1 + LANG.len() as u8 + PAYLOAD_LEN as u8;
const RECORD_LEN: u8 = 4 + TEXT_PAYLOAD_LEN;

/// Offset of the first payload byte inside the block.
pub const PAYLOAD_OFFSET: usize = 9;
/// Serialized length of TLV + record + terminator.
pub const RECORD_BYTES: usize = 2 + RECORD_LEN as usize + 1;

/// Expected value of every non-digit byte in the data block.
const FRAMING: [(usize, u8); 13] = [
    (0, NDEF_TLV),
    (1, RECORD_LEN),
    (2, RECORD_HEADER),
    (3, 0x01),
    (4, TEXT_PAYLOAD_LEN),
    (5, TEXT_TYPE),
    (6, TEXT_STATUS),
    (7, LANG[0]),
    (8, LANG[1]),
    (PAYLOAD_OFFSET + 2, b'.'),
    (13, TERMINATOR_TLV),
    (14, 0x00),
    (15, 0x00),
];

/// Offsets of the three variable digit bytes.
pub const DIGIT_OFFSETS: [usize; 3] = [PAYLOAD_OFFSET, PAYLOAD_OFFSET + 1, PAYLOAD_OFFSET + 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NdefError {
    #[error("weight {0} g is outside 0.0..=99.9 or has more than one decimal place")]
    Range(f64),
    #[error("bad framing byte at offset {offset}: expected {expected:#04x}, found {found:#04x}")]
    Framing { offset: usize, expected: u8, found: u8 },
    #[error("payload byte at offset {offset} is not an ASCII digit: {found:#04x}")]
    Payload { offset: usize, found: u8 },
    #[error("tag holds no weight record")]
    EmptyTag,
    #[error("block index {0} is outside the tag")]
    NoSuchBlock(usize),
    #[error("hex dump line {line}: {reason}")]
    HexDump { line: usize, reason: String },
}

/// Pill weight in grams with exactly one decimal place, `0.0..=99.9`.
///
/// Stored as integer tenths so that equality and the wire format are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct WeightReading(u16);

impl WeightReading {
    pub const ZERO: WeightReading = WeightReading(0);
    pub const MAX: WeightReading = WeightReading(999);

    pub fn from_tenths(tenths: u16) -> Result<Self, NdefError> {
        if tenths > Self::MAX.0 {
            return Err(NdefError::Range(tenths as f64 / 10.0));
        }
        Ok(WeightReading(tenths))
    }

    /// Accepts only values that are already on the 0.1 g grid.
    pub fn from_grams(grams: f64) -> Result<Self, NdefError> {
        if !grams.is_finite() {
            return Err(NdefError::Range(grams));
        }
        let scaled = grams * 10.0;
        let tenths = scaled.round();
        if (scaled - tenths).abs() > 1e-6 || !(0.0..=999.0).contains(&tenths) {
            return Err(NdefError::Range(grams));
        }
        Ok(WeightReading(tenths as u16))
    }

    /// Rounds half away from zero to one decimal and clamps into range.
    /// Negative readings are tare noise and become 0.0.
    pub fn clamped(grams: f64) -> Self {
        if grams.is_nan() {
            return Self::ZERO;
        }
        let tenths = (round_tenths(grams) * 10.0).round().clamp(0.0, 999.0);
        WeightReading(tenths as u16)
    }

    pub fn tenths(self) -> u16 {
        self.0
    }

    pub fn grams(self) -> f64 {
        self.0 as f64 / 10.0
    }

    /// The fixed-width `"xx.x"` form written to the tag.
    pub fn payload(self) -> [u8; PAYLOAD_LEN] {
        let t = self.0;
        [b'0' + (t / 100) as u8, b'0' + (t / 10 % 10) as u8, b'.', b'0' + (t % 10) as u8]
    }
}

impl fmt::Display for WeightReading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.payload();
        // payload is always ASCII
        f.write_str(std::str::from_utf8(&p).unwrap_or("??.?"))
    }
}

impl FromStr for WeightReading {
    type Err = NdefError;

    /// Parses the exact `"xx.x"` wire form.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != PAYLOAD_LEN || bytes[2] != b'.' {
            return Err(NdefError::Range(f64::NAN));
        }
        let mut tenths = 0u16;
        for &i in &[0usize, 1, 3] {
            let b = bytes[i];
            if !b.is_ascii_digit() {
                return Err(NdefError::Payload { offset: i, found: b });
            }
            tenths = tenths * 10 + (b - b'0') as u16;
        }
        Ok(WeightReading(tenths))
    }
}

impl Serialize for WeightReading {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightReading {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One encoded weight record: fixed framing plus the four payload bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NdefWeightRecord {
    payload: [u8; PAYLOAD_LEN],
}

impl NdefWeightRecord {
    pub fn payload(&self) -> [u8; PAYLOAD_LEN] {
        self.payload
    }

    /// TLV, record and terminator, without block padding.
    pub fn to_bytes(&self) -> [u8; RECORD_BYTES] {
        let mut out = [0u8; RECORD_BYTES];
        out.copy_from_slice(&self.to_block()[..RECORD_BYTES]);
        out
    }

    /// The record placed at the start of a zero-padded block.
    pub fn to_block(&self) -> [u8; BLOCK_SIZE] {
        let mut block = [0u8; BLOCK_SIZE];
        for &(offset, byte) in FRAMING.iter() {
            block[offset] = byte;
        }
        block[PAYLOAD_OFFSET..PAYLOAD_OFFSET + PAYLOAD_LEN].copy_from_slice(&self.payload);
        block
    }
}

pub fn encode_weight(w: WeightReading) -> NdefWeightRecord {
    NdefWeightRecord { payload: w.payload() }
}

/// Encodes a raw gram value, rejecting anything off the 0.1 g grid or out of range.
pub fn encode_grams(grams: f64) -> Result<NdefWeightRecord, NdefError> {
    WeightReading::from_grams(grams).map(encode_weight)
}

/// Decodes a data block. Framing is checked in offset order so the error
/// names the first bad byte; digits are then combined positionally as
/// tens, units and tenths.
pub fn decode_record(block: &[u8; BLOCK_SIZE]) -> Result<WeightReading, NdefError> {
    let mut first_bad: Option<NdefError> = None;
    for offset in 0..BLOCK_SIZE {
        let found = block[offset];
        let err = if let Some(&(_, expected)) = FRAMING.iter().find(|(o, _)| *o == offset) {
            (found != expected).then_some(NdefError::Framing { offset, expected, found })
        } else {
            (!found.is_ascii_digit()).then_some(NdefError::Payload { offset, found })
        };
        if let Some(e) = err {
            first_bad = Some(e);
            break;
        }
    }
    if let Some(e) = first_bad {
        return Err(e);
    }
    let digit = |i: usize| (block[DIGIT_OFFSETS[i]] - b'0') as u16;
    let tenths = digit(0) * 100 + digit(1) * 10 + digit(2);
    WeightReading::from_tenths(tenths)
}

/// Uppercase hex of one block, 32 characters.
pub fn block_hex(block: &[u8; BLOCK_SIZE]) -> String {
    block.iter().map(|b| format!("{b:02X}")).collect()
}

pub fn parse_block_hex(line: &str) -> Result<[u8; BLOCK_SIZE], String> {
    let line = line.trim();
    if line.len() != BLOCK_SIZE * 2 {
        return Err(format!("expected {} hex chars, got {}", BLOCK_SIZE * 2, line.len()));
    }
    let mut block = [0u8; BLOCK_SIZE];
    for (i, b) in block.iter_mut().enumerate() {
        let pair = line.get(2 * i..2 * i + 2).ok_or("non-ASCII character")?;
        *b = u8::from_str_radix(pair, 16).map_err(|e| format!("byte {i}: {e}"))?;
    }
    Ok(block)
}

/// Block-addressed tag storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagMemory {
    blocks: Vec<[u8; BLOCK_SIZE]>,
    data_block_index: usize,
}

impl Default for TagMemory {
    fn default() -> Self {
        Self::blank()
    }
}

impl TagMemory {
    pub fn blank() -> Self {
        Self::with_layout(DEFAULT_BLOCK_COUNT, DEFAULT_DATA_BLOCK).expect("default layout is valid")
    }

    pub fn with_layout(block_count: usize, data_block_index: usize) -> Result<Self, NdefError> {
        if data_block_index >= block_count {
            return Err(NdefError::NoSuchBlock(data_block_index));
        }
        Ok(Self { blocks: vec![[0u8; BLOCK_SIZE]; block_count], data_block_index })
    }

    pub fn data_block_index(&self) -> usize {
        self.data_block_index
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, index: usize) -> Result<&[u8; BLOCK_SIZE], NdefError> {
        self.blocks.get(index).ok_or(NdefError::NoSuchBlock(index))
    }

    pub fn write_block(&mut self, index: usize, data: [u8; BLOCK_SIZE]) -> Result<(), NdefError> {
        let slot = self.blocks.get_mut(index).ok_or(NdefError::NoSuchBlock(index))?;
        *slot = data;
        Ok(())
    }

    pub fn data_block(&self) -> &[u8; BLOCK_SIZE] {
        &self.blocks[self.data_block_index]
    }

    /// Overwrites the data block with the record for `w`. The tag only ever
    /// holds the latest weight.
    pub fn write_weight(&mut self, w: WeightReading) {
        let idx = self.data_block_index;
        self.blocks[idx] = encode_weight(w).to_block();
    }

    pub fn read_weight(&self) -> Result<WeightReading, NdefError> {
        let block = self.data_block();
        if block.iter().all(|&b| b == 0) {
            return Err(NdefError::EmptyTag);
        }
        decode_record(block)
    }

    pub fn is_blank(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|&x| x == 0))
    }

    /// One block per line, 32 uppercase hex chars each.
    pub fn to_hex_dump(&self) -> String {
        let mut out = String::with_capacity(self.blocks.len() * (BLOCK_SIZE * 2 + 1));
        for block in &self.blocks {
            out.push_str(&block_hex(block));
            out.push('\n');
        }
        out
    }

    /// Parses a dump written by [`TagMemory::to_hex_dump`]. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_hex_dump(text: &str, data_block_index: usize) -> Result<Self, NdefError> {
        let mut blocks = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let block =
                parse_block_hex(line).map_err(|reason| NdefError::HexDump { line: n + 1, reason })?;
            blocks.push(block);
        }
        if data_block_index >= blocks.len() {
            return Err(NdefError::NoSuchBlock(data_block_index));
        }
        Ok(Self { blocks, data_block_index })
    }
}

/// Functional form of [`TagMemory::write_weight`].
pub fn write_tag(mut mem: TagMemory, w: WeightReading) -> TagMemory {
    mem.write_weight(w);
    mem
}

pub fn read_tag(mem: &TagMemory) -> Result<WeightReading, NdefError> {
    mem.read_weight()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN_39_6: [u8; 16] = [
        0x03, 0x0B, 0xD1, 0x01, 0x07, 0x54, 0x02, 0x65, 0x6E, 0x33, 0x39, 0x2E, 0x36, 0xFE, 0x00,
        0x00,
    ];

    fn w(g: f64) -> WeightReading {
        WeightReading::from_grams(g).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_weight(w(39.6)).payload(), [0x33, 0x39, 0x2E, 0x36]);
        assert_eq!(encode_weight(w(0.0)).payload(), *b"00.0");
        assert_eq!(encode_weight(w(3.9)).payload(), *b"03.9");
        assert_eq!(encode_weight(w(39.6)).to_block(), GOLDEN_39_6);
        assert_eq!(RECORD_BYTES, 14);
        assert!(encode_weight(w(39.6)).to_bytes().len() <= BLOCK_SIZE);
    }

    #[test]
    fn range_errors() {
        for bad in [100.0, -0.1, 12.34, f64::NAN, f64::INFINITY] {
            assert!(matches!(encode_grams(bad), Err(NdefError::Range(_))), "{bad}");
        }
        assert!(WeightReading::from_tenths(1000).is_err());
    }

    #[test]
    fn decode_examples() {
        let mut block = GOLDEN_39_6;
        assert_eq!(decode_record(&block).unwrap(), w(39.6));
        block[9..13].copy_from_slice(b"00.0");
        assert_eq!(decode_record(&block).unwrap(), w(0.0));
        block[9..13].copy_from_slice(b"99.9");
        assert_eq!(decode_record(&block).unwrap().grams(), 99.9);
    }

    #[test]
    fn decode_reports_first_bad_offset() {
        let mut block = GOLDEN_39_6;
        block[5] = b't';
        block[13] = 0;
        assert_eq!(
            decode_record(&block),
            Err(NdefError::Framing { offset: 5, expected: b'T', found: b't' })
        );
        let mut block = GOLDEN_39_6;
        block[10] = b'x';
        assert_eq!(decode_record(&block), Err(NdefError::Payload { offset: 10, found: b'x' }));
    }

    #[test]
    fn tag_last_write_wins() {
        let tag = write_tag(TagMemory::blank(), w(21.7));
        assert_eq!(read_tag(&tag).unwrap(), w(21.7));
        let tag = write_tag(write_tag(tag, w(39.6)), w(35.2));
        assert_eq!(read_tag(&tag).unwrap(), w(35.2));
    }

    #[test]
    fn write_leaves_other_blocks_alone() {
        let mut tag = TagMemory::blank();
        tag.write_block(5, [0xAA; 16]).unwrap();
        tag.write_weight(w(17.2));
        assert_eq!(tag.block(5).unwrap(), &[0xAA; 16]);
        assert_eq!(tag.block(3).unwrap(), &[0; 16]);
        assert_eq!(read_tag(&tag).unwrap(), w(17.2));
    }

    #[test]
    fn blank_tag_is_empty() {
        assert_eq!(read_tag(&TagMemory::blank()), Err(NdefError::EmptyTag));
    }

    #[test]
    fn corrupt_tag_is_parse_error() {
        let mut tag = write_tag(TagMemory::blank(), w(17.2));
        let mut block = *tag.data_block();
        block[0] = 0x01;
        tag.write_block(DEFAULT_DATA_BLOCK, block).unwrap();
        assert!(matches!(read_tag(&tag), Err(NdefError::Framing { offset: 0, .. })));
    }

    #[test]
    fn hex_dump_round_trip() {
        let tag = write_tag(TagMemory::blank(), w(39.6));
        let dump = tag.to_hex_dump();
        assert_eq!(dump.lines().nth(4).unwrap(), "030BD101075402656E33392E36FE0000");
        let back = TagMemory::from_hex_dump(&dump, DEFAULT_DATA_BLOCK).unwrap();
        assert_eq!(back, tag);
        assert!(matches!(
            TagMemory::from_hex_dump("00\n", 0),
            Err(NdefError::HexDump { line: 1, .. })
        ));
    }

    #[test]
    fn display_and_parse() {
        assert_eq!(w(3.9).to_string(), "03.9");
        assert_eq!("39.6".parse::<WeightReading>().unwrap(), w(39.6));
        assert!("3.96".parse::<WeightReading>().is_err());
        assert!("3a.6".parse::<WeightReading>().is_err());
        assert_eq!(serde_json::to_string(&w(8.3)).unwrap(), "\"08.3\"");
    }

    #[test]
    fn clamping() {
        assert_eq!(WeightReading::clamped(-0.5), WeightReading::ZERO);
        assert_eq!(WeightReading::clamped(150.0), WeightReading::MAX);
        assert_eq!(WeightReading::clamped(4.45), w(4.5));
        assert_eq!(WeightReading::clamped(39.64), w(39.6));
    }
}
