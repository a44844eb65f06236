//! Bit-exact payload layout.
//!
//! A payload is one flags byte followed by a packed big-endian (MSB first)
//! bit stream:
//!
//! ```text
//! flags   bit 0: support present, bit 1: gain phases present
//! step 1  L1 grid indexes, ceil(log2 G_t) bits each        (if bit 0)
//! step 2  for i in 0..L1, j in 0..L2: az, el, B0 bits each
//! step 3  L1 codeword indexes, B bits each
//! gains   L1 phase indexes, gain_bits bits each             (if bit 1)
//! ```
//!
//! The stream is zero-padded to a whole byte. The layout is not
//! self-describing; the parser needs the same [`PayloadLayout`].

use serde::{Deserialize, Serialize};

use crate::codec::quantize::{FreqIndex, QuantizedAngles};
use crate::config::SystemConfig;
use crate::error::{Error, Result};

pub const FLAG_SUPPORT: u8 = 0b01;
pub const FLAG_GAINS: u8 = 0b10;

/// Feedback of one user for one channel coherence interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    /// Step 1: shared non-zero column indexes, only from appointed users.
    pub support: Option<Vec<usize>>,
    /// Step 2: quantized cascaded AoAs, in support order.
    pub angles: QuantizedAngles,
    /// Step 3: one codeword index per non-zero column.
    pub codewords: Vec<u32>,
    /// Optional quantized gain phase per column.
    pub gain_phases: Option<Vec<u32>>,
}

/// Field widths needed to pack and parse a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadLayout {
    pub l1: usize,
    pub l2: usize,
    pub index_bits: u32,
    pub b0: u32,
    pub b: u32,
    pub gain_bits: u32,
}

impl PayloadLayout {
    pub fn from_config(config: &SystemConfig) -> Self {
        PayloadLayout {
            l1: config.l1,
            l2: config.l2,
            index_bits: config.grid_index_bits(),
            b0: config.b0,
            b: config.b,
            gain_bits: config.gain_bits,
        }
    }

    pub fn step1_bits(&self) -> usize {
        self.l1 * self.index_bits as usize
    }

    pub fn step2_bits(&self) -> usize {
        self.l1 * self.l2 * 2 * self.b0 as usize
    }

    pub fn step3_bits(&self) -> usize {
        self.l1 * self.b as usize
    }

    pub fn gain_field_bits(&self) -> usize {
        self.l1 * self.gain_bits as usize
    }
}

/// MSB-first bit packer.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        for k in (0..width).rev() {
            let bit = (value >> k) & 1;
            if self.bits % 8 == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bits
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// MSB-first bit reader.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn read(&mut self, width: u32) -> Result<u64> {
        if self.pos + width as usize > self.bytes.len() * 8 {
            return Err(Error::MalformedPayload(format!(
                "stream ends after {} bits",
                self.bytes.len() * 8
            )));
        }
        let mut v = 0u64;
        for _ in 0..width {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

fn check_width(value: u64, width: u32, what: &str) -> Result<()> {
    if width < 64 && value >> width != 0 {
        return Err(Error::MalformedPayload(format!(
            "{what} value {value} does not fit in {width} bits"
        )));
    }
    Ok(())
}

impl FeedbackPayload {
    pub fn validate(&self, layout: &PayloadLayout) -> Result<()> {
        if let Some(s) = &self.support {
            if s.len() != layout.l1 {
                return Err(Error::MalformedPayload(format!(
                    "{} support indexes, expected {}",
                    s.len(),
                    layout.l1
                )));
            }
            for &g in s {
                check_width(g as u64, layout.index_bits, "grid index")?;
            }
        }
        if self.angles.pairs.len() != layout.l1
            || self.angles.pairs.iter().any(|p| p.len() != layout.l2)
        {
            return Err(Error::MalformedPayload("step-2 shape mismatch".into()));
        }
        for p in self.angles.pairs.iter().flatten() {
            check_width(p.az as u64, layout.b0, "azimuth index")?;
            check_width(p.el as u64, layout.b0, "elevation index")?;
        }
        if self.codewords.len() != layout.l1 {
            return Err(Error::MalformedPayload(format!(
                "{} codeword indexes, expected {}",
                self.codewords.len(),
                layout.l1
            )));
        }
        for &q in &self.codewords {
            check_width(q as u64, layout.b, "codeword index")?;
        }
        match (&self.gain_phases, layout.gain_bits) {
            (Some(g), bits) if bits > 0 => {
                if g.len() != layout.l1 {
                    return Err(Error::MalformedPayload("gain phase count".into()));
                }
                for &p in g {
                    check_width(p as u64, bits, "gain phase")?;
                }
            }
            (Some(_), _) => {
                return Err(Error::MalformedPayload(
                    "gain phases present but layout has zero gain bits".into(),
                ))
            }
            (None, _) => {}
        }
        Ok(())
    }

    pub fn to_bytes(&self, layout: &PayloadLayout) -> Result<Vec<u8>> {
        self.validate(layout)?;
        let mut flags = 0u8;
        if self.support.is_some() {
            flags |= FLAG_SUPPORT;
        }
        if self.gain_phases.is_some() {
            flags |= FLAG_GAINS;
        }
        let mut w = BitWriter::new();
        w.write(flags as u64, 8);
        if let Some(s) = &self.support {
            for &g in s {
                w.write(g as u64, layout.index_bits);
            }
        }
        for p in self.angles.pairs.iter().flatten() {
            w.write(p.az as u64, layout.b0);
            w.write(p.el as u64, layout.b0);
        }
        for &q in &self.codewords {
            w.write(q as u64, layout.b);
        }
        if let Some(g) = &self.gain_phases {
            for &p in g {
                w.write(p as u64, layout.gain_bits);
            }
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], layout: &PayloadLayout) -> Result<Self> {
        let mut r = BitReader::new(bytes);
        let flags = r.read(8)? as u8;
        if flags & !(FLAG_SUPPORT | FLAG_GAINS) != 0 {
            return Err(Error::MalformedPayload(format!("unknown flags {flags:#04x}")));
        }
        let support = if flags & FLAG_SUPPORT != 0 {
            Some(
                (0..layout.l1)
                    .map(|_| r.read(layout.index_bits).map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let mut pairs = Vec::with_capacity(layout.l1);
        for _ in 0..layout.l1 {
            let mut col = Vec::with_capacity(layout.l2);
            for _ in 0..layout.l2 {
                let az = r.read(layout.b0)? as u32;
                let el = r.read(layout.b0)? as u32;
                col.push(FreqIndex { az, el });
            }
            pairs.push(col);
        }
        let codewords = (0..layout.l1)
            .map(|_| r.read(layout.b).map(|v| v as u32))
            .collect::<Result<Vec<_>>>()?;
        let gain_phases = if flags & FLAG_GAINS != 0 {
            if layout.gain_bits == 0 {
                return Err(Error::MalformedPayload(
                    "gain flag set but layout has zero gain bits".into(),
                ));
            }
            Some(
                (0..layout.l1)
                    .map(|_| r.read(layout.gain_bits).map(|v| v as u32))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        if r.position().div_ceil(8) != bytes.len() {
            return Err(Error::MalformedPayload(format!(
                "{} trailing bytes",
                bytes.len() - r.position().div_ceil(8)
            )));
        }
        let payload = FeedbackPayload {
            support,
            angles: QuantizedAngles {
                bits: layout.b0,
                pairs,
            },
            codewords,
            gain_phases,
        };
        payload.validate(layout)?;
        Ok(payload)
    }

    /// Number of bits in the stream after the flags byte, before padding.
    pub fn bit_len(&self, layout: &PayloadLayout) -> usize {
        let mut bits = layout.step2_bits() + layout.step3_bits();
        if self.support.is_some() {
            bits += layout.step1_bits();
        }
        if self.gain_phases.is_some() {
            bits += layout.gain_field_bits();
        }
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_writer_is_msb_first() {
        let mut w = BitWriter::new();
        w.write(0b101, 3);
        w.write(0x1ff, 9);
        assert_eq!(w.bit_len(), 12);
        assert_eq!(w.into_bytes(), vec![0b1011_1111, 0b1111_0000]);
    }

    #[test]
    fn reader_inverts_writer() {
        let mut w = BitWriter::new();
        let fields = [(5u64, 3u32), (0, 0), (1234, 13), (1, 1), (u32::MAX as u64, 32)];
        for (v, width) in fields {
            w.write(v, width);
        }
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        for (v, width) in fields {
            assert_eq!(r.read(width).unwrap(), v);
        }
        assert!(r.read(9).is_err());
    }

    fn layout() -> PayloadLayout {
        PayloadLayout::from_config(&SystemConfig::default())
    }

    fn sample_payload(with_support: bool) -> FeedbackPayload {
        FeedbackPayload {
            support: with_support.then(|| vec![3, 77, 300, 511]),
            angles: QuantizedAngles {
                bits: 7,
                pairs: (0..4)
                    .map(|i| {
                        (0..2)
                            .map(|j| FreqIndex {
                                az: (i * 31 + j) as u32,
                                el: 127 - (i * 7 + j) as u32,
                            })
                            .collect()
                    })
                    .collect(),
            },
            codewords: vec![0, 1023, 512, 9],
            gain_phases: None,
        }
    }

    #[test]
    fn golden_layout() {
        // flags 0x01, then 4 x 9-bit indexes, 16 x 7-bit angles, 4 x 10-bit codewords
        let p = sample_payload(true);
        let bytes = p.to_bytes(&layout()).unwrap();
        assert_eq!(bytes[0], 0x01);
        assert_eq!(p.bit_len(&layout()), 36 + 112 + 40);
        assert_eq!(bytes.len(), 1 + (36 + 112 + 40usize).div_ceil(8));
        // first index 3 as 9 bits: 000000011
        assert_eq!(bytes[1], 0b0000_0001);
        assert_eq!(bytes[2] >> 7, 1);
        assert_eq!(FeedbackPayload::from_bytes(&bytes, &layout()).unwrap(), p);
    }

    #[test]
    fn no_support_flag_clear() {
        let p = sample_payload(false);
        let bytes = p.to_bytes(&layout()).unwrap();
        assert_eq!(bytes[0], 0x00);
        assert_eq!(bytes.len(), 1 + 152usize.div_ceil(8));
        assert_eq!(FeedbackPayload::from_bytes(&bytes, &layout()).unwrap(), p);
    }

    #[test]
    fn rejects_out_of_range_index() {
        let mut p = sample_payload(true);
        p.codewords[0] = 1024;
        assert!(matches!(p.to_bytes(&layout()), Err(Error::MalformedPayload(_))));
    }

    #[test]
    fn rejects_truncated_and_padded_streams() {
        let bytes = sample_payload(true).to_bytes(&layout()).unwrap();
        assert!(FeedbackPayload::from_bytes(&bytes[..bytes.len() - 1], &layout()).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(FeedbackPayload::from_bytes(&longer, &layout()).is_err());
        let mut flags = bytes;
        flags[0] = 0x80;
        assert!(FeedbackPayload::from_bytes(&flags, &layout()).is_err());
    }
}
