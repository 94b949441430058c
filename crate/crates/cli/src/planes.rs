//! Encoded plane files and ADC threshold tables.
//!
//! Plane file (little-endian), 32-byte header then the packed planes:
//!
//! ```text
//! 0   magic     "TBNNPLNS"
//! 8   version   u32 (1)
//! 12  encoding  u8   0 glt, 1 fixed thermometer, 2 base-2
//! 13  reserved  3 bytes, 0
//! 16  channels  u32
//! 20  planes    u32  per channel
//! 24  height    u32
//! 28  width     u32
//! 32  ceil(C*M*H*W / 8) bytes: plane stack [C*M, H, W], channel-major,
//!     element k in byte k/8, bit k%8
//! ```
//!
//! Threshold tables hold `M` DAC codes of `Nb` bits per channel, as text
//! (`bits`, `channels`, `planes` lines then `channel c: codes...`) or as
//! binary: `"TBNNTHRS"`, version u32, bits u32, channels u32, planes u32,
//! then `u16` codes channel by channel.

use std::fmt::Write as _;

use thermobnn_core::adcsim::RampAdc;
use thermobnn_core::bitcore::{BitSemantics, BitTensor};
use thermobnn_core::encoders::{quantize_thresholds, EncodedPlanes, EncodingKind};

use crate::error::{data_err, CliResult};
use crate::fsutil::{Reader, Writer};

pub const PLANES_MAGIC: &[u8; 8] = b"TBNNPLNS";
pub const PLANES_VERSION: u32 = 1;
pub const PLANES_HEADER_LEN: usize = 32;
pub const TABLE_MAGIC: &[u8; 8] = b"TBNNTHRS";
pub const TABLE_VERSION: u32 = 1;

pub fn encode_planes(p: &EncodedPlanes) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(PLANES_MAGIC);
    w.u32(PLANES_VERSION);
    w.u8(p.kind.code());
    w.buf.extend_from_slice(&[0; 3]);
    for v in [p.channels, p.planes_per_channel, p.height(), p.width()] {
        w.u32(v as u32);
    }
    w.buf.extend_from_slice(&p.bits.to_bytes());
    w.buf
}

pub fn decode_planes(bytes: &[u8], origin: &str) -> CliResult<EncodedPlanes> {
    let mut r = Reader::new(bytes, origin);
    if r.take(8)? != PLANES_MAGIC {
        return Err(r.error(0, "not a plane file (bad magic)"));
    }
    let version = r.u32()?;
    if version != PLANES_VERSION {
        return Err(r.error(8, format!("unsupported plane file version {version}")));
    }
    let code = r.u8()?;
    let kind = EncodingKind::from_code(code).ok_or_else(|| r.error(12, format!("unknown encoding {code}")))?;
    r.take(3)?;
    let dims: Vec<usize> = (0..4).map(|_| r.u32().map(|v| v as usize)).collect::<CliResult<_>>()?;
    let (c, m, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let n = c * m * h * w;
    if r.remaining() != n.div_ceil(8) {
        return Err(r.error(
            PLANES_HEADER_LEN,
            format!("{} payload bytes, {} expected", r.remaining(), n.div_ceil(8)),
        ));
    }
    let bits = BitTensor::from_bytes(&[c * m, h, w], BitSemantics::Plane01, r.take(r.remaining())?)
        .map_err(|e| data_err!("{origin}: {e}"))?;
    Ok(EncodedPlanes {
        kind,
        channels: c,
        planes_per_channel: m,
        bits,
        clamped: 0,
    })
}

/// Human-readable dump: one `0/1` grid per plane.
pub fn dump_planes(p: &EncodedPlanes) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {:?} planes: {} channels x {} planes, {}x{}",
        p.kind,
        p.channels,
        p.planes_per_channel,
        p.height(),
        p.width()
    );
    for c in 0..p.channels {
        for i in 0..p.planes_per_channel {
            let _ = writeln!(out, "channel {} plane {}", c, i + 1);
            for y in 0..p.height() {
                let row: String = (0..p.width())
                    .map(|x| if p.bit(c, i, y, x) { '1' } else { '0' })
                    .collect();
                out.push_str(&row);
                out.push('\n');
            }
        }
    }
    out
}

/// Per-channel `Nb`-bit DAC codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdTable {
    pub bits: u32,
    pub codes: Vec<Vec<u32>>,
}

impl ThresholdTable {
    /// Quantizes real thresholds to the nearest `bits`-bit codes.
    pub fn from_thresholds(thresholds: &[Vec<f64>], bits: u32) -> CliResult<Self> {
        if !(1..=16).contains(&bits) {
            return Err(data_err!("code width must be 1..=16 bits, got {bits}"));
        }
        let codes = thresholds.iter().map(|t| quantize_thresholds(t, bits)).collect();
        let table = Self { bits, codes };
        table.validate()?;
        Ok(table)
    }

    pub fn planes(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    /// Adjacent equal codes; each makes two planes identical in hardware.
    pub fn collisions(&self) -> usize {
        self.codes
            .iter()
            .map(|c| c.windows(2).filter(|w| w[0] == w[1]).count())
            .sum()
    }

    pub fn validate(&self) -> CliResult<()> {
        let m = self.planes();
        if self.codes.is_empty() || m == 0 {
            return Err(data_err!("empty threshold table"));
        }
        let top = (1u32 << self.bits) - 1;
        for (c, codes) in self.codes.iter().enumerate() {
            if codes.len() != m {
                return Err(data_err!("channel {c} has {} codes, channel 0 has {m}", codes.len()));
            }
            if let Some(v) = codes.iter().find(|v| **v > top) {
                return Err(data_err!("channel {c}: code {v} exceeds {} bits", self.bits));
            }
            if codes.windows(2).any(|w| w[0] > w[1]) {
                return Err(data_err!("channel {c}: codes are not non-decreasing"));
            }
        }
        Ok(())
    }

    pub fn to_adc(&self) -> CliResult<RampAdc> {
        Ok(RampAdc::new(self.bits, self.codes.clone())?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# thermobnn threshold codes\n");
        let _ = writeln!(out, "bits {}", self.bits);
        let _ = writeln!(out, "channels {}", self.codes.len());
        let _ = writeln!(out, "planes {}", self.planes());
        for (c, codes) in self.codes.iter().enumerate() {
            let row: Vec<String> = codes.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "channel {}: {}", c, row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> CliResult<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> CliResult<usize> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| data_err!("{origin}: missing `{key}` line"))?;
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| data_err!("{origin}:{no}: expected `{key} <n>`"))
        };
        let bits = header("bits")? as u32;
        let channels = header("channels")?;
        let planes = header("planes")?;
        let mut codes = Vec::with_capacity(channels);
        for (no, line) in lines {
            let want = format!("channel {}:", codes.len());
            let rest = line
                .strip_prefix(&want)
                .ok_or_else(|| data_err!("{origin}:{no}: expected `{want}`"))?;
            let row = rest
                .split_whitespace()
                .map(|v| v.parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| data_err!("{origin}:{no}: {e}"))?;
            if row.len() != planes {
                return Err(data_err!("{origin}:{no}: {} codes, header says {planes}", row.len()));
            }
            codes.push(row);
        }
        if codes.len() != channels {
            return Err(data_err!(
                "{origin}: {} channel rows, header says {channels}",
                codes.len()
            ));
        }
        let table = Self { bits, codes };
        if !(1..=16).contains(&bits) {
            return Err(data_err!("{origin}: code width must be 1..=16 bits"));
        }
        table.validate().map_err(|e| data_err!("{origin}: {e}"))?;
        Ok(table)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(TABLE_MAGIC);
        w.u32(TABLE_VERSION);
        w.u32(self.bits);
        w.u32(self.codes.len() as u32);
        w.u32(self.planes() as u32);
        for v in self.codes.iter().flatten() {
            w.u16(*v as u16);
        }
        w.buf
    }

    pub fn from_binary(bytes: &[u8], origin: &str) -> CliResult<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(8)? != TABLE_MAGIC {
            return Err(r.error(0, "not a threshold table (bad magic)"));
        }
        let version = r.u32()?;
        if version != TABLE_VERSION {
            return Err(r.error(8, format!("unsupported table version {version}")));
        }
        let bits = r.u32()?;
        if !(1..=16).contains(&bits) {
            return Err(r.error(12, format!("code width {bits} outside 1..=16")));
        }
        let (c, m) = (r.u32()? as usize, r.u32()? as usize);
        if r.remaining() != 2 * c * m {
            return Err(r.error(24, format!("{} code bytes, {} expected", r.remaining(), 2 * c * m)));
        }
        let codes = (0..c)
            .map(|_| (0..m).map(|_| r.u16().map(u32::from)).collect::<CliResult<Vec<_>>>())
            .collect::<CliResult<Vec<_>>>()?;
        let table = Self { bits, codes };
        table.validate().map_err(|e| data_err!("{origin}: {e}"))?;
        Ok(table)
    }

    /// Binary tables are recognized by their magic, anything else is text.
    pub fn parse(bytes: &[u8], origin: &str) -> CliResult<Self> {
        if bytes.starts_with(TABLE_MAGIC) {
            Self::from_binary(bytes, origin)
        } else {
            let text = std::str::from_utf8(bytes).map_err(|_| data_err!("{origin}: not UTF-8"))?;
            Self::from_text(text, origin)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermobnn_core::encoders::{encode_fixed_thermometer, linear_ramp, ImageDims, ImageView};

    #[test]
    fn plane_file_size_and_round_trip() {
        let dims = ImageDims::new(3, 5, 7);
        let data: Vec<f64> = (0..dims.len()).map(|i| (i * 37 % 101) as f64 / 100.0).collect();
        let p = encode_fixed_thermometer(ImageView::new(dims, &data).unwrap(), 3, 8).unwrap();
        let bytes = encode_planes(&p);
        assert_eq!(bytes.len(), PLANES_HEADER_LEN + (3 * 3 * 5 * 7usize).div_ceil(8));
        let back = decode_planes(&bytes, "mem").unwrap();
        assert_eq!(back.bits, p.bits);
        assert_eq!((back.kind, back.channels, back.planes_per_channel), (p.kind, 3, 3));
        assert!(decode_planes(&bytes[..bytes.len() - 1], "mem").is_err());
        let dump = dump_planes(&p);
        assert_eq!(dump.lines().count(), 1 + 9 * 6);
    }

    #[test]
    fn ramp_table_text_and_binary() {
        let t = ThresholdTable::from_thresholds(&vec![linear_ramp(8, 8); 3], 8).unwrap();
        assert_eq!(t.codes[2], vec![16, 48, 80, 112, 144, 176, 208, 240]);
        assert_eq!(t.collisions(), 0);
        let text = t.to_text();
        assert_eq!(ThresholdTable::parse(text.as_bytes(), "mem").unwrap(), t);
        let bin = t.to_binary();
        assert_eq!(bin.len(), 24 + 2 * 24);
        assert_eq!(ThresholdTable::parse(&bin, "mem").unwrap(), t);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let bad = "bits 8\nchannels 1\nplanes 2\nchannel 0: 50 40\n";
        assert!(ThresholdTable::from_text(bad, "mem")
            .unwrap_err()
            .to_string()
            .contains("non-decreasing"));
        let bad = "bits 4\nchannels 1\nplanes 2\nchannel 0: 5 40\n";
        assert!(ThresholdTable::from_text(bad, "mem").is_err());
        let bad = "bits 8\nchannels 2\nplanes 2\nchannel 0: 5 40\n";
        assert!(ThresholdTable::from_text(bad, "mem").is_err());
        let close = ThresholdTable::from_thresholds(&[vec![0.5, 0.5001]], 8).unwrap();
        assert_eq!(close.collisions(), 1);
    }
}
