//! Marker-level segmentation of progressive JPEG streams.
//!
//! A progressive JPEG is split into a *header* (everything before the first
//! SOS) and an ordered list of *scans*. Each scan owns its SOS segment, the
//! entropy-coded data that follows, and any DNL/APPn/COM segments trailing
//! that data. Table segments (DHT, DQT, DRI) that appear between scans are
//! attached to the scan that follows them, so every prefix `header ++
//! scans[..k]` carries the tables it needs. The final scan also owns the EOI
//! marker and anything after it.
//!
//! No pixel data is decoded here; the parser only walks marker segments and
//! skips entropy-coded data.

use std::fmt;
use std::ops::Range;

/// Marker prefix byte.
pub const MARKER: u8 = 0xFF;
/// Start of image.
pub const SOI: u8 = 0xD8;
/// End of image.
pub const EOI: u8 = 0xD9;
/// Start of scan.
pub const SOS: u8 = 0xDA;
/// Define number of lines.
pub const DNL: u8 = 0xDC;
/// Progressive DCT, Huffman coding.
pub const SOF2: u8 = 0xC2;
/// Define Huffman tables.
pub const DHT: u8 = 0xC4;
/// Define arithmetic conditioning.
pub const DAC: u8 = 0xCC;
/// Define quantization tables.
pub const DQT: u8 = 0xDB;
/// Define restart interval.
pub const DRI: u8 = 0xDD;
/// Define hierarchical progression.
pub const DHP: u8 = 0xDE;
/// Expand reference components.
pub const EXP: u8 = 0xDF;
/// Temporary private use (standalone).
pub const TEM: u8 = 0x01;

/// The two-byte EOI sequence.
pub const EOI_BYTES: [u8; 2] = [MARKER, EOI];

/// Default upper bound on the number of scans accepted per image.
pub const MAX_SCANS: usize = 64;

/// A half-open byte range inside a source buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ByteRange {
    pub offset: usize,
    pub len: usize,
}

impl ByteRange {
    pub const fn new(offset: usize, len: usize) -> Self {
        ByteRange { offset, len }
    }

    pub const fn end(&self) -> usize {
        self.offset + self.len
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.end()
    }

    /// Borrows the bytes this range covers.
    ///
    /// Panics if the range exceeds `src`.
    pub fn slice<'a>(&self, src: &'a [u8]) -> &'a [u8] {
        &src[self.range()]
    }
}

/// Result of segmenting one progressive JPEG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanMap {
    pub header: ByteRange,
    pub scans: Vec<ByteRange>,
    pub total_len: usize,
    pub has_trailing_eoi: bool,
}

impl ScanMap {
    pub fn n_scans(&self) -> usize {
        self.scans.len()
    }

    /// Length of `header ++ scans[..k]`.
    pub fn prefix_len(&self, k: usize) -> usize {
        let k = k.min(self.scans.len());
        if k == 0 {
            self.header.len
        } else {
            self.scans[k - 1].end()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScanError {
    #[error("not a JPEG stream (missing SOI)")]
    NotJpeg,
    #[error("frame marker 0xFF{marker:02X} is not progressive Huffman (SOF2); transcode the image first")]
    NotProgressive { marker: u8 },
    #[error("stream truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("unsupported JPEG: {0}")]
    Unsupported(Unsupported),
    #[error("malformed JPEG at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("more than {limit} scans")]
    TooManyScans { limit: usize },
    #[error("input of {len} bytes exceeds the {limit}-byte limit")]
    TooLarge { len: usize, limit: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unsupported {
    MultipleFrames,
    Hierarchical,
    ArithmeticCoding,
}

impl fmt::Display for Unsupported {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unsupported::MultipleFrames => "more than one frame header",
            Unsupported::Hierarchical => "hierarchical (differential) coding",
            Unsupported::ArithmeticCoding => "arithmetic entropy coding",
        })
    }
}

/// Bounds applied by [`parse_scans_with`].
#[derive(Clone, Copy, Debug)]
pub struct ParseLimits {
    pub max_scans: usize,
    pub max_len: usize,
}

impl Default for ParseLimits {
    fn default() -> Self {
        ParseLimits {
            max_scans: MAX_SCANS,
            max_len: 1 << 30,
        }
    }
}

/// Whether `code` (the byte after 0xFF) is an RSTn marker.
pub const fn is_rst(code: u8) -> bool {
    matches!(code, 0xD0..=0xD7)
}

/// Markers that carry no length field.
const fn is_standalone(code: u8) -> bool {
    is_rst(code) || matches!(code, SOI | EOI | TEM)
}

/// Segments that define state consumed by the *next* scan.
const fn is_table(code: u8) -> bool {
    matches!(code, DHT | DQT | DRI | DAC)
}

/// Returns the offset of the first real marker at or after `start`.
///
/// `start` must point into entropy-coded data. Stuffed bytes (`FF 00`) and
/// restart markers (`FF D0`..`FF D7`) are data. A run of `FF` fill bytes
/// before a marker is treated as part of that marker, so the returned offset
/// is the first `FF` of the run.
pub fn entropy_skip(bytes: &[u8], start: usize) -> Result<usize, ScanError> {
    let mut i = start;
    while i < bytes.len() {
        // memchr-style scan for the next 0xFF.
        match bytes[i..].iter().position(|&b| b == MARKER) {
            None => break,
            Some(p) => i += p,
        }
        let ff = i;
        while i < bytes.len() && bytes[i] == MARKER {
            i += 1;
        }
        let Some(&code) = bytes.get(i) else { break };
        if code == 0x00 || is_rst(code) {
            i += 1;
            continue;
        }
        return Ok(ff);
    }
    Err(ScanError::Truncated { offset: bytes.len() })
}

/// Segments a progressive JPEG into header and scans.
pub fn parse_scans(bytes: &[u8]) -> Result<ScanMap, ScanError> {
    parse_scans_with(bytes, ParseLimits::default())
}

pub fn parse_scans_with(bytes: &[u8], limits: ParseLimits) -> Result<ScanMap, ScanError> {
    if bytes.len() > limits.max_len {
        return Err(ScanError::TooLarge {
            len: bytes.len(),
            limit: limits.max_len,
        });
    }
    if bytes.len() < 2 || bytes[0] != MARKER || bytes[1] != SOI {
        return Err(ScanError::NotJpeg);
    }

    let mut p = Parser { bytes, pos: 2 };
    let mut seen_frame = false;
    // Start offsets of each scan; the header ends at the first one.
    let mut starts: Vec<usize> = Vec::new();
    // Offset where a run of table segments began after the previous scan's data.
    let mut pending: Option<usize> = None;

    let eoi_end = loop {
        let (at, code) = p.next_marker()?;
        match code {
            EOI => {
                if starts.is_empty() {
                    return Err(ScanError::Malformed {
                        offset: at,
                        reason: "EOI before first scan",
                    });
                }
                break p.pos;
            }
            SOI => {
                return Err(ScanError::Malformed {
                    offset: at,
                    reason: "nested SOI",
                })
            }
            SOS => {
                if !seen_frame {
                    return Err(ScanError::Malformed {
                        offset: at,
                        reason: "SOS before frame header",
                    });
                }
                if starts.len() == limits.max_scans {
                    return Err(ScanError::TooManyScans {
                        limit: limits.max_scans,
                    });
                }
                starts.push(pending.take().unwrap_or(at));
                p.skip_segment(at)?;
                p.pos = entropy_skip(bytes, p.pos)?;
            }
            0xC0 | 0xC1 | 0xC3 | SOF2 | 0xC5..=0xC7 | 0xC9..=0xCB | 0xCD..=0xCF => {
                if seen_frame {
                    return Err(ScanError::Unsupported(Unsupported::MultipleFrames));
                }
                match code {
                    SOF2 => {}
                    0xC5..=0xC7 => return Err(ScanError::Unsupported(Unsupported::Hierarchical)),
                    0xC9..=0xCB | 0xCD..=0xCF => {
                        return Err(ScanError::Unsupported(Unsupported::ArithmeticCoding))
                    }
                    _ => return Err(ScanError::NotProgressive { marker: code }),
                }
                seen_frame = true;
                p.skip_segment(at)?;
            }
            DHP | EXP => return Err(ScanError::Unsupported(Unsupported::Hierarchical)),
            DAC => return Err(ScanError::Unsupported(Unsupported::ArithmeticCoding)),
            c if is_standalone(c) => {}
            c => {
                if !starts.is_empty() && pending.is_none() && is_table(c) {
                    pending = Some(at);
                }
                p.skip_segment(at)?;
            }
        }
    };

    let header = ByteRange::new(0, starts[0]);
    let mut scans = Vec::with_capacity(starts.len());
    for (k, &s) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(bytes.len());
        scans.push(ByteRange::new(s, end - s));
    }
    let has_trailing_eoi = eoi_end == bytes.len();
    Ok(ScanMap {
        header,
        scans,
        total_len: bytes.len(),
        has_trailing_eoi,
    })
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    /// Reads the next marker at `pos`, returning its offset (first fill byte)
    /// and code, and leaves `pos` just past the code byte.
    fn next_marker(&mut self) -> Result<(usize, u8), ScanError> {
        let at = self.pos;
        match self.bytes.get(at) {
            None => return Err(ScanError::Truncated { offset: at }),
            Some(&MARKER) => {}
            Some(_) => {
                return Err(ScanError::Malformed {
                    offset: at,
                    reason: "expected marker",
                })
            }
        }
        let mut i = at;
        while self.bytes.get(i) == Some(&MARKER) {
            i += 1;
        }
        match self.bytes.get(i) {
            None => Err(ScanError::Truncated { offset: i }),
            Some(0x00) => Err(ScanError::Malformed {
                offset: at,
                reason: "stuffed byte outside entropy-coded data",
            }),
            Some(&code) => {
                self.pos = i + 1;
                Ok((at, code))
            }
        }
    }

    /// Skips a length-prefixed segment whose code byte was just consumed.
    fn skip_segment(&mut self, at: usize) -> Result<(), ScanError> {
        let b = self.bytes;
        let (Some(&hi), Some(&lo)) = (b.get(self.pos), b.get(self.pos + 1)) else {
            return Err(ScanError::Truncated { offset: b.len() });
        };
        let len = u16::from_be_bytes([hi, lo]) as usize;
        if len < 2 {
            return Err(ScanError::Malformed {
                offset: at,
                reason: "segment length below 2",
            });
        }
        let end = self.pos + len;
        if end > b.len() {
            return Err(ScanError::Truncated { offset: b.len() });
        }
        self.pos = end;
        Ok(())
    }
}

/// Whether `bytes` ends with a real EOI marker.
///
/// Inside entropy-coded data every 0xFF is followed by 0x00 or an RST code,
/// so a trailing `FF D9` can only be a marker.
pub fn ends_with_eoi(bytes: &[u8]) -> bool {
    bytes.ends_with(&EOI_BYTES)
}
