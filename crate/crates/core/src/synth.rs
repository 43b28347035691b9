//! A minimal progressive JPEG writer for synthetic grayscale images.
//!
//! Produces decodable single-component SOF2 streams with an arbitrary number
//! of spectral-selection scans: one DC scan followed by AC bands that split
//! coefficients 1..=63. Coefficients are drawn from a seeded generator, so
//! the pixel content is noise, but the marker structure (DHT before every
//! scan, optional restart intervals, byte stuffing) mirrors what libjpeg
//! emits. Intended for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::jpeg_scan::{DHT, DQT, DRI, EOI_BYTES, MARKER, SOF2, SOI, SOS};

#[derive(Clone, Debug)]
pub struct SyntheticJpeg {
    pub width: u16,
    pub height: u16,
    /// Total scans, 1..=64.
    pub n_scans: usize,
    /// Restart interval in blocks, if any.
    pub restart_interval: Option<u16>,
    /// Emit a DHT segment before every scan after the first.
    pub tables_per_scan: bool,
    pub seed: u64,
}

impl SyntheticJpeg {
    pub fn new(width: u16, height: u16, n_scans: usize, seed: u64) -> Self {
        SyntheticJpeg {
            width,
            height,
            n_scans,
            restart_interval: None,
            tables_per_scan: true,
            seed,
        }
    }

    pub fn restart_interval(mut self, blocks: u16) -> Self {
        self.restart_interval = Some(blocks);
        self
    }

    pub fn tables_per_scan(mut self, yes: bool) -> Self {
        self.tables_per_scan = yes;
        self
    }

    /// Coefficient bands `(Ss, Se)` for each scan.
    pub fn bands(&self) -> Vec<(u8, u8)> {
        assert!((1..=64).contains(&self.n_scans), "1..=64 scans");
        let mut bands = vec![(0u8, 0u8)];
        let n_ac = self.n_scans - 1;
        for k in 0..n_ac {
            let lo = 1 + k * 63 / n_ac;
            let hi = (k + 1) * 63 / n_ac;
            bands.push((lo as u8, hi as u8));
        }
        bands
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let blocks =
            (self.width as usize).div_ceil(8) * (self.height as usize).div_ceil(8);
        let mut out = vec![MARKER, SOI];

        let mut q = [8u8; 64];
        q[0] = 16;
        let mut dqt = vec![0x00];
        dqt.extend_from_slice(&q);
        segment(&mut out, DQT, &dqt);

        let [wh, wl] = self.width.to_be_bytes();
        let [hh, hl] = self.height.to_be_bytes();
        segment(&mut out, SOF2, &[8, hh, hl, wh, wl, 1, 1, 0x11, 0]);
        if let Some(ri) = self.restart_interval {
            segment(&mut out, DRI, &ri.to_be_bytes());
        }
        segment(&mut out, DHT, &dc_table());

        for (k, &(ss, se)) in self.bands().iter().enumerate() {
            if k == 1 || (k > 1 && self.tables_per_scan) {
                segment(&mut out, DHT, &ac_table());
            }
            segment(&mut out, SOS, &[1, 1, 0x00, ss, se, 0x00]);
            let mut bits = BitWriter::new(&mut out);
            let mut pred = 0i32;
            let mut rst = 0u8;
            for b in 0..blocks {
                if let Some(ri) = self.restart_interval {
                    if b > 0 && b % ri as usize == 0 {
                        bits.flush();
                        bits.out.extend_from_slice(&[MARKER, 0xD0 + rst]);
                        rst = (rst + 1) % 8;
                        pred = 0;
                    }
                }
                if ss == 0 {
                    pred = dc_block(&mut bits, &mut rng, pred);
                } else {
                    ac_block(&mut bits, &mut rng, se - ss + 1);
                }
            }
            bits.flush();
        }
        out.extend_from_slice(&EOI_BYTES);
        out
    }
}

fn segment(out: &mut Vec<u8>, code: u8, payload: &[u8]) {
    out.extend_from_slice(&[MARKER, code]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

// DC: category 0 -> "0", category 8 -> "10".
fn dc_table() -> Vec<u8> {
    let mut t = vec![0x00, 1, 1];
    t.extend_from_slice(&[0; 14]);
    t.extend_from_slice(&[0x00, 0x08]);
    t
}

// AC: EOB -> "0", (run 0, size 1) -> "10".
fn ac_table() -> Vec<u8> {
    let mut t = vec![0x10, 1, 1];
    t.extend_from_slice(&[0; 14]);
    t.extend_from_slice(&[0x00, 0x01]);
    t
}

fn dc_block(bits: &mut BitWriter<'_>, rng: &mut ChaCha8Rng, pred: i32) -> i32 {
    if rng.gen_bool(0.3) {
        bits.put(0b0, 1);
        return pred;
    }
    let mag: i32 = rng.gen_range(128..=255);
    let up = if pred > 700 {
        false
    } else if pred < -700 {
        true
    } else {
        rng.gen_bool(0.5)
    };
    let diff = if up { mag } else { -mag };
    bits.put(0b10, 2);
    let extra = if diff > 0 { diff } else { diff + 255 };
    bits.put(extra as u32, 8);
    pred + diff
}

fn ac_block(bits: &mut BitWriter<'_>, rng: &mut ChaCha8Rng, band_len: u8) {
    let n = rng.gen_range(0..=band_len.min(3));
    for _ in 0..n {
        bits.put(0b10, 2);
        bits.put(rng.gen_range(0..=1), 1);
    }
    if n < band_len {
        bits.put(0b0, 1);
    }
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u32,
    n: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        BitWriter { out, acc: 0, n: 0 }
    }

    fn put(&mut self, value: u32, len: u32) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.n += 1;
            if self.n == 8 {
                self.emit(self.acc as u8);
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    fn emit(&mut self, byte: u8) {
        self.out.push(byte);
        if byte == MARKER {
            self.out.push(0x00);
        }
    }

    /// Pads the final partial byte with 1 bits.
    fn flush(&mut self) {
        if self.n > 0 {
            let pad = 8 - self.n;
            let byte = ((self.acc << pad) | ((1 << pad) - 1)) as u8;
            self.emit(byte);
            self.acc = 0;
            self.n = 0;
        }
    }
}

/// A small synthetic progressive JPEG with `n_scans` scans; `seed` varies the
/// size and content.
pub fn progressive_gray(n_scans: usize, seed: u64) -> Vec<u8> {
    let w = 16 + (seed % 5) as u16 * 8;
    let h = 16 + (seed % 3) as u16 * 8;
    SyntheticJpeg::new(w, h, n_scans, seed).encode()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{ImageDecoder, JpegDecoder};
    use crate::jpeg_scan::parse_scans;

    #[test]
    fn bands_cover_all_coefficients() {
        for n in 1..=64 {
            let b = SyntheticJpeg::new(8, 8, n, 0).bands();
            assert_eq!(b.len(), n);
            if n > 1 {
                assert_eq!(b[1].0, 1);
                assert_eq!(b[n - 1].1, 63);
                for w in b[1..].windows(2) {
                    assert_eq!(w[0].1 + 1, w[1].0);
                }
            }
        }
    }

    #[test]
    fn decodes_and_parses() {
        for (n, ri) in [(1, None), (2, None), (10, Some(3)), (12, Some(1))] {
            let mut s = SyntheticJpeg::new(40, 24, n, n as u64);
            if let Some(ri) = ri {
                s = s.restart_interval(ri);
            }
            let bytes = s.encode();
            assert_eq!(parse_scans(&bytes).unwrap().n_scans(), n);
            let img = JpegDecoder.decode_rgb(&bytes).unwrap();
            assert_eq!((img.width, img.height), (40, 24));
        }
    }
}
