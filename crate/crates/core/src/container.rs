//! The PCR record container.
//!
//! A record stores a batch of progressive JPEGs rearranged by fidelity. The
//! on-disk layout, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PCR1"
//! 4       2     format version (1)
//! 6       2     flags (0; reserved for future metadata schemas)
//! 8       4     n_images
//! 12      2     n_groups (G)
//! 14      6     reserved, zero
//! 20      4     CRC-32 of bytes 0..20, the metadata block and the index block
//! 24      ..    metadata block:
//!                 u32 block length (including these 4 bytes)
//!                 per image: u64 sample_id, i32 label, u8 n_scans,
//!                            u16 name length, name bytes (UTF-8)
//! ..      ..    index block:
//!                 G x u64 absolute offset of scan group g (g = 1..=G)
//!                 G x n_images x u32 byte length of image i in group g
//! ..      ..    payload: scan groups 1..=G in ascending order
//! ```
//!
//! Scan group 0 is the metadata itself and holds no image bytes. Group 1
//! holds each image's JPEG header followed by its first scan; group `g`
//! holds scan `g`. When an image has more scans than the record has groups,
//! its surplus scans are appended to the last group; when it has fewer, its
//! entries in the higher groups are zero.

use std::collections::HashSet;
use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::jpeg_scan::{self, ScanMap};

pub const MAGIC: [u8; 4] = *b"PCR1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
/// Fixed bytes per metadata entry, excluding the name.
pub const META_ENTRY_LEN: usize = 8 + 4 + 1 + 2;
pub const DEFAULT_GROUPS: usize = 10;
pub const MAX_GROUPS: usize = 64;

const CHECKSUM_AT: usize = 20;

/// Per-image metadata stored ahead of the payload.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SampleMeta {
    pub sample_id: u64,
    pub label: i32,
    pub source_name: String,
    /// Number of scans in the source image; filled in by the encoder.
    pub n_scans: u8,
}

impl SampleMeta {
    pub fn new(sample_id: u64, label: i32, source_name: impl Into<String>) -> Self {
        SampleMeta {
            sample_id,
            label,
            source_name: source_name.into(),
            n_scans: 0,
        }
    }

    fn encoded_len(&self) -> usize {
        META_ENTRY_LEN + self.source_name.len()
    }
}

/// Offsets and per-image lengths for every scan group of one record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcrIndex {
    pub n_images: usize,
    pub n_groups: usize,
    /// Absolute file offset of scan groups 1..=G.
    pub group_offsets: Vec<u64>,
    /// `group_lengths[g - 1][i]`: bytes image `i` contributes to group `g`.
    pub group_lengths: Vec<Vec<u32>>,
    /// Size of the metadata block, including its length prefix.
    pub metadata_len: u64,
}

impl PcrIndex {
    pub fn index_len(&self) -> u64 {
        index_block_len(self.n_images, self.n_groups)
    }

    /// Bytes from the start of the file to the first payload byte.
    pub fn payload_offset(&self) -> u64 {
        HEADER_LEN as u64 + self.metadata_len + self.index_len()
    }

    /// Payload length of scan group `g` (1-based).
    pub fn group_len(&self, g: usize) -> u64 {
        self.group_lengths[g - 1].iter().map(|&l| l as u64).sum()
    }

    /// Bytes read from the start of the file through scan group `g`.
    /// `g == 0` covers header, metadata and index only.
    pub fn prefix_len(&self, g: usize) -> u64 {
        if g == 0 {
            self.payload_offset()
        } else {
            self.group_offsets[g - 1] + self.group_len(g)
        }
    }

    pub fn file_len(&self) -> u64 {
        self.prefix_len(self.n_groups)
    }

    pub fn image_group_len(&self, image: usize, g: usize) -> u64 {
        self.group_lengths[g - 1][image] as u64
    }

    /// Bytes of image `image` contained in groups 1..=g.
    pub fn cumulative_image_len(&self, image: usize, g: usize) -> u64 {
        (1..=g.min(self.n_groups))
            .map(|k| self.image_group_len(image, k))
            .sum()
    }

    /// Whether groups above `g` hold no bytes of `image`.
    pub fn image_complete_at(&self, image: usize, g: usize) -> bool {
        (g + 1..=self.n_groups).all(|k| self.group_lengths[k - 1][image] == 0)
    }

    fn payload_len(&self) -> u64 {
        (1..=self.n_groups).map(|g| self.group_len(g)).sum()
    }
}

/// Size of the index block for `n_images` images and `n_groups` groups.
pub fn index_block_len(n_images: usize, n_groups: usize) -> u64 {
    8 * n_groups as u64 + 4 * (n_groups as u64) * (n_images as u64)
}

/// Everything a record file contains except the payload.
pub fn container_overhead(metadata: &[SampleMeta], n_groups: usize) -> u64 {
    HEADER_LEN as u64 + metadata_block_len(metadata) + index_block_len(metadata.len(), n_groups)
}

fn metadata_block_len(metadata: &[SampleMeta]) -> u64 {
    4 + metadata.iter().map(|m| m.encoded_len() as u64).sum::<u64>()
}

/// An encoded record held in memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcrRecord {
    pub index: PcrIndex,
    pub metadata: Vec<SampleMeta>,
    /// Payload of scan groups 1..=G.
    pub groups: Vec<Vec<u8>>,
}

impl PcrRecord {
    pub fn n_images(&self) -> usize {
        self.index.n_images
    }

    pub fn n_groups(&self) -> usize {
        self.index.n_groups
    }

    /// Total payload bytes, equal to the summed size of the source images.
    pub fn payload_len(&self) -> u64 {
        self.groups.iter().map(|g| g.len() as u64).sum()
    }

    /// Serialized size of the record.
    pub fn file_len(&self) -> u64 {
        self.index.file_len()
    }
}

/// Incrementally collects images into a record.
#[derive(Debug)]
pub struct RecordBuilder {
    n_groups: usize,
    metadata: Vec<SampleMeta>,
    lengths: Vec<Vec<u32>>,
    groups: Vec<Vec<u8>>,
    ids: HashSet<u64>,
}

impl RecordBuilder {
    pub fn new(n_groups: usize) -> Result<Self> {
        if !(1..=MAX_GROUPS).contains(&n_groups) {
            return Err(Error::InvalidGroupCount(n_groups));
        }
        Ok(RecordBuilder {
            n_groups,
            metadata: Vec::new(),
            lengths: vec![Vec::new(); n_groups],
            groups: vec![Vec::new(); n_groups],
            ids: HashSet::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.metadata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metadata.is_empty()
    }

    /// Parses and appends one progressive JPEG.
    pub fn push(&mut self, jpeg: &[u8], meta: SampleMeta) -> Result<()> {
        let map = jpeg_scan::parse_scans(jpeg).map_err(|source| Error::Scan {
            sample_id: meta.sample_id,
            source,
        })?;
        self.push_parsed(jpeg, &map, meta)
    }

    /// Appends an image whose scan map was computed by the caller.
    pub fn push_parsed(&mut self, jpeg: &[u8], map: &ScanMap, mut meta: SampleMeta) -> Result<()> {
        if jpeg.len() > u32::MAX as usize {
            return Err(Error::ImageTooLarge {
                sample_id: meta.sample_id,
                len: jpeg.len(),
            });
        }
        if meta.source_name.len() > u16::MAX as usize {
            return Err(Error::NameTooLong {
                sample_id: meta.sample_id,
            });
        }
        if !self.ids.insert(meta.sample_id) {
            return Err(Error::DuplicateSampleId(meta.sample_id));
        }
        debug_assert_eq!(map.total_len, jpeg.len());
        let g_max = self.n_groups;
        for g in 1..=g_max {
            let part = group_slice(jpeg, map, g, g_max);
            self.lengths[g - 1].push(part.len() as u32);
            self.groups[g - 1].extend_from_slice(part);
        }
        meta.n_scans = map.n_scans() as u8;
        self.metadata.push(meta);
        Ok(())
    }

    pub fn finish(self) -> Result<PcrRecord> {
        if self.metadata.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let metadata_len = metadata_block_len(&self.metadata);
        let n_images = self.metadata.len();
        let mut offset =
            HEADER_LEN as u64 + metadata_len + index_block_len(n_images, self.n_groups);
        let mut group_offsets = Vec::with_capacity(self.n_groups);
        for g in &self.groups {
            group_offsets.push(offset);
            offset += g.len() as u64;
        }
        Ok(PcrRecord {
            index: PcrIndex {
                n_images,
                n_groups: self.n_groups,
                group_offsets,
                group_lengths: self.lengths,
                metadata_len,
            },
            metadata: self.metadata,
            groups: self.groups,
        })
    }
}

/// Bytes of `jpeg` that belong in scan group `g` of `n_groups`.
fn group_slice<'a>(jpeg: &'a [u8], map: &ScanMap, g: usize, n_groups: usize) -> &'a [u8] {
    let n = map.n_scans();
    let start = if g == 1 { 0 } else { map.prefix_len(g - 1) };
    let end = if g == n_groups { jpeg.len() } else { map.prefix_len(g) };
    if g > n && g != n_groups || start >= end {
        return &[];
    }
    &jpeg[start..end]
}

/// Encodes `images` into a record with `n_groups` scan groups.
pub fn encode_record<B: AsRef<[u8]>>(images: &[(B, SampleMeta)], n_groups: usize) -> Result<PcrRecord> {
    let mut builder = RecordBuilder::new(n_groups)?;
    for (bytes, meta) in images {
        builder.push(bytes.as_ref(), meta.clone())?;
    }
    builder.finish()
}

/// Serializes header, metadata and index into one buffer.
fn encode_head(record: &PcrRecord) -> Vec<u8> {
    let idx = &record.index;
    let mut out = Vec::with_capacity(idx.payload_offset() as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(idx.n_images as u32).to_le_bytes());
    out.extend_from_slice(&(idx.n_groups as u16).to_le_bytes());
    out.extend_from_slice(&[0u8; 6]);
    out.extend_from_slice(&[0u8; 4]);
    debug_assert_eq!(out.len(), HEADER_LEN);

    out.extend_from_slice(&(idx.metadata_len as u32).to_le_bytes());
    for m in &record.metadata {
        out.extend_from_slice(&m.sample_id.to_le_bytes());
        out.extend_from_slice(&m.label.to_le_bytes());
        out.push(m.n_scans);
        out.extend_from_slice(&(m.source_name.len() as u16).to_le_bytes());
        out.extend_from_slice(m.source_name.as_bytes());
    }
    for off in &idx.group_offsets {
        out.extend_from_slice(&off.to_le_bytes());
    }
    for lens in &idx.group_lengths {
        for l in lens {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    let crc = checksum(&out);
    out[CHECKSUM_AT..HEADER_LEN].copy_from_slice(&crc.to_le_bytes());
    out
}

fn checksum(head: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&head[..CHECKSUM_AT]);
    h.update(&head[HEADER_LEN..]);
    h.finalize()
}

/// Writes `record` to `sink`, returning the number of bytes written.
pub fn write_record<W: Write>(record: &PcrRecord, sink: &mut W) -> io::Result<u64> {
    let head = encode_head(record);
    sink.write_all(&head)?;
    let mut written = head.len() as u64;
    for g in &record.groups {
        sink.write_all(g)?;
        written += g.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

/// Reads the header, metadata and index of a record.
///
/// Consumes exactly `index.payload_offset()` bytes from `source`; no payload
/// bytes are read.
pub fn read_index<R: Read + ?Sized>(source: &mut R) -> Result<(PcrIndex, Vec<SampleMeta>)> {
    let mut head = vec![0u8; HEADER_LEN + 4];
    read_exact_or(source, &mut head[..4], Error::BadMagic)?;
    if head[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    read_exact_or(source, &mut head[4..], truncated_index())?;
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let n_images = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let n_groups = u16::from_le_bytes([head[12], head[13]]) as usize;
    let stored_crc = u32::from_le_bytes(head[20..24].try_into().unwrap());
    let metadata_len = u32::from_le_bytes(head[24..28].try_into().unwrap()) as u64;

    if !(1..=MAX_GROUPS).contains(&n_groups) {
        return Err(Error::CorruptIndex(format!("scan group count {n_groups}")));
    }
    let meta_min = 4 + (META_ENTRY_LEN as u64) * n_images as u64;
    let meta_max = meta_min + (u16::MAX as u64) * n_images as u64;
    if n_images == 0 || metadata_len < meta_min || metadata_len > meta_max {
        return Err(Error::CorruptIndex(format!(
            "metadata length {metadata_len} inconsistent with {n_images} images"
        )));
    }
    let rest = metadata_len - 4 + index_block_len(n_images, n_groups);
    // Grow the buffer as bytes arrive so a corrupt count cannot force a
    // huge allocation up front.
    let got = source.take(rest).read_to_end(&mut head)?;
    if (got as u64) < rest {
        return Err(truncated_index());
    }
    if checksum(&head) != stored_crc {
        return Err(Error::CorruptIndex("checksum mismatch".into()));
    }

    let mut cur = Cursor::new(&head[HEADER_LEN + 4..]);
    let mut metadata = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        let sample_id = cur.u64()?;
        let label = cur.u32()? as i32;
        let n_scans = cur.take(1)?[0];
        let name_len = cur.u16()? as usize;
        let name = cur.take(name_len)?;
        let source_name = String::from_utf8(name.to_vec())
            .map_err(|_| Error::CorruptIndex("source name is not UTF-8".into()))?;
        metadata.push(SampleMeta {
            sample_id,
            label,
            source_name,
            n_scans,
        });
    }
    if cur.pos != (metadata_len - 4) as usize {
        return Err(Error::CorruptIndex("metadata block length mismatch".into()));
    }
    let mut group_offsets = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        group_offsets.push(cur.u64()?);
    }
    let mut group_lengths = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let mut lens = Vec::with_capacity(n_images);
        for _ in 0..n_images {
            lens.push(cur.u32()?);
        }
        group_lengths.push(lens);
    }
    let index = PcrIndex {
        n_images,
        n_groups,
        group_offsets,
        group_lengths,
        metadata_len,
    };
    validate(&index)?;
    Ok((index, metadata))
}

fn truncated_index() -> Error {
    Error::CorruptIndex("file ends inside the index".into())
}

fn read_exact_or<R: Read + ?Sized>(r: &mut R, buf: &mut [u8], on_eof: Error) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(on_eof),
        Err(e) => Err(e.into()),
    }
}

fn validate(index: &PcrIndex) -> Result<()> {
    let mut expected = index.payload_offset();
    for g in 1..=index.n_groups {
        if index.group_offsets[g - 1] != expected {
            return Err(Error::CorruptIndex(format!(
                "scan group {g} offset {} does not follow the previous group (expected {expected})",
                index.group_offsets[g - 1]
            )));
        }
        expected += index.group_len(g);
    }
    debug_assert_eq!(expected, index.payload_offset() + index.payload_len());
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::CorruptIndex("metadata entry overruns its block".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::progressive_gray;

    fn record(scan_counts: &[usize], n_groups: usize) -> (Vec<Vec<u8>>, PcrRecord) {
        let images: Vec<_> = scan_counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                (
                    progressive_gray(n, i as u64 + 1),
                    SampleMeta::new(i as u64, i as i32 % 3, format!("img{i}.jpg")),
                )
            })
            .collect();
        let rec = encode_record(&images, n_groups).unwrap();
        (images.into_iter().map(|(b, _)| b).collect(), rec)
    }

    #[test]
    fn layout_of_two_images() {
        let (src, rec) = record(&[10, 10], 10);
        let maps: Vec<_> = src.iter().map(|b| jpeg_scan::parse_scans(b).unwrap()).collect();
        for g in 1..=10 {
            let mut expected = Vec::new();
            for (b, m) in src.iter().zip(&maps) {
                let r = if g == 1 {
                    0..m.scans[0].end()
                } else {
                    m.scans[g - 1].range()
                };
                expected.extend_from_slice(&b[r]);
            }
            assert_eq!(rec.groups[g - 1], expected, "group {g}");
        }
        assert_eq!(rec.metadata[0].n_scans, 10);
    }

    #[test]
    fn single_group_holds_whole_file() {
        let (src, rec) = record(&[7], 1);
        assert_eq!(rec.groups.len(), 1);
        assert_eq!(rec.groups[0], src[0]);
    }

    #[test]
    fn surplus_scans_fold_into_last_group() {
        let (src, rec) = record(&[12], 10);
        let map = jpeg_scan::parse_scans(&src[0]).unwrap();
        assert_eq!(rec.groups[9], &src[0][map.scans[9].offset..]);
        assert_eq!(rec.payload_len(), src[0].len() as u64);
    }

    #[test]
    fn short_images_pad_with_zero_lengths() {
        let (src, rec) = record(&[10, 10, 4], 10);
        for g in 5..=10 {
            assert_eq!(rec.index.group_lengths[g - 1][2], 0);
        }
        let total: usize = src.iter().map(Vec::len).sum();
        assert_eq!(rec.payload_len(), total as u64);
    }

    #[test]
    fn rejects_bad_inputs() {
        let empty: Vec<(Vec<u8>, SampleMeta)> = vec![];
        assert!(matches!(encode_record(&empty, 10), Err(Error::EmptyRecord)));
        let img = progressive_gray(3, 1);
        let one = vec![(img.clone(), SampleMeta::new(1, 0, "a"))];
        assert!(matches!(encode_record(&one, 0), Err(Error::InvalidGroupCount(0))));
        assert!(matches!(encode_record(&one, 65), Err(Error::InvalidGroupCount(65))));
        let dup = vec![
            (img.clone(), SampleMeta::new(1, 0, "a")),
            (img, SampleMeta::new(1, 0, "b")),
        ];
        assert!(matches!(encode_record(&dup, 4), Err(Error::DuplicateSampleId(1))));
        let bad = vec![(vec![1u8, 2, 3], SampleMeta::new(9, 0, "x"))];
        assert!(matches!(
            encode_record(&bad, 4),
            Err(Error::Scan { sample_id: 9, .. })
        ));
    }

    #[test]
    fn write_then_read_index() {
        let (_, rec) = record(&[10, 6, 3], 8);
        let mut buf = Vec::new();
        let n = write_record(&rec, &mut buf).unwrap();
        assert_eq!(n, buf.len() as u64);
        assert_eq!(n, rec.file_len());
        let (idx, meta) = read_index(&mut &buf[..]).unwrap();
        assert_eq!(idx, rec.index);
        assert_eq!(meta, rec.metadata);
    }

    #[test]
    fn header_fields() {
        let (_, rec) = record(&[5, 5], 10);
        let mut buf = Vec::new();
        write_record(&rec, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PCR1");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes([buf[12], buf[13]]), 10);
        assert_eq!(&buf[14..20], &[0; 6]);
    }

    #[test]
    fn corruption_is_detected() {
        let (_, rec) = record(&[10, 10], 10);
        let mut buf = Vec::new();
        write_record(&rec, &mut buf).unwrap();
        let head = rec.index.payload_offset() as usize;
        for at in [8, 12, 30, head - 1] {
            let mut bad = buf.clone();
            bad[at] ^= 0x40;
            assert!(
                matches!(read_index(&mut &bad[..]), Err(Error::CorruptIndex(_))),
                "flip at {at}"
            );
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_index(&mut &bad[..]), Err(Error::BadMagic)));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(
            read_index(&mut &bad[..]),
            Err(Error::VersionUnsupported(2))
        ));
        assert!(matches!(
            read_index(&mut &buf[..head - 3]),
            Err(Error::CorruptIndex(_))
        ));
        assert!(matches!(read_index(&mut &buf[..2]), Err(Error::BadMagic)));
    }

    #[test]
    fn overhead_closed_form() {
        let (_, rec) = record(&[10, 10, 10], 10);
        let mut buf = Vec::new();
        write_record(&rec, &mut buf).unwrap();
        let names: u64 = rec.metadata.iter().map(|m| m.source_name.len() as u64).sum();
        let expected = 24 + 4 + 3 * 15 + names + 10 * 8 + 10 * 3 * 4;
        assert_eq!(container_overhead(&rec.metadata, 10), expected);
        assert_eq!(buf.len() as u64 - rec.payload_len(), expected);
    }

    #[test]
    fn deterministic_bytes() {
        let (_, a) = record(&[10, 4], 10);
        let (_, b) = record(&[10, 4], 10);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_record(&a, &mut x).unwrap();
        write_record(&b, &mut y).unwrap();
        assert_eq!(x, y);
    }
}
