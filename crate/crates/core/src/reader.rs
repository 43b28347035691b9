//! Partial-fidelity reading of PCR files.
//!
//! Reading scan group `g` means reading the file from its first byte through
//! the end of group `g` in one forward pass. Each image is then reassembled
//! by concatenating its slices from groups `1..=g` and, if the stream was cut
//! short, terminating it with an EOI marker so a JPEG decoder renders the
//! scans that are present.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread::{self, JoinHandle};

use crate::container::{read_index, PcrIndex, SampleMeta};
use crate::error::{Error, Result};
use crate::jpeg_scan::{ends_with_eoi, EOI_BYTES};

/// Environment variable enabling `O_DIRECT` reads when set to `1`.
pub const DIRECT_IO_ENV: &str = "PCR_DIRECT_IO";

/// Requested fidelity: scan groups `1..=scan_group` are read. Group 0 reads
/// labels only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FidelityRequest {
    pub scan_group: usize,
}

impl FidelityRequest {
    /// Every group of each record, whatever its group count.
    pub const FULL: FidelityRequest = FidelityRequest {
        scan_group: usize::MAX,
    };

    pub const fn new(scan_group: usize) -> Self {
        FidelityRequest { scan_group }
    }

    /// The group to read from a record with this index.
    fn resolve(&self, index: &PcrIndex) -> Result<usize> {
        if *self == Self::FULL {
            return Ok(index.n_groups);
        }
        if self.scan_group > index.n_groups {
            return Err(Error::FidelityUnavailable {
                requested: self.scan_group,
                available: index.n_groups,
            });
        }
        Ok(self.scan_group)
    }
}

/// The bytes of one record read through some scan group.
#[derive(Clone, Debug, Default)]
pub struct PrefixData {
    index: Option<PcrIndex>,
    metadata: Vec<SampleMeta>,
    groups_read: usize,
    /// Payload of groups `1..=groups_read`, contiguous.
    payload: Vec<u8>,
    /// `group_starts[g - 1]`: offset of group `g` within `payload`.
    group_starts: Vec<usize>,
    /// `image_starts[g - 1][i]`: offset of image `i` within group `g`.
    image_starts: Vec<Vec<usize>>,
}

impl PrefixData {
    pub fn index(&self) -> &PcrIndex {
        self.index.as_ref().expect("prefix holds an index")
    }

    pub fn metadata(&self) -> &[SampleMeta] {
        &self.metadata
    }

    pub fn groups_read(&self) -> usize {
        self.groups_read
    }

    pub fn n_images(&self) -> usize {
        self.metadata.len()
    }

    /// Payload of scan group `g`, `1 <= g <= groups_read`.
    pub fn group(&self, g: usize) -> &[u8] {
        assert!((1..=self.groups_read).contains(&g), "group {g} not loaded");
        let start = self.group_starts[g - 1];
        let end = self
            .group_starts
            .get(g)
            .copied()
            .unwrap_or(self.payload.len());
        &self.payload[start..end]
    }

    /// Bytes consumed from the source to produce this prefix.
    pub fn bytes_read(&self) -> u64 {
        self.index().prefix_len(self.groups_read)
    }

    /// Image `i`'s slice of group `g`.
    pub fn image_slice(&self, i: usize, g: usize) -> &[u8] {
        let start = self.image_starts[g - 1][i];
        let len = self.index().group_lengths[g - 1][i] as usize;
        &self.group(g)[start..start + len]
    }

    /// Reassembles every image at the loaded fidelity.
    pub fn images(&self) -> impl Iterator<Item = Result<AssembledImage>> + '_ {
        (0..self.n_images()).map(move |i| assemble(self, i, self.groups_read))
    }

    fn set_layout(&mut self, index: PcrIndex, metadata: Vec<SampleMeta>, g: usize) {
        self.group_starts.clear();
        self.image_starts.clear();
        let mut at = 0usize;
        for k in 1..=g {
            self.group_starts.push(at);
            let mut starts = Vec::with_capacity(index.n_images);
            let mut off = 0usize;
            for &l in &index.group_lengths[k - 1] {
                starts.push(off);
                off += l as usize;
            }
            self.image_starts.push(starts);
            at += off;
        }
        self.groups_read = g;
        self.index = Some(index);
        self.metadata = metadata;
    }
}

/// Reads a record through scan group `req.scan_group`.
///
/// Exactly `index.prefix_len(g)` bytes are consumed, front to back.
pub fn read_prefix<R: Read + ?Sized>(source: &mut R, req: FidelityRequest) -> Result<PrefixData> {
    read_prefix_into(source, req, PrefixData::default())
}

/// Like [`read_prefix`], reusing the allocations of `reuse`.
pub fn read_prefix_into<R: Read + ?Sized>(
    source: &mut R,
    req: FidelityRequest,
    mut reuse: PrefixData,
) -> Result<PrefixData> {
    let (index, metadata) = read_index(source)?;
    let g = req.resolve(&index)?;
    let want = (index.prefix_len(g) - index.payload_offset()) as usize;

    let buf = &mut reuse.payload;
    buf.clear();
    buf.reserve_exact(want);
    let got = source.take(want as u64).read_to_end(buf)?;
    if got < want {
        // Name the first group that is incomplete.
        let mut acc = 0u64;
        for k in 1..=g {
            let len = index.group_len(k);
            if (got as u64) < acc + len {
                return Err(Error::TruncatedPayload {
                    group: k,
                    expected: len,
                    actual: got as u64 - acc,
                });
            }
            acc += len;
        }
        unreachable!("short read covers every requested group");
    }
    reuse.set_layout(index, metadata, g);
    Ok(reuse)
}

/// One image reassembled at some fidelity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssembledImage {
    pub meta: SampleMeta,
    /// A standalone JPEG stream; empty when `groups_used == 0`.
    pub jpeg_bytes: Vec<u8>,
    pub groups_used: usize,
}

/// Reassembles image `i` from groups `1..=g` of `prefix`.
///
/// The output is the image's group slices concatenated in order. When the
/// image has bytes beyond group `g` and the concatenation does not already
/// end in EOI, an EOI marker is appended. At full fidelity the output is the
/// original file, byte for byte. `g == 0` yields empty bytes.
pub fn assemble(prefix: &PrefixData, i: usize, g: usize) -> Result<AssembledImage> {
    let n = prefix.n_images();
    if i >= n {
        return Err(Error::ImageOutOfRange {
            index: i,
            n_images: n,
        });
    }
    if g > prefix.groups_read {
        return Err(Error::GroupNotLoaded {
            requested: g,
            loaded: prefix.groups_read,
        });
    }
    let meta = prefix.metadata[i].clone();
    if g == 0 {
        return Ok(AssembledImage {
            meta,
            jpeg_bytes: Vec::new(),
            groups_used: 0,
        });
    }
    let index = prefix.index();
    if index.group_lengths[0][i] == 0 {
        return Err(Error::ZeroLengthImage(i));
    }
    let len = index.cumulative_image_len(i, g) as usize;
    let mut out = Vec::with_capacity(len + EOI_BYTES.len());
    for k in 1..=g {
        out.extend_from_slice(prefix.image_slice(i, k));
    }
    if !index.image_complete_at(i, g) && !ends_with_eoi(&out) {
        out.extend_from_slice(&EOI_BYTES);
    }
    Ok(AssembledImage {
        meta,
        jpeg_bytes: out,
        groups_used: g,
    })
}

/// Two reusable buffers exchanged between one producer thread and one
/// consumer.
///
/// The producer fills whichever buffer is idle while the consumer drains the
/// other. Buffers move between the threads by value, so a buffer is never
/// visible to the consumer while the producer writes it.
pub struct DoubleBuffer<T, E> {
    ready: Option<Receiver<Result<T, E>>>,
    free: Option<SyncSender<T>>,
    worker: Option<JoinHandle<()>>,
}

impl<T: Send + 'static, E: Send + 'static> DoubleBuffer<T, E> {
    /// Starts a producer that calls `fill` on an idle buffer until it
    /// returns `None`.
    pub fn spawn<F>(first: T, second: T, mut fill: F) -> Self
    where
        F: FnMut(&mut T) -> Option<Result<(), E>> + Send + 'static,
    {
        let (ready_tx, ready_rx) = mpsc::sync_channel::<Result<T, E>>(1);
        let (free_tx, free_rx) = mpsc::sync_channel::<T>(2);
        free_tx.send(first).unwrap();
        free_tx.send(second).unwrap();
        let worker = thread::spawn(move || {
            while let Ok(mut buf) = free_rx.recv() {
                // A failed fill keeps its buffer and tries the next item.
                loop {
                    match fill(&mut buf) {
                        None => return,
                        Some(Ok(())) => {
                            if ready_tx.send(Ok(buf)).is_err() {
                                return;
                            }
                            break;
                        }
                        Some(Err(e)) => {
                            if ready_tx.send(Err(e)).is_err() {
                                return;
                            }
                        }
                    }
                }
            }
        });
        DoubleBuffer {
            ready: Some(ready_rx),
            free: Some(free_tx),
            worker: Some(worker),
        }
    }

    /// Blocks until the next buffer is filled. `None` once the producer is
    /// exhausted.
    pub fn next_filled(&mut self) -> Option<Result<T, E>> {
        self.ready.as_ref()?.recv().ok()
    }

    /// Hands a drained buffer back to the producer for reuse.
    pub fn recycle(&self, buf: T) {
        // The producer may already have finished; dropping the buffer is fine.
        if let Some(free) = &self.free {
            let _ = free.try_send(buf);
        }
    }
}

impl<T, E> Drop for DoubleBuffer<T, E> {
    fn drop(&mut self) {
        // Closing both channels unblocks a producer waiting on either.
        self.ready.take();
        self.free.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Iteration settings.
#[derive(Clone, Copy, Debug, Default)]
pub struct IterOptions {
    /// Skip records that fail to read instead of stopping.
    pub permissive: bool,
    /// Bypass the page cache with `O_DIRECT`.
    pub direct_io: bool,
}

impl IterOptions {
    /// Defaults, with `direct_io` taken from `PCR_DIRECT_IO`.
    pub fn from_env() -> Self {
        IterOptions {
            direct_io: std::env::var(DIRECT_IO_ENV).is_ok_and(|v| v == "1"),
            ..IterOptions::default()
        }
    }
}

/// Lists the `.pcr` files at `path`: the file itself, or the directory's
/// records in name order.
pub fn list_records(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::from(e).in_file(path))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "pcr") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Opens a record for sequential reading.
pub fn open_record(path: &Path, direct_io: bool) -> io::Result<Box<dyn Read + Send>> {
    if direct_io {
        Ok(Box::new(direct::DirectReader::open(path)?))
    } else {
        Ok(Box::new(File::open(path)?))
    }
}

struct Slot {
    path: PathBuf,
    data: PrefixData,
}

/// Streams every image of every record under `path` at fidelity `req`.
///
/// Records are read on a background thread into one of two reusable
/// buffers while the caller consumes the images of the other.
pub struct PcrIter {
    buffers: DoubleBuffer<Slot, Error>,
    current: Option<Slot>,
    next_image: usize,
    permissive: bool,
    failed: bool,
    errors: usize,
}

/// Streams `path` (a `.pcr` file or a directory of them) at fidelity `req`.
pub fn iterate(path: &Path, req: FidelityRequest, opts: IterOptions) -> Result<PcrIter> {
    let files = list_records(path)?;
    let mut queue = files.into_iter();
    let direct = opts.direct_io;
    let empty = || Slot {
        path: PathBuf::new(),
        data: PrefixData::default(),
    };
    let buffers = DoubleBuffer::spawn(empty(), empty(), move |slot: &mut Slot| {
        let path = queue.next()?;
        let data = std::mem::take(&mut slot.data);
        let res = open_record(&path, direct)
            .map_err(Error::from)
            .and_then(|mut f| read_prefix_into(&mut f, req, data));
        Some(match res {
            Ok(d) => {
                slot.data = d;
                slot.path = path;
                Ok(())
            }
            Err(e) => Err(e.in_file(path)),
        })
    });
    Ok(PcrIter {
        buffers,
        current: None,
        next_image: 0,
        permissive: opts.permissive,
        failed: false,
        errors: 0,
    })
}

impl PcrIter {
    /// Number of records skipped because of errors (permissive mode).
    pub fn skipped_records(&self) -> usize {
        self.errors
    }
}

impl Iterator for PcrIter {
    type Item = Result<AssembledImage>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(slot) = &self.current {
                if self.next_image < slot.data.n_images() {
                    let i = self.next_image;
                    self.next_image += 1;
                    let g = slot.data.groups_read();
                    return Some(assemble(&slot.data, i, g).map_err(|e| e.in_file(&slot.path)));
                }
                let done = self.current.take().unwrap();
                self.buffers.recycle(done);
            }
            match self.buffers.next_filled()? {
                Ok(slot) => {
                    self.current = Some(slot);
                    self.next_image = 0;
                }
                Err(e) => {
                    self.errors += 1;
                    if !self.permissive {
                        self.failed = true;
                        return Some(Err(e));
                    }
                }
            }
        }
    }
}

mod direct {
    //! Page-cache-bypassing reads via `O_DIRECT`.

    use std::alloc::{self, Layout};
    use std::fs::{File, OpenOptions};
    use std::io::{self, Read};
    use std::os::unix::fs::OpenOptionsExt;
    use std::path::Path;

    const ALIGN: usize = 4096;
    const BLOCK: usize = 1 << 20;

    /// Sequential reader issuing aligned, block-sized `O_DIRECT` reads.
    pub struct DirectReader {
        file: File,
        buf: *mut u8,
        pos: usize,
        filled: usize,
        eof: bool,
    }

    // The raw buffer is owned exclusively by the reader.
    unsafe impl Send for DirectReader {}

    impl DirectReader {
        pub fn open(path: &Path) -> io::Result<Self> {
            let file = OpenOptions::new()
                .read(true)
                .custom_flags(libc::O_DIRECT)
                .open(path)?;
            let layout = Layout::from_size_align(BLOCK, ALIGN).unwrap();
            // SAFETY: layout has non-zero size.
            let buf = unsafe { alloc::alloc(layout) };
            if buf.is_null() {
                alloc::handle_alloc_error(layout);
            }
            Ok(DirectReader {
                file,
                buf,
                pos: 0,
                filled: 0,
                eof: false,
            })
        }

        fn refill(&mut self) -> io::Result<()> {
            // SAFETY: buf points to BLOCK bytes owned by self.
            let block = unsafe { std::slice::from_raw_parts_mut(self.buf, BLOCK) };
            let n = self.file.read(block)?;
            self.pos = 0;
            self.filled = n;
            // A short read means end of file under O_DIRECT.
            if n < BLOCK {
                self.eof = true;
            }
            Ok(())
        }
    }

    impl Read for DirectReader {
        fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
            if self.pos == self.filled {
                if self.eof {
                    return Ok(0);
                }
                self.refill()?;
            }
            let n = out.len().min(self.filled - self.pos);
            // SAFETY: pos + n <= filled <= BLOCK.
            let src = unsafe { std::slice::from_raw_parts(self.buf.add(self.pos), n) };
            out[..n].copy_from_slice(src);
            self.pos += n;
            Ok(n)
        }
    }

    impl Drop for DirectReader {
        fn drop(&mut self) {
            let layout = Layout::from_size_align(BLOCK, ALIGN).unwrap();
            // SAFETY: allocated in `open` with the same layout.
            unsafe { alloc::dealloc(self.buf, layout) };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::{encode_record, write_record};
    use crate::synth::progressive_gray;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn file_bytes(scans: &[usize], n_groups: usize) -> (Vec<Vec<u8>>, Vec<u8>) {
        let images: Vec<_> = scans
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                (
                    progressive_gray(n, 40 + i as u64),
                    SampleMeta::new(100 + i as u64, i as i32, format!("s{i}")),
                )
            })
            .collect();
        let rec = encode_record(&images, n_groups).unwrap();
        let mut out = Vec::new();
        write_record(&rec, &mut out).unwrap();
        (images.into_iter().map(|(b, _)| b).collect(), out)
    }

    /// Counts bytes handed out by the wrapped reader.
    struct Counting<'a> {
        inner: &'a [u8],
        read: usize,
    }

    impl Read for Counting<'_> {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            let n = self.inner.read(buf)?;
            self.read += n;
            Ok(n)
        }
    }

    #[test]
    fn group_zero_reads_no_payload() {
        let (_, file) = file_bytes(&[10, 10], 10);
        let mut src = Counting {
            inner: &file,
            read: 0,
        };
        let p = read_prefix(&mut src, FidelityRequest::new(0)).unwrap();
        assert_eq!(src.read as u64, p.index().payload_offset());
        let img = assemble(&p, 1, 0).unwrap();
        assert!(img.jpeg_bytes.is_empty());
        assert_eq!(img.meta.label, 1);
    }

    #[test]
    fn full_read_consumes_file() {
        let (src, file) = file_bytes(&[10, 7, 12], 10);
        let mut c = Counting {
            inner: &file,
            read: 0,
        };
        let p = read_prefix(&mut c, FidelityRequest::new(10)).unwrap();
        assert_eq!(c.read, file.len());
        for (i, img) in p.images().enumerate() {
            assert_eq!(img.unwrap().jpeg_bytes, src[i]);
        }
    }

    #[test]
    fn partial_image_gets_eoi() {
        let (src, file) = file_bytes(&[10], 10);
        let p = read_prefix(&mut &file[..], FidelityRequest::new(3)).unwrap();
        let img = assemble(&p, 0, 3).unwrap();
        let map = crate::jpeg_scan::parse_scans(&src[0]).unwrap();
        assert_eq!(&img.jpeg_bytes[..map.prefix_len(3)], &src[0][..map.prefix_len(3)]);
        assert_eq!(img.jpeg_bytes.len(), map.prefix_len(3) + 2);
        assert!(img.jpeg_bytes.ends_with(&EOI_BYTES));
        // Group 1 of a 2-group read of the same file matches.
        assert_eq!(assemble(&p, 0, 1).unwrap().jpeg_bytes.len(), map.prefix_len(1) + 2);
    }

    #[test]
    fn short_image_completes_early() {
        // Image with 4 scans is complete after group 4; no extra EOI.
        let (src, file) = file_bytes(&[10, 4], 10);
        let p = read_prefix(&mut &file[..], FidelityRequest::new(6)).unwrap();
        assert_eq!(assemble(&p, 1, 6).unwrap().jpeg_bytes, src[1]);
        assert_eq!(assemble(&p, 1, 4).unwrap().jpeg_bytes, src[1]);
    }

    #[test]
    fn errors() {
        let (_, file) = file_bytes(&[5, 5], 10);
        let err = read_prefix(&mut &file[..], FidelityRequest::new(11)).unwrap_err();
        assert!(matches!(
            err,
            Error::FidelityUnavailable {
                requested: 11,
                available: 10
            }
        ));
        let cut = &file[..file.len() - 1];
        let err = read_prefix(&mut &cut[..], FidelityRequest::new(10)).unwrap_err();
        // Groups 6..=10 are empty for 5-scan images.
        assert!(matches!(err, Error::TruncatedPayload { group: 5, expected: 80, actual: 79 }), "{err:?}");
        let p = read_prefix(&mut &file[..], FidelityRequest::new(2)).unwrap();
        assert!(matches!(assemble(&p, 2, 1), Err(Error::ImageOutOfRange { .. })));
        assert!(matches!(assemble(&p, 0, 3), Err(Error::GroupNotLoaded { .. })));
    }

    #[test]
    fn zero_length_image_is_reported() {
        let (_, file) = file_bytes(&[5], 4);
        let mut p = read_prefix(&mut &file[..], FidelityRequest::new(4)).unwrap();
        let mut idx = p.index().clone();
        idx.group_lengths[0][0] = 0;
        let meta = p.metadata().to_vec();
        p.set_layout(idx, meta, 4);
        assert!(matches!(assemble(&p, 0, 2), Err(Error::ZeroLengthImage(0))));
    }

    #[test]
    fn double_buffer_never_exposes_in_flight_buffers() {
        const POISON: u8 = 0xEE;
        let produced = Arc::new(AtomicUsize::new(0));
        let counter = produced.clone();
        let mut db = DoubleBuffer::<Vec<u8>, ()>::spawn(vec![0; 4096], vec![0; 4096], move |buf| {
            let k = counter.fetch_add(1, Ordering::SeqCst);
            if k == 200 {
                return None;
            }
            buf.fill(POISON);
            thread::yield_now();
            buf.fill(k as u8);
            Some(Ok(()))
        });
        let mut seen = 0usize;
        while let Some(item) = db.next_filled() {
            let buf = item.unwrap();
            assert!(buf.iter().all(|&b| b == seen as u8), "buffer {seen} poisoned");
            seen += 1;
            db.recycle(buf);
        }
        assert_eq!(seen, 200);
    }

    #[test]
    fn double_buffer_producer_stays_one_ahead() {
        let produced = Arc::new(AtomicUsize::new(0));
        let counter = produced.clone();
        let mut db = DoubleBuffer::<u32, ()>::spawn(0, 0, move |_| {
            counter.fetch_add(1, Ordering::SeqCst);
            Some(Ok(()))
        });
        let held = db.next_filled().unwrap().unwrap();
        thread::sleep(std::time::Duration::from_millis(50));
        // One buffer held by us, one filled and waiting: nothing else to fill.
        assert_eq!(produced.load(Ordering::SeqCst), 2);
        db.recycle(held);
        drop(db);
    }

    #[test]
    fn iterate_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut sources = Vec::new();
        for r in 0..3 {
            let (src, file) = file_bytes(&[10, 10, 3, 10], 10);
            std::fs::write(dir.path().join(format!("r{r}.pcr")), file).unwrap();
            sources.extend(src);
        }
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let it = iterate(dir.path(), FidelityRequest::new(10), IterOptions::default()).unwrap();
        let out: Vec<_> = it.map(|r| r.unwrap().jpeg_bytes).collect();
        assert_eq!(out, sources);
    }

    #[test]
    fn iterate_errors_name_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let (_, file) = file_bytes(&[10], 10);
        std::fs::write(dir.path().join("a.pcr"), &file).unwrap();
        std::fs::write(dir.path().join("b.pcr"), b"garbage").unwrap();
        std::fs::write(dir.path().join("c.pcr"), &file).unwrap();

        let it = iterate(dir.path(), FidelityRequest::new(12), IterOptions::default()).unwrap();
        let res: Vec<_> = it.collect();
        assert_eq!(res.len(), 1);
        let err = res[0].as_ref().unwrap_err();
        assert!(err.to_string().contains("a.pcr"), "{err}");
        assert!(matches!(err.root(), Error::FidelityUnavailable { .. }));

        let strict: Vec<_> = iterate(dir.path(), FidelityRequest::new(10), IterOptions::default())
            .unwrap()
            .collect();
        assert_eq!(strict.len(), 2);
        assert!(strict[1].as_ref().unwrap_err().to_string().contains("b.pcr"));

        let opts = IterOptions {
            permissive: true,
            ..IterOptions::default()
        };
        let mut it = iterate(dir.path(), FidelityRequest::new(10), opts).unwrap();
        let ok = it.by_ref().filter(|r| r.is_ok()).count();
        assert_eq!(ok, 2);
        assert_eq!(it.skipped_records(), 1);
    }

    #[test]
    fn direct_io_matches_buffered() {
        let dir = tempfile::tempdir().unwrap();
        let (src, file) = file_bytes(&[10, 10], 10);
        let path = dir.path().join("d.pcr");
        std::fs::write(&path, &file).unwrap();
        let mut r = match open_record(&path, true) {
            Ok(r) => r,
            // tmpfs and some overlay filesystems reject O_DIRECT.
            Err(e) if e.raw_os_error() == Some(libc::EINVAL) => return,
            Err(e) => panic!("{e}"),
        };
        let p = read_prefix(&mut r, FidelityRequest::new(10)).unwrap();
        assert_eq!(assemble(&p, 1, 10).unwrap().jpeg_bytes, src[1]);
    }
}
