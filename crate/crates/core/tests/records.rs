mod common;

use std::io::{Cursor, Read};

use pcr::container::container_overhead;
use pcr::reader::IterOptions;
use pcr::synth::SyntheticJpeg;
use pcr::{
    assemble, encode_record, iterate, parse_scans, read_index, read_prefix, write_record,
    FidelityRequest, SampleMeta,
};

fn corpus() -> Vec<(Vec<u8>, SampleMeta)> {
    common::progressive_files()
        .iter()
        .step_by(8)
        .enumerate()
        .map(|(i, p)| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (std::fs::read(p).unwrap(), SampleMeta::new(i as u64, (i % 3) as i32, name))
        })
        .collect()
}

/// Counts bytes handed out by the inner reader.
struct Counting<R> {
    inner: R,
    n: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let k = self.inner.read(buf)?;
        self.n += k as u64;
        Ok(k)
    }
}

#[test]
fn fixtures_round_trip_at_every_group() {
    let images = corpus();
    for groups in [1, 5, 10, 12] {
        let rec = encode_record(&images, groups).unwrap();
        let mut file = Vec::new();
        write_record(&rec, &mut file).unwrap();
        let (index, meta) = read_index(&mut Cursor::new(&file)).unwrap();
        assert_eq!(index.file_len(), file.len() as u64);
        let payload: u64 = images.iter().map(|(b, _)| b.len() as u64).sum();
        assert_eq!(file.len() as u64, payload + container_overhead(&meta, groups));

        for g in 0..=groups {
            let prefix = read_prefix(&mut Cursor::new(&file), FidelityRequest::new(g)).unwrap();
            for (i, (src, m)) in images.iter().enumerate() {
                let img = assemble(&prefix, i, g).unwrap();
                assert_eq!(img.meta.sample_id, m.sample_id);
                assert_eq!(img.meta.label, m.label);
                if g == 0 {
                    assert!(img.jpeg_bytes.is_empty());
                    continue;
                }
                let map = parse_scans(src).unwrap();
                // Surplus scans fold into the last group.
                let k = if g == groups { map.n_scans() } else { g };
                let want = &src[..map.prefix_len(k)];
                assert_eq!(&img.jpeg_bytes[..want.len()], want);
                if k >= map.n_scans() {
                    assert_eq!(img.jpeg_bytes, src.as_slice());
                } else {
                    assert_eq!(&img.jpeg_bytes[want.len()..], &[0xFF, 0xD9]);
                }
            }
        }
    }
}

#[test]
fn reads_stop_at_the_requested_group() {
    let images = corpus();
    let rec = encode_record(&images, 10).unwrap();
    let mut file = Vec::new();
    write_record(&rec, &mut file).unwrap();
    let (index, _) = read_index(&mut Cursor::new(&file)).unwrap();
    let mut prev = 0;
    for g in 0..=10 {
        let mut src = Counting {
            inner: Cursor::new(&file),
            n: 0,
        };
        let prefix = read_prefix(&mut src, FidelityRequest::new(g)).unwrap();
        assert_eq!(src.n, index.prefix_len(g), "group {g}");
        assert_eq!(prefix.bytes_read(), index.prefix_len(g));
        assert!(src.n >= prev);
        prev = src.n;
    }
    assert_eq!(prev, file.len() as u64);
}

#[test]
fn truncated_files_are_errors() {
    let images: Vec<_> = corpus().into_iter().take(4).collect();
    let rec = encode_record(&images, 10).unwrap();
    let mut file = Vec::new();
    write_record(&rec, &mut file).unwrap();
    let (index, _) = read_index(&mut Cursor::new(&file)).unwrap();
    for cut in [10, 30, index.payload_offset() as usize - 1] {
        assert!(read_prefix(&mut Cursor::new(&file[..cut]), FidelityRequest::new(1)).is_err());
    }
    let cut = index.prefix_len(3) as usize - 1;
    assert!(read_prefix(&mut Cursor::new(&file[..cut]), FidelityRequest::new(2)).is_ok());
    assert!(read_prefix(&mut Cursor::new(&file[..cut]), FidelityRequest::new(3)).is_err());
    assert!(read_prefix(&mut Cursor::new(&file), FidelityRequest::new(11)).is_err());
}

#[test]
fn corrupted_index_is_detected() {
    let images: Vec<_> = corpus().into_iter().take(4).collect();
    let rec = encode_record(&images, 10).unwrap();
    let mut file = Vec::new();
    write_record(&rec, &mut file).unwrap();
    let (index, _) = read_index(&mut Cursor::new(&file)).unwrap();
    for at in [8, 12, 30, index.payload_offset() as usize - 3] {
        let mut bad = file.clone();
        bad[at] ^= 0x40;
        assert!(read_index(&mut Cursor::new(&bad)).is_err(), "flip at {at}");
    }
}

#[test]
fn iterate_over_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut all = Vec::new();
    for r in 0..3u64 {
        let imgs: Vec<_> = (0..5u64)
            .map(|i| {
                let id = r * 5 + i;
                let jpeg = SyntheticJpeg::new(16, 16, 4 + (id as usize % 5), id).encode();
                (jpeg, SampleMeta::new(id, id as i32, format!("{id}.jpg")))
            })
            .collect();
        let rec = encode_record(&imgs, 6).unwrap();
        let mut f = std::fs::File::create(dir.path().join(format!("r{r}.pcr"))).unwrap();
        write_record(&rec, &mut f).unwrap();
        all.extend(imgs);
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let got: Vec<_> = iterate(dir.path(), FidelityRequest::FULL, IterOptions::default())
        .unwrap()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(got.len(), all.len());
    for (img, (src, m)) in got.iter().zip(&all) {
        assert_eq!(img.meta.sample_id, m.sample_id);
        assert_eq!(&img.jpeg_bytes, src);
    }

    let labels: Vec<i32> = iterate(dir.path(), FidelityRequest::new(0), IterOptions::default())
        .unwrap()
        .map(|r| {
            let r = r.unwrap();
            assert!(r.jpeg_bytes.is_empty());
            r.meta.label
        })
        .collect();
    assert_eq!(labels, (0..15).collect::<Vec<_>>());
}

#[test]
fn iterate_surfaces_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = vec![(SyntheticJpeg::new(16, 16, 3, 1).encode(), SampleMeta::new(0, 0, "a"))];
    let rec = encode_record(&imgs, 3).unwrap();
    let mut good = Vec::new();
    write_record(&rec, &mut good).unwrap();
    std::fs::write(dir.path().join("a.pcr"), &good).unwrap();
    std::fs::write(dir.path().join("b.pcr"), &good[..good.len() - 1]).unwrap();
    std::fs::write(dir.path().join("c.pcr"), &good).unwrap();

    let strict: Vec<_> = iterate(dir.path(), FidelityRequest::FULL, IterOptions::default())
        .unwrap()
        .collect();
    assert_eq!(strict.len(), 2);
    assert!(strict[0].is_ok() && strict[1].is_err());

    let opts = IterOptions {
        permissive: true,
        ..IterOptions::default()
    };
    let mut it = iterate(dir.path(), FidelityRequest::FULL, opts).unwrap();
    let ok = it.by_ref().filter(|r| r.is_ok()).count();
    assert_eq!(ok, 2);
    assert_eq!(it.skipped_records(), 1);
}
