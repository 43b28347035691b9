//! Shared inputs for the criterion benches.

use std::path::{Path, PathBuf};

use pcr::{encode_record, write_record, SampleMeta};

pub fn testdata() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../testdata")
}

/// The progressive fixtures in sorted order, labelled by class directory.
pub fn fixture_corpus() -> Vec<(Vec<u8>, SampleMeta)> {
    let root = testdata().join("progressive");
    let mut classes: Vec<PathBuf> = std::fs::read_dir(&root)
        .expect("fixture directory")
        .map(|e| e.unwrap().path())
        .collect();
    classes.sort();
    let mut out = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(class)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        for f in files {
            let name = f.strip_prefix(&root).unwrap().to_string_lossy().into_owned();
            let meta = SampleMeta::new(out.len() as u64, label as i32, name);
            out.push((std::fs::read(&f).unwrap(), meta));
        }
    }
    out
}

/// One record file holding `images`, as bytes.
pub fn record_bytes(images: &[(Vec<u8>, SampleMeta)], groups: usize) -> Vec<u8> {
    let rec = encode_record(images, groups).expect("fixtures encode");
    let mut buf = Vec::new();
    write_record(&rec, &mut buf).unwrap();
    buf
}
