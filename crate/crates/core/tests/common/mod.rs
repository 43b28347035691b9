#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pcr::RgbImage;

pub fn testdata() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../testdata")
}

/// Reads a binary PPM (P6, maxval 255).
pub fn read_ppm(path: &Path) -> RgbImage {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes[pos] == b'#' {
            while bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap().to_string());
    }
    assert_eq!(fields[0], "P6");
    assert_eq!(fields[3], "255");
    let w: usize = fields[1].parse().unwrap();
    let h: usize = fields[2].parse().unwrap();
    RgbImage::new(w, h, bytes[pos + 1..pos + 1 + w * h * 3].to_vec())
}

/// Reference MS-SSIM rows: (name, scales, value).
pub fn mssim_reference() -> Vec<(String, usize, f64)> {
    let text = std::fs::read_to_string(testdata().join("mssim/reference.csv")).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

/// Every progressive fixture, sorted.
pub fn progressive_files() -> Vec<PathBuf> {
    let root = testdata().join("progressive");
    let mut out = Vec::new();
    for class in sorted_dir(&root) {
        out.extend(sorted_dir(&class));
    }
    out
}

pub fn sorted_dir(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}
