use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context};
use pcr::jpeg_scan::{parse_scans, ScanError, ScanMap};
use pcr::{write_record, RecordBuilder, SampleMeta};
use rayon::prelude::*;

use crate::{usage, with_threads, EncodeArgs};

/// One input image after parsing.
struct Parsed {
    rel: String,
    label: i32,
    bytes: Vec<u8>,
    map: ScanMap,
}

pub fn run(args: &EncodeArgs) -> anyhow::Result<()> {
    if let Some(t) = &args.transcoder {
        if t.split_whitespace().next().is_none() {
            return Err(usage("--transcoder is empty"));
        }
    }
    if !args.input.is_dir() {
        bail!("input {} is not a directory", args.input.display());
    }
    let files = list_jpegs(&args.input)?;
    if files.is_empty() {
        bail!("no JPEG files under {}", args.input.display());
    }
    let labels = Labels::resolve(&args.input, args.labels.as_deref(), &files)?;

    let transcoder = args.transcoder.as_deref();
    let parsed: Vec<Result<Parsed, String>> = with_threads(args.threads, || {
        files
            .par_iter()
            .map(|rel| {
                let label = labels.get(rel)?;
                let path = args.input.join(rel);
                let (bytes, map) = load(&path, transcoder)?;
                Ok(Parsed {
                    rel: rel.clone(),
                    label,
                    bytes,
                    map,
                })
            })
            .collect()
    })?;

    let mut failures = 0;
    for (rel, p) in files.iter().zip(&parsed) {
        if let Err(e) = p {
            eprintln!("{rel}: {e}");
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} of {} images could not be encoded; nothing written", files.len());
    }
    let images: Vec<Parsed> = parsed.into_iter().map(|p| p.unwrap()).collect();

    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let per_record = args.images_per_record as usize;
    let groups = args.groups as usize;
    let chunks: Vec<(usize, &[Parsed])> = images.chunks(per_record).enumerate().collect();
    let written: Vec<anyhow::Result<(PathBuf, u64)>> = with_threads(args.threads, || {
        chunks
            .par_iter()
            .map(|&(r, chunk)| write_chunk(&args.output, r, r * per_record, chunk, groups))
            .collect()
    })?;
    let mut payload = 0u64;
    let mut outputs = BTreeSet::new();
    for w in written {
        let (path, p) = w?;
        payload += p;
        outputs.insert(path);
    }
    remove_stale(&args.output, &outputs)?;
    if labels.from_dirs {
        write_classes(&args.output, &labels.classes)?;
    }

    let input: u64 = images.iter().map(|p| p.bytes.len() as u64).sum();
    println!(
        "encoded {} images into {} records ({} groups); payload bytes {} {} input bytes {}",
        images.len(),
        outputs.len(),
        groups,
        payload,
        if payload == input { "==" } else { "!=" },
        input
    );
    if payload != input {
        bail!("payload size does not match input size");
    }
    Ok(())
}

/// JPEG files under `root`, as sorted `/`-separated relative paths.
fn list_jpegs(root: &Path) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let is_jpeg = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("jpg") || e.eq_ignore_ascii_case("jpeg"));
        if !is_jpeg {
            continue;
        }
        let rel = entry.path().strip_prefix(root)?;
        let rel: Vec<&str> = rel
            .components()
            .map(|c| c.as_os_str().to_str().context("non-UTF-8 file name"))
            .collect::<anyhow::Result<_>>()?;
        out.push(rel.join("/"));
    }
    out.sort();
    Ok(out)
}

fn load(path: &Path, transcoder: Option<&str>) -> Result<(Vec<u8>, ScanMap), String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    match parse_scans(&bytes) {
        Ok(map) => Ok((bytes, map)),
        Err(ScanError::NotProgressive { .. }) if transcoder.is_some() => {
            let out = transcode(transcoder.unwrap(), path)?;
            let map = parse_scans(&out).map_err(|e| format!("after transcoding: {e}"))?;
            Ok((out, map))
        }
        Err(e) => Err(e.to_string()),
    }
}

fn transcode(cmd: &str, path: &Path) -> Result<Vec<u8>, String> {
    let mut parts = cmd.split_whitespace();
    let prog = parts.next().unwrap_or_default();
    let out = Command::new(prog)
        .args(parts)
        .arg(path)
        .output()
        .map_err(|e| format!("running {prog}: {e}"))?;
    if !out.status.success() {
        let msg = String::from_utf8_lossy(&out.stderr);
        return Err(format!("{prog} failed ({}): {}", out.status, msg.trim()));
    }
    Ok(out.stdout)
}

fn record_name(r: usize) -> String {
    format!("records-{r:05}.pcr")
}

fn write_chunk(
    dir: &Path,
    r: usize,
    first_id: usize,
    chunk: &[Parsed],
    groups: usize,
) -> anyhow::Result<(PathBuf, u64)> {
    let mut b = RecordBuilder::new(groups)?;
    for (k, p) in chunk.iter().enumerate() {
        let meta = SampleMeta::new((first_id + k) as u64, p.label, p.rel.clone());
        b.push_parsed(&p.bytes, &p.map, meta)
            .with_context(|| p.rel.clone())?;
    }
    let record = b.finish()?;
    let path = dir.join(record_name(r));
    let tmp = dir.join(format!(".{}.tmp", record_name(r)));
    let mut w = BufWriter::new(fs::File::create(&tmp)?);
    write_record(&record, &mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, &path)?;
    Ok((path, record.payload_len()))
}

/// Deletes `records-NNNNN.pcr` files from an earlier, larger run.
fn remove_stale(dir: &Path, keep: &BTreeSet<PathBuf>) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let ours = name.len() == "records-00000.pcr".len()
            && name.starts_with("records-")
            && name.ends_with(".pcr")
            && name[8..13].bytes().all(|b| b.is_ascii_digit());
        if ours && !keep.contains(&path) {
            eprintln!("removing stale {}", path.display());
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}

fn write_classes(dir: &Path, classes: &[String]) -> anyhow::Result<()> {
    let mut s = String::new();
    for (i, c) in classes.iter().enumerate() {
        s.push_str(&format!("{i}\t{c}\n"));
    }
    fs::write(dir.join("classes.tsv"), s)?;
    Ok(())
}

struct Labels {
    by_path: HashMap<String, i32>,
    /// Labels came from subdirectory names; `classes[label]` is the name.
    from_dirs: bool,
    classes: Vec<String>,
}

impl Labels {
    fn resolve(input: &Path, manifest: Option<&Path>, files: &[String]) -> anyhow::Result<Labels> {
        let default = input.join("labels.tsv");
        let manifest = match manifest {
            Some(m) => Some(m.to_path_buf()),
            None if default.is_file() => Some(default),
            None => None,
        };
        if let Some(m) = manifest {
            return Ok(Labels {
                by_path: read_manifest(&m)?,
                from_dirs: false,
                classes: Vec::new(),
            });
        }
        let classes: Vec<String> = files
            .iter()
            .filter_map(|f| f.split_once('/').map(|(d, _)| d.to_string()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<&str, i32> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as i32))
            .collect();
        let by_path = files
            .iter()
            .map(|f| {
                let label = f.split_once('/').map_or(-1, |(d, _)| index[d]);
                (f.clone(), label)
            })
            .collect();
        Ok(Labels {
            by_path,
            from_dirs: !classes.is_empty(),
            classes,
        })
    }

    fn get(&self, rel: &str) -> Result<i32, String> {
        self.by_path
            .get(rel)
            .copied()
            .ok_or_else(|| "not listed in the labels manifest".to_string())
    }
}

fn read_manifest(path: &Path) -> anyhow::Result<HashMap<String, i32>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (rel, label) = line
            .split_once('\t')
            .with_context(|| format!("{}:{}: expected path<TAB>label", path.display(), n + 1))?;
        let label: i32 = label
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad label {label:?}", path.display(), n + 1))?;
        out.insert(rel.to_string(), label);
    }
    Ok(out)
}
