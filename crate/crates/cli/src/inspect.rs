use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context};
use pcr::container::container_overhead;
use pcr::perf_model::collect_stats_from_path;
use pcr::reader::open_record;
use pcr::{assemble, read_index, read_prefix, FidelityRequest, PcrIndex, SampleMeta};

use crate::{ExtractArgs, InspectArgs, StatsArgs};

pub fn inspect(args: &InspectArgs) -> anyhow::Result<()> {
    let mut f = BufReader::new(
        fs::File::open(&args.file).with_context(|| format!("opening {}", args.file.display()))?,
    );
    let (index, meta) = read_index(&mut f).with_context(|| args.file.display().to_string())?;
    let overhead = container_overhead(&meta, index.n_groups);
    println!("file         {}", args.file.display());
    println!("images       {}", index.n_images);
    println!("scan groups  {}", index.n_groups);
    println!("file bytes   {}", index.file_len());
    println!("payload at   {}", index.payload_offset());
    println!("overhead     {overhead} bytes");
    println!();
    println!("{:>5} {:>12} {:>12} {:>14}", "group", "offset", "bytes", "cum_mean_bytes");
    for row in group_rows(&index) {
        println!("{:>5} {:>12} {:>12} {:>14.1}", row.0, row.1, row.2, row.3);
    }
    if let Some(dir) = &args.csv {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("index.csv"), index_csv(&index, &meta))?;
        fs::write(dir.join("groups.csv"), groups_csv(&index))?;
    }
    Ok(())
}

/// `(group, offset, bytes, cumulative mean bytes per image)`.
fn group_rows(index: &PcrIndex) -> Vec<(usize, u64, u64, f64)> {
    let mut cum = 0u64;
    (1..=index.n_groups)
        .map(|g| {
            let len = index.group_len(g);
            cum += len;
            (
                g,
                index.group_offsets[g - 1],
                len,
                cum as f64 / index.n_images as f64,
            )
        })
        .collect()
}

fn groups_csv(index: &PcrIndex) -> String {
    let mut s = String::from("group,offset,bytes,cumulative_mean_bytes\n");
    for (g, off, len, mean) in group_rows(index) {
        let _ = writeln!(s, "{g},{off},{len},{mean}");
    }
    s
}

fn index_csv(index: &PcrIndex, meta: &[SampleMeta]) -> String {
    let mut s = String::from("image,sample_id,label,source_name,n_scans");
    for g in 1..=index.n_groups {
        let _ = write!(s, ",group_{g}");
    }
    s.push('\n');
    for (i, m) in meta.iter().enumerate() {
        let _ = write!(
            s,
            "{i},{},{},{},{}",
            m.sample_id,
            m.label,
            csv_field(&m.source_name),
            m.n_scans
        );
        for g in 1..=index.n_groups {
            let _ = write!(s, ",{}", index.image_group_len(i, g));
        }
        s.push('\n');
    }
    s
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

pub fn extract(args: &ExtractArgs) -> anyhow::Result<()> {
    let g = args.group as usize;
    let mut src = open_record(&args.file, false)
        .with_context(|| format!("opening {}", args.file.display()))?;
    let prefix = read_prefix(&mut src, FidelityRequest::new(g))
        .with_context(|| args.file.display().to_string())?;
    fs::create_dir_all(&args.out)?;
    for i in 0..prefix.n_images() {
        let img = assemble(&prefix, i, g)?;
        let path = args.out.join(output_name(&img.meta));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &img.jpeg_bytes).with_context(|| path.display().to_string())?;
    }
    println!("wrote {} images at scan group {g} to {}", prefix.n_images(), args.out.display());
    Ok(())
}

/// The stored source name when it is a plain relative path, otherwise
/// `<sample_id>.jpg`.
fn output_name(meta: &SampleMeta) -> PathBuf {
    let p = Path::new(&meta.source_name);
    let plain = !meta.source_name.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_)));
    if plain {
        p.to_path_buf()
    } else {
        PathBuf::from(format!("{}.jpg", meta.sample_id))
    }
}

pub fn stats(args: &StatsArgs) -> anyhow::Result<()> {
    match collect_stats_from_path(&args.path)? {
        Some(s) => {
            print!("{}", s.to_csv());
            Ok(())
        }
        None => bail!("no images under {}", args.path.display()),
    }
}
