//! Analytical I/O throughput model.
//!
//! A loader that reads records one at a time at bandwidth `W` delivers
//! `X_g = W / E[s(x, g)]` images per second when it reads through scan group
//! `g`, where `E[s(x, g)]` is the mean number of bytes an image occupies in
//! groups `1..=g`. The training system as a whole cannot outrun either the
//! loader or the compute unit, so its throughput is `min(X_c, X_g)`. When the
//! loader is the bottleneck, switching from group `a` to group `b` speeds
//! training up by `E[s(x, a)] / E[s(x, b)]`.
//!
//! Only means enter the model; the distribution of sizes does not.

use std::fmt::Write as _;
use std::path::Path;

use crate::container::PcrIndex;
use crate::error::Result;
use crate::reader::list_records;

/// Interquartile summary of per-image cumulative sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quartiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl Quartiles {
    /// Linear-interpolation quantiles of `values` (sorted in place).
    pub fn of(values: &mut [f64]) -> Quartiles {
        values.sort_by(f64::total_cmp);
        Quartiles {
            q25: quantile_sorted(values, 0.25),
            q50: quantile_sorted(values, 0.5),
            q75: quantile_sorted(values, 0.75),
        }
    }
}

/// Quantile `p` of sorted `values` by linear interpolation between order
/// statistics. `NaN` for an empty slice.
pub fn quantile_sorted(values: &[f64], p: f64) -> f64 {
    match values.len() {
        0 => f64::NAN,
        1 => values[0],
        n => {
            let h = p * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            values[lo] + (h - lo as f64) * (values[hi] - values[lo])
        }
    }
}

/// Mean cumulative image size per scan group over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeStats {
    /// `per_group_mean[g - 1]` = E[s(x, g)], bytes through group `g`.
    pub per_group_mean: Vec<f64>,
    /// E[s(x)], the mean full image size.
    pub baseline_mean: f64,
    pub n_samples: usize,
    pub per_group_distribution: Vec<Quartiles>,
}

impl SizeStats {
    /// Stats from explicit cumulative means, e.g. for what-if modeling.
    /// The last entry is taken as the baseline.
    pub fn from_means(per_group_mean: Vec<f64>) -> SizeStats {
        assert!(!per_group_mean.is_empty(), "at least one scan group");
        let baseline_mean = *per_group_mean.last().unwrap();
        let per_group_distribution = per_group_mean
            .iter()
            .map(|&m| Quartiles {
                q25: m,
                q50: m,
                q75: m,
            })
            .collect();
        SizeStats {
            per_group_mean,
            baseline_mean,
            n_samples: 0,
            per_group_distribution,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.per_group_mean.len()
    }

    /// E[s(x, g)] for `1 <= g <= G`.
    pub fn mean(&self, g: usize) -> f64 {
        self.per_group_mean[g - 1]
    }

    /// Baseline-to-group size ratio for each group, the "N x smaller" table.
    pub fn reduction_ratios(&self) -> Vec<f64> {
        self.per_group_mean
            .iter()
            .map(|&m| self.baseline_mean / m)
            .collect()
    }

    /// CSV with columns `group,cumulative_mean_bytes,q25,q50,q75`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,cumulative_mean_bytes,q25,q50,q75\n");
        for (g, (m, q)) in self
            .per_group_mean
            .iter()
            .zip(&self.per_group_distribution)
            .enumerate()
        {
            let _ = writeln!(s, "{},{},{},{},{}", g + 1, m, q.q25, q.q50, q.q75);
        }
        s
    }

    /// Parses the output of [`SizeStats::to_csv`]. The sample count is not
    /// stored and comes back as zero.
    pub fn from_csv(text: &str) -> std::result::Result<SizeStats, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "group,cumulative_mean_bytes,q25,q50,q75" => {}
            _ => return Err("missing size stats header".into()),
        }
        let mut per_group_mean = Vec::new();
        let mut per_group_distribution = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || format!("bad size stats row {}: {line:?}", i + 1);
            if fields.len() != 5 || fields[0].parse::<usize>().ok() != Some(i + 1) {
                return Err(bad());
            }
            let v: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            per_group_mean.push(v[0]);
            per_group_distribution.push(Quartiles {
                q25: v[1],
                q50: v[2],
                q75: v[3],
            });
        }
        let Some(&baseline_mean) = per_group_mean.last() else {
            return Err("size stats has no groups".into());
        };
        Ok(SizeStats {
            per_group_mean,
            baseline_mean,
            n_samples: 0,
            per_group_distribution,
        })
    }
}

/// Size statistics from record indexes alone.
///
/// Records may differ in group count; an image's cumulative size beyond its
/// record's last group is its full size.
pub fn collect_stats(indexes: &[PcrIndex]) -> Option<SizeStats> {
    let n_groups = indexes.iter().map(|i| i.n_groups).max()?;
    let n: usize = indexes.iter().map(|i| i.n_images).sum();
    if n == 0 {
        return None;
    }
    let mut cumulative: Vec<Vec<f64>> = vec![Vec::with_capacity(n); n_groups];
    let mut full = Vec::with_capacity(n);
    for idx in indexes {
        for i in 0..idx.n_images {
            let mut acc = 0u64;
            for (g, col) in cumulative.iter_mut().enumerate() {
                if g < idx.n_groups {
                    acc += idx.group_lengths[g][i] as u64;
                }
                col.push(acc as f64);
            }
            full.push(acc as f64);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let per_group_mean = cumulative.iter().map(|c| mean(c)).collect();
    let per_group_distribution = cumulative.iter_mut().map(|c| Quartiles::of(c)).collect();
    Some(SizeStats {
        per_group_mean,
        baseline_mean: mean(&full),
        n_samples: n,
        per_group_distribution,
    })
}

/// Reads the index of every record under `path` and summarizes sizes.
pub fn collect_stats_from_path(path: &Path) -> Result<Option<SizeStats>> {
    let mut indexes = Vec::new();
    for p in list_records(path)? {
        let mut f = std::io::BufReader::new(std::fs::File::open(&p).map_err(|e| {
            crate::Error::from(e).in_file(&p)
        })?);
        let (idx, _) = crate::container::read_index(&mut f).map_err(|e| e.in_file(&p))?;
        indexes.push(idx);
    }
    Ok(collect_stats(&indexes))
}

/// Fixed per-record read cost, the constant term in the record read time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordOverhead {
    pub seconds: f64,
    pub images_per_record: usize,
}

/// Bandwidth, compute rate and size statistics of a training pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputModel {
    /// Read bandwidth `W`, bytes per second.
    pub bandwidth: f64,
    /// Compute throughput `X_c`, images per second.
    pub compute_rate: f64,
    pub stats: SizeStats,
    /// Optional per-record seek/setup cost; zero by default.
    pub overhead: Option<RecordOverhead>,
}

/// System throughput at one scan group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemThroughput {
    /// Images per second, `min(X_c, X_g)`.
    pub images_per_sec: f64,
    /// Compute utilization `min(1, X_g / X_c)`.
    pub utilization: f64,
    pub data_bound: bool,
}

impl ThroughputModel {
    pub fn new(bandwidth: f64, compute_rate: f64, stats: SizeStats) -> Self {
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        assert!(compute_rate > 0.0, "compute rate must be positive");
        ThroughputModel {
            bandwidth,
            compute_rate,
            stats,
            overhead: None,
        }
    }

    pub fn with_overhead(mut self, overhead: RecordOverhead) -> Self {
        self.overhead = Some(overhead);
        self
    }

    /// Loader throughput `X_g = W / E[s(x, g)]`, images per second.
    ///
    /// With a record overhead `c` and `n` images per record this becomes
    /// `n / (c + n E[s(x, g)] / W)`.
    pub fn pipeline_throughput(&self, g: usize) -> f64 {
        let mean = self.stats.mean(g);
        match self.overhead {
            Some(o) if o.seconds > 0.0 => {
                let n = o.images_per_record as f64;
                n / (o.seconds + n * mean / self.bandwidth)
            }
            _ => self.bandwidth / mean,
        }
    }

    /// Baseline loader throughput at full image size.
    pub fn baseline_throughput(&self) -> f64 {
        self.bandwidth / self.stats.baseline_mean
    }

    pub fn system_throughput(&self, g: usize) -> SystemThroughput {
        let xg = self.pipeline_throughput(g);
        let xc = self.compute_rate;
        SystemThroughput {
            images_per_sec: xc.min(xg),
            utilization: (xg / xc).min(1.0),
            data_bound: xg < xc,
        }
    }

    /// Data-bound speedup from `from_g` to `to_g`: `E[s(x, from)] / E[s(x, to)]`.
    ///
    /// This is the ceiling on the speedup; it is attained only while the
    /// pipeline stays data bound at `to_g`.
    pub fn speedup(&self, from_g: usize, to_g: usize) -> f64 {
        speedup(&self.stats, from_g, to_g)
    }
}

/// Size ratio `E[s(x, from)] / E[s(x, to)]`.
pub fn speedup(stats: &SizeStats, from_g: usize, to_g: usize) -> f64 {
    stats.mean(from_g) / stats.mean(to_g)
}
