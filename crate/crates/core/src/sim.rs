//! Discrete-event simulation of a bandwidth-limited loader feeding a
//! compute unit.
//!
//! Each node runs a closed-loop loader: it fetches one record at a time,
//! paying for every byte with tokens from a per-node token bucket, and parks
//! the record in a bounded prefetch queue. The compute unit takes records
//! off the queue in order and spends `n / X_c` seconds on each. Time is an
//! integer nanosecond virtual clock, so a configuration always produces the
//! same trace.
//!
//! Nodes share nothing; a multi-node run is the sum of independent per-node
//! runs.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::perf_model::SizeStats;

pub type Nanos = u64;
pub const NANOS_PER_SEC: f64 = 1e9;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::ConfigInvalid(msg.into())
}

/// Byte-denominated token bucket on the virtual clock.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBucket {
    /// Refill rate, bytes per second. May be infinite.
    pub rate: f64,
    /// Maximum stored tokens, bytes.
    pub capacity: f64,
    pub tokens: f64,
    pub last_refill: Nanos,
}

impl TokenBucket {
    /// A full bucket at time zero.
    pub fn new(rate: f64, capacity: f64) -> Self {
        TokenBucket {
            rate,
            capacity,
            tokens: capacity,
            last_refill: 0,
        }
    }

    /// Tokens available at `now` (saturating at capacity).
    pub fn tokens_at(&self, now: Nanos) -> f64 {
        let dt = now.saturating_sub(self.last_refill) as f64 / NANOS_PER_SEC;
        if self.rate.is_infinite() {
            return self.capacity;
        }
        (self.tokens + self.rate * dt).min(self.capacity)
    }

    pub fn refill(&mut self, now: Nanos) {
        if now > self.last_refill {
            self.tokens = self.tokens_at(now);
            self.last_refill = now;
        }
    }

    /// Reads `bytes` starting at `now`, returning when the read completes.
    ///
    /// Stored tokens are spent first; the remainder is paid as tokens
    /// accrue, so a read larger than the capacity streams at `rate`.
    pub fn consume(&mut self, now: Nanos, bytes: f64) -> Nanos {
        self.refill(now);
        if self.rate.is_infinite() || self.tokens >= bytes {
            if self.rate.is_finite() {
                self.tokens -= bytes;
            }
            return now;
        }
        let deficit = bytes - self.tokens;
        let wait = (deficit / self.rate * NANOS_PER_SEC).ceil() as Nanos;
        let accrued = self.rate * wait as f64 / NANOS_PER_SEC;
        self.tokens = (accrued - deficit).clamp(0.0, self.capacity);
        self.last_refill = now + wait;
        now + wait
    }
}

/// How long to run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimExtent {
    /// Records per node.
    Records(u64),
    /// Virtual seconds.
    Seconds(f64),
    /// Passes over `dataset_images`.
    Epochs(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_nodes: usize,
    /// Aggregate bandwidth across nodes, bytes per second; each node's
    /// bucket refills at `bandwidth / n_nodes`.
    pub bandwidth: f64,
    /// Bucket capacity in seconds of refill.
    pub bucket_seconds: f64,
    /// Bytes per record through each scan group, `record_sizes[g - 1]`.
    pub record_sizes: Vec<f64>,
    pub scan_group: usize,
    pub images_per_record: usize,
    /// Per-node compute throughput, images per second. May be infinite.
    pub compute_rate: f64,
    pub prefetch_depth: usize,
    pub extent: SimExtent,
    pub dataset_images: Option<u64>,
    /// Leading batches excluded from steady-state measurements; `None`
    /// uses [`SimConfig::settling_batches`].
    pub warmup_batches: Option<usize>,
    /// Relative spread of record sizes; each record is scaled by a uniform
    /// draw from `1 +- size_jitter`.
    pub size_jitter: f64,
    pub seed: u64,
}

impl SimConfig {
    /// A single-node config with default bucket, queue and warm-up.
    pub fn new(
        bandwidth: f64,
        record_sizes: Vec<f64>,
        images_per_record: usize,
        compute_rate: f64,
    ) -> Self {
        let scan_group = record_sizes.len();
        SimConfig {
            n_nodes: 1,
            bandwidth,
            bucket_seconds: 1.0,
            record_sizes,
            scan_group,
            images_per_record,
            compute_rate,
            prefetch_depth: 2,
            extent: SimExtent::Records(100),
            dataset_images: None,
            warmup_batches: None,
            size_jitter: 0.0,
            seed: 0,
        }
    }

    /// Record sizes from mean cumulative image sizes.
    pub fn record_sizes_from_stats(stats: &SizeStats, images_per_record: usize) -> Vec<f64> {
        stats
            .per_group_mean
            .iter()
            .map(|m| m * images_per_record as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_nodes == 0 {
            return Err(invalid("nodes must be positive"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(invalid("bandwidth must be positive"));
        }
        if !(self.compute_rate > 0.0) {
            return Err(invalid("compute_rate must be positive"));
        }
        if self.bandwidth.is_infinite() && self.compute_rate.is_infinite() {
            return Err(invalid("bandwidth and compute_rate cannot both be infinite"));
        }
        if !(self.bucket_seconds > 0.0 && self.bucket_seconds.is_finite()) {
            return Err(invalid("bucket_seconds must be positive and finite"));
        }
        if self.record_sizes.is_empty() || self.record_sizes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("record_sizes must be positive and finite"));
        }
        if !(1..=self.record_sizes.len()).contains(&self.scan_group) {
            return Err(invalid(format!(
                "scan_group {} outside 1..={}",
                self.scan_group,
                self.record_sizes.len()
            )));
        }
        if self.images_per_record == 0 || self.prefetch_depth == 0 {
            return Err(invalid("images_per_record and prefetch_depth must be positive"));
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err(invalid("size_jitter must be in [0, 1)"));
        }
        match self.extent {
            SimExtent::Records(0) => return Err(invalid("records must be positive")),
            SimExtent::Seconds(s) if !(s > 0.0 && s.is_finite()) => {
                return Err(invalid("seconds must be positive and finite"))
            }
            SimExtent::Epochs(e) if !(e > 0.0 && e.is_finite()) => {
                return Err(invalid("epochs must be positive and finite"))
            }
            SimExtent::Epochs(_) if self.dataset_images.is_none() => {
                return Err(invalid("epochs requires dataset_images"))
            }
            _ => {}
        }
        if self.warmup_batches.unwrap_or(0) as u64 >= self.max_records().unwrap_or(u64::MAX) {
            return Err(invalid("warmup_batches must be below the record count"));
        }
        Ok(())
    }

    /// Batches before a node settles: the queue fill plus the records
    /// funded by the initially full bucket.
    ///
    /// While the queue paces the loader at the compute rate, each record
    /// drains the bucket by its size less what accrues during one compute
    /// step, so near the regime boundary this grows without bound.
    pub fn settling_batches(&self) -> usize {
        let rate = self.node_rate();
        let base = self.record_sizes[self.scan_group - 1];
        let net = base - rate * self.images_per_record as f64 / self.compute_rate;
        let burst = if rate.is_finite() && net > 0.0 {
            (rate * self.bucket_seconds / net).ceil().min(1e15) as usize
        } else {
            0
        };
        self.prefetch_depth.saturating_add(burst).saturating_add(1)
    }

    fn node_rate(&self) -> f64 {
        self.bandwidth / self.n_nodes as f64
    }

    fn max_records(&self) -> Option<u64> {
        match self.extent {
            SimExtent::Records(n) => Some(n),
            SimExtent::Seconds(_) => None,
            SimExtent::Epochs(e) => {
                let images = e * self.dataset_images.unwrap_or(0) as f64;
                let per_node = images / (self.n_nodes * self.images_per_record) as f64;
                Some(per_node.ceil().max(1.0) as u64)
            }
        }
    }

    /// Images one epoch covers; defaults to everything simulated.
    pub fn epoch_images(&self, trace: &SimTrace) -> f64 {
        match self.dataset_images {
            Some(n) => n as f64,
            None => (trace.batches.len() * self.images_per_record) as f64,
        }
    }

    /// Parses the TOML config format. `base` resolves a relative
    /// `stats_csv` path.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<(SimConfig, Option<SweepGrid>), SimError> {
        let raw: RawConfig = toml::from_str(text)?;
        raw.into_config(base)
    }

    pub fn from_file(path: &Path) -> Result<(SimConfig, Option<SweepGrid>), SimError> {
        let text = std::fs::read_to_string(path)?;
        SimConfig::from_toml(&text, path.parent())
    }
}

/// One record's trip through a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchTiming {
    pub node: usize,
    pub batch: u64,
    pub fetch_start: Nanos,
    pub fetch_end: Nanos,
    pub compute_start: Nanos,
    pub compute_end: Nanos,
    /// Compute idle time waiting on this batch.
    pub stall: Nanos,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    /// Batches of all nodes, node-major.
    pub batches: Vec<BatchTiming>,
    /// Steady-state aggregate throughput, images per second.
    pub images_per_sec: f64,
    /// Summed stall time across nodes.
    pub total_stall: Nanos,
    /// Mean over nodes of stall time divided by run time.
    pub stall_fraction: f64,
    /// Virtual time at which the last node finished.
    pub end_time: Nanos,
    /// Every node ran past its warm-up batches.
    pub settled: bool,
}

impl SimTrace {
    pub fn node(&self, node: usize) -> impl Iterator<Item = &BatchTiming> {
        self.batches.iter().filter(move |b| b.node == node)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "node,batch,fetch_start_ns,fetch_end_ns,compute_start_ns,compute_end_ns,stall_ns,bytes\n",
        );
        for b in &self.batches {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                b.node, b.batch, b.fetch_start, b.fetch_end, b.compute_start, b.compute_end, b.stall, b.bytes
            );
        }
        s
    }
}

struct NodeRun {
    batches: Vec<BatchTiming>,
    settled: bool,
    steady_rate: f64,
    stall: Nanos,
}

fn simulate_node(cfg: &SimConfig, node: usize) -> NodeRun {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(node as u64));
    let rate = cfg.node_rate();
    let capacity = if rate.is_finite() {
        rate * cfg.bucket_seconds
    } else {
        f64::INFINITY
    };
    let mut bucket = TokenBucket::new(rate, capacity);
    let base = cfg.record_sizes[cfg.scan_group - 1];
    let n = cfg.images_per_record;
    let compute_ns = if cfg.compute_rate.is_infinite() {
        0
    } else {
        (n as f64 / cfg.compute_rate * NANOS_PER_SEC).round() as Nanos
    };
    let limit = cfg.max_records();
    let deadline = match cfg.extent {
        SimExtent::Seconds(s) => Some((s * NANOS_PER_SEC) as Nanos),
        _ => None,
    };

    let mut batches: Vec<BatchTiming> = Vec::new();
    let mut stall_total = 0;
    let mut k = 0u64;
    loop {
        if limit.is_some_and(|l| k >= l) {
            break;
        }
        let prev_fetch_end = batches.last().map_or(0, |b| b.fetch_end);
        let prev_compute_end = batches.last().map_or(0, |b| b.compute_end);
        if deadline.is_some_and(|d| prev_compute_end >= d) {
            break;
        }
        // A queue slot frees when batch k - depth starts computing.
        let slot_free = if (k as usize) >= cfg.prefetch_depth {
            batches[k as usize - cfg.prefetch_depth].compute_start
        } else {
            0
        };
        let size = if cfg.size_jitter > 0.0 {
            base * (1.0 + cfg.size_jitter * rng.gen_range(-1.0..=1.0))
        } else {
            base
        };
        let fetch_start = prev_fetch_end.max(slot_free);
        let fetch_end = bucket.consume(fetch_start, size);
        let compute_start = fetch_end.max(prev_compute_end);
        let stall = fetch_end.saturating_sub(prev_compute_end);
        stall_total += stall;
        batches.push(BatchTiming {
            node,
            batch: k,
            fetch_start,
            fetch_end,
            compute_start,
            compute_end: compute_start + compute_ns,
            stall,
            bytes: size.round() as u64,
        });
        k += 1;
    }

    let warmup = cfg.warmup_batches.unwrap_or_else(|| cfg.settling_batches());
    let settled = warmup < batches.len();
    let w = warmup.min(batches.len().saturating_sub(1));
    let t0 = if w == 0 { 0 } else { batches[w - 1].compute_end };
    let t1 = batches.last().map_or(0, |b| b.compute_end);
    let images = ((batches.len() - w) * n) as f64;
    let steady_rate = if t1 > t0 {
        images / ((t1 - t0) as f64 / NANOS_PER_SEC)
    } else {
        f64::INFINITY
    };
    NodeRun {
        batches,
        settled,
        steady_rate,
        stall: stall_total,
    }
}

/// Runs the simulation described by `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let runs: Vec<NodeRun> = (0..cfg.n_nodes).map(|n| simulate_node(cfg, n)).collect();
    let images_per_sec = runs.iter().map(|r| r.steady_rate).sum();
    let total_stall = runs.iter().map(|r| r.stall).sum();
    let end_time = runs
        .iter()
        .filter_map(|r| r.batches.last().map(|b| b.compute_end))
        .max()
        .unwrap_or(0);
    let stall_fraction = runs
        .iter()
        .map(|r| {
            let end = r.batches.last().map_or(0, |b| b.compute_end);
            if end == 0 {
                0.0
            } else {
                r.stall as f64 / end as f64
            }
        })
        .sum::<f64>()
        / runs.len() as f64;
    let settled = runs.iter().all(|r| r.settled);
    Ok(SimTrace {
        settled,
        batches: runs.into_iter().flat_map(|r| r.batches).collect(),
        images_per_sec,
        total_stall,
        stall_fraction,
        end_time,
    })
}

/// Seconds to train `n_epochs` over `dataset_images` at the trace's
/// steady-state throughput.
pub fn project_time_to_epoch(trace: &SimTrace, dataset_images: f64, n_epochs: f64) -> f64 {
    n_epochs * dataset_images / trace.images_per_sec
}

/// Bandwidths and scan groups to cross in a sweep.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub bandwidths: Vec<f64>,
    pub scan_groups: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub bandwidth: f64,
    pub scan_group: usize,
    pub images_per_sec: f64,
    pub stall_fraction: f64,
    pub epoch_seconds: f64,
}

#[derive(Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Cells that failed, with their error.
    pub errors: Vec<(f64, usize, SimError)>,
}

impl SweepResult {
    /// CSV with columns
    /// `bandwidth,scan_group,images_per_sec,stall_fraction,epoch_seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bandwidth,scan_group,images_per_sec,stall_fraction,epoch_seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.bandwidth, r.scan_group, r.images_per_sec, r.stall_fraction, r.epoch_seconds
            );
        }
        s
    }
}

/// Simulates every (bandwidth, scan group) cell of `grid` on top of `base`.
///
/// Rows are bandwidth-major in grid order. Cells run in parallel; the
/// result does not depend on scheduling.
pub fn sweep(base: &SimConfig, grid: &SweepGrid) -> SweepResult {
    let cells: Vec<(f64, usize)> = grid
        .bandwidths
        .iter()
        .flat_map(|&b| grid.scan_groups.iter().map(move |&g| (b, g)))
        .collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(bandwidth, scan_group)| {
            let cfg = SimConfig {
                bandwidth,
                scan_group,
                ..base.clone()
            };
            simulate(&cfg).map(|t| SweepRow {
                bandwidth,
                scan_group,
                images_per_sec: t.images_per_sec,
                stall_fraction: t.stall_fraction,
                epoch_seconds: project_time_to_epoch(&t, cfg.epoch_images(&t), 1.0),
            })
        })
        .collect();
    let mut out = SweepResult {
        rows: Vec::new(),
        errors: Vec::new(),
    };
    for ((b, g), r) in cells.into_iter().zip(results) {
        match r {
            Ok(row) => out.rows.push(row),
            Err(e) => out.errors.push((b, g, e)),
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "one")]
    nodes: usize,
    bandwidth: f64,
    #[serde(default = "one_f")]
    bucket_seconds: f64,
    record_sizes: Option<Vec<f64>>,
    mean_image_sizes: Option<Vec<f64>>,
    stats_csv: Option<String>,
    scan_group: Option<usize>,
    images_per_record: usize,
    compute_rate: f64,
    #[serde(default = "two")]
    prefetch_depth: usize,
    records: Option<u64>,
    seconds: Option<f64>,
    epochs: Option<f64>,
    dataset_images: Option<u64>,
    warmup_batches: Option<usize>,
    #[serde(default)]
    size_jitter: f64,
    #[serde(default)]
    seed: u64,
    sweep: Option<SweepGrid>,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn two() -> usize {
    2
}

impl RawConfig {
    fn into_config(self, base: Option<&Path>) -> Result<(SimConfig, Option<SweepGrid>), SimError> {
        let n = self.images_per_record;
        let record_sizes = match (self.record_sizes, self.mean_image_sizes, self.stats_csv) {
            (Some(r), None, None) => r,
            (None, Some(m), None) => m.iter().map(|s| s * n as f64).collect(),
            (None, None, Some(p)) => {
                let path = match base {
                    Some(b) => b.join(p),
                    None => p.into(),
                };
                let text = std::fs::read_to_string(&path)?;
                let stats = SizeStats::from_csv(&text)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                SimConfig::record_sizes_from_stats(&stats, n)
            }
            _ => {
                return Err(invalid(
                    "give exactly one of record_sizes, mean_image_sizes, stats_csv",
                ))
            }
        };
        let extent = match (self.records, self.seconds, self.epochs) {
            (Some(r), None, None) => SimExtent::Records(r),
            (None, Some(s), None) => SimExtent::Seconds(s),
            (None, None, Some(e)) => SimExtent::Epochs(e),
            (None, None, None) => SimExtent::Records(100),
            _ => return Err(invalid("give at most one of records, seconds, epochs")),
        };
        let scan_group = self.scan_group.unwrap_or(record_sizes.len());
        let cfg = SimConfig {
            n_nodes: self.nodes,
            bandwidth: self.bandwidth,
            bucket_seconds: self.bucket_seconds,
            record_sizes,
            scan_group,
            images_per_record: n,
            compute_rate: self.compute_rate,
            prefetch_depth: self.prefetch_depth,
            extent,
            dataset_images: self.dataset_images,
            warmup_batches: self.warmup_batches,
            size_jitter: self.size_jitter,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok((cfg, self.sweep))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIB: f64 = 1024.0 * 1024.0;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn bucket_refills_and_saturates() {
        let mut b = TokenBucket::new(100.0, 50.0);
        assert_eq!(b.consume(0, 50.0), 0);
        assert_eq!(b.tokens, 0.0);
        assert_eq!(b.tokens_at(250_000_000), 25.0);
        assert_eq!(b.tokens_at(10_000_000_000), 50.0);
        // 80 bytes from an empty bucket at 100 B/s take 0.8 s.
        assert_eq!(b.consume(0, 80.0), 800_000_000);
        assert!(b.tokens >= 0.0 && b.tokens <= b.capacity);
    }

    #[test]
    fn infinite_bucket_never_blocks() {
        let mut b = TokenBucket::new(f64::INFINITY, f64::INFINITY);
        assert_eq!(b.consume(5, 1e18), 5);
    }

    #[test]
    fn data_bound_matches_closed_form() {
        let s = 64.0 * MIB;
        let r = 100.0 * MIB;
        let cfg = SimConfig::new(r, vec![s], 512, f64::INFINITY);
        let t = simulate(&cfg).unwrap();
        let expected = 512.0 * r / s;
        assert!(rel(t.images_per_sec, expected) < 0.01, "{} vs {expected}", t.images_per_sec);
    }

    #[test]
    fn compute_bound_matches_compute_rate() {
        let cfg = SimConfig::new(f64::INFINITY, vec![1e6], 100, 450.0);
        let t = simulate(&cfg).unwrap();
        assert!(rel(t.images_per_sec, 450.0) < 0.01);
        assert_eq!(t.total_stall, 0);
    }

    #[test]
    fn halving_record_size_doubles_throughput() {
        let mk = |s: f64| SimConfig::new(50.0 * MIB, vec![s], 256, f64::INFINITY);
        let a = simulate(&mk(40.0 * MIB)).unwrap().images_per_sec;
        let b = simulate(&mk(20.0 * MIB)).unwrap().images_per_sec;
        assert!(rel(b / a, 2.0) < 0.01);
    }

    #[test]
    fn trace_invariants() {
        let mut cfg = SimConfig::new(30.0 * MIB, vec![8.0 * MIB, 16.0 * MIB], 64, 300.0);
        cfg.size_jitter = 0.3;
        cfg.prefetch_depth = 3;
        cfg.n_nodes = 2;
        cfg.bandwidth = 60.0 * MIB;
        let t = simulate(&cfg).unwrap();
        for node in 0..2 {
            let b: Vec<_> = t.node(node).copied().collect();
            assert_eq!(b.len(), 100);
            let mut prev_end = 0;
            let mut bytes = 0u64;
            for (k, x) in b.iter().enumerate() {
                assert!(x.compute_start >= x.fetch_end);
                assert_eq!(x.stall, x.fetch_end.saturating_sub(prev_end));
                if k >= 3 {
                    assert!(x.fetch_start >= b[k - 3].compute_start);
                }
                bytes += x.bytes;
                // Tokens: capacity plus accrual up to this fetch.
                let budget = 30.0 * MIB * (1.0 + x.fetch_end as f64 / 1e9);
                assert!(bytes as f64 <= budget + k as f64 + 1.0);
                prev_end = x.compute_end;
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut cfg = SimConfig::new(10.0 * MIB, vec![3.0 * MIB], 32, 200.0);
        cfg.size_jitter = 0.5;
        cfg.seed = 42;
        assert_eq!(simulate(&cfg).unwrap().to_csv(), simulate(&cfg).unwrap().to_csv());
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(simulate(&cfg).unwrap().to_csv(), simulate(&other).unwrap().to_csv());
    }

    #[test]
    fn projection() {
        let t = SimTrace {
            batches: vec![],
            images_per_sec: 100.0,
            total_stall: 0,
            stall_fraction: 0.0,
            end_time: 0,
            settled: true,
        };
        assert_eq!(project_time_to_epoch(&t, 1000.0, 1.0), 10.0);
        assert_eq!(project_time_to_epoch(&t, 1000.0, 90.0), 900.0);
    }

    #[test]
    fn projection_matches_a_simulated_epoch() {
        let mut cfg = SimConfig::new(40.0 * MIB, vec![10.0 * MIB], 100, 1000.0);
        cfg.dataset_images = Some(20_000);
        cfg.extent = SimExtent::Epochs(1.0);
        let t = simulate(&cfg).unwrap();
        let projected = project_time_to_epoch(&t, 20_000.0, 1.0);
        let measured = t.end_time as f64 / 1e9;
        assert!(rel(projected, measured) < 0.02, "{projected} vs {measured}");
    }

    #[test]
    fn seconds_extent_stops_at_deadline() {
        let mut cfg = SimConfig::new(1e6, vec![1e6], 10, 100.0);
        cfg.extent = SimExtent::Seconds(5.0);
        let t = simulate(&cfg).unwrap();
        let last = t.batches.last().unwrap();
        assert!(last.compute_end >= 5_000_000_000);
        assert!(t.batches[t.batches.len() - 2].compute_end < 5_000_000_000);
    }

    #[test]
    fn invalid_configs() {
        let ok = SimConfig::new(1e6, vec![1e6], 10, 100.0);
        for bad in [
            SimConfig { bandwidth: 0.0, ..ok.clone() },
            SimConfig { compute_rate: -1.0, ..ok.clone() },
            SimConfig { scan_group: 2, ..ok.clone() },
            SimConfig { record_sizes: vec![], ..ok.clone() },
            SimConfig { extent: SimExtent::Epochs(1.0), ..ok.clone() },
            SimConfig { bandwidth: f64::INFINITY, compute_rate: f64::INFINITY, ..ok.clone() },
            SimConfig { warmup_batches: Some(100), ..ok.clone() },
        ] {
            assert!(matches!(simulate(&bad), Err(SimError::ConfigInvalid(_))), "{bad:?}");
        }
    }

    #[test]
    fn parses_toml() {
        let text = r#"
            nodes = 10
            bandwidth = 1.0e9
            mean_image_sizes = [1000.0, 2000.0, 4000.0]
            scan_group = 2
            images_per_record = 100
            compute_rate = inf
            epochs = 2.0
            dataset_images = 50000

            [sweep]
            bandwidths = [1e8, 2e8]
            scan_groups = [1, 3]
        "#;
        let (cfg, grid) = SimConfig::from_toml(text, None).unwrap();
        assert_eq!(cfg.n_nodes, 10);
        assert_eq!(cfg.record_sizes, vec![1e5, 2e5, 4e5]);
        assert_eq!(cfg.scan_group, 2);
        assert!(cfg.compute_rate.is_infinite());
        assert_eq!(cfg.extent, SimExtent::Epochs(2.0));
        assert_eq!(grid.unwrap().scan_groups, vec![1, 3]);
        assert!(SimConfig::from_toml("bandwidth = 1.0\nbogus = 2", None).is_err());
        let both = "bandwidth = 1.0\nimages_per_record = 1\ncompute_rate = 1.0\nrecord_sizes=[1.0]\nmean_image_sizes=[1.0]";
        assert!(matches!(SimConfig::from_toml(both, None), Err(SimError::ConfigInvalid(_))));
    }

    #[test]
    fn single_cell_sweep_equals_simulate() {
        let cfg = SimConfig::new(5e7, vec![1e7, 3e7], 100, 300.0);
        let grid = SweepGrid {
            bandwidths: vec![5e7],
            scan_groups: vec![2],
        };
        let res = sweep(&cfg, &grid);
        let direct = simulate(&SimConfig { scan_group: 2, ..cfg.clone() }).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.rows[0].images_per_sec, direct.images_per_sec);
        assert_eq!(res.rows[0].stall_fraction, direct.stall_fraction);
    }

    #[test]
    fn sweep_records_cell_errors() {
        let cfg = SimConfig::new(5e7, vec![1e7, 3e7], 100, 300.0);
        let grid = SweepGrid {
            bandwidths: vec![5e7, -1.0],
            scan_groups: vec![1, 7],
        };
        let res = sweep(&cfg, &grid);
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.errors.len(), 3);
        assert!(res.to_csv().starts_with("bandwidth,scan_group,images_per_sec,stall_fraction,epoch_seconds\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn regime_matches_min_law(
            bw_mib in 5.0f64..500.0,
            size_mib in 1.0f64..64.0,
            xc in 50.0f64..5000.0,
            n in 16usize..512,
        ) {
            let mut cfg = SimConfig::new(bw_mib * MIB, vec![size_mib * MIB], n, xc);
            let settle = cfg.settling_batches();
            prop_assume!(settle < 5000);
            cfg.extent = SimExtent::Records(300.max(4 * settle as u64));
            let t = simulate(&cfg).unwrap();
            prop_assert!(t.settled);
            let expected = xc.min(n as f64 * bw_mib / size_mib);
            prop_assert!(rel(t.images_per_sec, expected) < 0.01, "{} vs {}", t.images_per_sec, expected);
        }

        #[test]
        fn bucket_tokens_stay_in_bounds(reads in prop::collection::vec((0u64..2_000_000_000, 0.0f64..500.0), 1..50)) {
            let mut b = TokenBucket::new(200.0, 100.0);
            let mut now = 0;
            for (dt, bytes) in reads {
                now = b.consume(now + dt, bytes);
                prop_assert!(b.tokens >= 0.0 && b.tokens <= b.capacity);
                prop_assert!(b.tokens_at(now + dt) <= b.capacity);
            }
        }
    }
}
