//! Multi-scale structural similarity between a reconstruction and its
//! full-fidelity reference.
//!
//! Follows the conventions of TensorFlow's `ssim_multiscale` on the BT.601
//! luma plane: 11-tap Gaussian window with sigma 1.5 applied without
//! padding, `K1 = 0.01`, `K2 = 0.03`, dynamic range 255, contrast-structure
//! terms clipped at zero, and 2x2 average pooling between scales after
//! mirroring an odd last row or column.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::decode::{ImageDecoder, RgbImage};
use crate::error::Result;
use crate::perf_model::quantile_sorted;
use crate::reader::{assemble, list_records, open_record, read_prefix, FidelityRequest};

/// Per-scale weights for five scales, coarsest last.
pub const POWER_FACTORS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const MAX_VAL: f64 = 255.0;
const C1: f64 = (0.01 * MAX_VAL) * (0.01 * MAX_VAL);
const C2: f64 = (0.03 * MAX_VAL) * (0.03 * MAX_VAL);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MssimError {
    #[error("image sizes differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image {width}x{height} is smaller than the {WINDOW}-pixel window")]
    TooSmall { width: usize, height: usize },
    #[error("{requested} scales requested, at most {max} fit")]
    TooManyScales { requested: usize, max: usize },
}

/// A single-channel float image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn luma(img: &RgbImage) -> Plane {
        Plane {
            width: img.width,
            height: img.height,
            data: img.luma(),
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable Gaussian filter, valid region only.
    fn blur(&self, k: &[f64]) -> Plane {
        let (w, h, n) = (self.width, self.height, k.len());
        let ow = w + 1 - n;
        let oh = h + 1 - n;
        let mut rows = vec![0.0; ow * h];
        for y in 0..h {
            let src = &self.data[y * w..(y + 1) * w];
            for x in 0..ow {
                rows[y * ow + x] = src[x..x + n].iter().zip(k).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|j| rows[(y + j) * ow + x] * k[j]).sum();
            }
        }
        Plane {
            width: ow,
            height: oh,
            data: out,
        }
    }

    /// 2x2 mean pooling; an odd last row or column is mirrored first.
    fn downsample(&self) -> Plane {
        let ow = self.width.div_ceil(2);
        let oh = self.height.div_ceil(2);
        let cx = |x: usize| x.min(self.width - 1);
        let cy = |y: usize| y.min(self.height - 1);
        let mut data = Vec::with_capacity(ow * oh);
        for y in 0..oh {
            for x in 0..ow {
                let (x0, y0) = (2 * x, 2 * y);
                let s = self.at(x0, y0)
                    + self.at(cx(x0 + 1), y0)
                    + self.at(x0, cy(y0 + 1))
                    + self.at(cx(x0 + 1), cy(y0 + 1));
                data.push(s / 4.0);
            }
        }
        Plane {
            width: ow,
            height: oh,
            data,
        }
    }
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Scales that fit an image: the window must cover the image at every one.
pub fn max_scales(width: usize, height: usize) -> usize {
    let (mut w, mut h, mut n) = (width, height, 0);
    while w >= WINDOW && h >= WINDOW && n < POWER_FACTORS.len() {
        n += 1;
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    n
}

/// Weights for `n` scales: the leading factors renormalized to sum to one.
pub fn power_factors(n: usize) -> Vec<f64> {
    let s: f64 = POWER_FACTORS[..n].iter().sum();
    POWER_FACTORS[..n].iter().map(|p| p / s).collect()
}

/// Mean SSIM and mean contrast-structure over the valid window positions.
fn ssim_stats(a: &Plane, b: &Plane, k: &[f64]) -> (f64, f64) {
    let mu_a = a.blur(k);
    let mu_b = b.blur(k);
    let ab = a.map2(b, |x, y| x * y).blur(k);
    let sq = a.map2(b, |x, y| x * x + y * y).blur(k);
    let n = mu_a.data.len() as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let num0 = ma * mb * 2.0;
        let den0 = ma * ma + mb * mb;
        let lum = (num0 + C1) / (den0 + C1);
        let c = (ab.data[i] * 2.0 - num0 + C2) / (sq.data[i] - den0 + C2);
        ssim += lum * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

/// MS-SSIM of two equally sized planes over `scales` scales.
pub fn mssim_planes(a: &Plane, b: &Plane, scales: usize) -> Result<f64, MssimError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MssimError::DimensionMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    let max = max_scales(a.width, a.height);
    if max == 0 {
        return Err(MssimError::TooSmall {
            width: a.width,
            height: a.height,
        });
    }
    if scales == 0 || scales > max {
        return Err(MssimError::TooManyScales {
            requested: scales,
            max,
        });
    }
    let k = gaussian_window(WINDOW, SIGMA);
    let weights = power_factors(scales);
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut out = 1.0;
    for (s, w) in weights.iter().enumerate() {
        if s > 0 {
            a = a.downsample();
            b = b.downsample();
        }
        let (ssim, cs) = ssim_stats(&a, &b, &k);
        let term = if s + 1 == scales { ssim } else { cs };
        out *= term.max(0.0).powf(*w);
    }
    Ok(out)
}

/// MS-SSIM of the luma planes, using as many scales as fit (at most five).
pub fn mssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MssimError> {
    let scales = max_scales(a.width.min(b.width), a.height.min(b.height)).max(1);
    mssim_planes(&Plane::luma(a), &Plane::luma(b), scales)
}

/// Distribution of MS-SSIM at one scan group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupFidelity {
    pub group: usize,
    pub n: usize,
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityReport {
    pub groups: Vec<GroupFidelity>,
    pub images: usize,
    /// Images or reconstructions that could not be decoded or compared.
    pub failures: usize,
}

impl FidelityReport {
    /// CSV with columns `group,mean_mssim,q25,q75`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,mean_mssim,q25,q75\n");
        for g in &self.groups {
            let _ = writeln!(s, "{},{},{},{}", g.group, g.mean, g.q25, g.q75);
        }
        s
    }
}

/// MS-SSIM of every image at every scan group against its full-fidelity
/// decode, over the records under `path`. Stops after `max_images` images.
/// Images are scored in parallel on the current rayon pool; the result does
/// not depend on the pool size.
pub fn fidelity_report(
    path: &Path,
    decoder: &dyn ImageDecoder,
    max_images: Option<usize>,
) -> Result<FidelityReport> {
    let limit = max_images.unwrap_or(usize::MAX);
    let mut scores: Vec<Vec<f64>> = Vec::new();
    let mut images = 0;
    let mut failures = 0;
    for rec in list_records(path)? {
        let mut src = open_record(&rec, false).map_err(|e| crate::Error::Io(e).in_file(&rec))?;
        let full = read_prefix(&mut src, FidelityRequest::FULL)
            .map_err(|e| e.in_file(&rec))?;
        let n_groups = full.groups_read();
        if scores.len() < n_groups {
            scores.resize(n_groups, Vec::new());
        }
        let take = full.n_images().min(limit - images);
        images += take;
        // Per image: the reference failed (None), or one score per group.
        let per_image: Vec<Option<Vec<Option<f64>>>> = (0..take)
            .into_par_iter()
            .map(|i| {
                let decode = |g| {
                    assemble(&full, i, g)
                        .ok()
                        .and_then(|a| decoder.decode_rgb(&a.jpeg_bytes).ok())
                };
                let reference = decode(n_groups)?;
                Some(
                    (1..=n_groups)
                        .map(|g| decode(g).and_then(|img| mssim(&img, &reference).ok()))
                        .collect(),
                )
            })
            .collect();
        for row in per_image {
            let Some(row) = row else {
                failures += 1;
                continue;
            };
            for (g, score) in row.into_iter().enumerate() {
                match score {
                    Some(s) => scores[g].push(s),
                    None => failures += 1,
                }
            }
        }
        if images >= limit {
            break;
        }
    }
    let groups = scores
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(g, mut v)| {
            v.sort_by(f64::total_cmp);
            GroupFidelity {
                group: g + 1,
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                q25: quantile_sorted(&v, 0.25),
                q75: quantile_sorted(&v, 0.75),
            }
        })
        .collect();
    Ok(FidelityReport {
        groups,
        images,
        failures,
    })
}

/// Least-squares line through `(x, y)` pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `y = slope * x + intercept`. `None` with fewer than two distinct x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}
