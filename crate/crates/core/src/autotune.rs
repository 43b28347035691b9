//! Picks the lowest scan group whose training gradient still points where
//! the full-fidelity gradient does.
//!
//! The model is multinomial logistic regression on 32x32 luma thumbnails.
//! At each tuning epoch the tuner draws a few random subsets, computes the
//! mean cross-entropy gradient on every scan group, and scores each group by
//! cosine similarity to the full-fidelity gradient on the same subset. The
//! chosen group is the smallest one whose score's lower 95% confidence
//! bound clears the threshold.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::decode::{ImageDecoder, RgbImage};
use crate::error::Result;
use crate::reader::{assemble, list_records, open_record, read_prefix, FidelityRequest};

/// Thumbnail side length.
pub const THUMB: usize = 32;
pub const FEATURES: usize = THUMB * THUMB;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AutotuneError {
    #[error("gradient has zero norm")]
    ZeroGradient,
    #[error("gradient lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no labeled images")]
    Empty,
    #[error("tuning set has {have} scan groups, policy needs {need}")]
    MissingGroups { have: usize, need: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Area-averaged `THUMB x THUMB` luma thumbnail scaled to `0..=1`.
pub fn featurize(img: &RgbImage) -> Vec<f64> {
    let luma = img.luma();
    let wx = area_weights(img.width, THUMB);
    let wy = area_weights(img.height, THUMB);
    // Columns first, then rows.
    let mut cols = vec![0.0; img.height * THUMB];
    for y in 0..img.height {
        let row = &luma[y * img.width..(y + 1) * img.width];
        for (ox, taps) in wx.iter().enumerate() {
            cols[y * THUMB + ox] = taps.iter().map(|&(x, w)| row[x] * w).sum();
        }
    }
    let mut out = vec![0.0; FEATURES];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..THUMB {
            let v: f64 = taps.iter().map(|&(y, w)| cols[y * THUMB + ox] * w).sum();
            out[oy * THUMB + ox] = v / 255.0;
        }
    }
    out
}

/// For each output cell, the input indices it overlaps and their weights.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = lo + scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, overlap / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Multinomial logistic regression over `dim` features.
#[derive(Clone, Debug, PartialEq)]
pub struct GradModel {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GradModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        GradModel {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
        }
    }

    /// Small uniform weights in `+-scale`.
    pub fn random(n_classes: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = GradModel::zeros(n_classes, dim);
        for w in m.weights.iter_mut().chain(m.bias.iter_mut()) {
            *w = rng.gen_range(-scale..=scale);
        }
        m
    }

    /// Parameter count; gradients are laid out as `[weights, bias]`.
    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        [self.weights.as_slice(), self.bias.as_slice()].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter count");
        let (w, b) = p.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }

    fn log_probs(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + out.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for o in out.iter_mut() {
            *o -= lse;
        }
    }

    /// Mean cross-entropy over the samples and its gradient.
    pub fn loss_and_grad(&self, xs: &[&[f64]], labels: &[usize]) -> Result<(f64, Vec<f64>), AutotuneError> {
        let shape = |m: String| Err(AutotuneError::ShapeMismatch(m));
        if xs.len() != labels.len() {
            return shape(format!("{} samples, {} labels", xs.len(), labels.len()));
        }
        if xs.is_empty() {
            return shape("empty batch".into());
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.dim) {
            return shape(format!("feature length {}, model expects {}", x.len(), self.dim));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= self.n_classes) {
            return shape(format!("label {y} with {} classes", self.n_classes));
        }
        let n = xs.len() as f64;
        let mut grad = vec![0.0; self.n_params()];
        let (gw, gb) = grad.split_at_mut(self.weights.len());
        let mut lp = vec![0.0; self.n_classes];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            self.log_probs(x, &mut lp);
            loss -= lp[y];
            for c in 0..self.n_classes {
                let d = (lp[c].exp() - if c == y { 1.0 } else { 0.0 }) / n;
                gb[c] += d;
                for (g, v) in gw[c * self.dim..(c + 1) * self.dim].iter_mut().zip(x.iter()) {
                    *g += d * v;
                }
            }
        }
        Ok((loss / n, grad))
    }

    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        let mut p = self.params();
        for (w, g) in p.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        self.set_params(&p);
    }
}

/// Cosine similarity of two gradients, in `[-1, 1]`.
pub fn score(a: &[f64], b: &[f64]) -> Result<f64, AutotuneError> {
    if a.len() != b.len() {
        return Err(AutotuneError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(AutotuneError::ZeroGradient);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine similarity between the gradients of `model` on a full-fidelity
/// batch and on the same images at reduced fidelity.
pub fn batch_score(
    model: &GradModel,
    full: &[&[f64]],
    reduced: &[&[f64]],
    labels: &[usize],
) -> Result<f64, AutotuneError> {
    if full.len() != reduced.len() {
        return Err(AutotuneError::ShapeMismatch(format!(
            "{} full vs {} reduced samples",
            full.len(),
            reduced.len()
        )));
    }
    let (_, a) = model.loss_and_grad(full, labels)?;
    let (_, b) = model.loss_and_grad(reduced, labels)?;
    score(&a, &b)
}

/// Labeled features for every scan group, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneSet {
    pub labels: Vec<usize>,
    /// `features[g - 1][i]`.
    pub features: Vec<Vec<Vec<f64>>>,
    pub n_classes: usize,
    /// Images skipped for a missing label or a failed decode.
    pub skipped: usize,
}

impl TuneSet {
    pub fn new(labels: Vec<usize>, features: Vec<Vec<Vec<f64>>>) -> Self {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        for f in &features {
            assert_eq!(f.len(), labels.len(), "features per group");
        }
        TuneSet {
            labels,
            features,
            n_classes,
            skipped: 0,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Decodes every labeled image under `path` at every scan group. All
    /// records must share a group count. Stops after `max_images`.
    pub fn from_records(
        path: &Path,
        decoder: &dyn ImageDecoder,
        max_images: Option<usize>,
    ) -> Result<TuneSet> {
        let limit = max_images.unwrap_or(usize::MAX);
        let mut labels = Vec::new();
        let mut features: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut skipped = 0;
        'records: for rec in list_records(path)? {
            let mut src = open_record(&rec, false).map_err(|e| crate::Error::Io(e).in_file(&rec))?;
            let full = read_prefix(&mut src, FidelityRequest::FULL).map_err(|e| e.in_file(&rec))?;
            let g_max = full.groups_read();
            if features.is_empty() {
                features.resize(g_max, Vec::new());
            } else if features.len() != g_max {
                return Err(crate::Error::CorruptIndex(format!(
                    "{} has {g_max} scan groups, expected {}",
                    rec.display(),
                    features.len()
                )));
            }
            for i in 0..full.n_images() {
                if labels.len() >= limit {
                    break 'records;
                }
                let label = full.metadata()[i].label;
                if label < 0 {
                    skipped += 1;
                    continue;
                }
                let row: Option<Vec<Vec<f64>>> = (1..=g_max)
                    .map(|g| {
                        let a = assemble(&full, i, g).ok()?;
                        decoder.decode_rgb(&a.jpeg_bytes).ok().map(|img| featurize(&img))
                    })
                    .collect();
                match row {
                    Some(row) => {
                        labels.push(label as usize);
                        for (g, f) in row.into_iter().enumerate() {
                            features[g].push(f);
                        }
                    }
                    None => skipped += 1,
                }
            }
        }
        let mut set = TuneSet::new(labels, features);
        set.skipped = skipped;
        Ok(set)
    }

    /// Mean gradient of `model` over `subset` at scan group `g`.
    pub fn gradient(&self, model: &GradModel, g: usize, subset: &[usize]) -> Result<Vec<f64>, AutotuneError> {
        let xs: Vec<&[f64]> = subset.iter().map(|&i| self.features[g - 1][i].as_slice()).collect();
        let ys: Vec<usize> = subset.iter().map(|&i| self.labels[i]).collect();
        Ok(model.loss_and_grad(&xs, &ys)?.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TunePolicy {
    /// Minimum acceptable similarity to the full-fidelity gradient.
    pub threshold: f64,
    /// Epochs at full fidelity before the first tuning pass.
    pub warmup_epochs: usize,
    /// Epochs between tuning passes.
    pub interval: usize,
    /// Images per trial.
    pub budget: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for TunePolicy {
    fn default() -> Self {
        TunePolicy {
            threshold: 0.8,
            warmup_epochs: 5,
            interval: 20,
            budget: 2560,
            trials: 3,
            seed: 0,
        }
    }
}

/// Similarity of one scan group to full fidelity over the trials.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupScore {
    pub group: usize,
    pub trials: Vec<f64>,
    pub mean: f64,
    /// Half-width of the two-sided 95% Student-t interval on the mean;
    /// zero with a single trial.
    pub half_width: f64,
    /// `mean - half_width`.
    pub lower_bound: f64,
}

impl GroupScore {
    pub fn from_trials(group: usize, trials: Vec<f64>) -> Self {
        let n = trials.len() as f64;
        let mean = trials.iter().sum::<f64>() / n;
        let half_width = if trials.len() < 2 {
            0.0
        } else {
            let var = trials.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let t = StudentsT::new(0.0, 1.0, n - 1.0)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975);
            t * var.sqrt() / n.sqrt()
        };
        GroupScore {
            group,
            trials,
            mean,
            half_width,
            lower_bound: mean - half_width,
        }
    }
}

/// Smallest group whose lower bound reaches `threshold`; the last group
/// otherwise.
pub fn choose_group(scores: &[GroupScore], threshold: f64) -> usize {
    scores
        .iter()
        .find(|s| s.lower_bound >= threshold)
        .or(scores.last())
        .map_or(1, |s| s.group)
}

/// Scores every scan group of `set` against the last one.
pub fn measure(
    model: &GradModel,
    set: &TuneSet,
    policy: &TunePolicy,
    epoch: usize,
) -> Result<Vec<GroupScore>, AutotuneError> {
    if set.is_empty() {
        return Err(AutotuneError::Empty);
    }
    let g_max = set.n_groups();
    let mut per_group = vec![Vec::with_capacity(policy.trials); g_max];
    for trial in 0..policy.trials.max(1) {
        let seed = policy
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(((epoch as u64) << 16) | trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = policy.budget.clamp(1, set.len());
        let subset = sample(&mut rng, set.len(), k).into_vec();
        let reference = set.gradient(model, g_max, &subset)?;
        for g in 1..=g_max {
            let s = if g == g_max {
                score(&reference, &reference)?
            } else {
                score(&set.gradient(model, g, &subset)?, &reference)?
            };
            per_group[g - 1].push(s);
        }
    }
    Ok(per_group
        .into_iter()
        .enumerate()
        .map(|(g, t)| GroupScore::from_trials(g + 1, t))
        .collect())
}

/// Applies a [`TunePolicy`] across epochs, remembering the last choice.
#[derive(Clone, Debug)]
pub struct Tuner {
    pub policy: TunePolicy,
    n_groups: usize,
    current: usize,
    pub last_scores: Option<Vec<GroupScore>>,
}

impl Tuner {
    /// Starts at full fidelity.
    pub fn new(policy: TunePolicy, n_groups: usize) -> Self {
        Tuner {
            policy,
            n_groups,
            current: n_groups,
            last_scores: None,
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn is_tuning_epoch(&self, epoch: usize) -> bool {
        epoch >= self.policy.warmup_epochs
            && (epoch - self.policy.warmup_epochs) % self.policy.interval.max(1) == 0
    }

    /// The scan group to train `epoch` on, re-tuning when the policy says so.
    pub fn on_epoch(
        &mut self,
        epoch: usize,
        model: &GradModel,
        set: &TuneSet,
    ) -> Result<usize, AutotuneError> {
        if set.n_groups() != self.n_groups {
            return Err(AutotuneError::MissingGroups {
                have: set.n_groups(),
                need: self.n_groups,
            });
        }
        if self.is_tuning_epoch(epoch) {
            let scores = measure(model, set, &self.policy, epoch)?;
            self.current = choose_group(&scores, self.policy.threshold);
            self.last_scores = Some(scores);
        }
        Ok(self.current)
    }
}

/// One epoch of a tuned training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub group: usize,
    pub loss: f64,
    /// Mean score per group when this epoch re-tuned.
    pub scores: Option<Vec<f64>>,
}

/// Full-batch gradient descent on `set` for `epochs` epochs, training each
/// epoch on the group the tuner picks.
pub fn train_with_tuner(
    set: &TuneSet,
    policy: TunePolicy,
    epochs: usize,
    lr: f64,
) -> Result<(GradModel, Vec<EpochLog>), AutotuneError> {
    if set.is_empty() {
        return Err(AutotuneError::Empty);
    }
    let mut model = GradModel::zeros(set.n_classes, FEATURES);
    let mut tuner = Tuner::new(policy, set.n_groups());
    let all: Vec<usize> = (0..set.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let tuned = tuner.is_tuning_epoch(epoch);
        let g = tuner.on_epoch(epoch, &model, set)?;
        let xs: Vec<&[f64]> = all.iter().map(|&i| set.features[g - 1][i].as_slice()).collect();
        let (loss, grad) = model.loss_and_grad(&xs, &set.labels)?;
        model.sgd_step(&grad, lr);
        log.push(EpochLog {
            epoch,
            group: g,
            loss,
            scores: tuned.then(|| {
                tuner.last_scores.as_ref().map_or_else(Vec::new, |s| s.iter().map(|x| x.mean).collect())
            }),
        });
    }
    Ok((model, log))
}

/// CSV with columns `epoch,group,loss,scores`; scores are `;`-separated
/// per-group means, empty on epochs that did not re-tune.
pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,group,loss,scores\n");
    for e in log {
        let scores = e
            .scores
            .as_ref()
            .map(|v| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.group, e.loss, scores);
    }
    s
}
