//! Key-frame and key-segment selection.
//!
//! Key frames are medoids of the per-frame global features, found by a
//! swap-based local search on random frame subsets. The objective is the sum
//! of squared Euclidean distances from every non-key feature to the key
//! feature of its cluster. Each repeat searches its own subset; the key set
//! with the lowest objective over all frames wins.
//!
//! Baseline strategies (random, clustering-centroid, histogram-difference,
//! consecutive, thumbnail, uniform) live here too so that every selection
//! path yields the same [`SelectionResult`].

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codebook::kmeans_pp;
use crate::error::{D3Error, Result};
use crate::feature_model::FrameFeatureSequence;
use crate::matrix::FeatureMatrix;
use crate::scalar::{nearest, sq_dist};
use crate::seed::derive_seed;

pub const DEFAULT_KEY_FRAMES: usize = 15;
pub const DEFAULT_TAU: usize = 6;
pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeySegment {
    pub center: usize,
    pub lo: usize,
    pub hi: usize,
    pub tau: usize,
}

impl KeySegment {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Ascending, distinct frame indices.
    pub key_indices: Vec<usize>,
    /// For every frame, the position in `key_indices` of its nearest key frame.
    pub cluster_of: Vec<usize>,
    pub objective: f64,
    pub segments: Vec<KeySegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub key_frames: usize,
    pub tau: usize,
    /// `None` means `min(N, 40 + 2R)`.
    pub subset_size: Option<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            key_frames: DEFAULT_KEY_FRAMES,
            tau: DEFAULT_TAU,
            subset_size: None,
            repeats: DEFAULT_REPEATS,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.key_frames == 0 {
            return Err(D3Error::Config("number of key frames must be at least 1".into()));
        }
        if self.tau % 2 != 0 {
            return Err(D3Error::Config(format!("tau must be even, got {}", self.tau)));
        }
        if self.repeats == 0 {
            return Err(D3Error::Config("repeats must be at least 1".into()));
        }
        if let Some(s) = self.subset_size {
            if s < self.key_frames {
                return Err(D3Error::Config(format!(
                    "subset size {s} smaller than key frame count {}",
                    self.key_frames
                )));
            }
        }
        Ok(())
    }

    /// Effective subset size for a sequence of `n` frames.
    pub fn subset_for(&self, n: usize) -> usize {
        self.subset_size
            .unwrap_or(40 + 2 * self.key_frames)
            .min(n)
    }
}

/// Emitted whenever the medoid search accepts a swap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapEvent {
    pub repeat: usize,
    /// Frame index leaving the key set.
    pub removed: usize,
    /// Frame index entering the key set.
    pub added: usize,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Outcome of one subset search, exposed for verification.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSearch {
    /// Subset frame indices, ascending.
    pub subset: Vec<usize>,
    /// Key frame indices (not necessarily sorted).
    pub keys: Vec<usize>,
    pub subset_objective: f64,
    pub full_objective: f64,
}

fn globals_f64(seq: &FrameFeatureSequence) -> FeatureMatrix<f64> {
    let mut m = FeatureMatrix::new(seq.global_dim());
    for i in 0..seq.num_frames() {
        m.push_f32(seq.global(i)).expect("dims match");
    }
    m
}

/// Nearest-key assignment over `points` with keys given as row indices.
/// Ties go to the lowest position in `keys`.
fn assign(dist: impl Fn(usize, usize) -> f64, points: &[usize], keys: &[usize]) -> (Vec<usize>, f64) {
    let mut owner = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for &p in points {
        let mut best = (0usize, f64::INFINITY);
        for (m, &k) in keys.iter().enumerate() {
            let d = dist(p, k);
            if d < best.1 {
                best = (m, d);
            }
        }
        owner.push(best.0);
        total += best.1;
    }
    (owner, total)
}

/// Swap local search over a precomputed subset distance matrix.
/// `keys` are positions into the subset and are updated in place.
fn swap_search(
    d: &[f64],
    n: usize,
    keys: &mut [usize],
    mut on_swap: impl FnMut(usize, usize, f64, f64),
) -> f64 {
    let points: Vec<usize> = (0..n).collect();
    let dist = |a: usize, b: usize| d[a * n + b];
    let (mut owner, mut objective) = assign(dist, &points, keys);
    let mut is_key = vec![false; n];
    keys.iter().for_each(|&k| is_key[k] = true);
    loop {
        let mut accepted_any = false;
        for m in 0..keys.len() {
            let members: Vec<usize> = (0..n)
                .filter(|&p| owner[p] == m && !is_key[p])
                .collect();
            for cand in members {
                let old = keys[m];
                keys[m] = cand;
                let (new_owner, new_obj) = assign(dist, &points, keys);
                if new_obj < objective {
                    on_swap(old, cand, objective, new_obj);
                    is_key[old] = false;
                    is_key[cand] = true;
                    owner = new_owner;
                    objective = new_obj;
                    accepted_any = true;
                    // the cluster of key m changed; move on to the next key
                    break;
                }
                keys[m] = old;
            }
        }
        if !accepted_any {
            return objective;
        }
    }
}

/// Runs one subset search and reports the candidate key set.
pub fn search_subset(
    seq: &FrameFeatureSequence,
    cfg: &SelectionConfig,
    repeat: usize,
    mut on_swap: impl FnMut(SwapEvent),
) -> Result<SubsetSearch> {
    let feats = globals_f64(seq);
    search_subset_inner(&feats, cfg, repeat, &mut on_swap)
}

fn search_subset_inner(
    feats: &FeatureMatrix<f64>,
    cfg: &SelectionConfig,
    repeat: usize,
    on_swap: &mut dyn FnMut(SwapEvent),
) -> Result<SubsetSearch> {
    let n_all = feats.len();
    let r = cfg.key_frames;
    let s = cfg.subset_for(n_all);
    if s < r {
        return Err(D3Error::Infeasible(format!(
            "cannot pick {r} key frames from a subset of {s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "medoid-repeat", &repeat.to_string()));
    let mut subset = sample(&mut rng, n_all, s).into_vec();
    subset.sort_unstable();
    let mut d = vec![0.0f64; s * s];
    for a in 0..s {
        for b in (a + 1)..s {
            let v = sq_dist(feats.row(subset[a]), feats.row(subset[b]));
            d[a * s + b] = v;
            d[b * s + a] = v;
        }
    }
    let mut keys = sample(&mut rng, s, r).into_vec();
    keys.sort_unstable();
    let subset_objective = swap_search(&d, s, &mut keys, |old, new, before, after| {
        on_swap(SwapEvent {
            repeat,
            removed: subset[old],
            added: subset[new],
            objective_before: before,
            objective_after: after,
        })
    });
    let keys: Vec<usize> = keys.iter().map(|&k| subset[k]).collect();
    let full_objective = full_assignment(feats, &sorted(&keys)).1;
    Ok(SubsetSearch {
        subset,
        keys,
        subset_objective,
        full_objective,
    })
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

fn full_assignment(feats: &FeatureMatrix<f64>, keys: &[usize]) -> (Vec<usize>, f64) {
    let points: Vec<usize> = (0..feats.len()).collect();
    assign(|a, b| sq_dist(feats.row(a), feats.row(b)), &points, keys)
}

/// Medoid key-frame selection with key segments.
pub fn select_medoids(seq: &FrameFeatureSequence, cfg: &SelectionConfig) -> Result<SelectionResult> {
    select_medoids_observed(seq, cfg, |_| {})
}

/// Like [`select_medoids`], reporting every accepted swap to `on_swap`.
pub fn select_medoids_observed(
    seq: &FrameFeatureSequence,
    cfg: &SelectionConfig,
    mut on_swap: impl FnMut(SwapEvent),
) -> Result<SelectionResult> {
    cfg.validate()?;
    let n = seq.num_frames();
    if cfg.key_frames > n {
        return Err(D3Error::Infeasible(format!(
            "{} key frames requested from {n} frames",
            cfg.key_frames
        )));
    }
    let feats = globals_f64(seq);
    let mut best: Option<SubsetSearch> = None;
    for repeat in 0..cfg.repeats {
        let cand = search_subset_inner(&feats, cfg, repeat, &mut on_swap)?;
        if best
            .as_ref()
            .is_none_or(|b| cand.full_objective < b.full_objective)
        {
            best = Some(cand);
        }
    }
    let best = best.expect("at least one repeat");
    build_result(&feats, best.keys, cfg.tau)
}

fn build_result(feats: &FeatureMatrix<f64>, keys: Vec<usize>, tau: usize) -> Result<SelectionResult> {
    let key_indices = sorted(&keys);
    let (cluster_of, objective) = full_assignment(feats, &key_indices);
    let segments = derive_segments(&key_indices, tau, feats.len())?;
    Ok(SelectionResult {
        key_indices,
        cluster_of,
        objective,
        segments,
    })
}

/// Wraps an arbitrary set of key frames (e.g. from a baseline) into a result.
pub fn selection_from_indices(
    seq: &FrameFeatureSequence,
    indices: &[usize],
    tau: usize,
) -> Result<SelectionResult> {
    let n = seq.num_frames();
    if indices.is_empty() {
        return Err(D3Error::Infeasible("empty key frame set".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(D3Error::Bounds(format!("key frame {bad} outside 0..{n}")));
    }
    let mut keys = sorted(indices);
    keys.dedup();
    build_result(&globals_f64(seq), keys, tau)
}

/// Windows of `tau + 1` frames around each key frame, shifted inward at the ends.
pub fn derive_segments(key_indices: &[usize], tau: usize, n: usize) -> Result<Vec<KeySegment>> {
    if tau % 2 != 0 {
        return Err(D3Error::Config(format!("tau must be even, got {tau}")));
    }
    if n < tau + 1 {
        return Err(D3Error::Infeasible(format!(
            "segment of {} frames does not fit a {n}-frame sequence; reduce tau",
            tau + 1
        )));
    }
    key_indices
        .iter()
        .map(|&center| {
            if center >= n {
                return Err(D3Error::Bounds(format!("key frame {center} outside 0..{n}")));
            }
            let lo = center.saturating_sub(tau / 2).min(n - 1 - tau);
            Ok(KeySegment {
                center,
                lo,
                hi: lo + tau,
                tau,
            })
        })
        .collect()
}

/// Threshold used by the histogram-difference baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhdLevel {
    MeanMinusStd,
    Mean,
    MeanPlusStd,
}

impl fmt::Display for GhdLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GhdLevel::MeanMinusStd => "mu-sigma",
            GhdLevel::Mean => "mu",
            GhdLevel::MeanPlusStd => "mu+sigma",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineStrategy {
    Random { frames: usize },
    /// k-means over global features, frame closest to each centroid.
    Chc { frames: usize },
    Ghd { level: GhdLevel },
    /// First `ceil(fraction * N)` frames.
    Consecutive { fraction: f64 },
    /// One block medoid per `ceil(period_s * fps)` frames.
    Thumbnail { period_s: f64 },
    Uniform { frames: usize },
}

/// Number of surrogate histogram bins taken from the global feature.
pub const GHD_HISTOGRAM_DIMS: usize = 64;

pub fn baseline_select(
    seq: &FrameFeatureSequence,
    strategy: &BaselineStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = seq.num_frames();
    let need = |r: usize| -> Result<()> {
        if r == 0 {
            return Err(D3Error::Config("frame count must be at least 1".into()));
        }
        if r > n {
            return Err(D3Error::Infeasible(format!("{r} frames requested from {n}")));
        }
        Ok(())
    };
    let mut out = match *strategy {
        BaselineStrategy::Random { frames } => {
            need(frames)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "baseline-random", ""));
            sample(&mut rng, n, frames).into_vec()
        }
        BaselineStrategy::Chc { frames } => {
            need(frames)?;
            chc(seq, frames, seed)?
        }
        BaselineStrategy::Ghd { level } => ghd(seq, level),
        BaselineStrategy::Consecutive { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(D3Error::Config(format!(
                    "consecutive fraction must be in (0, 1], got {fraction}"
                )));
            }
            let count = ((fraction * n as f64).ceil() as usize).clamp(1, n);
            (0..count).collect()
        }
        BaselineStrategy::Thumbnail { period_s } => {
            if !(period_s > 0.0 && period_s.is_finite()) {
                return Err(D3Error::Config(format!(
                    "thumbnail period must be positive, got {period_s}"
                )));
            }
            let block = ((period_s * seq.fps() as f64).ceil() as usize).max(1);
            thumbnail(seq, block)
        }
        BaselineStrategy::Uniform { frames } => {
            need(frames)?;
            if frames == 1 {
                vec![(n - 1) / 2]
            } else {
                (0..frames)
                    .map(|i| ((i * (n - 1)) as f64 / (frames - 1) as f64).round() as usize)
                    .collect()
            }
        }
    };
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn chc(seq: &FrameFeatureSequence, k: usize, seed: u64) -> Result<Vec<usize>> {
    let feats = globals_f64(seq);
    let cb = kmeans_pp(&feats, k, derive_seed(seed, "baseline-chc", ""), 1000)?;
    let cents = cb.centroids();
    let owner: Vec<usize> = feats.rows().map(|x| nearest(x, cents.rows()).0).collect();
    let mut picks = Vec::with_capacity(k);
    for (j, c) in cents.rows().enumerate() {
        let members = (0..feats.len()).filter(|&i| owner[i] == j);
        let pick = members
            .map(|i| (i, sq_dist(feats.row(i), c)))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            });
        let pick = match pick {
            Some((i, _)) => i,
            None => nearest(c, feats.rows()).0,
        };
        picks.push(pick);
    }
    Ok(picks)
}

/// Per-frame adjacent histogram difference: frame `i > 0` compares with `i - 1`,
/// frame 0 reuses the difference of frame 1.
pub fn ghd_differences(seq: &FrameFeatureSequence) -> Vec<f64> {
    let n = seq.num_frames();
    let h = GHD_HISTOGRAM_DIMS.min(seq.global_dim());
    if n == 1 {
        return vec![0.0];
    }
    let mut diffs = vec![0.0; n];
    for i in 1..n {
        let a = &seq.global(i)[..h];
        let b = &seq.global(i - 1)[..h];
        diffs[i] = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    }
    diffs[0] = diffs[1];
    diffs
}

fn ghd(seq: &FrameFeatureSequence, level: GhdLevel) -> Vec<usize> {
    let diffs = ghd_differences(seq);
    // statistics over the genuine adjacent pairs only
    let pairs = if diffs.len() > 1 { &diffs[1..] } else { &diffs[..] };
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let std = (pairs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt();
    let threshold = match level {
        GhdLevel::MeanMinusStd => mean - std,
        GhdLevel::Mean => mean,
        GhdLevel::MeanPlusStd => mean + std,
    };
    let kept: Vec<usize> = (0..diffs.len()).filter(|&i| diffs[i] <= threshold).collect();
    if kept.is_empty() {
        // never return an empty selection: fall back to the calmest frame
        let mut best = 0;
        for i in 1..diffs.len() {
            if diffs[i] < diffs[best] {
                best = i;
            }
        }
        vec![best]
    } else {
        kept
    }
}

fn thumbnail(seq: &FrameFeatureSequence, block: usize) -> Vec<usize> {
    let feats = globals_f64(seq);
    let n = feats.len();
    (0..n)
        .step_by(block)
        .map(|start| {
            let end = (start + block).min(n);
            let mut best = (start, f64::INFINITY);
            for i in start..end {
                let cost: f64 = (start..end).map(|j| sq_dist(feats.row(i), feats.row(j))).sum();
                if cost < best.1 {
                    best = (i, cost);
                }
            }
            best.0
        })
        .collect()
}

/// How key frames are chosen for a video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionStrategy {
    Medoid,
    Baseline(BaselineStrategy),
}

impl SelectionStrategy {
    /// Parses names like `medoid`, `random`, `chc`, `uniform`, `ghd:mu+sigma`,
    /// `consecutive:0.125` or `thumbnail:10`. `frames` supplies R where needed.
    pub fn parse(s: &str, frames: usize) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a.to_string(), Some(b.to_string())),
            None => (s.clone(), None),
        };
        let num = |what: &str| -> Result<f64> {
            let a = arg
                .as_deref()
                .ok_or_else(|| D3Error::Config(format!("strategy '{name}' needs a {what} argument")))?;
            if let Some((p, q)) = a.split_once('/') {
                let p: f64 = p.parse().map_err(|_| D3Error::Config(format!("bad {what}: {a}")))?;
                let q: f64 = q.parse().map_err(|_| D3Error::Config(format!("bad {what}: {a}")))?;
                return Ok(p / q);
            }
            a.parse()
                .map_err(|_| D3Error::Config(format!("bad {what}: {a}")))
        };
        let strategy = match name.as_str() {
            "medoid" | "d3" => SelectionStrategy::Medoid,
            "random" => SelectionStrategy::Baseline(BaselineStrategy::Random { frames }),
            "chc" => SelectionStrategy::Baseline(BaselineStrategy::Chc { frames }),
            "uniform" => SelectionStrategy::Baseline(BaselineStrategy::Uniform { frames }),
            "consecutive" => SelectionStrategy::Baseline(BaselineStrategy::Consecutive {
                fraction: num("fraction")?,
            }),
            "thumbnail" => SelectionStrategy::Baseline(BaselineStrategy::Thumbnail {
                period_s: num("period")?,
            }),
            "ghd" => {
                let level = match arg.as_deref() {
                    Some("mu-sigma") => GhdLevel::MeanMinusStd,
                    Some("mu") | None => GhdLevel::Mean,
                    Some("mu+sigma") => GhdLevel::MeanPlusStd,
                    Some(other) => {
                        return Err(D3Error::Config(format!("unknown GHD level '{other}'")))
                    }
                };
                SelectionStrategy::Baseline(BaselineStrategy::Ghd { level })
            }
            other => return Err(D3Error::Config(format!("unknown selection strategy '{other}'"))),
        };
        Ok(strategy)
    }

    /// Selects key frames and segments for one sequence.
    pub fn select(&self, seq: &FrameFeatureSequence, cfg: &SelectionConfig) -> Result<SelectionResult> {
        match self {
            SelectionStrategy::Medoid => select_medoids(seq, cfg),
            SelectionStrategy::Baseline(b) => {
                cfg.validate()?;
                let idx = baseline_select(seq, b, cfg.seed)?;
                selection_from_indices(seq, &idx, cfg.tau)
            }
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionStrategy::Medoid => f.write_str("medoid"),
            SelectionStrategy::Baseline(b) => match b {
                BaselineStrategy::Random { .. } => f.write_str("random"),
                BaselineStrategy::Chc { .. } => f.write_str("chc"),
                BaselineStrategy::Uniform { .. } => f.write_str("uniform"),
                BaselineStrategy::Ghd { level } => write!(f, "ghd:{level}"),
                BaselineStrategy::Consecutive { fraction } => write!(f, "consecutive:{fraction}"),
                BaselineStrategy::Thumbnail { period_s } => write!(f, "thumbnail:{period_s}"),
            },
        }
    }
}

impl FromStr for GhdLevel {
    type Err = D3Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu-sigma" => Ok(GhdLevel::MeanMinusStd),
            "mu" => Ok(GhdLevel::Mean),
            "mu+sigma" => Ok(GhdLevel::MeanPlusStd),
            other => Err(D3Error::Config(format!("unknown GHD level '{other}'"))),
        }
    }
}
