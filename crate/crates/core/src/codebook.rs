//! Codebook learning: k-means++ centroids for hard-assignment encodings and
//! diagonal-covariance Gaussian mixtures (fitted by EM) for Fisher vectors.
//!
//! All reductions run sequentially in a fixed order so a seed reproduces the
//! same model bit for bit.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{D3Error, Result};
use crate::io_util::{ByteReader, ByteWriter};
use crate::matrix::FeatureMatrix;
use crate::scalar::{log_sum_exp, nearest, sq_dist, Scalar};

pub const DEFAULT_CODEBOOK_SIZE: usize = 128;
pub const KMEANS_MAX_ITERS: usize = 1000;
pub const GMM_MAX_ITERS: usize = 200;
pub const GMM_TOL: f64 = 1e-5;
/// Variance floor as a fraction of the mean per-dimension data variance.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-4;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"D3CB";
pub const GMM_MAGIC: &[u8; 4] = b"D3GM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    centroids: FeatureMatrix<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(centroids: FeatureMatrix<T>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(D3Error::Model("codebook needs at least one word".into()));
        }
        if !centroids.all_finite() {
            return Err(D3Error::Model("non-finite centroid".into()));
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn centroids(&self) -> &FeatureMatrix<T> {
        &self.centroids
    }

    pub fn word(&self, j: usize) -> &[T] {
        self.centroids.row(j)
    }

    /// Nearest word under squared Euclidean distance, lowest index on ties.
    pub fn assign(&self, x: &[T]) -> usize {
        nearest(x, self.centroids.rows()).0
    }

    /// Sum of squared distances of `features` to their nearest word.
    pub fn inertia(&self, features: &FeatureMatrix<T>) -> T {
        features
            .rows()
            .map(|x| nearest(x, self.centroids.rows()).1)
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(14 + 4 * self.centroids.as_flat().len());
        w.bytes(CODEBOOK_MAGIC);
        w.u16(MODEL_VERSION);
        w.u32(self.k() as u32);
        w.u32(self.dim() as u32);
        for &v in self.centroids.as_flat() {
            w.f32(v.to_f32_lossy());
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CODEBOOK_MAGIC, "D3CB")?;
        read_version(&mut r)?;
        let (k, d) = read_kd(&mut r)?;
        let flat = r.f32_vec(k * d)?;
        r.expect_end()?;
        let data = flat.into_iter().map(T::from_f32_lossless).collect();
        Self::new(FeatureMatrix::from_flat(d, data)?)
    }
}

fn read_version(r: &mut ByteReader<'_>) -> Result<()> {
    let v = r.u16()?;
    if v != MODEL_VERSION {
        return Err(D3Error::Format(format!("unsupported model version {v}")));
    }
    Ok(())
}

fn read_kd(r: &mut ByteReader<'_>) -> Result<(usize, usize)> {
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    if k == 0 || d == 0 {
        return Err(D3Error::Format(format!("invalid model header k={k} d={d}")));
    }
    Ok((k, d))
}

/// Per-iteration record of a k-means run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KMeansTrace {
    /// Inertia after each assignment step, against the centroids of that step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    /// True when the centroids reached an exact fixpoint before the cap.
    pub converged: bool,
}

pub fn kmeans_pp<T: Scalar>(
    features: &FeatureMatrix<T>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Codebook<T>> {
    kmeans_pp_traced(features, k, seed, max_iters).map(|(cb, _)| cb)
}

pub fn kmeans_pp_traced<T: Scalar>(
    features: &FeatureMatrix<T>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Codebook<T>, KMeansTrace)> {
    if k == 0 {
        return Err(D3Error::Config("codebook size must be at least 1".into()));
    }
    let m = features.len();
    if m < k {
        return Err(D3Error::Infeasible(format!(
            "{m} training features cannot support {k} clusters"
        )));
    }
    if !features.all_finite() {
        return Err(D3Error::Invalid("non-finite training feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(features, k, &mut rng);
    let mut trace = KMeansTrace::default();
    let mut owner = vec![0usize; m];
    for iter in 0..max_iters {
        let mut inertia = T::zero();
        let mut dist = vec![T::zero(); m];
        for (i, x) in features.rows().enumerate() {
            let (j, d) = nearest(x, centroids.rows());
            owner[i] = j;
            dist[i] = d;
            inertia = inertia + d;
        }
        trace.inertia.push(inertia.as_f64());
        trace.iterations = iter + 1;

        let mut next = FeatureMatrix::from_flat(features.dim(), vec![T::zero(); k * features.dim()])?;
        let mut counts = vec![0usize; k];
        for (i, x) in features.rows().enumerate() {
            counts[owner[i]] += 1;
            for (acc, &v) in next.row_mut(owner[i]).iter_mut().zip(x) {
                *acc = *acc + v;
            }
        }
        let mut taken = vec![false; m];
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::from_usize(counts[j]).expect("count fits scalar");
                next.row_mut(j).iter_mut().for_each(|v| *v = *v / c);
            } else {
                // empty cluster: move it onto the worst-served point
                let mut far = None::<(usize, T)>;
                for i in 0..m {
                    if taken[i] {
                        continue;
                    }
                    if far.is_none_or(|(_, d)| dist[i] > d) {
                        far = Some((i, dist[i]));
                    }
                }
                let (i, _) = far.expect("m >= k leaves a free point");
                taken[i] = true;
                dist[i] = T::zero();
                next.row_mut(j).copy_from_slice(features.row(i));
            }
        }
        if next == centroids {
            trace.converged = true;
            break;
        }
        centroids = next;
    }
    Ok((Codebook::new(centroids)?, trace))
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance to the nearest chosen center.
fn seed_plus_plus<T: Scalar, R: Rng>(features: &FeatureMatrix<T>, k: usize, rng: &mut R) -> FeatureMatrix<T> {
    let m = features.len();
    let mut chosen = vec![false; m];
    let first = rng.gen_range(0..m);
    chosen[first] = true;
    let mut centroids = FeatureMatrix::new(features.dim());
    centroids.push(features.row(first)).expect("dims match");
    let mut d2: Vec<f64> = features
        .rows()
        .map(|x| sq_dist(x, features.row(first)).as_f64())
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // fewer distinct points than k: reuse an unchosen duplicate
            let free: Vec<usize> = (0..m).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(features.row(pick)).expect("dims match");
        for (i, x) in features.rows().enumerate() {
            let d = sq_dist(x, features.row(pick)).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel<T> {
    weights: Vec<T>,
    means: FeatureMatrix<T>,
    variances: FeatureMatrix<T>,
}

impl<T: Scalar> GmmModel<T> {
    pub fn new(weights: Vec<T>, means: FeatureMatrix<T>, variances: FeatureMatrix<T>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k || means.dim() != variances.dim() {
            return Err(D3Error::Model(format!(
                "inconsistent GMM shapes: {k} weights, {} means, {} variances",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite())
            || !means.all_finite()
            || !variances.all_finite()
        {
            return Err(D3Error::Model("non-finite GMM parameter".into()));
        }
        if variances.as_flat().iter().any(|&v| v <= T::zero()) {
            return Err(D3Error::Model("GMM variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.dim()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &FeatureMatrix<T> {
        &self.means
    }

    pub fn variances(&self) -> &FeatureMatrix<T> {
        &self.variances
    }

    /// Fails unless every weight is strictly positive.
    pub fn check_weights(&self) -> Result<()> {
        if let Some(j) = self.weights.iter().position(|&w| w <= T::zero()) {
            return Err(D3Error::Model(format!("component {j} has non-positive weight")));
        }
        Ok(())
    }

    /// `log(w_j) + log N(x | mu_j, sigma_j^2)` for each component.
    pub fn log_joint(&self, x: &[T]) -> Vec<T> {
        let ln_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        let half = T::lit(0.5);
        (0..self.k())
            .map(|j| {
                let mut acc = T::zero();
                for ((&xi, &mu), &var) in x.iter().zip(self.means.row(j)).zip(self.variances.row(j)) {
                    let d = xi - mu;
                    acc = acc + d * d / var + var.ln() + ln_2pi;
                }
                self.weights[j].ln() - half * acc
            })
            .collect()
    }

    /// Posterior component probabilities of `x`.
    pub fn responsibilities(&self, x: &[T]) -> Vec<T> {
        let lj = self.log_joint(x);
        let norm = log_sum_exp(&lj);
        lj.into_iter().map(|v| (v - norm).exp()).collect()
    }

    /// Total log-likelihood of a feature set.
    pub fn log_likelihood(&self, features: &FeatureMatrix<T>) -> f64 {
        features
            .rows()
            .map(|x| log_sum_exp(&self.log_joint(x)).as_f64())
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, d) = (self.k(), self.dim());
        let mut w = ByteWriter::with_capacity(14 + 4 * (k + 2 * k * d));
        w.bytes(GMM_MAGIC);
        w.u16(MODEL_VERSION);
        w.u32(k as u32);
        w.u32(d as u32);
        for &v in self
            .weights
            .iter()
            .chain(self.means.as_flat())
            .chain(self.variances.as_flat())
        {
            w.f32(v.to_f32_lossy());
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(GMM_MAGIC, "D3GM")?;
        read_version(&mut r)?;
        let (k, d) = read_kd(&mut r)?;
        let conv = |v: Vec<f32>| v.into_iter().map(T::from_f32_lossless).collect::<Vec<T>>();
        let weights = conv(r.f32_vec(k)?);
        let means = FeatureMatrix::from_flat(d, conv(r.f32_vec(k * d)?))?;
        let variances = FeatureMatrix::from_flat(d, conv(r.f32_vec(k * d)?))?;
        r.expect_end()?;
        Self::new(weights, means, variances)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GmmTrace {
    /// Log-likelihood of the data under the parameters entering each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub kmeans_iters: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_iters: GMM_MAX_ITERS,
            tol: GMM_TOL,
            kmeans_iters: KMEANS_MAX_ITERS,
        }
    }
}

pub fn fit_gmm<T: Scalar>(features: &FeatureMatrix<T>, k: usize, seed: u64) -> Result<GmmModel<T>> {
    fit_gmm_traced(features, k, seed, &GmmOptions::default()).map(|(g, _)| g)
}

/// Floor applied to every variance: a fraction of the mean per-dimension data variance.
pub fn variance_floor<T: Scalar>(features: &FeatureMatrix<T>) -> T {
    let m = T::from_usize(features.len()).expect("count fits scalar");
    let d = features.dim();
    let mut mean = vec![T::zero(); d];
    for x in features.rows() {
        mean.iter_mut().zip(x).for_each(|(a, &v)| *a = *a + v);
    }
    mean.iter_mut().for_each(|a| *a = *a / m);
    let mut var = vec![T::zero(); d];
    for x in features.rows() {
        for ((a, &v), &mu) in var.iter_mut().zip(x).zip(&mean) {
            let dv = v - mu;
            *a = *a + dv * dv;
        }
    }
    let avg = var.iter().copied().sum::<T>() / m / T::from_usize(d).expect("dim fits scalar");
    (T::lit(VARIANCE_FLOOR_RATIO) * avg).max(T::min_positive_value().sqrt())
}

pub fn fit_gmm_traced<T: Scalar>(
    features: &FeatureMatrix<T>,
    k: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<(GmmModel<T>, GmmTrace)> {
    if k == 0 {
        return Err(D3Error::Config("mixture size must be at least 1".into()));
    }
    let m = features.len();
    if m < k {
        return Err(D3Error::Infeasible(format!(
            "{m} training features cannot support {k} components"
        )));
    }
    let d = features.dim();
    let floor = variance_floor(features);
    let cb = kmeans_pp(features, k, seed, opts.kmeans_iters)?;

    // initial variances from the hard k-means partition
    let means = cb.centroids().clone();
    let mut variances = FeatureMatrix::from_flat(d, vec![T::zero(); k * d])?;
    let mut counts = vec![0usize; k];
    for x in features.rows() {
        let j = cb.assign(x);
        counts[j] += 1;
        for ((a, &v), &mu) in variances.row_mut(j).iter_mut().zip(x).zip(means.row(j)) {
            let dv = v - mu;
            *a = *a + dv * dv;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let c = T::from_usize(c.max(1)).expect("count fits scalar");
        variances
            .row_mut(j)
            .iter_mut()
            .for_each(|v| *v = (*v / c).max(floor));
    }
    let w0 = T::one() / T::from_usize(k).expect("k fits scalar");
    let mut model = GmmModel::new(vec![w0; k], means, variances)?;

    let mut trace = GmmTrace::default();
    let tiny = T::min_positive_value().sqrt();
    let mut prev_ll: Option<f64> = None;
    for iter in 0..opts.max_iters {
        // E-step with sufficient statistics accumulated in a fixed order
        let mut nk = vec![T::zero(); k];
        let mut sx = FeatureMatrix::from_flat(d, vec![T::zero(); k * d])?;
        let mut ll = 0.0f64;
        let mut resp_all = Vec::with_capacity(m * k);
        for x in features.rows() {
            let lj = model.log_joint(x);
            let norm = log_sum_exp(&lj);
            ll += norm.as_f64();
            for (j, &l) in lj.iter().enumerate() {
                let r = (l - norm).exp();
                resp_all.push(r);
                nk[j] = nk[j] + r;
                for (a, &v) in sx.row_mut(j).iter_mut().zip(x) {
                    *a = *a + r * v;
                }
            }
        }
        trace.log_likelihood.push(ll);
        trace.iterations = iter + 1;
        if let Some(p) = prev_ll {
            if ((ll - p) / p.abs().max(f64::MIN_POSITIVE)) < opts.tol {
                trace.converged = true;
                break;
            }
        }
        prev_ll = Some(ll);

        // M-step
        let mut new_means = model.means.clone();
        for j in 0..k {
            if nk[j] > tiny {
                for (mu, &s) in new_means.row_mut(j).iter_mut().zip(sx.row(j)) {
                    *mu = s / nk[j];
                }
            }
        }
        let mut sq = FeatureMatrix::from_flat(d, vec![T::zero(); k * d])?;
        for (i, x) in features.rows().enumerate() {
            for j in 0..k {
                let r = resp_all[i * k + j];
                for ((a, &v), &mu) in sq.row_mut(j).iter_mut().zip(x).zip(new_means.row(j)) {
                    let dv = v - mu;
                    *a = *a + r * dv * dv;
                }
            }
        }
        let mut new_vars = model.variances.clone();
        let mut new_weights = model.weights.clone();
        let mf = T::from_usize(m).expect("count fits scalar");
        for j in 0..k {
            if nk[j] > tiny {
                for (v, &s) in new_vars.row_mut(j).iter_mut().zip(sq.row(j)) {
                    *v = (s / nk[j]).max(floor);
                }
                new_weights[j] = nk[j] / mf;
            } else {
                // starved component keeps its parameters with a negligible weight
                new_weights[j] = tiny;
            }
        }
        let wsum: T = new_weights.iter().copied().sum();
        new_weights.iter_mut().for_each(|w| *w = *w / wsum);
        model = GmmModel::new(new_weights, new_means, new_vars)?;
    }
    Ok((model, trace))
}

pub fn save_codebook<T: Scalar>(cb: &Codebook<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cb.to_bytes()).map_err(|e| D3Error::io(path, e))
}

pub fn load_codebook<T: Scalar>(path: impl AsRef<Path>) -> Result<Codebook<T>> {
    let path = path.as_ref();
    Codebook::from_bytes(&fs::read(path).map_err(|e| D3Error::io(path, e))?)
}

pub fn save_gmm<T: Scalar>(gmm: &GmmModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, gmm.to_bytes()).map_err(|e| D3Error::io(path, e))
}

pub fn load_gmm<T: Scalar>(path: impl AsRef<Path>) -> Result<GmmModel<T>> {
    let path = path.as_ref();
    GmmModel::from_bytes(&fs::read(path).map_err(|e| D3Error::io(path, e))?)
}
