//! Aggregation of local feature pools into fixed-length video descriptors.
//!
//! * BoF: L1-normalized histogram of nearest-word assignments (`k` dims).
//! * VLAD: per-word residual sums, globally L2-normalized (`k * d` dims).
//! * FV: first- and second-order Fisher statistics under a diagonal GMM,
//!   signed-square-root then L2-normalized (`2 * k * d` dims), laid out as
//!   `[phi1_1, phi2_1, phi1_2, phi2_2, ...]`.
//!
//! A video descriptor concatenates the static encoding (local features of
//! the key frames) with the dynamic encoding (temporal variances over the
//! key segments).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::codebook::{Codebook, GmmModel};
use crate::error::{D3Error, Result};
use crate::feature_model::FrameFeatureSequence;
use crate::io_util::{ByteReader, ByteWriter};
use crate::key_selection::SelectionResult;
use crate::matrix::FeatureMatrix;
use crate::scalar::{l1_normalize, l2_normalize, log_sum_exp, Scalar};
use crate::temporal_moments::segment_moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingKind {
    Bof,
    Vlad,
    Fv,
}

impl EncodingKind {
    /// Output length for a model with `k` words/components over `d` dims.
    pub fn output_dim(self, k: usize, d: usize) -> usize {
        match self {
            EncodingKind::Bof => k,
            EncodingKind::Vlad => k * d,
            EncodingKind::Fv => 2 * k * d,
        }
    }
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingKind::Bof => "bof",
            EncodingKind::Vlad => "vlad",
            EncodingKind::Fv => "fv",
        })
    }
}

impl FromStr for EncodingKind {
    type Err = D3Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bof" => Ok(EncodingKind::Bof),
            "vlad" => Ok(EncodingKind::Vlad),
            "fv" => Ok(EncodingKind::Fv),
            other => Err(D3Error::Config(format!(
                "unknown encoding '{other}' (expected bof, vlad or fv)"
            ))),
        }
    }
}

fn check_pool<T: Scalar>(features: &FeatureMatrix<T>, dim: usize) -> Result<()> {
    if features.dim() != dim {
        return Err(D3Error::Shape(format!(
            "features have dim {}, model expects {dim}",
            features.dim()
        )));
    }
    if features.is_empty() {
        return Err(D3Error::Shape("empty feature pool".into()));
    }
    Ok(())
}

/// Raw word counts; shares its nearest-word routine with VLAD.
pub fn bof_counts<T: Scalar>(features: &FeatureMatrix<T>, cb: &Codebook<T>) -> Result<Vec<usize>> {
    check_pool(features, cb.dim())?;
    let mut counts = vec![0usize; cb.k()];
    for x in features.rows() {
        counts[cb.assign(x)] += 1;
    }
    Ok(counts)
}

pub fn encode_bof<T: Scalar>(features: &FeatureMatrix<T>, cb: &Codebook<T>) -> Result<Vec<T>> {
    let mut h: Vec<T> = bof_counts(features, cb)?
        .into_iter()
        .map(|c| T::from_usize(c).expect("count fits scalar"))
        .collect();
    l1_normalize(&mut h);
    Ok(h)
}

/// Residual sums before normalization.
pub fn vlad_raw<T: Scalar>(features: &FeatureMatrix<T>, cb: &Codebook<T>) -> Result<Vec<T>> {
    check_pool(features, cb.dim())?;
    let d = cb.dim();
    let mut v = vec![T::zero(); cb.k() * d];
    for x in features.rows() {
        let j = cb.assign(x);
        for ((acc, &xi), &c) in v[j * d..(j + 1) * d].iter_mut().zip(x).zip(cb.word(j)) {
            *acc = *acc + (xi - c);
        }
    }
    Ok(v)
}

pub fn encode_vlad<T: Scalar>(features: &FeatureMatrix<T>, cb: &Codebook<T>) -> Result<Vec<T>> {
    let mut v = vlad_raw(features, cb)?;
    l2_normalize(&mut v);
    Ok(v)
}

/// Fisher statistics before power and L2 normalization.
pub fn fisher_raw<T: Scalar>(features: &FeatureMatrix<T>, gmm: &GmmModel<T>) -> Result<Vec<T>> {
    check_pool(features, gmm.dim())?;
    gmm.check_weights()?;
    let (k, d) = (gmm.k(), gmm.dim());
    let mut out = vec![T::zero(); 2 * k * d];
    let sigmas: Vec<Vec<T>> = (0..k)
        .map(|j| gmm.variances().row(j).iter().map(|v| v.sqrt()).collect())
        .collect();
    for x in features.rows() {
        let lj = gmm.log_joint(x);
        let norm = log_sum_exp(&lj);
        for j in 0..k {
            let alpha = (lj[j] - norm).exp();
            if alpha == T::zero() {
                continue;
            }
            let block = &mut out[2 * j * d..2 * (j + 1) * d];
            let (first, second) = block.split_at_mut(d);
            for t in 0..d {
                let u = (x[t] - gmm.means().row(j)[t]) / sigmas[j][t];
                first[t] = first[t] + alpha * u;
                second[t] = second[t] + alpha * (u * u - T::one());
            }
        }
    }
    let m = T::from_usize(features.len()).expect("count fits scalar");
    let two = T::lit(2.0);
    for j in 0..k {
        let w = gmm.weights()[j];
        let s1 = T::one() / (m * w.sqrt());
        let s2 = T::one() / (m * (two * w).sqrt());
        let block = &mut out[2 * j * d..2 * (j + 1) * d];
        block[..d].iter_mut().for_each(|v| *v = *v * s1);
        block[d..].iter_mut().for_each(|v| *v = *v * s2);
    }
    Ok(out)
}

pub fn power_l2_normalize<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = x.signum() * x.abs().sqrt());
    // signum(0) is 1 for +0.0, but sqrt(0) keeps the product zero
    l2_normalize(v);
}

pub fn encode_fv<T: Scalar>(features: &FeatureMatrix<T>, gmm: &GmmModel<T>) -> Result<Vec<T>> {
    let mut v = fisher_raw(features, gmm)?;
    power_l2_normalize(&mut v);
    Ok(v)
}

/// A trained encoder for one stream.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodingModel<T> {
    Bof(Codebook<T>),
    Vlad(Codebook<T>),
    Fv(GmmModel<T>),
}

impl<T: Scalar> EncodingModel<T> {
    pub fn kind(&self) -> EncodingKind {
        match self {
            EncodingModel::Bof(_) => EncodingKind::Bof,
            EncodingModel::Vlad(_) => EncodingKind::Vlad,
            EncodingModel::Fv(_) => EncodingKind::Fv,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EncodingModel::Bof(c) | EncodingModel::Vlad(c) => c.dim(),
            EncodingModel::Fv(g) => g.dim(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            EncodingModel::Bof(c) | EncodingModel::Vlad(c) => c.k(),
            EncodingModel::Fv(g) => g.k(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.kind().output_dim(self.k(), self.dim())
    }

    pub fn encode(&self, features: &FeatureMatrix<T>) -> Result<Vec<T>> {
        match self {
            EncodingModel::Bof(c) => encode_bof(features, c),
            EncodingModel::Vlad(c) => encode_vlad(features, c),
            EncodingModel::Fv(g) => encode_fv(features, g),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            EncodingModel::Bof(c) | EncodingModel::Vlad(c) => c.to_bytes(),
            EncodingModel::Fv(g) => g.to_bytes(),
        }
    }

    /// Reads a `D3CB`/`D3GM` container; codebooks are tagged with `kind`.
    pub fn from_bytes(kind: EncodingKind, bytes: &[u8]) -> Result<Self> {
        Ok(match kind {
            EncodingKind::Bof => EncodingModel::Bof(Codebook::from_bytes(bytes)?),
            EncodingKind::Vlad => EncodingModel::Vlad(Codebook::from_bytes(bytes)?),
            EncodingKind::Fv => EncodingModel::Fv(GmmModel::from_bytes(bytes)?),
        })
    }
}

/// The two local-feature pools of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPools<T> {
    pub static_pool: FeatureMatrix<T>,
    pub dynamic_pool: FeatureMatrix<T>,
}

/// Collects `L * R` static and `L * R` dynamic local features.
pub fn build_pools<T: Scalar>(seq: &FrameFeatureSequence, selection: &SelectionResult) -> Result<VideoPools<T>> {
    let n = seq.num_frames();
    let mut static_pool = FeatureMatrix::new(seq.local_dim());
    for &f in &selection.key_indices {
        if f >= n {
            return Err(D3Error::Bounds(format!("key frame {f} outside 0..{n}")));
        }
        for j in 0..seq.local_count() {
            static_pool.push_f32(seq.local(f, j))?;
        }
    }
    let mut dynamic_pool = FeatureMatrix::new(seq.local_dim());
    for seg in &selection.segments {
        let moments = segment_moments(seq, seg)?;
        for t in moments.positions() {
            dynamic_pool.push_f32(t)?;
        }
    }
    if static_pool.is_empty() {
        return Err(D3Error::Infeasible("selection has no key frames".into()));
    }
    Ok(VideoPools {
        static_pool,
        dynamic_pool,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoDescriptor<T> {
    pub video_id: String,
    pub kind: EncodingKind,
    pub d3s: Vec<T>,
    pub d3d: Vec<T>,
    pub d3: Vec<T>,
}

pub fn describe_pools<T: Scalar>(
    video_id: &str,
    pools: &VideoPools<T>,
    static_model: &EncodingModel<T>,
    dynamic_model: &EncodingModel<T>,
) -> Result<VideoDescriptor<T>> {
    if static_model.kind() != dynamic_model.kind() {
        return Err(D3Error::Config(format!(
            "static model is {} but dynamic model is {}",
            static_model.kind(),
            dynamic_model.kind()
        )));
    }
    let d3s = static_model.encode(&pools.static_pool)?;
    let d3d = dynamic_model.encode(&pools.dynamic_pool)?;
    let d3 = [d3s.as_slice(), d3d.as_slice()].concat();
    Ok(VideoDescriptor {
        video_id: video_id.to_string(),
        kind: static_model.kind(),
        d3s,
        d3d,
        d3,
    })
}

pub fn describe_video<T: Scalar>(
    seq: &FrameFeatureSequence,
    selection: &SelectionResult,
    static_model: &EncodingModel<T>,
    dynamic_model: &EncodingModel<T>,
) -> Result<VideoDescriptor<T>> {
    let pools = build_pools(seq, selection)?;
    describe_pools(seq.video_id(), &pools, static_model, dynamic_model)
}

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"D3DS";
pub const DESCRIPTOR_VERSION: u16 = 1;

/// `"D3DS" | u16 version | u32 count | u32 dim | count * (u32 id_len | id bytes | dim f32)`.
pub fn descriptors_to_bytes(items: &[(String, Vec<f32>)]) -> Result<Vec<u8>> {
    let dim = items.first().map_or(0, |(_, v)| v.len());
    if let Some((id, v)) = items.iter().find(|(_, v)| v.len() != dim) {
        return Err(D3Error::Shape(format!(
            "descriptor '{id}' has {} dims, expected {dim}",
            v.len()
        )));
    }
    let mut w = ByteWriter::with_capacity(14 + items.len() * (8 + 4 * dim));
    w.bytes(DESCRIPTOR_MAGIC);
    w.u16(DESCRIPTOR_VERSION);
    w.u32(items.len() as u32);
    w.u32(dim as u32);
    for (id, v) in items {
        w.u32(id.len() as u32);
        w.bytes(id.as_bytes());
        w.f32_slice(v);
    }
    Ok(w.into_inner())
}

pub fn descriptors_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Vec<f32>)>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(DESCRIPTOR_MAGIC, "D3DS")?;
    let v = r.u16()?;
    if v != DESCRIPTOR_VERSION {
        return Err(D3Error::Format(format!("unsupported D3DS version {v}")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| D3Error::Corruption("video id is not UTF-8".into()))?;
        out.push((id, r.f32_vec(dim)?));
    }
    r.expect_end()?;
    Ok(out)
}

pub fn save_descriptors(items: &[(String, Vec<f32>)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, descriptors_to_bytes(items)?).map_err(|e| D3Error::io(path, e))
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f32>)>> {
    let path = path.as_ref();
    descriptors_from_bytes(&fs::read(path).map_err(|e| D3Error::io(path, e))?)
}
