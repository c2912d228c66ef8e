//! Dynamic local features: per-position population variance of the local
//! features across the `tau + 1` frames of a key segment.

use crate::error::{D3Error, Result};
use crate::feature_model::FrameFeatureSequence;
use crate::key_selection::KeySegment;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicLocalFeatures {
    pub segment: KeySegment,
    local_count: usize,
    local_dim: usize,
    values: Vec<f32>,
}

impl DynamicLocalFeatures {
    pub fn local_count(&self) -> usize {
        self.local_count
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    /// Variance vector `t^j` for local position `j`.
    pub fn position(&self, j: usize) -> &[f32] {
        &self.values[j * self.local_dim..(j + 1) * self.local_dim]
    }

    pub fn positions(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.local_dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.values
    }
}

pub fn segment_moments(seq: &FrameFeatureSequence, segment: &KeySegment) -> Result<DynamicLocalFeatures> {
    let n = seq.num_frames();
    if segment.lo > segment.hi || segment.hi >= n {
        return Err(D3Error::Bounds(format!(
            "segment [{}, {}] outside 0..{n}",
            segment.lo, segment.hi
        )));
    }
    if segment.hi - segment.lo != segment.tau {
        return Err(D3Error::Bounds(format!(
            "segment [{}, {}] does not span tau = {}",
            segment.lo, segment.hi, segment.tau
        )));
    }
    let width = seq.local_count() * seq.local_dim();
    // Welford's update in f64, one accumulator per (position, dimension)
    let mut mean = vec![0.0f64; width];
    let mut m2 = vec![0.0f64; width];
    for (count, frame) in segment.frames().enumerate() {
        let k = (count + 1) as f64;
        for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(seq.frame_locals(frame)) {
            let x = x as f64;
            let delta = x - *m;
            *m += delta / k;
            *s += delta * (x - *m);
        }
    }
    let samples = segment.len() as f64;
    let values = m2.iter().map(|&s| (s / samples).max(0.0) as f32).collect();
    Ok(DynamicLocalFeatures {
        segment: *segment,
        local_count: seq.local_count(),
        local_dim: seq.local_dim(),
        values,
    })
}
