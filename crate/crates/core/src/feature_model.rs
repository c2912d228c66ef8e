//! Per-frame feature sequences, the `D3FT` container and dataset manifests.
//!
//! A sequence holds, for each of its `N` frames, one global vector (used for
//! key-frame selection) and a grid of `L` local vectors (used for
//! description). Everything is stored as `f32`, frame-major.
//!
//! `D3FT` layout, all little-endian:
//!
//! ```text
//! "D3FT" | u16 version=1 | u32 N | u32 global_dim | u32 L | u32 local_dim | f32 fps
//! | N*global_dim f32 | N*L*local_dim f32
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{D3Error, Result};
use crate::io_util::{ByteReader, ByteWriter};

pub const D3FT_MAGIC: &[u8; 4] = b"D3FT";
pub const D3FT_VERSION: u16 = 1;
pub const DEFAULT_FPS: f32 = 25.0;

const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    video_id: String,
    num_frames: usize,
    global_dim: usize,
    local_count: usize,
    local_dim: usize,
    fps: f32,
    global: Vec<f32>,
    local: Vec<f32>,
}

impl FrameFeatureSequence {
    /// Builds and validates a sequence from frame-major flat buffers.
    pub fn new(
        video_id: impl Into<String>,
        global_dim: usize,
        local_count: usize,
        local_dim: usize,
        fps: f32,
        global: Vec<f32>,
        local: Vec<f32>,
    ) -> Result<Self> {
        if global_dim == 0 {
            return Err(D3Error::Validation {
                frame: 0,
                message: "global_dim must be positive".into(),
            });
        }
        if local_count == 0 || local_dim == 0 {
            return Err(D3Error::Validation {
                frame: 0,
                message: "local grid must have positive size and dimension".into(),
            });
        }
        if global.is_empty() || global.len() % global_dim != 0 {
            return Err(D3Error::Validation {
                frame: 0,
                message: format!(
                    "{} global values do not form whole frames of {global_dim}",
                    global.len()
                ),
            });
        }
        let num_frames = global.len() / global_dim;
        if local.len() != num_frames * local_count * local_dim {
            return Err(D3Error::Validation {
                frame: 0,
                message: format!(
                    "expected {} local values for {num_frames} frames, got {}",
                    num_frames * local_count * local_dim,
                    local.len()
                ),
            });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(D3Error::Validation {
                frame: 0,
                message: format!("fps must be positive and finite, got {fps}"),
            });
        }
        let seq = Self {
            video_id: video_id.into(),
            num_frames,
            global_dim,
            local_count,
            local_dim,
            fps,
            global,
            local,
        };
        seq.check_finite()?;
        Ok(seq)
    }

    fn check_finite(&self) -> Result<()> {
        let per_frame = self.local_count * self.local_dim;
        for i in 0..self.num_frames {
            let g_ok = self.global(i).iter().all(|v| v.is_finite());
            let l_ok = self.local[i * per_frame..(i + 1) * per_frame]
                .iter()
                .all(|v| v.is_finite());
            if !(g_ok && l_ok) {
                return Err(D3Error::Validation {
                    frame: i,
                    message: "non-finite feature value".into(),
                });
            }
        }
        Ok(())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn with_video_id(mut self, id: impl Into<String>) -> Self {
        self.video_id = id.into();
        self
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn global_dim(&self) -> usize {
        self.global_dim
    }

    /// Number of local positions per frame (`L`).
    pub fn local_count(&self) -> usize {
        self.local_count
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn global(&self, frame: usize) -> &[f32] {
        &self.global[frame * self.global_dim..(frame + 1) * self.global_dim]
    }

    pub fn local(&self, frame: usize, position: usize) -> &[f32] {
        let start = (frame * self.local_count + position) * self.local_dim;
        &self.local[start..start + self.local_dim]
    }

    /// All `L` local vectors of one frame, position-major.
    pub fn frame_locals(&self, frame: usize) -> &[f32] {
        let per_frame = self.local_count * self.local_dim;
        &self.local[frame * per_frame..(frame + 1) * per_frame]
    }

    pub fn global_flat(&self) -> &[f32] {
        &self.global
    }

    pub fn local_flat(&self) -> &[f32] {
        &self.local
    }

    /// Serializes to the `D3FT` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(
            HEADER_LEN + 4 * (self.global.len() + self.local.len()),
        );
        w.bytes(D3FT_MAGIC);
        w.u16(D3FT_VERSION);
        w.u32(self.num_frames as u32);
        w.u32(self.global_dim as u32);
        w.u32(self.local_count as u32);
        w.u32(self.local_dim as u32);
        w.f32(self.fps);
        w.f32_slice(&self.global);
        w.f32_slice(&self.local);
        w.into_inner()
    }

    /// Parses a `D3FT` buffer; the video id is supplied by the caller.
    pub fn from_bytes(video_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r
            .take(4)
            .map_err(|_| D3Error::Format("file too short for D3FT magic".into()))?;
        if magic != D3FT_MAGIC {
            return Err(D3Error::Format(format!("bad magic {magic:?}, expected D3FT")));
        }
        let version = r.u16()?;
        if version != D3FT_VERSION {
            return Err(D3Error::Format(format!("unsupported D3FT version {version}")));
        }
        let n = r.u32()? as usize;
        let global_dim = r.u32()? as usize;
        let local_count = r.u32()? as usize;
        let local_dim = r.u32()? as usize;
        let fps = r.f32()?;
        if n == 0 {
            return Err(D3Error::Validation {
                frame: 0,
                message: "sequence has zero frames".into(),
            });
        }
        let global_len = checked_len(&[n, global_dim])?;
        let local_len = checked_len(&[n, local_count, local_dim])?;
        let expected = global_len
            .checked_add(local_len)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| D3Error::Corruption("header sizes overflow".into()))?;
        if r.remaining() != expected {
            return Err(D3Error::Corruption(format!(
                "payload has {} bytes, header implies {expected}",
                r.remaining()
            )));
        }
        let global = r.f32_vec(global_len)?;
        let local = r.f32_vec(local_len)?;
        Self::new(video_id, global_dim, local_count, local_dim, fps, global, local)
    }
}

fn checked_len(factors: &[usize]) -> Result<usize> {
    factors
        .iter()
        .try_fold(1usize, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| D3Error::Corruption("header sizes overflow".into()))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a `D3FT` file. The video id defaults to the file stem.
pub fn load_feature_sequence(path: impl AsRef<Path>) -> Result<FrameFeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| D3Error::io(path, e))?;
    FrameFeatureSequence::from_bytes(stem_of(path), &bytes)
}

pub fn save_feature_sequence(seq: &FrameFeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    // Sequences can only be built through validating constructors, but a
    // re-check keeps a corrupted in-memory value from reaching disk.
    seq.check_finite()?;
    let path = path.as_ref();
    fs::write(path, seq.to_bytes()).map_err(|e| D3Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub class_label: String,
    pub feature_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut class_names: Vec<String> = Vec::new();
        for e in &entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(D3Error::Manifest(format!(
                    "duplicate video_id '{}'",
                    e.video_id
                )));
            }
            if !class_names.contains(&e.class_label) {
                class_names.push(e.class_label.clone());
            }
        }
        Ok(Self {
            entries,
            class_names,
        })
    }

    /// Parses manifest text. Relative feature paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(D3Error::Parse {
                    line: line_no,
                    message: format!(
                        "expected 3 tab-separated fields (video_id, class_label, feature_path), found {}",
                        fields.len()
                    ),
                });
            }
            let names = ["video_id", "class_label", "feature_path"];
            for (f, name) in fields.iter().zip(names) {
                if f.trim().is_empty() {
                    return Err(D3Error::Parse {
                        line: line_no,
                        message: format!("missing {name}"),
                    });
                }
            }
            let p = PathBuf::from(fields[2].trim());
            entries.push(ManifestEntry {
                video_id: fields[0].trim().to_string(),
                class_label: fields[1].trim().to_string(),
                feature_path: if p.is_absolute() { p } else { base_dir.join(p) },
            });
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    /// Keeps only entries whose class is in `classes`; class order follows first appearance.
    pub fn restrict_to_classes(&self, classes: &[&str]) -> Result<Self> {
        Self::new(
            self.entries
                .iter()
                .filter(|e| classes.contains(&e.class_label.as_str()))
                .cloned()
                .collect(),
        )
    }

    /// Serializes back to the tab-separated text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                e.video_id,
                e.class_label,
                e.feature_path.display()
            ));
        }
        s
    }
}

/// Reads a manifest and checks that every feature file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| D3Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = DatasetManifest::parse(&text, base)?;
    if let Some(missing) = manifest
        .entries
        .iter()
        .find(|e| !e.feature_path.is_file())
    {
        return Err(D3Error::Manifest(format!(
            "feature file for '{}' not found: {}",
            missing.video_id,
            missing.feature_path.display()
        )));
    }
    Ok(manifest)
}

/// Loads the feature file of a manifest entry, tagging it with the entry's video id.
pub fn load_entry(entry: &ManifestEntry) -> Result<FrameFeatureSequence> {
    load_feature_sequence(&entry.feature_path).map(|s| s.with_video_id(entry.video_id.clone()))
}
