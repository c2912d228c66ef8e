//! Synthetic data shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use d3_core::feature_model::{save_feature_sequence, FrameFeatureSequence};
use d3_core::toy_extractor::{extract_video, GrayFrame};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 32;
pub const GRID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Horizontal,
    Vertical,
    Checker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    /// Brightness drifts slowly along one period over the whole clip.
    Slow,
    /// The same brightness values in shuffled temporal order.
    Shuffled,
}

/// Four classes: A/B share appearance and differ in motion, C/D share
/// motion and differ in appearance.
pub const CLASSES: [(&str, Pattern, Motion); 4] = [
    ("A", Pattern::Horizontal, Motion::Slow),
    ("B", Pattern::Horizontal, Motion::Shuffled),
    ("C", Pattern::Vertical, Motion::Shuffled),
    ("D", Pattern::Checker, Motion::Shuffled),
];

fn pattern_value(p: Pattern, x: usize, y: usize) -> f64 {
    let s = |v: usize| if (v / 4) % 2 == 0 { 1.0 } else { -1.0 };
    match p {
        Pattern::Horizontal => 30.0 * s(y),
        Pattern::Vertical => 30.0 * s(x),
        Pattern::Checker => 30.0 * s(x) * s(y),
    }
}

pub fn synthetic_frames(pattern: Pattern, motion: Motion, frames: usize, seed: u64) -> Vec<GrayFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp: f64 = rng.gen_range(35.0..45.0);
    let mut brightness: Vec<f64> = (0..frames)
        .map(|t| 128.0 + amp * (std::f64::consts::TAU * t as f64 / frames as f64 + phase).sin())
        .collect();
    if motion == Motion::Shuffled {
        brightness.shuffle(&mut rng);
    }
    brightness
        .iter()
        .map(|&b| {
            let px = (0..SIDE * SIDE)
                .map(|i| {
                    let (x, y) = (i % SIDE, i / SIDE);
                    (b + pattern_value(pattern, x, y)).round().clamp(0.0, 255.0) as u8
                })
                .collect();
            GrayFrame::new(SIDE, SIDE, px).unwrap()
        })
        .collect()
}

/// Writes `videos_per_class` feature files per class plus a manifest; returns the manifest path.
pub fn write_dataset(dir: &Path, classes: &[(&str, Pattern, Motion)], videos_per_class: usize, frames: usize, seed: u64) -> PathBuf {
    fs::create_dir_all(dir.join("features")).unwrap();
    let mut manifest = String::from("# synthetic dynamic scenes\n");
    for (ci, &(name, pattern, motion)) in classes.iter().enumerate() {
        for v in 0..videos_per_class {
            let id = format!("{name}{v:02}");
            let frames = synthetic_frames(pattern, motion, frames, seed ^ ((ci * 1000 + v) as u64 * 7919));
            let seq = extract_video(id.clone(), &frames, GRID, 25.0).unwrap();
            let rel = format!("features/{id}.d3ft");
            save_feature_sequence(&seq, dir.join(&rel)).unwrap();
            manifest.push_str(&format!("{id}\t{name}\t{rel}\n"));
        }
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).unwrap();
    path
}

/// Random sequence with the given shapes and values in `[-scale, scale)`.
pub fn random_sequence(rng: &mut impl Rng, n: usize, gdim: usize, l: usize, ldim: usize, scale: f32) -> FrameFeatureSequence {
    let global = (0..n * gdim).map(|_| rng.gen_range(-scale..scale)).collect();
    let local = (0..n * l * ldim).map(|_| rng.gen_range(-scale..scale)).collect();
    FrameFeatureSequence::new("rand", gdim, l, ldim, 25.0, global, local).unwrap()
}

/// Sequence whose global features are the given points (one local value per frame).
pub fn points_sequence(points: &[Vec<f64>]) -> FrameFeatureSequence {
    let d = points[0].len();
    let global = points.iter().flatten().map(|&v| v as f32).collect();
    FrameFeatureSequence::new("pts", d, 1, 1, 25.0, global, vec![0.0; points.len()]).unwrap()
}
