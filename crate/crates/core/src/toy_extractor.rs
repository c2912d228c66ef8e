//! Hand-crafted grid features over grayscale frames.
//!
//! Each frame is split into a `g x g` grid of cells. Every cell yields a
//! 10-dim local vector: mean intensity and intensity standard deviation
//! (both on a `[0, 1]` scale) followed by an 8-bin gradient-orientation
//! histogram. The global vector is the concatenation of all cells in
//! row-major order.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{D3Error, Result};
use crate::feature_model::FrameFeatureSequence;

pub const CELL_DIM: usize = 10;
pub const ORIENTATION_BINS: usize = 8;
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(D3Error::Geometry(format!(
                "frame {width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if width * height != pixels.len() {
            return Err(D3Error::Geometry(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> i32 {
        self.pixels[y * self.width + x] as i32
    }

    /// Gradient at a pixel, doubled so central differences stay integral.
    /// One-sided differences at the border are doubled the same way.
    fn gradient(&self, x: usize, y: usize) -> (i32, i32) {
        let gx = if x == 0 {
            2 * (self.at(1, y) - self.at(0, y))
        } else if x == self.width - 1 {
            2 * (self.at(x, y) - self.at(x - 1, y))
        } else {
            self.at(x + 1, y) - self.at(x - 1, y)
        };
        let gy = if y == 0 {
            2 * (self.at(x, 1) - self.at(x, 0))
        } else if y == self.height - 1 {
            2 * (self.at(x, y) - self.at(x, y - 1))
        } else {
            self.at(x, y + 1) - self.at(x, y - 1)
        };
        (gx, gy)
    }

    /// Parses a binary (P5) PGM image with `maxval <= 255`.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(D3Error::Format("truncated PGM header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(D3Error::Format(format!(
                "unsupported image type {:?}, expected binary PGM (P5)",
                tokens[0]
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| D3Error::Format(format!("bad PGM {what}: {s:?}")))
        };
        let width = parse(&tokens[1], "width")?;
        let height = parse(&tokens[2], "height")?;
        let maxval = parse(&tokens[3], "maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(D3Error::Format(format!(
                "PGM maxval {maxval} unsupported (1..=255)"
            )));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = width * height;
        if bytes.len() < pos + n {
            return Err(D3Error::Corruption(format!(
                "PGM raster has {} bytes, expected {n}",
                bytes.len().saturating_sub(pos)
            )));
        }
        let raster = &bytes[pos..pos + n];
        let pixels = if maxval == 255 {
            raster.to_vec()
        } else {
            raster
                .iter()
                .map(|&p| ((p.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8)
                .collect()
        };
        Self::new(width, height, pixels)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn orientation_bin(gx: i32, gy: i32) -> usize {
    if gx == 0 && gy == 0 {
        return 0;
    }
    let mut angle = (gy as f64).atan2(gx as f64);
    if angle < 0.0 {
        angle += 2.0 * PI;
    }
    ((angle / (2.0 * PI / ORIENTATION_BINS as f64)) as usize).min(ORIENTATION_BINS - 1)
}

/// Pixel range `[lo, hi)` covered by cell `c` of `g` along an axis of length `len`.
fn cell_span(c: usize, g: usize, len: usize) -> (usize, usize) {
    (c * len / g, (c + 1) * len / g)
}

/// Returns `(global, locals)`; `locals` holds `g*g` cell vectors of [`CELL_DIM`] values.
pub fn extract_grid_features(frame: &GrayFrame, grid: usize) -> Result<(Vec<f32>, Vec<Vec<f32>>)> {
    if grid == 0 {
        return Err(D3Error::Geometry("grid size must be at least 1".into()));
    }
    if grid > frame.width || grid > frame.height {
        return Err(D3Error::Geometry(format!(
            "grid {grid} exceeds frame {}x{}",
            frame.width, frame.height
        )));
    }
    let mut locals = Vec::with_capacity(grid * grid);
    for cy in 0..grid {
        let (y0, y1) = cell_span(cy, grid, frame.height);
        for cx in 0..grid {
            let (x0, x1) = cell_span(cx, grid, frame.width);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let mut sum = 0.0f64;
            let mut hist = [0u32; ORIENTATION_BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += frame.at(x, y) as f64 / 255.0;
                    let (gx, gy) = frame.gradient(x, y);
                    hist[orientation_bin(gx, gy)] += 1;
                }
            }
            let mean = sum / count;
            let mut ss = 0.0f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = frame.at(x, y) as f64 / 255.0 - mean;
                    ss += d * d;
                }
            }
            let mut cell = Vec::with_capacity(CELL_DIM);
            cell.push(mean as f32);
            cell.push((ss / count).sqrt() as f32);
            let total: u32 = hist.iter().sum();
            cell.extend(hist.iter().map(|&h| (h as f64 / total as f64) as f32));
            locals.push(cell);
        }
    }
    let global = locals.concat();
    Ok((global, locals))
}

/// Extracts every frame (in parallel) and assembles them in order.
pub fn extract_video(
    video_id: impl Into<String>,
    frames: &[GrayFrame],
    grid: usize,
    fps: f32,
) -> Result<FrameFeatureSequence> {
    use rayon::prelude::*;

    let first = frames
        .first()
        .ok_or_else(|| D3Error::Geometry("no frames".into()))?;
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.width != first.width || f.height != first.height)
    {
        return Err(D3Error::Geometry(format!(
            "frame {i} is {}x{}, expected {}x{}",
            f.width, f.height, first.width, first.height
        )));
    }
    let per_frame: Vec<(Vec<f32>, Vec<Vec<f32>>)> = frames
        .par_iter()
        .map(|f| extract_grid_features(f, grid))
        .collect::<Result<_>>()?;
    let mut global = Vec::with_capacity(frames.len() * grid * grid * CELL_DIM);
    let mut local = Vec::with_capacity(global.capacity());
    for (g, l) in per_frame {
        global.extend(g);
        for cell in l {
            local.extend(cell);
        }
    }
    FrameFeatureSequence::new(
        video_id,
        grid * grid * CELL_DIM,
        grid * grid,
        CELL_DIM,
        fps,
        global,
        local,
    )
}

/// Lists `*.pgm` files of a directory in lexicographic order.
pub fn list_pgm_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| D3Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_pgm(path: &Path) -> Result<GrayFrame> {
    let bytes = fs::read(path).map_err(|e| D3Error::io(path, e))?;
    GrayFrame::from_pgm(&bytes).map_err(|e| match e {
        D3Error::Format(m) => D3Error::Format(format!("{}: {m}", path.display())),
        D3Error::Geometry(m) => D3Error::Geometry(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads all PGM frames of `dir` in lexicographic order.
pub fn load_frame_dir(dir: &Path) -> Result<Vec<GrayFrame>> {
    let paths = list_pgm_frames(dir)?;
    if paths.is_empty() {
        return Err(D3Error::Geometry(format!("no frames in {}", dir.display())));
    }
    paths.iter().map(|p| load_pgm(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(w: usize, h: usize, v: u8) -> GrayFrame {
        GrayFrame::new(w, h, vec![v; w * h]).unwrap()
    }

    #[test]
    fn uniform_frame_cells() {
        let (global, locals) = extract_grid_features(&uniform(16, 12, 128), 3).unwrap();
        assert_eq!(locals.len(), 9);
        assert_eq!(global.len(), 90);
        for cell in &locals {
            assert!((cell[0] - 128.0 / 255.0).abs() < 1e-6);
            assert_eq!(cell[1], 0.0);
            assert_eq!(&cell[2..], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn single_cell_grid_is_global() {
        let px: Vec<u8> = (0..100).map(|i| (i * 7 % 251) as u8).collect();
        let f = GrayFrame::new(10, 10, px).unwrap();
        let (global, locals) = extract_grid_features(&f, 1).unwrap();
        assert_eq!(locals.len(), 1);
        assert_eq!(global, locals[0]);
    }

    #[test]
    fn oversize_grid_rejected() {
        assert!(matches!(
            extract_grid_features(&uniform(8, 9, 0), 9),
            Err(D3Error::Geometry(_))
        ));
        assert!(matches!(
            extract_grid_features(&uniform(8, 8, 0), 0),
            Err(D3Error::Geometry(_))
        ));
    }

    #[test]
    fn small_or_inconsistent_frames_rejected() {
        assert!(GrayFrame::new(7, 8, vec![0; 56]).is_err());
        assert!(GrayFrame::new(8, 8, vec![0; 63]).is_err());
    }

    #[test]
    fn orientation_bins() {
        assert_eq!(orientation_bin(0, 0), 0);
        assert_eq!(orientation_bin(1, 0), 0);
        assert_eq!(orientation_bin(0, 1), 2);
        assert_eq!(orientation_bin(-1, 0), 4);
        assert_eq!(orientation_bin(0, -1), 6);
        assert_eq!(orientation_bin(1, -1), 7);
    }

    #[test]
    fn pgm_round_trip_and_maxval_scaling() {
        let px: Vec<u8> = (0..64).map(|i| i as u8 * 3).collect();
        let f = GrayFrame::new(8, 8, px).unwrap();
        assert_eq!(GrayFrame::from_pgm(&f.to_pgm()).unwrap(), f);

        let mut b = b"P5\n# comment\n8 8\n15\n".to_vec();
        b.extend(std::iter::repeat(15u8).take(64));
        let g = GrayFrame::from_pgm(&b).unwrap();
        assert!(g.pixels().iter().all(|&p| p == 255));

        assert!(matches!(GrayFrame::from_pgm(b"P2\n8 8\n255\n"), Err(D3Error::Format(_))));
        assert!(matches!(
            GrayFrame::from_pgm(b"P5\n8 8\n255\n\x00\x01"),
            Err(D3Error::Corruption(_))
        ));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let frames = vec![uniform(8, 8, 1), uniform(9, 8, 1)];
        assert!(matches!(
            extract_video("v", &frames, 2, 25.0),
            Err(D3Error::Geometry(_))
        ));
        assert!(matches!(extract_video("v", &[], 2, 25.0), Err(D3Error::Geometry(_))));
    }

    #[test]
    fn seven_grid_gives_49_positions() {
        let s = extract_video("v", &[uniform(14, 14, 3), uniform(14, 14, 9)], 7, 25.0).unwrap();
        assert_eq!(s.local_count(), 49);
        assert_eq!(s.global_dim(), 490);
        assert_eq!(s.local_dim(), 10);
    }
}
