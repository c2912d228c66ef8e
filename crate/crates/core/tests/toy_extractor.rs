use d3_core::toy_extractor::{load_frame_dir, CELL_DIM, ORIENTATION_BINS};
use d3_core::{extract_grid_features, extract_video, D3Error, GrayFrame};
use proptest::prelude::*;

/// Straightforward per-pixel transcription of the cell descriptor.
fn oracle_cell(px: &[u8], w: usize, h: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> Vec<f64> {
    let at = |x: usize, y: usize| px[y * w + x] as f64;
    let grad = |x: usize, y: usize| {
        let gx = if x == 0 {
            2.0 * (at(1, y) - at(0, y))
        } else if x == w - 1 {
            2.0 * (at(x, y) - at(x - 1, y))
        } else {
            at(x + 1, y) - at(x - 1, y)
        };
        let gy = if y == 0 {
            2.0 * (at(x, 1) - at(x, 0))
        } else if y == h - 1 {
            2.0 * (at(x, y) - at(x, y - 1))
        } else {
            at(x, y + 1) - at(x, y - 1)
        };
        (gx, gy)
    };
    let mut vals = Vec::new();
    let mut hist = [0.0f64; 8];
    for y in y0..y1 {
        for x in x0..x1 {
            vals.push(at(x, y) / 255.0);
            let (gx, gy) = grad(x, y);
            let mut a = gy.atan2(gx);
            if a < 0.0 {
                a += 2.0 * std::f64::consts::PI;
            }
            hist[((a / (std::f64::consts::PI / 4.0)) as usize).min(7)] += 1.0;
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut cell = vec![mean, std];
    cell.extend(hist.iter().map(|c| c / n));
    cell
}

fn checkerboard(side: usize, square: usize) -> GrayFrame {
    let px = (0..side * side)
        .map(|i| if ((i % side) / square + (i / side) / square) % 2 == 0 { 200 } else { 40 })
        .collect();
    GrayFrame::new(side, side, px).unwrap()
}

fn assert_matches_oracle(frame: &GrayFrame, g: usize) {
    let (w, h) = (frame.width(), frame.height());
    let (global, locals) = extract_grid_features(frame, g).unwrap();
    assert_eq!(locals.len(), g * g);
    assert_eq!(global.len(), g * g * CELL_DIM);
    for cy in 0..g {
        for cx in 0..g {
            let want = oracle_cell(frame.pixels(), w, h, cx * w / g, (cx + 1) * w / g, cy * h / g, (cy + 1) * h / g);
            let got = &locals[cy * g + cx];
            for (a, b) in got.iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-6, "cell ({cx},{cy}): {got:?} vs {want:?}");
            }
            assert_eq!(&global[(cy * g + cx) * CELL_DIM..][..CELL_DIM], got.as_slice());
        }
    }
}

#[test]
fn checkerboard_matches_pixel_loop() {
    let frame = checkerboard(16, 4);
    assert_matches_oracle(&frame, 2);
    let (_, locals) = extract_grid_features(&frame, 2).unwrap();
    // each 8x8 cell holds two bright and two dark squares
    assert!((locals[0][0] - 120.0 / 255.0).abs() < 1e-6);
    assert!((locals[0][1] - 80.0 / 255.0).abs() < 1e-6);
}

#[test]
fn uniform_frame_has_all_votes_in_first_bin() {
    let frame = GrayFrame::new(9, 11, vec![77; 99]).unwrap();
    let (_, locals) = extract_grid_features(&frame, 3).unwrap();
    for cell in locals {
        assert!(cell[1].abs() < 1e-7);
        assert_eq!(cell[2], 1.0);
        assert!(cell[3..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn pgm_round_trip_preserves_features() {
    let frame = checkerboard(12, 3);
    let back = GrayFrame::from_pgm(&frame.to_pgm()).unwrap();
    assert_eq!(back, frame);
    let with_comment = b"P5\n# made by hand\n8 8\n# max\n255\n".iter().copied().chain([9u8; 64]).collect::<Vec<_>>();
    assert_eq!(GrayFrame::from_pgm(&with_comment).unwrap().pixels(), &[9u8; 64][..]);
    assert!(matches!(GrayFrame::from_pgm(b"P2\n8 8\n255\n"), Err(D3Error::Format(_))));
}

#[test]
fn frame_directory_is_read_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    for (name, v) in [("f002.pgm", 30u8), ("f000.pgm", 10), ("f001.pgm", 20)] {
        std::fs::write(dir.path().join(name), GrayFrame::new(8, 8, vec![v; 64]).unwrap().to_pgm()).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let frames = load_frame_dir(dir.path()).unwrap();
    assert_eq!(frames.iter().map(|f| f.pixels()[0]).collect::<Vec<_>>(), [10, 20, 30]);

    let empty = tempfile::tempdir().unwrap();
    let err = load_frame_dir(empty.path()).unwrap_err();
    assert!(err.to_string().contains("no frames"), "{err}");
}

#[test]
fn bad_geometry_is_rejected() {
    assert!(matches!(GrayFrame::new(7, 8, vec![0; 56]), Err(D3Error::Geometry(_))));
    assert!(matches!(GrayFrame::new(8, 8, vec![0; 63]), Err(D3Error::Geometry(_))));
    let frame = GrayFrame::new(8, 8, vec![0; 64]).unwrap();
    assert!(matches!(extract_grid_features(&frame, 0), Err(D3Error::Geometry(_))));
    assert!(matches!(extract_grid_features(&frame, 9), Err(D3Error::Geometry(_))));
    let other = GrayFrame::new(8, 9, vec![0; 72]).unwrap();
    assert!(matches!(extract_video("v", &[frame, other], 2, 25.0), Err(D3Error::Geometry(_))));
}

fn frame_strategy() -> impl Strategy<Value = GrayFrame> {
    (8usize..20, 8usize..20).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h).prop_map(move |px| GrayFrame::new(w, h, px).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_frames_match_oracle(frame in frame_strategy(), g in 1usize..5) {
        assert_matches_oracle(&frame, g);
    }

    #[test]
    fn histograms_sum_to_one(frame in frame_strategy(), g in 1usize..5) {
        let (_, locals) = extract_grid_features(&frame, g).unwrap();
        for cell in locals {
            let s: f32 = cell[2..2 + ORIENTATION_BINS].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
            prop_assert!((0.0..=1.0).contains(&cell[0]));
        }
    }

    /// Extracting a video equals stacking per-frame extraction; reversing
    /// the frames reverses the rows.
    #[test]
    fn video_is_frame_composition(frames in prop::collection::vec(any::<u8>(), 3..6), g in 1usize..4) {
        let frames: Vec<GrayFrame> = frames
            .iter()
            .enumerate()
            .map(|(i, &v)| GrayFrame::new(10, 10, (0..100).map(|p| v.wrapping_add((p * (i + 1)) as u8)).collect()).unwrap())
            .collect();
        let seq = extract_video("v", &frames, g, 30.0).unwrap();
        prop_assert_eq!(seq.num_frames(), frames.len());
        prop_assert_eq!(seq.local_count(), g * g);
        for (i, f) in frames.iter().enumerate() {
            let (global, locals) = extract_grid_features(f, g).unwrap();
            prop_assert_eq!(seq.global(i), global.as_slice());
            let flat = locals.concat();
            prop_assert_eq!(seq.frame_locals(i), flat.as_slice());
        }
        let reversed: Vec<GrayFrame> = frames.iter().rev().cloned().collect();
        let rseq = extract_video("r", &reversed, g, 30.0).unwrap();
        let n = frames.len();
        for i in 0..n {
            prop_assert_eq!(rseq.global(i), seq.global(n - 1 - i));
        }
    }
}
