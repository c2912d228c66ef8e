mod common;

use d3_core::aggregation::{
    bof_counts, build_pools, describe_pools, descriptors_from_bytes, descriptors_to_bytes, fisher_raw, vlad_raw,
};
use d3_core::key_selection::selection_from_indices;
use d3_core::{
    describe_video, encode_bof, encode_fv, encode_vlad, Codebook, D3Error, EncodingKind, EncodingModel,
    FeatureMatrix, GmmModel,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rng: &mut ChaCha8Rng, m: usize, d: usize) -> FeatureMatrix<f64> {
    FeatureMatrix::from_flat(d, (0..m * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn nearest(x: &[f64], cb: &Codebook<f64>) -> usize {
    let mut best = 0;
    for j in 1..cb.k() {
        let dj: f64 = x.iter().zip(cb.word(j)).map(|(a, b)| (a - b).powi(2)).sum();
        let db: f64 = x.iter().zip(cb.word(best)).map(|(a, b)| (a - b).powi(2)).sum();
        if dj < db {
            best = j;
        }
    }
    best
}

fn gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    GmmModel::new(
        raw.iter().map(|w| w / s).collect(),
        mat(rng, k, d),
        FeatureMatrix::from_flat(d, (0..k * d).map(|_| rng.gen_range(0.3..2.0)).collect()).unwrap(),
    )
    .unwrap()
}

#[test]
fn bof_counts_nearest_words() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = mat(&mut rng, 50, 3);
    let cb = Codebook::new(mat(&mut rng, 6, 3)).unwrap();
    let mut want = vec![0usize; 6];
    x.rows().for_each(|r| want[nearest(r, &cb)] += 1);
    assert_eq!(bof_counts(&x, &cb).unwrap(), want);
    let h = encode_bof(&x, &cb).unwrap();
    for (a, &c) in h.iter().zip(&want) {
        assert!((a - c as f64 / 50.0).abs() < 1e-12);
    }
}

#[test]
fn vlad_accumulates_residuals_per_word() {
    let x = FeatureMatrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 1.0], vec![9.0, 9.0]]).unwrap();
    let cb = Codebook::new(FeatureMatrix::from_rows(&[vec![2.0, 0.0], vec![10.0, 10.0], vec![-50.0, 0.0]]).unwrap()).unwrap();
    assert_eq!(vlad_raw(&x, &cb).unwrap(), [0.0, 2.0, -1.0, -1.0, 0.0, 0.0]);
    let v = encode_vlad(&x, &cb).unwrap();
    let n = 6f64.sqrt();
    assert_eq!(v, [0.0, 2.0 / n, -1.0 / n, -1.0 / n, 0.0, 0.0]);

    // features equal to their words encode to the zero vector
    let z = encode_vlad(cb.centroids(), &cb).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
}

#[test]
fn fisher_vector_matches_hand_computation() {
    // k = 2, d = 1, five features; every quantity written out in full
    let xs = [-1.0f64, 0.0, 0.5, 2.0, 3.0];
    let (w, mu, var) = ([0.4f64, 0.6], [0.0f64, 2.0], [1.0f64, 0.5]);
    let g = GmmModel::new(
        w.to_vec(),
        FeatureMatrix::from_rows(&[vec![mu[0]], vec![mu[1]]]).unwrap(),
        FeatureMatrix::from_rows(&[vec![var[0]], vec![var[1]]]).unwrap(),
    )
    .unwrap();
    let x = FeatureMatrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
    let pdf = |v: f64, j: usize| (-(v - mu[j]).powi(2) / (2.0 * var[j])).exp() / (std::f64::consts::TAU * var[j]).sqrt();
    let mut want = [0.0f64; 4];
    for &v in &xs {
        let p = [w[0] * pdf(v, 0), w[1] * pdf(v, 1)];
        for j in 0..2 {
            let gamma = p[j] / (p[0] + p[1]);
            let u = (v - mu[j]) / var[j].sqrt();
            want[2 * j] += gamma * u / (5.0 * w[j].sqrt());
            want[2 * j + 1] += gamma * (u * u - 1.0) / (5.0 * (2.0 * w[j]).sqrt());
        }
    }
    let raw = fisher_raw(&x, &g).unwrap();
    for (a, b) in raw.iter().zip(want) {
        assert!((a - b).abs() <= 1e-5 * b.abs(), "{raw:?} vs {want:?}");
    }
    let mut norm: Vec<f64> = want.iter().map(|v| v.signum() * v.abs().sqrt()).collect();
    let l = norm.iter().map(|v| v * v).sum::<f64>().sqrt();
    norm.iter_mut().for_each(|v| *v /= l);
    for (a, b) in encode_fv(&x, &g).unwrap().iter().zip(norm) {
        assert!((a - b).abs() <= 1e-5 * b.abs());
    }
}

#[test]
fn descriptor_dimensions_follow_the_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // 49 positions of 10 dims, 20 frames
    let seq = common::random_sequence(&mut rng, 20, 490, 49, 10, 1.0);
    let keys: Vec<usize> = (0..15).collect();
    let sel = selection_from_indices(&seq, &keys, 4).unwrap();
    let pools = build_pools::<f64>(&seq, &sel).unwrap();
    assert_eq!(pools.static_pool.len(), 735);
    assert_eq!(pools.dynamic_pool.len(), 735);

    let s = EncodingModel::Fv(gmm(&mut rng, 128, 10));
    let d = EncodingModel::Fv(gmm(&mut rng, 128, 10));
    let desc = describe_video(&seq, &sel, &s, &d).unwrap();
    assert_eq!(desc.d3s.len(), 2560);
    assert_eq!(desc.d3d.len(), 2560);
    assert_eq!(desc.d3.len(), 5120);
    assert_eq!(&desc.d3[..2560], desc.d3s.as_slice());
    assert_eq!(EncodingKind::Fv.output_dim(128, 10), 2560);
    assert_eq!(EncodingKind::Vlad.output_dim(128, 10), 1280);
    assert_eq!(EncodingKind::Bof.output_dim(128, 10), 128);

    let v = EncodingModel::Vlad(Codebook::new(mat(&mut rng, 4, 10)).unwrap());
    assert!(matches!(describe_pools("x", &pools, &s, &v), Err(D3Error::Config(_))));
    let narrow = EncodingModel::Bof(Codebook::new(mat(&mut rng, 4, 3)).unwrap());
    assert!(matches!(narrow.encode(&pools.static_pool), Err(D3Error::Shape(_))));
}

#[test]
fn descriptor_container_round_trips() {
    let items = vec![("a".to_string(), vec![1.0f32, -2.5]), ("video two".to_string(), vec![0.0, 3.25])];
    let bytes = descriptors_to_bytes(&items).unwrap();
    assert_eq!(descriptors_from_bytes(&bytes).unwrap(), items);
    assert!(descriptors_from_bytes(&bytes[..bytes.len() - 2]).is_err());
    let ragged = vec![("a".to_string(), vec![1.0f32]), ("b".to_string(), vec![1.0, 2.0])];
    assert!(descriptors_to_bytes(&ragged).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn encodings_ignore_feature_order(seed in any::<u64>(), m in 1usize..30, k in 1usize..5, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = mat(&mut rng, m, d);
        let mut rows: Vec<Vec<f64>> = x.rows().map(<[f64]>::to_vec).collect();
        rows.shuffle(&mut rng);
        let y = FeatureMatrix::from_rows(&rows).unwrap();
        let cb = Codebook::new(mat(&mut rng, k, d)).unwrap();
        let g = gmm(&mut rng, k, d);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12);
        prop_assert_eq!(encode_bof(&x, &cb).unwrap(), encode_bof(&y, &cb).unwrap());
        prop_assert!(close(&encode_vlad(&x, &cb).unwrap(), &encode_vlad(&y, &cb).unwrap()));
        let fv = encode_fv(&x, &g).unwrap();
        prop_assert!(close(&fv, &encode_fv(&y, &g).unwrap()));
        let norm: f64 = fv.iter().map(|v| v * v).sum();
        prop_assert!((norm - 1.0).abs() < 1e-9 || norm == 0.0);
        prop_assert!((encode_bof(&x, &cb).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
