//! One-vs-rest linear SVMs and the leave-one-out evaluation protocol.
//!
//! Each binary problem minimizes
//! `0.5 * (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w.x_i + b))`
//! (the bias is handled as an extra constant feature) by dual coordinate
//! descent, stopping once the duality gap is below a relative tolerance.

use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregation::{build_pools, describe_pools, EncodingKind, EncodingModel, VideoDescriptor, VideoPools};
use crate::codebook::{fit_gmm_traced, kmeans_pp, GmmOptions, KMEANS_MAX_ITERS};
use crate::error::{D3Error, Result};
use crate::feature_model::{load_entry, DatasetManifest};
use crate::key_selection::{SelectionConfig, SelectionStrategy};
use crate::matrix::FeatureMatrix;
use crate::scalar::{dot, Scalar};
use crate::seed::derive_seed;

pub const DEFAULT_SVM_C: f64 = 100.0;
/// Relative duality gap at which the dual solver stops.
pub const SVM_GAP_TOL: f64 = 1e-6;
pub const SVM_MAX_EPOCHS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub class_names: Vec<String>,
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn scores(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(D3Error::Shape(format!(
                "input has {} dims, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| dot(w, x) + b)
            .collect())
    }

    /// Index of the winning class; ties go to the lowest index.
    pub fn predict_index(&self, x: &[T]) -> Result<usize> {
        let s = self.scores(x)?;
        let mut best = 0;
        for (c, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, x: &[T]) -> Result<&str> {
        Ok(&self.class_names[self.predict_index(x)?])
    }
}

/// Regularized hinge objective of one binary problem (`y` in {-1, +1}).
pub fn hinge_objective<T: Scalar>(w: &[T], b: T, x: &[Vec<T>], y: &[f64], c: f64) -> f64 {
    let reg = 0.5 * (dot(w, w).as_f64() + b.as_f64() * b.as_f64());
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - yi * (dot(w, xi) + b).as_f64()).max(0.0))
        .sum();
    reg + c * loss
}

/// Binary L1-loss SVM by dual coordinate descent. Returns `(w, b)`.
pub fn train_binary<T: Scalar>(x: &[Vec<T>], y: &[f64], c: f64, seed: u64) -> (Vec<T>, T) {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let cs = T::lit(c);
    let mut w = vec![T::zero(); d];
    let mut b = T::zero();
    let mut alpha = vec![T::zero(); n];
    let q: Vec<T> = x.iter().map(|xi| dot(xi, xi) + T::one()).collect();
    let ys: Vec<T> = y.iter().map(|&v| T::lit(v)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = SVM_GAP_TOL.max(100.0 * T::epsilon().as_f64());
    for epoch in 0..SVM_MAX_EPOCHS {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = ys[i] * (dot(&w, &x[i]) + b) - T::one();
            let pg = if alpha[i] == T::zero() {
                g.min(T::zero())
            } else if alpha[i] == cs {
                g.max(T::zero())
            } else {
                g
            };
            if pg == T::zero() {
                continue;
            }
            let old = alpha[i];
            let new = (old - g / q[i]).max(T::zero()).min(cs);
            let step = (new - old) * ys[i];
            if step != T::zero() {
                w.iter_mut().zip(&x[i]).for_each(|(wj, &xj)| *wj = *wj + step * xj);
                b = b + step;
                alpha[i] = new;
            }
        }
        if epoch % 4 == 3 || epoch + 1 == SVM_MAX_EPOCHS {
            let primal = hinge_objective(&w, b, x, y, c);
            let dual = alpha.iter().map(|a| a.as_f64()).sum::<f64>()
                - 0.5 * (dot(&w, &w).as_f64() + b.as_f64() * b.as_f64());
            if primal - dual <= tol * primal.abs().max(1e-12) {
                break;
            }
        }
    }
    (w, b)
}

/// One-vs-rest linear classifiers. `labels` index into `class_names`.
pub fn train_linear<T: Scalar>(
    x: &[Vec<T>],
    labels: &[usize],
    class_names: &[String],
    c: f64,
) -> Result<LinearModel<T>> {
    if class_names.len() < 2 {
        return Err(D3Error::Training("need at least two classes".into()));
    }
    if x.len() != labels.len() || x.is_empty() {
        return Err(D3Error::Shape(format!(
            "{} samples but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let d = x[0].len();
    if let Some(i) = x.iter().position(|xi| xi.len() != d) {
        return Err(D3Error::Shape(format!("sample {i} has {} dims, expected {d}", x[i].len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(D3Error::Config(format!("C must be positive, got {c}")));
    }
    for (ci, name) in class_names.iter().enumerate() {
        if !labels.contains(&ci) {
            return Err(D3Error::Training(format!("class '{name}' has no training samples")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
        return Err(D3Error::Training(format!("label {bad} has no class name")));
    }
    let per_class: Vec<(Vec<T>, T)> = (0..class_names.len())
        .into_par_iter()
        .map(|ci| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == ci { 1.0 } else { -1.0 }).collect();
            train_binary(x, &y, c, ci as u64)
        })
        .collect();
    let (weights, biases) = per_class.into_iter().unzip();
    Ok(LinearModel {
        class_names: class_names.to_vec(),
        weights,
        biases,
    })
}

/// Which part of the dual descriptor is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Static,
    Dynamic,
    Fused,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Static, Stream::Dynamic, Stream::Fused];

    pub fn pick<'a, T>(&self, d: &'a VideoDescriptor<T>) -> &'a [T] {
        match self {
            Stream::Static => &d.d3s,
            Stream::Dynamic => &d.d3d,
            Stream::Fused => &d.d3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stream::Static => "d3s",
            Stream::Dynamic => "d3d",
            Stream::Fused => "d3",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub strategy: SelectionStrategy,
    /// Key-frame count, segment size and search parameters; its seed is
    /// replaced by a per-video seed derived from `seed`.
    pub selection: SelectionConfig,
    pub encoding: EncodingKind,
    pub codebook_size: usize,
    pub seed: u64,
    pub shared_models: bool,
    pub svm_c: f64,
    pub kmeans_iters: usize,
    pub gmm: GmmOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::Medoid,
            selection: SelectionConfig::default(),
            encoding: EncodingKind::Fv,
            codebook_size: crate::codebook::DEFAULT_CODEBOOK_SIZE,
            seed: 0,
            shared_models: false,
            svm_c: DEFAULT_SVM_C,
            kmeans_iters: KMEANS_MAX_ITERS,
            gmm: GmmOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        if self.codebook_size == 0 {
            return Err(D3Error::Config("codebook size must be at least 1".into()));
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return Err(D3Error::Config(format!("svm C must be positive, got {}", self.svm_c)));
        }
        Ok(())
    }

    /// Key/value pairs echoed into every report.
    pub fn echo(&self) -> Vec<(String, String)> {
        let subset = self
            .selection
            .subset_size
            .map_or_else(|| format!("min(N,{})", 40 + 2 * self.selection.key_frames), |s| s.to_string());
        vec![
            ("strategy".into(), self.strategy.to_string()),
            ("frames".into(), self.selection.key_frames.to_string()),
            ("tau".into(), self.selection.tau.to_string()),
            ("subset".into(), subset),
            ("repeats".into(), self.selection.repeats.to_string()),
            ("encoding".into(), self.encoding.to_string()),
            ("codebook_size".into(), self.codebook_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("svm_c".into(), format!("{}", self.svm_c)),
            (
                "models".into(),
                if self.shared_models {
                    "shared (leaky: held-out video used for codebook training)".into()
                } else {
                    "per-fold".into()
                },
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub video_id: String,
    pub truth: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub stream: Stream,
    pub accuracy: f64,
    pub class_names: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Sorted by video id.
    pub predictions: Vec<Prediction>,
    pub config: Vec<(String, String)>,
    pub leaky: bool,
}

impl EvalReport {
    pub fn from_predictions(
        stream: Stream,
        class_names: Vec<String>,
        mut predictions: Vec<Prediction>,
        config: Vec<(String, String)>,
        leaky: bool,
    ) -> Self {
        predictions.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let idx = |s: &str| class_names.iter().position(|c| c == s).expect("known class");
        let mut confusion = vec![vec![0usize; class_names.len()]; class_names.len()];
        for p in &predictions {
            confusion[idx(&p.truth)][idx(&p.predicted)] += 1;
        }
        let correct = predictions.iter().filter(|p| p.truth == p.predicted).count();
        let accuracy = if predictions.is_empty() {
            0.0
        } else {
            correct as f64 / predictions.len() as f64
        };
        Self {
            stream,
            accuracy,
            class_names,
            confusion,
            predictions,
            config,
            leaky,
        }
    }

    pub fn correct(&self) -> usize {
        (0..self.class_names.len()).map(|c| self.confusion[c][c]).sum()
    }

    pub fn total(&self) -> usize {
        self.predictions.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("video_id,true,predicted\n");
        for p in &self.predictions {
            let _ = writeln!(s, "{},{},{}", p.video_id, p.truth, p.predicted);
        }
        s.push_str("\n# summary\nkey,value\n");
        let _ = writeln!(s, "stream,{}", self.stream);
        let _ = writeln!(s, "accuracy,{:.6}", self.accuracy);
        let _ = writeln!(s, "correct,{}", self.correct());
        let _ = writeln!(s, "total,{}", self.total());
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k},{}", v.replace(',', ";"));
        }
        for (t, row) in self.class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "confusion:{t},{}", cells.join(";"));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "LOOCV report ({})", self.stream);
        if self.leaky {
            let _ = writeln!(s, "WARNING: models shared across folds; held-out videos leaked into codebook training");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "  {k:<14} {v}");
        }
        let _ = writeln!(
            s,
            "accuracy: {:.2}% ({}/{})",
            100.0 * self.accuracy,
            self.correct(),
            self.total()
        );
        let width = self.class_names.iter().map(String::len).max().unwrap_or(4).max(5);
        let _ = write!(s, "\n{:>width$} |", "true\\pred");
        for c in &self.class_names {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (t, row) in self.class_names.iter().zip(&self.confusion) {
            let _ = write!(s, "{t:>width$} |");
            for v in row {
                let _ = write!(s, " {v:>width$}");
            }
            s.push('\n');
        }
        s
    }
}

/// Which videos fed each model of one fold; used to audit leakage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldProvenance {
    pub held_out: String,
    pub codebook_training: Vec<String>,
    pub classifier_training: Vec<String>,
}

/// Per-video state shared by every fold.
#[derive(Debug, Clone)]
pub struct PreparedVideo {
    pub id: String,
    /// Index into the manifest's class names.
    pub label: usize,
    pub pools: VideoPools<f64>,
}

/// Loads, selects and pools every manifest video (in parallel, manifest order).
pub fn prepare_videos(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<Vec<PreparedVideo>> {
    manifest
        .entries()
        .par_iter()
        .map(|e| {
            let run = || -> Result<PreparedVideo> {
                let seq = load_entry(e)?;
                let sel_cfg = SelectionConfig {
                    seed: derive_seed(cfg.seed, "select", &e.video_id),
                    ..cfg.selection.clone()
                };
                let selection = cfg.strategy.select(&seq, &sel_cfg)?;
                Ok(PreparedVideo {
                    id: e.video_id.clone(),
                    label: manifest.class_index(&e.class_label).expect("manifest class"),
                    pools: build_pools(&seq, &selection)?,
                })
            };
            run().map_err(|err| err.in_video(&e.video_id))
        })
        .collect()
}

fn train_model(
    kind: EncodingKind,
    pool: &FeatureMatrix<f64>,
    k: usize,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<EncodingModel<f64>> {
    Ok(match kind {
        EncodingKind::Bof => EncodingModel::Bof(kmeans_pp(pool, k, seed, cfg.kmeans_iters)?),
        EncodingKind::Vlad => EncodingModel::Vlad(kmeans_pp(pool, k, seed, cfg.kmeans_iters)?),
        EncodingKind::Fv => EncodingModel::Fv(fit_gmm_traced(pool, k, seed, &cfg.gmm)?.0),
    })
}

/// Static and dynamic models trained on the pools of `videos`; `key` names
/// the training set when deriving seeds.
pub fn train_stream_models(
    videos: &[&PreparedVideo],
    cfg: &PipelineConfig,
    key: &str,
) -> Result<(EncodingModel<f64>, EncodingModel<f64>)> {
    let first = &videos[0].pools;
    let mut st = FeatureMatrix::new(first.static_pool.dim());
    let mut dy = FeatureMatrix::new(first.dynamic_pool.dim());
    for v in videos {
        st.extend(&v.pools.static_pool)?;
        dy.extend(&v.pools.dynamic_pool)?;
    }
    let sm = train_model(cfg.encoding, &st, cfg.codebook_size, derive_seed(cfg.seed, "static-model", key), cfg)?;
    let dm = train_model(cfg.encoding, &dy, cfg.codebook_size, derive_seed(cfg.seed, "dynamic-model", key), cfg)?;
    Ok((sm, dm))
}

fn describe_all(
    videos: &[PreparedVideo],
    models: &(EncodingModel<f64>, EncodingModel<f64>),
) -> Result<Vec<VideoDescriptor<f64>>> {
    videos
        .iter()
        .map(|v| describe_pools(&v.id, &v.pools, &models.0, &models.1).map_err(|e| e.in_video(&v.id)))
        .collect()
}

/// Classifies the held-out video for each stream. Classes absent from the
/// training fold are dropped from that fold's classifier.
fn classify_fold(
    held: usize,
    videos: &[PreparedVideo],
    descriptors: &[VideoDescriptor<f64>],
    class_names: &[String],
    streams: &[Stream],
    c: f64,
) -> Result<Vec<String>> {
    let train: Vec<usize> = (0..videos.len()).filter(|&i| i != held).collect();
    let mut present: Vec<usize> = train.iter().map(|&i| videos[i].label).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(D3Error::Training("training fold has fewer than two classes".into()));
    }
    let names: Vec<String> = present.iter().map(|&c| class_names[c].clone()).collect();
    let labels: Vec<usize> = train
        .iter()
        .map(|&i| present.iter().position(|&c| c == videos[i].label).expect("present"))
        .collect();
    streams
        .iter()
        .map(|s| {
            let x: Vec<Vec<f64>> = train.iter().map(|&i| s.pick(&descriptors[i]).to_vec()).collect();
            let model = train_linear(&x, &labels, &names, c)?;
            Ok(model.predict(s.pick(&descriptors[held]))?.to_string())
        })
        .collect()
}

/// LOOCV for a single stream.
pub fn loocv(manifest: &DatasetManifest, cfg: &PipelineConfig, stream: Stream) -> Result<EvalReport> {
    Ok(loocv_streams(manifest, cfg, &[stream])?.pop().expect("one report"))
}

/// LOOCV for several streams at once, sharing selection and model training.
pub fn loocv_streams(manifest: &DatasetManifest, cfg: &PipelineConfig, streams: &[Stream]) -> Result<Vec<EvalReport>> {
    loocv_audited(manifest, cfg, streams).map(|(r, _)| r)
}

/// [`loocv_streams`] plus the per-fold training provenance.
pub fn loocv_audited(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    streams: &[Stream],
) -> Result<(Vec<EvalReport>, Vec<FoldProvenance>)> {
    cfg.validate()?;
    if manifest.class_names().len() < 2 {
        return Err(D3Error::Config("LOOCV needs at least two classes".into()));
    }
    if manifest.len() < 2 {
        return Err(D3Error::Config("LOOCV needs at least two videos".into()));
    }
    let videos = prepare_videos(manifest, cfg)?;
    let class_names = manifest.class_names().to_vec();

    let shared = if cfg.shared_models {
        let all: Vec<&PreparedVideo> = videos.iter().collect();
        let models = train_stream_models(&all, cfg, "*shared*")?;
        Some(describe_all(&videos, &models)?)
    } else {
        None
    };

    let folds: Vec<(Vec<String>, FoldProvenance)> = (0..videos.len())
        .into_par_iter()
        .map(|held| {
            let held_id = &videos[held].id;
            let run = || -> Result<(Vec<String>, FoldProvenance)> {
                let train_ids: Vec<String> = videos
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != held)
                    .map(|(_, v)| v.id.clone())
                    .collect();
                let (predictions, codebook_training) = match &shared {
                    Some(desc) => (
                        classify_fold(held, &videos, desc, &class_names, streams, cfg.svm_c)?,
                        videos.iter().map(|v| v.id.clone()).collect(),
                    ),
                    None => {
                        let train: Vec<&PreparedVideo> =
                            videos.iter().enumerate().filter(|&(i, _)| i != held).map(|(_, v)| v).collect();
                        let models = train_stream_models(&train, cfg, held_id)?;
                        let desc = describe_all(&videos, &models)?;
                        (
                            classify_fold(held, &videos, &desc, &class_names, streams, cfg.svm_c)?,
                            train_ids.clone(),
                        )
                    }
                };
                Ok((
                    predictions,
                    FoldProvenance {
                        held_out: held_id.clone(),
                        codebook_training,
                        classifier_training: train_ids,
                    },
                ))
            };
            run().map_err(|e| e.in_video(held_id))
        })
        .collect::<Result<_>>()?;

    let echo = cfg.echo();
    let reports = streams
        .iter()
        .enumerate()
        .map(|(si, &stream)| {
            let preds = videos
                .iter()
                .zip(&folds)
                .map(|(v, (p, _))| Prediction {
                    video_id: v.id.clone(),
                    truth: class_names[v.label].clone(),
                    predicted: p[si].clone(),
                })
                .collect();
            EvalReport::from_predictions(stream, class_names.clone(), preds, echo.clone(), cfg.shared_models)
        })
        .collect();
    let provenance = folds.into_iter().map(|(_, p)| p).collect();
    Ok((reports, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn separable_1d() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..20 {
            x.push(vec![-1.0f64]);
            y.push(0);
            x.push(vec![1.0]);
            y.push(1);
        }
        let m = train_linear(&x, &y, &names(2), DEFAULT_SVM_C).unwrap();
        let acc = x.iter().zip(&y).filter(|(xi, &yi)| m.predict_index(xi).unwrap() == yi).count();
        assert_eq!(acc, 40);
        assert_eq!(m.predict(&[5.0]).unwrap(), "c1");
    }

    #[test]
    fn three_classes_three_models() {
        let x = vec![vec![0.0f64, 0.0], vec![5.0, 0.0], vec![0.0, 5.0], vec![0.1, 0.1]];
        let m = train_linear(&x, &[0, 1, 2, 0], &names(3), 100.0).unwrap();
        assert_eq!(m.weights.len(), 3);
        assert_eq!(m.biases.len(), 3);
    }

    #[test]
    fn training_errors() {
        let x = vec![vec![0.0f64], vec![1.0]];
        assert!(matches!(train_linear(&x, &[0, 0], &names(1), 1.0), Err(D3Error::Training(_))));
        assert!(matches!(train_linear(&x, &[0, 0], &names(2), 1.0), Err(D3Error::Training(_))));
        let ragged = vec![vec![0.0f64], vec![1.0, 2.0]];
        assert!(matches!(train_linear(&ragged, &[0, 1], &names(2), 1.0), Err(D3Error::Shape(_))));
    }

    #[test]
    fn zero_model_ties_to_first_class() {
        let m = LinearModel {
            class_names: names(3),
            weights: vec![vec![0.0f64; 2]; 3],
            biases: vec![0.0; 3],
        };
        assert_eq!(m.predict_index(&[1.0, -2.0]).unwrap(), 0);
        assert!(matches!(m.predict_index(&[1.0]), Err(D3Error::Shape(_))));
    }

    #[test]
    fn report_consistency() {
        let preds = vec![
            Prediction { video_id: "b".into(), truth: "A".into(), predicted: "B".into() },
            Prediction { video_id: "a".into(), truth: "A".into(), predicted: "A".into() },
            Prediction { video_id: "c".into(), truth: "B".into(), predicted: "B".into() },
        ];
        let r = EvalReport::from_predictions(Stream::Fused, vec!["A".into(), "B".into()], preds, vec![], false);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(r.correct(), 2);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.predictions[0].video_id, "a");
        let csv = r.to_csv();
        assert!(csv.starts_with("video_id,true,predicted\na,A,A\nb,A,B\nc,B,B\n"));
        assert!(csv.contains("accuracy,0.666667\n"));
    }
}
