//! Dual static/dynamic descriptors for dynamic-scene video classification.
//!
//! The pipeline runs per video:
//!
//! 1. [`key_selection`] picks key frames as medoids of the per-frame global
//!    features and derives a key segment of `tau + 1` frames around each.
//! 2. The local features of the key frames form the static pool; the
//!    per-position temporal variances over each key segment
//!    ([`temporal_moments`]) form the dynamic pool.
//! 3. Each pool is encoded against a codebook or GMM ([`codebook`],
//!    [`aggregation`]) and the two encodings are concatenated.
//! 4. [`evaluation`] trains one-vs-rest linear SVMs under leave-one-out
//!    cross-validation.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix the precision for common uses.

pub mod aggregation;
pub mod cli;
pub mod codebook;
pub mod error;
pub mod evaluation;
pub mod feature_model;
mod io_util;
pub mod key_selection;
pub mod matrix;
pub mod scalar;
pub mod seed;
pub mod temporal_moments;
pub mod toy_extractor;

pub use aggregation::{describe_video, encode_bof, encode_fv, encode_vlad, EncodingKind, EncodingModel, VideoDescriptor};
pub use codebook::{fit_gmm, kmeans_pp, Codebook, GmmModel};
pub use error::{D3Error, ErrorClass, Result};
pub use evaluation::{loocv, train_linear, EvalReport, LinearModel, PipelineConfig, Stream};
pub use feature_model::{load_feature_sequence, load_manifest, save_feature_sequence, DatasetManifest, FrameFeatureSequence};
pub use key_selection::{
    baseline_select, derive_segments, select_medoids, BaselineStrategy, KeySegment, SelectionConfig,
    SelectionResult, SelectionStrategy,
};
pub use matrix::FeatureMatrix;
pub use scalar::Scalar;
pub use temporal_moments::{segment_moments, DynamicLocalFeatures};
pub use toy_extractor::{extract_grid_features, extract_video, GrayFrame};

pub type Codebook32 = Codebook<f32>;
pub type Codebook64 = Codebook<f64>;
pub type Gmm32 = GmmModel<f32>;
pub type Gmm64 = GmmModel<f64>;
pub type FeatureMatrix32 = FeatureMatrix<f32>;
pub type FeatureMatrix64 = FeatureMatrix<f64>;
pub type LinearModel32 = LinearModel<f32>;
pub type LinearModel64 = LinearModel<f64>;
pub type VideoDescriptor32 = VideoDescriptor<f32>;
pub type VideoDescriptor64 = VideoDescriptor<f64>;
