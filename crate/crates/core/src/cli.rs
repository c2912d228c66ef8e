//! Experiment configuration and the command implementations behind the `d3`
//! binary.
//!
//! A run config is a flat UTF-8 `key=value` file (`#` starts a comment).
//! Relative paths resolve against the config file's directory. Command-line
//! flags override file values through [`RunConfig::set`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::aggregation::{describe_pools, save_descriptors, EncodingKind, EncodingModel};
use crate::codebook::DEFAULT_CODEBOOK_SIZE;
use crate::error::{D3Error, Result};
use crate::evaluation::{
    loocv_streams, prepare_videos, train_stream_models, EvalReport, PipelineConfig, Stream, DEFAULT_SVM_C,
};
use crate::feature_model::{load_feature_sequence, load_manifest, save_feature_sequence, DatasetManifest, FrameFeatureSequence, DEFAULT_FPS};
use crate::key_selection::{SelectionConfig, SelectionResult, SelectionStrategy, DEFAULT_KEY_FRAMES, DEFAULT_REPEATS, DEFAULT_TAU};
use crate::seed::derive_seed;
use crate::toy_extractor::{extract_video, load_frame_dir};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub strategy: String,
    pub frames: usize,
    pub tau: usize,
    pub subset: Option<usize>,
    pub repeats: usize,
    pub encoding: EncodingKind,
    pub codebook_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub shared_models: bool,
    pub svm_c: f64,
    pub kmeans_iters: usize,
    pub gmm_iters: usize,
    /// Strategies compared by `compare-selection`.
    pub strategies: Vec<String>,
    /// Key-frame counts compared by `compare-selection`.
    pub frame_counts: Vec<usize>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            strategy: "medoid".into(),
            frames: DEFAULT_KEY_FRAMES,
            tau: DEFAULT_TAU,
            subset: None,
            repeats: DEFAULT_REPEATS,
            encoding: EncodingKind::Fv,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            seed: 0,
            out: PathBuf::from("d3-out"),
            shared_models: false,
            svm_c: DEFAULT_SVM_C,
            kmeans_iters: crate::codebook::KMEANS_MAX_ITERS,
            gmm_iters: crate::codebook::GMM_MAX_ITERS,
            strategies: vec!["random".into(), "chc".into(), "medoid".into()],
            frame_counts: vec![1, 5, 10, 15],
            threads: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| D3Error::Config(format!("invalid value for {key}: {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(D3Error::Config(format!("invalid boolean for {key}: {v:?}"))),
    }
}

fn resolve(base: &Path, v: &str) -> PathBuf {
    let p = PathBuf::from(v.trim());
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Sets one key; path values resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "manifest" => self.manifest = Some(resolve(base, value)),
            "strategy" => self.strategy = value.trim().to_string(),
            "frames" => self.frames = parse_num(&key, value)?,
            "tau" => self.tau = parse_num(&key, value)?,
            "subset" => {
                self.subset = match value.trim() {
                    "" | "auto" => None,
                    v => Some(parse_num(&key, v)?),
                }
            }
            "repeats" => self.repeats = parse_num(&key, value)?,
            "encoding" => self.encoding = value.parse()?,
            "codebook_size" => self.codebook_size = parse_num(&key, value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            "out" => self.out = resolve(base, value),
            "shared_models" => self.shared_models = parse_bool(&key, value)?,
            "svm_c" => self.svm_c = parse_num(&key, value)?,
            "kmeans_iters" => self.kmeans_iters = parse_num(&key, value)?,
            "gmm_iters" => self.gmm_iters = parse_num(&key, value)?,
            "strategies" => {
                self.strategies = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "frame_counts" => {
                self.frame_counts = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(&key, s))
                    .collect::<Result<_>>()?
            }
            "threads" => self.threads = Some(parse_num(&key, value)?),
            other => return Err(D3Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            // a '#' after whitespace starts a trailing comment
            let line = match raw.find(" #").or_else(|| raw.find("\t#")) {
                Some(at) => raw[..at].trim(),
                None => raw.trim(),
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                D3Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1))
            })?;
            cfg.set(k, v, base)
                .map_err(|e| D3Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| D3Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or_else(|| Path::new(".")))
    }

    pub fn selection_strategy(&self) -> Result<SelectionStrategy> {
        SelectionStrategy::parse(&self.strategy, self.frames)
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            key_frames: self.frames,
            tau: self.tau,
            subset_size: self.subset,
            repeats: self.repeats,
            seed: self.seed,
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let p = PipelineConfig {
            strategy: self.selection_strategy()?,
            selection: self.selection_config(),
            encoding: self.encoding,
            codebook_size: self.codebook_size,
            seed: self.seed,
            shared_models: self.shared_models,
            svm_c: self.svm_c,
            kmeans_iters: self.kmeans_iters,
            gmm: crate::codebook::GmmOptions {
                max_iters: self.gmm_iters,
                kmeans_iters: self.kmeans_iters,
                ..Default::default()
            },
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks parameters and that the manifest file exists.
    pub fn validate(&self) -> Result<()> {
        self.pipeline()?;
        match &self.manifest {
            None => return Err(D3Error::Config("no manifest given".into())),
            Some(m) if !m.is_file() => {
                return Err(D3Error::Config(format!("manifest {} does not exist", m.display())))
            }
            _ => {}
        }
        if self.threads == Some(0) {
            return Err(D3Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| D3Error::Config("no manifest given".into()))
    }

    /// Runs `f` on a dedicated pool when a thread count is configured.
    pub fn run<R: Send>(&self, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
        match self.threads {
            None => f(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| D3Error::Config(format!("cannot build thread pool: {e}")))?
                .install(f),
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| D3Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| D3Error::io(path, e))
}

/// Extracts toy features from a directory of P5 PGM frames into a `D3FT` file.
pub fn cmd_extract(frames_dir: &Path, grid: usize, fps: Option<f32>, out: &Path) -> Result<FrameFeatureSequence> {
    let frames = load_frame_dir(frames_dir)?;
    let id = frames_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let seq = extract_video(id, &frames, grid, fps.unwrap_or(DEFAULT_FPS))?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| D3Error::io(dir, e))?;
        }
    }
    save_feature_sequence(&seq, out)?;
    Ok(seq)
}

/// Key frames and segments of one feature file as CSV text. The selection
/// seed is derived the same way as during evaluation.
pub fn cmd_select(features: &Path, cfg: &RunConfig) -> Result<(SelectionResult, String)> {
    let seq = load_feature_sequence(features)?;
    let strategy = cfg.selection_strategy()?;
    let sel_cfg = SelectionConfig {
        seed: derive_seed(cfg.seed, "select", seq.video_id()),
        ..cfg.selection_config()
    };
    let sel = strategy.select(&seq, &sel_cfg)?;
    let mut s = String::new();
    let _ = writeln!(s, "# video {} strategy {} objective {:.6}", seq.video_id(), strategy, sel.objective);
    s.push_str("key_frame,segment_lo,segment_hi,cluster_size\n");
    for (ki, seg) in sel.segments.iter().enumerate() {
        let size = sel.cluster_of.iter().filter(|&&c| c == ki).count();
        let _ = writeln!(s, "{},{},{},{size}", seg.center, seg.lo, seg.hi);
    }
    Ok((sel, s))
}

fn model_extension(kind: EncodingKind) -> &'static str {
    match kind {
        EncodingKind::Fv => "d3gm",
        EncodingKind::Bof | EncodingKind::Vlad => "d3cb",
    }
}

/// Paths of the static and dynamic model files inside `dir`.
pub fn model_paths(dir: &Path, kind: EncodingKind) -> (PathBuf, PathBuf) {
    let ext = model_extension(kind);
    (dir.join(format!("static.{ext}")), dir.join(format!("dynamic.{ext}")))
}

/// Trains static and dynamic models on every manifest video and writes them to `cfg.out`.
pub fn cmd_codebook(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    cfg.validate()?;
    let p = cfg.pipeline()?;
    let manifest = load_manifest(cfg.manifest_path()?)?;
    cfg.run(|| {
        let videos = prepare_videos(&manifest, &p)?;
        let refs: Vec<_> = videos.iter().collect();
        let (sm, dm) = train_stream_models(&refs, &p, "*all*")?;
        let (sp, dp) = model_paths(&cfg.out, p.encoding);
        write_file(&sp, &sm.to_bytes())?;
        write_file(&dp, &dm.to_bytes())?;
        Ok((sp, dp))
    })
}

/// Describes every manifest video with models from `models_dir`, writing a
/// `D3DS` file of fused descriptors to `out_file`.
pub fn cmd_describe(cfg: &RunConfig, models_dir: &Path, out_file: &Path) -> Result<usize> {
    cfg.validate()?;
    let p = cfg.pipeline()?;
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let (sp, dp) = model_paths(models_dir, p.encoding);
    let read = |path: &Path| -> Result<EncodingModel<f64>> {
        let bytes = fs::read(path).map_err(|e| D3Error::io(path, e))?;
        EncodingModel::from_bytes(p.encoding, &bytes)
    };
    let (sm, dm) = (read(&sp)?, read(&dp)?);
    cfg.run(|| {
        let videos = prepare_videos(&manifest, &p)?;
        let items: Vec<(String, Vec<f32>)> = videos
            .par_iter()
            .map(|v| {
                describe_pools(&v.id, &v.pools, &sm, &dm)
                    .map(|d| (v.id.clone(), d.d3.iter().map(|&x| x as f32).collect()))
                    .map_err(|e| e.in_video(&v.id))
            })
            .collect::<Result<_>>()?;
        if let Some(dir) = out_file.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| D3Error::io(dir, e))?;
            }
        }
        save_descriptors(&items, out_file)?;
        Ok(items.len())
    })
}

/// LOOCV for the static, dynamic and fused descriptors; writes
/// `{d3s,d3d,d3}.csv` and `.txt` into `cfg.out`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let p = cfg.pipeline()?;
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let reports = cfg.run(|| loocv_streams(&manifest, &p, &Stream::ALL))?;
    for r in &reports {
        write_file(&cfg.out.join(format!("{}.csv", r.stream)), r.to_csv().as_bytes())?;
        write_file(&cfg.out.join(format!("{}.txt", r.stream)), r.to_text().as_bytes())?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCell {
    pub strategy: String,
    pub frames: usize,
    pub accuracy: f64,
}

/// Static-descriptor LOOCV accuracy for every (strategy, frame count) pair.
pub fn compare_selection(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<Vec<ComparisonCell>> {
    if cfg.strategies.is_empty() || cfg.frame_counts.is_empty() {
        return Err(D3Error::Config("comparison needs at least one strategy and one frame count".into()));
    }
    let mut cells = Vec::new();
    for s in &cfg.strategies {
        for &r in &cfg.frame_counts {
            let mut cell_cfg = cfg.clone();
            cell_cfg.strategy = s.clone();
            cell_cfg.frames = r;
            let report = cfg.run(|| crate::evaluation::loocv(manifest, &cell_cfg.pipeline()?, Stream::Static))?;
            cells.push(ComparisonCell {
                strategy: s.clone(),
                frames: r,
                accuracy: report.accuracy,
            });
        }
    }
    Ok(cells)
}

pub fn comparison_csv(cells: &[ComparisonCell], cfg: &RunConfig) -> String {
    let mut s = String::from("strategy,frames,accuracy\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{:.6}", c.strategy, c.frames, c.accuracy);
    }
    let _ = writeln!(s, "\n# summary\nkey,value\nstream,d3s\nencoding,{}\ncodebook_size,{}\ntau,{}\nseed,{}", cfg.encoding, cfg.codebook_size, cfg.tau, cfg.seed);
    s
}

pub fn comparison_table(cells: &[ComparisonCell], cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Classification rate (%) of D3s by selection strategy and frame number (encoding {}, k={}, seed {})",
        cfg.encoding, cfg.codebook_size, cfg.seed
    );
    let w = cfg.strategies.iter().map(String::len).max().unwrap_or(8).max(9);
    let _ = write!(s, "{:<w$}", "selection");
    for r in &cfg.frame_counts {
        let _ = write!(s, " {r:>8}");
    }
    s.push('\n');
    for strat in &cfg.strategies {
        let _ = write!(s, "{strat:<w$}");
        for r in &cfg.frame_counts {
            let acc = cells
                .iter()
                .find(|c| &c.strategy == strat && c.frames == *r)
                .map_or(f64::NAN, |c| c.accuracy);
            let _ = write!(s, " {:>8.2}", 100.0 * acc);
        }
        s.push('\n');
    }
    s
}

/// Runs [`compare_selection`] and writes `compare.csv` / `compare.txt` into `cfg.out`.
pub fn cmd_compare_selection(cfg: &RunConfig) -> Result<Vec<ComparisonCell>> {
    cfg.validate()?;
    for s in &cfg.strategies {
        SelectionStrategy::parse(s, cfg.frames)?;
    }
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let cells = compare_selection(&manifest, cfg)?;
    write_file(&cfg.out.join("compare.csv"), comparison_csv(&cells, cfg).as_bytes())?;
    write_file(&cfg.out.join("compare.txt"), comparison_table(&cells, cfg).as_bytes())?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_config_file() {
        let text = "# experiment\nmanifest = data/m.tsv\nstrategy=chc   # clustering baseline\nframes=5\ntau=4\nencoding=vlad\ncodebook-size=16\nseed=42\nshared_models=true\nstrategies=random, medoid\nframe_counts=1,5\n";
        let c = RunConfig::parse(text, Path::new("/exp")).unwrap();
        assert_eq!(c.manifest, Some(PathBuf::from("/exp/data/m.tsv")));
        assert_eq!(c.frames, 5);
        assert_eq!(c.tau, 4);
        assert_eq!(c.encoding, EncodingKind::Vlad);
        assert_eq!(c.codebook_size, 16);
        assert_eq!(c.seed, 42);
        assert!(c.shared_models);
        assert_eq!(c.strategies, vec!["random", "medoid"]);
        assert_eq!(c.frame_counts, vec![1, 5]);
        assert_eq!(c.out, PathBuf::from("d3-out"));
    }

    #[test]
    fn config_errors() {
        assert!(matches!(RunConfig::parse("bogus=1", Path::new(".")), Err(D3Error::Config(_))));
        assert!(matches!(RunConfig::parse("frames", Path::new(".")), Err(D3Error::Config(_))));
        assert!(matches!(RunConfig::parse("frames=x", Path::new(".")), Err(D3Error::Config(_))));
        let c = RunConfig::parse("tau=3", Path::new(".")).unwrap();
        assert!(matches!(c.pipeline(), Err(D3Error::Config(_))));
        let c = RunConfig::default();
        assert!(matches!(c.validate(), Err(D3Error::Config(_))));
    }
}
