use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d3_core::cli::{
    cmd_codebook, cmd_compare_selection, cmd_describe, cmd_evaluate, cmd_extract, cmd_select, comparison_table,
    RunConfig,
};
use d3_core::{D3Error, ErrorClass};

#[derive(Parser)]
#[command(name = "d3", version, about = "Key-frame/key-segment dual descriptors for dynamic scene videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract toy grid features from a directory of P5 PGM frames
    Extract {
        /// Directory of frames; lexicographic order is temporal order
        frames_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        grid: usize,
        #[arg(long)]
        fps: Option<f32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select key frames and key segments of one feature file
    Select {
        features: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Train static and dynamic codebooks/GMMs on a manifest
    Codebook(Overrides),
    /// Encode every manifest video into a D3DS descriptor file
    Describe {
        #[command(flatten)]
        opts: Overrides,
        /// Directory holding static/dynamic models from `d3 codebook`
        #[arg(long)]
        models: PathBuf,
    },
    /// Leave-one-out evaluation of D3s, D3d and D3
    Evaluate(Overrides),
    /// Accuracy grid over selection strategies and frame counts
    CompareSelection(Overrides),
}

#[derive(Args, Default)]
struct Overrides {
    /// key=value run config file
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    /// Number of key frames R
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    subset: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    codebook_size: Option<String>,
    #[arg(long, value_parser = ["bof", "vlad", "fv"])]
    encoding: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Train codebooks once on all videos (leaks the held-out video)
    #[arg(long)]
    shared_models: bool,
    #[arg(long)]
    threads: Option<String>,
    /// Comma-separated strategies for compare-selection
    #[arg(long)]
    strategies: Option<String>,
    /// Comma-separated frame counts for compare-selection
    #[arg(long)]
    frame_counts: Option<String>,
}

impl Overrides {
    fn into_config(self) -> Result<RunConfig, D3Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cwd = Path::new(".");
        let pairs = [
            ("manifest", self.manifest),
            ("strategy", self.strategy),
            ("frames", self.frames),
            ("tau", self.tau),
            ("subset", self.subset),
            ("repeats", self.repeats),
            ("codebook_size", self.codebook_size),
            ("encoding", self.encoding),
            ("seed", self.seed),
            ("out", self.out),
            ("threads", self.threads),
            ("strategies", self.strategies),
            ("frame_counts", self.frame_counts),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v, cwd)?;
            }
        }
        if self.shared_models {
            cfg.shared_models = true;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), D3Error> {
    match cli.command {
        Command::Extract {
            frames_dir,
            grid,
            fps,
            out,
        } => {
            let seq = cmd_extract(&frames_dir, grid, fps, &out)?;
            println!(
                "wrote {} ({} frames, {} local positions of {} dims)",
                out.display(),
                seq.num_frames(),
                seq.local_count(),
                seq.local_dim()
            );
        }
        Command::Select { features, opts } => {
            let cfg = opts.into_config()?;
            let (_, text) = cfg.run(|| cmd_select(&features, &cfg))?;
            print!("{text}");
        }
        Command::Codebook(opts) => {
            let cfg = opts.into_config()?;
            let (s, d) = cmd_codebook(&cfg)?;
            println!("wrote {} and {}", s.display(), d.display());
        }
        Command::Describe { opts, models } => {
            let cfg = opts.into_config()?;
            let out = cfg.out.join("descriptors.d3ds");
            let n = cmd_describe(&cfg, &models, &out)?;
            println!("wrote {n} descriptors to {}", out.display());
        }
        Command::Evaluate(opts) => {
            let cfg = opts.into_config()?;
            for r in cmd_evaluate(&cfg)? {
                println!("{:<4} accuracy {:.2}% ({}/{})", r.stream.name(), 100.0 * r.accuracy, r.correct(), r.total());
            }
            println!("reports written to {}", cfg.out.display());
        }
        Command::CompareSelection(opts) => {
            let cfg = opts.into_config()?;
            let cells = cmd_compare_selection(&cfg)?;
            print!("{}", comparison_table(&cells, &cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Pipeline => 4,
            })
        }
    }
}
