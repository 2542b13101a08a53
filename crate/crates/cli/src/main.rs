//! `taxaug` command line.
//!
//! Every subcommand that runs the pipeline takes an optional `--config` file
//! and any number of `--set key=value` overrides; see the key table in
//! `taxaug::pipeline::ConfigFile`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
//! 4 finished but some SVM fits hit the iteration cap.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use taxaug::features::{write_feature_csv, write_feature_table};
use taxaug::pipeline::fixture::{build_fixture, write_fixture, write_image_fixture, FixtureSpec};
use taxaug::pipeline::{
    ablation_table, ctv_curve_csv, ingest, render_heatmaps, run_ablation, run_experiment, write_ablation, write_experiment, ConfigFile,
    FeatureSource, HeatmapMode, PipelineConfig, PipelineError,
};

#[derive(Parser)]
#[command(name = "taxaug", version, about = "Few-shot species identification with two-level data augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set smote=true`
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        ConfigFile::load(self.config.as_deref(), &self.set)?.resolve()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PerSample,
    PerClass,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    Small,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate one configuration and write report.json, table.txt, ctv_curve.csv
    Run(ConfigArgs),
    /// Run the augmentation ladder (baseline, +rotation, +gan, +rotation+gan+smote)
    Ablate(ConfigArgs),
    /// Print the accuracy curve over the CTV grid
    SweepCtv(ConfigArgs),
    /// Train on every sample and render CAM overlays into <output_dir>/heatmaps
    Heatmap {
        #[command(flatten)]
        config: ConfigArgs,
        /// CTV level (percent) used for the PCA truncation
        #[arg(long, default_value_t = 90)]
        ctv: u32,
        #[arg(long, value_enum, default_value_t = Mode::PerSample)]
        mode: Mode,
        /// Heatmap opacity in [0, 1]
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Also write the raw (unnormalized) maps as CSV
        #[arg(long)]
        raw_csv: bool,
    },
    /// Write a seeded synthetic dataset (manifest.csv plus fixture.fvec, or PNG images)
    MakeFixture {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Standard)]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a small image dataset for the mock extractor instead
        #[arg(long)]
        images: bool,
        #[arg(long, default_value_t = 4, requires = "images")]
        species: usize,
        #[arg(long, default_value_t = 6, requires = "images")]
        per_class: usize,
        #[arg(long, default_value_t = 64, requires = "images")]
        size: usize,
    },
    /// Extract pooled mock features for the manifest's images (.fvec, or .csv by extension)
    ExtractMock {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn warned(n: usize) -> ExitCode {
    if n > 0 {
        eprintln!("warning: {n} SVM fit(s) stopped at the iteration cap");
        ExitCode::from(4)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(cmd: Command) -> Result<ExitCode, PipelineError> {
    match cmd {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let report = run_experiment(&cfg)?;
            write_experiment(&cfg.output_dir, &report, cfg.flags)?;
            print!("{}", std::fs::read_to_string(cfg.output_dir.join("table.txt")).map_err(io_error(&cfg.output_dir))?);
            Ok(warned(report.convergence_warnings))
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            let ab = run_ablation(&cfg)?;
            write_ablation(&cfg.output_dir, &ab)?;
            print!("{}", ablation_table(&ab));
            Ok(warned(ab.rungs.iter().map(|r| r.1.convergence_warnings).sum()))
        }
        Command::SweepCtv(args) => {
            let cfg = args.resolve()?;
            let report = run_experiment(&cfg)?;
            write_experiment(&cfg.output_dir, &report, cfg.flags)?;
            print!("{}", ctv_curve_csv(&[("run", &report)]));
            println!("best CTV: {}%", report.best_ctv);
            Ok(warned(report.convergence_warnings))
        }
        Command::Heatmap {
            config,
            ctv,
            mode,
            alpha,
            raw_csv,
        } => {
            let cfg = config.resolve()?;
            if !taxaug::CTV_GRID.contains(&ctv) {
                return Err(PipelineError::Config(format!("--ctv {ctv} is not one of 10, 20, ..., 100")));
            }
            let mode = match mode {
                Mode::PerSample => HeatmapMode::PerSample,
                Mode::PerClass => HeatmapMode::PerClass,
            };
            let dir = cfg.output_dir.join("heatmaps");
            let written = render_heatmaps(&cfg, ctv, mode, alpha, raw_csv, &dir)?;
            println!("wrote {} file(s) to {}", written.len(), dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::MakeFixture {
            out,
            preset,
            seed,
            images,
            species,
            per_class,
            size,
        } => {
            if images {
                if species < 2 || per_class < 2 || size < 8 {
                    return Err(PipelineError::Config("--images needs at least 2 species, 2 images per class and 8 px".into()));
                }
                let manifest = write_image_fixture(&out, species, per_class, size, seed.unwrap_or(7))?;
                println!("wrote {}", manifest.display());
            } else {
                let mut spec = match preset {
                    Preset::Standard => FixtureSpec::standard(),
                    Preset::Small => FixtureSpec::small(),
                };
                if let Some(s) = seed {
                    spec.seed = s;
                }
                let (manifest, table) = write_fixture(&build_fixture(&spec), &out)?;
                println!("wrote {} and {}", manifest.display(), table.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ExtractMock { config, out } => {
            let cfg = config.resolve()?;
            if !matches!(cfg.features, FeatureSource::Mock { .. }) {
                return Err(PipelineError::Config("extract-mock needs features = \"mock\"".into()));
            }
            let pooled = ingest(&cfg)?.augment(&cfg)?.extract(&cfg.features)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io_error(parent))?;
            }
            let written = if out.extension().is_some_and(|e| e == "csv") {
                write_feature_csv(pooled.table(), &out)
            } else {
                write_feature_table(pooled.table(), &out)
            };
            written.map_err(|e| PipelineError::Stage {
                stage: "extract",
                message: e.to_string(),
            })?;
            println!("wrote {} rows of {} features to {}", pooled.table().len(), pooled.table().dims(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
