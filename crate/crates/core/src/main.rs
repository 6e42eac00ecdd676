use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedclust::config::{ExperimentConfig, Preset};
use fedclust::data::{self, DatasetFormat, HandoverSynthConfig, ToyConfig};
use fedclust::pipeline::{self, RunOutput};
use fedclust::report;
use fedclust::rng::SeedTree;
use fedclust::{Error, Result};

#[derive(Parser)]
#[command(name = "fedclust", version, about = "Dynamic clustering for federated time-series forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Without it the preset alone is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    preset: Preset,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Handover,
    Toy,
}

#[derive(Subcommand)]
enum Command {
    /// Dynamic clustering: federated clustering, calibrated training, division.
    Run(Common),
    /// Feature clustering plus per-cluster training without calibration.
    Baseline(Common),
    /// Writes a synthetic dataset and its ground-truth sidecar.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of series (toy) or clients (handover).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        /// Classes (toy) or archetypes (handover).
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Purity and test MSE table over finished run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, common.preset)?,
        None => ExperimentConfig::preset(common.preset),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(common: &Common, run: fn(&ExperimentConfig) -> Result<RunOutput>) -> Result<()> {
    if common.workers == 0 {
        return Err(Error::config("--workers", "must be at least 1"));
    }
    let cfg = load_config(common)?;
    let out = pipeline::with_workers(common.workers, || run(&cfg))??;
    pipeline::write_artifacts(&common.out, &cfg, &out)?;
    let s = &out.summary;
    println!(
        "k={} test_mse={:.6} purity={} -> {}",
        s.final_k,
        s.test_mse,
        s.clustering_purity.map_or("n/a".into(), |p| format!("{p:.4}")),
        common.out.display()
    );
    Ok(())
}

fn gen_data(
    kind: DataKind,
    out: &Path,
    seed: u64,
    n: Option<usize>,
    length: Option<usize>,
    classes: Option<usize>,
    noise: Option<f64>,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = SeedTree::new(seed).named("gen-data").rng();
    match kind {
        DataKind::Toy => {
            let d = ToyConfig::default();
            let cfg = ToyConfig {
                n: n.unwrap_or(d.n),
                length: length.unwrap_or(d.length),
                classes: classes.unwrap_or(d.classes),
                noise: noise.unwrap_or(d.noise),
                ..d
            };
            let samples = data::toy_sinusoids(&cfg, &mut rng)?;
            let labels: Vec<_> = samples.iter().map(|s| s.label.expect("toy samples are labeled")).collect();
            data::write_dataset(out.join("toy.csv"), &samples, DatasetFormat::Labeled)?;
            data::write_labels(out.join("toy.labels"), &labels)?;
            println!("{} labeled series of length {}", samples.len(), cfg.length);
        }
        DataKind::Handover => {
            let d = HandoverSynthConfig::default();
            let cfg = HandoverSynthConfig {
                n_clients: n.unwrap_or(d.n_clients),
                length: length.unwrap_or(d.length),
                archetypes: classes.unwrap_or(d.archetypes),
                noise: noise.unwrap_or(d.noise),
            };
            let h = data::synth_handover(&cfg, &mut rng)?;
            data::write_dataset(out.join("handover.csv"), &h.series, DatasetFormat::Matrix)?;
            data::write_labels(out.join("handover.labels"), &h.archetypes)?;
            println!("{} series of length {}", h.series.len(), cfg.length);
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => execute(&c, pipeline::run_dynamic),
        Command::Baseline(c) => execute(&c, pipeline::run_baseline),
        Command::GenData {
            kind,
            out,
            seed,
            n,
            length,
            classes,
            noise,
        } => gen_data(kind, &out, seed, n, length, classes, noise),
        Command::Report { runs } => {
            print!("{}", report::report(&runs)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
