use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use diffcore::ParamStore;
use pillartrack::evaluate::{evaluate, overall};
use pillartrack::pipeline::{load_dataset, load_model, read_runs, save_checkpoint, write_dataset, write_metrics, write_predictions};
use pillartrack::selfcheck::{all_passed, gradient_suite, oracle_suite, Check};
use pillartrack::synth::generate_tracklets;
use pillartrack::train::{render_loss_log, train, TrainOptions};
use pillartrack::{Config, Network, TrackError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pillartrack", version, about = "Sparse-pillar Siamese transformer for 3D single-object tracking")]
struct Cli {
    /// TOML config file; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic tracklets (point files and manifests) to the output directory.
    Gen {
        /// Tracklet id prefix.
        #[arg(long, default_value = "seq")]
        prefix: String,
    },
    /// Train on the given manifests; writes checkpoints and loss.csv.
    Train {
        /// Manifest files or directories of manifests.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
    },
    /// Track every manifest from its first box; writes one predictions file per tracklet.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
    },
    /// Score predictions against ground truth; writes metrics.csv and curves.csv.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Directory holding `<tracklet>.txt` prediction files.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck,
    /// Brute-force oracle comparisons.
    Oracle,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn report(checks: &[Check]) -> bool {
    for c in checks {
        println!("{c}");
    }
    all_passed(checks)
}

fn checkpoint_path(out: &Path, epoch: Option<usize>) -> PathBuf {
    match epoch {
        Some(e) => out.join(format!("checkpoint_epoch{e:03}.bin")),
        None => out.join("checkpoint.bin"),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Gen { prefix } => {
            let tracklets = generate_tracklets(&cfg.synth(), cfg.seed, prefix);
            let manifests = write_dataset(out, &tracklets)?;
            println!("wrote {} tracklets to {}", manifests.len(), out.display());
        }
        Command::Train { data } => {
            let tracklets = load_dataset(data)?;
            let mut store = ParamStore::new();
            let net = Network::new(cfg.network(), &mut store, cfg.seed)?;
            let opts = TrainOptions {
                loss: cfg.loss_weights(),
                sample: cfg.sample_spec(),
                adam: cfg.adam(),
                batch_size: cfg.batch_size,
                epochs: cfg.epochs,
                max_steps: (cfg.max_steps > 0).then_some(cfg.max_steps),
                checkpoint_every: (cfg.checkpoint_every > 0).then_some(cfg.checkpoint_every),
                seed: cfg.seed.wrapping_add(1),
                workers: cfg.workers,
            };
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let report = train(&mut store, &net, &tracklets, &opts, |epoch, store| {
                let every = opts.checkpoint_every.unwrap_or(0);
                if every > 0 && epoch % every == 0 {
                    save_checkpoint(&checkpoint_path(out, Some(epoch)), store)?;
                }
                save_checkpoint(&checkpoint_path(out, None), store)
            })?;
            std::fs::write(out.join("loss.csv"), render_loss_log(&report.log))
                .with_context(|| format!("writing {}", out.join("loss.csv").display()))?;
            if let (Some(first), Some(last)) = (report.log.first(), report.log.last()) {
                println!(
                    "{} steps, l_final {:.4} -> {:.4}, {} samples skipped",
                    report.steps(),
                    first.loss.l_final,
                    last.loss.l_final,
                    report.skipped_samples
                );
            }
        }
        Command::Track { checkpoint, data } => {
            let tracklets = load_dataset(data)?;
            let (store, net) = load_model(&cfg, checkpoint)?;
            let results = evaluate(&store, &net, &tracklets, &cfg.sample_spec(), &cfg.metrics(), cfg.seed)?;
            write_predictions(&out.join("predictions"), &results)?;
            println!("tracked {} tracklets", results.len());
        }
        Command::Eval { data, predictions } => {
            let tracklets = load_dataset(data)?;
            let metrics = cfg.metrics();
            let results = read_runs(&tracklets, predictions, &metrics)?;
            write_metrics(out, &results, &metrics)?;
            if let Some(all) = overall(&results) {
                println!(
                    "success {:.2} precision {:.2} over {} frames",
                    all.success, all.precision, all.frames
                );
            }
        }
        Command::Gradcheck => return Ok(report(&gradient_suite(cfg.seed)?)),
        Command::Oracle => return Ok(report(&oracle_suite(cfg.seed)?)),
    }
    Ok(true)
}

/// Exit status by error category.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<TrackError>() {
        Some(TrackError::Config(_)) => 3,
        Some(TrackError::Io { .. } | TrackError::Format { .. } | TrackError::Manifest { .. }) => 4,
        Some(TrackError::NonFiniteLoss { .. } | TrackError::Diff(_)) => 5,
        Some(TrackError::EmptyRegion(_) | TrackError::NoSamples) => 6,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
