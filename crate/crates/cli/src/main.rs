//! `roadalign`: synthetic datasets, on-line road detection, off-line label
//! transfer and evaluation from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roadalign::config::{PipelineConfig, KEYS_HELP};
use roadalign::pipeline::{run_align, run_eval, run_groundtruth, RunSummary};
use roadalign::synth::{make_pair, parse_spec};
use roadalign::{Error, Exec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PROCESSING: u8 = 3;

#[derive(Parser)]
#[command(name = "roadalign", version, about = "Road detection by on-line video alignment")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a paired synthetic dataset.
    #[command(after_help = "\
Spec file keys (key = value): preset (street | symmetric), seed, width, height,
focal_px, theta, noise_sigma, supersample, texture_scale, model_violation,
vehicles, shadows, reference_frames, observed_frames.

Output: OUT/ref/frame_%06d.ppm, OUT/ref/mask_%06d.pgm, the same under OUT/obs,
truth_correspondence.csv, truth_omega.csv and scene.cfg.")]
    Synth {
        /// Spec file.
        spec: PathBuf,
        /// Output directory.
        out: PathBuf,
    },
    /// Detect the road in an observed ride as it streams in.
    #[command(after_help = after_help())]
    Align {
        #[command(flatten)]
        io: PairArgs,
        #[command(flatten)]
        opts: PipelineArgs,
        /// Write the transferred masks without foreground removal.
        #[arg(long)]
        no_refine: bool,
    },
    /// Transfer annotations between two complete rides.
    #[command(after_help = after_help())]
    Groundtruth {
        #[command(flatten)]
        io: PairArgs,
        #[command(flatten)]
        opts: PipelineArgs,
        /// Write the transferred masks without foreground removal.
        #[arg(long)]
        no_refine: bool,
        /// Exchange the roles of the reference and observed rides.
        #[arg(long)]
        swap: bool,
    },
    /// Score result masks against ground-truth masks.
    Eval {
        /// Directory with mask_%06d.pgm results.
        result: PathBuf,
        /// Directory with mask_%06d.pgm ground truth.
        truth: PathBuf,
        /// Also write the CSV report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PairArgs {
    /// Reference ride: frame_%06d.ppm and mask_%06d.pgm.
    reference: PathBuf,
    /// Observed ride: frame_%06d.ppm.
    observed: PathBuf,
    /// Output directory for masks and sync.csv.
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config file (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Emission delay in frames [default: 5].
    #[arg(long)]
    lag: Option<usize>,
    /// Observations per inference window [default: 10].
    #[arg(long)]
    window: Option<usize>,
    /// Invariant direction, radians (required here or in the config).
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Focal length in pixels (required here or in the config).
    #[arg(long)]
    focal: Option<f64>,
    /// Keep only labels within this distance of the last emitted one [default: unbounded].
    #[arg(long)]
    band: Option<usize>,
    /// Run single-threaded.
    #[arg(long)]
    sequential: bool,
}

fn after_help() -> String {
    format!("Config keys (default):\n{KEYS_HELP}\n\nCommand-line flags override the config file.")
}

impl PipelineArgs {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.lag {
            cfg.lag = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.theta {
            cfg.theta = Some(v);
        }
        if let Some(v) = self.focal {
            cfg.focal_px = Some(v);
        }
        if let Some(v) = self.band {
            cfg.band = Some(v);
        }
        if self.sequential {
            cfg.exec = Exec::Sequential;
            cfg.lk.exec = Exec::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Load(_)
        | Error::Io { .. }
        | Error::Data(_)
        | Error::DimensionMismatch(_)
        | Error::LabelOutOfRange { .. } => EXIT_DATA,
        Error::TooSmall(_) | Error::SyncLoss | Error::AlignmentFailure(_) => EXIT_PROCESSING,
    }
}

fn report(summary: RunSummary, out: &Path) -> ExitCode {
    println!(
        "wrote {} mask(s) to {}; {} frame(s) failed",
        summary.written,
        out.display(),
        summary.failed
    );
    if summary.written == 0 && summary.failed > 0 {
        eprintln!("error: every frame failed");
        return ExitCode::from(EXIT_PROCESSING);
    }
    ExitCode::SUCCESS
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Synth { spec, out } => {
            let text = fs::read_to_string(&spec).map_err(|e| {
                Error::Data(format!("cannot read spec {}: {e}", spec.display()))
            })?;
            let spec = parse_spec(&text)?;
            let truth = make_pair(&spec.scene, &spec.reference, &spec.observed, &out, Exec::default())?;
            println!(
                "wrote {} reference and {} observed frames to {}",
                truth.reference_masks.len(),
                truth.observed_masks.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Align {
            io,
            opts,
            no_refine,
        } => {
            let cfg = opts.resolve()?;
            let summary = run_align(&io.reference, &io.observed, &cfg, &io.out, !no_refine)?;
            Ok(report(summary, &io.out))
        }
        Command::Groundtruth {
            io,
            opts,
            no_refine,
            swap,
        } => {
            let cfg = opts.resolve()?;
            let summary =
                run_groundtruth(&io.reference, &io.observed, &cfg, &io.out, !no_refine, swap)?;
            Ok(report(summary, &io.out))
        }
        Command::Eval { result, truth, out } => {
            let rep = run_eval(&result, &truth)?;
            if let Some(path) = out {
                fs::write(&path, &rep.csv).map_err(|e| {
                    Error::Data(format!("cannot write {}: {e}", path.display()))
                })?;
            }
            print!("{}", rep.csv);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
