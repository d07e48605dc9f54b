mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sisgan::config::{ExperimentConfig, Protocol};

/// Overrides `io.artifact_dir` from the config file.
pub const ARTIFACT_DIR_ENV: &str = "SISGAN_ARTIFACT_DIR";

#[derive(Parser)]
#[command(name = "sisgan", version, about = "Subject-invariant SSVEP GAN experiments")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainTarget {
    Dcgan,
    Acgan,
    Sisgan,
    SsvepClf,
    SubjectClf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    SingleSubject,
    Loo,
    CrossTask,
    SubjectBiometric,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::SingleSubject => Protocol::SingleSubject,
            ProtocolArg::Loo => Protocol::Loo,
            ProtocolArg::CrossTask => Protocol::CrossTask,
            ProtocolArg::SubjectBiometric => Protocol::SubjectBiometric,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the offline and online oracle datasets.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a generator or a classifier.
    Train {
        #[arg(long, value_enum)]
        variant: TrainTarget,
        /// Training dataset; defaults to the offline dataset in the artifact directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Subject classifier checkpoint, required for sisgan.
        #[arg(long)]
        frozen_subject: Option<PathBuf>,
    },
    /// Sample a labeled synthetic dataset from generator checkpoints.
    Generate {
        /// One conditional checkpoint, or one per class for dcgan.
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol and write JSON and CSV reports.
    Eval {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long)]
        offline: Option<PathBuf>,
        #[arg(long)]
        online: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean subject softmax of a dataset under a subject classifier.
    Probe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class spectra and peak table of real versus generated data.
    FftReport {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute artifact hashes against the manifest and the config.
    Verify {
        /// Artifact directory; defaults to the configured one.
        dir: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> sisgan::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = std::env::var_os(ARTIFACT_DIR_ENV) {
        cfg.io.artifact_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> sisgan::Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| sisgan::Error::Config(format!("--jobs: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.jobs;
    let cfg = load_config(cli.config.as_ref())?;
    let root = cfg.io.artifact_dir.clone();
    let or_root = |p: Option<PathBuf>, name: &str| p.unwrap_or_else(|| root.join(name));
    match cli.command {
        Command::Simulate { out } => commands::simulate(&cfg, &out.unwrap_or_else(|| root.clone())),
        Command::Train {
            variant,
            data,
            out,
            frozen_subject,
        } => {
            let data = or_root(data, commands::OFFLINE_FILE);
            let out = out.unwrap_or_else(|| root.clone());
            match variant {
                TrainTarget::Dcgan => commands::train_gan(&cfg, sisgan::train::GanVariant::DcGan, &data, &out, None),
                TrainTarget::Acgan => commands::train_gan(&cfg, sisgan::train::GanVariant::AcGan, &data, &out, None),
                TrainTarget::Sisgan => {
                    let frozen = frozen_subject.ok_or_else(|| {
                        sisgan::Error::Config(
                            "sisgan needs --frozen-subject <checkpoint>; create one with `sisgan train --variant subject-clf`"
                                .into(),
                        )
                    })?;
                    commands::train_gan(&cfg, sisgan::train::GanVariant::SisGan, &data, &out, Some(&frozen))
                }
                TrainTarget::SsvepClf => {
                    commands::train_classifier(&cfg, sisgan::train::ClassifierRole::Ssvep, &data, &out)
                }
                TrainTarget::SubjectClf => {
                    commands::train_classifier(&cfg, sisgan::train::ClassifierRole::Subject, &data, &out)
                }
            }
        }
        Command::Generate {
            checkpoint,
            n_per_class,
            seed,
            out,
        } => commands::generate(&checkpoint, n_per_class, seed, &out),
        Command::Eval {
            protocol,
            offline,
            online,
            out,
        } => commands::eval(
            &cfg,
            protocol.into(),
            &or_root(offline, commands::OFFLINE_FILE),
            &or_root(online, commands::ONLINE_FILE),
            &out.unwrap_or_else(|| root.join("reports")),
        ),
        Command::Probe { data, checkpoint, out } => commands::probe(&data, &checkpoint, &out),
        Command::FftReport { real, generated, out } => commands::fft_report(&cfg, &real, &generated, &out),
        Command::Verify { dir } => commands::verify(&cfg, &dir.unwrap_or(root)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
