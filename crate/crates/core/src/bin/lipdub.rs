use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use lipdub::landmarks::LandmarkPartition;
use lipdub::metrics::EvalMode;
use lipdub::pipeline::{self, ConfigSource, DatasetManifest, DubPaths};
use lipdub::{Error, Result, TrainConfig};

/// Config file, `--set key=value` pairs and one `--<key>` flag per config key.
#[derive(Debug, Clone, Default)]
struct ConfigArgs {
    source: ConfigSource,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut s = Self::default();
        s.update_from_arg_matches(m)?;
        Ok(s)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        self.source.file = m.get_one::<PathBuf>("config").cloned();
        self.source.overrides = m
            .get_many::<String>("set")
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        for key in TrainConfig::KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.source.overrides.push(format!("{key}={v}"));
            }
        }
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("key=value config file"),
            )
            .arg(
                Arg::new("set")
                    .long("set")
                    .action(ArgAction::Append)
                    .value_name("KEY=VALUE")
                    .help("Override one config key (repeatable)"),
            );
        for key in TrainConfig::KEYS {
            cmd = cmd.arg(
                Arg::new(*key)
                    .long(flag_name(key))
                    .value_name("VALUE")
                    .help_heading("Config keys"),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Parser)]
#[command(name = "lipdub", version, about = "Few-shot visual dubbing")]
struct Cli {
    /// Landmark partition table (JSON); the bundled 216-point table by default.
    #[arg(long, global = true)]
    partition: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct DubArgs {
    /// Frame directory or raw frame dump of the clip to dub.
    #[arg(long)]
    frames: PathBuf,
    /// Driving speech (WAV).
    #[arg(long)]
    audio: PathBuf,
    /// Landmark track of the clip.
    #[arg(long)]
    landmarks: PathBuf,
    /// Reference landmarks for stage 1 (defaults to the clip's own track).
    #[arg(long)]
    reference_landmarks: Option<PathBuf>,
    #[arg(long)]
    stage1: PathBuf,
    #[arg(long)]
    stage2: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate raw clips, cache mel features and write a manifest.
    Prepare {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the audio-to-landmark generator on audio+landmark clips.
    TrainStage1 {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Meta-train the landmark-to-face networks on frame+landmark clips.
    TrainStage2 {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature extractor weights for the perceptual loss.
        #[arg(long)]
        extractor: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Adapt a stage-2 checkpoint to one speaker with the embedder frozen.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A clip directory or a manifest.
        #[arg(long)]
        footage: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        extractor: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Re-synthesize the lower face of a clip to match new speech.
    Dub {
        #[command(flatten)]
        io: DubArgs,
        /// Frame of the clip used as the appearance reference.
        #[arg(long, default_value_t = 0)]
        reference_frame: usize,
    },
    /// Dub with the appearance taken from another image.
    Transfer {
        #[command(flatten)]
        io: DubArgs,
        #[arg(long)]
        reference_image: PathBuf,
    },
    /// Score a run directory (generated/ and gt/ clip folders).
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "paired")]
        mode: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn dub_paths(a: DubArgs, cache: PathBuf) -> DubPaths {
    DubPaths {
        frames: a.frames,
        audio: a.audio,
        landmarks: a.landmarks,
        stage1: a.stage1,
        stage2: a.stage2,
        reference_landmarks: a.reference_landmarks,
        out_dir: a.out,
        cache: Some(cache),
    }
}

fn run(cli: Cli) -> Result<()> {
    let partition = match &cli.partition {
        Some(p) => LandmarkPartition::load(p)?,
        None => LandmarkPartition::default(),
    };
    match cli.command {
        Cmd::Prepare { raw, out } => {
            let root = out.parent().unwrap_or(Path::new("."));
            let m = pipeline::prepare(&raw, &out, &pipeline::cache_dir(root))?;
            println!("{} ({})", out.display(), m.modality_summary());
        }
        Cmd::TrainStage1 { manifest, out, cfg } => {
            let c = cfg.source.resolve(TrainConfig::default())?;
            let s = pipeline::cmd_train_stage1(
                &DatasetManifest::load(&manifest)?,
                &c,
                &partition,
                &out,
            )?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Cmd::TrainStage2 {
            manifest,
            out,
            extractor,
            cfg,
        } => {
            let c = cfg.source.resolve(TrainConfig::default())?;
            let m = DatasetManifest::load(&manifest)?;
            let s = pipeline::cmd_train_stage2(&m, &c, &partition, extractor.as_deref(), &out)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Cmd::Finetune {
            checkpoint,
            footage,
            out,
            extractor,
            cfg,
        } => {
            let s = pipeline::cmd_finetune(
                &checkpoint,
                &footage,
                &cfg.source,
                &partition,
                extractor.as_deref(),
                &out,
            )?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Cmd::Dub {
            io,
            reference_frame,
        } => {
            let cache = pipeline::cache_dir(&io.out);
            let o = pipeline::cmd_dub(&dub_paths(io, cache), partition, reference_frame)?;
            println!("{}", serde_json::to_string_pretty(&o.timing)?);
        }
        Cmd::Transfer {
            io,
            reference_image,
        } => {
            let cache = pipeline::cache_dir(&io.out);
            let o = pipeline::cmd_transfer(&dub_paths(io, cache), partition, &reference_image)?;
            println!("{}", serde_json::to_string_pretty(&o.timing)?);
        }
        Cmd::Eval { run, mode, cfg } => {
            let mode: EvalMode = mode.parse()?;
            let c = cfg.source.resolve(TrainConfig::default())?;
            let r = pipeline::cmd_eval(&run, mode, &c)?;
            for (name, e) in &r.metrics {
                println!("{name}: {:.6}", e.mean);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_hint(&e);
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}

fn report_hint(e: &Error) {
    if let Error::NoEligible(_) = e {
        eprintln!("hint: check the modalities listed by `lipdub prepare`");
    }
}
