use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lrsiam_core::checks::gradcheck_suite;
use lrsiam_core::config::RunConfig;
use lrsiam_core::data::write_toy_dataset;
use lrsiam_core::model::StreamSet;
use lrsiam_core::pipeline;
use lrsiam_core::trainer::Mode;
use lrsiam_core::Error;

#[derive(Parser)]
#[command(name = "lrsiam", version, about = "Extreme low-resolution activity recognition")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override `model.streams`.
    #[arg(long)]
    stream: Option<StreamSet>,
}

impl Common {
    fn load(&self) -> lrsiam_core::Result<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(s) = self.stream {
            cfg.model.streams = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic HR toy dataset.
    GenToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Degrade HR videos into every LR transform.
    PrepareLr {
        #[command(flatten)]
        common: Common,
        /// HR manifest.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Precompute optical-flow stacks for an LR manifest.
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the stacks (default: next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recompute stacks that already exist.
        #[arg(long)]
        force: bool,
    },
    /// Stage 1 + stage 2 training and test evaluation for every seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// baseline, augment, multi-siamese or all.
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long)]
        force: bool,
    },
    /// Test metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "half-0")]
        split: String,
    },
    /// Finite-difference check of every op and the full training graph.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Also write every result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export embeddings of every LR video plus a distance-ratio report.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict to the test sources of this split.
        #[arg(long)]
        split: Option<String>,
        /// Output TensorFile; `.ids` and `.json` files are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_modes(s: &str) -> lrsiam_core::Result<Vec<Mode>> {
    if s == "all" {
        return Ok(Mode::ALL.to_vec());
    }
    s.split(',').map(|m| m.trim().parse()).collect()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 1,
        Error::Format(_) | Error::Io { .. } | Error::Shape(_) | Error::Data(_) | Error::MissingArtifact(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn check_out_dir(out: &Path, force: bool) -> lrsiam_core::Result<()> {
    let busy = out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if busy && !force {
        return Err(Error::InvalidArgument(format!(
            "{} is not empty; pass --force to write into it",
            out.display()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> lrsiam_core::Result<()> {
    match cli.command {
        Command::GenToy { common, out, force } => {
            let cfg = common.load()?;
            check_out_dir(&out, force)?;
            cfg.echo(&out)?;
            let m = write_toy_dataset(&cfg.toy, &out)?;
            println!("{}", m.display());
        }
        Command::PrepareLr {
            common,
            manifest,
            out,
            force,
        } => {
            let cfg = common.load()?;
            let m = pipeline::prepare_lr(&manifest, &out, &cfg, force)?;
            cfg.echo(&out)?;
            println!("{}", m.display());
        }
        Command::Flow {
            common,
            manifest,
            out,
            force,
        } => {
            let cfg = common.load()?;
            let s = pipeline::compute_flow(&manifest, out.as_deref(), &cfg.flow, force)?;
            println!("flow stacks: {} computed, {} reused", s.computed, s.reused);
        }
        Command::Train {
            common,
            manifest,
            out,
            mode,
            force,
        } => {
            let cfg = common.load()?;
            let modes = parse_modes(&mode)?;
            check_out_dir(&out, force)?;
            let report = pipeline::train(&manifest, &out, &cfg, &modes)?;
            print!("{}", report.table());
        }
        Command::Eval {
            common,
            manifest,
            checkpoint,
            split,
        } => {
            let cfg = common.load()?;
            let m = pipeline::evaluate_checkpoint(&manifest, &checkpoint, &cfg, &split)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        }
        Command::Gradcheck { seeds, out } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let results = gradcheck_suite(&seeds)?;
            let mut failed = 0;
            for name in lrsiam_core::checks::CHECKS {
                let mine: Vec<_> = results.iter().filter(|r| r.name == *name).collect();
                let worst = mine.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
                let bad = mine.iter().filter(|r| !r.passed).count();
                failed += bad;
                let status = if bad == 0 { "ok" } else { "FAIL" };
                println!("{status:<4} {name:<30} worst rel err {worst:.2e} ({bad}/{} seeds failed)", mine.len());
            }
            if let Some(p) = out {
                std::fs::write(&p, serde_json::to_string_pretty(&results).expect("results serialize"))
                    .map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} gradient checks failed")));
            }
        }
        Command::Embed {
            common,
            manifest,
            checkpoint,
            split,
            out,
        } => {
            let cfg = common.load()?;
            let r = pipeline::export_embeddings(&manifest, &checkpoint, &cfg, split.as_deref(), &out)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
