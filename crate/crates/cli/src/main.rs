use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use wavered::config::RunConfig;
use wavered::measure::{Sampler, SetKind};
use wavered::pipeline::{run_pipeline, Stage};
use wavered::simulate::InitialState;

/// Reducibility of the quasi-periodically forced wave equation on the torus.
#[derive(Parser)]
#[command(name = "wavered", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (key = value per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Accept a perturbation that fails its Condition checks.
    #[arg(long, global = true)]
    unchecked: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Regularization and KAM reduction.
    Reduce {
        /// `regularize` or `kam`.
        #[arg(long, default_value = "kam")]
        stage: Stage,
    },
    /// Direct integration and Sobolev-norm tracking.
    Simulate {
        #[arg(long = "T")]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Comma-separated Sobolev indices.
        #[arg(long, value_delimiter = ',')]
        r: Option<Vec<f64>>,
        /// `mode:j` or `random-sobolev:r`.
        #[arg(long)]
        initial: Option<InitialState>,
    },
    /// Monte-Carlo measure of a frequency set.
    Measure {
        #[arg(long)]
        set: Option<SetKind>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        sampler: Option<String>,
    },
    /// Reduce, then check the conjugation against a direct integration.
    Verify,
    /// Run the stages named by --stage (all when omitted).
    Pipeline {
        #[arg(long)]
        stage: Vec<Stage>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let path = cli.common.config.context("--config is required")?;
    let mut cfg = RunConfig::from_path(&path)?;
    if let Some(s) = cli.common.seed {
        cfg.wave.seed = s;
    }
    cfg.unchecked |= cli.common.unchecked;
    let stages = match cli.cmd {
        Cmd::Reduce { stage } => {
            anyhow::ensure!(matches!(stage, Stage::Regularize | Stage::Kam), "reduce takes --stage regularize or kam");
            vec![stage]
        }
        Cmd::Simulate { t_end, dt, r, initial } => {
            let s = &mut cfg.sim;
            s.t_end = t_end.unwrap_or(s.t_end);
            s.dt = dt.unwrap_or(s.dt);
            s.r_list = r.unwrap_or(std::mem::take(&mut s.r_list));
            s.initial = initial.unwrap_or(s.initial.clone());
            vec![Stage::Simulate]
        }
        Cmd::Measure { set, gamma, samples, sampler } => {
            let m = &mut cfg.measure;
            m.set = set.unwrap_or(m.set);
            m.gamma = gamma.or(m.gamma);
            m.samples = samples.unwrap_or(m.samples);
            m.sampler = match sampler.as_deref() {
                None => m.sampler,
                Some("random") => Sampler::Random,
                Some("halton") => Sampler::Halton,
                Some(o) => anyhow::bail!("unknown sampler `{o}` (random, halton)"),
            };
            vec![Stage::Measure]
        }
        Cmd::Verify => vec![Stage::Verify],
        Cmd::Pipeline { stage } if stage.is_empty() => Stage::ALL.to_vec(),
        Cmd::Pipeline { stage } => stage,
    };
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    let (manifest, _) = run_pipeline(&cfg, &stages, &cli.common.out)?;
    match &manifest.error {
        None => {
            eprintln!("ok: manifest at {}", cli.common.out.join("manifest.json").display());
            Ok(ExitCode::SUCCESS)
        }
        Some(e) => {
            eprintln!("stage {} failed ({}): {}", e.stage.name(), e.kind, e.message);
            Ok(ExitCode::from(1))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.common.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
