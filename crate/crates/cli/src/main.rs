mod commands;
mod config;
mod error;
mod output;
mod panel_io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{Manifest, OutDir, DEFAULT_OUT_DIR, OUT_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "sdecov", version, about = "Drift estimation for panels of SDEs with covariates")]
struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
    /// Worker threads for parallel sections; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 15 subjects, 467 daily rows, three shared covariates, CKLS diffusion.
    NseLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Consistency,
    MleNormality,
    PosteriorNormality,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a panel and write it as CSV.
    Simulate {
        #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Overrides the configured simulation seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "panel.csv")]
        out: PathBuf,
    },
    /// Validate a panel CSV and write its canonical form and a summary.
    Ingest {
        data: PathBuf,
        /// Check the covariate count against this model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "ingest.json")]
        out: PathBuf,
    },
    /// Maximum likelihood by block relaxation.
    Fit {
        #[command(flatten)]
        io: DataArgs,
        /// JSON array of starting values, or `random`.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        /// Also write per-subject `U`, `V` statistics at the estimate.
        #[arg(long)]
        dump_uv: bool,
        #[arg(long, default_value = "estimates.json")]
        out: PathBuf,
    },
    /// Parametric bootstrap around the MLE.
    Bootstrap {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "bootstrap.json")]
        out: PathBuf,
    },
    /// Rejection ABC posterior.
    Abc {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        n_accept: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "abc.json")]
        out: PathBuf,
    },
    /// Gibbs sampler with normal priors.
    Gibbs {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "gibbs.json")]
        out: PathBuf,
    },
    /// Random-effects marginal log-likelihood.
    ReLoglik {
        #[command(flatten)]
        io: DataArgs,
        /// JSON with `mu`, `sigma` and `beta`.
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "re_loglik.json")]
        out: PathBuf,
    },
    /// Monte Carlo checks of consistency and asymptotic normality.
    Verify {
        #[arg(long, value_enum)]
        experiment: ExperimentKind,
        /// Config with an `experiment` block; a built-in identifiable
        /// model is used otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "verify.json")]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Ingest { .. } => "ingest",
            Command::Fit { .. } => "fit",
            Command::Bootstrap { .. } => "bootstrap",
            Command::Abc { .. } => "abc",
            Command::Gibbs { .. } => "gibbs",
            Command::ReLoglik { .. } => "re-loglik",
            Command::Verify { .. } => "verify",
        }
    }

    fn out(&self) -> &PathBuf {
        match self {
            Command::Simulate { out, .. }
            | Command::Ingest { out, .. }
            | Command::Fit { out, .. }
            | Command::Bootstrap { out, .. }
            | Command::Abc { out, .. }
            | Command::Gibbs { out, .. }
            | Command::ReLoglik { out, .. }
            | Command::Verify { out, .. } => out,
        }
    }
}

fn dispatch(cmd: Command, out: &mut OutDir, m: &mut Manifest) -> CliResult<()> {
    use commands::*;
    match cmd {
        Command::Simulate {
            config,
            preset,
            seed,
            out: name,
        } => simulate(out, m, config.as_deref(), preset, seed, &name),
        Command::Ingest { data, config, out: name } => ingest(out, m, &data, config.as_deref(), &name),
        Command::Fit {
            io,
            init,
            tol,
            dump_uv,
            out: name,
        } => fit(out, m, &io, init.as_deref(), tol, dump_uv, &name),
        Command::Bootstrap {
            io,
            replicates,
            seed,
            out: name,
        } => bootstrap(out, m, &io, replicates, seed, &name),
        Command::Abc {
            io,
            epsilon,
            n_accept,
            seed,
            out: name,
        } => abc(out, m, &io, epsilon, n_accept, seed, &name),
        Command::Gibbs {
            io,
            iters,
            thin,
            seed,
            out: name,
        } => gibbs(out, m, &io, iters, thin, seed, &name),
        Command::ReLoglik { io, params, out: name } => re_loglik(out, m, &io, &params, &name),
        Command::Verify {
            experiment,
            config,
            reps,
            n,
            seed,
            out: name,
        } => verify(out, m, experiment, config.as_deref(), reps, n, seed, &name),
    }
}

fn run(argv: Vec<String>) -> CliResult<()> {
    let cli = Cli::try_parse_from(&argv).map_err(|e| {
        // clap routes help and version through the error path too.
        let _ = e.print();
        CliError::Parse {
            exit: if e.use_stderr() { 1 } else { 0 },
        }
    })?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut out = OutDir::create(&cli.out_dir)?;
    let primary = cli.command.out().clone();
    out.resolve(&primary)?;
    let manifest_name = output::sibling(&primary, ".manifest.json");
    let mut manifest = Manifest::new(cli.command.name(), argv[1..].to_vec());
    let result = dispatch(cli.command, &mut out, &mut manifest);
    let mut doc = manifest.to_json(&out);
    doc["status"] = match &result {
        Ok(()) => json!({"ok": true, "exit_code": 0}),
        Err(e) => json!({"ok": false, "exit_code": e.exit_code(), "error": e.to_string()}),
    };
    out.write_json(&manifest_name, &doc)?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::Parse { .. }) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
