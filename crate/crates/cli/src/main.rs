use std::io::Write;
use std::process::ExitCode;

use capred::report::{run_job, Command, JobSettings, JobSpec, LogBase, OutputFormat, DEFAULT_SAMPLES, DEFAULT_SEED};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Holevo-type capacity of positive unital trace-preserving maps.
#[derive(Parser)]
#[command(name = "capred", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Capacity by ensemble optimisation (Blahut-Arimoto for abelian maps).
    Capacity(JobArgs),
    /// Definite set and partition of unity of a map.
    Decompose(JobArgs),
    /// Capacity through the ergodic corner maps.
    Reduce(JobArgs),
    /// Entropy inequality check on random states and rotated partitions.
    #[command(name = "verify-lemma1")]
    VerifyEntropy(JobArgs),
    /// Compare the capacity with the capacity restricted to the corner subalgebra.
    Restriction(JobArgs),
    /// Capacity of a tensor product against the sum of the factors.
    Additivity(JobArgs),
    /// Tensor a map with the identity on `--shape`.
    #[command(name = "tensor-id")]
    TensorId(JobArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Output {
    Json,
    Csv,
    Human,
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    Nat,
    Bits,
}

#[derive(Args)]
struct JobArgs {
    /// Map descriptions (mini-language) or Map JSON files.
    maps: Vec<String>,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Output::Json)]
    output: Output,
    #[arg(long, value_enum, default_value_t = Base::Nat)]
    log_base: Base,
    /// Algebra shape such as `[2,1]` (verify-lemma1, tensor-id).
    #[arg(long)]
    shape: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Worker threads; CAPRED_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    /// Add wall-clock timings to the JSON report.
    #[arg(long)]
    timings: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Capacity(a) => (Command::Capacity, a),
        Cmd::Decompose(a) => (Command::Decompose, a),
        Cmd::Reduce(a) => (Command::Reduce, a),
        Cmd::VerifyEntropy(a) => (Command::VerifyEntropy, a),
        Cmd::Restriction(a) => (Command::Restriction, a),
        Cmd::Additivity(a) => (Command::Additivity, a),
        Cmd::TensorId(a) => (Command::TensorId, a),
    };
    let threads = std::env::var("CAPRED_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .or(args.threads)
        .unwrap_or(0);
    let spec = JobSpec {
        command,
        map_sources: args.maps,
        settings: JobSettings {
            restarts: args.restarts,
            max_iter: args.max_iter,
            tol: args.tol,
            seed: args.seed,
            output: match args.output {
                Output::Json => OutputFormat::Json,
                Output::Csv => OutputFormat::Csv,
                Output::Human => OutputFormat::Human,
            },
            log_base: match args.log_base {
                Base::Nat => LogBase::Nat,
                Base::Bits => LogBase::Bits,
            },
        },
        shape: args.shape,
        samples: args.samples,
        timings: args.timings,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = pool.install(|| run_job(&spec));
    print!("{}", outcome.stdout);
    eprint!("{}", outcome.stderr);
    let _ = std::io::stdout().flush();
    ExitCode::from(outcome.exit_code as u8)
}
