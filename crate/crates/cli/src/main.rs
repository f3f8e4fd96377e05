mod config;
mod error;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use error::Failure;
use output::Manifest;
use run::Command;

/// Runs structural causal model experiments from a JSON config.
#[derive(Parser)]
#[command(name = "scmdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample worlds and write them as CSV.
    Simulate(RunArgs),
    /// Run the config's `evaluate` task.
    Evaluate(RunArgs),
    /// Run the config's `sweep` task.
    Sweep(RunArgs),
    /// Check a config against the schema and its model; writes nothing.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the config JSON Schema.
    Schema,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "SCMDYN_OUT")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run_config(command: Command, args: &RunArgs) -> Result<(), Failure> {
    if let Some(k) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
            .map_err(|e| Failure::io("starting the worker pool", e))?;
    }
    let loaded = config::load(&args.config)?;
    let prepared = run::prepare(&loaded)?;
    let outputs = run::execute(command, &loaded, &prepared)?;
    let cfg = &loaded.config;
    let manifest = Manifest {
        name: cfg.name.clone(),
        command: command.as_str().into(),
        scmdyn_version: env!("CARGO_PKG_VERSION").into(),
        core_version: scmdyn_core::VERSION.into(),
        config_sha256: output::sha256_hex(&loaded.raw),
        seed: cfg.seed,
        model: cfg.model.kind().into(),
        graph_fingerprint: prepared.graph.fingerprint().into(),
        files: Default::default(),
        notes: Default::default(),
    };
    output::write_all(&args.out, &outputs, manifest)?;
    log::info!("wrote {} files to {}", outputs.files.len() + 1, args.out.display());
    Ok(())
}

fn validate(path: &PathBuf) -> Result<(), Failure> {
    let loaded = config::load(path)?;
    let prepared = run::prepare(&loaded)?;
    let summary = json!({
        "ok": true,
        "name": loaded.config.name,
        "model": loaded.config.model.kind(),
        "nodes": prepared.graph.nodes().len(),
        "graph_fingerprint": prepared.graph.fingerprint(),
        "interventions": prepared.interventions.describe(),
        "warnings": prepared.graph.warnings(),
    });
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Simulate(a) => run_config(Command::Simulate, a),
        Cmd::Evaluate(a) => run_config(Command::Evaluate, a),
        Cmd::Sweep(a) => run_config(Command::Sweep, a),
        Cmd::Validate { config } => validate(config),
        Cmd::Schema => {
            println!("{}", serde_json::to_string_pretty(&config::schema()).expect("schema serializes"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
