//! `polyshape <subcommand> <config.json> [--set path=value]... [--dry-run] [--threads N]`
//!
//! Exit status: 0 success, 1 usage error, 2 invalid configuration,
//! 3 numerical or output failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, ValueEnum};

use crate::output::{OutputDir, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    /// Generate the mesh.
    Mesh,
    /// Solve the forward problem and report norms.
    Solve,
    /// Dirichlet-to-Neumann matrix in a trig basis.
    Dtn,
    /// Neumann-to-Dirichlet matrix in a mean-zero trig basis.
    Ntd,
    /// Shape derivative against finite differences, plus the remainder rate.
    DerivCheck,
    /// Convergence rate of the solution under a vertex perturbation.
    RateStudy,
    /// Operator derivative and its remainder rate.
    OpDeriv,
    /// Corner singularity exponent fit.
    Singularity,
    /// Inclusion reconstruction from synthetic data.
    Reconstruct,
}

impl Subcommand {
    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Parser, Debug)]
#[command(name = "polyshape", version, about = "Polygonal inclusion shape-derivative experiments")]
struct Cli {
    subcommand: Subcommand,
    /// JSON configuration document.
    config: PathBuf,
    /// Override a configuration value by dotted path, e.g. `mesh.h=0.01`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Validate and print the execution plan without solving.
    #[arg(long)]
    dry_run: bool,
    /// Cap on worker threads.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURE: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), (u8, String)> {
    let started = output::unix_now();
    let (doc, effective) = config::load_file(&cli.config, &cli.overrides).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let resolved = doc.resolve(cli.subcommand).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err((EXIT_USAGE, "--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (EXIT_FAILURE, e.to_string()))?;
    }
    // serde_json maps keep keys sorted, so this text is canonical.
    let config_text = serde_json::to_string_pretty(&effective).expect("config serializes") + "\n";
    let config_sha256 = output::sha256_hex(config_text.as_bytes());

    if cli.dry_run {
        print_plan(cli.subcommand, &resolved, &config_sha256);
        return Ok(());
    }
    let fail = |e: &dyn std::fmt::Display| (EXIT_FAILURE, e.to_string());
    let mut out = OutputDir::create(&resolved.output).map_err(|e| fail(&e))?;
    out.write("config.json", config_text.as_bytes()).map_err(|e| fail(&e))?;
    commands::run(cli.subcommand, &resolved, &mut out).map_err(|e| fail(&e))?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: cli.subcommand.name(),
        config_sha256,
        started_unix: started,
        finished_unix: output::unix_now(),
        files: Vec::new(),
    };
    let root = out.root().to_path_buf();
    let manifest = out.finish(manifest).map_err(|e| fail(&e))?;
    for f in &manifest.files {
        println!("{}  {}", f.sha256, root.join(&f.name).display());
    }
    Ok(())
}

fn print_plan(cmd: Subcommand, r: &config::Resolved, config_sha256: &str) {
    println!("subcommand: {}", cmd.name());
    println!("config sha256: {config_sha256}");
    println!("domain: {:?}", r.domain.kind);
    if let Some(p) = &r.inclusion {
        println!("inclusion: {} vertices, k = {}", p.len(), r.conductivity.k());
    }
    let g = &r.grading;
    println!("mesh: h = {}, h_min = {}, mu = {}, r_g = {}", g.h, g.h_min, g.mu, g.r_g);
    println!("solver: rtol = {}, iteration factor = {}", r.cg.rtol, r.cg.iteration_factor);
    println!("output directory: {}", r.output.display());
    let mut files = vec!["config.json"];
    files.extend(commands::planned_files(cmd));
    files.push(output::MANIFEST_NAME);
    println!("files: {}", files.join(", "));
}
