use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bank_dynamics::cli::{
    bounds_report, emit_curves, exit_code, node_bounds, node_report, run_pipeline, run_stage0, single_node,
    stage0_report, RunConfig,
};
use bank_dynamics::stage1::solve_t1;
use bank_dynamics::{Error, Result};

#[derive(Parser)]
#[command(name = "bankdyn", version, about = "Three-date bank allocation and issuance solver")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `run.output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the optimizer seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the t=0 allocation and capital structure.
    SolveT0,
    /// Solve one t=1 node.
    SolveT1 {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        node: u8,
    },
    /// Closed-form bounds at a node, each checked by brute force.
    Bounds {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        node: u8,
    },
    /// Equity value and leverage curves over new debt and new equity.
    Curves {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        node: u8,
    },
    /// t=0 solve, all configured nodes, bounds and curves.
    Pipeline,
}

fn run(cli: Cli) -> Result<()> {
    let path = cli.config.ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        config.optimizer.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| config.run.output_dir.clone());
    std::fs::create_dir_all(&out)?;

    match cli.command {
        Command::SolveT0 => {
            let model = config.model()?;
            let (sol, repro) = run_stage0(&config, &model)?;
            let (text, table) = stage0_report(&model, &sol, repro.as_ref());
            print!("{text}");
            table.write(&out.join("stage0.csv"))?;
        }
        Command::SolveT1 { node } => {
            let (model, ns) = single_node(&config, node as usize)?;
            let outcome = solve_t1(&model, &ns, &config.optimizer)?;
            let (text, table) = node_report(&model, &ns, &outcome);
            print!("{text}");
            table.write(&out.join(format!("node{node}.csv")))?;
        }
        Command::Bounds { node } => {
            let (model, ns) = single_node(&config, node as usize)?;
            let outcome = solve_t1(&model, &ns, &config.optimizer)?;
            let checks = node_bounds(&model, &ns, &outcome, config.run.bruteforce_step)?;
            let (text, table) = bounds_report(node as usize, &checks);
            print!("{text}");
            table.write(&out.join(format!("bounds_node{node}.csv")))?;
        }
        Command::Curves { node } => {
            let (model, ns) = single_node(&config, node as usize)?;
            let file = out.join(format!("curves_node{node}.csv"));
            emit_curves(&model, &ns, &config.curves, &file)?;
            println!("wrote {}", file.display());
        }
        Command::Pipeline => {
            let result = run_pipeline(&config, &out)?;
            for f in &result.files {
                if f.extension().is_some_and(|e| e == "txt") {
                    print!("{}", std::fs::read_to_string(f)?);
                }
            }
            println!("{} files written to {}", result.files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
