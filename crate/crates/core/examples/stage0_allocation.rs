//! Solves the t=0 allocation for the first example configuration and compares
//! it with the reported allocation. Then tightens the risk cap to the risk of
//! the reported allocation and solves again.

use std::path::PathBuf;

use bank_dynamics::cli::{run_stage0, stage0_report, RunConfig};
use bank_dynamics::solve_t0;

fn main() -> bank_dynamics::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/example1.toml");
    let cfg = RunConfig::load(&path)?;
    let model = cfg.model()?;
    let (sol, repro) = run_stage0(&cfg, &model)?;
    print!("{}", stage0_report(&model, &sol, repro.as_ref()).0);

    if let Some(reference) = cfg.initial_decision {
        let cap = model.rho(&reference.x);
        let mut params = model.params;
        params.theta1 = cap;
        let tight = solve_t0(&model.clone().with_params(params)?, &cfg.optimizer)?;
        println!("\nrisk cap {cap:.6}: x = {:?}, e = {:.4}", tight.decision.x, tight.decision.e);
    }
    Ok(())
}
