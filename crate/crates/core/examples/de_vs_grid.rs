//! Differential evolution against the exhaustive grid on a small node
//! problem and on a toy constrained problem.

use std::path::PathBuf;

use bank_dynamics::cli::RunConfig;
use bank_dynamics::optimizer::{de_optimize, grid_oracle, GridSteps, Problem, SearchSpace};
use bank_dynamics::stage1::grid_t1;
use bank_dynamics::{node_state, solve_t1, OptimizerConfig};

/// Maximize `x + y` on the unit box subject to `x^2 + y^2 <= 1`.
struct Disc;

impl Problem for Disc {
    fn objective(&self, x: &[f64]) -> f64 {
        x[0] + x[1]
    }

    fn violation(&self, x: &[f64]) -> f64 {
        (x[0] * x[0] + x[1] * x[1] - 1.0).max(0.0)
    }
}

fn main() -> bank_dynamics::Result<()> {
    let config = OptimizerConfig::default();
    let space = SearchSpace::boxed(vec![(0.0, 1.0); 2]);
    let de = de_optimize(&Disc, &space, &config)?;
    let grid = grid_oracle(&Disc, &space, &[0.01, 0.01], 1_000_000)?;
    println!("disc: de {:.6} at {:?}, grid {:.6}, exact {:.6}", de.objective, de.point, grid.objective, 2f64.sqrt());

    let cfg = RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/example1.toml"))?;
    let model = cfg.model()?;
    let ns = node_state(&model, &cfg.initial_decision.expect("reference allocation"), 2)?;
    let small = OptimizerConfig {
        grid: GridSteps { position: 0.01, issuance: 0.002, ..GridSteps::default() },
        ..OptimizerConfig::default()
    };
    let de = solve_t1(&model, &ns, &small)?;
    let (decision, grid) = grid_t1(&model, &ns, &small)?;
    if let Some(s) = de.solution() {
        println!("node 2: de {:.8} ({:?})", s.objective, s.decision);
    }
    println!("node 2: grid {:.8} ({decision:?}, {} points)", grid.objective, grid.evaluations);
    Ok(())
}
