//! Solves every t=1 node of the first example; the node where both risky
//! loans default cannot restore its leverage ratio within the equity cap.

use std::path::PathBuf;

use bank_dynamics::bounds::min_ve_for_leverage;
use bank_dynamics::cli::{node_report, RunConfig};
use bank_dynamics::stage1::solve_nodes;

fn main() -> bank_dynamics::Result<()> {
    let cfg = RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/example1.toml"))?;
    let model = cfg.model()?;
    let d0 = cfg.initial_decision.expect("example carries a reference allocation");
    for (ns, outcome) in solve_nodes(&model, &d0, &[1, 2, 3], &cfg.optimizer)? {
        print!("{}", node_report(&model, &ns, &outcome).0);
        println!("  minimal new equity for the leverage floor: {:.4}\n", min_ve_for_leverage(&ns, &model.params));
    }
    Ok(())
}
