//! Closed-form issuance caps and regime thresholds at each node of the second
//! example, each verified by a brute-force scan.

use std::path::PathBuf;

use bank_dynamics::bounds::bound_suite;
use bank_dynamics::cli::{bounds_report, RunConfig};
use bank_dynamics::node_state;

fn main() -> bank_dynamics::Result<()> {
    let cfg = RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/example2.toml"))?;
    let model = cfg.model()?;
    let d0 = cfg.initial_decision.expect("example carries a reference allocation");
    let p = model.params;
    for id in 1..=3 {
        let ns = node_state(&model, &d0, id)?;
        let checks = bound_suite(&model, &ns, p.cap_e, p.cap_d, 1e-5)?;
        print!("{}", bounds_report(id, &checks).0);
    }
    Ok(())
}
