//! Equity value and leverage ratio along new debt and new equity at node 1
//! of the second example, printed as a table.

use std::path::PathBuf;

use bank_dynamics::cli::RunConfig;
use bank_dynamics::node_state;
use bank_dynamics::stage1::{leverage_t1, v_equity_linear};

fn main() -> bank_dynamics::Result<()> {
    let cfg = RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/example2.toml"))?;
    let model = cfg.model()?;
    let p = model.params;
    let ns = node_state(&model, &cfg.initial_decision.expect("reference allocation"), 1)?;
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "v", "V(0,v)", "V(v,0)", "lev(v,0)", "lev(0,v)");
    for v in cfg.curves.grid().into_iter().step_by(5) {
        println!(
            "{v:>6.3} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            v_equity_linear(&ns, 0.0, v, &p),
            v_equity_linear(&ns, v, 0.0, &p),
            leverage_t1(&ns, v, 0.0, &p)?,
            leverage_t1(&ns, 0.0, v, &p)?
        );
    }
    Ok(())
}
