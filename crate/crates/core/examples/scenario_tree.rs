//! Builds the two-period contagion tree and prints both measures per node.

use bank_dynamics::scenario::Measure;
use bank_dynamics::{CouplingRule, LoanSpec, ScenarioTree};

fn main() -> bank_dynamics::Result<()> {
    let loans = [LoanSpec::safe(0.03), LoanSpec::new(0.09, 0.061, 0.10)?, LoanSpec::new(0.132, 0.122, 0.09)?];
    let tree = ScenarioTree::calibrated(&loans, &CouplingRule::default())?;
    println!("risk-neutral default probabilities {:?}", tree.risk_neutral().q);

    for n in tree.t1_nodes() {
        println!(
            "t=1 node {}  defaulted {:?}  P {:.6}  Q {:.6}",
            n.node_id,
            n.state.defaulted,
            n.prob(Measure::Physical),
            n.prob(Measure::RiskNeutral)
        );
        for c in tree.children(n.node_id) {
            println!(
                "    t=2 node {}  defaulted {:?}  path P {:.6}  path Q {:.6}",
                c.node_id,
                c.state.defaulted,
                tree.path_prob(c, Measure::Physical),
                tree.path_prob(c, Measure::RiskNeutral)
            );
        }
    }

    for i in 1..3 {
        let growth = tree.expect_t1(Measure::RiskNeutral, |n| n.growth(&loans, i));
        println!("loan {i}: discounted Q-expected growth {:.15}", growth / 1.03);
    }
    Ok(())
}
