//! Expected loss, loss standard deviation, IRB capital and the leverage ratio
//! for a few portfolios.

use bank_dynamics::measures::{irb_loan_capital, leverage_ratio, ExpectedLoss, LossStdDev};
use bank_dynamics::{LoanSpec, RiskMeasure};

fn main() -> bank_dynamics::Result<()> {
    let loans = [LoanSpec::safe(0.03), LoanSpec::new(0.09, 0.061, 0.10)?, LoanSpec::new(0.132, 0.122, 0.09)?];
    for l in &loans[1..] {
        println!("pd {:.3} lgd {:.2}: IRB charge {:.6}", l.pd, l.lgd, irb_loan_capital(l.pd, l.lgd, 0.999)?);
    }

    let measures: [&dyn RiskMeasure; 2] = [&ExpectedLoss, &LossStdDev];
    for x in [[1.0, 0.0, 0.0], [0.0, 0.5904, 0.4096], [0.0, 0.0, 1.0]] {
        let values: Vec<String> = measures.iter().map(|m| format!("{} {:.6}", m.name(), m.evaluate(&x, &loans))).collect();
        println!("x = {x:?}: {}", values.join(", "));
    }

    println!("leverage ratio of assets 1.05 against debt 0.96: {:.6}", leverage_ratio(1.05, 0.96)?);
    Ok(())
}
