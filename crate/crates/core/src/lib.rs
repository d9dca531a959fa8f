//! Three-date bank model: initial loan allocation and capital structure,
//! node-wise rebalancing with new debt and equity, and the closed-form
//! issuance bounds that govern it.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod measures;
pub mod model;
pub mod optimizer;
pub mod scenario;
pub mod stage0;
pub mod stage1;

pub use error::{Error, Result};
pub use measures::{MarketParams, RiskMeasure};
pub use model::Model;
pub use optimizer::OptimizerConfig;
pub use scenario::{CouplingRule, LoanSpec, Loans, ScenarioTree};
pub use stage0::{solve_t0, Stage0Decision};
pub use stage1::{node_state, solve_t1, NodeState, Stage1Decision, Stage1Outcome};
