//! Rebalancing and issuance at an intermediate node (t=1).
//!
//! At each t=1 node the bank repays short-term debt, may issue new equity
//! `ve <= E` and new debt `vd <= D`, and reallocates over the surviving loans.
//! Positions `x1` are quantities priced at the node's loan values, so the
//! money held in loan `i` is `x1[i] * price[i]`. The objective is the
//! physical expectation of the t=2 portfolio value net of issuance costs.
//!
//! The budget identity is eliminated by solving it for the safe position.

use rayon::prelude::*;

use crate::bounds::min_ve_for_leverage;
use crate::error::{Error, Result};
use crate::measures::MarketParams;
use crate::model::{ConstraintSlack, Feasibility, Model};
use crate::optimizer::{de_optimize, grid_oracle, grid_size, OptimizerConfig, Optimum, Problem, SearchSpace};
use crate::scenario::{portfolio_value, Measure, ScenarioNode, N_LOANS};
use crate::stage0::Stage0Decision;

const INEQ_TOL: f64 = 1e-9;

/// Whether the current return on equity falls short of the target `1 + r_e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRegime {
    BelowTarget,
    AboveTarget,
}

/// Balance-sheet state at a t=1 node before any rebalancing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub node: ScenarioNode,
    pub initial: Stage0Decision,
    /// Realized value of the initial portfolio.
    pub r1: f64,
    /// `r1` after repaying short-term debt.
    pub z1: f64,
    /// `z1` minus the discounted final long-term claim.
    pub z1_lt: f64,
    pub short_term: f64,
    /// Long-term debt accrued to t=1.
    pub long_term_due: f64,
    /// Long-term debt due at t=2.
    pub long_term_final: f64,
    pub survivors: [bool; N_LOANS],
    /// Loan values at this node, used as trading prices.
    pub prices: [f64; N_LOANS],
}

impl NodeState {
    /// `(z1 - long_term_due)^+ / e`.
    pub fn current_return(&self) -> f64 {
        (self.z1 - self.long_term_due).max(0.0) / self.initial.e
    }

    /// Threshold of the equity-holder constraint, `min(1 + r_e, current return)`.
    pub fn target(&self, params: &MarketParams) -> f64 {
        (1.0 + params.r_e).min(self.current_return())
    }

    pub fn regime(&self, params: &MarketParams) -> TargetRegime {
        if self.current_return() < 1.0 + params.r_e {
            TargetRegime::BelowTarget
        } else {
            TargetRegime::AboveTarget
        }
    }

    /// Cash available for investment after issuing `ve` and `vd`.
    pub fn available(&self, ve: f64, vd: f64, params: &MarketParams) -> f64 {
        self.z1 + (1.0 - params.phi_e) * ve + (1.0 - params.phi_d) * vd
    }
}

pub fn node_state(model: &Model, d0: &Stage0Decision, node_id: usize) -> Result<NodeState> {
    let node = *model.tree.t1_node(node_id)?;
    let p = &model.params;
    let loans = &model.loans;
    let r1 = portfolio_value(&d0.x, &node, loans);
    let short_term = p.beta_st * (1.0 - d0.e);
    let long_term_due = p.beta_lt() * (1.0 - d0.e) * (1.0 + p.r_d);
    let long_term_final = long_term_due * (1.0 + p.r_d);
    let z1 = r1 - short_term;
    Ok(NodeState {
        node,
        initial: *d0,
        r1,
        z1,
        z1_lt: z1 - long_term_final / (1.0 + p.r),
        short_term,
        long_term_due,
        long_term_final,
        survivors: node.state.survivors(),
        prices: std::array::from_fn(|i| node.growth(loans, i)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Decision {
    pub x1: [f64; N_LOANS],
    pub ve: f64,
    pub vd: f64,
}

impl Stage1Decision {
    /// Money held in each loan.
    pub fn amounts(&self, ns: &NodeState) -> [f64; N_LOANS] {
        std::array::from_fn(|i| if ns.survivors[i] { self.x1[i] * ns.prices[i] } else { 0.0 })
    }
}

/// Purchases plus short-term repayment minus sales and net issuance, all at
/// t=1 prices. Zero iff the budget identity holds.
pub fn budget_gap(ns: &NodeState, d1: &Stage1Decision, params: &MarketParams) -> f64 {
    let x0 = &ns.initial.x;
    let mut purchases = 0.0;
    let mut sales = 0.0;
    for i in 0..N_LOANS {
        let held = if ns.survivors[i] { d1.x1[i] } else { 0.0 };
        if ns.survivors[i] {
            purchases += (held - x0[i]).max(0.0) * ns.prices[i];
        }
        sales += (x0[i] - held).max(0.0) * ns.prices[i];
    }
    purchases + ns.short_term - sales - (1.0 - params.phi_e) * d1.ve - (1.0 - params.phi_d) * d1.vd
}

/// Leverage ratio after issuance:
/// `(z1 + (1-phi_e)ve + (1-phi_d)vd - vd - LT_due) / (z1 + vd + ve)`.
pub fn leverage_t1(ns: &NodeState, ve: f64, vd: f64, params: &MarketParams) -> Result<f64> {
    let denom = ns.z1 + vd + ve;
    if denom == 0.0 {
        return Err(Error::DivisionByZero("leverage_t1"));
    }
    Ok((ns.available(ve, vd, params) - vd - ns.long_term_due) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EquityValuation {
    /// Assumes every final payoff covers the debt claims; closed form.
    Linear,
    /// Risk-neutral expectation of the limited-liability payoff.
    #[default]
    PositivePart,
}

/// Linear-mode equity value per unit:
/// `[avail(ve, vd) - (vd + LT_final)/(1+r)] / (e + ve)`.
pub fn v_equity_linear(ns: &NodeState, ve: f64, vd: f64, params: &MarketParams) -> f64 {
    (ns.available(ve, vd, params) - (vd + ns.long_term_final) / (1.0 + params.r)) / (ns.initial.e + ve)
}

/// Discounted expected equity return per unit of equity at t=1.
pub fn v_equity(ns: &NodeState, d1: &Stage1Decision, model: &Model, mode: EquityValuation) -> f64 {
    let p = &model.params;
    match mode {
        EquityValuation::Linear => v_equity_linear(ns, d1.ve, d1.vd, p),
        EquityValuation::PositivePart => {
            let m = d1.amounts(ns);
            let claim = d1.vd + ns.long_term_final;
            let payoff: f64 = model
                .tree
                .children(ns.node.node_id)
                .map(|c| c.prob(Measure::RiskNeutral) * (portfolio_value(&m, c, &model.loans) - claim).max(0.0))
                .sum();
            payoff / (1.0 + p.r) / (ns.initial.e + d1.ve)
        }
    }
}

/// Final payoffs net of claims at each child leaf (for checking whether the
/// linear valuation is exact).
pub fn leaf_net_payoffs(ns: &NodeState, d1: &Stage1Decision, model: &Model) -> Vec<f64> {
    let m = d1.amounts(ns);
    let claim = d1.vd + ns.long_term_final;
    model.tree.children(ns.node.node_id).map(|c| portfolio_value(&m, c, &model.loans) - claim).collect()
}

pub fn equity_holder_ok(ns: &NodeState, d1: &Stage1Decision, model: &Model) -> bool {
    v_equity(ns, d1, model, EquityValuation::PositivePart) >= ns.target(&model.params) - INEQ_TOL
}

/// Physical expectation of the t=2 portfolio value minus issuance costs.
pub fn objective_t1(ns: &NodeState, d1: &Stage1Decision, model: &Model) -> f64 {
    let m = d1.amounts(ns);
    let p = &model.params;
    let value: f64 = model
        .tree
        .children(ns.node.node_id)
        .map(|c| c.prob(Measure::Physical) * portfolio_value(&m, c, &model.loans))
        .sum();
    value - p.phi_d * d1.vd - p.phi_e * d1.ve
}

/// Slacks of every t=1 constraint at `d1`.
pub fn feasible_t1(ns: &NodeState, d1: &Stage1Decision, model: &Model) -> Feasibility {
    let p = &model.params;
    let positions = (0..N_LOANS)
        .map(|i| if ns.survivors[i] { d1.x1[i] } else { -d1.x1[i].abs() })
        .fold(f64::INFINITY, f64::min);
    let leverage = leverage_t1(ns, d1.ve, d1.vd, p).map(|l| l - p.k_lev).unwrap_or(f64::NEG_INFINITY);
    let v = v_equity(ns, d1, model, EquityValuation::PositivePart);
    Feasibility {
        slacks: vec![
            ConstraintSlack::new("budget", -budget_gap(ns, d1, p).abs(), INEQ_TOL),
            ConstraintSlack::new("positions", positions, INEQ_TOL),
            ConstraintSlack::new("leverage", leverage, INEQ_TOL),
            ConstraintSlack::new("equity_holder", v - ns.target(p), INEQ_TOL),
            ConstraintSlack::new("risk", p.theta2 - model.rho(&d1.amounts(ns)), INEQ_TOL),
            ConstraintSlack::new("equity_issue", d1.ve.min(p.cap_e - d1.ve), INEQ_TOL),
            ConstraintSlack::new("debt_issue", d1.vd.min(p.cap_d - d1.vd), INEQ_TOL),
        ],
    }
}

/// Search problem over `[ve, vd, risky surviving positions...]`.
pub(crate) struct Stage1Problem<'a> {
    pub model: &'a Model,
    pub ns: &'a NodeState,
    /// Loan indices of the free risky positions, in coordinate order.
    pub risky: Vec<usize>,
}

impl<'a> Stage1Problem<'a> {
    pub fn new(model: &'a Model, ns: &'a NodeState) -> Self {
        let risky = (1..N_LOANS).filter(|&i| ns.survivors[i]).collect();
        Self { model, ns, risky }
    }

    /// Completes a coordinate vector with the safe position from the budget.
    pub fn decision(&self, v: &[f64]) -> Stage1Decision {
        let (ve, vd) = (v[0], v[1]);
        let mut x1 = [0.0; N_LOANS];
        let mut spent = 0.0;
        for (k, &i) in self.risky.iter().enumerate() {
            x1[i] = v[2 + k];
            spent += x1[i] * self.ns.prices[i];
        }
        x1[0] = (self.ns.available(ve, vd, &self.model.params) - spent) / self.ns.prices[0];
        Stage1Decision { x1, ve, vd }
    }

    pub fn space(&self) -> SearchSpace {
        let p = &self.model.params;
        let most = self.ns.available(p.cap_e, p.cap_d, p).max(0.0);
        let mut bounds = vec![(0.0, p.cap_e), (0.0, p.cap_d)];
        bounds.extend(self.risky.iter().map(|&i| (0.0, most / self.ns.prices[i])));
        SearchSpace::boxed(bounds)
    }

    pub fn steps(&self, config: &OptimizerConfig) -> Vec<f64> {
        let g = config.grid;
        let mut s = vec![g.issuance, g.issuance];
        s.extend(self.risky.iter().map(|_| g.position));
        s
    }
}

impl Problem for Stage1Problem<'_> {
    fn objective(&self, v: &[f64]) -> f64 {
        objective_t1(self.ns, &self.decision(v), self.model)
    }

    fn violation(&self, v: &[f64]) -> f64 {
        let d = self.decision(v);
        let p = &self.model.params;
        let ns = self.ns;
        let safe = (-d.x1[0]).max(0.0);
        let leverage = match leverage_t1(ns, d.ve, d.vd, p) {
            Ok(l) if ns.z1 + d.ve + d.vd > 0.0 => (p.k_lev - l).max(0.0),
            _ => 1.0 + (ns.z1 + d.ve + d.vd).abs(),
        };
        let equity = (ns.target(p) - v_equity(ns, &d, self.model, EquityValuation::PositivePart)).max(0.0);
        let risk = (self.model.rho(&d.amounts(ns)) - p.theta2).max(0.0);
        safe + leverage + equity + risk
    }

    fn tie_key(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// Why a node has no feasible rebalancing.
#[derive(Debug, Clone, PartialEq)]
pub enum BankruptcyReason {
    /// Restoring the leverage floor needs more new equity than the cap allows.
    LeverageUnattainable { min_ve: f64, cap_e: f64 },
    /// Even maximal issuance cannot repay the short-term debt.
    ShortTermUnpaid { shortfall: f64 },
    /// No feasible point found although no analytical obstruction applies.
    NoFeasiblePoint { detail: String },
}

impl std::fmt::Display for BankruptcyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::LeverageUnattainable { min_ve, cap_e } => write!(
                f,
                "leverage floor unattainable: minimal new equity {min_ve:.4} exceeds the cap E = {cap_e}"
            ),
            Self::ShortTermUnpaid { shortfall } => {
                write!(f, "short-term debt cannot be repaid: shortfall {shortfall:.6} after maximal issuance")
            }
            Self::NoFeasiblePoint { detail } => write!(f, "no feasible point: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Solution {
    pub decision: Stage1Decision,
    pub objective: f64,
    pub feasibility: Feasibility,
    pub leverage: f64,
    pub v_equity: f64,
    pub target: f64,
    pub regime: TargetRegime,
    pub method: &'static str,
    pub evaluations: u64,
}

impl Stage1Solution {
    /// Share of invested money held in the safe loan.
    pub fn safe_share(&self, ns: &NodeState) -> f64 {
        let m = self.decision.amounts(ns);
        let total: f64 = m.iter().sum();
        if total > 0.0 { m[0] / total } else { 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage1Outcome {
    Solved(Box<Stage1Solution>),
    Bankrupt(BankruptcyReason),
}

impl Stage1Outcome {
    pub fn solution(&self) -> Option<&Stage1Solution> {
        match self {
            Self::Solved(s) => Some(s),
            Self::Bankrupt(_) => None,
        }
    }

    pub fn is_bankrupt(&self) -> bool {
        matches!(self, Self::Bankrupt(_))
    }
}

/// Coarsens `steps` by doubling until the grid fits in `budget`.
pub(crate) fn fit_steps(space: &SearchSpace, steps: &[f64], budget: u64) -> Vec<f64> {
    let mut s = steps.to_vec();
    while grid_size(space, &s) > budget as u128 {
        s.iter_mut().for_each(|v| *v *= 2.0);
    }
    s
}

/// Solves the node problem: differential evolution, then a (possibly
/// coarsened) grid fallback, then the analytical bankruptcy tests.
pub fn solve_t1(model: &Model, ns: &NodeState, config: &OptimizerConfig) -> Result<Stage1Outcome> {
    let problem = Stage1Problem::new(model, ns);
    let space = problem.space();
    let (opt, method) = match de_optimize(&problem, &space, config) {
        Ok(o) => (o, "differential_evolution"),
        Err(Error::Infeasible(_)) => {
            let steps = fit_steps(&space, &problem.steps(config), config.grid_budget);
            match grid_oracle(&problem, &space, &steps, config.grid_budget) {
                Ok(o) => (o, "grid"),
                Err(Error::Infeasible(detail)) => return Ok(Stage1Outcome::Bankrupt(diagnose(model, ns, detail))),
                Err(e) => return Err(e),
            }
        }
        Err(e) => return Err(e),
    };
    let decision = problem.decision(&opt.point);
    let p = &model.params;
    Ok(Stage1Outcome::Solved(Box::new(Stage1Solution {
        decision,
        objective: opt.objective,
        feasibility: feasible_t1(ns, &decision, model),
        leverage: leverage_t1(ns, decision.ve, decision.vd, p)?,
        v_equity: v_equity(ns, &decision, model, EquityValuation::PositivePart),
        target: ns.target(p),
        regime: ns.regime(p),
        method,
        evaluations: opt.evaluations,
    })))
}

/// Grid oracle for the node problem at the steps of `config.grid`, coarsened
/// to fit `config.grid_budget`. Returns the best grid decision and its optimum.
pub fn grid_t1(model: &Model, ns: &NodeState, config: &OptimizerConfig) -> Result<(Stage1Decision, Optimum)> {
    let problem = Stage1Problem::new(model, ns);
    let space = problem.space();
    let steps = fit_steps(&space, &problem.steps(config), config.grid_budget);
    let opt = grid_oracle(&problem, &space, &steps, config.grid_budget)?;
    Ok((problem.decision(&opt.point), opt))
}

fn diagnose(model: &Model, ns: &NodeState, detail: String) -> BankruptcyReason {
    let p = &model.params;
    let min_ve = min_ve_for_leverage(ns, p);
    if min_ve > p.cap_e {
        return BankruptcyReason::LeverageUnattainable { min_ve, cap_e: p.cap_e };
    }
    let most = ns.available(p.cap_e, p.cap_d, p);
    if most < 0.0 {
        return BankruptcyReason::ShortTermUnpaid { shortfall: -most };
    }
    BankruptcyReason::NoFeasiblePoint { detail }
}

/// Solves the given t=1 nodes concurrently; results follow `ids`.
pub fn solve_nodes(
    model: &Model,
    d0: &Stage0Decision,
    ids: &[usize],
    config: &OptimizerConfig,
) -> Result<Vec<(NodeState, Stage1Outcome)>> {
    ids.par_iter()
        .map(|&id| {
            let ns = node_state(model, d0, id)?;
            let out = solve_t1(model, &ns, config)?;
            Ok((ns, out))
        })
        .collect()
}
