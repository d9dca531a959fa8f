//! Initial allocation and capital structure (t=0).
//!
//! Maximizes the expected limited-liability payoff at t=1 net of the cost of
//! equity,
//!
//! ```text
//! E[ max(X - b_ST(1-e) - (1+r_d) b_LT(1-e), 0) ] - delta * e,   X = sum_i x_i L_i(1)
//! ```
//!
//! over weights `x` on the simplex and the equity fraction `e`, subject to
//! `e >= max(k_lev, K(x))` and `rho(x) <= theta1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::MarketParams;
use crate::model::{ConstraintSlack, Feasibility, Model};
use crate::optimizer::{de_optimize, grid_oracle, OptimizerConfig, Optimum, Problem, SearchSpace};
use crate::scenario::{portfolio_value, Measure, ScenarioTree, N_LOANS};

const BUDGET_TOL: f64 = 1e-9;
const INEQ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage0Decision {
    pub x: [f64; N_LOANS],
    pub e: f64,
}

/// Debt claims outstanding at t=1: short-term principal and long-term face
/// (before interest).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebtClaims {
    pub short: f64,
    pub long_face: f64,
}

pub fn debt_claim_t1(d: &Stage0Decision, params: &MarketParams) -> DebtClaims {
    DebtClaims { short: params.beta_st * (1.0 - d.e), long_face: params.beta_lt() * (1.0 - d.e) }
}

/// Total claim subtracted in the t=0 payoff: `b_ST(1-e) + (1+r_d) b_LT(1-e)`.
fn payoff_claim(d: &Stage0Decision, params: &MarketParams) -> f64 {
    let c = debt_claim_t1(d, params);
    c.short + (1.0 + params.r_d) * c.long_face
}

pub fn objective_t0(d: &Stage0Decision, tree: &ScenarioTree, params: &MarketParams) -> f64 {
    let claim = payoff_claim(d, params);
    let loans = tree.loans();
    tree.expect_t1(Measure::Physical, |n| (portfolio_value(&d.x, n, loans) - claim).max(0.0)) - params.delta * d.e
}

/// Slacks of the four t=0 constraints plus the equity range.
pub fn feasible_t0(d: &Stage0Decision, model: &Model) -> Feasibility {
    let p = &model.params;
    let bounds = d.x.iter().map(|&v| v.min(1.0 - v)).fold(f64::INFINITY, f64::min);
    let sum: f64 = d.x.iter().sum();
    let capital_floor = p.k_lev.max(model.irb_capital(&d.x));
    let equity_range = if d.e > 0.0 { d.e.min(1.0 - d.e) } else { d.e.min(0.0) - f64::MIN_POSITIVE };
    Feasibility {
        slacks: vec![
            ConstraintSlack::new("bounds", bounds, INEQ_TOL),
            ConstraintSlack::new("budget", -(sum - 1.0).abs(), BUDGET_TOL),
            ConstraintSlack::new("capital", d.e - capital_floor, INEQ_TOL),
            ConstraintSlack::new("risk", p.theta1 - model.rho(&d.x), INEQ_TOL),
            ConstraintSlack::new("equity_range", equity_range, 0.0),
        ],
    }
}

/// Solution of the t=0 problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage0Solution {
    pub decision: Stage0Decision,
    pub objective: f64,
    pub feasibility: Feasibility,
    /// Leverage ratio of the unit balance sheet, `(1 - (1-e)) / 1 = e`.
    pub leverage_ratio: f64,
    pub rho: f64,
    pub irb_capital: f64,
    /// `"differential_evolution"` or `"grid"`.
    pub method: &'static str,
    pub trace: Vec<f64>,
}

impl Stage0Solution {
    pub fn binding(&self) -> Vec<&'static str> {
        self.feasibility.binding().into_iter().filter(|n| *n != "budget").collect()
    }
}

struct Stage0Problem<'a> {
    model: &'a Model,
}

impl Stage0Problem<'_> {
    fn decision(x: &[f64]) -> Stage0Decision {
        Stage0Decision { x: [x[0], x[1], x[2]], e: x[3] }
    }
}

impl Problem for Stage0Problem<'_> {
    fn objective(&self, x: &[f64]) -> f64 {
        objective_t0(&Self::decision(x), &self.model.tree, &self.model.params)
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let d = Self::decision(x);
        let p = &self.model.params;
        let capital = (p.k_lev.max(self.model.irb_capital(&d.x)) - d.e).max(0.0);
        let risk = (self.model.rho(&d.x) - p.theta1).max(0.0);
        let positive = if d.e > 0.0 { 0.0 } else { 1.0 };
        capital + risk + positive
    }

    fn tie_key(&self, x: &[f64]) -> Vec<f64> {
        let d = Self::decision(x);
        vec![self.model.rho(&d.x), d.e, d.x[0], d.x[1], d.x[2]]
    }
}

fn search_space() -> SearchSpace {
    SearchSpace { bounds: vec![(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)], simplex: Some(0..3) }
}

fn grid_space() -> SearchSpace {
    SearchSpace { bounds: vec![(0.0, 1.0); 4], simplex: Some(0..3) }
}

/// Dense grid oracle for the t=0 problem (simplex step and equity step from
/// `config.grid`).
pub fn grid_t0(model: &Model, config: &OptimizerConfig) -> Result<Optimum> {
    let g = config.grid;
    grid_oracle(&Stage0Problem { model }, &grid_space(), &[g.simplex, g.simplex, g.simplex, g.equity], config.grid_budget)
}

/// Maximizes the t=0 objective by differential evolution, falling back to the
/// grid oracle when no feasible point is found.
///
/// The objective is a maximum of affine functions in `e` for fixed `x`, so the
/// best equity fraction is an endpoint of `[max(k_lev, K(x)), 1]`; the DE
/// incumbent is snapped to the better endpoint.
pub fn solve_t0(model: &Model, config: &OptimizerConfig) -> Result<Stage0Solution> {
    let problem = Stage0Problem { model };
    let (opt, method) = match de_optimize(&problem, &search_space(), config) {
        Ok(opt) => (opt, "differential_evolution"),
        Err(Error::Infeasible(_)) => (grid_t0(model, config)?, "grid"),
        Err(e) => return Err(e),
    };
    let mut d = Stage0Problem::decision(&opt.point);
    let mut best = opt.objective;

    let floor = model.params.k_lev.max(model.irb_capital(&d.x));
    for e in [floor, 1.0] {
        let cand = Stage0Decision { e, ..d };
        if problem.violation(&[cand.x[0], cand.x[1], cand.x[2], e]) > 0.0 {
            continue;
        }
        let obj = objective_t0(&cand, &model.tree, &model.params);
        if obj > best || (obj == best && e < d.e) {
            best = obj;
            d = cand;
        }
    }

    let feasibility = feasible_t0(&d, model);
    if !feasibility.feasible() {
        return Err(Error::Infeasible(format!("t=0 incumbent violates {:?}", feasibility.violations())));
    }
    Ok(Stage0Solution {
        decision: d,
        objective: best,
        leverage_ratio: d.e,
        rho: model.rho(&d.x),
        irb_capital: model.irb_capital(&d.x),
        feasibility,
        method,
        trace: opt.trace,
    })
}

/// Comparison of a solved t=0 decision against a reference (reported)
/// decision, naming the parameters that keep the solver away from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionCheck {
    pub reference: Stage0Decision,
    /// Per-weight absolute gap, in percentage points.
    pub weight_gap_pp: [f64; N_LOANS],
    /// Equity gap in percentage points.
    pub equity_gap_pp: f64,
    pub matches: bool,
    pub reference_feasible: bool,
    pub reference_objective: f64,
    pub blocking: Vec<String>,
}

/// Checks `solution` against `reference` with tolerances `weight_tol_pp` and
/// `equity_tol_pp` (percentage points).
pub fn reproduction_check(
    solution: &Stage0Solution,
    reference: &Stage0Decision,
    model: &Model,
    weight_tol_pp: f64,
    equity_tol_pp: f64,
) -> ReproductionCheck {
    let d = &solution.decision;
    let weight_gap_pp: [f64; N_LOANS] = std::array::from_fn(|i| 100.0 * (d.x[i] - reference.x[i]).abs());
    let equity_gap_pp = 100.0 * (d.e - reference.e).abs();
    let weights_ok = weight_gap_pp.iter().all(|g| *g <= weight_tol_pp);
    let equity_ok = equity_gap_pp <= equity_tol_pp;

    let ref_feas = feasible_t0(reference, model);
    let reference_objective = objective_t0(reference, &model.tree, &model.params);
    let p = &model.params;
    let mut blocking = Vec::new();

    if !equity_ok {
        let floor = p.k_lev.max(model.irb_capital(&d.x));
        blocking.push(format!(
            "delta = {}: optimal equity is {:.4} while the capital floor is {:.4}; the payoff gains \
             more than delta per unit of equity",
            p.delta, d.e, floor
        ));
    }
    if !weights_ok {
        if !ref_feas.feasible() {
            for v in ref_feas.violations() {
                blocking.push(format!("reference decision violates `{}` (slack {:.3e})", v.name, v.slack));
            }
        } else {
            let risk = solution.feasibility.get("risk").map(|s| s.slack).unwrap_or(f64::NAN);
            if risk > 1e-9 {
                blocking.push(format!(
                    "risk measure `{}` with theta1 = {} is slack at the optimum (rho = {:.6}); \
                     nothing stops the higher-yield mix, which beats the reference by {:.6}; \
                     rho at the reference is {:.6}, so theta1 near that value would make it binding",
                    model.risk.name(),
                    p.theta1,
                    solution.rho,
                    solution.objective - reference_objective,
                    model.rho(&reference.x)
                ));
            }
            let cap = solution.feasibility.get("capital").map(|s| s.slack).unwrap_or(f64::NAN);
            if cap > 1e-9 || model.irb_capital(&d.x) < p.k_lev {
                blocking.push(format!(
                    "IRB capital K(x) = {:.6} stays below k_lev = {}; the capital constraint does not \
                     discriminate between loan mixes",
                    solution.irb_capital, p.k_lev
                ));
            }
        }
    }
    ReproductionCheck {
        reference: *reference,
        weight_gap_pp,
        equity_gap_pp,
        matches: weights_ok && equity_ok,
        reference_feasible: ref_feas.feasible(),
        reference_objective,
        blocking,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CouplingRule, LoanSpec};

    pub(crate) fn example1(delta: f64) -> Model {
        let loans = [
            LoanSpec::safe(0.03),
            LoanSpec { rate: 0.09, pd: 0.061, lgd: 0.10 },
            LoanSpec { rate: 0.132, pd: 0.122, lgd: 0.09 },
        ];
        let params = MarketParams {
            beta_st: 0.7,
            r: 0.03,
            r_d: 0.01,
            r_e: 0.10,
            delta,
            phi_e: 0.10,
            phi_d: 0.07,
            k_lev: 0.04,
            theta1: 0.012,
            theta2: 0.01,
            cap_e: 0.02,
            cap_d: 0.01,
        };
        Model::new(loans, params, &CouplingRule::default(), 0.999).unwrap()
    }

    #[test]
    fn debt_claims() {
        let m = example1(1.1);
        let c = debt_claim_t1(&Stage0Decision { x: [1.0, 0.0, 0.0], e: 0.04 }, &m.params);
        assert!((c.short - 0.672).abs() < 1e-15);
        let c = debt_claim_t1(&Stage0Decision { x: [1.0, 0.0, 0.0], e: 1.0 }, &m.params);
        assert_eq!((c.short, c.long_face), (0.0, 0.0));
        let p = MarketParams { beta_st: 0.5, ..m.params };
        let c = debt_claim_t1(&Stage0Decision { x: [1.0, 0.0, 0.0], e: 0.04 }, &p);
        assert!((c.short - 0.48).abs() < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let m = example1(0.0);
        let all_equity = Stage0Decision { x: [1.0, 0.0, 0.0], e: 1.0 };
        assert!((objective_t0(&all_equity, &m.tree, &m.params) - 1.03).abs() < 1e-14);

        // brute-force enumeration over the three t=1 nodes
        let d = Stage0Decision { x: [0.0, 1.0, 0.0], e: 0.04 };
        let claim = 0.7 * 0.96 + 1.01 * 0.3 * 0.96;
        let nodes = [(0.878, 1.09), (0.061, 1.09), (0.061, 0.90)];
        let want: f64 = nodes.iter().map(|(p, v)| p * f64::max(v - claim, 0.0)).sum();
        assert!((objective_t0(&d, &m.tree, &m.params) - want).abs() < 1e-14);

        // claims above X everywhere: only the equity cost remains
        let m = example1(0.3);
        let d = Stage0Decision { x: [0.0, 0.0, 1.0], e: 0.0 };
        let p = MarketParams { beta_st: 1.0, ..m.params };
        let d = Stage0Decision { x: [0.0, 0.0, 0.0], ..d };
        assert_eq!(objective_t0(&d, &m.tree, &p), 0.0);
        let d = Stage0Decision { x: [0.0, 0.5, 0.0], e: 0.02 };
        assert!((objective_t0(&d, &m.tree, &p) + 0.3 * 0.02).abs() < 1e-15);
    }

    #[test]
    fn feasibility_examples() {
        let m = example1(1.1);
        let d = Stage0Decision { x: [0.0, 0.5904, 0.4096], e: 0.04 };
        assert!(feasible_t0(&d, &m).feasible());
        let d = Stage0Decision { x: [0.0, 0.0, 1.0], e: 0.04 };
        let f = feasible_t0(&d, &m);
        assert!(f.get("risk").unwrap().slack > 0.0);
        assert!(f.feasible(), "K(L2) = {}", m.irb_capital(&d.x));
        let d = Stage0Decision { x: [0.0, 0.5, 0.4], e: 0.04 };
        let f = feasible_t0(&d, &m);
        assert_eq!(f.violations().iter().map(|v| v.name).collect::<Vec<_>>(), ["budget"]);
    }

    #[test]
    fn objective_decreases_in_delta() {
        let d = Stage0Decision { x: [0.2, 0.3, 0.5], e: 0.07 };
        let h = 1e-6;
        for delta in [0.0, 0.05, 0.5, 1.1] {
            let (a, b) = (example1(delta), example1(delta + h));
            let slope = (objective_t0(&d, &b.tree, &b.params) - objective_t0(&d, &a.tree, &a.params)) / h;
            assert!((slope + d.e).abs() < 1e-6, "slope {slope}");
        }
    }

    #[test]
    fn zero_risk_cap_forces_safe_asset() {
        let m = example1(1.1);
        let m = m.clone().with_params(MarketParams { theta1: 0.0, ..m.params }).unwrap();
        let sol = solve_t0(&m, &OptimizerConfig::default()).unwrap();
        assert_eq!(sol.decision.x, [1.0, 0.0, 0.0]);
        assert!((sol.decision.e - 0.04).abs() < 1e-12);
    }

    #[test]
    fn negative_risk_cap_is_infeasible() {
        let m = example1(1.1);
        let p = MarketParams { theta1: -0.01, ..m.params };
        let m = m.with_params(p).unwrap();
        let cfg = OptimizerConfig { generations: 20, grid: crate::optimizer::GridSteps { simplex: 0.05, equity: 0.05, ..Default::default() }, ..Default::default() };
        assert!(matches!(solve_t0(&m, &cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn equity_binds_when_costly() {
        let m = example1(1.1);
        let sol = solve_t0(&m, &OptimizerConfig::default()).unwrap();
        let floor = m.params.k_lev.max(m.irb_capital(&sol.decision.x));
        assert!((sol.decision.e - floor).abs() < 1e-6);
        assert!(sol.binding().contains(&"capital"));
    }
}
