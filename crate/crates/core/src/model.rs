use std::sync::Arc;

use crate::error::{check_param, Result};
use crate::measures::{irb_per_loan, ExpectedLoss, MarketParams, RiskMeasure};
use crate::scenario::{validate_loans, CouplingRule, Loans, ScenarioTree, N_LOANS};

/// A fully specified model instance: loans, market parameters, the scenario
/// tree under both measures, the IRB confidence level and the risk measure.
#[derive(Debug, Clone)]
pub struct Model {
    pub loans: Loans,
    pub params: MarketParams,
    pub tree: ScenarioTree,
    pub irb_confidence: f64,
    pub risk: Arc<dyn RiskMeasure>,
    irb: [f64; N_LOANS],
}

impl Model {
    pub fn new(loans: Loans, params: MarketParams, coupling: &CouplingRule, irb_confidence: f64) -> Result<Self> {
        validate_loans(&loans)?;
        params.validate()?;
        check_param("r", (params.r - loans[0].rate).abs() < 1e-12, || {
            format!("risk-free rate {} must equal the safe loan rate {}", params.r, loans[0].rate)
        })?;
        let tree = ScenarioTree::calibrated(&loans, coupling)?;
        let irb = irb_per_loan(&loans, irb_confidence)?;
        Ok(Self { loans, params, tree, irb_confidence, risk: Arc::new(ExpectedLoss), irb })
    }

    pub fn with_risk_measure(mut self, risk: Arc<dyn RiskMeasure>) -> Self {
        self.risk = risk;
        self
    }

    pub fn with_params(mut self, params: MarketParams) -> Result<Self> {
        params.validate()?;
        self.params = params;
        Ok(self)
    }

    /// Per-loan IRB charges at the model's confidence level.
    pub fn irb_per_loan(&self) -> &[f64; N_LOANS] {
        &self.irb
    }

    /// `K(x)` for the model's loans.
    pub fn irb_capital(&self, x: &[f64; N_LOANS]) -> f64 {
        x.iter().zip(&self.irb).map(|(a, k)| a * k).sum()
    }

    pub fn rho(&self, exposure: &[f64; N_LOANS]) -> f64 {
        self.risk.evaluate(exposure, &self.loans)
    }
}

/// Slack of one constraint at a decision; satisfied iff `slack >= -tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSlack {
    pub name: &'static str,
    pub slack: f64,
    pub tolerance: f64,
}

impl ConstraintSlack {
    pub fn new(name: &'static str, slack: f64, tolerance: f64) -> Self {
        Self { name, slack, tolerance }
    }

    pub fn satisfied(&self) -> bool {
        self.slack >= -self.tolerance
    }

    pub fn binding(&self) -> bool {
        self.slack.abs() <= 1e-6
    }
}

/// All constraint slacks at a decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub slacks: Vec<ConstraintSlack>,
}

impl Feasibility {
    pub fn feasible(&self) -> bool {
        self.slacks.iter().all(ConstraintSlack::satisfied)
    }

    pub fn violations(&self) -> Vec<&ConstraintSlack> {
        self.slacks.iter().filter(|s| !s.satisfied()).collect()
    }

    pub fn binding(&self) -> Vec<&'static str> {
        self.slacks.iter().filter(|s| s.binding()).map(|s| s.name).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ConstraintSlack> {
        self.slacks.iter().find(|s| s.name == name)
    }

    /// Sum of violations beyond tolerance.
    pub fn total_violation(&self) -> f64 {
        self.slacks.iter().map(|s| (-s.slack - s.tolerance).max(0.0)).sum()
    }
}
