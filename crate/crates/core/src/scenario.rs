//! Two-period contagion default tree.
//!
//! Three loans: `L0` (safe), `L1` (less risky), `L2` (more risky). A default of
//! `L1` always comes with a default of `L2`, and defaults are absorbing, which
//! leaves three states at t=1 and six leaves at t=2:
//!
//! ```text
//!            t=1                    t=2
//!                              1: -
//!       1: -          ──────── 2: L2D
//!                              3: L1D L2D
//!  0 ── 2: L2D        ──────── 4: L2D
//!                              5: L1D L2D
//!       3: L1D L2D    ──────── 6: L1D L2D
//! ```
//!
//! Per-period default events are drawn from the nested (comonotone) coupling:
//! with marginals `a1 <= a2`, both default w.p. `a1`, only `L2` w.p. `a2 - a1`,
//! none w.p. `1 - a2`. Survivors face the same per-period marginals again in the
//! second period unless [`CouplingRule::second_period_pd`] overrides them.

use serde::{Deserialize, Serialize};

use crate::error::{check_param, Error, Result};
use crate::measures::RiskNeutralWeights;

/// Number of loans in the model: the safe asset and two risky loans.
pub const N_LOANS: usize = 3;

/// Per-period terms of one loan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoanSpec {
    /// Per-period interest rate, e.g. `0.09`.
    pub rate: f64,
    /// Per-period default probability.
    pub pd: f64,
    /// Loss given default.
    pub lgd: f64,
}

pub type Loans = [LoanSpec; N_LOANS];

impl LoanSpec {
    pub fn new(rate: f64, pd: f64, lgd: f64) -> Result<Self> {
        let loan = Self { rate, pd, lgd };
        loan.validate()?;
        Ok(loan)
    }

    pub fn safe(rate: f64) -> Self {
        Self { rate, pd: 0.0, lgd: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_param("rate", self.rate.is_finite() && self.rate > -1.0, || {
            format!("must be finite and > -1, got {}", self.rate)
        })?;
        check_param("pd", (0.0..=1.0).contains(&self.pd), || {
            format!("must lie in [0,1], got {}", self.pd)
        })?;
        check_param("lgd", (0.0..=1.0).contains(&self.lgd), || {
            format!("must lie in [0,1], got {}", self.lgd)
        })
    }
}

/// Validates every loan and the safe-asset convention (`L0` never defaults).
pub fn validate_loans(loans: &Loans) -> Result<()> {
    for loan in loans {
        loan.validate()?;
    }
    check_param("loans[0]", loans[0].pd == 0.0 && loans[0].lgd == 0.0, || {
        "the safe loan must have pd = 0 and lgd = 0".into()
    })
}

/// Gross value per unit of a loan over one period: `1 - lgd` on default,
/// `1 + rate` otherwise.
pub fn loan_realization(loan: &LoanSpec, defaulted_this_period: bool) -> f64 {
    if defaulted_this_period {
        1.0 - loan.lgd
    } else {
        1.0 + loan.rate
    }
}

/// Default indicator per loan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DefaultState {
    pub defaulted: [bool; N_LOANS],
}

impl DefaultState {
    pub const NONE: Self = Self { defaulted: [false, false, false] };
    pub const ONLY_L2: Self = Self { defaulted: [false, false, true] };
    pub const BOTH: Self = Self { defaulted: [false, true, true] };

    /// `L1` defaulted implies `L2` defaulted, and `L0` never defaults.
    pub fn respects_contagion(&self) -> bool {
        !self.defaulted[0] && (!self.defaulted[1] || self.defaulted[2])
    }

    pub fn survivors(&self) -> [bool; N_LOANS] {
        self.defaulted.map(|d| !d)
    }
}

/// Which probability measure to read off the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Physical,
    RiskNeutral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioNode {
    /// 1 or 2.
    pub time: u8,
    /// 1..=3 at t=1, 1..=6 at t=2, numbered top to bottom.
    pub node_id: usize,
    /// Cumulative default state at this node.
    pub state: DefaultState,
    /// Loans whose default happened in the period ending at this node.
    pub newly_defaulted: [bool; N_LOANS],
    /// Id of the t=1 parent; `None` for t=1 nodes (their parent is the root).
    pub parent: Option<usize>,
    /// Transition probability from the parent.
    pub prob_physical: f64,
    pub prob_riskneutral: f64,
}

impl ScenarioNode {
    pub fn prob(&self, measure: Measure) -> f64 {
        match measure {
            Measure::Physical => self.prob_physical,
            Measure::RiskNeutral => self.prob_riskneutral,
        }
    }

    /// Gross one-period growth of a position in loan `i` held over the period
    /// ending at this node. Loans that defaulted earlier return 0: their
    /// recovery was paid when they defaulted.
    pub fn growth(&self, loans: &Loans, i: usize) -> f64 {
        if self.state.defaulted[i] && !self.newly_defaulted[i] {
            0.0
        } else {
            loan_realization(&loans[i], self.newly_defaulted[i])
        }
    }
}

/// Default-law options. Only the nested coupling is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingRule {
    /// Physical per-period default probabilities for the second period.
    /// `None` reuses the first-period `pd` of each loan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_period_pd: Option<[f64; N_LOANS]>,
}

/// Immutable two-period scenario tree under both measures.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    loans: Loans,
    q: RiskNeutralWeights,
    t1: [ScenarioNode; 3],
    t2: [ScenarioNode; 6],
}

/// Children of a node under the nested coupling, top to bottom, as
/// (state, newly defaulted, probability).
fn transitions(
    state: DefaultState,
    marginals: [f64; N_LOANS],
) -> Vec<(DefaultState, [bool; N_LOANS], f64)> {
    let (a1, a2) = (marginals[1], marginals[2]);
    match (state.defaulted[1], state.defaulted[2]) {
        (false, false) => vec![
            (DefaultState::NONE, [false; 3], 1.0 - a2),
            (DefaultState::ONLY_L2, [false, false, true], a2 - a1),
            (DefaultState::BOTH, [false, true, true], a1),
        ],
        (false, true) => vec![
            (DefaultState::ONLY_L2, [false; 3], 1.0 - a1),
            (DefaultState::BOTH, [false, true, false], a1),
        ],
        _ => vec![(DefaultState::BOTH, [false; 3], 1.0)],
    }
}

fn check_nested(marginals: [f64; N_LOANS]) -> Result<()> {
    if marginals[2] < marginals[1] {
        return Err(Error::CouplingInfeasible { pd1: marginals[1], pd2: marginals[2] });
    }
    Ok(())
}

/// Builds the tree with physical probabilities from `loans`/`coupling` and
/// risk-neutral probabilities from `q` (same nested coupling, both periods).
pub fn build_tree(loans: &Loans, coupling: &CouplingRule, q: &RiskNeutralWeights) -> Result<ScenarioTree> {
    validate_loans(loans)?;
    let p1 = loans.map(|l| l.pd);
    let p2 = coupling.second_period_pd.unwrap_or(p1);
    for (i, &p) in p2.iter().enumerate() {
        check_param("second_period_pd", (0.0..=1.0).contains(&p) && (i > 0 || p == 0.0), || {
            format!("entry {i} must lie in [0,1] (and be 0 for the safe loan), got {p}")
        })?;
    }
    let qv = q.q;
    check_nested(p1)?;
    check_nested(p2)?;
    check_nested(qv)?;

    let root = DefaultState::NONE;
    let phys1 = transitions(root, p1);
    let rn1 = transitions(root, qv);
    let t1: [ScenarioNode; 3] = std::array::from_fn(|k| ScenarioNode {
        time: 1,
        node_id: k + 1,
        state: phys1[k].0,
        newly_defaulted: phys1[k].1,
        parent: None,
        prob_physical: phys1[k].2,
        prob_riskneutral: rn1[k].2,
    });

    let mut t2 = Vec::with_capacity(6);
    for parent in &t1 {
        let phys = transitions(parent.state, p2);
        let rn = transitions(parent.state, qv);
        for (c, rn_c) in phys.iter().zip(&rn) {
            t2.push(ScenarioNode {
                time: 2,
                node_id: t2.len() + 1,
                state: c.0,
                newly_defaulted: c.1,
                parent: Some(parent.node_id),
                prob_physical: c.2,
                prob_riskneutral: rn_c.2,
            });
        }
    }
    let t2: [ScenarioNode; 6] = t2.try_into().expect("three parents with 3, 2 and 1 children");
    Ok(ScenarioTree { loans: *loans, q: *q, t1, t2 })
}

impl ScenarioTree {
    /// Builds the tree with `q` calibrated from the loans, using the safe
    /// loan's rate as the risk-free rate.
    pub fn calibrated(loans: &Loans, coupling: &CouplingRule) -> Result<Self> {
        let q = crate::measures::calibrate_q(loans, loans[0].rate)?;
        build_tree(loans, coupling, &q)
    }

    pub fn loans(&self) -> &Loans {
        &self.loans
    }

    pub fn risk_neutral(&self) -> &RiskNeutralWeights {
        &self.q
    }

    pub fn t1_nodes(&self) -> &[ScenarioNode; 3] {
        &self.t1
    }

    pub fn t2_nodes(&self) -> &[ScenarioNode; 6] {
        &self.t2
    }

    /// t=1 node by id (1..=3).
    pub fn t1_node(&self, node_id: usize) -> Result<&ScenarioNode> {
        self.t1.get(node_id.wrapping_sub(1)).ok_or(Error::InvalidParameter {
            name: "node",
            reason: format!("t=1 node ids are 1..=3, got {node_id}"),
        })
    }

    /// t=2 children of a t=1 node, top to bottom.
    pub fn children(&self, node_id: usize) -> impl Iterator<Item = &ScenarioNode> {
        self.t2.iter().filter(move |n| n.parent == Some(node_id))
    }

    /// Probability of reaching `node` from the root.
    pub fn path_prob(&self, node: &ScenarioNode, measure: Measure) -> f64 {
        match node.parent {
            None => node.prob(measure),
            Some(pid) => self.t1[pid - 1].prob(measure) * node.prob(measure),
        }
    }

    /// Expectation of `f` over the t=1 nodes.
    pub fn expect_t1(&self, measure: Measure, mut f: impl FnMut(&ScenarioNode) -> f64) -> f64 {
        self.t1.iter().map(|n| n.prob(measure) * f(n)).sum()
    }
}

/// Realized gross value of a position vector over the period ending at `node`.
///
/// At t=1, `x` are the initial weights. At t=2, `x` are the amounts held from
/// t=1; positions in loans that defaulted during the first period carry no
/// value (their recovery was paid at t=1).
pub fn portfolio_value(x: &[f64; N_LOANS], node: &ScenarioNode, loans: &Loans) -> f64 {
    (0..N_LOANS).map(|i| x[i] * node.growth(loans, i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_loans() -> Loans {
        [
            LoanSpec::safe(0.03),
            LoanSpec { rate: 0.09, pd: 0.061, lgd: 0.10 },
            LoanSpec { rate: 0.132, pd: 0.122, lgd: 0.09 },
        ]
    }

    #[test]
    fn realizations_match_loan_terms() {
        let l = example_loans();
        assert!((loan_realization(&l[1], false) - 1.09).abs() < 1e-15);
        assert!((loan_realization(&l[0], false) - 1.03).abs() < 1e-15);
        assert!((loan_realization(&l[2], true) - 0.91).abs() < 1e-15);
    }

    /// Exhaustive enumeration of the comonotone joint law: a single uniform U
    /// drives both loans, Li defaults iff U < pi.
    fn enumerate_nested(p1: f64, p2: f64) -> [f64; 3] {
        let mut cuts = vec![0.0, p1, p2, 1.0];
        cuts.sort_by(f64::total_cmp);
        let mut out = [0.0; 3];
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let u = 0.5 * (lo + hi);
            let (d1, d2) = (u < p1, u < p2);
            let idx = match (d1, d2) {
                (false, false) => 0,
                (false, true) => 1,
                (true, true) => 2,
                (true, false) => unreachable!("contagion violated"),
            };
            out[idx] += hi - lo;
        }
        out
    }

    #[test]
    fn t1_marginals_match_enumeration() {
        let tree = ScenarioTree::calibrated(&example_loans(), &CouplingRule::default()).unwrap();
        let oracle = enumerate_nested(0.061, 0.122);
        for (node, want) in tree.t1_nodes().iter().zip(oracle) {
            assert!((node.prob_physical - want).abs() < 1e-15);
        }
        assert!((tree.t1_nodes()[0].prob_physical - 0.878).abs() < 1e-12);
        assert!((tree.t1_nodes()[1].prob_physical - 0.061).abs() < 1e-12);
        assert!((tree.t1_nodes()[2].prob_physical - 0.061).abs() < 1e-12);
    }

    #[test]
    fn degenerate_couplings() {
        let mut loans = example_loans();
        loans[1].pd = 0.0;
        loans[2].pd = 0.0;
        let tree = ScenarioTree::calibrated(&loans, &CouplingRule::default()).unwrap();
        assert_eq!(tree.t1_nodes()[0].prob_physical, 1.0);

        loans[2].pd = 1.0;
        let tree = ScenarioTree::calibrated(&loans, &CouplingRule::default()).unwrap();
        assert_eq!(tree.t1_nodes()[1].prob_physical, 1.0);
    }

    #[test]
    fn coupling_rejects_inverted_pds() {
        let mut loans = example_loans();
        loans[1].pd = 0.2;
        let err = ScenarioTree::calibrated(&loans, &CouplingRule::default()).unwrap_err();
        assert!(matches!(err, Error::CouplingInfeasible { .. }));
    }

    #[test]
    fn tree_topology() {
        let tree = ScenarioTree::calibrated(&example_loans(), &CouplingRule::default()).unwrap();
        let t1: Vec<_> = tree.t1_nodes().iter().map(|n| n.state).collect();
        assert_eq!(t1, [DefaultState::NONE, DefaultState::ONLY_L2, DefaultState::BOTH]);
        let expected = [
            (1, DefaultState::NONE),
            (1, DefaultState::ONLY_L2),
            (1, DefaultState::BOTH),
            (2, DefaultState::ONLY_L2),
            (2, DefaultState::BOTH),
            (3, DefaultState::BOTH),
        ];
        for (node, (parent, state)) in tree.t2_nodes().iter().zip(expected) {
            assert_eq!(node.parent, Some(parent));
            assert_eq!(node.state, state);
            assert!(node.state.respects_contagion());
            // absorbing defaults
            let p = tree.t1_node(parent).unwrap();
            for i in 0..3 {
                assert!(!p.state.defaulted[i] || node.state.defaulted[i]);
            }
        }
        assert_eq!(tree.children(1).count(), 3);
        assert_eq!(tree.children(2).count(), 2);
        assert_eq!(tree.children(3).count(), 1);
    }

    #[test]
    fn portfolio_values() {
        let loans = example_loans();
        let tree = ScenarioTree::calibrated(&loans, &CouplingRule::default()).unwrap();
        let n = tree.t1_nodes();
        let x = [0.0, 0.5904, 0.4096];
        assert!((portfolio_value(&x, &n[2], &loans) - 0.904096).abs() < 1e-12);
        for node in n {
            assert!((portfolio_value(&[1.0, 0.0, 0.0], node, &loans) - 1.03).abs() < 1e-15);
        }
        assert!((portfolio_value(&[0.0, 1.0, 0.0], &n[0], &loans) - 1.09).abs() < 1e-15);
        // leaf 4 (child of node-2): L2 already defaulted, contributes nothing
        let leaf4 = &tree.t2_nodes()[3];
        assert_eq!(portfolio_value(&[0.0, 0.0, 1.0], leaf4, &loans), 0.0);
        // leaf 5: L1 defaults in the second period
        let leaf5 = &tree.t2_nodes()[4];
        assert!((portfolio_value(&[0.0, 1.0, 0.0], leaf5, &loans) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn second_period_override() {
        let rule = CouplingRule { second_period_pd: Some([0.0, 0.01, 0.02]) };
        let tree = ScenarioTree::calibrated(&example_loans(), &rule).unwrap();
        let leaves: Vec<f64> = tree.children(1).map(|n| n.prob_physical).collect();
        assert!((leaves[0] - 0.98).abs() < 1e-15);
        assert!((leaves[1] - 0.01).abs() < 1e-15);
        assert!((leaves[2] - 0.01).abs() < 1e-15);
    }
}
