//! Closed-form issuance caps, survival floors and monotonicity regimes, with
//! a brute-force scanner to check any cap against its underlying constraint.
//!
//! Everything here uses the linear equity valuation
//! `V(ve, vd) = [z1 + (1-phi_e)ve + (1-phi_d)vd - (vd + LT_final)/(1+r)] / (e + ve)`,
//! which is exact whenever every final payoff covers the debt claims.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::MarketParams;
use crate::model::Model;
use crate::scenario::{portfolio_value, Loans, Measure, ScenarioTree};
use crate::stage0::Stage0Decision;
use crate::stage1::{leverage_t1, v_equity_linear, NodeState, TargetRegime};

/// Which side of the bound is feasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Feasible for `v <= value`.
    Upper,
    /// Feasible for `v >= value`.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    BelowTarget,
    AboveTarget,
    /// The bound does not depend on the return target.
    Unconditional,
    /// No bound from this constraint, or the constraint already fails at zero.
    NotApplicable,
}

impl From<TargetRegime> for Regime {
    fn from(r: TargetRegime) -> Self {
        match r {
            TargetRegime::BelowTarget => Regime::BelowTarget,
            TargetRegime::AboveTarget => Regime::AboveTarget,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub name: &'static str,
    pub kind: BoundKind,
    /// Usable bound: `+inf` for an absent upper bound.
    pub value: f64,
    /// The formula's raw value (may be negative or non-finite).
    pub algebraic: f64,
    pub regime: Regime,
    pub inputs: Vec<(&'static str, f64)>,
}

impl BoundReport {
    /// Builds a report, flagging negative upper bounds as not applicable.
    pub fn new(name: &'static str, kind: BoundKind, algebraic: f64, regime: Regime, inputs: Vec<(&'static str, f64)>) -> Self {
        let (value, regime) = match (kind, regime) {
            (_, Regime::NotApplicable) => (f64::INFINITY, Regime::NotApplicable),
            (BoundKind::Upper, _) if !(algebraic >= 0.0) => (algebraic, Regime::NotApplicable),
            _ => (algebraic, regime),
        };
        Self { name, kind, value, algebraic, regime, inputs }
    }

    pub fn applicable(&self) -> bool {
        self.regime != Regime::NotApplicable
    }
}

/// Direction of a derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

fn node_inputs(ns: &NodeState) -> Vec<(&'static str, f64)> {
    vec![("z1", ns.z1), ("z1_lt", ns.z1_lt), ("long_term_due", ns.long_term_due), ("e", ns.initial.e)]
}

/// Largest short-term debt fraction for which the worst node still repays
/// its short-term claim: `R1(worst) / (1 - e)`.
pub fn survival_beta_bound(d0: &Stage0Decision, tree: &ScenarioTree) -> Result<BoundReport> {
    if d0.e >= 1.0 {
        return Err(Error::Domain(format!("equity fraction must be < 1, got {}", d0.e)));
    }
    let worst = &tree.t1_nodes()[2];
    let r1 = portfolio_value(&d0.x, worst, tree.loans());
    Ok(BoundReport::new(
        "survival_beta_bound",
        BoundKind::Upper,
        r1 / (1.0 - d0.e),
        Regime::Unconditional,
        vec![("r1_worst", r1), ("e", d0.e)],
    ))
}

/// Smallest safe weight that lets the worst node repay short-term debt:
/// `max{0, (x1 lgd1 + x2 lgd2 + b_ST(1-e) - 1) / r}`.
pub fn safe_floor_x0(x1: f64, x2: f64, e: f64, params: &MarketParams, loans: &Loans) -> Result<BoundReport> {
    if params.r <= 0.0 {
        return Err(Error::Domain(format!("risk-free rate must be > 0, got {}", params.r)));
    }
    let num = x1 * loans[1].lgd + x2 * loans[2].lgd + params.beta_st * (1.0 - e) - 1.0;
    let raw = num / params.r;
    Ok(BoundReport::new(
        "safe_floor_x0",
        BoundKind::Lower,
        raw.max(0.0),
        Regime::Unconditional,
        vec![("x1", x1), ("x2", x2), ("e", e), ("numerator", num)],
    ))
}

/// Expected return on equity at t=0 and its derivative in `e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoeT0 {
    pub value: f64,
    pub derivative: f64,
    pub expected_r1: f64,
}

/// `(E[R1] - (1-e)(1 + b_LT r_d)) / e`, derivative `-(E[R1] - (1 + b_LT r_d)) / e^2`.
pub fn roe_t0(d0: &Stage0Decision, tree: &ScenarioTree, params: &MarketParams) -> Result<RoeT0> {
    if d0.e <= 0.0 {
        return Err(Error::Domain(format!("equity fraction must be > 0, got {}", d0.e)));
    }
    let er1 = tree.expect_t1(Measure::Physical, |n| portfolio_value(&d0.x, n, tree.loans()));
    let c = 1.0 + params.beta_lt() * params.r_d;
    Ok(RoeT0 {
        value: (er1 - (1.0 - d0.e) * c) / d0.e,
        derivative: -(er1 - c) / (d0.e * d0.e),
        expected_r1: er1,
    })
}

/// `r / (1+r)`: debt issuance raises the equity value iff `phi_d` is at most this.
pub fn vd_regime_threshold(params: &MarketParams) -> f64 {
    params.r / (1.0 + params.r)
}

pub fn vd_regime(params: &MarketParams) -> Monotonicity {
    if params.phi_d <= vd_regime_threshold(params) {
        Monotonicity::Increasing
    } else {
        Monotonicity::Decreasing
    }
}

/// Cap on new debt (no new equity) from the equity-holder constraint.
/// Only present when debt issuance lowers the equity value.
pub fn cap_vd_equityholder(ns: &NodeState, params: &MarketParams, regime: TargetRegime) -> BoundReport {
    let denom = params.phi_d - vd_regime_threshold(params);
    let target = target_for(ns, params, regime);
    let raw = (ns.z1_lt - target * ns.initial.e) / denom;
    let mut inputs = node_inputs(ns);
    inputs.extend([("target", target), ("phi_d", params.phi_d), ("r", params.r)]);
    let regime = if denom > 0.0 { regime.into() } else { Regime::NotApplicable };
    BoundReport::new("cap_vd_equityholder", BoundKind::Upper, raw, regime, inputs)
}

fn target_for(ns: &NodeState, params: &MarketParams, regime: TargetRegime) -> f64 {
    match regime {
        TargetRegime::BelowTarget => ns.current_return(),
        TargetRegime::AboveTarget => 1.0 + params.r_e,
    }
}

/// Cap on new debt from the leverage floor, given new equity `ve`:
/// `[z1(1-k) - LT_due + (1-phi_e-k)ve] / (k + phi_d)`.
pub fn cap_vd_leverage(ns: &NodeState, params: &MarketParams, ve: f64) -> BoundReport {
    let k = params.k_lev;
    let raw = (ns.z1 * (1.0 - k) - ns.long_term_due + (1.0 - params.phi_e - k) * ve) / (k + params.phi_d);
    let mut inputs = node_inputs(ns);
    inputs.extend([("ve", ve), ("k_lev", k), ("phi_d", params.phi_d), ("phi_e", params.phi_e)]);
    BoundReport::new("cap_vd_leverage", BoundKind::Upper, raw, Regime::Unconditional, inputs)
}

/// Derivative of the leverage ratio in `vd` at `ve = 0`:
/// `(-z1(1+phi_d) + LT_due) / (z1 + vd)^2`.
pub fn leverage_vd_slope(ns: &NodeState, params: &MarketParams, vd: f64) -> Result<f64> {
    let d = ns.z1 + vd;
    if d == 0.0 {
        return Err(Error::DivisionByZero("leverage_vd_slope"));
    }
    Ok((-ns.z1 * (1.0 + params.phi_d) + ns.long_term_due) / (d * d))
}

pub fn leverage_vd_monotone(ns: &NodeState, params: &MarketParams) -> Monotonicity {
    if ns.z1 * (1.0 + params.phi_d) >= ns.long_term_due {
        Monotonicity::Decreasing
    } else {
        Monotonicity::Increasing
    }
}

/// Equity issuance lowers the equity value iff `z1_lt >= (1-phi_e) e`.
pub fn ve_regime(ns: &NodeState, params: &MarketParams) -> Monotonicity {
    if ns.z1_lt >= (1.0 - params.phi_e) * ns.initial.e {
        Monotonicity::Decreasing
    } else {
        Monotonicity::Increasing
    }
}

/// Cap on new equity from the equity-holder constraint, given new debt `vd`.
///
/// With target `T`, the constraint reads
/// `(T - (1-phi_e)) ve <= z1_lt + (1 - phi_d - 1/(1+r)) vd - T e`, so a cap
/// exists only when `T > 1 - phi_e`.
pub fn cap_ve_equityholder(ns: &NodeState, params: &MarketParams, vd: f64, regime: TargetRegime) -> BoundReport {
    let target = target_for(ns, params, regime);
    let denom = target - (1.0 - params.phi_e);
    let slope_vd = 1.0 - params.phi_d - 1.0 / (1.0 + params.r);
    let raw = (ns.z1_lt + slope_vd * vd - target * ns.initial.e) / denom;
    let mut inputs = node_inputs(ns);
    inputs.extend([("vd", vd), ("target", target), ("phi_e", params.phi_e), ("phi_d", params.phi_d)]);
    let regime = if denom > 0.0 { regime.into() } else { Regime::NotApplicable };
    BoundReport::new("cap_ve_equityholder", BoundKind::Upper, raw, regime, inputs)
}

/// `LT_due / z1`: equity issuance raises the leverage ratio iff `phi_e` is at
/// most this.
pub fn leverage_ve_threshold(ns: &NodeState) -> Result<f64> {
    if ns.z1 == 0.0 {
        return Err(Error::DivisionByZero("leverage_ve_threshold"));
    }
    Ok(ns.long_term_due / ns.z1)
}

/// Smallest `ve >= 0` with leverage at least `k_lev` when `vd = 0`; `+inf`
/// when unattainable.
pub fn min_ve_for_leverage(ns: &NodeState, params: &MarketParams) -> f64 {
    let k = params.k_lev;
    let need = ns.long_term_due - ns.z1 * (1.0 - k);
    if need <= 0.0 {
        return 0.0;
    }
    let gain = 1.0 - params.phi_e - k;
    if gain <= 0.0 {
        return f64::INFINITY;
    }
    need / gain
}

/// Outcome of scanning a bound against its constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BruteForceCheck {
    /// Constraint holds at every scanned point on the feasible side.
    pub holds_inside: bool,
    /// Constraint fails at every scanned point past the bound.
    pub fails_outside: bool,
    pub points: u64,
    pub skipped: bool,
}

impl BruteForceCheck {
    pub fn passed(&self) -> bool {
        self.skipped || (self.holds_inside && self.fails_outside)
    }
}

const MAX_SEGMENT: u64 = 2_000_000;

/// Scans `v` in `[0, bound + 10 step]` at spacing `step` and checks that
/// `constraint` holds on the feasible side of the bound and fails on the
/// other, up to one step. Points within a relative `1e-9` of the bound are not judged.
/// Very long scans only cover the ends of the range.
pub fn verify_bound_bruteforce<F>(bound: &BoundReport, constraint: F, step: f64) -> Result<BruteForceCheck>
where
    F: Fn(f64) -> bool + Sync,
{
    if !(step > 0.0) {
        return Err(Error::InvalidParameter { name: "step", reason: format!("must be > 0, got {step}") });
    }
    if !bound.applicable() || !bound.value.is_finite() {
        return Ok(BruteForceCheck { holds_inside: true, fails_outside: true, points: 0, skipped: true });
    }
    let b = bound.value;
    let near = |v: f64| (v - b).abs() <= 1e-9 * b.abs().max(1.0);
    let inside = |v: f64| match bound.kind {
        BoundKind::Upper => v <= b,
        BoundKind::Lower => v >= b,
    };
    let n = ((b.max(0.0) / step).floor() as u64) + 10;
    let indices: Vec<(u64, u64)> = if n > 2 * MAX_SEGMENT {
        let hi_start = n.saturating_sub(MAX_SEGMENT);
        vec![(0, MAX_SEGMENT), (hi_start, n)]
    } else {
        vec![(0, n)]
    };
    let judge = |v: f64| -> (bool, bool) {
        if near(v) {
            return (true, true);
        }
        let ok = constraint(v);
        if inside(v) { (ok, true) } else { (true, !ok) }
    };
    let mut holds = true;
    let mut fails = true;
    let mut points = 0;
    for (lo, hi) in indices {
        let (h, f) = (lo..=hi)
            .into_par_iter()
            .map(|k| judge(k as f64 * step))
            .reduce(|| (true, true), |a, b| (a.0 && b.0, a.1 && b.1));
        holds &= h;
        fails &= f;
        points += hi - lo + 1;
    }
    // the first step past the bound must already be infeasible
    let past = match bound.kind {
        BoundKind::Upper => b + step,
        BoundKind::Lower => b - step,
    };
    if past >= 0.0 {
        let (h, f) = judge(past);
        holds &= h;
        fails &= f;
        points += 1;
    }
    Ok(BruteForceCheck { holds_inside: holds, fails_outside: fails, points, skipped: false })
}

/// A bound together with its brute-force verification.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedBound {
    pub bound: BoundReport,
    pub check: BruteForceCheck,
}

/// Every closed-form bound and regime threshold at a node, each scanned
/// against the constraint or monotonicity statement it describes.
///
/// `ve` and `vd` are the issuance levels at which the joint caps are taken
/// (the other instrument's cap is evaluated with the given level held fixed).
/// Regime thresholds are checked by comparing the quantity at `0` and at a
/// small positive issuance, which is exact for these monotone ratios.
pub fn bound_suite(model: &Model, ns: &NodeState, ve: f64, vd: f64, step: f64) -> Result<Vec<CheckedBound>> {
    let p = model.params;
    let d0 = ns.initial;
    let regime = ns.regime(&p);
    let target = ns.target(&p);
    let h = 0.01;
    let lev = |ns: &NodeState, p: &MarketParams, ve: f64, vd: f64| -> Option<f64> {
        if ns.z1 + ve + vd > 0.0 { leverage_t1(ns, ve, vd, p).ok() } else { None }
    };
    let mut out = Vec::new();
    let mut push = |bound: BoundReport, check: BruteForceCheck| out.push(CheckedBound { bound, check });

    let worst = &model.tree.t1_nodes()[2];
    let r1_worst = portfolio_value(&d0.x, worst, &model.loans);
    let b = survival_beta_bound(&d0, &model.tree)?;
    let c = verify_bound_bruteforce(&b, |beta| r1_worst - beta * (1.0 - d0.e) >= 0.0, step)?;
    push(b, c);

    let (l1, l2) = (model.loans[1].lgd, model.loans[2].lgd);
    let b = safe_floor_x0(d0.x[1], d0.x[2], d0.e, &p, &model.loans)?;
    // worst-node survival with the safe weight topped up from unit wealth
    let c = verify_bound_bruteforce(
        &b,
        |x0| {
            let risky = d0.x[1] + d0.x[2];
            x0 * (1.0 + p.r) + d0.x[1] * (1.0 - l1) + d0.x[2] * (1.0 - l2) - (x0 + risky - 1.0)
                - p.beta_st * (1.0 - d0.e)
                >= 0.0
        },
        step,
    )?;
    push(b, c);

    if d0.e > 0.0 && p.beta_lt() > 0.0 {
        let roe = roe_t0(&d0, &model.tree, &p)?;
        let b = BoundReport::new(
            "roe_t0_threshold",
            BoundKind::Upper,
            (roe.expected_r1 - 1.0) / p.beta_lt(),
            Regime::Unconditional,
            vec![("expected_r1", roe.expected_r1), ("e", d0.e)],
        );
        let c = verify_bound_bruteforce(
            &b,
            |r_d| {
                let q = MarketParams { r_d, ..p };
                let up = Stage0Decision { e: d0.e + h * d0.e, ..d0 };
                match (roe_t0(&up, &model.tree, &q), roe_t0(&d0, &model.tree, &q)) {
                    (Ok(a), Ok(b)) => a.value - b.value <= 0.0,
                    _ => false,
                }
            },
            step,
        )?;
        push(b, c);
    }

    let b = BoundReport::new(
        "vd_regime_threshold",
        BoundKind::Upper,
        vd_regime_threshold(&p),
        Regime::Unconditional,
        vec![("r", p.r)],
    );
    let c = verify_bound_bruteforce(
        &b,
        |phi_d| {
            let q = MarketParams { phi_d, ..p };
            v_equity_linear(ns, 0.0, h, &q) - v_equity_linear(ns, 0.0, 0.0, &q) >= 0.0
        },
        step,
    )?;
    push(b, c);

    let b = cap_vd_equityholder(ns, &p, regime);
    let c = verify_bound_bruteforce(&b, |v| v_equity_linear(ns, 0.0, v, &p) >= target, step)?;
    push(b, c);

    let b = cap_vd_leverage(ns, &p, ve);
    let c = verify_bound_bruteforce(&b, |v| lev(ns, &p, ve, v).is_some_and(|l| l >= p.k_lev), step)?;
    push(b, c);

    if ns.z1 > 0.0 {
        let b = BoundReport::new(
            "leverage_vd_threshold",
            BoundKind::Lower,
            ns.long_term_due / ns.z1 - 1.0,
            Regime::Unconditional,
            node_inputs(ns),
        );
        let c = verify_bound_bruteforce(
            &b,
            |phi_d| {
                let q = MarketParams { phi_d, ..p };
                matches!((lev(ns, &q, 0.0, h), lev(ns, &q, 0.0, 0.0)), (Some(a), Some(b)) if a - b <= 0.0)
            },
            step,
        )?;
        push(b, c);
    }

    let b = BoundReport::new(
        "ve_regime_threshold",
        BoundKind::Lower,
        1.0 - ns.z1_lt / d0.e,
        Regime::Unconditional,
        node_inputs(ns),
    );
    let c = verify_bound_bruteforce(
        &b,
        |phi_e| {
            let q = MarketParams { phi_e, ..p };
            v_equity_linear(ns, h, 0.0, &q) - v_equity_linear(ns, 0.0, 0.0, &q) <= 0.0
        },
        step,
    )?;
    push(b, c);

    let b = cap_ve_equityholder(ns, &p, vd, regime);
    let c = verify_bound_bruteforce(&b, |v| v_equity_linear(ns, v, vd, &p) >= target, step)?;
    push(b, c);

    if let Ok(t) = leverage_ve_threshold(ns) {
        let regime = if ns.z1 > 0.0 { Regime::Unconditional } else { Regime::NotApplicable };
        let b = BoundReport::new("leverage_ve_threshold", BoundKind::Upper, t, regime, node_inputs(ns));
        let c = verify_bound_bruteforce(
            &b,
            |phi_e| {
                let q = MarketParams { phi_e, ..p };
                matches!((lev(ns, &q, h, 0.0), lev(ns, &q, 0.0, 0.0)), (Some(a), Some(b)) if a - b >= 0.0)
            },
            step,
        )?;
        push(b, c);
    }

    let v = min_ve_for_leverage(ns, &p);
    let regime = if v.is_finite() { Regime::Unconditional } else { Regime::NotApplicable };
    let b = BoundReport::new("min_ve_for_leverage", BoundKind::Lower, v, regime, node_inputs(ns));
    let c = verify_bound_bruteforce(&b, |v| lev(ns, &p, v, 0.0).is_some_and(|l| l >= p.k_lev), step)?;
    push(b, c);

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CouplingRule, LoanSpec};
    use crate::stage1::node_state;

    fn model(beta_st: f64, phi_d: f64, cap_e: f64, cap_d: f64) -> Model {
        let loans = [
            LoanSpec::safe(0.03),
            LoanSpec { rate: 0.09, pd: 0.061, lgd: 0.10 },
            LoanSpec { rate: 0.132, pd: 0.122, lgd: 0.09 },
        ];
        let params = MarketParams {
            beta_st,
            r: 0.03,
            r_d: 0.01,
            r_e: 0.10,
            delta: 1.1,
            phi_e: 0.10,
            phi_d,
            k_lev: 0.04,
            theta1: 0.012,
            theta2: 0.01,
            cap_e,
            cap_d,
        };
        Model::new(loans, params, &CouplingRule::default(), 0.999).unwrap()
    }

    const EX1: Stage0Decision = Stage0Decision { x: [0.0, 0.5904, 0.4096], e: 0.04 };
    const EX2: Stage0Decision = Stage0Decision { x: [0.0, 0.5401, 0.4599], e: 0.04 };

    #[test]
    fn survival_bound_examples() {
        let m = model(0.7, 0.07, 0.02, 0.01);
        let safe = Stage0Decision { x: [1.0, 0.0, 0.0], e: 0.04 };
        assert!((survival_beta_bound(&safe, &m.tree).unwrap().value - 1.03 / 0.96).abs() < 1e-12);
        let b = survival_beta_bound(&EX1, &m.tree).unwrap().value;
        assert!((b - 0.904096 / 0.96).abs() < 1e-12);
        assert!(b > 0.7);
        assert!(survival_beta_bound(&Stage0Decision { e: 1.0, ..EX1 }, &m.tree).is_err());
    }

    #[test]
    fn safe_floor_examples() {
        let m = model(0.7, 0.07, 0.02, 0.01);
        let b = safe_floor_x0(0.5904, 0.4096, 0.04, &m.params, &m.loans).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(b.inputs.iter().any(|(n, v)| *n == "numerator" && *v < 0.0));
        let b = safe_floor_x0(0.0, 0.0, 0.04, &m.params, &m.loans).unwrap();
        assert_eq!(b.value, 0.0);
        // full short-term funding and heavy losses force a positive floor
        let p = MarketParams { beta_st: 1.0, ..m.params };
        let b = safe_floor_x0(0.3, 0.3, 0.0, &p, &m.loans).unwrap();
        assert!((b.value - (0.03 + 0.027) / 0.03).abs() < 1e-12);
    }

    #[test]
    fn roe_derivative_matches_finite_difference() {
        let m = model(0.7, 0.07, 0.02, 0.01);
        let h = 1e-6;
        for d in [EX1, Stage0Decision { x: [1.0, 0.0, 0.0], e: 0.04 }] {
            let a = roe_t0(&d, &m.tree, &m.params).unwrap();
            let b = roe_t0(&Stage0Decision { e: d.e + h, ..d }, &m.tree, &m.params).unwrap();
            let fd = (b.value - a.value) / h;
            assert!((fd - a.derivative).abs() <= 1e-4 * a.derivative.abs(), "{fd} vs {}", a.derivative);
            assert!(a.derivative < 0.0);
        }
    }

    #[test]
    fn vd_regime_examples() {
        let m = model(0.7, 0.02, 0.02, 0.01);
        assert!((vd_regime_threshold(&m.params) - 0.029126).abs() < 1e-6);
        assert_eq!(vd_regime(&m.params), Monotonicity::Increasing);
        let p = MarketParams { phi_d: 0.03 / 1.03, ..m.params };
        assert_eq!(vd_regime(&p), Monotonicity::Increasing);
        let p = MarketParams { phi_d: 0.05, ..m.params };
        assert_eq!(vd_regime(&p), Monotonicity::Decreasing);
    }

    #[test]
    fn debt_cap_from_equity_holder() {
        let m = model(0.7, 0.05, 0.02, 0.01);
        let ns = node_state(&m, &EX1, 2).unwrap();
        let b = cap_vd_equityholder(&ns, &m.params, TargetRegime::BelowTarget);
        let want = 0.3 * 0.96 * 1.01 * (0.02 / 1.03) / (0.05 - 0.03 / 1.03);
        assert!((b.value - want).abs() < 1e-12, "{}", b.value);
        assert!((b.value - 0.27045).abs() < 5e-4);
        let target = ns.current_return();
        let check = verify_bound_bruteforce(
            &b,
            |vd| v_equity_linear(&ns, 0.0, vd, &m.params) >= target - 1e-12,
            1e-5,
        )
        .unwrap();
        assert!(check.passed(), "{check:?}");

        let m = model(0.7, 0.02, 0.02, 0.01);
        let ns = node_state(&m, &EX1, 2).unwrap();
        assert!(!cap_vd_equityholder(&ns, &m.params, TargetRegime::BelowTarget).applicable());
    }

    #[test]
    fn debt_cap_from_leverage() {
        let m = model(0.7, 0.07, 0.02, 0.01);
        let ns = node_state(&m, &EX1, 3).unwrap();
        assert!(!cap_vd_leverage(&ns, &m.params, 0.0).applicable());

        let m2 = model(0.5, 0.07, 0.3, 0.2);
        let ns2 = node_state(&m2, &EX2, 3).unwrap();
        let b = cap_vd_leverage(&ns2, &m2.params, 0.2994);
        assert!((b.value - 1.64).abs() < 0.01, "{}", b.value);

        let p = MarketParams { k_lev: 0.0, ..m2.params };
        let b = cap_vd_leverage(&ns2, &p, 0.1);
        assert!((b.value - (ns2.z1 - ns2.long_term_due + 0.9 * 0.1) / 0.07).abs() < 1e-12);
    }

    #[test]
    fn leverage_slopes() {
        let m = model(0.5, 0.07, 0.3, 0.2);
        let ns = node_state(&m, &EX2, 1).unwrap();
        assert_eq!(leverage_vd_monotone(&ns, &m.params), Monotonicity::Decreasing);
        let (vd, h) = (0.01, 1e-6);
        let fd = (leverage_t1(&ns, 0.0, vd + h, &m.params).unwrap() - leverage_t1(&ns, 0.0, vd, &m.params).unwrap()) / h;
        let cf = leverage_vd_slope(&ns, &m.params, vd).unwrap();
        assert!((fd - cf).abs() <= 1e-4 * cf.abs());

        let m1 = model(0.7, 0.07, 0.02, 0.01);
        let ns3 = node_state(&m1, &EX1, 3).unwrap();
        let t = leverage_ve_threshold(&ns3).unwrap();
        assert!((t - 0.29088 / 0.232096).abs() < 1e-9);
        let mut zero = ns3;
        zero.z1 = 0.0;
        assert!(leverage_ve_threshold(&zero).is_err());
    }

    #[test]
    fn equity_regimes() {
        let m = model(0.5, 0.07, 0.3, 0.2);
        let good = node_state(&m, &EX2, 1).unwrap();
        assert_eq!(ve_regime(&good, &m.params), Monotonicity::Decreasing);
        let bad = node_state(&m, &EX2, 3).unwrap();
        assert!(bad.z1_lt < 0.0);
        assert_eq!(ve_regime(&bad, &m.params), Monotonicity::Increasing);
        let mut edge = good;
        edge.z1_lt = 0.9 * edge.initial.e;
        assert_eq!(ve_regime(&edge, &m.params), Monotonicity::Decreasing);
    }

    #[test]
    fn equity_caps_at_node2() {
        let m = model(0.7, 0.07, 0.02, 0.01);
        let ns = node_state(&m, &EX1, 2).unwrap();
        let b = cap_ve_equityholder(&ns, &m.params, 0.01, TargetRegime::BelowTarget);
        assert!((b.value - 0.012).abs() < 5e-4, "{}", b.value);
        let target = ns.current_return();
        let check = verify_bound_bruteforce(
            &b,
            |ve| v_equity_linear(&ns, ve, 0.01, &m.params) >= target - 1e-12,
            1e-5,
        )
        .unwrap();
        assert!(check.passed(), "{check:?}");

        let m2 = model(0.5, 0.07, 0.3, 0.2);
        let ns2 = node_state(&m2, &EX2, 2).unwrap();
        let b = cap_ve_equityholder(&ns2, &m2.params, 0.2, ns2.regime(&m2.params));
        assert!((b.value - 0.0077).abs() < 5e-4, "{}", b.value);
    }

    #[test]
    fn minimal_equity_for_leverage() {
        let m = model(0.7, 0.07, 0.02, 0.01);
        let ns = node_state(&m, &EX1, 3).unwrap();
        let v = min_ve_for_leverage(&ns, &m.params);
        assert!((v - 0.0791).abs() < 5e-4);
        // bisection oracle on the leverage ratio
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if leverage_t1(&ns, mid, 0.0, &m.params).unwrap() >= 0.04 { hi = mid } else { lo = mid }
        }
        assert!((v - hi).abs() < 1e-12);

        let ns1 = node_state(&m, &EX1, 1).unwrap();
        assert_eq!(min_ve_for_leverage(&ns1, &m.params), 0.0);
        let p = MarketParams { k_lev: 0.95, ..m.params };
        assert_eq!(min_ve_for_leverage(&ns, &p), f64::INFINITY);
    }

    #[test]
    fn brute_force_edge_cases() {
        let zero = BoundReport::new("zero", BoundKind::Upper, 0.0, Regime::Unconditional, vec![]);
        assert!(verify_bound_bruteforce(&zero, |v| v <= 0.0, 1e-3).unwrap().passed());
        let na = BoundReport::new("na", BoundKind::Upper, 1.0, Regime::NotApplicable, vec![]);
        let c = verify_bound_bruteforce(&na, |_| false, 1e-3).unwrap();
        assert!(c.skipped && c.passed());
        let wrong = BoundReport::new("wrong", BoundKind::Upper, 0.5, Regime::Unconditional, vec![]);
        assert!(!verify_bound_bruteforce(&wrong, |v| v <= 0.4, 1e-3).unwrap().passed());
        assert!(!verify_bound_bruteforce(&wrong, |v| v <= 0.6, 1e-3).unwrap().passed());
        let floor = BoundReport::new("floor", BoundKind::Lower, 0.25, Regime::Unconditional, vec![]);
        assert!(verify_bound_bruteforce(&floor, |v| v >= 0.25, 1e-3).unwrap().passed());
        assert!(verify_bound_bruteforce(&zero, |_| true, 0.0).is_err());
    }

    #[test]
    fn negative_cap_is_flagged() {
        let b = BoundReport::new("neg", BoundKind::Upper, -0.1, Regime::Unconditional, vec![]);
        assert!(!b.applicable());
        assert_eq!(b.algebraic, -0.1);
    }

    #[test]
    fn suite_passes_at_example_nodes() {
        for (m, d0) in [(model(0.7, 0.07, 0.02, 0.01), EX1), (model(0.5, 0.07, 0.3, 0.2), EX2)] {
            for id in 1..=3 {
                let ns = node_state(&m, &d0, id).unwrap();
                for c in bound_suite(&m, &ns, m.params.cap_e, m.params.cap_d, 1e-5).unwrap() {
                    assert!(c.check.passed(), "node {id}: {c:?}");
                }
            }
        }
    }
}
