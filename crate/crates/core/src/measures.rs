//! Market parameters, portfolio risk, IRB capital, leverage ratio and the
//! risk-neutral default probabilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_param, Error, Result};
use crate::scenario::{Loans, N_LOANS};

/// Capital-structure and regulatory parameters shared by both dates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Fraction of debt that is short term (due at t=1).
    pub beta_st: f64,
    /// Risk-free rate; equal to the safe loan's rate.
    pub r: f64,
    /// Long-term debt rate, `r_d <= r`.
    pub r_d: f64,
    /// Target return on equity.
    pub r_e: f64,
    /// Cost of equity at t=0.
    pub delta: f64,
    /// Issuance costs of new equity / new debt at t=1.
    pub phi_e: f64,
    pub phi_d: f64,
    /// Leverage ratio floor.
    pub k_lev: f64,
    /// Risk caps at t=0 and t=1.
    pub theta1: f64,
    pub theta2: f64,
    /// Maximum new equity / new debt at t=1.
    pub cap_e: f64,
    pub cap_d: f64,
}

impl MarketParams {
    pub fn beta_lt(&self) -> f64 {
        1.0 - self.beta_st
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta_st, self.r, self.r_d, self.r_e, self.delta, self.phi_e, self.phi_d, self.k_lev,
            self.theta1, self.theta2, self.cap_e, self.cap_d,
        ];
        check_param("market", all.iter().all(|v| v.is_finite()), || "all values must be finite".into())?;
        check_param("beta_st", (0.0..=1.0).contains(&self.beta_st), || {
            format!("must lie in [0,1], got {}", self.beta_st)
        })?;
        for (name, v) in [("r", self.r), ("r_d", self.r_d), ("r_e", self.r_e)] {
            check_param(name, v > -1.0, || format!("rates must be > -1, got {v}"))?;
        }
        check_param("r_d", self.r_d <= self.r, || {
            format!("long-term debt rate {} must not exceed the risk-free rate {}", self.r_d, self.r)
        })?;
        for (name, v) in [("phi_e", self.phi_e), ("phi_d", self.phi_d)] {
            check_param(name, (0.0..1.0).contains(&v), || format!("must lie in [0,1), got {v}"))?;
        }
        check_param("k_lev", (0.0..1.0).contains(&self.k_lev), || {
            format!("must lie in [0,1), got {}", self.k_lev)
        })?;
        check_param("delta", self.delta >= 0.0, || format!("must be >= 0, got {}", self.delta))?;
        check_param("cap_e", self.cap_e >= 0.0, || format!("must be >= 0, got {}", self.cap_e))?;
        check_param("cap_d", self.cap_d >= 0.0, || format!("must be >= 0, got {}", self.cap_d))
    }
}

/// Pluggable portfolio risk functional `rho`.
///
/// `exposure` holds amounts invested at the start of a period, in units of
/// initial wealth.
pub trait RiskMeasure: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn evaluate(&self, exposure: &[f64; N_LOANS], loans: &Loans) -> f64;
}

/// One-period expected loss `sum_i x_i pd_i lgd_i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpectedLoss;

impl RiskMeasure for ExpectedLoss {
    fn name(&self) -> &'static str {
        "expected_loss"
    }

    fn evaluate(&self, exposure: &[f64; N_LOANS], loans: &Loans) -> f64 {
        rho(exposure, loans)
    }
}

/// Standard deviation of the one-period loss under the nested coupling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossStdDev;

impl RiskMeasure for LossStdDev {
    fn name(&self) -> &'static str {
        "loss_std_dev"
    }

    fn evaluate(&self, x: &[f64; N_LOANS], loans: &Loans) -> f64 {
        let (p1, p2) = (loans[1].pd, loans[2].pd);
        let l2 = x[2] * loans[2].lgd;
        let l12 = x[1] * loans[1].lgd + l2;
        let mean = p1 * l12 + (p2 - p1) * l2;
        let second = p1 * l12 * l12 + (p2 - p1) * l2 * l2;
        (second - mean * mean).max(0.0).sqrt()
    }
}

/// One-period expected loss of the position vector.
pub fn rho(x: &[f64; N_LOANS], loans: &Loans) -> f64 {
    x.iter().zip(loans).map(|(xi, l)| xi * l.pd * l.lgd).sum()
}

/// Basel corporate asset correlation as a function of PD.
pub fn basel_correlation(pd: f64) -> f64 {
    let w = (1.0 - (-50.0 * pd).exp()) / (1.0 - (-50.0f64).exp());
    0.12 * w + 0.24 * (1.0 - w)
}

/// IRB unexpected-loss capital per unit exposure for a single loan, without
/// maturity adjustment.
pub fn irb_loan_capital(pd: f64, lgd: f64, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0,1), got {confidence}")));
    }
    if pd == 0.0 || lgd == 0.0 {
        return Ok(0.0);
    }
    if !(pd > 0.0 && pd < 1.0) {
        return Err(Error::Domain(format!("inverse normal undefined at pd = {pd}")));
    }
    let n = Normal::standard();
    let rho = basel_correlation(pd);
    let z = (n.inverse_cdf(pd) + rho.sqrt() * n.inverse_cdf(confidence)) / (1.0 - rho).sqrt();
    Ok(lgd * (n.cdf(z) - pd))
}

/// Portfolio IRB capital requirement `K(x) = sum_i x_i K_i`.
pub fn irb_capital(x: &[f64; N_LOANS], loans: &Loans, confidence: f64) -> Result<f64> {
    let per_loan = irb_per_loan(loans, confidence)?;
    Ok(x.iter().zip(per_loan).map(|(xi, k)| xi * k).sum())
}

/// Per-loan IRB capital charges; the safe loan is always 0.
pub fn irb_per_loan(loans: &Loans, confidence: f64) -> Result<[f64; N_LOANS]> {
    let mut out = [0.0; N_LOANS];
    for i in 1..N_LOANS {
        out[i] = irb_loan_capital(loans[i].pd, loans[i].lgd, confidence)?;
    }
    Ok(out)
}

/// `(assets - debt) / assets`.
pub fn leverage_ratio(assets: f64, debt_value: f64) -> Result<f64> {
    if assets == 0.0 {
        return Err(Error::DivisionByZero("leverage_ratio"));
    }
    Ok((assets - debt_value) / assets)
}

/// Per-loan risk-neutral default probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskNeutralWeights {
    pub q: [f64; N_LOANS],
}

impl RiskNeutralWeights {
    /// `[(1-q)(1+r_i) + q(1-lgd)] / (1+r) - 1` for loan `i`.
    pub fn martingale_residual(&self, loans: &Loans, r: f64, i: usize) -> f64 {
        let (l, q) = (&loans[i], self.q[i]);
        ((1.0 - q) * (1.0 + l.rate) + q * (1.0 - l.lgd)) / (1.0 + r) - 1.0
    }
}

/// Solves the one-period martingale condition for each risky loan:
/// `q_i = (r_i - r) / (r_i + lgd_i)`.
pub fn calibrate_q(loans: &Loans, r: f64) -> Result<RiskNeutralWeights> {
    let mut q = [0.0; N_LOANS];
    for (i, l) in loans.iter().enumerate().skip(1) {
        let spread = l.rate - r;
        let denom = l.rate + l.lgd;
        if denom == 0.0 {
            return Err(Error::CalibrationInfeasible { loan: i, reason: "rate + lgd = 0".into() });
        }
        if spread <= 0.0 {
            return Err(Error::CalibrationInfeasible {
                loan: i,
                reason: format!("loan rate {} must exceed the risk-free rate {r}", l.rate),
            });
        }
        if 1.0 - l.lgd >= 1.0 + r {
            return Err(Error::CalibrationInfeasible {
                loan: i,
                reason: format!("recovery {} must be below 1 + r = {}", 1.0 - l.lgd, 1.0 + r),
            });
        }
        q[i] = spread / denom;
    }
    Ok(RiskNeutralWeights { q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::LoanSpec;

    fn example_loans() -> Loans {
        [
            LoanSpec::safe(0.03),
            LoanSpec { rate: 0.09, pd: 0.061, lgd: 0.10 },
            LoanSpec { rate: 0.132, pd: 0.122, lgd: 0.09 },
        ]
    }

    #[test]
    fn rho_values() {
        let l = example_loans();
        assert_eq!(rho(&[1.0, 0.0, 0.0], &l), 0.0);
        let want = 0.5904 * 0.061 * 0.10 + 0.4096 * 0.122 * 0.09;
        assert!((rho(&[0.0, 0.5904, 0.4096], &l) - want).abs() < 1e-15);
        assert!((want - 0.008098848).abs() < 1e-12);
        assert!((rho(&[0.0, 0.0, 1.0], &l) - 0.01098).abs() < 1e-15);
    }

    // Independent Phi via composite Simpson on the density, Phi^-1 by bisection.
    fn phi_quad(z: f64) -> f64 {
        let (a, n) = (-12.0, 200_000);
        let h = (z - a) / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(a) + f(z);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn phi_inv_bisect(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if phi_quad(mid) < p {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn irb_matches_quadrature_oracle() {
        let l = example_loans();
        for i in 1..3 {
            let (pd, lgd) = (l[i].pd, l[i].lgd);
            let rho = basel_correlation(pd);
            let z = (phi_inv_bisect(pd) + rho.sqrt() * phi_inv_bisect(0.999)) / (1.0 - rho).sqrt();
            let oracle = lgd * (phi_quad(z) - pd);
            let got = irb_loan_capital(pd, lgd, 0.999).unwrap();
            assert!((got - oracle).abs() < 1e-9, "loan {i}: {got} vs {oracle}");
        }
        // frozen reference values from an independent high-precision evaluation
        let k = irb_per_loan(&l, 0.999).unwrap();
        assert!((k[1] - 0.025382844941201917).abs() < 1e-10);
        assert!((k[2] - 0.030452053621250634).abs() < 1e-10);
        assert_eq!(k[0], 0.0);
        let kx = irb_capital(&[0.0, 0.5904, 0.4096], &l, 0.999).unwrap();
        assert!(kx < 0.04 && kx > 0.027, "K(x) = {kx}");
    }

    #[test]
    fn irb_domain_errors() {
        assert!(matches!(irb_loan_capital(1.0, 0.5, 0.999), Err(Error::Domain(_))));
        assert!(matches!(irb_loan_capital(0.1, 0.5, 1.0), Err(Error::Domain(_))));
        assert_eq!(irb_loan_capital(0.0, 0.5, 0.999).unwrap(), 0.0);
    }

    #[test]
    fn leverage_examples() {
        assert!((leverage_ratio(1.0, 0.96).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(leverage_ratio(2.0, 0.0).unwrap(), 1.0);
        let lr = leverage_ratio(0.232096, 0.3 * 0.96 * 1.01).unwrap();
        assert!((lr - (-0.2532745071)).abs() < 1e-9, "{lr}");
        assert_eq!(leverage_ratio(0.0, 1.0), Err(Error::DivisionByZero("leverage_ratio")));
    }

    fn bisect_q(loan: &LoanSpec, r: f64) -> f64 {
        let f = |q: f64| (1.0 - q) * (1.0 + loan.rate) + q * (1.0 - loan.lgd) - (1.0 + r);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn calibration_matches_bisection() {
        let l = example_loans();
        let q = calibrate_q(&l, 0.03).unwrap();
        assert_eq!(q.q[0], 0.0);
        for i in 1..3 {
            assert!((q.q[i] - bisect_q(&l[i], 0.03)).abs() < 1e-12);
            assert!(q.martingale_residual(&l, 0.03, i).abs() < 1e-12);
        }
        assert!((q.q[1] - 0.06 / 0.19).abs() < 1e-12);
        assert!((q.q[2] - 0.102 / 0.222).abs() < 1e-12);
    }

    #[test]
    fn calibration_rejects_low_rate() {
        let mut l = example_loans();
        l[1].rate = 0.02;
        assert!(matches!(calibrate_q(&l, 0.03), Err(Error::CalibrationInfeasible { loan: 1, .. })));
    }
}
