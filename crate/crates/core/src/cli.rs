//! Batch front end: TOML run configurations, the full pipeline, and the
//! report and table writers used by the `bankdyn` binary.
//!
//! A run configuration looks like
//!
//! ```toml
//! [[loans]]            # three entries: safe, less risky, more risky
//! rate = 0.03
//! pd = 0.0
//! lgd = 0.0
//!
//! [market]
//! beta_st = 0.7
//! r = 0.03
//! r_d = 0.01
//! k_lev = 0.04
//! theta1 = 0.012
//! theta2 = 0.01
//! cap_e = 0.02
//! cap_d = 0.01
//!
//! [calibration]        # knobs with no observed value
//! delta = 1.10
//! phi_e = 0.10
//! phi_d = 0.07
//! r_e = 0.10
//!
//! [calibration.notes]
//! delta = "free knob"
//! ```
//!
//! Optional sections: `[coupling]`, `[optimizer]`, `[run]`,
//! `[initial_decision]` and `[curves]`; see the field docs below.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{bound_suite, BoundKind, CheckedBound, Regime};
use crate::error::{check_param, Error, Result};
use crate::measures::{ExpectedLoss, LossStdDev, MarketParams, RiskMeasure};
use crate::model::{Feasibility, Model};
use crate::optimizer::OptimizerConfig;
use crate::scenario::{validate_loans, CouplingRule, Loans, N_LOANS};
use crate::stage0::{reproduction_check, solve_t0, ReproductionCheck, Stage0Decision, Stage0Solution};
use crate::stage1::{leverage_t1, node_state, solve_nodes, v_equity_linear, NodeState, Stage1Outcome};

/// Market section: everything in [`MarketParams`] except the calibration knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub beta_st: f64,
    pub r: f64,
    pub r_d: f64,
    pub k_lev: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub cap_e: f64,
    pub cap_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMeasureKind {
    #[default]
    ExpectedLoss,
    LossStdDev,
}

impl RiskMeasureKind {
    pub fn build(self) -> Arc<dyn RiskMeasure> {
        match self {
            Self::ExpectedLoss => Arc::new(ExpectedLoss),
            Self::LossStdDev => Arc::new(LossStdDev),
        }
    }
}

fn default_confidence() -> f64 {
    0.999
}

/// Parameters set by calibration rather than observation, with free-text
/// provenance notes keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub delta: f64,
    pub phi_e: f64,
    pub phi_d: f64,
    pub r_e: f64,
    #[serde(default = "default_confidence")]
    pub irb_confidence: f64,
    #[serde(default)]
    pub risk_measure: RiskMeasureKind,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// Which t=0 decision the node problems start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeInput {
    /// `[initial_decision]` from the config.
    #[default]
    Reference,
    /// The solved t=0 decision.
    Solved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Solve the t=0 problem.
    pub t0: bool,
    /// t=1 nodes to solve (ids 1..=3).
    pub nodes: Vec<usize>,
    pub nodes_from: NodeInput,
    pub output_dir: PathBuf,
    /// Spacing of the brute-force bound scans.
    pub bruteforce_step: f64,
    /// Tolerances of the t=0 comparison against `[initial_decision]`, in
    /// percentage points.
    pub weight_tolerance_pp: f64,
    pub equity_tolerance_pp: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            t0: true,
            nodes: vec![1, 2, 3],
            nodes_from: NodeInput::Reference,
            output_dir: PathBuf::from("out"),
            bruteforce_step: 1e-5,
            weight_tolerance_pp: 1.0,
            equity_tolerance_pp: 0.01,
        }
    }
}

/// Issuance grid for the curve tables: `points` values from 0 to `v_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSpec {
    pub v_max: f64,
    pub points: usize,
}

impl Default for CurveSpec {
    fn default() -> Self {
        Self { v_max: 0.3, points: 61 }
    }
}

impl CurveSpec {
    pub fn grid(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![0.0];
        }
        let n = (self.points - 1) as f64;
        (0..self.points).map(|k| self.v_max * k as f64 / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub loans: Loans,
    pub market: MarketSection,
    pub calibration: Calibration,
    #[serde(default)]
    pub coupling: CouplingRule,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_decision: Option<Stage0Decision>,
    #[serde(default)]
    pub curves: CurveSpec,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn market_params(&self) -> MarketParams {
        let m = &self.market;
        let c = &self.calibration;
        MarketParams {
            beta_st: m.beta_st,
            r: m.r,
            r_d: m.r_d,
            r_e: c.r_e,
            delta: c.delta,
            phi_e: c.phi_e,
            phi_d: c.phi_d,
            k_lev: m.k_lev,
            theta1: m.theta1,
            theta2: m.theta2,
            cap_e: m.cap_e,
            cap_d: m.cap_d,
        }
    }

    /// Checks every section before any solve.
    pub fn validate(&self) -> Result<()> {
        validate_loans(&self.loans)?;
        self.market_params().validate()?;
        self.optimizer.validate()?;
        let run = &self.run;
        check_param("run.nodes", run.nodes.iter().all(|n| (1..=3).contains(n)), || {
            format!("node ids are 1..=3, got {:?}", run.nodes)
        })?;
        check_param("run.bruteforce_step", run.bruteforce_step > 0.0, || "must be > 0".into())?;
        check_param("curves.v_max", self.curves.v_max >= 0.0 && self.curves.v_max.is_finite(), || {
            format!("must be finite and >= 0, got {}", self.curves.v_max)
        })?;
        check_param("calibration.irb_confidence", self.calibration.irb_confidence > 0.0 && self.calibration.irb_confidence < 1.0, || {
            format!("must lie in (0,1), got {}", self.calibration.irb_confidence)
        })?;
        if let Some(d) = &self.initial_decision {
            check_param("initial_decision.x", d.x.iter().all(|v| (0.0..=1.0).contains(v)) && (d.x.iter().sum::<f64>() - 1.0).abs() <= 1e-6, || {
                format!("weights must lie in [0,1] and sum to 1, got {:?}", d.x)
            })?;
            check_param("initial_decision.e", d.e > 0.0 && d.e < 1.0, || format!("must lie in (0,1), got {}", d.e))?;
        } else {
            check_param("run.nodes_from", run.nodes.is_empty() || run.nodes_from == NodeInput::Solved, || {
                "node runs from the reference decision need an [initial_decision] section".into()
            })?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model> {
        let m = Model::new(self.loans, self.market_params(), &self.coupling, self.calibration.irb_confidence)?;
        Ok(m.with_risk_measure(self.calibration.risk_measure.build()))
    }
}

/// Process exit code for an error: 1 configuration, 2 infeasible t=0
/// problem, 3 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::CouplingInfeasible { .. } | Error::CalibrationInfeasible { .. } => 1,
        Error::Infeasible(_) => 2,
        _ => 3,
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn fmt_bound(v: f64) -> String {
    if v.is_infinite() { "inf".into() } else { format!("{v:.6}") }
}

/// A delimiter-separated numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    /// Rows of `(quantity, value, display)`.
    fn quantities() -> Self {
        Self { header: vec!["quantity", "value", "display"], rows: Vec::new() }
    }

    fn add(&mut self, name: &str, value: f64, display: String) {
        self.rows.push(vec![name.to_string(), format!("{value}"), display]);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(&self.header).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn slack_lines(out: &mut String, f: &Feasibility) {
    for s in &f.slacks {
        let tag = if !s.satisfied() {
            "VIOLATED"
        } else if s.binding() {
            "binding"
        } else {
            "slack"
        };
        let _ = writeln!(out, "  {:<16} {:>14.6e}  {tag}", s.name, s.slack);
    }
}

fn slack_rows(t: &mut ReportTable, f: &Feasibility) {
    for s in &f.slacks {
        t.add(&format!("slack_{}", s.name), s.slack, format!("{:.6}", s.slack));
    }
}

/// Text and table output of the t=0 solve.
pub fn stage0_report(model: &Model, sol: &Stage0Solution, repro: Option<&ReproductionCheck>) -> (String, ReportTable) {
    let d = &sol.decision;
    let mut s = String::new();
    let _ = writeln!(s, "t=0 allocation ({})", sol.method);
    let _ = writeln!(s, "  weights          {} / {} / {}", pct(d.x[0]), pct(d.x[1]), pct(d.x[2]));
    let _ = writeln!(s, "  equity fraction  {}", pct(d.e));
    let _ = writeln!(s, "  leverage ratio   {}", pct(sol.leverage_ratio));
    let _ = writeln!(s, "  objective        {:.8}", sol.objective);
    let _ = writeln!(s, "  risk ({})  {:.6} (cap {})", model.risk.name(), sol.rho, model.params.theta1);
    let _ = writeln!(s, "  IRB capital      {:.6}", sol.irb_capital);
    let _ = writeln!(s, "constraints");
    slack_lines(&mut s, &sol.feasibility);
    let _ = writeln!(s, "binding: {}", sol.binding().join(", "));

    let mut t = ReportTable::quantities();
    for (i, x) in d.x.iter().enumerate() {
        t.add(&format!("x{i}"), *x, pct(*x));
    }
    t.add("e", d.e, pct(d.e));
    t.add("objective", sol.objective, format!("{:.6}", sol.objective));
    t.add("rho", sol.rho, format!("{:.6}", sol.rho));
    t.add("irb_capital", sol.irb_capital, format!("{:.6}", sol.irb_capital));
    slack_rows(&mut t, &sol.feasibility);

    if let Some(r) = repro {
        let x = &r.reference;
        let _ = writeln!(s, "reference decision {} / {} / {}, e = {}", pct(x.x[0]), pct(x.x[1]), pct(x.x[2]), pct(x.e));
        let _ = writeln!(
            s,
            "  gaps (pp)        {:.2} / {:.2} / {:.2}, e {:.4}",
            r.weight_gap_pp[0], r.weight_gap_pp[1], r.weight_gap_pp[2], r.equity_gap_pp
        );
        let _ = writeln!(s, "  reference feasible: {}, objective {:.8}", r.reference_feasible, r.reference_objective);
        if r.matches {
            let _ = writeln!(s, "  reproduced within tolerance");
        } else {
            let _ = writeln!(s, "  NOT reproduced; blocking:");
            for b in &r.blocking {
                let _ = writeln!(s, "    - {b}");
            }
        }
        t.add("reference_matches", if r.matches { 1.0 } else { 0.0 }, r.matches.to_string());
    }
    (s, t)
}

/// Text and table output of one node.
pub fn node_report(model: &Model, ns: &NodeState, outcome: &Stage1Outcome) -> (String, ReportTable) {
    let p = &model.params;
    let mut s = String::new();
    let mut t = ReportTable::quantities();
    let id = ns.node.node_id;
    let _ = writeln!(s, "node {id} (survivors {:?})", ns.survivors);
    let _ = writeln!(s, "  R1 {:.6}  Z1 {:.6}  Z1LT {:.6}", ns.r1, ns.z1, ns.z1_lt);
    let _ = writeln!(s, "  current return {:.4}, target {:.4} ({:?})", ns.current_return(), ns.target(p), ns.regime(p));
    t.add("r1", ns.r1, format!("{:.6}", ns.r1));
    t.add("z1", ns.z1, format!("{:.6}", ns.z1));
    t.add("z1_lt", ns.z1_lt, format!("{:.6}", ns.z1_lt));
    match outcome {
        Stage1Outcome::Bankrupt(reason) => {
            let _ = writeln!(s, "  BANKRUPT: {reason}");
            t.add("bankrupt", 1.0, reason.to_string());
        }
        Stage1Outcome::Solved(sol) => {
            let d = &sol.decision;
            let _ = writeln!(s, "  solved ({}, {} evaluations)", sol.method, sol.evaluations);
            let _ = writeln!(s, "  positions        {} / {} / {}", pct(d.x1[0]), pct(d.x1[1]), pct(d.x1[2]));
            let _ = writeln!(s, "  safe share       {}", pct(sol.safe_share(ns)));
            let _ = writeln!(s, "  new equity       {:.6}", d.ve);
            let _ = writeln!(s, "  new debt         {:.6}", d.vd);
            let _ = writeln!(s, "  leverage ratio   {:.6}", sol.leverage);
            let _ = writeln!(s, "  equity value     {:.6} (linear {:.6})", sol.v_equity, v_equity_linear(ns, d.ve, d.vd, p));
            let _ = writeln!(s, "  objective        {:.8}", sol.objective);
            let _ = writeln!(s, "constraints");
            slack_lines(&mut s, &sol.feasibility);
            let _ = writeln!(s, "binding: {}", sol.feasibility.binding().join(", "));
            t.add("bankrupt", 0.0, "false".into());
            for i in 0..N_LOANS {
                t.add(&format!("x1_{i}"), d.x1[i], pct(d.x1[i]));
            }
            t.add("safe_share", sol.safe_share(ns), pct(sol.safe_share(ns)));
            t.add("ve", d.ve, format!("{:.4}", d.ve));
            t.add("vd", d.vd, format!("{:.4}", d.vd));
            t.add("leverage", sol.leverage, pct(sol.leverage));
            t.add("v_equity", sol.v_equity, format!("{:.4}", sol.v_equity));
            t.add("objective", sol.objective, format!("{:.6}", sol.objective));
            slack_rows(&mut t, &sol.feasibility);
        }
    }
    (s, t)
}

/// Text and table output of a node's bound suite.
pub fn bounds_report(id: usize, checks: &[CheckedBound]) -> (String, ReportTable) {
    let mut s = String::new();
    let _ = writeln!(s, "bounds at node {id}");
    let mut t = ReportTable { header: vec!["name", "kind", "regime", "value", "algebraic", "display", "bruteforce"], rows: Vec::new() };
    for c in checks {
        let b = &c.bound;
        let kind = match b.kind {
            BoundKind::Upper => "upper",
            BoundKind::Lower => "lower",
        };
        let regime = match b.regime {
            Regime::BelowTarget => "below_target",
            Regime::AboveTarget => "above_target",
            Regime::Unconditional => "unconditional",
            Regime::NotApplicable => "not_applicable",
        };
        let status = if c.check.skipped {
            "skipped"
        } else if c.check.passed() {
            "pass"
        } else {
            "FAIL"
        };
        let _ = writeln!(
            s,
            "  {:<22} {kind:<5} {regime:<14} {:>12}  (formula {:>12})  scan {status} ({} pts)",
            b.name,
            fmt_bound(b.value),
            fmt_bound(b.algebraic),
            c.check.points
        );
        t.rows.push(vec![
            b.name.into(),
            kind.into(),
            regime.into(),
            format!("{}", b.value),
            format!("{}", b.algebraic),
            fmt_bound(b.value),
            status.into(),
        ]);
    }
    (s, t)
}

/// The four issuance curves at a node: equity value and leverage ratio as
/// functions of new debt alone and new equity alone.
pub fn emit_curves(model: &Model, ns: &NodeState, spec: &CurveSpec, path: &Path) -> Result<()> {
    let p = &model.params;
    let lev = |ve: f64, vd: f64| leverage_t1(ns, ve, vd, p).unwrap_or(f64::NAN);
    let t = ReportTable {
        header: vec!["v", "v_equity_debt", "v_equity_equity", "leverage_equity", "leverage_debt"],
        rows: spec
            .grid()
            .into_iter()
            .map(|v| {
                [v, v_equity_linear(ns, 0.0, v, p), v_equity_linear(ns, v, 0.0, p), lev(v, 0.0), lev(0.0, v)]
                    .iter()
                    .map(|x| format!("{x}"))
                    .collect()
            })
            .collect(),
    };
    t.write(path)
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub stage0: Option<Stage0Solution>,
    pub reproduction: Option<ReproductionCheck>,
    pub nodes: Vec<NodeResult>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct NodeResult {
    pub state: NodeState,
    pub outcome: Stage1Outcome,
    pub bounds: Vec<CheckedBound>,
}

fn write_text(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text)?;
    files.push(path);
    Ok(())
}

fn write_table(path: PathBuf, table: &ReportTable, files: &mut Vec<PathBuf>) -> Result<()> {
    table.write(&path)?;
    files.push(path);
    Ok(())
}

/// Runs the t=0 solve (if enabled), comparing against `[initial_decision]`.
pub fn run_stage0(config: &RunConfig, model: &Model) -> Result<(Stage0Solution, Option<ReproductionCheck>)> {
    let sol = solve_t0(model, &config.optimizer)?;
    let repro = config.initial_decision.as_ref().map(|r| {
        reproduction_check(&sol, r, model, config.run.weight_tolerance_pp, config.run.equity_tolerance_pp)
    });
    Ok((sol, repro))
}

/// The t=0 decision the node problems start from.
pub fn node_start(config: &RunConfig, solved: Option<&Stage0Solution>, model: &Model) -> Result<Stage0Decision> {
    match (config.run.nodes_from, &config.initial_decision) {
        (NodeInput::Reference, Some(d)) => Ok(*d),
        (NodeInput::Reference, None) => Err(Error::Config("no [initial_decision] for node runs".into())),
        (NodeInput::Solved, _) => match solved {
            Some(s) => Ok(s.decision),
            None => Ok(solve_t0(model, &config.optimizer)?.decision),
        },
    }
}

/// Bound suite at a node, with joint caps taken at the solved issuance (or
/// at the issuance caps when the node is bankrupt).
pub fn node_bounds(model: &Model, ns: &NodeState, outcome: &Stage1Outcome, step: f64) -> Result<Vec<CheckedBound>> {
    let (ve, vd) = match outcome.solution() {
        Some(s) => (s.decision.ve, s.decision.vd),
        None => (model.params.cap_e, model.params.cap_d),
    };
    bound_suite(model, ns, ve, vd, step)
}

/// Full batch run: t=0 report, node reports, bound reports and curve tables,
/// all written under `out`.
pub fn run_pipeline(config: &RunConfig, out: &Path) -> Result<PipelineOutput> {
    config.validate()?;
    let model = config.model()?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    write_text(out.join("config_echo.toml"), &config.to_toml()?, &mut files)?;

    let (stage0, reproduction) = if config.run.t0 {
        let (sol, repro) = run_stage0(config, &model)?;
        let (text, table) = stage0_report(&model, &sol, repro.as_ref());
        write_text(out.join("stage0.txt"), &text, &mut files)?;
        write_table(out.join("stage0.csv"), &table, &mut files)?;
        (Some(sol), repro)
    } else {
        (None, None)
    };

    let mut nodes = Vec::new();
    if !config.run.nodes.is_empty() {
        let d0 = node_start(config, stage0.as_ref(), &model)?;
        for (ns, outcome) in solve_nodes(&model, &d0, &config.run.nodes, &config.optimizer)? {
            let id = ns.node.node_id;
            let (text, table) = node_report(&model, &ns, &outcome);
            write_text(out.join(format!("node{id}.txt")), &text, &mut files)?;
            write_table(out.join(format!("node{id}.csv")), &table, &mut files)?;
            let bounds = node_bounds(&model, &ns, &outcome, config.run.bruteforce_step)?;
            let (text, table) = bounds_report(id, &bounds);
            write_text(out.join(format!("bounds_node{id}.txt")), &text, &mut files)?;
            write_table(out.join(format!("bounds_node{id}.csv")), &table, &mut files)?;
            let curves = out.join(format!("curves_node{id}.csv"));
            emit_curves(&model, &ns, &config.curves, &curves)?;
            files.push(curves);
            nodes.push(NodeResult { state: ns, outcome, bounds });
        }
    }
    Ok(PipelineOutput { stage0, reproduction, nodes, files })
}

/// Node state for a single-node command.
pub fn single_node(config: &RunConfig, node: usize) -> Result<(Model, NodeState)> {
    config.validate()?;
    let model = config.model()?;
    let d0 = node_start(config, None, &model)?;
    let ns = node_state(&model, &d0, node)?;
    Ok((model, ns))
}
