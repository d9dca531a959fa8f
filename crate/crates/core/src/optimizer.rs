//! Differential evolution with feasibility-ranking or penalty constraint
//! handling, plus an exhaustive grid oracle over the same search space.
//!
//! Both maximize. A [`Problem`] reports an objective and a non-negative
//! constraint violation; a point is feasible iff its violation is exactly
//! zero (problems fold their own tolerances into the violation).
//!
//! Runs are deterministic: trial vectors are drawn sequentially from a seeded
//! ChaCha stream, evaluated in parallel, and selected in index order.

use std::cmp::Ordering;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_param, Error, Result};

pub trait Problem: Sync {
    /// Objective to maximize at a (mapped) point.
    fn objective(&self, x: &[f64]) -> f64;
    /// Total constraint violation, `0.0` iff feasible.
    fn violation(&self, x: &[f64]) -> f64;
    /// Secondary key for equal objectives; lexicographically smaller wins.
    fn tie_key(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

/// Box bounds in raw coordinates, with an optional block of coordinates that
/// is mapped to the probability simplex before evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub bounds: Vec<(f64, f64)>,
    pub simplex: Option<Range<usize>>,
}

impl SearchSpace {
    pub fn boxed(bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds, simplex: None }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn validate(&self) -> Result<()> {
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            check_param("bounds", lo.is_finite() && hi.is_finite() && lo <= hi, || {
                format!("coordinate {i}: [{lo}, {hi}] is not a valid interval")
            })?;
        }
        if let Some(s) = &self.simplex {
            check_param("simplex", s.start < s.end && s.end <= self.dim(), || {
                format!("block {s:?} out of range for dimension {}", self.dim())
            })?;
        }
        Ok(())
    }

    /// Clamps the simplex block at zero and normalizes it to sum 1 (uniform
    /// if every entry clamps to zero). Other coordinates pass through.
    pub fn map(&self, raw: &[f64]) -> Vec<f64> {
        let mut x = raw.to_vec();
        if let Some(block) = &self.simplex {
            let s = &mut x[block.clone()];
            for v in s.iter_mut() {
                *v = v.max(0.0);
            }
            let total: f64 = s.iter().sum();
            if total > 0.0 {
                s.iter_mut().for_each(|v| *v /= total);
            } else {
                let n = s.len() as f64;
                s.iter_mut().for_each(|v| *v = 1.0 / n);
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintHandling {
    /// Feasible beats infeasible; among infeasible, smaller violation wins.
    #[default]
    FeasibilityRanking,
    /// Objective minus `weight(g) * violation`.
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Rand1Bin,
    Best1Bin,
}

/// Penalty weight at generation `g`: `initial * growth^g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub growth: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self { initial: 10.0, growth: 1.02 }
    }
}

/// Grid steps used by the dense oracles and the infeasibility fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSteps {
    pub simplex: f64,
    pub equity: f64,
    pub position: f64,
    pub issuance: f64,
}

impl Default for GridSteps {
    fn default() -> Self {
        Self { simplex: 0.005, equity: 0.002, position: 0.005, issuance: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub population: usize,
    pub generations: usize,
    /// Mutation factor `F`.
    pub mutation: f64,
    /// Crossover rate `CR`.
    pub crossover: f64,
    pub seed: u64,
    pub strategy: Strategy,
    pub constraint_handling: ConstraintHandling,
    pub penalty: PenaltySchedule,
    pub grid: GridSteps,
    /// Early stop once every member is feasible and the objective spread
    /// falls below this value.
    pub tolerance: f64,
    /// Maximum number of grid evaluations.
    pub grid_budget: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            population: 60,
            generations: 800,
            mutation: 0.7,
            crossover: 0.9,
            seed: 7,
            strategy: Strategy::default(),
            constraint_handling: ConstraintHandling::default(),
            penalty: PenaltySchedule::default(),
            grid: GridSteps::default(),
            tolerance: 1e-12,
            grid_budget: 100_000_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        check_param("population", self.population >= 4, || {
            format!("must be >= 4, got {}", self.population)
        })?;
        check_param("mutation", self.mutation > 0.0 && self.mutation <= 2.0, || {
            format!("F must lie in (0,2], got {}", self.mutation)
        })?;
        check_param("crossover", (0.0..=1.0).contains(&self.crossover), || {
            format!("CR must lie in [0,1], got {}", self.crossover)
        })?;
        let g = self.grid;
        check_param("grid", [g.simplex, g.equity, g.position, g.issuance].iter().all(|s| *s > 0.0), || {
            "grid steps must be positive".into()
        })
    }
}

/// Best point found, in mapped coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub point: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
    /// Best feasible objective after each generation (`-inf` while none).
    pub trace: Vec<f64>,
    pub evaluations: u64,
}

#[derive(Debug, Clone)]
struct Member {
    raw: Vec<f64>,
    objective: f64,
    violation: f64,
}

impl Member {
    fn feasible(&self) -> bool {
        self.violation == 0.0
    }
}

fn evaluate<P: Problem>(problem: &P, space: &SearchSpace, raw: Vec<f64>) -> Member {
    let x = space.map(&raw);
    let objective = problem.objective(&x);
    let violation = problem.violation(&x).max(0.0);
    Member { raw, objective, violation }
}

/// Total order used to pick the incumbent: feasible first, then objective,
/// then tie key, then smaller violation.
fn rank<P: Problem>(problem: &P, space: &SearchSpace, a: &Member, b: &Member) -> Ordering {
    match (a.feasible(), b.feasible()) {
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => b.violation.total_cmp(&a.violation),
        (true, true) => a.objective.total_cmp(&b.objective).then_with(|| {
            let (ka, kb) = (problem.tie_key(&space.map(&a.raw)), problem.tie_key(&space.map(&b.raw)));
            cmp_keys(&kb, &ka)
        }),
    }
}

fn cmp_keys(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn trial_wins(handling: ConstraintHandling, weight: f64, trial: &Member, target: &Member) -> bool {
    match handling {
        ConstraintHandling::FeasibilityRanking => match (trial.feasible(), target.feasible()) {
            (true, true) => trial.objective >= target.objective,
            (true, false) => true,
            (false, true) => false,
            (false, false) => trial.violation <= target.violation,
        },
        ConstraintHandling::Penalty => {
            trial.objective - weight * trial.violation >= target.objective - weight * target.violation
        }
    }
}

/// Maximizes `problem` over `space` by differential evolution.
///
/// When no feasible individual appears, the run restarts once from a
/// population seeded with the best points of a coarse grid over the box;
/// if that also fails, returns [`Error::Infeasible`].
pub fn de_optimize<P: Problem>(problem: &P, space: &SearchSpace, config: &OptimizerConfig) -> Result<Optimum> {
    config.validate()?;
    space.validate()?;
    let first = de_run(problem, space, config, config.seed, Vec::new());
    if first.violation == 0.0 {
        return Ok(first);
    }
    let seeds = coarse_seeds(problem, space, config.population);
    let mut second = de_run(problem, space, config, config.seed.wrapping_add(1), seeds);
    second.evaluations += first.evaluations;
    if second.violation == 0.0 {
        Ok(second)
    } else {
        Err(Error::Infeasible(format!(
            "differential evolution found no feasible point (least violation {:.3e})",
            second.violation
        )))
    }
}

fn coarse_seeds<P: Problem>(problem: &P, space: &SearchSpace, count: usize) -> Vec<Vec<f64>> {
    let d = space.dim().max(1);
    let levels = ((4096f64).powf(1.0 / d as f64).floor() as usize).clamp(2, 9);
    let total = levels.pow(d as u32);
    let mut members: Vec<Member> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let raw: Vec<f64> = space
                .bounds
                .iter()
                .map(|&(lo, hi)| {
                    let k = idx % levels;
                    idx /= levels;
                    lo + (hi - lo) * k as f64 / (levels - 1) as f64
                })
                .collect();
            evaluate(problem, space, raw)
        })
        .collect();
    members.sort_by(|a, b| rank(problem, space, b, a));
    members.into_iter().take(count).map(|m| m.raw).collect()
}

fn de_run<P: Problem>(
    problem: &P,
    space: &SearchSpace,
    config: &OptimizerConfig,
    seed: u64,
    seeds: Vec<Vec<f64>>,
) -> Optimum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np = config.population;
    let d = space.dim();

    let mut raws = seeds;
    raws.truncate(np);
    while raws.len() < np {
        let v = space.bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        raws.push(v);
    }
    let mut pop: Vec<Member> = raws.into_par_iter().map(|r| evaluate(problem, space, r)).collect();
    let mut evaluations = np as u64;

    let mut best = pop[0].clone();
    for m in &pop[1..] {
        if rank(problem, space, m, &best) == Ordering::Greater {
            best = m.clone();
        }
    }
    let mut trace = Vec::with_capacity(config.generations);

    for g in 0..config.generations {
        let best_idx = (0..np)
            .max_by(|&a, &b| rank(problem, space, &pop[a], &pop[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let (r1, r2, r3) = distinct_three(&mut rng, np, i);
                let base = match config.strategy {
                    Strategy::Rand1Bin => r1,
                    Strategy::Best1Bin => best_idx,
                };
                let jrand = rng.random_range(0..d.max(1));
                (0..d)
                    .map(|j| {
                        let (lo, hi) = space.bounds[j];
                        let cross = j == jrand || rng.random::<f64>() < config.crossover;
                        let v = if cross {
                            pop[base].raw[j] + config.mutation * (pop[r2].raw[j] - pop[r3].raw[j])
                        } else {
                            pop[i].raw[j]
                        };
                        v.clamp(lo, hi)
                    })
                    .collect()
            })
            .collect();
        let evaluated: Vec<Member> = trials.into_par_iter().map(|r| evaluate(problem, space, r)).collect();
        evaluations += np as u64;

        let weight = config.penalty.initial * config.penalty.growth.powi(g as i32);
        for (i, trial) in evaluated.into_iter().enumerate() {
            if rank(problem, space, &trial, &best) == Ordering::Greater {
                best = trial.clone();
            }
            if trial_wins(config.constraint_handling, weight, &trial, &pop[i]) {
                pop[i] = trial;
            }
        }
        trace.push(if best.feasible() { best.objective } else { f64::NEG_INFINITY });

        if pop.iter().all(Member::feasible) {
            let (lo, hi) = pop
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m.objective), hi.max(m.objective)));
            if hi - lo < config.tolerance {
                break;
            }
        }
    }

    Optimum {
        point: space.map(&best.raw),
        objective: best.objective,
        violation: best.violation,
        trace,
        evaluations,
    }
}

fn distinct_three(rng: &mut ChaCha8Rng, n: usize, exclude: usize) -> (usize, usize, usize) {
    let mut pick = |taken: &[usize]| loop {
        let k = rng.random_range(0..n);
        if k != exclude && !taken.contains(&k) {
            return k;
        }
    };
    let a = pick(&[]);
    let b = pick(&[a]);
    let c = pick(&[a, b]);
    (a, b, c)
}

/// One axis of the grid: a list of values for one coordinate, or a list of
/// simplex lattice points for the simplex block.
struct Axis {
    start: usize,
    points: Vec<Vec<f64>>,
}

fn linear_axis(lo: f64, hi: f64, step: f64) -> Vec<Vec<f64>> {
    if hi <= lo {
        return vec![vec![lo]];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut v: Vec<Vec<f64>> = (0..=n).map(|k| vec![lo + k as f64 * step]).collect();
    if lo + n as f64 * step < hi - 1e-12 {
        v.push(vec![hi]);
    }
    v
}

fn simplex_axis(k: usize, step: f64) -> Vec<Vec<f64>> {
    let n = (1.0 / step).round() as usize;
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<f64>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.iter().map(|&c| c as f64 / n as f64).collect());
            return;
        }
        for c in 0..=left {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, n, out);
        }
    }
    rec(0, n, &mut cur, n, &mut out);
    out
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Counts the points of the grid `grid_oracle` would enumerate.
pub fn grid_size(space: &SearchSpace, steps: &[f64]) -> u128 {
    let mut total: u128 = 1;
    let mut j = 0;
    while j < space.dim() {
        if let Some(block) = space.simplex.as_ref().filter(|b| b.start == j) {
            let n = (1.0 / steps[j]).round() as u128;
            let k = block.len() as u128;
            total = total.saturating_mul(binomial(n + k - 1, k - 1));
            j = block.end;
        } else {
            let (lo, hi) = space.bounds[j];
            let n = if hi <= lo { 1 } else { ((hi - lo) / steps[j] + 1e-9).floor() as u128 + 2 };
            total = total.saturating_mul(n);
            j += 1;
        }
    }
    total
}

/// Exhaustive search over a regular grid. `steps[j]` is the spacing of
/// coordinate `j`; the simplex block (if any) uses the step of its first
/// coordinate and enumerates the lattice `{k/n}` summing to one.
pub fn grid_oracle<P: Problem>(problem: &P, space: &SearchSpace, steps: &[f64], budget: u64) -> Result<Optimum> {
    space.validate()?;
    check_param("steps", steps.len() == space.dim() && steps.iter().all(|s| *s > 0.0), || {
        format!("need {} positive steps", space.dim())
    })?;
    let estimate = grid_size(space, steps);
    if estimate > budget as u128 {
        return Err(Error::BudgetExceeded { points: estimate, budget });
    }

    let mut axes = Vec::new();
    let mut j = 0;
    while j < space.dim() {
        if let Some(block) = space.simplex.as_ref().filter(|b| b.start == j) {
            axes.push(Axis { start: j, points: simplex_axis(block.len(), steps[j]) });
            j = block.end;
        } else {
            let (lo, hi) = space.bounds[j];
            axes.push(Axis { start: j, points: linear_axis(lo, hi, steps[j]) });
            j += 1;
        }
    }
    let total: u64 = axes.iter().map(|a| a.points.len() as u64).product();
    let d = space.dim();

    let decode = |mut idx: u64, buf: &mut [f64]| {
        for axis in &axes {
            let n = axis.points.len() as u64;
            let p = &axis.points[(idx % n) as usize];
            buf[axis.start..axis.start + p.len()].copy_from_slice(p);
            idx /= n;
        }
    };

    // (objective, tie key, index) of the best feasible point
    type Best = Option<(f64, Vec<f64>, u64)>;
    let better = |a: &Best, b: &Best| -> bool {
        match (a, b) {
            (Some(_), None) => true,
            (None, _) => false,
            (Some((oa, ka, ia)), Some((ob, kb, ib))) => match oa.total_cmp(ob) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => match cmp_keys(ka, kb) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => ia < ib,
                },
            },
        }
    };

    let best: Best = (0..total)
        .into_par_iter()
        .fold(
            || (vec![0.0; d], None),
            |(mut buf, best): (Vec<f64>, Best), idx| {
                decode(idx, &mut buf);
                if problem.violation(&buf) > 0.0 {
                    return (buf, best);
                }
                let cand = Some((problem.objective(&buf), problem.tie_key(&buf), idx));
                let next = if better(&cand, &best) { cand } else { best };
                (buf, next)
            },
        )
        .map(|(_, b)| b)
        .reduce(|| None, |a, b| if better(&b, &a) { b } else { a });

    match best {
        Some((objective, _, idx)) => {
            let mut point = vec![0.0; d];
            decode(idx, &mut point);
            Ok(Optimum { point, objective, violation: 0.0, trace: Vec::new(), evaluations: total })
        }
        None => Err(Error::Infeasible(format!("no feasible point among {total} grid points"))),
    }
}
