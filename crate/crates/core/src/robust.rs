//! Decisions under deep uncertainty over a finite scenario set: max-min,
//! min-max regret, expected welfare, and Monte Carlo over parameter beliefs.
//!
//! A decision is one open-loop savings/mu path shared by every scenario.
//! The nonsmooth outer problems are solved on a log-sum-exp smoothing with
//! a falling temperature, then polished by exact comparison against every
//! annealing iterate and every scenario-optimal candidate.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Triangular};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{line_of_offset, parse_toml, Calibration};
use crate::det::{DetOptions, DetProblem, Horizon, Trajectory, SAVINGS_MAX, SAVINGS_MIN};
use crate::error::{IamError, Result};
use crate::model::{ExogenousPaths, ModelParams, StateVector};
use crate::optim::{minimize_box, OptimOptions};
use crate::simulate::{quantile, QUANTILES};

/// Open-loop savings and emission-control paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPath {
    pub savings: Vec<f64>,
    pub mu: Vec<f64>,
}

impl DecisionPath {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Packed `[s_0.., mu_0..]` layout used by the deterministic solver.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut x = self.savings.clone();
        x.extend_from_slice(&self.mu);
        x
    }

    pub fn from_vector(x: &[f64]) -> Self {
        let n = x.len() / 2;
        DecisionPath {
            savings: x[..n].to_vec(),
            mu: x[n..].to_vec(),
        }
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        DecisionPath::from_vector(&traj.decision_vector())
    }
}

/// One model variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub label: String,
    pub weight: Option<f64>,
    pub params: ModelParams,
    pub paths: ExogenousPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
    pub init: StateVector,
}

/// Belief over one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeliefDist {
    Point {
        value: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Triangular {
        lo: f64,
        mode: f64,
        hi: f64,
    },
    #[serde(rename = "truncnormal")]
    TruncNormal {
        mean: f64,
        sd: f64,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub param: String,
    #[serde(flatten)]
    pub dist: BeliefDist,
}

impl BeliefDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BeliefDist::Point { value } => value.is_finite(),
            BeliefDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            BeliefDist::Triangular { lo, mode, hi } => lo <= mode && mode <= hi && lo < hi,
            BeliefDist::TruncNormal { mean, sd, lo, hi } => mean.is_finite() && sd > 0.0 && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(IamError::config(format!("invalid belief distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            BeliefDist::Point { value } => Ok(value),
            BeliefDist::Uniform { lo, hi } => Ok(if lo == hi { lo } else { rng.random_range(lo..hi) }),
            BeliefDist::Triangular { lo, mode, hi } => Ok(Triangular::new(lo, hi, mode)
                .map_err(|e| IamError::config(format!("triangular belief: {e}")))?
                .sample(rng)),
            BeliefDist::TruncNormal { mean, sd, lo, hi } => {
                let n = Normal::new(mean, sd).map_err(|e| IamError::config(format!("normal belief: {e}")))?;
                for _ in 0..100_000 {
                    let v = n.sample(rng);
                    if (lo..=hi).contains(&v) {
                        return Ok(v);
                    }
                }
                Err(IamError::config(format!(
                    "truncated normal N({mean}, {sd}) has negligible mass on [{lo}, {hi}]"
                )))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioEntry {
    label: String,
    weight: Option<f64>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    paths: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    paths_scale: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<ScenarioEntry>,
    #[serde(default)]
    belief: Vec<Belief>,
}

/// Scenario and belief definitions read from one file.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub set: ScenarioSet,
    pub beliefs: Vec<Belief>,
}

pub fn load_scenarios(path: &Path, base: &Calibration) -> Result<ScenarioSpec> {
    let src = std::fs::read_to_string(path).map_err(|e| IamError::io(path, e))?;
    parse_scenarios(&src, &path.display().to_string(), base)
}

/// Parses `[[scenario]]` and `[[belief]]` tables on top of `base`.
///
/// Scenario `params` set scalar parameters by name, `paths` replace whole
/// exogenous series and `paths_scale` multiplies them.
pub fn parse_scenarios(src: &str, origin: &str, base: &Calibration) -> Result<ScenarioSpec> {
    parse_toml(src, origin)?;
    let file: ScenarioFile = toml::from_str(src).map_err(|e| IamError::Calibration {
        location: match e.span() {
            Some(s) => format!("{origin} line {}", line_of_offset(src, s.start)),
            None => origin.to_string(),
        },
        detail: e.message().to_string(),
    })?;
    let mut scenarios = Vec::with_capacity(file.scenario.len());
    for (i, entry) in file.scenario.iter().enumerate() {
        let loc = format!("[[scenario]] #{} '{}'", i + 1, entry.label);
        let err = |detail: String| IamError::Calibration {
            location: loc.clone(),
            detail,
        };
        let mut params = base.params.clone();
        for (k, v) in &entry.params {
            params.set_scalar(k, *v).map_err(|e| err(e.to_string()))?;
        }
        let mut paths = base.paths.clone();
        for (k, v) in &entry.paths {
            let series = paths.series_mut(k).ok_or_else(|| err(format!("unknown path '{k}'")))?;
            *series = v.clone();
        }
        for (k, f) in &entry.paths_scale {
            let series = paths.series_mut(k).ok_or_else(|| err(format!("unknown path '{k}'")))?;
            series.iter_mut().for_each(|x| *x *= f);
        }
        params.validate().map_err(|e| err(e.to_string()))?;
        paths.validate().map_err(|e| err(e.to_string()))?;
        scenarios.push(Scenario {
            label: entry.label.clone(),
            weight: entry.weight,
            params,
            paths,
        });
    }
    for b in &file.belief {
        b.dist.validate()?;
        base.params
            .clone()
            .set_scalar(&b.param, b.dist.sample(&mut ChaCha8Rng::seed_from_u64(0))?)?;
    }
    let set = ScenarioSet {
        scenarios,
        init: base.initial,
    };
    if !set.scenarios.is_empty() {
        set.validate_weights()?;
    }
    Ok(ScenarioSpec {
        set,
        beliefs: file.belief,
    })
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Weights are either absent everywhere or present everywhere and sum to 1.
    pub fn validate_weights(&self) -> Result<()> {
        let given = self.scenarios.iter().filter(|s| s.weight.is_some()).count();
        if given == 0 {
            return Ok(());
        }
        if given != self.scenarios.len() {
            return Err(IamError::config("either every scenario has a weight or none does"));
        }
        let sum: f64 = self.scenarios.iter().map(|s| s.weight.unwrap_or(0.0)).sum();
        if self.scenarios.iter().any(|s| s.weight.unwrap_or(0.0) < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(IamError::config(format!(
                "scenario weights must be non-negative and sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    pub fn has_weights(&self) -> bool {
        !self.scenarios.is_empty() && self.scenarios.iter().all(|s| s.weight.is_some())
    }

    fn require(&self, min: usize, op: &str) -> Result<()> {
        if self.scenarios.len() < min {
            return Err(IamError::config(format!(
                "{op} needs at least {min} scenarios, got {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Settings shared by the robust operations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    pub horizon: usize,
    pub extra_periods: usize,
    /// Projected-gradient tolerance of the scenario solves.
    pub tol: f64,
    /// Smoothing temperatures relative to the scenario spread, largest first.
    pub temperatures: Vec<f64>,
    pub max_iter: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            horizon: 60,
            extra_periods: 80,
            tol: 1e-6,
            temperatures: vec![1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            max_iter: 2000,
        }
    }
}

impl RobustConfig {
    fn horizon(&self, params: &ModelParams) -> Result<Horizon> {
        Horizon::new(
            self.horizon,
            params.step_years,
            crate::det::TerminalRule::FixedSavings {
                extra_periods: self.extra_periods,
            },
        )
    }

    fn det_options(&self) -> DetOptions {
        DetOptions {
            tol: self.tol,
            ..DetOptions::default()
        }
    }

    fn problem(&self, s: &Scenario, init: &StateVector) -> Result<DetProblem> {
        DetProblem::new(&s.params, &s.paths, self.horizon(&s.params)?, init)
    }
}

/// Welfare of a fixed decision path under one scenario.
///
/// Decisions are clipped to the scenario's bounds; with consumption a share
/// of net output this keeps consumption feasible whenever net output is.
pub fn welfare_under(d: &DecisionPath, s: &Scenario, init: &StateVector, cfg: &RobustConfig) -> Result<f64> {
    let problem = cfg.problem(s, init)?;
    welfare_of(&problem, d).map_err(|e| match e {
        IamError::Infeasible { period, detail } => IamError::Infeasible {
            period,
            detail: format!("scenario '{}': {detail}", s.label),
        },
        other => other,
    })
}

fn welfare_of(problem: &DetProblem, d: &DecisionPath) -> Result<f64> {
    if d.len() != problem.n() || d.savings.len() != problem.n() {
        return Err(IamError::config(format!(
            "decision path has {} periods, horizon has {}",
            d.len(),
            problem.n()
        )));
    }
    let mut x = d.to_vector();
    problem.clip(&mut x);
    problem.welfare(&x)
}

fn scenario_key(s: &Scenario) -> Result<String> {
    serde_json::to_string(&(&s.params, &s.paths)).map_err(|e| IamError::numerical(format!("scenario key: {e}")))
}

/// Scenarios in a canonical order with exact duplicates merged (weights summed).
fn canonical(set: &ScenarioSet) -> Result<Vec<Scenario>> {
    let mut keyed: BTreeMap<String, Scenario> = BTreeMap::new();
    for s in &set.scenarios {
        let key = scenario_key(s)?;
        match keyed.get_mut(&key) {
            Some(existing) => {
                existing.weight = match (existing.weight, s.weight) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
                if s.label < existing.label {
                    existing.label = s.label.clone();
                }
            }
            None => {
                keyed.insert(key, s.clone());
            }
        }
    }
    Ok(keyed.into_values().collect())
}

/// Result of a robust operation.
#[derive(Debug, Clone, Serialize)]
pub struct RobustOutcome {
    pub criterion: String,
    pub decision: DecisionPath,
    /// Criterion value: worst welfare, worst regret or expected welfare.
    pub value: f64,
    /// Welfare of `decision` under each input scenario, in input order.
    pub welfare: Vec<f64>,
    /// Where the returned decision came from: "smoothed" or a candidate label.
    pub source: String,
    pub outer_iterations: usize,
}

/// Scenario-optimal solutions, in input order.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOptima {
    pub labels: Vec<String>,
    pub welfare: Vec<f64>,
    pub decisions: Vec<DecisionPath>,
}

/// Solves every scenario's deterministic program.
pub fn scenario_optima(set: &ScenarioSet, cfg: &RobustConfig) -> Result<ScenarioOptima> {
    let opts = cfg.det_options();
    let sols = set
        .scenarios
        .par_iter()
        .map(|s| {
            let problem = cfg.problem(s, &set.init)?;
            problem
                .solve(None, &opts)
                .map_err(|e| IamError::numerical(format!("scenario '{}' optimum failed: {e}", s.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioOptima {
        labels: set.scenarios.iter().map(|s| s.label.clone()).collect(),
        welfare: sols.iter().map(|t| t.welfare).collect(),
        decisions: sols.iter().map(DecisionPath::from_trajectory).collect(),
    })
}

/// Welfare of each decision (column) under each scenario (row).
pub fn welfare_matrix(set: &ScenarioSet, decisions: &[DecisionPath], cfg: &RobustConfig) -> Result<Vec<Vec<f64>>> {
    set.scenarios
        .par_iter()
        .map(|s| {
            let problem = cfg.problem(s, &set.init)?;
            decisions.iter().map(|d| welfare_of(&problem, d)).collect()
        })
        .collect()
}

/// Regret of each candidate (column) under each scenario (row).
pub fn regret_matrix(optima: &ScenarioOptima, welfare: &[Vec<f64>]) -> Vec<Vec<f64>> {
    welfare
        .iter()
        .zip(&optima.welfare)
        .map(|(row, w_star)| row.iter().map(|w| w_star - w).collect())
        .collect()
}

/// Per-scenario loss minimized in the worst case: `offset_s - W_s(d)`.
struct Losses {
    problems: Vec<DetProblem>,
    offsets: Vec<f64>,
    scale: f64,
}

impl Losses {
    fn exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.problems
            .iter()
            .zip(&self.offsets)
            .map(|(p, o)| Ok((o - p.welfare(x)?) / self.scale))
            .collect()
    }

    /// Smoothed maximum `tau * ln sum exp(l_s / tau)` and its gradient.
    fn smooth(&self, x: &[f64], tau: f64, grad: &mut [f64]) -> Result<f64> {
        let n = x.len();
        let mut ls = Vec::with_capacity(self.problems.len());
        let mut gs = Vec::with_capacity(self.problems.len());
        for (p, o) in self.problems.iter().zip(&self.offsets) {
            let mut g = vec![0.0; n];
            let w = p.welfare_and_gradient(x, &mut g)?;
            ls.push((o - w) / self.scale);
            gs.push(g);
        }
        let m = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = ls.iter().map(|l| ((l - m) / tau).exp()).collect();
        let z: f64 = ws.iter().sum();
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (w, g) in ws.iter().zip(&gs) {
            let c = -w / z / self.scale;
            for i in 0..n {
                grad[i] += c * g[i];
            }
        }
        Ok(m + tau * z.ln())
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Minimizes `max_s loss_s` over decisions shared by all scenarios.
///
/// `candidates` seed the search and take part in the exact polish, so the
/// result is never worse than any of them.
fn minimize_worst(
    losses: &Losses,
    lo: &[f64],
    hi: &[f64],
    candidates: &[(String, Vec<f64>)],
    cfg: &RobustConfig,
) -> Result<(Vec<f64>, f64, String, usize)> {
    let mut best: Option<(Vec<f64>, f64, String)> = None;
    let consider = |x: &[f64], label: &str, best: &mut Option<(Vec<f64>, f64, String)>| -> Result<()> {
        let v = max_of(&losses.exact(x)?);
        if best.as_ref().is_none_or(|b| v < b.1) {
            *best = Some((x.to_vec(), v, label.to_string()));
        }
        Ok(())
    };
    for (label, x) in candidates {
        consider(x, label, &mut best)?;
    }
    let Some((mut x, _, _)) = best.clone() else {
        return Err(IamError::config("robust optimization needs a starting candidate"));
    };
    let opts = OptimOptions {
        max_iter: cfg.max_iter,
        pg_tol: 1e-10,
        memory: 20,
        newton_iters: 0,
        fd_step: 1e-7,
    };
    let mut iterations = 0;
    for &tau in &cfg.temperatures {
        let res = minimize_box(|x: &[f64], g: &mut [f64]| losses.smooth(x, tau, g), &x, lo, hi, &opts);
        match res {
            Ok(r) => {
                iterations += r.iterations;
                log::debug!(
                    "smoothed stage tau={tau:e}: {} iterations, pg {:.3e}",
                    r.iterations,
                    r.pg_norm
                );
                x = r.x;
                consider(&x, "smoothed", &mut best)?;
            }
            Err(IamError::NotConverged {
                best: bx,
                iterations: it,
                ..
            }) => {
                iterations += it;
                x = bx;
                consider(&x, "smoothed", &mut best)?;
            }
            Err(e) => return Err(e),
        }
    }
    let (bx, bv, label) = best.expect("at least one candidate");
    Ok((bx, bv, label, iterations))
}

fn shared_bounds(problems: &[DetProblem]) -> (Vec<f64>, Vec<f64>) {
    let n = problems[0].n();
    let mu_max = problems.iter().map(|p| p.params.mu_max).fold(f64::INFINITY, f64::min);
    let mut lo = vec![SAVINGS_MIN; n];
    lo.extend(std::iter::repeat_n(0.0, n));
    let mut hi = vec![SAVINGS_MAX; n];
    hi.extend(std::iter::repeat_n(mu_max, n));
    (lo, hi)
}

fn clip_to(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect()
}

fn candidates_from(optima: &ScenarioOptima, lo: &[f64], hi: &[f64]) -> Vec<(String, Vec<f64>)> {
    optima
        .labels
        .iter()
        .zip(&optima.decisions)
        .map(|(l, d)| (l.clone(), clip_to(&d.to_vector(), lo, hi)))
        .collect()
}

enum Criterion {
    MaxMin,
    Regret,
}

fn worst_case(set: &ScenarioSet, cfg: &RobustConfig, criterion: Criterion) -> Result<(RobustOutcome, ScenarioOptima)> {
    let canon = canonical(set)?;
    let cset = ScenarioSet {
        scenarios: canon,
        init: set.init,
    };
    let optima = scenario_optima(&cset, cfg)?;
    let problems = cset
        .scenarios
        .iter()
        .map(|s| cfg.problem(s, &set.init))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = shared_bounds(&problems);
    let candidates = candidates_from(&optima, &lo, &hi);

    let offsets = match criterion {
        Criterion::MaxMin => vec![0.0; problems.len()],
        Criterion::Regret => optima.welfare.clone(),
    };
    // spread of the losses over the candidates sets the temperature unit
    let mut spread: f64 = 0.0;
    for (_, x) in &candidates {
        let ls: Vec<f64> = problems
            .iter()
            .zip(&offsets)
            .map(|(p, o)| Ok(o - p.welfare(x)?))
            .collect::<Result<_>>()?;
        spread = spread.max(max_of(&ls) - ls.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let floor = 1e-9 * optima.welfare.iter().map(|w| w.abs()).fold(0.0, f64::max);
    let losses = Losses {
        problems,
        offsets,
        scale: spread.max(floor).max(f64::MIN_POSITIVE),
    };
    let (x, v, source, iterations) = minimize_worst(&losses, &lo, &hi, &candidates, cfg)?;
    let decision = DecisionPath::from_vector(&x);
    let welfare = set
        .scenarios
        .iter()
        .map(|s| welfare_under(&decision, s, &set.init, cfg))
        .collect::<Result<Vec<_>>>()?;
    let value = v * losses.scale;
    let keys = cset.scenarios.iter().map(scenario_key).collect::<Result<Vec<_>>>()?;
    let mut input_optima = ScenarioOptima {
        labels: Vec::new(),
        welfare: Vec::new(),
        decisions: Vec::new(),
    };
    for s in &set.scenarios {
        let key = scenario_key(s)?;
        let k = keys
            .iter()
            .position(|c| *c == key)
            .expect("every scenario has a canonical twin");
        input_optima.labels.push(s.label.clone());
        input_optima.welfare.push(optima.welfare[k]);
        input_optima.decisions.push(optima.decisions[k].clone());
    }
    let (name, value) = match criterion {
        Criterion::MaxMin => ("max_min", -value),
        Criterion::Regret => ("min_max_regret", value),
    };
    Ok((
        RobustOutcome {
            criterion: name.into(),
            decision,
            value,
            welfare,
            source,
            outer_iterations: iterations,
        },
        input_optima,
    ))
}

/// Decision maximizing the worst welfare across scenarios.
pub fn max_min(set: &ScenarioSet, cfg: &RobustConfig) -> Result<RobustOutcome> {
    set.require(1, "max_min")?;
    Ok(worst_case(set, cfg, Criterion::MaxMin)?.0)
}

/// Decision minimizing the worst regret `W*(s) - W(d, s)`; also returns the
/// scenario optima used as reference, in input order.
pub fn min_max_regret(set: &ScenarioSet, cfg: &RobustConfig) -> Result<(RobustOutcome, ScenarioOptima)> {
    set.require(1, "min_max_regret")?;
    worst_case(set, cfg, Criterion::Regret)
}

/// Decision maximizing belief-weighted welfare.
pub fn expected_welfare_decision(set: &ScenarioSet, cfg: &RobustConfig) -> Result<RobustOutcome> {
    set.require(1, "expected_welfare_decision")?;
    if !set.has_weights() {
        return Err(IamError::config("expected-welfare decision needs scenario weights"));
    }
    set.validate_weights()?;
    let canon = canonical(set)?;
    let problems = canon
        .iter()
        .map(|s| cfg.problem(s, &set.init))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = canon.iter().map(|s| s.weight.unwrap_or(0.0)).collect();
    let (lo, hi) = shared_bounds(&problems);
    let objective = |x: &[f64], g: &mut [f64]| -> Result<f64> {
        let mut total = 0.0;
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut gs = vec![0.0; x.len()];
        for (p, w) in problems.iter().zip(&weights) {
            total += w * p.welfare_and_gradient(x, &mut gs)?;
            for i in 0..x.len() {
                g[i] += w * gs[i];
            }
        }
        Ok(total)
    };
    let x0 = clip_to(&problems[0].default_guess(), &lo, &hi);
    let mut g0 = vec![0.0; x0.len()];
    let scale = objective(&x0, &mut g0)?.abs().max(1e-12);
    let opts = OptimOptions {
        max_iter: cfg.max_iter.max(5000),
        pg_tol: 1e-12,
        memory: 20,
        newton_iters: 12,
        fd_step: 1e-7,
    };
    let res = minimize_box(
        |x: &[f64], g: &mut [f64]| {
            let v = objective(x, g)?;
            g.iter_mut().for_each(|v| *v = -*v / scale);
            Ok(-v / scale)
        },
        &x0,
        &lo,
        &hi,
        &opts,
    )?;
    if !(res.pg_norm <= cfg.tol) {
        return Err(IamError::NotConverged {
            iterations: res.iterations,
            pg_norm: res.pg_norm,
            objective: -res.f * scale,
            best: res.x,
        });
    }
    let decision = DecisionPath::from_vector(&res.x);
    let welfare = set
        .scenarios
        .iter()
        .map(|s| welfare_under(&decision, s, &set.init, cfg))
        .collect::<Result<Vec<_>>>()?;
    let value = set
        .scenarios
        .iter()
        .zip(&welfare)
        .map(|(s, w)| s.weight.unwrap_or(0.0) * w)
        .sum();
    Ok(RobustOutcome {
        criterion: "expected_welfare".into(),
        decision,
        value,
        welfare,
        source: "optimized".into(),
        outer_iterations: res.iterations,
    })
}

/// Max-regret of each decision given a regret matrix (scenario rows).
pub fn max_regret_per_candidate(regret: &[Vec<f64>]) -> Vec<f64> {
    let n = regret.first().map_or(0, |r| r.len());
    (0..n)
        .map(|j| regret.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Share of Monte Carlo draws allowed to fail.
pub const MAX_FAILED_DRAW_FRAC: f64 = 0.01;

/// Variables summarized by [`monte_carlo`].
pub const MC_VARIABLES: [&str; 3] = ["SCC", "mu", "T_AT"];

#[derive(Debug, Clone, Serialize)]
pub struct McDraw {
    pub index: usize,
    pub values: Vec<f64>,
    /// SCC, mu and T_AT per period; empty when the draw failed.
    pub series: Vec<Vec<f64>>,
    pub error: Option<String>,
}

/// Output distribution of deterministic solves under sampled parameters.
///
/// Each draw is solved as if its parameters were known, so the report
/// carries no aversion to the uncertainty it describes.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub params: Vec<String>,
    pub n_periods: usize,
    pub draws: Vec<McDraw>,
    pub failures: usize,
    pub note: &'static str,
}

pub const MC_NOTE: &str = "per-draw deterministic optima; ignores uncertainty aversion";

impl McReport {
    /// `(t, variable, quantiles)` over successful draws.
    pub fn quantiles(&self) -> Vec<(usize, usize, [f64; 5])> {
        let mut out = Vec::new();
        for t in 0..self.n_periods {
            for v in 0..MC_VARIABLES.len() {
                let xs: Vec<f64> = self
                    .draws
                    .iter()
                    .filter(|d| d.error.is_none())
                    .map(|d| d.series[v][t])
                    .collect();
                let mut q = [0.0; 5];
                for (i, p) in QUANTILES.iter().enumerate() {
                    q[i] = quantile(&xs, *p);
                }
                out.push((t, v, q));
            }
        }
        out
    }
}

/// Parameter values of draw `index`; independent of the number of draws.
pub fn belief_draw(beliefs: &[Belief], seed: u64, index: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    beliefs.iter().map(|b| b.dist.sample(&mut rng)).collect()
}

pub fn monte_carlo(
    base: &Calibration,
    beliefs: &[Belief],
    n_draws: usize,
    seed: u64,
    cfg: &RobustConfig,
) -> Result<McReport> {
    if n_draws == 0 {
        return Err(IamError::config("monte carlo needs at least one draw"));
    }
    if beliefs.is_empty() {
        return Err(IamError::config("monte carlo needs at least one [[belief]]"));
    }
    for b in beliefs {
        b.dist.validate()?;
    }
    let opts = cfg.det_options();
    let base_problem = DetProblem::new(&base.params, &base.paths, cfg.horizon(&base.params)?, &base.initial)?;
    let base_sol = base_problem.solve(None, &opts)?;
    let guess = base_sol.decision_vector();
    let draws: Vec<McDraw> = (0..n_draws)
        .into_par_iter()
        .map(|i| -> Result<McDraw> {
            let values = belief_draw(beliefs, seed, i)?;
            let mut params = base.params.clone();
            for (b, v) in beliefs.iter().zip(&values) {
                params.set_scalar(&b.param, *v)?;
            }
            let solved = params.validate().and_then(|_| {
                let problem = DetProblem::new(&params, &base.paths, cfg.horizon(&params)?, &base.initial)?;
                problem.solve(Some(&guess), &opts)
            });
            Ok(match solved {
                Ok(traj) => McDraw {
                    index: i,
                    values,
                    series: vec![
                        traj.scc_path.clone(),
                        traj.decisions.iter().map(|d| d.mu).collect(),
                        traj.states[..traj.n_periods()].iter().map(|s| s.t[0]).collect(),
                    ],
                    error: None,
                },
                Err(e) => {
                    log::warn!("monte carlo draw {i} failed: {e}");
                    McDraw {
                        index: i,
                        values,
                        series: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            })
        })
        .collect::<Result<_>>()?;
    let failures = draws.iter().filter(|d| d.error.is_some()).count();
    if failures as f64 > MAX_FAILED_DRAW_FRAC * n_draws as f64 {
        return Err(IamError::numerical(format!(
            "{failures} of {n_draws} monte carlo draws failed"
        )));
    }
    Ok(McReport {
        params: beliefs.iter().map(|b| b.param.clone()).collect(),
        n_periods: cfg.horizon,
        draws,
        failures,
        note: MC_NOTE,
    })
}
