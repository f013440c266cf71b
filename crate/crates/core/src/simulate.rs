//! Monte Carlo simulation of solved policies and the simulated
//! certainty-equivalent solver (SCEQ).
//!
//! Each path draws from its own ChaCha8 stream keyed by `(seed, path)`;
//! the draw of period `t` sits at a fixed word position, so results do not
//! depend on thread count or on how many periods are simulated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::ClampCounter;
use crate::calibration::Calibration;
use crate::det::{DetOptions, DetProblem, Horizon, TerminalRule};
use crate::error::{IamError, Result};
use crate::model::{self, production, ExogenousPaths, ModelParams, StateVector, StepKind, IDX_TAT, N_CONT};
use crate::stochastic::{build_tipping_chain, discretize_lrr, EZParams, LrrParams, TippingChain};
use crate::vfi::{DiscreteModel, VfiSolution};

/// Variables recorded per path and period, in output order.
pub const SIM_VARIABLES: [&str; 15] = [
    "K",
    "M_AT",
    "M_UO",
    "M_DO",
    "T_AT",
    "T_OC",
    "C",
    "mu",
    "s",
    "E",
    "SCC",
    "tax",
    "zeta",
    "tip_damage",
    "tip_state",
];

const V_C: usize = 6;
const V_SCC: usize = 10;

/// Simulated paths, stored path-major then period then variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub n_periods: usize,
    pub start_year: f64,
    pub step_years: f64,
    pub data: Vec<f64>,
    /// Discrete chain state per path and period.
    pub discrete: Vec<usize>,
}

impl PathEnsemble {
    fn new(n_paths: usize, n_periods: usize, params: &ModelParams) -> Self {
        PathEnsemble {
            n_paths,
            n_periods,
            start_year: params.start_year,
            step_years: params.step_years,
            data: vec![f64::NAN; n_paths * n_periods * SIM_VARIABLES.len()],
            discrete: vec![0; n_paths * n_periods],
        }
    }

    pub fn var_index(name: &str) -> Option<usize> {
        SIM_VARIABLES.iter().position(|v| *v == name)
    }

    pub fn get(&self, path: usize, t: usize, var: usize) -> f64 {
        self.data[(path * self.n_periods + t) * SIM_VARIABLES.len() + var]
    }

    pub fn state(&self, path: usize, t: usize) -> usize {
        self.discrete[path * self.n_periods + t]
    }

    /// One variable along one path.
    pub fn series(&self, path: usize, name: &str) -> Result<Vec<f64>> {
        let v = PathEnsemble::var_index(name).ok_or_else(|| IamError::config(format!("unknown variable {name}")))?;
        Ok((0..self.n_periods).map(|t| self.get(path, t, v)).collect())
    }

    /// One variable across paths at period `t`.
    pub fn cross_section(&self, t: usize, var: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.get(p, t, var)).collect()
    }

    fn set_path(&mut self, path: usize, rows: &[[f64; SIM_VARIABLES.len()]], states: &[usize]) {
        for (t, row) in rows.iter().enumerate() {
            let base = (path * self.n_periods + t) * SIM_VARIABLES.len();
            self.data[base..base + row.len()].copy_from_slice(row);
            self.discrete[path * self.n_periods + t] = states[t];
        }
    }
}

/// Type-7 (linear interpolation) sample quantile; NaNs are ignored.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Per period and variable, the `QUANTILES` across paths.
pub fn quantile_table(ens: &PathEnsemble) -> Vec<(usize, usize, [f64; 5])> {
    let mut out = Vec::with_capacity(ens.n_periods * SIM_VARIABLES.len());
    for t in 0..ens.n_periods {
        for v in 0..SIM_VARIABLES.len() {
            let xs = ens.cross_section(t, v);
            let mut q = [0.0; 5];
            for (i, p) in QUANTILES.iter().enumerate() {
                q[i] = quantile(&xs, *p);
            }
            out.push((t, v, q));
        }
    }
    out
}

/// Uniform draw of `path` at period `t`.
pub fn path_uniform(seed: u64, path: usize, t: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng.set_word_pos(16 * t as u128);
    rng.random::<f64>()
}

fn draw(succ: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for (e, p) in succ {
        acc += p;
        if u < acc {
            return *e;
        }
    }
    succ.last().map(|s| s.0).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Periods to simulate (default: the solved horizon).
    pub periods: Option<usize>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 1000,
            periods: None,
            seed: 12345,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    /// States or successors that fell outside their approximation box.
    pub clamps: usize,
    /// Paths that left the pre-tipping state.
    pub tipped_paths: usize,
}

/// Simulates the solved stochastic policy forward from the initial state.
pub fn simulate_policy(sol: &VfiSolution, cfg: &SimConfig) -> Result<(PathEnsemble, SimStats)> {
    let model = &sol.model;
    let n = cfg.periods.unwrap_or(sol.n_periods());
    if n == 0 || n > sol.n_periods() {
        return Err(IamError::config(format!(
            "can simulate 1..={} periods, asked for {n}",
            sol.n_periods()
        )));
    }
    if cfg.n_paths == 0 {
        return Err(IamError::config("need at least one path"));
    }
    let clamps = ClampCounter::default();
    let unit = model.params.scc_unit;
    let paths: Vec<(Vec<[f64; SIM_VARIABLES.len()]>, Vec<usize>)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<_> {
            let mut x = model.init.continuous();
            let mut d = model.init_state;
            let mut rows = Vec::with_capacity(n);
            let mut states = Vec::with_capacity(n);
            for t in 0..n {
                let [s, mu] = sol.policy(t, &x, d, &clamps)?;
                let (next, c, e) = model.transition(t, &x, d, s, mu)?;
                let scc = sol.scc(t, &x, d)?;
                let exo = model.paths.exo(t);
                let tax = model::carbon_tax(mu, exo.theta1, model.params.theta2, exo.sigma)? * unit;
                let (_, j) = model.discrete.split(d);
                rows.push([
                    x[0],
                    x[1],
                    x[2],
                    x[3],
                    x[4],
                    x[5],
                    c,
                    mu,
                    s,
                    e,
                    scc,
                    tax,
                    model.discrete.zeta(d),
                    model.discrete.tip_damage(d),
                    j as f64,
                ]);
                states.push(d);
                let succ = model.discrete.successors(d, x[IDX_TAT]);
                d = draw(&succ, path_uniform(cfg.seed, p, t));
                x = next;
            }
            Ok((rows, states))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ens = PathEnsemble::new(cfg.n_paths, n, &model.params);
    let mut tipped = 0;
    for (p, (rows, states)) in paths.iter().enumerate() {
        ens.set_path(p, rows, states);
        if states.iter().any(|d| model.discrete.split(*d).1 != 0) {
            tipped += 1;
        }
    }
    Ok((
        ens,
        SimStats {
            clamps: clamps.get(),
            tipped_paths: tipped,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SceqConfig {
    /// Controlled periods of the plan made at period 0.
    pub horizon: usize,
    /// Zero-emission continuation periods after each plan.
    pub extra_periods: usize,
    pub sim_periods: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep the plan end fixed (true) or roll it forward each period.
    pub shrinking: bool,
    pub lrr: bool,
    pub tipping: bool,
    /// Multiplies both long-run-risk innovation variances.
    pub variance_scale: f64,
}

impl Default for SceqConfig {
    fn default() -> Self {
        SceqConfig {
            horizon: 60,
            extra_periods: 80,
            sim_periods: 20,
            n_paths: 100,
            seed: 12345,
            shrinking: true,
            lrr: true,
            tipping: true,
            variance_scale: 1.0,
        }
    }
}

/// Inputs of an SCEQ run.
#[derive(Debug, Clone)]
pub struct SceqProblem {
    pub params: ModelParams,
    pub paths: ExogenousPaths,
    pub init: StateVector,
    pub discrete: DiscreteModel,
    /// Discrete state at period 0.
    pub init_state: usize,
}

/// Simulated certainty-equivalent solution.
///
/// At each simulated state the deterministic program is re-solved with the
/// productivity path scaled by the conditional mean of zeta and tipping
/// damage replaced by its conditional mean (hazard held at the current
/// temperature); the first decision is applied and the true shocks drawn.
impl SceqProblem {
    /// Chains selected by `cfg`, starting from the calibrated initial state
    /// with zeta = 1 and no tipping.
    pub fn from_calibration(cal: &Calibration, cfg: &SceqConfig) -> Result<Self> {
        let lrr = if cfg.lrr {
            discretize_lrr(&cal.lrr.scale_variance(cfg.variance_scale))?
        } else {
            discretize_lrr(&LrrParams::degenerate())?
        };
        let tip = if cfg.tipping && cal.params.tipping.lambda > 0.0 {
            build_tipping_chain(&cal.params, &cal.tipping)?
        } else {
            TippingChain::none(cal.params.step_years)
        };
        let discrete = DiscreteModel::new(lrr, tip);
        let init_state = discrete.index(discrete.lrr.center(), 0);
        let mut init = cal.initial;
        init.zeta = 1.0;
        init.chi = 0.0;
        init.j_index = 0;
        Ok(SceqProblem {
            params: cal.params.clone(),
            paths: cal.paths.clone(),
            init,
            discrete,
            init_state,
        })
    }
}

pub fn sceq_solve(problem: &SceqProblem, cfg: &SceqConfig) -> Result<(PathEnsemble, SceqStats)> {
    let p = &problem.params;
    if !EZParams::from_params(p).is_time_separable() {
        return Err(IamError::config(
            "SCEQ re-solves a deterministic program and needs gamma = 1/psi",
        ));
    }
    if cfg.sim_periods == 0 || cfg.n_paths == 0 {
        return Err(IamError::config("SCEQ needs at least one path and one period"));
    }
    if cfg.shrinking && cfg.sim_periods > cfg.horizon {
        return Err(IamError::config(format!(
            "cannot simulate {} periods of a {}-period shrinking plan",
            cfg.sim_periods, cfg.horizon
        )));
    }
    let last_needed = if cfg.shrinking {
        cfg.horizon + cfg.extra_periods
    } else {
        cfg.sim_periods + cfg.horizon + cfg.extra_periods
    };
    if problem.paths.len() < last_needed {
        return Err(IamError::config(format!(
            "exogenous paths cover {} periods, SCEQ needs {last_needed}",
            problem.paths.len()
        )));
    }
    let unit = p.scc_unit;
    let dm = &problem.discrete;
    let rows: Vec<(Vec<[f64; SIM_VARIABLES.len()]>, Vec<usize>, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| -> Result<_> {
            let mut x = problem.init.continuous();
            let mut d = problem.init_state;
            let mut prev: Option<Vec<f64>> = None;
            let mut rows = Vec::with_capacity(cfg.sim_periods);
            let mut states = Vec::with_capacity(cfg.sim_periods);
            let mut failed = false;
            for t in 0..cfg.sim_periods {
                let mut step = || -> Result<([f64; SIM_VARIABLES.len()], [f64; N_CONT])> {
                    let n_rem = if cfg.shrinking { cfg.horizon - t } else { cfg.horizon };
                    let total = n_rem + cfg.extra_periods;
                    let (a, j) = dm.split(d);
                    let mut sp = problem.paths.shifted(t);
                    // conditional mean of zeta along the plan
                    let mut dist = vec![0.0; dm.lrr.len()];
                    dist[a] = 1.0;
                    for tau in 0..total {
                        sp.a[tau] *= dm.lrr.mean_zeta(&dist);
                        dist = dm.lrr.propagate(&dist);
                    }
                    // conditional mean of tipping damage
                    let tm = dm.tip.transition_matrix(x[IDX_TAT]);
                    let mut jd = vec![0.0; dm.tip.len()];
                    jd[j] = 1.0;
                    let mut tip_path = Vec::with_capacity(n_rem);
                    for _ in 0..n_rem {
                        tip_path.push(jd.iter().zip(&dm.tip.levels).map(|(q, l)| q * l).sum::<f64>());
                        let mut nj = vec![0.0; jd.len()];
                        for (i, qi) in jd.iter().enumerate() {
                            for (k, pk) in tm[i].iter().enumerate() {
                                nj[k] += qi * pk;
                            }
                        }
                        jd = nj;
                    }
                    let terminal_tip: f64 = jd.iter().enumerate().map(|(i, q)| q * dm.tip.long_run_damage(i)).sum();

                    let horizon = Horizon::new(
                        n_rem,
                        p.step_years,
                        TerminalRule::FixedSavings {
                            extra_periods: cfg.extra_periods,
                        },
                    )?;
                    let mut start = problem.init.with_continuous(&x);
                    start.zeta = 1.0;
                    let mut dp = DetProblem::new(p, &sp, horizon, &start)?;
                    dp.tip_damage = tip_path;
                    dp.tip_damage.resize(total, terminal_tip);
                    dp.terminal_tip_damage = terminal_tip;
                    let guess = prev.as_ref().map(|g| shift_guess(g, n_rem));
                    let traj = dp.solve(guess.as_deref(), &DetOptions::default())?;
                    let s = traj.savings[0];
                    let mu = traj.decisions[0].mu;
                    prev = Some(traj.decision_vector());

                    let mut exo = problem.paths.exo(t);
                    let tax = model::carbon_tax(mu, exo.theta1, p.theta2, exo.sigma)? * unit;
                    exo.a *= dm.zeta(d);
                    let prod = production(p, &exo, &x, mu, dm.tip_damage(d), StepKind::Controlled)?;
                    let c = (1.0 - s) * prod.y_net;
                    let next = model::advance(p, &x, &prod, c);
                    if !(next[0] > 0.0) {
                        return Err(IamError::Infeasible {
                            period: t,
                            detail: "SCEQ step leaves non-positive capital".into(),
                        });
                    }
                    Ok((
                        [
                            x[0],
                            x[1],
                            x[2],
                            x[3],
                            x[4],
                            x[5],
                            c,
                            mu,
                            s,
                            prod.emissions,
                            traj.state_scc[0],
                            tax,
                            dm.zeta(d),
                            dm.tip_damage(d),
                            j as f64,
                        ],
                        next,
                    ))
                };
                match step() {
                    Ok((row, next)) => {
                        rows.push(row);
                        states.push(d);
                        let succ = dm.successors(d, x[IDX_TAT]);
                        d = draw(&succ, path_uniform(cfg.seed, path, t));
                        x = next;
                    }
                    Err(e) if e.exit_code() == 2 => return Err(e),
                    Err(e) => {
                        log::warn!("SCEQ path {path} failed at period {t}: {e}");
                        failed = true;
                        break;
                    }
                }
            }
            Ok((rows, states, failed))
        })
        .collect::<Result<Vec<_>>>()?;
    let failed = rows.iter().filter(|r| r.2).count();
    if failed as f64 > MAX_FAILED_PATH_FRAC * cfg.n_paths as f64 {
        return Err(IamError::numerical(format!(
            "{failed} of {} SCEQ paths failed (limit {:.0}%)",
            cfg.n_paths,
            MAX_FAILED_PATH_FRAC * 100.0
        )));
    }
    let mut ens = PathEnsemble::new(cfg.n_paths, cfg.sim_periods, p);
    for (i, (r, s, _)) in rows.iter().enumerate() {
        ens.set_path(i, r, s);
    }
    Ok((ens, SceqStats { failed_paths: failed }))
}

/// Share of SCEQ paths allowed to fail before the run is rejected.
pub const MAX_FAILED_PATH_FRAC: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SceqStats {
    /// Paths whose re-solve failed; their remaining rows are NaN.
    pub failed_paths: usize,
}

/// Previous plan `[s.., mu..]` advanced by one period to length `n`.
fn shift_guess(prev: &[f64], n: usize) -> Vec<f64> {
    let m = prev.len() / 2;
    let pick = |v: &[f64], i: usize| v[(i + 1).min(m - 1)];
    let (s, mu) = prev.split_at(m);
    let mut out: Vec<f64> = (0..n).map(|i| pick(s, i)).collect();
    out.extend((0..n).map(|i| pick(mu, i)));
    out
}

/// Mean consumption and SCC at each period across paths.
pub fn ensemble_means(ens: &PathEnsemble) -> Vec<[f64; 2]> {
    (0..ens.n_periods)
        .map(|t| {
            let c = ens.cross_section(t, V_C);
            let s = ens.cross_section(t, V_SCC);
            [
                c.iter().sum::<f64>() / c.len() as f64,
                s.iter().sum::<f64>() / s.len() as f64,
            ]
        })
        .collect()
}
