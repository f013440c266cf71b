//! Stochastic dynamic programming over the six continuous climate-economy
//! states and a discrete chain combining long-run productivity risk with
//! climate tipping.
//!
//! Value functions are complete-basis Chebyshev approximations on
//! per-period boxes. Boxes are built forward by pushing the corners of each
//! box through the transition at the extreme decisions and shocks; all
//! transition coordinates are monotone in each argument, so every successor
//! of a point in `D_t` under admissible decisions lies in `D_{t+1}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{
    build_time_varying_domains, cheb_nodes, corners, fit_with_basis, Basis, ChebApprox, ClampCounter, Domain, NodeGrid,
};
use crate::calibration::Calibration;
use crate::det::{DetOptions, DetProblem, Horizon, TerminalRule, SAVINGS_MAX, SAVINGS_MIN};
use crate::error::{IamError, Result};
use crate::model::{
    emissions, marginal_utility, production, utility_unchecked, Exo, ExogenousPaths, ModelParams, StateVector,
    StepKind, IDX_K, IDX_MAT, IDX_TAT, N_CONT,
};
use crate::optim::{minimize_box, OptimOptions};
use crate::stochastic::{build_tipping_chain, discretize_lrr, power_mean, EZParams, MarkovChain, TippingChain};

/// How simulated paths obtain decisions from a solved model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLookup {
    /// Fitted Chebyshev policy functions.
    #[default]
    Fitted,
    /// Stored decision at the nearest approximation node.
    NearestNode,
    /// Solve the node problem at the simulated state.
    Reoptimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VfiConfig {
    /// Controlled periods; a terminal value closes the horizon.
    pub periods: usize,
    pub degree: usize,
    /// Chebyshev nodes per dimension (default `degree + 1`).
    pub points_per_dim: Option<usize>,
    /// Admissible savings rates.
    pub savings_band: [f64; 2],
    /// Half-widths `[savings, mu]` of per-period decision bands centred on
    /// the matched deterministic path; `None` uses the full savings band and
    /// `[0, mu_max]` in every period.
    pub reference_band: Option<[f64; 2]>,
    /// Half-width of the initial box relative to each initial coordinate.
    pub initial_rel_width: f64,
    /// Absolute floor on the initial half-width.
    pub initial_abs_width: f64,
    /// Each box is widened by this fraction of its width.
    pub margin: f64,
    /// Largest admissible box width relative to the initial box.
    pub width_cap: f64,
    /// Starting points per node optimization.
    pub multistart: usize,
    /// Zero-emission periods valued by the terminal function.
    pub terminal_periods: usize,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Tolerated share of node optimizations that miss `node_tol`.
    pub max_failure_frac: f64,
    /// Required projected-gradient norm of the scaled node objective.
    pub node_tol: f64,
    pub lrr: bool,
    pub tipping: bool,
    /// Multiplies both long-run-risk innovation variances.
    pub variance_scale: f64,
    /// Periods merged into one model step.
    pub time_coarsen: usize,
    pub lookup: PolicyLookup,
}

impl Default for VfiConfig {
    fn default() -> Self {
        VfiConfig {
            periods: 20,
            degree: 4,
            points_per_dim: None,
            savings_band: [0.18, 0.34],
            reference_band: Some([0.04, 0.15]),
            initial_rel_width: 0.05,
            initial_abs_width: 0.01,
            margin: 0.05,
            width_cap: 1000.0,
            multistart: 3,
            terminal_periods: 80,
            checkpoint_every: 10,
            checkpoint_dir: None,
            max_failure_frac: 1e-3,
            node_tol: 1e-7,
            lrr: true,
            tipping: true,
            variance_scale: 1.0,
            time_coarsen: 1,
            lookup: PolicyLookup::Fitted,
        }
    }
}

impl VfiConfig {
    pub fn points(&self) -> usize {
        self.points_per_dim.unwrap_or(self.degree + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IamError::config(m));
        if self.periods == 0 {
            return bad("vfi needs at least one period".into());
        }
        if self.degree == 0 {
            return bad("vfi degree must be at least 1".into());
        }
        if self.points() < self.degree + 1 {
            return bad(format!(
                "{} nodes per dimension cannot carry degree {}",
                self.points(),
                self.degree
            ));
        }
        if N_CONT * (self.degree + 1) > 256 {
            return bad(format!("degree {} is too large", self.degree));
        }
        let [lo, hi] = self.savings_band;
        if !(lo >= SAVINGS_MIN && lo < hi && hi <= SAVINGS_MAX) {
            return bad(format!(
                "savings band [{lo}, {hi}] must be increasing inside [{SAVINGS_MIN}, {SAVINGS_MAX}]"
            ));
        }
        if !(self.initial_rel_width >= 0.0 && self.initial_abs_width >= 0.0)
            || self.initial_rel_width + self.initial_abs_width == 0.0
        {
            return bad("initial box widths must be non-negative and not both zero".into());
        }
        if !(self.margin >= 0.0 && self.width_cap > 1.0) {
            return bad("margin must be non-negative and width_cap above 1".into());
        }
        if let Some([ds, dm]) = self.reference_band {
            if !(ds > 0.0 && dm > 0.0) {
                return bad("reference band half-widths must be positive".into());
            }
        }
        if self.multistart == 0 {
            return bad("multistart must be at least 1".into());
        }
        if !(self.variance_scale >= 0.0) {
            return bad("variance_scale must be non-negative".into());
        }
        if self.time_coarsen == 0 {
            return bad("time_coarsen must be at least 1".into());
        }
        if !(self.node_tol > 0.0 && (0.0..=1.0).contains(&self.max_failure_frac)) {
            return bad("node_tol must be positive and max_failure_frac in [0, 1]".into());
        }
        Ok(())
    }
}

/// Product of the long-run-risk chain and the tipping chain.
/// State `d = a * n_tip + j` pairs LRR node `a` with tipping state `j`.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub lrr: MarkovChain,
    pub tip: TippingChain,
    lrr_succ: Vec<Vec<(usize, f64)>>,
}

impl DiscreteModel {
    pub fn new(lrr: MarkovChain, tip: TippingChain) -> Self {
        let lrr_succ = (0..lrr.len()).map(|a| lrr.successors(a)).collect();
        DiscreteModel { lrr, tip, lrr_succ }
    }

    pub fn len(&self) -> usize {
        self.lrr.len() * self.tip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, a: usize, j: usize) -> usize {
        a * self.tip.len() + j
    }

    pub fn split(&self, d: usize) -> (usize, usize) {
        (d / self.tip.len(), d % self.tip.len())
    }

    pub fn zeta(&self, d: usize) -> f64 {
        self.lrr.nodes[self.split(d).0][0]
    }

    pub fn chi(&self, d: usize) -> f64 {
        self.lrr.nodes[self.split(d).0][1]
    }

    pub fn tip_damage(&self, d: usize) -> f64 {
        self.tip.levels[self.split(d).1]
    }

    pub fn long_run_damage(&self, d: usize) -> f64 {
        self.tip.long_run_damage(self.split(d).1)
    }

    /// Successor distribution given current atmospheric temperature.
    pub fn successors(&self, d: usize, t_at: f64) -> Vec<(usize, f64)> {
        let (a, j) = self.split(d);
        let row = self.tip.transition_row(j, t_at);
        let mut out = Vec::with_capacity(self.lrr_succ[a].len() * row.len());
        for (b, pb) in &self.lrr_succ[a] {
            for (k, pk) in &row {
                out.push((self.index(*b, *k), pb * pk));
            }
        }
        out
    }

    fn reachable_from(&self, d: usize) -> Vec<usize> {
        let (a, j) = self.split(d);
        let mut out = Vec::new();
        for (b, _) in &self.lrr_succ[a] {
            for k in self.tip.reachable_from(j) {
                out.push(self.index(*b, k));
            }
        }
        out
    }

    /// Sorted sets of states reachable at `0..=periods` from `start`.
    pub fn reachable_sets(&self, start: usize, periods: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![vec![start]];
        for _ in 0..periods {
            let mut mark = vec![false; self.len()];
            for d in sets.last().unwrap() {
                for e in self.reachable_from(*d) {
                    mark[e] = true;
                }
            }
            sets.push((0..self.len()).filter(|d| mark[*d]).collect());
        }
        sets
    }
}

/// Model and solver settings for one stochastic solve.
#[derive(Debug, Clone)]
pub struct VfiModel {
    pub params: ModelParams,
    pub paths: ExogenousPaths,
    pub init: StateVector,
    pub discrete: DiscreteModel,
    pub ez: EZParams,
    pub config: VfiConfig,
    /// Discrete state at period 0.
    pub init_state: usize,
    /// Per-period decision bounds `([s_lo, mu_lo], [s_hi, mu_hi])`.
    pub bands: Vec<([f64; 2], [f64; 2])>,
}

impl VfiModel {
    pub fn new(
        params: &ModelParams,
        paths: &ExogenousPaths,
        init: &StateVector,
        discrete: DiscreteModel,
        config: &VfiConfig,
    ) -> Result<Self> {
        params.validate()?;
        paths.validate()?;
        init.validate()?;
        config.validate()?;
        if !(params.beta < 1.0) {
            return Err(IamError::config(format!(
                "discount factor {} must be below 1",
                params.beta
            )));
        }
        if (params.psi - 1.0).abs() < 1e-12 {
            return Err(IamError::config("psi = 1 is not supported by the stochastic solver"));
        }
        let need = config.periods + config.terminal_periods;
        if paths.len() < need {
            return Err(IamError::config(format!(
                "exogenous paths cover {} periods but the stochastic horizon needs {need}",
                paths.len()
            )));
        }
        let a = nearest(&discrete.lrr.log_zeta_grid, init.zeta.ln());
        let i = nearest(&discrete.lrr.chi_grid, init.chi);
        if init.j_index >= discrete.tip.len() {
            return Err(IamError::config(format!(
                "initial tipping state {} out of range",
                init.j_index
            )));
        }
        let init_state = discrete.index(discrete.lrr.index(a, i), init.j_index);
        let [s_lo, s_hi] = config.savings_band;
        let bands = match config.reference_band {
            None => vec![([s_lo, 0.0], [s_hi, params.mu_max]); config.periods],
            Some([ds, dm]) => {
                let reference = reference_path(params, paths, init, config)?;
                reference
                    .iter()
                    .map(|[s, mu]| {
                        let lo = [(s - ds).clamp(s_lo, s_hi), (mu - dm).clamp(0.0, params.mu_max)];
                        let hi = [(s + ds).clamp(s_lo, s_hi), (mu + dm).clamp(0.0, params.mu_max)];
                        (lo, hi)
                    })
                    .collect()
            }
        };
        if let Some(t) = bands.iter().position(|(lo, hi)| !(lo[0] < hi[0] && lo[1] < hi[1])) {
            return Err(IamError::config(format!("decision band at period {t} is empty")));
        }
        Ok(VfiModel {
            params: params.clone(),
            paths: paths.clone(),
            init: *init,
            discrete,
            ez: EZParams::from_params(params),
            config: config.clone(),
            init_state,
            bands,
        })
    }

    /// Builds chains and applies the coarsening, variance scaling and
    /// chain switches of `config`.
    pub fn from_calibration(cal: &Calibration, config: &VfiConfig) -> Result<Self> {
        config.validate()?;
        let k = config.time_coarsen;
        let params = cal.params.coarsen(k);
        let paths = cal.paths.coarsen(k);
        let lrr = if config.lrr {
            discretize_lrr(&cal.lrr.scale_variance(config.variance_scale))?
        } else {
            discretize_lrr(&crate::stochastic::LrrParams::degenerate())?
        };
        let tip = if config.tipping && params.tipping.lambda > 0.0 {
            build_tipping_chain(&params, &cal.tipping)?
        } else {
            TippingChain::none(params.step_years)
        };
        let mut init = cal.initial;
        init.zeta = 1.0;
        init.chi = 0.0;
        init.j_index = 0;
        VfiModel::new(&params, &paths, &init, DiscreteModel::new(lrr, tip), config)
    }

    pub fn n_periods(&self) -> usize {
        self.config.periods
    }

    fn exo(&self, t: usize, d: usize) -> Exo {
        let mut e = self.paths.exo(t);
        e.a *= self.discrete.zeta(d);
        e
    }

    /// Decision bounds `([s_lo, mu_lo], [s_hi, mu_hi])` at period `t`.
    pub fn bounds(&self, t: usize) -> ([f64; 2], [f64; 2]) {
        self.bands[t.min(self.bands.len() - 1)]
    }

    /// Whether a decision sits on a band edge that is not a natural bound.
    pub fn band_active(&self, t: usize, s: f64, mu: f64) -> bool {
        let (lo, hi) = self.bounds(t);
        let [g_lo, g_hi] = self.config.savings_band;
        let tol = 1e-9;
        (s <= lo[0] + tol && lo[0] > g_lo)
            || (s >= hi[0] - tol && hi[0] < g_hi)
            || (mu <= lo[1] + tol && lo[1] > 0.0)
            || (mu >= hi[1] - tol && hi[1] < self.params.mu_max)
    }

    /// Continuous successor, consumption and industrial-plus-land emissions.
    pub fn transition(
        &self,
        t: usize,
        x: &[f64; N_CONT],
        d: usize,
        s: f64,
        mu: f64,
    ) -> Result<([f64; N_CONT], f64, f64)> {
        let exo = self.exo(t, d);
        let prod = production(
            &self.params,
            &exo,
            x,
            mu,
            self.discrete.tip_damage(d),
            StepKind::Controlled,
        )?;
        if !(prod.y_net > 0.0) {
            return Err(IamError::Infeasible {
                period: t,
                detail: format!("net output {} is not positive", prod.y_net),
            });
        }
        let c = (1.0 - s) * prod.y_net;
        let next = crate::model::advance(&self.params, x, &prod, c);
        Ok((next, c, prod.emissions))
    }

    /// Period utility of a decision.
    pub fn utility(&self, t: usize, x: &[f64; N_CONT], d: usize, s: f64, mu: f64) -> Result<f64> {
        let (_, c, _) = self.transition(t, x, d, s, mu)?;
        Ok(utility_unchecked(c, self.paths.l[t], self.params.psi))
    }

    /// Initial approximation box.
    pub fn initial_domain(&self) -> Result<Domain> {
        Domain::around(
            &self.init.continuous(),
            self.config.initial_rel_width,
            self.config.initial_abs_width,
        )
    }

    /// Boxes `D_0 ..= D_N` built from the reachable discrete sets.
    pub fn domains(&self, reachable: &[Vec<usize>]) -> Result<Vec<Domain>> {
        build_time_varying_domains(
            &self.initial_domain()?,
            self.n_periods(),
            self.config.margin,
            self.config.width_cap,
            |t, dom| {
                let (lo, hi) = self.bounds(t);
                let states = &reachable[t];
                let pick = |f: &dyn Fn(usize) -> f64| {
                    let v: Vec<f64> = states.iter().map(|d| f(*d)).collect();
                    let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    (mn, mx)
                };
                let (z_lo, z_hi) = pick(&|d| self.discrete.zeta(d));
                let (j_lo, j_hi) = pick(&|d| self.discrete.tip_damage(d));
                // representatives for each (zeta, damage) extreme
                let mut reps = Vec::new();
                for z in [z_lo, z_hi] {
                    for j in [j_lo, j_hi] {
                        reps.push((z, j));
                    }
                }
                let mut pts = Vec::new();
                let mut cs = corners(dom);
                if dom.lo[IDX_TAT] < 0.0 && dom.hi[IDX_TAT] > 0.0 {
                    let extra: Vec<Vec<f64>> = cs
                        .iter()
                        .map(|c| {
                            let mut c = c.clone();
                            c[IDX_TAT] = 0.0;
                            c
                        })
                        .collect();
                    cs.extend(extra);
                }
                for c in &cs {
                    let x: [f64; N_CONT] = c.as_slice().try_into().expect("six-dimensional box");
                    for (z, dmg) in &reps {
                        let mut exo = self.paths.exo(t);
                        exo.a *= z;
                        for mu in [lo[1], hi[1]] {
                            let prod = production(&self.params, &exo, &x, mu, *dmg, StepKind::Controlled)?;
                            if !(prod.y_net > 0.0) {
                                return Err(IamError::Infeasible {
                                    period: t,
                                    detail: "net output is not positive on the approximation box".into(),
                                });
                            }
                            for s in [lo[0], hi[0]] {
                                let c = (1.0 - s) * prod.y_net;
                                pts.push(crate::model::advance(&self.params, &x, &prod, c).to_vec());
                            }
                        }
                    }
                }
                Ok(pts)
            },
        )
    }

    /// Hash of everything that determines the solution.
    pub fn fingerprint(&self) -> String {
        let mut cfg = self.config.clone();
        cfg.checkpoint_dir = None;
        cfg.checkpoint_every = 0;
        cfg.lookup = PolicyLookup::default();
        let blob = serde_json::json!({
            "params": self.params,
            "paths": self.paths,
            "init": self.init,
            "lrr": self.discrete.lrr,
            "tip": self.discrete.tip,
            "config": cfg,
        })
        .to_string();
        format!("{:016x}", fnv1a(blob.as_bytes()))
    }
}

/// Deterministic optimum `[s_t, mu_t]` for the controlled periods with
/// zeta fixed at 1, no tipping damage and the same continuation.
fn reference_path(
    params: &ModelParams,
    paths: &ExogenousPaths,
    init: &StateVector,
    config: &VfiConfig,
) -> Result<Vec<[f64; 2]>> {
    let n = config.periods;
    let horizon = Horizon::new(
        n,
        params.step_years,
        TerminalRule::FixedSavings {
            extra_periods: config.terminal_periods,
        },
    )?;
    let mut start = *init;
    start.zeta = 1.0;
    let problem = DetProblem::new(params, paths, horizon, &start)?;
    let traj = problem.solve(None, &DetOptions::default())?;
    Ok((0..config.periods)
        .map(|t| [traj.savings[t], traj.decisions[t].mu])
        .collect())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn nearest(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - x).abs() < (grid[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Value function of one period, one approximation per discrete state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub t: usize,
    pub domain: Domain,
    pub approx: Vec<Option<ChebApprox>>,
}

impl ValueFunction {
    pub fn get(&self, d: usize) -> Result<&ChebApprox> {
        self.approx
            .get(d)
            .and_then(|a| a.as_ref())
            .ok_or_else(|| IamError::numerical(format!("no value function for state {d} at period {}", self.t)))
    }

    /// Value at `x`, clamped into the box (clamps are counted).
    pub fn value(&self, d: usize, x: &[f64], clamps: &ClampCounter) -> Result<f64> {
        Ok(self.get(d)?.eval_clamped(x, clamps))
    }
}

/// Node-level decisions and fitted policies of one period.
#[derive(Debug, Clone)]
pub struct PolicySlice {
    pub t: usize,
    pub grid: NodeGrid,
    /// States solved at this period, in increasing order.
    pub states: Vec<usize>,
    /// Per state (aligned with `states`), per node.
    pub node_s: Vec<Vec<f64>>,
    pub node_mu: Vec<Vec<f64>>,
    pub node_value: Vec<Vec<f64>>,
    pub s_fit: Vec<ChebApprox>,
    pub mu_fit: Vec<ChebApprox>,
    pub failures: usize,
    /// Node optima held by a reference band edge.
    pub band_active: usize,
}

impl PolicySlice {
    pub fn slot(&self, d: usize) -> Option<usize> {
        self.states.binary_search(&d).ok()
    }

    pub fn fitted(&self, d: usize, x: &[f64], lo: [f64; 2], hi: [f64; 2]) -> Option<[f64; 2]> {
        let k = self.slot(d)?;
        let mut y = x.to_vec();
        self.grid.domain.clamp(&mut y);
        Some([
            self.s_fit[k].eval(&y).clamp(lo[0], hi[0]),
            self.mu_fit[k].eval(&y).clamp(lo[1], hi[1]),
        ])
    }

    pub fn nearest_node(&self, d: usize, x: &[f64]) -> Option<[f64; 2]> {
        let k = self.slot(d)?;
        if self.node_s[k].is_empty() {
            return None;
        }
        let m = self.grid.points_per_dim;
        let mut idx = 0;
        for (i, v) in x.iter().enumerate() {
            let z = self.grid.domain.to_unit(i, *v);
            idx = idx * m + nearest(&self.grid.unit_points, z);
        }
        Some([self.node_s[k][idx], self.node_mu[k][idx]])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VfiStats {
    pub node_solves: usize,
    pub failures: usize,
    pub band_active: usize,
    /// Clamp events during the backward sweep.
    pub clamps: usize,
    pub seconds: Vec<f64>,
    pub resumed_from: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct VfiSolution {
    pub model: VfiModel,
    pub domains: Vec<Domain>,
    pub reachable: Vec<Vec<usize>>,
    /// `values[t]` for `t = 0..=N`.
    pub values: Vec<ValueFunction>,
    /// `policies[t]` for `t < N`. Periods restored from a checkpoint have
    /// fitted policies but empty node arrays.
    pub policies: Vec<PolicySlice>,
    pub stats: VfiStats,
}

/// Welfare of the zero-emission fixed-savings rollout from `x` at period `t0`.
pub fn terminal_rollout(
    params: &ModelParams,
    paths: &ExogenousPaths,
    x: &[f64; N_CONT],
    zeta: f64,
    tip_damage: f64,
    t0: usize,
    periods: usize,
) -> Result<f64> {
    if !(params.beta < 1.0) {
        return Err(IamError::config(format!(
            "terminal value needs beta < 1, got {}",
            params.beta
        )));
    }
    if paths.len() < t0 + periods {
        return Err(IamError::config(format!(
            "exogenous paths cover {} periods, terminal rollout needs {}",
            paths.len(),
            t0 + periods
        )));
    }
    let s = 1.0 - params.terminal_consumption_share;
    let mut state = *x;
    let mut v = 0.0;
    let mut w = 1.0;
    for tau in 0..periods {
        let mut exo = paths.exo(t0 + tau);
        exo.a *= zeta;
        let prod = production(params, &exo, &state, 0.0, tip_damage, StepKind::ZeroEmission)?;
        if !(prod.y_net > 0.0) {
            return Err(IamError::Infeasible {
                period: t0 + tau,
                detail: "terminal rollout has non-positive output".into(),
            });
        }
        let c = (1.0 - s) * prod.y_net;
        v += w * utility_unchecked(c, exo.l, params.psi);
        state = crate::model::advance(params, &state, &prod, c);
        w *= params.beta;
    }
    Ok(v)
}

/// Terminal value `V_N` on `domain` for each state in `states`.
pub fn terminal_value(model: &VfiModel, domain: &Domain, states: &[usize]) -> Result<ValueFunction> {
    let cfg = &model.config;
    let t_n = cfg.periods;
    let grid = cheb_nodes(domain, cfg.points())?;
    let basis = std::sync::Arc::new(Basis::new(N_CONT, cfg.degree));
    let nodes = grid.nodes();
    let mut approx = vec![None; model.discrete.len()];
    for d in states {
        let zeta = model.discrete.zeta(*d);
        let dmg = model.discrete.long_run_damage(*d);
        let vals = nodes
            .par_iter()
            .map(|x| {
                let x: [f64; N_CONT] = x.as_slice().try_into().expect("six-dimensional node");
                terminal_rollout(&model.params, &model.paths, &x, zeta, dmg, t_n, cfg.terminal_periods)
            })
            .collect::<Result<Vec<f64>>>()?;
        approx[*d] = Some(fit_with_basis(&grid, basis.clone(), &vals)?);
    }
    Ok(ValueFunction {
        t: t_n,
        domain: domain.clone(),
        approx,
    })
}

/// Chebyshev values `T_0..T_d` and derivatives at `z`.
#[inline]
fn cheb_row(z: f64, d1: usize, t: &mut [f64], dt: &mut [f64]) {
    t[0] = 1.0;
    dt[0] = 0.0;
    if d1 > 1 {
        t[1] = z;
        dt[1] = 1.0;
    }
    for i in 1..d1.saturating_sub(1) {
        t[i + 1] = 2.0 * z * t[i] - t[i - 1];
        dt[i + 1] = 2.0 * t[i] + 2.0 * z * dt[i] - dt[i - 1];
    }
}

/// Chebyshev tables of the decision-independent successor coordinates
/// (M_UO, M_DO, T_AT, T_OC) in the unit box of `next`.
fn fixed_tables(next: &Domain, xp: &[f64; N_CONT], d1: usize, clamps: &ClampCounter) -> Vec<f64> {
    let mut tab = vec![0.0; 4 * d1];
    let mut dummy = vec![0.0; d1];
    let mut clamped = false;
    for (r, i) in (2..N_CONT).enumerate() {
        let mut z = next.to_unit(i, xp[i]);
        if !(-1.0..=1.0).contains(&z) {
            clamped = true;
            z = z.clamp(-1.0, 1.0);
        }
        cheb_row(z, d1, &mut tab[r * d1..(r + 1) * d1], &mut dummy);
    }
    if clamped {
        clamps.hit();
    }
    tab
}

/// Collapses a six-dimensional approximation onto the (K, M_AT) plane with
/// the other coordinates fixed: `out[a * d1 + b]` multiplies `T_a(z_K) T_b(z_M)`.
fn reduce(approx: &ChebApprox, tab: &[f64], d1: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (c, term) in approx.coeffs.iter().zip(&approx.basis().terms) {
        let g = tab[term[2] as usize]
            * tab[d1 + term[3] as usize]
            * tab[2 * d1 + term[4] as usize]
            * tab[3 * d1 + term[5] as usize];
        out[term[0] as usize * d1 + term[1] as usize] += c * g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSolution {
    pub s: f64,
    pub mu: f64,
    pub value: f64,
    pub pg_norm: f64,
    pub converged: bool,
}

/// One-period problem at a state: choose `(s, mu)` to maximize current
/// utility plus the discounted certainty equivalent of next-period values.
pub(crate) struct NodeProblem<'a> {
    model: &'a VfiModel,
    t: usize,
    x: [f64; N_CONT],
    l: f64,
    y: f64,
    omega: f64,
    sigma: f64,
    theta1: f64,
    e_land: f64,
    m_base: f64,
    probs: Vec<f64>,
    reduced: Vec<f64>,
    d1: usize,
    k_dom: (f64, f64),
    m_dom: (f64, f64),
}

impl<'a> NodeProblem<'a> {
    /// Problem at `(t, x, d)` against `v_next`; `reduced_cache` may supply
    /// pre-reduced successor approximations keyed by state.
    pub(crate) fn new(
        model: &'a VfiModel,
        t: usize,
        x: &[f64; N_CONT],
        d: usize,
        v_next: &ValueFunction,
        reduced_cache: Option<&BTreeMap<usize, Vec<f64>>>,
        clamps: &ClampCounter,
    ) -> Result<Self> {
        let d1 = model.config.degree + 1;
        let exo = model.exo(t, d);
        let prod = production(
            &model.params,
            &exo,
            x,
            0.0,
            model.discrete.tip_damage(d),
            StepKind::Controlled,
        )?;
        let xp = crate::model::advance(&model.params, x, &prod, 0.0);
        let succ = model.discrete.successors(d, x[IDX_TAT]);
        let mut probs = Vec::with_capacity(succ.len());
        let mut reduced = vec![0.0; succ.len() * d1 * d1];
        let mut tab = None;
        for (k, (e, p)) in succ.iter().enumerate() {
            probs.push(*p);
            let dst = &mut reduced[k * d1 * d1..(k + 1) * d1 * d1];
            match reduced_cache.and_then(|c| c.get(e)) {
                Some(r) => dst.copy_from_slice(r),
                None => {
                    let tab = tab.get_or_insert_with(|| fixed_tables(&v_next.domain, &xp, d1, clamps));
                    reduce(v_next.get(*e)?, tab, d1, dst);
                }
            }
        }
        let dom = &v_next.domain;
        let pm = &model.params.phi_m;
        Ok(NodeProblem {
            model,
            t,
            x: *x,
            l: exo.l,
            y: prod.y,
            omega: prod.omega,
            sigma: exo.sigma,
            theta1: exo.theta1,
            e_land: exo.e_land,
            m_base: pm[0][0] * x[1] + pm[0][1] * x[2] + pm[0][2] * x[3],
            probs,
            reduced,
            d1,
            k_dom: (dom.lo[IDX_K], dom.hi[IDX_K]),
            m_dom: (dom.lo[IDX_MAT], dom.hi[IDX_MAT]),
        })
    }

    /// Successor (K, M_AT) of a decision.
    fn successor_km(&self, s: f64, mu: f64) -> Result<(f64, f64, f64, f64)> {
        let p = &self.model.params;
        let mu_c = mu.max(0.0);
        let abate = self.theta1 * mu_c.powf(p.theta2) * self.y;
        let y_net = self.omega * self.y - abate;
        if !(y_net > 0.0) {
            return Err(IamError::domain(
                "bellman",
                format!("net output {y_net} is not positive"),
            ));
        }
        let kp = (1.0 - p.delta) * self.x[IDX_K] + s * y_net;
        let mp = self.m_base + emissions(self.sigma, mu, self.y, self.e_land);
        Ok((kp, mp, y_net, abate))
    }

    /// Whether the successor of `(s, mu)` leaves the next box in K or M_AT.
    pub(crate) fn exits(&self, s: f64, mu: f64) -> bool {
        match self.successor_km(s, mu) {
            Ok((kp, mp, _, _)) => kp < self.k_dom.0 || kp > self.k_dom.1 || mp < self.m_dom.0 || mp > self.m_dom.1,
            Err(_) => true,
        }
    }

    /// Objective value and gradient with respect to `(s, mu)`.
    pub(crate) fn eval(&self, s: f64, mu: f64) -> Result<(f64, [f64; 2])> {
        let p = &self.model.params;
        let d1 = self.d1;
        let (kp, mp, y_net, _) = self.successor_km(s, mu)?;
        let mu_c = mu.max(0.0);
        let dab = if mu_c > 0.0 {
            self.theta1 * p.theta2 * mu_c.powf(p.theta2 - 1.0) * self.y
        } else {
            0.0
        };
        let c = (1.0 - s) * y_net;
        if !(c > 0.0) {
            return Err(IamError::domain("bellman", "consumption is not positive"));
        }
        let u = utility_unchecked(c, self.l, p.psi);
        let up = marginal_utility(c, self.l, p.psi);

        let unit = |v: f64, (lo, hi): (f64, f64)| {
            let z = (2.0 * v - lo - hi) / (hi - lo);
            let scale = 2.0 / (hi - lo);
            if z > 1.0 {
                (1.0, 0.0)
            } else if z < -1.0 {
                (-1.0, 0.0)
            } else {
                (z, scale)
            }
        };
        let (zk, sk) = unit(kp, self.k_dom);
        let (zm, sm) = unit(mp, self.m_dom);
        let mut tk = [0.0; 32];
        let mut dtk = [0.0; 32];
        let mut tm = [0.0; 32];
        let mut dtm = [0.0; 32];
        cheb_row(zk, d1, &mut tk, &mut dtk);
        cheb_row(zm, d1, &mut tm, &mut dtm);

        let n = self.probs.len();
        let mut vals = [0.0; 64];
        let mut gks = [0.0; 64];
        let mut gms = [0.0; 64];
        let mut vals_h;
        let mut gk_h;
        let mut gm_h;
        let (vals, gks, gms): (&mut [f64], &mut [f64], &mut [f64]) = if n <= 64 {
            (&mut vals[..n], &mut gks[..n], &mut gms[..n])
        } else {
            vals_h = vec![0.0; n];
            gk_h = vec![0.0; n];
            gm_h = vec![0.0; n];
            (&mut vals_h, &mut gk_h, &mut gm_h)
        };
        for k in 0..n {
            let r = &self.reduced[k * d1 * d1..(k + 1) * d1 * d1];
            let (mut v, mut gk, mut gm) = (0.0, 0.0, 0.0);
            for a in 0..d1 {
                let row = &r[a * d1..(a + 1) * d1];
                let (mut sv, mut sd) = (0.0, 0.0);
                for b in 0..d1 - a {
                    sv += row[b] * tm[b];
                    sd += row[b] * dtm[b];
                }
                v += tk[a] * sv;
                gk += dtk[a] * sv;
                gm += tk[a] * sd;
            }
            vals[k] = v;
            gks[k] = gk * sk;
            gms[k] = gm * sm;
        }

        let beta = p.beta;
        let ez = &self.model.ez;
        let (cont, g_k, g_m) = if ez.is_time_separable() {
            let mut ev = 0.0;
            let mut gk = 0.0;
            let mut gm = 0.0;
            for k in 0..n {
                ev += self.probs[k] * vals[k];
                gk += self.probs[k] * gks[k];
                gm += self.probs[k] * gms[k];
            }
            (beta * ev, beta * gk, beta * gm)
        } else {
            let xi = ez.xi();
            let theta = ez.theta();
            let scaled: Vec<f64> = vals.iter().map(|v| xi * v).collect();
            if let Some(bad) = scaled.iter().find(|v| !(**v > 0.0)) {
                return Err(IamError::domain(
                    "bellman",
                    format!("continuation value {} has the wrong sign for the recursion", xi * bad),
                ));
            }
            let ce = power_mean(&scaled, &self.probs, theta);
            let mut gk = 0.0;
            let mut gm = 0.0;
            for k in 0..n {
                let w = self.probs[k] * (scaled[k] / ce).powf(theta - 1.0);
                gk += w * gks[k];
                gm += w * gms[k];
            }
            (beta * xi * ce, beta * gk, beta * gm)
        };
        let obj = u + cont;
        let ds = -up * y_net + g_k * y_net;
        let dmu = -up * (1.0 - s) * dab - g_k * s * dab - g_m * self.sigma * self.y;
        Ok((obj, [ds, dmu]))
    }

    /// Maximizes from each start and keeps the best converged result
    /// (or the best overall when none converges).
    pub(crate) fn optimize(&self, starts: &[[f64; 2]]) -> Result<NodeSolution> {
        let (lo, hi) = self.model.bounds(self.t);
        let tol = self.model.config.node_tol;
        let opts = OptimOptions {
            max_iter: 200,
            pg_tol: tol * 1e-4,
            memory: 5,
            newton_iters: 4,
            fd_step: 1e-6,
        };
        let mut best: Option<NodeSolution> = None;
        let mut last_err = None;
        for x0 in starts {
            let x0 = [x0[0].clamp(lo[0], hi[0]), x0[1].clamp(lo[1], hi[1])];
            let scale = match self.eval(x0[0], x0[1]) {
                Ok((v, _)) => v.abs().max(1e-12),
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let f = |z: &[f64], g: &mut [f64]| -> Result<f64> {
                let (v, gr) = self.eval(z[0], z[1])?;
                g[0] = -gr[0] / scale;
                g[1] = -gr[1] / scale;
                Ok(-v / scale)
            };
            let res = match minimize_box(f, &x0, &lo, &hi, &opts) {
                Ok(r) => r,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let cand = NodeSolution {
                s: res.x[0],
                mu: res.x[1],
                value: -res.f * scale,
                pg_norm: res.pg_norm,
                converged: res.pg_norm <= tol,
            };
            best = Some(match best {
                None => cand,
                Some(b) => {
                    let better = match (cand.converged, b.converged) {
                        (true, false) => true,
                        (false, true) => false,
                        _ => cand.value > b.value,
                    };
                    if better {
                        cand
                    } else {
                        b
                    }
                }
            });
        }
        best.ok_or_else(|| last_err.unwrap_or_else(|| IamError::numerical("no feasible starting point")))
    }
}

fn starts_for(model: &VfiModel, t: usize, warm: Option<[f64; 2]>, previous: Option<[f64; 2]>) -> Vec<[f64; 2]> {
    let (lo, hi) = model.bounds(t);
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let mut out: Vec<[f64; 2]> = Vec::new();
    let cands = [
        warm,
        previous,
        Some(mid),
        Some([mid[0], lo[1] + 0.1 * (hi[1] - lo[1])]),
        Some([mid[0], hi[1]]),
    ];
    for c in cands.into_iter().flatten() {
        if out.len() >= model.config.multistart {
            break;
        }
        if !out
            .iter()
            .any(|o| (o[0] - c[0]).abs() < 1e-9 && (o[1] - c[1]).abs() < 1e-9)
        {
            out.push(c);
        }
    }
    out
}

/// One backward step: solves every node of `domain_t` for each state in
/// `states` against `v_next` and fits the new value and policy functions.
pub fn bellman_step(
    model: &VfiModel,
    v_next: &ValueFunction,
    t: usize,
    domain_t: &Domain,
    states: &[usize],
    warm: Option<&PolicySlice>,
    clamps: &ClampCounter,
) -> Result<(ValueFunction, PolicySlice)> {
    let cfg = &model.config;
    let d1 = cfg.degree + 1;
    let grid = cheb_nodes(domain_t, cfg.points())?;
    let basis = std::sync::Arc::new(Basis::new(N_CONT, cfg.degree));
    let next_states: Vec<usize> = (0..model.discrete.len())
        .filter(|e| v_next.approx[*e].is_some())
        .collect();
    let (lo, hi) = model.bounds(t);

    let per_node: Vec<Vec<NodeSolution>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| -> Result<Vec<NodeSolution>> {
            let x: [f64; N_CONT] = grid.node(idx).as_slice().try_into().expect("six-dimensional node");
            // successor coordinates independent of the decision are shared by all states
            let exo0 = model.paths.exo(t);
            let prod0 = production(&model.params, &exo0, &x, 0.0, 0.0, StepKind::Controlled)?;
            let xp = crate::model::advance(&model.params, &x, &prod0, 0.0);
            let tab = fixed_tables(&v_next.domain, &xp, d1, clamps);
            let mut cache = BTreeMap::new();
            for e in &next_states {
                let mut r = vec![0.0; d1 * d1];
                reduce(v_next.get(*e)?, &tab, d1, &mut r);
                cache.insert(*e, r);
            }
            let mut out = Vec::with_capacity(states.len());
            let mut previous: Option<[f64; 2]> = None;
            for d in states {
                let prob = NodeProblem::new(model, t, &x, *d, v_next, Some(&cache), clamps)?;
                let w = warm.and_then(|w| w.fitted(*d, &x, lo, hi));
                let sol = prob.optimize(&starts_for(model, t, w, previous))?;
                if prob.exits(sol.s, sol.mu) {
                    clamps.hit();
                }
                previous = Some([sol.s, sol.mu]);
                out.push(sol);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut approx = vec![None; model.discrete.len()];
    let mut node_s = Vec::with_capacity(states.len());
    let mut node_mu = Vec::with_capacity(states.len());
    let mut node_value = Vec::with_capacity(states.len());
    let mut s_fit = Vec::with_capacity(states.len());
    let mut mu_fit = Vec::with_capacity(states.len());
    let mut failures = 0;
    let mut band_active = 0;
    for (k, d) in states.iter().enumerate() {
        let sols: Vec<NodeSolution> = per_node.iter().map(|v| v[k]).collect();
        failures += sols.iter().filter(|s| !s.converged).count();
        band_active += sols.iter().filter(|s| model.band_active(t, s.s, s.mu)).count();
        let v: Vec<f64> = sols.iter().map(|s| s.value).collect();
        let sv: Vec<f64> = sols.iter().map(|s| s.s).collect();
        let mv: Vec<f64> = sols.iter().map(|s| s.mu).collect();
        approx[*d] = Some(fit_with_basis(&grid, basis.clone(), &v)?);
        s_fit.push(fit_with_basis(&grid, basis.clone(), &sv)?);
        mu_fit.push(fit_with_basis(&grid, basis.clone(), &mv)?);
        node_s.push(sv);
        node_mu.push(mv);
        node_value.push(v);
    }
    Ok((
        ValueFunction {
            t,
            domain: domain_t.clone(),
            approx,
        },
        PolicySlice {
            t,
            grid,
            states: states.to_vec(),
            node_s,
            node_mu,
            node_value,
            s_fit,
            mu_fit,
            failures,
            band_active,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct StoredApprox {
    degree: usize,
    domain: Domain,
    coeffs: Vec<f64>,
}

impl StoredApprox {
    fn from(a: &ChebApprox) -> Self {
        StoredApprox {
            degree: a.degree,
            domain: a.domain.clone(),
            coeffs: a.coeffs.clone(),
        }
    }

    fn restore(self) -> Result<ChebApprox> {
        ChebApprox::with_coeffs(self.domain, self.degree, self.coeffs)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredPeriod {
    t: usize,
    domain: Domain,
    values: Vec<(usize, StoredApprox)>,
    states: Vec<usize>,
    s_fit: Vec<StoredApprox>,
    mu_fit: Vec<StoredApprox>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: String,
    t: usize,
    stats: VfiStats,
    /// Periods `t..=N`; the last carries no policy.
    periods: Vec<StoredPeriod>,
}

pub fn checkpoint_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("vfi_checkpoint_t{t:04}.json"))
}

fn write_checkpoint(
    dir: &Path,
    fingerprint: &str,
    t: usize,
    values: &[Option<ValueFunction>],
    policies: &[Option<PolicySlice>],
    stats: &VfiStats,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| IamError::io(dir, e))?;
    let mut periods = Vec::new();
    for v in values[t..].iter().flatten() {
        let pol = policies.get(v.t).and_then(|p| p.as_ref());
        periods.push(StoredPeriod {
            t: v.t,
            domain: v.domain.clone(),
            values: v
                .approx
                .iter()
                .enumerate()
                .filter_map(|(d, a)| a.as_ref().map(|a| (d, StoredApprox::from(a))))
                .collect(),
            states: pol.map(|p| p.states.clone()).unwrap_or_default(),
            s_fit: pol
                .map(|p| p.s_fit.iter().map(StoredApprox::from).collect())
                .unwrap_or_default(),
            mu_fit: pol
                .map(|p| p.mu_fit.iter().map(StoredApprox::from).collect())
                .unwrap_or_default(),
        });
    }
    let ck = Checkpoint {
        fingerprint: fingerprint.to_string(),
        t,
        stats: stats.clone(),
        periods,
    };
    let path = checkpoint_path(dir, t);
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string(&ck).map_err(|e| IamError::Data(e.to_string()))?;
    std::fs::write(&tmp, text).map_err(|e| IamError::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| IamError::io(&path, e))?;
    Ok(())
}

/// Earliest-period checkpoint in `dir` written for this model, if any.
fn find_checkpoint(model: &VfiModel, dir: &Path, fingerprint: &str) -> Result<Option<Checkpoint>> {
    for t in 0..model.n_periods() {
        let path = checkpoint_path(dir, t);
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| IamError::io(&path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| IamError::Data(format!("{}: {e}", path.display())))?;
        if ck.fingerprint == fingerprint {
            return Ok(Some(ck));
        }
        log::warn!("ignoring checkpoint {} written for a different model", path.display());
    }
    Ok(None)
}

/// Backward value function iteration from the terminal value to period 0.
///
/// With `checkpoint_dir` set, the solved suffix is written every
/// `checkpoint_every` periods and a matching checkpoint is resumed.
/// Resumed periods carry fitted policies but no node-level data.
pub fn solve_vfi(model: &VfiModel) -> Result<VfiSolution> {
    let cfg = &model.config;
    let n = cfg.periods;
    let reachable = model.discrete.reachable_sets(model.init_state, n);
    let domains = model.domains(&reachable)?;
    let fingerprint = model.fingerprint();
    let clamps = ClampCounter::default();
    let mut stats = VfiStats::default();

    let mut values: Vec<Option<ValueFunction>> = vec![None; n + 1];
    let mut policies: Vec<Option<PolicySlice>> = vec![None; n];
    let mut start = n;
    if let Some(dir) = &cfg.checkpoint_dir {
        if let Some(ck) = find_checkpoint(model, dir, &fingerprint)? {
            log::info!("resuming value iteration from checkpoint at period {}", ck.t);
            stats = ck.stats;
            stats.resumed_from = Some(ck.t);
            start = ck.t;
            for p in ck.periods {
                let mut approx = vec![None; model.discrete.len()];
                for (d, a) in p.values {
                    approx[d] = Some(a.restore()?);
                }
                values[p.t] = Some(ValueFunction {
                    t: p.t,
                    domain: p.domain.clone(),
                    approx,
                });
                if p.t < n {
                    let grid = cheb_nodes(&p.domain, cfg.points())?;
                    policies[p.t] = Some(PolicySlice {
                        t: p.t,
                        grid,
                        node_s: vec![Vec::new(); p.states.len()],
                        node_mu: vec![Vec::new(); p.states.len()],
                        node_value: vec![Vec::new(); p.states.len()],
                        states: p.states,
                        s_fit: p.s_fit.into_iter().map(|a| a.restore()).collect::<Result<_>>()?,
                        mu_fit: p.mu_fit.into_iter().map(|a| a.restore()).collect::<Result<_>>()?,
                        failures: 0,
                        band_active: 0,
                    });
                }
            }
        }
    }
    if start == n {
        let t0 = Instant::now();
        values[n] = Some(terminal_value(model, &domains[n], &reachable[n])?);
        log::info!("terminal value fitted in {:.2}s", t0.elapsed().as_secs_f64());
    }
    for t in (0..start).rev() {
        let t0 = Instant::now();
        let (v, p) = bellman_step(
            model,
            values[t + 1].as_ref().expect("next value"),
            t,
            &domains[t],
            &reachable[t],
            policies.get(t + 1).and_then(|p| p.as_ref()),
            &clamps,
        )?;
        stats.node_solves += p.grid.len() * p.states.len();
        stats.failures += p.failures;
        stats.band_active += p.band_active;
        let secs = t0.elapsed().as_secs_f64();
        stats.seconds.push(secs);
        log::info!(
            "period {t}: {} states x {} nodes in {secs:.2}s, {} unconverged, {} on a band edge",
            p.states.len(),
            p.grid.len(),
            p.failures,
            p.band_active
        );
        let allowed = (cfg.max_failure_frac * (p.grid.len() * p.states.len()) as f64).floor() as usize;
        if p.failures > allowed {
            return Err(IamError::numerical(format!(
                "{} of {} node optimizations at period {t} missed tolerance {}",
                p.failures,
                p.grid.len() * p.states.len(),
                cfg.node_tol
            )));
        }
        values[t] = Some(v);
        policies[t] = Some(p);
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 {
                stats.clamps = clamps.get();
                write_checkpoint(dir, &fingerprint, t, &values, &policies, &stats)?;
            }
        }
    }
    stats.clamps += clamps.get();
    Ok(VfiSolution {
        model: model.clone(),
        domains,
        reachable,
        values: values.into_iter().map(|v| v.expect("all periods solved")).collect(),
        policies: policies.into_iter().map(|p| p.expect("all periods solved")).collect(),
        stats,
    })
}

impl VfiSolution {
    pub fn n_periods(&self) -> usize {
        self.model.n_periods()
    }

    /// Value at period 0 from the initial state.
    pub fn initial_value(&self) -> Result<f64> {
        let c = ClampCounter::default();
        self.values[0].value(self.model.init_state, &self.model.init.continuous(), &c)
    }

    /// Decision at `(t, x, d)` under the configured lookup.
    pub fn policy(&self, t: usize, x: &[f64; N_CONT], d: usize, clamps: &ClampCounter) -> Result<[f64; 2]> {
        if t >= self.n_periods() {
            return Err(IamError::config(format!(
                "period {t} is beyond the solved horizon {}",
                self.n_periods()
            )));
        }
        let (lo, hi) = self.model.bounds(t);
        let slice = &self.policies[t];
        if !slice.grid.domain.contains(x) {
            clamps.hit();
        }
        let fitted = slice
            .fitted(d, x, lo, hi)
            .ok_or_else(|| IamError::numerical(format!("state {d} is not reachable at period {t}")))?;
        match self.model.config.lookup {
            PolicyLookup::Fitted => Ok(fitted),
            PolicyLookup::NearestNode => Ok(slice.nearest_node(d, x).unwrap_or(fitted)),
            PolicyLookup::Reoptimize => {
                let prob = NodeProblem::new(&self.model, t, x, d, &self.values[t + 1], None, clamps)?;
                let nn = slice.nearest_node(d, x);
                let sol = prob.optimize(&starts_for(&self.model, t, Some(fitted), nn))?;
                if prob.exits(sol.s, sol.mu) {
                    clamps.hit();
                }
                Ok([sol.s, sol.mu])
            }
        }
    }

    /// Social cost of carbon at `(t, x, d)` in $/tC:
    /// `-(dV/dM_AT) / (dV/dK)` scaled by the calibration unit.
    pub fn scc(&self, t: usize, x: &[f64; N_CONT], d: usize) -> Result<f64> {
        scc_stochastic(&self.values[t], d, x, self.model.params.scc_unit)
    }
}

/// Shadow-price SCC from a fitted value function.
pub fn scc_stochastic(v: &ValueFunction, d: usize, x: &[f64; N_CONT], unit: f64) -> Result<f64> {
    let a = v.get(d)?;
    let mut y = x.to_vec();
    v.domain.clamp(&mut y);
    let (_, g) = a.eval_grad(&y);
    if !(g[IDX_K].abs() > 0.0) || !g[IDX_K].is_finite() {
        return Err(IamError::numerical(format!(
            "degenerate capital shadow value at period {}",
            v.t
        )));
    }
    Ok(-g[IDX_MAT] / g[IDX_K] * unit)
}
