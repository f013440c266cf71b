//! Deterministic optimal control by direct transcription.
//!
//! Decisions are per-period savings rates and emission control rates; the
//! welfare gradient comes from a backward adjoint sweep through the
//! transition laws.

use serde::{Deserialize, Serialize};

use crate::error::{IamError, Result};
use crate::model::{
    self, advance, marginal_utility, production, utility_unchecked, Decision, ExogenousPaths, ModelParams, StateVector,
    StepKind, IDX_K, IDX_MAT, IDX_TAT, N_CONT,
};
use crate::optim::{minimize_box, OptimOptions};

/// How welfare beyond the last controlled period is valued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TerminalRule {
    /// Zero-emission continuation for `extra_periods` periods with
    /// consumption fixed at `terminal_consumption_share` of net output.
    FixedSavings { extra_periods: usize },
    /// No value after the horizon.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub n_periods: usize,
    pub step_years: f64,
    pub terminal_rule: TerminalRule,
}

pub const DEFAULT_PERIODS: usize = 100;
pub const DEFAULT_EXTRA_PERIODS: usize = 80;

impl Horizon {
    pub fn new(n_periods: usize, step_years: f64, terminal_rule: TerminalRule) -> Result<Self> {
        if n_periods == 0 {
            return Err(IamError::config("horizon needs at least one period"));
        }
        Ok(Horizon {
            n_periods,
            step_years,
            terminal_rule,
        })
    }

    pub fn with_continuation(n_periods: usize, params: &ModelParams) -> Result<Self> {
        Horizon::new(
            n_periods,
            params.step_years,
            TerminalRule::FixedSavings {
                extra_periods: DEFAULT_EXTRA_PERIODS,
            },
        )
    }

    pub fn extra_periods(&self) -> usize {
        match self.terminal_rule {
            TerminalRule::FixedSavings { extra_periods } => extra_periods,
            TerminalRule::Zero => 0,
        }
    }

    /// Controlled plus continuation periods.
    pub fn total_periods(&self) -> usize {
        self.n_periods + self.extra_periods()
    }
}

/// Solved (or replayed) deterministic path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub decisions: Vec<Decision>,
    pub savings: Vec<f64>,
    pub emissions: Vec<f64>,
    pub welfare: f64,
    /// Shadow-price SCC of period-t emissions, $/tC.
    pub scc_path: Vec<f64>,
    /// Carbon tax implied by mu_t, $/tC.
    pub tax_path: Vec<f64>,
    /// `-dW/dM_AT / dW/dK` at each state, $/tC.
    pub state_scc: Vec<f64>,
    pub iterations: usize,
    pub pg_norm: f64,
}

impl Trajectory {
    pub fn n_periods(&self) -> usize {
        self.decisions.len()
    }

    /// Packed decision vector `[s_0..s_{n-1}, mu_0..mu_{n-1}]`.
    pub fn decision_vector(&self) -> Vec<f64> {
        let mut x = self.savings.clone();
        x.extend(self.decisions.iter().map(|d| d.mu));
        x
    }
}

#[derive(Debug, Clone)]
pub struct DetOptions {
    pub max_iter: usize,
    /// Required projected-gradient norm of the scaled objective.
    pub tol: f64,
    /// Tolerance the solver aims for before stopping.
    pub target_tol: f64,
    pub newton_iters: usize,
}

impl Default for DetOptions {
    fn default() -> Self {
        DetOptions {
            max_iter: 5000,
            tol: 1e-6,
            target_tol: 1e-12,
            newton_iters: 12,
        }
    }
}

pub const SAVINGS_MIN: f64 = 1e-3;
pub const SAVINGS_MAX: f64 = 0.999;

/// A transcribed deterministic problem.
#[derive(Debug, Clone)]
pub struct DetProblem {
    pub params: ModelParams,
    pub paths: ExogenousPaths,
    pub horizon: Horizon,
    pub init: StateVector,
    /// Tipping damage in each period (held at `terminal_tip_damage` after the horizon).
    pub tip_damage: Vec<f64>,
    pub terminal_tip_damage: f64,
}

struct Forward {
    xs: Vec<[f64; N_CONT]>,
    prods: Vec<model::Production>,
    cons: Vec<f64>,
    s: Vec<f64>,
    mu: Vec<f64>,
    welfare: f64,
}

impl DetProblem {
    pub fn new(params: &ModelParams, paths: &ExogenousPaths, horizon: Horizon, init: &StateVector) -> Result<Self> {
        params.validate()?;
        paths.validate()?;
        init.validate()?;
        if (horizon.step_years - params.step_years).abs() > 1e-9 {
            return Err(IamError::config(format!(
                "horizon step {} differs from calibration step {}",
                horizon.step_years, params.step_years
            )));
        }
        if horizon.n_periods == 0 {
            return Err(IamError::config("horizon needs at least one period"));
        }
        let need = horizon.total_periods();
        if paths.len() < need {
            return Err(IamError::config(format!(
                "exogenous paths cover {} periods but the horizon needs {need}",
                paths.len()
            )));
        }
        Ok(DetProblem {
            params: params.clone(),
            paths: paths.clone(),
            horizon,
            init: *init,
            tip_damage: vec![0.0; need],
            terminal_tip_damage: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.horizon.n_periods
    }

    pub fn n_vars(&self) -> usize {
        2 * self.n()
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut lo = vec![SAVINGS_MIN; n];
        lo.extend(std::iter::repeat_n(0.0, n));
        let mut hi = vec![SAVINGS_MAX; n];
        hi.extend(std::iter::repeat_n(self.params.mu_max, n));
        (lo, hi)
    }

    pub fn clip(&self, x: &mut [f64]) {
        let (lo, hi) = self.bounds();
        for i in 0..x.len() {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    }

    /// Starting point: 25% savings and a linear ramp in mu.
    pub fn default_guess(&self) -> Vec<f64> {
        let n = self.n();
        let mut x = vec![0.25; n];
        x.extend((0..n).map(|t| (0.05 + 0.03 * t as f64).min(self.params.mu_max)));
        x
    }

    fn tip_at(&self, t: usize) -> f64 {
        if t < self.n() {
            self.tip_damage.get(t).copied().unwrap_or(0.0)
        } else {
            self.terminal_tip_damage
        }
    }

    fn exo(&self, t: usize) -> model::Exo {
        let mut e = self.paths.exo(t);
        e.a *= self.init.zeta;
        e
    }

    fn forward(&self, x: &[f64]) -> Result<Forward> {
        let n = self.n();
        if x.len() != 2 * n {
            return Err(IamError::config(format!(
                "decision vector has length {}, expected {}",
                x.len(),
                2 * n
            )));
        }
        let total = self.horizon.total_periods();
        let p = &self.params;
        let mut xs = Vec::with_capacity(total + 1);
        let mut prods = Vec::with_capacity(total);
        let mut cons = Vec::with_capacity(total);
        let mut s_all = Vec::with_capacity(total);
        let mut mu_all = Vec::with_capacity(total);
        let mut state = self.init.continuous();
        xs.push(state);
        let mut welfare = 0.0;
        let mut w = 1.0;
        for t in 0..total {
            let (s, mu, kind) = if t < n {
                (x[t], x[n + t], StepKind::Controlled)
            } else {
                (1.0 - p.terminal_consumption_share, 0.0, StepKind::ZeroEmission)
            };
            let exo = self.exo(t);
            let prod = production(p, &exo, &state, mu, self.tip_at(t), kind)?;
            if !(prod.y_net > 0.0) {
                return Err(IamError::Infeasible {
                    period: t,
                    detail: format!("net output {} is not positive", prod.y_net),
                });
            }
            let c = (1.0 - s) * prod.y_net;
            welfare += w * utility_unchecked(c, exo.l, p.psi);
            state = advance(p, &state, &prod, c);
            if !(state[IDX_K] > 0.0 && state[IDX_MAT] > 0.0) {
                return Err(IamError::Infeasible {
                    period: t,
                    detail: format!(
                        "non-positive stock after period: K={}, M_AT={}",
                        state[IDX_K], state[IDX_MAT]
                    ),
                });
            }
            xs.push(state);
            prods.push(prod);
            cons.push(c);
            s_all.push(s);
            mu_all.push(mu);
            w *= p.beta;
        }
        if !welfare.is_finite() {
            return Err(IamError::numerical("welfare is not finite"));
        }
        Ok(Forward {
            xs,
            prods,
            cons,
            s: s_all,
            mu: mu_all,
            welfare,
        })
    }

    /// Backward sweep. Returns state multipliers `dW/dx_t` for every t and
    /// writes `dW/d(s, mu)` into `grad`.
    fn adjoint(&self, fw: &Forward, grad: &mut [f64]) -> Vec<[f64; N_CONT]> {
        let n = self.n();
        let p = &self.params;
        let total = fw.prods.len();
        let mut lam = vec![[0.0; N_CONT]; total + 1];
        let mut w = p.beta.powi(total as i32 - 1);
        for t in (0..total).rev() {
            let lp = lam[t + 1];
            let prod = &fw.prods[t];
            let x = &fw.xs[t];
            let exo = self.exo(t);
            let s = fw.s[t];
            let mu = fw.mu[t];
            let up = marginal_utility(fw.cons[t], exo.l, p.psi);
            let g_ynet = (1.0 - s) * w * up + s * lp[IDX_K];
            let controlled = t < n;
            let dw_dy = if controlled {
                if grad.len() == 2 * n {
                    grad[t] = prod.y_net * (-w * up + lp[IDX_K]);
                    grad[n + t] = -g_ynet * prod.d_abate_dmu - lp[IDX_MAT] * exo.sigma * prod.y;
                }
                g_ynet * (prod.omega - exo.theta1 * mu.max(0.0).powf(p.theta2)) + lp[IDX_MAT] * exo.sigma * (1.0 - mu)
            } else {
                g_ynet * prod.omega
            };
            let mut l = [0.0; N_CONT];
            l[IDX_K] = (1.0 - p.delta) * lp[IDX_K] + dw_dy * p.alpha * prod.y / x[IDX_K];
            for j in 0..3 {
                l[1 + j] = (0..3).map(|i| p.phi_m[i][j] * lp[1 + i]).sum();
            }
            l[IDX_MAT] += lp[IDX_TAT] * p.xi1 * prod.d_forcing_dm;
            for j in 0..2 {
                l[4 + j] = (0..2).map(|i| p.phi_t[i][j] * lp[4 + i]).sum();
            }
            l[IDX_TAT] += g_ynet * prod.y * prod.d_omega_dt;
            lam[t] = l;
            w /= p.beta;
        }
        lam
    }

    pub fn welfare(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.welfare)
    }

    /// Welfare and its gradient with respect to the packed decisions.
    pub fn welfare_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let fw = self.forward(x)?;
        self.adjoint(&fw, grad);
        Ok(fw.welfare)
    }

    /// Welfare, decision gradient, and `dW/dx_0` (initial-state gradient).
    pub fn state_gradient(&self, x: &[f64]) -> Result<(f64, [f64; N_CONT])> {
        let fw = self.forward(x)?;
        let mut g = vec![0.0; x.len()];
        let lam = self.adjoint(&fw, &mut g);
        Ok((fw.welfare, lam[0]))
    }

    /// Replays decisions and assembles the reported trajectory.
    pub fn trajectory(&self, x: &[f64]) -> Result<Trajectory> {
        let n = self.n();
        let fw = self.forward(x)?;
        let mut g = vec![0.0; x.len()];
        let lam = self.adjoint(&fw, &mut g);
        let unit = self.params.scc_unit;
        // NaN marks a vanishing capital multiplier (e.g. the last state under a zero continuation)
        let ratio = |l: &[f64; N_CONT]| -> Result<f64> {
            if !(l[IDX_K].abs() > 1e-300) || !l[IDX_K].is_finite() {
                return Ok(f64::NAN);
            }
            Ok(-l[IDX_MAT] / l[IDX_K] * unit)
        };
        let mut scc_path = Vec::with_capacity(n);
        let mut tax_path = Vec::with_capacity(n);
        let mut state_scc = Vec::with_capacity(n + 1);
        for t in 0..=n {
            state_scc.push(ratio(&lam[t])?);
        }
        for t in 0..n {
            scc_path.push(ratio(&lam[t + 1])?);
            let exo = self.paths.exo(t);
            let tax = if exo.sigma > 0.0 {
                model::carbon_tax(x[n + t], exo.theta1, self.params.theta2, exo.sigma)? * unit
            } else {
                0.0
            };
            tax_path.push(tax);
        }
        let states = fw.xs[..=n].iter().map(|c| self.init.with_continuous(c)).collect();
        Ok(Trajectory {
            states,
            decisions: (0..n)
                .map(|t| Decision {
                    c: fw.cons[t],
                    mu: x[n + t],
                })
                .collect(),
            savings: x[..n].to_vec(),
            emissions: fw.prods[..n].iter().map(|p| p.emissions).collect(),
            welfare: fw.welfare,
            scc_path,
            tax_path,
            state_scc,
            iterations: 0,
            pg_norm: f64::NAN,
        })
    }

    /// Maximizes welfare from `guess` (clipped to bounds) or the default start.
    pub fn solve(&self, guess: Option<&[f64]>, opts: &DetOptions) -> Result<Trajectory> {
        let mut x0 = match guess {
            Some(g) => g.to_vec(),
            None => self.default_guess(),
        };
        if x0.len() != self.n_vars() {
            return Err(IamError::config(format!(
                "guess has {} decisions, problem needs {}",
                x0.len(),
                self.n_vars()
            )));
        }
        self.clip(&mut x0);
        let w0 = self.welfare(&x0)?;
        let scale = w0.abs().max(1e-12);
        let (lo, hi) = self.bounds();
        let objective = |x: &[f64], g: &mut [f64]| -> Result<f64> {
            let w = self.welfare_and_gradient(x, g)?;
            g.iter_mut().for_each(|v| *v = -*v / scale);
            Ok(-w / scale)
        };
        let oo = OptimOptions {
            max_iter: opts.max_iter,
            pg_tol: opts.target_tol,
            memory: 20,
            newton_iters: opts.newton_iters,
            fd_step: 1e-7,
        };
        let res = minimize_box(objective, &x0, &lo, &hi, &oo)?;
        log::debug!(
            "deterministic solve: {} iterations, {} evaluations, pg {:.3e}",
            res.iterations,
            res.evaluations,
            res.pg_norm
        );
        if !(res.pg_norm <= opts.tol) {
            return Err(IamError::NotConverged {
                iterations: res.iterations,
                pg_norm: res.pg_norm,
                objective: -res.f * scale,
                best: res.x,
            });
        }
        let mut traj = self.trajectory(&res.x)?;
        traj.iterations = res.iterations;
        traj.pg_norm = res.pg_norm;
        Ok(traj)
    }
}

/// Solves the deterministic program from `init`.
pub fn solve_deterministic(
    params: &ModelParams,
    paths: &ExogenousPaths,
    horizon: &Horizon,
    init: &StateVector,
    guess: Option<&Trajectory>,
) -> Result<Trajectory> {
    let problem = DetProblem::new(params, paths, *horizon, init)?;
    let g = guess.map(|t| t.decision_vector());
    problem.solve(g.as_deref(), &DetOptions::default())
}

/// Adjoint gradient of welfare with respect to `[s_0.., mu_0..]`.
pub fn objective_gradient(problem: &DetProblem, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    problem.welfare_and_gradient(x, &mut g)?;
    Ok(g)
}

/// Solves the problem on a grid `coarse_factor` times coarser in time and
/// interpolates the decisions onto the fine grid.
pub fn refine_from_coarse(
    params: &ModelParams,
    paths: &ExogenousPaths,
    horizon: &Horizon,
    init: &StateVector,
    coarse_factor: usize,
) -> Result<Trajectory> {
    if coarse_factor == 0 {
        return Err(IamError::config("coarse factor must be a positive integer"));
    }
    let fine = DetProblem::new(params, paths, *horizon, init)?;
    if coarse_factor == 1 {
        return fine.solve(None, &DetOptions::default());
    }
    let k = coarse_factor;
    let cp = params.coarsen(k);
    let cpaths = paths.coarsen(k);
    let n_c = horizon.n_periods.div_ceil(k).max(2);
    let rule = match horizon.terminal_rule {
        TerminalRule::FixedSavings { extra_periods } => TerminalRule::FixedSavings {
            extra_periods: extra_periods.div_ceil(k),
        },
        TerminalRule::Zero => TerminalRule::Zero,
    };
    let mut ch = Horizon::new(n_c, cp.step_years, rule)?;
    let avail = cpaths.len();
    if ch.total_periods() > avail {
        ch.terminal_rule = match rule {
            TerminalRule::FixedSavings { .. } if avail > n_c => TerminalRule::FixedSavings {
                extra_periods: avail - n_c,
            },
            _ => TerminalRule::Zero,
        };
    }
    let coarse = DetProblem::new(&cp, &cpaths, ch, init)?;
    let sol = coarse.solve(None, &DetOptions::default())?;
    let n = horizon.n_periods;
    let interp = |v: &dyn Fn(usize) -> f64, t: usize| -> f64 {
        let pos = t as f64 / k as f64;
        let i = (pos.floor() as usize).min(n_c - 1);
        let j = (i + 1).min(n_c - 1);
        let f = pos - i as f64;
        if i == j {
            v(i)
        } else {
            v(i) * (1.0 - f) + v(j) * f
        }
    };
    let mut x: Vec<f64> = (0..n).map(|t| interp(&|i| sol.savings[i], t)).collect();
    x.extend((0..n).map(|t| interp(&|i| sol.decisions[i].mu, t)));
    fine.clip(&mut x);
    let mut traj = fine.trajectory(&x)?;
    traj.iterations = sol.iterations;
    Ok(traj)
}

/// Per-period SCC ($/tC) of a solved trajectory, recomputed from the adjoint.
pub fn scc_deterministic(problem: &DetProblem, solution: &Trajectory) -> Result<Vec<f64>> {
    let scc = problem.trajectory(&solution.decision_vector())?.scc_path;
    if let Some(t) = scc.iter().position(|v| !v.is_finite()) {
        return Err(IamError::numerical(format!(
            "degenerate capital multiplier at period {t}"
        )));
    }
    Ok(scc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy_params;

    pub(crate) fn toy_paths(n: usize) -> ExogenousPaths {
        ExogenousPaths {
            a: (0..n).map(|t| 5.0 * 1.01f64.powi(t as i32)).collect(),
            l: vec![7.0; n],
            sigma: (0..n).map(|t| 0.1 * 0.99f64.powi(t as i32)).collect(),
            theta1: vec![0.05; n],
            e_land: vec![0.5; n],
            f_ex: vec![0.5; n],
        }
    }

    fn toy_init() -> StateVector {
        StateVector::new(50.0, [851.0, 460.0, 1740.0], [0.85, 0.0068])
    }

    fn problem(n: usize) -> DetProblem {
        let mut p = toy_params();
        p.psi = 1.0 / 1.45;
        let h = Horizon::new(n, 5.0, TerminalRule::FixedSavings { extra_periods: 20 }).unwrap();
        DetProblem::new(&p, &toy_paths(n + 20), h, &toy_init()).unwrap()
    }

    #[test]
    fn horizon_validation() {
        assert!(Horizon::new(0, 5.0, TerminalRule::Zero).is_err());
        let p = toy_params();
        let h = Horizon::new(10, 5.0, TerminalRule::FixedSavings { extra_periods: 20 }).unwrap();
        assert!(DetProblem::new(&p, &toy_paths(20), h, &toy_init()).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let pr = problem(12);
        let mut x = pr.default_guess();
        x[3] = 0.3;
        x[12 + 2] = 0.4;
        let g = objective_gradient(&pr, &x).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.len() {
            let h = 1e-5;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (pr.welfare(&xp).unwrap() - pr.welfare(&xm).unwrap()) / (2.0 * h);
            num += (fd - g[i]).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() < 1e-6, "{}", (num / den).sqrt());
    }

    #[test]
    fn no_damage_no_carbon_gives_zero_mu() {
        let mut pr = problem(8);
        pr.params.pi1 = 0.0;
        pr.params.pi2 = 0.0;
        pr.paths.sigma.iter_mut().for_each(|s| *s = 0.0);
        let traj = pr.solve(None, &DetOptions::default()).unwrap();
        assert!(traj.decisions.iter().all(|d| d.mu.abs() < 1e-8));
        // mu-gradient at mu = 0 is a pure cost, never positive
        let g = objective_gradient(&pr, &traj.decision_vector()).unwrap();
        assert!(g[8..].iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn no_damage_gives_zero_scc() {
        let mut pr = problem(8);
        pr.params.pi1 = 0.0;
        pr.params.pi2 = 0.0;
        let traj = pr.solve(None, &DetOptions::default()).unwrap();
        assert!(traj.scc_path.iter().all(|s| s.abs() < 1e-9), "{:?}", traj.scc_path);
    }

    #[test]
    fn two_period_euler_condition() {
        // two periods, no damages or climate channel, zero continuation
        let mut p = toy_params();
        p.pi1 = 0.0;
        p.pi2 = 0.0;
        p.psi = 0.5;
        p.delta = 1.0;
        let paths = ExogenousPaths {
            a: vec![10.0, 10.0],
            l: vec![1.0, 1.0],
            sigma: vec![0.0, 0.0],
            theta1: vec![0.0, 0.0],
            e_land: vec![0.0, 0.0],
            f_ex: vec![0.0, 0.0],
        };
        let h = Horizon::new(2, 5.0, TerminalRule::Zero).unwrap();
        let init = StateVector::new(1.0, [600.0, 460.0, 1740.0], [0.0, 0.0]);
        let pr = DetProblem::new(&p, &paths, h, &init).unwrap();
        let traj = pr.solve(None, &DetOptions::default()).unwrap();
        // last period consumes everything (up to the savings floor)
        assert!((traj.savings[1] - SAVINGS_MIN).abs() < 1e-12);
        assert!(traj.savings[0] > 0.01 && traj.savings[0] < 0.9);
        // Euler: u'(C0) = beta u'(C1) dY1/dK1 (1 - s1)
        let k1 = traj.states[1].k;
        let y0 = 10.0;
        let y1 = 10.0 * k1.powf(0.3);
        let c0 = (1.0 - traj.savings[0]) * y0;
        let c1 = (1.0 - SAVINGS_MIN) * y1;
        let lhs = c0.powf(-1.0 / p.psi);
        let mpk = 0.3 * y1 / k1;
        let rhs = p.beta * c1.powf(-1.0 / p.psi) * (1.0 - SAVINGS_MIN) * mpk;
        assert!((lhs - rhs).abs() < 1e-6 * lhs, "{lhs} {rhs}");
    }

    #[test]
    fn pigovian_identity_at_interior_mu() {
        let pr = problem(20);
        let traj = pr.solve(None, &DetOptions::default()).unwrap();
        let mut checked = 0;
        for t in 0..20 {
            let mu = traj.decisions[t].mu;
            if mu > 1e-4 && mu < pr.params.mu_max - 1e-4 {
                let rel = (traj.scc_path[t] - traj.tax_path[t]).abs() / traj.scc_path[t];
                assert!(rel < 1e-3, "t={t} scc={} tax={}", traj.scc_path[t], traj.tax_path[t]);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn state_scc_matches_perturbation() {
        let pr = problem(15);
        let traj = pr.solve(None, &DetOptions::default()).unwrap();
        let value = |dk: f64, dm: f64| {
            let mut q = pr.clone();
            q.init.k += dk;
            q.init.m[0] += dm;
            q.solve(Some(&traj.decision_vector()), &DetOptions::default())
                .unwrap()
                .welfare
        };
        let h = 1.0;
        let dvdm = (value(0.0, h) - value(0.0, -h)) / (2.0 * h);
        let hk = 0.05;
        let dvdk = (value(hk, 0.0) - value(-hk, 0.0)) / (2.0 * hk);
        let fd = -dvdm / dvdk * pr.params.scc_unit;
        let rel = (fd - traj.state_scc[0]).abs() / traj.state_scc[0].abs();
        assert!(rel < 0.01, "fd {fd} adjoint {}", traj.state_scc[0]);
    }

    #[test]
    fn replay_closes_through_step_state() {
        let pr = problem(10);
        let traj = pr.solve(None, &DetOptions::default()).unwrap();
        for t in 0..10 {
            let next = model::step_state(&traj.states[t], &traj.decisions[t], t, &pr.params, &pr.paths, 0.0).unwrap();
            let a = next.continuous();
            let b = traj.states[t + 1].continuous();
            for i in 0..N_CONT {
                assert!((a[i] - b[i]).abs() <= 1e-9 * b[i].abs().max(1e-12), "t={t} i={i}");
            }
        }
    }

    #[test]
    fn coarse_factor_one_is_direct_solve() {
        let pr = problem(10);
        let direct = pr.solve(None, &DetOptions::default()).unwrap();
        let refined = refine_from_coarse(&pr.params, &pr.paths, &pr.horizon, &pr.init, 1).unwrap();
        assert_eq!(direct.decision_vector(), refined.decision_vector());
    }

    #[test]
    fn coarse_guess_is_within_bounds() {
        let pr = problem(10);
        let g = refine_from_coarse(&pr.params, &pr.paths, &pr.horizon, &pr.init, 2).unwrap();
        let (lo, hi) = pr.bounds();
        for (i, v) in g.decision_vector().iter().enumerate() {
            assert!(*v >= lo[i] && *v <= hi[i]);
        }
    }
}
