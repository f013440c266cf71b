//! DICE-2016 closed forms and the one-period transition laws.
//!
//! Units: carbon in GtC, temperature in degC above preindustrial, output and
//! consumption in trillions of dollars per period, population in millions.
//! One period is `step_years` years. Every function here is pure.

use serde::{Deserialize, Serialize};

use crate::error::{IamError, Result};

/// Number of continuous state coordinates (K, M_AT, M_UO, M_DO, T_AT, T_OC).
pub const N_CONT: usize = 6;

pub const IDX_K: usize = 0;
pub const IDX_MAT: usize = 1;
pub const IDX_TAT: usize = 4;

/// Parameters of the climate tipping process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingParams {
    /// Hazard rate per degC of warming above the threshold, per period.
    pub lambda: f64,
    /// Temperature threshold below which tipping cannot occur (degC).
    pub t_bar: f64,
    /// Mean total duration of the transient phase (years).
    pub gamma_bar: f64,
    /// Mean long-run damage (fraction of output).
    pub d_inf_bar: f64,
    /// Relative variance coefficient of the long-run damage.
    pub q: f64,
}

impl Default for TippingParams {
    fn default() -> Self {
        TippingParams {
            lambda: 0.0,
            t_bar: 0.0,
            gamma_bar: 50.0,
            d_inf_bar: 0.0,
            q: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub step_years: f64,
    pub start_year: f64,
    /// Discount factor per period.
    pub beta: f64,
    /// Intertemporal elasticity of substitution.
    pub psi: f64,
    /// Relative risk aversion (only used by the stochastic solvers).
    pub gamma: f64,
    /// Capital depreciation per period.
    pub delta: f64,
    pub alpha: f64,
    pub pi1: f64,
    pub pi2: f64,
    pub pi_hi: f64,
    pub exp_hi: f64,
    /// Adds `pi_hi * T^exp_hi` to the damage denominator.
    pub weitzman: bool,
    /// Use `L log(C/L)` utility; required when `psi == 1`.
    pub log_utility: bool,
    pub theta2: f64,
    pub eta: f64,
    pub m_at_star: f64,
    pub xi1: f64,
    /// Carbon transfer matrix, rows are destination reservoirs.
    pub phi_m: [[f64; 3]; 3],
    pub phi_t: [[f64; 2]; 2],
    pub mu_max: f64,
    /// Conversion from model units (trillion $ per GtC) to $ per tC.
    pub scc_unit: f64,
    /// Consumption share of net output after the terminal time.
    pub terminal_consumption_share: f64,
    pub tipping: TippingParams,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, detail: String| {
            Err(IamError::Calibration {
                location: format!("[params].{key}"),
                detail,
            })
        };
        if !(self.step_years > 0.0) {
            return fail("step_years", format!("must be positive, got {}", self.step_years));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail("beta", format!("must lie in (0,1), got {}", self.beta));
        }
        if !(self.psi > 0.0) {
            return fail("psi", format!("must be positive, got {}", self.psi));
        }
        if (self.psi - 1.0).abs() < 1e-12 && !self.log_utility {
            return fail("psi", "psi = 1 requires log_utility = true".into());
        }
        if self.log_utility && (self.psi - 1.0).abs() > 1e-12 {
            return fail("log_utility", format!("log utility requires psi = 1, got {}", self.psi));
        }
        if !(self.gamma > 0.0) {
            return fail("gamma", format!("must be positive, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return fail("delta", format!("must lie in [0,1], got {}", self.delta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha", format!("must lie in (0,1), got {}", self.alpha));
        }
        if !(self.theta2 > 1.0) {
            return fail("theta2", format!("must exceed 1, got {}", self.theta2));
        }
        if !(self.m_at_star > 0.0) {
            return fail("m_at_star", "must be positive".into());
        }
        if !(self.mu_max > 0.0) {
            return fail("mu_max", "must be positive".into());
        }
        if self.pi1 < 0.0 || self.pi2 < 0.0 || self.pi_hi < 0.0 {
            return fail("pi2", "damage coefficients must be non-negative".into());
        }
        for col in 0..3 {
            let sum: f64 = (0..3).map(|row| self.phi_m[row][col]).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return fail(
                    "phi_m",
                    format!("column {col} sums to {sum:.12}, carbon cycle must conserve mass"),
                );
            }
        }
        if self.phi_m.iter().flatten().any(|v| *v < 0.0) {
            return fail("phi_m", "entries must be non-negative".into());
        }
        if !(self.scc_unit > 0.0) {
            return fail("scc_unit", "must be positive".into());
        }
        if !(self.terminal_consumption_share > 0.0 && self.terminal_consumption_share < 1.0) {
            return fail("terminal_consumption_share", "must lie in (0,1)".into());
        }
        let tip = &self.tipping;
        let tfail = |key: &str, detail: &str| {
            Err(IamError::Calibration {
                location: format!("[tipping].{key}"),
                detail: detail.to_string(),
            })
        };
        if tip.lambda < 0.0 {
            return tfail("lambda", "must be non-negative");
        }
        if !(tip.gamma_bar > 0.0) {
            return tfail("gamma_bar", "must be positive");
        }
        if !(0.0..1.0).contains(&tip.d_inf_bar) {
            return tfail("d_inf_bar", "must lie in [0,1)");
        }
        if tip.q < 0.0 {
            return tfail("q", "must be non-negative");
        }
        Ok(())
    }

    /// `1 - 1/psi`, the exponent of the CRRA period utility.
    pub fn rho(&self) -> f64 {
        1.0 - 1.0 / self.psi
    }

    pub fn set_annual_beta(&mut self, beta_annual: f64) {
        self.beta = beta_annual.powf(self.step_years);
    }

    pub fn annual_beta(&self) -> f64 {
        self.beta.powf(1.0 / self.step_years)
    }

    /// Equilibrium climate sensitivity implied by `phi_t`, `xi1` and `eta`.
    pub fn implied_ecs(&self) -> f64 {
        self.xi1 * self.eta / (1.0 - self.phi_t[0][0] - self.phi_t[0][1])
    }

    /// Rewrites `phi_t[0][0]` so that the implied climate sensitivity equals `ecs`.
    pub fn set_ecs(&mut self, ecs: f64) -> Result<()> {
        if !(ecs > 0.0) {
            return Err(IamError::domain("set_ecs", format!("ecs must be positive, got {ecs}")));
        }
        self.phi_t[0][0] = 1.0 - self.phi_t[0][1] - self.xi1 * self.eta / ecs;
        Ok(())
    }

    /// Overrides one scalar parameter by name (scenario files, belief draws).
    pub fn set_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "beta" => self.beta = value,
            "beta_annual" => self.set_annual_beta(value),
            "psi" => self.psi = value,
            "gamma" => self.gamma = value,
            "delta" => self.delta = value,
            "alpha" => self.alpha = value,
            "pi1" => self.pi1 = value,
            "pi2" => self.pi2 = value,
            "pi_hi" => self.pi_hi = value,
            "exp_hi" => self.exp_hi = value,
            "weitzman" => self.weitzman = value != 0.0,
            "theta2" => self.theta2 = value,
            "eta" => self.eta = value,
            "m_at_star" => self.m_at_star = value,
            "xi1" => self.xi1 = value,
            "ecs" => self.set_ecs(value)?,
            "mu_max" => self.mu_max = value,
            "terminal_consumption_share" => self.terminal_consumption_share = value,
            "lambda_tip" | "tipping.lambda" => self.tipping.lambda = value,
            "t_bar" | "tipping.t_bar" => self.tipping.t_bar = value,
            "gamma_bar" | "tipping.gamma_bar" => self.tipping.gamma_bar = value,
            "d_inf_bar" | "tipping.d_inf_bar" => self.tipping.d_inf_bar = value,
            "q" | "tipping.q" => self.tipping.q = value,
            other => {
                return Err(IamError::config(format!("unknown parameter name '{other}'")));
            }
        }
        Ok(())
    }

    /// The same economy on a grid `k` times coarser in time.
    ///
    /// Homogeneous linear parts are exact matrix powers; the forcing
    /// injection and output flows are scaled to the longer step.
    pub fn coarsen(&self, k: usize) -> ModelParams {
        let mut out = self.clone();
        if k <= 1 {
            return out;
        }
        let kf = k as f64;
        out.step_years = self.step_years * kf;
        out.beta = self.beta.powf(kf);
        out.delta = 1.0 - (1.0 - self.delta).powf(kf);
        out.phi_m = mat_pow3(&self.phi_m, k);
        out.phi_t = mat_pow2(&self.phi_t, k);
        // geometric sum of the atmospheric response to a constant forcing
        let mut acc = 0.0;
        let mut p = 1.0;
        for _ in 0..k {
            acc += p;
            p *= self.phi_t[0][0];
        }
        out.xi1 = self.xi1 * acc;
        out.tipping.lambda = self.tipping.lambda * kf;
        out
    }
}

fn mat_pow3(m: &[[f64; 3]; 3], k: usize) -> [[f64; 3]; 3] {
    let mut out = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..k {
        let mut next = [[0.0; 3]; 3];
        for (i, row) in next.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|l| m[i][l] * out[l][j]).sum();
            }
        }
        out = next;
    }
    out
}

fn mat_pow2(m: &[[f64; 2]; 2], k: usize) -> [[f64; 2]; 2] {
    let mut out = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..k {
        let mut next = [[0.0; 2]; 2];
        for (i, row) in next.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..2).map(|l| m[i][l] * out[l][j]).sum();
            }
        }
        out = next;
    }
    out
}

/// Per-period exogenous series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousPaths {
    pub a: Vec<f64>,
    pub l: Vec<f64>,
    pub sigma: Vec<f64>,
    pub theta1: Vec<f64>,
    pub e_land: Vec<f64>,
    pub f_ex: Vec<f64>,
}

/// Exogenous values for a single period, with any productivity shock folded in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exo {
    pub a: f64,
    pub l: f64,
    pub sigma: f64,
    pub theta1: f64,
    pub e_land: f64,
    pub f_ex: f64,
}

impl ExogenousPaths {
    pub const NAMES: [&'static str; 6] = ["A", "L", "sigma", "theta1", "E_land", "F_ex"];

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn series(&self, name: &str) -> Option<&Vec<f64>> {
        match name {
            "A" => Some(&self.a),
            "L" => Some(&self.l),
            "sigma" => Some(&self.sigma),
            "theta1" => Some(&self.theta1),
            "E_land" => Some(&self.e_land),
            "F_ex" => Some(&self.f_ex),
            _ => None,
        }
    }

    pub fn series_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        match name {
            "A" => Some(&mut self.a),
            "L" => Some(&mut self.l),
            "sigma" => Some(&mut self.sigma),
            "theta1" => Some(&mut self.theta1),
            "E_land" => Some(&mut self.e_land),
            "F_ex" => Some(&mut self.f_ex),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        for name in Self::NAMES {
            let s = self.series(name).expect("known series");
            let fail = |detail: String| {
                Err(IamError::Calibration {
                    location: format!("[paths].{name}"),
                    detail,
                })
            };
            if s.len() != n {
                return fail(format!("length {} differs from A length {n}", s.len()));
            }
            if let Some((i, v)) = s.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return fail(format!("entry {i} is not finite ({v})"));
            }
            let bad = match name {
                "A" | "L" => s.iter().position(|v| *v <= 0.0),
                "sigma" | "theta1" => s.iter().position(|v| *v < 0.0),
                _ => None,
            };
            if let Some(i) = bad {
                return fail(format!("entry {i} violates the sign constraint ({})", s[i]));
            }
        }
        if n == 0 {
            return Err(IamError::Calibration {
                location: "[paths].A".into(),
                detail: "paths are empty".into(),
            });
        }
        Ok(())
    }

    pub fn exo(&self, t: usize) -> Exo {
        Exo {
            a: self.a[t],
            l: self.l[t],
            sigma: self.sigma[t],
            theta1: self.theta1[t],
            e_land: self.e_land[t],
            f_ex: self.f_ex[t],
        }
    }

    /// Paths starting at period `t0`.
    pub fn shifted(&self, t0: usize) -> ExogenousPaths {
        let cut = |v: &Vec<f64>| v[t0.min(v.len())..].to_vec();
        ExogenousPaths {
            a: cut(&self.a),
            l: cut(&self.l),
            sigma: cut(&self.sigma),
            theta1: cut(&self.theta1),
            e_land: cut(&self.e_land),
            f_ex: cut(&self.f_ex),
        }
    }

    /// Paths for a time grid `k` times coarser: stocks and rates sampled at
    /// block starts, per-period flows (`A`, `E_land`) aggregated over the block.
    pub fn coarsen(&self, k: usize) -> ExogenousPaths {
        if k <= 1 {
            return self.clone();
        }
        let n = self.len() / k;
        let sample = |v: &Vec<f64>| (0..n).map(|i| v[i * k]).collect::<Vec<_>>();
        let sum = |v: &Vec<f64>| {
            (0..n)
                .map(|i| v[i * k..(i + 1) * k].iter().sum::<f64>())
                .collect::<Vec<_>>()
        };
        ExogenousPaths {
            a: self.a.iter().step_by(k).take(n).map(|a| a * k as f64).collect(),
            l: sample(&self.l),
            sigma: sample(&self.sigma),
            theta1: sample(&self.theta1),
            e_land: sum(&self.e_land),
            f_ex: sample(&self.f_ex),
        }
    }
}

/// Full model state: six continuous stocks plus the discrete shock coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub k: f64,
    pub m: [f64; 3],
    pub t: [f64; 2],
    pub zeta: f64,
    pub chi: f64,
    pub j_index: usize,
}

impl StateVector {
    pub fn new(k: f64, m: [f64; 3], t: [f64; 2]) -> Self {
        StateVector {
            k,
            m,
            t,
            zeta: 1.0,
            chi: 0.0,
            j_index: 0,
        }
    }

    pub fn continuous(&self) -> [f64; N_CONT] {
        [self.k, self.m[0], self.m[1], self.m[2], self.t[0], self.t[1]]
    }

    pub fn with_continuous(&self, x: &[f64; N_CONT]) -> Self {
        StateVector {
            k: x[0],
            m: [x[1], x[2], x[3]],
            t: [x[4], x[5]],
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(IamError::domain("state", format!("K must be positive, got {}", self.k)));
        }
        if self.m.iter().any(|m| !(*m > 0.0)) {
            return Err(IamError::domain(
                "state",
                format!("carbon stocks must be positive, got {:?}", self.m),
            ));
        }
        if !(self.zeta > 0.0) {
            return Err(IamError::domain("state", "zeta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub c: f64,
    pub mu: f64,
}

pub fn gross_output(a: f64, k: f64, l: f64, alpha: f64) -> Result<f64> {
    if !(a > 0.0 && k > 0.0 && l > 0.0) {
        return Err(IamError::domain(
            "gross_output",
            format!("inputs must be positive (A={a}, K={k}, L={l})"),
        ));
    }
    Ok(a * k.powf(alpha) * l.powf(1.0 - alpha))
}

fn damage_denominator(t_at: f64, params: &ModelParams) -> f64 {
    let mut den = 1.0 + params.pi1 * t_at + params.pi2 * t_at * t_at;
    if params.weitzman && t_at > 0.0 {
        den += params.pi_hi * t_at.powf(params.exp_hi);
    }
    den
}

fn damage_denominator_slope(t_at: f64, params: &ModelParams) -> f64 {
    let mut d = params.pi1 + 2.0 * params.pi2 * t_at;
    if params.weitzman && t_at > 0.0 {
        d += params.pi_hi * params.exp_hi * t_at.powf(params.exp_hi - 1.0);
    }
    d
}

/// Fraction of gross output kept after climate and tipping damage.
pub fn damage_factor(t_at: f64, tip_damage: f64, params: &ModelParams) -> Result<f64> {
    if !(0.0..1.0).contains(&tip_damage) {
        return Err(IamError::domain(
            "damage_factor",
            format!("tipping damage must lie in [0,1), got {tip_damage}"),
        ));
    }
    let den = damage_denominator(t_at, params);
    if !(den > 0.0) {
        return Err(IamError::domain(
            "damage_factor",
            format!("non-positive damage denominator {den} at T_AT={t_at}"),
        ));
    }
    Ok((1.0 - tip_damage) / den)
}

pub fn abatement_cost(mu: f64, theta1: f64, theta2: f64, y: f64) -> Result<f64> {
    if mu < 0.0 {
        return Err(IamError::domain(
            "abatement_cost",
            format!("negative emission control rate {mu}"),
        ));
    }
    Ok(theta1 * mu.powf(theta2) * y)
}

pub fn emissions(sigma: f64, mu: f64, y: f64, e_land: f64) -> f64 {
    sigma * (1.0 - mu) * y + e_land
}

pub fn net_output(omega: f64, y: f64, abatement: f64) -> f64 {
    omega * y - abatement
}

/// Radiative forcing from atmospheric carbon at period `t`.
pub fn radiative_forcing(m_at: f64, t: usize, params: &ModelParams, paths: &ExogenousPaths) -> Result<f64> {
    forcing(m_at, paths.f_ex[t], params)
}

fn forcing(m_at: f64, f_ex: f64, params: &ModelParams) -> Result<f64> {
    if !(m_at > 0.0) {
        return Err(IamError::domain(
            "radiative_forcing",
            format!("M_AT must be positive, got {m_at}"),
        ));
    }
    Ok(params.eta * (m_at / params.m_at_star).log2() + f_ex)
}

/// Period utility `L (C/L)^(1-1/psi) / (1-1/psi)`, or `L log(C/L)` when psi = 1.
pub fn utility(c: f64, l: f64, psi: f64) -> Result<f64> {
    if !(c > 0.0 && l > 0.0) {
        return Err(IamError::domain(
            "utility",
            format!("consumption and population must be positive (C={c}, L={l})"),
        ));
    }
    Ok(utility_unchecked(c, l, psi))
}

#[inline]
pub(crate) fn utility_unchecked(c: f64, l: f64, psi: f64) -> f64 {
    if (psi - 1.0).abs() < 1e-12 {
        l * (c / l).ln()
    } else {
        let rho = 1.0 - 1.0 / psi;
        l * (c / l).powf(rho) / rho
    }
}

/// Marginal utility of aggregate consumption, `(C/L)^(-1/psi)`.
#[inline]
pub(crate) fn marginal_utility(c: f64, l: f64, psi: f64) -> f64 {
    (c / l).powf(-1.0 / psi)
}

/// Carbon tax in model units (trillion $ per GtC); multiply by `scc_unit` for $/tC.
pub fn carbon_tax(mu: f64, theta1: f64, theta2: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(IamError::domain("carbon_tax", "carbon intensity must be positive"));
    }
    if mu < 0.0 {
        return Err(IamError::domain(
            "carbon_tax",
            format!("negative emission control rate {mu}"),
        ));
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    Ok(theta1 * theta2 * mu.powf(theta2 - 1.0) / sigma)
}

/// How a period's emissions and abatement are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StepKind {
    /// Decisions drive abatement cost and industrial emissions.
    Controlled,
    /// Post-terminal continuation: zero emissions, no abatement outlay.
    ZeroEmission,
}

/// Intermediate quantities of one period, kept for the adjoint sweep.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Production {
    pub y: f64,
    pub omega: f64,
    pub d_omega_dt: f64,
    pub d_abate_dmu: f64,
    pub y_net: f64,
    pub emissions: f64,
    pub forcing: f64,
    pub d_forcing_dm: f64,
}

pub(crate) fn production(
    params: &ModelParams,
    exo: &Exo,
    x: &[f64; N_CONT],
    mu: f64,
    tip_damage: f64,
    kind: StepKind,
) -> Result<Production> {
    let y = gross_output(exo.a, x[IDX_K], exo.l, params.alpha)?;
    let den = damage_denominator(x[IDX_TAT], params);
    if !(den > 0.0) {
        return Err(IamError::domain(
            "damage_factor",
            format!("non-positive denominator at T_AT={}", x[IDX_TAT]),
        ));
    }
    let omega = (1.0 - tip_damage) / den;
    let d_omega_dt = -(1.0 - tip_damage) * damage_denominator_slope(x[IDX_TAT], params) / (den * den);
    let (abate, d_abate_dmu, emis) = match kind {
        StepKind::Controlled => {
            let mu_c = mu.max(0.0);
            let abate = exo.theta1 * mu_c.powf(params.theta2) * y;
            let d = if mu_c > 0.0 {
                exo.theta1 * params.theta2 * mu_c.powf(params.theta2 - 1.0) * y
            } else {
                0.0
            };
            (abate, d, emissions(exo.sigma, mu, y, exo.e_land))
        }
        StepKind::ZeroEmission => (0.0, 0.0, 0.0),
    };
    let m_at = x[IDX_MAT];
    let f = forcing(m_at, exo.f_ex, params)?;
    Ok(Production {
        y,
        omega,
        d_omega_dt,
        d_abate_dmu,
        y_net: omega * y - abate,
        emissions: emis,
        forcing: f,
        d_forcing_dm: params.eta / (m_at * std::f64::consts::LN_2),
    })
}

/// Continuous successor given consumption.
pub(crate) fn advance(params: &ModelParams, x: &[f64; N_CONT], prod: &Production, consumption: f64) -> [f64; N_CONT] {
    let pm = &params.phi_m;
    let pt = &params.phi_t;
    let m = [x[1], x[2], x[3]];
    let t = [x[4], x[5]];
    [
        (1.0 - params.delta) * x[0] + prod.y_net - consumption,
        pm[0][0] * m[0] + pm[0][1] * m[1] + pm[0][2] * m[2] + prod.emissions,
        pm[1][0] * m[0] + pm[1][1] * m[1] + pm[1][2] * m[2],
        pm[2][0] * m[0] + pm[2][1] * m[1] + pm[2][2] * m[2],
        pt[0][0] * t[0] + pt[0][1] * t[1] + params.xi1 * prod.forcing,
        pt[1][0] * t[0] + pt[1][1] * t[1],
    ]
}

/// Deterministic part of the one-period transition.
///
/// `tip_damage` is the current tipping damage level; the stochastic
/// coordinates of `s` are carried over unchanged and `s.zeta` scales
/// productivity.
pub fn step_state(
    s: &StateVector,
    d: &Decision,
    t: usize,
    params: &ModelParams,
    paths: &ExogenousPaths,
    tip_damage: f64,
) -> Result<StateVector> {
    if t >= paths.len() {
        return Err(IamError::config(format!(
            "period {t} beyond exogenous paths (len {})",
            paths.len()
        )));
    }
    if d.mu < 0.0 || d.mu > params.mu_max + 1e-12 {
        return Err(IamError::domain(
            "step_state",
            format!("mu={} outside [0, {}]", d.mu, params.mu_max),
        ));
    }
    if !(d.c > 0.0) {
        return Err(IamError::domain(
            "step_state",
            format!("consumption must be positive, got {}", d.c),
        ));
    }
    let mut exo = paths.exo(t);
    exo.a *= s.zeta;
    let x = s.continuous();
    let prod = production(params, &exo, &x, d.mu, tip_damage, StepKind::Controlled)?;
    let next = advance(params, &x, &prod, d.c);
    if !(next[IDX_K] > 0.0) {
        return Err(IamError::Infeasible {
            period: t,
            detail: format!("consumption {} leaves next-period capital {}", d.c, next[IDX_K]),
        });
    }
    Ok(s.with_continuous(&next))
}
