//! Discrete stochastic structure: the long-run-risk chain over (zeta, chi),
//! the climate tipping chain, and the Epstein-Zin aggregator.

use serde::{Deserialize, Serialize};

use crate::error::{IamError, Result};
use crate::model::ModelParams;

/// Long-run productivity risk: `log z' = log z + chi + varrho w1`, `chi' = r chi + varsigma w2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrrParams {
    pub varrho: f64,
    pub r: f64,
    pub varsigma: f64,
    pub n_zeta: usize,
    pub n_chi: usize,
    /// Innovations are truncated at this many standard deviations.
    pub truncation_k: f64,
    /// The log-zeta grid spans `[-log_zeta_bound, log_zeta_bound]`.
    pub log_zeta_bound: f64,
}

impl LrrParams {
    /// A chain with a single node at zeta = 1, chi = 0.
    pub fn degenerate() -> Self {
        LrrParams {
            varrho: 0.0,
            r: 0.0,
            varsigma: 0.0,
            n_zeta: 1,
            n_chi: 1,
            truncation_k: 3.0,
            log_zeta_bound: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, detail: &str| {
            Err(IamError::Calibration {
                location: format!("[lrr].{key}"),
                detail: detail.to_string(),
            })
        };
        if !(self.r.abs() < 1.0) {
            return fail("r", "persistence must satisfy |r| < 1");
        }
        if self.varrho < 0.0 {
            return fail("varrho", "volatility must be non-negative");
        }
        if self.varsigma < 0.0 {
            return fail("varsigma", "volatility must be non-negative");
        }
        if self.n_zeta == 0 {
            return fail("n_zeta", "grid size must be at least 1");
        }
        if self.n_chi == 0 {
            return fail("n_chi", "grid size must be at least 1");
        }
        if !(self.truncation_k > 0.0) {
            return fail("truncation_k", "truncation width must be positive");
        }
        Ok(())
    }

    /// Scales both innovation variances by `factor`; the log-zeta grid
    /// shrinks with the standard deviation so its resolution in sd units
    /// is unchanged.
    pub fn scale_variance(&self, factor: f64) -> Self {
        let sd = factor.sqrt();
        LrrParams {
            varrho: self.varrho * sd,
            varsigma: self.varsigma * sd,
            log_zeta_bound: self.log_zeta_bound * sd,
            ..self.clone()
        }
    }
}

/// Finite-state Markov chain over (zeta, chi) nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    /// `(zeta, chi)` at each node; node index is `a * n_chi + i`.
    pub nodes: Vec<[f64; 2]>,
    /// Dense row-stochastic transition matrix.
    pub p: Vec<Vec<f64>>,
    pub log_zeta_grid: Vec<f64>,
    pub chi_grid: Vec<f64>,
}

impl MarkovChain {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_chi(&self) -> usize {
        self.chi_grid.len()
    }

    pub fn index(&self, a: usize, i: usize) -> usize {
        a * self.chi_grid.len() + i
    }

    /// Index of the node at zeta = 1, chi = 0 (grid centres).
    pub fn center(&self) -> usize {
        self.index(self.log_zeta_grid.len() / 2, self.chi_grid.len() / 2)
    }

    pub fn successors(&self, from: usize) -> Vec<(usize, f64)> {
        self.p[from]
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(j, p)| (j, *p))
            .collect()
    }

    /// Spacing of the chi grid (0 for a single node).
    pub fn chi_spacing(&self) -> f64 {
        grid_spacing(&self.chi_grid)
    }

    pub fn log_zeta_spacing(&self) -> f64 {
        grid_spacing(&self.log_zeta_grid)
    }

    /// Conditional mean and variance of `(log zeta', chi')` from `from`.
    pub fn conditional_moments(&self, from: usize) -> ([f64; 2], [f64; 2]) {
        let mut mean = [0.0; 2];
        let mut sq = [0.0; 2];
        for (j, p) in self.successors(from) {
            let v = [self.nodes[j][0].ln(), self.nodes[j][1]];
            for d in 0..2 {
                mean[d] += p * v[d];
                sq[d] += p * v[d] * v[d];
            }
        }
        (mean, [sq[0] - mean[0] * mean[0], sq[1] - mean[1] * mean[1]])
    }

    /// Zeta mean over a probability vector on nodes.
    pub fn mean_zeta(&self, dist: &[f64]) -> f64 {
        dist.iter().zip(&self.nodes).map(|(p, n)| p * n[0]).sum()
    }

    pub fn propagate(&self, dist: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; dist.len()];
        for (i, pi) in dist.iter().enumerate() {
            if *pi == 0.0 {
                continue;
            }
            for (j, pij) in self.p[i].iter().enumerate() {
                out[j] += pi * pij;
            }
        }
        out
    }
}

fn grid_spacing(g: &[f64]) -> f64 {
    if g.len() < 2 {
        0.0
    } else {
        g[1] - g[0]
    }
}

/// Symmetric quadrature for a standard normal innovation whose nodes stay
/// within `k` standard deviations. All rules match the first two moments.
fn innovation_rule(k: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    const GH5_X: f64 = 2.856_970_013_872_806;
    const GH5_Y: f64 = 1.355_626_179_974_266;
    if k >= GH5_X {
        let w_out = 0.011_257_411_327_720_69;
        let w_mid = 0.222_075_922_005_612_6;
        Ok((
            vec![-GH5_X, -GH5_Y, 0.0, GH5_Y, GH5_X],
            vec![w_out, w_mid, 1.0 - 2.0 * (w_out + w_mid), w_mid, w_out],
        ))
    } else if k >= 3f64.sqrt() {
        let s = 3f64.sqrt();
        Ok((vec![-s, 0.0, s], vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]))
    } else if k >= 1.0 {
        Ok((vec![-1.0, 1.0], vec![0.5, 0.5]))
    } else {
        Err(IamError::config(format!(
            "truncation width {k} sd is too narrow to carry unit innovation variance"
        )))
    }
}

/// Splits unit mass at `x` linearly between the two bracketing nodes of a
/// uniform grid (clamped at the ends).
fn split_on_grid(grid: &[f64], x: f64, mass: f64, out: &mut [f64]) {
    let n = grid.len();
    if n == 1 {
        out[0] += mass;
        return;
    }
    let h = grid[1] - grid[0];
    let pos = (x - grid[0]) / h;
    if pos <= 0.0 {
        out[0] += mass;
    } else if pos >= (n - 1) as f64 {
        out[n - 1] += mass;
    } else {
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        // snap near-exact hits to one node
        if frac < 1e-12 {
            out[lo] += mass;
        } else if frac > 1.0 - 1e-12 {
            out[lo + 1] += mass;
        } else {
            out[lo] += mass * (1.0 - frac);
            out[lo + 1] += mass * frac;
        }
    }
}

fn uniform_grid(half_width: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64)
        .collect()
}

/// Discretizes the long-run-risk process on a bounded (log zeta, chi) grid.
///
/// Innovations are replaced by a moment-matching quadrature truncated at
/// `truncation_k` sd; successor points are split linearly onto the grid,
/// which keeps conditional means exact on interior rows and inflates the
/// conditional variance by at most `h^2 / 4` per coordinate.
pub fn discretize_lrr(p: &LrrParams) -> Result<MarkovChain> {
    p.validate()?;
    let (e_nodes, e_w) = innovation_rule(p.truncation_k)?;
    let e_max = e_nodes.iter().fold(0.0f64, |m, e| m.max(e.abs()));

    let chi_grid = if p.varsigma == 0.0 {
        vec![0.0]
    } else {
        if p.n_chi < 2 {
            return Err(IamError::config(
                "chi grid with one node cannot cover the truncated innovation support",
            ));
        }
        let sd_uncond = p.varsigma / (1.0 - p.r * p.r).sqrt();
        let half = (p.truncation_k * sd_uncond).max(p.varsigma * e_max / (1.0 - p.r.abs()));
        uniform_grid(half, p.n_chi)
    };
    let chi_max = chi_grid.iter().fold(0.0f64, |m, c| m.max(c.abs()));

    let zeta_moves = p.varrho > 0.0 || chi_max > 0.0;
    let log_zeta_grid = if !zeta_moves || p.n_zeta == 1 {
        if zeta_moves {
            return Err(IamError::config(
                "log-zeta grid with one node cannot cover the truncated innovation support",
            ));
        }
        vec![0.0]
    } else {
        if p.n_zeta % 2 == 0 {
            return Err(IamError::config("n_zeta must be odd so that zeta = 1 is a node"));
        }
        let reach = chi_max + p.varrho * e_max;
        if p.log_zeta_bound < reach {
            return Err(IamError::config(format!(
                "log-zeta bound {} does not cover one-step support {reach}",
                p.log_zeta_bound
            )));
        }
        uniform_grid(p.log_zeta_bound, p.n_zeta)
    };

    let nz = log_zeta_grid.len();
    let nc = chi_grid.len();

    let mut p_chi = vec![vec![0.0; nc]; nc];
    for (i, row) in p_chi.iter_mut().enumerate() {
        if p.varsigma == 0.0 {
            split_on_grid(&chi_grid, p.r * chi_grid[i], 1.0, row);
        } else {
            for (e, w) in e_nodes.iter().zip(&e_w) {
                split_on_grid(&chi_grid, p.r * chi_grid[i] + p.varsigma * e, *w, row);
            }
        }
    }

    let mut nodes = Vec::with_capacity(nz * nc);
    let mut rows = Vec::with_capacity(nz * nc);
    for (a, z) in log_zeta_grid.iter().enumerate() {
        for (i, chi) in chi_grid.iter().enumerate() {
            nodes.push([z.exp(), *chi]);
            let mut pz = vec![0.0; nz];
            if p.varrho == 0.0 {
                split_on_grid(&log_zeta_grid, z + chi, 1.0, &mut pz);
            } else {
                for (e, w) in e_nodes.iter().zip(&e_w) {
                    split_on_grid(&log_zeta_grid, z + chi + p.varrho * e, *w, &mut pz);
                }
            }
            let mut row = vec![0.0; nz * nc];
            for (b, pzb) in pz.iter().enumerate() {
                if *pzb == 0.0 {
                    continue;
                }
                for (l, pcl) in p_chi[i].iter().enumerate() {
                    row[b * nc + l] = pzb * pcl;
                }
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            rows.push(row);
            debug_assert!(a < nz);
        }
    }
    Ok(MarkovChain {
        nodes,
        p: rows,
        log_zeta_grid,
        chi_grid,
    })
}

/// Damage levels and weights of the tipping process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingLevelSpec {
    /// Possible long-run damage levels (fraction of output).
    pub levels: Vec<f64>,
    /// Probability of each long-run level, drawn once on tipping.
    pub weights: Vec<f64>,
    pub n_transient: usize,
}

impl TippingLevelSpec {
    /// A single long-run level with certainty (q must be 0).
    pub fn point(level: f64, n_transient: usize) -> Self {
        TippingLevelSpec {
            levels: vec![level],
            weights: vec![1.0],
            n_transient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TipStage {
    Pre,
    /// Transient stage `1..=n_transient`.
    Transient(usize),
    Absorbing,
}

impl TipStage {
    /// Ordinal position along the tipping process.
    pub fn order(&self, n_transient: usize) -> usize {
        match self {
            TipStage::Pre => 0,
            TipStage::Transient(k) => *k,
            TipStage::Absorbing => n_transient + 1,
        }
    }
}

/// Absorbing tipping chain with a temperature-dependent first transition.
///
/// Index 0 is pre-tipping. Post-tipping states are laid out level-major:
/// `1 + level * (n_transient + 1) + (stage - 1)`, where stage
/// `n_transient + 1` is absorbing. Transient stage `k` carries damage
/// `k / (n_transient + 1)` of its terminal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingChain {
    /// Damage value of each chain state.
    pub levels: Vec<f64>,
    pub stage_of: Vec<TipStage>,
    /// Terminal level index of each post-tipping state.
    pub terminal_of: Vec<Option<usize>>,
    pub level_dist: Vec<f64>,
    pub terminal_levels: Vec<f64>,
    pub n_transient: usize,
    /// Per-period probability of leaving a transient stage.
    pub advance_prob: f64,
    pub lambda: f64,
    pub t_bar: f64,
    pub step_years: f64,
}

/// Probability that tipping occurs during the period given `t_at`.
pub fn tipping_probability(t_at: f64, params: &ModelParams) -> f64 {
    hazard(t_at, params.tipping.lambda, params.tipping.t_bar)
}

fn hazard(t_at: f64, lambda: f64, t_bar: f64) -> f64 {
    let excess = (t_at - t_bar).max(0.0);
    if lambda == 0.0 || excess == 0.0 {
        return 0.0;
    }
    -(-lambda * excess).exp_m1()
}

pub fn build_tipping_chain(params: &ModelParams, spec: &TippingLevelSpec) -> Result<TippingChain> {
    let tip = &params.tipping;
    let fail = |detail: String| {
        Err(IamError::Calibration {
            location: "[tipping].levels".into(),
            detail,
        })
    };
    if spec.levels.is_empty() || spec.levels.len() != spec.weights.len() {
        return fail("levels and weights must be non-empty and of equal length".into());
    }
    if spec.levels.iter().any(|d| !(0.0..1.0).contains(d)) {
        return fail("damage levels must lie in [0,1)".into());
    }
    if spec.weights.iter().any(|w| *w < 0.0) {
        return fail("weights must be non-negative".into());
    }
    let wsum: f64 = spec.weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-10 {
        return fail(format!("weights sum to {wsum}"));
    }
    let mean: f64 = spec.levels.iter().zip(&spec.weights).map(|(d, w)| d * w).sum();
    let var: f64 = spec
        .levels
        .iter()
        .zip(&spec.weights)
        .map(|(d, w)| w * (d - mean) * (d - mean))
        .sum();
    if (mean - tip.d_inf_bar).abs() > 1e-10 {
        return fail(format!("level mean {mean} does not match d_inf_bar {}", tip.d_inf_bar));
    }
    let target_var = tip.q * tip.d_inf_bar * tip.d_inf_bar;
    if (var - target_var).abs() > 1e-10 {
        return fail(format!(
            "level variance {var} does not match q * d_inf_bar^2 = {target_var}"
        ));
    }

    let nt = spec.n_transient;
    let mut levels = vec![0.0];
    let mut stage_of = vec![TipStage::Pre];
    let mut terminal_of = vec![None];
    for (l, d) in spec.levels.iter().enumerate() {
        for stage in 1..=nt + 1 {
            levels.push(d * stage as f64 / (nt + 1) as f64);
            stage_of.push(if stage <= nt {
                TipStage::Transient(stage)
            } else {
                TipStage::Absorbing
            });
            terminal_of.push(Some(l));
        }
    }
    let rate = params.step_years * nt as f64 / tip.gamma_bar;
    Ok(TippingChain {
        levels,
        stage_of,
        terminal_of,
        level_dist: spec.weights.clone(),
        terminal_levels: spec.levels.clone(),
        n_transient: nt,
        advance_prob: -(-rate).exp_m1(),
        lambda: tip.lambda,
        t_bar: tip.t_bar,
        step_years: params.step_years,
    })
}

impl TippingChain {
    /// Chain with only the pre-tipping state (no tipping risk).
    pub fn none(step_years: f64) -> Self {
        TippingChain {
            levels: vec![0.0],
            stage_of: vec![TipStage::Pre],
            terminal_of: vec![None],
            level_dist: vec![],
            terminal_levels: vec![],
            n_transient: 0,
            advance_prob: 0.0,
            lambda: 0.0,
            t_bar: 0.0,
            step_years,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index(&self, level: usize, stage: usize) -> usize {
        1 + level * (self.n_transient + 1) + (stage - 1)
    }

    pub fn hazard(&self, t_at: f64) -> f64 {
        hazard(t_at, self.lambda, self.t_bar)
    }

    pub fn is_absorbing(&self, j: usize) -> bool {
        matches!(self.stage_of[j], TipStage::Absorbing)
    }

    /// Damage the state `j` settles at once the process is frozen
    /// (terminal level for post-tipping states, 0 before tipping).
    pub fn long_run_damage(&self, j: usize) -> f64 {
        match self.terminal_of[j] {
            Some(l) => self.terminal_levels[l],
            None => 0.0,
        }
    }

    /// Sparse transition row from `j` given the current atmospheric temperature.
    pub fn transition_row(&self, j: usize, t_at: f64) -> Vec<(usize, f64)> {
        match self.stage_of[j] {
            TipStage::Pre => {
                let p = self.hazard(t_at);
                if p == 0.0 || self.level_dist.is_empty() {
                    return vec![(0, 1.0)];
                }
                let mut row = vec![(0, 1.0 - p)];
                for (l, w) in self.level_dist.iter().enumerate() {
                    if *w > 0.0 {
                        row.push((self.index(l, 1), p * w));
                    }
                }
                row
            }
            TipStage::Transient(_) => {
                let p = self.advance_prob;
                if p == 0.0 {
                    vec![(j, 1.0)]
                } else if p >= 1.0 {
                    vec![(j + 1, 1.0)]
                } else {
                    vec![(j, 1.0 - p), (j + 1, p)]
                }
            }
            TipStage::Absorbing => vec![(j, 1.0)],
        }
    }

    pub fn transition_matrix(&self, t_at: f64) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut row = vec![0.0; n];
                for (k, p) in self.transition_row(j, t_at) {
                    row[k] += p;
                }
                row
            })
            .collect()
    }

    /// States reachable in one step from `j` under some temperature.
    pub fn reachable_from(&self, j: usize) -> Vec<usize> {
        let hot = if self.lambda > 0.0 { self.t_bar + 1.0 } else { 0.0 };
        let mut out: Vec<usize> = self.transition_row(j, hot).into_iter().map(|(k, _)| k).collect();
        if matches!(self.stage_of[j], TipStage::Pre) && !out.contains(&0) {
            out.push(0);
        }
        out
    }

    /// Expected years from entering the first transient stage to absorption,
    /// dating each stage exit at the middle of the period in which it occurs.
    pub fn expected_transition_years(&self) -> f64 {
        if self.n_transient == 0 {
            return 0.0;
        }
        if self.advance_prob == 0.0 {
            return f64::INFINITY;
        }
        self.n_transient as f64 * self.step_years * (1.0 / self.advance_prob - 0.5)
    }
}

/// Epstein-Zin preference parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EZParams {
    pub beta: f64,
    pub psi: f64,
    pub gamma: f64,
}

impl EZParams {
    pub fn from_params(p: &ModelParams) -> Self {
        EZParams {
            beta: p.beta,
            psi: p.psi,
            gamma: p.gamma,
        }
    }

    /// `(1 - gamma) / (1 - 1/psi)`.
    pub fn theta(&self) -> f64 {
        (1.0 - self.gamma) / (1.0 - 1.0 / self.psi)
    }

    /// `sign(psi - 1)`, with psi <= 1 mapped to -1.
    pub fn xi(&self) -> f64 {
        if self.psi > 1.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn is_time_separable(&self) -> bool {
        (self.gamma * self.psi - 1.0).abs() < 1e-12
    }
}

/// Generalized mean `[sum p x^e]^(1/e)` of positive values; the geometric
/// mean when `e` is 0. Scaled by the largest value to avoid overflow.
pub(crate) fn power_mean(values: &[f64], probs: &[f64], exponent: f64) -> f64 {
    let m = values.iter().fold(0.0f64, |m, v| m.max(*v));
    if m == 0.0 {
        return 0.0;
    }
    if exponent.abs() < 1e-12 {
        let s: f64 = values.iter().zip(probs).map(|(v, p)| p * (v / m).ln()).sum();
        return m * s.exp();
    }
    let s: f64 = values
        .iter()
        .zip(probs)
        .map(|(v, p)| if *p == 0.0 { 0.0 } else { p * (v / m).powf(exponent) })
        .sum();
    m * s.powf(1.0 / exponent)
}

/// Recursive Epstein-Zin utility from current utility and next-period utilities.
///
/// Values are kept on the utility scale, `U = (1-beta) u + beta Xi CE`,
/// where `CE = [E (Xi U')^Theta]^(1/Theta)`. This is the power transform of
/// the consumption-scale recursion and has the same sign convention as the
/// Bellman operator.
pub fn ez_aggregate(u_now: f64, cont_values: &[f64], probs: &[f64], ez: &EZParams) -> Result<f64> {
    if cont_values.is_empty() || cont_values.len() != probs.len() {
        return Err(IamError::domain(
            "ez_aggregate",
            "continuation values and probabilities must match",
        ));
    }
    let psum: f64 = probs.iter().sum();
    if (psum - 1.0).abs() > 1e-10 || probs.iter().any(|p| *p < 0.0) {
        return Err(IamError::domain("ez_aggregate", format!("probabilities sum to {psum}")));
    }
    if (ez.psi - 1.0).abs() < 1e-12 {
        return Err(IamError::domain(
            "ez_aggregate",
            "psi = 1 is not supported by the power form",
        ));
    }
    let xi = ez.xi();
    let scaled: Vec<f64> = cont_values.iter().map(|v| xi * v).collect();
    if let Some(bad) = scaled.iter().position(|v| !(*v > 0.0)) {
        return Err(IamError::domain(
            "ez_aggregate",
            format!(
                "continuation value {} has the wrong sign for Xi = {xi}",
                cont_values[bad]
            ),
        ));
    }
    let ce = power_mean(&scaled, probs, ez.theta());
    Ok((1.0 - ez.beta) * u_now + ez.beta * xi * ce)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TippingParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn params_with_tipping(lambda: f64, gamma_bar: f64) -> ModelParams {
        let mut p = crate::model::tests::toy_params();
        p.tipping = TippingParams {
            lambda,
            t_bar: 1.0,
            gamma_bar,
            d_inf_bar: 0.1,
            q: 0.25,
        };
        p
    }

    fn spec3() -> TippingLevelSpec {
        TippingLevelSpec {
            levels: vec![0.025, 0.1, 0.175],
            weights: vec![2.0 / 9.0, 5.0 / 9.0, 2.0 / 9.0],
            n_transient: 4,
        }
    }

    #[test]
    fn tipping_probability_examples() {
        let p = params_with_tipping(0.1, 50.0);
        assert_eq!(tipping_probability(0.5, &p), 0.0);
        assert_eq!(tipping_probability(1.0, &p), 0.0);
        let p0 = params_with_tipping(0.0, 50.0);
        assert_eq!(tipping_probability(5.0, &p0), 0.0);
        let v = tipping_probability(2.0, &p);
        assert!((v - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
        assert!((v - 0.095163).abs() < 1e-6);
    }

    #[test]
    fn chain_has_sixteen_states() {
        let chain = build_tipping_chain(&params_with_tipping(0.1, 50.0), &spec3()).unwrap();
        assert_eq!(chain.len(), 16);
        assert_eq!(chain.levels[0], 0.0);
        for j in 0..chain.len() {
            if chain.is_absorbing(j) {
                assert_eq!(chain.transition_row(j, 3.0), vec![(j, 1.0)]);
            }
        }
        let m = chain.transition_matrix(2.5);
        for row in &m {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn zero_hazard_stays_pre_tipping() {
        let chain = build_tipping_chain(&params_with_tipping(0.0, 50.0), &spec3()).unwrap();
        assert_eq!(chain.transition_row(0, 10.0), vec![(0, 1.0)]);
    }

    #[test]
    fn long_durations_freeze_transient_stages() {
        let mut prev = 1.0;
        for g in [1e2, 1e4, 1e6, 1e9] {
            let c = build_tipping_chain(&params_with_tipping(0.1, g), &spec3()).unwrap();
            assert!(c.advance_prob < prev);
            prev = c.advance_prob;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn level_moments_enforced() {
        let mut bad = spec3();
        bad.weights = vec![0.25, 0.5, 0.25];
        let err = build_tipping_chain(&params_with_tipping(0.1, 50.0), &bad).unwrap_err();
        assert!(err.to_string().contains("variance"), "{err}");
        let mut bad_mean = spec3();
        bad_mean.levels = vec![0.05, 0.1, 0.2];
        assert!(build_tipping_chain(&params_with_tipping(0.1, 50.0), &bad_mean).is_err());
    }

    #[test]
    fn monotone_absorption_under_random_temperatures() {
        let chain = build_tipping_chain(&params_with_tipping(0.3, 40.0), &spec3()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = chain.len();
        let mut dist = vec![0.0; n];
        dist[0] = 1.0;
        let order = |j: usize| chain.stage_of[j].order(chain.n_transient);
        let at_or_past = |d: &[f64], k: usize| -> f64 { (0..n).filter(|j| order(*j) >= k).map(|j| d[j]).sum() };
        for _ in 0..60 {
            let t_at: f64 = rng.random_range(0.0..4.0);
            let m = chain.transition_matrix(t_at);
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += dist[i] * m[i][j];
                }
            }
            for k in 0..=chain.n_transient + 1 {
                assert!(at_or_past(&next, k) >= at_or_past(&dist, k) - 1e-15);
            }
            dist = next;
        }
    }

    #[test]
    fn ez_degenerate_continuation_ignores_risk_aversion() {
        for psi in [0.7, 1.5] {
            let xi = if psi > 1.0 { 1.0 } else { -1.0 };
            let a = ez_aggregate(
                xi * 2.0,
                &[xi * 5.0],
                &[1.0],
                &EZParams {
                    beta: 0.9,
                    psi,
                    gamma: 2.0,
                },
            )
            .unwrap();
            let b = ez_aggregate(
                xi * 2.0,
                &[xi * 5.0],
                &[1.0],
                &EZParams {
                    beta: 0.9,
                    psi,
                    gamma: 10.0,
                },
            )
            .unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs());
        }
    }

    #[test]
    fn ez_time_separable_case() {
        for psi in [0.5, 2.0] {
            let ez = EZParams {
                beta: 0.95,
                psi,
                gamma: 1.0 / psi,
            };
            let xi = ez.xi();
            let u = xi * 1.3;
            let conts = [xi * 2.0, xi * 7.0];
            let probs = [0.3, 0.7];
            let agg = ez_aggregate(u, &conts, &probs, &ez).unwrap();
            let rhs = (1.0 - ez.beta) * u + ez.beta * conts.iter().zip(probs).map(|(v, p)| p * v).sum::<f64>();
            assert!((agg - rhs).abs() < 1e-12 * rhs.abs(), "{agg} {rhs}");
        }
    }

    #[test]
    fn ez_monotone_in_inputs() {
        for psi in [0.7, 1.5] {
            let ez = EZParams {
                beta: 0.9,
                psi,
                gamma: 8.0,
            };
            let xi = ez.xi();
            let base = ez_aggregate(xi, &[xi * 3.0, xi * 5.0], &[0.4, 0.6], &ez).unwrap();
            assert!(ez_aggregate(xi + 0.01, &[xi * 3.0, xi * 5.0], &[0.4, 0.6], &ez).unwrap() > base);
            assert!(ez_aggregate(xi, &[xi * 3.0 + 0.01, xi * 5.0], &[0.4, 0.6], &ez).unwrap() > base);
            let perm = ez_aggregate(xi, &[xi * 5.0, xi * 3.0], &[0.6, 0.4], &ez).unwrap();
            assert!((perm - base).abs() < 1e-14 * base.abs());
        }
    }

    #[test]
    fn ez_mean_preserving_spread_lowers_value() {
        for psi in [0.7, 1.5] {
            let ez = EZParams {
                beta: 0.9,
                psi,
                gamma: 5.0,
            };
            let xi = ez.xi();
            let base = ez_aggregate(xi, &[xi * 4.0, xi * 4.0], &[0.5, 0.5], &ez).unwrap();
            let spread = ez_aggregate(xi, &[xi * 3.0, xi * 5.0], &[0.5, 0.5], &ez).unwrap();
            assert!(spread < base, "psi {psi}: {spread} !< {base}");
        }
    }

    #[test]
    fn ez_sign_violation_is_domain_error() {
        let ez = EZParams {
            beta: 0.9,
            psi: 1.5,
            gamma: 5.0,
        };
        assert!(matches!(
            ez_aggregate(1.0, &[-1.0], &[1.0], &ez),
            Err(IamError::Domain { .. })
        ));
    }

    #[test]
    fn lrr_degenerate_noise_collapses() {
        let p = LrrParams {
            varrho: 0.01,
            r: 0.0,
            varsigma: 0.0,
            n_zeta: 5,
            n_chi: 7,
            truncation_k: 3.0,
            log_zeta_bound: 0.2,
        };
        let chain = discretize_lrr(&p).unwrap();
        assert_eq!(chain.chi_grid, vec![0.0]);
        assert_eq!(chain.len(), 5);
    }

    #[test]
    fn lrr_without_zeta_noise_is_deterministic() {
        let p = LrrParams {
            varrho: 0.0,
            r: 0.5,
            varsigma: 0.0,
            n_zeta: 5,
            n_chi: 3,
            truncation_k: 3.0,
            log_zeta_bound: 0.2,
        };
        let chain = discretize_lrr(&p).unwrap();
        for row in &chain.p {
            assert_eq!(row.iter().filter(|v| **v > 0.0).count(), 1);
            assert!(row.iter().any(|v| *v == 1.0));
        }
        // with chi noise, the zeta part splits onto at most two neighbours
        let noisy = discretize_lrr(&LrrParams {
            varsigma: 0.01,
            log_zeta_bound: 0.3,
            ..p
        })
        .unwrap();
        for (a, _) in noisy.log_zeta_grid.iter().enumerate() {
            for i in 0..noisy.n_chi() {
                let row = &noisy.p[noisy.index(a, i)];
                let zeta_support = (0..noisy.log_zeta_grid.len())
                    .filter(|b| (0..noisy.n_chi()).any(|l| row[noisy.index(*b, l)] > 0.0))
                    .count();
                assert!(zeta_support <= 2);
            }
        }
    }

    #[test]
    fn lrr_rejects_uncovered_support() {
        let p = LrrParams {
            varrho: 0.05,
            r: 0.5,
            varsigma: 0.01,
            n_zeta: 5,
            n_chi: 3,
            truncation_k: 3.0,
            log_zeta_bound: 0.05,
        };
        assert!(matches!(discretize_lrr(&p), Err(IamError::Config(_))));
        let one_chi = LrrParams {
            n_chi: 1,
            log_zeta_bound: 0.5,
            ..p
        };
        assert!(discretize_lrr(&one_chi).is_err());
    }

    #[test]
    fn lrr_rows_are_stochastic() {
        let p = LrrParams {
            varrho: 0.0172,
            r: 0.28,
            varsigma: 0.009,
            n_zeta: 31,
            n_chi: 7,
            truncation_k: 3.0,
            log_zeta_bound: 0.3,
        };
        let chain = discretize_lrr(&p).unwrap();
        assert_eq!(chain.len(), 217);
        for row in &chain.p {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn power_mean_limits() {
        let v = [1.0, 4.0];
        let p = [0.5, 0.5];
        assert!((power_mean(&v, &p, 1.0) - 2.5).abs() < 1e-15);
        assert!((power_mean(&v, &p, 0.0) - 2.0).abs() < 1e-14);
        assert!((power_mean(&v, &p, -1.0) - 1.6).abs() < 1e-14);
    }

    #[test]
    fn simulated_chi_moments_use_gaussian_innovations() {
        // sanity check of the oracle machinery used by the acceptance suite
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((s2 / n as f64 - 1.0).abs() < 0.02);
    }
}
