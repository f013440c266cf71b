//! Batch runs: resolve settings, dispatch a mode, write CSVs and a manifest.
//!
//! Settings come from the calibration's `[run]` table; command-line values
//! override them. Every CSV has a fixed column order and prints floats with
//! 17 significant digits, so repeated runs produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::approx::{fmt_f64, ClampCounter};
use crate::calibration::{load_calibration, Calibration};
use crate::det::{DetOptions, DetProblem, Horizon, TerminalRule, Trajectory, DEFAULT_EXTRA_PERIODS, DEFAULT_PERIODS};
use crate::error::{IamError, Result};
use crate::model::N_CONT;
use crate::robust::{
    self, load_scenarios, max_regret_per_candidate, regret_matrix, scenario_optima, welfare_matrix, DecisionPath,
    RobustConfig, RobustOutcome, ScenarioSet, MC_VARIABLES,
};
use crate::simulate::{
    quantile, quantile_table, sceq_solve, simulate_policy, PathEnsemble, SceqConfig, SceqProblem, SimConfig,
    MAX_FAILED_PATH_FRAC, QUANTILES, SIM_VARIABLES,
};
use crate::vfi::{solve_vfi, VfiConfig, VfiModel, VfiSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveDet,
    SolveVfi,
    Simulate,
    Sceq,
    Regret,
    Maxmin,
    Montecarlo,
    Expected,
    Scc,
    Summarize,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::SolveDet,
        Mode::SolveVfi,
        Mode::Simulate,
        Mode::Sceq,
        Mode::Regret,
        Mode::Maxmin,
        Mode::Montecarlo,
        Mode::Expected,
        Mode::Scc,
        Mode::Summarize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::SolveDet => "solve-det",
            Mode::SolveVfi => "solve-vfi",
            Mode::Simulate => "simulate",
            Mode::Sceq => "sceq",
            Mode::Regret => "regret",
            Mode::Maxmin => "maxmin",
            Mode::Montecarlo => "montecarlo",
            Mode::Expected => "expected",
            Mode::Scc => "scc",
            Mode::Summarize => "summarize",
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, Mode::Simulate | Mode::Sceq | Mode::Montecarlo)
    }

    fn needs_scenarios(self) -> bool {
        matches!(self, Mode::Regret | Mode::Maxmin | Mode::Expected | Mode::Montecarlo)
    }
}

impl FromStr for Mode {
    type Err = IamError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| IamError::config(format!("unknown mode '{s}'")))
    }
}

/// One job as given on the command line.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub calib: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    /// Ensemble CSV read by `summarize` (default `<out>/ensemble.csv`).
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub degree: Option<usize>,
    pub paths: Option<usize>,
    pub tol: Option<f64>,
}

impl RunConfig {
    pub fn new(mode: Mode, calib: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            mode,
            calib: Some(calib.into()),
            scenarios: None,
            input: None,
            out: out.into(),
            horizon: None,
            seed: None,
            degree: None,
            paths: None,
            tol: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DetSettings {
    pub periods: usize,
    pub extra_periods: usize,
    pub tol: f64,
}

impl Default for DetSettings {
    fn default() -> Self {
        DetSettings {
            periods: DEFAULT_PERIODS,
            extra_periods: DEFAULT_EXTRA_PERIODS,
            tol: DetOptions::default().tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    pub draws: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings { draws: 200 }
    }
}

/// Job settings after merging `[run]` with command-line overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub seed: Option<u64>,
    pub scenarios: Option<PathBuf>,
    pub det: DetSettings,
    pub vfi: VfiConfig,
    pub simulate: SimConfig,
    pub sceq: SceqConfig,
    pub robust: RobustConfig,
    pub montecarlo: McSettings,
}

impl RunSettings {
    pub fn from_table(run: &toml::Table) -> Result<Self> {
        RunSettings::deserialize(toml::Value::Table(run.clone())).map_err(|e| IamError::Calibration {
            location: "[run]".into(),
            detail: e.message().to_string(),
        })
    }

    /// Applies command-line overrides; flags win over the file.
    pub fn apply(&mut self, cfg: &RunConfig) {
        if let Some(h) = cfg.horizon {
            self.det.periods = h;
            self.vfi.periods = h;
            self.sceq.horizon = h;
            self.robust.horizon = h;
        }
        if let Some(s) = cfg.seed {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.simulate.seed = s;
            self.sceq.seed = s;
        }
        if let Some(d) = cfg.degree {
            self.vfi.degree = d;
        }
        if let Some(n) = cfg.paths {
            self.simulate.n_paths = n;
            self.sceq.n_paths = n;
            self.montecarlo.draws = n;
        }
        if let Some(t) = cfg.tol {
            self.det.tol = t;
            self.robust.tol = t;
            self.vfi.node_tol = t;
        }
        if cfg.scenarios.is_some() {
            self.scenarios = cfg.scenarios.clone();
        }
    }
}

/// One invariant evaluated after a run.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub file: String,
    pub bytes: usize,
    pub fnv1a: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub fnv1a: String,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: Mode,
    pub command: RunConfig,
    pub calibration: Option<InputRecord>,
    pub scenarios: Option<InputRecord>,
    pub seed: Option<u64>,
    pub settings: Option<RunSettings>,
    pub threads: usize,
    #[serde(skip)]
    pub wall_seconds: f64,
    pub checks: Vec<Check>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<FileRecord>,
    pub passed: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

pub fn fnv1a(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Buffered CSV text with a fixed header.
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
            width: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.width);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(v) => self.text.push_str(&fmt_f64(*v)),
                Cell::I(v) => {
                    let _ = write!(self.text, "{v}");
                }
                Cell::S(v) => self.text.push_str(&csv_escape(v)),
            }
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl Outputs {
    fn write(&mut self, name: &str, text: String) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text.as_bytes()).map_err(|e| IamError::io(&path, e))?;
        self.files.push(FileRecord {
            file: name.into(),
            bytes: text.len(),
            fnv1a: fnv1a(text.as_bytes()),
        });
        Ok(())
    }
}

struct ModeResult {
    checks: Vec<Check>,
    summary: serde_json::Map<String, serde_json::Value>,
}

impl ModeResult {
    fn new() -> Self {
        ModeResult {
            checks: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    fn put(&mut self, key: &str, v: impl Serialize) {
        self.summary
            .insert(key.into(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }
}

/// Runs one job. `Ok` carries the manifest even when a check failed; the
/// caller decides the exit status from `manifest.passed`.
pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.out).map_err(|e| IamError::io(&cfg.out, e))?;
    let mut out = Outputs {
        dir: cfg.out.clone(),
        files: Vec::new(),
    };
    let mut calibration_rec = None;
    let mut scenario_rec = None;
    let mut settings = None;
    let result = if cfg.mode == Mode::Summarize {
        summarize(cfg, &mut out)?
    } else {
        let calib_path = cfg
            .calib
            .as_ref()
            .ok_or_else(|| IamError::config(format!("mode {} needs --calib", cfg.mode.name())))?;
        calibration_rec = Some(input_record(calib_path)?);
        let cal = load_calibration(calib_path)?;
        let mut s = RunSettings::from_table(&cal.run)?;
        s.apply(cfg);
        if cfg.mode.stochastic() && s.seed.is_none() {
            return Err(IamError::config(format!(
                "mode {} needs a seed (--seed or [run].seed)",
                cfg.mode.name()
            )));
        }
        if cfg.mode.needs_scenarios() && s.scenarios.is_none() {
            return Err(IamError::config(format!(
                "mode {} needs a scenario file (--scenarios or [run].scenarios)",
                cfg.mode.name()
            )));
        }
        if let Some(p) = &s.scenarios {
            let resolved = resolve_relative(p, calib_path, cfg.scenarios.is_some());
            scenario_rec = Some(input_record(&resolved)?);
            s.scenarios = Some(resolved);
        }
        let r = dispatch(cfg.mode, &cal, &s, &mut out)?;
        settings = Some(s);
        r
    };
    let passed = result.checks.iter().all(|c| c.passed);
    let manifest = Manifest {
        tool: "iam",
        version: env!("CARGO_PKG_VERSION"),
        mode: cfg.mode,
        command: cfg.clone(),
        calibration: calibration_rec,
        scenarios: scenario_rec,
        seed: settings.as_ref().and_then(|s| s.seed),
        settings,
        threads: rayon::current_num_threads(),
        wall_seconds: start.elapsed().as_secs_f64(),
        checks: result.checks,
        summary: result.summary,
        outputs: out.files,
        passed,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| IamError::numerical(e.to_string()))?;
    let path = cfg.out.join(MANIFEST_FILE);
    std::fs::write(&path, text + "\n").map_err(|e| IamError::io(&path, e))?;
    Ok(manifest)
}

/// Scenario paths in the file are relative to the calibration; flags are
/// relative to the working directory.
fn resolve_relative(p: &Path, calib: &Path, from_flag: bool) -> PathBuf {
    if from_flag || p.is_absolute() {
        return p.to_path_buf();
    }
    calib.parent().map_or_else(|| p.to_path_buf(), |d| d.join(p))
}

fn input_record(path: &Path) -> Result<InputRecord> {
    let bytes = std::fs::read(path).map_err(|e| IamError::io(path, e))?;
    Ok(InputRecord {
        path: path.display().to_string(),
        fnv1a: fnv1a(&bytes),
    })
}

/// Machine-readable failure record.
pub fn error_record(err: &IamError) -> serde_json::Value {
    let mut v = serde_json::json!({
        "status": "error",
        "kind": err.kind(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    });
    if let IamError::NotConverged { best, .. } = err {
        v["best_iterate"] = serde_json::json!(best);
    }
    v
}

fn dispatch(mode: Mode, cal: &Calibration, s: &RunSettings, out: &mut Outputs) -> Result<ModeResult> {
    match mode {
        Mode::SolveDet | Mode::Scc => run_det(mode, cal, s, out),
        Mode::SolveVfi => run_vfi(cal, s, out).map(|(r, _)| r),
        Mode::Simulate => run_simulate(cal, s, out),
        Mode::Sceq => run_sceq(cal, s, out),
        Mode::Regret | Mode::Maxmin | Mode::Expected => run_robust(mode, cal, s, out),
        Mode::Montecarlo => run_montecarlo(cal, s, out),
        Mode::Summarize => unreachable!("handled before calibration load"),
    }
}

fn year(cal_start: f64, step: f64, t: usize) -> f64 {
    cal_start + step * t as f64
}

pub const TRAJECTORY_COLUMNS: [&str; 13] = [
    "t", "year", "K", "M_AT", "M_UO", "M_DO", "T_AT", "T_OC", "C", "mu", "E", "SCC", "tax",
];

pub fn trajectory_csv(traj: &Trajectory, start_year: f64, step: f64) -> String {
    let mut csv = Csv::new(&TRAJECTORY_COLUMNS);
    for t in 0..traj.n_periods() {
        let x = traj.states[t].continuous();
        let mut cells = vec![Cell::I(t as i64), Cell::F(year(start_year, step, t))];
        cells.extend(x.iter().map(|v| Cell::F(*v)));
        cells.extend([
            Cell::F(traj.decisions[t].c),
            Cell::F(traj.decisions[t].mu),
            Cell::F(traj.emissions[t]),
            Cell::F(traj.scc_path[t]),
            Cell::F(traj.tax_path[t]),
        ]);
        csv.row(&cells);
    }
    csv.into_string()
}

/// Largest `|SCC - tax| / SCC` over periods with interior mu.
pub fn pigovian_gap(traj: &Trajectory, mu_max: f64) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for t in 0..traj.n_periods() {
        let mu = traj.decisions[t].mu;
        if mu > 1e-6 && mu < mu_max - 1e-6 {
            count += 1;
            worst = worst.max((traj.scc_path[t] - traj.tax_path[t]).abs() / traj.scc_path[t].abs());
        }
    }
    (worst, count)
}

fn run_det(mode: Mode, cal: &Calibration, s: &RunSettings, out: &mut Outputs) -> Result<ModeResult> {
    let horizon = Horizon::new(
        s.det.periods,
        cal.params.step_years,
        TerminalRule::FixedSavings {
            extra_periods: s.det.extra_periods,
        },
    )?;
    let problem = DetProblem::new(&cal.params, &cal.paths, horizon, &cal.initial)?;
    let opts = DetOptions {
        tol: s.det.tol,
        ..DetOptions::default()
    };
    let traj = problem.solve(None, &opts)?;
    let p = &cal.params;
    out.write("trajectory.csv", trajectory_csv(&traj, p.start_year, p.step_years))?;
    let mut r = ModeResult::new();
    if mode == Mode::Scc {
        let mut csv = Csv::new(&["t", "year", "SCC", "tax", "rel_gap"]);
        for t in 0..traj.n_periods() {
            let gap = (traj.scc_path[t] - traj.tax_path[t]).abs() / traj.scc_path[t].abs();
            csv.row(&[
                Cell::I(t as i64),
                Cell::F(year(p.start_year, p.step_years, t)),
                Cell::F(traj.scc_path[t]),
                Cell::F(traj.tax_path[t]),
                Cell::F(gap),
            ]);
        }
        out.write("scc.csv", csv.into_string())?;
    }
    r.put("welfare", traj.welfare);
    r.put("scc0", traj.scc_path[0]);
    r.put("iterations", traj.iterations);
    r.put("pg_norm", traj.pg_norm);
    r.checks.push(Check::new(
        "converged",
        traj.pg_norm <= s.det.tol,
        format!("projected gradient {:.3e} <= {:.1e}", traj.pg_norm, s.det.tol),
    ));
    let (gap, n) = pigovian_gap(&traj, p.mu_max);
    r.checks.push(Check::new(
        "pigovian_identity",
        gap <= 1e-3,
        format!("max |SCC-tax|/SCC = {gap:.3e} over {n} interior periods"),
    ));
    let finite = traj.scc_path.iter().chain(&traj.tax_path).all(|v| v.is_finite());
    r.checks
        .push(Check::new("finite_output", finite, "SCC and tax paths are finite"));
    Ok(r)
}

pub const POLICY_COLUMNS: [&str; 11] = [
    "t", "node", "state", "K", "M_AT", "M_UO", "M_DO", "T_AT", "T_OC", "s", "mu",
];
pub const VALUE_COLUMNS: [&str; 10] = [
    "t", "node", "state", "K", "M_AT", "M_UO", "M_DO", "T_AT", "T_OC", "value",
];

/// Node-level policy dump keyed by `(t, node, state)`.
pub fn policy_csv(sol: &VfiSolution) -> Result<String> {
    let mut csv = Csv::new(&POLICY_COLUMNS);
    for slice in &sol.policies {
        let nodes = slice.grid.nodes();
        for (k, d) in slice.states.iter().enumerate() {
            for (i, x) in nodes.iter().enumerate() {
                let (sv, mv) = if slice.node_s[k].len() == nodes.len() {
                    (slice.node_s[k][i], slice.node_mu[k][i])
                } else {
                    (slice.s_fit[k].eval(x), slice.mu_fit[k].eval(x))
                };
                let mut cells = vec![Cell::I(slice.t as i64), Cell::I(i as i64), Cell::I(*d as i64)];
                cells.extend(x.iter().map(|v| Cell::F(*v)));
                cells.extend([Cell::F(sv), Cell::F(mv)]);
                csv.row(&cells);
            }
        }
    }
    Ok(csv.into_string())
}

/// Value dump at the approximation nodes of every period, terminal included.
pub fn value_csv(sol: &VfiSolution) -> Result<String> {
    let mut csv = Csv::new(&VALUE_COLUMNS);
    let ppd = sol.model.config.points();
    let clamps = ClampCounter::default();
    for v in &sol.values {
        let grid = crate::approx::cheb_nodes(&v.domain, ppd)?;
        let nodes = grid.nodes();
        for (d, a) in v.approx.iter().enumerate() {
            if a.is_none() {
                continue;
            }
            for (i, x) in nodes.iter().enumerate() {
                let xs: [f64; N_CONT] = x.as_slice().try_into().expect("six state coordinates");
                let mut cells = vec![Cell::I(v.t as i64), Cell::I(i as i64), Cell::I(d as i64)];
                cells.extend(x.iter().map(|c| Cell::F(*c)));
                cells.push(Cell::F(v.value(d, &xs, &clamps)?));
                csv.row(&cells);
            }
        }
    }
    Ok(csv.into_string())
}

fn run_vfi(cal: &Calibration, s: &RunSettings, out: &mut Outputs) -> Result<(ModeResult, VfiSolution)> {
    let model = VfiModel::from_calibration(cal, &s.vfi)?;
    let sol = solve_vfi(&model)?;
    out.write("vfi_policy.csv", policy_csv(&sol)?)?;
    out.write("vfi_value.csv", value_csv(&sol)?)?;
    let x0 = model.init.continuous();
    let v0 = sol.initial_value()?;
    let scc0 = sol.scc(0, &x0, model.init_state)?;
    let mut r = ModeResult::new();
    r.put("initial_value", v0);
    r.put("scc0", scc0);
    r.put("fingerprint", model.fingerprint());
    r.put("stats", &sol.stats);
    let frac = sol.stats.failures as f64 / sol.stats.node_solves.max(1) as f64;
    r.checks.push(Check::new(
        "node_failures",
        frac <= s.vfi.max_failure_frac,
        format!(
            "{} of {} node optimizations missed tolerance",
            sol.stats.failures, sol.stats.node_solves
        ),
    ));
    r.checks.push(Check::new(
        "finite_initial_value",
        v0.is_finite() && scc0.is_finite(),
        format!("V0 = {v0}, SCC0 = {scc0}"),
    ));
    Ok((r, sol))
}

pub const ENSEMBLE_COLUMNS: [&str; 4] = ["path", "t", "variable", "value"];
pub const QUANTILE_COLUMNS: [&str; 7] = ["t", "variable", "q05", "q25", "q50", "q75", "q95"];

pub fn ensemble_csv(ens: &PathEnsemble) -> String {
    let mut csv = Csv::new(&ENSEMBLE_COLUMNS);
    for p in 0..ens.n_paths {
        for t in 0..ens.n_periods {
            for (v, name) in SIM_VARIABLES.iter().enumerate() {
                csv.row(&[
                    Cell::I(p as i64),
                    Cell::I(t as i64),
                    Cell::S((*name).into()),
                    Cell::F(ens.get(p, t, v)),
                ]);
            }
        }
    }
    csv.into_string()
}

fn quantile_csv(rows: &[(usize, String, [f64; 5])]) -> String {
    let mut csv = Csv::new(&QUANTILE_COLUMNS);
    for (t, name, q) in rows {
        let mut cells = vec![Cell::I(*t as i64), Cell::S(name.clone())];
        cells.extend(q.iter().map(|v| Cell::F(*v)));
        csv.row(&cells);
    }
    csv.into_string()
}

fn ensemble_quantiles(ens: &PathEnsemble) -> String {
    let rows: Vec<_> = quantile_table(ens)
        .into_iter()
        .map(|(t, v, q)| (t, SIM_VARIABLES[v].to_string(), q))
        .collect();
    quantile_csv(&rows)
}

fn run_simulate(cal: &Calibration, s: &RunSettings, out: &mut Outputs) -> Result<ModeResult> {
    let (mut r, sol) = run_vfi(cal, s, out)?;
    let (ens, stats) = simulate_policy(&sol, &s.simulate)?;
    out.write("ensemble.csv", ensemble_csv(&ens))?;
    out.write("quantiles.csv", ensemble_quantiles(&ens))?;
    r.put("simulation", &stats);
    r.checks.push(Check::new(
        "domain_exits",
        stats.clamps == 0,
        format!(
            "{} states left their approximation box over {} paths",
            stats.clamps, ens.n_paths
        ),
    ));
    Ok(r)
}

fn run_sceq(cal: &Calibration, s: &RunSettings, out: &mut Outputs) -> Result<ModeResult> {
    let problem = SceqProblem::from_calibration(cal, &s.sceq)?;
    let (ens, stats) = sceq_solve(&problem, &s.sceq)?;
    out.write("ensemble.csv", ensemble_csv(&ens))?;
    out.write("quantiles.csv", ensemble_quantiles(&ens))?;
    let mut r = ModeResult::new();
    r.put("sceq", stats);
    r.checks.push(Check::new(
        "failed_paths",
        stats.failed_paths as f64 <= MAX_FAILED_PATH_FRAC * ens.n_paths as f64,
        format!("{} of {} paths failed", stats.failed_paths, ens.n_paths),
    ));
    Ok(r)
}

fn decisions_csv(labels: &[String], decisions: &[DecisionPath], start_year: f64, step: f64) -> String {
    let mut csv = Csv::new(&["candidate", "t", "year", "s", "mu"]);
    for (l, d) in labels.iter().zip(decisions) {
        for t in 0..d.len() {
            csv.row(&[
                Cell::S(l.clone()),
                Cell::I(t as i64),
                Cell::F(year(start_year, step, t)),
                Cell::F(d.savings[t]),
                Cell::F(d.mu[t]),
            ]);
        }
    }
    csv.into_string()
}

fn matrix_csv(row_labels: &[String], col_labels: &[String], m: &[Vec<f64>]) -> String {
    let mut header = vec!["scenario"];
    header.extend(col_labels.iter().map(|s| s.as_str()));
    let mut csv = Csv::new(&header);
    for (l, row) in row_labels.iter().zip(m) {
        let mut cells = vec![Cell::S(l.clone())];
        cells.extend(row.iter().map(|v| Cell::F(*v)));
        csv.row(&cells);
    }
    csv.into_string()
}

fn run_robust(mode: Mode, cal: &Calibration, s: &RunSettings, out: &mut Outputs) -> Result<ModeResult> {
    let path = s.scenarios.as_ref().expect("checked by run");
    let set: ScenarioSet = load_scenarios(path, cal)?.set;
    let cfg = &s.robust;
    let outcome: RobustOutcome = match mode {
        Mode::Regret => {
            if set.len() < 2 {
                return Err(IamError::config("regret needs at least 2 scenarios"));
            }
            robust::min_max_regret(&set, cfg)?.0
        }
        Mode::Maxmin => {
            if set.len() < 2 {
                return Err(IamError::config("maxmin needs at least 2 scenarios"));
            }
            robust::max_min(&set, cfg)?
        }
        _ => robust::expected_welfare_decision(&set, cfg)?,
    };
    let optima = scenario_optima(&set, cfg)?;
    let mut labels: Vec<String> = optima.labels.iter().map(|l| format!("opt:{l}")).collect();
    labels.push(outcome.criterion.clone());
    let mut decisions = optima.decisions.clone();
    decisions.push(outcome.decision.clone());
    let welfare = welfare_matrix(&set, &decisions, cfg)?;
    let regret = regret_matrix(&optima, &welfare);
    let p = &cal.params;
    out.write(
        "decisions.csv",
        decisions_csv(&labels, &decisions, p.start_year, p.step_years),
    )?;
    out.write("welfare_matrix.csv", matrix_csv(&optima.labels, &labels, &welfare))?;
    out.write("regret_matrix.csv", matrix_csv(&optima.labels, &labels, &regret))?;

    let mut r = ModeResult::new();
    r.put("criterion", &outcome.criterion);
    r.put("value", outcome.value);
    r.put("source", &outcome.source);
    r.put("scenario_optima", &optima.welfare);
    let n = optima.labels.len();
    let max_reg = max_regret_per_candidate(&regret);
    match mode {
        Mode::Regret => {
            let best_candidate = max_reg[..n].iter().copied().fold(f64::INFINITY, f64::min);
            r.checks.push(Check::new(
                "candidate_dominance",
                max_reg[n] <= best_candidate,
                format!("max regret {} vs best scenario optimum {}", max_reg[n], best_candidate),
            ));
        }
        Mode::Maxmin => {
            let w_star = optima.welfare.iter().copied().fold(f64::INFINITY, f64::min);
            let tol = 1e-10 * w_star.abs();
            r.checks.push(Check::new(
                "below_scenario_optima",
                outcome.value <= w_star + tol,
                format!("worst-case welfare {} vs min optimum {}", outcome.value, w_star),
            ));
            let best_candidate = (0..n)
                .map(|j| welfare.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max);
            r.checks.push(Check::new(
                "candidate_dominance",
                outcome.value >= best_candidate,
                format!(
                    "worst-case welfare {} vs best scenario optimum {}",
                    outcome.value, best_candidate
                ),
            ));
        }
        _ => {
            let weights: Vec<f64> = set.scenarios.iter().map(|s| s.weight.unwrap_or(0.0)).collect();
            let expected = |j: usize| welfare.iter().zip(&weights).map(|(row, w)| w * row[j]).sum::<f64>();
            let best_candidate = (0..n).map(expected).fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-10 * best_candidate.abs();
            r.checks.push(Check::new(
                "candidate_dominance",
                expected(n) >= best_candidate - tol,
                format!(
                    "expected welfare {} vs best scenario optimum {}",
                    expected(n),
                    best_candidate
                ),
            ));
        }
    }
    Ok(r)
}

fn run_montecarlo(cal: &Calibration, s: &RunSettings, out: &mut Outputs) -> Result<ModeResult> {
    let path = s.scenarios.as_ref().expect("checked by run");
    let beliefs = load_scenarios(path, cal)?.beliefs;
    let seed = s.seed.expect("checked by run");
    let report = robust::monte_carlo(cal, &beliefs, s.montecarlo.draws, seed, &s.robust)?;
    let mut header = vec!["draw".to_string()];
    header.extend(report.params.iter().cloned());
    header.extend(["SCC0", "mu0", "status"].map(String::from));
    let mut csv = Csv::new(&header.iter().map(|h| h.as_str()).collect::<Vec<_>>());
    for d in &report.draws {
        let mut cells = vec![Cell::I(d.index as i64)];
        cells.extend(d.values.iter().map(|v| Cell::F(*v)));
        match &d.error {
            None => cells.extend([Cell::F(d.series[0][0]), Cell::F(d.series[1][0]), Cell::S("ok".into())]),
            Some(_) => cells.extend([Cell::F(f64::NAN), Cell::F(f64::NAN), Cell::S("failed".into())]),
        }
        csv.row(&cells);
    }
    out.write("draws.csv", csv.into_string())?;
    let rows: Vec<_> = report
        .quantiles()
        .into_iter()
        .map(|(t, v, q)| (t, MC_VARIABLES[v].to_string(), q))
        .collect();
    out.write("quantiles.csv", quantile_csv(&rows))?;
    let scc0: Vec<f64> = report
        .draws
        .iter()
        .filter(|d| d.error.is_none())
        .map(|d| d.series[0][0])
        .collect();
    let mut r = ModeResult::new();
    r.put("note", report.note);
    r.put("draws", report.draws.len());
    r.put("failures", report.failures);
    r.put("scc0_median", quantile(&scc0, 0.5));
    r.put("scc0_iqr", quantile(&scc0, 0.75) - quantile(&scc0, 0.25));
    r.checks.push(Check::new(
        "failure_rate",
        report.failures as f64 <= robust::MAX_FAILED_DRAW_FRAC * report.draws.len() as f64,
        format!("{} of {} draws failed", report.failures, report.draws.len()),
    ));
    Ok(r)
}

/// Reads a long-format ensemble CSV.
pub fn read_ensemble(path: &Path) -> Result<Vec<(usize, String, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| IamError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != ENSEMBLE_COLUMNS.join(",") {
        return Err(IamError::Data(format!(
            "{}: expected header '{}'",
            path.display(),
            ENSEMBLE_COLUMNS.join(",")
        )));
    }
    let bad = |i: usize| IamError::Data(format!("{} line {}: malformed row", path.display(), i + 2));
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i));
            }
            let t = f[1].parse::<usize>().map_err(|_| bad(i))?;
            let v = f[3].parse::<f64>().map_err(|_| bad(i))?;
            Ok((t, f[2].to_string(), v))
        })
        .collect()
}

fn summarize(cfg: &RunConfig, out: &mut Outputs) -> Result<ModeResult> {
    let input = cfg.input.clone().unwrap_or_else(|| cfg.out.join("ensemble.csv"));
    let rows = read_ensemble(&input)?;
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    let mut names: Vec<String> = Vec::new();
    for (t, name, v) in rows {
        let idx = match names.iter().position(|n| *n == name) {
            Some(i) => i,
            None => {
                names.push(name);
                names.len() - 1
            }
        };
        groups.entry((t, idx)).or_default().push(v);
    }
    let table: Vec<_> = groups
        .iter()
        .map(|((t, idx), xs)| {
            let mut q = [0.0; 5];
            for (i, p) in QUANTILES.iter().enumerate() {
                q[i] = quantile(xs, *p);
            }
            (*t, names[*idx].clone(), q)
        })
        .collect();
    out.write("quantiles.csv", quantile_csv(&table))?;
    let mut r = ModeResult::new();
    r.put("input", input.display().to_string());
    r.put("rows", table.len());
    r.checks.push(Check::new(
        "nonempty",
        !table.is_empty(),
        format!("{} quantile rows", table.len()),
    ));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("bogus".parse::<Mode>().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn csv_cells_format_round_trip() {
        let mut c = Csv::new(&["a", "b", "c"]);
        c.row(&[Cell::I(3), Cell::F(0.1), Cell::S("x,y".into())]);
        let s = c.into_string();
        assert_eq!(s, "a,b,c\n3,1.0000000000000001e-1,\"x,y\"\n");
        let v: f64 = s.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.1);
    }

    #[test]
    fn flags_override_run_table() {
        let table: toml::Table = toml::from_str("seed = 7\n[det]\nperiods = 30\n[vfi]\ndegree = 3\n").unwrap();
        let mut s = RunSettings::from_table(&table).unwrap();
        let mut cfg = RunConfig::new(Mode::SolveDet, "c.toml", "out");
        cfg.horizon = Some(12);
        cfg.seed = Some(9);
        s.apply(&cfg);
        assert_eq!(s.det.periods, 12);
        assert_eq!(s.vfi.degree, 3);
        assert_eq!(s.seed, Some(9));
        assert_eq!(s.sceq.seed, 9);
        let bad: toml::Table = toml::from_str("[det]\nperiodz = 3\n").unwrap();
        let e = RunSettings::from_table(&bad).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("[run]"));
    }
}
