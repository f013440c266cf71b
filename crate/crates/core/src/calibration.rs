//! Calibration files: TOML with `[params]`, `[initial]`, `[tipping]`,
//! `[lrr]`, `[paths]` and an optional `[run]` section of job settings.
//!
//! Errors name the offending `[section].key` and, where the key exists in
//! the source, its line number.

use std::path::Path;

use serde::Serialize;

use crate::error::{IamError, Result};
use crate::model::{ExogenousPaths, ModelParams, StateVector, TippingParams};
use crate::stochastic::{build_tipping_chain, discretize_lrr, LrrParams, TippingLevelSpec};

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub params: ModelParams,
    pub paths: ExogenousPaths,
    pub initial: StateVector,
    pub tipping: TippingLevelSpec,
    pub lrr: LrrParams,
    /// Raw `[run]` section; interpreted by the run layer.
    #[serde(skip)]
    pub run: toml::Table,
}

/// Loads a calibration file. A top-level `base = "other.toml"` (relative to
/// the file) inherits every table of that file; keys given here win.
pub fn load_calibration(path: &Path) -> Result<Calibration> {
    let src = std::fs::read_to_string(path).map_err(|e| IamError::io(path, e))?;
    let origin = path.display().to_string();
    let root = parse_toml(&src, &origin)?;
    if !root.contains_key("base") {
        return parse_calibration(&src, &origin);
    }
    let merged = resolve_base(path, root, 0)?;
    from_table(merged).map_err(|e| with_line(e, &src))
}

fn resolve_base(path: &Path, mut root: toml::Table, depth: usize) -> Result<toml::Table> {
    let Some(base) = root.remove("base") else {
        return Ok(root);
    };
    let loc = |detail: String| IamError::Calibration {
        location: format!("{} base", path.display()),
        detail,
    };
    if depth >= 8 {
        return Err(loc("base chain deeper than 8 files".into()));
    }
    let rel = base.as_str().ok_or_else(|| loc("base must be a file path".into()))?;
    let base_path = path
        .parent()
        .map_or_else(|| Path::new(rel).to_path_buf(), |d| d.join(rel));
    let src = std::fs::read_to_string(&base_path).map_err(|e| IamError::io(&base_path, e))?;
    let parent = resolve_base(
        &base_path,
        parse_toml(&src, &base_path.display().to_string())?,
        depth + 1,
    )?;
    Ok(merge_tables(parent, root))
}

fn merge_tables(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge_tables(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// 1-based line of `key` inside `[section]`, if present.
pub(crate) fn locate_key(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let header = section.to_ascii_lowercase();
    let key = key.to_ascii_lowercase();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_ascii_lowercase();
            continue;
        }
        if current == header {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim().trim_matches('"').to_ascii_lowercase() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

pub(crate) fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Parses TOML, reporting syntax errors with their line.
pub(crate) fn parse_toml(src: &str, origin: &str) -> Result<toml::Table> {
    toml::from_str::<toml::Table>(src).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(src, s.start));
        IamError::Calibration {
            location: match line {
                Some(l) => format!("{origin} line {l}"),
                None => origin.to_string(),
            },
            detail: e.message().to_string(),
        }
    })
}

/// Attaches a line number to a `[section].key` location when possible.
pub(crate) fn with_line(err: IamError, src: &str) -> IamError {
    match err {
        IamError::Calibration { location, detail } if !location.contains(" line ") => {
            let line = location
                .strip_prefix('[')
                .and_then(|rest| rest.split_once("]."))
                .and_then(|(sec, key)| locate_key(src, sec, key));
            IamError::Calibration {
                location: match line {
                    Some(l) => format!("{location} (line {l})"),
                    None => location,
                },
                detail,
            }
        }
        other => other,
    }
}

/// Typed access to one TOML table with case-insensitive keys.
pub(crate) struct Section<'a> {
    pub name: &'a str,
    pub table: Option<&'a toml::Table>,
    used: std::cell::RefCell<Vec<String>>,
}

impl<'a> Section<'a> {
    pub fn new(root: &'a toml::Table, name: &'a str) -> Result<Self> {
        let table = match root.get(name) {
            None => None,
            Some(toml::Value::Table(t)) => Some(t),
            Some(_) => {
                return Err(IamError::Calibration {
                    location: format!("[{name}]"),
                    detail: "must be a table".into(),
                })
            }
        };
        Ok(Section {
            name,
            table,
            used: Default::default(),
        })
    }

    pub fn present(&self) -> bool {
        self.table.is_some()
    }

    fn err(&self, key: &str, detail: impl Into<String>) -> IamError {
        IamError::Calibration {
            location: format!("[{}].{key}", self.name),
            detail: detail.into(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&'a toml::Value> {
        let t = self.table?;
        let (k, v) = t.iter().find(|(k, _)| k.eq_ignore_ascii_case(key))?;
        self.used.borrow_mut().push(k.clone());
        Some(v)
    }

    fn num(&self, key: &str, v: &toml::Value) -> Result<f64> {
        match v {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.err(key, "expected a number")),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        match self.get(key) {
            Some(v) => self.num(key, v),
            None => Err(self.err(key, "missing required key")),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(v) => self.num(key, v),
            None => Ok(default),
        }
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| self.num(key, v)).transpose()
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        match self.get(key) {
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(_) => Err(self.err(key, "expected a non-negative integer")),
            None => Err(self.err(key, "missing required key")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            Some(toml::Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.err(key, "expected true or false")),
            None => Ok(default),
        }
    }

    pub fn vec(&self, key: &str) -> Result<Vec<f64>> {
        match self.get(key) {
            Some(toml::Value::Array(a)) => a.iter().map(|v| self.num(key, v)).collect(),
            Some(_) => Err(self.err(key, "expected an array of numbers")),
            None => Err(self.err(key, "missing required key")),
        }
    }

    pub fn fixed<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let v = self.vec(key)?;
        v.try_into()
            .map_err(|v: Vec<f64>| self.err(key, format!("expected {N} entries, got {}", v.len())))
    }

    pub fn matrix<const N: usize>(&self, key: &str) -> Result<[[f64; N]; N]> {
        let rows = match self.get(key) {
            Some(toml::Value::Array(a)) => a,
            Some(_) => return Err(self.err(key, "expected an array of rows")),
            None => return Err(self.err(key, "missing required key")),
        };
        if rows.len() != N {
            return Err(self.err(key, format!("expected {N} rows, got {}", rows.len())));
        }
        let mut out = [[0.0; N]; N];
        for (i, row) in rows.iter().enumerate() {
            let r = match row {
                toml::Value::Array(r) if r.len() == N => r,
                _ => return Err(self.err(key, format!("row {i} must have {N} numbers"))),
            };
            for (j, v) in r.iter().enumerate() {
                out[i][j] = self.num(key, v)?;
            }
        }
        Ok(out)
    }

    /// Rejects keys that were never read.
    pub fn finish(&self) -> Result<()> {
        if let Some(t) = self.table {
            let used = self.used.borrow();
            if let Some(k) = t.keys().find(|k| !used.contains(k)) {
                return Err(self.err(k, "unknown key"));
            }
        }
        Ok(())
    }
}

pub fn parse_calibration(src: &str, origin: &str) -> Result<Calibration> {
    parse_inner(src, origin).map_err(|e| with_line(e, src))
}

fn parse_inner(src: &str, origin: &str) -> Result<Calibration> {
    from_table(parse_toml(src, origin)?)
}

fn from_table(root: toml::Table) -> Result<Calibration> {
    for key in root.keys() {
        if !["params", "initial", "tipping", "lrr", "paths", "run"].contains(&key.as_str()) {
            return Err(IamError::Calibration {
                location: format!("[{key}]"),
                detail: "unknown section".into(),
            });
        }
    }

    let sp = Section::new(&root, "params")?;
    if !sp.present() {
        return Err(IamError::Calibration {
            location: "[params]".into(),
            detail: "missing section".into(),
        });
    }
    let step_years = sp.f64_or("step_years", 5.0)?;
    let beta = match (sp.opt_f64("beta_annual")?, sp.opt_f64("beta")?) {
        (Some(_), Some(_)) => {
            return Err(IamError::Calibration {
                location: "[params].beta".into(),
                detail: "give either beta or beta_annual, not both".into(),
            })
        }
        (Some(a), None) => a.powf(step_years),
        (None, Some(b)) => b,
        (None, None) => {
            return Err(IamError::Calibration {
                location: "[params].beta_annual".into(),
                detail: "missing required key".into(),
            })
        }
    };
    let psi = sp.f64("psi")?;
    let mut params = ModelParams {
        step_years,
        start_year: sp.f64_or("start_year", 2015.0)?,
        beta,
        psi,
        gamma: sp.f64_or("gamma", 1.0 / psi)?,
        delta: sp.f64("delta")?,
        alpha: sp.f64("alpha")?,
        pi1: sp.f64("pi1")?,
        pi2: sp.f64("pi2")?,
        pi_hi: sp.f64_or("pi_hi", 0.0)?,
        exp_hi: sp.f64_or("exp_hi", 6.754)?,
        weitzman: sp.bool_or("weitzman", false)?,
        log_utility: sp.bool_or("log_utility", false)?,
        theta2: sp.f64("theta2")?,
        eta: sp.f64("eta")?,
        m_at_star: sp.f64("m_at_star")?,
        xi1: sp.f64("xi1")?,
        phi_m: sp.matrix::<3>("phi_m")?,
        phi_t: sp.matrix::<2>("phi_t")?,
        mu_max: sp.f64_or("mu_max", 1.0)?,
        scc_unit: sp.f64("scc_unit")?,
        terminal_consumption_share: sp.f64_or("terminal_consumption_share", 0.78)?,
        tipping: TippingParams::default(),
    };
    if let Some(ecs) = sp.opt_f64("ecs")? {
        params.set_ecs(ecs).map_err(|e| IamError::Calibration {
            location: "[params].ecs".into(),
            detail: e.to_string(),
        })?;
    }
    sp.finish()?;

    let st = Section::new(&root, "tipping")?;
    let tipping = if st.present() {
        params.tipping = TippingParams {
            lambda: st.f64("lambda")?,
            t_bar: st.f64("t_bar")?,
            gamma_bar: st.f64("gamma_bar")?,
            d_inf_bar: st.f64("d_inf_bar")?,
            q: st.f64_or("q", 0.0)?,
        };
        let spec = TippingLevelSpec {
            levels: st.vec("levels")?,
            weights: st.vec("weights")?,
            n_transient: st.usize("n_transient")?,
        };
        st.finish()?;
        spec
    } else {
        TippingLevelSpec::point(0.0, 1)
    };
    params.validate()?;
    build_tipping_chain(&params, &tipping)?;

    let si = Section::new(&root, "initial")?;
    let mut initial = StateVector::new(si.f64("K")?, si.fixed::<3>("M")?, si.fixed::<2>("T")?);
    initial.zeta = si.f64_or("zeta", 1.0)?;
    initial.chi = si.f64_or("chi", 0.0)?;
    si.finish()?;
    initial.validate().map_err(|e| IamError::Calibration {
        location: "[initial].K".into(),
        detail: e.to_string(),
    })?;

    let sl = Section::new(&root, "lrr")?;
    let lrr = if sl.present() {
        let l = LrrParams {
            varrho: sl.f64("varrho")?,
            r: sl.f64("r")?,
            varsigma: sl.f64("varsigma")?,
            n_zeta: sl.usize("n_zeta")?,
            n_chi: sl.usize("n_chi")?,
            truncation_k: sl.f64_or("truncation_k", 3.0)?,
            log_zeta_bound: sl.f64_or("log_zeta_bound", 0.3)?,
        };
        sl.finish()?;
        l
    } else {
        LrrParams::degenerate()
    };
    discretize_lrr(&lrr).map_err(|e| match e {
        IamError::Config(d) => IamError::Calibration {
            location: "[lrr].n_zeta".into(),
            detail: d,
        },
        other => other,
    })?;

    let spaths = Section::new(&root, "paths")?;
    let mut series = Vec::new();
    for name in ExogenousPaths::NAMES {
        series.push(spaths.vec(name)?);
    }
    spaths.finish()?;
    let mut it = series.into_iter();
    let mut next = || it.next().expect("six series");
    let paths = ExogenousPaths {
        a: next(),
        l: next(),
        sigma: next(),
        theta1: next(),
        e_land: next(),
        f_ex: next(),
    };
    paths.validate()?;

    let run = match root.get("run") {
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => {
            return Err(IamError::Calibration {
                location: "[run]".into(),
                detail: "must be a table".into(),
            })
        }
        None => toml::Table::new(),
    };

    Ok(Calibration {
        params,
        paths,
        initial,
        tipping,
        lrr,
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHIPPED: &str = include_str!("../calib/dice2016.toml");

    #[test]
    fn shipped_calibration_loads() {
        let c = parse_calibration(SHIPPED, "dice2016.toml").unwrap();
        assert_eq!(c.paths.len(), 300);
        assert!((c.params.annual_beta() - 0.985).abs() < 1e-12);
        assert!(
            (c.params.implied_ecs() - 3.1).abs() < 1e-3,
            "{}",
            c.params.implied_ecs()
        );
        assert_eq!(c.initial.k, 223.0);
        assert_eq!(c.tipping.levels.len(), 3);
    }

    #[test]
    fn perturbed_phi_m_names_key_and_line() {
        let bad = SHIPPED.replace("[0.88, 0.196, 0.0]", "[0.89, 0.196, 0.0]");
        let err = parse_calibration(&bad, "x").unwrap_err();
        let msg = err.to_string();
        assert!(msg.to_lowercase().contains("[params].phi_m"), "{msg}");
        assert!(msg.contains("line 22"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_population_path_is_named() {
        let start = SHIPPED.find("\nL = [").unwrap();
        let end = start + 1 + SHIPPED[start + 1..].find("]\n").unwrap() + 2;
        let mut bad = SHIPPED.to_string();
        bad.replace_range(start + 1..end, "");
        let msg = parse_calibration(&bad, "x").unwrap_err().to_string();
        assert!(msg.contains("[paths].L"), "{msg}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let bad = SHIPPED.replacen("alpha = 0.3", "alpha = = 0.3", 1);
        let msg = parse_calibration(&bad, "f.toml").unwrap_err().to_string();
        assert!(msg.contains("f.toml line 11"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = SHIPPED.replacen("alpha = 0.3", "alpha = 0.3\nalpah = 0.3", 1);
        let msg = parse_calibration(&bad, "x").unwrap_err().to_string();
        assert!(msg.contains("[params].alpah"), "{msg}");
    }

    #[test]
    fn key_lookup_is_case_insensitive() {
        let alt = SHIPPED.replacen("phi_m = [", "Phi_M = [", 1);
        let c = parse_calibration(&alt, "x").unwrap();
        assert_eq!(c.params.phi_m[0][0], 0.88);
    }
}
