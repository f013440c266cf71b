mod common;

use iam_core::approx::ClampCounter;
use iam_core::calibration::Calibration;
use iam_core::model::{IDX_K, IDX_TAT, N_CONT};
use iam_core::stochastic::TippingLevelSpec;
use iam_core::vfi::{checkpoint_path, solve_vfi, VfiConfig, VfiModel, VfiSolution};

fn micro() -> (Calibration, VfiConfig) {
    let mut cal = common::dice();
    cal.params.tipping.q = 0.0;
    cal.params.tipping.lambda = 0.1;
    cal.tipping = TippingLevelSpec::point(0.1, 1);
    let cfg = VfiConfig {
        periods: 4,
        degree: 3,
        lrr: false,
        multistart: 1,
        terminal_periods: 20,
        ..VfiConfig::default()
    };
    (cal, cfg)
}

fn solve(cal: &Calibration, cfg: &VfiConfig) -> VfiSolution {
    solve_vfi(&VfiModel::from_calibration(cal, cfg).unwrap()).unwrap()
}

fn bellman(sol: &VfiSolution, t: usize, x: &[f64; N_CONT], d: usize, s: f64, mu: f64) -> f64 {
    let m = &sol.model;
    let c = ClampCounter::default();
    let (next, _, _) = m.transition(t, x, d, s, mu).unwrap();
    let u = m.utility(t, x, d, s, mu).unwrap();
    let succ = m.discrete.successors(d, x[IDX_TAT]);
    let ev: f64 = succ
        .iter()
        .map(|(e, p)| p * sol.values[t + 1].value(*e, &next, &c).unwrap())
        .sum();
    u + m.params.beta * ev
}

#[test]
fn stored_policies_reproduce_node_values() {
    let (cal, cfg) = micro();
    let sol = solve(&cal, &cfg);
    let mut checked = 0;
    for slice in &sol.policies {
        for (k, d) in slice.states.iter().enumerate() {
            for idx in (0..slice.grid.len()).step_by(37) {
                let x: [f64; N_CONT] = slice.grid.node(idx).try_into().unwrap();
                let v = bellman(&sol, slice.t, &x, *d, slice.node_s[k][idx], slice.node_mu[k][idx]);
                let stored = slice.node_value[k][idx];
                assert!(
                    (v - stored).abs() <= 1e-8 * stored.abs(),
                    "t={} d={d} node {idx}: {v} vs {stored}",
                    slice.t
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn value_rises_with_capital_along_node_lines() {
    let (cal, cfg) = micro();
    let sol = solve(&cal, &cfg);
    let c = ClampCounter::default();
    for slice in &sol.policies {
        let vf = &sol.values[slice.t];
        for d in &slice.states {
            for idx in 0..slice.grid.len() {
                let mi = slice.grid.multi_index(idx);
                if mi[IDX_K] + 1 == slice.grid.points_per_dim {
                    continue;
                }
                let x = slice.grid.node(idx);
                let mut y = x.clone();
                y[IDX_K] = slice
                    .grid
                    .domain
                    .from_unit(IDX_K, slice.grid.unit_points[mi[IDX_K] + 1]);
                let (lo, hi) = if y[IDX_K] > x[IDX_K] { (&x, &y) } else { (&y, &x) };
                assert!(
                    vf.value(*d, hi, &c).unwrap() > vf.value(*d, lo, &c).unwrap(),
                    "t={} node {idx}",
                    slice.t
                );
            }
        }
    }
}

#[test]
fn reruns_are_bit_identical() {
    let (cal, cfg) = micro();
    let a = solve(&cal, &cfg);
    let b = solve(&cal, &cfg);
    for (va, vb) in a.values.iter().zip(&b.values) {
        assert_eq!(va.approx, vb.approx);
    }
    for (pa, pb) in a.policies.iter().zip(&b.policies) {
        assert_eq!(pa.node_s, pb.node_s);
        assert_eq!(pa.node_mu, pb.node_mu);
    }
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let (cal, mut cfg) = micro();
    let full = solve(&cal, &cfg);
    let dir = tempfile::tempdir().unwrap();
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    cfg.checkpoint_every = 2;
    solve(&cal, &cfg);
    assert!(checkpoint_path(dir.path(), 2).exists());
    std::fs::remove_file(checkpoint_path(dir.path(), 0)).unwrap();
    let resumed = solve(&cal, &cfg);
    assert_eq!(resumed.stats.resumed_from, Some(2));
    let c = ClampCounter::default();
    let x0 = full.model.init.continuous();
    let d0 = full.model.init_state;
    let v_full = full.values[0].value(d0, &x0, &c).unwrap();
    let v_res = resumed.values[0].value(d0, &x0, &c).unwrap();
    assert!((v_full - v_res).abs() <= 1e-10 * v_full.abs(), "{v_full} vs {v_res}");
    let s_full = full.scc(0, &x0, d0).unwrap();
    let s_res = resumed.scc(0, &x0, d0).unwrap();
    assert!((s_full - s_res).abs() <= 1e-6 * s_full, "{s_full} vs {s_res}");
}

#[test]
fn tipping_lowers_the_scc_at_the_initial_state() {
    let (cal, cfg) = micro();
    let sol = solve(&cal, &cfg);
    let x0 = sol.model.init.continuous();
    let pre = sol.scc(1, &x0, 0).unwrap();
    let post = sol.scc(1, &x0, 1).unwrap();
    assert!(post < pre, "{post} >= {pre}");
}
