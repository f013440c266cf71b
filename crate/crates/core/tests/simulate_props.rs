mod common;

use iam_core::calibration::load_calibration;
use iam_core::model::{IDX_TAT, N_CONT};
use iam_core::run::RunSettings;
use iam_core::simulate::{quantile, sceq_solve, simulate_policy, PathEnsemble, SceqProblem, SimConfig};
use iam_core::vfi::{solve_vfi, VfiModel, VfiSolution};
use proptest::prelude::*;
use std::sync::OnceLock;

fn tipping() -> &'static (VfiSolution, SimConfig) {
    static CELL: OnceLock<(VfiSolution, SimConfig)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cal = load_calibration(&common::configs().join("tipping.toml")).unwrap();
        let s = RunSettings::from_table(&cal.run).unwrap();
        let sol = solve_vfi(&VfiModel::from_calibration(&cal, &s.vfi).unwrap()).unwrap();
        (sol, s.simulate)
    })
}

fn row(ens: &PathEnsemble, p: usize, t: usize) -> [f64; N_CONT] {
    std::array::from_fn(|i| ens.get(p, t, i))
}

#[test]
fn paths_replay_through_the_transition() {
    let (sol, cfg) = tipping();
    let cfg = SimConfig {
        n_paths: 200,
        ..cfg.clone()
    };
    let (ens, _) = simulate_policy(sol, &cfg).unwrap();
    let (is, imu, ic) = (
        PathEnsemble::var_index("s").unwrap(),
        PathEnsemble::var_index("mu").unwrap(),
        PathEnsemble::var_index("C").unwrap(),
    );
    for p in 0..ens.n_paths {
        for t in 0..ens.n_periods - 1 {
            let x = row(&ens, p, t);
            let (next, c, _) = sol
                .model
                .transition(t, &x, ens.state(p, t), ens.get(p, t, is), ens.get(p, t, imu))
                .unwrap();
            let want = row(&ens, p, t + 1);
            for i in 0..N_CONT {
                assert!(
                    (next[i] - want[i]).abs() <= 1e-9 * want[i].abs().max(1e-12),
                    "path {p} t {t} coord {i}"
                );
            }
            assert!((c - ens.get(p, t, ic)).abs() <= 1e-9 * c);
        }
    }
}

#[test]
fn same_seed_same_paths() {
    let (sol, cfg) = tipping();
    let cfg = SimConfig {
        n_paths: 300,
        ..cfg.clone()
    };
    let (a, sa) = simulate_policy(sol, &cfg).unwrap();
    let (b, sb) = simulate_policy(sol, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let (c, _) = simulate_policy(
        sol,
        &SimConfig {
            seed: cfg.seed + 1,
            ..cfg
        },
    )
    .unwrap();
    assert_ne!(a.discrete, c.discrete);
}

#[test]
fn tipping_times_follow_the_chain_law() {
    let (sol, cfg) = tipping();
    let cfg = SimConfig {
        n_paths: 10_000,
        ..cfg.clone()
    };
    let (ens, stats) = simulate_policy(sol, &cfg).unwrap();
    assert_eq!(stats.clamps, 0);
    let d0 = sol.model.init_state;
    let n = ens.n_periods;
    // pre-tipping paths share one trajectory, so the hazard sequence is common
    let mut survive = vec![1.0; n];
    for t in 1..n {
        let p = (0..ens.n_paths)
            .find(|p| ens.state(*p, t - 1) == d0)
            .expect("a pre-tipping path");
        let stay: f64 = sol
            .model
            .discrete
            .successors(d0, ens.get(p, t - 1, IDX_TAT))
            .iter()
            .filter(|(d, _)| *d == d0)
            .map(|(_, q)| q)
            .sum();
        survive[t] = survive[t - 1] * stay;
    }
    let mut ks: f64 = 0.0;
    for t in 1..n {
        let tipped = (0..ens.n_paths).filter(|p| ens.state(*p, t) != d0).count();
        let emp = tipped as f64 / ens.n_paths as f64;
        ks = ks.max((emp - (1.0 - survive[t])).abs());
    }
    assert!(ks <= 0.02, "Kolmogorov-Smirnov distance {ks}");
    assert!(1.0 - survive[n - 1] > 0.05);
}

#[test]
fn sceq_is_seed_deterministic_and_rejects_long_simulations() {
    let cal = load_calibration(&common::configs().join("sceq.toml")).unwrap();
    let s = RunSettings::from_table(&cal.run).unwrap();
    let mut cfg = s.sceq.clone();
    cfg.n_paths = 6;
    cfg.sim_periods = 3;
    let problem = SceqProblem::from_calibration(&cal, &cfg).unwrap();
    let (a, sa) = sceq_solve(&problem, &cfg).unwrap();
    let (b, _) = sceq_solve(&problem, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.failed_paths, 0);
    cfg.sim_periods = cfg.horizon + 1;
    assert_eq!(sceq_solve(&problem, &cfg).unwrap_err().exit_code(), 2);
}

proptest! {
    #[test]
    fn quantiles_are_ordered_and_bounded(mut xs in prop::collection::vec(-1e6..1e6f64, 1..200), nans in 0usize..5, q1 in 0.0..1.0f64, q2 in 0.0..1.0f64) {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        xs.extend(std::iter::repeat_n(f64::NAN, nans));
        let (a, b) = (q1.min(q2), q1.max(q2));
        let (qa, qb) = (quantile(&xs, a), quantile(&xs, b));
        prop_assert!(qa <= qb);
        prop_assert!(lo <= qa && qb <= hi);
    }
}
