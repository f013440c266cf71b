mod common;

use iam_core::det::{DetOptions, DetProblem, Horizon, Trajectory};
use iam_core::model::step_state;
use proptest::prelude::*;

fn solve(n: usize, opts: &DetOptions) -> Trajectory {
    let cal = common::dice();
    let h = Horizon::with_continuation(n, &cal.params).unwrap();
    DetProblem::new(&cal.params, &cal.paths, h, &cal.initial)
        .unwrap()
        .solve(None, opts)
        .unwrap()
}

#[test]
fn solution_replays_through_the_transition() {
    let cal = common::dice();
    let traj = solve(100, &DetOptions::default());
    for t in 0..traj.n_periods() {
        let next = step_state(&traj.states[t], &traj.decisions[t], t, &cal.params, &cal.paths, 0.0).unwrap();
        let want = traj.states[t + 1].continuous();
        for (a, b) in next.continuous().iter().zip(want) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12), "period {t}: {a} vs {b}");
        }
    }
}

#[test]
fn accepted_iterations_never_lower_welfare() {
    let mut last = f64::NEG_INFINITY;
    for k in [0, 1, 2, 4, 8, 16, 32, 64, 128, 256] {
        let opts = DetOptions {
            max_iter: k,
            tol: f64::INFINITY,
            newton_iters: 0,
            ..DetOptions::default()
        };
        let w = solve(60, &opts).welfare;
        assert!(w >= last, "welfare fell from {last} to {w} at {k} iterations");
        last = w;
    }
}

#[test]
fn longer_horizons_leave_the_first_century_unchanged() {
    let a = solve(100, &DetOptions::default());
    let b = solve(140, &DetOptions::default());
    for t in 0..20 {
        let dmu = (a.decisions[t].mu - b.decisions[t].mu).abs() / b.decisions[t].mu;
        let dscc = (a.scc_path[t] - b.scc_path[t]).abs() / b.scc_path[t];
        assert!(dmu < 0.01 && dscc < 0.01, "period {t}: mu gap {dmu}, scc gap {dscc}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn scc_rises_with_damage_coefficient(pi2 in 0.001..0.004f64, bump in 0.0002..0.002f64) {
        let mut cal = common::dice();
        let run = |cal: &iam_core::calibration::Calibration| {
            let h = Horizon::with_continuation(60, &cal.params).unwrap();
            DetProblem::new(&cal.params, &cal.paths, h, &cal.initial).unwrap().solve(None, &DetOptions::default()).unwrap().scc_path[0]
        };
        cal.params.pi2 = pi2;
        let lo = run(&cal);
        cal.params.pi2 = pi2 + bump;
        prop_assert!(run(&cal) > lo);
    }
}
