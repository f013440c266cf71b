mod common;

use iam_core::stochastic::{build_tipping_chain, discretize_lrr, ez_aggregate, EZParams, TippingLevelSpec};
use proptest::prelude::*;

fn rows_ok(p: &[Vec<f64>]) -> bool {
    p.iter().all(|row| {
        let s: f64 = row.iter().sum();
        (s - 1.0).abs() <= 1e-12 && row.iter().all(|v| (0.0..=1.0).contains(v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lrr_rows_are_distributions_with_finite_moments(scale in 0.05..1.5f64, r in 0.0..0.5f64) {
        let mut lp = common::dice().lrr.scale_variance(scale);
        lp.r = r;
        lp.n_zeta = 15;
        lp.n_chi = 5;
        let chain = discretize_lrr(&lp).unwrap();
        prop_assert!(rows_ok(&chain.p));
        for from in 0..chain.len() {
            let (m, v) = chain.conditional_moments(from);
            prop_assert!(m.iter().chain(v.iter()).all(|x| x.is_finite()));
        }
        let zmax = chain.nodes.iter().map(|n| n[0]).fold(0.0, f64::max);
        prop_assert!(zmax.is_finite() && zmax > 0.0);
    }

    #[test]
    fn tipping_chain_is_monotone_absorbing(temps in prop::collection::vec(0.0..5.0f64, 1..40), lambda in 0.0..0.2f64) {
        let cal = common::dice();
        let mut params = cal.params.clone();
        params.tipping.lambda = lambda;
        let chain = build_tipping_chain(&params, &cal.tipping).unwrap();
        let n = chain.len();
        let mut dist = vec![0.0; n];
        dist[0] = 1.0;
        // probability of being at or past each stage order
        let order: Vec<usize> = chain.stage_of.iter().map(|s| s.order(chain.n_transient)).collect();
        let max_order = *order.iter().max().unwrap();
        let at_or_past = |d: &[f64], k: usize| -> f64 { d.iter().zip(&order).filter(|(_, o)| **o >= k).map(|(p, _)| p).sum() };
        for t_at in temps {
            let p = chain.transition_matrix(t_at);
            prop_assert!(rows_ok(&p));
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += dist[i] * p[i][j];
                }
            }
            for k in 0..=max_order {
                prop_assert!(at_or_past(&next, k) >= at_or_past(&dist, k) - 1e-12);
            }
            dist = next;
        }
    }

    #[test]
    fn ez_is_increasing_and_permutation_invariant(
        u in 0.1..10.0f64,
        vals in prop::collection::vec(1.0..2.0f64, 2..6),
        level in 0.1..10.0f64,
        raw in prop::collection::vec(0.05..1.0f64, 6),
        bump in 1e-3..1.0f64,
        shift in 0usize..6,
        psi in prop::sample::select(vec![0.5, 1.5, 2.0]),
        gamma in prop::sample::select(vec![2.0, 10.0]),
    ) {
        let ez = EZParams { beta: 0.985, psi, gamma };
        let sign = ez.xi().signum();
        let vals: Vec<f64> = vals.iter().map(|v| sign * level * v).collect();
        let u = sign * u;
        let n = vals.len();
        let w: f64 = raw[..n].iter().sum();
        let probs: Vec<f64> = raw[..n].iter().map(|p| p / w).collect();
        let base = ez_aggregate(u, &vals, &probs, &ez).unwrap();
        prop_assert!(ez_aggregate(u + bump, &vals, &probs, &ez).unwrap() > base);
        for i in 0..n {
            let mut up = vals.clone();
            up[i] += bump;
            if up[i] * sign > 0.0 {
                prop_assert!(ez_aggregate(u, &up, &probs, &ez).unwrap() > base, "state {i}");
            }
        }
        let k = shift % n;
        let mut pv = vals.clone();
        let mut pp = probs.clone();
        pv.rotate_left(k);
        pp.rotate_left(k);
        let rotated = ez_aggregate(u, &pv, &pp, &ez).unwrap();
        prop_assert!((rotated - base).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

#[test]
fn point_spec_gives_two_state_chain() {
    let mut p = common::dice().params;
    p.tipping.q = 0.0;
    p.tipping.lambda = 0.1;
    let chain = build_tipping_chain(&p, &TippingLevelSpec::point(0.1, 0)).unwrap();
    assert_eq!(chain.len(), 2);
    assert!(chain.is_absorbing(1));
}
