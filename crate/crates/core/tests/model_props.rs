mod common;

use iam_core::model::{
    abatement_cost, carbon_tax, damage_factor, emissions, gross_output, step_state, utility, Decision, StateVector,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_emission_step_conserves_carbon(
        k in 50.0..500.0f64,
        m in prop::array::uniform3(100.0..5000.0f64),
        tat in 0.0..6.0f64,
        toc in 0.0..3.0f64,
        t in 0usize..90,
        c_share in 0.5..0.9f64,
    ) {
        let cal = common::dice();
        let mut paths = cal.paths.clone();
        paths.sigma.iter_mut().for_each(|v| *v = 0.0);
        paths.e_land.iter_mut().for_each(|v| *v = 0.0);
        let s = StateVector::new(k, m, [tat, toc]);
        let y = gross_output(paths.a[t], k, paths.l[t], cal.params.alpha).unwrap();
        let d = Decision { c: c_share * y * 0.5, mu: 0.3 };
        let next = step_state(&s, &d, t, &cal.params, &paths, 0.0).unwrap();
        let before: f64 = m.iter().sum();
        let after: f64 = next.m.iter().sum();
        prop_assert!((after - before).abs() <= 1e-10 * before);
    }

    #[test]
    fn damages_fall_with_temperature_and_tipping(t0 in 0.0..8.0f64, dt in 1e-3..2.0f64, tip in 0.0..0.3f64, weitzman: bool) {
        let mut p = common::dice().params;
        p.weitzman = weitzman;
        let a = damage_factor(t0, tip, &p).unwrap();
        prop_assert!(damage_factor(t0 + dt, tip, &p).unwrap() <= a);
        prop_assert!(damage_factor(t0, tip + 0.05, &p).unwrap() <= a);
    }

    #[test]
    fn emissions_fall_and_abatement_is_convex_in_mu(mu in 0.01..0.98f64, sigma in 0.01..0.5f64, y in 10.0..500.0f64, theta1 in 0.01..0.2f64) {
        let h = 0.01;
        prop_assert!(emissions(sigma, mu + h, y, 0.5) < emissions(sigma, mu, y, 0.5));
        let p = common::dice().params;
        let lo = abatement_cost(mu - h, theta1, p.theta2, y).unwrap();
        let mid = abatement_cost(mu, theta1, p.theta2, y).unwrap();
        let hi = abatement_cost(mu + h, theta1, p.theta2, y).unwrap();
        prop_assert!(hi > mid && mid > lo);
        prop_assert!(hi - 2.0 * mid + lo > 0.0);
    }

    #[test]
    fn output_is_homogeneous_in_capital_and_labour(a in 1.0..20.0f64, k in 10.0..1000.0f64, l in 1000.0..12000.0f64, lam in 0.1..10.0f64) {
        let alpha = common::dice().params.alpha;
        let y = gross_output(a, k, l, alpha).unwrap();
        let ys = gross_output(a, lam * k, lam * l, alpha).unwrap();
        prop_assert!((ys - lam * y).abs() <= 1e-12 * ys.abs());
    }

    #[test]
    fn utility_is_increasing_and_concave(c in 1.0..500.0f64, l in 1000.0..12000.0f64, psi in prop::sample::select(vec![0.5, 0.69, 1.0, 1.5, 2.0])) {
        let h = 1e-3 * c;
        let lo = utility(c - h, l, psi).unwrap();
        let mid = utility(c, l, psi).unwrap();
        let hi = utility(c + h, l, psi).unwrap();
        prop_assert!(hi > mid && mid > lo);
        prop_assert!(hi - 2.0 * mid + lo < 0.0);
    }

    #[test]
    fn quadratic_tax_is_linear_in_mu(mu in 0.0..1.0f64, theta1 in 0.01..0.2f64, sigma in 0.01..0.5f64) {
        let t1 = carbon_tax(mu, theta1, 2.0, sigma).unwrap();
        let t2 = carbon_tax(2.0 * mu, theta1, 2.0, sigma).unwrap();
        let t0 = carbon_tax(0.0, theta1, 2.0, sigma).unwrap();
        prop_assert!(t0.abs() <= 1e-15);
        prop_assert!((t2 - 2.0 * t1).abs() <= 1e-12 * t2.abs().max(1e-12));
    }
}
