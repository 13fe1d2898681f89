use proptest::prelude::*;
use proxyhedge::gauss::*;
use proxyhedge::params::*;
use proxyhedge::payoffs::*;
use proxyhedge::pricing::bs_put;
use proxyhedge::series::{j_sum, SeriesControl};

/// Correlation angles with a positive beta.
fn angles() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.05f64..0.95, -0.95f64..0.95, -0.99f64..0.99)
        .prop_filter("beta > 0", |&(a, b, c)| CorrelationGeometry::from_angle(a, b, c, 0.08).map_or(false, |g| g.beta > 0.0))
}

fn market(rho_xz: f64, rho_yz: f64, cos: f64, alpha: f64) -> MarketParams {
    MarketParams { rho_xz, rho_yz, cos_phi_xy: Some(cos), alpha, ..MarketParams::test1() }
}

fn kinds() -> impl Strategy<Value = ExpansionKind> {
    prop_oneof![Just(ExpansionKind::MuExpansion), Just(ExpansionKind::EpsilonExpansion)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn geometry_identities((rho_xz, rho_yz, cos) in angles()) {
        let g = CorrelationGeometry::from_angle(rho_xz, rho_yz, cos, 0.08).unwrap();
        prop_assert!((g.theta2 - 1.0 - g.theta1 * g.theta1).abs() < 1e-12);
        prop_assert!((g.eps * g.eps + rho_yz * rho_yz - 1.0).abs() < 1e-12);
        prop_assert!((g.rho_xy - rho_xz * g.beta).abs() < 1e-12);
        prop_assert!((g.theta3 - (rho_yz * g.theta1 - g.eps)).abs() < 1e-12);
        prop_assert!(g.rho_bar_xz_sq <= 1.0 + 1e-12);
    }

    #[test]
    fn cosine_law_round_trip((rho_xz, rho_yz, cos) in angles()) {
        let rho_xy = rho_xy_from_cos(cos, rho_xz, rho_yz);
        prop_assert!((cosine_law_cos_phi(rho_xy, rho_xz, rho_yz).unwrap() - cos).abs() < 1e-12);
        let t = CorrelationGeometry::from_triple(rho_xy, rho_xz, rho_yz, 0.08).unwrap();
        let a = CorrelationGeometry::from_angle(rho_xz, rho_yz, cos, 0.08).unwrap();
        prop_assert!((t.theta1 - a.theta1).abs() < 1e-12 && (t.beta - a.beta).abs() < 1e-12);
    }

    #[test]
    fn mu_ignores_the_sign_of_rho_yz(rho_xz in 0.05f64..0.95, rho_yz in -0.95f64..0.95, cos in -0.99f64..0.99) {
        let a = CorrelationGeometry::from_angle(rho_xz, rho_yz, cos, 0.08).unwrap();
        let b = CorrelationGeometry::from_angle(rho_xz, -rho_yz, cos, 0.08).unwrap();
        prop_assert_eq!(a.mu_small, b.mu_small);
        prop_assert_eq!(a.eps, b.eps);
    }

    #[test]
    fn solver_coordinates_round_trip((rho_xz, rho_yz, cos) in angles(), kind in kinds(),
                                     h in -3.0f64..3.0, s in -3.0f64..3.0, tau in 0.0f64..10.0) {
        let p = market(rho_xz, rho_yz, cos, 1.0);
        let g = geometry_from_params(&p).unwrap();
        let (x, y) = to_solver_coords(h, s, tau, &p, &g, kind).unwrap();
        let (a, b) = from_solver_coords(x, y, tau, &p, &g, kind).unwrap();
        prop_assert!((a - h).abs() < 1e-9 && (b - s).abs() < 1e-9);
    }

    #[test]
    fn payoff_agrees_with_the_market_chain((rho_xz, rho_yz, cos) in angles(), kind in kinds(),
                                           x in -3.0f64..2.0, y in -3.0f64..3.0, alpha in 0.0f64..3.0) {
        let p = market(rho_xz, rho_yz, cos, alpha);
        let g = geometry_from_params(&p).unwrap();
        let spec = PayoffSpec::raw(&p, &g, kind).unwrap();
        let chain = raw_payoff_via_market(x, y, &p, &g, kind).unwrap();
        prop_assert!((spec.value(x, y) - chain).abs() <= 1e-12 * chain);
        let (h, s) = from_solver_coords(x, y, 0.0, &p, &g, kind).unwrap();
        let pi = portfolio_payoff(p.k_y * h.exp(), p.k_z * s.exp(), p.k_y, p.k_z, alpha);
        prop_assert!(((-p.gamma * pi).exp() - chain).abs() <= 1e-12 * chain);
    }

    #[test]
    fn heat_average_is_positive((rho_xz, rho_yz, cos) in angles(), u in -10.0f64..5.0, v in -2.0f64..2.0,
                                tau in 0.1f64..10.0, alpha in 0.0f64..3.0) {
        let p = market(rho_xz, rho_yz, cos, alpha);
        let g = geometry_from_params(&p).unwrap();
        let spec = PayoffSpec::distorted(&p, &g, ExpansionKind::MuExpansion).unwrap();
        if let Ok(j) = j_sum(u, v, &spec, tau, &SeriesControl::default()) {
            prop_assert!(j > 0.0 && j.is_finite());
        }
    }

    #[test]
    fn gauss_transform_keeps_sign_and_fast_matches_direct(f in prop::collection::vec(0.0f64..5.0, 41), tau in 0.05f64..2.0) {
        let nodes: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let targets: Vec<f64> = (0..17).map(|i| -3.0 + 0.375 * i as f64).collect();
        let plan = GaussTransformPlan::trapezoid(nodes).unwrap().with_tails(Some(f[0]), Some(f[40]));
        let direct = direct_gauss_transform(&f, &targets, tau, &plan).unwrap();
        let fast = fast_gauss_transform(&f, &targets, tau, &plan.clone().with_fast(true)).unwrap();
        let scale = f.iter().fold(0.0f64, |m, x| m.max(*x));
        for (d, q) in direct.iter().zip(&fast) {
            prop_assert!(*d >= 0.0);
            prop_assert!((d - q).abs() <= 1e-8 * scale.max(1e-300));
        }
        let c = f[7];
        let gl = GaussTransformPlan::panels(&[-2.0, 2.0], 0.05, 8).unwrap().with_tails(Some(c), Some(c));
        let flat = direct_gauss_transform(&vec![c; gl.source_nodes.len()], &targets, tau, &gl).unwrap();
        for x in flat {
            prop_assert!((x - c).abs() <= 1e-10 * c.max(1e-300), "{} vs {}", x, c);
        }
    }

    #[test]
    fn put_bounds_and_monotonicity(s in 10.0f64..200.0, k in 10.0f64..200.0, vol in 0.05f64..0.8, tau in 0.01f64..10.0) {
        let r = 0.02;
        let bond = k * (-r * tau).exp();
        let put = bs_put(s, k, vol, r, tau);
        prop_assert!(put >= (bond - s).max(0.0) - 1e-9 && put <= bond + 1e-12);
        prop_assert!(bs_put(s, k * 1.01, vol, r, tau) >= put - 1e-12);
        prop_assert!(bs_put(s, k, vol * 1.01, r, tau) >= put - 1e-12);
    }
}
