use proxyhedge::params::*;
use proxyhedge::pricing::*;
use proxyhedge::solver::*;

fn solvers() -> (Box<dyn PhiSolver>, Box<dyn PhiSolver>) {
    let r = solver_registry();
    let o = SolverOptions::default();
    (r.create("asym", &o).unwrap(), r.create("fd", &o).unwrap())
}

/// `e^{-r tau} E[(K - S_T)^+]` by Simpson's rule in the standard normal variable.
fn put_by_quadrature(s: f64, k: f64, vol: f64, r: f64, tau: f64) -> f64 {
    let sd = vol * tau.sqrt();
    let m = (r - 0.5 * vol * vol) * tau;
    let top = ((k / s).ln() - m) / sd;
    let (a, n) = (-12.0, 40_000);
    let h = (top - a) / n as f64;
    let f = |z: f64| (k - s * (m + sd * z).exp()).max(0.0) * (-0.5 * z * z).exp();
    let mut acc = f(a) + f(top);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (-r * tau).exp() * acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn put_matches_lognormal_quadrature() {
    let want = put_by_quadrature(100.0, 90.0, 0.3, 0.02, 3.0);
    let got = bs_put(100.0, 90.0, 0.3, 0.02, 3.0);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    for (s, k, vol, tau) in [(50.0, 90.0, 0.2, 10.0), (120.0, 100.0, 0.45, 0.5)] {
        let want = put_by_quadrature(s, k, vol, 0.02, tau);
        assert!((bs_put(s, k, vol, 0.02, tau) - want).abs() < 1e-6);
    }
}

#[test]
fn capped_claim_and_put_add_up_to_the_bond() {
    let p = MarketParams::test1();
    for tau in [0.5, 3.0, 10.0] {
        let sum = p_y(&p, tau, HedgePrice::CappedClaim) + p_y(&p, tau, HedgePrice::Put);
        assert!((sum - p.k_y * (-p.r * tau).exp()).abs() < 1e-12);
    }
    assert_eq!(p_y(&p, 3.0, HedgePrice::Quote(17.0)), 17.0);
}

#[test]
fn merton_value_for_the_first_test() {
    let p = MarketParams::test1();
    let eta = (p.mu_x - p.r) / p.sigma_x;
    let want = -(-p.gamma * 100.0 * (p.r * 3.0f64).exp() - 0.5 * eta * eta * 3.0).exp();
    assert!((merton_value(100.0, 3.0, &p) - want).abs() < 1e-15);
    assert!(merton_value(100.0, 3.0, &p) < 0.0);
}

#[test]
fn short_maturity_price_is_the_certainty_payoff() {
    let (asym, fd) = solvers();
    let mut p = MarketParams::test1();
    p.maturity = 1e-6;
    let pr = PhiProblem::new(p.clone(), None).unwrap();
    let want = p.z0.min(p.k_z);
    let a = price_at_spot(asym.as_ref(), &pr, 1.0, HedgePrice::CappedClaim).unwrap();
    assert!((a.g_alpha - want).abs() < 1e-3, "{}", a.g_alpha);
    // bilinear interpolation on the coarse FD grid
    let f = price_at_spot(fd.as_ref(), &pr, 1.0, HedgePrice::CappedClaim).unwrap();
    assert!((f.g_alpha - want).abs() < 0.2, "{}", f.g_alpha);
}

#[test]
fn holding_nothing_is_worth_nothing() {
    let (asym, fd) = solvers();
    let mut pr = PhiProblem::new(MarketParams::test2(), None).unwrap();
    pr.without_z = true;
    for s in [asym.as_ref(), fd.as_ref()] {
        let r = price_at_spot(s, &pr, 0.0, HedgePrice::CappedClaim).unwrap();
        assert!(r.g_alpha.abs() < 1e-9, "{}: {}", s.name(), r.g_alpha);
    }
}

#[test]
fn price_is_concave_in_alpha() {
    // -ln of a mixture of exponentials in alpha: concave, not convex
    let (asym, _) = solvers();
    let pr = PhiProblem::new(MarketParams::test1(), None).unwrap();
    let g: Vec<f64> = (0..=40).map(|i| price_at_spot(asym.as_ref(), &pr, 3.0 * i as f64 / 40.0, HedgePrice::CappedClaim).unwrap().g_alpha).collect();
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for w in g.windows(3) {
        assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-6 * scale);
    }
}

#[test]
fn optimal_hedge_is_a_local_maximum() {
    let (asym, _) = solvers();
    let pr = PhiProblem::new(MarketParams::test1(), None).unwrap();
    let rep = price_with_optimal_hedge(asym.as_ref(), &pr, (0.0, 3.0), None, HedgePrice::CappedClaim).unwrap();
    let opt = rep.alpha_star.unwrap();
    assert!(!opt.edge && opt.alpha > 0.0 && opt.alpha < 3.0);
    let delta = 1e-3 * 3.0;
    for a in [opt.alpha - delta, opt.alpha + delta] {
        assert!(price_at_spot(asym.as_ref(), &pr, a, HedgePrice::CappedClaim).unwrap().g_alpha <= rep.g_alpha);
    }
    assert!(rep.phi_at_spot > 0.0 && rep.p_y >= 0.0);
}

#[test]
fn capital_limit_moves_the_hedge_to_the_edge() {
    let (asym, _) = solvers();
    let pr = PhiProblem::new(MarketParams::test1(), None).unwrap();
    let py = p_y(&pr.params, 3.0, HedgePrice::CappedClaim);
    let rep = price_with_optimal_hedge(asym.as_ref(), &pr, (0.0, 3.0), Some(0.2 * py), HedgePrice::CappedClaim).unwrap();
    let opt = rep.alpha_star.unwrap();
    assert!(opt.edge);
    assert!((opt.alpha - 0.2).abs() < 1e-9);
}

#[test]
fn hedge_sits_on_the_edge_where_the_price_falls_in_alpha() {
    let (asym, _) = solvers();
    let pr = PhiProblem::new(MarketParams::test1(), None).unwrap();
    let o = optimal_hedge_at(asym.as_ref(), &pr, 3.0, (10.0, 1.22), (0.0, 3.0), HedgePrice::CappedClaim).unwrap();
    assert!(o.edge && o.alpha == 0.0);
    let o = optimal_hedge_at(asym.as_ref(), &pr, 3.0, (-10.0, 1.22), (0.0, 3.0), HedgePrice::CappedClaim).unwrap();
    assert!(!o.edge);
}

#[test]
fn index_holding_is_stable_under_stencil_halving() {
    let (asym, _) = solvers();
    let pr = PhiProblem::new(MarketParams::test1(), None).unwrap();
    let (h, s) = pr.spot();
    let pi = |d: f64| optimal_pi(ln_phi_gradient(asym.as_ref(), &pr, h, s, 3.0, d).unwrap(), 3.0, &pr.params).unwrap();
    let (a, b) = (pi(0.01), pi(0.005));
    assert!(a.is_finite() && ((a - b) / b).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn merton_holding_without_cross_terms() {
    let p = MarketParams::test1();
    let merton = p.eta_s() * (-p.r * 3.0f64).exp() / (p.gamma * p.sigma_x);
    assert!((optimal_pi((0.0, 0.0), 3.0, &p).unwrap() - merton).abs() < 1e-12);
    let q = MarketParams { rho_xy: 0.0, rho_xz: 0.0, ..p };
    assert!((optimal_pi((3.7, -12.0), 3.0, &q).unwrap() - merton).abs() < 1e-12);
    let z = MarketParams { gamma: 0.0, ..MarketParams::test1() };
    assert!(optimal_pi((0.0, 0.0), 3.0, &z).is_err());
}

#[test]
fn long_maturity_price_tracks_the_fd_price() {
    let (asym, fd) = solvers();
    let mut p = MarketParams::test1();
    p.maturity = 10.0;
    let pr = PhiProblem::new(p, None).unwrap();
    let a = price_at_spot(asym.as_ref(), &pr, 1.0, HedgePrice::CappedClaim).unwrap();
    let f = price_at_spot(fd.as_ref(), &pr, 1.0, HedgePrice::CappedClaim).unwrap();
    assert!((a.g_alpha - f.g_alpha).abs() < 0.02 * f.g_alpha.abs(), "{} vs {}", a.g_alpha, f.g_alpha);
}
