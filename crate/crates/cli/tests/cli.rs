use proxyhedge::params::MarketParams;
use proxyhedge::pricing::{price_at_spot, HedgePrice};
use proxyhedge::solver::{solver_registry, PhiProblem, SolverOptions};
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

const TEST1: &str = include_str!("../configs/test1.cfg");
const TEST2: &str = include_str!("../configs/test2.cfg");

fn cfg_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

/// test1 with a short u-range, then `edits` applied as plain substitutions.
fn small(edits: &[(&str, &str)], extra: &str) -> tempfile::NamedTempFile {
    let mut t = TEST1.replace("u_points = 41", "u_points = 3");
    for (a, b) in edits {
        assert!(t.contains(a), "{a}");
        t = t.replace(a, b);
    }
    t.push_str(extra);
    cfg_file(&t)
}

fn run(args: &[&str], cfg: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_proxyhedge"));
    c.args(args);
    if let Some(p) = cfg {
        c.arg("--config").arg(p);
    }
    c.output().unwrap()
}

fn rows(out: &Output) -> (Vec<String>, Vec<Vec<String>>) {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn column(out: &Output, name: &str) -> Vec<String> {
    let (h, r) = rows(out);
    let i = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name} in {h:?}"));
    r.into_iter().map(|row| row[i].clone()).collect()
}

#[test]
fn bundled_configs_hold_the_reference_markets() {
    for (text, want) in [(TEST1, MarketParams::test1()), (TEST2, MarketParams::test2())] {
        let c = proxyhedge_cli::config::parse(text).unwrap();
        assert_eq!(c.market, want);
        assert_eq!(c.bracket, (0.0, 3.0));
    }
}

#[test]
fn price_writes_partial_sums_and_the_price() {
    let f = small(&[], "");
    let out = run(&["price"], Some(f.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, r) = rows(&out);
    assert_eq!(h, ["scenario", "u", "v", "y", "z", "phi0", "phi01", "g", "p_y"]);
    assert_eq!(r.len(), 3);
    assert!(column(&out, "g").iter().all(|g| g.parse::<f64>().unwrap().is_finite()));
}

#[test]
fn no_holding_prices_to_zero() {
    let f = small(&[("alpha = 1", "alpha = 0"), ("p_y = capped", "p_y = capped\nz_leg = off")], "");
    let out = run(&["price", "--solver", "both"], Some(f.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["g", "g_fd"] {
        for g in column(&out, name) {
            assert!(g.parse::<f64>().unwrap().abs() < 1e-9, "{name} = {g}");
        }
    }
}

#[test]
fn output_is_byte_identical_across_runs() {
    let f = small(&[], "");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        assert!(run(&["price", "--out", p.to_str().unwrap()], Some(f.path())).status.success());
    }
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn validate_against_itself_is_exact() {
    let f = small(&[], "");
    let out = run(&["validate", "--solver", "fd"], Some(f.path()));
    assert!(out.status.success());
    for x in column(&out, "sup_rel") {
        assert_eq!(x.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn validate_exits_2_past_the_threshold() {
    let f = small(&[], "");
    let out = run(&["validate", "--threshold", "1e-9"], Some(f.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(!column(&out, "sup_rel").is_empty());
}

#[test]
fn configuration_errors_exit_64() {
    let f = small(&[("[hedge]", "[hedge]\nleverage = 2")], "");
    assert_eq!(run(&["price"], Some(f.path())).status.code(), Some(64));
    let f = small(&[("gamma = 0.03\n", "")], "");
    assert_eq!(run(&["price"], Some(f.path())).status.code(), Some(64));
    assert_eq!(run(&["price"], None).status.code(), Some(64));
    assert_eq!(run(&["price"], Some(Path::new("/nonexistent/run.cfg"))).status.code(), Some(64));
}

#[test]
fn diverging_fixed_point_exits_3() {
    let f = small(&[("gamma = 0.03", "gamma = 0.2")], "\n[fd]\nlinearization = frozen\nmax_iters = 1\n");
    assert_eq!(run(&["price", "--solver", "fd"], Some(f.path())).status.code(), Some(3));
}

#[test]
fn single_point_sweep_is_the_spot_price() {
    let f = small(&[], "\n[sweep]\naxis = alpha\nvalues = 1\n");
    let out = run(&["sweep"], Some(f.path()));
    assert!(out.status.success());
    let g: f64 = column(&out, "g")[0].parse().unwrap();
    let pr = PhiProblem::new(MarketParams::test1(), None).unwrap();
    let asym = solver_registry().create("asym", &SolverOptions::default()).unwrap();
    let want = price_at_spot(asym.as_ref(), &pr, 1.0, HedgePrice::CappedClaim).unwrap().g_alpha;
    assert!((g - want).abs() < 1e-9 * want.abs(), "{g} vs {want}");
}

#[test]
fn alpha_sweep_reports_curvature() {
    let f = small(&[], "\n[sweep]\naxis = alpha\nfrom = 0\nto = 3\npoints = 5\n");
    let out = run(&["sweep"], Some(f.path()));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let trailer = text.lines().find(|l| l.starts_with("# convexity")).unwrap();
    assert!(trailer.contains("concave=true"), "{trailer}");
}

#[test]
fn oversized_sweep_is_refused() {
    let f = small(&[], "\n[sweep]\naxis = gamma\nfrom = 0.01\nto = 0.2\npoints = 500\n");
    assert_eq!(run(&["sweep"], Some(f.path())).status.code(), Some(64));
}

#[test]
fn hedge_flags_the_edge() {
    let f = small(&[("u_min = -30", "u_min = -10"), ("u_points = 3", "u_points = 2")], "");
    let out = run(&["hedge"], Some(f.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(column(&out, "edge"), ["false", "true"]);
    assert_eq!(column(&out, "alpha_star")[1].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest", "--seed", "3"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(column(&out, "pass").iter().all(|p| p == "true"));
}
