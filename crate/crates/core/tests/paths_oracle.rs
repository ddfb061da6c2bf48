use mfg_exec::dist::PortfolioDistribution;
use mfg_exec::equilibrium::find_equilibrium;
use mfg_exec::model::{build_grid, CostParams, VariantMode};
use mfg_exec::oracle::{best_response_qp, best_response_qp_nplayer, discrete_objective_of_path, nash_deviation_test};
use mfg_exec::paths::{evaluate_cost, Game, PathBuilder};
use mfg_exec::riccati::solve_a;

fn law() -> PortfolioDistribution {
    PortfolioDistribution::exp_mixture(0.8, 2.0 / 3.0, 0.2, 1.0).unwrap()
}

#[test]
fn qp_best_response_prices_like_the_analytic_path() {
    let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 0.0);
    let b = solve_a(&p, &build_grid(1.0, 2001, 4.0).unwrap()).unwrap();
    let s = find_equilibrium(&b, &p, &law(), VariantMode::TradingConstraint, 1e-10).unwrap();
    let pb = PathBuilder::new(&s, &b);
    for x in [-2.0, -0.4, 0.05, 0.5, 2.5] {
        let path = pb.path(x);
        let qp = best_response_qp(x, &s.t, &s.mu, &p, 200).unwrap();
        let priced = discrete_objective_of_path(x, &path.t, &path.xi, &s.t, &s.mu, &p, 200);
        let scale = qp.objective.abs().max(1.0);
        // The QP optimum can only be lower on its own grid, and not by much.
        assert!(priced >= qp.objective - 1e-10 * scale, "x = {x}");
        assert!(priced - qp.objective < 1e-4 * scale, "x = {x}");
        let fine = evaluate_cost(&path, &s.mu, &b, Game::Mfg).unwrap();
        assert!((fine - qp.objective).abs() < 1e-3 * scale, "x = {x}");
        assert!(qp.kkt_residual < 1e-10);
    }
}

#[test]
fn nplayer_qp_matches_equilibrium_cost() {
    let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 1.0 / 7.0);
    let b = solve_a(&p, &build_grid(1.0, 2001, 4.0).unwrap()).unwrap();
    let pos = law().mid_quantile_positions(7);
    let pop = PortfolioDistribution::empirical(pos.clone()).unwrap();
    let s = find_equilibrium(&b, &p, &pop, VariantMode::TradingConstraint, 1e-10).unwrap();
    let pb = PathBuilder::new(&s, &b);
    for &x in &pos {
        let qp = best_response_qp_nplayer(x, &s, &b, &p, 7, 400).unwrap();
        let cost = evaluate_cost(&pb.path(x), &s.mu, &b, Game::NPlayer { n: 7 }).unwrap();
        assert!((cost - qp.objective).abs() < 1e-4 * cost.abs().max(1.0), "x = {x}: {cost} vs {}", qp.objective);
    }
}

#[test]
fn deviation_test_is_reproducible() {
    let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 0.0);
    let b = solve_a(&p, &build_grid(1.0, 1001, 4.0).unwrap()).unwrap();
    let s = find_equilibrium(&b, &p, &law(), VariantMode::TradingConstraint, 1e-10).unwrap();
    let players = [-0.3, 0.4, 1.2];
    let a = nash_deviation_test(&s, &b, Game::Mfg, &players, 20, 11);
    let again = nash_deviation_test(&s, &b, Game::Mfg, &players, 20, 11);
    let other = nash_deviation_test(&s, &b, Game::Mfg, &players, 20, 12);
    assert_eq!(a.per_player, again.per_player);
    assert_ne!(a.per_player, other.per_player);
    assert!(a.min_relative_gap > -1e-6);
}

#[test]
fn drop_out_buyers_start_immediately() {
    let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 0.0);
    let b = solve_a(&p, &build_grid(1.0, 2001, 4.0).unwrap()).unwrap();
    let s = find_equilibrium(&b, &p, &law(), VariantMode::DropOut, 1e-10).unwrap();
    let pb = PathBuilder::new(&s, &b);
    for x in [-1.0, -0.1] {
        let path = pb.path(x);
        assert_eq!(path.sigma, 0.0);
        assert!(path.x.last().unwrap().abs() < 1e-8);
    }
    let small = pb.path(0.05);
    assert!(small.tau < 1.0);
    assert!(small.xi.iter().all(|&v| v >= -1e-12));
}

#[test]
fn every_mode_is_a_fixed_point() {
    let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 0.0);
    let b = solve_a(&p, &build_grid(1.0, 2001, 4.0).unwrap()).unwrap();
    let d = law();
    for mode in VariantMode::ALL {
        let s = find_equilibrium(&b, &p, &d, mode, 1e-10).unwrap();
        let f = mfg_exec::paths::aggregate_f(&s, &b, &d, 512);
        let sup = s.mu.iter().cloned().fold(0.0, f64::max);
        let err = f.iter().zip(&s.mu).map(|(a, m)| (a - m).abs()).fold(0.0, f64::max) / sup;
        assert!(err < 1e-3, "{mode:?}: {err:e}");
    }
}
