use mfg_exec::dist::PortfolioDistribution;
use proptest::prelude::*;

/// Midpoint rule on a fine uniform grid.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn empirical_functionals_match_raw_sums(pos in prop::collection::vec(-5.0f64..5.0, 1..12), x in -6.0f64..6.0) {
        let d = PortfolioDistribution::empirical(pos.clone()).unwrap();
        let w = 1.0 / pos.len() as f64;
        let count = |pred: &dyn Fn(f64) -> bool| pos.iter().filter(|&&y| pred(y)).count() as f64 * w;
        prop_assert!((d.mean() - pos.iter().sum::<f64>() * w).abs() < 1e-12);
        prop_assert!((d.q(x) - count(&|y| y > 0.0 && y >= x)).abs() < 1e-12);
        prop_assert!((d.p(x) - count(&|y| y < 0.0 && y <= x)).abs() < 1e-12);
        let ell: f64 = pos.iter().filter(|&&y| y < 0.0 && y >= x).map(|y| -y * w).sum();
        prop_assert!((d.ell(x) - ell).abs() < 1e-12);
        if x > 0.0 {
            let q_int = integrate(|s| d.q(s), 0.0, x, 20_000);
            prop_assert!((d.big_q(x) - q_int).abs() < 1e-3);
        } else {
            let p_int = -integrate(|s| d.p(s), x, 0.0, 20_000);
            prop_assert!((d.big_p(x) - p_int).abs() < 1e-3);
        }
    }

    #[test]
    fn mixture_mean_matches_quantiles(sm in 0.1f64..1.0, sr in 0.3f64..3.0, br in 0.3f64..3.0) {
        let d = PortfolioDistribution::exp_mixture(sm, sr, 1.0 - sm, br).unwrap();
        let n = 20_000;
        let approx = d.mid_quantile_positions(n).iter().sum::<f64>() / n as f64;
        prop_assert!((approx - d.mean()).abs() < 2e-3 * (1.0 + d.abs_moment()));
    }

    #[test]
    fn q_inverse_inverts(sm in 0.5f64..1.0, sr in 0.3f64..3.0, br in 0.3f64..3.0, frac in 0.01f64..0.99) {
        let d = PortfolioDistribution::exp_mixture(sm, sr, 1.0 - sm, br).unwrap();
        let total = sm / sr;
        let c = d.q_inverse(frac * total);
        prop_assert!((d.big_q(c) - frac * total).abs() < 1e-10);
    }
}
