//! Individual best responses, their costs, and the population response `F(μ)`.
//!
//! All paths come from closed-form expressions in a handful of per-`μ` tables:
//! `B = (A-δκ)ψ`, `W = B/(η Ē)`, `C = ∫₀ᵗ W` and `K = h/E`, where `Ē` is the
//! discount `exp(-∫(A-δκ)/η)`. Building a path is then linear in the grid size.

use rayon::prelude::*;

use crate::dist::PortfolioDistribution;
use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::model::VariantMode;
use crate::riccati::RiccatiBundle;

#[derive(Debug, Clone)]
pub struct PlayerPath {
    pub x0: f64,
    pub sigma: f64,
    pub tau: f64,
    pub t: Vec<f64>,
    /// Inventory.
    pub x: Vec<f64>,
    /// Adjoint `ηξ + δκX`.
    pub y: Vec<f64>,
    /// Trading rate; positive means selling.
    pub xi: Vec<f64>,
    pub cost: f64,
}

/// Which cost functional a path is priced under. Both use the total
/// aggregate rate; in the `N`-player game that average includes the player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Game {
    Mfg,
    NPlayer { n: usize },
}

/// Per-`μ` tables shared by every path of one solution.
pub struct PathBuilder<'a> {
    sol: &'a EquilibriumSolution,
    bundle: &'a RiccatiBundle,
    /// Aggregate rate in the solved orientation.
    mu: Vec<f64>,
    b: Vec<f64>,
    w: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> PathBuilder<'a> {
    pub fn new(sol: &'a EquilibriumSolution, bundle: &'a RiccatiBundle) -> Self {
        let n = sol.t.len();
        let k = bundle.delta() * bundle.kappa();
        let mu = sol.oriented_mu();
        let psi = &sol.kernels.psi;
        let mut b = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let u = bundle.u[i];
            b[i] = psi[i] * (1.0 - k * u) / u;
            w[i] = b[i] / (bundle.eta[i] * bundle.ebar[i]);
        }
        w[n - 1] = bundle.kappa() * mu[n - 1] / (2.0 * bundle.alpha_tilde_end());
        let c = bundle.grid().quad().cumulative(&w);
        Self { sol, bundle, mu, b, w, c }
    }

    fn c_at(&self, s: f64) -> f64 {
        self.bundle.grid().quad().integral_to(&self.w, &self.c, s)
    }

    /// `C(t) - α_tψ_t h_t/E_t`, which must reproduce `φ(t)`.
    pub fn phi_identity(&self) -> Vec<f64> {
        let bu = self.bundle;
        (0..self.c.len())
            .map(|i| {
                if bu.e[i] > 0.0 {
                    self.c[i] - bu.alpha[i] * self.sol.kernels.psi[i] * bu.h[i] / bu.e[i]
                } else {
                    self.c[i]
                }
            })
            .collect()
    }

    /// Best response of a player at `x` (any sign) in the original orientation.
    pub fn path(&self, x: f64) -> PlayerPath {
        let o = self.sol.orientation;
        let xo = o * x;
        let mut p = if xo > 0.0 {
            self.seller_oriented(xo)
        } else if xo < 0.0 {
            self.buyer_oriented(xo)
        } else {
            let n = self.sol.t.len();
            PlayerPath {
                x0: 0.0,
                sigma: 0.0,
                tau: 0.0,
                t: self.sol.t.clone(),
                x: vec![0.0; n],
                y: vec![0.0; n],
                xi: vec![0.0; n],
                cost: 0.0,
            }
        };
        if o < 0.0 {
            p.x0 = x;
            for v in p.x.iter_mut().chain(p.y.iter_mut()).chain(p.xi.iter_mut()) {
                *v = -*v;
            }
        }
        p.cost = trapezoid_cost(&p.t, &p.xi, &p.x, &self.sol.mu, self.bundle);
        p
    }

    /// Buyer in the solved orientation, `x < 0`.
    pub fn buyer_path(&self, x: f64) -> PlayerPath {
        assert!(x < 0.0, "buyer_path needs x < 0");
        self.path(x * self.sol.orientation)
    }

    /// Seller in the solved orientation, `x > 0`.
    pub fn seller_path(&self, x: f64) -> PlayerPath {
        assert!(x > 0.0, "seller_path needs x > 0");
        self.path(x * self.sol.orientation)
    }

    fn buyer_oriented(&self, x: f64) -> PlayerPath {
        let bu = self.bundle;
        let ts = &self.sol.t;
        let n = ts.len();
        // Only the trading constraint lets buyers wait.
        let sigma = if self.sol.mode == VariantMode::TradingConstraint { self.sol.kernels.entry_time(x) } else { 0.0 };
        let at = bu.at(sigma);
        let start = x / at.ebar;
        let c_sigma = self.c_at(sigma);
        let dk = bu.delta() * bu.kappa();
        let mut px = vec![x; n];
        let mut xi = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            if ts[i] < sigma {
                y[i] = dk * x;
                continue;
            }
            let core = start - (self.c[i] - c_sigma);
            px[i] = bu.ebar[i] * core;
            xi[i] = (bu.alpha_tilde[i] * core + self.b[i]) / bu.eta[i];
            y[i] = bu.eta[i] * xi[i] + dk * px[i];
        }
        px[n - 1] = 0.0;
        PlayerPath { x0: x, sigma, tau: bu.horizon(), t: ts.clone(), x: px, y, xi, cost: 0.0 }
    }

    fn seller_oriented(&self, x: f64) -> PlayerPath {
        let bu = self.bundle;
        let ts = &self.sol.t;
        let n = ts.len();
        let tau = if self.sol.mode == VariantMode::Unconstrained { bu.horizon() } else { self.sol.kernels.exit_time(x) };
        let jump = if tau < bu.horizon() { bu.at(tau).alpha * self.sol.kernels.psi_at(tau) } else { 0.0 };
        let dk = bu.delta() * bu.kappa();
        let mut px = vec![0.0; n];
        let mut xi = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            if ts[i] >= tau && tau < bu.horizon() {
                continue;
            }
            let (k, inv_e) = if jump > 0.0 { (bu.h[i] / bu.e[i], 1.0 / bu.e[i]) } else { (0.0, 0.0) };
            let core = x - self.c[i] + jump * k;
            px[i] = bu.ebar[i] * core;
            xi[i] = (bu.alpha_tilde[i] * core + self.b[i] - jump * inv_e) / bu.eta[i];
            y[i] = bu.eta[i] * xi[i] + dk * px[i];
        }
        px[0] = x;
        px[n - 1] = 0.0;
        PlayerPath { x0: x, sigma: 0.0, tau, t: ts.clone(), x: px, y, xi, cost: 0.0 }
    }

    /// Inventory of a seller evaluated exactly at its exit time.
    pub fn seller_inventory_at_exit(&self, x: f64) -> f64 {
        let bu = self.bundle;
        let tau = self.sol.kernels.exit_time(x);
        if tau >= bu.horizon() {
            return 0.0;
        }
        let p = bu.at(tau);
        let jump = p.alpha * self.sol.kernels.psi_at(tau);
        p.ebar * (x - self.c_at(tau) + jump * p.h / p.e)
    }

    /// Adjoint minus self-impact at the entry time of a buyer.
    pub fn buyer_entry_gap(&self, x: f64) -> f64 {
        let bu = self.bundle;
        let sigma = self.sol.kernels.entry_time(x);
        let p = bu.at(sigma);
        let b = self.sol.kernels.psi_at(sigma) / p.u * (1.0 - bu.delta() * bu.kappa() * p.u);
        // ηξ(σ) = α̃_σ x/Ē_σ + B_σ = (A-δκ)x + B.
        (p.alpha_tilde * x / p.ebar + b).abs()
    }

    pub fn tables(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.b, &self.w, &self.c)
    }

    pub fn oriented_mu(&self) -> &[f64] {
        &self.mu
    }
}

fn trapezoid_cost(t: &[f64], xi: &[f64], x: &[f64], mu: &[f64], bundle: &RiccatiBundle) -> f64 {
    let f: Vec<f64> = (0..t.len())
        .map(|i| 0.5 * bundle.eta[i] * xi[i] * xi[i] + bundle.kappa() * mu[i] * x[i] + 0.5 * bundle.lambda[i] * x[i] * x[i])
        .collect();
    trapezoid(t, &f)
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(s, v)| 0.5 * (s[1] - s[0]) * (v[0] + v[1])).sum()
}

/// `∫ (½ηξ² + κμX + ½λX²)` by the trapezoid rule on the path grid.
pub fn evaluate_cost(path: &PlayerPath, mu: &[f64], bundle: &RiccatiBundle, game: Game) -> Result<f64> {
    if path.t.len() != mu.len() || path.t.as_slice() != bundle.grid().nodes() {
        return Err(Error::GridMismatch(format!(
            "path has {} nodes, rate {} nodes",
            path.t.len(),
            mu.len()
        )));
    }
    if let Game::NPlayer { n } = game {
        if n == 0 {
            return Err(Error::InvalidArgument("N-player game needs N >= 1".into()));
        }
    }
    Ok(trapezoid_cost(&path.t, &path.xi, &path.x, mu, bundle))
}

/// Inventory from a rate by trapezoid integration: `X = x0 - ∫ξ`.
pub fn inventory_from_rate(t: &[f64], x0: f64, xi: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(t.len());
    let mut acc = x0;
    x.push(acc);
    for i in 1..t.len() {
        acc -= 0.5 * (t[i] - t[i - 1]) * (xi[i] + xi[i - 1]);
        x.push(acc);
    }
    x
}

/// Population response `∫ ξ*(x) ν(dx)`: exact for atomic laws, equal-mass
/// strata split at the entry and exit thresholds otherwise.
pub fn aggregate_f(sol: &EquilibriumSolution, bundle: &RiccatiBundle, dist: &PortfolioDistribution, strata: usize) -> Vec<f64> {
    let n = sol.t.len();
    if sol.trivial {
        return vec![0.0; n];
    }
    let builder = PathBuilder::new(sol, bundle);
    let o = sol.orientation;
    let oriented = if o < 0.0 { dist.reflect() } else { dist.clone() };
    let mut reps = oriented.seller_strata(sol.kernels.phi_at_t, strata);
    reps.extend(oriented.buyer_strata(sol.kernels.psi_at_0, strata));
    reps.par_iter()
        .map(|&(x, w)| {
            let p = builder.path(o * x);
            p.xi.iter().map(|v| w * v).collect::<Vec<f64>>()
        })
        .reduce(|| vec![0.0; n], |mut a, b| {
            for (u, v) in a.iter_mut().zip(&b) {
                *u += v;
            }
            a
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::find_equilibrium;
    use crate::model::{build_grid, CostParams, VariantMode};
    use crate::riccati::solve_a;

    #[test]
    fn twap_cost_closed_form() {
        let p = CostParams::constant(1.0, 5.0, 0.0, 10.0, 0.0);
        let b = solve_a(&p, &build_grid(1.0, 401, 1.0).unwrap()).unwrap();
        let t = b.grid().nodes().to_vec();
        let xi = vec![2.0; t.len()];
        let x = inventory_from_rate(&t, 2.0, &xi);
        let path = PlayerPath { x0: 2.0, sigma: 0.0, tau: 1.0, t: t.clone(), x, y: vec![0.0; t.len()], xi, cost: 0.0 };
        let j = evaluate_cost(&path, &vec![0.0; t.len()], &b, Game::Mfg).unwrap();
        assert!((j - 0.5 * 5.0 * 4.0).abs() < 1e-12);
        let zero = PlayerPath { x0: 0.0, xi: vec![0.0; t.len()], x: vec![0.0; t.len()], ..path.clone() };
        assert_eq!(evaluate_cost(&zero, &vec![1.0; t.len()], &b, Game::Mfg).unwrap(), 0.0);
        assert!(evaluate_cost(&path, &[0.0; 3], &b, Game::Mfg).is_err());
    }

    #[test]
    fn paths_satisfy_structure() {
        let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 0.0);
        let b = solve_a(&p, &build_grid(1.0, 2001, 4.0).unwrap()).unwrap();
        let d = PortfolioDistribution::exp_mixture(0.8, 2.0 / 3.0, 0.2, 1.0).unwrap();
        let sol = find_equilibrium(&b, &p, &d, VariantMode::TradingConstraint, 1e-10).unwrap();
        let pb = PathBuilder::new(&sol, &b);
        let phi = pb.phi_identity();
        for (a, z) in phi.iter().zip(&sol.kernels.phi) {
            assert!((a - z).abs() < 1e-8, "{a} {z}");
        }
        for x in [-3.0, -0.5, -0.1, 0.2, 0.5, 2.0] {
            let path = pb.path(x);
            assert_eq!(path.x[0], x);
            assert!(path.x.last().unwrap().abs() < 1e-6 * x.abs());
            let s = x.signum();
            let scale = path.xi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(path.xi.iter().all(|v| s * v >= -1e-12 * scale), "direction change at x = {x}");
        }
        assert!(pb.seller_inventory_at_exit(0.4).abs() < 1e-6 * 0.4);
        assert!(pb.buyer_entry_gap(-0.3) < 1e-6);
    }
}
