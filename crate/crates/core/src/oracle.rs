//! Independent checks of the equilibrium: a discretized constrained best
//! response solved as a convex QP, random admissible deviations, and finite
//! differences of the backward solution in its two parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::equilibrium::{EquilibriumSolution, Solver};
use crate::error::{Error, Result};
use crate::model::CostParams;
use crate::paths::{inventory_from_rate, trapezoid, Game, PathBuilder};
use crate::riccati::RiccatiBundle;

pub const DEFAULT_COARSE_N: usize = 200;
const QP_MAX_ITER: usize = 200_000;

/// Piecewise-constant rates on a uniform coarse grid.
#[derive(Debug, Clone)]
pub struct DiscreteBestResponse {
    /// Interval endpoints.
    pub t: Vec<f64>,
    pub rates: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl DiscreteBestResponse {
    /// Start of the first interval whose rate exceeds `rel` of the largest rate.
    pub fn first_active_time(&self, rel: f64) -> f64 {
        let m = self.rates.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.rates.iter().position(|v| v.abs() > rel * m).map(|j| self.t[j]).unwrap_or(self.t[self.t.len() - 1])
    }

    /// End of the last interval whose rate exceeds `rel` of the largest rate.
    pub fn last_active_time(&self, rel: f64) -> f64 {
        let m = self.rates.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.rates.iter().rposition(|v| v.abs() > rel * m).map(|j| self.t[j + 1]).unwrap_or(0.0)
    }
}

/// Linear interpolation of nodal data.
fn lerp(ts: &[f64], f: &[f64], s: f64) -> f64 {
    let k = ts.partition_point(|&x| x <= s).saturating_sub(1).min(ts.len() - 2);
    let w = (s - ts[k]) / (ts[k + 1] - ts[k]);
    f[k] + w * (f[k + 1] - f[k])
}

/// Euclidean projection onto `{s·v >= 0, Σ v = total}` (a scaled simplex).
fn project_simplex(w: &[f64], total: f64) -> Vec<f64> {
    let s = if total < 0.0 { -1.0 } else { 1.0 };
    let r = total.abs();
    let mut z: Vec<f64> = w.iter().map(|v| s * v).collect();
    z.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut shift = 0.0;
    for (i, zi) in z.iter().enumerate() {
        acc += zi;
        let cand = (acc - r) / (i + 1) as f64;
        if zi - cand > 0.0 {
            shift = cand;
        }
    }
    w.iter().map(|v| s * (s * v - shift).max(0.0)).collect()
}

/// Weighted projection onto `{s·ξ >= 0, Σ wₖξₖ = total}`: `ξ = s·max(0, s·y - τ)`.
fn project_weighted(y: &[f64], weights: &[f64], total: f64) -> Vec<f64> {
    let s = if total < 0.0 { -1.0 } else { 1.0 };
    let r = total.abs();
    let mass = |tau: f64| -> f64 { y.iter().zip(weights).map(|(v, w)| w * (s * v - tau).max(0.0)).sum() };
    let top = y.iter().map(|v| s * v).fold(f64::NEG_INFINITY, f64::max);
    let wsum: f64 = weights.iter().sum();
    let (mut lo, mut hi) = (top - r / wsum - 1.0, top);
    while mass(lo) < r {
        lo -= (hi - lo).max(1.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    y.iter().map(|v| s * (s * v - tau).max(0.0)).collect()
}

struct Qp {
    dt: f64,
    x0: f64,
    eta: Vec<f64>,
    lambda: Vec<f64>,
    kappa_m: Vec<f64>,
    constant: f64,
}

impl Qp {
    fn inventory(&self, v: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(v.len() + 1);
        let mut acc = self.x0;
        x.push(acc);
        for r in v {
            acc -= self.dt * r;
            x.push(acc);
        }
        x
    }

    fn objective(&self, v: &[f64]) -> f64 {
        let x = self.inventory(v);
        let dt = self.dt;
        let mut f = self.constant;
        for j in 0..v.len() {
            let (a, b) = (x[j], x[j + 1]);
            f += 0.5 * self.eta[j] * v[j] * v[j] * dt
                + self.kappa_m[j] * 0.5 * (a + b) * dt
                + 0.5 * self.lambda[j] * (a * a + a * b + b * b) / 3.0 * dt;
        }
        f
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let x = self.inventory(v);
        let dt = self.dt;
        // d f / d X_k for k = 1..=n.
        let mut dx = vec![0.0; n + 1];
        for j in 0..n {
            let (a, b) = (x[j], x[j + 1]);
            let l = 0.5 * self.lambda[j] * dt / 3.0;
            dx[j] += 0.5 * self.kappa_m[j] * dt + l * (2.0 * a + b);
            dx[j + 1] += 0.5 * self.kappa_m[j] * dt + l * (a + 2.0 * b);
        }
        let mut g = vec![0.0; n];
        let mut suffix = 0.0;
        for j in (0..n).rev() {
            suffix += dx[j + 1];
            g[j] = self.eta[j] * v[j] * dt - dt * suffix;
        }
        g
    }

    fn kkt(&self, v: &[f64]) -> f64 {
        let g = self.gradient(v);
        let s = self.x0.signum();
        let support: Vec<usize> = (0..v.len()).filter(|&j| v[j] * s > 0.0).collect();
        if support.is_empty() {
            return 0.0;
        }
        let nu = support.iter().map(|&j| g[j]).sum::<f64>() / support.len() as f64;
        let scale = self.dt * (1.0 + g.iter().fold(0.0f64, |a, x| a.max(x.abs())) / self.dt);
        let mut worst = 0.0f64;
        for j in 0..v.len() {
            let r = if v[j] * s > 0.0 { (g[j] - nu).abs() } else { (s * (nu - g[j])).max(0.0) };
            worst = worst.max(r);
        }
        worst / scale
    }

    fn solve(&self, n: usize, horizon: f64) -> Result<DiscreteBestResponse> {
        let t: Vec<f64> = (0..=n).map(|j| horizon * j as f64 / n as f64).collect();
        if self.x0 == 0.0 {
            return Ok(DiscreteBestResponse { t, rates: vec![0.0; n], objective: self.constant, kkt_residual: 0.0, iterations: 0 });
        }
        let total = self.x0 / self.dt;
        let eta_max = self.eta.iter().cloned().fold(0.0, f64::max);
        let lam_max = self.lambda.iter().cloned().fold(0.0, f64::max);
        let lip = self.dt * (eta_max + lam_max * horizon * horizon);
        let step = 1.0 / lip;
        let mut v = vec![self.x0 / horizon; n];
        let mut z = v.clone();
        let mut mom = 1.0f64;
        let scale = self.x0.abs() / horizon;
        for it in 0..QP_MAX_ITER {
            let g = self.gradient(&z);
            let w: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let next = project_simplex(&w, total);
            let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let mom_next = 0.5 * (1.0 + (1.0 + 4.0 * mom * mom).sqrt());
            let beta = (mom - 1.0) / mom_next;
            // Gradient-based restart keeps the iteration monotone in practice.
            let restart = g.iter().zip(next.iter().zip(&v)).map(|(gi, (a, b))| gi * (a - b)).sum::<f64>() > 0.0;
            z = if restart {
                mom = 1.0;
                next.clone()
            } else {
                mom = mom_next;
                next.iter().zip(&v).map(|(a, b)| a + beta * (a - b)).collect()
            };
            v = next;
            if change <= 1e-14 * scale && it > 10 {
                return Ok(DiscreteBestResponse { objective: self.objective(&v), kkt_residual: self.kkt(&v), rates: v, t, iterations: it + 1 });
            }
        }
        Err(Error::NonConvergence { iterations: QP_MAX_ITER, last_change: f64::NAN })
    }
}

/// Constrained best response of a player at `x` against an exogenous
/// aggregate `mu` (nodal values on `t_mu`), discretized with `coarse_n`
/// uniform intervals of piecewise-constant rates.
pub fn best_response_qp(x: f64, t_mu: &[f64], mu: &[f64], params: &CostParams, coarse_n: usize) -> Result<DiscreteBestResponse> {
    best_response_qp_against(x, t_mu, mu, params, coarse_n, 0.0)
}

/// As [`best_response_qp`] but with a constant added to the objective.
fn best_response_qp_against(x: f64, t_mu: &[f64], mu: &[f64], params: &CostParams, coarse_n: usize, constant: f64) -> Result<DiscreteBestResponse> {
    if coarse_n < 50 {
        return Err(Error::InvalidArgument(format!("coarse grid needs at least 50 intervals, got {coarse_n}")));
    }
    let horizon = params.horizon;
    let dt = horizon / coarse_n as f64;
    let mids: Vec<f64> = (0..coarse_n).map(|j| (j as f64 + 0.5) * dt).collect();
    let qp = Qp {
        dt,
        x0: x,
        eta: mids.iter().map(|&s| params.eta(s)).collect(),
        lambda: mids.iter().map(|&s| params.lambda(s)).collect(),
        kappa_m: mids.iter().map(|&s| params.kappa * lerp(t_mu, mu, s)).collect(),
        constant,
    };
    qp.solve(coarse_n, horizon)
}

/// N-player best response of player at `x` holding the others at their
/// equilibrium rates. The deviator's own impact contributes the constant
/// `κx²/(2N)`; the rest of the aggregate is `μ - ξ*/N`.
pub fn best_response_qp_nplayer(
    x: f64,
    sol: &EquilibriumSolution,
    bundle: &RiccatiBundle,
    params: &CostParams,
    n_players: usize,
    coarse_n: usize,
) -> Result<DiscreteBestResponse> {
    let own = PathBuilder::new(sol, bundle).path(x);
    let n = n_players as f64;
    let others: Vec<f64> = sol.mu.iter().zip(&own.xi).map(|(m, v)| m - v / n).collect();
    best_response_qp_against(x, &sol.t, &others, params, coarse_n, params.kappa * x * x / (2.0 * n))
}

/// Piecewise-constant rates of an analytic path averaged onto the coarse grid,
/// priced with the QP objective. Used to compare both optimizers like for like.
pub fn discrete_objective_of_path(x: f64, t_path: &[f64], xi: &[f64], t_mu: &[f64], mu: &[f64], params: &CostParams, coarse_n: usize) -> f64 {
    let horizon = params.horizon;
    let dt = horizon / coarse_n as f64;
    let mids: Vec<f64> = (0..coarse_n).map(|j| (j as f64 + 0.5) * dt).collect();
    let cum = {
        let mut c = vec![0.0];
        for i in 1..t_path.len() {
            let v = c[i - 1] + 0.5 * (t_path[i] - t_path[i - 1]) * (xi[i] + xi[i - 1]);
            c.push(v);
        }
        c
    };
    let mut rates: Vec<f64> = (0..coarse_n)
        .map(|j| (lerp(t_path, &cum, (j + 1) as f64 * dt) - lerp(t_path, &cum, j as f64 * dt)) / dt)
        .collect();
    let sum: f64 = rates.iter().sum::<f64>() * dt;
    if sum != 0.0 {
        for r in &mut rates {
            *r *= x / sum;
        }
    }
    let qp = Qp {
        dt,
        x0: x,
        eta: mids.iter().map(|&s| params.eta(s)).collect(),
        lambda: mids.iter().map(|&s| params.lambda(s)).collect(),
        kappa_m: mids.iter().map(|&s| params.kappa * lerp(t_mu, mu, s)).collect(),
        constant: 0.0,
    };
    qp.objective(&rates)
}

#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub seed: u64,
    pub samples_per_player: usize,
    /// Fewest effective deviations drawn for any player.
    pub min_effective_samples: usize,
    /// Smallest `J(deviation) - J(equilibrium)` over all samples.
    pub min_gap: f64,
    /// `min_gap / max(1, |J|)` for the worst player.
    pub min_relative_gap: f64,
    pub worst_player: f64,
    pub per_player: Vec<(f64, f64)>,
}

fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (t[i + 1] - t[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Cost of a rate profile for the player at `x0`, with `others` the part of
/// the aggregate not generated by this player and `own_weight` the weight of
/// the player's own rate in the aggregate (0 for the mean-field game, 1/N).
pub fn deviation_cost(t: &[f64], x0: f64, xi: &[f64], others: &[f64], own_weight: f64, bundle: &RiccatiBundle) -> f64 {
    let x = inventory_from_rate(t, x0, xi);
    let f: Vec<f64> = (0..t.len())
        .map(|i| {
            let m = others[i] + own_weight * xi[i];
            0.5 * bundle.eta[i] * xi[i] * xi[i] + bundle.kappa() * m * x[i] + 0.5 * bundle.lambda[i] * x[i] * x[i]
        })
        .collect();
    trapezoid(t, &f)
}

/// Random admissible deviations from the equilibrium strategy of each player
/// in `players`. Opponents stay at equilibrium; in the `N`-player game the
/// aggregate is recomputed with the deviator's own rate.
pub fn nash_deviation_test(
    sol: &EquilibriumSolution,
    bundle: &RiccatiBundle,
    game: Game,
    players: &[f64],
    samples: usize,
    seed: u64,
) -> DeviationReport {
    let t = &sol.t;
    let weights = trapezoid_weights(t);
    let horizon = bundle.horizon();
    let builder = PathBuilder::new(sol, bundle);
    let own_weight = match game {
        Game::Mfg => 0.0,
        Game::NPlayer { n } => 1.0 / n as f64,
    };
    let mut report = DeviationReport {
        seed,
        samples_per_player: samples,
        min_effective_samples: usize::MAX,
        min_gap: f64::INFINITY,
        min_relative_gap: f64::INFINITY,
        worst_player: f64::NAN,
        per_player: Vec::new(),
    };
    for (idx, &x) in players.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        let star = builder.path(x).xi;
        let others: Vec<f64> = sol.mu.iter().zip(&star).map(|(m, v)| m - own_weight * v).collect();
        let base_xi = project_weighted(&star, &weights, x);
        let base = deviation_cost(t, x, &base_xi, &others, own_weight, bundle);
        let amp = 0.1 * star.iter().fold(x.abs() / horizon, |a, v| a.max(v.abs()));
        let mut worst = f64::INFINITY;
        let mut drawn = 0;
        let mut attempts = 0;
        // Draws the projection maps back onto the baseline are redrawn.
        while drawn < samples && attempts < 20 * samples {
            attempts += 1;
            let bumps = rng.gen_range(1..=4);
            let mut y = star.clone();
            for _ in 0..bumps {
                let center = rng.gen_range(0.0..horizon);
                let width = rng.gen_range(0.05..0.5) * horizon;
                let a = amp * rng.gen_range(-1.0..1.0);
                for (yi, &ti) in y.iter_mut().zip(t) {
                    *yi += a * (1.0 - (ti - center).abs() / width).max(0.0);
                }
            }
            let pert = project_weighted(&y, &weights, x);
            if pert.iter().zip(&base_xi).all(|(a, b)| (a - b).abs() <= 1e-9 * amp) {
                continue;
            }
            drawn += 1;
            let gap = deviation_cost(t, x, &pert, &others, own_weight, bundle) - base;
            worst = worst.min(gap);
        }
        report.min_effective_samples = report.min_effective_samples.min(drawn);
        let rel = worst / base.abs().max(1.0);
        report.per_player.push((x, worst));
        if rel < report.min_relative_gap {
            report.min_relative_gap = rel;
            report.min_gap = worst;
            report.worst_player = x;
        }
    }
    report
}

#[derive(Debug, Clone)]
pub struct SensitivityReport {
    /// Smallest finite-difference `∂(ημ)/∂θ` over interior nodes.
    pub min_dtheta: f64,
    /// Largest finite-difference `∂(ημ)/∂c` over interior nodes.
    pub max_dc: f64,
    pub eta_end: f64,
    /// `ρ₁(·, c)` increases across an evenly spaced sweep of `[0, θ_max]`.
    pub rho1_increasing: bool,
    pub rho1_sweep: Vec<(f64, f64)>,
    /// Finite-difference slope of `c ↦ ρ₂(θ(c), c)`.
    pub outer_slope: f64,
}

pub const SWEEP_POINTS: usize = 16;

/// Central differences of `ϑ = ημ` in `θ` and `c` at `(theta, c)` with
/// relative step `bump`.
pub fn sensitivity_check(solver: &Solver, theta: f64, c: f64, bump: f64, tol: f64) -> Result<SensitivityReport> {
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument("sensitivity check needs theta > 0".into()));
    }
    let b = solver.bundle;
    let eta = &b.eta;
    let n = eta.len();
    let vartheta = |th: f64, cc: f64| -> Vec<f64> { solver.march(th, cc).mu.iter().zip(eta).map(|(m, e)| m * e).collect() };
    let ht = bump * theta;
    let (up, dn) = (vartheta(theta + ht, c), vartheta(theta - ht, c));
    let min_dtheta = (1..n - 1).map(|i| (up[i] - dn[i]) / (2.0 * ht)).fold(f64::INFINITY, f64::min);
    let hc = bump * c.max(1.0);
    let (up, dn) = (vartheta(theta, c + hc), vartheta(theta, (c - hc).max(0.0)));
    let span = c + hc - (c - hc).max(0.0);
    let max_dc = (1..n - 1).map(|i| (up[i] - dn[i]) / span).fold(f64::NEG_INFINITY, f64::max);
    let hi = solver.theta_max();
    let rho1_sweep: Vec<(f64, f64)> = (0..SWEEP_POINTS)
        .map(|i| {
            let th = hi * i as f64 / (SWEEP_POINTS - 1) as f64;
            (th, solver.rho1(th, c, &solver.march(th, c)))
        })
        .collect();
    let rho1_increasing = rho1_sweep.windows(2).all(|w| w[1].1 > w[0].1);
    let outer = |cc: f64| -> Result<f64> {
        let (_, st) = solver.theta_of_c(cc, tol)?;
        Ok(solver.rho2(cc, &st))
    };
    let outer_slope = (outer(c + hc)? - outer((c - hc).max(0.0))?) / span;
    Ok(SensitivityReport {
        min_dtheta,
        max_dc,
        eta_end: eta[n - 1],
        rho1_increasing,
        rho1_sweep,
        outer_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_feasible() {
        let p = project_simplex(&[3.0, -1.0, 0.5, 2.0], 2.0);
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!(p.iter().all(|&v| v >= 0.0));
        let b = project_simplex(&[0.3, -1.0, -0.5], -1.0);
        assert!((b.iter().sum::<f64>() + 1.0).abs() < 1e-14);
        assert!(b.iter().all(|&v| v <= 0.0));
        let w = [0.5, 1.0, 1.0, 0.5];
        let q = project_weighted(&[1.0, -2.0, 3.0, 0.0], &w, 1.5);
        assert!((q.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_position_has_zero_response() {
        let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 0.0);
        let t = [0.0, 1.0];
        let r = best_response_qp(0.0, &t, &[1.0, 1.0], &p, 100).unwrap();
        assert!(r.rates.iter().all(|&v| v == 0.0));
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn zero_risk_zero_rate_is_twap() {
        let p = CostParams::constant(1.0, 5.0, 0.0, 10.0, 0.0);
        let t = [0.0, 1.0];
        let r = best_response_qp(2.0, &t, &[0.0, 0.0], &p, 200).unwrap();
        assert!(r.rates.iter().all(|&v| (v - 2.0).abs() < 1e-9));
        assert!((r.objective - 0.5 * 5.0 * 4.0).abs() < 1e-9);
        assert!(r.kkt_residual < 1e-9);
    }

    #[test]
    fn rejects_tiny_coarse_grid() {
        let p = CostParams::constant(1.0, 5.0, 0.0, 10.0, 0.0);
        assert!(best_response_qp(1.0, &[0.0, 1.0], &[0.0, 0.0], &p, 10).is_err());
    }
}
