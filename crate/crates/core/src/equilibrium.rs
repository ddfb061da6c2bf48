//! The parameterized backward equation for the aggregate rate and the root
//! problem that pins its two free parameters.
//!
//! For fixed terminal rate `θ` and exit mass `c` the equation only looks
//! forward in time, so one backward sweep of the state `(μ, ψ, Φ, M)` solves
//! it. The pair `(θ, c)` is then found by a nested search: `θ(c)` from the
//! terminal condition, `c` from the exit-mass condition.

use rayon::prelude::*;

use crate::dist::PortfolioDistribution;
use crate::error::{Error, Result};
use crate::kernels::{build_kernels, EntryExitKernels};
use crate::model::{CostParams, VariantMode};
use crate::numerics::{bisect_predicate, illinois};
use crate::riccati::RiccatiBundle;

/// State of the backward march at the grid nodes.
#[derive(Debug, Clone)]
pub struct BackwardState {
    pub mu: Vec<f64>,
    /// Entry kernel (identically zero outside the trading-constraint mode).
    pub psi: Vec<f64>,
    /// `∫ₜᵀ h κ μ`.
    pub big_phi: Vec<f64>,
    /// `∫ₜᵀ μ`.
    pub big_m: Vec<f64>,
    /// Number of atom-crossing events handled.
    pub events: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Residuals {
    pub rho1: f64,
    pub rho2: f64,
    /// `sup|F(μ) - μ|` once a population aggregation has been run.
    pub fixed_point_sup_error: Option<f64>,
    /// `∫μ - E[ν]`.
    pub mass_error: f64,
    /// Relative sup gap between the march and the Picard iteration.
    pub picard_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub mode: VariantMode,
    pub t: Vec<f64>,
    /// Aggregate rate in the original orientation.
    pub mu: Vec<f64>,
    pub theta: f64,
    pub c: f64,
    /// `-1` when the market was buyer dominated and solved by reflection;
    /// kernels and `(θ, c)` then refer to the reflected market.
    pub orientation: f64,
    pub kernels: EntryExitKernels,
    pub state: BackwardState,
    pub residuals: Residuals,
    /// `(c, ρ₂(θ(c), c))` from the bracketing scan.
    pub scan: Vec<(f64, f64)>,
    pub roots: Vec<f64>,
    /// The outer map was increasing across the scan.
    pub unique_certificate: bool,
    pub trivial: bool,
    pub warnings: Vec<String>,
}

impl EquilibriumSolution {
    /// Rate in the solved (seller-dominated) orientation.
    pub fn oriented_mu(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m * self.orientation).collect()
    }

    pub fn mass(&self, bundle: &RiccatiBundle) -> f64 {
        bundle.grid().quad().total(&self.mu)
    }
}

#[derive(Debug, Clone, Copy)]
struct Coef {
    eta: f64,
    eta_dot: f64,
    lambda: f64,
    /// `u/(1-δκu) = 1/(A-δκ)`.
    g: f64,
    h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Masses {
    active: f64,
    ell: f64,
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const SCAN_POINTS: usize = 32;
const MAX_INNER: usize = 200;
const MAX_OUTER: usize = 200;
const PICARD_MAX_ITER: usize = 500;
const PICARD_TOL: f64 = 1e-13;

/// A market, its Riccati bundle and a variant mode, ready to march.
pub struct Solver<'a> {
    pub params: &'a CostParams,
    pub bundle: &'a RiccatiBundle,
    pub dist: &'a PortfolioDistribution,
    pub mode: VariantMode,
    nodes: Vec<Coef>,
    mids: Vec<Coef>,
}

impl<'a> Solver<'a> {
    pub fn new(params: &'a CostParams, bundle: &'a RiccatiBundle, dist: &'a PortfolioDistribution, mode: VariantMode) -> Self {
        let ts = bundle.grid().nodes();
        let k = bundle.delta() * bundle.kappa();
        let node = |i: usize| Coef {
            eta: bundle.eta[i],
            eta_dot: bundle.eta_dot[i],
            lambda: bundle.lambda[i],
            g: bundle.u[i] / (1.0 - k * bundle.u[i]),
            h: bundle.h[i],
        };
        let nodes = (0..ts.len()).map(node).collect();
        let mids = ts
            .windows(2)
            .map(|w| Self::coef_from(bundle, params, 0.5 * (w[0] + w[1])))
            .collect();
        Self { params, bundle, dist, mode, nodes, mids }
    }

    fn coef_from(bundle: &RiccatiBundle, params: &CostParams, t: f64) -> Coef {
        let p = bundle.at(t);
        let k = bundle.delta() * bundle.kappa();
        Coef {
            eta: params.eta(t),
            eta_dot: params.eta_dot(t),
            lambda: params.lambda(t),
            g: p.u / (1.0 - k * p.u),
            h: p.h,
        }
    }

    fn coef_at(&self, t: f64) -> Coef {
        Self::coef_from(self.bundle, self.params, t)
    }

    pub fn mean(&self) -> f64 {
        self.dist.mean()
    }

    fn eta_end(&self) -> f64 {
        *self.bundle.eta.last().unwrap()
    }

    /// Upper end of the terminal-rate search, `E[ν]·α̃_T/η_T`.
    pub fn theta_max(&self) -> f64 {
        self.mean() * self.bundle.alpha_tilde_end() / self.eta_end()
    }

    fn masses(&self, c: f64, y: &[f64; 4]) -> Masses {
        let d = self.dist;
        match self.mode {
            VariantMode::Unconstrained => Masses { active: 1.0, ell: 0.0 },
            VariantMode::DropOut => Masses { active: d.q(c - y[2]) + d.buyer_total(), ell: 0.0 },
            VariantMode::TradingConstraint => {
                let b = -y[1].max(0.0);
                Masses { active: d.q(c - y[2]) + d.p_open(b), ell: d.ell(b) }
            }
        }
    }

    fn rhs(&self, co: &Coef, y: &[f64; 4], m: &Masses) -> [f64; 4] {
        let kappa = self.bundle.kappa();
        let delta = self.bundle.delta();
        let mu = y[0];
        let dmu = -(kappa / co.eta) * (m.active - delta) * mu - (co.eta_dot / co.eta) * mu
            - (co.lambda / co.eta) * (m.ell + y[3]);
        let dpsi = if self.mode == VariantMode::TradingConstraint {
            (co.lambda * y[1] - kappa * mu) * co.g
        } else {
            0.0
        };
        [dmu, dpsi, -co.h * kappa * mu, -mu]
    }

    /// One RK4 step of length `h` (negative) with stage coefficients given.
    /// `frozen` fixes the masses across the step (atomic laws).
    fn rk4(&self, c: f64, y: [f64; 4], h: f64, co: [Coef; 3], frozen: Option<Masses>) -> [f64; 4] {
        let m = |s: &[f64; 4]| frozen.unwrap_or_else(|| self.masses(c, s));
        let add = |a: &[f64; 4], k: &[f64; 4], s: f64| [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2], a[3] + s * k[3]];
        let k1 = self.rhs(&co[0], &y, &m(&y));
        let y2 = add(&y, &k1, 0.5 * h);
        let k2 = self.rhs(&co[1], &y2, &m(&y2));
        let y3 = add(&y, &k2, 0.5 * h);
        let k3 = self.rhs(&co[1], &y3, &m(&y3));
        let y4 = add(&y, &k3, h);
        let k4 = self.rhs(&co[2], &y4, &m(&y4));
        let mut out = y;
        for j in 0..4 {
            out[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if self.mode != VariantMode::TradingConstraint {
            out[1] = 0.0;
        }
        out
    }

    fn partial_step(&self, c: f64, y: [f64; 4], t: f64, h: f64, frozen: Masses) -> [f64; 4] {
        let co = [self.coef_at(t), self.coef_at(t + 0.5 * h), self.coef_at(t + h)];
        self.rk4(c, y, h, co, Some(frozen))
    }

    /// Largest atom crossed downward by `from -> to`: an atom `v` with `to <= v < from`.
    fn crossed(atoms: &[(f64, f64)], from: f64, to: f64) -> Option<f64> {
        atoms.iter().rev().map(|a| a.0).find(|&v| to <= v && v < from)
    }

    /// Advances one cell for an atomic law, stopping at every atom crossing
    /// and restarting with updated masses.
    fn atomic_cell(&self, c: f64, mut y: [f64; 4], k: usize, events: &mut usize) -> [f64; 4] {
        let ts = self.bundle.grid().nodes();
        let mut t = ts[k + 1];
        let end = ts[k];
        let mut first = true;
        loop {
            let frozen = self.masses(c, &y);
            let h = end - t;
            let trial = if first {
                self.rk4(c, y, h, [self.nodes[k + 1], self.mids[k], self.nodes[k]], Some(frozen))
            } else {
                self.partial_step(c, y, t, h, frozen)
            };
            first = false;
            if self.masses(c, &trial) == frozen || *events > 100_000 {
                return trial;
            }
            // Seller argument c - Φ and buyer argument -ψ both decrease backward.
            let mut best = 1.0f64;
            let seller = Self::crossed(self.dist.seller_atoms(), c - y[2], c - trial[2]);
            if let Some(v) = seller {
                let f = bisect_predicate(0.0, 1.0, |f| c - self.partial_step(c, y, t, f * h, frozen)[2] <= v, 60);
                best = best.min(f);
            }
            if self.mode == VariantMode::TradingConstraint {
                if let Some(v) = Self::crossed(self.dist.buyer_atoms(), -y[1], -trial[1]) {
                    let f = bisect_predicate(0.0, 1.0, |f| -self.partial_step(c, y, t, f * h, frozen)[1] <= v, 60);
                    best = best.min(f);
                }
            }
            *events += 1;
            if best >= 1.0 {
                return trial;
            }
            y = self.partial_step(c, y, t, best * h, frozen);
            t += best * h;
            if (end - t).abs() <= 1e-15 * (1.0 + end.abs()) {
                return y;
            }
        }
    }

    /// Backward march from `(θ, 0, 0, 0)` at `T`.
    pub fn march(&self, theta: f64, c: f64) -> BackwardState {
        let n = self.nodes.len();
        let ts = self.bundle.grid().nodes();
        let mut out = BackwardState {
            mu: vec![0.0; n],
            psi: vec![0.0; n],
            big_phi: vec![0.0; n],
            big_m: vec![0.0; n],
            events: 0,
        };
        let mut y = [theta, 0.0, 0.0, 0.0];
        out.mu[n - 1] = theta;
        let atomic = self.dist.is_atomic() && self.mode != VariantMode::Unconstrained;
        for k in (0..n - 1).rev() {
            y = if atomic {
                self.atomic_cell(c, y, k, &mut out.events)
            } else {
                self.rk4(c, y, ts[k] - ts[k + 1], [self.nodes[k + 1], self.mids[k], self.nodes[k]], None)
            };
            out.mu[k] = y[0];
            out.psi[k] = y[1];
            out.big_phi[k] = y[2];
            out.big_m[k] = y[3];
        }
        out
    }

    /// Terminal-condition residual `ρ₁`.
    pub fn rho1(&self, theta: f64, c: f64, state: &BackwardState) -> f64 {
        let d = self.dist;
        let base = self.eta_end() / self.bundle.alpha_tilde_end() * theta - d.mean();
        match self.mode {
            VariantMode::Unconstrained => base + state.big_phi[0],
            VariantMode::DropOut => base + d.big_q(c) + c * d.buyer_total(),
            VariantMode::TradingConstraint => base + d.big_q(c) - self.buyer_terminal_integral(theta, &state.psi),
        }
    }

    /// `∫₀ᵀ e^{∫(A-δκ)/η} (A-δκ)/η P(-ψ)`; the weight is `u₀(1-δκu)e^{L}/(ηu²)`
    /// and the integrand tends to `-p(0)κθ/(2α̃_T)` at the horizon.
    fn buyer_terminal_integral(&self, theta: f64, psi: &[f64]) -> f64 {
        let b = self.bundle;
        let d = self.dist;
        if d.buyer_total() == 0.0 {
            return 0.0;
        }
        let n = psi.len();
        let k = b.delta() * b.kappa();
        let mut f: Vec<f64> = (0..n - 1)
            .map(|i| {
                let u = b.u[i];
                let w = b.u0() * (1.0 - k * u) * b.risk_log[i].exp() / (b.eta[i] * u * u);
                w * d.big_p(-psi[i])
            })
            .collect();
        f.push(-d.buyer_total() * b.kappa() * theta / (2.0 * b.alpha_tilde_end()));
        b.grid().quad().total(&f)
    }

    /// Exit-mass residual `ρ₂ = c - φ_μ(T)`.
    pub fn rho2(&self, c: f64, state: &BackwardState) -> f64 {
        c - state.big_phi[0]
    }

    /// `θ(c)`: root of `ρ₁(·, c)` on `[0, θ_max]`.
    pub fn theta_of_c(&self, c: f64, tol: f64) -> Result<(f64, BackwardState)> {
        let ftol = tol * self.mean().max(1.0);
        let hi = self.theta_max();
        let f = |th: f64| -> Result<f64> { Ok(self.rho1(th, c, &self.march(th, c))) };
        let f0 = f(0.0)?;
        let f1 = f(hi)?;
        // Endpoint roots can miss the sign test by rounding.
        if f1.abs() <= ftol && f0 < 0.0 {
            return Ok((hi, self.march(hi, c)));
        }
        if !(f0 <= 0.0 && f1 >= 0.0) {
            return Err(Error::NumericalFailure(format!(
                "terminal residual does not change sign in theta at c = {c}: rho1(0) = {f0:e}, rho1(max) = {f1:e}"
            )));
        }
        let theta = illinois(f, 0.0, hi, f0, f1, 1e-16 * hi, ftol, MAX_INNER)?;
        Ok((theta, self.march(theta, c)))
    }

    fn outer(&self, c: f64, tol: f64) -> Result<f64> {
        let (theta, state) = self.theta_of_c(c, tol)?;
        let _ = theta;
        Ok(self.rho2(c, &state))
    }

    /// Exclusive upper end of the exit-mass search interval.
    pub fn c_max(&self) -> Result<f64> {
        let d = self.dist;
        let e = d.mean();
        match self.mode {
            VariantMode::DropOut => {
                let g = |c: f64| d.big_q(c) + c * d.buyer_total() - e;
                let mut hi = 1.0;
                while g(hi) < 0.0 {
                    hi *= 2.0;
                    if hi > 1e12 {
                        return Err(Error::NumericalFailure("no upper bound for the exit mass".into()));
                    }
                }
                Ok(bisect_predicate(0.0, hi, |c| g(c) >= 0.0, 200))
            }
            _ => {
                let c = d.qinv_of_mean()?;
                if c.is_finite() {
                    return Ok(c);
                }
                // No buyers: Q only reaches E[ν] asymptotically.
                let target = e * (1.0 - 1e-12);
                let mut hi = 1.0;
                while d.big_q(hi) < target {
                    hi *= 2.0;
                }
                Ok(bisect_predicate(0.0, hi, |c| d.big_q(c) >= target, 200))
            }
        }
    }

    /// Solves the root problem for a seller-dominated market.
    fn find_oriented(&self, tol: f64) -> Result<EquilibriumSolution> {
        let e = self.mean();
        let ftol = tol * e.max(1.0);
        let mut warnings = Vec::new();
        let (theta, c, scan, roots, unique) = if self.mode == VariantMode::Unconstrained {
            // μ is linear in θ here, so one unit solve fixes θ.
            let unit = self.march(1.0, 0.0);
            let theta = e / (self.eta_end() / self.bundle.alpha_tilde_end() + unit.big_phi[0]);
            let c = self.march(theta, 0.0).big_phi[0];
            (theta, c, Vec::new(), vec![c], true)
        } else {
            let cmax = self.c_max()?;
            let mut cs: Vec<f64> = (0..SCAN_POINTS).map(|i| cmax * i as f64 / SCAN_POINTS as f64).collect();
            cs.push(cmax * (1.0 - 1e-6));
            let vals: Vec<Result<f64>> = cs.par_iter().map(|&c| self.outer(c, tol)).collect();
            let mut scan = Vec::with_capacity(cs.len());
            for (c, v) in cs.iter().zip(vals) {
                scan.push((*c, v?));
            }
            let unique = scan.windows(2).all(|w| w[1].1 > w[0].1);
            let mut roots = Vec::new();
            for w in scan.windows(2) {
                let ((a, fa), (b, fb)) = (w[0], w[1]);
                if fa == 0.0 {
                    roots.push(a);
                } else if fa.signum() != fb.signum() && fb != 0.0 {
                    roots.push(illinois(|c| self.outer(c, tol), a, b, fa, fb, 1e-15 * cmax.max(1.0), ftol, MAX_OUTER)?);
                }
            }
            if roots.is_empty() {
                return Err(Error::NoBracket { scan });
            }
            if roots.len() > 1 {
                warnings.push(format!("{} exit-mass roots found: {:?}; returning the smallest", roots.len(), roots));
            }
            let c = roots[0];
            let (theta, _) = self.theta_of_c(c, tol)?;
            (theta, c, scan, roots, unique)
        };
        let state = self.march(theta, c);
        let kernels = build_kernels(&state.mu, self.bundle, self.params)?;
        let mass = self.bundle.grid().quad().total(&state.mu);
        let residuals = Residuals {
            rho1: self.rho1(theta, c, &state),
            rho2: self.rho2(c, &state),
            mass_error: mass - e,
            ..Default::default()
        };
        if !unique {
            warnings.push("outer map not monotone on the scan; uniqueness not certified".into());
        }
        Ok(EquilibriumSolution {
            mode: self.mode,
            t: self.bundle.grid().nodes().to_vec(),
            mu: state.mu.clone(),
            theta,
            c,
            orientation: 1.0,
            kernels,
            state,
            residuals,
            scan,
            roots,
            unique_certificate: unique,
            trivial: false,
            warnings,
        })
    }

    /// Backward march with an a-posteriori check against the integrated equation.
    pub fn solve_backward(&self, theta: f64, c: f64) -> Result<BackwardState> {
        let state = self.march(theta, c);
        let res = self.integral_residual(theta, c, &state.mu);
        if !(res < 1e-3) {
            return Err(Error::NumericalFailure(format!("integral-equation residual {res:e}")));
        }
        Ok(state)
    }

    /// Relative sup distance between `ημ` and one application of the integral operator.
    pub fn integral_residual(&self, theta: f64, c: f64, mu: &[f64]) -> f64 {
        let vartheta: Vec<f64> = mu.iter().zip(&self.bundle.eta).map(|(m, e)| m * e).collect();
        let next = self.picard_map(theta, c, &vartheta);
        let scale = 1.0 + vartheta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        vartheta.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    }

    /// `θη_T + G + H_c + J` applied to `ϑ = ημ`, in the integrated form that
    /// needs only `Q` and `P` (chord slopes per cell), never `q'` or `p'`.
    fn picard_map(&self, theta: f64, c: f64, vartheta: &[f64]) -> Vec<f64> {
        let b = self.bundle;
        let d = self.dist;
        let q = b.grid().quad();
        let n = vartheta.len();
        let kappa = b.kappa();
        let delta = b.delta();
        let mu: Vec<f64> = vartheta.iter().zip(&b.eta).map(|(v, e)| v / e).collect();
        let flow: Vec<f64> = mu.iter().map(|m| kappa * m).collect();
        let big_m = q.cumulative_from_end(&mu);
        let hk: Vec<f64> = flow.iter().zip(&b.h).map(|(f, h)| f * h).collect();
        let big_phi = q.cumulative_from_end(&hk);
        let risk_m: Vec<f64> = big_m.iter().zip(&b.lambda).map(|(m, l)| m * l).collect();
        let g = q.cumulative_from_end(&risk_m);
        let flow_cells = q.cell_integrals(&flow);

        let chord = |fun: &dyn Fn(f64) -> f64, slope: &dyn Fn(f64) -> f64, a: f64, z: f64| {
            if (a - z).abs() > 1e-12 * (1.0 + a.abs()) {
                (fun(a) - fun(z)) / (a - z)
            } else {
                slope(0.5 * (a + z))
            }
        };

        let mut rest = vec![0.0; n];
        match self.mode {
            VariantMode::Unconstrained => {
                let tail = q.cumulative_from_end(&flow);
                for i in 0..n {
                    rest[i] = (1.0 - delta) * tail[i];
                }
            }
            VariantMode::DropOut | VariantMode::TradingConstraint => {
                let psi = if self.mode == VariantMode::TradingConstraint {
                    crate::kernels::compute_psi(&mu, b, b.horizon())
                } else {
                    vec![0.0; n]
                };
                let buyer_flow: Vec<f64> = flow.iter().zip(&psi).zip(&b.lambda).map(|((f, p), l)| f - l * p).collect();
                let buyer_cells = q.cell_integrals(&buyer_flow);
                let risk_p: Vec<f64> = psi.iter().zip(&b.lambda).map(|(p, l)| l * d.big_p(-p)).collect();
                let risk_p_tail = q.cumulative_from_end(&risk_p);
                let mut acc = 0.0;
                for j in (0..n - 1).rev() {
                    let qbar = chord(&|x| d.big_q(x), &|x| d.q(x), c - big_phi[j], c - big_phi[j + 1]);
                    let pbar = if self.mode == VariantMode::TradingConstraint {
                        chord(&|x| d.big_p(x), &|x| d.p(x), -psi[j], -psi[j + 1])
                    } else {
                        d.buyer_total()
                    };
                    acc += qbar * flow_cells[j] + pbar * buyer_cells[j] - delta * flow_cells[j];
                    rest[j] = acc - risk_p_tail[j];
                }
            }
        }
        let base = theta * b.eta.last().unwrap();
        (0..n).map(|i| base + g[i] + rest[i]).collect()
    }

    /// Picard iteration on `ϑ = ημ`; returns `μ` and the sup-change history.
    pub fn solve_backward_picard(&self, theta: f64, c: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let eta_end = *self.bundle.eta.last().unwrap();
        let mut v = vec![theta * eta_end; self.nodes.len()];
        let mut history = Vec::new();
        for _ in 0..PICARD_MAX_ITER {
            let next = self.picard_map(theta, c, &v);
            let change = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = 1.0 + next.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            history.push(change);
            v = next;
            if change <= PICARD_TOL * scale {
                let mu = v.iter().zip(&self.bundle.eta).map(|(a, e)| a / e).collect();
                return Ok((mu, history));
            }
        }
        Err(Error::NonConvergence { iterations: PICARD_MAX_ITER, last_change: *history.last().unwrap() })
    }

    /// Conservative Gronwall rate for `|μ_t| <= θ e^{K(T-t)}`.
    ///
    /// Bounds each coefficient of the linearized march by its sup:
    /// `K = (κ/η_min)(1+δ) + sup|η̇/η| + T sup(λ/η)(1 + 2κ/min α̃)`.
    pub fn gronwall_constant(&self) -> f64 {
        let b = self.bundle;
        let eta_min = b.eta.iter().cloned().fold(f64::INFINITY, f64::min);
        let rate = b.eta_dot.iter().zip(&b.eta).map(|(d, e)| (d / e).abs()).fold(0.0, f64::max);
        let risk = b.lambda.iter().zip(&b.eta).map(|(l, e)| l / e).fold(0.0, f64::max);
        let at_min = b.alpha_tilde.iter().cloned().fold(f64::INFINITY, f64::min);
        (b.kappa() / eta_min) * (1.0 + b.delta()) + rate + b.horizon() * risk * (1.0 + 2.0 * b.kappa() / at_min)
    }
}

/// Solves for the equilibrium, reflecting buyer-dominated markets and
/// returning `μ ≡ 0` for balanced ones.
pub fn find_equilibrium(
    bundle: &RiccatiBundle,
    params: &CostParams,
    dist: &PortfolioDistribution,
    mode: VariantMode,
    tol: f64,
) -> Result<EquilibriumSolution> {
    let e = dist.mean();
    if e == 0.0 {
        let n = bundle.grid().len();
        let zero = vec![0.0; n];
        let kernels = build_kernels(&zero, bundle, params)?;
        return Ok(EquilibriumSolution {
            mode,
            t: bundle.grid().nodes().to_vec(),
            mu: zero.clone(),
            theta: 0.0,
            c: 0.0,
            orientation: 1.0,
            kernels,
            state: BackwardState { mu: zero.clone(), psi: zero.clone(), big_phi: zero.clone(), big_m: zero, events: 0 },
            residuals: Residuals::default(),
            scan: Vec::new(),
            roots: Vec::new(),
            unique_certificate: true,
            trivial: true,
            warnings: vec!["E[nu] = 0: trivial equilibrium mu = 0 (sign-changing equilibria are not searched)".into()],
        });
    }
    if e < 0.0 {
        let reflected = dist.reflect();
        let mut sol = Solver::new(params, bundle, &reflected, mode).find_oriented(tol)?;
        sol.orientation = -1.0;
        for m in &mut sol.mu {
            *m = -*m;
        }
        sol.residuals.mass_error = -sol.residuals.mass_error;
        return Ok(sol);
    }
    Solver::new(params, bundle, dist, mode).find_oriented(tol)
}

/// Sup gap between the march and Picard rates at the solved `(θ, c)`,
/// relative to `θ`. Stores it in the solution.
pub fn cross_check_picard(
    sol: &mut EquilibriumSolution,
    bundle: &RiccatiBundle,
    params: &CostParams,
    dist: &PortfolioDistribution,
) -> Result<f64> {
    if sol.trivial {
        sol.residuals.picard_gap = Some(0.0);
        return Ok(0.0);
    }
    let reflected;
    let d = if sol.orientation < 0.0 {
        reflected = dist.reflect();
        &reflected
    } else {
        dist
    };
    let solver = Solver::new(params, bundle, d, sol.mode);
    let (mu, _) = solver.solve_backward_picard(sol.theta, sol.c)?;
    let gap = mu.iter().zip(&sol.state.mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / sol.theta;
    sol.residuals.picard_gap = Some(gap);
    Ok(gap)
}

/// `sup|F(μ*) - μ*|` for a population response computed elsewhere (see
/// [`crate::paths::aggregate_f`]). Stores it in the solution.
pub fn fixed_point_selfcheck<F>(sol: &mut EquilibriumSolution, aggregate: F) -> f64
where
    F: FnOnce(&EquilibriumSolution) -> Vec<f64>,
{
    let f = aggregate(sol);
    let err = f.iter().zip(&sol.mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    sol.residuals.fixed_point_sup_error = Some(err);
    err
}
