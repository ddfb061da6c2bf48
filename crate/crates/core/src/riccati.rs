//! The singular Riccati solution and the weight functions derived from it.
//!
//! The solution `A` of `-Ȧ = -A²/η + δκA/η + λ`, `A → ∞` at the horizon, is
//! carried through its reciprocal `u = 1/A`, which is smooth and vanishes
//! linearly at `T`. With `D = ∫₀ᵗ δκ/η` and `L = ∫₀ᵗ λu` one has
//! `∫₀ᵗ A/η = ln(u₀/u) + D + L`, so every exponential weight is an algebraic
//! expression in `(u, D, L)` and no singular quadrature is needed.

use crate::error::{Error, Result};
use crate::model::{CostParams, TimeGrid};
use crate::numerics::{lagrange4, ln_sinh};

/// Everything known about the Riccati solution at one time.
#[derive(Debug, Clone, Copy)]
pub struct RiccatiPoint {
    pub t: f64,
    /// `A`, infinite at the horizon.
    pub a: f64,
    /// `1/A`.
    pub u: f64,
    /// `exp(-∫₀ᵗ A/η)`.
    pub e: f64,
    /// `exp(-∫₀ᵗ (A-δκ)/η)`.
    pub ebar: f64,
    pub alpha: f64,
    pub alpha_tilde: f64,
    pub h: f64,
    /// `∫₀ᵗ δκ/η`.
    pub tilt: f64,
    pub eta: f64,
    pub eta_dot: f64,
    pub lambda: f64,
}

/// Leading behaviour `A(t) ≈ η_T/(T-t) + offset` near the horizon.
#[derive(Debug, Clone, Copy)]
pub struct Asymptote {
    pub eta_end: f64,
    pub offset: f64,
}

impl Asymptote {
    pub fn eval(&self, time_to_go: f64) -> f64 {
        self.eta_end / time_to_go + self.offset
    }
}

#[derive(Debug, Clone)]
enum Form {
    Closed { eta: f64, lambda: f64, disc: f64, ln_sinh_end: f64 },
    Tabulated { big_m: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct RiccatiBundle {
    grid: TimeGrid,
    delta: f64,
    kappa: f64,
    horizon: f64,
    form: Form,
    pub u: Vec<f64>,
    pub a: Vec<f64>,
    pub tilt: Vec<f64>,
    /// `∫₀ᵗ λu`.
    pub risk_log: Vec<f64>,
    pub e: Vec<f64>,
    pub ebar: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
    pub h: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_dot: Vec<f64>,
    pub lambda: Vec<f64>,
    u0: f64,
    pub asymptote: Asymptote,
}

const SUBSTEPS: usize = 4;
const RESIDUAL_TOL: f64 = 1e-6;

/// Solves for `A` on the grid: closed form for constant coefficients,
/// backward RK4 in the reciprocal variable otherwise.
pub fn solve_a(params: &CostParams, grid: &TimeGrid) -> Result<RiccatiBundle> {
    let horizon = grid.horizon();
    if (horizon - params.horizon).abs() > 1e-12 * params.horizon {
        return Err(Error::GridMismatch(format!(
            "grid ends at {horizon}, parameters at {}",
            params.horizon
        )));
    }
    let k = params.delta * params.kappa;
    let ts = grid.nodes();
    let n = ts.len();
    let eta: Vec<f64> = ts.iter().map(|&t| params.eta(t)).collect();
    let eta_dot: Vec<f64> = ts.iter().map(|&t| params.eta_dot(t)).collect();
    let lambda: Vec<f64> = ts.iter().map(|&t| params.lambda(t)).collect();
    let asymptote = Asymptote { eta_end: eta[n - 1], offset: 0.5 * (k - eta_dot[n - 1]) };

    let (form, u, tilt, risk_log) = match (params.eta.as_constant(), params.lambda.as_constant()) {
        (Some(e), Some(l)) => {
            let disc = (0.25 * k * k + e * l).sqrt();
            let form = Form::Closed { eta: e, lambda: l, disc, ln_sinh_end: ln_sinh(disc * horizon / e) };
            let mut u = Vec::with_capacity(n);
            let mut tilt = Vec::with_capacity(n);
            let mut risk = Vec::with_capacity(n);
            for &t in ts {
                let (uu, d, ll, _) = closed_point(&form, k, horizon, t, None);
                u.push(uu);
                tilt.push(d);
                risk.push(ll);
            }
            let u0 = u[0];
            for (i, &t) in ts.iter().enumerate() {
                risk[i] = closed_point(&form, k, horizon, t, Some(u0)).2;
            }
            (form, u, tilt, risk)
        }
        _ => {
            let (u, tilt, risk, big_m) = integrate_backward(params, ts, k);
            (Form::Tabulated { big_m }, u, tilt, risk)
        }
    };

    let u0 = u[0];
    let mut b = RiccatiBundle {
        grid: grid.clone(),
        delta: params.delta,
        kappa: params.kappa,
        horizon,
        form,
        a: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        ebar: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        alpha_tilde: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        u,
        tilt,
        risk_log,
        eta,
        eta_dot,
        lambda,
        u0,
        asymptote,
    };
    for i in 0..n {
        let big_m = match &b.form {
            Form::Tabulated { big_m } => Some(big_m[i]),
            Form::Closed { .. } => None,
        };
        let p = b.derive(ts[i], b.u[i], b.tilt[i], b.risk_log[i], big_m, b.eta[i], b.eta_dot[i], b.lambda[i]);
        b.a.push(p.a);
        b.e.push(p.e);
        b.ebar.push(p.ebar);
        b.alpha.push(p.alpha);
        b.alpha_tilde.push(p.alpha_tilde);
        b.h.push(p.h);
    }
    if !(b.u.iter().take(n - 1).all(|&v| v > 0.0) && b.alpha_tilde_end() > 0.0) {
        return Err(Error::NumericalFailure("Riccati solution lost positivity".into()));
    }
    let res = b.max_residual();
    if !(res < RESIDUAL_TOL) {
        return Err(Error::NumericalFailure(format!("Riccati residual {res:e} exceeds {RESIDUAL_TOL:e}")));
    }
    Ok(b)
}

/// `(u, D, L, h)` in closed form; `L` needs `u₀` and is zero when `u0` is None.
fn closed_point(form: &Form, k: f64, horizon: f64, t: f64, u0: Option<f64>) -> (f64, f64, f64, f64) {
    let Form::Closed { eta, lambda, disc, ln_sinh_end } = *form else { unreachable!() };
    let tau = (horizon - t).max(0.0);
    let tilt = k * t / eta;
    if disc == 0.0 {
        return (tau / eta, tilt, 0.0, t / eta);
    }
    let y = disc * tau / eta;
    let em = (-2.0 * y).exp();
    let u = -(-2.0 * y).exp_m1() / ((0.5 * k + disc) + (disc - 0.5 * k) * em);
    let risk = match u0 {
        Some(u0) if lambda > 0.0 => {
            let ln_mix = y + (0.25 * k * -(-2.0 * y).exp_m1() + 0.5 * disc * (1.0 + em)).ln();
            -0.5 * k * t / eta + ln_sinh_end - u0.ln() - ln_mix
        }
        _ => 0.0,
    };
    let h = if t > 0.0 { (-0.5 * k * t / eta + ln_sinh(disc * t / eta)).exp() / disc } else { 0.0 };
    (u, tilt, risk, h)
}

/// Backward RK4 for `(u, D̃, L̃, M̃)` with zero terminal data; returns forward
/// tables `(u, D, L, M)` with `M = ∫₀ᵗ λ e^{D+2L}`.
fn integrate_backward(params: &CostParams, ts: &[f64], k: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = ts.len();
    let rhs = |t: f64, y: [f64; 4]| -> [f64; 4] {
        let eta = params.eta(t);
        let lam = params.lambda(t);
        [
            -1.0 / eta + k * y[0] / eta + lam * y[0] * y[0],
            -k / eta,
            -lam * y[0],
            -lam * (-y[1] - 2.0 * y[2]).exp(),
        ]
    };
    let mut states = vec![[0.0; 4]; n];
    let mut y = [0.0; 4];
    for i in (0..n - 1).rev() {
        let h = (ts[i] - ts[i + 1]) / SUBSTEPS as f64;
        let mut t = ts[i + 1];
        for _ in 0..SUBSTEPS {
            let k1 = rhs(t, y);
            let k2 = rhs(t + 0.5 * h, add(y, k1, 0.5 * h));
            let k3 = rhs(t + 0.5 * h, add(y, k2, 0.5 * h));
            let k4 = rhs(t + h, add(y, k3, h));
            for j in 0..4 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            t += h;
        }
        states[i] = y;
    }
    let s0 = states[0];
    let scale = (s0[1] + 2.0 * s0[2]).exp();
    let u = states.iter().map(|s| s[0]).collect();
    let d = states.iter().map(|s| s0[1] - s[1]).collect();
    let l = states.iter().map(|s| s0[2] - s[2]).collect();
    let m = states.iter().map(|s| scale * (s0[3] - s[3])).collect();
    (u, d, l, m)
}

fn add(y: [f64; 4], k: [f64; 4], h: f64) -> [f64; 4] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]]
}

impl RiccatiBundle {
    #[allow(clippy::too_many_arguments)]
    fn derive(&self, t: f64, u: f64, tilt: f64, risk: f64, big_m: Option<f64>, eta: f64, eta_dot: f64, lambda: f64) -> RiccatiPoint {
        let k = self.delta * self.kappa;
        let u0 = self.u0;
        let decay = (-tilt - risk).exp();
        let h = match big_m {
            Some(m) => u0 * risk.exp() - u * decay - u0 * u * decay * m,
            None => closed_point(&self.form, k, self.horizon, t, None).3,
        };
        RiccatiPoint {
            t,
            a: if u > 0.0 { 1.0 / u } else { f64::INFINITY },
            u,
            e: u / u0 * decay,
            ebar: u / u0 * (-risk).exp(),
            alpha: (1.0 - k * u) * decay / u0,
            alpha_tilde: (1.0 - k * u) * (-risk).exp() / u0,
            h,
            tilt,
            eta,
            eta_dot,
            lambda,
        }
    }

    /// Evaluates the bundle off the grid: exactly for constant coefficients,
    /// by cubic interpolation of the smooth tables otherwise.
    pub fn at(&self, t: f64) -> RiccatiPoint {
        let t = t.clamp(0.0, self.horizon);
        let k = self.delta * self.kappa;
        match &self.form {
            Form::Closed { eta, lambda, .. } => {
                let (u, d, l, _) = closed_point(&self.form, k, self.horizon, t, Some(self.u0));
                self.derive(t, u, d, l, None, *eta, 0.0, *lambda)
            }
            Form::Tabulated { big_m } => {
                let q = self.grid.quad();
                let ts = q.nodes();
                let kk = q.locate(t);
                let s = kk.saturating_sub(1).min(ts.len() - 4);
                let w = lagrange4(&[ts[s], ts[s + 1], ts[s + 2], ts[s + 3]], t);
                let ip = |f: &[f64]| w[0] * f[s] + w[1] * f[s + 1] + w[2] * f[s + 2] + w[3] * f[s + 3];
                let u = if t >= self.horizon { 0.0 } else { ip(&self.u).max(0.0) };
                // `t` is an exact coefficient input, so sample rather than interpolate.
                let eta = self.eta_at(t);
                self.derive(t, u, ip(&self.tilt), ip(&self.risk_log), Some(ip(big_m)), eta, self.eta_dot_at(t), self.lambda_at(t))
            }
        }
    }

    fn eta_at(&self, t: f64) -> f64 {
        self.grid.quad().interpolate(&self.eta, t)
    }

    fn eta_dot_at(&self, t: f64) -> f64 {
        self.grid.quad().interpolate(&self.eta_dot, t)
    }

    fn lambda_at(&self, t: f64) -> f64 {
        self.grid.quad().interpolate(&self.lambda, t)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.form, Form::Closed { .. })
    }

    /// `α` on the grid.
    pub fn compute_alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `h` on the grid.
    pub fn compute_h(&self) -> &[f64] {
        &self.h
    }

    /// The finite limit of `α̃` at the horizon, `e^{-L_T}/u₀`.
    pub fn alpha_tilde_end(&self) -> f64 {
        *self.alpha_tilde.last().unwrap()
    }

    pub fn compute_alpha_tilde_t(&self) -> f64 {
        self.alpha_tilde_end()
    }

    pub fn h_end(&self) -> f64 {
        *self.h.last().unwrap()
    }

    pub fn u0(&self) -> f64 {
        self.u0
    }

    /// Relative residual of the Riccati equation at `t < T`, with `Ȧ` from a
    /// fourth-order centered difference of [`at`](Self::at).
    pub fn ode_residual(&self, t: f64) -> f64 {
        let tau = self.horizon - t;
        let step = 1e-3 * tau;
        let a = |s: f64| self.at(s).a;
        let deriv = if t >= 2.0 * step {
            (a(t - 2.0 * step) - 8.0 * a(t - step) + 8.0 * a(t + step) - a(t + 2.0 * step)) / (12.0 * step)
        } else {
            (-25.0 * a(t) + 48.0 * a(t + step) - 36.0 * a(t + 2.0 * step) + 16.0 * a(t + 3.0 * step)
                - 3.0 * a(t + 4.0 * step))
                / (12.0 * step)
        };
        let p = self.at(t);
        let k = self.delta * self.kappa;
        let res = -deriv + p.a * p.a / p.eta - k * p.a / p.eta - p.lambda;
        res.abs() / (1.0 + p.a * p.a / p.eta)
    }

    /// Largest [`ode_residual`](Self::ode_residual) over interior nodes at
    /// least ten final spacings away from the horizon.
    pub fn max_residual(&self) -> f64 {
        let ts = self.grid.nodes();
        let n = ts.len();
        let window = 10.0 * (ts[n - 1] - ts[n - 2]);
        ts[1..n - 1]
            .iter()
            .filter(|&&t| t < self.horizon - window)
            .map(|&t| self.ode_residual(t))
            .fold(0.0, f64::max)
    }

    /// `e^{D_t} / ∫ₜᵀ e^{D}/η`, the lower bound for `A - δκ` obtained by
    /// dropping the risk term. Infinite at the horizon.
    pub fn lower_bound(&self) -> Vec<f64> {
        let w: Vec<f64> = self.tilt.iter().zip(&self.eta).map(|(d, e)| d.exp() / e).collect();
        let tail = self.grid.quad().cumulative_from_end(&w);
        tail.iter()
            .zip(&self.tilt)
            .map(|(s, d)| if *s > 0.0 { d.exp() / s } else { f64::INFINITY })
            .collect()
    }

    /// Rows `(t, A, α, α̃, h)` for a debug dump.
    pub fn table(&self) -> Vec<[f64; 5]> {
        let ts = self.grid.nodes();
        (0..ts.len()).map(|i| [ts[i], self.a[i], self.alpha[i], self.alpha_tilde[i], self.h[i]]).collect()
    }
}
