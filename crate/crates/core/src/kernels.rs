//! Entry and exit kernels and the timing maps built on them.
//!
//! A buyer holding `x < 0` starts trading once `ψ(t)` falls to `-x`; a seller
//! holding `x > 0` stops once `φ(t)` reaches `x`.

use crate::error::{Error, Result};
use crate::model::{validate_params, CostParams, MonotoneCertificate};
use crate::numerics::{bisect_predicate, hermite};
use crate::riccati::RiccatiBundle;

#[derive(Debug, Clone)]
pub struct EntryExitKernels {
    pub t: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_dot: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_dot: Vec<f64>,
    pub psi_at_0: f64,
    pub phi_at_t: f64,
    pub monotone_certificate: MonotoneCertificate,
}

/// `ψ(t) = (1/α_t) ∫ₜ^τ E κ μ`, zero from `tau` on.
pub fn compute_psi(mu: &[f64], bundle: &RiccatiBundle, tau: f64) -> Vec<f64> {
    let q = bundle.grid().quad();
    let ts = q.nodes();
    let kappa = bundle.kappa();
    let f: Vec<f64> = mu.iter().zip(&bundle.e).map(|(m, e)| kappa * m * e).collect();
    let right = q.cumulative_from_end(&f);
    let horizon = bundle.horizon();
    let beyond = if tau >= horizon {
        0.0
    } else {
        let (k, part) = q.partial_cell(&f, tau);
        let cell = right[k] - right[k + 1];
        right[k + 1] + (cell - part)
    };
    ts.iter()
        .enumerate()
        .map(|(i, &t)| if t >= tau { 0.0 } else { ((right[i] - beyond) / bundle.alpha[i]).max(0.0) })
        .collect()
}

/// `ψ̇ = (λψ - κμ)/(A - δκ)`, written with `u = 1/A` so it is finite at `T`.
pub fn compute_psi_dot(mu: &[f64], psi: &[f64], bundle: &RiccatiBundle) -> Vec<f64> {
    let k = bundle.delta() * bundle.kappa();
    (0..mu.len())
        .map(|i| {
            let u = bundle.u[i];
            (bundle.lambda[i] * psi[i] - bundle.kappa() * mu[i]) * u / (1.0 - k * u)
        })
        .collect()
}

/// `φ(t) = ∫₀ᵗ κ μ h`.
pub fn compute_phi(mu: &[f64], bundle: &RiccatiBundle) -> Vec<f64> {
    let f: Vec<f64> = mu.iter().zip(&bundle.h).map(|(m, h)| bundle.kappa() * m * h).collect();
    bundle.grid().quad().cumulative(&f)
}

/// Builds both kernels and certifies that `ψ` strictly decreases when `μ > 0`.
pub fn build_kernels(mu: &[f64], bundle: &RiccatiBundle, params: &CostParams) -> Result<EntryExitKernels> {
    let certificate = validate_params(params)?.certificate;
    let psi = compute_psi(mu, bundle, bundle.horizon());
    let psi_dot = compute_psi_dot(mu, &psi, bundle);
    let phi = compute_phi(mu, bundle);
    let phi_dot: Vec<f64> = mu.iter().zip(&bundle.h).map(|(m, h)| bundle.kappa() * m * h).collect();
    let ts = bundle.grid().nodes().to_vec();
    if mu.iter().all(|&m| m > 0.0) {
        if let Some(k) = psi.windows(2).position(|w| !(w[1] < w[0])) {
            return Err(Error::MonotonicityViolation { t: ts[k] });
        }
    }
    Ok(EntryExitKernels {
        psi_at_0: psi[0],
        phi_at_t: *phi.last().unwrap(),
        t: ts,
        psi,
        psi_dot,
        phi,
        phi_dot,
        monotone_certificate: certificate,
    })
}

impl EntryExitKernels {
    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn psi_at(&self, s: f64) -> f64 {
        self.hermite_eval(&self.psi, &self.psi_dot, s)
    }

    pub fn phi_at(&self, s: f64) -> f64 {
        self.hermite_eval(&self.phi, &self.phi_dot, s)
    }

    fn cell(&self, s: f64) -> usize {
        self.t.partition_point(|&x| x <= s).saturating_sub(1).min(self.t.len() - 2)
    }

    fn hermite_eval(&self, f: &[f64], d: &[f64], s: f64) -> f64 {
        let k = self.cell(s);
        hermite(self.t[k], self.t[k + 1], f[k], f[k + 1], d[k], d[k + 1], s)
    }

    /// Entry time of a buyer at `x < 0`; zero when `-x >= ψ(0)`.
    pub fn entry_time(&self, x: f64) -> f64 {
        let target = -x;
        if target >= self.psi_at_0 {
            return 0.0;
        }
        if target <= 0.0 {
            return self.horizon();
        }
        // First node where ψ has dropped below the target.
        let j = self.psi.partition_point(|&p| p >= target).max(1);
        let (a, b) = (self.t[j - 1], self.t[j]);
        let (fa, fb, da, db) = (self.psi[j - 1], self.psi[j], self.psi_dot[j - 1], self.psi_dot[j]);
        bisect_predicate(a, b, |s| hermite(a, b, fa, fb, da, db, s) < target, 80)
    }

    /// Exit time of a seller at `x > 0`; `T` when `x >= φ(T)`. Flat stretches
    /// resolve to the left-most crossing.
    pub fn exit_time(&self, x: f64) -> f64 {
        if x >= self.phi_at_t {
            return self.horizon();
        }
        if x <= 0.0 {
            return 0.0;
        }
        let j = self.phi.partition_point(|&p| p < x).max(1);
        let (a, b) = (self.t[j - 1], self.t[j]);
        let (fa, fb, da, db) = (self.phi[j - 1], self.phi[j], self.phi_dot[j - 1], self.phi_dot[j]);
        bisect_predicate(a, b, |s| hermite(a, b, fa, fb, da, db, s) >= x, 80)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuDiagnostics {
    /// Whether μ keeps one sign (zeros allowed).
    pub sign_constant: bool,
    pub sign: f64,
    /// Whether `t ↦ η_t μ_t` is non-increasing in absolute value.
    pub eta_mu_monotone: bool,
}

pub fn check_mu_assumptions(mu: &[f64], ts: &[f64], params: &CostParams) -> MuDiagnostics {
    let pos = mu.iter().any(|&m| m > 0.0);
    let neg = mu.iter().any(|&m| m < 0.0);
    let sign = if pos { 1.0 } else if neg { -1.0 } else { 0.0 };
    let prod: Vec<f64> = mu.iter().zip(ts).map(|(m, &t)| sign * m * params.eta(t)).collect();
    let scale = prod.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    MuDiagnostics {
        sign_constant: !(pos && neg),
        sign,
        eta_mu_monotone: prod.windows(2).all(|w| w[1] <= w[0] + 1e-14 * scale),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_grid;
    use crate::riccati::solve_a;

    fn setup(lambda: f64) -> (CostParams, RiccatiBundle) {
        let p = CostParams::constant(1.0, 5.0, lambda, 10.0, 0.0);
        let b = solve_a(&p, &build_grid(1.0, 2001, 4.0).unwrap()).unwrap();
        (p, b)
    }

    #[test]
    fn zero_rate_gives_zero_kernels() {
        let (p, b) = setup(5.0);
        let mu = vec![0.0; b.u.len()];
        let k = build_kernels(&mu, &b, &p).unwrap();
        assert!(k.psi.iter().all(|&v| v == 0.0));
        assert!(k.phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psi_vanishes_at_tau_and_decreases() {
        let (p, b) = setup(5.0);
        let ts = b.grid().nodes().to_vec();
        let mu: Vec<f64> = ts.iter().map(|t| 1.0 + (1.0 - t)).collect();
        let k = build_kernels(&mu, &b, &p).unwrap();
        assert_eq!(*k.psi.last().unwrap(), 0.0);
        assert_eq!(k.phi[0], 0.0);
        let partial = compute_psi(&mu, &b, 0.6);
        let i = ts.partition_point(|&t| t < 0.6);
        assert!(partial[i..].iter().all(|&v| v == 0.0));
        assert!(partial[i - 1] > 0.0 && partial[i - 1] < 1e-2 * partial[0]);
    }

    #[test]
    fn constant_rate_zero_risk_psi_closed_form() {
        // λ = 0: α = η/T, E = (T-t)/T, so ψ = κ(T-t)²/(2η).
        let (p, b) = setup(0.0);
        let mu = vec![1.0; b.u.len()];
        let k = build_kernels(&mu, &b, &p).unwrap();
        for (t, v) in k.t.iter().zip(&k.psi) {
            assert!((v - (1.0 - t).powi(2)).abs() < 1e-12);
        }
        // φ = κ∫h = κt²/(2η).
        for (t, v) in k.t.iter().zip(&k.phi) {
            assert!((v - t * t).abs() < 1e-12);
        }
    }

    #[test]
    fn timing_maps_invert_kernels() {
        let (p, b) = setup(5.0);
        let mu: Vec<f64> = b.grid().nodes().iter().map(|t| 2.0 - t).collect();
        let k = build_kernels(&mu, &b, &p).unwrap();
        assert_eq!(k.entry_time(-k.psi_at_0 - 0.1), 0.0);
        assert_eq!(k.exit_time(k.phi_at_t + 0.1), 1.0);
        let mut last = 1.0;
        for i in 1..20 {
            let x = -k.psi_at_0 * i as f64 / 20.0;
            let s = k.entry_time(x);
            assert!((k.psi_at(s) + x).abs() < 1e-8 * (1.0 + x.abs()));
            assert!(s <= last);
            last = s;
        }
        let mut last = 0.0;
        for i in 1..20 {
            let x = k.phi_at_t * i as f64 / 20.0;
            let s = k.exit_time(x);
            assert!((k.phi_at(s) - x).abs() < 1e-8 * (1.0 + x));
            assert!(s >= last);
            last = s;
        }
        assert!(k.entry_time(-1e-12) > 0.99);
        assert!(k.exit_time(1e-12) < 0.01);
    }

    #[test]
    fn mu_assumption_checks() {
        let p = CostParams::constant(1.0, 5.0, 5.0, 10.0, 0.0);
        let ts: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let d = check_mu_assumptions(&vec![1.0; 101], &ts, &p);
        assert!(d.sign_constant && d.eta_mu_monotone);
        let lin: Vec<f64> = ts.iter().map(|t| 1.0 - t).collect();
        let d = check_mu_assumptions(&lin, &ts, &p);
        assert!(d.sign_constant && d.eta_mu_monotone);
        let wave: Vec<f64> = ts.iter().map(|t| (6.0 * t).sin()).collect();
        assert!(!check_mu_assumptions(&wave, &ts, &p).sign_constant);
    }
}
