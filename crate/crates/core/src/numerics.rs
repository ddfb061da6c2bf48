//! Grid quadrature, interpolation and scalar root finding shared by the solvers.
//!
//! Every cell of a (possibly non-uniform) grid carries a four-point cubic
//! Lagrange stencil. Cell integrals of the cubic are exact under two-point
//! Gauss, so cumulative integrals are fourth-order accurate on smooth data.

use crate::error::{Error, Result};

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Lagrange basis weights of the cubic through `xs` evaluated at `t`.
pub fn lagrange4(xs: &[f64; 4], t: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                w[i] *= (t - xs[j]) / (xs[i] - xs[j]);
            }
        }
    }
    w
}

/// Cubic quadrature and interpolation tied to a fixed node set.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    start: Vec<usize>,
    weights: Vec<[f64; 4]>,
}

impl Quadrature {
    /// Needs at least four strictly increasing nodes.
    pub fn new(nodes: &[f64]) -> Self {
        let n = nodes.len();
        assert!(n >= 4, "cubic stencils need at least four nodes");
        let mut start = Vec::with_capacity(n - 1);
        let mut weights = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            let s = k.saturating_sub(1).min(n - 4);
            let xs = [nodes[s], nodes[s + 1], nodes[s + 2], nodes[s + 3]];
            let (a, b) = (nodes[k], nodes[k + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut w = [0.0; 4];
            for g in GAUSS {
                let l = lagrange4(&xs, mid + half * g);
                for i in 0..4 {
                    w[i] += half * l[i];
                }
            }
            start.push(s);
            weights.push(w);
        }
        Self { nodes: nodes.to_vec(), start, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index `k` of the cell `[t_k, t_{k+1}]` containing `t` (clamped).
    pub fn locate(&self, t: f64) -> usize {
        let n = self.nodes.len();
        let k = self.nodes.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(n - 2)
    }

    fn stencil(&self, k: usize) -> [f64; 4] {
        let s = self.start[k];
        [self.nodes[s], self.nodes[s + 1], self.nodes[s + 2], self.nodes[s + 3]]
    }

    pub fn cell_integrals(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.nodes.len());
        self.weights
            .iter()
            .zip(&self.start)
            .map(|(w, &s)| w[0] * f[s] + w[1] * f[s + 1] + w[2] * f[s + 2] + w[3] * f[s + 3])
            .collect()
    }

    /// `out[k] = ∫_{t_0}^{t_k} f`.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        let cells = self.cell_integrals(f);
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut acc = 0.0;
        out.push(0.0);
        for c in cells {
            acc += c;
            out.push(acc);
        }
        out
    }

    /// `out[k] = ∫_{t_k}^{t_last} f`, summed from the right end.
    pub fn cumulative_from_end(&self, f: &[f64]) -> Vec<f64> {
        let cells = self.cell_integrals(f);
        let n = self.nodes.len();
        let mut out = vec![0.0; n];
        for k in (0..n - 1).rev() {
            out[k] = out[k + 1] + cells[k];
        }
        out
    }

    pub fn total(&self, f: &[f64]) -> f64 {
        self.cell_integrals(f).iter().sum()
    }

    /// Cubic interpolation of nodal data at `t`.
    pub fn interpolate(&self, f: &[f64], t: f64) -> f64 {
        let k = self.locate(t);
        let s = self.start[k];
        let l = lagrange4(&self.stencil(k), t);
        l[0] * f[s] + l[1] * f[s + 1] + l[2] * f[s + 2] + l[3] * f[s + 3]
    }

    /// `∫_{t_k}^{t} f` inside the cell containing `t`, with `k = locate(t)`.
    pub fn partial_cell(&self, f: &[f64], t: f64) -> (usize, f64) {
        let k = self.locate(t);
        let s = self.start[k];
        let xs = self.stencil(k);
        let a = self.nodes[k];
        let half = 0.5 * (t - a);
        let mid = 0.5 * (t + a);
        let mut acc = 0.0;
        for g in GAUSS {
            let l = lagrange4(&xs, mid + half * g);
            acc += half * (l[0] * f[s] + l[1] * f[s + 1] + l[2] * f[s + 2] + l[3] * f[s + 3]);
        }
        (k, acc)
    }

    /// `∫_{t_0}^{t} f` given the table from [`Quadrature::cumulative`].
    pub fn integral_to(&self, f: &[f64], cumulative: &[f64], t: f64) -> f64 {
        let (k, part) = self.partial_cell(f, t);
        cumulative[k] + part
    }
}

/// `ln(sinh(x))` for `x > 0` without overflow.
pub fn ln_sinh(x: f64) -> f64 {
    if x > 20.0 {
        x - std::f64::consts::LN_2 + (-(-2.0 * x).exp()).ln_1p()
    } else {
        x.sinh().ln()
    }
}

/// Cubic Hermite interpolant on `[a, b]` from values and slopes.
pub fn hermite(a: f64, b: f64, fa: f64, fb: f64, da: f64, db: f64, t: f64) -> f64 {
    let h = b - a;
    let s = (t - a) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * fa
        + (s3 - 2.0 * s2 + s) * h * da
        + (-2.0 * s3 + 3.0 * s2) * fb
        + (s3 - s2) * h * db
}

/// Illinois-modified regula falsi on a sign-changing bracket.
///
/// Stops when `|f| <= ftol` or the bracket is narrower than `xtol`.
pub fn illinois<F>(mut f: F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, xtol: f64, ftol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NumericalFailure(format!(
            "illinois: no sign change on [{a}, {b}] ({fa:e}, {fb:e})"
        )));
    }
    let mut side = 0i8;
    for it in 0..max_iter {
        // Every fourth step is a plain bisection to guarantee shrinkage.
        let x = if it % 4 == 3 { 0.5 * (a + b) } else { (a * fb - b * fa) / (fb - fa) };
        let x = if x <= a.min(b) || x >= a.max(b) { 0.5 * (a + b) } else { x };
        let fx = f(x)?;
        if fx.abs() <= ftol || (b - a).abs() <= xtol {
            return Ok(x);
        }
        if fx.signum() == fb.signum() {
            b = x;
            fb = fx;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = x;
            fa = fx;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, last_change: (b - a).abs() })
}

/// Plain bisection for a predicate that is false at `lo` and true at `hi`.
pub fn bisect_predicate<F: FnMut(f64) -> bool>(mut lo: f64, mut hi: f64, mut pred: F, iters: usize) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric(n: usize) -> Vec<f64> {
        let mut x: Vec<f64> = (0..n).map(|i| (i as f64 / (n - 1) as f64).powf(0.7)).collect();
        x[n - 1] = 1.0;
        x
    }

    #[test]
    fn cubic_is_integrated_exactly() {
        let nodes = geometric(9);
        let q = Quadrature::new(&nodes);
        let f: Vec<f64> = nodes.iter().map(|t| 1.0 - 2.0 * t + 3.0 * t * t * t).collect();
        let cum = q.cumulative(&f);
        for (k, t) in nodes.iter().enumerate() {
            let exact = t - t * t + 0.75 * t.powi(4);
            assert!((cum[k] - exact).abs() < 1e-14);
        }
        let back = q.cumulative_from_end(&f);
        assert!((back[0] - 0.75).abs() < 1e-14);
        assert!((q.interpolate(&f, 0.33) - (1.0 - 0.66 + 3.0 * 0.33f64.powi(3))).abs() < 1e-14);
        let part = q.integral_to(&f, &cum, 0.41);
        assert!((part - (0.41 - 0.41 * 0.41 + 0.75 * 0.41f64.powi(4))).abs() < 1e-14);
    }

    #[test]
    fn smooth_integral_converges_fourth_order() {
        let err = |n: usize| {
            let nodes: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let f: Vec<f64> = nodes.iter().map(|t| (3.0 * t).exp()).collect();
            (Quadrature::new(&nodes).total(&f) - ((3.0f64).exp() - 1.0) / 3.0).abs()
        };
        let ratio = err(41) / err(81);
        assert!(ratio > 12.0, "ratio {ratio}");
    }

    #[test]
    fn ln_sinh_matches_direct_evaluation() {
        for x in [1e-3, 0.5, 3.0, 19.0, 25.0] {
            assert!((ln_sinh(x) - x.sinh().ln()).abs() < 1e-12);
        }
        assert!((ln_sinh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn illinois_finds_root() {
        let r = illinois(|x| Ok(x * x * x - 2.0), 0.0, 2.0, -2.0, 6.0, 1e-15, 1e-14, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let f = |t: f64| t * t * t - t;
        let d = |t: f64| 3.0 * t * t - 1.0;
        let v = hermite(0.2, 0.9, f(0.2), f(0.9), d(0.2), d(0.9), 0.5);
        assert!((v - f(0.5)).abs() < 1e-14);
    }
}
