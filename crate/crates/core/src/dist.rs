//! Initial-position law and the tail functionals entering the equilibrium equation.
//!
//! Players starting at zero never trade under the direction constraint, so the
//! zero atom is left out of every buyer and seller functional. `p` and `q` are
//! therefore `ν((-∞, x] ∩ (-∞, 0))` and `ν([x, ∞) ∩ (0, ∞))`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DistKind {
    /// Sellers with density `seller_mass·seller_rate·e^{-seller_rate x}` on
    /// `(0, ∞)`, buyers mirrored on `(-∞, 0)`, any remaining mass at zero.
    ExpMixture { seller_mass: f64, seller_rate: f64, buyer_mass: f64, buyer_rate: f64 },
    /// Equally weighted positions.
    Empirical { positions: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioDistribution {
    kind: DistKind,
    mean: f64,
    abs_moment: f64,
    seller_mean: f64,
    seller_total: f64,
    buyer_total: f64,
    /// Distinct positive atoms ascending, with weights.
    seller_atoms: Vec<(f64, f64)>,
    /// Distinct negative atoms ascending, with weights.
    buyer_atoms: Vec<(f64, f64)>,
}

/// Representative position and its probability weight.
pub type Stratum = (f64, f64);

fn group_atoms(mut xs: Vec<f64>, w: f64) -> Vec<(f64, f64)> {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for x in xs {
        match out.last_mut() {
            Some((v, m)) if *v == x => *m += w,
            _ => out.push((x, w)),
        }
    }
    out
}

impl PortfolioDistribution {
    pub fn exp_mixture(seller_mass: f64, seller_rate: f64, buyer_mass: f64, buyer_rate: f64) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(seller_mass >= 0.0 && buyer_mass >= 0.0) {
            return bad("masses must be non-negative");
        }
        if seller_mass + buyer_mass > 1.0 + 1e-12 {
            return bad("seller_mass + buyer_mass must not exceed 1");
        }
        if (seller_mass > 0.0 && !(seller_rate > 0.0 && seller_rate.is_finite()))
            || (buyer_mass > 0.0 && !(buyer_rate > 0.0 && buyer_rate.is_finite()))
        {
            return bad("rates must be positive and finite");
        }
        let sm = if seller_mass > 0.0 { seller_mass / seller_rate } else { 0.0 };
        let bm = if buyer_mass > 0.0 { buyer_mass / buyer_rate } else { 0.0 };
        Ok(Self {
            kind: DistKind::ExpMixture { seller_mass, seller_rate, buyer_mass, buyer_rate },
            mean: sm - bm,
            abs_moment: sm + bm,
            seller_mean: sm,
            seller_total: seller_mass,
            buyer_total: buyer_mass,
            seller_atoms: Vec::new(),
            buyer_atoms: Vec::new(),
        })
    }

    pub fn empirical(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("empirical distribution needs positions".into()));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("positions must be finite".into()));
        }
        let n = positions.len() as f64;
        let w = 1.0 / n;
        let mean = positions.iter().sum::<f64>() / n;
        let abs_moment = positions.iter().map(|x| x.abs()).sum::<f64>() / n;
        let sellers = group_atoms(positions.iter().cloned().filter(|&x| x > 0.0).collect(), w);
        let buyers = group_atoms(positions.iter().cloned().filter(|&x| x < 0.0).collect(), w);
        Ok(Self {
            seller_mean: sellers.iter().map(|(x, m)| x * m).sum(),
            seller_total: sellers.iter().map(|a| a.1).sum(),
            buyer_total: buyers.iter().map(|a| a.1).sum(),
            kind: DistKind::Empirical { positions },
            mean,
            abs_moment,
            seller_atoms: sellers,
            buyer_atoms: buyers,
        })
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.kind, DistKind::Empirical { .. })
    }

    /// `E[ν]`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn abs_moment(&self) -> f64 {
        self.abs_moment
    }

    /// `E[ν|_{[0,∞)}]`, the limit of `Q`.
    pub fn seller_mean(&self) -> f64 {
        self.seller_mean
    }

    pub fn seller_total(&self) -> f64 {
        self.seller_total
    }

    pub fn buyer_total(&self) -> f64 {
        self.buyer_total
    }

    pub fn seller_atoms(&self) -> &[(f64, f64)] {
        &self.seller_atoms
    }

    pub fn buyer_atoms(&self) -> &[(f64, f64)] {
        &self.buyer_atoms
    }

    /// Buyer mass at or below `x`.
    pub fn p(&self, x: f64) -> f64 {
        match self.kind {
            DistKind::ExpMixture { buyer_mass, buyer_rate, .. } => {
                if buyer_mass == 0.0 {
                    0.0
                } else {
                    buyer_mass * (buyer_rate * x.min(0.0)).exp()
                }
            }
            DistKind::Empirical { .. } => self.buyer_atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum(),
        }
    }

    /// Buyer mass strictly below `x`. Differs from [`p`](Self::p) only at atoms.
    pub fn p_open(&self, x: f64) -> f64 {
        match self.kind {
            DistKind::ExpMixture { .. } => self.p(x),
            DistKind::Empirical { .. } => self.buyer_atoms.iter().filter(|a| a.0 < x).map(|a| a.1).sum(),
        }
    }

    /// Seller mass at or above `x`.
    pub fn q(&self, x: f64) -> f64 {
        match self.kind {
            DistKind::ExpMixture { seller_mass, seller_rate, .. } => {
                if seller_mass == 0.0 {
                    0.0
                } else {
                    seller_mass * (-seller_rate * x.max(0.0)).exp()
                }
            }
            DistKind::Empirical { .. } => self.seller_atoms.iter().filter(|a| a.0 >= x).map(|a| a.1).sum(),
        }
    }

    /// `Q(x) = ∫_0^x q`, continued linearly with slope `q(0)` for `x < 0`.
    pub fn big_q(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.seller_total * x;
        }
        match self.kind {
            DistKind::ExpMixture { seller_mass, seller_rate, .. } => {
                if seller_mass == 0.0 {
                    0.0
                } else {
                    -seller_mass * (-seller_rate * x).exp_m1() / seller_rate
                }
            }
            DistKind::Empirical { .. } => self.seller_atoms.iter().map(|(a, w)| w * a.min(x)).sum(),
        }
    }

    /// `P(x) = -∫_x^0 p`, continued linearly with slope `p(0)` for `x > 0`.
    pub fn big_p(&self, x: f64) -> f64 {
        if x >= 0.0 {
            return self.buyer_total * x;
        }
        match self.kind {
            DistKind::ExpMixture { buyer_mass, buyer_rate, .. } => {
                if buyer_mass == 0.0 {
                    0.0
                } else {
                    buyer_mass * (buyer_rate * x).exp_m1() / buyer_rate
                }
            }
            DistKind::Empirical { .. } => -self.buyer_atoms.iter().map(|(b, w)| w * b.abs().min(-x)).sum::<f64>(),
        }
    }

    /// `ℓ(x) = -∫_{[x,0)} y ν(dy)`, zero for `x >= 0`.
    pub fn ell(&self, x: f64) -> f64 {
        if x >= 0.0 {
            return 0.0;
        }
        match self.kind {
            DistKind::ExpMixture { buyer_mass, buyer_rate, .. } => {
                if buyer_mass == 0.0 {
                    0.0
                } else {
                    let e = (buyer_rate * x).exp();
                    buyer_mass * (x * e - (buyer_rate * x).exp_m1() / buyer_rate)
                }
            }
            DistKind::Empirical { .. } => self.buyer_atoms.iter().filter(|a| a.0 >= x).map(|(b, w)| -b * w).sum(),
        }
    }

    /// Smallest `c >= 0` with `Q(c) = y`; `+∞` when `y` is not below `lim Q`.
    pub fn q_inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= self.seller_mean {
            return f64::INFINITY;
        }
        match self.kind {
            DistKind::ExpMixture { seller_mass, seller_rate, .. } => {
                -(-y * seller_rate / seller_mass).ln_1p() / seller_rate
            }
            DistKind::Empirical { .. } => {
                let mut slope: f64 = self.seller_total;
                let (mut prev, mut q_prev) = (0.0, 0.0);
                for &(a, w) in &self.seller_atoms {
                    let q_here = q_prev + slope * (a - prev);
                    if y <= q_here {
                        return prev + (y - q_prev) / slope;
                    }
                    prev = a;
                    q_prev = q_here;
                    slope -= w;
                }
                f64::INFINITY
            }
        }
    }

    /// `Q⁻¹(E[ν])`, the exclusive upper end of the exit-mass search interval.
    ///
    /// Returns `+∞` when there are no buyers, since then `E[ν] = lim Q`.
    pub fn qinv_of_mean(&self) -> Result<f64> {
        if !(self.mean > 0.0) {
            return Err(Error::Domain(format!("Q^-1(E[nu]) needs E[nu] > 0, got {}", self.mean)));
        }
        if self.buyer_total == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.q_inverse(self.mean))
    }

    /// The law of `-x`.
    pub fn reflect(&self) -> Self {
        match &self.kind {
            DistKind::ExpMixture { seller_mass, seller_rate, buyer_mass, buyer_rate } => {
                Self::exp_mixture(*buyer_mass, *buyer_rate, *seller_mass, *seller_rate).unwrap()
            }
            DistKind::Empirical { positions } => {
                Self::empirical(positions.iter().map(|x| -x).collect()).unwrap()
            }
        }
    }

    /// Quantile function of the full law (zero atom included).
    pub fn quantile(&self, u: f64) -> f64 {
        match &self.kind {
            DistKind::ExpMixture { seller_mass, seller_rate, buyer_mass, buyer_rate } => {
                let zero = 1.0 - seller_mass - buyer_mass;
                if u < *buyer_mass {
                    (u / buyer_mass).ln() / buyer_rate
                } else if u < buyer_mass + zero {
                    0.0
                } else {
                    let v = ((u - buyer_mass - zero) / seller_mass).min(1.0);
                    -(-v).ln_1p() / seller_rate
                }
            }
            DistKind::Empirical { positions } => {
                let mut xs = positions.clone();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let i = ((u * xs.len() as f64).ceil() as usize).clamp(1, xs.len());
                xs[i - 1]
            }
        }
    }

    /// Positions at the mid-quantiles `(i - 1/2)/n`, a representative
    /// `n`-player population drawn from this law.
    pub fn mid_quantile_positions(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.quantile((i as f64 - 0.5) / n as f64)).collect()
    }

    /// Seller representatives, split at `split` so no stratum straddles it.
    ///
    /// Atomic laws return their atoms; analytic laws use `n` equal-mass strata
    /// placed at conditional means.
    pub fn seller_strata(&self, split: f64, n: usize) -> Vec<Stratum> {
        match self.kind {
            DistKind::ExpMixture { seller_mass, seller_rate, .. } => {
                exp_strata(seller_mass, seller_rate, split.max(0.0), n)
            }
            DistKind::Empirical { .. } => self.seller_atoms.clone(),
        }
    }

    /// Buyer representatives (negative positions), split at magnitude `split`.
    pub fn buyer_strata(&self, split: f64, n: usize) -> Vec<Stratum> {
        match self.kind {
            DistKind::ExpMixture { buyer_mass, buyer_rate, .. } => exp_strata(buyer_mass, buyer_rate, split.max(0.0), n)
                .into_iter()
                .map(|(y, w)| (-y, w))
                .collect(),
            DistKind::Empirical { .. } => self.buyer_atoms.clone(),
        }
    }
}

/// Equal-mass strata of `mass·rate·e^{-rate y}` on `(0, ∞)` split at `split`.
fn exp_strata(mass: f64, rate: f64, split: f64, n: usize) -> Vec<Stratum> {
    if mass == 0.0 || n == 0 {
        return Vec::new();
    }
    let tail = |y: f64| if y.is_finite() { (-rate * y).exp() } else { 0.0 };
    let inner_mass = mass * (1.0 - tail(split));
    let n_inner = if inner_mass > 0.0 {
        ((n as f64 * inner_mass / mass).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    } else {
        0
    };
    let n_outer = n.saturating_sub(n_inner).max(1);
    let mut out = Vec::with_capacity(n);
    let mut region = |lo: f64, hi: f64, k: usize| {
        let (tlo, thi) = (tail(lo), tail(hi));
        let step = (tlo - thi) / k as f64;
        let mut a = lo;
        for j in 1..=k {
            let b = if j == k { hi } else { -(tlo - j as f64 * step).ln() / rate };
            let (ta, tb) = (tail(a), tail(b));
            let m = mass * (ta - tb);
            let first = mass * ((a + 1.0 / rate) * ta - if b.is_finite() { (b + 1.0 / rate) * tb } else { 0.0 });
            if m > 0.0 {
                out.push((first / m, m));
            }
            a = b;
        }
    };
    if n_inner > 0 {
        region(0.0, split, n_inner);
    }
    region(split, f64::INFINITY, n_outer);
    out
}
