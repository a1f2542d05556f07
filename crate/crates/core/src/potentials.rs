//! Singular potentials `F = β̂ + π̂` and their Moreau–Yosida regularization.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{KernelConstants, KernelOps};

/// A user-supplied convex part `β̂` with derivatives.
pub trait ConvexPart: Send + Sync + fmt::Debug {
    fn beta_hat(&self, s: f64) -> f64;
    fn beta(&self, s: f64) -> f64;
    fn beta_prime(&self, s: f64) -> f64;
    /// Lower bound of `β′`.
    fn alpha(&self) -> f64;
    /// `β` is defined on `(-bound, bound)`; `f64::INFINITY` for all of ℝ.
    fn bound(&self) -> f64;
}

/// Convex part of the potential.
#[derive(Clone, Debug)]
pub enum Convex {
    /// `Θ/2 [(1+s)ln(1+s) + (1−s)ln(1−s)]`.
    Logarithmic { theta: f64 },
    /// `s²/2`, defined on all of ℝ.
    Linear,
    Custom(Arc<dyn ConvexPart>),
}

impl PartialEq for Convex {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Convex::Logarithmic { theta: a }, Convex::Logarithmic { theta: b }) => a == b,
            (Convex::Linear, Convex::Linear) => true,
            (Convex::Custom(a), Convex::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

fn xlnx(x: f64) -> f64 {
    if x < 1e-30 {
        0.0
    } else {
        x * x.ln()
    }
}

impl Convex {
    pub fn name(&self) -> &'static str {
        match self {
            Convex::Logarithmic { .. } => "logarithmic",
            Convex::Linear => "linear-toy",
            Convex::Custom(_) => "custom",
        }
    }

    pub fn beta_hat(&self, s: f64) -> f64 {
        match self {
            Convex::Logarithmic { theta } => {
                if s.abs() > 1.0 {
                    f64::INFINITY
                } else {
                    0.5 * theta * (xlnx(1.0 + s) + xlnx(1.0 - s))
                }
            }
            Convex::Linear => 0.5 * s * s,
            Convex::Custom(c) => c.beta_hat(s),
        }
    }

    pub fn beta(&self, s: f64) -> f64 {
        match self {
            Convex::Logarithmic { theta } => {
                if s >= 1.0 {
                    f64::INFINITY
                } else if s <= -1.0 {
                    f64::NEG_INFINITY
                } else {
                    theta * s.atanh()
                }
            }
            Convex::Linear => s,
            Convex::Custom(c) => c.beta(s),
        }
    }

    pub fn beta_prime(&self, s: f64) -> f64 {
        match self {
            Convex::Logarithmic { theta } => {
                if s.abs() >= 1.0 {
                    f64::INFINITY
                } else {
                    theta / ((1.0 - s) * (1.0 + s))
                }
            }
            Convex::Linear => 1.0,
            Convex::Custom(c) => c.beta_prime(s),
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Convex::Logarithmic { theta } => *theta,
            Convex::Linear => 1.0,
            Convex::Custom(c) => c.alpha(),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            Convex::Logarithmic { .. } => 1.0,
            Convex::Linear => f64::INFINITY,
            Convex::Custom(c) => c.bound(),
        }
    }

    /// Solves `a·r + c·β(r) = w` for `r` by bracketed Newton.
    ///
    /// If the root lies beyond the last double inside the domain, that double
    /// is returned: it is the correctly rounded root.
    pub fn solve_shifted(&self, a: f64, c: f64, w: f64) -> Result<f64> {
        if w == 0.0 {
            return Ok(0.0);
        }
        let g = |r: f64| a * r + c * self.beta(r) - w;
        let tol = 1e-12 * (1.0 + w.abs());
        let bound = self.bound();
        let cap = if bound.is_finite() {
            f64::from_bits(bound.to_bits() - 1)
        } else {
            f64::INFINITY
        };
        let sign = w.signum();
        // root lies in sign·(0, hi)
        let mut hi = if a > 0.0 { (w.abs() / a).min(cap) } else { cap };
        if !hi.is_finite() {
            hi = 1.0;
            while sign * g(sign * hi) < 0.0 {
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::RootNotConverged {
                        s: w,
                        lo: 0.0,
                        hi,
                        iterations: 0,
                    });
                }
            }
        } else if sign * g(sign * hi) <= 0.0 {
            return Ok(sign * hi);
        }
        let (mut lo, mut hi) = if sign > 0.0 { (0.0, hi) } else { (-hi, 0.0) };
        let guess_cap = if bound.is_finite() { bound - 1e-9 } else { f64::INFINITY };
        let mut r = if a > 0.0 { w / a } else { 0.5 * (lo + hi) };
        r = r.clamp(-guess_cap, guess_cap).clamp(lo, hi);
        for _ in 0..200 {
            let gr = g(r);
            if gr.abs() <= tol {
                // one polishing step keeps derived quantities accurate
                let d = a + c * self.beta_prime(r);
                let rn = r - gr / d;
                if rn > lo && rn < hi && g(rn).abs() < gr.abs() {
                    return Ok(rn);
                }
                return Ok(r);
            }
            if gr < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let d = a + c * self.beta_prime(r);
            let mut rn = r - gr / d;
            if !(rn > lo && rn < hi) || !rn.is_finite() {
                rn = 0.5 * (lo + hi);
            }
            if rn == lo || rn == hi || rn == r {
                // bracket has collapsed to adjacent doubles
                let (glo, ghi) = (g(lo).abs(), g(hi).abs());
                return Ok(if glo <= ghi { lo } else { hi });
            }
            r = rn;
        }
        Err(Error::RootNotConverged {
            s: w,
            lo,
            hi,
            iterations: 200,
        })
    }
}

/// Potential `β̂(s) + π̂(s)` with quadratic concave part `π̂(s) = −γ s²/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularSplit {
    pub convex: Convex,
    pub gamma: f64,
}

impl SingularSplit {
    pub fn logarithmic(theta: f64, theta0: f64) -> Self {
        Self {
            convex: Convex::Logarithmic { theta },
            gamma: theta0,
        }
    }

    pub fn linear_toy(gamma: f64) -> Self {
        Self {
            convex: Convex::Linear,
            gamma,
        }
    }

    pub fn custom(part: Arc<dyn ConvexPart>, gamma: f64) -> Self {
        Self {
            convex: Convex::Custom(part),
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Convex::Logarithmic { theta } = self.convex {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(Error::InvalidPotential(format!("theta must be positive, got {theta}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidPotential(format!(
                "perturbation constant must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn beta_hat(&self, s: f64) -> f64 {
        self.convex.beta_hat(s)
    }
    pub fn beta(&self, s: f64) -> f64 {
        self.convex.beta(s)
    }
    pub fn beta_prime(&self, s: f64) -> f64 {
        self.convex.beta_prime(s)
    }
    pub fn alpha(&self) -> f64 {
        self.convex.alpha()
    }
    pub fn pi_hat(&self, s: f64) -> f64 {
        -0.5 * self.gamma * s * s
    }
    pub fn pi(&self, s: f64) -> f64 {
        -self.gamma * s
    }
    pub fn pi_prime(&self, _s: f64) -> f64 {
        -self.gamma
    }
    /// `max_{[-1,1]} |π|`.
    pub fn pi_sup(&self) -> f64 {
        self.gamma
    }
}

/// Bulk and boundary potentials.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialPair {
    pub bulk: SingularSplit,
    pub surf: SingularSplit,
}

impl PotentialPair {
    pub fn same(split: SingularSplit) -> Self {
        Self {
            bulk: split.clone(),
            surf: split,
        }
    }
}

/// Admissibility bound on the regularization parameter.
pub fn eps_star(pot: &PotentialPair, c: &KernelConstants) -> f64 {
    let b = 1.0 / (2.0 * c.a_upper + 2.0 * pot.bulk.gamma + 1.0);
    let s = 1.0 / (2.0 * c.a_upper_surf + 2.0 * pot.surf.gamma + 1.0);
    b.min(s)
}

/// Regularized view of one potential. `eps = 0` means the exact `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct YosidaOps {
    pub split: SingularSplit,
    pub eps: f64,
    pub eps_star: f64,
}

impl YosidaOps {
    pub fn new(split: SingularSplit, eps: f64, eps_star: f64) -> Result<Self> {
        split.validate()?;
        if !(eps >= 0.0 && eps < eps_star) {
            return Err(Error::InvalidArgument(format!(
                "regularization eps = {eps} must lie in [0, {eps_star})"
            )));
        }
        Ok(Self {
            split,
            eps,
            eps_star,
        })
    }

    /// `J_ε(s) = (I + εβ)⁻¹(s)`.
    pub fn resolvent(&self, s: f64) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::InvalidArgument(format!("resolvent of non-finite {s}")));
        }
        if self.eps == 0.0 {
            return Ok(s);
        }
        self.split.convex.solve_shifted(1.0, self.eps, s)
    }

    /// `β_ε(s) = (s − J_ε(s))/ε`.
    pub fn yosida(&self, s: f64) -> Result<f64> {
        if self.eps == 0.0 {
            return Ok(self.split.beta(s));
        }
        let r = self.resolvent(s)?;
        Ok((s - r) / self.eps)
    }

    /// `β̂_ε(s) = |s − J_ε(s)|²/(2ε) + β̂(J_ε(s))`.
    pub fn moreau(&self, s: f64) -> Result<f64> {
        if self.eps == 0.0 {
            return Ok(self.split.beta_hat(s));
        }
        let r = self.resolvent(s)?;
        Ok((s - r).powi(2) / (2.0 * self.eps) + self.split.beta_hat(r))
    }

    /// `β_ε′(s) = 1 / (ε + 1/β′(J_ε(s)))`.
    pub fn yosida_derivative(&self, s: f64) -> Result<f64> {
        if self.eps == 0.0 {
            return Ok(self.split.beta_prime(s));
        }
        let r = self.resolvent(s)?;
        Ok(1.0 / (self.eps + 1.0 / self.split.beta_prime(r)))
    }

    /// Constant `C̃` in `β̂_ε(s) ≥ s²/(4ε*) − C̃`, by a 1D sweep then
    /// golden-section refinement of the maximizer.
    pub fn moreau_lower_constant(&self) -> Result<f64> {
        let f = |s: f64| -> Result<f64> { Ok(s * s / (4.0 * self.eps_star) - self.moreau(s)?) };
        let n = 4000;
        let span = 4.0;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=n {
            let s = -span + 2.0 * span * k as f64 / n as f64;
            let v = f(s)?;
            if v > best.0 {
                best = (v, s);
            }
        }
        let h = 2.0 * span / n as f64;
        let (mut a, mut b) = (best.1 - h, best.1 + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c)? > f(d)? {
                b = d;
            } else {
                a = c;
            }
        }
        Ok(best.0.max(f(0.5 * (a + b))?).max(0.0))
    }

    /// Constants `(δ₀, c₁)` with `β_ε(s)(s − s₀) ≥ δ₀|β_ε(s)| − c₁`.
    ///
    /// `δ₀ = (1 − |s₀|)/2`; `c₁` is the worst violation over a dense sweep
    /// of `s`, padded by a relative margin.
    pub fn coercivity_constants(&self, s0: f64) -> Result<(f64, f64)> {
        if s0.abs() >= 1.0 {
            return Err(Error::InvalidArgument(format!("s0 = {s0} must lie in (-1, 1)")));
        }
        let delta0 = 0.5 * (1.0 - s0.abs());
        let n = 20_000;
        let mut c1: f64 = 0.0;
        for k in 0..=n {
            let s = -3.0 + 6.0 * k as f64 / n as f64;
            let b = self.yosida(s)?;
            c1 = c1.max(delta0 * b.abs() - b * (s - s0));
        }
        Ok((delta0, c1 * 1.01 + 1e-12))
    }
}

/// Outcome of the runtime assumption checks.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    /// Positive kernel integrals `a_*`, `a_⊛`.
    pub a1: bool,
    pub a1_margin: (f64, f64),
    /// `β(0) = β̂(0) = 0`, `β′ ≥ α > 0` on samples, blow-up at `±1`.
    pub a2: bool,
    /// `γ < a_* + α/(1+α)` (bulk, surface): margins are the differences.
    pub a3: bool,
    pub a3_margin: (f64, f64),
    /// `γ < a_*` (bulk, surface).
    pub a6: bool,
    pub a6_margin: (f64, f64),
    /// `β = β_Γ`.
    pub a7: bool,
    /// Fitted growth exponent of `β(1−2δ)` in `|ln δ|` (bulk, surface).
    pub a8: bool,
    pub kappa: (f64, f64),
    /// `sup_δ (1/β′(1−2δ))/δ` over the sample (bulk, surface).
    pub a9: bool,
    pub a9_constant: (f64, f64),
    /// `β′` monotone near `±1`.
    pub a10: bool,
}

fn check_a2(p: &SingularSplit) -> bool {
    let c = &p.convex;
    let alpha = c.alpha();
    if !(alpha > 0.0) || c.beta(0.0) != 0.0 || c.beta_hat(0.0) != 0.0 {
        return false;
    }
    let b = c.bound().min(1.0);
    let n = 1000;
    let mut prev = f64::NEG_INFINITY;
    for k in 1..n {
        let s = b * (-1.0 + 2.0 * k as f64 / n as f64);
        let v = c.beta(s);
        if !(v > prev) || c.beta_prime(s) < alpha * (1.0 - 1e-12) {
            return false;
        }
        prev = v;
    }
    // blow-up probe: at the last double inside the domain |β| must exceed
    // ten times its value at half the bound
    if !b.is_finite() || c.bound() > 1.0 {
        return false;
    }
    let edge = f64::from_bits(1f64.to_bits() - 1);
    [1.0, -1.0]
        .iter()
        .all(|&sg| c.beta(sg * edge).abs() > 10.0 * c.beta(sg * 0.5).abs())
}

const DELTA_EXPONENTS: std::ops::RangeInclusive<i32> = 4..=20;

/// Least-squares exponent `κ` with `β(1−2δ) ~ |ln δ|^κ` (worse side).
fn fit_kappa(c: &Convex) -> f64 {
    let side = |sgn: f64| {
        let pts: Vec<(f64, f64)> = DELTA_EXPONENTS
            .map(|k| {
                let d = 2f64.powi(-k);
                let b = c.beta(sgn * (1.0 - 2.0 * d)).abs();
                ((d.ln().abs()).ln(), b.ln())
            })
            .collect();
        if pts.iter().any(|p| !p.1.is_finite()) {
            return f64::NAN;
        }
        ols_slope(&pts)
    };
    side(1.0).min(side(-1.0))
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `sup` over the `δ` sample of `(1/β′(±(1−2δ)))/δ`, and whether the ratio
/// stays bounded as `δ → 0`.
fn a9_ratio(c: &Convex) -> (f64, bool) {
    let ratios: Vec<f64> = DELTA_EXPONENTS
        .flat_map(|k| {
            let d = 2f64.powi(-k);
            [1.0, -1.0].map(|sg| 1.0 / c.beta_prime(sg * (1.0 - 2.0 * d)) / d)
        })
        .collect();
    let sup = ratios.iter().copied().fold(0.0, f64::max);
    let n = ratios.len();
    let tail = ratios[n - 2].max(ratios[n - 1]);
    let head = ratios[0].max(ratios[1]);
    (sup, sup.is_finite() && tail <= 1.5 * head)
}

fn a10_monotone(c: &Convex) -> bool {
    let delta1 = 0.1;
    let n = 400;
    let mut prev_hi = f64::NEG_INFINITY;
    let mut prev_lo = f64::NEG_INFINITY;
    for k in 0..n {
        let t = delta1 * (1.0 - k as f64 / n as f64);
        let hi = c.beta_prime(1.0 - t);
        let lo = c.beta_prime(-1.0 + t);
        if hi < prev_hi || lo < prev_lo {
            return false;
        }
        prev_hi = hi;
        prev_lo = lo;
    }
    true
}

pub fn check_assumptions(pot: &PotentialPair, ops: &KernelOps) -> AssumptionReport {
    let c = &ops.constants;
    let (b, s) = (&pot.bulk, &pot.surf);
    let a3_margin = (
        c.a_lower + b.alpha() / (1.0 + b.alpha()) - b.gamma,
        c.a_lower_surf + s.alpha() / (1.0 + s.alpha()) - s.gamma,
    );
    let a6_margin = (c.a_lower - b.gamma, c.a_lower_surf - s.gamma);
    let kappa = (fit_kappa(&b.convex), fit_kappa(&s.convex));
    let (r9b, ok9b) = a9_ratio(&b.convex);
    let (r9s, ok9s) = a9_ratio(&s.convex);
    AssumptionReport {
        a1: c.a_lower > 0.0 && c.a_lower_surf > 0.0,
        a1_margin: (c.a_lower, c.a_lower_surf),
        a2: check_a2(b) && check_a2(s),
        a3: b.gamma > 0.0 && s.gamma > 0.0 && a3_margin.0 > 0.0 && a3_margin.1 > 0.0,
        a3_margin,
        a6: b.gamma > 0.0 && s.gamma > 0.0 && a6_margin.0 > 0.0 && a6_margin.1 > 0.0,
        a6_margin,
        a7: b.convex == s.convex,
        a8: kappa.0 > 0.5 && kappa.1 > 0.5,
        kappa,
        a9: ok9b && ok9s,
        a9_constant: (r9b.max(1.0), r9s.max(1.0)),
        a10: a10_monotone(&b.convex) && a10_monotone(&s.convex),
    }
}
