//! Time integration of the coupled bulk–surface system.
//!
//! Each step solves, for the new phase pair `(φ, ψ)`, chemical potentials
//! `(μ, θ)` and boundary flux `q = ∂_n μ`,
//!
//! ```text
//! φ − φⁿ = dt Δ_q μ                     ψ − ψⁿ = dt (Δ_Γ θ − q)
//! μ = a_Ω φ + β_ε(φ) − J∗φⁿ + π(φⁿ)      θ = a_Γ ψ + β_{Γ,ε}(ψ) − K⊛ψⁿ + π_Γ(ψⁿ)
//! L q = θ − μ|_Γ   (finite L, including L = 0),   q = 0   (L = ∞)
//! ```
//!
//! In the default convex-split scheme the constitutive relations are
//! inverted pointwise, so Newton runs on `(μ, θ, q)` alone with a banded
//! Jacobian. The fully-implicit scheme treats `−J∗φ + π(φ)` implicitly and
//! runs a dense Newton on `(φ, ψ, q)`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::chi;
use crate::error::{Error, Result};
use crate::geometry::{BulkField, FieldPair, Ring, StripGrid, SurfField};
use crate::kernels::KernelOps;
use crate::linalg::BandMatrix;
use crate::potentials::{check_assumptions, eps_star, PotentialPair, YosidaOps};

/// Kinetic-rate regime of the boundary coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LMode {
    Finite(f64),
    Zero,
    Infinite,
}

impl LMode {
    pub fn from_value(l: f64) -> Result<Self> {
        if l == 0.0 {
            Ok(LMode::Zero)
        } else if l == f64::INFINITY {
            Ok(LMode::Infinite)
        } else if l > 0.0 && l.is_finite() {
            Ok(LMode::Finite(l))
        } else {
            Err(Error::InvalidArgument(format!("L must lie in [0, ∞], got {l}")))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            LMode::Finite(l) => l,
            LMode::Zero => 0.0,
            LMode::Infinite => f64::INFINITY,
        }
    }

    pub fn chi(self) -> f64 {
        chi(self.value())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    #[default]
    ConvexSplit,
    FullyImplicit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub l_mode: LMode,
    /// Regularization parameter; 0 uses the exact `β`.
    pub eps: f64,
    pub dt: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub scheme: Scheme,
    /// Keep every `stride`-th state in the trajectory.
    pub snapshot_stride: usize,
}

impl SimConfig {
    pub fn new(l_mode: LMode, eps: f64, dt: f64, t_end: f64) -> Self {
        Self {
            l_mode,
            eps,
            dt,
            t_end,
            newton_tol: 1e-10,
            newton_max: 50,
            scheme: Scheme::ConvexSplit,
            snapshot_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::InvalidArgument(format!(
                "t_end = {} must be at least dt = {}",
                self.t_end, self.dt
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 || self.snapshot_stride == 0 {
            return Err(Error::InvalidArgument(
                "newton_tol, newton_max and snapshot_stride must be positive".into(),
            ));
        }
        LMode::from_value(self.l_mode.value())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    /// `(φ, ψ)`.
    pub phi: FieldPair,
    /// `(μ, θ)`.
    pub mu: FieldPair,
    /// `q = ∂_n μ` on each ring.
    pub flux: SurfField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub e_eps: f64,
    pub e_exact: Option<f64>,
    pub mass_total: f64,
    pub mass_bulk: f64,
    pub mass_surf: f64,
    pub diss_bulk: f64,
    pub diss_surf: f64,
    pub diss_robin: f64,
    pub newton_iters: usize,
    pub residual: f64,
}

impl LedgerRow {
    pub fn dissipation(&self) -> f64 {
        self.diss_bulk + self.diss_surf + self.diss_robin
    }
}

pub const LEDGER_HEADER: &str =
    "t,E_eps,E_exact,mass_total,mass_bulk,mass_surf,diss_bulk,diss_surf,diss_robin,newton_iters,residual";

pub fn ledger_csv(rows: &[LedgerRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(LEDGER_HEADER);
    s.push('\n');
    for r in rows {
        let exact = r.e_exact.map(|e| format!("{e:.16e}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.t,
            r.e_eps,
            exact,
            r.mass_total,
            r.mass_bulk,
            r.mass_surf,
            r.diss_bulk,
            r.diss_surf,
            r.diss_robin,
            r.newton_iters,
            r.residual
        );
    }
    s
}

/// One row per node: `x, y_or_ring, value`; bulk nodes first, then the
/// bottom and top rings.
pub fn snapshot_csv(grid: &StripGrid, v: &FieldPair) -> String {
    let mut s = String::from("x,y_or_ring,value\n");
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e}",
                grid.x(i),
                grid.y(j),
                v.bulk.values[grid.idx(i, j)]
            );
        }
    }
    for ring in Ring::BOTH {
        let label = match ring {
            Ring::Bottom => "bottom",
            Ring::Top => "top",
        };
        for (i, val) in v.surf.ring(ring).iter().enumerate() {
            let _ = writeln!(s, "{:.16e},{label},{val:.16e}", grid.x(i));
        }
    }
    s
}

/// Stored states of a run.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub phi: Vec<FieldPair>,
    pub mu: Vec<FieldPair>,
}

impl Trajectory {
    pub fn push(&mut self, s: &State) {
        self.times.push(s.t);
        self.phi.push(s.phi.clone());
        self.mu.push(s.mu.clone());
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub final_state: State,
    pub trajectory: Trajectory,
    pub ledger: Vec<LedgerRow>,
}

/// Initial-data families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialKind {
    Uniform { m: f64 },
    /// i.i.d. uniform values in `[m − amplitude, m + amplitude]`.
    Perturbed { m: f64, amplitude: f64, seed: u64 },
    /// `tanh((lx/4 − |x − position|)/width)`: a periodic band of the `+1`
    /// phase of half-width `lx/4` centred at `position`.
    TanhInterface { position: f64, width: f64 },
}

/// Builds `(φ₀, ψ₀)` with `ψ₀` the trace of `φ₀`.
pub fn make_initial(kind: InitialKind, grid: &StripGrid) -> Result<FieldPair> {
    let bulk = match kind {
        InitialKind::Uniform { m } => BulkField::constant(grid, m),
        InitialKind::Perturbed { m, amplitude, seed } => {
            if !(amplitude >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "amplitude must be nonnegative, got {amplitude}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals = (0..grid.n_bulk())
                .map(|_| if amplitude > 0.0 { m + amplitude * rng.gen_range(-1.0..=1.0) } else { m })
                .collect();
            BulkField::from_vec(grid.nx(), grid.ny(), vals)
        }
        InitialKind::TanhInterface { position, width } => {
            if !(width > 0.0) {
                return Err(Error::InvalidArgument(format!("width must be positive, got {width}")));
            }
            let lx = grid.lx();
            grid.bulk_from_fn(|x, _| {
                let d = (x - position).rem_euclid(lx);
                let d = d.min(lx - d);
                ((0.25 * lx - d) / width).tanh()
            })
        }
    };
    let m = grid.mean_bulk(&bulk);
    if !(m.abs() < 1.0) {
        return Err(Error::Assumption {
            assumption: "(A4)",
            detail: format!("initial mean {m} must lie in (-1, 1)"),
        });
    }
    if bulk.values.iter().any(|v| !(v.abs() < 1.0)) {
        return Err(Error::InvalidArgument(
            "initial values must lie strictly inside (-1, 1)".into(),
        ));
    }
    let surf = grid.trace(&bulk)?;
    Ok(FieldPair::new(bulk, surf))
}

/// Free energy `E_ε` of a phase pair (exact when `eps = 0`).
pub fn energy(ops: &KernelOps, yb: &YosidaOps, ys: &YosidaOps, phi: &FieldPair) -> Result<f64> {
    energy_with(ops, phi, |s| yb.moreau(s), |s| ys.moreau(s), &yb.split, &ys.split)
}

/// Free energy with the exact `β̂`, or `None` if the pair leaves the domain.
pub fn energy_exact(ops: &KernelOps, pot: &PotentialPair, phi: &FieldPair) -> Option<f64> {
    let e = energy_with(
        ops,
        phi,
        |s| Ok(pot.bulk.beta_hat(s)),
        |s| Ok(pot.surf.beta_hat(s)),
        &pot.bulk,
        &pot.surf,
    )
    .ok()?;
    e.is_finite().then_some(e)
}

fn energy_with(
    ops: &KernelOps,
    phi: &FieldPair,
    fb: impl Fn(f64) -> Result<f64>,
    fs: impl Fn(f64) -> Result<f64>,
    pb: &crate::potentials::SingularSplit,
    ps: &crate::potentials::SingularSplit,
) -> Result<f64> {
    let g = ops.grid();
    g.check_pair(phi)?;
    let jb = ops.conv_bulk(&phi.bulk)?;
    let ks = ops.conv_surf(&phi.surf)?;
    let mut eb = g.zeros_bulk();
    for i in 0..g.n_bulk() {
        let p = phi.bulk.values[i];
        eb.values[i] = 0.5 * ops.a_omega.values[i] * p * p - 0.5 * jb.values[i] * p
            + fb(p)?
            + pb.pi_hat(p);
    }
    let mut es = g.zeros_surf();
    for k in 0..g.n_surf() {
        let p = phi.surf.values[k];
        es.values[k] = 0.5 * ops.a_gamma.values[k] * p * p - 0.5 * ks.values[k] * p
            + fs(p)?
            + ps.pi_hat(p);
    }
    Ok(g.integrate_bulk(&eb) + g.integrate_surf(&es))
}

/// Pointwise inverse of `s ↦ a s + β_ε(s)`, returning `(s, ds/dw)`.
fn invert_constitutive(y: &YosidaOps, a: f64, w: f64) -> Result<(f64, f64)> {
    let conv = &y.split.convex;
    let eps = y.eps;
    let r = conv.solve_shifted(a, a * eps + 1.0, w)?;
    let bp = conv.beta_prime(r);
    if eps == 0.0 {
        return Ok((r, 1.0 / (a + bp)));
    }
    let s = r + eps * conv.beta(r);
    let beps = if bp.is_finite() { bp / (1.0 + eps * bp) } else { 1.0 / eps };
    Ok((s, 1.0 / (a + beps)))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct NewtonOutcome {
    phi: FieldPair,
    mu: FieldPair,
    flux: SurfField,
    iters: usize,
    residual: f64,
}

/// Validated model and configuration; performs steps and runs.
#[derive(Clone, Debug)]
pub struct Simulator {
    ops: Arc<KernelOps>,
    pot: PotentialPair,
    yb: YosidaOps,
    ys: YosidaOps,
    cfg: SimConfig,
}

impl Simulator {
    /// Refuses configurations that fail the kernel, convexity or
    /// perturbation-size assumptions, or whose `eps` is not admissible.
    pub fn new(ops: Arc<KernelOps>, pot: PotentialPair, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        pot.bulk.validate()?;
        pot.surf.validate()?;
        let rep = check_assumptions(&pot, &ops);
        if !rep.a1 {
            return Err(Error::Assumption {
                assumption: "(A1)",
                detail: format!("kernel integrals must be positive, got {:?}", rep.a1_margin),
            });
        }
        if !rep.a2 {
            return Err(Error::Assumption {
                assumption: "(A2)",
                detail: "convex part must vanish at 0, have β′ ≥ α > 0 and blow up at ±1".into(),
            });
        }
        if !rep.a3 {
            return Err(Error::Assumption {
                assumption: "(A3)",
                detail: format!(
                    "need 0 < γ < a_* + α/(1+α); margins (bulk, surface) = {:?}",
                    rep.a3_margin
                ),
            });
        }
        let es = eps_star(&pot, &ops.constants);
        let yb = YosidaOps::new(pot.bulk.clone(), cfg.eps, es)?;
        let ys = YosidaOps::new(pot.surf.clone(), cfg.eps, es)?;
        Ok(Self {
            ops,
            pot,
            yb,
            ys,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }
    pub fn ops(&self) -> &KernelOps {
        &self.ops
    }
    pub fn grid(&self) -> &StripGrid {
        self.ops.grid()
    }
    pub fn potentials(&self) -> &PotentialPair {
        &self.pot
    }
    pub fn yosida(&self) -> (&YosidaOps, &YosidaOps) {
        (&self.yb, &self.ys)
    }

    /// Chemical potentials of a phase pair with every term evaluated at it.
    pub fn chemical_potentials(&self, phi: &FieldPair) -> Result<FieldPair> {
        let ops = &self.ops;
        let jb = ops.conv_bulk(&phi.bulk)?;
        let ks = ops.conv_surf(&phi.surf)?;
        let mut mu = phi.clone();
        for i in 0..phi.bulk.values.len() {
            let p = phi.bulk.values[i];
            mu.bulk.values[i] = ops.a_omega.values[i] * p - jb.values[i]
                + self.yb.yosida(p)?
                + self.pot.bulk.pi(p);
        }
        for k in 0..phi.surf.values.len() {
            let p = phi.surf.values[k];
            mu.surf.values[k] = ops.a_gamma.values[k] * p - ks.values[k]
                + self.ys.yosida(p)?
                + self.pot.surf.pi(p);
        }
        if !mu.is_finite() {
            return Err(Error::NonFinite("chemical potential"));
        }
        Ok(mu)
    }

    /// Checks the initial-mean condition and builds a consistent state.
    pub fn initial_state(&self, phi0: &FieldPair) -> Result<State> {
        let g = self.grid();
        g.check_pair(phi0)?;
        if !phi0.is_finite() {
            return Err(Error::NonFinite("initial data"));
        }
        match self.cfg.l_mode {
            LMode::Infinite => {
                let (mb, ms) = (g.mean_bulk(&phi0.bulk), g.mean_surf(&phi0.surf));
                if !(mb.abs() < 1.0 && ms.abs() < 1.0) {
                    return Err(Error::Assumption {
                        assumption: "(A4)",
                        detail: format!("bulk mean {mb} and surface mean {ms} must lie in (-1, 1)"),
                    });
                }
            }
            _ => {
                let m = g.generalized_mean(phi0);
                if !(m.abs() < 1.0) {
                    return Err(Error::Assumption {
                        assumption: "(A4)",
                        detail: format!("generalized mean {m} must lie in (-1, 1)"),
                    });
                }
            }
        }
        let bound_b = self.pot.bulk.convex.bound();
        let bound_s = self.pot.surf.convex.bound();
        let strict = self.cfg.eps == 0.0;
        let inside = |v: f64, b: f64| if strict { v.abs() < b } else { v.abs() <= b };
        if !phi0.bulk.values.iter().all(|&v| inside(v, bound_b))
            || !phi0.surf.values.iter().all(|&v| inside(v, bound_s))
        {
            return Err(Error::Assumption {
                assumption: "(A4)",
                detail: "initial data must have finite convex energy".into(),
            });
        }
        let mu = self.chemical_potentials(phi0)?;
        let flux = match self.cfg.l_mode {
            LMode::Finite(l) => {
                let t = g.trace(&mu.bulk)?;
                mu.surf.zip_map(&t, |th, m| (th - m) / l)
            }
            _ => g.zeros_surf(),
        };
        Ok(State {
            t: 0.0,
            phi: phi0.clone(),
            mu,
            flux,
        })
    }

    /// Ledger entry for a state.
    pub fn ledger_row(&self, s: &State, newton_iters: usize, residual: f64) -> Result<LedgerRow> {
        let g = self.grid();
        let e_eps = energy(&self.ops, &self.yb, &self.ys, &s.phi)?;
        let e_exact = if self.cfg.eps == 0.0 {
            Some(e_eps)
        } else {
            energy_exact(&self.ops, &self.pot, &s.phi)
        };
        let tr = g.trace(&s.mu.bulk)?;
        let x = self.cfg.l_mode.chi();
        let diss_robin = if x > 0.0 {
            x * g.hx()
                * s.mu
                    .surf
                    .values
                    .iter()
                    .zip(&tr.values)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
        } else {
            0.0
        };
        let row = LedgerRow {
            t: s.t,
            e_eps,
            e_exact,
            mass_total: g.generalized_mean(&s.phi),
            mass_bulk: g.mean_bulk(&s.phi.bulk),
            mass_surf: g.mean_surf(&s.phi.surf),
            diss_bulk: g.dirichlet_bulk(&s.mu.bulk, &s.mu.bulk),
            diss_surf: g.dirichlet_surf(&s.mu.surf, &s.mu.surf),
            diss_robin,
            newton_iters,
            residual,
        };
        let finite = [
            row.e_eps,
            row.mass_total,
            row.diss_bulk,
            row.diss_surf,
            row.diss_robin,
            row.residual,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("ledger"));
        }
        Ok(row)
    }

    /// Advances by `cfg.dt`, halving on Newton failure up to ten times.
    /// Returns the new state and one ledger row per accepted substep.
    pub fn step(&self, s: &State) -> Result<(State, Vec<LedgerRow>)> {
        let mut rows = Vec::new();
        let out = self.step_adaptive(s, self.cfg.dt, 0, &mut rows)?;
        Ok((out, rows))
    }

    fn step_adaptive(&self, s: &State, dt: f64, depth: usize, rows: &mut Vec<LedgerRow>) -> Result<State> {
        match self.step_once(s, dt) {
            Ok((next, iters, res)) => {
                rows.push(self.ledger_row(&next, iters, res)?);
                Ok(next)
            }
            Err(
                e @ (Error::NewtonFailed { .. }
                | Error::RootNotConverged { .. }
                | Error::Singular(_)
                | Error::NonFinite(_)),
            ) => {
                if depth >= 10 {
                    return Err(match e {
                        Error::NewtonFailed { .. } => e,
                        _ => Error::NewtonFailed {
                            t: s.t,
                            dt,
                            residual: f64::NAN,
                            iterations: 0,
                        },
                    });
                }
                let half = 0.5 * dt;
                let mid = self.step_adaptive(s, half, depth + 1, rows)?;
                self.step_adaptive(&mid, half, depth + 1, rows)
            }
            Err(e) => Err(e),
        }
    }

    /// One step of size `dt` without fallback.
    pub fn step_once(&self, s: &State, dt: f64) -> Result<(State, usize, f64)> {
        let out = match self.cfg.scheme {
            Scheme::ConvexSplit => self.newton_split(s, dt)?,
            Scheme::FullyImplicit => self.newton_implicit(s, dt)?,
        };
        Ok((
            State {
                t: s.t + dt,
                phi: out.phi,
                mu: out.mu,
                flux: out.flux,
            },
            out.iters,
            out.residual,
        ))
    }

    /// Integrates from `s` until `cfg.t_end`.
    pub fn run(&self, s0: &State) -> Result<RunOutput> {
        let n_steps = ((self.cfg.t_end - s0.t) / self.cfg.dt).round().max(0.0) as usize;
        let mut traj = Trajectory::default();
        traj.push(s0);
        let mut ledger = Vec::with_capacity(n_steps + 1);
        if s0.t == 0.0 {
            ledger.push(self.ledger_row(s0, 0, 0.0)?);
        }
        let mut s = s0.clone();
        for n in 1..=n_steps {
            let (next, rows) = self.step(&s)?;
            ledger.extend(rows);
            s = next;
            if n % self.cfg.snapshot_stride == 0 || n == n_steps {
                traj.push(&s);
            }
        }
        Ok(RunOutput {
            final_state: s,
            trajectory: traj,
            ledger,
        })
    }

    // Convex-split Newton on (μ, θ, q).

    fn explicit_parts(&self, s: &State) -> Result<(Vec<f64>, Vec<f64>)> {
        let jb = self.ops.conv_bulk(&s.phi.bulk)?;
        let ks = self.ops.conv_surf(&s.phi.surf)?;
        let cb = jb
            .values
            .iter()
            .zip(&s.phi.bulk.values)
            .map(|(j, p)| -j + self.pot.bulk.pi(*p))
            .collect();
        let cs = ks
            .values
            .iter()
            .zip(&s.phi.surf.values)
            .map(|(k, p)| -k + self.pot.surf.pi(*p))
            .collect();
        Ok((cb, cs))
    }

    fn split_layout(&self) -> SplitLayout {
        let g = self.grid();
        SplitLayout {
            nx: g.nx(),
            nb: g.n_bulk(),
        }
    }

    /// Residual of the reduced system, plus `φ(μ)`, `ψ(θ)` and their slopes.
    #[allow(clippy::type_complexity, clippy::too_many_arguments)]
    fn split_residual(
        &self,
        s: &State,
        dt: f64,
        cb: &[f64],
        cs: &[f64],
        mu: &[f64],
        th: &[f64],
        q: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let g = self.grid();
        let lay = self.split_layout();
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let mut phi = vec![0.0; nb];
        let mut dphi = vec![0.0; nb];
        for i in 0..nb {
            let a = self.ops.a_omega.values[i];
            let (p, d) = invert_constitutive(&self.yb, a, mu[i] - cb[i])?;
            phi[i] = p;
            dphi[i] = d;
        }
        let mut psi = vec![0.0; ns];
        let mut dpsi = vec![0.0; ns];
        for k in 0..ns {
            let a = self.ops.a_gamma.values[k];
            let (p, d) = invert_constitutive(&self.ys, a, th[k] - cs[k])?;
            psi[k] = p;
            dpsi[k] = d;
        }
        let muf = BulkField::from_vec(g.nx(), g.ny(), mu.to_vec());
        let qf = SurfField::from_vec(g.nx(), q.to_vec());
        let thf = SurfField::from_vec(g.nx(), th.to_vec());
        let lap = g.laplacian(&muf, &qf)?;
        let lb = g.laplace_beltrami(&thf)?;
        let mut r = vec![0.0; nb + 2 * ns];
        for i in 0..nb {
            r[lay.mu(i)] = phi[i] - s.phi.bulk.values[i] - dt * lap.values[i];
        }
        for k in 0..ns {
            r[lay.theta(k)] = psi[k] - s.phi.surf.values[k] - dt * (lb.values[k] - q[k]);
            let mb = mu[g.surf_to_bulk(k)];
            r[lay.q(k)] = match self.cfg.l_mode {
                LMode::Finite(l) => l * q[k] - th[k] + mb,
                LMode::Zero => th[k] - mb,
                LMode::Infinite => q[k],
            };
        }
        Ok((r, phi, dphi, psi, dpsi))
    }

    fn split_jacobian(&self, dt: f64, dphi: &[f64], dpsi: &[f64]) -> BandMatrix {
        let g = self.grid();
        let lay = self.split_layout();
        let (nx, ny) = (g.nx(), g.ny());
        let (ix2, iy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
        let n = g.n_bulk() + 2 * g.n_surf();
        let mut m = BandMatrix::zeros(n, 2 * nx, 2 * nx);
        for j in 0..ny {
            for i in 0..nx {
                let c = g.idx(i, j);
                let row = lay.mu(c);
                m.add(row, row, dphi[c] + dt * 2.0 * ix2);
                m.add(row, lay.mu(g.idx((i + 1) % nx, j)), -dt * ix2);
                m.add(row, lay.mu(g.idx((i + nx - 1) % nx, j)), -dt * ix2);
                if j == 0 || j == ny - 1 {
                    let inner = if j == 0 { 1 } else { ny - 2 };
                    m.add(row, row, dt * 2.0 * iy2);
                    m.add(row, lay.mu(g.idx(i, inner)), -dt * 2.0 * iy2);
                    let k = if j == 0 { i } else { nx + i };
                    m.add(row, lay.q(k), -dt * 2.0 / g.hy());
                } else {
                    m.add(row, row, dt * 2.0 * iy2);
                    m.add(row, lay.mu(g.idx(i, j + 1)), -dt * iy2);
                    m.add(row, lay.mu(g.idx(i, j - 1)), -dt * iy2);
                }
            }
        }
        for ring in Ring::BOTH {
            let off = ring.offset(nx);
            for i in 0..nx {
                let k = off + i;
                let row = lay.theta(k);
                m.add(row, row, dpsi[k] + dt * 2.0 * ix2);
                m.add(row, lay.theta(off + (i + 1) % nx), -dt * ix2);
                m.add(row, lay.theta(off + (i + nx - 1) % nx), -dt * ix2);
                m.add(row, lay.q(k), dt);
                let qrow = lay.q(k);
                let mb = lay.mu(g.surf_to_bulk(k));
                match self.cfg.l_mode {
                    LMode::Finite(l) => {
                        m.add(qrow, qrow, l);
                        m.add(qrow, lay.theta(k), -1.0);
                        m.add(qrow, mb, 1.0);
                    }
                    LMode::Zero => {
                        m.add(qrow, lay.theta(k), 1.0);
                        m.add(qrow, mb, -1.0);
                    }
                    LMode::Infinite => m.add(qrow, qrow, 1.0),
                }
            }
        }
        m
    }

    fn newton_split(&self, s: &State, dt: f64) -> Result<NewtonOutcome> {
        let g = self.grid();
        let lay = self.split_layout();
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let (cb, cs) = self.explicit_parts(s)?;
        let mut x = vec![0.0; nb + 2 * ns];
        for i in 0..nb {
            x[lay.mu(i)] = s.mu.bulk.values[i];
        }
        for k in 0..ns {
            x[lay.theta(k)] = s.mu.surf.values[k];
            x[lay.q(k)] = if self.cfg.l_mode == LMode::Infinite { 0.0 } else { s.flux.values[k] };
        }
        let unpack = |x: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            (
                (0..nb).map(|i| x[lay.mu(i)]).collect(),
                (0..ns).map(|k| x[lay.theta(k)]).collect(),
                (0..ns).map(|k| x[lay.q(k)]).collect(),
            )
        };
        let eval = |x: &[f64]| {
            let (mu, th, q) = unpack(x);
            self.split_residual(s, dt, &cb, &cs, &mu, &th, &q)
        };
        let mut cur = eval(&x)?;
        let mut iters = 0;
        let mut polished = false;
        loop {
            let res = max_abs(&cur.0);
            if !res.is_finite() {
                return Err(Error::NonFinite("Newton residual"));
            }
            // one extra iteration past tolerance keeps mass drift at round-off
            let done = res <= self.cfg.newton_tol
                && (polished || res <= 1e-3 * self.cfg.newton_tol || iters >= self.cfg.newton_max);
            if res <= self.cfg.newton_tol {
                polished = true;
            }
            if done {
                let (mu, th, q) = unpack(&x);
                let (_, phi, _, psi, _) = cur;
                return Ok(NewtonOutcome {
                    phi: FieldPair::new(
                        BulkField::from_vec(g.nx(), g.ny(), phi),
                        SurfField::from_vec(g.nx(), psi),
                    ),
                    mu: FieldPair::new(
                        BulkField::from_vec(g.nx(), g.ny(), mu),
                        SurfField::from_vec(g.nx(), th),
                    ),
                    flux: SurfField::from_vec(g.nx(), q),
                    iters,
                    residual: res,
                });
            }
            if iters >= self.cfg.newton_max {
                return Err(Error::NewtonFailed {
                    t: s.t,
                    dt,
                    residual: res,
                    iterations: iters,
                });
            }
            iters += 1;
            let jac = self.split_jacobian(dt, &cur.2, &cur.4);
            let lu = jac.factor()?;
            let mut delta: Vec<f64> = cur.0.iter().map(|v| -v).collect();
            lu.solve_in_place(&mut delta);
            let n0 = norm2(&cur.0);
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                match eval(&trial) {
                    Ok(next) if norm2(&next.0) <= (1.0 - 1e-4 * alpha) * n0 || alpha < 1e-3 => {
                        x = trial;
                        cur = next;
                        break;
                    }
                    Ok(_) | Err(Error::RootNotConverged { .. }) if alpha >= 1e-3 => alpha *= 0.5,
                    Ok(next) => {
                        x = trial;
                        cur = next;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    // Fully-implicit dense Newton on (φ, ψ, q).

    fn implicit_residual(&self, s: &State, dt: f64, x: &[f64]) -> Result<(Vec<f64>, FieldPair, FieldPair, SurfField)> {
        let g = self.grid();
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let phi = FieldPair::new(
            BulkField::from_vec(g.nx(), g.ny(), x[..nb].to_vec()),
            SurfField::from_vec(g.nx(), x[nb..nb + ns].to_vec()),
        );
        let q = SurfField::from_vec(g.nx(), x[nb + ns..].to_vec());
        let mu = self.chemical_potentials(&phi)?;
        let lap = g.laplacian(&mu.bulk, &q)?;
        let lb = g.laplace_beltrami(&mu.surf)?;
        let mut r = vec![0.0; nb + 2 * ns];
        for i in 0..nb {
            r[i] = phi.bulk.values[i] - s.phi.bulk.values[i] - dt * lap.values[i];
        }
        for k in 0..ns {
            r[nb + k] = phi.surf.values[k] - s.phi.surf.values[k] - dt * (lb.values[k] - q.values[k]);
            let mb = mu.bulk.values[g.surf_to_bulk(k)];
            let th = mu.surf.values[k];
            r[nb + ns + k] = match self.cfg.l_mode {
                LMode::Finite(l) => l * q.values[k] - th + mb,
                LMode::Zero => th - mb,
                LMode::Infinite => q.values[k],
            };
        }
        Ok((r, phi, mu, q))
    }

    fn implicit_jacobian(&self, dt: f64, phi: &FieldPair) -> Result<DMatrix<f64>> {
        let g = self.grid();
        let ops = &self.ops;
        let (nx, ny) = (g.nx(), g.ny());
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let n = nb + 2 * ns;
        let w = g.bulk_weights();
        let hx = g.hx();
        // dμ/dφ and dθ/dψ (dense)
        let mut dmu = DMatrix::from_fn(nb, nb, |i, j| -ops.bulk_samples()[(i, j)] * w[j]);
        for i in 0..nb {
            let p = phi.bulk.values[i];
            dmu[(i, i)] += ops.a_omega.values[i] + self.yb.yosida_derivative(p)? + self.pot.bulk.pi_prime(p);
        }
        let mut dth = DMatrix::from_fn(ns, ns, |i, j| -ops.surf_samples()[(i, j)] * hx);
        for k in 0..ns {
            let p = phi.surf.values[k];
            dth[(k, k)] += ops.a_gamma.values[k] + self.ys.yosida_derivative(p)? + self.pot.surf.pi_prime(p);
        }
        let (ix2, iy2) = (1.0 / (hx * hx), 1.0 / (g.hy() * g.hy()));
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..ny {
            for i in 0..nx {
                let c = g.idx(i, j);
                let mut stencil: Vec<(usize, f64)> = vec![
                    (c, -2.0 * ix2),
                    (g.idx((i + 1) % nx, j), ix2),
                    (g.idx((i + nx - 1) % nx, j), ix2),
                ];
                if j == 0 || j == ny - 1 {
                    let inner = if j == 0 { 1 } else { ny - 2 };
                    stencil.push((c, -2.0 * iy2));
                    stencil.push((g.idx(i, inner), 2.0 * iy2));
                    let k = if j == 0 { i } else { nx + i };
                    jac[(c, nb + ns + k)] += -dt * 2.0 / g.hy();
                } else {
                    stencil.push((c, -2.0 * iy2));
                    stencil.push((g.idx(i, j + 1), iy2));
                    stencil.push((g.idx(i, j - 1), iy2));
                }
                jac[(c, c)] += 1.0;
                for (col, coef) in stencil {
                    for m in 0..nb {
                        jac[(c, m)] -= dt * coef * dmu[(col, m)];
                    }
                }
            }
        }
        for ring in Ring::BOTH {
            let off = ring.offset(nx);
            for i in 0..nx {
                let k = off + i;
                let row = nb + k;
                jac[(row, row)] += 1.0;
                let stencil = [
                    (k, -2.0 * ix2),
                    (off + (i + 1) % nx, ix2),
                    (off + (i + nx - 1) % nx, ix2),
                ];
                for (col, coef) in stencil {
                    for m in 0..ns {
                        jac[(row, nb + m)] -= dt * coef * dth[(col, m)];
                    }
                }
                jac[(row, nb + ns + k)] += dt;
                let qrow = nb + ns + k;
                let b = g.surf_to_bulk(k);
                match self.cfg.l_mode {
                    LMode::Finite(l) => {
                        jac[(qrow, qrow)] += l;
                        for m in 0..ns {
                            jac[(qrow, nb + m)] -= dth[(k, m)];
                        }
                        for m in 0..nb {
                            jac[(qrow, m)] += dmu[(b, m)];
                        }
                    }
                    LMode::Zero => {
                        for m in 0..ns {
                            jac[(qrow, nb + m)] += dth[(k, m)];
                        }
                        for m in 0..nb {
                            jac[(qrow, m)] -= dmu[(b, m)];
                        }
                    }
                    LMode::Infinite => jac[(qrow, qrow)] += 1.0,
                }
            }
        }
        Ok(jac)
    }

    fn newton_implicit(&self, s: &State, dt: f64) -> Result<NewtonOutcome> {
        let g = self.grid();
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let mut x: Vec<f64> = s
            .phi
            .bulk
            .values
            .iter()
            .chain(&s.phi.surf.values)
            .copied()
            .collect();
        if self.cfg.l_mode == LMode::Infinite {
            x.extend(std::iter::repeat_n(0.0, ns));
        } else {
            x.extend_from_slice(&s.flux.values);
        }
        let bb = self.pot.bulk.convex.bound();
        let bs = self.pot.surf.convex.bound();
        let exact = self.cfg.eps == 0.0;
        let admissible = |x: &[f64]| {
            !exact
                || (x[..nb].iter().all(|v| v.abs() < bb) && x[nb..nb + ns].iter().all(|v| v.abs() < bs))
        };
        let mut cur = self.implicit_residual(s, dt, &x)?;
        let mut iters = 0;
        let mut polished = false;
        loop {
            let res = max_abs(&cur.0);
            if !res.is_finite() {
                return Err(Error::NonFinite("Newton residual"));
            }
            // one extra iteration past tolerance keeps mass drift at round-off
            let done = res <= self.cfg.newton_tol
                && (polished || res <= 1e-3 * self.cfg.newton_tol || iters >= self.cfg.newton_max);
            if res <= self.cfg.newton_tol {
                polished = true;
            }
            if done {
                let (_, phi, mu, q) = cur;
                return Ok(NewtonOutcome {
                    phi,
                    mu,
                    flux: q,
                    iters,
                    residual: res,
                });
            }
            if iters >= self.cfg.newton_max {
                return Err(Error::NewtonFailed {
                    t: s.t,
                    dt,
                    residual: res,
                    iterations: iters,
                });
            }
            iters += 1;
            let jac = self.implicit_jacobian(dt, &cur.1)?;
            let rhs = DVector::from_iterator(n_of(nb, ns), cur.0.iter().map(|v| -v));
            let delta = jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("fully-implicit Jacobian".into()))?;
            let n0 = norm2(&cur.0);
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + alpha * d).collect();
                let ok = admissible(&trial);
                let next = if ok { self.implicit_residual(s, dt, &trial).ok() } else { None };
                match next {
                    Some(nx) if norm2(&nx.0) <= (1.0 - 1e-4 * alpha) * n0 || alpha < 1e-3 => {
                        x = trial;
                        cur = nx;
                        break;
                    }
                    _ if alpha >= 1e-3 => alpha *= 0.5,
                    Some(nx) => {
                        x = trial;
                        cur = nx;
                        break;
                    }
                    None => {
                        return Err(Error::NewtonFailed {
                            t: s.t,
                            dt,
                            residual: res,
                            iterations: iters,
                        })
                    }
                }
            }
        }
    }
}

fn n_of(nb: usize, ns: usize) -> usize {
    nb + 2 * ns
}

/// Unknown ordering of the convex-split Newton system: bottom ring
/// `(θ, q)` pairs, bulk `μ` row by row, top ring `(θ, q)` pairs.
#[derive(Clone, Copy)]
struct SplitLayout {
    nx: usize,
    nb: usize,
}

impl SplitLayout {
    #[inline]
    fn mu(&self, i: usize) -> usize {
        2 * self.nx + i
    }
    #[inline]
    fn theta(&self, k: usize) -> usize {
        if k < self.nx {
            2 * k
        } else {
            2 * self.nx + self.nb + 2 * (k - self.nx)
        }
    }
    #[inline]
    fn q(&self, k: usize) -> usize {
        self.theta(k) + 1
    }
}

/// Standalone integrator for the bulk equations with zero boundary flux.
///
/// Solves `φ − φⁿ = dt Δ₀ μ`, `μ = a_Ω φ + β_ε(φ) − J∗φⁿ + π(φⁿ)` with its
/// own Newton iteration in natural node ordering.
pub fn step_bulk_only(
    ops: &KernelOps,
    yb: &YosidaOps,
    phi: &BulkField,
    mu_guess: &BulkField,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(BulkField, BulkField)> {
    let g = ops.grid();
    let (nx, ny, nb) = (g.nx(), g.ny(), g.n_bulk());
    let jb = ops.conv_bulk(phi)?;
    let c: Vec<f64> = (0..nb).map(|i| -jb.values[i] + yb.split.pi(phi.values[i])).collect();
    let zero = g.zeros_surf();
    let eval = |mu: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut p = vec![0.0; nb];
        let mut d = vec![0.0; nb];
        for i in 0..nb {
            let (a, b) = invert_constitutive(yb, ops.a_omega.values[i], mu[i] - c[i])?;
            p[i] = a;
            d[i] = b;
        }
        let lap = g.laplacian(&BulkField::from_vec(nx, ny, mu.to_vec()), &zero)?;
        let r = (0..nb).map(|i| p[i] - phi.values[i] - dt * lap.values[i]).collect();
        Ok((r, p, d))
    };
    let mut mu = mu_guess.values.clone();
    let (ix2, iy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    for _ in 0..=max_iter {
        let (r, p, d) = eval(&mu)?;
        if max_abs(&r) <= tol {
            return Ok((
                BulkField::from_vec(nx, ny, p),
                BulkField::from_vec(nx, ny, mu),
            ));
        }
        let mut m = BandMatrix::zeros(nb, nx, nx);
        for j in 0..ny {
            for i in 0..nx {
                let row = g.idx(i, j);
                m.add(row, row, d[row] + dt * 2.0 * ix2 + dt * 2.0 * iy2);
                m.add(row, g.idx((i + 1) % nx, j), -dt * ix2);
                m.add(row, g.idx((i + nx - 1) % nx, j), -dt * ix2);
                if j == 0 {
                    m.add(row, g.idx(i, 1), -dt * 2.0 * iy2);
                } else if j == ny - 1 {
                    m.add(row, g.idx(i, ny - 2), -dt * 2.0 * iy2);
                } else {
                    m.add(row, g.idx(i, j + 1), -dt * iy2);
                    m.add(row, g.idx(i, j - 1), -dt * iy2);
                }
            }
        }
        let lu = m.factor()?;
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut delta);
        for (a, b) in mu.iter_mut().zip(&delta) {
            *a += b;
        }
    }
    Err(Error::NewtonFailed {
        t: f64::NAN,
        dt,
        residual: f64::NAN,
        iterations: max_iter,
    })
}

/// Standalone integrator for the surface equations with zero flux.
pub fn step_surface_only(
    ops: &KernelOps,
    ys: &YosidaOps,
    psi: &SurfField,
    theta_guess: &SurfField,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(SurfField, SurfField)> {
    let g = ops.grid();
    let (nx, ns) = (g.nx(), g.n_surf());
    let ks = ops.conv_surf(psi)?;
    let c: Vec<f64> = (0..ns).map(|k| -ks.values[k] + ys.split.pi(psi.values[k])).collect();
    let eval = |th: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut p = vec![0.0; ns];
        let mut d = vec![0.0; ns];
        for k in 0..ns {
            let (a, b) = invert_constitutive(ys, ops.a_gamma.values[k], th[k] - c[k])?;
            p[k] = a;
            d[k] = b;
        }
        let lb = g.laplace_beltrami(&SurfField::from_vec(nx, th.to_vec()))?;
        let r = (0..ns).map(|k| p[k] - psi.values[k] - dt * lb.values[k]).collect();
        Ok((r, p, d))
    };
    let mut th = theta_guess.values.clone();
    let ix2 = 1.0 / (g.hx() * g.hx());
    for _ in 0..=max_iter {
        let (r, p, d) = eval(&th)?;
        if max_abs(&r) <= tol {
            return Ok((SurfField::from_vec(nx, p), SurfField::from_vec(nx, th)));
        }
        let mut m = BandMatrix::zeros(ns, nx - 1, nx - 1);
        for ring in Ring::BOTH {
            let off = ring.offset(nx);
            for i in 0..nx {
                let k = off + i;
                m.add(k, k, d[k] + dt * 2.0 * ix2);
                m.add(k, off + (i + 1) % nx, -dt * ix2);
                m.add(k, off + (i + nx - 1) % nx, -dt * ix2);
            }
        }
        let lu = m.factor()?;
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut delta);
        for (a, b) in th.iter_mut().zip(&delta) {
            *a += b;
        }
    }
    Err(Error::NewtonFailed {
        t: f64::NAN,
        dt,
        residual: f64::NAN,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::potentials::SingularSplit;

    fn sim(nx: usize, ny: usize, l_mode: LMode, eps: f64, scheme: Scheme) -> Simulator {
        let g = StripGrid::unit(nx, ny).unwrap();
        let w = 3.0 * g.hx().max(g.hy());
        let ops = KernelOps::build(KernelSpec::gaussian(w, 1.5), KernelSpec::gaussian(w, 0.3), &g).unwrap();
        let pot = PotentialPair {
            bulk: SingularSplit::logarithmic(1.0, 0.9),
            surf: SingularSplit::logarithmic(1.0, 0.6),
        };
        let mut cfg = SimConfig::new(l_mode, eps, 1e-3, 1e-2);
        cfg.scheme = scheme;
        Simulator::new(Arc::new(ops), pot, cfg).unwrap()
    }

    fn perturbed(s: &Simulator, m: f64) -> State {
        let phi = make_initial(
            InitialKind::Perturbed {
                m,
                amplitude: 0.3,
                seed: 11,
            },
            s.grid(),
        )
        .unwrap();
        s.initial_state(&phi).unwrap()
    }

    const MODES: [LMode; 3] = [LMode::Finite(0.7), LMode::Zero, LMode::Infinite];

    #[test]
    fn split_jacobian_matches_finite_differences() {
        for mode in MODES {
            let s = sim(6, 5, mode, 0.01, Scheme::ConvexSplit);
            let st = perturbed(&s, 0.1);
            let g = s.grid();
            let lay = s.split_layout();
            let (nb, ns) = (g.n_bulk(), g.n_surf());
            let (cb, cs) = s.explicit_parts(&st).unwrap();
            let dt = 2e-3;
            let mut x = vec![0.0; nb + 2 * ns];
            for i in 0..nb {
                x[lay.mu(i)] = st.mu.bulk.values[i] + 0.01 * (i as f64).sin();
            }
            for k in 0..ns {
                x[lay.theta(k)] = st.mu.surf.values[k] + 0.02 * (k as f64).cos();
                x[lay.q(k)] = 0.1 * (k as f64 * 0.3).sin();
            }
            let eval = |x: &[f64]| {
                let mu: Vec<f64> = (0..nb).map(|i| x[lay.mu(i)]).collect();
                let th: Vec<f64> = (0..ns).map(|k| x[lay.theta(k)]).collect();
                let q: Vec<f64> = (0..ns).map(|k| x[lay.q(k)]).collect();
                s.split_residual(&st, dt, &cb, &cs, &mu, &th, &q).unwrap()
            };
            let base = eval(&x);
            let jac = s.split_jacobian(dt, &base.2, &base.4);
            let h = 1e-6;
            for c in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let (rp, rm) = (eval(&xp).0, eval(&xm).0);
                for r in 0..x.len() {
                    let fd = (rp[r] - rm[r]) / (2.0 * h);
                    assert!((fd - jac.get(r, c)).abs() < 1e-6 * (1.0 + fd.abs()), "{mode:?} ({r},{c}) fd {fd} vs {}", jac.get(r, c));
                }
            }
        }
    }

    #[test]
    fn implicit_jacobian_matches_finite_differences() {
        for mode in MODES {
            let s = sim(6, 5, mode, 0.01, Scheme::FullyImplicit);
            let st = perturbed(&s, 0.1);
            let g = s.grid();
            let (nb, ns) = (g.n_bulk(), g.n_surf());
            let dt = 2e-3;
            let mut x: Vec<f64> = st.phi.bulk.values.iter().chain(&st.phi.surf.values).copied().collect();
            x.extend((0..ns).map(|k| 0.1 * (k as f64).sin()));
            let base = s.implicit_residual(&st, dt, &x).unwrap();
            let jac = s.implicit_jacobian(dt, &base.1).unwrap();
            let h = 1e-6;
            for c in 0..nb + 2 * ns {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let rp = s.implicit_residual(&st, dt, &xp).unwrap().0;
                let rm = s.implicit_residual(&st, dt, &xm).unwrap().0;
                for r in 0..nb + 2 * ns {
                    let fd = (rp[r] - rm[r]) / (2.0 * h);
                    assert!((fd - jac[(r, c)]).abs() < 1e-5 * (1.0 + fd.abs()), "{mode:?} ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn mass_is_conserved_and_energy_decays() {
        for mode in MODES {
            for scheme in [Scheme::ConvexSplit, Scheme::FullyImplicit] {
                let s = sim(8, 5, mode, 0.01, scheme);
                let st = perturbed(&s, -0.2);
                let out = s.run(&st).unwrap();
                let first = &out.ledger[0];
                assert_eq!(out.ledger.len(), 11);
                for w in out.ledger.windows(2) {
                    let (a, b) = (&w[0], &w[1]);
                    assert!((b.mass_total - first.mass_total).abs() < 1e-11, "{mode:?} {scheme:?} {} {}", b.mass_total - first.mass_total, b.e_eps - a.e_eps + 1e-3 * b.dissipation());
                    if mode == LMode::Infinite {
                        assert!((b.mass_bulk - first.mass_bulk).abs() < 1e-11);
                        assert!((b.mass_surf - first.mass_surf).abs() < 1e-11);
                    }
                    if scheme == Scheme::ConvexSplit {
                        assert!(b.e_eps - a.e_eps + 1e-3 * b.dissipation() <= 1e-10, "{mode:?}");
                    }
                    assert!(b.residual <= 1e-10 && b.newton_iters >= 1);
                }
                assert!((out.final_state.t - 1e-2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_l_enforces_trace_equality() {
        let s = sim(8, 5, LMode::Zero, 0.01, Scheme::ConvexSplit);
        let st = perturbed(&s, 0.0);
        let (next, rows) = s.step(&st).unwrap();
        let tr = s.grid().trace(&next.mu.bulk).unwrap();
        for (a, b) in tr.values.iter().zip(&next.mu.surf.values) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(rows[0].diss_robin, 0.0);
    }

    #[test]
    fn exact_potential_run_stays_inside() {
        let s = sim(8, 5, LMode::Finite(1.0), 0.0, Scheme::ConvexSplit);
        let st = perturbed(&s, 0.3);
        let out = s.run(&st).unwrap();
        assert!(out.final_state.phi.max_abs() < 1.0);
        assert!(out.ledger.iter().all(|r| r.e_exact == Some(r.e_eps)));
    }

    #[test]
    fn newton_failure_halves_the_step() {
        let g = StripGrid::unit(8, 5).unwrap();
        let w = 3.0 * g.hx().max(g.hy());
        let ops = KernelOps::build(KernelSpec::gaussian(w, 1.5), KernelSpec::gaussian(w, 0.3), &g).unwrap();
        let pot = PotentialPair::same(SingularSplit::logarithmic(1.0, 0.5));
        let mut cfg = SimConfig::new(LMode::Finite(1.0), 0.01, 0.05, 0.05);
        cfg.newton_max = 2;
        let s = Simulator::new(Arc::new(ops), pot, cfg).unwrap();
        let st = perturbed(&s, 0.0);
        let (next, rows) = s.step(&st).unwrap();
        assert!(rows.len() > 1);
        assert!((next.t - 0.05).abs() < 1e-15);
        assert!(rows.windows(2).all(|w| w[1].t > w[0].t));

        cfg.newton_max = 1;
        cfg.newton_tol = 1e-300;
        let s = Simulator::new(s.ops.clone(), s.pot.clone(), cfg).unwrap();
        assert!(matches!(s.step(&st), Err(Error::NewtonFailed { .. })));
    }

    #[test]
    fn restart_is_bitwise_identical() {
        let s = sim(8, 5, LMode::Finite(0.5), 0.01, Scheme::ConvexSplit);
        let st = perturbed(&s, 0.1);
        let full = s.run(&st).unwrap();
        let mut half_cfg = *s.config();
        half_cfg.t_end = 5e-3;
        let h = Simulator::new(s.ops.clone(), s.pot.clone(), half_cfg).unwrap();
        let mid = h.run(&st).unwrap().final_state;
        let rest = s.run(&mid).unwrap();
        assert_eq!(rest.final_state, full.final_state);
        assert_eq!(rest.ledger[..], full.ledger[6..]);
    }

    #[test]
    fn refuses_bad_inputs() {
        let s = sim(8, 5, LMode::Finite(1.0), 0.01, Scheme::ConvexSplit);
        let g = s.grid();
        let bad = FieldPair::constant(g, 1.0);
        assert!(matches!(s.initial_state(&bad), Err(Error::Assumption { assumption: "(A4)", .. })));
        let ops = s.ops.clone();
        let strong = PotentialPair::same(SingularSplit::logarithmic(1.0, 50.0));
        let cfg = *s.config();
        assert!(matches!(
            Simulator::new(ops.clone(), strong, cfg),
            Err(Error::Assumption { assumption: "(A3)", .. })
        ));
        let big_eps = SimConfig { eps: 10.0, ..cfg };
        assert!(Simulator::new(ops, s.pot.clone(), big_eps).is_err());
        assert!(LMode::from_value(-1.0).is_err());
        assert!(SimConfig { dt: 0.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn initial_data_families() {
        let g = StripGrid::new(16, 9, 2.0, 1.0).unwrap();
        let p = make_initial(InitialKind::Perturbed { m: 0.2, amplitude: 0.1, seed: 3 }, &g).unwrap();
        assert!(p.bulk.values.iter().all(|v| (v - 0.2).abs() <= 0.1));
        let q = make_initial(InitialKind::Perturbed { m: 0.2, amplitude: 0.1, seed: 3 }, &g).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.surf, g.trace(&p.bulk).unwrap());
        let t = make_initial(InitialKind::TanhInterface { position: 1.0, width: 0.1 }, &g).unwrap();
        assert!(t.bulk.values[g.idx(8, 3)] > 0.99);
        assert!(t.bulk.values[g.idx(0, 3)] < -0.99);
        assert!(make_initial(InitialKind::Uniform { m: 1.0 }, &g).is_err());
        assert!(make_initial(InitialKind::Perturbed { m: 0.95, amplitude: 0.1, seed: 0 }, &g).is_err());
    }

    #[test]
    fn decoupled_solvers_match_the_full_step_at_infinite_l() {
        let s = sim(8, 5, LMode::Infinite, 0.01, Scheme::ConvexSplit);
        let st = perturbed(&s, 0.0);
        let (next, _) = s.step(&st).unwrap();
        let (yb, ys) = s.yosida();
        let (pb, _) = step_bulk_only(s.ops(), yb, &st.phi.bulk, &st.mu.bulk, 1e-3, 1e-10, 50).unwrap();
        let (ps, _) = step_surface_only(s.ops(), ys, &st.phi.surf, &st.mu.surf, 1e-3, 1e-10, 50).unwrap();
        for (a, b) in pb.values.iter().zip(&next.phi.bulk.values) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in ps.values.iter().zip(&next.phi.surf.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ledger_format() {
        let row = LedgerRow {
            t: 0.5,
            e_eps: -1.0,
            e_exact: None,
            mass_total: 0.0,
            mass_bulk: 0.0,
            mass_surf: 0.0,
            diss_bulk: 1.0,
            diss_surf: 2.0,
            diss_robin: 3.0,
            newton_iters: 4,
            residual: 1e-12,
        };
        let csv = ledger_csv(std::slice::from_ref(&row));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], LEDGER_HEADER);
        assert_eq!(lines[1].split(',').count(), 11);
        assert!(lines[1].starts_with("5.0000000000000000e-1,-1.0000000000000000e0,,"));
        assert_eq!(row.dissipation(), 6.0);
    }
}
