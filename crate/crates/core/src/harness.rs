//! Parameter sweeps and diagnostics: regularization and kinetic-rate
//! convergence studies, separation tracking and level-set decay.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::elliptic::EllipticSolvers;
use crate::error::{Error, Result};
use crate::geometry::{FieldPair, StripGrid};
use crate::kernels::KernelOps;
use crate::potentials::PotentialPair;
use crate::stepper::{LMode, SimConfig, Simulator, Trajectory};

/// Ordinary least-squares fit of `ln err = slope · ln x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square of the log residuals.
    pub residual: f64,
}

pub fn rate_fit(xs: &[f64], errs: &[f64]) -> Result<RateFit> {
    if xs.len() != errs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} abscissae but {} errors",
            xs.len(),
            errs.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", xs.len())));
    }
    if let Some(v) = xs.iter().chain(errs).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateFit(format!("data must be positive and finite, got {v}")));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 1e-24 * (1.0 + mx * mx)) {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyKind {
    /// Regularization parameter `ε → 0`; fitted against `ε`.
    Epsilon,
    /// Kinetic rate `L → 0`; fitted against `L`.
    KineticZero,
    /// Kinetic rate `L → ∞`; fitted against `1/L`.
    KineticInfinity,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Epsilon => "epsilon",
            StudyKind::KineticZero => "kinetic-zero",
            StudyKind::KineticInfinity => "kinetic-infinity",
        }
    }

    fn fit_variable(self) -> &'static str {
        match self {
            StudyKind::Epsilon => "eps",
            StudyKind::KineticZero => "L",
            StudyKind::KineticInfinity => "1/L",
        }
    }

    fn abscissa(self, p: f64) -> f64 {
        match self {
            StudyKind::KineticInfinity => 1.0 / p,
            _ => p,
        }
    }

    fn check_order(self, params: &[f64]) -> Result<()> {
        let ok = match self {
            StudyKind::KineticInfinity => params.windows(2).all(|w| w[1] > w[0]),
            _ => params.windows(2).all(|w| w[1] < w[0]),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{} parameters must be strictly {}",
                self.name(),
                if self == StudyKind::KineticInfinity { "increasing" } else { "decreasing" }
            )))
        }
    }
}

/// Run metadata echoed into study reports.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StudyMeta {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub snapshot_stride: usize,
    /// Reference parameter (`ε_ref`, `0` or `∞`).
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateStudy {
    pub kind: StudyKind,
    pub params: Vec<f64>,
    /// Maximum over snapshots of the dual-norm error.
    pub err_dual: Vec<f64>,
    /// Time-integrated `ℒ²` error.
    pub err_l2: Vec<f64>,
    /// Fit of the combined error `err_dual + err_l2`.
    pub fit: RateFit,
    pub fit_dual: RateFit,
    pub fit_l2: RateFit,
    pub meta: StudyMeta,
}

impl RateStudy {
    pub fn from_errors(
        kind: StudyKind,
        params: Vec<f64>,
        err_dual: Vec<f64>,
        err_l2: Vec<f64>,
        meta: StudyMeta,
    ) -> Result<Self> {
        if params.len() != err_dual.len() || params.len() != err_l2.len() {
            return Err(Error::InvalidArgument("parameter and error lengths differ".into()));
        }
        let xs: Vec<f64> = params.iter().map(|p| kind.abscissa(*p)).collect();
        let combined = Self::sum(&err_dual, &err_l2);
        Ok(Self {
            kind,
            fit: rate_fit(&xs, &combined)?,
            fit_dual: rate_fit(&xs, &err_dual)?,
            fit_l2: rate_fit(&xs, &err_l2)?,
            params,
            err_dual,
            err_l2,
            meta,
        })
    }

    fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn combined(&self) -> Vec<f64> {
        Self::sum(&self.err_dual, &self.err_l2)
    }

    /// Whether the combined error is non-increasing along the sweep, up to a
    /// relative `allowance` per step.
    pub fn is_monotone(&self, allowance: f64) -> bool {
        self.combined().windows(2).all(|w| w[1] <= w[0] * (1.0 + allowance))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,err_dual,err_l2\n");
        for i in 0..self.params.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e}",
                self.params[i], self.err_dual[i], self.err_l2[i]
            );
        }
        let m = &self.meta;
        let _ = writeln!(s, "# study = {}", self.kind.name());
        let _ = writeln!(s, "# fit_variable = {}", self.kind.fit_variable());
        let _ = writeln!(s, "# slope = {:.16e}", self.fit.slope);
        let _ = writeln!(s, "# intercept = {:.16e}", self.fit.intercept);
        let _ = writeln!(s, "# residual = {:.16e}", self.fit.residual);
        let _ = writeln!(s, "# slope_dual = {:.16e}", self.fit_dual.slope);
        let _ = writeln!(s, "# slope_l2 = {:.16e}", self.fit_l2.slope);
        let _ = writeln!(s, "# reference = {:.16e}", m.reference);
        let _ = writeln!(s, "# grid = {}x{}", m.nx, m.ny);
        let _ = writeln!(s, "# dt = {:.16e}", m.dt);
        let _ = writeln!(s, "# t_end = {:.16e}", m.t_end);
        let _ = writeln!(s, "# seed = {}", m.seed);
        let _ = writeln!(s, "# snapshot_stride = {}", m.snapshot_stride);
        s
    }
}

/// Shared inputs of every member run of a sweep.
#[derive(Clone, Debug)]
pub struct SweepBase {
    pub ops: Arc<KernelOps>,
    pub pot: PotentialPair,
    pub cfg: SimConfig,
    pub phi0: FieldPair,
    pub seed: u64,
}

impl SweepBase {
    fn meta(&self, reference: f64) -> StudyMeta {
        let g = self.ops.grid();
        StudyMeta {
            nx: g.nx(),
            ny: g.ny(),
            dt: self.cfg.dt,
            t_end: self.cfg.t_end,
            seed: self.seed,
            snapshot_stride: self.cfg.snapshot_stride,
            reference,
        }
    }

    fn run(&self, cfg: SimConfig) -> Result<Trajectory> {
        let sim = Simulator::new(self.ops.clone(), self.pot.clone(), cfg)?;
        let s0 = sim.initial_state(&self.phi0)?;
        Ok(sim.run(&s0)?.trajectory)
    }

    /// Runs all configurations concurrently; results keep input order.
    fn run_all(&self, cfgs: Vec<SimConfig>) -> Result<Vec<Trajectory>> {
        cfgs.into_par_iter().map(|c| self.run(c)).collect()
    }
}

/// Norm in which trajectory differences are measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ErrorNorm {
    /// `‖·‖_{L,0,*}` through `𝔖^L` (`L = 0` gives the `𝔖⁰` norm).
    Coupled(f64),
    /// `(‖·‖²_{V′} + ‖·‖²_{V_Γ′})^{1/2}` with means handled separately.
    Separate,
}

impl ErrorNorm {
    pub fn eval(self, es: &EllipticSolvers, v: &FieldPair) -> Result<f64> {
        match self {
            ErrorNorm::Coupled(l) => {
                let p = es.grid().project_zero_mean(v);
                es.dual_norm(&p, l)
            }
            ErrorNorm::Separate => {
                let b = es.norm_v_prime_bulk(&v.bulk)?;
                let s = es.norm_v_prime_surf(&v.surf)?;
                Ok((b * b + s * s).sqrt())
            }
        }
    }
}

/// `(max_n ‖a_n − b_n‖_dual, (∫‖a − b‖²_{ℒ²} dt)^{1/2})` with the time
/// integral by the trapezoid rule on the snapshot times.
pub fn trajectory_error(
    es: &EllipticSolvers,
    a: &Trajectory,
    b: &Trajectory,
    norm: ErrorNorm,
) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "trajectories have {} and {} snapshots",
            a.len(),
            b.len()
        )));
    }
    if a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9 * (1.0 + x.abs())) {
        return Err(Error::InvalidArgument("snapshot times differ".into()));
    }
    let g = es.grid();
    let mut dual: f64 = 0.0;
    let mut sq = Vec::with_capacity(a.len());
    for (pa, pb) in a.phi.iter().zip(&b.phi) {
        let d = pa.sub(pb);
        dual = dual.max(norm.eval(es, &d)?);
        sq.push(g.inner_pair(&d, &d));
    }
    let l2 = trapezoid(&a.times, &sq).max(0.0).sqrt();
    Ok((dual, l2))
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum()
}

fn study_errors(
    es: &EllipticSolvers,
    reference: &Trajectory,
    runs: &[Trajectory],
    norm: ErrorNorm,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let errs: Vec<(f64, f64)> = runs
        .par_iter()
        .map(|r| trajectory_error(es, r, reference, norm))
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().unzip())
}

/// Regularization study against a run at `eps_ref`.
pub fn epsilon_sweep(base: &SweepBase, eps_list: &[f64], eps_ref: f64) -> Result<RateStudy> {
    StudyKind::Epsilon.check_order(eps_list)?;
    let min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    if eps_list.is_empty() || !(eps_ref <= min / 16.0 * (1.0 + 1e-12)) || eps_ref < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "eps_ref = {eps_ref} must lie in [0, min(eps)/16]"
        )));
    }
    let mut cfgs: Vec<SimConfig> = eps_list.iter().map(|&e| SimConfig { eps: e, ..base.cfg }).collect();
    cfgs.push(SimConfig { eps: eps_ref, ..base.cfg });
    let mut runs = base.run_all(cfgs)?;
    let reference = runs.pop().expect("reference run");
    let es = EllipticSolvers::new(base.ops.grid())?;
    let norm = match base.cfg.l_mode {
        LMode::Infinite => ErrorNorm::Separate,
        m => ErrorNorm::Coupled(m.value()),
    };
    let (d, l) = study_errors(&es, &reference, &runs, norm)?;
    RateStudy::from_errors(StudyKind::Epsilon, eps_list.to_vec(), d, l, base.meta(eps_ref))
}

/// Kinetic-rate study against the exact `L = 0` system.
pub fn kinetic_sweep_zero(base: &SweepBase, l_list: &[f64]) -> Result<RateStudy> {
    StudyKind::KineticZero.check_order(l_list)?;
    if l_list.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::InvalidArgument("L values must lie in (0, 1]".into()));
    }
    let mut cfgs: Vec<SimConfig> = l_list
        .iter()
        .map(|&l| SimConfig { l_mode: LMode::Finite(l), ..base.cfg })
        .collect();
    cfgs.push(SimConfig { l_mode: LMode::Zero, ..base.cfg });
    let mut runs = base.run_all(cfgs)?;
    let reference = runs.pop().expect("reference run");
    let es = EllipticSolvers::new(base.ops.grid())?;
    let (d, l) = study_errors(&es, &reference, &runs, ErrorNorm::Coupled(0.0))?;
    RateStudy::from_errors(StudyKind::KineticZero, l_list.to_vec(), d, l, base.meta(0.0))
}

/// Kinetic-rate study against the decoupled `L = ∞` system; `l_min` is
/// the smallest admissible `L`.
pub fn kinetic_sweep_infinity(base: &SweepBase, l_list: &[f64], l_min: f64) -> Result<RateStudy> {
    StudyKind::KineticInfinity.check_order(l_list)?;
    if l_list.iter().any(|&l| !(l >= l_min && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("L values must lie in [{l_min}, ∞)")));
    }
    let mut cfgs: Vec<SimConfig> = l_list
        .iter()
        .map(|&l| SimConfig { l_mode: LMode::Finite(l), ..base.cfg })
        .collect();
    cfgs.push(SimConfig { l_mode: LMode::Infinite, ..base.cfg });
    let mut runs = base.run_all(cfgs)?;
    let reference = runs.pop().expect("reference run");
    let es = EllipticSolvers::new(base.ops.grid())?;
    let (d, l) = study_errors(&es, &reference, &runs, ErrorNorm::Separate)?;
    RateStudy::from_errors(
        StudyKind::KineticInfinity,
        l_list.to_vec(),
        d,
        l,
        base.meta(f64::INFINITY),
    )
}

/// Distance from the pure phases and chemical-potential sizes along a run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationReport {
    pub tau: f64,
    pub times: Vec<f64>,
    pub delta_bulk: Vec<f64>,
    pub delta_surf: Vec<f64>,
    pub mu_inf: Vec<f64>,
    pub theta_inf: Vec<f64>,
    /// Infima and suprema over snapshots with `t ≥ τ`.
    pub inf_delta_bulk: f64,
    pub inf_delta_surf: f64,
    pub sup_mu: f64,
    pub sup_theta: f64,
}

impl SeparationReport {
    pub fn delta(&self) -> f64 {
        self.inf_delta_bulk.min(self.inf_delta_surf)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,delta_bulk,delta_surf,mu_inf,theta_inf\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.delta_bulk[i], self.delta_surf[i], self.mu_inf[i], self.theta_inf[i]
            );
        }
        let _ = writeln!(s, "# tau = {:.16e}", self.tau);
        let _ = writeln!(s, "# inf_delta_bulk = {:.16e}", self.inf_delta_bulk);
        let _ = writeln!(s, "# inf_delta_surf = {:.16e}", self.inf_delta_surf);
        let _ = writeln!(s, "# sup_mu = {:.16e}", self.sup_mu);
        let _ = writeln!(s, "# sup_theta = {:.16e}", self.sup_theta);
        s
    }
}

pub fn separation_track(traj: &Trajectory, tau: f64) -> Result<SeparationReport> {
    let t_end = *traj
        .times
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    if !(tau < t_end) {
        return Err(Error::InvalidArgument(format!("tau = {tau} must be below T = {t_end}")));
    }
    let delta_bulk: Vec<f64> = traj.phi.iter().map(|p| 1.0 - p.bulk.max_abs()).collect();
    let delta_surf: Vec<f64> = traj.phi.iter().map(|p| 1.0 - p.surf.max_abs()).collect();
    let mu_inf: Vec<f64> = traj.mu.iter().map(|m| m.bulk.max_abs()).collect();
    let theta_inf: Vec<f64> = traj.mu.iter().map(|m| m.surf.max_abs()).collect();
    let after: Vec<usize> = (0..traj.len()).filter(|&i| traj.times[i] >= tau).collect();
    let inf = |v: &[f64]| after.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min);
    let sup = |v: &[f64]| after.iter().map(|&i| v[i]).fold(0.0, f64::max);
    Ok(SeparationReport {
        tau,
        inf_delta_bulk: inf(&delta_bulk),
        inf_delta_surf: inf(&delta_surf),
        sup_mu: sup(&mu_inf),
        sup_theta: sup(&theta_inf),
        times: traj.times.clone(),
        delta_bulk,
        delta_surf,
        mu_inf,
        theta_inf,
    })
}

/// A-priori bounds on `(‖μ‖_∞, ‖θ‖_∞)` for a run separated by
/// `(δ_bulk, δ_surf)`: `a^* + ‖J‖_{L¹} + max|β(±(1−δ))| + max|π|` and the
/// surface analogue, where the surface kernel mass is its discrete row sum.
pub fn chemical_potential_bound(
    ops: &KernelOps,
    pot: &PotentialPair,
    delta_bulk: f64,
    delta_surf: f64,
) -> (f64, f64) {
    let c = &ops.constants;
    let edge = |split: &crate::potentials::SingularSplit, d: f64| {
        split.beta(1.0 - d).abs().max(split.beta(-1.0 + d).abs())
    };
    let mu = c.a_upper + ops.j_l1_plane() + edge(&pot.bulk, delta_bulk) + pot.bulk.pi_sup();
    let theta = 2.0 * c.a_upper_surf + edge(&pot.surf, delta_surf) + pot.surf.pi_sup();
    (mu, theta)
}

/// Level-set measures of the De Giorgi iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct DeGiorgiReport {
    /// `t_{n−1}`, left end of `I_n = [t_{n−1}, T]`.
    pub t_start: Vec<f64>,
    /// `κ_n = 1 − δ − δ/2ⁿ`.
    pub kappa: Vec<f64>,
    /// `y_n`, counting both the upper (`≥ κ_n`) and lower (`≤ −κ_n`) sets.
    pub y: Vec<f64>,
    /// First `n₀` from which `y_{n+1} ≤ y_n / 2` for all later `n`.
    pub geometric_from: Option<usize>,
}

impl DeGiorgiReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,t_start,kappa,y\n");
        for n in 0..self.y.len() {
            let _ = writeln!(s, "{n},{:.16e},{:.16e},{:.16e}", self.t_start[n], self.kappa[n], self.y[n]);
        }
        s
    }
}

/// `y_n` for `n = 0..=n_max` with `t_{−1} = T − 3τ̃`, `t_n = t_{n−1} + τ̃/2ⁿ`.
///
/// Time integration uses fixed trapezoid weights of the whole trajectory,
/// so `I_{n+1} ⊂ I_n` and nested level sets give `y_{n+1} ≤ y_n` exactly.
pub fn degiorgi_diagnostic(
    grid: &StripGrid,
    traj: &Trajectory,
    t_end: f64,
    tau_tilde: f64,
    delta: f64,
    n_max: usize,
) -> Result<DeGiorgiReport> {
    if !(delta > 0.0 && delta < 0.5) || !(tau_tilde > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < delta < 1/2 and tau_tilde > 0, got {delta}, {tau_tilde}"
        )));
    }
    if n_max > 8 {
        return Err(Error::InvalidArgument(format!("n_max = {n_max} exceeds 8")));
    }
    let times = &traj.times;
    let (t0, tl) = match (times.first(), times.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::InvalidArgument("empty trajectory".into())),
    };
    if t_end > tl + 1e-12 || t_end - 3.0 * tau_tilde < t0 - 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "[T − 3τ̃, T] = [{}, {t_end}] not covered by [{t0}, {tl}]",
            t_end - 3.0 * tau_tilde
        )));
    }
    let n = times.len();
    let weights: Vec<f64> = (0..n)
        .map(|s| {
            let lo = if s == 0 { times[0] } else { 0.5 * (times[s - 1] + times[s]) };
            let hi = if s + 1 == n { times[n - 1] } else { 0.5 * (times[s] + times[s + 1]) };
            hi - lo
        })
        .collect();
    let mut t_start = Vec::with_capacity(n_max + 1);
    let mut t = t_end - 3.0 * tau_tilde;
    for k in 0..=n_max {
        t_start.push(t);
        t += tau_tilde / 2f64.powi(k as i32);
    }
    let kappa: Vec<f64> = (0..=n_max)
        .map(|k| 1.0 - delta - delta / 2f64.powi(k as i32))
        .collect();
    let wb = grid.bulk_weights();
    let hx = grid.hx();
    let mut y = Vec::with_capacity(n_max + 1);
    for k in 0..=n_max {
        let members: Vec<usize> = (0..n)
            .filter(|&s| times[s] >= t_start[k] - 1e-12 && times[s] <= t_end + 1e-12)
            .collect();
        if members.len() < 2 {
            return Err(Error::InsufficientSnapshots(format!(
                "I_{k} = [{}, {t_end}] holds {} snapshots",
                t_start[k],
                members.len()
            )));
        }
        let level = kappa[k];
        let hit = |v: f64| v >= level || v <= -level;
        let mut acc = 0.0;
        for &s in &members {
            let p = &traj.phi[s];
            let tr = grid.trace(&p.bulk)?;
            let a: f64 = p
                .bulk
                .values
                .iter()
                .zip(&wb)
                .filter(|(v, _)| hit(**v))
                .map(|(_, w)| w)
                .sum();
            let at = tr.values.iter().filter(|v| hit(**v)).count() as f64 * hx;
            let b = p.surf.values.iter().filter(|v| hit(**v)).count() as f64 * hx;
            acc += weights[s] * (a + at + b);
        }
        y.push(acc);
    }
    let geometric_from = (0..=n_max).find(|&n0| (n0..n_max).all(|k| y[k + 1] <= 0.5 * y[k]));
    Ok(DeGiorgiReport {
        t_start,
        kappa,
        y,
        geometric_from,
    })
}

/// Bound `z₀ b^{−n/ε}` of the iteration lemma for `z_{n+1} ≤ C bⁿ z_n^{1+ε}`,
/// or `None` when `z₀` exceeds the threshold `C^{−1/ε} b^{−1/ε²}`.
pub fn iteration_lemma_bound(z0: f64, c: f64, b: f64, eps: f64, n: usize) -> Option<f64> {
    let threshold = c.powf(-1.0 / eps) * b.powf(-1.0 / (eps * eps));
    (z0 <= threshold).then(|| z0 * b.powf(-(n as f64) / eps))
}
