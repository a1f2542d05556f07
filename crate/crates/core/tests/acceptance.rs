//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line. The test fails if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlch::elliptic::EllipticSolvers;
use nlch::harness::{
    chemical_potential_bound, epsilon_sweep, kinetic_sweep_infinity, kinetic_sweep_zero, rate_fit,
    separation_track, RateStudy, SweepBase,
};
use nlch::potentials::{eps_star, YosidaOps};
use nlch::stepper::{make_initial, step_bulk_only, step_surface_only, InitialKind};
use nlch::{
    FieldPair, KernelOps, KernelSpec, LMode, PotentialPair, Scheme, SimConfig, Simulator, SingularSplit,
    StripGrid, SurfField,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ops(grid: &StripGrid, sigma: f64, j_amp: f64, k_amp: f64) -> Arc<KernelOps> {
    Arc::new(
        KernelOps::build(
            KernelSpec::gaussian(sigma, j_amp),
            KernelSpec::gaussian(sigma, k_amp),
            grid,
        )
        .unwrap(),
    )
}

/// Unit strip, 32×17 nodes, Θ = 1, Θ₀ = 1.5.
fn standard() -> (Arc<KernelOps>, PotentialPair, FieldPair) {
    let g = StripGrid::unit(32, 17).unwrap();
    let phi0 = make_initial(
        InitialKind::Perturbed {
            m: 0.0,
            amplitude: 0.3,
            seed: 1,
        },
        &g,
    )
    .unwrap();
    (
        ops(&g, 0.15, 2.2, 0.4),
        PotentialPair::same(SingularSplit::logarithmic(1.0, 1.5)),
        phi0,
    )
}

/// Strip of size 2 × 4 on 32×17 nodes with a stiff potential, a smooth
/// bulk interface and a surface state out of equilibrium with it.
fn kinetic() -> SweepBase {
    let g = StripGrid::new(32, 17, 2.0, 4.0).unwrap();
    let bulk = make_initial(
        InitialKind::TanhInterface {
            position: 1.0,
            width: 0.3,
        },
        &g,
    )
    .unwrap()
    .bulk
    .map(|v| 0.5 * v);
    SweepBase {
        ops: ops(&g, 0.6, 2.6, 2.0),
        pot: PotentialPair::same(SingularSplit::logarithmic(8.0, 2.0)),
        cfg: SimConfig::new(LMode::Finite(1.0), 1e-3, 1e-3, 0.2),
        phi0: FieldPair::new(bulk, SurfField::constant(&g, -0.3)),
        seed: 0,
    }
}

fn c1_mass() -> Outcome {
    let (ops, pot, phi0) = standard();
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [
        LMode::Finite(0.1),
        LMode::Finite(1.0),
        LMode::Finite(10.0),
        LMode::Zero,
        LMode::Infinite,
    ] {
        let sim = Simulator::new(ops.clone(), pot.clone(), SimConfig::new(mode, 1e-3, 1e-3, 0.5)).unwrap();
        let s0 = sim.initial_state(&phi0).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let out = sim.run(&s0).map_err(|e| e.to_string())?;
        let elapsed = t.elapsed();
        let f = &out.ledger[0];
        let steps = out.ledger.len() - 1;
        let drift = if mode == LMode::Infinite {
            out.ledger.iter().fold(0.0f64, |m, r| {
                m.max((r.mass_bulk - f.mass_bulk).abs())
                    .max((r.mass_surf - f.mass_surf).abs())
            })
        } else {
            out.ledger
                .iter()
                .fold(0.0f64, |m, r| m.max((r.mass_total - f.mass_total).abs()))
        };
        ok &= steps == 500 && drift <= 1e-8 && elapsed <= Duration::from_secs(60);
        lines.push(format!("L={:?} drift {drift:.2e} in {:.1}s", mode.value(), elapsed.as_secs_f64()));
    }
    check(ok, lines.join("; "))
}

fn c2_energy() -> Outcome {
    let g = StripGrid::unit(32, 17).unwrap();
    let ops = ops(&g, 0.15, 3.5, 0.75);
    let pot = PotentialPair::same(SingularSplit::logarithmic(1.0, 2.0));
    // smooth data: the residual of white noise is dominated by an unresolved initial layer
    let tau = std::f64::consts::TAU;
    let bulk = g.bulk_from_fn(|x, y| 0.3 * (tau * x).cos() * (0.5 * tau * y).cos() + 0.2 * (2.0 * tau * x).sin());
    let phi0 = FieldPair::new(bulk.clone(), g.trace(&bulk).unwrap());
    let run = |dt: f64, t_end: f64| {
        let sim = Simulator::new(ops.clone(), pot.clone(), SimConfig::new(LMode::Finite(1.0), 1e-2, dt, t_end))?;
        let s0 = sim.initial_state(&phi0)?;
        sim.run(&s0)
    };
    let out = run(1e-3, 0.5).map_err(|e| e.to_string())?;
    let worst = out
        .ledger
        .windows(2)
        .map(|w| w[1].e_eps - w[0].e_eps)
        .fold(f64::NEG_INFINITY, f64::max);
    let steps = out.ledger.len() - 1;
    let mut dts = Vec::new();
    let mut res = Vec::new();
    for dt in [2e-4, 1e-4, 5e-5] {
        let out = run(dt, 0.02).map_err(|e| e.to_string())?;
        let total: f64 = out
            .ledger
            .windows(2)
            .map(|w| (w[1].e_eps - w[0].e_eps + dt * w[1].dissipation()).abs())
            .sum();
        dts.push(dt);
        res.push(total);
    }
    let order = rate_fit(&dts, &res).map_err(|e| e.to_string())?.slope;
    check(
        steps == 500 && worst <= 1e-10 && order >= 0.9,
        format!(
            "max ΔE {worst:.2e} over {steps} steps; dissipation residuals {:.2e}, {:.2e}, {:.2e}; order {order:.3}",
            res[0], res[1], res[2]
        ),
    )
}

fn c3_yosida() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let split = SingularSplit::logarithmic(1.0, 0.5);
    let alpha = split.alpha();
    let mut worst = [0.0f64; 3];
    let mut fails = 0usize;
    let t = Instant::now();
    for _ in 0..10_000 {
        let eps = 10f64.powf(rng.gen_range(-3.0..-1.0));
        let y = YosidaOps::new(split.clone(), eps, 1.0).map_err(|e| e.to_string())?;
        let s: f64 = rng.gen_range(-(1.0 + 10.0 * eps)..(1.0 + 10.0 * eps));
        let r = y.resolvent(s).map_err(|e| e.to_string())?;
        // residual measured in r: near ±1 one ulp of r moves r + εβ(r) by εβ'(r)·ulp
        let raw = (r + eps * split.beta(r) - s).abs();
        let resid = raw / (1.0 + eps * split.beta_prime(r));
        let b = y.yosida(s).map_err(|e| e.to_string())?;
        let m = y.moreau(s).map_err(|e| e.to_string())?;
        let d = y.yosida_derivative(s).map_err(|e| e.to_string())?;
        let s2: f64 = rng.gen_range(-(1.0 + 10.0 * eps)..(1.0 + 10.0 * eps));
        let b2 = y.yosida(s2).map_err(|e| e.to_string())?;
        let lip = (b - b2).abs() - (s - s2).abs() / eps;
        let h = 1e-4 * eps;
        let fd = (y.yosida(s + h).map_err(|e| e.to_string())? - y.yosida(s - h).map_err(|e| e.to_string())?)
            / (2.0 * h);
        let fd_err = (fd - d).abs() / (1.0 + d.abs());
        let exact_b = split.beta(s);
        let exact_m = split.beta_hat(s);
        let bound_ok = b.abs() <= exact_b.abs() * (1.0 + 1e-14) + 1e-14;
        let moreau_ok = m >= -1e-15 && m <= exact_m * (1.0 + 1e-14) + 1e-15;
        let slope_gap = alpha / (1.0 + alpha) - 1e-12 - d;
        worst[0] = worst[0].max(resid);
        worst[1] = worst[1].max(fd_err);
        worst[2] = worst[2].max(raw);
        if !(resid <= 1e-12 && bound_ok && moreau_ok && lip <= 1e-9 && slope_gap <= 0.0 && fd_err <= 1e-5) {
            fails += 1;
        }
    }
    check(
        fails == 0,
        format!(
            "{fails} violations in 10^4 samples; max resolvent residual {:.1e} (unscaled {:.1e}), max derivative error {:.1e} ({:.2}s)",
            worst[0],
            worst[2],
            worst[1],
            t.elapsed().as_secs_f64()
        ),
    )
}

fn rate_line(s: &RateStudy, elapsed: Duration) -> String {
    let errs: Vec<String> = s.combined().iter().map(|e| format!("{e:.2e}")).collect();
    format!(
        "slope {:.3} residual {:.3} errors [{}] ({:.0}s)",
        s.fit.slope,
        s.fit.residual,
        errs.join(", "),
        elapsed.as_secs_f64()
    )
}

fn c4_eps_rate() -> Outcome {
    let (ops, pot, phi0) = standard();
    let base = SweepBase {
        ops,
        pot,
        cfg: SimConfig::new(LMode::Finite(1.0), 1e-3, 1e-3, 0.2),
        phi0,
        seed: 1,
    };
    let t = Instant::now();
    let s = epsilon_sweep(&base, &[1e-1, 3e-2, 1e-2, 3e-3, 1e-3], 1e-3 / 16.0).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    check(
        s.fit.slope >= 0.45 && s.fit.residual <= 0.1 && el <= Duration::from_secs(600),
        rate_line(&s, el),
    )
}

fn c5_zero_rate() -> Outcome {
    let base = kinetic();
    let t = Instant::now();
    let s = kinetic_sweep_zero(&base, &[1.0, 0.3, 0.1, 0.03, 0.01]).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    check(
        s.fit.slope >= 0.45 && s.fit.residual <= 0.1 && el <= Duration::from_secs(600),
        rate_line(&s, el),
    )
}

fn c6_infinity_rate() -> Outcome {
    let base = kinetic();
    let t = Instant::now();
    let s = kinetic_sweep_infinity(&base, &[10.0, 30.0, 100.0, 300.0, 1000.0], 10.0).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    check(s.fit.slope >= 0.2 && el <= Duration::from_secs(600), rate_line(&s, el))
}

fn c7_separation() -> Outcome {
    let run = |nx: usize, ny: usize| -> Result<(f64, f64, f64), String> {
        let g = StripGrid::unit(nx, ny).unwrap();
        let ops = ops(&g, 0.15, 2.2, 0.4);
        let pot = PotentialPair::same(SingularSplit::logarithmic(1.0, 1.5));
        let raw = make_initial(
            InitialKind::Perturbed {
                m: 0.5,
                amplitude: 0.45,
                seed: 7,
            },
            &g,
        )
        .map_err(|e| e.to_string())?;
        let scale = 0.98 / raw.bulk.max_abs();
        let bulk = raw.bulk.map(|v| v * scale);
        let phi0 = FieldPair::new(bulk.clone(), g.trace(&bulk).unwrap());
        let mut cfg = SimConfig::new(LMode::Finite(1.0), 0.0, 1e-3, 0.5);
        cfg.snapshot_stride = 5;
        let sim = Simulator::new(ops.clone(), pot.clone(), cfg).map_err(|e| e.to_string())?;
        let s0 = sim.initial_state(&phi0).map_err(|e| e.to_string())?;
        let out = sim.run(&s0).map_err(|e| e.to_string())?;
        let rep = separation_track(&out.trajectory, 0.05).map_err(|e| e.to_string())?;
        let (bound, _) = chemical_potential_bound(&ops, &pot, rep.inf_delta_bulk, rep.inf_delta_surf);
        Ok((rep.inf_delta_bulk, rep.sup_mu, bound))
    };
    let (d1, mu1, b1) = run(32, 17)?;
    let (d2, mu2, b2) = run(64, 33)?;
    check(
        d1 > 0.0 && d2 > 0.5 * d1 && mu1 <= b1 && mu2 <= b2,
        format!("delta {d1:.4} -> {d2:.4} under refinement; sup|mu| {mu1:.3} <= {b1:.3}, {mu2:.3} <= {b2:.3}"),
    )
}

/// `∫_Ω∫_Ω J(x−y)² + ∫_Γ∫_Γ K(x−y)²` by composite Gauss–Legendre quadrature.
fn hs_oracle(grid: &StripGrid, j: &KernelSpec, k: &KernelSpec) -> f64 {
    let (lx, ly) = (grid.lx(), grid.ly());
    // 4-point Gauss–Legendre on each of m panels
    let gl = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    ];
    let nodes = |len: f64, panels: usize| -> Vec<(f64, f64)> {
        let h = len / panels as f64;
        (0..panels)
            .flat_map(|p| gl.iter().map(move |(x, w)| (h * (p as f64 + 0.5 + 0.5 * x), 0.5 * h * w)))
            .collect()
    };
    let px = nodes(lx, 24);
    let py = nodes(ly, 24);
    let per = |dx: f64| {
        let d = dx.rem_euclid(lx);
        d.min(lx - d)
    };
    let kernel2 = |spec: &KernelSpec, dx: f64, dy: f64| {
        // periodic image sum in x
        let mut s = 0.0;
        for m in -2i32..=2 {
            let r = ((dx + m as f64 * lx).powi(2) + dy * dy).sqrt();
            s += spec.eval(r);
        }
        s * s
    };
    // bulk: translation invariance in x reduces one x-integral to lx · ∫ over dx
    let mut bulk = 0.0;
    for &(dx, wx) in &px {
        let dx = per(dx);
        for &(y1, w1) in &py {
            for &(y2, w2) in &py {
                bulk += wx * w1 * w2 * kernel2(j, dx, y1 - y2);
            }
        }
    }
    bulk *= lx;
    let mut surf = 0.0;
    for &(dx, wx) in &px {
        let dx = per(dx);
        for dy in [0.0, ly, ly, 0.0] {
            surf += wx * kernel2(k, dx, dy);
        }
    }
    surf *= lx;
    bulk + surf
}

fn c8_hilbert_schmidt() -> Outcome {
    let g = StripGrid::unit(32, 17).unwrap();
    let ops = ops(&g, 0.15, 2.2, 0.4);
    let rep = ops.hs_diagnostics(200).map_err(|e| e.to_string())?;
    let oracle = hs_oracle(&g, ops.spec_j(), ops.spec_k()).sqrt();
    let rel = (rep.frobenius - oracle).abs() / oracle;
    let sv = &rep.singular_values;
    let monotone = sv.windows(2).all(|w| w[1] <= w[0]);
    let first_small = (0..=200).find(|&n| rep.tail(n) < 1e-3);
    check(
        rel <= 0.05 && monotone && first_small.is_some(),
        format!(
            "Frobenius {:.4} vs quadrature {oracle:.4} (rel {rel:.2e}); tail < 1e-3 from N = {:?}",
            rep.frobenius, first_small
        ),
    )
}

fn c9_reciprocity() -> Outcome {
    let g = StripGrid::unit(32, 17).unwrap();
    let es = EllipticSolvers::new(&g).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut compare_fail = 0;
    let random_pair = |rng: &mut ChaCha8Rng| {
        g.project_zero_mean(&FieldPair::new(
            g.bulk_from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            g.surf_from_fn(|_, _| rng.gen_range(-1.0..1.0)),
        ))
    };
    for _ in 0..200 {
        let u = random_pair(&mut rng);
        let z = random_pair(&mut rng);
        let mut norms = Vec::new();
        for l in [0.0, 0.1, 1.0, 10.0] {
            let sz = es.bulk_surface_solve(&z, l).map_err(|e| e.to_string())?;
            // for L = 0 the form acts on pairs whose surface part is the trace
            let u_l = if l == 0.0 {
                FieldPair::new(u.bulk.clone(), g.trace(&u.bulk).unwrap())
            } else {
                u.clone()
            };
            let lhs = g.inner_pair(&u_l, &z);
            let rhs = es.a_l(&u_l, &sz, l).map_err(|e| e.to_string())?;
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
            norms.push(es.dual_norm(&z, l).map_err(|e| e.to_string())?);
        }
        if norms[1..].iter().any(|n| norms[0] > n * (1.0 + 1e-12)) {
            compare_fail += 1;
        }
    }
    check(
        worst <= 1e-9 && compare_fail == 0,
        format!("max relative reciprocity defect {worst:.2e}; comparison violations {compare_fail}/200"),
    )
}

fn c10_decoupling() -> Outcome {
    let (ops, pot, phi0) = standard();
    let cfg = SimConfig::new(LMode::Infinite, 1e-3, 1e-3, 0.2);
    let sim = Simulator::new(ops.clone(), pot.clone(), cfg).map_err(|e| e.to_string())?;
    let (yb, ys) = sim.yosida();
    let mut s = sim.initial_state(&phi0).map_err(|e| e.to_string())?;
    let (mut pb, mut mb) = (s.phi.bulk.clone(), s.mu.bulk.clone());
    let (mut ps, mut ms) = (s.phi.surf.clone(), s.mu.surf.clone());
    let mut worst_ratio: f64 = 0.0;
    for n in 1..=200 {
        let (next, rows) = sim.step(&s).map_err(|e| e.to_string())?;
        if rows.len() != 1 {
            return Err(format!("step {n} was subdivided"));
        }
        let (b, bm) = step_bulk_only(&ops, yb, &pb, &mb, cfg.dt, cfg.newton_tol, cfg.newton_max)
            .map_err(|e| e.to_string())?;
        let (f, fm) = step_surface_only(&ops, ys, &ps, &ms, cfg.dt, cfg.newton_tol, cfg.newton_max)
            .map_err(|e| e.to_string())?;
        let db = b.values.iter().zip(&next.phi.bulk.values).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        let ds = f.values.iter().zip(&next.phi.surf.values).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        worst_ratio = worst_ratio.max(db.max(ds) / (10.0 * cfg.newton_tol * n as f64));
        pb = b;
        mb = bm;
        ps = f;
        ms = fm;
        s = next;
    }
    check(
        worst_ratio <= 1.0,
        format!("max node-wise gap / (10·tol·n) = {worst_ratio:.2e} over 200 steps"),
    )
}

/// Independent model of one step on all five fields, solved by
/// Levenberg–Marquardt with a finite-difference Jacobian.
struct Oracle<'a> {
    g: StripGrid,
    ops: &'a KernelOps,
    theta: f64,
    gamma: f64,
    eps: f64,
    l: f64,
    dt: f64,
    implicit: bool,
    phi_old: Vec<f64>,
}

impl Oracle<'_> {
    fn beta_eps(&self, s: f64) -> f64 {
        // resolvent by bisection on r + ε Θ atanh(r) = s
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + self.eps * self.theta * mid.atanh() < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = 0.5 * (lo + hi);
        self.theta * r.atanh()
    }

    fn residual(&self, z: &[f64]) -> Vec<f64> {
        let g = &self.g;
        let (nx, ny) = (g.nx(), g.ny());
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let (hx, hy) = (g.hx(), g.hy());
        let phi = &z[..nb];
        let psi = &z[nb..nb + ns];
        let mu = &z[nb + ns..2 * nb + ns];
        let th = &z[2 * nb + ns..2 * nb + 2 * ns];
        let q = &z[2 * nb + 2 * ns..];
        let (old_b, old_s) = self.phi_old.split_at(nb);
        let wy = |j: usize| if j == 0 || j == ny - 1 { 0.5 * hy } else { hy };
        let src_b = if self.implicit { phi } else { old_b };
        let src_s = if self.implicit { psi } else { old_s };
        let jb = self.ops.bulk_samples();
        let ks = self.ops.surf_samples();
        let mut r = Vec::with_capacity(z.len());
        let at = |i: usize, j: usize| j * nx + i;
        for j in 0..ny {
            for i in 0..nx {
                let c = at(i, j);
                let lap_x = (mu[at((i + 1) % nx, j)] + mu[at((i + nx - 1) % nx, j)] - 2.0 * mu[c]) / (hx * hx);
                let lap_y = if j == 0 {
                    2.0 * (mu[at(i, 1)] - mu[c]) / (hy * hy) + 2.0 * q[i] / hy
                } else if j == ny - 1 {
                    2.0 * (mu[at(i, ny - 2)] - mu[c]) / (hy * hy) + 2.0 * q[nx + i] / hy
                } else {
                    (mu[at(i, j + 1)] + mu[at(i, j - 1)] - 2.0 * mu[c]) / (hy * hy)
                };
                r.push(phi[c] - old_b[c] - self.dt * (lap_x + lap_y));
            }
        }
        for k in 0..ns {
            let (off, i) = (k - k % nx, k % nx);
            let lb = (th[off + (i + 1) % nx] + th[off + (i + nx - 1) % nx] - 2.0 * th[k]) / (hx * hx);
            r.push(psi[k] - old_s[k] - self.dt * (lb - q[k]));
        }
        for c in 0..nb {
            let (mut a, mut conv) = (0.0, 0.0);
            for d in 0..nb {
                let w = hx * wy(d / nx);
                a += jb[(c, d)] * w;
                conv += jb[(c, d)] * w * src_b[d];
            }
            r.push(mu[c] - (a * phi[c] - conv + self.beta_eps(phi[c]) - self.gamma * src_b[c]));
        }
        for k in 0..ns {
            let (mut a, mut conv) = (0.0, 0.0);
            for m in 0..ns {
                a += ks[(k, m)] * hx;
                conv += ks[(k, m)] * hx * src_s[m];
            }
            r.push(th[k] - (a * psi[k] - conv + self.beta_eps(psi[k]) - self.gamma * src_s[k]));
        }
        for k in 0..ns {
            let wall = if k < nx { at(k, 0) } else { at(k - nx, ny - 1) };
            r.push(self.l * q[k] - th[k] + mu[wall]);
        }
        r
    }

    fn solve(&self, mut z: Vec<f64>) -> Vec<f64> {
        let n = z.len();
        let mut lambda = 1e-3;
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
        let mut r = self.residual(&z);
        for _ in 0..200 {
            if r.iter().all(|v| v.abs() < 1e-14) {
                break;
            }
            let h = 1e-7;
            let mut jac = DMatrix::zeros(n, n);
            for c in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[c] += h;
                zm[c] -= h;
                let (rp, rm) = (self.residual(&zp), self.residual(&zm));
                for row in 0..n {
                    jac[(row, c)] = (rp[row] - rm[row]) / (2.0 * h);
                }
            }
            let jt = jac.transpose();
            let rv = DVector::from_vec(r.clone());
            let grad = &jt * &rv;
            let jtj = &jt * &jac;
            loop {
                let mut a = jtj.clone();
                for d in 0..n {
                    a[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
                }
                let step = a.lu().solve(&(-&grad)).expect("LM system");
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let inside = trial.iter().all(|v| v.is_finite());
                let rt = self.residual(&trial);
                if inside && norm(&rt) < norm(&r) {
                    z = trial;
                    r = rt;
                    lambda = (lambda * 0.1).max(1e-15);
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e12 {
                    return z;
                }
            }
        }
        z
    }
}

fn c11_oracle() -> Outcome {
    let g = StripGrid::unit(8, 5).unwrap();
    let ops = ops(&g, 0.55, 1.0, 0.4);
    let (theta, gamma, eps, l, dt) = (1.0, 0.3, 0.05, 0.5, 5e-3);
    let pot = PotentialPair::same(SingularSplit::logarithmic(theta, gamma));
    if eps >= eps_star(&pot, &ops.constants) {
        return Err("eps not admissible".into());
    }
    let phi0 = make_initial(
        InitialKind::Perturbed {
            m: 0.1,
            amplitude: 0.6,
            seed: 11,
        },
        &g,
    )
    .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for scheme in [Scheme::FullyImplicit, Scheme::ConvexSplit] {
        let mut cfg = SimConfig::new(LMode::Finite(l), eps, dt, dt);
        cfg.scheme = scheme;
        let sim = Simulator::new(ops.clone(), pot.clone(), cfg).map_err(|e| e.to_string())?;
        let s0 = sim.initial_state(&phi0).map_err(|e| e.to_string())?;
        let (s1, _) = sim.step(&s0).map_err(|e| e.to_string())?;
        let oracle = Oracle {
            g,
            ops: &ops,
            theta,
            gamma,
            eps,
            l,
            dt,
            implicit: scheme == Scheme::FullyImplicit,
            phi_old: s0.phi.bulk.values.iter().chain(&s0.phi.surf.values).copied().collect(),
        };
        let start: Vec<f64> = s0
            .phi
            .bulk
            .values
            .iter()
            .chain(&s0.phi.surf.values)
            .chain(&s0.mu.bulk.values)
            .chain(&s0.mu.surf.values)
            .chain(&s0.flux.values)
            .copied()
            .collect();
        let z = oracle.solve(start);
        let got: Vec<f64> = s1
            .phi
            .bulk
            .values
            .iter()
            .chain(&s1.phi.surf.values)
            .chain(&s1.mu.bulk.values)
            .chain(&s1.mu.surf.values)
            .chain(&s1.flux.values)
            .copied()
            .collect();
        let gap = z.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let oracle_res = oracle.residual(&z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(gap);
        lines.push(format!("{scheme:?}: max gap {gap:.2e} (oracle residual {oracle_res:.1e})"));
    }
    check(worst <= 1e-8, lines.join("; "))
}

#[test]
fn acceptance_suite() {
    let criteria: [Criterion; 11] = [
        ("mass conservation", c1_mass),
        ("energy decay and dissipation order", c2_energy),
        ("Yosida property suite", c3_yosida),
        ("regularization rate", c4_eps_rate),
        ("kinetic rate L -> 0", c5_zero_rate),
        ("kinetic rate L -> infinity", c6_infinity_rate),
        ("strict separation", c7_separation),
        ("Hilbert-Schmidt diagnostic", c8_hilbert_schmidt),
        ("elliptic reciprocity", c9_reciprocity),
        ("decoupling at L = infinity", c10_decoupling),
        ("oracle equivalence", c11_oracle),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let outcome = f();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {id:>2} [{name}]: {tag} - {detail}");
        if outcome.is_err() {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
