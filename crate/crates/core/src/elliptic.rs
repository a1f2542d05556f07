//! Bulk Neumann, surface and coupled bulk–surface solution operators, and
//! the dual norms they induce.
//!
//! Every problem is assembled from the discrete Dirichlet forms of
//! [`StripGrid`] and solved on the full space with Lagrange-multiplier rows
//! enforcing the mean-zero constraint.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::geometry::{BulkField, FieldPair, Ring, StripGrid, SurfField};

/// LU factors kept with the assembled matrix for iterative refinement.
#[derive(Debug)]
struct Lu {
    matrix: DMatrix<f64>,
    factors: LU<f64, Dyn, Dyn>,
}

const MEAN_TOL: f64 = 1e-8;

/// Kinetic coupling weight `χ(L)`: `1/L` for finite positive `L`, else 0.
pub fn chi(l: f64) -> f64 {
    if l > 0.0 && l.is_finite() {
        1.0 / l
    } else {
        0.0
    }
}

/// Adds the bulk Dirichlet-form matrix into `m` at offset 0.
fn add_bulk_form(grid: &StripGrid, m: &mut DMatrix<f64>) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut edge = |a: usize, b: usize, c: f64| {
        m[(a, a)] += c;
        m[(b, b)] += c;
        m[(a, b)] -= c;
        m[(b, a)] -= c;
    };
    for j in 0..ny {
        let cx = grid.bulk_weight_row(j) / (hx * hx);
        for i in 0..nx {
            edge(grid.idx(i, j), grid.idx((i + 1) % nx, j), cx);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            edge(grid.idx(i, j), grid.idx(i, j + 1), hx / hy);
        }
    }
}

/// Adds the surface Dirichlet-form matrix, mapping surface node `k` to
/// matrix index `map(k)`.
fn add_surf_form(grid: &StripGrid, m: &mut DMatrix<f64>, map: impl Fn(usize) -> usize) {
    let nx = grid.nx();
    let c = 1.0 / grid.hx();
    for ring in Ring::BOTH {
        let off = ring.offset(nx);
        for i in 0..nx {
            let (a, b) = (map(off + i), map(off + (i + 1) % nx));
            m[(a, a)] += c;
            m[(b, b)] += c;
            m[(a, b)] -= c;
            m[(b, a)] -= c;
        }
    }
}

fn factor(m: DMatrix<f64>, what: &str) -> Result<Lu> {
    let factors = m.clone().lu();
    if !factors.is_invertible() {
        return Err(Error::Singular(format!("{what} operator is singular")));
    }
    Ok(Lu { matrix: m, factors })
}

fn solve(lu: &Lu, rhs: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let failed = || Error::Singular(format!("{what} solve failed"));
    let mut x = lu.factors.solve(&rhs).ok_or_else(failed)?;
    for _ in 0..2 {
        let r = &rhs - &lu.matrix * &x;
        x += lu.factors.solve(&r).ok_or_else(failed)?;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("elliptic solve"));
    }
    Ok(x)
}

/// Factorized solution operators on one grid.
#[derive(Debug)]
pub struct EllipticSolvers {
    grid: StripGrid,
    neumann: Lu,
    surface: Lu,
    coupled: Mutex<HashMap<u64, Arc<Lu>>>,
}

impl EllipticSolvers {
    pub fn new(grid: &StripGrid) -> Result<Self> {
        let (nb, ns) = (grid.n_bulk(), grid.n_surf());
        let w = grid.bulk_weights();

        let mut m = DMatrix::zeros(nb + 1, nb + 1);
        add_bulk_form(grid, &mut m);
        for (i, wi) in w.iter().enumerate() {
            m[(i, nb)] = *wi;
            m[(nb, i)] = *wi;
        }
        let neumann = factor(m, "bulk Neumann")?;

        let mut m = DMatrix::zeros(ns + 2, ns + 2);
        add_surf_form(grid, &mut m, |k| k);
        let hx = grid.hx();
        for k in 0..ns {
            let c = ns + k / grid.nx();
            m[(k, c)] = hx;
            m[(c, k)] = hx;
        }
        let surface = factor(m, "surface")?;

        Ok(Self {
            grid: *grid,
            neumann,
            surface,
            coupled: Mutex::new(HashMap::new()),
        })
    }

    pub fn grid(&self) -> &StripGrid {
        &self.grid
    }

    fn coupled_lu(&self, l: f64) -> Result<Arc<Lu>> {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coupled solve needs finite L >= 0, got {l}"
            )));
        }
        let key = l.to_bits();
        if let Some(lu) = self.coupled.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(lu));
        }
        let lu = Arc::new(self.assemble_coupled(l)?);
        self.coupled
            .lock()
            .expect("cache poisoned")
            .entry(key)
            .or_insert_with(|| Arc::clone(&lu));
        Ok(lu)
    }

    fn assemble_coupled(&self, l: f64) -> Result<Lu> {
        let g = &self.grid;
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let hx = g.hx();
        let w = g.bulk_weights();
        if l == 0.0 {
            let mut m = DMatrix::zeros(nb + 1, nb + 1);
            add_bulk_form(g, &mut m);
            add_surf_form(g, &mut m, |k| g.surf_to_bulk(k));
            let mut c = w.clone();
            for k in 0..ns {
                c[g.surf_to_bulk(k)] += hx;
            }
            for (i, ci) in c.iter().enumerate() {
                m[(i, nb)] = *ci;
                m[(nb, i)] = *ci;
            }
            factor(m, "trace-constrained bulk-surface")
        } else {
            let n = nb + ns + 1;
            let mut m = DMatrix::zeros(n, n);
            add_bulk_form(g, &mut m);
            add_surf_form(g, &mut m, |k| nb + k);
            let x = hx / l;
            for k in 0..ns {
                let (b, s) = (g.surf_to_bulk(k), nb + k);
                m[(b, b)] += x;
                m[(s, s)] += x;
                m[(b, s)] -= x;
                m[(s, b)] -= x;
            }
            for (i, wi) in w.iter().enumerate() {
                m[(i, n - 1)] = *wi;
                m[(n - 1, i)] = *wi;
            }
            for k in 0..ns {
                m[(nb + k, n - 1)] = hx;
                m[(n - 1, nb + k)] = hx;
            }
            factor(m, "Robin bulk-surface")
        }
    }

    /// `N_Ω y`: mean-zero `u` with `−Δu = y`, `∂_n u = 0`.
    pub fn neumann_solve(&self, y: &BulkField) -> Result<BulkField> {
        let g = &self.grid;
        g.check_bulk(y)?;
        let m = g.mean_bulk(y);
        if m.abs() > MEAN_TOL {
            return Err(Error::NonZeroMean(format!("bulk mean {m:e}")));
        }
        let w = g.bulk_weights();
        let mut rhs = DVector::zeros(g.n_bulk() + 1);
        for (i, (wi, yi)) in w.iter().zip(&y.values).enumerate() {
            rhs[i] = wi * yi;
        }
        let x = solve(&self.neumann, rhs, "bulk Neumann")?;
        Ok(BulkField::from_vec(g.nx(), g.ny(), x.as_slice()[..g.n_bulk()].to_vec()))
    }

    /// `N_Γ y`: per-ring mean-zero `u` with `−Δ_Γ u = y`.
    pub fn surface_solve(&self, y: &SurfField) -> Result<SurfField> {
        let g = &self.grid;
        g.check_surf(y)?;
        for ring in Ring::BOTH {
            let m = g.mean_ring(y, ring);
            if m.abs() > MEAN_TOL {
                return Err(Error::NonZeroMean(format!("{ring:?} ring mean {m:e}")));
            }
        }
        let ns = g.n_surf();
        let mut rhs = DVector::zeros(ns + 2);
        for k in 0..ns {
            rhs[k] = g.hx() * y.values[k];
        }
        let x = solve(&self.surface, rhs, "surface")?;
        Ok(SurfField::from_vec(g.nx(), x.as_slice()[..ns].to_vec()))
    }

    /// `𝔖^L v` for `L ∈ [0, ∞)`.
    pub fn bulk_surface_solve(&self, v: &FieldPair, l: f64) -> Result<FieldPair> {
        let g = &self.grid;
        g.check_pair(v)?;
        let m = g.generalized_mean(v);
        if m.abs() > MEAN_TOL {
            return Err(Error::NonZeroMean(format!("generalized mean {m:e}")));
        }
        let lu = self.coupled_lu(l)?;
        let (nb, ns) = (g.n_bulk(), g.n_surf());
        let hx = g.hx();
        let w = g.bulk_weights();
        if l == 0.0 {
            let mut rhs = DVector::zeros(nb + 1);
            for i in 0..nb {
                rhs[i] = w[i] * v.bulk.values[i];
            }
            for k in 0..ns {
                rhs[g.surf_to_bulk(k)] += hx * v.surf.values[k];
            }
            let x = solve(&lu, rhs, "trace-constrained bulk-surface")?;
            let u = BulkField::from_vec(g.nx(), g.ny(), x.as_slice()[..nb].to_vec());
            let t = g.trace(&u)?;
            Ok(FieldPair::new(u, t))
        } else {
            let mut rhs = DVector::zeros(nb + ns + 1);
            for i in 0..nb {
                rhs[i] = w[i] * v.bulk.values[i];
            }
            for k in 0..ns {
                rhs[nb + k] = hx * v.surf.values[k];
            }
            let x = solve(&lu, rhs, "Robin bulk-surface")?;
            Ok(FieldPair::new(
                BulkField::from_vec(g.nx(), g.ny(), x.as_slice()[..nb].to_vec()),
                SurfField::from_vec(g.nx(), x.as_slice()[nb..nb + ns].to_vec()),
            ))
        }
    }

    /// Bilinear form `a_L` on pairs. For `L = 0` (and `L = ∞`) the Robin
    /// term is absent.
    pub fn a_l(&self, u: &FieldPair, z: &FieldPair, l: f64) -> Result<f64> {
        let g = &self.grid;
        g.check_pair(u)?;
        g.check_pair(z)?;
        let mut s = g.dirichlet_bulk(&u.bulk, &z.bulk) + g.dirichlet_surf(&u.surf, &z.surf);
        let x = chi(l);
        if x > 0.0 {
            let tu = g.trace(&u.bulk)?;
            let tz = g.trace(&z.bulk)?;
            let mut r = 0.0;
            for k in 0..g.n_surf() {
                r += (tu.values[k] - u.surf.values[k]) * (tz.values[k] - z.surf.values[k]);
            }
            s += x * g.hx() * r;
        }
        Ok(s)
    }

    /// `‖v‖_{L,0,*} = (v, 𝔖^L v)^{1/2}_{ℒ²}`.
    pub fn dual_norm(&self, v: &FieldPair, l: f64) -> Result<f64> {
        let u = self.bulk_surface_solve(v, l)?;
        Ok(self.grid.inner_pair(v, &u).max(0.0).sqrt())
    }

    /// `‖v‖_{L,*}` for pairs of any mean: `(‖Pv‖²_{L,0,*} + m̄²)^{1/2}`.
    pub fn dual_norm_full(&self, v: &FieldPair, l: f64) -> Result<f64> {
        let m = self.grid.generalized_mean(v);
        let p = self.grid.project_zero_mean(v);
        Ok((self.dual_norm(&p, l)?.powi(2) + m * m).sqrt())
    }

    /// `‖f‖_{V₀*}`.
    pub fn dual_norm_bulk(&self, f: &BulkField) -> Result<f64> {
        let u = self.neumann_solve(f)?;
        Ok(self.grid.inner_bulk(f, &u).max(0.0).sqrt())
    }

    /// `‖g‖_{V_{Γ,0}*}`.
    pub fn dual_norm_surf(&self, g: &SurfField) -> Result<f64> {
        let u = self.surface_solve(g)?;
        Ok(self.grid.inner_surf(g, &u).max(0.0).sqrt())
    }

    /// `‖f‖_{V′} = (‖f − ⟨f⟩‖²_{V₀*} + ⟨f⟩²)^{1/2}`.
    pub fn norm_v_prime_bulk(&self, f: &BulkField) -> Result<f64> {
        let m = self.grid.mean_bulk(f);
        let d = self.dual_norm_bulk(&f.map(|v| v - m))?;
        Ok((d * d + m * m).sqrt())
    }

    /// `‖g‖_{V_Γ′}` with the per-ring means removed before the inverse
    /// Laplacian and added back weighted by ring length.
    pub fn norm_v_prime_surf(&self, g: &SurfField) -> Result<f64> {
        let grid = &self.grid;
        let nx = grid.nx();
        let mb = grid.mean_ring(g, Ring::Bottom);
        let mt = grid.mean_ring(g, Ring::Top);
        let centered = SurfField::from_vec(
            nx,
            g.values
                .iter()
                .enumerate()
                .map(|(k, v)| v - if k < nx { mb } else { mt })
                .collect(),
        );
        let d = self.dual_norm_surf(&centered)?;
        Ok((d * d + 0.5 * (mb * mb + mt * mt)).sqrt())
    }

    /// Largest `c` with `‖v‖_{L,0,*} ≤ c‖v‖_{ℒ²}`, by power iteration on
    /// `𝔖^L` restricted to mean-zero pairs.
    pub fn poincare_constant(&self, l: f64, iterations: usize) -> Result<f64> {
        let g = &self.grid;
        let mut v = g.project_zero_mean(&FieldPair::new(
            g.bulk_from_fn(|x, y| (2.0 * std::f64::consts::PI * x).cos() + y),
            g.surf_from_fn(|r, x| if r == Ring::Top { 1.0 + x } else { -x }),
        ));
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let n = g.norm_pair(&v);
            v = v.scale(1.0 / n);
            let u = self.bulk_surface_solve(&v, l)?;
            lambda = g.inner_pair(&v, &u);
            v = g.project_zero_mean(&u);
        }
        Ok(lambda.max(0.0).sqrt())
    }
}
