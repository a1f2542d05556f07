//! Periodic strip geometry and discrete calculus.
//!
//! The bulk domain is `[0, lx)` (periodic) × `[0, ly]`, sampled on an
//! `nx × ny` node lattice whose first and last rows lie on the walls. The
//! boundary consists of the two wall rows, each a periodic ring of `nx` nodes.
//!
//! Quadrature is the rectangle rule in `x` and the trapezoid rule in `y`, so
//! wall nodes carry half the interior cell area. The Laplacian is defined
//! through the matching edge-based Dirichlet form, which makes the discrete
//! divergence theorem and the symmetry of the operator exact.

use crate::error::{Error, Result};

/// One of the two boundary rings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ring {
    Bottom,
    Top,
}

impl Ring {
    pub const BOTH: [Ring; 2] = [Ring::Bottom, Ring::Top];

    /// Offset of the ring inside a surface array.
    pub fn offset(self, nx: usize) -> usize {
        match self {
            Ring::Bottom => 0,
            Ring::Top => nx,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StripGrid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl StripGrid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need nx >= 4 and ny >= 3, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "lengths must be positive and finite, got lx={lx}, ly={ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// Unit square strip `lx = ly = 1`.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1.0, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }
    pub fn n_bulk(&self) -> usize {
        self.nx * self.ny
    }
    pub fn n_surf(&self) -> usize {
        2 * self.nx
    }

    /// Linear index of bulk node `(i, j)`, `x` fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }

    /// Lattice row carrying the given ring.
    pub fn wall_row(&self, ring: Ring) -> usize {
        match ring {
            Ring::Bottom => 0,
            Ring::Top => self.ny - 1,
        }
    }

    /// `y` coordinate of surface node `k` (`k < nx` bottom, otherwise top).
    pub fn surf_y(&self, k: usize) -> f64 {
        if k < self.nx {
            0.0
        } else {
            self.ly
        }
    }

    /// Bulk node of the wall row underneath surface node `k`.
    #[inline]
    pub fn surf_to_bulk(&self, k: usize) -> usize {
        if k < self.nx {
            self.idx(k, 0)
        } else {
            self.idx(k - self.nx, self.ny - 1)
        }
    }

    /// Quadrature weight of a bulk node in row `j`.
    #[inline]
    pub fn bulk_weight_row(&self, j: usize) -> f64 {
        let w = self.hx() * self.hy();
        if j == 0 || j == self.ny - 1 {
            0.5 * w
        } else {
            w
        }
    }

    pub fn bulk_weights(&self) -> Vec<f64> {
        (0..self.ny)
            .flat_map(|j| std::iter::repeat_n(self.bulk_weight_row(j), self.nx))
            .collect()
    }

    /// Quadrature weight of every surface node.
    pub fn surf_weight(&self) -> f64 {
        self.hx()
    }

    pub fn measure_bulk(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn measure_surf(&self) -> f64 {
        2.0 * self.lx
    }

    pub fn zeros_bulk(&self) -> BulkField {
        BulkField::zeros(self.nx, self.ny)
    }

    pub fn zeros_surf(&self) -> SurfField {
        SurfField::zeros(self.nx)
    }

    pub fn zeros_pair(&self) -> FieldPair {
        FieldPair::new(self.zeros_bulk(), self.zeros_surf())
    }

    pub fn bulk_from_fn(&self, mut f: impl FnMut(f64, f64) -> f64) -> BulkField {
        let mut out = self.zeros_bulk();
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.values[self.idx(i, j)] = f(self.x(i), self.y(j));
            }
        }
        out
    }

    pub fn surf_from_fn(&self, mut f: impl FnMut(Ring, f64) -> f64) -> SurfField {
        let mut out = self.zeros_surf();
        for ring in Ring::BOTH {
            let off = ring.offset(self.nx);
            for i in 0..self.nx {
                out.values[off + i] = f(ring, self.x(i));
            }
        }
        out
    }

    pub fn check_bulk(&self, f: &BulkField) -> Result<()> {
        if f.nx != self.nx || f.ny != self.ny || f.values.len() != self.n_bulk() {
            return Err(Error::GridMismatch(format!(
                "bulk field {}x{} on grid {}x{}",
                f.nx, f.ny, self.nx, self.ny
            )));
        }
        Ok(())
    }

    pub fn check_surf(&self, g: &SurfField) -> Result<()> {
        if g.nx != self.nx || g.values.len() != self.n_surf() {
            return Err(Error::GridMismatch(format!(
                "surface field with {} ring nodes on grid with nx={}",
                g.nx, self.nx
            )));
        }
        Ok(())
    }

    pub fn check_pair(&self, v: &FieldPair) -> Result<()> {
        self.check_bulk(&v.bulk)?;
        self.check_surf(&v.surf)
    }

    pub fn integrate_bulk(&self, f: &BulkField) -> f64 {
        let mut s = 0.0;
        for j in 0..self.ny {
            let row: f64 = f.values[j * self.nx..(j + 1) * self.nx].iter().sum();
            s += self.bulk_weight_row(j) * row;
        }
        s
    }

    pub fn integrate_surf(&self, g: &SurfField) -> f64 {
        self.surf_weight() * g.values.iter().sum::<f64>()
    }

    pub fn mean_bulk(&self, f: &BulkField) -> f64 {
        self.integrate_bulk(f) / self.measure_bulk()
    }

    pub fn mean_surf(&self, g: &SurfField) -> f64 {
        self.integrate_surf(g) / self.measure_surf()
    }

    /// Mean of one ring.
    pub fn mean_ring(&self, g: &SurfField, ring: Ring) -> f64 {
        g.ring(ring).iter().sum::<f64>() / self.nx as f64
    }

    /// `|Ω|,|Γ|`-weighted combined mean of a bulk–surface pair.
    pub fn generalized_mean(&self, v: &FieldPair) -> f64 {
        (self.integrate_bulk(&v.bulk) + self.integrate_surf(&v.surf))
            / (self.measure_bulk() + self.measure_surf())
    }

    /// Subtracts the generalized mean from both components.
    pub fn project_zero_mean(&self, v: &FieldPair) -> FieldPair {
        let m = self.generalized_mean(v);
        v.map(|s| s - m)
    }

    pub fn inner_bulk(&self, f: &BulkField, g: &BulkField) -> f64 {
        let mut s = 0.0;
        for j in 0..self.ny {
            let w = self.bulk_weight_row(j);
            let lo = j * self.nx;
            let row: f64 = (lo..lo + self.nx).map(|k| f.values[k] * g.values[k]).sum();
            s += w * row;
        }
        s
    }

    pub fn inner_surf(&self, f: &SurfField, g: &SurfField) -> f64 {
        self.surf_weight()
            * f.values
                .iter()
                .zip(&g.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// `ℒ²` inner product of two pairs.
    pub fn inner_pair(&self, u: &FieldPair, v: &FieldPair) -> f64 {
        self.inner_bulk(&u.bulk, &v.bulk) + self.inner_surf(&u.surf, &v.surf)
    }

    pub fn norm_pair(&self, v: &FieldPair) -> f64 {
        self.inner_pair(v, v).max(0.0).sqrt()
    }

    /// Discrete Dirichlet form `∫_Ω ∇f·∇g` consistent with [`StripGrid::laplacian`].
    pub fn dirichlet_bulk(&self, f: &BulkField, g: &BulkField) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let (hx, hy) = (self.hx(), self.hy());
        let mut s = 0.0;
        for j in 0..ny {
            let cx = self.bulk_weight_row(j) / (hx * hx);
            for i in 0..nx {
                let a = self.idx(i, j);
                let b = self.idx((i + 1) % nx, j);
                s += cx * (f.values[b] - f.values[a]) * (g.values[b] - g.values[a]);
            }
        }
        let cy = hx / hy;
        for j in 0..ny - 1 {
            for i in 0..nx {
                let a = self.idx(i, j);
                let b = self.idx(i, j + 1);
                s += cy * (f.values[b] - f.values[a]) * (g.values[b] - g.values[a]);
            }
        }
        s
    }

    /// Discrete `∫_Γ ∇_Γ f·∇_Γ g` consistent with [`StripGrid::laplace_beltrami`].
    pub fn dirichlet_surf(&self, f: &SurfField, g: &SurfField) -> f64 {
        let nx = self.nx;
        let c = 1.0 / self.hx();
        let mut s = 0.0;
        for ring in Ring::BOTH {
            let off = ring.offset(nx);
            for i in 0..nx {
                let a = off + i;
                let b = off + (i + 1) % nx;
                s += c * (f.values[b] - f.values[a]) * (g.values[b] - g.values[a]);
            }
        }
        s
    }

    /// Five-point Laplacian, periodic in `x`, with the outward normal
    /// derivative on each wall prescribed by `flux`.
    ///
    /// Wall rows use the ghost value eliminated through the flux datum, i.e.
    /// `f_{-1} = f_1 + 2 hy q`, so `∫_Ω Δf = ∫_Γ q` holds exactly.
    pub fn laplacian(&self, f: &BulkField, flux: &SurfField) -> Result<BulkField> {
        self.check_bulk(f)?;
        self.check_surf(flux)?;
        let (nx, ny) = (self.nx, self.ny);
        let (hx, hy) = (self.hx(), self.hy());
        let (ix2, iy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
        let v = &f.values;
        let mut out = vec![0.0; v.len()];
        for j in 0..ny {
            for i in 0..nx {
                let c = self.idx(i, j);
                let e = self.idx((i + 1) % nx, j);
                let w = self.idx((i + nx - 1) % nx, j);
                let dxx = (v[e] - 2.0 * v[c] + v[w]) * ix2;
                let dyy = if j == 0 {
                    2.0 * (v[self.idx(i, 1)] - v[c]) * iy2 + 2.0 * flux.values[i] / hy
                } else if j == ny - 1 {
                    2.0 * (v[self.idx(i, ny - 2)] - v[c]) * iy2 + 2.0 * flux.values[nx + i] / hy
                } else {
                    (v[self.idx(i, j + 1)] - 2.0 * v[c] + v[self.idx(i, j - 1)]) * iy2
                };
                out[c] = dxx + dyy;
            }
        }
        Ok(BulkField::from_vec(nx, ny, out))
    }

    /// Periodic three-point second difference on each ring.
    pub fn laplace_beltrami(&self, g: &SurfField) -> Result<SurfField> {
        self.check_surf(g)?;
        let nx = self.nx;
        let ih2 = 1.0 / (self.hx() * self.hx());
        let mut out = vec![0.0; 2 * nx];
        for ring in Ring::BOTH {
            let off = ring.offset(nx);
            for i in 0..nx {
                let e = off + (i + 1) % nx;
                let w = off + (i + nx - 1) % nx;
                out[off + i] = (g.values[e] - 2.0 * g.values[off + i] + g.values[w]) * ih2;
            }
        }
        Ok(SurfField::from_vec(nx, out))
    }

    /// Wall rows of a bulk field.
    pub fn trace(&self, f: &BulkField) -> Result<SurfField> {
        self.check_bulk(f)?;
        let nx = self.nx;
        let mut out = Vec::with_capacity(2 * nx);
        out.extend_from_slice(&f.values[..nx]);
        out.extend_from_slice(&f.values[(self.ny - 1) * nx..]);
        Ok(SurfField::from_vec(nx, out))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BulkField {
    nx: usize,
    ny: usize,
    pub values: Vec<f64>,
}

impl BulkField {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            values: vec![0.0; nx * ny],
        }
    }

    pub fn constant(grid: &StripGrid, c: f64) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            values: vec![c; grid.n_bulk()],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), nx * ny, "bulk field length");
        Self { nx, ny, values }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self {
            nx: self.nx,
            ny: self.ny,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Values on the two boundary rings, bottom ring first.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfField {
    nx: usize,
    pub values: Vec<f64>,
}

impl SurfField {
    pub fn zeros(nx: usize) -> Self {
        Self {
            nx,
            values: vec![0.0; 2 * nx],
        }
    }

    pub fn constant(grid: &StripGrid, c: f64) -> Self {
        Self {
            nx: grid.nx,
            values: vec![c; grid.n_surf()],
        }
    }

    pub fn from_vec(nx: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), 2 * nx, "surface field length");
        Self { nx, values }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ring(&self, ring: Ring) -> &[f64] {
        let off = ring.offset(self.nx);
        &self.values[off..off + self.nx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nx: self.nx,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self {
            nx: self.nx,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A bulk field together with a surface field on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub bulk: BulkField,
    pub surf: SurfField,
}

impl FieldPair {
    pub fn new(bulk: BulkField, surf: SurfField) -> Self {
        Self { bulk, surf }
    }

    pub fn constant(grid: &StripGrid, c: f64) -> Self {
        Self::new(BulkField::constant(grid, c), SurfField::constant(grid, c))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.bulk.map(&f), self.surf.map(&f))
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::new(
            self.bulk.zip_map(&other.bulk, &f),
            self.surf.zip_map(&other.surf, &f),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.bulk.max_abs().max(self.surf.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.bulk.is_finite() && self.surf.is_finite()
    }
}
