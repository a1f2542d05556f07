//! Interaction kernels and their quadrature-weighted convolution operators.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{BulkField, StripGrid, SurfField};

/// Radial profile of an interaction kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    /// `amplitude / (2πσ²) · exp(-r²/2σ²)`, truncated at `8σ`; `width = σ`.
    Gaussian,
    /// Compactly supported Wendland C² function with support radius `width`.
    WendlandC2,
    /// Constant `amplitude` on the disc of radius `width`.
    Tophat,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::WendlandC2 => "wendland-c2",
            KernelFamily::Tophat => "tophat",
        }
    }
}

/// How the kernel is wrapped in the periodic direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WrapMode {
    /// Sum over all periodic images within the support.
    #[default]
    ImageSum,
    /// Use only the nearest periodic image.
    MinimumImage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub width: f64,
    pub amplitude: f64,
    pub wrap: WrapMode,
}

const GAUSS_CUTOFF: f64 = 8.0;

impl KernelSpec {
    pub fn new(family: KernelFamily, width: f64, amplitude: f64) -> Self {
        Self {
            family,
            width,
            amplitude,
            wrap: WrapMode::ImageSum,
        }
    }

    pub fn gaussian(sigma: f64, amplitude: f64) -> Self {
        Self::new(KernelFamily::Gaussian, sigma, amplitude)
    }

    pub fn with_wrap(mut self, wrap: WrapMode) -> Self {
        self.wrap = wrap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "{} width must be positive, got {}",
                self.family.name(),
                self.width
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "{} amplitude must be positive, got {}",
                self.family.name(),
                self.amplitude
            )));
        }
        Ok(())
    }

    /// Radius beyond which the kernel vanishes.
    pub fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => GAUSS_CUTOFF * self.width,
            KernelFamily::WendlandC2 | KernelFamily::Tophat => self.width,
        }
    }

    /// Kernel value at distance `r`.
    pub fn eval(&self, r: f64) -> f64 {
        let (w, a) = (self.width, self.amplitude);
        match self.family {
            KernelFamily::Gaussian => {
                if r > GAUSS_CUTOFF * w {
                    0.0
                } else {
                    a / (2.0 * PI * w * w) * (-0.5 * r * r / (w * w)).exp()
                }
            }
            KernelFamily::WendlandC2 => {
                let q = r / w;
                if q >= 1.0 {
                    0.0
                } else {
                    a * 7.0 / (PI * w * w) * (1.0 - q).powi(4) * (4.0 * q + 1.0)
                }
            }
            KernelFamily::Tophat => {
                if r <= w {
                    a
                } else {
                    0.0
                }
            }
        }
    }

    /// Magnitude of the kernel gradient at distance `r` (zero almost
    /// everywhere for the tophat).
    pub fn grad_norm(&self, r: f64) -> f64 {
        let w = self.width;
        match self.family {
            KernelFamily::Gaussian => self.eval(r) * r / (w * w),
            KernelFamily::WendlandC2 => {
                let q = r / w;
                if q >= 1.0 {
                    0.0
                } else {
                    self.amplitude * 7.0 / (PI * w * w) * 20.0 * q * (1.0 - q).powi(3) / w
                }
            }
            KernelFamily::Tophat => 0.0,
        }
    }

    /// `‖J‖_{L¹(ℝ²)}`.
    pub fn l1_norm_plane(&self) -> f64 {
        let (w, a) = (self.width, self.amplitude);
        match self.family {
            KernelFamily::Gaussian => a * (1.0 - (-0.5 * GAUSS_CUTOFF * GAUSS_CUTOFF).exp()),
            KernelFamily::WendlandC2 => a,
            KernelFamily::Tophat => a * PI * w * w,
        }
    }

    /// `‖J‖²_{L²(ℝ²)}`.
    pub fn l2_norm_sq_plane(&self) -> f64 {
        let (w, a) = (self.width, self.amplitude);
        match self.family {
            KernelFamily::Gaussian => {
                a * a / (4.0 * PI * w * w) * (1.0 - (-GAUSS_CUTOFF * GAUSS_CUTOFF).exp())
            }
            KernelFamily::WendlandC2 => 343.0 * a * a / (99.0 * PI * w * w),
            KernelFamily::Tophat => a * a * PI * w * w,
        }
    }

    /// Kernel summed over periodic images (or the nearest one) in `x`.
    fn eval_periodic(&self, dx: f64, dy: f64, lx: f64, f: impl Fn(f64) -> f64) -> f64 {
        let dx = dx.rem_euclid(lx);
        match self.wrap {
            WrapMode::MinimumImage => {
                let d = dx.min(lx - dx);
                f((d * d + dy * dy).sqrt())
            }
            WrapMode::ImageSum => {
                let k_max = (self.support_radius() / lx).ceil() as i64 + 1;
                (-k_max..=k_max)
                    .map(|k| {
                        let d = dx + k as f64 * lx;
                        f((d * d + dy * dy).sqrt())
                    })
                    .sum()
            }
        }
    }
}

/// The six kernel constants: infimum, supremum and gradient bound of
/// `J∗1` on the bulk and of `K⊛1` on the boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConstants {
    pub a_lower: f64,
    pub a_upper: f64,
    pub b: f64,
    pub a_lower_surf: f64,
    pub a_upper_surf: f64,
    pub b_surf: f64,
}

/// Discretized `J∗` on the bulk lattice and `K⊛` on the boundary rings.
#[derive(Clone, Debug)]
pub struct KernelOps {
    grid: StripGrid,
    spec_j: KernelSpec,
    spec_k: KernelSpec,
    bulk_samples: DMatrix<f64>,
    surf_samples: DMatrix<f64>,
    bulk_weights: DVector<f64>,
    surf_weight: f64,
    pub a_omega: BulkField,
    pub a_gamma: SurfField,
    pub constants: KernelConstants,
}

fn positions_bulk(grid: &StripGrid) -> Vec<(f64, f64)> {
    (0..grid.ny())
        .flat_map(|j| (0..grid.nx()).map(move |i| (i, j)))
        .map(|(i, j)| (grid.x(i), grid.y(j)))
        .collect()
}

fn positions_surf(grid: &StripGrid) -> Vec<(f64, f64)> {
    (0..grid.n_surf())
        .map(|k| (grid.x(k % grid.nx()), grid.surf_y(k)))
        .collect()
}

fn sample_matrix(
    spec: &KernelSpec,
    pos: &[(f64, f64)],
    lx: f64,
    f: impl Fn(f64) -> f64 + Copy,
) -> DMatrix<f64> {
    let n = pos.len();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = spec.eval_periodic(pos[b].0 - pos[a].0, pos[b].1 - pos[a].1, lx, f);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

impl KernelOps {
    pub fn build(spec_j: KernelSpec, spec_k: KernelSpec, grid: &StripGrid) -> Result<Self> {
        let h = grid.hx().max(grid.hy());
        for (name, spec) in [("J", &spec_j), ("K", &spec_k)] {
            spec.validate()?;
            if spec.width <= 2.0 * h {
                return Err(Error::InvalidKernel(format!(
                    "{name} width {} is under-resolved: must exceed 2·max(hx, hy) = {}",
                    spec.width,
                    2.0 * h
                )));
            }
        }
        let lx = grid.lx();
        let pb = positions_bulk(grid);
        let ps = positions_surf(grid);
        let bulk_samples = sample_matrix(&spec_j, &pb, lx, |r| spec_j.eval(r));
        let surf_samples = sample_matrix(&spec_k, &ps, lx, |r| spec_k.eval(r));
        let bulk_weights = DVector::from_vec(grid.bulk_weights());
        let surf_weight = grid.surf_weight();

        let a_omega = &bulk_samples * &bulk_weights;
        let a_gamma = surf_samples.column_sum() * surf_weight;
        let grad_b = sample_matrix(&spec_j, &pb, lx, |r| spec_j.grad_norm(r)) * &bulk_weights;
        let grad_s = sample_matrix(&spec_k, &ps, lx, |r| spec_k.grad_norm(r)).column_sum()
            * surf_weight;

        let (a_lower, a_upper) = min_max(a_omega.as_slice());
        let (a_lower_surf, a_upper_surf) = min_max(a_gamma.as_slice());
        let constants = KernelConstants {
            a_lower,
            a_upper,
            b: min_max(grad_b.as_slice()).1,
            a_lower_surf,
            a_upper_surf,
            b_surf: min_max(grad_s.as_slice()).1,
        };
        Ok(Self {
            grid: *grid,
            spec_j,
            spec_k,
            a_omega: BulkField::from_vec(grid.nx(), grid.ny(), a_omega.as_slice().to_vec()),
            a_gamma: SurfField::from_vec(grid.nx(), a_gamma.as_slice().to_vec()),
            bulk_samples,
            surf_samples,
            bulk_weights,
            surf_weight,
            constants,
        })
    }

    pub fn grid(&self) -> &StripGrid {
        &self.grid
    }
    pub fn spec_j(&self) -> &KernelSpec {
        &self.spec_j
    }
    pub fn spec_k(&self) -> &KernelSpec {
        &self.spec_k
    }

    /// Raw symmetric samples `J(x_i − x_j)` (without quadrature weights).
    pub fn bulk_samples(&self) -> &DMatrix<f64> {
        &self.bulk_samples
    }
    pub fn surf_samples(&self) -> &DMatrix<f64> {
        &self.surf_samples
    }

    /// `(J∗f)_i = Σ_j J(x_i − x_j) w_j f_j`.
    pub fn conv_bulk(&self, f: &BulkField) -> Result<BulkField> {
        self.grid.check_bulk(f)?;
        let wf = DVector::from_iterator(
            f.values.len(),
            f.values.iter().zip(self.bulk_weights.iter()).map(|(a, w)| a * w),
        );
        let out = &self.bulk_samples * wf;
        Ok(BulkField::from_vec(self.grid.nx(), self.grid.ny(), out.as_slice().to_vec()))
    }

    pub fn conv_surf(&self, g: &SurfField) -> Result<SurfField> {
        self.grid.check_surf(g)?;
        let wg = DVector::from_iterator(g.values.len(), g.values.iter().map(|v| v * self.surf_weight));
        let out = &self.surf_samples * wg;
        Ok(SurfField::from_vec(self.grid.nx(), out.as_slice().to_vec()))
    }

    /// `‖J‖_{L¹(ℝ²)}` from the analytic profile.
    pub fn j_l1_plane(&self) -> f64 {
        self.spec_j.l1_norm_plane()
    }

    /// Singular values of the weight-symmetrized block operator `diag(J∗, K⊛)`.
    pub fn hs_diagnostics(&self, n: usize) -> Result<HsReport> {
        let mut sv = Vec::with_capacity(self.bulk_samples.nrows() + self.surf_samples.nrows());
        let sqrt_w: Vec<f64> = self.bulk_weights.iter().map(|w| w.sqrt()).collect();
        let mb = DMatrix::from_fn(self.bulk_samples.nrows(), self.bulk_samples.ncols(), |i, j| {
            sqrt_w[i] * self.bulk_samples[(i, j)] * sqrt_w[j]
        });
        let ms = &self.surf_samples * self.surf_weight;
        for (name, m) in [("bulk", mb), ("surface", ms)] {
            let eig = nalgebra::SymmetricEigen::try_new(m, 1e-14, 10_000).ok_or_else(|| {
                Error::Decomposition(format!("{name} kernel eigen-decomposition did not converge"))
            })?;
            sv.extend(eig.eigenvalues.iter().map(|v| v.abs()));
        }
        sv.sort_by(|a, b| b.total_cmp(a));
        let frobenius = sv.iter().map(|s| s * s).sum::<f64>().sqrt();
        let tail_norm = sv.get(n).copied().unwrap_or(0.0);
        Ok(HsReport {
            singular_values: sv,
            frobenius,
            tail_norm,
        })
    }
}

#[derive(Clone, Debug)]
pub struct HsReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    pub frobenius: f64,
    /// Operator norm of the remainder after keeping `N` modes.
    pub tail_norm: f64,
}

impl HsReport {
    /// Tail norm `σ_{N+1}` for any `N`.
    pub fn tail(&self, n: usize) -> f64 {
        self.singular_values.get(n).copied().unwrap_or(0.0)
    }

    /// `index,value` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,value\n");
        for (k, v) in self.singular_values.iter().enumerate() {
            let _ = writeln!(s, "{k},{v:.16e}");
        }
        s
    }
}
