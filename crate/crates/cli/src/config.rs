//! TOML configuration. Every key has a default; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use nlch::{
    FieldPair, InitialKind, KernelFamily, KernelSpec, LMode, PotentialPair, Scheme, SimConfig,
    SingularSplit, StripGrid, SurfField, WrapMode,
};

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub kernels: KernelsConfig,
    pub potential: PotentialConfig,
    pub time: TimeConfig,
    pub initial: InitialConfig,
    pub sweep: SweepConfig,
    pub diagnostics: DiagnosticsConfig,
}

/// Strip `[0, lx) × [0, ly]` with `nx × ny` nodes.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 17,
            lx: 1.0,
            ly: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Gaussian,
    WendlandC2,
    Tophat,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum WrapName {
    ImageSum,
    MinimumImage,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_family")]
    pub family: FamilyName,
    #[serde(default = "default_width")]
    pub width: f64,
    pub amplitude: f64,
    #[serde(default = "default_wrap")]
    pub wrap: WrapName,
}

fn default_family() -> FamilyName {
    FamilyName::Gaussian
}

fn default_width() -> f64 {
    0.15
}

fn default_wrap() -> WrapName {
    WrapName::ImageSum
}

impl KernelConfig {
    fn with_amplitude(amplitude: f64) -> Self {
        Self {
            family: default_family(),
            width: default_width(),
            amplitude,
            wrap: default_wrap(),
        }
    }

    pub fn spec(&self) -> KernelSpec {
        let family = match self.family {
            FamilyName::Gaussian => KernelFamily::Gaussian,
            FamilyName::WendlandC2 => KernelFamily::WendlandC2,
            FamilyName::Tophat => KernelFamily::Tophat,
        };
        let wrap = match self.wrap {
            WrapName::ImageSum => WrapMode::ImageSum,
            WrapName::MinimumImage => WrapMode::MinimumImage,
        };
        KernelSpec::new(family, self.width, self.amplitude).with_wrap(wrap)
    }
}

/// Bulk kernel `J` and surface kernel `K`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KernelsConfig {
    pub bulk: KernelConfig,
    pub surface: KernelConfig,
}

impl Default for KernelsConfig {
    fn default() -> Self {
        Self {
            bulk: KernelConfig::with_amplitude(2.2),
            surface: KernelConfig::with_amplitude(0.4),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `Θ/2 ((1+s)ln(1+s) + (1−s)ln(1−s)) − Θ₀ s²/2`.
    Logarithmic,
    /// `s²/2 − γ s²/2` with no singularity.
    LinearToy,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub kind: PotentialKind,
    pub theta: f64,
    pub theta0: f64,
    /// Concave coefficient of the linear toy.
    pub gamma: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            kind: PotentialKind::Logarithmic,
            theta: 1.0,
            theta0: 1.5,
            gamma: 0.5,
        }
    }
}

impl SplitConfig {
    fn split(&self) -> SingularSplit {
        match self.kind {
            PotentialKind::Logarithmic => SingularSplit::logarithmic(self.theta, self.theta0),
            PotentialKind::LinearToy => SingularSplit::linear_toy(self.gamma),
        }
    }
}

/// Bulk potential and an optional distinct surface potential.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub bulk: SplitConfig,
    pub surface: Option<SplitConfig>,
}

impl PotentialConfig {
    pub fn pair(&self) -> PotentialPair {
        let bulk = self.bulk.split();
        let surf = self.surface.as_ref().map_or_else(|| bulk.clone(), SplitConfig::split);
        PotentialPair { bulk, surf }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    ConvexSplit,
    FullyImplicit,
}

/// Time integration. `l = inf` selects the decoupled system, `l = 0` the
/// trace-constrained one.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub l: f64,
    pub eps: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: SchemeName,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub snapshot_stride: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            l: 1.0,
            eps: 1e-3,
            dt: 1e-3,
            t_end: 0.5,
            scheme: SchemeName::ConvexSplit,
            newton_tol: 1e-10,
            newton_max: 50,
            snapshot_stride: 50,
        }
    }
}

impl TimeConfig {
    pub fn sim_config(&self) -> nlch::Result<SimConfig> {
        let mut c = SimConfig::new(LMode::from_value(self.l)?, self.eps, self.dt, self.t_end);
        c.newton_tol = self.newton_tol;
        c.newton_max = self.newton_max;
        c.snapshot_stride = self.snapshot_stride;
        c.scheme = match self.scheme {
            SchemeName::ConvexSplit => Scheme::ConvexSplit,
            SchemeName::FullyImplicit => Scheme::FullyImplicit,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum InitialName {
    Uniform,
    Perturbed,
    Tanh,
}

/// Initial phase. The bulk profile is multiplied by `scale`; the surface
/// phase is its trace unless `surface` fixes a constant.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialName,
    pub m: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub position: f64,
    pub width: f64,
    pub scale: f64,
    pub surface: Option<f64>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            kind: InitialName::Perturbed,
            m: 0.0,
            amplitude: 0.3,
            seed: 1,
            position: 0.5,
            width: 0.1,
            scale: 1.0,
            surface: None,
        }
    }
}

impl InitialConfig {
    pub fn build(&self, grid: &StripGrid) -> nlch::Result<FieldPair> {
        let kind = match self.kind {
            InitialName::Uniform => InitialKind::Uniform { m: self.m * self.scale },
            InitialName::Perturbed => InitialKind::Perturbed {
                m: self.m,
                amplitude: self.amplitude,
                seed: self.seed,
            },
            InitialName::Tanh => InitialKind::TanhInterface {
                position: self.position,
                width: self.width,
            },
        };
        let base = nlch::stepper::make_initial(kind, grid)?;
        let bulk = if self.kind == InitialName::Uniform {
            base.bulk
        } else {
            base.bulk.map(|v| self.scale * v)
        };
        let surf = match self.surface {
            Some(c) => SurfField::constant(grid, c),
            None => grid.trace(&bulk)?,
        };
        Ok(FieldPair::new(bulk, surf))
    }
}

/// Parameter lists of the rate studies.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    /// Reference regularization; `0` selects `min(eps_list)/16`.
    pub eps_ref: f64,
    pub l_zero_list: Vec<f64>,
    pub l_inf_list: Vec<f64>,
    pub l_min: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_list: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            eps_ref: 0.0,
            l_zero_list: vec![1.0, 0.3, 0.1, 0.03, 0.01],
            l_inf_list: vec![10.0, 30.0, 100.0, 300.0, 1000.0],
            l_min: 10.0,
        }
    }
}

impl SweepConfig {
    pub fn resolved_eps_ref(&self) -> f64 {
        if self.eps_ref > 0.0 {
            self.eps_ref
        } else {
            self.eps_list.iter().copied().fold(f64::INFINITY, f64::min) / 16.0
        }
    }
}

/// Options of the `diagnostics` subcommand.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Number of leading singular values reported.
    pub hs_modes: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { hs_modes: 200 }
    }
}

impl Config {
    pub fn grid(&self) -> nlch::Result<StripGrid> {
        StripGrid::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }
}
