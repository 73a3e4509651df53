//! Experiment configuration files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::Background;
use crate::imaging::KernelMode;
use crate::materials::{aniso_contrast, iso_contrast, AnisoContrast, Contrast, IsoContrast, SymTensor3};
use crate::quadrature::SphereSurface;
use crate::voxel::Shape;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Sign,
    Decay,
    Born,
    Oracles,
    FiniteDelta,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Sign => "sign",
            StudyKind::Decay => "decay",
            StudyKind::Born => "born",
            StudyKind::Oracles => "oracles",
            StudyKind::FiniteDelta => "finite_delta",
        }
    }
}

/// A material given either as a scalar multiple of the identity or by the six entries
/// `[xx, yy, zz, xy, xz, yz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Material {
    Scalar(f64),
    Tensor([f64; 6]),
}

impl Material {
    pub fn tensor(&self) -> SymTensor3 {
        match *self {
            Material::Scalar(a) => SymTensor3::iso(a),
            Material::Tensor([xx, yy, zz, xy, xz, yz]) => SymTensor3::new(xx, yy, zz, xy, xz, yz),
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match *self {
            Material::Scalar(a) => Some(a),
            Material::Tensor(_) => self.tensor().as_isotropic(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub a: Material,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ball,
    Ellipsoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererConfig {
    pub shape: ShapeKind,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi_axes: Option<[f64; 3]>,
    pub a_tilde: Material,
    /// Voxel size.
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacesConfig {
    pub source_radius: f64,
    pub measurement_radius: f64,
    /// Half-angle of the integration cap in radians; absent for the closed sphere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture: Option<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub kernel: KernelMode,
}

fn default_order() -> usize {
    24
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaChoice {
    Iso,
    AnisoIso,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    /// Trial material `a_z` or `A_z`; alternatively `beta_z` for isotropic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_z: Option<Material>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_z: Option<f64>,
    /// Semi-axes of the normalized trial ellipsoid (unit ball by default).
    #[serde(default = "unit_axes")]
    pub semi_axes: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<FormulaChoice>,
}

fn unit_axes() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { lo: -1.0, hi: 1.0, n: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub eta: f64,
    pub alphas: Vec<f64>,
    #[serde(default = "default_decay_samples")]
    pub samples: usize,
    #[serde(default = "default_rays")]
    pub rays: Vec<[f64; 3]>,
    /// Surface order; by default `max(40, ⌈1.5·κ·max|z|⌉)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

fn default_decay_samples() -> usize {
    250
}

fn default_rays() -> Vec<[f64; 3]> {
    vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BornConfig {
    /// Multipliers applied to the scatterer's `q`.
    #[serde(default = "default_q_factors")]
    pub q_factors: Vec<f64>,
}

fn default_q_factors() -> Vec<f64> {
    vec![1.0, 0.5, 0.25]
}

impl Default for BornConfig {
    fn default() -> Self {
        Self {
            q_factors: default_q_factors(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OraclesConfig {
    /// Replaces every quadrature order of the suite (used to degrade it on purpose).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default = "default_pairs")]
    pub reciprocity_pairs: usize,
}

fn default_pairs() -> usize {
    10
}

impl Default for OraclesConfig {
    fn default() -> Self {
        Self {
            order: None,
            reciprocity_pairs: default_pairs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteDeltaConfig {
    pub z: [f64; 3],
    /// Trial radii as fractions of the scatterer diameter.
    #[serde(default = "default_fractions")]
    pub delta_fractions: Vec<f64>,
    #[serde(default = "default_cells")]
    pub cells_across: usize,
    #[serde(default = "default_nmax")]
    pub n_max: usize,
}

fn default_fractions() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_cells() -> usize {
    8
}

fn default_nmax() -> usize {
    24
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: String,
}

fn default_out() -> String {
    "out".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    #[serde(default)]
    pub seed: u64,
    pub background: BackgroundConfig,
    pub scatterer: ScattererConfig,
    pub surfaces: SurfacesConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<TrialConfig>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayConfig>,
    #[serde(default)]
    pub born: BornConfig,
    #[serde(default)]
    pub oracles: OraclesConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finite_delta: Option<FiniteDeltaConfig>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Source/measurement arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Nesting {
    /// `Γ_m = Γ_s`.
    Coincident,
    /// `Γ_m` inside `Γ_s`.
    MeasurementInside,
    /// `Γ_s` inside `Γ_m`; handled through reciprocity.
    SourceInside,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn vec3(v: &[f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn shape(&self) -> Result<Shape> {
        let s = &self.scatterer;
        let c = vec3(&s.center);
        let shape = match s.shape {
            ShapeKind::Ball => Shape::ball(c, s.radius.ok_or_else(|| cfg_err("ball scatterer needs `radius`"))?),
            ShapeKind::Ellipsoid => Shape::ellipsoid(
                c,
                vec3(&s.semi_axes.ok_or_else(|| cfg_err("ellipsoidal scatterer needs `semi_axes`"))?),
            ),
        };
        shape.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(shape)
    }

    pub fn background(&self) -> Result<Background> {
        Background::new(self.background.a.tensor(), self.background.kappa).map_err(|e| cfg_err(e.to_string()))
    }

    /// The scatterer contrast, scalar when both materials are scalar.
    pub fn contrast(&self) -> Result<Contrast> {
        let (a, at) = (&self.background.a, &self.scatterer.a_tilde);
        Ok(match (a.scalar(), at.scalar()) {
            (Some(a), Some(at)) => iso_contrast(a, at)?.into(),
            _ => aniso_contrast(&a.tensor(), &at.tensor())?.into(),
        })
    }

    pub fn trial_material(&self) -> Result<Material> {
        let t = self.trial.as_ref().ok_or_else(|| cfg_err("this study needs a [trial] table"))?;
        match (t.a_z, t.beta_z) {
            (Some(m), None) => Ok(m),
            (None, Some(b)) => {
                let a = self
                    .background
                    .a
                    .scalar()
                    .ok_or_else(|| cfg_err("`beta_z` needs an isotropic background"))?;
                Ok(Material::Scalar(IsoContrast::from_beta(a, b)?.a_tilde))
            }
            _ => Err(cfg_err("give exactly one of `a_z` and `beta_z`")),
        }
    }

    pub fn trial_iso(&self) -> Result<IsoContrast> {
        let a = self
            .background
            .a
            .scalar()
            .ok_or_else(|| cfg_err("an isotropic trial needs an isotropic background"))?;
        let az = self
            .trial_material()?
            .scalar()
            .ok_or_else(|| cfg_err("this formula needs a scalar trial material"))?;
        iso_contrast(a, az)
    }

    pub fn trial_aniso(&self) -> Result<AnisoContrast> {
        aniso_contrast(&self.background.a.tensor(), &self.trial_material()?.tensor())
    }

    /// Formula for the map: configured, or the most specific one the data allow.
    pub fn formula(&self) -> Result<FormulaChoice> {
        let iso_bg = self.background.a.scalar().is_some();
        let iso_sc = self.scatterer.a_tilde.scalar().is_some();
        let t = self.trial.as_ref().ok_or_else(|| cfg_err("this study needs a [trial] table"))?;
        let ball = t.semi_axes.iter().all(|&s| s == 1.0);
        let iso_trial = self.trial_material()?.scalar().is_some() && ball;
        let auto = match (iso_bg, iso_sc, iso_trial) {
            (true, true, true) => FormulaChoice::Iso,
            (true, false, true) => FormulaChoice::AnisoIso,
            _ => FormulaChoice::General,
        };
        let chosen = t.formula.unwrap_or(auto);
        let ok = match chosen {
            FormulaChoice::Iso => iso_bg && iso_sc && iso_trial,
            FormulaChoice::AnisoIso => iso_bg && iso_trial,
            FormulaChoice::General => true,
        };
        if !ok {
            return Err(cfg_err(format!("formula {chosen:?} does not fit the configured materials")));
        }
        Ok(chosen)
    }

    pub fn nesting(&self) -> Nesting {
        let (s, m) = (self.surfaces.source_radius, self.surfaces.measurement_radius);
        if s == m {
            Nesting::Coincident
        } else if m < s {
            Nesting::MeasurementInside
        } else {
            Nesting::SourceInside
        }
    }

    /// Integration surface of the imaging kernel: the outer of the two spheres.
    pub fn kernel_surface(&self, order: usize) -> Result<SphereSurface> {
        let r = self.surfaces.source_radius.max(self.surfaces.measurement_radius);
        SphereSurface::new(Vec3::zeros(), r, order, self.surfaces.aperture)
    }

    /// Diameter of the scatterer.
    pub fn diameter(&self) -> Result<f64> {
        Ok(self.shape()?.diameter())
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.shape()?;
        let bg = self.background()?;
        self.contrast().map_err(|e| cfg_err(e.to_string()))?;
        if !(self.scatterer.h > 0.0) || !self.scatterer.h.is_finite() {
            return Err(cfg_err("voxel size `h` must be positive"));
        }
        let s = &self.surfaces;
        for (name, r) in [("source_radius", s.source_radius), ("measurement_radius", s.measurement_radius)] {
            if !(r > 0.0) || !r.is_finite() {
                return Err(cfg_err(format!("`{name}` must be positive")));
            }
        }
        if s.order == 0 {
            return Err(cfg_err("surface `order` must be at least 1"));
        }
        if let Some(t) = s.aperture {
            if !(t > 0.0 && t <= std::f64::consts::PI) {
                return Err(cfg_err("`aperture` must lie in (0, π]"));
            }
        }
        let reach = shape.center().norm() + 0.5 * shape.diameter();
        let inner = s.source_radius.min(s.measurement_radius);
        if reach >= inner {
            return Err(cfg_err(format!(
                "both surfaces must enclose the scatterer (reach {reach}, inner radius {inner})"
            )));
        }
        if s.kernel != KernelMode::Quadrature && bg.a.as_isotropic() != Some(1.0) {
            return Err(cfg_err("oracle kernels need the isotropic background a = 1"));
        }
        if self.sampling.n == 0 || !(self.sampling.hi >= self.sampling.lo) {
            return Err(cfg_err("sampling grid needs n ≥ 1 and hi ≥ lo"));
        }
        let corner = self.sampling.lo.abs().max(self.sampling.hi.abs()) * 3f64.sqrt();
        if matches!(self.study, StudyKind::Sign) && corner >= inner {
            return Err(cfg_err("sampling grid must lie inside both surfaces"));
        }
        for key in self.tolerances.keys() {
            if super::report::default_tolerance(key).is_none() {
                return Err(cfg_err(format!("unknown tolerance `{key}`")));
            }
        }
        match self.study {
            StudyKind::Sign => {
                self.trial_material()?;
                self.formula()?;
            }
            StudyKind::Decay => {
                let d = self.decay.as_ref().ok_or_else(|| cfg_err("decay study needs a [decay] table"))?;
                if !(d.eta > 0.0 && d.eta <= 0.1) {
                    return Err(cfg_err("decay `eta` must lie in (0, 0.1]"));
                }
                if d.alphas.is_empty() || d.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    return Err(cfg_err("decay `alphas` must lie in (0, 1)"));
                }
                if d.rays.is_empty() || d.rays.iter().any(|r| vec3(r).norm() == 0.0) {
                    return Err(cfg_err("decay `rays` must be non-zero directions"));
                }
                if self.surfaces.aperture.is_some() || s.source_radius != s.measurement_radius {
                    return Err(cfg_err("decay study uses coincident closed spheres"));
                }
                self.trial_iso()?;
                self.contrast_iso()?;
            }
            StudyKind::Born => {
                self.contrast_iso()?;
                if self.born.q_factors.is_empty() || self.born.q_factors.iter().any(|f| !(*f >= 0.0)) {
                    return Err(cfg_err("`q_factors` must be non-negative"));
                }
            }
            StudyKind::Oracles => {
                if self.oracles.reciprocity_pairs == 0 {
                    return Err(cfg_err("`reciprocity_pairs` must be positive"));
                }
            }
            StudyKind::FiniteDelta => {
                let f = self
                    .finite_delta
                    .as_ref()
                    .ok_or_else(|| cfg_err("finite-δ study needs a [finite_delta] table"))?;
                if f.delta_fractions.is_empty() || f.delta_fractions.iter().any(|d| !(*d > 0.0)) {
                    return Err(cfg_err("`delta_fractions` must be positive"));
                }
                if s.source_radius != s.measurement_radius || s.aperture.is_some() {
                    return Err(cfg_err("the finite-δ check uses one closed sphere"));
                }
                if bg.a.as_isotropic().is_none() {
                    return Err(cfg_err("the finite-δ check needs an isotropic background"));
                }
                self.trial_material()?;
            }
        }
        Ok(())
    }

    fn contrast_iso(&self) -> Result<IsoContrast> {
        match self.contrast()? {
            Contrast::Iso(c) => Ok(c),
            Contrast::Aniso(_) => Err(cfg_err("this study needs scalar materials")),
        }
    }

    pub(crate) fn scalar_contrast(&self) -> Result<IsoContrast> {
        self.contrast_iso()
    }
}
