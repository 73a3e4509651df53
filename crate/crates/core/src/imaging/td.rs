//! Topological-derivative maps.
//!
//! Every regime is evaluated through one identity. With `2ZᵀZ = M_z`, `M_B = 2CᵀXC` and the
//! rows `R_m = (Z·G)_m`, `L_m = (conj(Z)·G)_m` of the kernel at a sampling point,
//! `T(z) = −4·Re Σ_m ⟨conj(C)·L_m, X·C·R_m⟩_{L²(B)}`. The isotropic form uses `Z = D_z`,
//! `C = I` and `X = (I − qR_κ)^{−1}` with the prefactor `−4a²q·q_z`.

use faer::complex_native::c64;
use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::materials::{AnisoContrast, Contrast, IsoContrast};
use crate::polarization::{mz_ball_iso, PolarizationTensor};
use crate::vie::{from_c64, to_c64, ContrastSolver, MbPath};
use crate::{to_complex, CMat3, Vec3};

use super::kernels::{ImagingKernel, KernelMode};

/// Sampling points per kernel/solve batch.
pub const POINT_BATCH: usize = 96;

/// Which closed form produced a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TdFormula {
    Isotropic,
    AnisotropicInIsotropic,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdDiagnostics {
    pub formula: TdFormula,
    pub kernel_mode: KernelMode,
    /// Moderate-scatterer norm attached by the caller.
    pub certificate: Option<f64>,
    /// `sign(q)` or the common sign of `σ²` (`None` for mixed signs).
    pub scatterer_sign: Option<f64>,
    /// `sign(q_z)` or the common sign of `σ_z²`.
    pub trial_sign: Option<f64>,
    /// Sign predicted by the sign theorems when both contrasts are one-signed.
    pub predicted_sign: Option<f64>,
    /// `max|Im| / max|Re|` of the bilinear form before taking the real part.
    pub imag_residue: f64,
}

/// Values `T(z)` on a list of sampling points.
#[derive(Debug, Clone, PartialEq)]
pub struct TdMap {
    pub points: Vec<Vec3>,
    pub values: Vec<f64>,
    pub imag: Vec<f64>,
    pub inside: Vec<bool>,
    pub diagnostics: TdDiagnostics,
}

impl TdMap {
    pub fn with_certificate(mut self, norm: f64) -> Self {
        self.diagnostics.certificate = Some(norm);
        self
    }

    /// Number of samples whose sign equals `expected` (zero counts only for `expected = 0`).
    pub fn sign_matches(&self, expected: f64) -> usize {
        self.values
            .iter()
            .filter(|&&v| if expected == 0.0 { v == 0.0 } else { v * expected > 0.0 })
            .count()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Engine<'a, 'b> {
    solver: &'b ContrastSolver<'a>,
    kernel: &'b ImagingKernel,
    z: CMat3,
    right: CMat3,
    left: CMat3,
    scale: f64,
}

impl Engine<'_, '_> {
    fn run(&self, points: &[Vec3]) -> Result<(Vec<f64>, Vec<f64>)> {
        let sys = self.solver.system();
        let n = sys.len();
        let vol = sys.grid.cell_volume();
        let mut re = Vec::with_capacity(points.len());
        let mut im = Vec::with_capacity(points.len());
        if self.scale == 0.0 || self.z.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
            return Ok((vec![0.0; points.len()], vec![0.0; points.len()]));
        }
        let zc = self.z.map(|v| v.conj());
        for batch in points.chunks(POINT_BATCH) {
            let g = self.kernel.blocks(&sys.bg, batch, &sys.grid.centers)?;
            let np = batch.len();
            let mut rhs = Mat::<c64>::zeros(3 * n, 3 * np);
            let mut tests = vec![Vec::new(); 3 * np];
            for p in 0..np {
                for m in 0..3 {
                    let col = 3 * p + m;
                    let mut test = Vec::with_capacity(n);
                    for j in 0..n {
                        let mut r = crate::CVec3::zeros();
                        let mut l = crate::CVec3::zeros();
                        for k in 0..3 {
                            for c in 0..3 {
                                let gk = from_c64(g.read(3 * p + k, 3 * j + c));
                                r[c] += self.z[(m, k)] * gk;
                                l[c] += zc[(m, k)] * gk;
                            }
                        }
                        let u = self.right * r;
                        for c in 0..3 {
                            rhs.write(3 * j + c, col, to_c64(u[c]));
                        }
                        test.push(self.left * l);
                    }
                    tests[col] = test;
                }
            }
            let x = self.solver.solve_columns(&rhs)?;
            for p in 0..np {
                let mut s = Complex64::new(0.0, 0.0);
                for m in 0..3 {
                    let col = 3 * p + m;
                    for (j, v) in tests[col].iter().enumerate() {
                        for c in 0..3 {
                            s += v[c].conj() * from_c64(x.read(3 * j + c, col));
                        }
                    }
                }
                s *= vol * self.scale;
                re.push(s.re);
                im.push(s.im);
            }
        }
        Ok((re, im))
    }
}

fn finish(
    solver: &ContrastSolver,
    kernel: &ImagingKernel,
    points: &[Vec3],
    (values, imag): (Vec<f64>, Vec<f64>),
    formula: TdFormula,
    scatterer_sign: Option<f64>,
    trial_sign: Option<f64>,
) -> TdMap {
    let max_re = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let max_im = imag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let shape = &solver.system().grid.shape;
    let predicted_sign = match (scatterer_sign, trial_sign) {
        (Some(a), Some(b)) => Some(-a * b),
        _ => None,
    };
    TdMap {
        inside: points.iter().map(|p| shape.contains(p)).collect(),
        points: points.to_vec(),
        values,
        imag,
        diagnostics: TdDiagnostics {
            formula,
            kernel_mode: kernel.mode,
            certificate: None,
            scatterer_sign,
            trial_sign,
            predicted_sign,
            imag_residue: if max_re > 0.0 { max_im / max_re } else { 0.0 },
        },
    }
}

fn require_path(solver: &ContrastSolver, path: MbPath) -> Result<()> {
    if solver.path() != path {
        return Err(Error::domain(format!(
            "this map needs a solver on the {path:?} path, got {:?}",
            solver.path()
        )));
    }
    Ok(())
}

/// `T(z) = −4a²q·q_z·Re⟨K, (I − qR_κ)^{−1}K⟩`, `K = D_z·G`, for an isotropic scatterer and a
/// spherical isotropic trial inclusion. The solver must use [`MbPath::Isotropic`].
pub fn td_map_iso(
    solver: &ContrastSolver,
    trial: &IsoContrast,
    kernel: &ImagingKernel,
    points: &[Vec3],
) -> Result<TdMap> {
    require_path(solver, MbPath::Isotropic)?;
    let c = match solver.contrast() {
        Contrast::Iso(c) => *c,
        Contrast::Aniso(_) => return Err(Error::domain("isotropic map needs a scalar scatterer contrast")),
    };
    if (trial.a - c.a).abs() > 1e-12 * c.a {
        return Err(Error::domain("trial and scatterer backgrounds differ"));
    }
    let raw = if c.q == 0.0 || trial.q == 0.0 {
        (vec![0.0; points.len()], vec![0.0; points.len()])
    } else {
        let pt = mz_ball_iso(trial.a, trial.beta)?;
        let d = pt.dz_iso(trial.q)?;
        Engine {
            solver,
            kernel,
            z: to_complex(&d),
            right: CMat3::identity(),
            left: CMat3::identity(),
            scale: -4.0 * c.a * c.a * c.q * trial.q,
        }
        .run(points)?
    };
    Ok(finish(solver, kernel, points, raw, TdFormula::Isotropic, Some(sign(c.q)), Some(sign(trial.q))))
}

fn symmetric_engine<'a, 'b>(
    solver: &'b ContrastSolver<'a>,
    kernel: &'b ImagingKernel,
    z: CMat3,
) -> Result<Engine<'a, 'b>> {
    let c = solver.contrast().to_aniso()?;
    let cm = c.p_factor() * to_complex(&solver.system().bg.sqrt_a);
    Ok(Engine {
        solver,
        kernel,
        z,
        right: cm,
        left: cm.map(|v| v.conj()),
        scale: -4.0,
    })
}

/// Anisotropic scatterer in an isotropic background probed by a spherical isotropic trial:
/// `T(z) = −4a²q_z·Re⟨G·q·conj(σ), ℛ[G·q·σ]⟩` with `ℛ` from `(I − σq·R_κ·qᵀσ)^{−1}`.
/// The solver must use [`MbPath::Symmetric`].
pub fn td_map_aniso_iso(
    solver: &ContrastSolver,
    trial: &IsoContrast,
    kernel: &ImagingKernel,
    points: &[Vec3],
) -> Result<TdMap> {
    require_path(solver, MbPath::Symmetric)?;
    let bg = &solver.system().bg;
    let a = bg
        .a
        .as_isotropic()
        .ok_or_else(|| Error::domain("this map needs an isotropic background"))?;
    if (trial.a - a).abs() > 1e-12 * a {
        return Err(Error::domain("trial and scatterer backgrounds differ"));
    }
    let c = solver.contrast().to_aniso()?;
    let raw = if trial.q == 0.0 || c.is_zero() {
        (vec![0.0; points.len()], vec![0.0; points.len()])
    } else {
        let d = mz_ball_iso(a, trial.beta)?.dz_iso(trial.q)?;
        let z = to_complex(&d) * Complex64::new(a * trial.q, 0.0).sqrt();
        symmetric_engine(solver, kernel, z)?.run(points)?
    };
    Ok(finish(
        solver,
        kernel,
        points,
        raw,
        TdFormula::AnisotropicInIsotropic,
        c.uniform_sign(),
        Some(sign(trial.q)),
    ))
}

/// Fully anisotropic case: trial polarization `pt` (with contrast `trial`), true-scatterer
/// factorization from the solver, which must use [`MbPath::Symmetric`]. Reversed nesting is
/// handled by passing the enclosing sphere in `kernel`.
pub fn td_map_general(
    solver: &ContrastSolver,
    trial: &AnisoContrast,
    pt: &PolarizationTensor,
    kernel: &ImagingKernel,
    points: &[Vec3],
) -> Result<TdMap> {
    require_path(solver, MbPath::Symmetric)?;
    let bg = &solver.system().bg;
    if (trial.a.to_matrix() - bg.a.to_matrix()).amax() > 1e-12 * bg.a.to_matrix().amax() {
        return Err(Error::domain("trial and scatterer backgrounds differ"));
    }
    let c = solver.contrast().to_aniso()?;
    let raw = if trial.is_zero() || c.is_zero() {
        (vec![0.0; points.len()], vec![0.0; points.len()])
    } else {
        let z = pt.z_factor(trial)?;
        symmetric_engine(solver, kernel, z)?.run(points)?
    };
    Ok(finish(
        solver,
        kernel,
        points,
        raw,
        TdFormula::General,
        c.uniform_sign(),
        trial.uniform_sign(),
    ))
}

/// Uniform Cartesian grid `n³` spanning `[lo, hi]³`, row-major in `(x, y, z)` with `z` fastest.
pub fn cartesian_grid(lo: f64, hi: f64, n: usize) -> Vec<Vec3> {
    let coord = |i: usize| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(Vec3::new(coord(i), coord(j), coord(k)));
            }
        }
    }
    out
}
