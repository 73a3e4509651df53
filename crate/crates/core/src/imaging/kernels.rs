//! The two-point imaging kernels `G` and `L` and their independent representations.

use std::f64::consts::PI;

use faer::complex_native::c64;
use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{grad_phi_unchecked, phi, Background};
use crate::quadrature::SphereSurface;
use crate::specfun::{legendre_seq, sph_bessel_j_seq, sph_hankel1_seq};
use crate::vie::to_c64;
use crate::{CMat3, Mat3, Vec3};

const NODE_CHUNK: usize = 256;

fn check_inside(surface: &SphereSurface, x: &Vec3, what: &str) -> Result<()> {
    if !surface.encloses(x) {
        return Err(Error::domain(format!(
            "{what} = ({}, {}, {}) is not strictly inside the sphere of radius {}",
            x.x, x.y, x.z, surface.radius
        )));
    }
    Ok(())
}

/// `G(z,y) = ∫_Γ conj(∇Φ_κ(s−z)) ⊗ ∇Φ_κ(s−y) ds` by the surface rule (full sphere or cap).
pub fn kernel_g(surface: &SphereSurface, bg: &Background, z: &Vec3, y: &Vec3) -> Result<CMat3> {
    check_inside(surface, z, "z")?;
    check_inside(surface, y, "y")?;
    let mut g = CMat3::zeros();
    for node in &surface.nodes {
        let a = grad_phi_unchecked(bg, &(node.point - z)).map(|v| v.conj());
        let b = grad_phi_unchecked(bg, &(node.point - y));
        g += a * b.transpose() * Complex64::new(node.weight, 0.0);
    }
    Ok(g)
}

/// `L(z,y) = ∫_Γ conj(Φ_κ(s−z))·Φ_κ(s−y) ds` by the surface rule.
pub fn kernel_l(surface: &SphereSurface, bg: &Background, z: &Vec3, y: &Vec3) -> Result<Complex64> {
    check_inside(surface, z, "z")?;
    check_inside(surface, y, "y")?;
    let mut acc = Complex64::new(0.0, 0.0);
    for node in &surface.nodes {
        acc += phi(bg, &(node.point - z))?.conj() * phi(bg, &(node.point - y))? * node.weight;
    }
    Ok(acc)
}

fn unit_and_distance(z: &Vec3, y: &Vec3) -> (Vec3, f64) {
    let d = y - z;
    let r = d.norm();
    if r > 0.0 {
        (d / r, r)
    } else {
        (Vec3::zeros(), 0.0)
    }
}

/// `j_1(x)/x` and `j_2(x)/x` with their small-argument limits.
fn bessel_ratios(x: f64) -> (f64, f64, f64, f64) {
    let j = sph_bessel_j_seq(2, x);
    if x < 1e-4 {
        let x2 = x * x;
        (j[0], j[2], 1.0 / 3.0 - x2 / 30.0, x / 15.0)
    } else {
        (j[0], j[2], j[1] / x, j[2] / x)
    }
}

/// Far-field limit `(κ²/4π)·[j_0(x)·b̂⊗b̂ + (j_1(x)/x)·(I − 3b̂⊗b̂)]`, `x = κ|y−z|`, for the
/// isotropic background with `a = 1`.
pub fn kernel_g_farfield(kappa: f64, z: &Vec3, y: &Vec3) -> Mat3 {
    let (b, r) = unit_and_distance(z, y);
    let x = kappa * r;
    let (j0, _, j1x, _) = bessel_ratios(x);
    let bb = b * b.transpose();
    (bb * j0 + (Mat3::identity() - 3.0 * bb) * j1x) * (kappa * kappa / (4.0 * PI))
}

/// Two-scale expansion of `G` for `|y−z| ≪ R` on the centered sphere of radius `R`, keeping
/// the `O(1)` and `O(|y−z|/R)` terms.
pub fn kernel_g_asymptotic(radius: f64, kappa: f64, z: &Vec3, y: &Vec3) -> CMat3 {
    let (b, r) = unit_and_distance(z, y);
    let x = kappa * r;
    let (j0, j2, _, j2x) = bessel_ratios(x);
    let j1 = sph_bessel_j_seq(1, x)[1];
    let bb = b * b.transpose();
    let traceless = Mat3::identity() - 3.0 * bb;
    let kr = kappa * radius;
    let r2 = radius * radius;
    let lead = (Mat3::identity() * j0 + traceless * j2) * ((1.0 + kr * kr) / (12.0 * PI * r2));
    let c1 = Complex64::new(kr, 1.0) / (4.0 * PI * r2) * (r / radius);
    let inner = crate::to_complex(&(bb * j1)) + crate::to_complex(&(traceless * j2x)) * Complex64::new(2.0, kr);
    crate::to_complex(&lead) - inner * c1
}

/// Truncation order of the `L` series: the smallest `N ≥ κR + 20` whose term is below
/// `1e−14` of the partial sum.
pub fn series_truncation(radius: f64, kappa: f64, z: &Vec3, y: &Vec3) -> Result<usize> {
    Ok(series_terms(radius, kappa, z, y, None)?.1)
}

fn series_terms(radius: f64, kappa: f64, z: &Vec3, y: &Vec3, n_fixed: Option<usize>) -> Result<(f64, usize)> {
    if !(radius > 0.0) {
        return Err(Error::domain("series radius must be positive"));
    }
    let (rz, ry) = (z.norm(), y.norm());
    if rz >= radius || ry >= radius {
        return Err(Error::domain(format!(
            "series needs |z|, |y| < R (got {rz}, {ry} with R = {radius})"
        )));
    }
    let cos = if rz > 0.0 && ry > 0.0 {
        (z.dot(y) / (rz * ry)).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    let kr = kappa * radius;
    let n_min = (kr + 20.0).ceil() as usize;
    let n_cap = n_fixed.unwrap_or(n_min + 400);
    let p = legendre_seq(n_cap, cos);
    let term = |n: usize, jz: &[f64], jy: &[f64], h: &[Complex64]| -> f64 {
        if kappa == 0.0 {
            let ratio = rz * ry / (radius * radius);
            ratio.powi(n as i32) * p[n] / (4.0 * PI * (2 * n + 1) as f64)
        } else {
            let hn = h[n].norm();
            (jz[n] * hn) * (jy[n] * hn) * (2 * n + 1) as f64 * p[n] * (kr * kr / (4.0 * PI))
        }
    };
    let (jz, jy, h) = if kappa > 0.0 {
        (
            sph_bessel_j_seq(n_cap, kappa * rz),
            sph_bessel_j_seq(n_cap, kappa * ry),
            sph_hankel1_seq(n_cap, kr)?,
        )
    } else {
        (vec![], vec![], vec![])
    };
    let mut sum = 0.0;
    for n in 0..=n_cap {
        let t = term(n, &jz, &jy, &h);
        if !t.is_finite() {
            return Err(Error::domain(format!("series term {n} overflowed (κR = {kr})")));
        }
        sum += t;
        if n_fixed.is_none() && n >= n_min && t.abs() < 1e-14 * sum.abs() {
            return Ok((sum, n));
        }
        if n_fixed.is_none() && n >= n_min && t == 0.0 && sum == 0.0 {
            return Ok((sum, n));
        }
    }
    if n_fixed.is_some() {
        return Ok((sum, n_cap));
    }
    Err(Error::NotConverged {
        what: "L series".into(),
        residual: f64::NAN,
    })
}

/// `L(z,y) = (κ²R²/4π)·Σ_n (2n+1)·|h_n(κR)|²·j_n(κ|z|)·j_n(κ|y|)·P_n(ẑ·ŷ)` truncated at
/// `n_trunc` (or by [`series_truncation`]); at `κ = 0` the harmonic-polynomial series
/// `Σ (|z||y|/R²)ⁿ·P_n/(4π(2n+1))`.
pub fn kernel_l_series(radius: f64, kappa: f64, z: &Vec3, y: &Vec3, n_trunc: Option<usize>) -> Result<f64> {
    Ok(series_terms(radius, kappa, z, y, n_trunc)?.0)
}

/// Default difference step: a two-hundredth of the wavelength.
pub fn default_step(radius: f64, kappa: f64) -> f64 {
    if kappa > 0.0 {
        2.0 * PI / kappa / 200.0
    } else {
        radius / 200.0
    }
}

const STENCIL: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];

/// `G_ij = ∂²L/∂z_i∂y_j` by mixed central differences (fourth-order stencil per variable)
/// of the `L` series.
pub fn kernel_g_from_l(radius: f64, kappa: f64, z: &Vec3, y: &Vec3, step: Option<f64>) -> Result<Mat3> {
    let h = step.unwrap_or_else(|| default_step(radius, kappa));
    if !(h > 0.0) {
        return Err(Error::domain("difference step must be positive"));
    }
    let mut g = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for &(oa, wa) in &STENCIL {
                let mut zs = *z;
                zs[i] += oa * h;
                for &(ob, wb) in &STENCIL {
                    let mut ys = *y;
                    ys[j] += ob * h;
                    acc += wa * wb * kernel_l_series(radius, kappa, &zs, &ys, None)?;
                }
            }
            g[(i, j)] = acc / (144.0 * h * h);
        }
    }
    Ok(g)
}

/// How `G` is evaluated inside the topological-derivative maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    Quadrature,
    Farfield,
    Asymptotic,
}

impl KernelMode {
    pub fn name(&self) -> &'static str {
        match self {
            KernelMode::Quadrature => "quadrature",
            KernelMode::Farfield => "farfield",
            KernelMode::Asymptotic => "asymptotic",
        }
    }
}

/// `G` on a given integration surface in a given evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingKernel {
    pub surface: SphereSurface,
    pub mode: KernelMode,
}

impl ImagingKernel {
    pub fn new(surface: SphereSurface, mode: KernelMode) -> Self {
        Self { surface, mode }
    }

    pub fn quadrature(surface: SphereSurface) -> Self {
        Self::new(surface, KernelMode::Quadrature)
    }

    fn check_background(&self, bg: &Background) -> Result<()> {
        if self.mode != KernelMode::Quadrature && bg.a.as_isotropic() != Some(1.0) {
            return Err(Error::domain(format!(
                "{} kernel requires the isotropic background a = 1",
                self.mode.name()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, bg: &Background, z: &Vec3, y: &Vec3) -> Result<CMat3> {
        self.check_background(bg)?;
        match self.mode {
            KernelMode::Quadrature => kernel_g(&self.surface, bg, z, y),
            KernelMode::Farfield => Ok(crate::to_complex(&kernel_g_farfield(bg.kappa, z, y))),
            KernelMode::Asymptotic => Ok(kernel_g_asymptotic(self.surface.radius, bg.kappa, z, y)),
        }
    }

    /// All blocks `G(z_p, y_j)`: entry `(3p+i, 3j+l)` holds `G_il(z_p, y_j)`.
    pub fn blocks(&self, bg: &Background, points: &[Vec3], voxels: &[Vec3]) -> Result<Mat<c64>> {
        self.check_background(bg)?;
        let (np, nv) = (points.len(), voxels.len());
        let mut out = Mat::<c64>::zeros(3 * np, 3 * nv);
        if self.mode != KernelMode::Quadrature {
            let cols: Vec<Vec<CMat3>> = points
                .par_iter()
                .map(|z| voxels.iter().map(|y| self.eval(bg, z, y)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            for (p, row) in cols.iter().enumerate() {
                for (j, b) in row.iter().enumerate() {
                    for i in 0..3 {
                        for l in 0..3 {
                            out.write(3 * p + i, 3 * j + l, to_c64(b[(i, l)]));
                        }
                    }
                }
            }
            return Ok(out);
        }
        for z in points {
            check_inside(&self.surface, z, "sampling point")?;
        }
        for y in voxels {
            check_inside(&self.surface, y, "voxel center")?;
        }
        for chunk in self.surface.nodes.chunks(NODE_CHUNK) {
            let nc = chunk.len();
            let left_rows: Vec<Vec<[c64; 3]>> = points
                .par_iter()
                .map(|z| {
                    chunk
                        .iter()
                        .map(|n| {
                            let g = grad_phi_unchecked(bg, &(n.point - z));
                            [0, 1, 2].map(|i| to_c64(g[i].conj() * n.weight))
                        })
                        .collect()
                })
                .collect();
            let right_cols: Vec<Vec<[c64; 3]>> = voxels
                .par_iter()
                .map(|y| {
                    chunk
                        .iter()
                        .map(|n| {
                            let g = grad_phi_unchecked(bg, &(n.point - y));
                            [0, 1, 2].map(|i| to_c64(g[i]))
                        })
                        .collect()
                })
                .collect();
            let lhs = Mat::<c64>::from_fn(3 * np, nc, |r, s| left_rows[r / 3][s][r % 3]);
            let rhs = Mat::<c64>::from_fn(nc, 3 * nv, |s, c| right_cols[c / 3][s][c % 3]);
            faer::linalg::matmul::matmul(
                out.as_mut(),
                lhs.as_ref(),
                rhs.as_ref(),
                Some(c64::new(1.0, 0.0)),
                c64::new(1.0, 0.0),
                faer::get_global_parallelism(),
            );
        }
        Ok(out)
    }
}
