//! Full-physics check of the leading-order expansion that defines `T(z)`.
//!
//! For a small trial ball `B_δ(z)` the misfit cross term
//! `−Re ∬ conj(E u_δ^s(s′))·E u_B^s(s′) ds ds′` equals `δ³·T(z) + o(δ³)`. Both scattered
//! fields are computed by solving the volume integral equation for their own scatterer.

use faer::complex_native::c64;
use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::greens::{grad_phi_unchecked, Background};
use crate::materials::{aniso_contrast, Contrast, SymTensor3};
use crate::polarization::mz_general_on;
use crate::quadrature::SphereSurface;
use crate::vie::{from_c64, to_c64, ContrastSolver, MbPath, VieSystem};
use crate::voxel::{voxelize, Shape};
use crate::Vec3;

use super::harmonics::e_matrix;
use super::kernels::ImagingKernel;
use super::td::td_map_general;

/// Fewest voxels allowed across the diameter of the trial ball.
pub const MIN_CELLS_ACROSS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDeltaSettings {
    pub z: Vec3,
    pub deltas: Vec<f64>,
    /// Trial material `A_z`.
    pub a_z: SymTensor3,
    /// Radius of the closed source/receiver sphere centred at the origin.
    pub radius: f64,
    /// Harmonic degree kept in `E`; the surface rule uses order `n_max + 1`.
    pub n_max: usize,
    /// Voxels across the diameter of each trial ball.
    pub cells_across: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteDeltaSample {
    pub delta: f64,
    pub h: f64,
    pub voxels: usize,
    pub lhs: f64,
    pub td: f64,
    /// `lhs/(δ³·T)`, absent when `T = 0`.
    pub ratio: Option<f64>,
}

/// Traces `u^s(s′)` for every source/receiver pair: entry `(s′, s)`.
fn scattered_traces(solver: &ContrastSolver, surface: &SphereSurface) -> Result<Mat<c64>> {
    let sys = solver.system();
    let (n, ns) = (sys.len(), surface.len());
    let grads = Mat::<c64>::from_fn(3 * n, ns, |r, s| {
        to_c64(grad_phi_unchecked(&sys.bg, &(surface.nodes[s].point - sys.grid.centers[r / 3]))[r % 3])
    });
    let h = solver.apply_mb_columns(&grads)?;
    let vol = sys.grid.cell_volume();
    let recv = Mat::<c64>::from_fn(ns, 3 * n, |s, c| grads.read(c, s) * c64::new(vol, 0.0));
    Ok(&recv * &h)
}

fn check_settings(bg: &Background, cfg: &FiniteDeltaSettings) -> Result<f64> {
    let a = bg
        .a
        .as_isotropic()
        .ok_or_else(|| Error::domain("the finite-δ check needs an isotropic background"))?;
    if cfg.cells_across < MIN_CELLS_ACROSS {
        return Err(Error::Resolution(format!(
            "{} voxels across the trial ball, at least {MIN_CELLS_ACROSS} needed",
            cfg.cells_across
        )));
    }
    if cfg.deltas.is_empty() || cfg.deltas.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::domain("trial sizes must be positive"));
    }
    Ok(bg.kappa / a.sqrt())
}

/// Ratios `LHS/(δ³·T(z))` for each trial size. The solver holds the true scatterer on the
/// [`MbPath::Symmetric`] path; `T` uses the polarization tensor of the same voxelized ball
/// that produces the trial field, so only the expansion error remains.
pub fn td_finite_delta_check(solver: &ContrastSolver, cfg: &FiniteDeltaSettings) -> Result<Vec<FiniteDeltaSample>> {
    let sys = solver.system();
    let bg = &sys.bg;
    let k_eff = check_settings(bg, cfg)?;
    let surface = SphereSurface::centered(cfg.radius, cfg.n_max + 1)?;
    let dist = sys.grid.shape.distance(&cfg.z);
    if let Some(d) = cfg.deltas.iter().find(|&&d| d >= dist) {
        return Err(Error::domain(format!(
            "trial ball of radius {d} at distance {dist} from the scatterer overlaps it"
        )));
    }
    let e = e_matrix(&surface, k_eff, cfg.n_max)?;
    let eu_b = &e * scattered_traces(solver, &surface)?;
    let kernel = ImagingKernel::quadrature(surface.clone());
    let weights: Vec<f64> = surface.nodes.iter().map(|n| n.weight).collect();
    let trial = aniso_contrast(&bg.a, &cfg.a_z)?;

    let mut out = Vec::with_capacity(cfg.deltas.len());
    for &delta in &cfg.deltas {
        let h = 2.0 * delta / cfg.cells_across as f64;
        let grid = voxelize(&Shape::ball(cfg.z, delta), h)?;
        let static_sys = VieSystem::assemble(&grid, &bg.with_kappa(0.0)?)?;
        let mut pt = mz_general_on(&static_sys, &cfg.a_z)?;
        pt.m /= delta.powi(3);
        let td = td_map_general(solver, &trial, &pt, &kernel, &[cfg.z])?.values[0];

        let lhs = if solver.contrast().is_zero() || trial.is_zero() {
            0.0
        } else {
            let trial_sys = VieSystem::assemble(&grid, bg)?;
            let c: Contrast = trial.clone().into();
            let trial_solver = ContrastSolver::new(&trial_sys, &c, MbPath::Symmetric)?;
            let eu_d = &e * scattered_traces(&trial_solver, &surface)?;
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, ws) in weights.iter().enumerate() {
                for (r, wr) in weights.iter().enumerate() {
                    acc += from_c64(eu_d.read(r, s)).conj() * from_c64(eu_b.read(r, s)) * (ws * wr);
                }
            }
            -acc.re
        };
        let denom = delta.powi(3) * td;
        out.push(FiniteDeltaSample {
            delta,
            h,
            voxels: grid.len(),
            lhs,
            td,
            ratio: (denom != 0.0).then(|| lhs / denom),
        });
    }
    Ok(out)
}
