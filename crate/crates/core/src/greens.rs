//! Fundamental solutions of `div(A∇u) + κ²u = −δ` in a homogeneous, possibly
//! anisotropic, background together with the cell integrals used by the volume
//! integral equation.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::materials::{sorted_eigen, spectral_map, SymTensor3};
use crate::quadrature::{adaptive_integrate, sphere_quadrature};
use crate::{to_complex, CMat3, CVec3, Mat3, Vec3};

/// Background medium `(A, κ)` with cached roots of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub a: SymTensor3,
    pub kappa: f64,
    pub sqrt_a: Mat3,
    pub inv_sqrt_a: Mat3,
    pub inv_a: Mat3,
    pub det_a: f64,
}

impl Background {
    pub fn new(a: SymTensor3, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::domain(format!("wavenumber must be finite and ≥ 0, got {kappa}")));
        }
        let (vals, vecs) = a.eigen();
        if vals.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::domain("background tensor is not positive definite"));
        }
        Ok(Self {
            a,
            kappa,
            sqrt_a: spectral_map(&vals, &vecs, f64::sqrt),
            inv_sqrt_a: spectral_map(&vals, &vecs, |v| 1.0 / v.sqrt()),
            inv_a: spectral_map(&vals, &vecs, |v| 1.0 / v),
            det_a: vals.iter().product(),
        })
    }

    pub fn isotropic(a: f64, kappa: f64) -> Result<Self> {
        Self::new(SymTensor3::iso(a), kappa)
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.a, kappa)
    }

    /// `ρ = |A^{−1/2}·r|`.
    pub fn rho(&self, r: &Vec3) -> f64 {
        (self.inv_sqrt_a * r).norm()
    }

    fn prefactor(&self) -> f64 {
        1.0 / (4.0 * PI * self.det_a.sqrt())
    }
}

fn nonzero(r: &Vec3) -> Result<()> {
    if r.norm() == 0.0 || !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Singularity("fundamental solution evaluated at r = 0".into()));
    }
    Ok(())
}

/// `Φ_κ(r) = e^{iκρ}/(4π√det(A)·ρ)`.
pub fn phi(bg: &Background, r: &Vec3) -> Result<Complex64> {
    nonzero(r)?;
    let rho = bg.rho(r);
    Ok(Complex64::new(0.0, bg.kappa * rho).exp() * (bg.prefactor() / rho))
}

/// Gradient of [`phi`] with respect to its argument.
pub fn grad_phi(bg: &Background, r: &Vec3) -> Result<CVec3> {
    nonzero(r)?;
    Ok(grad_phi_unchecked(bg, r))
}

pub(crate) fn grad_phi_unchecked(bg: &Background, r: &Vec3) -> CVec3 {
    let rho = bg.rho(r);
    let f = Complex64::new(0.0, bg.kappa * rho).exp() * (bg.prefactor() / rho);
    let g = f * Complex64::new(-1.0 / rho, bg.kappa);
    let u = bg.inv_a * r / rho;
    u.map(|v| g * v)
}

/// Hessian of [`phi`].
pub fn hess_phi(bg: &Background, r: &Vec3) -> Result<CMat3> {
    nonzero(r)?;
    Ok(hess_phi_with(bg, r, bg.kappa))
}

fn hess_phi_with(bg: &Background, r: &Vec3, kappa: f64) -> CMat3 {
    let rho = bg.rho(r);
    let f = Complex64::new(0.0, kappa * rho).exp() * (bg.prefactor() / rho);
    let s = Complex64::new(-1.0 / rho, kappa);
    let u = bg.inv_a * r / rho;
    let uu = u * u.transpose();
    let radial = f * (s * s + 1.0 / (rho * rho));
    let tangential = f * s / rho;
    to_complex(&(bg.inv_a - uu)) * tangential + to_complex(&uu) * radial
}

/// Hessian of `Φ_κ − Φ_0`, a smooth function.
pub fn hess_phi_dynamic(bg: &Background, r: &Vec3) -> CMat3 {
    if bg.kappa == 0.0 {
        return CMat3::zeros();
    }
    hess_phi_with(bg, r, bg.kappa) - hess_phi_with(bg, r, 0.0)
}

/// Finite-difference estimate of `|div(A∇Φ) + κ²Φ|` at `x`.
pub fn pde_residual(bg: &Background, x: &Vec3, h: f64) -> f64 {
    let a = bg.a.to_matrix();
    let e = [Vec3::x(), Vec3::y(), Vec3::z()];
    let p = |y: Vec3| phi(bg, &y).unwrap_or(Complex64::new(f64::NAN, 0.0));
    let p0 = p(*x);
    let mut lap = Complex64::new(0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            let d2 = if i == j {
                (p(x + e[i] * h) - p0 * 2.0 + p(x - e[i] * h)) / (h * h)
            } else {
                (p(x + (e[i] + e[j]) * h) - p(x + (e[i] - e[j]) * h) - p(x + (e[j] - e[i]) * h)
                    + p(x - (e[i] + e[j]) * h))
                    / (4.0 * h * h)
            };
            lap += d2 * a[(i, j)];
        }
    }
    (lap + p0 * bg.kappa * bg.kappa).norm()
}

/// Depolarization factors `N_k = (a₁a₂a₃/2)∫₀^∞ ds / ((s+a_k²)√Π(s+a_i²))` of an
/// ellipsoid with semi-axes `a`; they sum to one.
pub fn depolarization_factors(semi_axes: &Vec3) -> Vec3 {
    let a2 = semi_axes.map(|v| v * v);
    let c = a2.min();
    let scale = semi_axes.x * semi_axes.y * semi_axes.z / 2.0;
    let mut n = Vec3::zeros();
    for k in 0..3 {
        // s = c(1/u² − 1) maps (0, ∞) to (1, 0) with a polynomial tail at u = 0.
        let integrand = |u: f64| -> f64 {
            if u <= 0.0 {
                return 0.0;
            }
            let s = c * (1.0 / (u * u) - 1.0);
            let jac = 2.0 * c / (u * u * u);
            let prod = (s + a2.x) * (s + a2.y) * (s + a2.z);
            jac / ((s + a2[k]) * prod.sqrt())
        };
        n[k] = scale * adaptive_integrate(&integrand, 0.0, 1.0, 1e-13);
    }
    n
}

/// Depolarization tensor of the ellipsoid `{x : xᵀ·E·x ≤ 1}`.
pub fn depolarization_tensor(form: &Mat3) -> Mat3 {
    let (vals, vecs) = sorted_eigen(form);
    let axes = vals.map(|v| 1.0 / v.sqrt());
    let n = depolarization_factors(&axes);
    vecs * Mat3::from_diagonal(&n) * vecs.transpose()
}

/// Interior action of `∇W_0` on constant densities for the ellipsoid `{xᵀEx ≤ 1}`:
/// `−A^{−1/2}·N'·A^{−1/2}` where `N'` is the depolarization tensor of its image
/// under `A^{−1/2}`.
pub fn static_ellipsoid_action(bg: &Background, form: &Mat3) -> Mat3 {
    let mapped = bg.sqrt_a * form * bg.sqrt_a;
    let n = depolarization_tensor(&(0.5 * (mapped + mapped.transpose())));
    -(bg.inv_sqrt_a * n * bg.inv_sqrt_a)
}

/// Radius of the ball with the volume of a cube of side `h`.
pub fn equivalent_radius(h: f64) -> f64 {
    h * (3.0 / (4.0 * PI)).powf(1.0 / 3.0)
}

/// `∫_{B_ρ} ∇⊗∇(Φ_κ − Φ_0)(y) dy` over the ball of radius `ρ`.
pub fn dynamic_ball_correction(bg: &Background, radius: f64) -> CMat3 {
    if bg.kappa == 0.0 {
        return CMat3::zeros();
    }
    if let Some(a) = bg.a.as_isotropic() {
        let kr = bg.kappa / a.sqrt() * radius;
        let e = Complex64::new(0.0, kr).exp();
        let v = (Complex64::new(1.0, 0.0) - e * Complex64::new(1.0, -kr)) / (3.0 * a);
        return CMat3::identity() * v;
    }
    ball_surface_integral(bg, radius, 24, true)
}

/// `ρ²∫_{S²} ω_j ∂_iΦ(ρω) dω`, the divergence-theorem form of the ball integral of the
/// Hessian. With `dynamic_only` the static kernel is subtracted.
pub fn ball_surface_integral(bg: &Background, radius: f64, order: usize, dynamic_only: bool) -> CMat3 {
    let rule = sphere_quadrature(order, None).expect("positive order");
    let stat = bg.with_kappa(0.0).expect("valid background");
    let mut out = CMat3::zeros();
    for (w, wt) in rule {
        let y = w * radius;
        let mut g = grad_phi_unchecked(bg, &y);
        if dynamic_only {
            g -= grad_phi_unchecked(&stat, &y);
        }
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] += g[i] * (w[j] * wt * radius * radius);
            }
        }
    }
    out
}

/// Self-interaction of one voxel of side `h`: the Eshelby action of the volume-equivalent
/// ball plus the smooth dynamic correction over the same ball.
pub fn cell_self_term(bg: &Background, h: f64) -> CMat3 {
    let r = equivalent_radius(h);
    let form = Mat3::identity() / (r * r);
    to_complex(&static_ellipsoid_action(bg, &form)) + dynamic_ball_correction(bg, r)
}

fn newell_f(x: f64, y: f64, z: f64) -> f64 {
    let (x, y, z) = (x.abs(), y.abs(), z.abs());
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let r = (x2 + y2 + z2).sqrt();
    let mut out = (2.0 * x2 - y2 - z2) * r / 6.0;
    if y > 0.0 && x2 + z2 > 0.0 {
        out += y / 2.0 * (z2 - x2) * (y / (x2 + z2).sqrt()).asinh();
    }
    if z > 0.0 && x2 + y2 > 0.0 {
        out += z / 2.0 * (y2 - x2) * (z / (x2 + y2).sqrt()).asinh();
    }
    if x > 0.0 && y * z > 0.0 {
        out -= x * y * z * (y * z / (x * r)).atan();
    }
    out
}

fn newell_g(x: f64, y: f64, z: f64) -> f64 {
    let sign = x.signum() * y.signum();
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    let (x, y, z) = (x.abs(), y.abs(), z.abs());
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let r = (x2 + y2 + z2).sqrt();
    let mut out = -x * y * r / 3.0;
    if z > 0.0 {
        out += x * y * z * (z / (x2 + y2).sqrt()).asinh();
        out -= z * z2 / 6.0 * (x * y / (z * r)).atan();
        out -= z * y2 / 2.0 * (x * z / (y * r)).atan();
        out -= z * x2 / 2.0 * (y * z / (x * r)).atan();
    }
    out += y / 6.0 * (3.0 * z2 - y2) * (x / (y2 + z2).sqrt()).asinh();
    out += x / 6.0 * (3.0 * z2 - x2) * (y / (x2 + z2).sqrt()).asinh();
    sign * out
}

/// Cell-averaged demagnetizing tensor between two cuboids of sides `sides` whose
/// centers differ by `offset` (Newell's formulas). Equals `I/3` for coincident cubes.
pub fn newell_tensor(offset: &Vec3, sides: &Vec3) -> Mat3 {
    let weight = |e: i32| if e == 0 { 2.0 } else { -1.0 };
    let mut n = Mat3::zeros();
    for ex in -1..=1 {
        for ey in -1..=1 {
            for ez in -1..=1 {
                let w = weight(ex) * weight(ey) * weight(ez);
                let p = Vec3::new(
                    offset.x + ex as f64 * sides.x,
                    offset.y + ey as f64 * sides.y,
                    offset.z + ez as f64 * sides.z,
                );
                n[(0, 0)] += w * newell_f(p.x, p.y, p.z);
                n[(1, 1)] += w * newell_f(p.y, p.z, p.x);
                n[(2, 2)] += w * newell_f(p.z, p.x, p.y);
                n[(0, 1)] += w * newell_g(p.x, p.y, p.z);
                n[(0, 2)] += w * newell_g(p.x, p.z, p.y);
                n[(1, 2)] += w * newell_g(p.y, p.z, p.x);
            }
        }
    }
    n[(1, 0)] = n[(0, 1)];
    n[(2, 0)] = n[(0, 2)];
    n[(2, 1)] = n[(1, 2)];
    n / (4.0 * PI * sides.x * sides.y * sides.z)
}

/// Lattice offsets (Chebyshev radius) that receive cell-averaged static entries.
pub const NEAR_RADIUS: i32 = 2;

/// How the static part of the near-field blocks is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NearField {
    /// Exact cell-averaged cuboid integrals for offsets within [`NEAR_RADIUS`]
    /// (available when `A` is diagonal); midpoint rule with the ball self-term otherwise.
    CellAveraged,
    /// Midpoint rule everywhere with the ball self-term on the diagonal.
    Midpoint,
}

/// Block of the discretized `∇W_κ` coupling two voxels whose lattice indices differ by
/// `d`.
pub fn cell_block(bg: &Background, d: [i32; 3], h: f64, scheme: NearField) -> CMat3 {
    let r = Vec3::new(d[0] as f64, d[1] as f64, d[2] as f64) * h;
    let cheb = d.iter().map(|v| v.abs()).max().unwrap_or(0);
    let averaged = scheme == NearField::CellAveraged && bg.a.is_diagonal() && cheb <= NEAR_RADIUS;
    if averaged {
        let scale = bg.inv_sqrt_a.diagonal();
        let n = newell_tensor(&r.component_mul(&scale), &(scale * h));
        let stat = -(bg.inv_sqrt_a * n * bg.inv_sqrt_a);
        let dynamic = if cheb == 0 {
            dynamic_ball_correction(bg, equivalent_radius(h))
        } else {
            hess_phi_dynamic(bg, &r) * Complex64::new(h.powi(3), 0.0)
        };
        return to_complex(&stat) + dynamic;
    }
    if cheb == 0 {
        return cell_self_term(bg, h);
    }
    hess_phi_with(bg, &r, bg.kappa) * Complex64::new(h.powi(3), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cmax(m: &CMat3) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_spd(d: [f64; 3], ang: [f64; 3]) -> SymTensor3 {
        let r = *nalgebra::Rotation3::from_euler_angles(ang[0], ang[1], ang[2]).matrix();
        let m = r * Mat3::from_diagonal(&Vec3::from(d)) * r.transpose();
        SymTensor3::from_matrix(&(0.5 * (m + m.transpose()))).unwrap()
    }

    #[test]
    fn phi_examples() {
        let bg = Background::isotropic(1.0, 0.0).unwrap();
        assert_relative_eq!(phi(&bg, &Vec3::x()).unwrap().re, 1.0 / (4.0 * PI), epsilon = 1e-16);
        let bg1 = Background::isotropic(1.0, 1.0).unwrap();
        let expect = Complex64::new(0.0, 1.0).exp() / (4.0 * PI);
        assert!((phi(&bg1, &Vec3::x()).unwrap() - expect).norm() < 1e-16);
        let bg4 = Background::isotropic(4.0, 0.0).unwrap();
        assert_relative_eq!(phi(&bg4, &Vec3::z()).unwrap().re, 1.0 / (16.0 * PI), epsilon = 1e-16);
        assert!(matches!(phi(&bg, &Vec3::zeros()), Err(Error::Singularity(_))));
        // Isotropic normalization: e^{i(κ/√a)|r|}/(4πa|r|).
        let bga = Background::isotropic(2.5, 1.3).unwrap();
        let r = Vec3::new(0.3, 0.4, -1.2);
        let k = 1.3 / 2.5f64.sqrt();
        let expect = Complex64::new(0.0, k * r.norm()).exp() / (4.0 * PI * 2.5 * r.norm());
        assert!((phi(&bga, &r).unwrap() - expect).norm() < 1e-15);
    }

    #[test]
    fn grad_phi_examples() {
        let bg = Background::isotropic(1.0, 0.0).unwrap();
        let g = grad_phi(&bg, &Vec3::x()).unwrap();
        assert_relative_eq!(g[0].re, -1.0 / (4.0 * PI), epsilon = 1e-16);
        assert_eq!((g[1], g[2]), (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn pde_residual_examples() {
        let bg = Background::isotropic(1.0, 1.0).unwrap();
        let x = Vec3::new(2.0, 0.0, 0.0);
        let tol = 1e-4 * phi(&bg, &x).unwrap().norm();
        assert!(pde_residual(&bg, &x, 1e-3) < tol);

        let bg = Background::new(SymTensor3::diag(1.0, 2.0, 3.0), 1.5).unwrap();
        let x = Vec3::new(1.2, -1.0, 1.1).normalize() * 2.0;
        let tol = 1e-4 * phi(&bg, &x).unwrap().norm() * 1.5 * 1.5;
        assert!(pde_residual(&bg, &x, 1e-3) < tol);
    }

    #[test]
    fn depolarization_of_sphere_and_spheroids() {
        let n = depolarization_factors(&Vec3::new(1.0, 1.0, 1.0));
        assert_relative_eq!(n, Vec3::repeat(1.0 / 3.0), epsilon = 1e-12);
        // Prolate spheroid closed form, eccentricity e.
        let (a, b) = (2.0f64, 1.0f64);
        let e = (1.0 - b * b / (a * a)).sqrt();
        let nz = (1.0 - e * e) / (e * e) * (((1.0 + e) / (1.0 - e)).ln() / (2.0 * e) - 1.0);
        let n = depolarization_factors(&Vec3::new(a, b, b));
        assert_relative_eq!(n[0], nz, epsilon = 1e-11);
        assert_relative_eq!(n.sum(), 1.0, epsilon = 1e-11);
        let n = depolarization_factors(&Vec3::new(0.3, 1.0, 4.0));
        assert_relative_eq!(n.sum(), 1.0, epsilon = 1e-11);
        assert!(n[0] > n[1] && n[1] > n[2]);
    }

    #[test]
    fn self_term_isotropic_static() {
        for &a in &[1.0, 2.0, 0.5] {
            let bg = Background::isotropic(a, 0.0).unwrap();
            for &h in &[0.01, 0.1, 1.0] {
                let s = cell_self_term(&bg, h);
                let expect = to_complex(&(-Mat3::identity() / (3.0 * a)));
                assert!(cmax(&(s - expect)) < 1e-12);
            }
        }
    }

    #[test]
    fn dynamic_correction_vanishes_with_kappa() {
        let mut prev = f64::INFINITY;
        for &k in &[1.0, 0.1, 0.01, 0.0] {
            let bg = Background::isotropic(1.0, k).unwrap();
            let c = cmax(&dynamic_ball_correction(&bg, 0.05));
            assert!(c <= prev);
            prev = c;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn dynamic_closed_form_matches_surface_integral() {
        let bg = Background::isotropic(1.7, 2.3).unwrap();
        let closed = dynamic_ball_correction(&bg, 0.3);
        let quad = ball_surface_integral(&bg, 0.3, 24, true);
        assert!(cmax(&(closed - quad)) < 1e-12);
    }

    #[test]
    fn anisotropic_self_term_matches_brute_force() {
        let a = random_spd([1.0, 2.0, 3.0], [0.3, -0.7, 1.1]);
        let bg = Background::new(a, 0.0).unwrap();
        let h = 0.1;
        let r = equivalent_radius(h);
        let closed = cell_self_term(&bg, h);
        let brute = ball_surface_integral(&bg, r, 40, false);
        assert!(cmax(&(closed - brute)) < 1e-9, "{closed} {brute}");
        // Eshelby tensor times A^{-1}: the trace of A^{1/2}(−S)A^{1/2} equals −1.
        let t = (bg.sqrt_a * closed.map(|z| z.re) * bg.sqrt_a).trace();
        assert_relative_eq!(t, -1.0, epsilon = 1e-10);

        let bgk = Background::new(a, 1.7).unwrap();
        let closed = cell_self_term(&bgk, h);
        let brute = ball_surface_integral(&bgk, r, 40, false);
        assert!(cmax(&(closed - brute)) < 1e-9);
    }

    #[test]
    fn newell_limits() {
        let h = Vec3::repeat(1.0);
        assert_relative_eq!(newell_tensor(&Vec3::zeros(), &h), Mat3::identity() / 3.0, epsilon = 1e-13);
        // Far offsets approach the point-dipole kernel.
        let d = Vec3::new(5.0, 2.0, 3.0);
        let r = d.norm();
        let dh = d / r;
        let dipole = -(3.0 * dh * dh.transpose() - Mat3::identity()) / (4.0 * PI * r.powi(3));
        let n = newell_tensor(&d, &h);
        assert!((n - dipole).amax() < 5e-3 * dipole.amax());
        // Cuboid traces sum to one.
        let n = newell_tensor(&Vec3::zeros(), &Vec3::new(1.0, 0.5, 2.0));
        assert_relative_eq!(n.trace(), 1.0, epsilon = 1e-12);
        let n2 = newell_tensor(&Vec3::new(1.0, -1.0, 0.0), &h);
        assert_relative_eq!(n2, n2.transpose(), epsilon = 1e-15);
        assert_relative_eq!(n2, newell_tensor(&Vec3::new(-1.0, 1.0, 0.0), &h), epsilon = 1e-13);
    }

    #[test]
    fn cell_blocks_agree_far_away() {
        let bg = Background::new(SymTensor3::diag(1.0, 2.0, 0.5), 0.7).unwrap();
        let h = 0.1;
        let d = [2, 1, -2];
        let averaged = cell_block(&bg, d, h, NearField::CellAveraged);
        let mid = cell_block(&bg, d, h, NearField::Midpoint);
        assert!(cmax(&(averaged - mid)) < 0.1 * cmax(&mid));
        let diag = cell_block(&bg, [0, 0, 0], h, NearField::CellAveraged);
        let t = (bg.sqrt_a * diag.map(|z| z.re) * bg.sqrt_a).trace();
        assert_relative_eq!(t, -1.0, epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn grad_matches_finite_differences(
            d in prop::array::uniform3(0.3f64..3.0),
            ang in prop::array::uniform3(-3.2f64..3.2),
            r in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let r = Vec3::from(r);
            prop_assume!(r.norm() > 0.3);
            let bg = Background::new(random_spd(d, ang), 2.0).unwrap();
            let g = grad_phi(&bg, &r).unwrap();
            let step = 1e-5;
            let mut fd = CVec3::zeros();
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = step;
                fd[i] = (phi(&bg, &(r + e)).unwrap() - phi(&bg, &(r - e)).unwrap()) / (2.0 * step);
            }
            prop_assert!((g - fd).norm() / g.norm() < 1e-6);
            let gm = grad_phi(&bg, &(-r)).unwrap();
            prop_assert!((g + gm).norm() <= 1e-14 * g.norm());
        }

        #[test]
        fn hessian_matches_finite_differences(
            d in prop::array::uniform3(0.3f64..3.0),
            ang in prop::array::uniform3(-3.2f64..3.2),
            r in prop::array::uniform3(-2.0f64..2.0),
            k in 0.0f64..3.0,
        ) {
            let r = Vec3::from(r);
            prop_assume!(r.norm() > 0.3);
            let bg = Background::new(random_spd(d, ang), k).unwrap();
            let hs = hess_phi(&bg, &r).unwrap();
            let step = 1e-5;
            for j in 0..3 {
                let mut e = Vec3::zeros();
                e[j] = step;
                let col = (grad_phi(&bg, &(r + e)).unwrap() - grad_phi(&bg, &(r - e)).unwrap()) * Complex64::new(0.5 / step, 0.0);
                for i in 0..3 {
                    prop_assert!((hs[(i, j)] - col[i]).norm() < 1e-6 * cmax(&hs));
                }
            }
        }

        #[test]
        fn kernel_is_even(r in prop::array::uniform3(-3.0f64..3.0), k in 0.0f64..4.0) {
            let r = Vec3::from(r);
            prop_assume!(r.norm() > 1e-3);
            let bg = Background::new(SymTensor3::new(2.0, 1.0, 1.5, 0.2, 0.1, -0.3), k).unwrap();
            prop_assert_eq!(phi(&bg, &r).unwrap(), phi(&bg, &(-r)).unwrap());
        }

        #[test]
        fn anisotropic_reduces_to_isotropic(r in prop::array::uniform3(-3.0f64..3.0), a in 0.2f64..5.0) {
            let r = Vec3::from(r);
            prop_assume!(r.norm() > 1e-3);
            let bg = Background::new(SymTensor3::iso(a), 1.1).unwrap();
            let k = 1.1 / a.sqrt();
            let expect = Complex64::new(0.0, k * r.norm()).exp() / (4.0 * PI * a * r.norm());
            prop_assert!((phi(&bg, &r).unwrap() - expect).norm() <= 1e-14 * expect.norm());
        }

        #[test]
        fn static_kernel_is_harmonic(
            d in prop::array::uniform3(0.3f64..3.0),
            ang in prop::array::uniform3(-3.2f64..3.2),
            x in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let x = Vec3::from(x);
            prop_assume!(x.norm() > 1.0);
            let bg = Background::new(random_spd(d, ang), 0.0).unwrap();
            let tol = 1e-6 * phi(&bg, &x).unwrap().norm() / x.norm_squared();
            prop_assert!(pde_residual(&bg, &x, 2e-4) < tol);
        }
    }
}
