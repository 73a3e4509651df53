//! Polarization tensors of normalized trial inhomogeneities and the factors that enter the
//! symmetric forms of the topological derivative.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::greens::{static_ellipsoid_action, Background};
use crate::materials::{aniso_contrast, choleski_sqrt, complex_choleski, AnisoContrast, Contrast, IsoContrast, SymTensor3};
use crate::vie::{ContrastSolver, MbPath, VieSystem};
use crate::voxel::ScattererGrid;
use crate::{to_complex, CMat3, CVec3, Mat3, Vec3};

/// Polarization tensor `M_z` of a trial inclusion together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationTensor {
    pub m: Mat3,
    pub a: SymTensor3,
    pub a_z: SymTensor3,
    pub volume: f64,
    /// `‖M − Mᵀ‖/‖M‖` before symmetrization (zero for closed forms).
    pub asymmetry: f64,
}

/// `M_z = (4πa·β_z/(β_z+3))·I` for the unit ball in an isotropic medium.
pub fn mz_ball_iso(a: f64, beta_z: f64) -> Result<PolarizationTensor> {
    let c = IsoContrast::from_beta(a, beta_z)?;
    Ok(PolarizationTensor {
        m: Mat3::identity() * (4.0 * PI * a * beta_z / (beta_z + 3.0)),
        a: SymTensor3::iso(a),
        a_z: SymTensor3::iso(c.a_tilde),
        volume: 4.0 * PI / 3.0,
        asymmetry: 0.0,
    })
}

fn ellipsoid_volume(form: &Mat3) -> f64 {
    4.0 * PI / 3.0 / form.determinant().sqrt()
}

fn axis_form(semi_axes: &Vec3) -> Result<Mat3> {
    if semi_axes.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::domain("ellipsoid semi-axes must be positive"));
    }
    Ok(Mat3::from_diagonal(&semi_axes.map(|s| 1.0 / (s * s))))
}

/// Closed form for the axis-aligned ellipsoid with the given semi-axes.
pub fn mz_ellipsoid(a: &SymTensor3, a_z: &SymTensor3, semi_axes: &Vec3) -> Result<PolarizationTensor> {
    mz_ellipsoid_form(a, a_z, &axis_form(semi_axes)?)
}

/// Closed form `|𝓑|·(I + (A_z−A)·S·A^{−1})^{−1}·(A_z−A)` for the ellipsoid `{xᵀEx ≤ 1}`.
pub fn mz_ellipsoid_form(a: &SymTensor3, a_z: &SymTensor3, form: &Mat3) -> Result<PolarizationTensor> {
    a.require_spd("background tensor A")?;
    a_z.require_spd("trial tensor A_z")?;
    let bg = Background::new(*a, 0.0)?;
    let s_ainv = -static_ellipsoid_action(&bg, form);
    let jump = a_z.to_matrix() - a.to_matrix();
    let k = Mat3::identity() + jump * s_ainv;
    let inv = k
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular polarization system".into()))?;
    let volume = ellipsoid_volume(form);
    let m = inv * jump * volume;
    Ok(PolarizationTensor {
        m: 0.5 * (m + m.transpose()),
        a: *a,
        a_z: *a_z,
        volume,
        asymmetry: 0.0,
    })
}

/// `Y_z = |𝓑|·(I − σ_z·q_z·R_c·q_zᵀ·σ_z)^{−1}` with `R_c = I − 2N'` the action of `R_0` on
/// constants inside the ellipsoid.
pub fn ellipsoid_y(a: &SymTensor3, trial: &AnisoContrast, form: &Mat3) -> Result<CMat3> {
    let bg = Background::new(*a, 0.0)?;
    let n_prime = -(bg.sqrt_a * static_ellipsoid_action(&bg, form) * bg.sqrt_a);
    let rc = to_complex(&(Mat3::identity() - 2.0 * n_prime));
    let p = trial.p_factor();
    let k = CMat3::identity() - p * rc * p.transpose();
    let inv = k
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular normalized polarization system".into()))?;
    Ok(inv * Complex64::new(ellipsoid_volume(form), 0.0))
}

/// The same tensor through the sign-revealing factorization,
/// `M_z = 2A^{1/2}q_zᵀσ_z·Y_z·σ_zq_zA^{1/2}`.
pub fn mz_ellipsoid_factorized(a: &SymTensor3, a_z: &SymTensor3, form: &Mat3) -> Result<PolarizationTensor> {
    let trial = aniso_contrast(a, a_z)?;
    let y = ellipsoid_y(a, &trial, form)?;
    let w = trial.p_factor() * to_complex(&a.sqrt()?);
    let m = w.transpose() * y * w * Complex64::new(2.0, 0.0);
    let im = m.map(|z| z.im).amax();
    let re = m.map(|z| z.re);
    if im > 1e-10 * re.amax().max(1e-300) {
        return Err(Error::domain("factorized polarization tensor is not real"));
    }
    Ok(PolarizationTensor {
        m: 0.5 * (re + re.transpose()),
        a: *a,
        a_z: *a_z,
        volume: ellipsoid_volume(form),
        asymmetry: 0.0,
    })
}

/// Quadrature definition: the static contrast solve on the voxelized shape applied to the
/// three constant fields, integrated over the shape and symmetrized.
pub fn mz_general(a: &SymTensor3, a_z: &SymTensor3, grid: &ScattererGrid) -> Result<PolarizationTensor> {
    let bg = Background::new(*a, 0.0)?;
    let sys = VieSystem::assemble(grid, &bg)?;
    mz_general_on(&sys, a_z)
}

/// [`mz_general`] on an already assembled static system.
pub fn mz_general_on(sys: &VieSystem, a_z: &SymTensor3) -> Result<PolarizationTensor> {
    if sys.bg.kappa != 0.0 {
        return Err(Error::domain("polarization tensors use the static system"));
    }
    let a = sys.bg.a;
    let contrast: Contrast = aniso_contrast(&a, a_z)?.into();
    let mut m = Mat3::zeros();
    if !contrast.is_zero() {
        let solver = ContrastSolver::new(sys, &contrast, MbPath::Symmetric)?;
        for k in 0..3 {
            let mut e = CVec3::zeros();
            e[k] = Complex64::new(1.0, 0.0);
            let h = solver.apply_mb(&vec![e; sys.len()])?;
            let total: CVec3 = h.iter().sum::<CVec3>() * Complex64::new(sys.grid.cell_volume(), 0.0);
            for i in 0..3 {
                m[(i, k)] = total[i].re;
            }
        }
    }
    let norm = m.norm();
    let asymmetry = if norm > 0.0 { (m - m.transpose()).norm() / norm } else { 0.0 };
    Ok(PolarizationTensor {
        m: 0.5 * (m + m.transpose()),
        a,
        a_z: *a_z,
        volume: sys.grid.volume(),
        asymmetry,
    })
}

impl PolarizationTensor {
    /// Real `D_z` with `M_z = 2a·q_z·D_zᵀD_z` for an isotropic trial material in an
    /// isotropic background.
    pub fn dz_iso(&self, q_z: f64) -> Result<Mat3> {
        let a = self
            .a
            .as_isotropic()
            .ok_or_else(|| Error::domain("isotropic factor needs an isotropic background"))?;
        if q_z == 0.0 {
            return Err(Error::Degenerate("zero trial contrast has no factor".into()));
        }
        let l = choleski_sqrt(&(self.m / (2.0 * a * q_z))).map_err(|_| {
            Error::Domain("(2a·q_z)^{-1}·M_z is not positive definite: moderate-trial condition violated".into())
        })?;
        Ok(l.transpose())
    }

    /// Complex-symmetric `D_z` with `D_zᵀD_z = Y_z`, where `M_z = 2Wᵀ·Y_z·W` and
    /// `W = σ_z·q_z·A^{1/2}`.
    pub fn dz_aniso(&self, trial: &AnisoContrast) -> Result<CMat3> {
        let w = trial.p_factor() * to_complex(&self.a.sqrt()?);
        let winv = w
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("trial contrast factor is singular".into()))?;
        let y = winv.transpose() * to_complex(&self.m) * winv * Complex64::new(0.5, 0.0);
        let y = (y + y.transpose()) * Complex64::new(0.5, 0.0);
        Ok(complex_choleski(&y)?.transpose())
    }

    /// A factor `Z` with `2ZᵀZ = M_z` built from `D_z·σ_z·q_z·A^{1/2}` when the trial contrast
    /// is invertible, and from a complex Choleski factor of `M_z/2` otherwise.
    pub fn z_factor(&self, trial: &AnisoContrast) -> Result<CMat3> {
        if self.m.amax() == 0.0 {
            return Ok(CMat3::zeros());
        }
        match self.dz_aniso(trial) {
            Ok(d) => Ok(d * trial.p_factor() * to_complex(&self.a.sqrt()?)),
            Err(_) => Ok(complex_choleski(&to_complex(&(self.m * 0.5)))?.transpose()),
        }
    }

    pub fn eigenvalues(&self) -> Vec3 {
        crate::materials::sorted_eigen(&self.m).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{voxelize, Shape};
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    #[test]
    fn ball_closed_form() {
        let p = mz_ball_iso(1.0, 1.0).unwrap();
        assert_eq!(p.m, Mat3::identity() * PI);
        assert_eq!(mz_ball_iso(1.0, 0.0).unwrap().m, Mat3::zeros());
        let big = mz_ball_iso(1.0, 1e12).unwrap();
        assert_relative_eq!(big.m, Mat3::identity() * 4.0 * PI, max_relative = 1e-10);
        assert!(mz_ball_iso(1.0, -1.0).is_err());
        let q_z = 1.0 / 3.0;
        let d = p.dz_iso(q_z).unwrap();
        assert_relative_eq!(d, Mat3::identity() * (1.5 * PI).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(d.transpose() * d * 2.0 * q_z, p.m, epsilon = 1e-12);
        for beta in [-0.5, 0.5, 2.0] {
            let e = mz_ball_iso(1.3, beta).unwrap().eigenvalues();
            assert!(e.iter().all(|v| v.signum() == beta.signum()));
        }
    }

    #[test]
    fn sphere_matches_ball() {
        for (a, az) in [(1.0, 2.0), (2.0, 0.7), (0.5, 0.5)] {
            let ball = mz_ball_iso(a, az / a - 1.0).unwrap();
            let ell = mz_ellipsoid(&SymTensor3::iso(a), &SymTensor3::iso(az), &Vec3::repeat(1.0)).unwrap();
            assert_relative_eq!(ball.m, ell.m, epsilon = 1e-12 * ball.m.amax().max(1.0));
            let fac = mz_ellipsoid_factorized(&SymTensor3::iso(a), &SymTensor3::iso(az), &Mat3::identity()).unwrap();
            assert_relative_eq!(ball.m, fac.m, epsilon = 1e-12 * ball.m.amax().max(1.0));
        }
        let same = mz_ellipsoid(&SymTensor3::diag(1.0, 2.0, 3.0), &SymTensor3::diag(1.0, 2.0, 3.0), &Vec3::new(1.0, 2.0, 0.5)).unwrap();
        assert_eq!(same.m, Mat3::zeros());
    }

    #[test]
    fn factorized_form_matches_direct_for_anisotropic_data() {
        let a = SymTensor3::new(1.0, 2.0, 1.5, 0.2, -0.1, 0.3);
        let az = SymTensor3::new(2.0, 0.8, 1.5, 0.0, 0.2, -0.1);
        let form = axis_form(&Vec3::new(1.0, 0.6, 1.4)).unwrap();
        let direct = mz_ellipsoid_form(&a, &az, &form).unwrap();
        let fac = mz_ellipsoid_factorized(&a, &az, &form).unwrap();
        assert_relative_eq!(direct.m, fac.m, epsilon = 1e-11 * direct.m.amax());
        let trial = aniso_contrast(&a, &az).unwrap();
        let z = direct.z_factor(&trial).unwrap();
        let back = (z.transpose() * z * Complex64::new(2.0, 0.0)).map(|c| c.re);
        assert_relative_eq!(back, direct.m, epsilon = 1e-10 * direct.m.amax());
        let y = ellipsoid_y(&a, &trial, &form).unwrap();
        let d = direct.dz_aniso(&trial).unwrap();
        assert!((d.transpose() * d - y).iter().all(|c| c.norm() < 1e-10 * y.norm()));
    }

    #[test]
    fn frame_covariance() {
        let a = SymTensor3::diag(1.0, 2.0, 3.0);
        let az = SymTensor3::new(2.0, 1.0, 0.5, 0.3, 0.0, 0.1);
        let axes = Vec3::new(1.0, 0.5, 0.8);
        let form = axis_form(&axes).unwrap();
        let base = mz_ellipsoid_form(&a, &az, &form).unwrap().m;
        let r = *Rotation3::from_euler_angles(0.4, -1.1, 2.0).matrix();
        let rot = |m: &Mat3| SymTensor3::from_matrix(&(r * m * r.transpose())).unwrap();
        let rotated = mz_ellipsoid_form(&rot(&a.to_matrix()), &rot(&az.to_matrix()), &(r * form * r.transpose()))
            .unwrap()
            .m;
        assert_relative_eq!(rotated, r * base * r.transpose(), epsilon = 1e-10 * base.amax());
    }

    #[test]
    fn general_matches_closed_form_on_coarse_ball() {
        let grid = voxelize(&Shape::ball(Vec3::zeros(), 1.0), 0.2).unwrap();
        let p = mz_general(&SymTensor3::iso(1.0), &SymTensor3::iso(2.0), &grid).unwrap();
        // The staircase volume is a few percent short at this resolution.
        let exact = PI * grid.volume() / (4.0 * PI / 3.0);
        assert!((p.m - Mat3::identity() * exact).amax() < 0.02 * exact, "{}", p.m);
        assert!(p.asymmetry < 1e-8);
        let zero = mz_general(&SymTensor3::iso(1.0), &SymTensor3::iso(1.0), &grid).unwrap();
        assert_eq!(zero.m, Mat3::zeros());
    }

    #[test]
    fn dz_rejects_indefinite_iso_factor() {
        let p = mz_ball_iso(1.0, 1.0).unwrap();
        assert!(p.dz_iso(-0.2).is_err());
        assert!(p.dz_iso(0.0).is_err());
    }

    #[test]
    fn dz_round_trip_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = Mat3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let m = b * b.transpose() + Mat3::identity() * 0.1;
            let q_z: f64 = rng.random::<f64>() * 0.9 + 0.05;
            let p = PolarizationTensor {
                m,
                a: SymTensor3::iso(1.0),
                a_z: SymTensor3::iso(1.0),
                volume: 1.0,
                asymmetry: 0.0,
            };
            let d = p.dz_iso(q_z).unwrap();
            assert_relative_eq!(d.transpose() * d * 2.0 * q_z, m, epsilon = 1e-12 * m.amax());
        }
    }
}
