//! Constitutive tensors and the contrast parameters derived from them.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::{CMat3, Mat3, Vec3};

const SYMMETRY_TOL: f64 = 1e-12;
const ZERO_EIGEN_TOL: f64 = 1e-14;

/// Real symmetric 3×3 tensor stored as its six independent entries
/// `[xx, yy, zz, xy, xz, yz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor3 {
    entries: [f64; 6],
}

impl SymTensor3 {
    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64, xz: f64, yz: f64) -> Self {
        Self {
            entries: [xx, yy, zz, xy, xz, yz],
        }
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Self::new(a, b, c, 0.0, 0.0, 0.0)
    }

    pub fn iso(a: f64) -> Self {
        Self::diag(a, a, a)
    }

    pub fn identity() -> Self {
        Self::iso(1.0)
    }

    /// Accepts a matrix that is symmetric up to `1e-12` relative to its largest entry.
    pub fn from_matrix(m: &Mat3) -> Result<Self> {
        check_symmetric(m)?;
        Ok(Self::new(
            m[(0, 0)],
            m[(1, 1)],
            m[(2, 2)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            0.5 * (m[(1, 2)] + m[(2, 1)]),
        ))
    }

    pub fn entries(&self) -> [f64; 6] {
        self.entries
    }

    pub fn to_matrix(&self) -> Mat3 {
        let [xx, yy, zz, xy, xz, yz] = self.entries;
        Mat3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// Eigenvalues (ascending) and the matching orthonormal eigenvectors as columns.
    pub fn eigen(&self) -> (Vec3, Mat3) {
        sorted_eigen(&self.to_matrix())
    }

    pub fn is_positive_definite(&self) -> bool {
        let (vals, _) = self.eigen();
        vals.iter().all(|&v| v > 0.0 && v.is_finite())
    }

    /// Returns the scalar `a` when the tensor equals `a·I` exactly.
    pub fn as_isotropic(&self) -> Option<f64> {
        let [xx, yy, zz, xy, xz, yz] = self.entries;
        (xx == yy && yy == zz && xy == 0.0 && xz == 0.0 && yz == 0.0).then_some(xx)
    }

    pub fn is_diagonal(&self) -> bool {
        let [_, _, _, xy, xz, yz] = self.entries;
        xy == 0.0 && xz == 0.0 && yz == 0.0
    }

    pub fn det(&self) -> f64 {
        self.to_matrix().determinant()
    }

    pub(crate) fn require_spd(&self, what: &str) -> Result<(Vec3, Mat3)> {
        let (vals, vecs) = self.eigen();
        if vals.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "{what} is not positive definite (eigenvalues {:?})",
                vals.as_slice()
            )));
        }
        Ok((vals, vecs))
    }

    /// Symmetric positive-definite square root.
    pub fn sqrt(&self) -> Result<Mat3> {
        let (vals, vecs) = self.require_spd("tensor")?;
        Ok(spectral_map(&vals, &vecs, f64::sqrt))
    }

    pub fn inv_sqrt(&self) -> Result<Mat3> {
        let (vals, vecs) = self.require_spd("tensor")?;
        Ok(spectral_map(&vals, &vecs, |v| 1.0 / v.sqrt()))
    }
}

pub(crate) fn check_symmetric(m: &Mat3) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if !m.iter().all(|v| v.is_finite()) || asym > SYMMETRY_TOL * scale {
        return Err(Error::domain(format!(
            "matrix is not symmetric (asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

pub(crate) fn sorted_eigen(m: &Mat3) -> (Vec3, Mat3) {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = Vec3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    let vecs = Mat3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    (vals, vecs)
}

pub(crate) fn spectral_map(vals: &Vec3, vecs: &Mat3, f: impl Fn(f64) -> f64) -> Mat3 {
    let d = Mat3::from_diagonal(&vals.map(f));
    let m = vecs * d * vecs.transpose();
    0.5 * (m + m.transpose())
}

/// Scalar contrast between an isotropic background `a` and inclusion `ã`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoContrast {
    pub a: f64,
    pub a_tilde: f64,
    pub beta: f64,
    pub q: f64,
}

pub fn iso_contrast(a: f64, a_tilde: f64) -> Result<IsoContrast> {
    if !(a > 0.0) || !(a_tilde > 0.0) || !a.is_finite() || !a_tilde.is_finite() {
        return Err(Error::domain(format!(
            "material coefficients must be positive (a = {a}, ã = {a_tilde})"
        )));
    }
    let beta = a_tilde / a - 1.0;
    Ok(IsoContrast {
        a,
        a_tilde,
        beta,
        q: beta / (beta + 2.0),
    })
}

impl IsoContrast {
    /// Contrast with `β` prescribed directly.
    pub fn from_beta(a: f64, beta: f64) -> Result<Self> {
        if !(beta > -1.0) || !beta.is_finite() {
            return Err(Error::domain(format!("β = {beta} must exceed −1")));
        }
        iso_contrast(a, a * (1.0 + beta))
    }

    /// Sign multiplier `σ` with `σ² = sign(q)`.
    pub fn sigma(&self) -> Complex64 {
        sigma_of(self.q)
    }

    pub fn to_aniso(&self) -> Result<AnisoContrast> {
        aniso_contrast(&SymTensor3::iso(self.a), &SymTensor3::iso(self.a_tilde))
    }
}

/// Tensor contrast together with its sign-revealing factorization `Q = qᵀ·σ²·q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisoContrast {
    pub a: SymTensor3,
    pub a_tilde: SymTensor3,
    pub beta_t: Mat3,
    pub q_tensor: Mat3,
    pub q_mat: Mat3,
    pub sigma2: Vec3,
}

pub fn aniso_contrast(a: &SymTensor3, a_tilde: &SymTensor3) -> Result<AnisoContrast> {
    a.require_spd("background tensor A")?;
    a_tilde.require_spd("inclusion tensor Ã")?;
    let inv_sqrt = a.inv_sqrt()?;
    let diff = a_tilde.to_matrix() - a.to_matrix();
    let beta = inv_sqrt * diff * inv_sqrt;
    let beta = 0.5 * (beta + beta.transpose());
    let (mu, v) = sorted_eigen(&beta);
    let q_tensor = spectral_map(&mu, &v, |m| m / (m + 2.0));
    let (q_mat, sigma2) = factor_q(&q_tensor)?;
    Ok(AnisoContrast {
        a: *a,
        a_tilde: *a_tilde,
        beta_t: beta,
        q_tensor,
        q_mat,
        sigma2,
    })
}

impl AnisoContrast {
    /// `Ã − A`.
    pub fn jump(&self) -> Mat3 {
        self.a_tilde.to_matrix() - self.a.to_matrix()
    }

    pub fn sigma(&self) -> CMat3 {
        CMat3::from_diagonal(&self.sigma2.map(sigma_of))
    }

    /// `σ·q`, the per-voxel factor of the symmetric solution operator.
    pub fn p_factor(&self) -> CMat3 {
        self.sigma() * crate::to_complex(&self.q_mat)
    }

    pub fn is_zero(&self) -> bool {
        self.sigma2.iter().all(|&s| s == 0.0)
    }

    /// `+1` or `−1` when all nonzero entries of `σ²` share one sign, `0` when the
    /// contrast is zero, `None` for mixed signs.
    pub fn uniform_sign(&self) -> Option<f64> {
        let pos = self.sigma2.iter().any(|&s| s > 0.0);
        let neg = self.sigma2.iter().any(|&s| s < 0.0);
        match (pos, neg) {
            (true, true) => None,
            (true, false) => Some(1.0),
            (false, true) => Some(-1.0),
            (false, false) => Some(0.0),
        }
    }
}

/// Either kind of contrast, as accepted by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum Contrast {
    Iso(IsoContrast),
    Aniso(AnisoContrast),
}

impl Contrast {
    pub fn background(&self) -> SymTensor3 {
        match self {
            Contrast::Iso(c) => SymTensor3::iso(c.a),
            Contrast::Aniso(c) => c.a,
        }
    }

    pub fn jump(&self) -> Mat3 {
        match self {
            Contrast::Iso(c) => Mat3::identity() * (c.a_tilde - c.a),
            Contrast::Aniso(c) => c.jump(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Contrast::Iso(c) => c.q == 0.0,
            Contrast::Aniso(c) => c.is_zero(),
        }
    }

    pub fn to_aniso(&self) -> Result<AnisoContrast> {
        match self {
            Contrast::Iso(c) => c.to_aniso(),
            Contrast::Aniso(c) => Ok(c.clone()),
        }
    }
}

impl From<IsoContrast> for Contrast {
    fn from(c: IsoContrast) -> Self {
        Contrast::Iso(c)
    }
}

impl From<AnisoContrast> for Contrast {
    fn from(c: AnisoContrast) -> Self {
        Contrast::Aniso(c)
    }
}

fn sigma_of(s2: f64) -> Complex64 {
    if s2 > 0.0 {
        Complex64::new(1.0, 0.0)
    } else if s2 < 0.0 {
        Complex64::new(0.0, 1.0)
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Factor a symmetric `Q` as `q_matᵀ·diag(σ²)·q_mat` with `σ² ∈ {−1, 0, 1}`.
pub fn factor_q(q: &Mat3) -> Result<(Mat3, Vec3)> {
    check_symmetric(q)?;
    let (vals, vecs) = sorted_eigen(q);
    let cutoff = ZERO_EIGEN_TOL * vals.amax();
    let mut q_mat = Mat3::zeros();
    let mut sigma2 = Vec3::zeros();
    for k in 0..3 {
        let lam = vals[k];
        if lam.abs() <= cutoff || lam == 0.0 {
            continue;
        }
        sigma2[k] = lam.signum();
        let scale = lam.abs().sqrt();
        for j in 0..3 {
            q_mat[(k, j)] = scale * vecs[(j, k)];
        }
    }
    Ok((q_mat, sigma2))
}

/// Lower-triangular `L` with `L·Lᵀ = M`.
pub fn choleski_sqrt(m: &Mat3) -> Result<Mat3> {
    check_symmetric(m)?;
    let sym = 0.5 * (m + m.transpose());
    nalgebra::Cholesky::new(sym)
        .map(|c| c.l())
        .ok_or_else(|| Error::domain("Choleski pivot failure: matrix is not positive definite"))
}

/// Complex-symmetric analogue of [`choleski_sqrt`]: lower-triangular `L` with
/// `L·Lᵀ = M` (plain transpose, principal square roots on the pivots).
pub fn complex_choleski(m: &CMat3) -> Result<CMat3> {
    let mut l = CMat3::zeros();
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for j in 0..3 {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.norm() <= 1e-14 * scale || !d.is_finite() {
            return Err(Error::domain("complex Choleski pivot vanished"));
        }
        let piv = d.sqrt();
        l[(j, j)] = piv;
        for i in (j + 1)..3 {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / piv;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn iso_contrast_examples() {
        let c = iso_contrast(1.0, 2.0).unwrap();
        assert_eq!(c.beta, 1.0);
        assert_relative_eq!(c.q, 1.0 / 3.0, epsilon = 1e-15);
        let c = iso_contrast(1.0, 1.0).unwrap();
        assert_eq!((c.beta, c.q), (0.0, 0.0));
        let c = iso_contrast(2.0, 1.0).unwrap();
        assert_eq!(c.beta, -0.5);
        assert_relative_eq!(c.q, -1.0 / 3.0, epsilon = 1e-15);
        assert!(iso_contrast(0.0, 1.0).is_err());
        assert!(iso_contrast(1.0, -1.0).is_err());
    }

    #[test]
    fn aniso_contrast_examples() {
        let c = aniso_contrast(&SymTensor3::identity(), &SymTensor3::iso(2.0)).unwrap();
        assert_relative_eq!(c.beta_t, Mat3::identity(), epsilon = 1e-14);
        assert_relative_eq!(c.q_tensor, Mat3::identity() / 3.0, epsilon = 1e-14);

        let c = aniso_contrast(&SymTensor3::identity(), &SymTensor3::identity()).unwrap();
        assert_eq!(c.q_tensor, Mat3::zeros());
        assert_eq!(c.sigma2, Vec3::zeros());
        assert!(c.is_zero());

        let c = aniso_contrast(&SymTensor3::identity(), &SymTensor3::diag(2.0, 0.5, 1.0)).unwrap();
        assert_relative_eq!(
            c.q_tensor,
            Mat3::from_diagonal(&Vec3::new(1.0 / 3.0, -1.0 / 3.0, 0.0)),
            epsilon = 1e-14
        );
        let mut s: Vec<f64> = c.sigma2.iter().copied().collect();
        s.sort_by(f64::total_cmp);
        assert_eq!(s, vec![-1.0, 0.0, 1.0]);
        let recon = c.q_mat.transpose() * Mat3::from_diagonal(&c.sigma2) * c.q_mat;
        assert_relative_eq!(recon, c.q_tensor, epsilon = 1e-14);
        let qq = c.q_mat.transpose() * c.q_mat;
        assert_relative_eq!(
            qq,
            Mat3::from_diagonal(&Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0)),
            epsilon = 1e-14
        );
        assert!(aniso_contrast(&SymTensor3::diag(1.0, -1.0, 1.0), &SymTensor3::identity()).is_err());
    }

    #[test]
    fn factor_q_examples() {
        let (q, s) = factor_q(&(Mat3::identity() * 0.5)).unwrap();
        assert_eq!(s, Vec3::new(1.0, 1.0, 1.0));
        assert_relative_eq!(q.transpose() * q, Mat3::identity() * 0.5, epsilon = 1e-15);

        let target = Mat3::from_diagonal(&Vec3::new(0.5, -0.5, 0.5));
        let (q, s) = factor_q(&target).unwrap();
        assert_relative_eq!(q.transpose() * Mat3::from_diagonal(&s) * q, target, epsilon = 1e-15);
        assert_eq!(s.iter().filter(|&&v| v < 0.0).count(), 1);
        assert_relative_eq!(q.transpose() * q, Mat3::identity() * 0.5, epsilon = 1e-15);

        let (q, s) = factor_q(&Mat3::zeros()).unwrap();
        assert_eq!((q, s), (Mat3::zeros(), Vec3::zeros()));

        let asym = Mat3::new(1.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(factor_q(&asym).is_err());
    }

    #[test]
    fn choleski_examples() {
        assert_eq!(choleski_sqrt(&Mat3::identity()).unwrap(), Mat3::identity());
        let qz: f64 = 1.0 / 3.0;
        let m = Mat3::identity() * (4.0 * std::f64::consts::PI / (3.0 - qz));
        let l = choleski_sqrt(&m).unwrap();
        assert_relative_eq!(l, Mat3::identity() * (1.5 * std::f64::consts::PI).sqrt(), epsilon = 1e-14);
        let l = choleski_sqrt(&Mat3::from_diagonal(&Vec3::new(4.0, 9.0, 16.0))).unwrap();
        assert_eq!(l, Mat3::from_diagonal(&Vec3::new(2.0, 3.0, 4.0)));
        assert!(choleski_sqrt(&Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0))).is_err());
    }

    #[test]
    fn complex_choleski_round_trip() {
        let m = CMat3::new(
            Complex64::new(2.0, 0.5),
            Complex64::new(0.3, -0.1),
            Complex64::new(0.0, 0.2),
            Complex64::new(0.3, -0.1),
            Complex64::new(1.5, -0.2),
            Complex64::new(0.1, 0.0),
            Complex64::new(0.0, 0.2),
            Complex64::new(0.1, 0.0),
            Complex64::new(-1.0, 0.3),
        );
        let l = complex_choleski(&m).unwrap();
        let err = (l * l.transpose() - m).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn sqrt_is_symmetric_root() {
        let a = SymTensor3::new(2.0, 3.0, 1.5, 0.3, -0.2, 0.1);
        let r = a.sqrt().unwrap();
        assert_relative_eq!(r, r.transpose(), epsilon = 0.0);
        assert_relative_eq!(r * r, a.to_matrix(), epsilon = 1e-14);
        assert_relative_eq!(a.inv_sqrt().unwrap() * r, Mat3::identity(), epsilon = 1e-14);
    }

    fn rotation(ax: f64, ay: f64, az: f64) -> Mat3 {
        *nalgebra::Rotation3::from_euler_angles(ax, ay, az).matrix()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn factor_q_round_trip(
            l in prop::array::uniform3(-0.999f64..0.999),
            ang in prop::array::uniform3(-3.2f64..3.2),
        ) {
            let r = rotation(ang[0], ang[1], ang[2]);
            let q = r * Mat3::from_diagonal(&Vec3::from(l)) * r.transpose();
            let q = 0.5 * (q + q.transpose());
            let (qm, s) = factor_q(&q).unwrap();
            let recon = qm.transpose() * Mat3::from_diagonal(&s) * qm;
            prop_assert!((recon - q).norm() <= 1e-12 * q.norm().max(1e-300));
        }

        #[test]
        fn q_spectrum_inside_unit_interval(
            d in prop::array::uniform3(0.05f64..20.0),
            e in prop::array::uniform3(0.05f64..20.0),
            ang in prop::array::uniform3(-3.2f64..3.2),
        ) {
            let r = rotation(ang[0], ang[1], ang[2]);
            let at = r * Mat3::from_diagonal(&Vec3::from(e)) * r.transpose();
            let a = SymTensor3::diag(d[0], d[1], d[2]);
            let c = aniso_contrast(&a, &SymTensor3::from_matrix(&(0.5 * (at + at.transpose()))).unwrap()).unwrap();
            let (vals, _) = sorted_eigen(&c.q_tensor);
            prop_assert!(vals.iter().all(|&v| v > -1.0 && v < 1.0));
        }

        #[test]
        fn iso_ranges(a in 0.01f64..100.0, at in 0.01f64..100.0) {
            let c = iso_contrast(a, at).unwrap();
            prop_assert!(c.beta > -1.0 && c.q > -1.0 && c.q < 1.0);
            prop_assert_eq!(c.q, c.beta / (c.beta + 2.0));
        }

        #[test]
        fn choleski_round_trip(
            d in prop::array::uniform3(0.01f64..100.0),
            ang in prop::array::uniform3(-3.2f64..3.2),
        ) {
            let r = rotation(ang[0], ang[1], ang[2]);
            let m = r * Mat3::from_diagonal(&Vec3::from(d)) * r.transpose();
            let m = 0.5 * (m + m.transpose());
            let l = choleski_sqrt(&m).unwrap();
            prop_assert!((l * l.transpose() - m).norm() <= 1e-12 * m.norm());
            prop_assert!(l[(0, 1)] == 0.0 && l[(0, 2)] == 0.0 && l[(1, 2)] == 0.0);
        }
    }
}
