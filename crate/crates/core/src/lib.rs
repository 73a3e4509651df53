//! Topological-derivative imaging of penetrable, possibly anisotropic, inhomogeneities
//! probed by point sources on spherical surfaces.
//!
//! The crate is organised bottom-up: constitutive data ([`materials`]), special functions
//! and quadrature ([`specfun`], [`quadrature`], [`voxel`]), fundamental solutions
//! ([`greens`]), the volume integral equation ([`vie`]), polarization tensors
//! ([`polarization`]), the imaging kernels and topological-derivative maps ([`imaging`])
//! and the experiment harness ([`harness`]).

pub mod error;
pub mod greens;
pub mod harness;
pub mod imaging;
pub mod materials;
pub mod polarization;
pub mod quadrature;
pub mod specfun;
pub mod vie;
pub mod voxel;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type CVec3 = nalgebra::Vector3<Complex64>;
pub type CMat3 = nalgebra::Matrix3<Complex64>;

pub(crate) fn to_complex(m: &Mat3) -> CMat3 {
    m.map(|x| Complex64::new(x, 0.0))
}
