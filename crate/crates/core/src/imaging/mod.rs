//! Imaging kernels, the symmetry operator `E` and topological-derivative maps.

pub mod finite_delta;
pub mod harmonics;
pub mod kernels;
pub mod td;

pub use finite_delta::{td_finite_delta_check, FiniteDeltaSample, FiniteDeltaSettings};
pub use harmonics::{e_apply, e_matrix, e_multipliers, HarmonicTrace};
pub use kernels::{
    kernel_g, kernel_g_asymptotic, kernel_g_farfield, kernel_g_from_l, kernel_l, kernel_l_series, ImagingKernel,
    KernelMode,
};
pub use td::{cartesian_grid, td_map_aniso_iso, td_map_general, td_map_iso, TdDiagnostics, TdFormula, TdMap};
