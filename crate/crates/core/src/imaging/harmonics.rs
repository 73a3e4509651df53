//! Dirichlet traces on spheres in the real spherical-harmonic basis and the
//! symmetry-restoring operator `E`.

use faer::complex_native::c64;
use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::SphereSurface;
use crate::specfun::{real_sph_harmonics, sh_count, sph_bessel_j_seq, sph_hankel1_seq};
use crate::vie::to_c64;

/// Coefficients `c_n^m`, `n ≤ n_max`, of a trace `f` on the sphere of radius `R`, in the real
/// orthonormal basis: `f(Rŝ) = R⁻¹·Σ c_n^m·Y_n^m(ŝ)`, so that `Σ|c_n^m|² = ∫_Γ |f|² ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicTrace {
    pub radius: f64,
    pub n_max: usize,
    pub coeffs: Vec<Complex64>,
}

fn require_closed(surface: &SphereSurface, n_max: usize) -> Result<()> {
    if !surface.is_closed() {
        return Err(Error::domain("harmonic traces need a closed sphere"));
    }
    if surface.order <= n_max {
        return Err(Error::domain(format!(
            "quadrature order {} cannot resolve degree {n_max}",
            surface.order
        )));
    }
    Ok(())
}

/// Real harmonics at every node: `basis[node][sh_index(n, m)]`.
pub fn harmonic_basis(surface: &SphereSurface, n_max: usize) -> Result<Vec<Vec<f64>>> {
    surface
        .nodes
        .iter()
        .map(|n| real_sph_harmonics(n_max, &n.normal))
        .collect()
}

impl HarmonicTrace {
    pub fn analyze(surface: &SphereSurface, values: &[Complex64], n_max: usize) -> Result<Self> {
        require_closed(surface, n_max)?;
        if values.len() != surface.len() {
            return Err(Error::domain("trace length does not match the node count"));
        }
        let basis = harmonic_basis(surface, n_max)?;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); sh_count(n_max)];
        for ((node, y), f) in surface.nodes.iter().zip(&basis).zip(values) {
            let w = f * (node.weight / surface.radius);
            for (c, yk) in coeffs.iter_mut().zip(y) {
                *c += w * yk;
            }
        }
        Ok(Self {
            radius: surface.radius,
            n_max,
            coeffs,
        })
    }

    pub fn synthesize(&self, surface: &SphereSurface) -> Result<Vec<Complex64>> {
        self.check_surface(surface)?;
        let basis = harmonic_basis(surface, self.n_max)?;
        Ok(basis
            .iter()
            .map(|y| {
                self.coeffs
                    .iter()
                    .zip(y)
                    .map(|(c, yk)| c * yk)
                    .sum::<Complex64>()
                    / self.radius
            })
            .collect())
    }

    fn check_surface(&self, surface: &SphereSurface) -> Result<()> {
        if (surface.radius - self.radius).abs() > 1e-12 * self.radius {
            return Err(Error::domain("trace and surface radii differ"));
        }
        require_closed(surface, self.n_max)
    }

    /// `Σ|c_n^m|²`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn conj(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c.conj()).collect(),
            ..self.clone()
        }
    }
}

/// Quadrature value of `∫_Γ |f|² ds`.
pub fn trace_energy(surface: &SphereSurface, values: &[Complex64]) -> f64 {
    surface
        .nodes
        .iter()
        .zip(values)
        .map(|(n, f)| n.weight * f.norm_sqr())
        .sum()
}

/// Multipliers `E_n = −conj(h_n(κR))/h_n(κR)` for `n ≤ n_max`; at `κ = 0` the single-layer
/// operator is real and `E` is the identity.
pub fn e_multipliers(n_max: usize, kappa: f64, radius: f64) -> Result<Vec<Complex64>> {
    if !(radius > 0.0) || !(kappa >= 0.0) {
        return Err(Error::domain("E needs R > 0 and κ ≥ 0"));
    }
    if kappa == 0.0 {
        return Ok(vec![Complex64::new(1.0, 0.0); n_max + 1]);
    }
    let kr = kappa * radius;
    let h = sph_hankel1_seq(n_max, kr)?;
    let j = sph_bessel_j_seq(n_max, kr);
    let mut out = Vec::with_capacity(n_max + 1);
    for (n, hn) in h.iter().enumerate() {
        let mag = hn.norm();
        if !mag.is_finite() || mag < 1e-300 {
            return Err(Error::domain(format!("|h_{n}(κR)| = {mag:e} outside the representable range")));
        }
        if (n as f64) <= kr && j[n].abs() < 1e-8 {
            return Err(Error::domain(format!(
                "κ² is (numerically) a Dirichlet eigenvalue of the ball: j_{n}(κR) = {:e}",
                j[n]
            )));
        }
        out.push(-hn.conj() / hn);
    }
    Ok(out)
}

/// `E` applied coefficient-wise.
pub fn e_apply(trace: &HarmonicTrace, surface: &SphereSurface, kappa: f64) -> Result<HarmonicTrace> {
    trace.check_surface(surface)?;
    let e = e_multipliers(trace.n_max, kappa, trace.radius)?;
    let mut out = trace.clone();
    for n in 0..=trace.n_max {
        for k in n * n..(n + 1) * (n + 1) {
            out.coeffs[k] *= e[n];
        }
    }
    Ok(out)
}

/// Nodal matrix of `E` truncated at degree `n_max`: analysis, multiplier, synthesis.
pub fn e_matrix(surface: &SphereSurface, kappa: f64, n_max: usize) -> Result<Mat<c64>> {
    require_closed(surface, n_max)?;
    let basis = harmonic_basis(surface, n_max)?;
    let e = e_multipliers(n_max, kappa, surface.radius)?;
    let ns = surface.len();
    let nc = sh_count(n_max);
    let r2 = surface.radius * surface.radius;
    let degree: Vec<usize> = (0..=n_max).flat_map(|n| std::iter::repeat_n(n, 2 * n + 1)).collect();
    let synth = Mat::<c64>::from_fn(ns, nc, |i, k| to_c64(e[degree[k]] * (basis[i][k] / r2)));
    let anal = Mat::<c64>::from_fn(nc, ns, |k, j| c64::new(basis[j][k] * surface.nodes[j].weight, 0.0));
    Ok(&synth * &anal)
}
