//! Gauss–Legendre rules, adaptive 1D integration and product rules on spheres and caps.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::Vec3;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[−1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, t);
        if d.is_finite() {
            dp = d;
        }
        let wt = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = wt;
        w[n - 1 - i] = wt;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&wt| half * wt).collect(),
    )
}

/// Adaptive bisection comparing 10- and 21-point Gauss–Legendre estimates.
pub fn adaptive_integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let coarse = gauss_legendre(10);
    let fine = gauss_legendre(21);
    let rule = |r: &(Vec<f64>, Vec<f64>), lo: f64, hi: f64| -> f64 {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        r.0.iter().zip(&r.1).map(|(&t, &w)| w * f(mid + half * t)).sum::<f64>() * half
    };
    let mut total = 0.0;
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let g = rule(&coarse, lo, hi);
        let k = rule(&fine, lo, hi);
        let width = (hi - lo) / (b - a);
        if (g - k).abs() <= (tol * width.max(1e-6)).max(1e-14 * k.abs()) || depth >= 40 {
            total += k;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    total
}

/// Product rule on the unit sphere (or on the cap `θ ≤ θ_max`): `order` Gauss–Legendre
/// nodes in `cos θ` times `2·order` equispaced azimuths. On the full sphere the rule
/// integrates spherical harmonics of degree `≤ 2·order − 1` exactly.
pub fn sphere_quadrature(order: usize, aperture: Option<f64>) -> Result<Vec<(Vec3, f64)>> {
    if order == 0 {
        return Err(Error::domain("sphere quadrature order must be at least 1"));
    }
    let theta_max = match aperture {
        None => PI,
        Some(t) if t > 0.0 && t <= PI => t,
        Some(t) => {
            return Err(Error::domain(format!("cap half-angle {t} outside (0, π]")));
        }
    };
    let lower = if theta_max == PI { -1.0 } else { theta_max.cos() };
    let (ct, wt) = gauss_legendre_interval(order, lower, 1.0);
    let n_phi = 2 * order;
    let dphi = 2.0 * PI / n_phi as f64;
    let mut out = Vec::with_capacity(order * n_phi);
    for (&c, &w) in ct.iter().zip(&wt) {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for k in 0..n_phi {
            let (sp, cp) = (k as f64 * dphi).sin_cos();
            out.push((Vec3::new(s * cp, s * sp, c), w * dphi));
        }
    }
    Ok(out)
}

/// Quadrature node on a measurement or source surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceNode {
    pub point: Vec3,
    pub normal: Vec3,
    pub weight: f64,
}

/// Sphere (or spherical cap around `+z`) carrying a product quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSurface {
    pub center: Vec3,
    pub radius: f64,
    pub order: usize,
    pub aperture: Option<f64>,
    pub nodes: Vec<SurfaceNode>,
}

impl SphereSurface {
    pub fn new(center: Vec3, radius: f64, order: usize, aperture: Option<f64>) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::domain(format!("sphere radius must be positive, got {radius}")));
        }
        let rule = sphere_quadrature(order, aperture)?;
        let r2 = radius * radius;
        let nodes = rule
            .into_iter()
            .map(|(d, w)| SurfaceNode {
                point: center + d * radius,
                normal: d,
                weight: w * r2,
            })
            .collect();
        Ok(Self {
            center,
            radius,
            order,
            aperture,
            nodes,
        })
    }

    pub fn centered(radius: f64, order: usize) -> Result<Self> {
        Self::new(Vec3::zeros(), radius, order, None)
    }

    pub fn is_closed(&self) -> bool {
        self.aperture.is_none_or(|t| t == PI)
    }

    /// Exact area of the sphere or cap.
    pub fn area(&self) -> f64 {
        let t = self.aperture.unwrap_or(PI);
        2.0 * PI * self.radius * self.radius * (1.0 - t.cos())
    }

    /// Whether `x` lies strictly inside the ball bounded by the full sphere.
    pub fn encloses(&self, x: &Vec3) -> bool {
        (x - self.center).norm() < self.radius
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{sph_harmonic, sh_index, complex_sph_harmonics};
    use crate::Mat3;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn gauss_legendre_is_exact() {
        for n in 1..40 {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for k in 0..(2 * n) {
                let s: f64 = x.iter().zip(&w).map(|(t, wt)| wt * t.powi(k as i32)).sum();
                let expect = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((s - expect).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn adaptive_matches_closed_forms() {
        let v = adaptive_integrate(&|x| x.sqrt(), 0.0, 1.0, 1e-12);
        assert_relative_eq!(v, 2.0 / 3.0, epsilon = 1e-11);
        let v = adaptive_integrate(&|x| (50.0 * x).sin(), 0.0, PI, 1e-12);
        assert_relative_eq!(v, 0.0, epsilon = 1e-11);
    }

    #[test]
    fn sphere_moments() {
        let rule = sphere_quadrature(6, None).unwrap();
        let area: f64 = rule.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(area, 4.0 * PI, epsilon = 1e-12);
        let mut m = Mat3::zeros();
        for (d, w) in &rule {
            m += d * d.transpose() * *w;
        }
        assert_relative_eq!(m, Mat3::identity() * (4.0 * PI / 3.0), epsilon = 1e-12);
        for order in 5..9 {
            let rule = sphere_quadrature(order, None).unwrap();
            let s: Complex64 = rule
                .iter()
                .map(|(d, w)| sph_harmonic(4, 2, d).unwrap().norm_sqr() * w)
                .map(|v| Complex64::new(v, 0.0))
                .sum();
            assert_relative_eq!(s.re, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cap_rule() {
        let full = sphere_quadrature(7, None).unwrap();
        let cap = sphere_quadrature(7, Some(PI)).unwrap();
        assert_eq!(full, cap);
        let t = 0.8;
        let cap = sphere_quadrature(10, Some(t)).unwrap();
        let area: f64 = cap.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(area, 2.0 * PI * (1.0 - t.cos()), epsilon = 1e-12);
        assert!(cap.iter().all(|(d, _)| d.z >= t.cos() - 1e-15));
        assert!(sphere_quadrature(4, Some(0.0)).is_err());
        assert!(sphere_quadrature(0, None).is_err());
    }

    #[test]
    fn surface_nodes_on_sphere() {
        let c = Vec3::new(0.1, -0.2, 0.3);
        let s = SphereSurface::new(c, 5.0, 12, None).unwrap();
        for n in &s.nodes {
            assert!(((n.point - c).norm() - 5.0).abs() < 1e-12 * 5.0);
        }
        let area: f64 = s.nodes.iter().map(|n| n.weight).sum();
        assert_relative_eq!(area, s.area(), max_relative = 1e-10);
        assert!(s.encloses(&Vec3::zeros()));
        assert!(!s.encloses(&Vec3::new(6.0, 0.0, 0.0)));
    }

    #[test]
    fn doubling_order_reduces_residuals() {
        // Smooth non-polynomial integrand: e^{x}·Y_3^1 projected coefficient.
        let f = |d: &Vec3| (2.0 * d.x + d.z).exp();
        let coef = |order: usize| -> Complex64 {
            sphere_quadrature(order, None)
                .unwrap()
                .iter()
                .map(|(d, w)| complex_sph_harmonics(3, d).unwrap()[sh_index(3, 1)].conj() * f(d) * *w)
                .sum()
        };
        let reference = coef(40);
        let mut prev = f64::INFINITY;
        for order in [2usize, 4, 8] {
            let err = (coef(order) - reference).norm();
            assert!(err * 10.0 <= prev || err < 1e-14, "order {order}: {err} vs {prev}");
            prev = err;
        }
    }
}
