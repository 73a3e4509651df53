//! Spherical Bessel and Hankel functions, Legendre polynomials and spherical harmonics.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::Vec3;

/// Largest order accepted by the single-order entry points.
pub const DEFAULT_MAX_ORDER: usize = 60;

fn check_order(n: usize, n_max: usize) -> Result<()> {
    if n > n_max {
        return Err(Error::domain(format!("order {n} exceeds the limit {n_max}")));
    }
    Ok(())
}

pub fn sph_bessel_j(n: usize, x: f64) -> Result<f64> {
    check_order(n, DEFAULT_MAX_ORDER)?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("j_n needs a finite x ≥ 0, got {x}")));
    }
    Ok(sph_bessel_j_seq(n, x)[n])
}

/// `j_0(x), …, j_nmax(x)` by Miller's downward recurrence, normalized against the
/// closed forms of `j_0` or `j_1`.
pub fn sph_bessel_j_seq(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = nmax + 40 + (x.abs().ceil() as usize) + (4.0 * (nmax as f64).sqrt()) as usize;
    let mut f_next = 0.0;
    let mut f = 1e-250;
    for k in (1..=start).rev() {
        if k <= nmax {
            out[k] = f;
        }
        let f_prev = (2 * k + 1) as f64 / x * f - f_next;
        f_next = f;
        f = f_prev;
        if f.abs() > 1e200 {
            f *= 1e-200;
            f_next *= 1e-200;
            for v in out.iter_mut().skip(k) {
                *v *= 1e-200;
            }
        }
    }
    out[0] = f;
    let (j0, j1) = j0_j1(x);
    let scale = if j0.abs() >= j1.abs() || nmax == 0 {
        j0 / out[0]
    } else {
        j1 / out[1]
    };
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

fn j0_j1(x: f64) -> (f64, f64) {
    if x < 1e-3 {
        let x2 = x * x;
        (
            1.0 - x2 / 6.0 * (1.0 - x2 / 20.0),
            x / 3.0 * (1.0 - x2 / 10.0 * (1.0 - x2 / 28.0)),
        )
    } else {
        let (s, c) = x.sin_cos();
        (s / x, s / (x * x) - c / x)
    }
}

/// `y_0(x), …, y_nmax(x)` by upward recurrence (stable for the irregular solution).
pub fn sph_bessel_y_seq(nmax: usize, x: f64) -> Vec<f64> {
    let (s, c) = x.sin_cos();
    let mut out = Vec::with_capacity(nmax + 1);
    out.push(-c / x);
    if nmax >= 1 {
        out.push(-c / (x * x) - s / x);
    }
    for k in 1..nmax {
        let next = (2 * k + 1) as f64 / x * out[k] - out[k - 1];
        out.push(next);
    }
    out
}

pub fn sph_bessel_y(n: usize, x: f64) -> Result<f64> {
    check_order(n, DEFAULT_MAX_ORDER)?;
    if !(x > 0.0) {
        return Err(Error::Singularity(format!("y_n is singular at x = {x}")));
    }
    Ok(sph_bessel_y_seq(n, x)[n])
}

/// `h_n^{(1)}(x) = j_n(x) + i·y_n(x)` for `n = 0..=nmax`.
pub fn sph_hankel1_seq(nmax: usize, x: f64) -> Result<Vec<Complex64>> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Singularity(format!("h_n^(1) is singular at x = {x}")));
    }
    let j = sph_bessel_j_seq(nmax, x);
    let y = sph_bessel_y_seq(nmax, x);
    Ok(j.into_iter().zip(y).map(|(a, b)| Complex64::new(a, b)).collect())
}

pub fn sph_hankel1(n: usize, x: f64) -> Result<Complex64> {
    check_order(n, DEFAULT_MAX_ORDER)?;
    Ok(sph_hankel1_seq(n, x)?[n])
}

/// Derivatives `(j_n'(x), y_n'(x))`.
pub fn sph_bessel_derivs(n: usize, x: f64) -> Result<(f64, f64)> {
    check_order(n, DEFAULT_MAX_ORDER)?;
    if !(x > 0.0) {
        return Err(Error::Singularity(format!("derivative requested at x = {x}")));
    }
    let j = sph_bessel_j_seq(n + 1, x);
    let y = sph_bessel_y_seq(n + 1, x);
    let nf = n as f64;
    Ok((
        nf / x * j[n] - j[n + 1],
        nf / x * y[n] - y[n + 1],
    ))
}

pub fn legendre_p(n: usize, t: f64) -> Result<f64> {
    if !(t.abs() <= 1.0) {
        return Err(Error::domain(format!("Legendre argument {t} outside [−1, 1]")));
    }
    Ok(legendre_seq(n, t)[n])
}

pub fn legendre_seq(nmax: usize, t: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(nmax + 1);
    p.push(1.0);
    if nmax >= 1 {
        p.push(t);
    }
    for k in 1..nmax {
        let kf = k as f64;
        p.push(((2.0 * kf + 1.0) * t * p[k] - kf * p[k - 1]) / (kf + 1.0));
    }
    p
}

/// Flat index of `(n, m)` in the harmonic tables, `m ∈ −n..=n`.
pub fn sh_index(n: usize, m: i64) -> usize {
    ((n * n + n) as i64 + m) as usize
}

pub fn sh_count(nmax: usize) -> usize {
    (nmax + 1) * (nmax + 1)
}

/// Fully normalized associated Legendre values `P̄_n^m(cos θ)`, `m ≥ 0`, including the
/// Condon–Shortley phase and the `1/√(4π)` factor, so that
/// `Y_n^m = P̄_n^m(cos θ)·e^{imφ}`.
fn normalized_alf(nmax: usize, ct: f64, st: f64) -> Vec<f64> {
    let mut p = vec![0.0; (nmax + 1) * (nmax + 2) / 2];
    let idx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    p[0] = 0.5 / PI.sqrt();
    for m in 1..=nmax {
        let mf = m as f64;
        p[idx(m, m)] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * st * p[idx(m - 1, m - 1)];
    }
    for m in 0..nmax {
        p[idx(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * ct * p[idx(m, m)];
    }
    for m in 0..=nmax {
        let mf = m as f64;
        for n in (m + 2)..=nmax {
            let nf = n as f64;
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let b = (((nf - 1.0).powi(2) - mf * mf) / (4.0 * (nf - 1.0).powi(2) - 1.0)).sqrt();
            p[idx(n, m)] = a * (ct * p[idx(n - 1, m)] - b * p[idx(n - 2, m)]);
        }
    }
    p
}

fn angles(dir: &Vec3) -> Result<(f64, f64, Complex64)> {
    let r = dir.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain("direction must be a nonzero finite vector"));
    }
    let ct = (dir.z / r).clamp(-1.0, 1.0);
    let rho = dir.x.hypot(dir.y);
    let st = rho / r;
    let phase = if rho > 0.0 {
        Complex64::new(dir.x / rho, dir.y / rho)
    } else {
        Complex64::new(1.0, 0.0)
    };
    Ok((ct, st, phase))
}

/// All complex orthonormal harmonics `Y_n^m(dir)` for `n ≤ nmax`, indexed by [`sh_index`].
pub fn complex_sph_harmonics(nmax: usize, dir: &Vec3) -> Result<Vec<Complex64>> {
    let (ct, st, phase) = angles(dir)?;
    let p = normalized_alf(nmax, ct, st);
    let mut out = vec![Complex64::new(0.0, 0.0); sh_count(nmax)];
    let mut powers = Vec::with_capacity(nmax + 1);
    let mut acc = Complex64::new(1.0, 0.0);
    for _ in 0..=nmax {
        powers.push(acc);
        acc *= phase;
    }
    for n in 0..=nmax {
        for m in 0..=n {
            let y = powers[m] * p[n * (n + 1) / 2 + m];
            out[sh_index(n, m as i64)] = y;
            if m > 0 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                out[sh_index(n, -(m as i64))] = y.conj() * sign;
            }
        }
    }
    Ok(out)
}

pub fn sph_harmonic(n: usize, m: i64, dir: &Vec3) -> Result<Complex64> {
    if m.unsigned_abs() as usize > n {
        return Err(Error::domain(format!("|m| = {} exceeds n = {n}", m.abs())));
    }
    Ok(complex_sph_harmonics(n, dir)?[sh_index(n, m)])
}

/// All real orthonormal harmonics for `n ≤ nmax`, indexed by [`sh_index`], with the
/// convention of [`real_sph_harmonic`].
pub fn real_sph_harmonics(nmax: usize, dir: &Vec3) -> Result<Vec<f64>> {
    let c = complex_sph_harmonics(nmax, dir)?;
    let mut out = vec![0.0; sh_count(nmax)];
    for n in 0..=nmax {
        out[sh_index(n, 0)] = c[sh_index(n, 0)].re;
        for m in 1..=n as i64 {
            let y = c[sh_index(n, m)] * if m % 2 == 0 { 1.0 } else { -1.0 };
            out[sh_index(n, m)] = std::f64::consts::SQRT_2 * y.re;
            out[sh_index(n, -m)] = std::f64::consts::SQRT_2 * y.im;
        }
    }
    Ok(out)
}

/// Real orthonormal harmonics: `√2·Re` (m > 0) and `√2·Im` (m < 0) of `(−1)^m·Y_n^{|m|}`.
pub fn real_sph_harmonic(n: usize, m: i64, dir: &Vec3) -> Result<f64> {
    let y = sph_harmonic(n, m.abs(), dir)?;
    let sign = if m.abs() % 2 == 0 { 1.0 } else { -1.0 };
    Ok(match m {
        0 => y.re,
        m if m > 0 => std::f64::consts::SQRT_2 * sign * y.re,
        _ => std::f64::consts::SQRT_2 * sign * y.im,
    })
}
