//! Collocation discretization of the volume integral equation `h − (Ã−A)·∇W_κ[h] = (Ã−A)·∇u`
//! on a voxel grid, its normalized forms, and the solution operator `M_B`.

use faer::complex_native::c64;
use faer::linalg::solvers::PartialPivLu;
use faer::prelude::*;
use faer::Mat;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::greens::{cell_block, grad_phi_unchecked, Background, NearField};
use crate::materials::Contrast;
use crate::voxel::ScattererGrid;
use crate::{to_complex, CMat3, CVec3, Mat3, Vec3};

/// Default voxel budget for one system.
pub const DEFAULT_VOXEL_CAP: usize = 20_000;
/// Largest voxel count solved by dense LU; larger systems use restarted GMRES.
pub const DENSE_LIMIT: usize = 3_000;

/// Voxel count from which `∇W_κ` products go through FFT convolution.
const FFT_THRESHOLD: usize = 256;

/// Contrast-weighted gradient density, one complex 3-vector per voxel.
pub type DensityField = Vec<CVec3>;

/// Translation-invariant table of `∇W_κ` blocks indexed by lattice offset.
#[derive(Debug, Clone)]
struct KernelTable {
    extent: [i32; 3],
    strides: [i64; 3],
    blocks: Vec<CMat3>,
}

impl KernelTable {
    fn build(bg: &Background, h: f64, extent: [usize; 3], scheme: NearField) -> Self {
        let extent = extent.map(|e| e as i32);
        let dims = extent.map(|e| (2 * e + 1) as i64);
        let strides = [dims[1] * dims[2], dims[2], 1];
        let total = (dims[0] * dims[1] * dims[2]) as usize;
        let blocks = (0..total)
            .into_par_iter()
            .map(|lin| {
                let lin = lin as i64;
                let d = [
                    (lin / strides[0]) as i32 - extent[0],
                    ((lin / strides[1]) % dims[1]) as i32 - extent[1],
                    (lin % dims[2]) as i32 - extent[2],
                ];
                cell_block(bg, d, h, scheme)
            })
            .collect();
        Self {
            extent,
            strides,
            blocks,
        }
    }

    fn key(&self, idx: &[i32; 3]) -> i64 {
        (0..3).map(|k| idx[k] as i64 * self.strides[k]).sum()
    }

    fn origin(&self) -> i64 {
        (0..3).map(|k| self.extent[k] as i64 * self.strides[k]).sum()
    }
}

/// Zero-padded FFT realization of the block-Toeplitz product with a [`KernelTable`].
#[derive(Clone)]
struct Convolver {
    lo: [i32; 3],
    dims: [usize; 3],
    kernel_hat: Vec<Vec<Complex64>>,
    plans: [(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>); 3],
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("dims", &self.dims).finish()
    }
}

fn smooth_size(min: usize) -> usize {
    (min..)
        .find(|&n| {
            let mut m = n;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            m == 1
        })
        .expect("5-smooth number exists")
}

impl Convolver {
    fn new(table: &KernelTable, indices: &[[i32; 3]]) -> Self {
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for idx in indices {
            for a in 0..3 {
                lo[a] = lo[a].min(idx[a]);
                hi[a] = hi[a].max(idx[a]);
            }
        }
        let span = [0, 1, 2].map(|a| (hi[a] - lo[a]) as usize + 1);
        let dims = span.map(|n| smooth_size(2 * n - 1));
        let mut planner = FftPlanner::<f64>::new();
        let plans = dims.map(|n| (planner.plan_fft_forward(n), planner.plan_fft_inverse(n)));
        let total = dims[0] * dims[1] * dims[2];
        let mut kernel_hat = vec![vec![Complex64::new(0.0, 0.0); total]; 9];
        let e = table.extent;
        let wrap = |d: i32, n: usize| d.rem_euclid(n as i32) as usize;
        for dx in -(span[0] as i32 - 1)..=(span[0] as i32 - 1) {
            for dy in -(span[1] as i32 - 1)..=(span[1] as i32 - 1) {
                for dz in -(span[2] as i32 - 1)..=(span[2] as i32 - 1) {
                    if dx.abs() > e[0] || dy.abs() > e[1] || dz.abs() > e[2] {
                        continue;
                    }
                    let lin = table.origin() + table.key(&[dx, dy, dz]);
                    let b = &table.blocks[lin as usize];
                    let p = (wrap(dx, dims[0]) * dims[1] + wrap(dy, dims[1])) * dims[2] + wrap(dz, dims[2]);
                    for a in 0..3 {
                        for c in 0..3 {
                            kernel_hat[3 * a + c][p] = b[(a, c)];
                        }
                    }
                }
            }
        }
        let mut conv = Self {
            lo,
            dims,
            kernel_hat: Vec::new(),
            plans,
        };
        for k in kernel_hat.iter_mut() {
            conv.fft3(k, true);
        }
        conv.kernel_hat = kernel_hat;
        conv
    }

    fn position(&self, idx: &[i32; 3]) -> usize {
        let d = self.dims;
        let r = [0, 1, 2].map(|a| (idx[a] - self.lo[a]) as usize);
        (r[0] * d[1] + r[1]) * d[2] + r[2]
    }

    fn fft3(&self, data: &mut [Complex64], forward: bool) {
        let [n0, n1, n2] = self.dims;
        let pick = |a: usize| if forward { &self.plans[a].0 } else { &self.plans[a].1 };
        pick(2).process(data);
        let mut line = vec![Complex64::new(0.0, 0.0); n1.max(n0)];
        for i in 0..n0 {
            for k in 0..n2 {
                for j in 0..n1 {
                    line[j] = data[(i * n1 + j) * n2 + k];
                }
                pick(1).process(&mut line[..n1]);
                for j in 0..n1 {
                    data[(i * n1 + j) * n2 + k] = line[j];
                }
            }
        }
        for j in 0..n1 {
            for k in 0..n2 {
                for i in 0..n0 {
                    line[i] = data[(i * n1 + j) * n2 + k];
                }
                pick(0).process(&mut line[..n0]);
                for i in 0..n0 {
                    data[(i * n1 + j) * n2 + k] = line[i];
                }
            }
        }
    }

    fn apply(&self, indices: &[[i32; 3]], g: &[CVec3]) -> Vec<CVec3> {
        let total = self.dims.iter().product::<usize>();
        let pos: Vec<usize> = indices.iter().map(|i| self.position(i)).collect();
        let src: Vec<Vec<Complex64>> = (0..3)
            .into_par_iter()
            .map(|c| {
                let mut buf = vec![Complex64::new(0.0, 0.0); total];
                for (p, v) in pos.iter().zip(g) {
                    buf[*p] = v[c];
                }
                self.fft3(&mut buf, true);
                buf
            })
            .collect();
        let out: Vec<Vec<Complex64>> = (0..3)
            .into_par_iter()
            .map(|a| {
                let mut buf = vec![Complex64::new(0.0, 0.0); total];
                for (c, s) in src.iter().enumerate() {
                    let k = &self.kernel_hat[3 * a + c];
                    for ((b, kv), sv) in buf.iter_mut().zip(k).zip(s) {
                        *b += kv * sv;
                    }
                }
                self.fft3(&mut buf, false);
                buf
            })
            .collect();
        let scale = 1.0 / total as f64;
        pos.iter()
            .map(|&p| CVec3::new(out[0][p], out[1][p], out[2][p]) * Complex64::new(scale, 0.0))
            .collect()
    }
}

/// Assembled discretization of `∇W_κ` on a voxel grid.
#[derive(Debug, Clone)]
pub struct VieSystem {
    pub grid: ScattererGrid,
    pub bg: Background,
    pub scheme: NearField,
    table: KernelTable,
    keys: Vec<i64>,
    conv: Convolver,
    sqrt_a: CMat3,
}

impl VieSystem {
    pub fn assemble(grid: &ScattererGrid, bg: &Background) -> Result<Self> {
        Self::assemble_with(grid, bg, NearField::CellAveraged, DEFAULT_VOXEL_CAP)
    }

    pub fn assemble_with(
        grid: &ScattererGrid,
        bg: &Background,
        scheme: NearField,
        voxel_cap: usize,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Degenerate("empty voxel grid".into()));
        }
        if grid.len() > voxel_cap {
            return Err(Error::Resource(format!(
                "{} voxels exceed the cap of {voxel_cap}",
                grid.len()
            )));
        }
        let table = KernelTable::build(bg, grid.h, grid.offset_extent(), scheme);
        let keys = grid.indices.iter().map(|i| table.key(i)).collect();
        let conv = Convolver::new(&table, &grid.indices);
        Ok(Self {
            grid: grid.clone(),
            bg: bg.clone(),
            scheme,
            table,
            keys,
            conv,
            sqrt_a: to_complex(&bg.sqrt_a),
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Block of `∇W_κ` coupling target voxel `i` to source voxel `j`.
    pub fn gradw_block(&self, i: usize, j: usize) -> &CMat3 {
        let lin = self.table.origin() + self.keys[i] - self.keys[j];
        &self.table.blocks[lin as usize]
    }

    /// `∇W_κ[g]` at the voxel centers.
    pub fn apply_gradw(&self, g: &[CVec3]) -> Vec<CVec3> {
        assert_eq!(g.len(), self.len(), "density length mismatch");
        if self.len() < FFT_THRESHOLD {
            return self.apply_gradw_direct(g);
        }
        self.conv.apply(&self.grid.indices, g)
    }

    /// `∇W_κ[g]` by explicit summation over voxel pairs.
    pub fn apply_gradw_direct(&self, g: &[CVec3]) -> Vec<CVec3> {
        assert_eq!(g.len(), self.len(), "density length mismatch");
        let origin = self.table.origin();
        let blocks = &self.table.blocks;
        self.keys
            .par_iter()
            .map(|&ki| {
                let base = origin + ki;
                let mut acc = CVec3::zeros();
                for (kj, gj) in self.keys.iter().zip(g) {
                    acc += blocks[(base - kj) as usize] * gj;
                }
                acc
            })
            .collect()
    }

    /// `R_κ[g] = g + 2A^{1/2}·∇W_κ[A^{1/2}·g]`. The discrete operator is complex symmetric.
    pub fn apply_r(&self, g: &[CVec3]) -> Vec<CVec3> {
        let u: Vec<CVec3> = g.iter().map(|v| self.sqrt_a * v).collect();
        let w = self.apply_gradw(&u);
        g.iter()
            .zip(&w)
            .map(|(gi, wi)| gi + self.sqrt_a * wi * Complex64::new(2.0, 0.0))
            .collect()
    }

    /// Dense `3N × 3N` matrix of `∇W_κ`.
    pub fn dense_gradw(&self) -> Mat<c64> {
        let n = self.len();
        let mut m = Mat::<c64>::zeros(3 * n, 3 * n);
        for i in 0..n {
            for j in 0..n {
                let b = self.gradw_block(i, j);
                for a in 0..3 {
                    for c in 0..3 {
                        m.write(3 * i + a, 3 * j + c, to_c64(b[(a, c)]));
                    }
                }
            }
        }
        m
    }

    /// Scattered field `Σ_j ∇Φ_κ(x − y_j)·h_j·h³` at a point outside every voxel.
    pub fn scattered_field(&self, h: &[CVec3], x: &Vec3) -> Result<Complex64> {
        if self.grid.in_cells(x) {
            return Err(Error::domain("evaluation point lies inside the scatterer grid"));
        }
        let v = self.grid.cell_volume();
        let mut acc = Complex64::new(0.0, 0.0);
        for (y, hj) in self.grid.centers.iter().zip(h) {
            let g = grad_phi_unchecked(&self.bg, &(x - y));
            acc += g.dot(hj);
        }
        Ok(acc * v)
    }

    /// Total gradient `∇u_inc + ∇W_κ[h]` at the voxel centers.
    pub fn total_gradient(&self, h: &[CVec3], incident_grad: &[CVec3]) -> Vec<CVec3> {
        self.apply_gradw(h)
            .iter()
            .zip(incident_grad)
            .map(|(w, g)| w + g)
            .collect()
    }

    fn check_contrast(&self, contrast: &Contrast) -> Result<()> {
        let a = contrast.background().to_matrix();
        if (a - self.bg.a.to_matrix()).amax() > 1e-12 * a.amax() {
            return Err(Error::domain("contrast background differs from the system background"));
        }
        Ok(())
    }
}

pub(crate) fn to_c64(z: Complex64) -> c64 {
    c64::new(z.re, z.im)
}

pub(crate) fn from_c64(z: c64) -> Complex64 {
    Complex64::new(z.re, z.im)
}

pub(crate) fn flatten(v: &[CVec3]) -> Vec<Complex64> {
    v.iter().flat_map(|x| [x[0], x[1], x[2]]).collect()
}

pub(crate) fn unflatten(v: &[Complex64]) -> Vec<CVec3> {
    v.chunks_exact(3).map(|c| CVec3::new(c[0], c[1], c[2])).collect()
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn field_norm(v: &[CVec3]) -> f64 {
    v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

/// Algebraically equivalent routes to `M_B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbPath {
    /// Solve `(I − (Ã−A)·∇W_κ)h = (Ã−A)·g` directly.
    Direct,
    /// `2A^{1/2}(I − Q·R_κ)^{−1}·Q·A^{1/2}`.
    Normalized,
    /// `2A^{1/2}qᵀσ(I − σq·R_κ·qᵀσ)^{−1}σq·A^{1/2}`.
    Symmetric,
    /// `2aq(I − qR_κ)^{−1}`; isotropic contrasts only.
    Isotropic,
}

/// Per-voxel coefficients of a system `diag·x − scale·left·∇W_κ[right·x]`, the input map
/// applied to `g` and the output map applied to the solution.
#[derive(Debug, Clone)]
struct LinearForm {
    diag: CMat3,
    left: CMat3,
    right: CMat3,
    scale: f64,
    input: CMat3,
    output: CMat3,
}

impl LinearForm {
    fn new(sys: &VieSystem, contrast: &Contrast, path: MbPath) -> Result<Self> {
        let id = CMat3::identity();
        let sa = sys.sqrt_a;
        Ok(match path {
            MbPath::Direct => {
                let j = to_complex(&contrast.jump());
                LinearForm {
                    diag: id,
                    left: j,
                    right: id,
                    scale: 1.0,
                    input: j,
                    output: id,
                }
            }
            MbPath::Normalized => {
                let q = to_complex(&contrast.to_aniso()?.q_tensor);
                LinearForm {
                    diag: id - q,
                    left: q * sa,
                    right: sa,
                    scale: 2.0,
                    input: q * sa,
                    output: sa * Complex64::new(2.0, 0.0),
                }
            }
            MbPath::Symmetric => {
                let c = contrast.to_aniso()?;
                let p = c.p_factor();
                let cm = p * sa;
                LinearForm {
                    diag: id - p * p.transpose(),
                    left: cm,
                    right: cm.transpose(),
                    scale: 2.0,
                    input: cm,
                    output: cm.transpose() * Complex64::new(2.0, 0.0),
                }
            }
            MbPath::Isotropic => {
                let c = match contrast {
                    Contrast::Iso(c) => *c,
                    Contrast::Aniso(_) => {
                        return Err(Error::domain("isotropic path requires a scalar contrast"))
                    }
                };
                let q = Complex64::new(c.q, 0.0);
                let ra = Complex64::new(c.a.sqrt(), 0.0);
                LinearForm {
                    diag: id * (Complex64::new(1.0, 0.0) - q),
                    left: id * (q * ra),
                    right: id * ra,
                    scale: 2.0,
                    input: id,
                    output: id * Complex64::new(2.0 * c.a * c.q, 0.0),
                }
            }
        })
    }

    fn matvec(&self, sys: &VieSystem, x: &[CVec3]) -> Vec<CVec3> {
        let u: Vec<CVec3> = x.iter().map(|v| self.right * v).collect();
        let w = sys.apply_gradw(&u);
        let s = Complex64::new(self.scale, 0.0);
        x.iter()
            .zip(&w)
            .map(|(xi, wi)| self.diag * xi - self.left * wi * s)
            .collect()
    }

    fn dense(&self, sys: &VieSystem) -> Mat<c64> {
        let n = sys.len();
        let s = Complex64::new(self.scale, 0.0);
        let mut m = Mat::<c64>::zeros(3 * n, 3 * n);
        for j in 0..n {
            for i in 0..n {
                let mut b = self.left * sys.gradw_block(i, j) * self.right * (-s);
                if i == j {
                    b += self.diag;
                }
                for c in 0..3 {
                    for a in 0..3 {
                        m.write(3 * i + a, 3 * j + c, to_c64(b[(a, c)]));
                    }
                }
            }
        }
        m
    }
}

/// Settings of the restarted GMRES fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeSettings {
    pub restart: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterativeSettings {
    fn default() -> Self {
        Self {
            restart: 60,
            tol: 1e-10,
            max_iter: 3000,
        }
    }
}

enum Backend {
    Dense(PartialPivLu<c64>),
    Iterative(IterativeSettings),
}

/// Factorized (or iteratively solved) contrast system on a fixed [`VieSystem`].
pub struct ContrastSolver<'a> {
    sys: &'a VieSystem,
    contrast: Contrast,
    path: MbPath,
    form: LinearForm,
    backend: Backend,
}

impl<'a> ContrastSolver<'a> {
    pub fn new(sys: &'a VieSystem, contrast: &Contrast, path: MbPath) -> Result<Self> {
        let dense = sys.len() <= DENSE_LIMIT;
        Self::with_backend(sys, contrast, path, dense, IterativeSettings::default())
    }

    pub fn with_backend(
        sys: &'a VieSystem,
        contrast: &Contrast,
        path: MbPath,
        dense: bool,
        settings: IterativeSettings,
    ) -> Result<Self> {
        sys.check_contrast(contrast)?;
        let form = LinearForm::new(sys, contrast, path)?;
        let backend = if dense {
            let m = form.dense(sys);
            Backend::Dense(m.partial_piv_lu())
        } else {
            Backend::Iterative(settings)
        };
        Ok(Self {
            sys,
            contrast: contrast.clone(),
            path,
            form,
            backend,
        })
    }

    pub fn path(&self) -> MbPath {
        self.path
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.backend, Backend::Dense(_))
    }

    pub fn system(&self) -> &VieSystem {
        self.sys
    }

    pub fn contrast(&self) -> &Contrast {
        &self.contrast
    }

    /// Apply the system matrix of the chosen path.
    pub fn apply_system(&self, x: &[CVec3]) -> Vec<CVec3> {
        self.form.matvec(self.sys, x)
    }

    /// Solve the system of the chosen path for one right-hand side.
    pub fn solve_system(&self, b: &[CVec3]) -> Result<Vec<CVec3>> {
        match &self.backend {
            Backend::Dense(lu) => {
                let rhs = Mat::<c64>::from_fn(3 * b.len(), 1, |r, _| to_c64(b[r / 3][r % 3]));
                let x = lu.solve(&rhs);
                Ok((0..b.len())
                    .map(|i| {
                        CVec3::new(
                            from_c64(x.read(3 * i, 0)),
                            from_c64(x.read(3 * i + 1, 0)),
                            from_c64(x.read(3 * i + 2, 0)),
                        )
                    })
                    .collect())
            }
            Backend::Iterative(s) => {
                let flat = flatten(b);
                let op = |v: &[Complex64]| flatten(&self.form.matvec(self.sys, &unflatten(v)));
                let x = gmres(&op, &flat, s)?;
                Ok(unflatten(&x))
            }
        }
    }

    /// Solve for the columns of `b` (each of length `3N`).
    pub fn solve_columns(&self, b: &Mat<c64>) -> Result<Mat<c64>> {
        match &self.backend {
            Backend::Dense(lu) => Ok(lu.solve(b)),
            Backend::Iterative(s) => {
                let mut out = Mat::<c64>::zeros(b.nrows(), b.ncols());
                for c in 0..b.ncols() {
                    let col: Vec<Complex64> = (0..b.nrows()).map(|r| from_c64(b.read(r, c))).collect();
                    let op = |v: &[Complex64]| flatten(&self.form.matvec(self.sys, &unflatten(v)));
                    let x = gmres(&op, &col, s)?;
                    for (r, v) in x.iter().enumerate() {
                        out.write(r, c, to_c64(*v));
                    }
                }
                Ok(out)
            }
        }
    }

    /// `M_B·g` through the chosen path.
    pub fn apply_mb(&self, g: &[CVec3]) -> Result<DensityField> {
        if g.len() != self.sys.len() {
            return Err(Error::domain("density length does not match the grid"));
        }
        if g.iter().any(|v| !v.iter().all(|z| z.is_finite())) {
            return Err(Error::domain("non-finite incident gradient"));
        }
        if self.contrast.is_zero() {
            return Ok(vec![CVec3::zeros(); g.len()]);
        }
        let rhs: Vec<CVec3> = g.iter().map(|v| self.form.input * v).collect();
        let x = self.solve_system(&rhs)?;
        Ok(x.iter().map(|v| self.form.output * v).collect())
    }

    /// `M_B` applied to each column of `g` (columns of length `3N`).
    pub fn apply_mb_columns(&self, g: &Mat<c64>) -> Result<Mat<c64>> {
        let n = self.sys.len();
        if g.nrows() != 3 * n {
            return Err(Error::domain("column length does not match the grid"));
        }
        if self.contrast.is_zero() {
            return Ok(Mat::zeros(g.nrows(), g.ncols()));
        }
        let map = |m: &CMat3, src: &Mat<c64>| {
            Mat::<c64>::from_fn(src.nrows(), src.ncols(), |r, c| {
                let (i, a) = (r / 3, r % 3);
                let mut acc = c64::new(0.0, 0.0);
                for b in 0..3 {
                    acc += to_c64(m[(a, b)]) * src.read(3 * i + b, c);
                }
                acc
            })
        };
        let rhs = map(&self.form.input, g);
        let x = self.solve_columns(&rhs)?;
        Ok(map(&self.form.output, &x))
    }

    /// `h = M_B·∇u_inc` with the residual of `h − (Ã−A)·∇W_κ[h] = (Ã−A)·∇u_inc` checked.
    pub fn solve_density(&self, incident_grad: &[CVec3]) -> Result<DensityField> {
        let h = self.apply_mb(incident_grad)?;
        let residual = vie_residual(self.sys, &self.contrast, &h, incident_grad);
        let limit = if self.is_dense() { 1e-10 } else { 1e-8 };
        if residual > limit {
            return Err(Error::NotConverged {
                what: "volume integral equation".into(),
                residual,
            });
        }
        Ok(h)
    }
}

/// Relative residual `‖T·h − (Ã−A)·g‖ / ‖(Ã−A)·g‖`.
pub fn vie_residual(sys: &VieSystem, contrast: &Contrast, h: &[CVec3], g: &[CVec3]) -> f64 {
    let j = to_complex(&contrast.jump());
    let w = sys.apply_gradw(h);
    let rhs: Vec<CVec3> = g.iter().map(|v| j * v).collect();
    let res: Vec<CVec3> = h
        .iter()
        .zip(&w)
        .zip(&rhs)
        .map(|((hi, wi), ri)| hi - j * wi - ri)
        .collect();
    let denom = field_norm(&rhs);
    if denom == 0.0 {
        field_norm(&res)
    } else {
        field_norm(&res) / denom
    }
}

/// One-shot `M_B·∇u_inc` with the default solver.
pub fn solve_density(sys: &VieSystem, contrast: &Contrast, incident_grad: &[CVec3]) -> Result<DensityField> {
    ContrastSolver::new(sys, contrast, MbPath::Symmetric)?.solve_density(incident_grad)
}

/// One-shot `M_B·g` along the given path.
pub fn apply_mb(sys: &VieSystem, contrast: &Contrast, g: &[CVec3], path: MbPath) -> Result<DensityField> {
    ContrastSolver::new(sys, contrast, path)?.apply_mb(g)
}

/// Born approximation `h ≈ (Ã−A)·∇u_inc`.
pub fn born_density(contrast: &Contrast, incident_grad: &[CVec3]) -> DensityField {
    let j = to_complex(&contrast.jump());
    incident_grad.iter().map(|g| j * g).collect()
}

/// Restarted GMRES for a general complex operator.
pub fn gmres(
    op: &dyn Fn(&[Complex64]) -> Vec<Complex64>,
    b: &[Complex64],
    s: &IterativeSettings,
) -> Result<Vec<Complex64>> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let m = s.restart.max(1).min(n.max(1));
    let mut total = 0usize;
    let mut rel = 1.0;
    while total < s.max_iter {
        let ax = op(&x);
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        rel = beta / bnorm;
        if rel <= s.tol {
            return Ok(x);
        }
        let mut v: Vec<Vec<Complex64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut hm = vec![vec![Complex64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![Complex64::new(0.0, 0.0); m];
        let mut sn = vec![Complex64::new(0.0, 0.0); m];
        let mut gvec = vec![Complex64::new(0.0, 0.0); m + 1];
        gvec[0] = Complex64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..m {
            let mut w = op(&v[k]);
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let hik: Complex64 = vi.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                    hm[i][k] += hik;
                    for (wj, vj) in w.iter_mut().zip(vi) {
                        *wj -= hik * vj;
                    }
                }
            }
            let wn = norm2(&w);
            hm[k + 1][k] = Complex64::new(wn, 0.0);
            for i in 0..k {
                let t = cs[i].conj() * hm[i][k] + sn[i].conj() * hm[i + 1][k];
                hm[i + 1][k] = -sn[i] * hm[i][k] + cs[i] * hm[i + 1][k];
                hm[i][k] = t;
            }
            let (a, bb) = (hm[k][k], hm[k + 1][k]);
            let d = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if d == 0.0 {
                cs[k] = Complex64::new(1.0, 0.0);
                sn[k] = Complex64::new(0.0, 0.0);
            } else {
                cs[k] = a / d;
                sn[k] = bb / d;
            }
            hm[k][k] = cs[k].conj() * a + sn[k].conj() * bb;
            hm[k + 1][k] = Complex64::new(0.0, 0.0);
            gvec[k + 1] = -sn[k] * gvec[k];
            gvec[k] = cs[k].conj() * gvec[k];
            total += 1;
            k_used = k + 1;
            rel = gvec[k + 1].norm() / bnorm;
            if rel <= s.tol || wn == 0.0 || total >= s.max_iter {
                break;
            }
            v.push(w.iter().map(|z| z / wn).collect());
        }
        let mut y = vec![Complex64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut acc = gvec[i];
            for j in (i + 1)..k_used {
                acc -= hm[i][j] * y[j];
            }
            y[i] = acc / hm[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&v[j]) {
                *xi += yj * vi;
            }
        }
    }
    let ax = op(&x);
    let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let final_rel = norm2(&r) / bnorm;
    if final_rel <= s.tol {
        return Ok(x);
    }
    Err(Error::NotConverged {
        what: format!("GMRES after {total} iterations"),
        residual: final_rel.max(rel),
    })
}

/// Operators whose spectral norm certifies the moderate-scatterer condition.
#[derive(Debug, Clone, PartialEq)]
pub enum NormOperator {
    /// `R_κ`.
    R,
    /// `q·R_κ` for a scalar contrast.
    ScaledR(f64),
    /// `Q·R_κ`.
    ContrastR(Mat3),
    /// `q·R_κ·qᵀ` with the factor `q` of the contrast.
    Sandwich(Mat3),
}

impl NormOperator {
    fn factors(&self) -> (CMat3, CMat3) {
        let id = CMat3::identity();
        match self {
            NormOperator::R => (id, id),
            NormOperator::ScaledR(q) => (id * Complex64::new(*q, 0.0), id),
            NormOperator::ContrastR(q) => (to_complex(q), id),
            NormOperator::Sandwich(q) => (to_complex(q), to_complex(&q.transpose())),
        }
    }
}

/// Result of a Lanczos spectral-norm estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value of `left·R_κ·right` by Lanczos iteration on `M^H·M` with full
/// reorthogonalization, from a seeded random start.
pub fn operator_norm(sys: &VieSystem, which: &NormOperator, seed: u64) -> Result<NormEstimate> {
    let (l, r) = which.factors();
    if l.iter().all(|z| z.norm() == 0.0) || r.iter().all(|z| z.norm() == 0.0) {
        return Ok(NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let apply = |x: &[CVec3]| -> Vec<CVec3> {
        let u: Vec<CVec3> = x.iter().map(|v| r * v).collect();
        sys.apply_r(&u).iter().map(|v| l * v).collect()
    };
    let (lt, rt) = (l.transpose(), r.transpose());
    let apply_t = |x: &[CVec3]| -> Vec<CVec3> {
        let u: Vec<CVec3> = x.iter().map(|v| lt * v).collect();
        sys.apply_r(&u).iter().map(|v| rt * v).collect()
    };
    let normal = |x: &[Complex64]| -> Vec<Complex64> {
        let y = apply(&unflatten(x));
        let yc: Vec<CVec3> = y.iter().map(|v| v.map(|z| z.conj())).collect();
        let z = apply_t(&yc);
        flatten(&z).iter().map(|c| c.conj()).collect()
    };
    let n = 3 * sys.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let nv = norm2(&v0);
    v0.iter_mut().for_each(|z| *z /= nv);
    let max_steps = n.min(300);
    let mut basis = vec![v0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut prev = f64::NAN;
    let mut stable = 0;
    for k in 0..max_steps {
        let mut w = normal(&basis[k]);
        let ak = basis[k].iter().zip(&w).map(|(x, y)| x.conj() * y).sum::<Complex64>().re;
        for _ in 0..2 {
            for b in &basis {
                let c: Complex64 = b.iter().zip(&w).map(|(x, y)| x.conj() * y).sum();
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        alpha.push(ak);
        let bn = norm2(&w);
        let top = top_eigen(&alpha, &beta);
        let est = top.max(0.0).sqrt();
        if (est - prev).abs() <= 1e-8 * est {
            stable += 1;
        } else {
            stable = 0;
        }
        prev = est;
        if stable >= 3 || bn <= 1e-14 * est * est || k + 1 == max_steps {
            return Ok(NormEstimate {
                value: est,
                iterations: k + 1,
                converged: stable >= 3 || bn <= 1e-14 * est * est || k + 1 == n,
            });
        }
        beta.push(bn);
        basis.push(w.iter().map(|z| z / bn).collect());
    }
    Err(Error::NotConverged {
        what: "Lanczos norm estimate".into(),
        residual: f64::NAN,
    })
}

fn top_eigen(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    SymmetricEigen::new(t).eigenvalues.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::phi;
    use crate::materials::{aniso_contrast, iso_contrast, SymTensor3};
    use crate::voxel::{voxelize, Shape};

    fn ball_system(radius: f64, h: f64, bg: &Background) -> VieSystem {
        let grid = voxelize(&Shape::ball(Vec3::zeros(), radius), h).unwrap();
        VieSystem::assemble(&grid, bg).unwrap()
    }

    fn uniform(n: usize, e: Vec3) -> Vec<CVec3> {
        vec![e.map(|v| Complex64::new(v, 0.0)); n]
    }

    fn max_diff(a: &[CVec3], b: &[CVec3]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn point_source_grad(sys: &VieSystem, s: &Vec3) -> Vec<CVec3> {
        sys.grid.centers.iter().map(|y| grad_phi_unchecked(&sys.bg, &(y - s))).collect()
    }

    #[test]
    fn zero_contrast_gives_zero_density() {
        let bg = Background::isotropic(1.0, 1.0).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let c: Contrast = iso_contrast(1.0, 1.0).unwrap().into();
        let g = uniform(sys.len(), Vec3::x());
        let h = solve_density(&sys, &c, &g).unwrap();
        assert!(h.iter().all(|v| v.norm() == 0.0));
        assert!(born_density(&c, &g).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn solve_is_linear_and_paths_agree() {
        let bg = Background::isotropic(1.0, 1.0).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let c: Contrast = iso_contrast(1.0, 2.0).unwrap().into();
        let g = point_source_grad(&sys, &Vec3::new(0.0, 0.0, 3.0));
        let direct = apply_mb(&sys, &c, &g, MbPath::Direct).unwrap();
        let scale = 1e-4 * direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for path in [MbPath::Normalized, MbPath::Symmetric, MbPath::Isotropic] {
            let h = apply_mb(&sys, &c, &g, path).unwrap();
            assert!(max_diff(&h, &direct) < 1e-10 * scale * 1e4, "{path:?}");
        }
        let aniso: Contrast = iso_contrast(1.0, 2.0).unwrap().to_aniso().unwrap().into();
        let h = apply_mb(&sys, &aniso, &g, MbPath::Symmetric).unwrap();
        assert!(max_diff(&h, &direct) < 1e-10 * scale * 1e4);

        let solver = ContrastSolver::new(&sys, &c, MbPath::Symmetric).unwrap();
        let alpha = Complex64::new(-2.5, 0.7);
        let ga: Vec<CVec3> = g.iter().map(|v| v * alpha).collect();
        let h1 = solver.solve_density(&g).unwrap();
        let h2 = solver.solve_density(&ga).unwrap();
        let h1a: Vec<CVec3> = h1.iter().map(|v| v * alpha).collect();
        assert!(max_diff(&h2, &h1a) < 1e-12 * alpha.norm() * 1e4 * scale);
    }

    #[test]
    fn anisotropic_paths_agree_with_mixed_signs() {
        let a = SymTensor3::new(1.2, 0.8, 1.0, 0.1, -0.2, 0.05);
        let at = SymTensor3::new(2.0, 0.5, 1.0, 0.0, 0.1, 0.0);
        let bg = Background::new(a, 0.8).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let c: Contrast = aniso_contrast(&a, &at).unwrap().into();
        assert!(c.to_aniso().unwrap().uniform_sign().is_none());
        let g = point_source_grad(&sys, &Vec3::new(1.0, -2.0, 2.0));
        let direct = apply_mb(&sys, &c, &g, MbPath::Direct).unwrap();
        let scale = direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for path in [MbPath::Normalized, MbPath::Symmetric] {
            let h = apply_mb(&sys, &c, &g, path).unwrap();
            assert!(max_diff(&h, &direct) < 1e-10 * scale, "{path:?}");
        }
        assert!(apply_mb(&sys, &c, &g, MbPath::Isotropic).is_err());
    }

    #[test]
    fn gmres_matches_dense() {
        let bg = Background::isotropic(1.0, 1.5).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let c: Contrast = iso_contrast(1.0, 3.0).unwrap().into();
        let g = point_source_grad(&sys, &Vec3::new(2.0, 0.0, 0.0));
        let dense = ContrastSolver::new(&sys, &c, MbPath::Symmetric).unwrap();
        let iter = ContrastSolver::with_backend(&sys, &c, MbPath::Symmetric, false, IterativeSettings::default())
            .unwrap();
        assert!(dense.is_dense() && !iter.is_dense());
        let a = dense.solve_density(&g).unwrap();
        let b = iter.solve_density(&g).unwrap();
        let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(max_diff(&a, &b) < 1e-8 * scale);
    }

    #[test]
    fn gmres_reports_non_convergence() {
        let bg = Background::isotropic(1.0, 1.0).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let c: Contrast = iso_contrast(1.0, 3.0).unwrap().into();
        let g = uniform(sys.len(), Vec3::z());
        let s = IterativeSettings {
            restart: 2,
            tol: 1e-14,
            max_iter: 3,
        };
        let solver = ContrastSolver::with_backend(&sys, &c, MbPath::Direct, false, s).unwrap();
        assert!(matches!(solver.apply_mb(&g), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn dense_gradw_matches_table_matvec() {
        let bg = Background::new(SymTensor3::diag(1.0, 2.0, 1.5), 0.9).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let g = point_source_grad(&sys, &Vec3::new(0.3, 2.0, 0.0));
        let m = sys.dense_gradw();
        let x = Mat::<c64>::from_fn(3 * sys.len(), 1, |r, _| to_c64(g[r / 3][r % 3]));
        let y = &m * &x;
        let w = sys.apply_gradw(&g);
        for (i, v) in w.iter().enumerate() {
            for k in 0..3 {
                assert!((from_c64(y.read(3 * i + k, 0)) - v[k]).norm() < 1e-12 * (1.0 + v.norm()));
            }
        }
        // Complex symmetry of the discrete kernel.
        for (i, j) in [(0usize, 5usize), (3, 17), (10, 2)] {
            let d = sys.gradw_block(i, j) - sys.gradw_block(j, i).transpose();
            assert!(d.iter().all(|z| z.norm() < 1e-14));
        }
    }

    #[test]
    fn fft_product_matches_direct_sum() {
        let bg = Background::new(SymTensor3::diag(1.0, 2.0, 1.5), 0.9).unwrap();
        let grid = voxelize(&Shape::ellipsoid(Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.6, 0.4, 0.3)), 0.07).unwrap();
        let sys = VieSystem::assemble(&grid, &bg).unwrap();
        assert!(sys.len() >= FFT_THRESHOLD);
        let g = point_source_grad(&sys, &Vec3::new(0.3, 2.0, 0.0));
        let a = sys.apply_gradw(&g);
        let b = sys.apply_gradw_direct(&g);
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(max_diff(&a, &b) < 1e-12 * scale);
    }

    #[test]
    fn scattered_field_basics() {
        let bg = Background::isotropic(1.0, 2.0).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let zero = vec![CVec3::zeros(); sys.len()];
        assert_eq!(sys.scattered_field(&zero, &Vec3::new(3.0, 0.0, 0.0)).unwrap(), Complex64::new(0.0, 0.0));
        assert!(sys.scattered_field(&zero, &Vec3::zeros()).is_err());
        let c: Contrast = iso_contrast(1.0, 2.0).unwrap().into();
        let h = solve_density(&sys, &c, &point_source_grad(&sys, &Vec3::new(0.0, 0.0, 2.0))).unwrap();
        let dir = Vec3::new(1.0, 2.0, -0.5).normalize();
        let far = |r: f64| sys.scattered_field(&h, &(dir * r)).unwrap().norm() * r;
        let (a, b) = (far(1e2), far(1e3));
        assert!((a - b).abs() < 2e-2 * b);
        let _ = phi(&bg, &dir).unwrap();
    }

    #[test]
    fn reciprocity_of_point_source_fields() {
        let bg = Background::isotropic(1.0, 1.0).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let c: Contrast = iso_contrast(1.0, 2.0).unwrap().into();
        let solver = ContrastSolver::new(&sys, &c, MbPath::Symmetric).unwrap();
        let s = Vec3::new(0.0, 1.0, 3.0);
        let m = Vec3::new(-2.0, 0.5, -1.0);
        let hs = solver.solve_density(&point_source_grad(&sys, &s)).unwrap();
        let hm = solver.solve_density(&point_source_grad(&sys, &m)).unwrap();
        let ums = sys.scattered_field(&hs, &m).unwrap();
        let usm = sys.scattered_field(&hm, &s).unwrap();
        assert!((ums - usm).norm() < 1e-10 * ums.norm());
    }

    #[test]
    fn norm_estimates() {
        let bg = Background::isotropic(1.0, 0.0).unwrap();
        let sys = ball_system(0.5, 0.125, &bg);
        let r = operator_norm(&sys, &NormOperator::R, 7).unwrap();
        assert!(r.converged);
        assert!(r.value > 0.9 && r.value < 1.05, "{}", r.value);
        let q = operator_norm(&sys, &NormOperator::ScaledR(-0.4), 7).unwrap();
        assert!((q.value - 0.4 * r.value).abs() < 1e-6 * r.value);
        let z = operator_norm(&sys, &NormOperator::ScaledR(0.0), 7).unwrap();
        assert_eq!(z.value, 0.0);
        // Dense SVD cross-check on a coarse grid.
        let bg = Background::isotropic(1.0, 2.0).unwrap();
        let sys = ball_system(0.5, 0.2, &bg);
        let n = 3 * sys.len();
        let gw = sys.dense_gradw();
        let mut m = nalgebra::DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = from_c64(gw.read(i, j)) * 2.0;
            }
            m[(i, i)] += Complex64::new(1.0, 0.0);
        }
        let smax = m.singular_values().max();
        let est = operator_norm(&sys, &NormOperator::R, 1).unwrap();
        assert!((est.value - smax).abs() < 1e-8 * smax, "{} {}", est.value, smax);
    }

    #[test]
    fn static_ball_transmission_coarse() {
        let bg = Background::isotropic(1.0, 0.0).unwrap();
        let sys = ball_system(0.5, 0.1, &bg);
        let c: Contrast = iso_contrast(1.0, 2.0).unwrap().into();
        let g = uniform(sys.len(), Vec3::x());
        let h = solve_density(&sys, &c, &g).unwrap();
        let mean = h.iter().map(|v| v[0].re).sum::<f64>() / h.len() as f64;
        assert!((mean - 0.75).abs() < 0.02 * 0.75, "{mean}");
        let born = born_density(&c, &g);
        let err = max_diff(&born, &h) / h.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err > 0.2);
    }
}
