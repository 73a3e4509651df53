//! Scatterer shapes and their voxelization on a uniform cubic lattice.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ball {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned ellipsoid, optionally rotated by the Euler angles (roll, pitch, yaw).
    Ellipsoid {
        center: [f64; 3],
        semi_axes: [f64; 3],
        #[serde(default)]
        euler: [f64; 3],
    },
    /// Union of disjoint parts.
    Union { parts: Vec<Shape> },
}

impl Shape {
    pub fn ball(center: Vec3, radius: f64) -> Self {
        Shape::Ball {
            center: center.into(),
            radius,
        }
    }

    pub fn ellipsoid(center: Vec3, semi_axes: Vec3) -> Self {
        Shape::Ellipsoid {
            center: center.into(),
            semi_axes: semi_axes.into(),
            euler: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> Mat3 {
        match self {
            Shape::Ellipsoid { euler, .. } => {
                *nalgebra::Rotation3::from_euler_angles(euler[0], euler[1], euler[2]).matrix()
            }
            _ => Mat3::identity(),
        }
    }

    /// Quadratic form `E` with the shape equal to `{x : (x−c)ᵀE(x−c) ≤ 1}` (ball/ellipsoid).
    pub fn quadratic_form(&self) -> Option<Mat3> {
        match self {
            Shape::Ball { radius, .. } => Some(Mat3::identity() / (radius * radius)),
            Shape::Ellipsoid { semi_axes, .. } => {
                let r = self.rotation();
                let d = Mat3::from_diagonal(&Vec3::from(*semi_axes).map(|s| 1.0 / (s * s)));
                Some(r * d * r.transpose())
            }
            Shape::Union { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Ball { radius, center } => {
                if !(*radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::domain(format!("invalid ball radius {radius}")));
                }
            }
            Shape::Ellipsoid { semi_axes, .. } => {
                if !semi_axes.iter().all(|&s| s > 0.0 && s.is_finite()) {
                    return Err(Error::domain(format!("invalid semi-axes {semi_axes:?}")));
                }
            }
            Shape::Union { parts } => {
                if parts.is_empty() {
                    return Err(Error::Degenerate("union without parts".into()));
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        match self {
            Shape::Union { parts } => parts.iter().any(|p| p.contains(x)),
            _ => {
                let d = x - Vec3::from(self.center_array());
                let e = self.quadratic_form().expect("ball or ellipsoid");
                d.dot(&(e * d)) < 1.0
            }
        }
    }

    /// Membership of `anchor + offset`, evaluated without forming the absolute point so
    /// that lattices anchored at the center stay exactly symmetric.
    fn contains_offset(&self, anchor: &Vec3, offset: &Vec3) -> bool {
        match self {
            Shape::Union { parts } => parts.iter().any(|p| p.contains_offset(anchor, offset)),
            _ => {
                let d = offset + (anchor - Vec3::from(self.center_array()));
                let e = self.quadratic_form().expect("ball or ellipsoid");
                d.dot(&(e * d)) < 1.0
            }
        }
    }

    fn center_array(&self) -> [f64; 3] {
        match self {
            Shape::Ball { center, .. } | Shape::Ellipsoid { center, .. } => *center,
            Shape::Union { .. } => self.center().into(),
        }
    }

    /// Centroid (volume-weighted for unions).
    pub fn center(&self) -> Vec3 {
        match self {
            Shape::Union { parts } => {
                let v: f64 = parts.iter().map(|p| p.volume()).sum();
                parts.iter().map(|p| p.center() * p.volume()).sum::<Vec3>() / v
            }
            _ => Vec3::from(self.center_array()),
        }
    }

    /// Analytic volume; parts of a union are assumed disjoint.
    pub fn volume(&self) -> f64 {
        match self {
            Shape::Ball { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Ellipsoid { semi_axes, .. } => {
                4.0 / 3.0 * PI * semi_axes[0] * semi_axes[1] * semi_axes[2]
            }
            Shape::Union { parts } => parts.iter().map(|p| p.volume()).sum(),
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            Shape::Union { parts } => {
                let mut lo = Vec3::repeat(f64::INFINITY);
                let mut hi = Vec3::repeat(f64::NEG_INFINITY);
                for p in parts {
                    let (a, b) = p.bounding_box();
                    lo = lo.inf(&a);
                    hi = hi.sup(&b);
                }
                (lo, hi)
            }
            _ => {
                let e = self.quadratic_form().expect("ball or ellipsoid");
                let inv = e.try_inverse().expect("positive definite form");
                let half = Vec3::new(inv[(0, 0)].sqrt(), inv[(1, 1)].sqrt(), inv[(2, 2)].sqrt());
                let c = self.center();
                (c - half, c + half)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Ellipsoid { semi_axes, .. } => 2.0 * semi_axes.iter().cloned().fold(0.0, f64::max),
            Shape::Union { .. } => {
                let (lo, hi) = self.bounding_box();
                (hi - lo).norm()
            }
        }
    }

    /// Smallest feature length (shortest diameter of any part).
    pub fn min_feature(&self) -> f64 {
        match self {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Ellipsoid { semi_axes, .. } => {
                2.0 * semi_axes.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            Shape::Union { parts } => parts.iter().map(|p| p.min_feature()).fold(f64::INFINITY, f64::min),
        }
    }

    /// Distance from `x` to the shape; zero inside. Exact for balls, a lower bound
    /// obtained from the enclosing ball of the longest semi-axis otherwise.
    pub fn distance(&self, x: &Vec3) -> f64 {
        if self.contains(x) {
            return 0.0;
        }
        match self {
            Shape::Ball { center, radius } => ((x - Vec3::from(*center)).norm() - radius).max(0.0),
            Shape::Ellipsoid { .. } => ((x - self.center()).norm() - 0.5 * self.diameter()).max(0.0),
            Shape::Union { parts } => parts.iter().map(|p| p.distance(x)).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Voxels of a shape: cell centers of the cubic lattice `anchor + h·ℤ³` lying inside.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererGrid {
    pub shape: Shape,
    pub h: f64,
    pub anchor: Vec3,
    pub indices: Vec<[i32; 3]>,
    pub centers: Vec<Vec3>,
}

pub fn voxelize(shape: &Shape, h: f64) -> Result<ScattererGrid> {
    shape.validate()?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("voxel size must be positive, got {h}")));
    }
    if h >= shape.min_feature() / 4.0 {
        return Err(Error::Resolution(format!(
            "voxel size {h} is not below a quarter of the smallest feature {}",
            shape.min_feature()
        )));
    }
    let anchor = shape.center();
    let (lo, hi) = shape.bounding_box();
    let imin = ((lo - anchor) / h).map(|v| v.floor() as i32 - 1);
    let imax = ((hi - anchor) / h).map(|v| v.ceil() as i32 + 1);
    let mut indices = Vec::new();
    let mut centers = Vec::new();
    for i in imin.x..=imax.x {
        for j in imin.y..=imax.y {
            for k in imin.z..=imax.z {
                let off = Vec3::new(i as f64, j as f64, k as f64) * h;
                if shape.contains_offset(&anchor, &off) {
                    indices.push([i, j, k]);
                    centers.push(anchor + off);
                }
            }
        }
    }
    if indices.is_empty() {
        return Err(Error::Degenerate("voxelization produced no cells".into()));
    }
    Ok(ScattererGrid {
        shape: shape.clone(),
        h,
        anchor,
        indices,
        centers,
    })
}

impl ScattererGrid {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(3)
    }

    pub fn volume(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    /// `Σ x·h³` over the voxels, relative to the shape center.
    pub fn first_moment(&self) -> Vec3 {
        let s = self.indices.iter().fold([0i64; 3], |mut acc, i| {
            for k in 0..3 {
                acc[k] += i[k] as i64;
            }
            acc
        });
        Vec3::new(s[0] as f64, s[1] as f64, s[2] as f64) * self.h * self.cell_volume()
    }

    /// Largest absolute lattice offset along each axis between two voxels.
    pub fn offset_extent(&self) -> [usize; 3] {
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for idx in &self.indices {
            for a in 0..3 {
                lo[a] = lo[a].min(idx[a]);
                hi[a] = hi[a].max(idx[a]);
            }
        }
        [0, 1, 2].map(|a| (hi[a] - lo[a]) as usize)
    }

    /// Whether `x` lies in the closed union of the voxel cells.
    pub fn in_cells(&self, x: &Vec3) -> bool {
        let rel = (x - self.anchor) / self.h;
        let near = rel.map(|v| v.round() as i32);
        let inside = (rel - near.map(|v| v as f64)).amax() <= 0.5 + 1e-12;
        inside && self.indices.contains(&[near.x, near.y, near.z])
    }
}
