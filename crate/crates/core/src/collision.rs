//! Scene signed distance fields on a voxel grid and the collision constraint.
//!
//! The SDF is negative inside solids. A particle penetrating a solid is moved
//! along the normalized central-difference SDF gradient by exactly its
//! penetration depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::Vec3;

/// Dense grid of signed distances sampled at voxel centers, x-fastest.
/// `origin` is the center of voxel `(0, 0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelSdf {
    dims: [usize; 3],
    origin: Vec3,
    resolution: f64,
    values: Vec<f64>,
}

impl VoxelSdf {
    pub fn new(dims: [usize; 3], origin: Vec3, resolution: f64, values: Vec<f64>) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::param("sdf.resolution", "must be positive"));
        }
        if dims.contains(&0) {
            return Err(Error::param(
                "sdf.dims",
                "every dimension must be at least 1",
            ));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "sdf grid {dims:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("sdf contains non-finite values".into()));
        }
        Ok(Self {
            dims,
            origin,
            resolution,
            values,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.resolution
    }

    /// Trilinear interpolation; points outside the grid take clamped border values.
    pub fn sample(&self, p: &Vec3) -> f64 {
        let g = (p - self.origin) / self.resolution;
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            if n == 1 {
                continue;
            }
            let c = g[a].clamp(0.0, (n - 1) as f64);
            let f = (c.floor() as usize).min(n - 2);
            i0[a] = f;
            i1[a] = f + 1;
            t[a] = c - f as f64;
        }
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(
            self.at(i0[0], i0[1], i0[2]),
            self.at(i1[0], i0[1], i0[2]),
            t[0],
        );
        let c10 = lerp(
            self.at(i0[0], i1[1], i0[2]),
            self.at(i1[0], i1[1], i0[2]),
            t[0],
        );
        let c01 = lerp(
            self.at(i0[0], i0[1], i1[2]),
            self.at(i1[0], i0[1], i1[2]),
            t[0],
        );
        let c11 = lerp(
            self.at(i0[0], i1[1], i1[2]),
            self.at(i1[0], i1[1], i1[2]),
            t[0],
        );
        lerp(lerp(c00, c10, t[1]), lerp(c01, c11, t[1]), t[2])
    }

    /// Central-difference gradient with step `d` along the six axis directions.
    pub fn gradient(&self, p: &Vec3, d: f64) -> Vec3 {
        let w = 1.0 / (2.0 * d);
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = d;
            g[a] = w * (self.sample(&(p + e)) - self.sample(&(p - e)));
        }
        g
    }
}

/// Regular sampling layout used to rasterize a scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub dims: [usize; 3],
    pub resolution: f64,
}

impl GridSpec {
    /// Smallest grid with the given spacing whose samples cover `[min, max]`.
    pub fn covering(min: Vec3, max: Vec3, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::param("grid.resolution", "must be positive"));
        }
        if (0..3).any(|a| max[a] < min[a]) {
            return Err(Error::param("grid.bounds", "max must not be below min"));
        }
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = ((max[a] - min[a]) / resolution - 1e-9).ceil().max(0.0) as usize + 1;
        }
        Ok(Self {
            origin: min,
            dims,
            resolution,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> Vec3 {
        let x = index % self.dims[0];
        let y = (index / self.dims[0]) % self.dims[1];
        let z = index / (self.dims[0] * self.dims[1]);
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.resolution
    }
}

/// Signed-distance primitives and their composition. Negative inside solid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SceneNode {
    /// Solid on the side where `normal . p < offset`.
    HalfSpace {
        normal: Vec3,
        offset: f64,
    },
    /// Solid axis-aligned box.
    Box {
        min: Vec3,
        max: Vec3,
    },
    /// Solid cylinder with a vertical (z) axis.
    Cylinder {
        center: Vec3,
        radius: f64,
        half_height: f64,
    },
    /// Open-top container: the outer box minus the interior cavity, which
    /// extends through the top. Interior distances are exact near the
    /// inner corners, unlike a union of wall slabs.
    OpenBox {
        inner_min: Vec3,
        inner_max: Vec3,
        wall: f64,
    },
    Union {
        children: Vec<SceneNode>,
    },
    Intersection {
        children: Vec<SceneNode>,
    },
    Complement {
        child: std::boxed::Box<SceneNode>,
    },
}

impl SceneNode {
    pub fn solid_box(min: Vec3, max: Vec3) -> Self {
        SceneNode::Box { min, max }
    }

    pub fn floor(z: f64) -> Self {
        SceneNode::HalfSpace {
            normal: Vec3::z(),
            offset: z,
        }
    }

    /// Open-top container with the given interior and wall thickness.
    pub fn open_box(inner_min: Vec3, inner_max: Vec3, wall: f64) -> Self {
        SceneNode::OpenBox {
            inner_min,
            inner_max,
            wall,
        }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            SceneNode::HalfSpace { normal, offset } => {
                let n = normal.norm();
                (normal.dot(p) - offset) / n
            }
            SceneNode::Box { min, max } => box_distance(min, max, p),
            SceneNode::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let radial = (p.x - center.x).hypot(p.y - center.y) - radius;
                let axial = (p.z - center.z).abs() - half_height;
                let outside = radial.max(0.0).hypot(axial.max(0.0));
                outside + radial.max(axial).min(0.0)
            }
            SceneNode::OpenBox {
                inner_min,
                inner_max,
                wall,
            } => {
                let t = Vec3::repeat(*wall);
                let outer = box_distance(
                    &(inner_min - t),
                    &Vec3::new(inner_max.x + wall, inner_max.y + wall, inner_max.z),
                    p,
                );
                let cavity_top = Vec3::new(inner_max.x, inner_max.y, inner_max.z + 2.0 * wall);
                outer.max(-box_distance(inner_min, &cavity_top, p))
            }
            SceneNode::Union { children } => children
                .iter()
                .map(|c| c.distance(p))
                .fold(f64::INFINITY, f64::min),
            SceneNode::Intersection { children } => children
                .iter()
                .map(|c| c.distance(p))
                .fold(f64::NEG_INFINITY, f64::max),
            SceneNode::Complement { child } => -child.distance(p),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SceneNode::HalfSpace { normal, .. } if normal.norm() < 1e-12 => {
                Err(Error::param("scene.half_space", "normal must be non-zero"))
            }
            SceneNode::Box { min, max } if (0..3).any(|a| max[a] <= min[a]) => Err(Error::param(
                "scene.box",
                "max must exceed min on every axis",
            )),
            SceneNode::OpenBox {
                inner_min,
                inner_max,
                wall,
            } if (0..3).any(|a| inner_max[a] <= inner_min[a]) || !(*wall > 0.0) => {
                Err(Error::param(
                    "scene.open_box",
                    "interior max must exceed min and the wall must be positive",
                ))
            }
            SceneNode::Cylinder {
                radius,
                half_height,
                ..
            } if !(*radius > 0.0 && *half_height > 0.0) => Err(Error::param(
                "scene.cylinder",
                "radius and half height must be positive",
            )),
            SceneNode::Union { children } | SceneNode::Intersection { children } => {
                if children.is_empty() {
                    return Err(Error::param("scene", "composite node without children"));
                }
                children.iter().try_for_each(SceneNode::validate)
            }
            SceneNode::Complement { child } => child.validate(),
            _ => Ok(()),
        }
    }
}

fn box_distance(min: &Vec3, max: &Vec3, p: &Vec3) -> f64 {
    let c = (min + max) * 0.5;
    let half = (max - min) * 0.5;
    let q = (p - c).abs() - half;
    let outside = q.sup(&Vec3::zeros()).norm();
    let inside = q.max().min(0.0);
    outside + inside
}

/// Union of the top-level solids.
pub fn scene_distance(scene: &[SceneNode], p: &Vec3) -> f64 {
    scene
        .iter()
        .map(|n| n.distance(p))
        .fold(f64::INFINITY, f64::min)
}

/// Rasterizes the exact analytic SDF of the scene at the grid's voxel centers.
pub fn build_sdf_from_scene(scene: &[SceneNode], grid: &GridSpec) -> Result<VoxelSdf> {
    if scene.is_empty() {
        return Err(Error::param("scene", "scene has no primitives"));
    }
    scene.iter().try_for_each(SceneNode::validate)?;
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| scene_distance(scene, &grid.point(i)))
        .collect();
    VoxelSdf::new(grid.dims, grid.origin, grid.resolution, values)
}

/// `relu(-SDF(p))`.
#[inline]
pub fn collision_constraint(sdf: &VoxelSdf, p: &Vec3) -> f64 {
    (-sdf.sample(p)).max(0.0)
}

/// Raw gradients below this norm are treated as vanishing.
pub const DEGENERATE_GRADIENT: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollisionStep {
    pub displacements: Vec<Vec3>,
    /// Penetrating particles whose SDF gradient vanished; left in place.
    pub degenerate: Vec<usize>,
}

/// Per-particle displacement `C_c(p) n` with `n` the normalized SDF gradient
/// using a step equal to the grid resolution.
pub fn solve_collision(sdf: &VoxelSdf, positions: &[Vec3]) -> CollisionStep {
    let d = sdf.resolution();
    let results: Vec<(Vec3, bool)> = positions
        .par_iter()
        .map(|p| {
            let depth = collision_constraint(sdf, p);
            if depth <= 0.0 {
                return (Vec3::zeros(), false);
            }
            let g = sdf.gradient(p, d);
            let norm = g.norm();
            if norm < DEGENERATE_GRADIENT {
                (Vec3::zeros(), true)
            } else {
                (g * (depth / norm), false)
            }
        })
        .collect();
    let mut step = CollisionStep {
        displacements: Vec::with_capacity(results.len()),
        degenerate: Vec::new(),
    };
    for (i, (dp, bad)) in results.into_iter().enumerate() {
        step.displacements.push(dp);
        if bad {
            step.degenerate.push(i);
        }
    }
    step
}

/// Applies one collision pass in place; returns the number of degenerate particles.
pub fn apply_collision(sdf: &VoxelSdf, positions: &mut [Vec3]) -> usize {
    let step = solve_collision(sdf, positions);
    for (p, dp) in positions.iter_mut().zip(&step.displacements) {
        *p += dp;
    }
    step.degenerate.len()
}

pub fn max_penetration(sdf: &VoxelSdf, positions: &[Vec3]) -> f64 {
    positions
        .iter()
        .map(|p| collision_constraint(sdf, p))
        .fold(0.0, f64::max)
}

pub fn total_penetration(sdf: &VoxelSdf, positions: &[Vec3]) -> f64 {
    positions.iter().map(|p| collision_constraint(sdf, p)).sum()
}
