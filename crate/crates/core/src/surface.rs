//! Color field, oriented surface points, and voxel occupancy.

use rayon::prelude::*;

use crate::collision::GridSpec;
use crate::density::{compute_density, hcp_ball, CALIBRATION_PARTICLES};
use crate::error::{Error, Result};
use crate::kernels::SphKernels;
use crate::neighbors::NeighborGrid;
use crate::params::HyperParams;
use crate::state::Vec3;

/// Laplacian-averaged positions. Weights follow the isotropic kernel
/// `1 - (r/h)^3` inside the support (self weight 1).
pub fn laplacian_smooth(positions: &[Vec3], h: f64, lambda_l: f64) -> Vec<Vec3> {
    if lambda_l == 0.0 {
        return positions.to_vec();
    }
    let grid = NeighborGrid::build(positions, h);
    positions
        .par_iter()
        .map(|p| {
            let mut num = Vec3::zeros();
            let mut den = 0.0;
            grid.for_each_within(positions, p, h, |j, r2| {
                let x = r2.sqrt() / h;
                let w = 1.0 - x * x * x;
                num += positions[j] * w;
                den += w;
            });
            (1.0 - lambda_l) * p + lambda_l * num / den
        })
        .collect()
}

/// Color field `c(q) = sum_j poly6(|q - pbar_j|) / rho_j` over smoothed
/// positions `pbar`, with `rho_j` evaluated at the smoothed positions.
#[derive(Clone, Debug)]
pub struct ColorField {
    kernels: SphKernels,
    centers: Vec<Vec3>,
    inv_rho: Vec<f64>,
    grid: NeighborGrid,
}

impl ColorField {
    pub fn new(positions: &[Vec3], h: f64, lambda_l: f64) -> Result<Self> {
        let kernels = SphKernels::new(h)?;
        if !(0.0..=1.0).contains(&lambda_l) {
            return Err(Error::param("lambda_l", "must lie in [0, 1]"));
        }
        let centers = laplacian_smooth(positions, h, lambda_l);
        let rho = compute_density(&centers, h).rho;
        let inv_rho = rho.iter().map(|r| 1.0 / r).collect();
        let grid = NeighborGrid::build(&centers, h);
        Ok(Self {
            kernels,
            centers,
            inv_rho,
            grid,
        })
    }

    pub fn from_params(positions: &[Vec3], params: &HyperParams) -> Result<Self> {
        Self::new(positions, params.h, params.lambda_l)
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn value(&self, q: &Vec3) -> f64 {
        let mut c = 0.0;
        self.grid
            .for_each_within(&self.centers, q, self.kernels.h(), |j, r2| {
                c += self.kernels.poly6_r2(r2) * self.inv_rho[j];
            });
        c
    }

    /// Analytic spatial gradient of the color field.
    pub fn gradient(&self, q: &Vec3) -> Vec3 {
        let mut g = Vec3::zeros();
        self.grid
            .for_each_within(&self.centers, q, self.kernels.h(), |j, r2| {
                let r = r2.sqrt();
                if r > 0.0 {
                    let d = q - self.centers[j];
                    g += d * (self.kernels.poly6_derivative(r) * self.inv_rho[j] / r);
                }
            });
        g
    }
}

pub fn color_field(query: &Vec3, positions: &[Vec3], params: &HyperParams) -> Result<f64> {
    Ok(ColorField::from_params(positions, params)?.value(query))
}

/// Oriented points on the free surface.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl SurfaceCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Grid points (spacing `spacing`) whose color-field gradient magnitude,
/// expressed in units of `1/h`, is at least `lambda_g`. Normals point down
/// the gradient, i.e. out of the liquid.
pub fn surface_points(
    positions: &[Vec3],
    params: &HyperParams,
    spacing: f64,
) -> Result<SurfaceCloud> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::param("spacing", "must be positive"));
    }
    let Some((lo, hi)) = bounds(positions) else {
        return Ok(SurfaceCloud::default());
    };
    let field = ColorField::from_params(positions, params)?;
    let pad = Vec3::repeat(params.h);
    let grid = GridSpec::covering(lo - pad, hi + pad, spacing)?;
    let threshold = params.lambda_g / params.h;
    let hits: Vec<(Vec3, Vec3)> = (0..grid.len())
        .into_par_iter()
        .filter_map(|idx| {
            let q = grid.point(idx);
            let g = field.gradient(&q);
            let n = g.norm();
            (n >= threshold && n > 0.0).then(|| (q, -g / n))
        })
        .collect();
    if hits.is_empty() {
        log::warn!("no surface points found for {} particles", positions.len());
    }
    let (points, normals) = hits.into_iter().unzip();
    Ok(SurfaceCloud { points, normals })
}

fn bounds(positions: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = positions.first()?;
    Some(
        positions
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
    )
}

/// Voxel occupancy over a grid; voxel `i` is centered at `spec.point(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub bits: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            bits: vec![false; spec.len()],
            spec,
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Color-field value at the center of the resting-density calibration
/// lattice; a fully surrounded particle in liquid at rest.
pub fn interior_color_value(params: &HyperParams) -> Result<f64> {
    let lattice = hcp_ball(params.resting_distance(), CALIBRATION_PARTICLES);
    Ok(ColorField::from_params(&lattice, params)?.value(&Vec3::zeros()))
}

/// Default occupancy threshold: half the interior color value.
pub fn default_occupancy_threshold(params: &HyperParams) -> Result<f64> {
    Ok(0.5 * interior_color_value(params)?)
}

pub fn voxelize(
    positions: &[Vec3],
    params: &HyperParams,
    spec: &GridSpec,
    threshold: f64,
) -> Result<OccupancyGrid> {
    if positions.is_empty() {
        return Ok(OccupancyGrid::empty(*spec));
    }
    let field = ColorField::from_params(positions, params)?;
    let bits = (0..spec.len())
        .into_par_iter()
        .map(|i| field.value(&spec.point(i)) >= threshold)
        .collect();
    Ok(OccupancyGrid { spec: *spec, bits })
}

/// Intersection over union of two occupancy grids; 1 when both are empty.
pub fn iou_3d(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64> {
    if a.spec != b.spec || a.bits.len() != b.bits.len() {
        return Err(Error::DimensionMismatch(
            "occupancy grids have different layouts".into(),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
