//! Ideal pinhole cameras (pre-rectified, no distortion) and stereo seeding.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::state::Vec3;

/// Points closer than this to the image plane are not renderable.
pub const MIN_DEPTH: f64 = 1e-6;

/// Camera frame: x right, y down, z along the optical axis.
#[derive(Clone, Debug, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl PinholeCamera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll. The principal
    /// point is the image center.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::Geometry("camera eye coincides with target".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::Geometry(
                "camera up vector parallel to view direction".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::param(
                "camera.focal",
                "focal lengths must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::param(
                "camera.size",
                "image size must be at least 1x1",
            ));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        let ortho_err = (rtr - Matrix3::identity()).abs().max();
        let det = self.rotation.determinant();
        if ortho_err > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::param(
                "camera.rotation",
                format!("not a proper rotation (orthonormality error {ortho_err:.2e}, det {det})"),
            ));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::param("camera.translation", "must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel coordinates and depth, `None` for points at or behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<Projection> {
        let c = self.to_camera(p);
        if c.z <= MIN_DEPTH {
            return None;
        }
        Some(Projection {
            u: self.cx + self.fx * c.x / c.z,
            v: self.cy + self.fy * c.y / c.z,
            depth: c.z,
        })
    }

    /// World-space unit direction of the ray through pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d).normalize()
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Midpoint of the shortest segment between two rays.
pub fn triangulate_rays(o1: Vec3, d1: Vec3, o2: Vec3, d2: Vec3) -> Result<Vec3> {
    let sin = d1.cross(&d2).norm();
    if sin < 1e-6 {
        return Err(Error::Geometry(format!(
            "rays are nearly parallel (sin of angle {sin:.2e})"
        )));
    }
    let w = o1 - o2;
    let a = d1.dot(&d1);
    let b = d1.dot(&d2);
    let c = d2.dot(&d2);
    let d = d1.dot(&w);
    let e = d2.dot(&w);
    let denom = a * c - b * b;
    let s = (b * e - c * d) / denom;
    let t = (a * e - b * d) / denom;
    Ok(((o1 + d1 * s) + (o2 + d2 * t)) * 0.5)
}

/// 3D point from the centroids of two stereo masks.
pub fn triangulate_seed(
    left: &PinholeCamera,
    right: &PinholeCamera,
    mask_left: &BinaryMask,
    mask_right: &BinaryMask,
) -> Result<Vec3> {
    let (ul, vl) = mask_left
        .centroid()
        .ok_or_else(|| Error::Geometry("left mask is empty".into()))?;
    let (ur, vr) = mask_right
        .centroid()
        .ok_or_else(|| Error::Geometry("right mask is empty".into()))?;
    triangulate_rays(
        left.center(),
        left.ray_direction(ul, vl),
        right.center(),
        right.ray_direction(ur, vr),
    )
}
