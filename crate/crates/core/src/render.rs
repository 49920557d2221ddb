//! Differentiable soft-silhouette sphere renderer and the silhouette losses.
//!
//! Each particle is drawn as a soft disk `alpha = sigmoid(k (R - d))` where `R`
//! is the projected sphere radius in pixels and `d` the pixel distance to the
//! projected center. Disks are blended without occlusion:
//! `I = 1 - prod_i (1 - alpha_i)`. The product is accumulated in log space so
//! the leave-one-out transmittance needed by the gradient stays well defined.

use rayon::prelude::*;

use crate::camera::PinholeCamera;
use crate::error::Result;
use crate::image::{check_same_size, BinaryMask, SoftImage};
use crate::state::Vec3;

/// Disk contributions below this opacity are ignored.
pub const MIN_ALPHA: f64 = 1e-4;
/// Edge argument `k (R - d)` at which the opacity equals [`MIN_ALPHA`].
fn min_arg() -> f64 {
    (MIN_ALPHA / (1.0 - MIN_ALPHA)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub sphere_radius: f64,
    /// Edge sharpness `k`, 1/pixels.
    pub softness: f64,
    /// Binarization threshold for IoU and areas.
    pub threshold: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sphere_radius: 0.015,
            softness: 1.0,
            threshold: 0.5,
        }
    }
}

#[cfg(test)]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)`.
#[inline]
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// `(sigmoid(s), softplus(s))` sharing one exponential.
#[inline]
fn sigmoid_softplus(s: f64) -> (f64, f64) {
    let e = (-s.abs()).exp();
    let sig = if s >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    };
    (sig, s.max(0.0) + e.ln_1p())
}

#[derive(Clone, Copy, Debug)]
struct Splat {
    u: f64,
    v: f64,
    radius: f64,
    /// Squared pixel distance beyond which opacity drops below [`MIN_ALPHA`].
    reach2: f64,
    cam: Vec3,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

fn splat(p: &Vec3, camera: &PinholeCamera, settings: &RenderSettings) -> Option<Splat> {
    let proj = camera.project(p)?;
    let radius = camera.fx * settings.sphere_radius / proj.depth;
    let reach = radius - min_arg() / settings.softness + 1.0;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let lo_x = (proj.u - reach).floor().max(0.0);
    let hi_x = (proj.u + reach).ceil().min(w - 1.0);
    let lo_y = (proj.v - reach).floor().max(0.0);
    let hi_y = (proj.v + reach).ceil().min(h - 1.0);
    if !(lo_x <= hi_x && lo_y <= hi_y) {
        return None;
    }
    Some(Splat {
        u: proj.u,
        v: proj.v,
        radius,
        reach2: {
            let r = (radius - min_arg() / settings.softness).max(0.0);
            r * r
        },
        cam: camera.to_camera(p),
        x0: lo_x as usize,
        x1: hi_x as usize,
        y0: lo_y as usize,
        y1: hi_y as usize,
    })
}

/// Edge argument `k (R - d)`, distance `d` and offsets at a pixel, or `None`
/// when the pixel lies outside the visible footprint.
#[inline]
fn edge(s: &Splat, x: usize, y: usize, k: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = s.u - x as f64;
    let dy = s.v - y as f64;
    let d2 = dx * dx + dy * dy;
    if d2 > s.reach2 {
        return None;
    }
    let d = d2.sqrt();
    Some((k * (s.radius - d), d, dx, dy))
}

/// Per-pixel `sum_i ln(1 - alpha_i)`.
fn log_transmittance(splats: &[Option<Splat>], camera: &PinholeCamera, k: f64) -> Vec<f64> {
    let width = camera.width;
    let cutoff = min_arg();
    let mut buf = vec![0.0; camera.num_pixels()];
    buf.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for s in splats.iter().flatten() {
            if y < s.y0 || y > s.y1 {
                continue;
            }
            for (x, t) in row.iter_mut().enumerate().take(s.x1 + 1).skip(s.x0) {
                let Some((arg, ..)) = edge(s, x, y, k) else {
                    continue;
                };
                if arg >= cutoff {
                    *t -= softplus(arg);
                }
            }
        }
    });
    buf
}

fn to_image(log_t: &[f64], camera: &PinholeCamera) -> SoftImage {
    let mut img = SoftImage::zeros(camera.width, camera.height);
    for (v, t) in img.values_mut().iter_mut().zip(log_t) {
        *v = (1.0 - t.exp()).clamp(0.0, 1.0);
    }
    img
}

/// Soft silhouette of all particles as seen by `camera`.
pub fn render_soft(
    positions: &[Vec3],
    camera: &PinholeCamera,
    settings: &RenderSettings,
) -> SoftImage {
    let splats: Vec<Option<Splat>> = positions
        .iter()
        .map(|p| splat(p, camera, settings))
        .collect();
    to_image(
        &log_transmittance(&splats, camera, settings.softness),
        camera,
    )
}

/// Binarized rendering, as used for synthetic observations.
pub fn render_mask(
    positions: &[Vec3],
    camera: &PinholeCamera,
    settings: &RenderSettings,
) -> BinaryMask {
    render_soft(positions, camera, settings).binarize(settings.threshold)
}

#[inline]
fn smape_term(observed: f64, rendered: f64, eps: f64) -> f64 {
    (observed - rendered).abs() / (observed.abs() + rendered.abs() + eps)
}

/// SMAPE between two equally sized value arrays.
pub fn smape_values(a: &[f64], b: &[f64], eps_s: f64) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| smape_term(*x, *y, eps_s))
        .sum::<f64>()
        / a.len() as f64
}

/// `(1/N_p) sum |I - Î| / (|I| + |Î| + eps_s)`.
pub fn smape_loss(observed: &BinaryMask, rendered: &SoftImage, eps_s: f64) -> Result<f64> {
    check_same_size(
        (observed.width(), observed.height()),
        (rendered.width(), rendered.height()),
        "smape_loss",
    )?;
    let obs: Vec<f64> = observed.values().iter().map(|&b| b as u8 as f64).collect();
    Ok(smape_values(&obs, rendered.values(), eps_s))
}

/// Per-pixel derivative of the SMAPE term with respect to the rendered value,
/// for a binary observation and `rendered` in `[0, 1]`.
#[inline]
fn smape_derivative(observed: bool, rendered: f64, eps: f64) -> f64 {
    if observed {
        let den = 1.0 + rendered + eps;
        -(2.0 + eps) / (den * den)
    } else {
        let den = rendered + eps;
        eps / (den * den)
    }
}

/// Intersection over union of the binarized rendering and the observation;
/// 1 when both are empty.
pub fn iou_2d(observed: &BinaryMask, rendered: &SoftImage, threshold: f64) -> Result<f64> {
    check_same_size(
        (observed.width(), observed.height()),
        (rendered.width(), rendered.height()),
        "iou_2d",
    )?;
    let (i, u) = overlap_counts(observed.values(), rendered.values(), threshold);
    Ok(ratio(i, u))
}

fn overlap_counts(observed: &[bool], rendered: &[f64], threshold: f64) -> (usize, usize) {
    let mut inter = 0;
    let mut union = 0;
    for (&o, &r) in observed.iter().zip(rendered) {
        let b = r >= threshold;
        inter += (o && b) as usize;
        union += (o || b) as usize;
    }
    (inter, union)
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub smape: f64,
    pub iou: f64,
    /// dL/dp per particle.
    pub grad: Vec<Vec3>,
    /// `(1/N) sum_k |dL/dp_k|`.
    pub mean_grad_norm: f64,
    /// Set pixels of the observation(s).
    pub observed_area: usize,
    /// Set pixels of the binarized rendering(s).
    pub rendered_area: usize,
    pub(crate) intersection: usize,
    pub(crate) union: usize,
}

fn mean_norm(grad: &[Vec3]) -> f64 {
    if grad.is_empty() {
        0.0
    } else {
        grad.iter().map(|g| g.norm()).sum::<f64>() / grad.len() as f64
    }
}

/// SMAPE, IoU and the analytic gradient of the SMAPE loss with respect to
/// every particle position.
pub fn loss_gradient(
    positions: &[Vec3],
    camera: &PinholeCamera,
    observed: &BinaryMask,
    settings: &RenderSettings,
    eps_s: f64,
) -> Result<LossReport> {
    check_same_size(
        (observed.width(), observed.height()),
        (camera.width, camera.height),
        "mask vs camera",
    )?;
    let k = settings.softness;
    let splats: Vec<Option<Splat>> = positions
        .iter()
        .map(|p| splat(p, camera, settings))
        .collect();
    let log_t = log_transmittance(&splats, camera, k);
    let image = to_image(&log_t, camera);
    let n_pix = camera.num_pixels() as f64;

    let obs = observed.values();
    let rendered = image.values();
    let mut smape = 0.0;
    let mut dl_di = vec![0.0; rendered.len()];
    for (idx, (&o, &r)) in obs.iter().zip(rendered).enumerate() {
        smape += smape_term(o as u8 as f64, r, eps_s);
        dl_di[idx] = smape_derivative(o, r, eps_s) / n_pix;
    }
    smape /= n_pix;
    let (intersection, union) = overlap_counts(obs, rendered, settings.threshold);
    let rendered_area = rendered
        .iter()
        .filter(|&&r| r >= settings.threshold)
        .count();

    let width = camera.width;
    let cutoff = min_arg();
    let (fx, fy) = (camera.fx, camera.fy);
    let rt = camera.rotation.transpose();
    let grad: Vec<Vec3> = splats
        .par_iter()
        .map(|s| {
            let Some(s) = s else {
                return Vec3::zeros();
            };
            let (mut gu, mut gv, mut gr) = (0.0, 0.0, 0.0);
            for y in s.y0..=s.y1 {
                for x in s.x0..=s.x1 {
                    let Some((arg, d, dx, dy)) = edge(s, x, y, k) else {
                        continue;
                    };
                    if arg < cutoff {
                        continue;
                    }
                    let idx = y * width + x;
                    if dl_di[idx] == 0.0 {
                        continue;
                    }
                    let (alpha, sp) = sigmoid_softplus(arg);
                    // Transmittance of all other disks at this pixel.
                    let others = (log_t[idx] + sp).exp();
                    let ds = dl_di[idx] * others * alpha * (1.0 - alpha);
                    gr += ds * k;
                    if d > 0.0 {
                        gu -= ds * k * dx / d;
                        gv -= ds * k * dy / d;
                    }
                }
            }
            let (xc, yc, zc) = (s.cam.x, s.cam.y, s.cam.z);
            let z2 = zc * zc;
            let g_cam = Vec3::new(
                gu * fx / zc,
                gv * fy / zc,
                -(gu * fx * xc + gv * fy * yc + gr * fx * settings.sphere_radius) / z2,
            );
            rt * g_cam
        })
        .collect();

    Ok(LossReport {
        smape,
        iou: ratio(intersection, union),
        mean_grad_norm: mean_norm(&grad),
        grad,
        observed_area: observed.count(),
        rendered_area,
        intersection,
        union,
    })
}

/// One observation: a camera and the mask it recorded.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: PinholeCamera,
    pub mask: BinaryMask,
}

/// Loss over several views: SMAPE averaged, gradients summed, IoU and areas
/// pooled over all pixels.
pub fn multi_view_loss(
    positions: &[Vec3],
    views: &[View],
    settings: &RenderSettings,
    eps_s: f64,
) -> Result<LossReport> {
    let mut total = LossReport {
        grad: vec![Vec3::zeros(); positions.len()],
        ..Default::default()
    };
    for view in views {
        let r = loss_gradient(positions, &view.camera, &view.mask, settings, eps_s)?;
        total.smape += r.smape / views.len() as f64;
        for (g, gi) in total.grad.iter_mut().zip(&r.grad) {
            *g += gi;
        }
        total.observed_area += r.observed_area;
        total.rendered_area += r.rendered_area;
        total.intersection += r.intersection;
        total.union += r.union;
    }
    total.iou = ratio(total.intersection, total.union);
    total.mean_grad_norm = mean_norm(&total.grad);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn camera() -> PinholeCamera {
        PinholeCamera::new(
            100.0,
            100.0,
            32.0,
            32.0,
            64,
            64,
            Matrix3::identity(),
            Vec3::zeros(),
        )
        .unwrap()
    }

    fn settings(radius: f64) -> RenderSettings {
        RenderSettings {
            sphere_radius: radius,
            softness: 1.0,
            threshold: 0.5,
        }
    }

    #[test]
    fn empty_render_is_black() {
        let img = render_soft(&[], &camera(), &settings(0.1));
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_pixel_opacity() {
        // R = fx * r / z = 100 * 0.1 / 1 = 10 pixels.
        let img = render_soft(&[Vec3::new(0.0, 0.0, 1.0)], &camera(), &settings(0.1));
        assert_relative_eq!(img.get(32, 32), sigmoid(10.0), epsilon = 1e-12);
        assert_relative_eq!(img.get(32, 32), 0.99995, epsilon = 1e-5);
    }

    #[test]
    fn coincident_particles_blend_as_union() {
        let p = Vec3::new(0.0, 0.0, 1.0);
        let one = render_soft(&[p], &camera(), &settings(0.1));
        let two = render_soft(&[p, p], &camera(), &settings(0.1));
        let a = one.get(41, 32);
        assert!(a > 0.0 && a < 1.0);
        assert_relative_eq!(two.get(41, 32), 1.0 - (1.0 - a).powi(2), epsilon = 1e-12);
        assert!(two.get(41, 32) > a);
    }

    #[test]
    fn smape_examples() {
        let eps = 0.01;
        let on = BinaryMask::from_values(1, 1, vec![true]).unwrap();
        let off = BinaryMask::from_values(1, 1, vec![false]).unwrap();
        let zero = SoftImage::zeros(1, 1);
        let full = SoftImage::from_values(1, 1, vec![1.0]).unwrap();
        assert_relative_eq!(
            smape_loss(&on, &zero, eps).unwrap(),
            1.0 / 1.01,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            smape_loss(&off, &full, eps).unwrap(),
            1.0 / 1.01,
            epsilon = 1e-12
        );
        assert_eq!(smape_loss(&on, &full, eps).unwrap(), 0.0);
        assert!(smape_loss(&on, &SoftImage::zeros(2, 1), eps).is_err());
    }

    #[test]
    fn smape_derivative_matches_difference_quotient() {
        for &obs in &[false, true] {
            for &r in &[0.0, 0.2, 0.5, 0.93] {
                let h = 1e-6;
                let o = obs as u8 as f64;
                let fd = (smape_term(o, r + h, 0.01) - smape_term(o, (r - h).max(0.0), 0.01))
                    / (r + h - (r - h).max(0.0));
                assert!((fd - smape_derivative(obs, r, 0.01)).abs() < 1e-3 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn iou_examples() {
        let m = BinaryMask::from_values(2, 1, vec![true, true]).unwrap();
        let r = SoftImage::from_values(2, 1, vec![0.9, 0.1]).unwrap();
        assert_eq!(iou_2d(&m, &r, 0.5).unwrap(), 0.5);
        let same = SoftImage::from_values(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(iou_2d(&m, &same, 0.5).unwrap(), 1.0);
        let disjoint = BinaryMask::from_values(2, 1, vec![false, true]).unwrap();
        let r = SoftImage::from_values(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(iou_2d(&disjoint, &r, 0.5).unwrap(), 0.0);
        let empty = BinaryMask::new(2, 1);
        assert_eq!(iou_2d(&empty, &SoftImage::zeros(2, 1), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn behind_camera_contributes_nothing() {
        let r = loss_gradient(
            &[Vec3::new(0.0, 0.0, -1.0)],
            &camera(),
            &BinaryMask::new(64, 64),
            &settings(0.1),
            0.01,
        )
        .unwrap();
        assert_eq!(r.grad[0], Vec3::zeros());
        assert_eq!(r.smape, 0.0);
        assert_eq!(r.iou, 1.0);
    }
}
