use serde::{Deserialize, Serialize};

use crate::density::compute_resting_density;
use crate::error::{Error, Result};
use crate::render::RenderSettings;
use crate::state::Vec3;

/// Every scalar the reconstruction uses. Construct with [`HyperParams::for_radius`]
/// so that the derived quantities (`rho0`, `lambda_p`, `sphere_radius`) follow `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Interaction radius in meters.
    pub h: f64,
    /// Resting distance as a fraction of `h`.
    pub resting_distance_factor: f64,
    /// Resting density in kernel units.
    pub rho0: f64,
    /// Damping of the regularized Gauss-Newton density step.
    pub eps_rho: f64,
    /// SMAPE stabilizer.
    pub eps_s: f64,
    /// Mean image-gradient threshold for local-minimum detection.
    pub gamma_s: f64,
    /// IoU threshold for local-minimum detection.
    pub gamma_iou: f64,
    pub lambda_d: f64,
    pub lambda_v: f64,
    /// Artificial pressure strength.
    pub lambda_s: f64,
    /// Artificial pressure reference distance, meters.
    pub lambda_p: f64,
    /// Artificial pressure exponent.
    pub lambda_n: f64,
    /// Image gradient step size.
    pub alpha_image: f64,
    pub n_outer: usize,
    pub n_joint: usize,
    pub n_collision: usize,
    pub n_image: usize,
    pub gravity: Vec3,
    /// Frame interval, seconds.
    pub dt: f64,
    /// Rendered sphere radius, meters.
    pub sphere_radius: f64,
    /// Silhouette edge sharpness, 1/pixels.
    pub softness: f64,
    /// Threshold used to binarize the soft rendering.
    pub binarize_threshold: f64,
    /// Laplacian smoothing weight for the color field.
    pub lambda_l: f64,
    /// Color-field gradient threshold for surface points.
    pub lambda_g: f64,
    pub particle_cap: usize,
    pub seed: u64,
}

impl HyperParams {
    /// Defaults for interaction radius `h`, with the resting density calibrated
    /// from the default resting distance `0.6 h`.
    pub fn for_radius(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::param("h", format!("must be positive, got {h}")));
        }
        let resting_distance_factor = 0.6;
        let rho0 = compute_resting_density(resting_distance_factor * h, h)?;
        let params = Self {
            h,
            resting_distance_factor,
            rho0,
            eps_rho: 100.0,
            eps_s: 1e-2,
            gamma_s: 1e-3,
            gamma_iou: 0.9,
            lambda_d: 0.2,
            lambda_v: 0.75,
            lambda_s: 0.1,
            lambda_p: 0.2 * h,
            lambda_n: 4.0,
            alpha_image: 0.02,
            n_outer: 30,
            n_joint: 2,
            n_collision: 5,
            n_image: 5,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            dt: 1.0 / 24.0,
            sphere_radius: 0.5 * resting_distance_factor * h,
            softness: 1.0,
            binarize_threshold: 0.5,
            lambda_l: 0.2,
            lambda_g: 0.5,
            particle_cap: 10_000,
            seed: 0,
        };
        Ok(params)
    }

    pub fn resting_distance(&self) -> f64 {
        self.resting_distance_factor * self.h
    }

    /// Recomputes `rho0` from the current `h` and resting distance factor.
    pub fn recalibrate_rho0(&mut self) -> Result<()> {
        self.rho0 = compute_resting_density(self.resting_distance(), self.h)?;
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            sphere_radius: self.sphere_radius,
            softness: self.softness,
            threshold: self.binarize_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(
                    name,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        }
        fn non_negative(name: &'static str, v: f64) -> Result<()> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(
                    name,
                    format!("must be non-negative and finite, got {v}"),
                ))
            }
        }
        fn unit(name: &'static str, v: f64) -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(name, format!("must lie in [0, 1], got {v}")))
            }
        }
        fn count(name: &'static str, v: usize) -> Result<()> {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::param(name, "loop count must be at least 1"))
            }
        }

        positive("h", self.h)?;
        if !(self.resting_distance_factor > 0.0 && self.resting_distance_factor < 1.0) {
            return Err(Error::param(
                "resting_distance_factor",
                format!("must lie in (0, 1), got {}", self.resting_distance_factor),
            ));
        }
        positive("rho0", self.rho0)?;
        positive("eps_rho", self.eps_rho)?;
        positive("eps_s", self.eps_s)?;
        non_negative("gamma_s", self.gamma_s)?;
        unit("gamma_iou", self.gamma_iou)?;
        unit("lambda_d", self.lambda_d)?;
        non_negative("lambda_v", self.lambda_v)?;
        non_negative("lambda_s", self.lambda_s)?;
        positive("lambda_p", self.lambda_p)?;
        if self.lambda_p >= self.h {
            return Err(Error::param("lambda_p", "must be smaller than h"));
        }
        non_negative("lambda_n", self.lambda_n)?;
        non_negative("alpha_image", self.alpha_image)?;
        count("n_outer", self.n_outer)?;
        count("n_joint", self.n_joint)?;
        count("n_collision", self.n_collision)?;
        count("n_image", self.n_image)?;
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::param("gravity", "must be finite"));
        }
        positive("dt", self.dt)?;
        positive("sphere_radius", self.sphere_radius)?;
        positive("softness", self.softness)?;
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::param("binarize_threshold", "must lie in (0, 1)"));
        }
        unit("lambda_l", self.lambda_l)?;
        non_negative("lambda_g", self.lambda_g)?;
        if self.particle_cap < 4 {
            return Err(Error::param("particle_cap", "must be at least 4"));
        }
        Ok(())
    }

    /// Defaults for `h` with the given fields replaced. Unknown keys are an
    /// error. `rho0` is recalibrated when the resting distance changes and
    /// `rho0` itself is not given.
    pub fn with_overrides(h: f64, overrides: &toml::Table) -> Result<Self> {
        Self::for_radius(h)?.overridden(overrides)
    }

    /// Copy with the given fields replaced, under the rules of
    /// [`HyperParams::with_overrides`].
    pub fn overridden(&self, overrides: &toml::Table) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table =
            toml::Table::try_from(self).map_err(|e| Error::config("parameters", e.to_string()))?;
        for (key, value) in overrides {
            if key == "h" {
                return Err(Error::config(
                    "parameters",
                    "set `h` at the top level, not as an override",
                ));
            }
            if !table.contains_key(key) {
                return Err(Error::config(
                    "parameters",
                    format!("unknown parameter `{key}`"),
                ));
            }
            let value = match (table.get(key), value) {
                (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => {
                    toml::Value::Float(*i as f64)
                }
                _ => value.clone(),
            };
            table.insert(key.clone(), value);
        }
        let mut params: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("parameters", e.message().to_string()))?;
        if params.resting_distance_factor != self.resting_distance_factor
            && !overrides.contains_key("rho0")
        {
            params.recalibrate_rho0()?;
        }
        params.validate()?;
        Ok(params)
    }
}
