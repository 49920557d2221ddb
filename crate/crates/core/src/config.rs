//! Reconstruction run configuration.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! h = 0.05                  # interaction radius, meters
//! params_file = "params.toml"  # optional base parameters (e.g. from a dataset);
//!                           # then `h` may be omitted
//! masks_dir = "masks"       # <masks_dir>/<camera>/frame_000000.pgm
//! cameras = "cameras.txt"
//! sdf = "scene.sdf"
//! output_dir = "recon"
//! frames = 30               # optional, default: all frames present
//! seed = 0                  # optional
//! particle_cap = 10000      # optional
//! source = false            # enable source estimation
//! stereo = ["left", "right"]  # cameras used for seeding (default: first two)
//! seed_point = [0.0, 0.0, 0.1]  # manual seed, replaces stereo seeding
//! loss_views = "left"       # camera name, or "all" (default: first camera)
//!
//! [params]                  # any HyperParams field except h, seed, particle_cap
//! n_outer = 30
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::NamedCamera;
use crate::params::HyperParams;
use crate::reconstruct::{LossViews, SeedMode, SequenceOptions};
use crate::state::Vec3;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    h: Option<f64>,
    params_file: Option<PathBuf>,
    masks_dir: PathBuf,
    cameras: PathBuf,
    sdf: PathBuf,
    output_dir: PathBuf,
    frames: Option<usize>,
    seed: Option<u64>,
    particle_cap: Option<usize>,
    #[serde(default)]
    source: bool,
    stereo: Option<[String; 2]>,
    seed_point: Option<[f64; 3]>,
    loss_views: Option<String>,
    #[serde(default)]
    params: toml::Table,
}

/// Camera selection by name, resolved once the camera file is read.
#[derive(Clone, Debug, PartialEq)]
pub enum SeedChoice {
    Stereo(Option<[String; 2]>),
    Point(Vec3),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: HyperParams,
    pub masks_dir: PathBuf,
    pub cameras: PathBuf,
    pub sdf: PathBuf,
    pub output_dir: PathBuf,
    pub frames: Option<usize>,
    pub source: bool,
    pub seed: SeedChoice,
    /// Camera name, `"all"`, or `None` for the first camera.
    pub loss_views: Option<String>,
}

impl RunConfig {
    /// Parses and validates; `base` resolves relative paths.
    pub fn from_toml(text: &str, base: &Path, ctx: &str) -> Result<Self> {
        let file: RunConfigFile =
            toml::from_str(text).map_err(|e| Error::config(ctx, e.message().to_string()))?;
        for key in ["seed", "particle_cap"] {
            if file.params.contains_key(key) {
                return Err(Error::config(
                    ctx,
                    format!("set `{key}` at the top level, not in [params]"),
                ));
            }
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let mut params = match (file.params_file, file.h) {
            (Some(path), h) => {
                let base_params = crate::pipeline::read_params(&resolve(path))?;
                if h.is_some_and(|h| h != base_params.h) {
                    return Err(Error::config(
                        ctx,
                        "`h` differs from the one in `params_file`",
                    ));
                }
                base_params.overridden(&file.params)?
            }
            (None, Some(h)) => HyperParams::with_overrides(h, &file.params)?,
            (None, None) => {
                return Err(Error::config(
                    ctx,
                    "either `h` or `params_file` is required",
                ))
            }
        };
        if let Some(seed) = file.seed {
            params.seed = seed;
        }
        if let Some(cap) = file.particle_cap {
            params.particle_cap = cap;
        }
        params.validate()?;
        if file.frames == Some(0) {
            return Err(Error::param("frames", "must be at least 1"));
        }
        let seed = match (file.seed_point, file.stereo) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    ctx,
                    "`seed_point` and `stereo` are mutually exclusive",
                ))
            }
            (Some(p), None) => {
                let p = Vec3::from(p);
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(Error::param("seed_point", "must be finite"));
                }
                SeedChoice::Point(p)
            }
            (None, stereo) => SeedChoice::Stereo(stereo),
        };
        let cfg = Self {
            params,
            masks_dir: resolve(file.masks_dir),
            cameras: resolve(file.cameras),
            sdf: resolve(file.sdf),
            output_dir: resolve(file.output_dir),
            frames: file.frames,
            source: file.source,
            seed,
            loss_views: file.loss_views,
        };
        cfg.check_inputs_exist()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, &path.display().to_string())
    }

    fn check_inputs_exist(&self) -> Result<()> {
        if !self.masks_dir.is_dir() {
            return Err(Error::NotFound(self.masks_dir.clone()));
        }
        for f in [&self.cameras, &self.sdf] {
            if !f.is_file() {
                return Err(Error::NotFound(f.clone()));
            }
        }
        Ok(())
    }

    /// Sequence options with camera names resolved against `cameras`.
    pub fn sequence_options(&self, cameras: &[NamedCamera]) -> Result<SequenceOptions> {
        let index = |name: &str, field: &'static str| {
            cameras
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| Error::param(field, format!("no camera named `{name}`")))
        };
        let seed_mode = match &self.seed {
            SeedChoice::Point(p) => SeedMode::Manual(*p),
            SeedChoice::Stereo(Some([l, r])) => SeedMode::Stereo {
                left: index(l, "stereo")?,
                right: index(r, "stereo")?,
            },
            SeedChoice::Stereo(None) => {
                if cameras.len() < 2 {
                    return Err(Error::param(
                        "stereo",
                        "stereo seeding needs two cameras; set `seed_point` for a single camera",
                    ));
                }
                SeedMode::Stereo { left: 0, right: 1 }
            }
        };
        let loss_views = match self.loss_views.as_deref() {
            None => LossViews::Single(0),
            Some("all") => LossViews::All,
            Some(name) => LossViews::Single(index(name, "loss_views")?),
        };
        Ok(SequenceOptions {
            seed_mode,
            loss_views,
            source: self.source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("masks")).unwrap();
        fs::write(dir.path().join("cameras.txt"), "cameras 0\n").unwrap();
        fs::write(dir.path().join("scene.sdf"), b"").unwrap();
        dir
    }

    const BASE: &str = "h = 0.05\nmasks_dir = \"masks\"\ncameras = \"cameras.txt\"\nsdf = \"scene.sdf\"\noutput_dir = \"out\"\n";

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = fixture();
        let cfg = RunConfig::from_toml(BASE, dir.path(), "cfg").unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.seed, SeedChoice::Stereo(None));
        assert_eq!(cfg.params.n_outer, 30);
    }

    #[test]
    fn invalid_gamma_names_the_field() {
        let dir = fixture();
        let text = format!("{BASE}[params]\ngamma_iou = 1.5\n");
        match RunConfig::from_toml(&text, dir.path(), "cfg").unwrap_err() {
            Error::InvalidParam { name, .. } => assert_eq!(name, "gamma_iou"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = RunConfig::from_toml(BASE, dir.path(), "cfg").unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn conflicting_seed_options() {
        let dir = fixture();
        let text = format!("{BASE}seed_point = [0.0, 0.0, 0.0]\nstereo = [\"a\", \"b\"]\n");
        assert!(matches!(
            RunConfig::from_toml(&text, dir.path(), "cfg").unwrap_err(),
            Error::Config { .. }
        ));
    }

    #[test]
    fn params_file_is_the_base() {
        let dir = fixture();
        let mut p = HyperParams::for_radius(0.04).unwrap();
        p.softness = 3.0;
        crate::pipeline::write_params(&dir.path().join("params.toml"), &p).unwrap();
        let text = BASE.replace("h = 0.05\n", "params_file = \"params.toml\"\n")
            + "[params]\nn_outer = 7\n";
        let cfg = RunConfig::from_toml(&text, dir.path(), "cfg").unwrap();
        assert_eq!(cfg.params.h, 0.04);
        assert_eq!(cfg.params.softness, 3.0);
        assert_eq!(cfg.params.n_outer, 7);
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = fixture();
        let text = format!("{BASE}bogus = 1\n");
        assert_eq!(
            RunConfig::from_toml(&text, dir.path(), "cfg")
                .unwrap_err()
                .exit_code(),
            1
        );
    }
}
